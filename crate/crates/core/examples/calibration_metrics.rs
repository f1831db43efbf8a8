//! Balanced accuracy, expected calibration error, Hand-Till mAUC, and a
//! paired Wilcoxon signed-rank test on hand-made predictions.

use climat::metrics::{ece_from_confidences, metrics, ECE_BINS};
use climat::model::argmax;
use climat::stats::wilcoxon_signed_rank;

fn main() -> climat::Result<()> {
    let probs = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.6, 0.3, 0.1],
        vec![0.2, 0.5, 0.3],
        vec![0.1, 0.8, 0.1],
        vec![0.3, 0.3, 0.4],
        vec![0.1, 0.2, 0.7],
        vec![0.5, 0.1, 0.4],
        vec![0.2, 0.2, 0.6],
    ];
    let labels = [0, 0, 1, 1, 1, 2, 2, 2];
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let m = metrics(&preds, &labels, &probs)?;
    println!("predictions {preds:?} vs labels {labels:?}");
    println!("BA {:.4}  ECE({ECE_BINS} bins) {:.4}  mAUC {:?}", m.ba, m.ece, m.mauc);

    // worked example: two bins, |0.5 * (1 - 0.85)| + |0.5 * (0.5 - 0.575)|
    let e = ece_from_confidences(&[0.9, 0.8, 0.6, 0.55], &[true, true, false, true], 2)?;
    println!("two-bin ECE of the worked example: {e:.4}");

    let a = [0.61, 0.58, 0.66, 0.70, 0.59, 0.64, 0.62, 0.68];
    let b = [0.57, 0.55, 0.66, 0.64, 0.60, 0.58, 0.57, 0.63];
    println!("paired test: {:?}", wilcoxon_signed_rank(&a, &b)?);
    println!("identical samples: {:?}", wilcoxon_signed_rank(&a, &a)?);
    Ok(())
}
