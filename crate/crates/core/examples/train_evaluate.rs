//! Trains a compact model with the CLUB loss on a synthetic cohort, then
//! evaluates the saved checkpoint on the validation split.
//!
//! `cargo run --release --example train_evaluate -- [WORK_DIR]`

use std::path::PathBuf;

use climat::data::{generate_cohort, CohortConfig};
use climat::harness::{evaluate, train_with, OptimizerConfig, RunConfig, Split};
use climat::model::ClimatConfig;

fn main() -> climat::Result<()> {
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("climat-examples/train"));
    let data = work.join("cohort");
    generate_cohort(
        &CohortConfig {
            subjects: 600,
            ..CohortConfig::default()
        },
        &data,
    )?;

    let cfg = RunConfig {
        dataset: data.clone(),
        out: work.join("run"),
        model: ClimatConfig {
            width_image: 32,
            width_clinical: 16,
            depth_radiologist: 1,
            depth_context: 1,
            depth_practitioner: 2,
            heads: 2,
            ..ClimatConfig::default()
        },
        optimizer: OptimizerConfig {
            lr: 1e-3,
            epochs: 8,
            ..OptimizerConfig::default()
        },
        ..RunConfig::default()
    };
    let outcome = train_with(&cfg, &mut |e| {
        let tau: Vec<String> = e.tau.iter().flatten().map(|t| format!("{t:.2}")).collect();
        println!(
            "epoch {:>2}  loss {:.4}  τ [{}]  val BA {:.3}  val ECE {:.3}",
            e.epoch,
            e.train_loss,
            tau.join(" "),
            e.val_ba.unwrap_or(f64::NAN),
            e.val_ece.unwrap_or(f64::NAN)
        );
    })?;

    let report = evaluate(&outcome.checkpoint_path, &data, Split::Val, &work.join("eval"))?;
    for h in &report.horizons {
        println!(
            "t{}  n {:>3}  BA {:.3}  ECE {:.3}  mAUC {:.3}",
            h.horizon,
            h.n,
            h.ba.unwrap_or(f64::NAN),
            h.ece.unwrap_or(f64::NAN),
            h.mauc.unwrap_or(f64::NAN)
        );
    }
    println!("artifacts under {}", work.display());
    Ok(())
}
