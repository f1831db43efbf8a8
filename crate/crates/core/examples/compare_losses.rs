//! Compares CLUB, cross-entropy, and focal loss over three seeds on a small
//! cohort and reports per-loss means with paired Wilcoxon p-values.
//!
//! `cargo run --release --example compare_losses -- [WORK_DIR]`

use std::path::PathBuf;

use climat::data::{generate_cohort, CohortConfig};
use climat::harness::{compare_losses, CompareConfig, OptimizerConfig, RunConfig, Variant};
use climat::losses::LossKind;
use climat::model::ClimatConfig;

fn main() -> climat::Result<()> {
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("climat-examples/compare"));
    let data = work.join("cohort");
    generate_cohort(
        &CohortConfig {
            subjects: 400,
            ..CohortConfig::default()
        },
        &data,
    )?;
    let base = RunConfig {
        dataset: data,
        model: ClimatConfig {
            width_image: 16,
            width_clinical: 8,
            depth_radiologist: 1,
            depth_context: 1,
            depth_practitioner: 1,
            heads: 2,
            ..ClimatConfig::default()
        },
        optimizer: OptimizerConfig {
            lr: 2e-3,
            epochs: 5,
            ..OptimizerConfig::default()
        },
        ..RunConfig::default()
    };
    let cfg = CompareConfig {
        base,
        variants: vec![
            Variant::new(LossKind::Club),
            Variant::new(LossKind::Ce),
            Variant::new(LossKind::Focal { gamma: 2.0 }),
        ],
        seeds: vec![0, 1, 2],
    };
    let cmp = compare_losses(&cfg, &work.join("runs"), &mut |name, seed, e| {
        if e.epoch == cfg.base.optimizer.epochs {
            println!("{name:<6} seed {seed}: final loss {:.4}", e.train_loss);
        }
    })?;
    for s in &cmp.summaries {
        println!("{:<6} mean BA {:.3}  mean ECE {:.3}", s.variant, s.mean_ba, s.mean_ece);
    }
    for t in &cmp.tests {
        println!("{} vs {}: p(BA) {:?}  p(ECE) {:?}", t.a, t.b, t.ba.p_value(), t.ece.p_value());
    }
    println!("tables under {}", work.join("runs").display());
    Ok(())
}
