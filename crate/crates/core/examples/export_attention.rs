//! Trains briefly, then exports one subject's clinical attention row and the
//! image-patch attention heatmap for every horizon.
//!
//! `cargo run --release --example export_attention -- [WORK_DIR]`

use std::path::PathBuf;

use climat::data::{generate_cohort, CohortConfig};
use climat::harness::{export_attention, train, OptimizerConfig, RunConfig};
use climat::model::ClimatConfig;

fn main() -> climat::Result<()> {
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("climat-examples/attention"));
    let data = work.join("cohort");
    let manifest = generate_cohort(
        &CohortConfig {
            subjects: 300,
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
            epochs: 3,
            ..OptimizerConfig::default()
        },
        ..RunConfig::default()
    };
    let run = train(&cfg)?;

    let subject = &manifest.subjects[0];
    for t in 0..=cfg.model.horizons {
        let e = export_attention(&run.checkpoint_path, &data, subject, t, &work.join("maps"))?;
        if t == 0 {
            println!("{subject} clinical attention (CLS row):");
            for (name, w) in &e.clinical {
                println!("  {name:<8} {w:.4}");
            }
        }
        let grid = e.image.shape()[0];
        println!("t{t} patch attention:");
        for r in 0..grid {
            let cells: Vec<String> = e.image.row(r).iter().map(|w| format!("{w:.3}")).collect();
            println!("  {}", cells.join(" "));
        }
    }
    println!("CSV and PGM files under {}", work.join("maps").display());
    Ok(())
}
