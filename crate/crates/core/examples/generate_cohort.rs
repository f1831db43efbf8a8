//! Generates a synthetic cohort on disk, reloads it with checksum
//! verification, and prints grade and missingness statistics.
//!
//! `cargo run --release --example generate_cohort -- [OUT_DIR]`

use std::path::PathBuf;

use climat::data::{generate_cohort, load_cohort, CohortConfig};

fn main() -> climat::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("climat-examples/cohort"));
    let cfg = CohortConfig {
        subjects: 500,
        ..CohortConfig::default()
    };
    let manifest = generate_cohort(&cfg, &out)?;
    println!("wrote {} subjects and {} files to {}", manifest.subjects.len(), manifest.files.len(), out.display());

    let cohort = load_cohort(&out)?;
    println!("horizon  observed  grade counts");
    for t in 0..=cfg.horizons {
        let mut counts = vec![0; cfg.grades];
        let mut observed = 0;
        for s in &cohort.subjects {
            if let Some(y) = s.labels[t] {
                counts[y] += 1;
                observed += 1;
            }
        }
        println!("  t{t}     {:>5.1}%   {counts:?}", 100.0 * observed as f64 / cohort.subjects.len() as f64);
    }
    let s = &cohort.subjects[0];
    println!("{}: labels {:?}, clinical {:?}", s.id, s.labels, s.clinical);
    Ok(())
}
