mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use climat::data::{
    generate_cohort, load_cohort, render_image, sample_trajectory, subject_rng, synthesize_subject, CohortConfig,
    CSV_NAME, IMAGE_DIR, MANIFEST_NAME,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(subjects: usize, seed: u64) -> CohortConfig {
    CohortConfig {
        subjects,
        seed,
        ..CohortConfig::default()
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn progression_frequency_matches_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for rate in [0.1, 0.35, 0.8] {
        let steps: usize = (0..10_000)
            .map(|_| sample_trajectory(0, rate, 1, 2, &mut rng).unwrap()[1])
            .sum();
        assert!((steps as f64 / 10_000.0 - rate).abs() <= 0.02);
    }
}

#[test]
fn masked_fraction_matches_rate() {
    let cfg = CohortConfig {
        subjects: 10_000,
        image_size: 16,
        patch_size: 16,
        missingness: vec![0.0, 0.0, 0.0, 0.0, 0.3],
        ..CohortConfig::default()
    };
    let masked = (0..cfg.subjects)
        .filter(|&i| synthesize_subject(&cfg, i).unwrap().subject.labels[4].is_none())
        .count();
    assert!((masked as f64 / 10_000.0 - 0.3).abs() <= 0.01, "{masked}");
}

#[test]
fn no_missingness_means_full_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CohortConfig {
        missingness: vec![0.0; 5],
        ..small(100, 3)
    };
    generate_cohort(&cfg, dir.path()).unwrap();
    let cohort = load_cohort(dir.path()).unwrap();
    assert_eq!(cohort.subjects.len(), 100);
    assert!(cohort.subjects.iter().all(|s| s.labels.iter().all(Option::is_some)));
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_cohort(&small(40, 11), a.path()).unwrap();
    generate_cohort(&small(40, 11), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 42);
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    generate_cohort(&small(40, 12), c.path()).unwrap();
    assert_ne!(tree(c.path())[CSV_NAME], ta[CSV_NAME]);
}

#[test]
fn loaded_cohort_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CohortConfig {
        clinical_missingness: 0.2,
        ..small(30, 5)
    };
    let manifest = generate_cohort(&cfg, dir.path()).unwrap();
    let cohort = load_cohort(dir.path()).unwrap();
    assert_eq!(cohort.manifest, manifest);
    for (i, s) in cohort.subjects.iter().enumerate() {
        assert_eq!(s, &synthesize_subject(&cfg, i).unwrap().subject);
    }
}

#[test]
fn corruption_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    generate_cohort(&small(5, 1), dir.path()).unwrap();
    let img = dir.path().join(IMAGE_DIR).join("S00002.pgm");
    let mut bytes = fs::read(&img).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    fs::write(&img, bytes).unwrap();
    let err = load_cohort(dir.path()).unwrap_err().to_string();
    assert!(err.contains("checksum"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    generate_cohort(&small(5, 1), dir.path()).unwrap();
    fs::remove_file(dir.path().join(MANIFEST_NAME)).unwrap();
    assert!(load_cohort(dir.path()).is_err());
}

#[test]
fn parallel_generation_equals_serial() {
    let cfg = small(24, 9);
    let serial: Vec<_> = (0..24).map(|i| synthesize_subject(&cfg, i).unwrap()).collect();
    let mut parallel = vec![None; 24];
    std::thread::scope(|s| {
        for (chunk, out) in parallel.chunks_mut(6).enumerate() {
            let cfg = &cfg;
            s.spawn(move || {
                for (k, slot) in out.iter_mut().enumerate().rev() {
                    *slot = Some(synthesize_subject(cfg, chunk * 6 + k).unwrap());
                }
            });
        }
    });
    assert_eq!(parallel.into_iter().map(Option::unwrap).collect::<Vec<_>>(), serial);
    // a larger cohort starts with the same subjects
    let bigger = small(48, 9);
    assert_eq!(synthesize_subject(&bigger, 23).unwrap(), serial[23]);
}

#[test]
fn same_seed_same_image() {
    let cfg = CohortConfig::default();
    let a = render_image(&cfg, 1, &mut subject_rng(4, 4)).unwrap();
    let b = render_image(&cfg, 1, &mut subject_rng(4, 4)).unwrap();
    assert_eq!(a.to_pgm(), b.to_pgm());
}

#[test]
fn intensity_probe_calibration() {
    let cfg = CohortConfig::default();
    assert!(common::probe_accuracy(&cfg, &[0, 2], 500, 1) >= 0.95);
    assert!(common::probe_accuracy(&cfg, &[0, 1, 2], 500, 2) >= 0.95);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn trajectories_monotone_and_bounded(seed in 0u64..10_000, idx in 0usize..5000, grades in 2usize..6) {
        let mut cfg = CohortConfig { seed, grades, image_size: 16, patch_size: 16, ..CohortConfig::default() };
        cfg.initial_grades = vec![1.0; grades];
        let s = synthesize_subject(&cfg, idx).unwrap();
        prop_assert!(s.trajectory.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(s.trajectory.iter().all(|&y| y < grades));
        prop_assert!(s.subject.labels[0].is_some());
        for (l, y) in s.subject.labels.iter().zip(&s.trajectory) {
            if let Some(l) = l {
                prop_assert_eq!(l, y);
            }
        }
    }
}
