#![allow(dead_code)]

use climat::data::{render_image, CohortConfig};
use climat::image::ToyImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mean intensity of the central rows that can contain the gap.
pub fn gap_intensity(cfg: &CohortConfig, img: &ToyImage) -> f64 {
    let half = (cfg.gap_max / 2.0).ceil() as i64 + cfg.max_shift;
    let c = cfg.image_size as i64 / 2;
    let rows = (c - half).max(0) as usize..((c + half) as usize).min(img.height());
    let n = rows.len() * img.width();
    rows.flat_map(|y| (0..img.width()).map(move |x| (x, y)))
        .map(|(x, y)| img.get(x, y) as f64)
        .sum::<f64>()
        / n as f64
}

/// One-dimensional linear probe: grade boundaries at midpoints between
/// per-grade training means of the gap intensity. Returns held-out accuracy
/// over `grades`, drawing `per_grade` images per grade for each split.
pub fn probe_accuracy(cfg: &CohortConfig, grades: &[usize], per_grade: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |g: usize| -> Vec<f64> {
        (0..per_grade)
            .map(|_| gap_intensity(cfg, &render_image(cfg, g, &mut rng).unwrap()))
            .collect()
    };
    let train: Vec<Vec<f64>> = grades.iter().map(|&g| draw(g)).collect();
    let test: Vec<Vec<f64>> = grades.iter().map(|&g| draw(g)).collect();
    let means: Vec<f64> = train.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let classify = |x: f64| {
        (0..means.len())
            .min_by(|&a, &b| (x - means[a]).abs().total_cmp(&(x - means[b]).abs()))
            .unwrap()
    };
    let mut hits = 0;
    for (k, v) in test.iter().enumerate() {
        hits += v.iter().filter(|&&x| classify(x) == k).count();
    }
    hits as f64 / (per_grade * grades.len()) as f64
}
