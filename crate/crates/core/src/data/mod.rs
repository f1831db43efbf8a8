//! Synthetic longitudinal cohorts.
//!
//! Each subject has a latent risk `z ~ N(0, 1)` that sets a per-visit
//! progression probability and shifts the clinical variables. Grades follow a
//! saturating Markov chain; the baseline image shows two bright bands whose
//! gap narrows as the grade rises.

mod io;

pub use io::{generate_cohort, load_cohort, Cohort, Manifest, CSV_NAME, IMAGE_DIR, MANIFEST_NAME};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ClinicalValue;
use crate::image::ToyImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariableType {
    Numerical,
    Categorical { levels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableType,
}

/// The six generated clinical variables, in column order.
pub fn clinical_schema() -> Vec<VariableSpec> {
    let num = |n: &str| VariableSpec {
        name: n.into(),
        kind: VariableType::Numerical,
    };
    let cat = |n: &str, levels| VariableSpec {
        name: n.into(),
        kind: VariableType::Categorical { levels },
    };
    vec![num("age"), num("bmi"), num("symptom"), cat("sex", 2), cat("injury", 2), cat("surgery", 2)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub subjects: usize,
    pub horizons: usize,
    pub grades: usize,
    pub image_size: usize,
    pub patch_size: usize,
    /// Baseline grade distribution, one weight per grade.
    pub initial_grades: Vec<f64>,
    /// Progression probability per visit is `sigmoid(rate_bias + rate_slope·z)`.
    pub rate_bias: f64,
    pub rate_slope: f64,
    /// Probability that the label at horizon `t` is unannotated; entry 0 must be 0.
    pub missingness: Vec<f64>,
    /// Probability that any single clinical value is missing.
    pub clinical_missingness: f64,
    /// Gap between the bands at grade 0 and at the top grade, in pixels.
    pub gap_max: f64,
    pub gap_min: f64,
    pub band_width: f64,
    /// Standard deviation of a per-subject gap jitter, in pixels.
    pub severity_noise: f64,
    pub pixel_noise: f64,
    pub max_shift: i64,
    pub background: f64,
    pub foreground: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            subjects: 2000,
            horizons: 4,
            grades: 3,
            image_size: 64,
            patch_size: 16,
            initial_grades: vec![0.5, 0.3, 0.2],
            rate_bias: -1.5,
            rate_slope: 2.0,
            missingness: vec![0.0, 0.1, 0.15, 0.2, 0.25],
            clinical_missingness: 0.0,
            gap_max: 12.0,
            gap_min: 4.0,
            band_width: 6.0,
            severity_noise: 0.5,
            pixel_noise: 25.0,
            max_shift: 2,
            background: 50.0,
            foreground: 190.0,
            seed: 0,
        }
    }
}

impl CohortConfig {
    /// Five grades with a KL-like skew toward the healthy end.
    pub fn five_grade() -> Self {
        Self {
            grades: 5,
            initial_grades: vec![0.35, 0.25, 0.2, 0.15, 0.05],
            gap_max: 14.0,
            gap_min: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grades < 2 {
            return bad(format!("need at least 2 grades, got {}", self.grades));
        }
        if self.initial_grades.len() != self.grades
            || self.initial_grades.iter().any(|&w| !(w >= 0.0))
            || self.initial_grades.iter().sum::<f64>() <= 0.0
        {
            return bad(format!("initial_grades must hold {} non-negative weights", self.grades));
        }
        if self.missingness.len() != self.horizons + 1 {
            return bad(format!("missingness needs {} entries", self.horizons + 1));
        }
        if self.missingness[0] != 0.0 {
            return bad("the baseline label is never masked; missingness[0] must be 0".into());
        }
        if self.missingness.iter().any(|&r| !(0.0..1.0).contains(&r)) {
            return bad("missingness rates must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.clinical_missingness) {
            return bad("clinical_missingness must lie in [0, 1)".into());
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!("patch size {} does not divide {}", self.patch_size, self.image_size));
        }
        if !(self.gap_min >= 0.0 && self.gap_max >= self.gap_min && self.band_width > 0.0) {
            return bad("band geometry must satisfy 0 <= gap_min <= gap_max and band_width > 0".into());
        }
        if !(self.pixel_noise >= 0.0 && self.severity_noise >= 0.0) || self.max_shift < 0 {
            return bad("noise levels and shift must be non-negative".into());
        }
        Ok(())
    }

    /// Gap width for `grade` before jitter.
    pub fn gap(&self, grade: usize) -> f64 {
        let frac = grade as f64 / (self.grades - 1) as f64;
        self.gap_max - (self.gap_max - self.gap_min) * frac
    }
}

/// One generated or loaded subject. `labels[t]` is `None` when unannotated.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub image: ToyImage,
    pub clinical: Vec<ClinicalValue>,
    pub labels: Vec<Option<usize>>,
}

impl Subject {
    pub fn masks(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }
}

/// A subject together with its complete, unmasked trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSubject {
    pub subject: Subject,
    pub trajectory: Vec<usize>,
    pub risk: f64,
    pub rate: f64,
}

pub fn subject_id(index: usize) -> String {
    format!("S{index:05}")
}

/// Independent stream for subject `index`; order of generation is irrelevant.
pub fn subject_rng(master: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64 + 1);
    rng
}

/// `y_{t+1} = min(y_t + Bernoulli(rate), grades - 1)` for `t < horizons`.
pub fn sample_trajectory(initial: usize, rate: f64, horizons: usize, grades: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rate) || initial >= grades {
        return Err(Error::InvalidArgument(format!("rate {rate} / initial grade {initial} invalid")));
    }
    let mut y = Vec::with_capacity(horizons + 1);
    y.push(initial);
    for _ in 0..horizons {
        let step = usize::from(rng.gen_bool(rate));
        y.push((y.last().unwrap() + step).min(grades - 1));
    }
    Ok(y)
}

/// Baseline radiograph analog for `grade`.
pub fn render_image(cfg: &CohortConfig, grade: usize, rng: &mut impl Rng) -> Result<ToyImage> {
    if grade >= cfg.grades {
        return Err(Error::InvalidArgument(format!("grade {grade} outside {} grades", cfg.grades)));
    }
    let size = cfg.image_size;
    let jitter = if cfg.severity_noise > 0.0 {
        Normal::new(0.0, cfg.severity_noise).unwrap().sample(rng)
    } else {
        0.0
    };
    let gap = (cfg.gap(grade) + jitter).max(0.0);
    let shift = rng.gen_range(-cfg.max_shift..=cfg.max_shift) as f64;
    let center = size as f64 / 2.0 + shift;
    let (top, bottom) = (center - gap / 2.0, center + gap / 2.0);
    let noise = Normal::new(0.0, cfg.pixel_noise.max(f64::MIN_POSITIVE)).unwrap();
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        let yc = y as f64 + 0.5;
        let bright = (yc >= top - cfg.band_width && yc < top) || (yc >= bottom && yc < bottom + cfg.band_width);
        let base = if bright { cfg.foreground } else { cfg.background };
        for _ in 0..size {
            let v = if cfg.pixel_noise > 0.0 { base + noise.sample(rng) } else { base };
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    ToyImage::new(size, size, pixels)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Clinical values correlated with the latent risk `z`.
fn sample_clinical(cfg: &CohortConfig, z: f64, rng: &mut impl Rng) -> Vec<ClinicalValue> {
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut values = vec![
        ClinicalValue::Numerical(round2(60.0 + 8.0 * z + 4.0 * std.sample(rng))),
        ClinicalValue::Numerical(round2(27.0 + 3.0 * z + 2.0 * std.sample(rng))),
        ClinicalValue::Numerical(round2(40.0 + 15.0 * z + 8.0 * std.sample(rng))),
        ClinicalValue::Categorical(usize::from(rng.gen_bool(0.5))),
        ClinicalValue::Categorical(usize::from(rng.gen_bool(sigmoid(z)))),
        ClinicalValue::Categorical(usize::from(rng.gen_bool(sigmoid(z - 1.0)))),
    ];
    for v in values.iter_mut() {
        if cfg.clinical_missingness > 0.0 && rng.gen_bool(cfg.clinical_missingness) {
            *v = ClinicalValue::Missing;
        }
    }
    values
}

/// Generates subject `index` from its own derived stream.
pub fn synthesize_subject(cfg: &CohortConfig, index: usize) -> Result<SyntheticSubject> {
    let mut rng = subject_rng(cfg.seed, index);
    let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
    let rate = sigmoid(cfg.rate_bias + cfg.rate_slope * z);
    let total: f64 = cfg.initial_grades.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut initial = cfg.grades - 1;
    for (g, &w) in cfg.initial_grades.iter().enumerate() {
        if u < w {
            initial = g;
            break;
        }
        u -= w;
    }
    let trajectory = sample_trajectory(initial, rate, cfg.horizons, cfg.grades, &mut rng)?;
    let image = render_image(cfg, initial, &mut rng)?;
    let clinical = sample_clinical(cfg, z, &mut rng);
    let labels = trajectory
        .iter()
        .zip(&cfg.missingness)
        .map(|(&y, &p)| if p > 0.0 && rng.gen_bool(p) { None } else { Some(y) })
        .collect();
    Ok(SyntheticSubject {
        subject: Subject {
            id: subject_id(index),
            image,
            clinical,
            labels,
        },
        trajectory,
        risk: z,
        rate,
    })
}
