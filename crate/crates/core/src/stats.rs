//! Two-sided Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of nonzero differences handled by exact enumeration.
pub const EXACT_LIMIT: usize = 25;
/// Fewer nonzero differences than this give no p-value.
pub const MIN_NONZERO: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Wilcoxon {
    Tested {
        p_value: f64,
        /// Sum of ranks of positive differences `a - b`.
        w_plus: f64,
        nonzero: usize,
        exact: bool,
    },
    Inconclusive {
        nonzero: usize,
    },
}

impl Wilcoxon {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            Wilcoxon::Tested { p_value, .. } => Some(*p_value),
            Wilcoxon::Inconclusive { .. } => None,
        }
    }
}

/// Midranks (1-based) of `values`, in input order.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && values[idx[end + 1]] == values[idx[start]] {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        for &i in &idx[start..=end] {
            ranks[i] = mid;
        }
        start = end + 1;
    }
    ranks
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < MIN_NONZERO {
        return Ok(Wilcoxon::Inconclusive { nonzero: n });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= EXACT_LIMIT {
        // midranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let total = 2f64.powi(n as i32);
        let w = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / total;
        let upper: f64 = counts[w..].iter().sum::<f64>() / total;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(Wilcoxon::Tested {
            p_value: p,
            w_plus,
            nonzero: n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = libm::erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(Wilcoxon::Tested {
        p_value: p,
        w_plus,
        nonzero: n,
        exact: false,
    })
}
