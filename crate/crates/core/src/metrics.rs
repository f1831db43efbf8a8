//! Classification metrics: balanced accuracy, expected calibration error, and
//! the Hand-Till multi-class AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of equal-width confidence bins for ECE.
pub const ECE_BINS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ba: f64,
    pub ece: f64,
    /// Undefined when fewer than two classes occur in the labels.
    pub mauc: Option<f64>,
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "balanced accuracy needs matching non-empty inputs, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let present: Vec<f64> = counts
        .iter()
        .zip(&hits)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &h)| h as f64 / c as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// `Σ_b (|B_b|/n)·|acc(B_b) − conf(B_b)|` with bin index `⌊conf·bins⌋`
/// (confidence 1 joins the top bin).
pub fn ece_from_confidences(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.is_empty() || confidences.len() != correct.len() || bins == 0 {
        return Err(Error::InvalidArgument("ECE needs matching non-empty inputs and at least one bin".into()));
    }
    let mut conf_sum = vec![0.0; bins];
    let mut hit = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        conf_sum[b] += c;
        count[b] += 1;
        if ok {
            hit[b] += 1;
        }
    }
    let n = confidences.len() as f64;
    let mut ece = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let m = count[b] as f64;
            ece += m / n * (hit[b] as f64 / m - conf_sum[b] / m).abs();
        }
    }
    Ok(ece)
}

fn check_probs(probs: &[Vec<f64>], n: usize) -> Result<usize> {
    if probs.len() != n || n == 0 {
        return Err(Error::InvalidArgument(format!("{} probability rows for {n} labels", probs.len())));
    }
    let k = probs[0].len();
    for row in probs {
        if row.len() != k {
            return Err(Error::InvalidArgument("ragged probability rows".into()));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probability row sums to {s}")));
        }
    }
    Ok(k)
}

/// ECE of probability rows with correctness taken from `preds`.
pub fn ece(preds: &[usize], labels: &[usize], probs: &[Vec<f64>], bins: usize) -> Result<f64> {
    check_probs(probs, labels.len())?;
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument("predictions and labels differ in length".into()));
    }
    let conf: Vec<f64> = probs
        .iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(1.0))
        .collect();
    let correct: Vec<bool> = preds.iter().zip(labels).map(|(p, l)| p == l).collect();
    ece_from_confidences(&conf, &correct, bins)
}

/// `A(i|j)`: probability that a class-`i` sample scores higher on `p_i` than
/// a class-`j` sample, ties counted half, via midranks.
fn a_given(probs: &[Vec<f64>], labels: &[usize], i: usize, j: usize) -> f64 {
    let mut scored: Vec<(f64, bool)> = labels
        .iter()
        .zip(probs)
        .filter(|(&l, _)| l == i || l == j)
        .map(|(&l, r)| (r[i], l == i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < scored.len() {
        let mut end = start;
        while end + 1 < scored.len() && scored[end + 1].0 == scored[start].0 {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += mid * scored[start..=end].iter().filter(|s| s.1).count() as f64;
        start = end + 1;
    }
    let ni = scored.iter().filter(|s| s.1).count() as f64;
    let nj = scored.len() as f64 - ni;
    (rank_sum - ni * (ni + 1.0) / 2.0) / (ni * nj)
}

/// Hand-Till one-vs-one average AUC over the classes present in `labels`.
pub fn hand_till_mauc(probs: &[Vec<f64>], labels: &[usize]) -> Result<Option<f64>> {
    let k = check_probs(probs, labels.len())?;
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {l} outside {k} classes")));
    }
    let present: Vec<usize> = (0..k).filter(|c| labels.contains(c)).collect();
    if present.len() < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in present.iter().enumerate() {
        for &j in &present[a + 1..] {
            total += (a_given(probs, labels, i, j) + a_given(probs, labels, j, i)) / 2.0;
            pairs += 1;
        }
    }
    Ok(Some(total / pairs as f64))
}

pub fn metrics(preds: &[usize], labels: &[usize], probs: &[Vec<f64>]) -> Result<MetricSet> {
    Ok(MetricSet {
        ba: balanced_accuracy(preds, labels)?,
        ece: ece(preds, labels, probs, ECE_BINS)?,
        mauc: hand_till_mauc(probs, labels)?,
    })
}
