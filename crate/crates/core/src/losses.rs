//! Classification losses for multi-horizon forecasting.
//!
//! Every loss exists twice: as a plain function over `f64` slices (used by
//! metrics, tests and reports) and as a graph builder (used for training).
//!
//! With `g = exp(f)` and true class `c`:
//!
//! * `CE   = -log(g_c / ‖g‖₁)`
//! * `TCE  = CE` evaluated on `τ·f`
//! * `CLUB = τ·CE + (1 - τ)·log N_c`, an upper bound of `TCE` for `τ ∈ (0, 1]`
//!
//! Per-task `τ_t` are derived from unconstrained noise parameters `σ_t` by
//! [`constrain_tau`], which guarantees `max_t τ_t = 1`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default `ε` of the τ constraint.
pub const DEFAULT_TAU_EPS: f64 = 0.1;

fn check_class(logits: &[f64], class: usize) -> Result<()> {
    if logits.is_empty() || class >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(())
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn cross_entropy(logits: &[f64], class: usize) -> Result<f64> {
    check_class(logits, class)?;
    Ok(log_sum_exp(logits) - logits[class])
}

/// Temperature-scaled cross-entropy with inverse temperature `tau`.
pub fn tce(logits: &[f64], class: usize, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|v| tau * v).collect();
    cross_entropy(&scaled, class)
}

pub fn club(logits: &[f64], class: usize, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
    }
    let ce = cross_entropy(logits, class)?;
    Ok(tau * ce + (1.0 - tau) * (logits.len() as f64).ln())
}

/// Maps noise parameters to inverse temperatures:
/// `ρ_t = 1/(σ_t² + ε)`, `ρ̃ = softmax(ρ)`, `τ_t = ρ̃_t / max ρ̃`.
pub fn constrain_tau(sigma: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    if sigma.is_empty() {
        return Ok(Vec::new());
    }
    let rho: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s + eps)).collect();
    let rho_tilde = softmax(&rho);
    let rho_max = rho_tilde.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(rho_tilde.iter().map(|r| r / rho_max).collect())
}

/// Focal loss `-(1 - p_c)^γ log p_c`.
pub fn focal(logits: &[f64], class: usize, gamma: f64) -> Result<f64> {
    let ce = cross_entropy(logits, class)?;
    let p = (-ce).exp();
    Ok((1.0 - p).powf(gamma) * ce)
}

/// Uncertainty-weighted multi-task sum `Σ_t exp(-s_t)·CE_t + s_t/2`.
pub fn mtl(task_ce: &[f64], log_variance: &[f64]) -> Result<f64> {
    if task_ce.len() != log_variance.len() {
        return Err(Error::shape("mtl", format!("{} losses, {} log-variances", task_ce.len(), log_variance.len())));
    }
    Ok(task_ce
        .iter()
        .zip(log_variance)
        .map(|(ce, s)| (-s).exp() * ce + s / 2.0)
        .sum())
}

/// Averages per-task losses under availability masks: for each element
/// `Σ_t 𝕀_t·L_t / Σ_t 𝕀_t`, then the mean over elements with any target.
/// `losses[b][t]` at masked slots are ignored.
pub fn prognosis_loss(losses: &[Vec<f64>], masks: &[Vec<bool>]) -> Result<f64> {
    let weights = prognosis_weights(masks)?;
    let mut total = 0.0;
    for (lrow, wrow) in losses.iter().zip(&weights) {
        for (&l, &w) in lrow.iter().zip(wrow) {
            if w != 0.0 {
                total += w * l;
            }
        }
    }
    Ok(total)
}

/// Weight of every (element, task) slot in the masked average.
pub fn prognosis_weights(masks: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    let valid = masks.iter().filter(|m| m.iter().any(|&x| x)).count();
    if valid == 0 {
        return Err(Error::InvalidArgument("every target in the batch is masked".into()));
    }
    Ok(masks
        .iter()
        .map(|m| {
            let n = m.iter().filter(|&&x| x).count();
            m.iter()
                .map(|&x| if x { 1.0 / (n as f64 * valid as f64) } else { 0.0 })
                .collect()
        })
        .collect())
}

/// `‖f_0^R - f_0‖₁` per element, averaged over the batch.
pub fn consistency_loss(diagnosis: &[Vec<f64>], baseline: &[Vec<f64>]) -> Result<f64> {
    if diagnosis.len() != baseline.len() || diagnosis.is_empty() {
        return Err(Error::shape("consistency", format!("{} vs {} rows", diagnosis.len(), baseline.len())));
    }
    let mut sum = 0.0;
    for (a, b) in diagnosis.iter().zip(baseline) {
        if a.len() != b.len() {
            return Err(Error::shape("consistency", format!("{} vs {} classes", a.len(), b.len())));
        }
        sum += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    }
    Ok(sum / diagnosis.len() as f64)
}

pub fn total_loss(prognosis: f64, consistency: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(prognosis + lambda * consistency)
}

/// Training objective applied per horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Club,
    Ce,
    Tce,
    Mtl,
    Focal { gamma: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Club => "club",
            LossKind::Ce => "ce",
            LossKind::Tce => "tce",
            LossKind::Mtl => "mtl",
            LossKind::Focal { .. } => "focal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "club" => Ok(LossKind::Club),
            "ce" => Ok(LossKind::Ce),
            "tce" => Ok(LossKind::Tce),
            "mtl" => Ok(LossKind::Mtl),
            "focal" => Ok(LossKind::Focal { gamma: 2.0 }),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }

    /// Whether the per-task noise vector enters the objective.
    pub fn uses_noise(&self) -> bool {
        matches!(self, LossKind::Club | LossKind::Tce | LossKind::Mtl)
    }

    /// Starting value of every noise parameter: `σ_t = 1` (so `τ_t = 1`) for
    /// the τ-based losses, `s_t = 0` for the log-variance loss.
    pub fn initial_noise(&self) -> f64 {
        match self {
            LossKind::Mtl => 0.0,
            _ => 1.0,
        }
    }
}

/// Graph builders. Logit nodes have shape `[..., N_c]` and per-element loss
/// nodes `[..., 1]`.
pub mod graph {
    use super::*;

    pub fn log_softmax(g: &mut Graph, logits: NodeId) -> Result<NodeId> {
        let axis = g.shape(logits).len() - 1;
        let m = g.max(logits, axis)?;
        let shifted = g.sub(logits, m)?;
        let e = g.exp(shifted);
        let z = g.sum(e, axis)?;
        let lz = g.log(z);
        g.sub(shifted, lz)
    }

    /// `-Σ_c onehot_c · log softmax(f)_c`. An all-zero `onehot` row yields 0.
    pub fn cross_entropy(g: &mut Graph, logits: NodeId, onehot: NodeId) -> Result<NodeId> {
        let axis = g.shape(logits).len() - 1;
        let lsm = log_softmax(g, logits)?;
        let picked = g.mul(lsm, onehot)?;
        let s = g.sum(picked, axis)?;
        Ok(g.neg(s))
    }

    /// `τ` from `σ: [T+1]`; see [`super::constrain_tau`].
    pub fn constrain_tau(g: &mut Graph, sigma: NodeId, eps: f64) -> Result<NodeId> {
        let sq = g.mul(sigma, sigma)?;
        let denom = g.add_scalar(sq, eps);
        let one = g.scalar(1.0);
        let rho = g.div(one, denom)?;
        let rho_tilde = g.softmax(rho, 0)?;
        let rho_max = g.max(rho_tilde, 0)?;
        g.div(rho_tilde, rho_max)
    }

    /// `τ·(CE - log N_c) + log N_c` with `tau` a one-element node.
    pub fn club(g: &mut Graph, logits: NodeId, onehot: NodeId, tau: NodeId) -> Result<NodeId> {
        let nc = *g.shape(logits).last().unwrap() as f64;
        let ce = cross_entropy(g, logits, onehot)?;
        let centered = g.add_scalar(ce, -nc.ln());
        let scaled = g.mul(centered, tau)?;
        Ok(g.add_scalar(scaled, nc.ln()))
    }

    pub fn tce(g: &mut Graph, logits: NodeId, onehot: NodeId, tau: NodeId) -> Result<NodeId> {
        let scaled = g.mul(logits, tau)?;
        cross_entropy(g, scaled, onehot)
    }

    pub fn focal(g: &mut Graph, logits: NodeId, onehot: NodeId, gamma: f64) -> Result<NodeId> {
        let ce = cross_entropy(g, logits, onehot)?;
        let neg = g.neg(ce);
        let p = g.exp(neg);
        let negp = g.neg(p);
        let one_minus = g.add_scalar(negp, 1.0);
        let weight = if gamma == 0.0 {
            return Ok(ce);
        } else if gamma.fract() == 0.0 && gamma > 0.0 && gamma <= 8.0 {
            let mut w = one_minus;
            for _ in 1..gamma as usize {
                w = g.mul(w, one_minus)?;
            }
            w
        } else {
            // p = 1 exactly at masked rows; keep the log finite there
            let floored = g.add_scalar(one_minus, 1e-300);
            let l = g.log(floored);
            let s = g.scale(l, gamma);
            g.exp(s)
        };
        g.mul(weight, ce)
    }

    /// `exp(-s)·CE + s/2` with `log_var` a one-element node.
    pub fn mtl(g: &mut Graph, logits: NodeId, onehot: NodeId, log_var: NodeId) -> Result<NodeId> {
        let ce = cross_entropy(g, logits, onehot)?;
        let neg = g.neg(log_var);
        let precision = g.exp(neg);
        let weighted = g.mul(ce, precision)?;
        let half = g.scale(log_var, 0.5);
        g.add(weighted, half)
    }

    /// Mean over the batch of `‖a - b‖₁` along the last axis.
    pub fn consistency(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
        let axis = g.shape(a).len() - 1;
        let d = g.sub(a, b)?;
        let ab = g.abs(d);
        let per = g.sum(ab, axis)?;
        Ok(g.mean_all(per))
    }
}

/// Labels and availability of one horizon across a batch. Labels at
/// unavailable slots are placeholders and never read.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTargets {
    pub classes: usize,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TaskTargets {
    pub fn from_options(classes: usize, labels: &[Option<usize>]) -> Self {
        Self {
            classes,
            labels: labels.iter().map(|l| l.unwrap_or(0)).collect(),
            mask: labels.iter().map(Option::is_some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[B, 1, N_c]` one-hot rows; masked rows are all zero.
    pub fn onehot(&self) -> Result<Tensor> {
        if self.mask.len() != self.labels.len() {
            return Err(Error::shape("targets", format!("{} labels, {} mask entries", self.labels.len(), self.mask.len())));
        }
        let mut data = vec![0.0; self.labels.len() * self.classes];
        for (b, (&c, &m)) in self.labels.iter().zip(&self.mask).enumerate() {
            if m {
                if c >= self.classes {
                    return Err(Error::InvalidArgument(format!(
                        "label {c} out of range for {} classes",
                        self.classes
                    )));
                }
                data[b * self.classes + c] = 1.0;
            }
        }
        Tensor::new(vec![self.labels.len(), 1, self.classes], data)
    }
}

/// Graph nodes of the assembled objective.
#[derive(Clone, Debug)]
pub struct ObjectiveNodes {
    pub total: NodeId,
    pub prognosis: NodeId,
    pub consistency: Option<NodeId>,
    /// `τ` when the loss uses it, `[T+1]`.
    pub tau: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: LossKind,
    pub lambda: f64,
    pub tau_eps: f64,
    /// Adds plain CE on the radiologist's diagnosis logits.
    pub diagnosis_ce: bool,
}

/// Name of the trainable noise vector in graphs and checkpoints.
pub const NOISE_PARAM: &str = "loss.sigma";

/// Builds `L_prog + λ·L_cons` over per-horizon logits `[B, 1, N_c^t]`.
pub fn build_objective(
    g: &mut Graph,
    trajectory: &[NodeId],
    diagnosis: NodeId,
    targets: &[TaskTargets],
    spec: &ObjectiveSpec,
) -> Result<ObjectiveNodes> {
    if trajectory.len() != targets.len() || targets.is_empty() {
        return Err(Error::shape("objective", format!("{} heads, {} targets", trajectory.len(), targets.len())));
    }
    if !(spec.lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    let tasks = targets.len();
    let batch = targets[0].len();
    if targets.iter().any(|t| t.len() != batch) {
        return Err(Error::shape("objective", "targets differ in batch size"));
    }
    let masks: Vec<Vec<bool>> = (0..batch)
        .map(|b| targets.iter().map(|t| t.mask[b]).collect())
        .collect();
    let weights = prognosis_weights(&masks)?;

    let noise = if spec.kind.uses_noise() {
        Some(g.param(NOISE_PARAM, &[tasks])?)
    } else {
        None
    };
    let tau = match (spec.kind, noise) {
        (LossKind::Club | LossKind::Tce, Some(s)) => Some(graph::constrain_tau(g, s, spec.tau_eps)?),
        _ => None,
    };

    let mut prognosis = None;
    for (t, (&logits, target)) in trajectory.iter().zip(targets).enumerate() {
        let onehot = g.constant(target.onehot()?);
        let per = match spec.kind {
            LossKind::Ce => graph::cross_entropy(g, logits, onehot)?,
            LossKind::Focal { gamma } => graph::focal(g, logits, onehot, gamma)?,
            LossKind::Club | LossKind::Tce => {
                let tau_t = g.slice(tau.unwrap(), 0, t, 1)?;
                if spec.kind == LossKind::Club {
                    graph::club(g, logits, onehot, tau_t)?
                } else {
                    graph::tce(g, logits, onehot, tau_t)?
                }
            }
            LossKind::Mtl => {
                let s_t = g.slice(noise.unwrap(), 0, t, 1)?;
                graph::mtl(g, logits, onehot, s_t)?
            }
        };
        let w: Vec<f64> = weights.iter().map(|row| row[t]).collect();
        let w = g.constant(Tensor::new(vec![batch, 1, 1], w)?);
        let weighted = g.mul(per, w)?;
        let s = g.sum_all(weighted);
        prognosis = Some(match prognosis {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let prognosis = prognosis.unwrap();

    let mut total = prognosis;
    let mut consistency = None;
    if spec.lambda > 0.0 {
        let c = graph::consistency(g, diagnosis, trajectory[0])?;
        let scaled = g.scale(c, spec.lambda);
        total = g.add(total, scaled)?;
        consistency = Some(c);
    }
    if spec.diagnosis_ce {
        let onehot = g.constant(targets[0].onehot()?);
        let ce = graph::cross_entropy(g, diagnosis, onehot)?;
        let w: Vec<f64> = targets[0].mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let n = w.iter().sum::<f64>().max(1.0);
        let w = g.constant(Tensor::new(vec![batch, 1, 1], w.iter().map(|x| x / n).collect())?);
        let weighted = g.mul(ce, w)?;
        let s = g.sum_all(weighted);
        total = g.add(total, s)?;
    }
    Ok(ObjectiveNodes {
        total,
        prognosis,
        consistency,
        tau,
    })
}

/// Deviations between autodiff gradients of CLUB and their closed forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClubGradReport {
    /// `max |∂CLUB/∂θ − τ·∂CE/∂θ|` over every weight.
    pub theta: f64,
    /// `|∂CLUB/∂τ − (CE − log N_c)|`.
    pub tau: f64,
}

/// Checks the CLUB gradient identities for a linear classifier
/// `logits = features · weights` with batch-mean losses. `τ` is a free leaf.
pub fn club_grad_identities(features: &Tensor, weights: &Tensor, labels: &[usize], tau: f64) -> Result<ClubGradReport> {
    let (b, d) = match features.shape() {
        [b, d] => (*b, *d),
        s => return Err(Error::shape("club_grad_identities", format!("features {s:?}"))),
    };
    let nc = weights.shape().last().copied().unwrap_or(0);
    if weights.shape() != [d, nc] || labels.len() != b {
        return Err(Error::shape("club_grad_identities", format!("weights {:?}", weights.shape())));
    }
    let targets = TaskTargets {
        classes: nc,
        labels: labels.to_vec(),
        mask: vec![true; b],
    };
    let onehot = targets.onehot()?.reshape(vec![b, nc])?;
    let point: std::collections::BTreeMap<String, Tensor> = [
        ("theta".to_string(), weights.clone()),
        ("tau".to_string(), Tensor::vector(vec![tau])),
    ]
    .into();

    let build = |with_club: bool| -> Result<(Graph, NodeId)> {
        let mut g = Graph::new();
        let x = g.constant(features.clone());
        let w = g.param("theta", &[d, nc])?;
        let t = g.param("tau", &[1])?;
        let logits = g.matmul(x, w)?;
        let y = g.constant(onehot.clone());
        let per = if with_club {
            graph::club(&mut g, logits, y, t)?
        } else {
            graph::cross_entropy(&mut g, logits, y)?
        };
        let root = g.mean_all(per);
        Ok((g, root))
    };
    let (mut gc, club_root) = build(true)?;
    gc.forward(&point)?;
    let club_grads = gc.backward(club_root)?;
    let (mut ge, ce_root) = build(false)?;
    ge.forward(&point)?;
    let ce_value = ge.value(ce_root)?.item().unwrap();
    let ce_grads = ge.backward(ce_root)?;

    let theta = club_grads["theta"]
        .data()
        .iter()
        .zip(ce_grads["theta"].data())
        .map(|(c, e)| (c - tau * e).abs())
        .fold(0.0, f64::max);
    let dtau = club_grads["tau"].data()[0];
    Ok(ClubGradReport {
        theta,
        tau: (dtau - (ce_value - (nc as f64).ln())).abs(),
    })
}
