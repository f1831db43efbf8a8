use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::dataset::{check_compatible, feature_schema, in_split, Examples, Split};
use crate::data::load_cohort;
use crate::error::{Error, Result};
use crate::losses::{constrain_tau, softmax, LossKind, NOISE_PARAM};
use crate::metrics::{balanced_accuracy, ece, hand_till_mauc, ECE_BINS};
use crate::model::{argmax, Climat};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Metrics of one horizon; all `None` when no target is annotated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub n: usize,
    pub ba: Option<f64>,
    pub ece: Option<f64>,
    pub mauc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub subjects: usize,
    pub horizons: Vec<HorizonMetrics>,
    /// Means over horizons that have metrics.
    pub mean_ba: Option<f64>,
    pub mean_ece: Option<f64>,
}

/// Per-horizon logits rows, `logits[t][i]`.
pub fn predict_logits(model: &Climat, params: &ParamStore, ex: &Examples, batch: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let tasks = ex.tasks();
    let mut out = vec![Vec::with_capacity(ex.len()); tasks];
    let idx: Vec<usize> = (0..ex.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let o = model.forward(params, &ex.inputs(chunk)?)?;
        for (t, logits) in o.trajectory.iter().enumerate() {
            let nc = *logits.shape().last().unwrap();
            out[t].extend(logits.data().chunks_exact(nc).map(<[f64]>::to_vec));
        }
    }
    Ok(out)
}

/// Predictive distribution of a horizon: `softmax(τ·f)` for the
/// temperature-scaled loss, `softmax(f)` otherwise.
pub fn probabilities(logits: &[f64], loss: LossKind, tau: Option<f64>) -> Vec<f64> {
    match (loss, tau) {
        (LossKind::Tce, Some(t)) => softmax(&logits.iter().map(|v| t * v).collect::<Vec<_>>()),
        _ => softmax(logits),
    }
}

/// Metrics over `subset` (indices into `ex`), honoring masks.
pub fn horizon_metrics(
    logits: &[Vec<Vec<f64>>],
    ex: &Examples,
    subset: &[usize],
    loss: LossKind,
    tau: Option<&[f64]>,
) -> Result<Vec<HorizonMetrics>> {
    let mut rows = Vec::with_capacity(logits.len());
    for (t, lt) in logits.iter().enumerate() {
        let (mut preds, mut labels, mut probs) = (Vec::new(), Vec::new(), Vec::new());
        for &i in subset {
            if let Some(y) = ex.labels[i][t] {
                preds.push(argmax(&lt[i]));
                labels.push(y);
                probs.push(probabilities(&lt[i], loss, tau.map(|v| v[t])));
            }
        }
        rows.push(if labels.is_empty() {
            HorizonMetrics {
                horizon: t,
                n: 0,
                ba: None,
                ece: None,
                mauc: None,
            }
        } else {
            HorizonMetrics {
                horizon: t,
                n: labels.len(),
                ba: Some(balanced_accuracy(&preds, &labels)?),
                ece: Some(ece(&preds, &labels, &probs, ECE_BINS)?),
                mauc: hand_till_mauc(&probs, &labels)?,
            }
        });
    }
    Ok(rows)
}

pub fn mean_of(rows: &[HorizonMetrics], f: impl Fn(&HorizonMetrics) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `τ` used at prediction time, present for the τ-based losses.
pub fn tau_of(loss: LossKind, sigma: &[f64], eps: f64) -> Result<Option<Vec<f64>>> {
    match loss {
        LossKind::Club | LossKind::Tce => Ok(Some(constrain_tau(sigma, eps)?)),
        _ => Ok(None),
    }
}

/// Parameters, configuration, and model rebuilt from a checkpoint.
pub struct Restored {
    pub config: RunConfig,
    pub model: Climat,
    pub params: ParamStore,
    pub sigma: Vec<f64>,
}

pub fn restore(ckpt: &Checkpoint) -> Result<Restored> {
    let config: RunConfig = serde_json::from_str(&ckpt.config_json)?;
    config.validate()?;
    let model = Climat::new(config.model.clone())?;
    let template = model.init_params(0)?;
    for (path, t) in template.iter() {
        match ckpt.params.get(path) {
            Some(c) if c.shape() == t.shape() => {}
            Some(c) => {
                return Err(Error::Checkpoint(format!("{path}: shape {:?}, model expects {:?}", c.shape(), t.shape())))
            }
            None => return Err(Error::Checkpoint(format!("missing tensor `{path}`"))),
        }
    }
    if ckpt.params.len() != template.len() {
        return Err(Error::Checkpoint("checkpoint holds tensors the model does not use".into()));
    }
    if ckpt.sigma.len() != config.model.tasks() {
        return Err(Error::Checkpoint(format!("sigma has {} entries", ckpt.sigma.len())));
    }
    let mut params = ckpt.params.clone();
    params.insert(NOISE_PARAM, Tensor::vector(ckpt.sigma.clone()))?;
    Ok(Restored {
        config,
        model,
        params,
        sigma: ckpt.sigma.clone(),
    })
}

pub fn load_examples(config: &RunConfig, dataset: &Path, split: Split) -> Result<Examples> {
    let cohort = load_cohort(dataset)?;
    check_compatible(&cohort, &config.model)?;
    let ranges = config
        .clinical_ranges
        .as_ref()
        .ok_or_else(|| Error::Config("run configuration lacks clinical ranges".into()))?;
    let schema = feature_schema(&cohort, ranges)?;
    let subjects: Vec<_> = cohort.subjects.iter().filter(|s| in_split(&s.id, split)).collect();
    Examples::build(&subjects, &schema, &config.model)
}

/// Evaluates a checkpoint on one split of a dataset and writes
/// `eval_metrics.csv` and `eval_summary.json` under `out`.
pub fn evaluate(checkpoint: &Path, dataset: &Path, split: Split, out: &Path) -> Result<MetricsReport> {
    let restored = restore(&Checkpoint::load(checkpoint)?)?;
    let ex = load_examples(&restored.config, dataset, split)?;
    if ex.is_empty() {
        return Err(Error::Dataset(format!("split {split:?} is empty")));
    }
    let report = evaluate_examples(&restored, &ex, split)?;
    write_report(&report, out)?;
    Ok(report)
}

pub fn evaluate_examples(r: &Restored, ex: &Examples, split: Split) -> Result<MetricsReport> {
    let logits = predict_logits(&r.model, &r.params, ex, r.config.optimizer.batch_size)?;
    let tau = tau_of(r.config.loss, &r.sigma, r.config.tau_eps)?;
    let all: Vec<usize> = (0..ex.len()).collect();
    let horizons = horizon_metrics(&logits, ex, &all, r.config.loss, tau.as_deref())?;
    Ok(MetricsReport {
        split,
        subjects: ex.len(),
        mean_ba: mean_of(&horizons, |h| h.ba),
        mean_ece: mean_of(&horizons, |h| h.ece),
        horizons,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_report(report: &MetricsReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut csv = String::from("horizon,n,ba,ece,mauc,absent\n");
    for h in &report.horizons {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.horizon,
            h.n,
            opt(h.ba),
            opt(h.ece),
            opt(h.mauc),
            u8::from(h.n == 0)
        ));
    }
    let path = out.join("eval_metrics.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let path = out.join("eval_summary.json");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, report)?;
    writeln!(f).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
