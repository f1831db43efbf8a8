use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::Split;
use super::evaluate::{horizon_metrics, load_examples, mean_of, predict_logits, restore, tau_of};
use super::train::{train_with, EpochLog};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::stats::{wilcoxon_signed_rank, Wilcoxon};

/// Number of disjoint validation subsets used for paired tests.
pub const SUBSETS: usize = 20;

/// One arm of a comparison: a loss, optionally with its own λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub loss: LossKind,
    #[serde(default)]
    pub consistency: Option<f64>,
}

impl Variant {
    pub fn new(loss: LossKind) -> Self {
        Self {
            name: loss.name().to_string(),
            loss,
            consistency: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub base: RunConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    /// Validation BA / ECE per horizon (`None` when a horizon has no labels).
    pub ba: Vec<Option<f64>>,
    pub ece: Vec<Option<f64>>,
    pub mean_ba: f64,
    pub mean_ece: f64,
    /// Horizon-averaged metrics per validation subset.
    pub subset_ba: Vec<f64>,
    pub subset_ece: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variant: String,
    pub runs: usize,
    pub ba_mean: Vec<f64>,
    pub ba_stderr: Vec<f64>,
    pub ece_mean: Vec<f64>,
    pub ece_stderr: Vec<f64>,
    pub mean_ba: f64,
    pub mean_ece: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub ba: Wilcoxon,
    pub ece: Wilcoxon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<Summary>,
    pub tests: Vec<PairTest>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stderr(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Trains every variant under every seed, evaluates on the validation split,
/// and writes `compare_runs.csv`, `compare.csv`, and `compare_summary.json`
/// under `out`. Each run lives in `out/<variant>_seed<seed>`.
pub fn compare_losses(
    cfg: &CompareConfig,
    out: &Path,
    on_epoch: &mut dyn FnMut(&str, u64, &EpochLog),
) -> Result<Comparison> {
    if cfg.variants.len() < 2 || cfg.seeds.len() < 3 {
        return Err(Error::Config("comparison needs at least 2 losses and 3 seeds".into()));
    }
    let mut names: Vec<&str> = cfg.variants.iter().map(|v| v.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != cfg.variants.len() {
        return Err(Error::Config("variant names must be unique".into()));
    }
    let mut runs = Vec::new();
    for v in &cfg.variants {
        for &seed in &cfg.seeds {
            let mut rc = cfg.base.clone();
            rc.loss = v.loss;
            rc.seed = seed;
            if let Some(l) = v.consistency {
                rc.model.consistency = l;
            }
            rc.out = out.join(format!("{}_seed{seed}", v.name));
            let outcome = train_with(&rc, &mut |e| on_epoch(&v.name, seed, e))?;
            runs.push(score_run(&v.name, seed, &outcome.checkpoint, &rc)?);
        }
    }

    let tasks = cfg.base.model.tasks();
    let mut summaries = Vec::new();
    for v in &cfg.variants {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v.name).collect();
        let stats = |f: &dyn Fn(&RunResult) -> Option<f64>| -> (f64, f64) {
            let vals: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
            if vals.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (mean(&vals), stderr(&vals))
            }
        };
        let (mut ba_mean, mut ba_se, mut ece_mean, mut ece_se) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for t in 0..tasks {
            let (m, s) = stats(&|r| r.ba[t]);
            ba_mean.push(m);
            ba_se.push(s);
            let (m, s) = stats(&|r| r.ece[t]);
            ece_mean.push(m);
            ece_se.push(s);
        }
        summaries.push(Summary {
            variant: v.name.clone(),
            runs: mine.len(),
            ba_mean,
            ba_stderr: ba_se,
            ece_mean,
            ece_stderr: ece_se,
            mean_ba: mean(&mine.iter().map(|r| r.mean_ba).collect::<Vec<_>>()),
            mean_ece: mean(&mine.iter().map(|r| r.mean_ece).collect::<Vec<_>>()),
        });
    }

    // per-subset metrics averaged over seeds, then paired across variants
    let subset_means = |name: &str, f: fn(&RunResult) -> &Vec<f64>| -> Vec<f64> {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == name).collect();
        (0..SUBSETS).map(|k| mean(&mine.iter().map(|r| f(r)[k]).collect::<Vec<_>>())).collect()
    };
    let mut tests = Vec::new();
    for (i, a) in cfg.variants.iter().enumerate() {
        for b in &cfg.variants[i + 1..] {
            tests.push(PairTest {
                a: a.name.clone(),
                b: b.name.clone(),
                ba: wilcoxon_signed_rank(&subset_means(&a.name, |r| &r.subset_ba), &subset_means(&b.name, |r| &r.subset_ba))?,
                ece: wilcoxon_signed_rank(&subset_means(&a.name, |r| &r.subset_ece), &subset_means(&b.name, |r| &r.subset_ece))?,
            });
        }
    }
    let cmp = Comparison { runs, summaries, tests };
    write_comparison(&cmp, tasks, out)?;
    Ok(cmp)
}

fn score_run(name: &str, seed: u64, ckpt: &super::checkpoint::Checkpoint, rc: &RunConfig) -> Result<RunResult> {
    let r = restore(ckpt)?;
    let ex = load_examples(&r.config, &rc.dataset, Split::Val)?;
    if ex.len() < SUBSETS {
        return Err(Error::Dataset(format!("validation split has {} subjects, need {SUBSETS}", ex.len())));
    }
    let logits = predict_logits(&r.model, &r.params, &ex, r.config.optimizer.batch_size)?;
    let tau = tau_of(r.config.loss, &r.sigma, r.config.tau_eps)?;
    let all: Vec<usize> = (0..ex.len()).collect();
    let rows = horizon_metrics(&logits, &ex, &all, r.config.loss, tau.as_deref())?;
    let (mut subset_ba, mut subset_ece) = (Vec::new(), Vec::new());
    for k in 0..SUBSETS {
        let idx: Vec<usize> = (0..ex.len()).filter(|i| i % SUBSETS == k).collect();
        let sub = horizon_metrics(&logits, &ex, &idx, r.config.loss, tau.as_deref())?;
        subset_ba.push(mean_of(&sub, |h| h.ba).unwrap_or(f64::NAN));
        subset_ece.push(mean_of(&sub, |h| h.ece).unwrap_or(f64::NAN));
    }
    Ok(RunResult {
        variant: name.to_string(),
        seed,
        ba: rows.iter().map(|h| h.ba).collect(),
        ece: rows.iter().map(|h| h.ece).collect(),
        mean_ba: mean_of(&rows, |h| h.ba).unwrap_or(f64::NAN),
        mean_ece: mean_of(&rows, |h| h.ece).unwrap_or(f64::NAN),
        subset_ba,
        subset_ece,
    })
}

fn write_comparison(cmp: &Comparison, tasks: usize, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut runs = String::from("variant,seed,mean_ba,mean_ece");
    for t in 0..tasks {
        runs.push_str(&format!(",ba_{t},ece_{t}"));
    }
    runs.push('\n');
    for r in &cmp.runs {
        runs.push_str(&format!("{},{},{},{}", r.variant, r.seed, r.mean_ba, r.mean_ece));
        for t in 0..tasks {
            runs.push_str(&format!(",{},{}", opt(r.ba[t]), opt(r.ece[t])));
        }
        runs.push('\n');
    }
    let mut table = String::from("variant,horizon,runs,ba_mean,ba_stderr,ece_mean,ece_stderr\n");
    for s in &cmp.summaries {
        for t in 0..tasks {
            table.push_str(&format!(
                "{},{t},{},{},{},{},{}\n",
                s.variant, s.runs, s.ba_mean[t], s.ba_stderr[t], s.ece_mean[t], s.ece_stderr[t]
            ));
        }
    }
    for (name, text) in [("compare_runs.csv", runs), ("compare.csv", table)] {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let p = out.join("compare_summary.json");
    let mut json = serde_json::to_string_pretty(cmp)?;
    json.push('\n');
    std::fs::write(&p, json).map_err(|e| Error::io(&p, e))
}
