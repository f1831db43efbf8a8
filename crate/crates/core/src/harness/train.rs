use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::dataset::{check_compatible, clinical_ranges, feature_schema, in_split, Examples, Split};
use super::evaluate::{horizon_metrics, mean_of, predict_logits, tau_of};
use super::optim::Adam;
use crate::autodiff::Graph;
use crate::data::load_cohort;
use crate::error::{Error, Result};
use crate::losses::{build_objective, ObjectiveSpec, NOISE_PARAM};
use crate::model::Climat;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_NAME: &str = "checkpoint.clmt";
pub const LOG_NAME: &str = "train_log.csv";
pub const CONFIG_NAME: &str = "run_config.json";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean objective over the epoch's batches.
    pub train_loss: f64,
    pub tau: Option<Vec<f64>>,
    pub val_ba: Option<f64>,
    pub val_ece: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The configuration echo stored in the checkpoint.
    pub config: RunConfig,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    train_with(cfg, &mut |_| {})
}

fn log_csv(log: &[EpochLog], tasks: usize) -> String {
    let mut s = String::from("epoch,train_loss");
    for t in 0..tasks {
        s.push_str(&format!(",tau_{t}"));
    }
    s.push_str(",val_ba,val_ece\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for e in log {
        s.push_str(&format!("{},{}", e.epoch, e.train_loss));
        for t in 0..tasks {
            s.push(',');
            if let Some(tau) = &e.tau {
                s.push_str(&tau[t].to_string());
            }
        }
        s.push_str(&format!(",{},{}\n", opt(e.val_ba), opt(e.val_ece)));
    }
    s
}

/// Trains on the training split, calling `on_epoch` after every epoch, and
/// writes checkpoint, log, and configuration echo to `cfg.out`.
pub fn train_with(cfg: &RunConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let cohort = load_cohort(&cfg.dataset)?;
    check_compatible(&cohort, &cfg.model)?;
    let train_subjects: Vec<_> = cohort.subjects.iter().filter(|s| in_split(&s.id, Split::Train)).collect();
    let val_subjects: Vec<_> = cohort.subjects.iter().filter(|s| in_split(&s.id, Split::Val)).collect();
    if train_subjects.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let mut echo = cfg.clone();
    let ranges = match &cfg.clinical_ranges {
        Some(r) => r.clone(),
        None => clinical_ranges(&cohort, &train_subjects),
    };
    echo.clinical_ranges = Some(ranges.clone());
    let schema = feature_schema(&cohort, &ranges)?;
    let train_ex = Examples::build(&train_subjects, &schema, &cfg.model)?;
    let val_ex = Examples::build(&val_subjects, &schema, &cfg.model)?;

    let model = Climat::new(cfg.model.clone())?;
    let tasks = cfg.model.tasks();
    let mut params = model.init_params(cfg.seed)?;
    params.insert(NOISE_PARAM, Tensor::full(&[tasks], cfg.loss.initial_noise()))?;
    let spec = ObjectiveSpec {
        kind: cfg.loss,
        lambda: cfg.model.consistency,
        tau_eps: cfg.tau_eps,
        diagnosis_ce: cfg.diagnosis_ce,
    };
    let mut adam = Adam::new(&cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut log = Vec::with_capacity(cfg.optimizer.epochs);

    for epoch in 1..=cfg.optimizer.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.optimizer.batch_size).enumerate() {
            let targets = train_ex.targets(chunk);
            if !targets.iter().any(|t| t.mask.iter().any(|&m| m)) {
                continue;
            }
            let mut g = Graph::new();
            let nodes = model.build(&mut g, &train_ex.inputs(chunk)?)?;
            let obj = build_objective(&mut g, &nodes.trajectory, nodes.diagnosis, &targets, &spec)?;
            let diag = |e: Error| Error::InvalidArgument(format!("epoch {epoch}, batch {b}: {e}"));
            g.forward(&params).map_err(diag)?;
            total += g.value(obj.total)?.item().unwrap();
            batches += 1;
            let grads = g.backward(obj.total)?;
            if grads.values().any(|t| !t.all_finite()) {
                return Err(diag(Error::InvalidArgument("non-finite gradient".into())));
            }
            adam.update(&mut params, &grads)?;
        }
        let entry = epoch_log(epoch, total / batches.max(1) as f64, cfg, &model, &params, &val_ex)?;
        on_epoch(&entry);
        log.push(entry);
    }

    let checkpoint = make_checkpoint(&params, &echo)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let checkpoint_path = cfg.out.join(CHECKPOINT_NAME);
    checkpoint.save(&checkpoint_path)?;
    let log_path = cfg.out.join(LOG_NAME);
    std::fs::write(&log_path, log_csv(&log, tasks)).map_err(|e| Error::io(&log_path, e))?;
    let config_path = cfg.out.join(CONFIG_NAME);
    std::fs::write(&config_path, format!("{}\n", checkpoint.config_json)).map_err(|e| Error::io(&config_path, e))?;
    Ok(TrainOutcome {
        config: echo,
        checkpoint,
        log,
        checkpoint_path,
        log_path,
    })
}

fn epoch_log(epoch: usize, train_loss: f64, cfg: &RunConfig, model: &Climat, params: &ParamStore, val: &Examples) -> Result<EpochLog> {
    let sigma = params.get(NOISE_PARAM).unwrap().data().to_vec();
    let tau = tau_of(cfg.loss, &sigma, cfg.tau_eps)?;
    let (val_ba, val_ece) = if val.is_empty() {
        (None, None)
    } else {
        let logits = predict_logits(model, params, val, cfg.optimizer.batch_size)?;
        let all: Vec<usize> = (0..val.len()).collect();
        let rows = horizon_metrics(&logits, val, &all, cfg.loss, tau.as_deref())?;
        (mean_of(&rows, |h| h.ba), mean_of(&rows, |h| h.ece))
    };
    Ok(EpochLog {
        epoch,
        train_loss,
        tau,
        val_ba,
        val_ece,
    })
}

fn make_checkpoint(params: &ParamStore, echo: &RunConfig) -> Result<Checkpoint> {
    let mut tensors = ParamStore::new();
    for (path, t) in params.iter().filter(|(p, _)| *p != NOISE_PARAM) {
        tensors.insert(path, t.clone())?;
    }
    Ok(Checkpoint {
        params: tensors,
        sigma: params.get(NOISE_PARAM).unwrap().data().to_vec(),
        config_json: serde_json::to_string_pretty(echo)?,
    })
}
