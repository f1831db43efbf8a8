use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use climat::data::{generate_cohort, CohortConfig};
use climat::harness::{
    compare_losses, evaluate, export_attention, read_json, restore, train_with, AttentionConfig, Checkpoint,
    CompareConfig, EvalConfig, RunConfig,
};
use climat::{Error, Result};

#[derive(Parser)]
#[command(name = "climat", version, about = "Multi-agent trajectory forecasting with the CLUB loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Flags {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (config: cohort settings, optional).
    Gen(Flags),
    /// Train a model (config: run settings, optional).
    Train(Flags),
    /// Evaluate a checkpoint (config: checkpoint, dataset, split).
    Eval(Flags),
    /// Train and compare several losses across seeds; --seed shifts the seed list to start there.
    Compare(Flags),
    /// Export attention maps (config: checkpoint, dataset, subject, horizon).
    Attn(Flags),
}

fn required(flags: &Flags, command: &str) -> Result<PathBuf> {
    flags
        .config
        .clone()
        .ok_or_else(|| Error::Config(format!("`{command}` needs --config")))
}

fn no_seed(flags: &Flags, command: &str) -> Result<()> {
    match flags.seed {
        Some(_) => Err(Error::Config(format!("`{command}` is deterministic and takes no --seed"))),
        None => Ok(()),
    }
}

fn dataset_of(checkpoint: &Path, dataset: Option<PathBuf>) -> Result<PathBuf> {
    match dataset {
        Some(d) => Ok(d),
        None => Ok(restore(&Checkpoint::load(checkpoint)?)?.config.dataset),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(f) => {
            let mut cfg: CohortConfig = match &f.config {
                Some(p) => read_json(p)?,
                None => CohortConfig::default(),
            };
            if let Some(s) = f.seed {
                cfg.seed = s;
            }
            let out = f.out.unwrap_or_else(|| PathBuf::from("data"));
            let m = generate_cohort(&cfg, &out)?;
            println!("wrote {} subjects to {}", m.subjects.len(), out.display());
        }
        Command::Train(f) => {
            let mut cfg = match &f.config {
                Some(p) => RunConfig::from_json_file(p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = f.seed {
                cfg.seed = s;
            }
            if let Some(o) = f.out {
                cfg.out = o;
            }
            let o = train_with(&cfg, &mut |e| {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "epoch {:>3}  loss {:.5}  val_ba {}  val_ece {}",
                    e.epoch,
                    e.train_loss,
                    opt(e.val_ba),
                    opt(e.val_ece)
                );
            })?;
            println!("checkpoint {}", o.checkpoint_path.display());
        }
        Command::Eval(f) => {
            no_seed(&f, "eval")?;
            let cfg: EvalConfig = read_json(&required(&f, "eval")?)?;
            let dataset = dataset_of(&cfg.checkpoint, cfg.dataset)?;
            let out = f.out.unwrap_or_else(|| cfg.checkpoint.with_file_name("eval"));
            let r = evaluate(&cfg.checkpoint, &dataset, cfg.split, &out)?;
            for h in &r.horizons {
                let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.4}"));
                println!("t{}  n {:>4}  ba {}  ece {}  mauc {}", h.horizon, h.n, opt(h.ba), opt(h.ece), opt(h.mauc));
            }
            println!("report {}", out.display());
        }
        Command::Compare(f) => {
            let mut cfg: CompareConfig = read_json(&required(&f, "compare")?)?;
            if let Some(s) = f.seed {
                cfg.seeds = (s..).take(cfg.seeds.len()).collect();
            }
            let out = f.out.unwrap_or_else(|| PathBuf::from("runs/compare"));
            let cmp = compare_losses(&cfg, &out, &mut |name, seed, e| {
                println!("{name} seed {seed} epoch {} loss {:.5}", e.epoch, e.train_loss);
            })?;
            for s in &cmp.summaries {
                println!("{:<12} mean ba {:.4}  mean ece {:.4}", s.variant, s.mean_ba, s.mean_ece);
            }
            for t in &cmp.tests {
                let p = |w: &climat::stats::Wilcoxon| w.p_value().map_or("inconclusive".to_string(), |p| format!("{p:.4}"));
                println!("{} vs {}: p(ba) {}  p(ece) {}", t.a, t.b, p(&t.ba), p(&t.ece));
            }
        }
        Command::Attn(f) => {
            no_seed(&f, "attn")?;
            let cfg: AttentionConfig = read_json(&required(&f, "attn")?)?;
            let dataset = dataset_of(&cfg.checkpoint, cfg.dataset)?;
            let out = f.out.unwrap_or_else(|| PathBuf::from("attention"));
            let e = export_attention(&cfg.checkpoint, &dataset, &cfg.subject, cfg.horizon, &out)?;
            for p in &e.files {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
