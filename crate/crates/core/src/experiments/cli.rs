//! The `dpgm` command line.
//!
//! Every subcommand reads an optional JSON config (`--config`), takes a
//! `--seed`, and writes its outputs atomically under `--out`. Exit code 1
//! means a bad config or input, 2 a numerical abort.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::etm::etm_log_to_csv;
use crate::presgan::presgan_log_to_csv;
use crate::tensor::{write_atomic, write_tensor_csv};

use super::gradcheck::run_gradcheck;
use super::hmc_bench::{run_hmc_bench, HmcBenchConfig};
use super::loglik::{run_loglik, LoglikConfig};
use super::oracle::{oracle_rows_to_csv, run_oracle, OracleConfig};
use super::ringsim::{run_ringsim, RingsimConfig};
use super::threads;
use super::topics::{run_etm, EtmRunConfig};

/// Relative-error ceiling for `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "dpgm", version, about = "Deep probabilistic graphical models: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if needed.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train PresGAN (or the noised GAN with --lambda 0) on the ring of Gaussians.
    Ringsim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit VAE and REM to a linear-Gaussian model and compare with its exact likelihood.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Particles for REM training and the IWAE evaluation bound.
        #[arg(long)]
        k_particles: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train an embedded topic model and write the topic report.
    Etm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Importance-sampled log-likelihood of a linear generator.
    EvalLoglik {
        #[command(flatten)]
        common: Common,
        /// Importance samples per test point.
        #[arg(long)]
        k_particles: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finite-difference check of every registered computation graph.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// HMC moment and reversibility checks on Gaussian targets.
    HmcBench {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn ringsim(common: &Common, lambda: Option<f64>, epochs: Option<usize>) -> Result<()> {
    let mut cfg: RingsimConfig = load_config(&common.config)?;
    if let Some(s) = common.seed {
        cfg.presgan.seed = s;
    }
    if let Some(l) = lambda {
        cfg.presgan.lambda = l;
    }
    if let Some(e) = epochs {
        cfg.presgan.epochs = e;
    }
    cfg.presgan.validate()?;
    prepare(&common.out)?;
    let total = cfg.presgan.epochs;
    let res = run_ringsim(&cfg, |row| {
        if row.epoch % 25 == 24 || row.epoch + 1 == total {
            eprintln!(
                "epoch {:4}  {:7.1}s  sigma [{:.3}, {:.3}]  hmc accept {:.2}",
                row.epoch + 1,
                row.wallclock_s,
                row.sigma_min,
                row.sigma_max,
                row.hmc_accept
            );
        }
        Ok(())
    })?;
    write_atomic(&common.out.join("samples.csv"), write_tensor_csv(&res.samples).as_bytes())?;
    write_json(
        &common.out.join("coverage.json"),
        &serde_json::json!({
            "lambda": cfg.presgan.lambda,
            "seed": cfg.presgan.seed,
            "epochs": cfg.presgan.epochs,
            "sigma": res.generator.sigma(),
            "coverage": res.coverage,
        }),
    )?;
    write_atomic(&common.out.join("train_log.csv"), presgan_log_to_csv(&res.log).as_bytes())?;
    println!("modes covered: {} of {}", res.coverage.modes_covered, res.coverage.proportions.len());
    Ok(())
}

fn oracle(common: &Common, k: Option<usize>, epochs: Option<usize>) -> Result<()> {
    let mut cfg: OracleConfig = load_config(&common.config)?;
    if let Some(k) = k {
        cfg.k_particles = k;
        cfg.rem.particles = k;
    }
    if let Some(e) = epochs {
        cfg.vae.epochs = e;
        cfg.rem.epochs = e;
    }
    prepare(&common.out)?;
    let (rows, log) = run_oracle(&cfg, common.seed.unwrap_or(0))?;
    write_atomic(&common.out.join("bounds.csv"), oracle_rows_to_csv(&rows).as_bytes())?;
    write_atomic(&common.out.join("train_log.csv"), log.to_csv().as_bytes())?;
    for r in &rows {
        println!(
            "{:<18} elbo {:10.4}  iwae {:10.4}  exact {:10.4}  truth {:10.4}",
            r.method, r.elbo, r.iwae, r.exact_loglik, r.truth
        );
    }
    Ok(())
}

fn etm(common: &Common, epochs: Option<usize>) -> Result<()> {
    let mut cfg: EtmRunConfig = load_config(&common.config)?;
    if let Some(e) = epochs {
        cfg.etm.epochs = e;
    }
    prepare(&common.out)?;
    let (_, report, log) = run_etm(&cfg, common.seed.unwrap_or(0))?;
    write_json(&common.out.join("topics.json"), &report)?;
    write_atomic(&common.out.join("train_log.csv"), etm_log_to_csv(&log).as_bytes())?;
    for (k, words) in report.topics.top_words.iter().enumerate() {
        println!("topic {k}: {}", words.join(" "));
    }
    println!(
        "TC {:.4}  TD {:.4}  quality {:.4}  completion perplexity {:.3}",
        report.topics.coherence, report.topics.diversity, report.topics.quality, report.completion.perplexity
    );
    Ok(())
}

fn eval_loglik(common: &Common, k: Option<usize>, epochs: Option<usize>) -> Result<()> {
    let mut cfg: LoglikConfig = load_config(&common.config)?;
    if let Some(k) = k {
        cfg.is.samples = k;
    }
    if let Some(e) = epochs {
        cfg.encoder_epochs = e;
    }
    prepare(&common.out)?;
    let report = run_loglik(&cfg, common.seed.unwrap_or(0), threads()?)?;
    write_json(&common.out.join("loglik.json"), &report)?;
    println!(
        "mean estimate {:.5}  mean truth {:.5}  max relative error {:.3e}",
        report.mean_estimate, report.mean_truth, report.max_rel_error
    );
    Ok(())
}

fn gradcheck(common: &Common) -> Result<()> {
    prepare(&common.out)?;
    let checks = run_gradcheck(common.seed.unwrap_or(0), threads()?)?;
    write_json(&common.out.join("gradcheck.json"), &checks)?;
    let mut worst: f64 = 0.0;
    for c in &checks {
        println!("{:<32} {:>10.3e}{}", c.name, c.max_rel_error, if c.linear { "  (linear)" } else { "" });
        worst = worst.max(c.max_rel_error);
    }
    if !(worst < GRADCHECK_TOLERANCE) {
        return Err(Error::Numerical(format!(
            "worst relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn hmc_bench(common: &Common) -> Result<()> {
    let cfg: HmcBenchConfig = load_config(&common.config)?;
    prepare(&common.out)?;
    let report = run_hmc_bench(&cfg, common.seed.unwrap_or(0))?;
    write_json(&common.out.join("hmc.json"), &report)?;
    for (name, m) in [("N(0,1)", &report.standard_normal), ("correlated 2-D", &report.correlated)] {
        println!(
            "{name:<15} mean err {:.4}  cov err {:.4}  accept {:.3}  step {:.4}",
            m.mean_error, m.cov_error, m.acceptance, m.step_size
        );
    }
    println!("leapfrog reversibility {:.2e}", report.reversibility_error);
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::NonFinite { .. } => 2,
        _ => 1,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Ringsim { common, lambda, epochs } => ringsim(common, *lambda, *epochs),
        Command::Oracle {
            common,
            k_particles,
            epochs,
        } => oracle(common, *k_particles, *epochs),
        Command::Etm { common, epochs } => etm(common, *epochs),
        Command::EvalLoglik {
            common,
            k_particles,
            epochs,
        } => eval_loglik(common, *k_particles, *epochs),
        Command::Gradcheck { common } => gradcheck(common),
        Command::HmcBench { common } => hmc_bench(common),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
