use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crypsgd_core::adversary::{attack_baseline_public, attack_proposed, OracleGrant, ProposedAttack};
use crypsgd_core::graph::{build_weight_matrix, contraction_norm, spectrum};
use crypsgd_core::harness::{run_experiment, run_trial_recorded, trial_weights, ExperimentConfig};
use crypsgd_core::protocol::{Algorithm, Reparametrization, Transcript};
use crypsgd_core::schedules::validate_schedule;

#[derive(Parser)]
#[command(name = "crypsgd", version, about = "Encrypted distributed SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all trials and write `<out>/<algorithm>.csv`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also record trial 0 as a JSONL transcript; ground truth goes to
        /// `<transcript>.truth.json`.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Check a config and print the schedule condition report.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Fail when any convergence condition is violated or indeterminate.
        #[arg(long)]
        strict: bool,
    },
    /// Gradient-inference attack on a recorded transcript.
    Attack {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Comma-separated oracle extras: plaintexts,weights,gamma.
        #[arg(long, default_value = "")]
        extras: String,
        /// Ground-truth file written by `run --transcript`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Spectrum of trial 0's weight matrix and the contraction check.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Print the default five-agent configuration.
    InitConfig {
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Proposed)]
        algorithm: AlgorithmArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Proposed,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Proposed,
    NoAttenuation,
    Baseline,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Proposed => Algorithm::Proposed,
            AlgorithmArg::NoAttenuation => Algorithm::NoAttenuation,
            AlgorithmArg::Baseline => Algorithm::Baseline,
        }
    }
}

/// Failure with its exit code: 1 for configuration problems, 2 at runtime.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: e.into() }
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: e.into() }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let c = ExperimentConfig::load(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(config_err)?;
    c.validate().context("invalid config").map_err(config_err)?;
    Ok(c)
}

fn run(config: &Path, out: &Path, transcript: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime_err)?;
    let summary = run_experiment(&cfg).map_err(runtime_err)?;
    let csv = out.join(format!("{}.csv", cfg.algorithm.name()));
    summary.write_csv(&csv).map_err(runtime_err)?;
    let last = summary.last();
    println!(
        "{}: {} trials, {} iterations, final mean MSE {:.6e} -> {}",
        cfg.algorithm.name(),
        summary.trials,
        summary.iterations,
        last.mean_mse,
        csv.display()
    );
    if let Some(path) = transcript {
        let rec = run_trial_recorded(&cfg, 0, Reparametrization::default()).map_err(runtime_err)?;
        rec.transcript
            .as_ref()
            .expect("recorded run has a transcript")
            .save(path)
            .map_err(runtime_err)?;
        let gradients: Vec<Vec<Vec<f64>>> = rec
            .steps
            .iter()
            .map(|s| s.gradients.iter().map(|g| g.values()).collect())
            .collect();
        let products: Vec<_> = rec.steps.iter().map(|s| s.products.clone()).collect();
        let truth = json!({ "gradients": gradients, "products": products });
        fs::write(truth_path(path), serde_json::to_string(&truth).map_err(runtime_err)?).map_err(runtime_err)?;
        println!("transcript -> {}", path.display());
    }
    Ok(())
}

fn truth_path(transcript: &Path) -> PathBuf {
    let mut s = transcript.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

fn validate(config: &Path, strict: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let report = validate_schedule(&vec![cfg.stepsize; cfg.topology.agents], &cfg.attenuation);
    print!("{report}");
    if strict && !report.all_hold() {
        return Err(config_err(anyhow::anyhow!("schedule conditions do not all hold")));
    }
    Ok(())
}

type Series = Vec<Vec<Vec<f64>>>;

fn read_truth(path: &Path, key: &str) -> anyhow::Result<Series> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(serde_json::from_value(v.get(key).cloned().context("truth file lacks field")?)?)
}

fn per_agent_max(a: &Series, b: &Series) -> anyhow::Result<Vec<f64>> {
    if a.len() != b.len() {
        bail!("truth covers {} iterations, attack {}", b.len(), a.len());
    }
    let n = a.first().map_or(0, Vec::len);
    let mut out = vec![0.0_f64; n];
    for (ak, bk) in a.iter().zip(b) {
        for (i, (x, y)) in ak.iter().zip(bk).enumerate() {
            for (u, v) in x.iter().zip(y) {
                out[i] = out[i].max((u - v).abs());
            }
        }
    }
    Ok(out)
}

fn attack(path: &Path, mode: Mode, extras: &str, truth: Option<&Path>) -> Result<(), Failure> {
    let t = Transcript::load(path)
        .with_context(|| format!("reading transcript {}", path.display()))
        .map_err(config_err)?;
    let grant = OracleGrant::parse(extras).map_err(config_err)?;
    let report = match mode {
        Mode::Baseline => {
            let a = attack_baseline_public(&t).map_err(runtime_err)?;
            let errors = truth
                .map(|p| read_truth(p, "gradients").and_then(|g| per_agent_max(&a.gradients, &g)))
                .transpose()
                .map_err(runtime_err)?;
            json!({
                "mode": "baseline",
                "iterations": a.gradients.len(),
                "per_agent_max_error": errors,
                "gradients": a.gradients,
            })
        }
        Mode::Proposed => {
            let a = attack_proposed(&t, grant).map_err(runtime_err)?;
            let errors = match (&a, truth) {
                (ProposedAttack::Recovered { .. }, Some(p)) => Some(
                    read_truth(p, "products")
                        .and_then(|r| per_agent_max(&a.products().expect("recovered"), &r))
                        .map_err(runtime_err)?,
                ),
                _ => None,
            };
            let degenerate = match &a {
                ProposedAttack::Recovered { certificates } => {
                    Some(certificates.iter().flatten().filter(|c| c.is_degenerate()).count())
                }
                _ => None,
            };
            json!({
                "mode": "proposed",
                "extras": grant,
                "product_per_agent_max_error": errors,
                "degenerate_certificates": degenerate,
                "result": a,
            })
        }
    };
    let text = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime_err(e)),
        _ => Ok(()),
    }
}

fn spectrum_cmd(config: &Path, trial: u64) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let topo = cfg.topology.build().map_err(config_err)?;
    let weights = trial_weights(&cfg, &topo, trial).map_err(runtime_err)?;
    let w = build_weight_matrix(&topo, &weights).map_err(runtime_err)?;
    let s = spectrum(&w).map_err(runtime_err)?;
    println!("eigenvalues: {:?}", s.eigenvalues);
    println!("mu = {:.12}", s.mu);
    println!("gamma_max = {:.12}", s.gamma_max);
    for k in [0usize, 1, 10, 100, cfg.iterations] {
        let gamma = match cfg.algorithm {
            Algorithm::Proposed => cfg.attenuation.gamma_at(k),
            _ => 1.0,
        };
        match contraction_norm(&w, gamma) {
            Ok(c) => println!(
                "k = {k:>6}  gamma = {gamma:.6}  ||I + gamma W - 11^T/n|| = {:.12}  1 - mu gamma = {:.12}  diff = {:.2e}",
                c.measured,
                c.predicted,
                (c.measured - c.predicted).abs()
            ),
            Err(e) => println!("k = {k:>6}  gamma = {gamma:.6}  {e}"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, transcript } => run(&config, &out, transcript.as_deref()),
        Command::Validate { config, strict } => validate(&config, strict),
        Command::Attack {
            transcript,
            mode,
            extras,
            truth,
        } => attack(&transcript, mode, &extras, truth.as_deref()),
        Command::Spectrum { config, trial } => spectrum_cmd(&config, trial),
        Command::InitConfig { algorithm } => {
            println!("{}", ExperimentConfig::reference(algorithm.into()).to_json());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
