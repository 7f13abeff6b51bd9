//! Command-line front end: config parsing with file/flag precedence,
//! experiment dispatch, atomic artifact emission and the `verify` suite
//! runner.
//!
//! Exit codes: 0 success, 1 at least one violated verdict, 2 configuration
//! error (including unknown config keys), 3 I/O failure.

use crate::bounds::{best_gamma, eval_bound, BoundInputs, BoundReport, TheoremId};
use crate::experiments::{
    batch_speedup_sweep, machine_speedup_sweep, risk_decomposition, NoiseRegime, Reference,
    SweepResult, Verdict,
};
use crate::optimizers::{run_local_sgd, run_minibatch_sgd, LocalConfig, MinibatchConfig, StepSchedule};
use crate::problems::{generate_dataset, GeneratorSpec, ProblemKind};
use crate::stability::{estimate_on_average_stability, StabilityEstimate, StabilityOptions, TrainerConfig};
use crate::suites::{run_suite, SuiteParams, SuiteReport};
use crate::Error;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV_VAR: &str = "SGDLAB_SEED";

#[derive(Debug, Parser)]
#[command(name = "sgdlab", version, about = "minibatch/local SGD stability and speedup lab")]
pub struct Cli {
    /// JSON config file; command-line flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub problem: Option<String>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[arg(long, global = true)]
    pub x_cap: Option<f64>,
    #[arg(long, global = true)]
    pub trainer: Option<String>,
    #[arg(long, global = true)]
    pub b: Option<usize>,
    #[arg(long = "M", global = true)]
    pub machines: Option<usize>,
    #[arg(long = "K", global = true)]
    pub local_steps: Option<usize>,
    #[arg(long = "R", global = true)]
    pub rounds: Option<usize>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Step schedule: const | poly | localpoly.
    #[arg(long, global = true)]
    pub schedule: Option<String>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    #[arg(long, global = true)]
    pub subsample: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Verify suite name (verify) or sweep axis values (speedup).
    #[arg(long, global = true)]
    pub suite: Option<String>,
    /// Sweep axis for `speedup`: batch | machine.
    #[arg(long, global = true)]
    pub axis: Option<String>,
    /// Comma-separated axis values for `speedup`, e.g. "2,4,8,16".
    #[arg(long, global = true)]
    pub values: Option<String>,
    #[arg(long, global = true)]
    pub n_test: Option<usize>,

    #[command(subcommand)]
    pub command: CommandName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum CommandName {
    /// Generate a dataset and write it as CSV with its spec and constants.
    Generate,
    /// Train one model and export the trajectory log plus risk report.
    Train,
    /// Estimate on-average model stability and the paired bound reports.
    Stability,
    /// Run a batch-size or machine-count speedup sweep.
    Speedup,
    /// Run verification suites; exit 1 on any violated verdict.
    Verify,
    /// Render existing artifacts in the output directory into Markdown.
    Report,
}

impl CommandName {
    fn as_str(&self) -> &'static str {
        match self {
            CommandName::Generate => "generate",
            CommandName::Train => "train",
            CommandName::Stability => "stability",
            CommandName::Speedup => "speedup",
            CommandName::Verify => "verify",
            CommandName::Report => "report",
        }
    }
}

/// Fully resolved run configuration; serialized to `resolved.json` in the
/// output directory before any compute. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub problem: String,
    pub n: usize,
    pub d: usize,
    pub noise: f64,
    pub x_cap: f64,
    pub trainer: String,
    pub b: usize,
    #[serde(rename = "M")]
    pub machines: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    #[serde(rename = "R")]
    pub rounds: usize,
    pub eta: f64,
    pub schedule: String,
    pub mu: f64,
    pub a: f64,
    pub replicates: usize,
    pub subsample: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub suite: String,
    pub axis: String,
    pub values: Vec<usize>,
    pub n_test: usize,
}

/// Partial config as read from a JSON file; every field optional, unknown
/// keys rejected with the offending name.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<String>,
    n: Option<usize>,
    d: Option<usize>,
    noise: Option<f64>,
    x_cap: Option<f64>,
    trainer: Option<String>,
    b: Option<usize>,
    #[serde(rename = "M")]
    machines: Option<usize>,
    #[serde(rename = "K")]
    local_steps: Option<usize>,
    #[serde(rename = "R")]
    rounds: Option<usize>,
    eta: Option<f64>,
    schedule: Option<String>,
    mu: Option<f64>,
    a: Option<f64>,
    replicates: Option<usize>,
    subsample: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    suite: Option<String>,
    axis: Option<String>,
    values: Option<Vec<usize>>,
    n_test: Option<usize>,
    // tolerated so a resolved.json can be fed back in as --config
    #[allow(dead_code)]
    command: Option<String>,
}

/// Resolves flags over file values over defaults into a full config.
pub fn parse_config(cli: &Cli) -> Result<RunConfig, Error> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config file: {e}")))?
        }
        None => FileConfig::default(),
    };
    let env_seed = std::env::var(SEED_ENV_VAR).ok().and_then(|s| s.parse::<u64>().ok());
    let values = match &cli.values {
        Some(text) => Some(
            text.split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<usize>, _>>()
                .map_err(|e| Error::Config(format!("--values: {e}")))?,
        ),
        None => None,
    };
    let cfg = RunConfig {
        command: cli.command.as_str().to_string(),
        problem: cli.problem.clone().or(file.problem).unwrap_or_default(),
        n: cli.n.or(file.n).unwrap_or(64),
        d: cli.d.or(file.d).unwrap_or(8),
        noise: cli.noise.or(file.noise).unwrap_or(0.5),
        x_cap: cli.x_cap.or(file.x_cap).unwrap_or(1.0),
        trainer: cli.trainer.clone().or(file.trainer).unwrap_or_else(|| "minibatch".into()),
        b: cli.b.or(file.b).unwrap_or(4),
        machines: cli.machines.or(file.machines).unwrap_or(2),
        local_steps: cli.local_steps.or(file.local_steps).unwrap_or(2),
        rounds: cli.rounds.or(file.rounds).unwrap_or(50),
        eta: cli.eta.or(file.eta).unwrap_or(0.3),
        schedule: cli.schedule.clone().or(file.schedule).unwrap_or_else(|| "const".into()),
        mu: cli.mu.or(file.mu).unwrap_or(crate::problems::DEFAULT_RIDGE_REG),
        a: cli.a.or(file.a).unwrap_or(0.0),
        replicates: cli.replicates.or(file.replicates).unwrap_or(64),
        subsample: cli.subsample.or(file.subsample).unwrap_or(32),
        seed: cli.seed.or(file.seed).or(env_seed).unwrap_or(0),
        threads: cli.threads.or(file.threads),
        out: cli.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        suite: cli.suite.clone().or(file.suite).unwrap_or_else(|| "all".into()),
        axis: cli.axis.clone().or(file.axis).unwrap_or_else(|| "batch".into()),
        values: values.or(file.values).unwrap_or_else(|| vec![2, 4, 8, 16]),
        n_test: cli.n_test.or(file.n_test).unwrap_or(100_000),
    };
    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfig) -> Result<(), Error> {
    let needs_problem =
        matches!(cfg.command.as_str(), "generate" | "train" | "stability" | "speedup");
    if needs_problem && cfg.problem.is_empty() {
        return Err(Error::Config("missing required flag `--problem`".into()));
    }
    if needs_problem {
        problem_kind(&cfg.problem)?;
    }
    if !matches!(cfg.trainer.as_str(), "minibatch" | "local") {
        return Err(Error::Config(format!("unknown trainer `{}` (minibatch|local)", cfg.trainer)));
    }
    if !matches!(cfg.schedule.as_str(), "const" | "poly" | "localpoly") {
        return Err(Error::Config(format!(
            "unknown schedule `{}` (const|poly|localpoly)",
            cfg.schedule
        )));
    }
    if !matches!(cfg.axis.as_str(), "batch" | "machine") {
        return Err(Error::Config(format!("unknown axis `{}` (batch|machine)", cfg.axis)));
    }
    Ok(())
}

fn problem_kind(name: &str) -> Result<ProblemKind, Error> {
    match name {
        "least_squares" | "ls" => Ok(ProblemKind::LeastSquares),
        "logistic" => Ok(ProblemKind::Logistic),
        "ridge" | "ridge_least_squares" => Ok(ProblemKind::RidgeLeastSquares),
        "quadratic_pl" | "pl" => Ok(ProblemKind::QuadraticPl),
        other => Err(Error::Config(format!(
            "unknown problem `{other}` (least_squares|logistic|ridge|quadratic_pl)"
        ))),
    }
}

fn generator_spec(cfg: &RunConfig) -> Result<GeneratorSpec, Error> {
    Ok(GeneratorSpec {
        kind: problem_kind(&cfg.problem)?,
        d: cfg.d,
        n: cfg.n,
        noise_level: cfg.noise,
        x_cap: cfg.x_cap,
        seed: cfg.seed,
    })
}

fn schedule(cfg: &RunConfig) -> Result<StepSchedule, Error> {
    match cfg.schedule.as_str() {
        "const" => Ok(StepSchedule::Constant { eta: cfg.eta }),
        "poly" => Ok(StepSchedule::PolyStrong { a: cfg.a, mu: cfg.mu }),
        "localpoly" => Ok(StepSchedule::LocalPolyStrong { a: cfg.a, mu: cfg.mu, k: cfg.local_steps }),
        other => Err(Error::Config(format!("unknown schedule `{other}`"))),
    }
}

fn trainer_config(cfg: &RunConfig) -> Result<TrainerConfig, Error> {
    let sched = schedule(cfg)?;
    Ok(match cfg.trainer.as_str() {
        "minibatch" => {
            TrainerConfig::Minibatch(MinibatchConfig::new(cfg.b, cfg.rounds, sched, cfg.seed))
        }
        _ => TrainerConfig::Local(LocalConfig::new(
            cfg.machines,
            cfg.local_steps,
            cfg.rounds,
            sched,
            cfg.seed,
        )),
    })
}

/// Build/run provenance embedded in every JSON artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub master_seed: u64,
}

fn provenance(cfg: &RunConfig, resolved_json: &str) -> Provenance {
    let mut hasher = Sha256::new();
    hasher.update(resolved_json.as_bytes());
    Provenance {
        version: format!("sgdlab-v{}", env!("CARGO_PKG_VERSION")),
        config_sha256: format!("{:x}", hasher.finalize()),
        master_seed: cfg.seed,
    }
}

/// Writes bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Runs the parsed command. Returns the process exit code.
pub fn dispatch(cfg: &RunConfig) -> Result<i32, Error> {
    if let Some(threads) = cfg.threads {
        // a second configuration attempt in the same process is fine to ignore
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    std::fs::create_dir_all(&cfg.out)?;
    let resolved_json = serde_json::to_string_pretty(cfg)?;
    write_atomic(&cfg.out.join("resolved.json"), format!("{resolved_json}\n").as_bytes())?;
    let prov = provenance(cfg, &resolved_json);

    match cfg.command.as_str() {
        "generate" => cmd_generate(cfg, &prov),
        "train" => cmd_train(cfg, &prov),
        "stability" => cmd_stability(cfg, &prov),
        "speedup" => cmd_speedup(cfg, &prov),
        "verify" => cmd_verify(cfg, &prov),
        "report" => cmd_report(cfg, &prov),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

fn cmd_generate(cfg: &RunConfig, prov: &Provenance) -> Result<i32, Error> {
    let spec = generator_spec(cfg)?;
    let (data, instance) = generate_dataset(&spec)?;
    let mut csv = String::new();
    let header: Vec<String> = (0..spec.d).map(|i| format!("x_{i}")).collect();
    csv.push_str(&header.join(","));
    csv.push_str(",y\n");
    for z in &data.examples {
        for x in &z.x {
            csv.push_str(&format!("{x},"));
        }
        csv.push_str(&format!("{}\n", z.y));
    }
    write_atomic(&cfg.out.join("dataset.csv"), csv.as_bytes())?;
    write_json(&cfg.out.join("spec.json"), &spec)?;
    #[derive(Serialize)]
    struct InstanceOut<'a> {
        provenance: &'a Provenance,
        kind: ProblemKind,
        d: usize,
        smoothness: f64,
        mu: f64,
        reg: f64,
        noise_level: f64,
        x_cap: f64,
        teacher_w: Option<Vec<f64>>,
    }
    write_json(
        &cfg.out.join("instance.json"),
        &InstanceOut {
            provenance: prov,
            kind: instance.kind,
            d: instance.d,
            smoothness: instance.smoothness,
            mu: instance.mu,
            reg: instance.reg,
            noise_level: instance.noise_level,
            x_cap: instance.x_cap,
            teacher_w: instance.teacher_w.clone(),
        },
    )?;
    println!("wrote dataset.csv, spec.json, instance.json to {}", cfg.out.display());
    Ok(0)
}

fn cmd_train(cfg: &RunConfig, prov: &Provenance) -> Result<i32, Error> {
    let spec = generator_spec(cfg)?;
    let (data, instance) = generate_dataset(&spec)?;
    let traj = match trainer_config(cfg)? {
        TrainerConfig::Minibatch(c) => run_minibatch_sgd(&instance, &data, &c)?,
        TrainerConfig::Local(c) => run_local_sgd(&instance, &data, &c)?,
    };
    let mut buf = Vec::new();
    traj.write_jsonl(&mut buf)?;
    write_atomic(&cfg.out.join("trajectory.jsonl"), &buf)?;
    let risk = risk_decomposition(
        &instance,
        &data,
        &traj.final_w,
        &spec,
        Reference::Teacher,
        cfg.n_test,
        cfg.seed,
    )?;
    #[derive(Serialize)]
    struct RiskOut<'a> {
        provenance: &'a Provenance,
        #[serde(flatten)]
        report: &'a crate::experiments::RiskReport,
    }
    write_json(&cfg.out.join("risk.json"), &RiskOut { provenance: prov, report: &risk })?;
    println!("wrote trajectory.jsonl, risk.json to {}", cfg.out.display());
    Ok(0)
}

#[derive(Debug, Serialize)]
struct PairedBound {
    lhs_mean: f64,
    lhs_se: f64,
    report: BoundReport,
    verdict: Verdict,
}

fn stability_bounds(
    cfg: &RunConfig,
    est: &StabilityEstimate,
    instance: &crate::problems::ProblemInstance,
) -> Result<Vec<PairedBound>, Error> {
    let mut out = Vec::new();
    let l = instance.smoothness;
    let n = cfg.n as f64;
    let mut push = |id: TheoremId, lhs: (f64, f64), inputs: &BoundInputs| -> Result<(), Error> {
        let report = eval_bound(id, inputs)?;
        let verdict = crate::experiments::verify_inequality(lhs, &report)?;
        out.push(PairedBound { lhs_mean: lhs.0, lhs_se: lhs.1, report, verdict });
        Ok(())
    };
    if cfg.trainer == "minibatch" {
        let base = BoundInputs::new()
            .scalar("L", l)
            .scalar("n", n)
            .scalar("b", cfg.b as f64)
            .scalar("mu", instance.mu)
            .series("eta", est.etas.clone())
            .series("risk", est.mean_risk_series.clone());
        let eta_max = est.etas.iter().cloned().fold(0.0, f64::max);
        match instance.kind {
            ProblemKind::LeastSquares | ProblemKind::Logistic => {
                push(TheoremId::MbConvexL1, (est.l1, est.l1_se), &base)?;
                push(TheoremId::MbConvexL2Simple, (est.l2_sq, est.l2_sq_se), &base)?;
            }
            // the contraction bounds assume eta <= 1/L; fall back to the
            // convex pair when the run used larger steps
            ProblemKind::RidgeLeastSquares if eta_max <= 1.0 / l => {
                push(TheoremId::MbStrongL1, (est.l1, est.l1_se), &base)?;
                push(TheoremId::MbStrongL2, (est.l2_sq, est.l2_sq_se), &base)?;
            }
            ProblemKind::RidgeLeastSquares => {
                push(TheoremId::MbConvexL1, (est.l1, est.l1_se), &base)?;
                push(TheoremId::MbConvexL2Simple, (est.l2_sq, est.l2_sq_se), &base)?;
            }
            ProblemKind::QuadraticPl => {
                push(TheoremId::MbNonconvexL1, (est.l1, est.l1_se), &base)?;
            }
        }
    } else {
        let local_etas = est.local_etas.clone().unwrap_or_default();
        let local_risks = est.local_mean_risks.clone().unwrap_or_default();
        let base = BoundInputs::new()
            .scalar("L", l)
            .scalar("n", n)
            .scalar("M", cfg.machines as f64)
            .series("eta", local_etas)
            .series("risk", local_risks);
        push(TheoremId::LocalL1, (est.l1, est.l1_se), &base)?;
        if let Some(coupling) = est.coupling_term_sq_mean {
            let with = base.scalar("coupling_term_sq_mean", coupling);
            push(TheoremId::LocalL2, (est.l2_sq, est.l2_sq_se), &with)?;
        }
    }
    // generalization-side reports from the measured stability
    let gen_l1 = BoundInputs::new().scalar("G", est.grad_cap).scalar("l1", est.l1);
    out.push(PairedBound {
        lhs_mean: est.l1,
        lhs_se: est.l1_se,
        report: eval_bound(TheoremId::GenFromL1, &gen_l1)?,
        verdict: Verdict::Holds,
    });
    let gamma = best_gamma(l, est.mean_final_risk, est.l2_sq);
    let gen_l2 = BoundInputs::new()
        .scalar("L", l)
        .scalar("gamma", gamma)
        .scalar("F_S_out", est.mean_final_risk)
        .scalar("l2_sq", est.l2_sq);
    out.push(PairedBound {
        lhs_mean: est.l2_sq,
        lhs_se: est.l2_sq_se,
        report: eval_bound(TheoremId::GenFromL2, &gen_l2)?,
        verdict: Verdict::Holds,
    });
    Ok(out)
}

fn cmd_stability(cfg: &RunConfig, prov: &Provenance) -> Result<i32, Error> {
    let spec = generator_spec(cfg)?;
    let (_, instance) = generate_dataset(&spec)?;
    let trainer = trainer_config(cfg)?;
    let mut opts = StabilityOptions::new(cfg.replicates, cfg.subsample);
    opts.coupling_traces = matches!(trainer, TrainerConfig::Local(_));
    let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
    let bounds = stability_bounds(cfg, &est, &instance)?;
    #[derive(Serialize)]
    struct StabilityArtifact<'a> {
        provenance: &'a Provenance,
        estimate: &'a StabilityEstimate,
        bound_reports: &'a [PairedBound],
    }
    write_json(
        &cfg.out.join("stability.json"),
        &StabilityArtifact { provenance: prov, estimate: &est, bound_reports: &bounds },
    )?;
    let violated = bounds.iter().filter(|b| b.verdict == Verdict::Violated).count();
    println!(
        "l1 = {:.6e} (se {:.1e}), l2_sq = {:.6e} (se {:.1e}); {} bound comparisons, {} violated",
        est.l1,
        est.l1_se,
        est.l2_sq,
        est.l2_sq_se,
        bounds.len(),
        violated
    );
    println!("wrote stability.json to {}", cfg.out.display());
    Ok(if violated > 0 { 1 } else { 0 })
}

fn cmd_speedup(cfg: &RunConfig, prov: &Provenance) -> Result<i32, Error> {
    let spec = generator_spec(cfg)?;
    let sweep: SweepResult = if cfg.axis == "batch" {
        batch_speedup_sweep(&spec, &cfg.values, NoiseRegime::HighNoise, cfg.replicates, cfg.seed)?
    } else {
        machine_speedup_sweep(
            &spec,
            &cfg.values,
            cfg.local_steps,
            cfg.schedule == "localpoly",
            2.0,
            cfg.replicates,
            cfg.seed,
        )?
    };
    let mut csv = Vec::new();
    sweep.write_csv(&mut csv)?;
    write_atomic(&cfg.out.join("speedup.csv"), &csv)?;
    #[derive(Serialize)]
    struct SweepArtifact<'a> {
        provenance: &'a Provenance,
        #[serde(flatten)]
        sweep: &'a SweepResult,
    }
    write_json(&cfg.out.join("speedup.json"), &SweepArtifact { provenance: prov, sweep: &sweep })?;
    for (value, reason) in &sweep.skipped {
        eprintln!("warning: skipped axis value {value}: {reason}");
    }
    println!("wrote speedup.csv, speedup.json to {}", cfg.out.display());
    Ok(0)
}

fn cmd_verify(cfg: &RunConfig, prov: &Provenance) -> Result<i32, Error> {
    let params = SuiteParams {
        replicates: cfg.replicates,
        subsample: cfg.subsample,
        sweep_reps: cfg.replicates.min(24),
        seed: cfg.seed,
    };
    let reports = run_suite(&cfg.suite, &params)?;
    let mut stdout = std::io::stdout().lock();
    for r in &reports {
        r.print(&mut stdout)?;
    }
    #[derive(Serialize)]
    struct VerifyArtifact<'a> {
        provenance: &'a Provenance,
        suites: &'a [SuiteReport],
    }
    write_json(&cfg.out.join("verify.json"), &VerifyArtifact { provenance: prov, suites: &reports })?;
    let violated: usize = reports
        .iter()
        .map(|r| r.checks.iter().filter(|c| !c.passed()).count())
        .sum();
    println!(
        "{} checks, {} violated",
        reports.iter().map(|r| r.checks.len()).sum::<usize>(),
        violated
    );
    Ok(if violated > 0 { 1 } else { 0 })
}

fn cmd_report(cfg: &RunConfig, prov: &Provenance) -> Result<i32, Error> {
    let mut md = String::new();
    md.push_str("# sgdlab report\n\n");
    md.push_str(&format!(
        "version: `{}`  \nconfig hash: `{}`  \nmaster seed: `{}`\n\n",
        prov.version, prov.config_sha256, prov.master_seed
    ));

    let verify_path = cfg.out.join("verify.json");
    if verify_path.exists() {
        let text = std::fs::read_to_string(&verify_path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;

        // recipe summary in the layout of the speedup tables: one row per
        // measured rate, with the recipe's round budget and constraint
        let mut recipe_rows = Vec::new();
        if let Some(suites) = value["suites"].as_array() {
            for suite in suites {
                if suite["suite"] == "risk" {
                    for c in suite["checks"].as_array().map(|a| a.as_slice()).unwrap_or(&[]) {
                        let (setting, rounds, constraint, target) = match c["id"].as_str().unwrap_or("") {
                            "risk.slope-convex-high-noise" => {
                                ("convex, F(w*) >= 1/n", "n/b", "b <= sqrt(nF*)/(2L)", "-0.5")
                            }
                            "risk.slope-convex-low-noise" => ("convex, F(w*) < 1/n", "n", "-", "-1.0"),
                            "risk.slope-strongly-convex" => {
                                ("strongly convex", "max{n/b, log(n)/mu}", "-", "-1.0")
                            }
                            "risk.slope-local-convex" => ("local SGD, convex", "n/(KM) per machine", "M <= sqrt(n)", "-0.5"),
                            _ => continue,
                        };
                        recipe_rows.push(format!(
                            "| {setting} | {target} | {rounds} | {constraint} | {} |",
                            c["detail"].as_str().unwrap_or("")
                        ));
                    }
                }
            }
        }
        if !recipe_rows.is_empty() {
            md.push_str("## Excess-risk recipes\n\n| setting | target exponent | rounds | constraint | measured |\n|---|---|---|---|---|\n");
            for row in recipe_rows {
                md.push_str(&row);
                md.push('\n');
            }
            md.push('\n');
        }

        md.push_str("## Verification checks\n\n| suite | check | verdict | detail |\n|---|---|---|---|\n");
        if let Some(suites) = value["suites"].as_array() {
            for suite in suites {
                let name = suite["suite"].as_str().unwrap_or("?");
                if let Some(checks) = suite["checks"].as_array() {
                    for c in checks {
                        md.push_str(&format!(
                            "| {} | {} | {} | {} |\n",
                            name,
                            c["id"].as_str().unwrap_or("?"),
                            c["verdict"].as_str().unwrap_or("?"),
                            c["detail"].as_str().unwrap_or("")
                        ));
                    }
                }
            }
        }
        md.push('\n');
    }

    let speedup_path = cfg.out.join("speedup.json");
    if speedup_path.exists() {
        let text = std::fs::read_to_string(&speedup_path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        md.push_str("## Speedup sweep\n\n| axis | value | excess risk | se | steps |\n|---|---|---|---|---|\n");
        let axis = value["axis"].as_str().unwrap_or("?");
        if let Some(points) = value["points"].as_array() {
            for p in points {
                md.push_str(&format!(
                    "| {} | {} | {:.4e} | {:.1e} | {} |\n",
                    axis,
                    p["value"],
                    p["excess_risk"].as_f64().unwrap_or(f64::NAN),
                    p["se"].as_f64().unwrap_or(f64::NAN),
                    p["steps"]
                ));
            }
        }
        if let Some(slope) = value["slope"].as_f64() {
            md.push_str(&format!(
                "\nfitted exponent: {slope:.3} (95% ci +-{:.3})\n",
                value["slope_ci"].as_f64().unwrap_or(f64::NAN)
            ));
        }
        md.push('\n');
    }

    let stability_path = cfg.out.join("stability.json");
    if stability_path.exists() {
        let text = std::fs::read_to_string(&stability_path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        md.push_str("## Stability vs bounds\n\n| theorem | measured | se | bound | verdict |\n|---|---|---|---|---|\n");
        if let Some(reports) = value["bound_reports"].as_array() {
            for r in reports {
                md.push_str(&format!(
                    "| {} | {:.4e} | {:.1e} | {:.4e} | {} |\n",
                    r["report"]["theorem_id"].as_str().unwrap_or("?"),
                    r["lhs_mean"].as_f64().unwrap_or(f64::NAN),
                    r["lhs_se"].as_f64().unwrap_or(f64::NAN),
                    r["report"]["value"].as_f64().unwrap_or(f64::NAN),
                    r["verdict"].as_str().unwrap_or("?")
                ));
            }
        }
        md.push('\n');
    }

    write_atomic(&cfg.out.join("report.md"), md.as_bytes())?;
    println!("wrote report.md to {}", cfg.out.display());
    Ok(0)
}

/// Parses arguments and runs; maps error classes onto exit codes.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let cfg = match parse_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match dispatch(&cfg) {
        Ok(code) => code,
        Err(Error::Io(e)) => {
            eprintln!("io error: {e}");
            3
        }
        Err(Error::Config(e)) => {
            eprintln!("configuration error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn cli_from(args: &[&str]) -> Cli {
        Cli::parse_from(args)
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        std::fs::write(&cfg_path, r#"{"problem": "least_squares", "b": 8}"#).unwrap();
        let cli = cli_from(&[
            "sgdlab",
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--b",
            "4",
        ]);
        let cfg = parse_config(&cli).unwrap();
        assert_eq!(cfg.b, 4, "flag must override file");
        assert_eq!(cfg.problem, "least_squares");
    }

    #[test]
    fn unknown_config_key_named() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        std::fs::write(&cfg_path, r#"{"problem": "ls", "typo_key": 1}"#).unwrap();
        let cli = cli_from(&["sgdlab", "train", "--config", cfg_path.to_str().unwrap()]);
        match parse_config(&cli) {
            Err(Error::Config(msg)) => assert!(msg.contains("typo_key"), "message must name the key: {msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_problem_rejected() {
        let cli = cli_from(&["sgdlab", "train"]);
        match parse_config(&cli) {
            Err(Error::Config(msg)) => assert!(msg.contains("--problem")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let cli = cli_from(&["sgdlab", "stability", "--problem", "ridge", "--n", "32", "--seed", "9"]);
        let cfg = parse_config(&cli).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn seed_env_fallback() {
        let cli = cli_from(&["sgdlab", "train", "--problem", "ls"]);
        std::env::set_var(SEED_ENV_VAR, "4242");
        let cfg = parse_config(&cli).unwrap();
        std::env::remove_var(SEED_ENV_VAR);
        assert_eq!(cfg.seed, 4242);
    }

    #[test]
    fn atomic_write_creates_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty(), "no temp files left behind");
    }
}
