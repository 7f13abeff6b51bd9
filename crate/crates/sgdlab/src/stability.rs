//! Neighboring-dataset families and Monte-Carlo estimators of l1/l2
//! on-average model stability.
//!
//! A family holds S and an independent S' of the same spec; the i-th variant
//! is S with example i replaced by S'[i], exposed as an O(1) view. Paired
//! runs share index-stream paths (the trainer seed carries no dataset-variant
//! label), so two coupled trajectories differ only through the replaced
//! example. That is the coupling under which the theorem right-hand sides
//! are directly comparable; uncoupled estimates would only be larger.

use crate::optimizers::{run_local_sgd, run_minibatch_sgd, LocalConfig, MinibatchConfig, Trajectory};
use crate::problems::{
    dist2, draw_example, generate_dataset_rep, loss_grad, loss_value, measure_grad_cap, teacher_vector,
    Dataset, Example, ExampleSet, GeneratorSpec, ProblemInstance,
};
use crate::sampling::{derive_stream, derive_subseed, PathSeg, StreamKey};
use crate::Error;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// S, an independent S' of the same spec, and O(1) single-replacement views.
#[derive(Debug, Clone)]
pub struct NeighborFamily {
    pub spec: GeneratorSpec,
    pub instance: ProblemInstance,
    pub s: Dataset,
    pub s_prime: Dataset,
}

/// View of S with position `replaced` swapped for S'[replaced].
#[derive(Debug, Clone, Copy)]
pub struct ReplacedView<'a> {
    base: &'a Dataset,
    replacement: &'a Example,
    replaced: usize,
}

impl ExampleSet for ReplacedView<'_> {
    fn n_examples(&self) -> usize {
        self.base.n()
    }

    fn example(&self, i: usize) -> &Example {
        if i == self.replaced {
            self.replacement
        } else {
            &self.base.examples[i]
        }
    }
}

impl NeighborFamily {
    /// The dataset S^(i): S with example i replaced by S'[i].
    pub fn variant(&self, i: usize) -> ReplacedView<'_> {
        assert!(i < self.s.n(), "variant index {i} out of range");
        ReplacedView { base: &self.s, replacement: &self.s_prime.examples[i], replaced: i }
    }
}

/// Builds the family for replicate `rep`: S and S' come from independent
/// streams of the same spec (same teacher, fresh examples per replicate).
pub fn make_neighbors(spec: &GeneratorSpec, rep: u64) -> Result<NeighborFamily, Error> {
    let (s, instance) = generate_dataset_rep(spec, rep, 0)?;
    let (s_prime, _) = generate_dataset_rep(spec, rep, 1)?;
    Ok(NeighborFamily { spec: spec.clone(), instance, s, s_prime })
}

/// Trainer selection for stability runs.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainerConfig {
    Minibatch(MinibatchConfig),
    Local(LocalConfig),
}

impl TrainerConfig {
    fn with_seed(&self, seed: u64) -> TrainerConfig {
        match self {
            TrainerConfig::Minibatch(c) => TrainerConfig::Minibatch(MinibatchConfig { seed, ..c.clone() }),
            TrainerConfig::Local(c) => TrainerConfig::Local(LocalConfig { seed, ..c.clone() }),
        }
    }

    fn run<E: ExampleSet + ?Sized>(&self, p: &ProblemInstance, data: &E) -> Result<Trajectory, Error> {
        match self {
            TrainerConfig::Minibatch(c) => run_minibatch_sgd(p, data, c),
            TrainerConfig::Local(c) => run_local_sgd(p, data, c),
        }
    }

    /// Number of main-chain updates (R for minibatch, R rounds for local).
    pub fn rounds(&self) -> usize {
        match self {
            TrainerConfig::Minibatch(c) => c.rounds,
            TrainerConfig::Local(c) => c.rounds,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            TrainerConfig::Minibatch(c) => c.seed,
            TrainerConfig::Local(c) => c.seed,
        }
    }

    fn quiet_clone(&self) -> TrainerConfig {
        // Coupled replacement runs keep iterate logs but skip risk logging.
        match self {
            TrainerConfig::Minibatch(c) => {
                TrainerConfig::Minibatch(MinibatchConfig { record_risk: false, ..c.clone() })
            }
            TrainerConfig::Local(c) => TrainerConfig::Local(LocalConfig { record_risk: false, ..c.clone() }),
        }
    }
}

/// Which output model the distance is measured between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSel {
    FinalIterate,
    UniformAverage,
    TailAverage,
}

fn output_of(traj: &Trajectory, sel: OutputSel) -> &[f64] {
    match sel {
        OutputSel::FinalIterate => &traj.final_w,
        OutputSel::UniformAverage => &traj.averages.uniform,
        OutputSel::TailAverage => &traj.averages.tail,
    }
}

/// Options for the on-average stability estimator.
#[derive(Debug, Clone)]
pub struct StabilityOptions {
    pub n_replicates: usize,
    /// |I|: replaced indices sampled per replicate (without replacement,
    /// capped at n).
    pub index_subsample: usize,
    pub output: OutputSel,
    /// Iterate indices at which l1 distances are additionally recorded.
    pub checkpoints: Vec<usize>,
    /// Record Σ η·‖∇f(w;z_i) − ∇f(w^(i);z'_i)‖ traces (needed by the local
    /// l2 bound); requires a local trainer with iterate recording.
    pub coupling_traces: bool,
    /// Log risks/gradient stats on the S runs (needed by every bound RHS).
    pub record_risk: bool,
}

impl StabilityOptions {
    pub fn new(n_replicates: usize, index_subsample: usize) -> Self {
        StabilityOptions {
            n_replicates,
            index_subsample,
            output: OutputSel::FinalIterate,
            checkpoints: Vec::new(),
            coupling_traces: false,
            record_risk: true,
        }
    }
}

/// Monte-Carlo estimate of l1/l2 on-average model stability, with the
/// measured series bound calculators need.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityEstimate {
    /// Mean over replicates of (1/|I|)Σ‖A(S)−A(S^(i))‖₂.
    pub l1: f64,
    pub l1_se: f64,
    /// Mean over replicates of (1/|I|)Σ‖A(S)−A(S^(i))‖₂².
    pub l2_sq: f64,
    pub l2_sq_se: f64,
    pub n_replicates: usize,
    pub n_indices_sampled: usize,
    pub coupling: &'static str,
    /// (iterate index, mean, se) of the l1 distance at each checkpoint.
    pub checkpoint_l1: Vec<(usize, f64, f64)>,
    /// Replicate-mean risk trace F̂_S(w_k), k = 1..=R, from the S runs.
    pub mean_risk_series: Vec<f64>,
    /// Replicate-mean F_S at the final model of the S runs.
    pub mean_final_risk: f64,
    /// Replicate-mean per-(r,m,t) risks for local runs.
    pub local_mean_risks: Option<Vec<f64>>,
    /// Mean over replicates and sampled i of (Σ η·c)², the coupled
    /// gradient-difference term of the local l2 bound.
    pub coupling_term_sq_mean: Option<f64>,
    /// Step sizes of the main chain (flat per-(r,m,t) for local runs).
    pub etas: Vec<f64>,
    pub local_etas: Option<Vec<f64>>,
    /// Max over logged iterates of the per-example gradient variance.
    pub sigma_sq_max: f64,
    /// Max observed per-example gradient norm along trajectories (probe G).
    pub grad_cap: f64,
}

struct ReplicateOutcome {
    dist_mean: f64,
    dist_sq_mean: f64,
    checkpoint_means: Vec<f64>,
    risk_series: Vec<f64>,
    final_risk: f64,
    local_risks: Option<Vec<f64>>,
    coupling_sq_mean: Option<f64>,
    etas: Vec<f64>,
    local_etas: Option<Vec<f64>>,
    sigma_sq: f64,
    grad_cap: f64,
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for j in 0..k {
        let pick = rng.gen_range(j..n);
        pool.swap(j, pick);
    }
    pool.truncate(k);
    pool
}

fn iterate_at(traj: &Trajectory, step: usize) -> &[f64] {
    traj.logged_iterates
        .iter()
        .find(|(k, _)| *k == step)
        .map(|(_, w)| w.as_slice())
        .unwrap_or_else(|| panic!("iterate {step} was not logged"))
}

fn run_replicate(
    spec: &GeneratorSpec,
    trainer: &TrainerConfig,
    opts: &StabilityOptions,
    rep: u64,
) -> Result<ReplicateOutcome, Error> {
    let family = make_neighbors(spec, rep)?;
    let p = &family.instance;
    let n = family.s.n();
    let trainer_seed =
        derive_subseed(&StreamKey::new(trainer.seed()).child(PathSeg::Rep(rep)).child(PathSeg::Tag("trainer")));
    let base_cfg = trainer.with_seed(trainer_seed);
    let mut s_cfg = base_cfg.clone();
    if let TrainerConfig::Minibatch(c) = &mut s_cfg {
        c.record_risk = opts.record_risk;
    }
    if let TrainerConfig::Local(c) = &mut s_cfg {
        c.record_risk = opts.record_risk;
        c.record_local_iterates = c.record_local_iterates || opts.coupling_traces;
    }
    let mut v_cfg = base_cfg.quiet_clone();
    if let TrainerConfig::Local(c) = &mut v_cfg {
        c.record_local_iterates = c.record_local_iterates || opts.coupling_traces;
    }

    let s_traj = s_cfg.run(p, &family.s)?;
    let rounds = trainer.rounds();

    let mut idx_rng =
        derive_stream(&StreamKey::new(trainer.seed()).child(PathSeg::Rep(rep)).child(PathSeg::Tag("indices")));
    let sampled = sample_without_replacement(n, opts.index_subsample, &mut idx_rng);

    let mut dist_sum = 0.0;
    let mut dist_sq_sum = 0.0;
    let mut checkpoint_sums = vec![0.0; opts.checkpoints.len()];
    let mut coupling_sq_sum = 0.0;
    for &i in &sampled {
        let view = family.variant(i);
        let v_traj = v_cfg.run(p, &view)?;
        let d = dist2(output_of(&s_traj, opts.output), output_of(&v_traj, opts.output));
        dist_sum += d;
        dist_sq_sum += d * d;
        for (slot, &step) in checkpoint_sums.iter_mut().zip(opts.checkpoints.iter()) {
            *slot += dist2(iterate_at(&s_traj, step), iterate_at(&v_traj, step));
        }
        if opts.coupling_traces {
            let st = s_traj.local.as_ref().expect("coupling traces need a local trainer");
            let vt = v_traj.local.as_ref().expect("coupling traces need a local trainer");
            let z = &family.s.examples[i];
            let z_prime = &family.s_prime.examples[i];
            let mut q = 0.0;
            for ((ws, wv), &eta) in st.iterates.iter().zip(vt.iterates.iter()).zip(st.etas.iter()) {
                let gs = loss_grad(p, ws, z);
                let gv = loss_grad(p, wv, z_prime);
                q += eta * dist2(&gs, &gv);
            }
            coupling_sq_sum += q * q;
        }
    }
    let count = sampled.len() as f64;

    let (risk_series, final_risk, sigma_sq) = if opts.record_risk {
        let sigma = s_traj.grad_norm_log.iter().map(|&(_, s)| s.variance).fold(0.0, f64::max);
        let last = s_traj.risk_log.last().map(|&(_, v)| v).unwrap_or(0.0);
        (s_traj.risk_series(rounds), last, sigma)
    } else {
        (Vec::new(), 0.0, 0.0)
    };
    let grad_cap = if opts.record_risk {
        let models: Vec<Vec<f64>> = s_traj.logged_iterates.iter().map(|(_, w)| w.clone()).collect();
        // probe over S plus fresh test draws, capped at 1e4 (model, example) pairs
        let teacher = teacher_vector(spec);
        let mut probe_rng = derive_stream(
            &StreamKey::new(spec.seed).child(PathSeg::Rep(rep)).child(PathSeg::Tag("grad-probe")),
        );
        let mut probe = family.s.examples.clone();
        probe.extend((0..64).map(|_| draw_example(spec, &teacher, &mut probe_rng)));
        measure_grad_cap(p, &models, &probe, 10_000)
    } else {
        0.0
    };
    let local_risks = s_traj.local.as_ref().filter(|t| !t.risks.is_empty()).map(|t| t.risks.clone());
    let local_etas = s_traj.local.as_ref().map(|t| t.etas.clone());

    Ok(ReplicateOutcome {
        dist_mean: dist_sum / count,
        dist_sq_mean: dist_sq_sum / count,
        checkpoint_means: checkpoint_sums.iter().map(|s| s / count).collect(),
        risk_series,
        final_risk,
        local_risks,
        coupling_sq_mean: opts.coupling_traces.then_some(coupling_sq_sum / count),
        etas: s_traj.etas.clone(),
        local_etas,
        sigma_sq,
        grad_cap,
    })
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the coupled paired estimator over `opts.n_replicates` fresh families.
/// Replicates run in parallel; accumulation is in replicate order, so the
/// result is independent of thread count.
pub fn estimate_on_average_stability(
    spec: &GeneratorSpec,
    trainer: &TrainerConfig,
    opts: &StabilityOptions,
) -> Result<StabilityEstimate, Error> {
    if opts.n_replicates < 2 {
        return Err(Error::Config("stability estimate needs n_replicates >= 2".into()));
    }
    if opts.index_subsample < 1 {
        return Err(Error::Config("stability estimate needs index_subsample >= 1".into()));
    }
    let outcomes: Result<Vec<ReplicateOutcome>, Error> = (0..opts.n_replicates as u64)
        .into_par_iter()
        .map(|rep| run_replicate(spec, trainer, opts, rep))
        .collect();
    let outcomes = outcomes?;

    let (l1, l1_se) = mean_se(&outcomes.iter().map(|o| o.dist_mean).collect::<Vec<_>>());
    let (l2_sq, l2_sq_se) = mean_se(&outcomes.iter().map(|o| o.dist_sq_mean).collect::<Vec<_>>());
    let checkpoint_l1 = opts
        .checkpoints
        .iter()
        .enumerate()
        .map(|(ci, &step)| {
            let vals: Vec<f64> = outcomes.iter().map(|o| o.checkpoint_means[ci]).collect();
            let (m, se) = mean_se(&vals);
            (step, m, se)
        })
        .collect();
    let mean_risk_series = mean_series(outcomes.iter().map(|o| o.risk_series.as_slice()));
    let mean_final_risk = outcomes.iter().map(|o| o.final_risk).sum::<f64>() / outcomes.len() as f64;
    let local_mean_risks = outcomes[0]
        .local_risks
        .is_some()
        .then(|| mean_series(outcomes.iter().map(|o| o.local_risks.as_deref().unwrap_or(&[]))));
    let coupling_term_sq_mean = outcomes[0].coupling_sq_mean.map(|_| {
        outcomes.iter().map(|o| o.coupling_sq_mean.unwrap_or(0.0)).sum::<f64>() / outcomes.len() as f64
    });

    Ok(StabilityEstimate {
        l1,
        l1_se,
        l2_sq,
        l2_sq_se,
        n_replicates: opts.n_replicates,
        n_indices_sampled: opts.index_subsample.min(spec.n),
        coupling: "shared_path",
        checkpoint_l1,
        mean_risk_series,
        mean_final_risk,
        local_mean_risks,
        coupling_term_sq_mean,
        etas: outcomes[0].etas.clone(),
        local_etas: outcomes[0].local_etas.clone(),
        sigma_sq_max: outcomes.iter().map(|o| o.sigma_sq).fold(0.0, f64::max),
        grad_cap: outcomes.iter().map(|o| o.grad_cap).fold(0.0, f64::max),
    })
}

fn mean_series<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for row in rows {
        if acc.is_empty() {
            acc = vec![0.0; row.len()];
        }
        assert_eq!(acc.len(), row.len(), "replicate series lengths differ");
        for (a, &v) in acc.iter_mut().zip(row.iter()) {
            *a += v;
        }
        count += 1;
    }
    let inv = 1.0 / count.max(1) as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Runs the trainer on S and on the i-th variant with identical index
/// streams; the trajectories differ only through the replaced example.
pub fn coupled_pair_run(
    family: &NeighborFamily,
    i: usize,
    trainer: &TrainerConfig,
) -> Result<(Trajectory, Trajectory), Error> {
    let s_traj = trainer.run(&family.instance, &family.s)?;
    let view = family.variant(i);
    let v_traj = trainer.run(&family.instance, &view)?;
    Ok((s_traj, v_traj))
}

/// Probe-set lower bound of uniform stability: max over probe points of the
/// absolute mean coupled loss difference between runs on S and on S^(i),
/// with `n_replicates` fresh draws of the algorithm randomness.
pub fn uniform_stability_probe(
    family: &NeighborFamily,
    i: usize,
    trainer: &TrainerConfig,
    probe_set: &[Example],
    n_replicates: usize,
) -> Result<f64, Error> {
    if probe_set.is_empty() {
        return Err(Error::Config("uniform_stability_probe: probe set must be nonempty".into()));
    }
    let p = &family.instance;
    let mut diff_sums = vec![0.0; probe_set.len()];
    for rep in 0..n_replicates as u64 {
        let seed = derive_subseed(
            &StreamKey::new(trainer.seed()).child(PathSeg::Rep(rep)).child(PathSeg::Tag("unif-probe")),
        );
        let cfg = trainer.with_seed(seed).quiet_clone();
        let s_traj = cfg.run(p, &family.s)?;
        let view = family.variant(i);
        let v_traj = cfg.run(p, &view)?;
        for (sum, z) in diff_sums.iter_mut().zip(probe_set.iter()) {
            *sum += loss_value(p, &s_traj.final_w, z) - loss_value(p, &v_traj.final_w, z);
        }
    }
    Ok(diff_sums.iter().map(|s| (s / n_replicates as f64).abs()).fold(0.0, f64::max))
}
