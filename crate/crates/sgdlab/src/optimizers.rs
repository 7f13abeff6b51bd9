//! Minibatch SGD and local SGD trainers.
//!
//! Both trainers start from w₁ = 0 and derive every index draw from the
//! stream key `(seed, machine, round, step)`. Minibatch round t reads index j
//! from the key `(machine j, round t, step 1)`, local machine m reads its
//! round-r step-t index from `(machine m, round r, step t)`; with K = 1 and
//! b = M the two trainers therefore consume identical index sequences, and
//! the minibatch update is computed as the average of the b one-example
//! virtual steps so the reduction arithmetic is identical too — the K = 1
//! equality holds bitwise, not just within tolerance.
//!
//! Machine chains within a round run in a fixed order and the consensus
//! average is a fixed-order sum, so results are independent of how callers
//! parallelize across trainers.

use crate::problems::{dist2, dot, empirical_risk, loss_grad_into, loss_value, ExampleSet, ProblemInstance};
use crate::sampling::{derive_stream, DrawRecord, PathSeg, StreamKey};
use crate::Error;
use rand::Rng;
use serde::Serialize;

/// Step-size schedule variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// η_t = eta for all t; admissible when 0 < eta ≤ 2/L.
    Constant { eta: f64 },
    /// η_t = 2/(μ(t+a)); admissible when a ≥ 4L/μ.
    PolyStrong { a: f64, mu: f64 },
    /// η_{r,t} = 4/(μ(a+(r−1)K+t)); admissible when a ≥ 2L/μ and η_{1,1} ≤ 2/L.
    LocalPolyStrong { a: f64, mu: f64, k: usize },
}

impl StepSchedule {
    /// Exact schedule value. Indices are 1-based; `Constant` ignores them,
    /// `PolyStrong` uses `global_t`, `LocalPolyStrong` uses `(r, t)`.
    pub fn eta(&self, r: usize, t: usize, global_t: usize) -> f64 {
        assert!(r >= 1 && t >= 1 && global_t >= 1, "schedule indices are 1-based");
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::PolyStrong { a, mu } => 2.0 / (mu * (global_t as f64 + a)),
            StepSchedule::LocalPolyStrong { a, mu, k } => {
                4.0 / (mu * (a + ((r - 1) * k + t) as f64))
            }
        }
    }

    /// Checks admissibility against a smoothness constant.
    pub fn validate(&self, smoothness: f64) -> Result<(), Error> {
        match *self {
            StepSchedule::Constant { eta } => {
                if !(eta > 0.0) || eta > 2.0 / smoothness {
                    return Err(Error::Config(format!(
                        "constant step size {eta} violates 0 < eta <= 2/L = {}",
                        2.0 / smoothness
                    )));
                }
            }
            StepSchedule::PolyStrong { a, mu } => {
                if !(mu > 0.0) {
                    return Err(Error::Config("poly-strong schedule needs mu > 0".into()));
                }
                if a < 4.0 * smoothness / mu {
                    return Err(Error::Config(format!(
                        "poly-strong schedule needs a >= 4L/mu = {}",
                        4.0 * smoothness / mu
                    )));
                }
            }
            StepSchedule::LocalPolyStrong { a, mu, k } => {
                if !(mu > 0.0) || k < 1 {
                    return Err(Error::Config("local poly-strong schedule needs mu > 0 and K >= 1".into()));
                }
                if a < 2.0 * smoothness / mu {
                    return Err(Error::Config(format!(
                        "local poly-strong schedule needs a >= 2L/mu = {}",
                        2.0 * smoothness / mu
                    )));
                }
                let eta_11 = 4.0 / (mu * (a + 1.0));
                if eta_11 > 2.0 / smoothness {
                    return Err(Error::Config(format!(
                        "local poly-strong first step {eta_11} violates eta <= 2/L"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Minibatch SGD configuration. `b >= 2` by convention of the update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchConfig {
    pub b: usize,
    pub rounds: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub log_every: usize,
    /// Record per-round draw records (costs an n-length count vector each).
    pub record_draws: bool,
    /// Evaluate F_S and per-example gradient stats at logged iterates.
    pub record_risk: bool,
}

impl MinibatchConfig {
    pub fn new(b: usize, rounds: usize, schedule: StepSchedule, seed: u64) -> Self {
        MinibatchConfig { b, rounds, schedule, seed, log_every: 1, record_draws: false, record_risk: true }
    }

    fn validate(&self, smoothness: f64) -> Result<(), Error> {
        if self.b < 2 {
            return Err(Error::Config("minibatch: b must be >= 2".into()));
        }
        if self.rounds < 1 || self.log_every < 1 {
            return Err(Error::Config("minibatch: rounds and log_every must be >= 1".into()));
        }
        self.schedule.validate(smoothness)
    }
}

/// Local SGD configuration: M machines, K local steps, R rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConfig {
    pub machines: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub log_every: usize,
    pub record_risk: bool,
    /// Keep all per-machine iterates w_{m,r,t} (needed by coupled gradient
    /// traces and the local averaging schemes' audits).
    pub record_local_iterates: bool,
}

impl LocalConfig {
    pub fn new(machines: usize, local_steps: usize, rounds: usize, schedule: StepSchedule, seed: u64) -> Self {
        LocalConfig {
            machines,
            local_steps,
            rounds,
            schedule,
            seed,
            log_every: 1,
            record_risk: true,
            record_local_iterates: false,
        }
    }

    fn validate(&self, smoothness: f64) -> Result<(), Error> {
        if self.machines < 1 || self.local_steps < 1 || self.rounds < 1 || self.log_every < 1 {
            return Err(Error::Config("local: M, K, R and log_every must be >= 1".into()));
        }
        self.schedule.validate(smoothness)
    }
}

/// Per-iterate gradient-norm summaries over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradStats {
    pub mean: f64,
    pub max: f64,
    /// (1/n)Σ‖∇f(w;zᵢ) − ∇F_S(w)‖²: the per-example gradient variance.
    pub variance: f64,
}

/// The averaging schemes recorded with every trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Averages {
    /// Uniform average of the main-chain iterates w_1..w_R.
    pub uniform: Vec<f64>,
    /// Average over the last ⌈R/2⌉ main-chain iterates.
    pub tail: Vec<f64>,
    /// Local SGD only: uniform average over all w_{m,r,t}, t ∈ [K].
    pub local_all: Option<Vec<f64>>,
    /// Local SGD only: weights (a+(r−1)K+t)/(M·S_R) over all w_{m,r,t}.
    pub local_weighted: Option<Vec<f64>>,
    /// S_R = Σ_{r,t}(a+(r−1)K+t); 0 for minibatch runs.
    pub weight_sum: f64,
}

/// Flat per-(r, m, t) traces of a local run, r-major then m then t, t ∈ [K].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalTrace {
    pub etas: Vec<f64>,
    /// F_S(w_{m,r,t}); empty unless risk recording is on.
    pub risks: Vec<f64>,
    /// w_{m,r,t}; empty unless iterate recording is on.
    pub iterates: Vec<Vec<f64>>,
}

/// Everything a bound calculator needs from one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub final_w: Vec<f64>,
    /// (iterate index, w). Iterate k is the model before update k;
    /// the final model is index R+1.
    pub logged_iterates: Vec<(usize, Vec<f64>)>,
    pub risk_log: Vec<(usize, f64)>,
    pub grad_norm_log: Vec<(usize, GradStats)>,
    pub draw_log: Option<Vec<DrawRecord>>,
    pub averages: Averages,
    /// Per-machine traces for local runs.
    pub local: Option<LocalTrace>,
    /// Step sizes η_1..η_R actually applied on the main chain.
    pub etas: Vec<f64>,
}

impl Trajectory {
    /// Risk values at iterates 1..=t in iterate order. Requires log_every = 1.
    pub fn risk_series(&self, t: usize) -> Vec<f64> {
        let vals: Vec<f64> = self
            .risk_log
            .iter()
            .filter(|(k, _)| (1..=t).contains(k))
            .map(|&(_, v)| v)
            .collect();
        assert_eq!(vals.len(), t, "risk_series: risks for iterates 1..={t} were not all logged");
        vals
    }

    /// JSON-lines export: one record per logged step plus a summary record.
    pub fn write_jsonl(&self, out: &mut impl std::io::Write) -> Result<(), Error> {
        #[derive(Serialize)]
        struct StepRec {
            step: usize,
            risk: f64,
            grad_norm_mean: f64,
            grad_norm_max: f64,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            summary: bool,
            final_w: &'a [f64],
            uniform_average: &'a [f64],
            tail_average: &'a [f64],
            local_all_average: Option<&'a [f64]>,
            local_weighted_average: Option<&'a [f64]>,
            weight_sum: f64,
        }
        for (&(step, risk), &(_, stats)) in self.risk_log.iter().zip(self.grad_norm_log.iter()) {
            let rec = StepRec { step, risk, grad_norm_mean: stats.mean, grad_norm_max: stats.max };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        let summary = Summary {
            summary: true,
            final_w: &self.final_w,
            uniform_average: &self.averages.uniform,
            tail_average: &self.averages.tail,
            local_all_average: self.averages.local_all.as_deref(),
            local_weighted_average: self.averages.local_weighted.as_deref(),
            weight_sum: self.averages.weight_sum,
        };
        serde_json::to_writer(&mut *out, &summary)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Which recorded average to recompute from the iterate log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageScheme {
    Uniform,
    Tail,
    LocalAll,
    LocalWeighted,
}

/// Index for machine m's t-th draw of round r (all 1-based except machine).
fn index_draw(seed: u64, machine: usize, round: usize, step: usize, n: usize) -> usize {
    let key = StreamKey::new(seed)
        .child(PathSeg::Machine(machine as u64))
        .child(PathSeg::Round(round as u64))
        .child(PathSeg::Step(step as u64));
    derive_stream(&key).gen_range(0..n)
}

/// One minibatch update from `w`: the average of the b one-example virtual
/// steps w − η∇f(w;z_{i_j}), which equals w − (η/b)Σ∇f(w;z_{i_j}) exactly in
/// real arithmetic.
pub fn minibatch_step<E: ExampleSet + ?Sized>(
    p: &ProblemInstance,
    data: &E,
    w: &[f64],
    draw: &DrawRecord,
    eta: f64,
) -> Vec<f64> {
    assert!(eta > 0.0, "minibatch_step: eta must be positive");
    let mut acc = vec![0.0; p.d];
    let mut g = vec![0.0; p.d];
    step_with_indices(p, data, w, &draw.indices, eta, &mut acc, &mut g);
    acc
}

/// Count-form update w − (η/b)Σ_m α_m ∇f(w;z_m); used as the reformulation
/// oracle in tests.
pub fn minibatch_step_count_form<E: ExampleSet + ?Sized>(
    p: &ProblemInstance,
    data: &E,
    w: &[f64],
    counts: &[u32],
    eta: f64,
) -> Vec<f64> {
    let b: u32 = counts.iter().sum();
    let mut grad_sum = vec![0.0; p.d];
    let mut g = vec![0.0; p.d];
    for (m, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        loss_grad_into(p, w, data.example(m), &mut g);
        for (acc, &gi) in grad_sum.iter_mut().zip(g.iter()) {
            *acc += c as f64 * gi;
        }
    }
    let scale = eta / b as f64;
    w.iter().zip(grad_sum.iter()).map(|(&wi, &gi)| wi - scale * gi).collect()
}

fn step_with_indices<E: ExampleSet + ?Sized>(
    p: &ProblemInstance,
    data: &E,
    w: &[f64],
    indices: &[usize],
    eta: f64,
    acc: &mut [f64],
    g: &mut [f64],
) {
    acc.fill(0.0);
    for &idx in indices {
        loss_grad_into(p, w, data.example(idx), g);
        for i in 0..w.len() {
            acc[i] += w[i] - eta * g[i];
        }
    }
    let inv = 1.0 / indices.len() as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
}

fn risk_and_grad_stats<E: ExampleSet + ?Sized>(p: &ProblemInstance, data: &E, w: &[f64]) -> (f64, GradStats) {
    let n = data.n_examples();
    let mut g = vec![0.0; p.d];
    let mut mean_g = vec![0.0; p.d];
    let mut risk = 0.0;
    let mut norm_sum = 0.0;
    let mut norm_sq_sum = 0.0;
    let mut norm_max: f64 = 0.0;
    for i in 0..n {
        let z = data.example(i);
        risk += loss_value(p, w, z);
        loss_grad_into(p, w, z, &mut g);
        let nsq = dot(&g, &g);
        norm_sq_sum += nsq;
        norm_sum += nsq.sqrt();
        norm_max = norm_max.max(nsq.sqrt());
        for (m, &gi) in mean_g.iter_mut().zip(g.iter()) {
            *m += gi;
        }
    }
    let nf = n as f64;
    risk /= nf;
    mean_g.iter_mut().for_each(|m| *m /= nf);
    let variance = (norm_sq_sum / nf - dot(&mean_g, &mean_g)).max(0.0);
    (risk, GradStats { mean: norm_sum / nf, max: norm_max, variance })
}

struct AverageBuilder {
    uniform: Vec<f64>,
    tail: Vec<f64>,
    tail_from: usize,
    tail_count: usize,
    count: usize,
}

impl AverageBuilder {
    fn new(d: usize, total: usize) -> Self {
        let tail_len = total.div_ceil(2);
        AverageBuilder {
            uniform: vec![0.0; d],
            tail: vec![0.0; d],
            tail_from: total - tail_len + 1,
            tail_count: 0,
            count: 0,
        }
    }

    fn push(&mut self, idx: usize, w: &[f64]) {
        self.count += 1;
        for (u, &wi) in self.uniform.iter_mut().zip(w.iter()) {
            *u += wi;
        }
        if idx >= self.tail_from {
            self.tail_count += 1;
            for (t, &wi) in self.tail.iter_mut().zip(w.iter()) {
                *t += wi;
            }
        }
    }

    fn finish(mut self) -> (Vec<f64>, Vec<f64>) {
        let cu = self.count as f64;
        self.uniform.iter_mut().for_each(|u| *u /= cu);
        let ct = self.tail_count as f64;
        self.tail.iter_mut().for_each(|t| *t /= ct);
        (self.uniform, self.tail)
    }
}

/// Runs minibatch SGD for `cfg.rounds` updates from w₁ = 0.
pub fn run_minibatch_sgd<E: ExampleSet + ?Sized>(
    p: &ProblemInstance,
    data: &E,
    cfg: &MinibatchConfig,
) -> Result<Trajectory, Error> {
    cfg.validate(p.smoothness)?;
    let d = p.d;
    let n = data.n_examples();
    let mut w = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut indices = vec![0usize; cfg.b];
    let mut logged_iterates = Vec::new();
    let mut risk_log = Vec::new();
    let mut grad_norm_log = Vec::new();
    let mut draw_log = cfg.record_draws.then(Vec::new);
    let mut etas = Vec::with_capacity(cfg.rounds);
    let mut avg = AverageBuilder::new(d, cfg.rounds);

    let log_at = |k: usize,
                      w: &[f64],
                      logged: &mut Vec<(usize, Vec<f64>)>,
                      risks: &mut Vec<(usize, f64)>,
                      grads: &mut Vec<(usize, GradStats)>| {
        logged.push((k, w.to_vec()));
        if cfg.record_risk {
            let (risk, stats) = risk_and_grad_stats(p, data, w);
            risks.push((k, risk));
            grads.push((k, stats));
        }
    };

    for t in 1..=cfg.rounds {
        if (t - 1) % cfg.log_every == 0 {
            log_at(t, &w, &mut logged_iterates, &mut risk_log, &mut grad_norm_log);
        }
        avg.push(t, &w);
        let eta = cfg.schedule.eta(t, 1, t);
        etas.push(eta);
        for (j, slot) in indices.iter_mut().enumerate() {
            *slot = index_draw(cfg.seed, j, t, 1, n);
        }
        if let Some(log) = draw_log.as_mut() {
            log.push(DrawRecord { t, indices: indices.clone(), counts: crate::sampling::index_counts(&indices, n) });
        }
        step_with_indices(p, data, &w, &indices, eta, &mut acc, &mut g);
        w.copy_from_slice(&acc);
    }
    log_at(cfg.rounds + 1, &w, &mut logged_iterates, &mut risk_log, &mut grad_norm_log);

    let (uniform, tail) = avg.finish();
    Ok(Trajectory {
        final_w: w,
        logged_iterates,
        risk_log,
        grad_norm_log,
        draw_log,
        averages: Averages { uniform, tail, local_all: None, local_weighted: None, weight_sum: 0.0 },
        local: None,
        etas,
    })
}

/// Runs local SGD: each round, M machines take K one-example steps from the
/// consensus point, then the consensus is the fixed-order machine average.
pub fn run_local_sgd<E: ExampleSet + ?Sized>(
    p: &ProblemInstance,
    data: &E,
    cfg: &LocalConfig,
) -> Result<Trajectory, Error> {
    cfg.validate(p.smoothness)?;
    let d = p.d;
    let n = data.n_examples();
    let (mm, kk, rr) = (cfg.machines, cfg.local_steps, cfg.rounds);
    let weight_a = match cfg.schedule {
        StepSchedule::LocalPolyStrong { a, .. } => a,
        _ => 0.0,
    };

    let mut w = vec![0.0; d];
    let mut wm = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut logged_iterates = Vec::new();
    let mut risk_log = Vec::new();
    let mut grad_norm_log = Vec::new();
    let mut etas = Vec::new();
    let mut avg = AverageBuilder::new(d, rr);
    let mut local_all = vec![0.0; d];
    let mut local_weighted = vec![0.0; d];
    let mut weight_sum = 0.0;
    let mut trace = LocalTrace::default();

    for r in 1..=rr {
        if (r - 1) % cfg.log_every == 0 {
            logged_iterates.push((r, w.clone()));
            if cfg.record_risk {
                let (risk, stats) = risk_and_grad_stats(p, data, &w);
                risk_log.push((r, risk));
                grad_norm_log.push((r, stats));
            }
        }
        avg.push(r, &w);
        acc.fill(0.0);
        for m in 0..mm {
            wm.copy_from_slice(&w);
            for t in 1..=kk {
                let eta = cfg.schedule.eta(r, t, (r - 1) * kk + t);
                if m == 0 {
                    etas.push(eta);
                }
                let weight = weight_a + ((r - 1) * kk + t) as f64;
                for (la, &wi) in local_all.iter_mut().zip(wm.iter()) {
                    *la += wi;
                }
                for (lw, &wi) in local_weighted.iter_mut().zip(wm.iter()) {
                    *lw += weight * wi;
                }
                if m == 0 {
                    weight_sum += weight;
                }
                trace.etas.push(eta);
                if cfg.record_risk {
                    trace.risks.push(empirical_risk(p, data, &wm));
                }
                if cfg.record_local_iterates {
                    trace.iterates.push(wm.clone());
                }
                let idx = index_draw(cfg.seed, m, r, t, n);
                loss_grad_into(p, &wm, data.example(idx), &mut g);
                for i in 0..d {
                    wm[i] -= eta * g[i];
                }
            }
            for (a, &wi) in acc.iter_mut().zip(wm.iter()) {
                *a += wi;
            }
        }
        let inv = 1.0 / mm as f64;
        for i in 0..d {
            w[i] = acc[i] * inv;
        }
    }
    logged_iterates.push((rr + 1, w.clone()));
    if cfg.record_risk {
        let (risk, stats) = risk_and_grad_stats(p, data, &w);
        risk_log.push((rr + 1, risk));
        grad_norm_log.push((rr + 1, stats));
    }

    let total = (mm * kk * rr) as f64;
    local_all.iter_mut().for_each(|v| *v /= total);
    let norm = mm as f64 * weight_sum;
    local_weighted.iter_mut().for_each(|v| *v /= norm);
    let (uniform, tail) = avg.finish();
    Ok(Trajectory {
        final_w: w,
        logged_iterates,
        risk_log,
        grad_norm_log,
        draw_log: None,
        averages: Averages {
            uniform,
            tail,
            local_all: Some(local_all),
            local_weighted: Some(local_weighted),
            weight_sum,
        },
        local: Some(trace),
        etas,
    })
}

/// Recomputes a recorded average from the iterate log (requires log_every = 1;
/// missing iterates are a contract violation).
pub fn compute_averages(traj: &Trajectory, scheme: AverageScheme) -> Vec<f64> {
    match scheme {
        AverageScheme::Uniform | AverageScheme::Tail => {
            let total = traj.etas.len();
            let iterates: Vec<&Vec<f64>> = traj
                .logged_iterates
                .iter()
                .filter(|(k, _)| (1..=total).contains(k))
                .map(|(_, w)| w)
                .collect();
            assert_eq!(iterates.len(), total, "compute_averages: main-chain iterates 1..={total} not all logged");
            let range: Vec<&Vec<f64>> = if scheme == AverageScheme::Uniform {
                iterates
            } else {
                let tail_len = total.div_ceil(2);
                iterates[total - tail_len..].to_vec()
            };
            mean_of(&range)
        }
        AverageScheme::LocalAll | AverageScheme::LocalWeighted => {
            let trace = traj.local.as_ref().expect("compute_averages: not a local trajectory");
            assert!(
                !trace.iterates.is_empty(),
                "compute_averages: local iterates were not recorded"
            );
            if scheme == AverageScheme::LocalAll {
                mean_of(&trace.iterates.iter().collect::<Vec<_>>())
            } else {
                traj.averages
                    .local_weighted
                    .clone()
                    .expect("compute_averages: weighted average missing")
            }
        }
    }
}

fn mean_of(ws: &[&Vec<f64>]) -> Vec<f64> {
    let d = ws[0].len();
    let mut out = vec![0.0; d];
    for w in ws {
        for (o, &wi) in out.iter_mut().zip(w.iter()) {
            *o += wi;
        }
    }
    let inv = 1.0 / ws.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

/// ‖w − η∇f(w;z) − (w' − η∇f(w';z))‖₂, the one-step coupled distance used by
/// the nonexpansiveness and contraction checks.
pub fn coupled_update_distance(p: &ProblemInstance, w: &[f64], w2: &[f64], z: &crate::problems::Example, eta: f64) -> f64 {
    let ga = crate::problems::loss_grad(p, w, z);
    let gb = crate::problems::loss_grad(p, w2, z);
    let ua: Vec<f64> = w.iter().zip(ga.iter()).map(|(&wi, &gi)| wi - eta * gi).collect();
    let ub: Vec<f64> = w2.iter().zip(gb.iter()).map(|(&wi, &gi)| wi - eta * gi).collect();
    dist2(&ua, &ub)
}
