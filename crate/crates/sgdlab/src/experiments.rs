//! Composite experiments: risk decomposition, batch-size and machine-count
//! speedup sweeps, scaling-exponent fits and inequality verdicts.
//!
//! Sweeps pin a master seed list so every axis value reuses common random
//! numbers (the replicate label, not the axis value, keys the data and
//! trainer streams); matched-risk comparisons across axis values are then
//! paired, which is what makes the factor-2 assertions resolvable at desk
//! scale. For the quadratic families the excess risk of each replicate is
//! evaluated through the closed-form population risk, so sweep noise comes
//! from the S-draw alone, not from a test sample.

use crate::bounds::{BoundForm, BoundReport};
use crate::optimizers::{
    run_local_sgd, run_minibatch_sgd, LocalConfig, MinibatchConfig, StepSchedule,
};
use crate::problems::{
    analytic_f_star, analytic_population_risk, empirical_minimizer, empirical_risk,
    generate_dataset_rep, logistic_f_star_cached, population_risk_estimate, Dataset,
    GeneratorSpec, ProblemInstance, ProblemKind,
};
use crate::sampling::{derive_subseed, PathSeg, StreamKey};
use crate::Error;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Reference model for the optimization gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Teacher,
    EmpiricalMinimizer,
}

/// Error decomposition of one trained model.
#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub train_risk: f64,
    pub test_risk: f64,
    pub test_se: f64,
    pub gen_gap: f64,
    pub opt_gap: f64,
    pub excess_risk: f64,
    pub reference: Reference,
    pub f_star: f64,
    /// F_S at the reference model (echoed for the decomposition identity).
    pub train_risk_ref: f64,
    /// Excess risk through the closed-form population risk, when available.
    pub excess_analytic: Option<f64>,
}

/// Populates the full error decomposition for a trained model.
pub fn risk_decomposition(
    p: &ProblemInstance,
    data: &Dataset,
    w_out: &[f64],
    test_spec: &GeneratorSpec,
    reference: Reference,
    n_test: usize,
    probe_seed: u64,
) -> Result<RiskReport, Error> {
    let train_risk = empirical_risk(p, data, w_out);
    let (test_risk, test_se) = population_risk_estimate(p, test_spec, w_out, n_test, probe_seed)?;
    let f_star = match analytic_f_star(p) {
        Some(v) => v,
        None => logistic_f_star_cached(test_spec)?.0,
    };
    let ref_w = match reference {
        Reference::Teacher => p
            .teacher_w
            .clone()
            .ok_or_else(|| Error::Config("risk_decomposition: instance has no teacher".into()))?,
        Reference::EmpiricalMinimizer => empirical_minimizer(p, data)?,
    };
    let train_risk_ref = empirical_risk(p, data, &ref_w);
    let excess_analytic = analytic_population_risk(p, w_out).map(|f| f - f_star);
    Ok(RiskReport {
        train_risk,
        test_risk,
        test_se,
        gen_gap: test_risk - train_risk,
        opt_gap: train_risk - train_risk_ref,
        excess_risk: test_risk - f_star,
        reference,
        f_star,
        train_risk_ref,
        excess_analytic,
    })
}

/// OLS slope of log y on log x with a 95% confidence half-width.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<(f64, f64), Error> {
    if points.len() < 3 {
        return Err(Error::Config("fit_scaling_exponent: need at least 3 points".into()));
    }
    for &(x, y) in points {
        assert!(x > 0.0 && y > 0.0, "fit_scaling_exponent: nonpositive point ({x}, {y})");
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|&(x, _)| x).sum::<f64>() / n;
    let my = logs.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = logs.iter().map(|&(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let df = n - 2.0;
    let se = (ssr / df / sxx).sqrt();
    let ci = if se == 0.0 {
        0.0
    } else {
        let t = StudentsT::new(0.0, 1.0, df).expect("valid dof").inverse_cdf(0.975);
        t * se
    };
    Ok((slope, ci))
}

/// Sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchB,
    MachinesM,
    SampleN,
    RoundsR,
}

/// One measured sweep point (means with standard errors over replicates).
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub excess_risk: f64,
    pub se: f64,
    pub gen_gap: f64,
    pub opt_gap: f64,
    /// Sequential steps for minibatch, per-machine steps K·R for local.
    pub steps: f64,
}

/// A full sweep with its fitted log-log exponent.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub slope: Option<f64>,
    pub slope_ci: Option<f64>,
    /// Axis values skipped because a recipe constraint failed, with reasons.
    pub skipped: Vec<(f64, String)>,
}

impl SweepResult {
    /// Fits the exponent of excess risk against the axis value.
    fn with_fit(mut self) -> Result<Self, Error> {
        if self.points.len() >= 3 {
            let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.value, p.excess_risk)).collect();
            let (slope, ci) = fit_scaling_exponent(&pts)?;
            self.slope = Some(slope);
            self.slope_ci = Some(ci);
        }
        Ok(self)
    }

    /// CSV export: `axis,value,excess_risk,se,gen_gap,opt_gap,steps`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<(), Error> {
        writeln!(out, "axis,value,excess_risk,se,gen_gap,opt_gap,steps")?;
        let axis = serde_json::to_string(&self.axis)?;
        let axis = axis.trim_matches('"');
        for p in &self.points {
            writeln!(
                out,
                "{axis},{},{},{},{},{},{}",
                p.value, p.excess_risk, p.se, p.gen_gap, p.opt_gap, p.steps
            )?;
        }
        Ok(())
    }
}

/// Internal: one replicate's measured decomposition, via closed forms.
struct PointMeasure {
    excess: f64,
    gen_gap: f64,
    opt_gap: f64,
}

fn measure_quadratic(
    p: &ProblemInstance,
    data: &Dataset,
    w_out: &[f64],
) -> PointMeasure {
    let f_star = analytic_f_star(p).expect("sweeps run on quadratic kinds");
    let pop = analytic_population_risk(p, w_out).expect("sweeps run on quadratic kinds");
    let train = empirical_risk(p, data, w_out);
    let teacher = p.teacher_w.as_ref().expect("generated instances carry a teacher");
    let train_ref = empirical_risk(p, data, teacher);
    PointMeasure { excess: pop - f_star, gen_gap: pop - train, opt_gap: train - train_ref }
}

/// Expected decomposition of the random-tail-iterate output: the mean of the
/// per-iterate measures over the last half of the logged main chain.
fn measure_tail(p: &ProblemInstance, data: &Dataset, traj: &crate::optimizers::Trajectory) -> PointMeasure {
    // main-chain length = highest logged iterate index - 1 (final is R+1)
    let total = traj.logged_iterates.iter().map(|&(k, _)| k).max().unwrap_or(1) - 1;
    let from = total - total.div_ceil(2) + 1;
    let tail: Vec<&Vec<f64>> = traj
        .logged_iterates
        .iter()
        .filter(|(k, _)| *k >= from)
        .map(|(_, w)| w)
        .collect();
    assert!(!tail.is_empty(), "tail measurement needs logged iterates");
    let mut acc = PointMeasure { excess: 0.0, gen_gap: 0.0, opt_gap: 0.0 };
    for w in &tail {
        let m = measure_quadratic(p, data, w);
        acc.excess += m.excess;
        acc.gen_gap += m.gen_gap;
        acc.opt_gap += m.opt_gap;
    }
    let inv = 1.0 / tail.len() as f64;
    acc.excess *= inv;
    acc.gen_gap *= inv;
    acc.opt_gap *= inv;
    acc
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

fn trainer_seed(master: u64, rep: u64) -> u64 {
    derive_subseed(&StreamKey::new(master).child(PathSeg::Rep(rep)).child(PathSeg::Tag("trainer")))
}

/// Output model a sweep point measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOutput {
    FinalIterate,
    UniformAverage,
    TailAverage,
    LocalAllAverage,
    LocalWeightedAverage,
    /// Uniformly random iterate from the last half of the main chain: its
    /// expected excess is the tail mean of per-iterate excess values, which
    /// tracks the stationary risk level with within-run averaging.
    RandomTailIterate,
}

/// Runs one minibatch recipe point over `reps` replicates.
fn minibatch_point(
    spec: &GeneratorSpec,
    b: usize,
    rounds: usize,
    schedule: StepSchedule,
    output: SweepOutput,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<PointMeasure>, Error> {
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (data, p) = generate_dataset_rep(spec, rep, 0)?;
            let mut cfg = MinibatchConfig::new(b, rounds, schedule, trainer_seed(master_seed, rep));
            cfg.log_every = if output == SweepOutput::RandomTailIterate { 1 } else { rounds.max(1) };
            cfg.record_risk = false;
            let traj = run_minibatch_sgd(&p, &data, &cfg)?;
            if output == SweepOutput::RandomTailIterate {
                return Ok(measure_tail(&p, &data, &traj));
            }
            let w_out = match output {
                SweepOutput::FinalIterate => &traj.final_w,
                SweepOutput::UniformAverage => &traj.averages.uniform,
                _ => &traj.averages.tail,
            };
            Ok(measure_quadratic(&p, &data, w_out))
        })
        .collect()
}

fn local_point(
    spec: &GeneratorSpec,
    machines: usize,
    local_steps: usize,
    rounds: usize,
    schedule: StepSchedule,
    output: SweepOutput,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<PointMeasure>, Error> {
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (data, p) = generate_dataset_rep(spec, rep, 0)?;
            let mut cfg =
                LocalConfig::new(machines, local_steps, rounds, schedule, trainer_seed(master_seed, rep));
            cfg.log_every = if output == SweepOutput::RandomTailIterate { 1 } else { rounds.max(1) };
            cfg.record_risk = false;
            let traj = run_local_sgd(&p, &data, &cfg)?;
            if output == SweepOutput::RandomTailIterate {
                return Ok(measure_tail(&p, &data, &traj));
            }
            let averages = &traj.averages;
            let w_out = match output {
                SweepOutput::FinalIterate => &traj.final_w,
                SweepOutput::UniformAverage => &averages.uniform,
                SweepOutput::TailAverage => &averages.tail,
                SweepOutput::LocalAllAverage => {
                    averages.local_all.as_ref().expect("local run has all-iterate average")
                }
                SweepOutput::LocalWeightedAverage => {
                    averages.local_weighted.as_ref().expect("local run has weighted average")
                }
                SweepOutput::RandomTailIterate => unreachable!("handled above"),
            };
            Ok(measure_quadratic(&p, &data, w_out))
        })
        .collect()
}

fn to_point(value: f64, steps: f64, measures: &[PointMeasure]) -> SweepPoint {
    let (excess, se) = mean_se(&measures.iter().map(|m| m.excess).collect::<Vec<_>>());
    let (gen_gap, _) = mean_se(&measures.iter().map(|m| m.gen_gap).collect::<Vec<_>>());
    let (opt_gap, _) = mean_se(&measures.iter().map(|m| m.opt_gap).collect::<Vec<_>>());
    SweepPoint { value, excess_risk: excess, se, gen_gap, opt_gap, steps }
}

/// Noise regime of the convex minibatch recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRegime {
    /// F(w*) >= 1/n: η = b/√(nF*), R ≈ n/b, axis is the batch size.
    HighNoise,
    /// F(w*) < 1/n: η = 1/(2L), R ≈ n, axis is the sample size.
    LowNoise,
}

/// Batch-size speedup sweep (convex minibatch recipes). In the high-noise
/// regime the axis is b with R ∝ 1/b; in the low-noise regime the recipe has
/// no batch leverage and the sweep runs over the sample size instead.
pub fn batch_speedup_sweep(
    spec: &GeneratorSpec,
    b_list: &[usize],
    regime: NoiseRegime,
    reps: usize,
    master_seed: u64,
) -> Result<SweepResult, Error> {
    match regime {
        NoiseRegime::HighNoise => {
            let (_, p0) = generate_dataset_rep(spec, 0, 0)?;
            let f_star = analytic_f_star(&p0)
                .ok_or_else(|| Error::Config("speedup sweep needs a closed-form F(w*)".into()))?;
            let n = spec.n as f64;
            if f_star < 1.0 / n {
                return Err(Error::Config(format!(
                    "high-noise recipe needs F(w*) >= 1/n (got {f_star} < {})",
                    1.0 / n
                )));
            }
            let l = p0.smoothness;
            let mut points = Vec::new();
            let mut skipped = Vec::new();
            for &b in b_list {
                let b_cap = (n * f_star).sqrt() / (2.0 * l);
                if (b as f64) > b_cap {
                    skipped.push((b as f64, format!("b={b} exceeds sqrt(nF*)/(2L)={b_cap:.3}")));
                    continue;
                }
                let eta = b as f64 / (n * f_star).sqrt();
                let rounds = (n / b as f64).ceil() as usize;
                let measures = minibatch_point(
                    spec,
                    b,
                    rounds,
                    StepSchedule::Constant { eta },
                    SweepOutput::RandomTailIterate,
                    reps,
                    master_seed,
                )?;
                points.push(to_point(b as f64, rounds as f64, &measures));
            }
            Ok(SweepResult { axis: SweepAxis::BatchB, points, slope: None, slope_ci: None, skipped })
        }
        NoiseRegime::LowNoise => {
            let n_list: Vec<usize> = b_list.to_vec(); // axis values are sample sizes here
            convex_low_noise_sweep(&n_list, reps, master_seed, spec.seed)
        }
    }
}

/// The low-noise convex recipe: interpolating overparameterized least squares
/// (d = 2n, σ_y = 0, so F(w*) = 0 < 1/n), η = 1/(2L), R = n.
pub fn convex_low_noise_sweep(
    n_list: &[usize],
    reps: usize,
    master_seed: u64,
    data_seed: u64,
) -> Result<SweepResult, Error> {
    let mut points = Vec::new();
    for &n in n_list {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 2 * n, n, 0.0, data_seed);
        let eta = 0.5; // 1/(2L) with L = x_cap² = 1
        let measures = minibatch_point(
            &spec,
            2,
            n,
            StepSchedule::Constant { eta },
            SweepOutput::UniformAverage,
            reps,
            master_seed,
        )?;
        points.push(to_point(n as f64, n as f64, &measures));
    }
    SweepResult { axis: SweepAxis::SampleN, points, slope: None, slope_ci: None, skipped: Vec::new() }
        .with_fit()
}

/// High-noise convex recipe over sample sizes: η = b/√(nF*), R = n/b.
pub fn convex_high_noise_sweep(
    n_list: &[usize],
    d: usize,
    noise: f64,
    b: usize,
    rounds_factor: f64,
    reps: usize,
    master_seed: u64,
    data_seed: u64,
) -> Result<SweepResult, Error> {
    let mut points = Vec::new();
    for &n in n_list {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, d, n, noise, data_seed);
        let f_star = 0.5 * noise * noise;
        let nf = n as f64;
        if f_star < 1.0 / nf {
            return Err(Error::Config("high-noise recipe needs F(w*) >= 1/n".into()));
        }
        let eta = b as f64 / (nf * f_star).sqrt();
        if eta > 0.5 + 1e-12 {
            return Err(Error::Config(format!("recipe step size {eta} exceeds 1/(2L)")));
        }
        let rounds = (rounds_factor * nf / b as f64).ceil() as usize;
        let measures = minibatch_point(
            &spec,
            b,
            rounds,
            StepSchedule::Constant { eta },
            SweepOutput::RandomTailIterate,
            reps,
            master_seed,
        )?;
        points.push(to_point(nf, rounds as f64, &measures));
    }
    SweepResult { axis: SweepAxis::SampleN, points, slope: None, slope_ci: None, skipped: Vec::new() }
        .with_fit()
}

/// Strongly convex recipe over sample sizes: ridge, decaying steps
/// η_t = 2/(μ(t+a)), R = max{n/b, ⌈μ⁻¹ log n⌉}, tail-averaged output.
pub fn strong_convex_sweep(
    n_list: &[usize],
    noise: f64,
    b: usize,
    reps: usize,
    master_seed: u64,
    data_seed: u64,
) -> Result<SweepResult, Error> {
    let mut points = Vec::new();
    for &n in n_list {
        let spec = GeneratorSpec::new(ProblemKind::RidgeLeastSquares, 8, n, noise, data_seed);
        let (_, p0) = generate_dataset_rep(&spec, 0, 0)?;
        let (l, mu) = (p0.smoothness, p0.mu);
        let a = (4.0 * l / mu).ceil();
        let nf = n as f64;
        let rounds = (nf / b as f64).max((nf.ln() / mu).ceil()).ceil() as usize;
        let measures = minibatch_point(
            &spec,
            b,
            rounds,
            StepSchedule::PolyStrong { a, mu },
            SweepOutput::TailAverage,
            reps,
            master_seed,
        )?;
        points.push(to_point(nf, rounds as f64, &measures));
    }
    SweepResult { axis: SweepAxis::SampleN, points, slope: None, slope_ci: None, skipped: Vec::new() }
        .with_fit()
}

/// Local SGD convex recipe over sample sizes: M, K fixed, R = n/(KM) scaled
/// by `round_factor`, η = √n/(KR), output = all-iterate average.
pub fn local_convex_sweep(
    n_list: &[usize],
    d: usize,
    noise: f64,
    machines: usize,
    local_steps: usize,
    round_factor: f64,
    reps: usize,
    master_seed: u64,
    data_seed: u64,
) -> Result<SweepResult, Error> {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &n in n_list {
        let nf = n as f64;
        match local_convex_recipe(nf, machines, local_steps, round_factor) {
            Ok((rounds, eta)) => {
                let spec = GeneratorSpec::new(ProblemKind::LeastSquares, d, n, noise, data_seed);
                let measures = local_point(
                    &spec,
                    machines,
                    local_steps,
                    rounds,
                    StepSchedule::Constant { eta },
                    SweepOutput::RandomTailIterate,
                    reps,
                    master_seed,
                )?;
                points.push(to_point(nf, (local_steps * rounds) as f64, &measures));
            }
            Err(reason) => skipped.push((nf, reason)),
        }
    }
    SweepResult { axis: SweepAxis::SampleN, points, slope: None, slope_ci: None, skipped }.with_fit()
}

/// Recipe admissibility for the convex local run (η·K·R = √n and the
/// step-size constraints of the convex local risk bound, L = 1 problems).
fn local_convex_recipe(
    n: f64,
    machines: usize,
    local_steps: usize,
    round_factor: f64,
) -> Result<(usize, f64), String> {
    let m = machines as f64;
    let k = local_steps as f64;
    if m > n.sqrt() {
        return Err(format!("M={machines} exceeds sqrt(n)={:.2}", n.sqrt()));
    }
    let rounds = (round_factor * n / (k * m)).ceil().max(1.0);
    let eta = n.sqrt() / (k * rounds);
    let cap_machine = m / n.sqrt();
    let cap_drift = if local_steps > 1 { n.powf(-0.25) / (k - 1.0).sqrt() } else { f64::INFINITY };
    if eta > cap_machine * (1.0 + 1e-9) {
        return Err(format!("eta={eta:.4} exceeds M/sqrt(n)={cap_machine:.4}"));
    }
    if eta > cap_drift {
        return Err(format!("eta={eta:.4} exceeds n^(-1/4)/sqrt(K-1)={cap_drift:.4}"));
    }
    if eta > 2.0 {
        return Err(format!("eta={eta:.4} exceeds 2/L"));
    }
    Ok((rounds as usize, eta))
}

/// Machine-count speedup sweep at fixed n: K·R ∝ 1/M at the recipe step size.
pub fn machine_speedup_sweep(
    spec: &GeneratorSpec,
    m_list: &[usize],
    local_steps: usize,
    strong: bool,
    round_factor: f64,
    reps: usize,
    master_seed: u64,
) -> Result<SweepResult, Error> {
    let n = spec.n as f64;
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &machines in m_list {
        if strong {
            let (_, p0) = generate_dataset_rep(spec, 0, 0)?;
            let (l, mu) = (p0.smoothness, p0.mu);
            let cap = (n * mu / local_steps as f64).sqrt();
            if machines as f64 > cap {
                skipped.push((machines as f64, format!("M={machines} exceeds sqrt(n·mu/K)={cap:.2}")));
                continue;
            }
            let rounds = (round_factor * n / (local_steps * machines) as f64).ceil().max(1.0) as usize;
            let a = (2.0 * l / mu).ceil();
            let schedule = StepSchedule::LocalPolyStrong { a, mu, k: local_steps };
            let measures = local_point(
                spec,
                machines,
                local_steps,
                rounds,
                schedule,
                SweepOutput::LocalWeightedAverage,
                reps,
                master_seed,
            )?;
            points.push(to_point(machines as f64, (local_steps * rounds) as f64, &measures));
        } else {
            match local_convex_recipe(n, machines, local_steps, round_factor) {
                Ok((rounds, eta)) => {
                    let measures = local_point(
                        spec,
                        machines,
                        local_steps,
                        rounds,
                        StepSchedule::Constant { eta },
                        SweepOutput::RandomTailIterate,
                        reps,
                        master_seed,
                    )?;
                    points.push(to_point(machines as f64, (local_steps * rounds) as f64, &measures));
                }
                Err(reason) => skipped.push((machines as f64, reason)),
            }
        }
    }
    Ok(SweepResult { axis: SweepAxis::MachinesM, points, slope: None, slope_ci: None, skipped })
}

/// Verdict of a Monte-Carlo inequality check with a 3-standard-error band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    Inconclusive,
}

/// Compares a Monte-Carlo LHS (mean, se) against an exact-form bound RHS:
/// `holds` when the +3se band is below the bound, `violated` when the −3se
/// band is above it, `inconclusive` when the band straddles it.
pub fn verify_inequality(lhs: (f64, f64), rhs: &BoundReport) -> Result<Verdict, Error> {
    if !matches!(rhs.form, BoundForm::ExactInequality) {
        return Err(Error::Unsupported(format!(
            "verify_inequality: {} is a scaling-only bound",
            rhs.theorem_id
        )));
    }
    let (mean, se) = lhs;
    if mean + 3.0 * se <= rhs.value {
        Ok(Verdict::Holds)
    } else if mean - 3.0 * se > rhs.value {
        Ok(Verdict::Violated)
    } else {
        Ok(Verdict::Inconclusive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{eval_bound, BoundInputs, TheoremId};
    use crate::optimizers::StepSchedule;

    #[test]
    fn fit_exact_power_laws() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, i as f64)).collect();
        let (slope, ci) = fit_scaling_exponent(&pts).unwrap();
        assert!((slope - 1.0).abs() < 1e-12);
        assert_eq!(ci, 0.0);

        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 3.0 / (i as f64).sqrt())).collect();
        let (slope, _) = fit_scaling_exponent(&pts).unwrap();
        assert!((slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_noisy_inverse_law() {
        let mut rng = crate::sampling::derive_stream(
            &StreamKey::new(3).child(PathSeg::Tag("fit-noise")),
        );
        use rand::Rng;
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let x = 2.0f64.powi(i) * 1.5;
                let y = (1.0 / x) * (1.0 + 0.05 * rng.gen_range(-1.0..1.0));
                (x, y)
            })
            .collect();
        let (slope, _) = fit_scaling_exponent(&pts).unwrap();
        assert!((slope + 1.0).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn fit_rejects_short_input() {
        assert!(fit_scaling_exponent(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    #[should_panic(expected = "nonpositive")]
    fn fit_panics_on_nonpositive() {
        let _ = fit_scaling_exponent(&[(1.0, 1.0), (2.0, 0.0), (3.0, 2.0)]);
    }

    #[test]
    fn verdict_rules() {
        let rhs = BoundReport {
            theorem_id: TheoremId::MbConvexL1,
            inputs: BoundInputs::new(),
            value: 0.6,
            form: crate::bounds::BoundForm::ExactInequality,
        };
        assert_eq!(verify_inequality((0.5, 0.01), &rhs).unwrap(), Verdict::Holds);
        assert_eq!(verify_inequality((0.7, 0.01), &rhs).unwrap(), Verdict::Violated);
        let rhs_close = BoundReport { value: 0.58, ..rhs.clone() };
        assert_eq!(verify_inequality((0.6, 0.05), &rhs_close).unwrap(), Verdict::Inconclusive);
        let scaling = eval_bound(
            TheoremId::MbStrongL1Flat,
            &BoundInputs::new().scalar("n", 10.0).scalar("mu", 1.0),
        )
        .unwrap();
        assert!(verify_inequality((0.1, 0.01), &scaling).is_err());
    }

    #[test]
    fn risk_decomposition_identity_and_teacher_case() {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 4, 24, 0.0, 31);
        let (data, p) = generate_dataset_rep(&spec, 0, 0).unwrap();
        let teacher = p.teacher_w.clone().unwrap();
        let rep = risk_decomposition(&p, &data, &teacher, &spec, Reference::Teacher, 5_000, 0).unwrap();
        // noiseless data at the teacher: every gap is zero
        assert!(rep.train_risk < 1e-20);
        assert!(rep.test_risk.abs() <= 3.0 * rep.test_se + 1e-20);
        assert!(rep.excess_analytic.unwrap().abs() < 1e-15);
        // decomposition identity: excess = gen_gap + opt_gap + (F_S(ref) − F*)
        let lhs = rep.excess_risk;
        let rhs = rep.gen_gap + rep.opt_gap + (rep.train_risk_ref - rep.f_star);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn risk_decomposition_minimizer_gap_nonnegative() {
        let spec = GeneratorSpec::new(ProblemKind::RidgeLeastSquares, 4, 24, 0.5, 32);
        let (data, p) = generate_dataset_rep(&spec, 0, 0).unwrap();
        let cfg = MinibatchConfig::new(2, 60, StepSchedule::Constant { eta: 0.5 }, 7);
        let traj = run_minibatch_sgd(&p, &data, &cfg).unwrap();
        let rep = risk_decomposition(
            &p,
            &data,
            &traj.final_w,
            &spec,
            Reference::EmpiricalMinimizer,
            2_000,
            1,
        )
        .unwrap();
        assert!(rep.opt_gap >= -1e-10, "opt gap vs minimizer must be nonnegative");
    }

    #[test]
    fn batch_sweep_halves_rounds_and_skips_infeasible() {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 8, 64, 3.0, 33);
        let res =
            batch_speedup_sweep(&spec, &[2, 4, 1000], NoiseRegime::HighNoise, 2, 5).unwrap();
        assert_eq!(res.points.len(), 2);
        assert_eq!(res.points[0].steps, 32.0);
        assert_eq!(res.points[1].steps, 16.0);
        assert_eq!(res.skipped.len(), 1);
    }

    #[test]
    fn machine_sweep_scales_rounds() {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 8, 64, 1.0, 34);
        let res = machine_speedup_sweep(&spec, &[1, 2], 2, false, 1.0, 2, 6).unwrap();
        assert_eq!(res.points.len(), 2);
        let kr1 = res.points[0].steps;
        let kr2 = res.points[1].steps;
        assert!((kr1 / kr2 - 2.0).abs() < 0.1, "K·R should halve when M doubles");
    }

    #[test]
    fn machine_sweep_strong_mode_skips_and_runs() {
        let spec = GeneratorSpec::new(ProblemKind::RidgeLeastSquares, 4, 64, 1.0, 35);
        // cap is sqrt(n*mu/K) = sqrt(64*0.5/2) = 4, so M=8 must be skipped
        let res = machine_speedup_sweep(&spec, &[2, 8], 2, true, 1.0, 2, 9).unwrap();
        assert_eq!(res.points.len(), 1);
        assert_eq!(res.points[0].value, 2.0);
        assert_eq!(res.skipped.len(), 1);
        assert!(res.skipped[0].1.contains("sqrt(n·mu/K)"));
        assert!(res.points[0].excess_risk.is_finite());
    }

    #[test]
    fn sweep_csv_format() {
        let res = SweepResult {
            axis: SweepAxis::BatchB,
            points: vec![SweepPoint {
                value: 2.0,
                excess_risk: 0.5,
                se: 0.01,
                gen_gap: 0.1,
                opt_gap: 0.2,
                steps: 32.0,
            }],
            slope: None,
            slope_ci: None,
            skipped: vec![],
        };
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "axis,value,excess_risk,se,gen_gap,opt_gap,steps");
        assert_eq!(text.lines().nth(1).unwrap(), "batch_b,2,0.5,0.01,0.1,0.2,32");
    }
}
