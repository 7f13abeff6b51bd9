//! Named verification suites: the executable form of the acceptance
//! criteria, shared by the `verify` CLI command and the acceptance tests.
//! Every check reports a [`Verdict`]; `Violated` is the only failing state
//! (`Inconclusive` means the 3-standard-error band straddles the bound).

use crate::bounds::{eval_bound, strong_weight_identity_gap, BoundInputs, BoundReport, TheoremId};
use crate::experiments::{
    batch_speedup_sweep, convex_high_noise_sweep, convex_low_noise_sweep, fit_scaling_exponent,
    local_convex_sweep, machine_speedup_sweep, strong_convex_sweep, verify_inequality, NoiseRegime,
    Verdict,
};
use crate::optimizers::{
    coupled_update_distance, minibatch_step, minibatch_step_count_form, run_local_sgd,
    run_minibatch_sgd, LocalConfig, MinibatchConfig, StepSchedule,
};
use crate::problems::{
    dist2, dot, empirical_minimizer, empirical_risk, generate_dataset_rep, loss_grad, loss_value,
    GeneratorSpec, ProblemKind,
};
use crate::sampling::{derive_stream, draw_minibatch, PathSeg, StreamKey};
use crate::stability::{
    estimate_on_average_stability, make_neighbors, StabilityEstimate, StabilityOptions,
    TrainerConfig,
};
use crate::Error;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// One named check with its verdict and a human-readable detail line.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl Check {
    fn bool(id: &str, ok: bool, detail: String) -> Check {
        Check { id: id.to_string(), verdict: if ok { Verdict::Holds } else { Verdict::Violated }, detail }
    }

    fn verdict(id: &str, verdict: Verdict, detail: String) -> Check {
        Check { id: id.to_string(), verdict, detail }
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Violated
    }
}

/// A suite's collected checks.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn print(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for c in &self.checks {
            let tag = match c.verdict {
                Verdict::Holds => "PASS",
                Verdict::Inconclusive => "PASS (inconclusive band)",
                Verdict::Violated => "FAIL",
            };
            writeln!(out, "[{tag}] {}: {}", c.id, c.detail)?;
        }
        Ok(())
    }
}

/// Monte-Carlo scale knobs; defaults are the acceptance-suite sizes.
#[derive(Debug, Clone, Copy)]
pub struct SuiteParams {
    /// Replicates for the stability inequality suite.
    pub replicates: usize,
    /// Replaced indices sampled per replicate.
    pub subsample: usize,
    /// Replicates per sweep point for risk/speedup suites.
    pub sweep_reps: usize,
    /// Master seed for every suite stream.
    pub seed: u64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams { replicates: 64, subsample: 32, sweep_reps: 24, seed: 0x56d_1ab5 }
    }
}

fn rng_for(seed: u64, tag: &'static str) -> rand_chacha::ChaCha12Rng {
    derive_stream(&StreamKey::new(seed).child(PathSeg::Tag(tag)))
}

// ---------------------------------------------------------------------------
// Suite 1: exact lemmas
// ---------------------------------------------------------------------------

/// Nonexpansiveness, contraction factors, self-bounding, binomial moments,
/// count-form reformulation and the telescoping weight identity.
pub fn suite_exact(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let mut checks = Vec::new();
    let seed = params.seed;

    // nonexpansiveness on a convex instance, eta <= 2/L
    {
        let (data, p) =
            generate_dataset_rep(&GeneratorSpec::new(ProblemKind::LeastSquares, 6, 40, 0.5, seed), 0, 0)?;
        let mut rng = rng_for(seed, "exact-nonexp");
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..200 {
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w2: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let z = &data.examples[rng.gen_range(0..40)];
            let eta = rng.gen_range(0.0..2.0 / p.smoothness);
            worst = worst.max(coupled_update_distance(&p, &w, &w2, z, eta) - dist2(&w, &w2));
        }
        checks.push(Check::bool(
            "exact.nonexpansive",
            worst <= 1e-10,
            format!("max distance growth over 200 convex updates = {worst:.3e} (slack 1e-10)"),
        ));
    }

    // strongly convex contraction factors, eta <= 1/L
    {
        let (data, p) = generate_dataset_rep(
            &GeneratorSpec::new(ProblemKind::RidgeLeastSquares, 6, 40, 0.5, seed),
            0,
            0,
        )?;
        let mut rng = rng_for(seed, "exact-contract");
        let mut worst_l1 = f64::NEG_INFINITY;
        let mut worst_l2 = f64::NEG_INFINITY;
        for _ in 0..200 {
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w2: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let z = &data.examples[rng.gen_range(0..40)];
            let eta = rng.gen_range(0.0..1.0 / p.smoothness);
            let before = dist2(&w, &w2);
            let after = coupled_update_distance(&p, &w, &w2, z, eta);
            worst_l1 = worst_l1.max(after - (1.0 - eta * p.mu / 2.0) * before);
            worst_l2 = worst_l2.max(after * after - (1.0 - eta * p.mu) * before * before);
        }
        checks.push(Check::bool(
            "exact.strong-contraction",
            worst_l1 <= 1e-10 && worst_l2 <= 1e-10,
            format!("contraction slack: norm {worst_l1:.3e}, squared {worst_l2:.3e} (slack 1e-10)"),
        ));
    }

    // self-bounding on every kind, 1000 random (w, z) each
    {
        let mut rng = rng_for(seed, "exact-selfbound");
        let mut worst = f64::NEG_INFINITY;
        for kind in [
            ProblemKind::LeastSquares,
            ProblemKind::Logistic,
            ProblemKind::RidgeLeastSquares,
            ProblemKind::QuadraticPl,
        ] {
            let (d, n) = if kind == ProblemKind::QuadraticPl { (16, 8) } else { (6, 40) };
            let (data, p) = generate_dataset_rep(&GeneratorSpec::new(kind, d, n, 0.3, seed), 0, 0)?;
            for _ in 0..1000 {
                let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let z = &data.examples[rng.gen_range(0..n)];
                let g = loss_grad(&p, &w, z);
                worst = worst.max(dot(&g, &g) - 2.0 * p.smoothness * loss_value(&p, &w, z));
            }
        }
        checks.push(Check::bool(
            "exact.self-bounding",
            worst <= 1e-10,
            format!("max of ||grad||^2 - 2Lf over 4000 samples = {worst:.3e} (slack 1e-10)"),
        ));
    }

    // stronger self-bounding for logistic with x_cap <= 1
    {
        let (data, p) =
            generate_dataset_rep(&GeneratorSpec::new(ProblemKind::Logistic, 6, 40, 0.1, seed), 0, 0)?;
        let mut rng = rng_for(seed, "exact-strongsb");
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..1000 {
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let z = &data.examples[rng.gen_range(0..40)];
            let g = loss_grad(&p, &w, z);
            worst = worst.max(dot(&g, &g).sqrt() - loss_value(&p, &w, z));
        }
        checks.push(Check::bool(
            "exact.stronger-self-bounding",
            worst <= 1e-10,
            format!("max of ||grad|| - f for logistic = {worst:.3e} (slack 1e-10)"),
        ));
    }

    // binomial count moments over 1e5 draws, (n, b) = (10, 5)
    {
        let (n, b, reps) = (10usize, 5usize, 100_000usize);
        let p_hit = 1.0 / n as f64;
        let mean_true = b as f64 * p_hit;
        let var_true = b as f64 * p_hit * (1.0 - p_hit);
        let mut rng = rng_for(seed, "exact-binomial");
        let coord = 0usize;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut histogram = vec![0usize; b + 1];
        for t in 0..reps {
            let c = draw_minibatch(t, n, b, &mut rng).counts[coord] as usize;
            histogram[c] += 1;
            sum += c as f64;
            sum_sq += (c * c) as f64;
        }
        let nf = reps as f64;
        let mean = sum / nf;
        let var = sum_sq / nf - mean * mean;
        let mu4: f64 =
            (0..=b).map(|k| binom_pmf(b, p_hit, k) * (k as f64 - mean_true).powi(4)).sum();
        let se_mean = (var_true / nf).sqrt();
        let se_var = ((mu4 - var_true * var_true) / nf).sqrt();
        let ok = (mean - mean_true).abs() < 3.0 * se_mean && (var - var_true).abs() < 3.0 * se_var;
        checks.push(Check::bool(
            "exact.binomial-moments",
            ok,
            format!(
                "count mean {mean:.4} (target {mean_true}, 3se {:.4}); var {var:.4} (target {var_true}, 3se {:.4})",
                3.0 * se_mean,
                3.0 * se_var
            ),
        ));

        // chi-square goodness of fit against Binomial(5, 1/10), tail bins merged
        let mut expected: Vec<f64> = (0..=b).map(|k| nf * binom_pmf(b, p_hit, k)).collect();
        let mut observed: Vec<f64> = histogram.iter().map(|&c| c as f64).collect();
        while expected.len() > 2 && *expected.last().unwrap() < 5.0 {
            let e = expected.pop().unwrap();
            let o = observed.pop().unwrap();
            *expected.last_mut().unwrap() += e;
            *observed.last_mut().unwrap() += o;
        }
        let stat: f64 =
            expected.iter().zip(observed.iter()).map(|(&e, &o)| (o - e) * (o - e) / e).sum();
        let df = (expected.len() - 1) as f64;
        let p_value = 1.0 - ChiSquared::new(df).expect("valid dof").cdf(stat);
        checks.push(Check::bool(
            "exact.binomial-chi-square",
            p_value > 0.001,
            format!("goodness-of-fit p = {p_value:.4} (stat {stat:.2}, df {df})"),
        ));
    }

    // index-form vs count-form reformulation
    {
        let (data, p) =
            generate_dataset_rep(&GeneratorSpec::new(ProblemKind::LeastSquares, 5, 12, 0.4, seed), 0, 0)?;
        let mut rng = rng_for(seed, "exact-reform");
        let mut worst: f64 = 0.0;
        for t in 0..100 {
            let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let rec = draw_minibatch(t, 12, 6, &mut rng);
            let eta = rng.gen_range(0.01..1.5);
            let a = minibatch_step(&p, &data, &w, &rec, eta);
            let b = minibatch_step_count_form(&p, &data, &w, &rec.counts, eta);
            worst = worst.max(
                a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
            );
        }
        checks.push(Check::bool(
            "exact.reformulation",
            worst <= 1e-12,
            format!("max |index-form - count-form| over 100 steps = {worst:.3e} (slack 1e-12)"),
        ));
    }

    // telescoping weight identity
    {
        let mut rng = rng_for(seed, "exact-telescope");
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let mu = rng.gen_range(0.05..1.0);
            let t = rng.gen_range(1..80usize);
            let etas: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..1.9 / mu)).collect();
            worst = worst.max(strong_weight_identity_gap(mu, &etas));
        }
        checks.push(Check::bool(
            "exact.telescoping",
            worst <= 1e-12,
            format!("max telescoping identity gap over 100 schedules = {worst:.3e} (slack 1e-12)"),
        ));
    }

    Ok(SuiteReport { suite: "exact".into(), checks })
}

fn binom_pmf(n: usize, p: f64, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c *= (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

// ---------------------------------------------------------------------------
// Suite 2: reduction identities
// ---------------------------------------------------------------------------

/// K=1 local == minibatch, M=1 local == sequential SGD, S'=S gives zero
/// stability — all bitwise.
pub fn suite_reductions(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let mut checks = Vec::new();
    let seed = params.seed;
    let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 4, 16, 0.4, seed);
    let (data, p) = generate_dataset_rep(&spec, 0, 0)?;

    {
        let mut ok = true;
        for m in [2usize, 4, 8] {
            let mb = MinibatchConfig::new(m, 12, StepSchedule::Constant { eta: 0.7 }, seed ^ 0xa5);
            let lc = LocalConfig::new(m, 1, 12, StepSchedule::Constant { eta: 0.7 }, seed ^ 0xa5);
            let a = run_minibatch_sgd(&p, &data, &mb)?;
            let b = run_local_sgd(&p, &data, &lc)?;
            ok &= a.final_w == b.final_w && a.averages.uniform == b.averages.uniform;
        }
        checks.push(Check::bool(
            "reduction.local-k1-equals-minibatch",
            ok,
            "local SGD with K=1 bitwise equals minibatch SGD with b=M for M in {2,4,8}".into(),
        ));
    }

    {
        let (kk, rr, eta) = (3usize, 8usize, 0.6);
        let lc = LocalConfig::new(1, kk, rr, StepSchedule::Constant { eta }, seed ^ 0x3c);
        let traj = run_local_sgd(&p, &data, &lc)?;
        let mut w = vec![0.0; 4];
        let mut g = vec![0.0; 4];
        for r in 1..=rr {
            for t in 1..=kk {
                let key = StreamKey::new(seed ^ 0x3c)
                    .child(PathSeg::Machine(0))
                    .child(PathSeg::Round(r as u64))
                    .child(PathSeg::Step(t as u64));
                let idx = derive_stream(&key).gen_range(0..16);
                crate::problems::loss_grad_into(&p, &w, &data.examples[idx], &mut g);
                for i in 0..4 {
                    w[i] -= eta * g[i];
                }
            }
        }
        checks.push(Check::bool(
            "reduction.local-m1-equals-sgd",
            traj.final_w == w,
            "local SGD with M=1 bitwise equals sequential one-example SGD on the same streams".into(),
        ));
    }

    {
        let mut family = make_neighbors(&spec, 0)?;
        family.s_prime = family.s.clone();
        let trainer =
            TrainerConfig::Minibatch(MinibatchConfig::new(3, 10, StepSchedule::Constant { eta: 0.5 }, seed ^ 0x77));
        let mut worst: f64 = 0.0;
        for i in [0usize, 5, 15] {
            let (a, b) = crate::stability::coupled_pair_run(&family, i, &trainer)?;
            worst = worst.max(dist2(&a.final_w, &b.final_w));
        }
        checks.push(Check::bool(
            "reduction.zero-perturbation",
            worst == 0.0,
            format!("S' = S coupled distance = {worst} (exactly zero required)"),
        ));
    }

    Ok(SuiteReport { suite: "reductions".into(), checks })
}

// ---------------------------------------------------------------------------
// Suite 3: stability inequalities
// ---------------------------------------------------------------------------

/// One inequality comparison bundled with the estimate that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub id: String,
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub report: BoundReport,
    pub verdict: Verdict,
    pub estimate: StabilityEstimate,
}

fn check_from_bound(c: &BoundCheck) -> Check {
    Check::verdict(
        &format!("stability.{}", c.id),
        c.verdict,
        format!("measured {:.4e} (se {:.1e}) vs bound {:.4e}", c.lhs_mean, c.lhs_se, c.report.value),
    )
}

/// The minibatch stability inequalities (convex l1/l2, strongly convex l1/l2,
/// nonconvex l1) plus the local l1/l2 pair, at the acceptance scale.
pub fn suite_stability_inequalities(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let outcomes = stability_inequality_outcomes(params)?;
    let mut checks: Vec<Check> = outcomes.iter().map(check_from_bound).collect();

    // Jensen ordering on the convex and local estimates (included here since
    // the same runs produce both moments).
    let by_id = |id: &str| {
        &outcomes.iter().find(|o| o.id == id).unwrap_or_else(|| panic!("missing outcome {id}")).estimate
    };
    for (tag, est) in [("convex", by_id("mb-convex-l1")), ("local", by_id("local-l1"))] {
        let se = est.l2_sq_se + 2.0 * est.l1 * est.l1_se + est.l1_se * est.l1_se;
        checks.push(Check::bool(
            &format!("stability.jensen-{tag}"),
            est.l2_sq >= est.l1 * est.l1 - 3.0 * se,
            format!("l2_sq {:.4e} vs l1^2 {:.4e} (3 combined se {:.1e})", est.l2_sq, est.l1 * est.l1, 3.0 * se),
        ));
    }

    Ok(SuiteReport { suite: "stability".into(), checks })
}

/// Runs the four trainer configurations and evaluates all seven bound
/// comparisons of the stability inequality suite.
pub fn stability_inequality_outcomes(params: &SuiteParams) -> Result<Vec<BoundCheck>, Error> {
    let n = 256usize;
    let seed = params.seed;
    let mut out = Vec::new();

    // convex least squares: minibatch, constant step size
    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 16, n, 0.5, seed.wrapping_add(1));
        let (_, p) = generate_dataset_rep(&spec, 0, 0)?;
        let t = 100usize;
        let cfg = MinibatchConfig::new(4, t, StepSchedule::Constant { eta: 0.3 }, seed.wrapping_add(11));
        let trainer = TrainerConfig::Minibatch(cfg);
        let opts = StabilityOptions::new(params.replicates, params.subsample);
        let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let base = BoundInputs::new()
            .scalar("L", p.smoothness)
            .scalar("n", n as f64)
            .scalar("b", 4.0)
            .series("eta", est.etas.clone())
            .series("risk", est.mean_risk_series.clone());
        let r9 = eval_bound(TheoremId::MbConvexL1, &base)?;
        out.push(BoundCheck {
            id: "mb-convex-l1".into(),
            lhs_mean: est.l1,
            lhs_se: est.l1_se,
            verdict: verify_inequality((est.l1, est.l1_se), &r9)?,
            report: r9,
            estimate: est.clone(),
        });
        let r11 = eval_bound(TheoremId::MbConvexL2Simple, &base)?;
        out.push(BoundCheck {
            id: "mb-convex-l2".into(),
            lhs_mean: est.l2_sq,
            lhs_se: est.l2_sq_se,
            verdict: verify_inequality((est.l2_sq, est.l2_sq_se), &r11)?,
            report: r11,
            estimate: est,
        });
    }

    // strongly convex ridge: minibatch, constant step size <= 1/L
    {
        let spec = GeneratorSpec::new(ProblemKind::RidgeLeastSquares, 16, n, 0.5, seed.wrapping_add(2));
        let (_, p) = generate_dataset_rep(&spec, 0, 0)?;
        let t = 100usize;
        let cfg = MinibatchConfig::new(4, t, StepSchedule::Constant { eta: 0.5 }, seed.wrapping_add(12));
        let trainer = TrainerConfig::Minibatch(cfg);
        let opts = StabilityOptions::new(params.replicates, params.subsample);
        let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let base = BoundInputs::new()
            .scalar("L", p.smoothness)
            .scalar("n", n as f64)
            .scalar("b", 4.0)
            .scalar("mu", p.mu)
            .series("eta", est.etas.clone())
            .series("risk", est.mean_risk_series.clone());
        let r14 = eval_bound(TheoremId::MbStrongL1, &base)?;
        out.push(BoundCheck {
            id: "mb-strong-l1".into(),
            lhs_mean: est.l1,
            lhs_se: est.l1_se,
            verdict: verify_inequality((est.l1, est.l1_se), &r14)?,
            report: r14,
            estimate: est.clone(),
        });
        let r16 = eval_bound(TheoremId::MbStrongL2, &base)?;
        out.push(BoundCheck {
            id: "mb-strong-l2".into(),
            lhs_mean: est.l2_sq,
            lhs_se: est.l2_sq_se,
            verdict: verify_inequality((est.l2_sq, est.l2_sq_se), &r16)?,
            report: r16,
            estimate: est,
        });
    }

    // nonconvex: rank-deficient quadratic, small constant step size
    {
        let spec = GeneratorSpec::new(ProblemKind::QuadraticPl, 320, n, 0.5, seed.wrapping_add(3));
        let (_, p) = generate_dataset_rep(&spec, 0, 0)?;
        let t = 80usize;
        let cfg = MinibatchConfig::new(4, t, StepSchedule::Constant { eta: 0.02 }, seed.wrapping_add(13));
        let trainer = TrainerConfig::Minibatch(cfg);
        let opts = StabilityOptions::new(params.replicates, params.subsample);
        let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let base = BoundInputs::new()
            .scalar("L", p.smoothness)
            .scalar("n", n as f64)
            .series("eta", est.etas.clone())
            .series("risk", est.mean_risk_series.clone());
        let r5 = eval_bound(TheoremId::MbNonconvexL1, &base)?;
        out.push(BoundCheck {
            id: "nonconvex-l1".into(),
            lhs_mean: est.l1,
            lhs_se: est.l1_se,
            verdict: verify_inequality((est.l1, est.l1_se), &r5)?,
            report: r5,
            estimate: est,
        });
    }

    // local SGD: convex least squares
    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 16, n, 0.5, seed.wrapping_add(4));
        let (_, p) = generate_dataset_rep(&spec, 0, 0)?;
        let (mm, kk, rr) = (4usize, 4usize, 8usize);
        let cfg = LocalConfig::new(mm, kk, rr, StepSchedule::Constant { eta: 0.3 }, seed.wrapping_add(14));
        let trainer = TrainerConfig::Local(cfg);
        let mut opts = StabilityOptions::new(params.replicates, params.subsample);
        opts.coupling_traces = true;
        let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let local_risks = est.local_mean_risks.clone().expect("local risks recorded");
        let local_etas = est.local_etas.clone().expect("local etas recorded");
        let base = BoundInputs::new()
            .scalar("L", p.smoothness)
            .scalar("n", n as f64)
            .scalar("M", mm as f64)
            .series("eta", local_etas)
            .series("risk", local_risks);
        let r20 = eval_bound(TheoremId::LocalL1, &base)?;
        out.push(BoundCheck {
            id: "local-l1".into(),
            lhs_mean: est.l1,
            lhs_se: est.l1_se,
            verdict: verify_inequality((est.l1, est.l1_se), &r20)?,
            report: r20,
            estimate: est.clone(),
        });
        let with_coupling =
            base.scalar("coupling_term_sq_mean", est.coupling_term_sq_mean.expect("coupling traces on"));
        let r21 = eval_bound(TheoremId::LocalL2, &with_coupling)?;
        out.push(BoundCheck {
            id: "local-l2".into(),
            lhs_mean: est.l2_sq,
            lhs_se: est.l2_sq_se,
            verdict: verify_inequality((est.l2_sq, est.l2_sq_se), &r21)?,
            report: r21,
            estimate: est,
        });
    }

    Ok(out)
}

// ---------------------------------------------------------------------------
// Suite 4: stability scaling
// ---------------------------------------------------------------------------

/// l1 growth in t, decay in n, and the strongly convex plateau.
pub fn suite_stability_scaling(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let mut checks = Vec::new();
    let seed = params.seed;
    let reps = params.replicates;
    let subsample = params.subsample;

    // slope of l1 vs t at 1.0 +- 0.15: flat-risk convex regime with a step
    // size small enough that early coupled differences barely contract over
    // the horizon
    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 128, 256, 1.0, seed.wrapping_add(41));
        let cfg = MinibatchConfig::new(2, 200, StepSchedule::Constant { eta: 0.15 }, seed.wrapping_add(42));
        let trainer = TrainerConfig::Minibatch(cfg);
        let mut opts = StabilityOptions::new(reps, subsample);
        opts.checkpoints = vec![25, 50, 100, 200];
        opts.record_risk = false;
        let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let pts: Vec<(f64, f64)> =
            est.checkpoint_l1.iter().map(|&(t, m, _)| (t as f64, m)).collect();
        let (slope, _) = fit_scaling_exponent(&pts)?;
        checks.push(Check::bool(
            "scaling.l1-slope-vs-t",
            (slope - 1.0).abs() <= 0.15,
            format!("fitted l1-vs-t slope = {slope:.3} (target 1.0 +- 0.15)"),
        ));
    }

    // slope of l1 vs n at -1.0 +- 0.15: horizon short enough that the risk
    // level (and so the gradient-difference scale) stays flat for every n
    {
        let mut pts = Vec::new();
        for &n in &[64usize, 128, 256, 512] {
            let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 128, n, 1.0, seed.wrapping_add(43));
            let cfg = MinibatchConfig::new(2, 50, StepSchedule::Constant { eta: 0.3 }, seed.wrapping_add(44));
            let trainer = TrainerConfig::Minibatch(cfg);
            let mut opts = StabilityOptions::new(reps, subsample);
            opts.record_risk = false;
            let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
            pts.push((n as f64, est.l1));
        }
        let (slope, _) = fit_scaling_exponent(&pts)?;
        checks.push(Check::bool(
            "scaling.l1-slope-vs-n",
            (slope + 1.0).abs() <= 0.15,
            format!("fitted l1-vs-n slope = {slope:.3} (target -1.0 +- 0.15)"),
        ));
    }

    // strongly convex plateau: l1(2000) <= 1.25 * l1(500)
    {
        let spec =
            GeneratorSpec::new(ProblemKind::RidgeLeastSquares, 16, 64, 0.5, seed.wrapping_add(45));
        let cfg = MinibatchConfig::new(2, 2000, StepSchedule::Constant { eta: 0.5 }, seed.wrapping_add(46));
        let trainer = TrainerConfig::Minibatch(cfg);
        let mut opts = StabilityOptions::new(params.replicates, params.subsample);
        opts.checkpoints = vec![500, 2000];
        opts.record_risk = false;
        let est = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let early = est.checkpoint_l1[0].1;
        let late = est.checkpoint_l1[1].1;
        checks.push(Check::bool(
            "scaling.strong-plateau",
            late <= 1.25 * early,
            format!("l1(t=2000) = {late:.4e} vs 1.25 * l1(t=500) = {:.4e}", 1.25 * early),
        ));
    }

    Ok(SuiteReport { suite: "scaling".into(), checks })
}

// ---------------------------------------------------------------------------
// Suite 5: risk scaling
// ---------------------------------------------------------------------------

/// Excess-risk slopes of the four recipes over n in {64,...,512}.
pub fn suite_risk_scaling(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let n_list = [64usize, 128, 256, 512];
    let reps = params.sweep_reps;
    let seed = params.seed;
    let mut checks = Vec::new();

    let high = convex_high_noise_sweep(
        &n_list,
        2,
        0.5f64.sqrt(),
        2,
        1.0,
        reps.max(96),
        seed.wrapping_add(51),
        seed.wrapping_add(151),
    )?;
    let slope = high.slope.expect("fit exists");
    checks.push(Check::bool(
        "risk.slope-convex-high-noise",
        (slope + 0.5).abs() <= 0.15,
        format!("excess-risk slope vs n = {slope:.3} (target -0.5 +- 0.15)"),
    ));

    let low = convex_low_noise_sweep(&n_list, reps, seed.wrapping_add(52), seed.wrapping_add(152))?;
    let slope = low.slope.expect("fit exists");
    checks.push(Check::bool(
        "risk.slope-convex-low-noise",
        (slope + 1.0).abs() <= 0.2,
        format!("excess-risk slope vs n = {slope:.3} (target -1.0 +- 0.2)"),
    ));

    let strong = strong_convex_sweep(&n_list, 1.0, 2, reps, seed.wrapping_add(53), seed.wrapping_add(153))?;
    let slope = strong.slope.expect("fit exists");
    checks.push(Check::bool(
        "risk.slope-strongly-convex",
        (slope + 1.0).abs() <= 0.2,
        format!("excess-risk slope vs n = {slope:.3} (target -1.0 +- 0.2)"),
    ));

    let local = local_convex_sweep(
        &n_list,
        6,
        2.0,
        2,
        2,
        1.0,
        reps.max(96),
        seed.wrapping_add(54),
        seed.wrapping_add(154),
    )?;
    let slope = local.slope.expect("fit exists");
    checks.push(Check::bool(
        "risk.slope-local-convex",
        (slope + 0.5).abs() <= 0.15,
        format!("excess-risk slope vs n = {slope:.3} (target -0.5 +- 0.15)"),
    ));

    Ok(SuiteReport { suite: "risk".into(), checks })
}

// ---------------------------------------------------------------------------
// Suite 6: speedup at matched risk
// ---------------------------------------------------------------------------

/// Matched excess risk across the batch sweep (R ∝ 1/b) and the machine
/// sweep (K·R ∝ 1/M): every point within a factor 2 of the baseline.
pub fn suite_speedup(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let mut checks = Vec::new();
    let seed = params.seed;
    let reps = params.sweep_reps;

    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 8, 256, 3.0, seed.wrapping_add(61));
        let sweep = batch_speedup_sweep(&spec, &[2, 4, 8, 16], NoiseRegime::HighNoise, reps, seed.wrapping_add(62))?;
        let baseline = sweep.points[0].excess_risk;
        let mut worst_ratio: f64 = 1.0;
        for p in &sweep.points {
            let ratio = p.excess_risk / baseline;
            worst_ratio = worst_ratio.max(ratio.max(1.0 / ratio));
        }
        let rounds_ok = sweep
            .points
            .windows(2)
            .all(|w| (w[0].steps / w[1].steps - 2.0).abs() < 1e-9);
        checks.push(Check::bool(
            "speedup.batch-matched-risk",
            worst_ratio <= 2.0 && sweep.points.len() == 4 && sweep.skipped.is_empty(),
            format!("worst excess ratio vs b=2 baseline = {worst_ratio:.2} over b in {{2,4,8,16}} (cap 2.0)"),
        ));
        checks.push(Check::bool(
            "speedup.batch-rounds-halve",
            rounds_ok,
            "configured rounds halve exactly when b doubles".into(),
        ));
    }

    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 8, 256, 1.0, seed.wrapping_add(63));
        let sweep = machine_speedup_sweep(&spec, &[1, 2, 4], 2, false, 2.0, reps, seed.wrapping_add(64))?;
        let baseline = sweep.points[0].excess_risk;
        let mut worst_ratio: f64 = 1.0;
        for p in &sweep.points {
            let ratio = p.excess_risk / baseline;
            worst_ratio = worst_ratio.max(ratio.max(1.0 / ratio));
        }
        let steps_ok = sweep
            .points
            .windows(2)
            .all(|w| (w[0].steps / w[1].steps - 2.0).abs() < 0.05);
        checks.push(Check::bool(
            "speedup.machine-matched-risk",
            worst_ratio <= 2.0 && sweep.points.len() == 3 && sweep.skipped.is_empty() && steps_ok,
            format!("worst excess ratio vs M=1 baseline = {worst_ratio:.2} over M in {{1,2,4}} (cap 2.0)"),
        ));
    }

    Ok(SuiteReport { suite: "speedup".into(), checks })
}

// ---------------------------------------------------------------------------
// Suite 7: optimization lemmas
// ---------------------------------------------------------------------------

/// The convex optimization inequality at the teacher, the PL optimization
/// slope in R, and the PL generalization inequality.
pub fn suite_opt_lemmas(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let mut checks = Vec::new();
    let seed = params.seed;
    let reps = params.replicates;

    // convex optimization inequality at w = teacher
    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 8, 64, 0.5, seed.wrapping_add(71));
        let (_, p0) = generate_dataset_rep(&spec, 0, 0)?;
        let spec_l = p0.smoothness;
        let (b, rounds, eta) = (4usize, 100usize, 0.3);
        let results: Result<Vec<(f64, Vec<f64>, f64, f64)>, Error> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let (data, p) = generate_dataset_rep(&spec, rep, 0)?;
                let teacher = p.teacher_w.clone().expect("teacher");
                let cfg = MinibatchConfig::new(
                    b,
                    rounds,
                    StepSchedule::Constant { eta },
                    seed.wrapping_add(72).wrapping_add(rep),
                );
                let traj = run_minibatch_sgd(&p, &data, &cfg)?;
                let risks = traj.risk_series(rounds);
                let mean_risk = risks.iter().sum::<f64>() / rounds as f64;
                let lhs = mean_risk - empirical_risk(&p, &data, &teacher);
                let f1 = risks[0];
                Ok((lhs, risks, dot(&teacher, &teacher), f1))
            })
            .collect();
        let results = results?;
        let lhs_vals: Vec<f64> = results.iter().map(|r| r.0).collect();
        let (lhs_mean, _) = mean_se(&lhs_vals);
        let mut mean_risks = vec![0.0; rounds];
        let mut mean_wsq = 0.0;
        let mut mean_f1 = 0.0;
        for (_, risks, wsq, f1) in &results {
            for (m, &v) in mean_risks.iter_mut().zip(risks.iter()) {
                *m += v / reps as f64;
            }
            mean_wsq += wsq / reps as f64;
            mean_f1 += f1 / reps as f64;
        }
        let inputs = BoundInputs::new()
            .scalar("eta", eta)
            .scalar("L", spec_l)
            .scalar("b", b as f64)
            .scalar("R", rounds as f64)
            .scalar("w_norm_sq", mean_wsq)
            .scalar("F_S_w1", mean_f1)
            .series("risk", mean_risks);
        let report = eval_bound(TheoremId::OptMbConvex, &inputs)?;
        // paired test: per-replicate LHS - RHS has smaller variance than either
        let diffs: Vec<f64> = results
            .iter()
            .map(|(lhs, risks, wsq, f1)| {
                let rhs = 2.0 * eta * spec_l / (b as f64 * rounds as f64) * risks.iter().sum::<f64>()
                    + wsq / (2.0 * eta * rounds as f64)
                    + f1 / rounds as f64;
                lhs - rhs
            })
            .collect();
        let (_, diff_se) = mean_se(&diffs);
        let verdict = verify_inequality((lhs_mean, diff_se), &report)?;
        checks.push(Check::verdict(
            "optlemma.convex-opt-at-teacher",
            verdict,
            format!("mean optimization gap {lhs_mean:.4e} vs bound {:.4e} (paired se {diff_se:.1e})", report.value),
        ));
    }

    // PL optimization decay: slope of the empirical-risk gap vs R
    {
        let spec = GeneratorSpec::new(ProblemKind::QuadraticPl, 32, 8, 0.3, seed.wrapping_add(73));
        let r_list = [50usize, 100, 200, 400, 800];
        let reps_pl = reps.min(32);
        let mut pts = Vec::new();
        for &rounds in &r_list {
            let gaps: Result<Vec<f64>, Error> = (0..reps_pl as u64)
                .into_par_iter()
                .map(|rep| {
                    let (data, p) = generate_dataset_rep(&spec, rep, 0)?;
                    let a = (4.0 * p.smoothness / p.mu).ceil();
                    let cfg = MinibatchConfig {
                        record_risk: false,
                        log_every: rounds,
                        ..MinibatchConfig::new(
                            2,
                            rounds,
                            StepSchedule::PolyStrong { a, mu: p.mu },
                            seed.wrapping_add(74).wrapping_add(rep),
                        )
                    };
                    let traj = run_minibatch_sgd(&p, &data, &cfg)?;
                    let w_s = empirical_minimizer(&p, &data)?;
                    Ok(empirical_risk(&p, &data, &traj.final_w) - empirical_risk(&p, &data, &w_s))
                })
                .collect();
            let (mean, _) = mean_se(&gaps?);
            pts.push((rounds as f64, mean));
        }
        let (slope, _) = fit_scaling_exponent(&pts)?;
        checks.push(Check::bool(
            "optlemma.pl-decay-slope",
            slope <= -0.8,
            format!("empirical-risk gap slope vs R = {slope:.3} (must be <= -0.8)"),
        ));
    }

    // PL generalization inequality when L <= n*mu/4
    {
        let spec = GeneratorSpec::new(ProblemKind::RidgeLeastSquares, 8, 256, 1.0, seed.wrapping_add(75));
        let (_, p0) = generate_dataset_rep(&spec, 0, 0)?;
        let hypothesis_ok = p0.smoothness <= 256.0 * p0.mu / 4.0;
        let a = (4.0 * p0.smoothness / p0.mu).ceil();
        let results: Result<Vec<(f64, f64, f64)>, Error> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let (data, p) = generate_dataset_rep(&spec, rep, 0)?;
                let cfg = MinibatchConfig {
                    record_risk: false,
                    log_every: 200,
                    ..MinibatchConfig::new(
                        4,
                        200,
                        StepSchedule::PolyStrong { a, mu: p.mu },
                        seed.wrapping_add(76).wrapping_add(rep),
                    )
                };
                let traj = run_minibatch_sgd(&p, &data, &cfg)?;
                let f_out = empirical_risk(&p, &data, &traj.final_w);
                let pop = crate::problems::analytic_population_risk(&p, &traj.final_w)
                    .expect("ridge has closed-form population risk");
                let w_s = empirical_minimizer(&p, &data)?;
                let f_min = empirical_risk(&p, &data, &w_s);
                Ok((pop - f_out, f_out, f_out - f_min))
            })
            .collect();
        let results = results?;
        let gaps: Vec<f64> = results.iter().map(|r| r.0).collect();
        let (gen_mean, gen_se) = mean_se(&gaps);
        let f_out_mean = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
        let opt_mean = results.iter().map(|r| r.2).sum::<f64>() / results.len() as f64;
        let inputs = BoundInputs::new()
            .scalar("L", p0.smoothness)
            .scalar("n", 256.0)
            .scalar("mu", p0.mu)
            .scalar("F_S_out", f_out_mean)
            .scalar("opt_gap", opt_mean);
        let report = eval_bound(TheoremId::GenPl, &inputs)?;
        let verdict = verify_inequality((gen_mean, gen_se), &report)?;
        checks.push(Check::verdict(
            "optlemma.gen-pl",
            if hypothesis_ok { verdict } else { Verdict::Violated },
            format!(
                "measured generalization gap {gen_mean:.4e} (se {gen_se:.1e}) vs bound {:.4e}; hypothesis L <= n*mu/4 {}",
                report.value,
                if hypothesis_ok { "holds" } else { "fails" }
            ),
        ));
    }

    Ok(SuiteReport { suite: "optlemmas".into(), checks })
}

// ---------------------------------------------------------------------------
// Suite 8: reproducibility
// ---------------------------------------------------------------------------

/// Identical seeds reproduce stability estimates and sweep CSV bytes exactly.
pub fn suite_reproducibility(params: &SuiteParams) -> Result<SuiteReport, Error> {
    let mut checks = Vec::new();
    let seed = params.seed;

    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 4, 24, 0.4, seed.wrapping_add(81));
        let trainer = TrainerConfig::Minibatch(MinibatchConfig::new(
            2,
            12,
            StepSchedule::Constant { eta: 0.4 },
            seed.wrapping_add(82),
        ));
        let opts = StabilityOptions::new(4, 6);
        let a = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let b = estimate_on_average_stability(&spec, &trainer, &opts)?;
        let ja = serde_json::to_string(&a)?;
        let jb = serde_json::to_string(&b)?;
        checks.push(Check::bool(
            "repro.stability-estimate",
            ja == jb,
            "stability estimate JSON byte-identical across reruns".into(),
        ));
    }

    {
        let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 8, 64, 3.0, seed.wrapping_add(83));
        let s1 = batch_speedup_sweep(&spec, &[2, 4], NoiseRegime::HighNoise, 3, seed.wrapping_add(84))?;
        let s2 = batch_speedup_sweep(&spec, &[2, 4], NoiseRegime::HighNoise, 3, seed.wrapping_add(84))?;
        let mut c1 = Vec::new();
        let mut c2 = Vec::new();
        s1.write_csv(&mut c1)?;
        s2.write_csv(&mut c2)?;
        checks.push(Check::bool(
            "repro.sweep-csv",
            c1 == c2,
            "sweep CSV byte-identical across reruns".into(),
        ));
    }

    Ok(SuiteReport { suite: "repro".into(), checks })
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

/// Runs a suite by name ("all" runs every suite in order).
pub fn run_suite(name: &str, params: &SuiteParams) -> Result<Vec<SuiteReport>, Error> {
    let all = ["exact", "reductions", "stability", "scaling", "risk", "speedup", "optlemmas", "repro"];
    let names: Vec<&str> = if name == "all" { all.to_vec() } else { vec![name] };
    let mut out = Vec::new();
    for n in names {
        let report = match n {
            "exact" => suite_exact(params)?,
            "reductions" => suite_reductions(params)?,
            "stability" => suite_stability_inequalities(params)?,
            "scaling" => suite_stability_scaling(params)?,
            "risk" => suite_risk_scaling(params)?,
            "speedup" => suite_speedup(params)?,
            "optlemmas" => suite_opt_lemmas(params)?,
            "repro" => suite_reproducibility(params)?,
            other => return Err(Error::Config(format!("unknown suite `{other}`"))),
        };
        out.push(report);
    }
    Ok(out)
}
