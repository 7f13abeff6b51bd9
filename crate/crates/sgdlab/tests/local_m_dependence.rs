//! Machine-count dependence of local SGD stability: the l1 estimate is
//! insensitive to M at fixed K·R and η, while the l2 estimate decreases in M
//! in the regime where the variance term of its bound dominates.

use sgdlab::bounds::{eval_bound, BoundInputs, TheoremId};
use sgdlab::optimizers::{LocalConfig, StepSchedule};
use sgdlab::stability::{estimate_on_average_stability, StabilityOptions, TrainerConfig};
use sgdlab::problems::{GeneratorSpec, ProblemKind};

fn estimate(n: usize, machines: usize, rounds: usize, reps: usize) -> sgdlab::stability::StabilityEstimate {
    let spec = GeneratorSpec::new(ProblemKind::LeastSquares, 16, n, 0.5, 90);
    let cfg = LocalConfig::new(machines, 2, rounds, StepSchedule::Constant { eta: 0.3 }, 91);
    let trainer = TrainerConfig::Local(cfg);
    let mut opts = StabilityOptions::new(reps, 32);
    opts.coupling_traces = true;
    estimate_on_average_stability(&spec, &trainer, &opts).unwrap()
}

#[test]
fn l1_insensitive_to_machine_count() {
    // K·R = 16 per machine for every M; enough index hits that the l1
    // estimates resolve well inside a 25% band.
    let l1s: Vec<f64> = [1usize, 2, 4, 8].iter().map(|&m| estimate(64, m, 8, 48).l1).collect();
    let max = l1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = l1s.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(max / min < 1.25, "l1 across M in {{1,2,4,8}}: {l1s:?}");
}

#[test]
fn l2_decreases_in_machines_when_variance_term_dominates() {
    // short horizon K·R = 4 at n = 256: the variance term of the l2 bound
    // dominates its expectation term by more than 5x even at M = 8
    let e1 = estimate(256, 1, 2, 48);
    let e8 = estimate(256, 8, 2, 48);

    let inputs = BoundInputs::new()
        .scalar("L", 1.0)
        .scalar("n", 256.0)
        .scalar("M", 8.0)
        .scalar("coupling_term_sq_mean", 0.0)
        .series("eta", e8.local_etas.clone().unwrap())
        .series("risk", e8.local_mean_risks.clone().unwrap());
    let first_term = eval_bound(TheoremId::LocalL2, &inputs).unwrap().value;
    let with_coupling = inputs.scalar("coupling_term_sq_mean", e8.coupling_term_sq_mean.unwrap());
    let total = eval_bound(TheoremId::LocalL2, &with_coupling).unwrap().value;
    let second_term = total - first_term;
    assert!(
        first_term > 5.0 * second_term,
        "variance term {first_term:.3e} must dominate expectation term {second_term:.3e}"
    );

    let se = 3.0 * (e1.l2_sq_se + e8.l2_sq_se);
    assert!(
        e8.l2_sq <= e1.l2_sq + se,
        "l2_sq(M=8) = {:.3e} vs l2_sq(M=1) = {:.3e} (3se {:.1e})",
        e8.l2_sq,
        e1.l2_sq,
        se
    );
}
