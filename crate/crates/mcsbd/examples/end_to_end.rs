//! Full two-stage recovery on one synthetic instance: synthesize data,
//! whiten, run Riemannian gradient descent, refine with LP rounding, and
//! score the result against the ground truth.
//!
//!     cargo run --release --example end_to_end

use mcsbd::losses::LossSpec;
use mcsbd::model::{forward, GroundTruth};
use mcsbd::precond::compute_preconditioner;
use mcsbd::recover::{score_recovery, DEFAULT_SUCCESS_THRESHOLD};
use mcsbd::rounding::{lp_round, RoundingConfig};
use mcsbd::sphere::{rgd_solve_monitored, DistanceMonitor, InitMode, RgdConfig};

fn main() -> mcsbd::Result<()> {
    let (n, p, theta, seed) = (100, 50, 0.25, 7);
    println!("synthesizing: n={n}, p={p}, theta={theta}, seed={seed}");
    let truth = GroundTruth::synthesize(n, p, theta, seed)?;
    let obs = forward(&truth)?;

    let pre = compute_preconditioner(&obs, theta)?;
    let monitor = DistanceMonitor::from_truth(&truth, &pre)?;

    // Phase 1: Riemannian gradient descent with Armijo linesearch on the
    // Huber objective, from a random point on the sphere.
    let cfg = RgdConfig {
        max_iters: 100,
        ..RgdConfig::new(LossSpec::huber(1e-2)?, InitMode::RandomSphere { seed: 99 })
    };
    let phase1 = rgd_solve_monitored(&pre, &cfg, Some(&monitor))?;
    println!(
        "phase 1: {} iterations, final objective {:.6}, distance to target {:.3e}",
        phase1.state.trace.len(),
        phase1.state.trace.last().map(|r| r.loss).unwrap_or(f64::NAN),
        monitor.distance(&phase1.state.q),
    );

    // Phase 2: projected subgradient on the LP rounding program.
    let phase2 = lp_round(&pre, &phase1.state.q, &RoundingConfig::default())?;
    let q_unit = &phase2.q / phase2.q.dot(&phase2.q).sqrt();
    println!(
        "phase 2: {} iterations, distance to target {:.3e}",
        phase2.iters,
        monitor.distance(&q_unit),
    );

    let result = score_recovery(&truth, &pre, &phase2.q, DEFAULT_SUCCESS_THRESHOLD)?;
    println!(
        "recovery: rho_acc = {:.6}, signed-shift kernel distance = {:.3e}, success = {}",
        result.rho_acc, result.shift_dist, result.success
    );
    Ok(())
}
