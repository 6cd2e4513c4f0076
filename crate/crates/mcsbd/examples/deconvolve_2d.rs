//! 2D pipeline on a synthetic microscopy-style stack: sparse point sources
//! observed through a truncated Gaussian PSF on the torus, recovered by the
//! same two-stage method on the Frobenius sphere.
//!
//!     cargo run --release --example deconvolve_2d

use mcsbd::losses::LossSpec;
use mcsbd::rounding::RoundingConfig;
use mcsbd::solver2d::*;

fn main() -> mcsbd::Result<()> {
    let (n, p, theta) = (32, 100, 0.05);
    let psf = gaussian_psf(n, n, 8, 0.8)?;
    let diag = diagnose_kernel2d(&psf, 1e-10)?;
    println!("PSF: 8x8 truncated Gaussian on {n}x{n}, kappa = {:.1}", diag.kappa);

    let truth = GroundTruth2d::synthesize(&psf, p, theta, 42)?;
    let stack = forward2d(&truth)?;
    let pre = precondition2d(&stack, theta)?;

    let cfg = Rgd2dConfig {
        max_iters: 300,
        ..Rgd2dConfig::new(LossSpec::huber(1e-2)?, Init2d::RandomSphere { seed: 1 })
    };
    let phase1 = rgd2d_solve(&pre, &cfg, None)?;
    println!(
        "phase 1 stopped after {} iterations (rho = {:.4})",
        phase1.state.iter,
        rho_acc2d(&truth.kernel, &pre, &phase1.state.z)?
    );

    let phase2 = lp_round2d(&pre, &phase1.state.z, &RoundingConfig::default())?;
    let rho = rho_acc2d(&truth.kernel, &pre, &phase2.z)?;
    let (a_star, x_star) = reconstruct2d(&pre, &phase2.z)?;
    let dist = signed_shift_dist2d(&a_star, &truth.kernel)?;
    println!("phase 2: rho = {rho:.6}, signed-shift PSF distance = {dist:.3e}");
    println!("recovered {} activation maps of shape {:?}", x_star.len(), a_star.dim());
    Ok(())
}
