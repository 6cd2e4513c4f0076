//! Phase 2: exact recovery by LP rounding.
//!
//! Minimize `ζ(q) = (1/np) Σᵢ ‖ȳᵢ ⊛ q‖₁` over the affine slice `⟨r, q⟩ = 1`,
//! where `r` is the Phase-1 iterate. The projected subgradient update
//! `q⁺ = q − τ_k P_{r⊥} ∂ζ(q)` with geometrically decaying `τ_k = η^k τ₀`
//! converges at a linear rate thanks to the sharpness of ζ around the
//! solution; the feasibility `⟨r, q⟩ = 1` is preserved because every step
//! lives in `r⊥`.

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

use crate::error::{McsbdError, Result};
use crate::fftconv;
use crate::losses::{self, LossSpec};
use crate::model::GroundTruth;
use crate::precond::PreconditionedSet;

/// Projected subgradient configuration.
#[derive(Debug, Clone, Copy)]
pub struct RoundingConfig {
    /// Initial stepsize τ₀ > 0.
    pub tau0: f64,
    /// Geometric decay rate, strictly inside (0, 1).
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `τ_k · ‖P_{r⊥} g‖ < tol`: further movement is below float
    /// resolution.
    pub tol: f64,
}

impl Default for RoundingConfig {
    /// Practical schedule: the geometric sum of steps `τ₀/(1−η) ≈ 3.3`
    /// comfortably exceeds the unit diameter of the feasible region.
    fn default() -> Self {
        Self { tau0: 0.1, eta: 0.97, max_iters: 2000, tol: 1e-12 }
    }
}

impl RoundingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau0 <= 0.0 {
            return Err(McsbdError::InvalidParameter(format!(
                "rounding tau0 must be positive, got {}",
                self.tau0
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(McsbdError::InvalidParameter(format!(
                "rounding eta must lie strictly inside (0, 1), got {}",
                self.eta
            )));
        }
        if self.max_iters == 0 {
            return Err(McsbdError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if self.tol < 0.0 {
            return Err(McsbdError::InvalidParameter("tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// One trace row per subgradient iteration.
#[derive(Debug, Clone, Copy)]
pub struct RoundingTraceRecord {
    pub iter: usize,
    pub zeta: f64,
    pub tau: f64,
    pub step_norm: f64,
    pub dist: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RoundingOutcome {
    pub q: Array1<f64>,
    pub trace: Vec<RoundingTraceRecord>,
    /// Running minimum of ζ along the iterates (the subgradient method is
    /// not monotone; the running best is).
    pub best_zeta: f64,
    pub iters: usize,
}

/// Sharpness probe statistics over random feasible points.
#[derive(Debug, Clone, Copy)]
pub struct SharpnessStats {
    pub min_ratio: f64,
    pub mean_ratio: f64,
    pub samples: usize,
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// A subgradient of `ζ(q) = (1/np) Σᵢ ‖ȳᵢ ⊛ q‖₁`. Identical code path (and
/// therefore bit-identical output) to the ℓ¹ Euclidean gradient.
pub fn lp_subgradient(pre: &PreconditionedSet, q: &Array1<f64>) -> Result<Array1<f64>> {
    losses::loss_euclid_grad(pre, q, &LossSpec::l1())
}

fn check_unit(r: &Array1<f64>) -> Result<()> {
    let nr = norm(r);
    if (nr - 1.0).abs() > 1e-9 {
        return Err(McsbdError::ContractViolation(format!(
            "LP rounding requires a unit-norm warm start, got ‖r‖ = {nr}"
        )));
    }
    Ok(())
}

/// Run the projected subgradient method from warm start `r` (which must be
/// unit-norm; the first iterate is `q⁰ = r`).
pub fn lp_round(
    pre: &PreconditionedSet,
    r: &Array1<f64>,
    cfg: &RoundingConfig,
) -> Result<RoundingOutcome> {
    lp_round_monitored(pre, r, cfg, None)
}

/// As [`lp_round`], recording `‖q − target‖` per iteration when a fixed
/// feasible target is supplied (diagnostic use).
pub fn lp_round_monitored(
    pre: &PreconditionedSet,
    r: &Array1<f64>,
    cfg: &RoundingConfig,
    target: Option<&Array1<f64>>,
) -> Result<RoundingOutcome> {
    cfg.validate()?;
    if r.len() != pre.n() {
        return Err(McsbdError::DimensionMismatch(format!(
            "warm start has length {}, channels have length {}",
            r.len(),
            pre.n()
        )));
    }
    check_unit(r)?;

    let mut q = r.clone();
    let mut tau = cfg.tau0;
    let mut trace = Vec::new();
    let mut best_zeta = f64::INFINITY;
    let mut iters = 0;

    for k in 0..cfg.max_iters {
        let (zeta, g) = losses::loss_value_and_grad(pre, &q, &LossSpec::l1())?;
        best_zeta = best_zeta.min(zeta);
        let pg = &g - &(r * r.dot(&g));
        let step_norm = tau * norm(&pg);
        let dist = target.map(|t| norm(&(&q - t)));
        trace.push(RoundingTraceRecord { iter: k, zeta, tau, step_norm, dist });
        iters = k + 1;
        if step_norm < cfg.tol {
            break;
        }
        q = &q - &(&pg * tau);
        tau *= cfg.eta;
    }

    Ok(RoundingOutcome { q, trace, best_zeta, iters })
}

/// The feasible target for a warm start `r`: the signed shift of the unit
/// target `g` closest to `r`, rescaled onto the slice `⟨r, q⟩ = 1`.
pub fn feasible_target(r: &Array1<f64>, unit_target: &Array1<f64>) -> Result<Array1<f64>> {
    if r.len() != unit_target.len() {
        return Err(McsbdError::DimensionMismatch(format!(
            "r has length {}, target has length {}",
            r.len(),
            unit_target.len()
        )));
    }
    // ⟨r, s_ℓ[g]⟩ over all ℓ in one correlation.
    let corr = fftconv::circ_corr(unit_target, r)?;
    let mut best_ell = 0usize;
    for (ell, c) in corr.iter().enumerate() {
        if c.abs() > corr[best_ell].abs() {
            best_ell = ell;
        }
    }
    let inner = corr[best_ell];
    if inner.abs() < 1e-12 {
        return Err(McsbdError::DegenerateInput(
            "warm start is orthogonal to every shift of the target".into(),
        ));
    }
    let shifted = fftconv::cyclic_shift(unit_target, best_ell as i64);
    Ok(&shifted / inner)
}

/// Empirical sharpness of ζ around the target: over `samples` random feasible
/// points `q = target + t·w` (w ∈ r⊥), report the min and mean of
/// `(ζ(q) − ζ(target)) / ‖q − target‖`. Positivity of the minimum is the
/// property of interest; no constant is asserted.
pub fn sharpness_probe(
    pre: &PreconditionedSet,
    r: &Array1<f64>,
    truth: &GroundTruth,
    samples: usize,
    seed: u64,
) -> Result<SharpnessStats> {
    check_unit(r)?;
    let unit_target = crate::recover::preconditioned_inverse_target(&truth.kernel, pre)?;
    let target = feasible_target(r, &unit_target)?;
    let zeta_target = losses::loss_value(pre, &target, &LossSpec::l1())?;

    let n = pre.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    let mut sum_ratio = 0.0;
    let mut count = 0usize;
    while count < samples {
        let d = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let mut w = &d - &(r * r.dot(&d));
        let wn = norm(&w);
        if wn == 0.0 {
            continue;
        }
        w /= wn;
        // Radii spread over two decades around the warm-start scale.
        let t = 10f64.powf(rng.gen_range(-2.0..0.3));
        let q = &target + &(&w * t);
        let zeta = losses::loss_value(pre, &q, &LossSpec::l1())?;
        let ratio = (zeta - zeta_target) / t;
        min_ratio = min_ratio.min(ratio);
        sum_ratio += ratio;
        count += 1;
    }
    Ok(SharpnessStats { min_ratio, mean_ratio: sum_ratio / count as f64, samples: count })
}

/// Write the trace as CSV: `iter,zeta,tau,step_norm[,dist]`.
pub fn export_rounding_csv(outcome: &RoundingOutcome, path: &Path) -> Result<()> {
    let with_dist = outcome.trace.iter().any(|r| r.dist.is_some());
    let mut out = String::new();
    out.push_str(if with_dist {
        "iter,zeta,tau,step_norm,dist\n"
    } else {
        "iter,zeta,tau,step_norm\n"
    });
    for r in &outcome.trace {
        if with_dist {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.iter,
                r.zeta,
                r.tau,
                r.step_norm,
                r.dist.unwrap_or(f64::NAN)
            ));
        } else {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.iter, r.zeta, r.tau, r.step_norm));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| McsbdError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| McsbdError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{delta, forward, sample_bg_signals, KernelSpec};
    use crate::precond::{compute_preconditioner, PreconditionedSet};
    use crate::sphere;
    use approx::assert_abs_diff_eq;

    #[test]
    fn config_validation() {
        assert!(RoundingConfig::default().validate().is_ok());
        assert!(RoundingConfig { eta: 1.0, ..Default::default() }.validate().is_err());
        assert!(RoundingConfig { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(RoundingConfig { tau0: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn geometric_schedule() {
        // τ^(k) = η^k τ₀; with τ₀ = 0.1, η = 0.5 the third step uses 0.0125.
        let n = 8;
        let pre = PreconditionedSet::from_raw_channels(
            sample_bg_signals(n, 4, 0.5, 3).unwrap(),
            0.5,
        )
        .unwrap();
        let r = sphere::init_random_sphere(n, 1);
        let cfg = RoundingConfig { tau0: 0.1, eta: 0.5, max_iters: 5, tol: 0.0 };
        let out = lp_round(&pre, &r, &cfg).unwrap();
        assert_abs_diff_eq!(out.trace[3].tau, 0.0125, epsilon = 1e-15);
    }

    #[test]
    fn subgradient_on_delta_channel_is_scaled_sign() {
        let n = 6;
        let pre = PreconditionedSet::from_raw_channels(vec![delta(n)], 0.25).unwrap();
        let q = Array1::from_vec(vec![0.4, -0.2, 0.3, 0.7, -0.5, 0.1]);
        let g = lp_subgradient(&pre, &q).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(g[i], crate::losses::sign(q[i]) / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn subgradient_with_positive_products() {
        // All products strictly positive: g = (1/np) Σ y̌ᵢ ⊛ 1.
        let n = 5;
        let channels = vec![Array1::from_vec(vec![0.2, 0.1, 0.3, 0.05, 0.15])];
        let pre = PreconditionedSet::from_raw_channels(channels.clone(), 0.5).unwrap();
        let q = Array1::from_elem(n, 1.0);
        let g = lp_subgradient(&pre, &q).unwrap();
        let ones = Array1::from_elem(n, 1.0);
        let expected = fftconv::circ_corr(&channels[0], &ones).unwrap() / n as f64;
        for i in 0..n {
            assert_abs_diff_eq!(g[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn subgradient_bit_identical_to_l1_grad() {
        let pre = PreconditionedSet::from_raw_channels(
            sample_bg_signals(16, 3, 0.4, 9).unwrap(),
            0.4,
        )
        .unwrap();
        let q = sphere::init_random_sphere(16, 5);
        let a = lp_subgradient(&pre, &q).unwrap();
        let b = crate::losses::loss_euclid_grad(&pre, &q, &LossSpec::l1()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_unit_warm_start_rejected() {
        let pre = PreconditionedSet::from_raw_channels(
            sample_bg_signals(8, 2, 0.5, 2).unwrap(),
            0.5,
        )
        .unwrap();
        let r = Array1::from_elem(8, 1.0);
        assert!(matches!(
            lp_round(&pre, &r, &RoundingConfig::default()),
            Err(McsbdError::ContractViolation(_))
        ));
    }

    #[test]
    fn iterates_stay_feasible_and_running_best_decreases() {
        let truth = crate::model::GroundTruth::synthesize(24, 30, 0.25, 50).unwrap();
        let obs = forward(&truth).unwrap();
        let pre = compute_preconditioner(&obs, 0.25).unwrap();
        let r = sphere::init_random_sphere(24, 8);
        let cfg = RoundingConfig { max_iters: 300, ..Default::default() };
        let out = lp_round(&pre, &r, &cfg).unwrap();
        assert!((r.dot(&out.q) - 1.0).abs() <= 1e-10);

        let mut running = f64::INFINITY;
        let mut bests = Vec::new();
        for rec in &out.trace {
            running = running.min(rec.zeta);
            bests.push(running);
        }
        for w in bests.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_abs_diff_eq!(out.best_zeta, running, epsilon = 0.0);
    }

    #[test]
    fn subgradient_in_span_r_leaves_iterate_fixed() {
        // Single delta channel and q = r = e₀: ∂ζ = e₀/n lies in span(r), so
        // the projection annihilates it and the iterate never moves.
        let n = 8;
        let pre = PreconditionedSet::from_raw_channels(vec![delta(n)], 0.5).unwrap();
        let r = delta(n);
        let cfg = RoundingConfig { max_iters: 20, tol: 0.0, ..Default::default() };
        let out = lp_round(&pre, &r, &cfg).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(out.q[i], r[i], epsilon = 1e-14);
        }
    }

    /// Gaussian elimination with partial pivoting; test-only helper.
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| {
                a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
            })?;
            if a[piv][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for row in (col + 1)..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for col in (0..n).rev() {
            let mut acc = b[col];
            for k in (col + 1)..n {
                acc -= a[col][k] * x[k];
            }
            x[col] = acc / a[col][col];
        }
        Some(x)
    }

    /// Brute-force LP oracle: enumerate vertex solutions of
    /// min ‖Mq‖₁ s.t. ⟨r,q⟩ = 1 by zeroing every (n−1)-subset of rows of M.
    fn lp_brute_force(pre: &PreconditionedSet, r: &Array1<f64>) -> (Array1<f64>, f64) {
        let n = pre.n();
        let p = pre.p();
        // Rows of M: row (i, k) is the k-th row of the circulant of channel i,
        // i.e. (Mq)_{i,k} = Σ_j ȳᵢ[(k−j) mod n] q_j.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for ch in pre.channels() {
            for k in 0..n {
                rows.push((0..n).map(|j| ch[(k + n - j) % n]).collect());
            }
        }
        let m = rows.len();
        assert_eq!(m, n * p);

        let zeta = |q: &Array1<f64>| -> f64 {
            let mut acc = 0.0;
            for row in &rows {
                let v: f64 = row.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
                acc += v.abs();
            }
            acc / (n * p) as f64
        };

        // Enumerate subsets of size n−1.
        let mut best: Option<(Array1<f64>, f64)> = None;
        let mut subset: Vec<usize> = (0..n - 1).collect();
        loop {
            let mut a: Vec<Vec<f64>> = subset.iter().map(|&i| rows[i].clone()).collect();
            a.push(r.to_vec());
            let mut b = vec![0.0; n - 1];
            b.push(1.0);
            if let Some(x) = solve_dense(a, b) {
                let q = Array1::from_vec(x);
                if q.iter().all(|v| v.is_finite()) {
                    let z = zeta(&q);
                    if best.as_ref().map_or(true, |(_, bz)| z < *bz) {
                        best = Some((q, z));
                    }
                }
            }
            // Next combination.
            let mut i = subset.len();
            loop {
                if i == 0 {
                    return best.expect("at least one solvable vertex");
                }
                i -= 1;
                if subset[i] != i + m - subset.len() {
                    subset[i] += 1;
                    for j in (i + 1)..subset.len() {
                        subset[j] = subset[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_lp_on_tiny_instances() {
        for seed in [1u64, 2, 3] {
            let n = 5;
            let p = 3;
            let theta = 0.5;
            let truth = crate::model::GroundTruth::synthesize_with(
                n,
                p,
                theta,
                seed,
                &KernelSpec::UniformSphere,
            )
            .unwrap();
            let obs = forward(&truth).unwrap();
            let pre = match compute_preconditioner(&obs, theta) {
                Ok(pre) => pre,
                // A zero aggregate bin can occur at these tiny sizes.
                Err(_) => continue,
            };
            let unit_target =
                crate::recover::preconditioned_inverse_target(&truth.kernel, &pre).unwrap();
            // Warm start near the target, as produced by Phase 1.
            let noise = sphere::init_random_sphere(n, seed + 100) * 0.05;
            let r = sphere::retract(&(&unit_target + &noise)).unwrap();

            // Tiny instances lack concentration, so the optimum can sit a few
            // kink faces away from the warm start; a slow schedule lets the
            // subgradient zigzag reach it.
            let cfg = RoundingConfig { tau0: 0.5, eta: 0.999, max_iters: 20_000, tol: 1e-15 };
            let ours = lp_round(&pre, &r, &cfg).unwrap();
            let (brute_q, brute_zeta) = lp_brute_force(&pre, &r);

            let zeta_ours =
                crate::losses::loss_value(&pre, &ours.q, &LossSpec::l1()).unwrap();
            assert!(
                zeta_ours <= brute_zeta + 1e-5,
                "seed {seed}: ζ {zeta_ours} vs brute {brute_zeta}"
            );
            let diff = (&ours.q - &brute_q).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
            assert!(diff < 1e-5, "seed {seed}: iterate differs from LP vertex by {diff}");
        }
    }

    #[test]
    fn sharpness_positive_and_linear_on_rays() {
        let n = 16;
        let p = 800;
        let theta = 0.25;
        let truth = crate::model::GroundTruth::synthesize_with(
            n,
            p,
            theta,
            4,
            &KernelSpec::Explicit(delta(n)),
        )
        .unwrap();
        let obs = forward(&truth).unwrap();
        let pre = compute_preconditioner(&obs, theta).unwrap();
        let unit_target =
            crate::recover::preconditioned_inverse_target(&truth.kernel, &pre).unwrap();
        let r = sphere::retract(
            &(&unit_target + &(sphere::init_random_sphere(n, 9) * 0.03)),
        )
        .unwrap();

        let stats = sharpness_probe(&pre, &r, &truth, 200, 11).unwrap();
        assert!(stats.min_ratio > 0.0, "min ratio {}", stats.min_ratio);

        // Along a fixed feasible ray far from the kink set, ζ grows linearly:
        // the growth ratio stabilizes as the radius doubles.
        let target = feasible_target(&r, &unit_target).unwrap();
        let d = sphere::init_random_sphere(n, 21);
        let w = &d - &(&r * r.dot(&d));
        let w = &w / w.dot(&w).sqrt();
        let z0 = losses::loss_value(&pre, &target, &LossSpec::l1()).unwrap();
        let ratio_at = |t: f64| {
            let z = losses::loss_value(&pre, &(&target + &(&w * t)), &LossSpec::l1()).unwrap();
            (z - z0) / t
        };
        let r20 = ratio_at(20.0);
        let r40 = ratio_at(40.0);
        assert!(
            (r20 - r40).abs() / r20.abs() < 0.05,
            "far-field growth should be linear: ratio {r20} at t=20 vs {r40} at t=40"
        );
    }
}
