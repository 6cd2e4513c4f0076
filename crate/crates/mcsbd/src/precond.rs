//! Data-driven spectral preconditioning.
//!
//! The whitening filter is computed entirely in the circulant (FFT-diagonal)
//! representation: `v = F⁻¹((1/(θnp) Σᵢ |ŷᵢ|²)^{⊙−1/2})` and the
//! preconditioned channels are `ȳᵢ = yᵢ ⊛ v`. The dense matrix form is never
//! materialized outside of small-n equivalence tests.

use ndarray::Array1;
use rustfft::num_complex::Complex;

use crate::error::{McsbdError, Result};
use crate::fftconv::{self, Spectrum};
use crate::model::{GroundTruth, ObservationSet};

/// Observations after whitening, with cached channel spectra.
#[derive(Debug, Clone)]
pub struct PreconditionedSet {
    filter: Array1<f64>,
    channels: Vec<Array1<f64>>,
    spectra: Vec<Spectrum>,
    theta: f64,
}

impl PreconditionedSet {
    /// The preconditioning filter `v`.
    pub fn filter(&self) -> &Array1<f64> {
        &self.filter
    }

    /// Preconditioned channels `ȳᵢ`.
    pub fn channels(&self) -> &[Array1<f64>] {
        &self.channels
    }

    /// Cached spectra `F(ȳᵢ)`.
    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.filter.len()
    }

    pub fn p(&self) -> usize {
        self.channels.len()
    }

    /// Wrap raw channels without whitening (`v = δ`). Used by geometry probes
    /// and tests that work on the orthogonal-case objective directly.
    pub fn from_raw_channels(channels: Vec<Array1<f64>>, theta: f64) -> Result<Self> {
        let obs = ObservationSet::new(channels)?;
        let spectra: Vec<Spectrum> = obs.channels().iter().map(fftconv::fft).collect();
        Ok(Self {
            filter: crate::model::delta(obs.n()),
            channels: obs.channels().to_vec(),
            spectra,
            theta,
        })
    }
}

/// Per-frequency aggregate power `(1/(θnp)) Σᵢ |ŷᵢ[k]|²`.
///
/// The per-channel contributions at each bin are sorted before summation, so
/// the result is bit-identical under any permutation of the channels, and the
/// sum is compensated (Kahan) for reduction-order robustness.
fn aggregate_power(spectra: &[Spectrum], theta: f64, n: usize) -> Vec<f64> {
    let p = spectra.len();
    let scale = 1.0 / (theta * n as f64 * p as f64);
    let mut agg = vec![0.0; n];
    let mut bin = vec![0.0; p];
    for k in 0..n {
        for (i, s) in spectra.iter().enumerate() {
            bin[i] = s[k].norm_sqr();
        }
        bin.sort_by(|a, b| a.partial_cmp(b).expect("power values are finite"));
        let mut sum = 0.0;
        let mut comp = 0.0;
        for &v in &bin {
            let y = v - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        agg[k] = sum * scale;
    }
    agg
}

/// Compute the whitening filter and apply it to every channel.
///
/// `theta` is the sparsity level used for normalization. It is rarely known
/// exactly in practice; misspecifying it rescales the filter (and hence the
/// solver iterate) uniformly and cannot change any argmax over the sphere,
/// so a rough estimate is safe.
pub fn compute_preconditioner(obs: &ObservationSet, theta: f64) -> Result<PreconditionedSet> {
    if theta <= 0.0 {
        return Err(McsbdError::InvalidParameter(format!(
            "theta must be positive, got {theta}"
        )));
    }
    let n = obs.n();
    let spectra_y: Vec<Spectrum> = obs.channels().iter().map(fftconv::fft).collect();
    let agg = aggregate_power(&spectra_y, theta, n);
    if let Some(bin) = agg.iter().position(|&a| a <= 0.0) {
        return Err(McsbdError::DegenerateData { bin });
    }
    let v_hat: Spectrum = Array1::from_iter(agg.iter().map(|&a| Complex::new(a.powf(-0.5), 0.0)));
    let filter = fftconv::ifft(&v_hat);
    let mut channels = Vec::with_capacity(obs.p());
    let mut spectra = Vec::with_capacity(obs.p());
    for s in &spectra_y {
        let bar: Spectrum = Array1::from_shape_fn(n, |k| s[k] * v_hat[k]);
        channels.push(fftconv::ifft(&bar));
        spectra.push(bar);
    }
    Ok(PreconditionedSet { filter, channels, spectra, theta })
}

/// Diagnostic: spectral operator distance `‖R Q⁻¹ − I‖₂` between the
/// whitened circulant `R = C_a C_v` and its orthogonal idealization
/// `Q = C_a (C_aᵀ C_a)^{−1/2}`. All factors are circulant, so the norm is the
/// max over frequencies of `| |âₖ| v̂ₖ − 1 |`. Requires ground truth.
pub fn orthogonality_defect(truth: &GroundTruth, pre: &PreconditionedSet) -> Result<f64> {
    if truth.n() != pre.n() {
        return Err(McsbdError::DimensionMismatch(format!(
            "truth has n={}, preconditioned set has n={}",
            truth.n(),
            pre.n()
        )));
    }
    let a_hat = fftconv::fft(&truth.kernel);
    if a_hat.iter().any(|c| c.norm() == 0.0) {
        return Err(McsbdError::NonInvertible(
            "ground-truth kernel has a zero spectral bin".into(),
        ));
    }
    let v_hat = fftconv::fft(pre.filter());
    let defect = a_hat
        .iter()
        .zip(v_hat.iter())
        .map(|(a, v)| (a.norm() * v - Complex::new(1.0, 0.0)).norm())
        .fold(0.0_f64, f64::max);
    Ok(defect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{delta, forward, GroundTruth, KernelSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn instance(n: usize, p: usize, theta: f64, seed: u64) -> (GroundTruth, PreconditionedSet) {
        let truth = GroundTruth::synthesize(n, p, theta, seed).unwrap();
        let obs = forward(&truth).unwrap();
        let pre = compute_preconditioner(&obs, theta).unwrap();
        (truth, pre)
    }

    #[test]
    fn flat_spectrum_gives_delta_filter() {
        // Single channel y = δ with θ·n·p = 1 makes the aggregate spectrum
        // identically one, so v = δ and ȳ = y.
        let n = 8;
        let theta = 1.0 / n as f64;
        let obs = ObservationSet::new(vec![delta(n)]).unwrap();
        let pre = compute_preconditioner(&obs, theta).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(pre.filter()[i], delta(n)[i], epsilon = 1e-12);
            assert_abs_diff_eq!(pre.channels()[0][i], delta(n)[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn filter_scaling_law() {
        // Doubling the observations halves the filter (spectral −1/2 power)
        // and leaves the preconditioned channels unchanged.
        let truth = GroundTruth::synthesize(16, 3, 0.4, 3).unwrap();
        let obs = forward(&truth).unwrap();
        let doubled =
            ObservationSet::new(obs.channels().iter().map(|y| y * 2.0).collect()).unwrap();
        let pre1 = compute_preconditioner(&obs, 0.4).unwrap();
        let pre2 = compute_preconditioner(&doubled, 0.4).unwrap();
        for i in 0..16 {
            assert_abs_diff_eq!(pre2.filter()[i], 0.5 * pre1.filter()[i], epsilon = 1e-12);
            assert_abs_diff_eq!(pre2.channels()[1][i], pre1.channels()[1][i], epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_kernel_whitening_approaches_signals() {
        // a = δ: with many channels ȳᵢ ≈ c·xᵢ for a scalar c.
        let n = 32;
        let p = 400;
        let theta = 0.25;
        let truth =
            GroundTruth::synthesize_with(n, p, theta, 9, &KernelSpec::Explicit(delta(n))).unwrap();
        let obs = forward(&truth).unwrap();
        let pre = compute_preconditioner(&obs, theta).unwrap();
        let mut rel = Vec::new();
        for (bar, x) in pre.channels().iter().zip(truth.signals.iter()) {
            let xx = x.dot(x);
            if xx == 0.0 {
                continue;
            }
            let c = bar.dot(x) / xx;
            let resid = (bar - &(x * c)).mapv(|v| v * v).sum().sqrt();
            rel.push(resid / xx.sqrt());
        }
        rel.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = rel[rel.len() / 2];
        assert!(median < 0.2, "median relative deviation {median}");
    }

    #[test]
    fn zero_aggregate_bin_is_reported() {
        // A constant channel has power only in bin 0.
        let obs = ObservationSet::new(vec![Array1::from_elem(6, 1.0)]).unwrap();
        let err = compute_preconditioner(&obs, 0.5).unwrap_err();
        match err {
            McsbdError::DegenerateData { bin } => assert_eq!(bin, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn channels_consistent_with_filter_and_spectra() {
        let truth = GroundTruth::synthesize(24, 5, 0.3, 21).unwrap();
        let obs = forward(&truth).unwrap();
        let pre = compute_preconditioner(&obs, 0.3).unwrap();
        for (i, (bar, y)) in pre.channels().iter().zip(obs.channels().iter()).enumerate() {
            let recomputed = fftconv::circ_conv(y, pre.filter()).unwrap();
            for k in 0..24 {
                assert_abs_diff_eq!(bar[k], recomputed[k], epsilon = 1e-10);
            }
            let spec = fftconv::fft(bar);
            for k in 0..24 {
                assert!(
                    (spec[k] - pre.spectra()[i][k]).norm() < 1e-10,
                    "spectrum {i} inconsistent at bin {k}"
                );
            }
        }
    }

    #[test]
    fn filter_invariant_under_channel_permutation() {
        let truth = GroundTruth::synthesize(16, 6, 0.4, 33).unwrap();
        let obs = forward(&truth).unwrap();
        let mut permuted = obs.channels().to_vec();
        permuted.rotate_left(2);
        permuted.swap(0, 3);
        let obs_perm = ObservationSet::new(permuted).unwrap();
        let a = compute_preconditioner(&obs, 0.4).unwrap();
        let b = compute_preconditioner(&obs_perm, 0.4).unwrap();
        assert_eq!(a.filter(), b.filter(), "filter must be bit-identical");
    }

    #[test]
    fn matrix_form_equivalence_small_n() {
        // Dense check of P = ((1/θnp) Σ C_yᵢᵀ C_yᵢ)^{−1/2} against the
        // spectral path, for n small: P applied to a probe vector equals
        // convolution with the filter.
        let n = 8;
        let (truth, pre) = instance(n, 3, 0.5, 55);
        let obs = forward(&truth).unwrap();

        // Build the dense Gram matrix (1/θnp) Σ C_yᵀ C_y.
        let theta = 0.5;
        let p = obs.p();
        let mut gram = Array2::<f64>::zeros((n, n));
        for y in obs.channels() {
            let mut cy = Array2::<f64>::zeros((n, n));
            for col in 0..n {
                let shifted = fftconv::cyclic_shift(y, col as i64);
                for row in 0..n {
                    cy[[row, col]] = shifted[row];
                }
            }
            gram = gram + cy.t().dot(&cy);
        }
        gram /= theta * n as f64 * p as f64;

        // Inverse square root via the spectral decomposition of the circulant:
        // gram is circulant, so its first column's DFT gives the eigenvalues.
        let first_col = Array1::from_shape_fn(n, |i| gram[[i, 0]]);
        let eigs = fftconv::fft(&first_col);
        let inv_sqrt_spec: Spectrum =
            Array1::from_iter(eigs.iter().map(|e| Complex::new(e.re.max(0.0).powf(-0.5), 0.0)));
        let p_first_col = fftconv::ifft(&inv_sqrt_spec);

        for i in 0..n {
            assert_abs_diff_eq!(p_first_col[i], pre.filter()[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn defect_zero_for_flat_instance() {
        let n = 8;
        let theta = 1.0 / n as f64;
        let truth = GroundTruth {
            kernel: delta(n),
            signals: vec![delta(n)],
            theta,
            seed: 0,
        };
        let obs = forward(&truth).unwrap();
        let pre = compute_preconditioner(&obs, theta).unwrap();
        let defect = orthogonality_defect(&truth, &pre).unwrap();
        assert!(defect < 1e-10, "defect {defect}");
    }

    #[test]
    fn defect_shrinks_with_more_channels() {
        // Light version of the p-sweep: median defect at p=200 is below the
        // median at p=10 for a = δ.
        let n = 32;
        let theta = 0.25;
        let median_defect = |p: usize| {
            let mut ds: Vec<f64> = (0..7)
                .map(|s| {
                    let truth = GroundTruth::synthesize_with(
                        n,
                        p,
                        theta,
                        1000 + s,
                        &KernelSpec::Explicit(delta(n)),
                    )
                    .unwrap();
                    let obs = forward(&truth).unwrap();
                    let pre = compute_preconditioner(&obs, theta).unwrap();
                    orthogonality_defect(&truth, &pre).unwrap()
                })
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ds[ds.len() / 2]
        };
        let d10 = median_defect(10);
        let d200 = median_defect(200);
        assert!(d200 < d10, "defect did not shrink: p=10 → {d10}, p=200 → {d200}");
    }

    #[test]
    fn defect_invariant_under_kernel_shift() {
        let n = 16;
        let theta = 0.3;
        let base = GroundTruth::synthesize(n, 40, theta, 77).unwrap();
        let shifted = GroundTruth {
            kernel: fftconv::cyclic_shift(&base.kernel, 5),
            signals: base.signals.clone(),
            theta,
            seed: base.seed,
        };
        let pre_a = compute_preconditioner(&forward(&base).unwrap(), theta).unwrap();
        let pre_b = compute_preconditioner(&forward(&shifted).unwrap(), theta).unwrap();
        let da = orthogonality_defect(&base, &pre_a).unwrap();
        let db = orthogonality_defect(&shifted, &pre_b).unwrap();
        assert_abs_diff_eq!(da, db, epsilon = 1e-10);
    }
}
