//! Ground-truth synthesis and the observation data model.
//!
//! Randomness is drawn from `ChaCha8Rng` seeded with a caller-supplied master
//! seed. Stream splitting rule: the kernel is drawn on stream 0 of its seed,
//! and signal channel `i` on stream `1 + i`, so identical `(n, p, theta,
//! seed)` always reproduce bit-identical data and channels may be generated
//! independently (e.g. in parallel) without re-seeding.

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{McsbdError, Result};
use crate::fftconv;

/// Relative spectral threshold below which a kernel counts as non-invertible.
pub const DEFAULT_ZERO_TOL: f64 = 1e-10;

/// A set of `p` observation channels, all of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    channels: Vec<Array1<f64>>,
}

impl ObservationSet {
    pub fn new(channels: Vec<Array1<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(McsbdError::InvalidParameter(
                "observation set needs at least one channel".into(),
            ));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(McsbdError::InvalidParameter("channels must be non-empty".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.len() != n {
                return Err(McsbdError::DimensionMismatch(format!(
                    "channel {i} has length {}, expected {n}",
                    c.len()
                )));
            }
            if !c.iter().all(|x| x.is_finite()) {
                return Err(McsbdError::DegenerateInput(format!(
                    "channel {i} contains a non-finite entry"
                )));
            }
        }
        Ok(Self { channels })
    }

    pub fn n(&self) -> usize {
        self.channels[0].len()
    }

    pub fn p(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Array1<f64>] {
        &self.channels
    }
}

/// Synthesized problem instance: unit-norm kernel plus sparse signals.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub kernel: Array1<f64>,
    pub signals: Vec<Array1<f64>>,
    pub theta: f64,
    pub seed: u64,
}

/// Spectral diagnostics of a kernel.
#[derive(Debug, Clone, Copy)]
pub struct KernelDiagnostics {
    /// κ = maxₖ|âₖ| / minₖ|âₖ| (∞ when the spectrum has a zero bin).
    pub kappa: f64,
    /// minₖ|âₖ|.
    pub sigma_min: f64,
    pub invertible: bool,
}

/// Kernel source for synthesis.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// Drawn uniformly at random from the unit sphere.
    UniformSphere,
    /// Caller-supplied kernel; normalized to unit norm.
    Explicit(Array1<f64>),
}

/// Sparse signal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalModel {
    /// Entrywise Bernoulli(θ) mask times standard normal.
    BernoulliGaussian,
    /// Entrywise Bernoulli(θ) mask times ±1.
    BernoulliRademacher,
}

fn kernel_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn signal_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + channel as u64);
    rng
}

/// Draw a unit-norm kernel of length `n` (deterministic given `seed`).
pub fn sample_kernel(n: usize, spec: &KernelSpec, seed: u64) -> Result<Array1<f64>> {
    if n < 2 {
        return Err(McsbdError::InvalidParameter(format!(
            "kernel length must be at least 2, got {n}"
        )));
    }
    let raw = match spec {
        KernelSpec::UniformSphere => {
            let mut rng = kernel_rng(seed);
            Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal))
        }
        KernelSpec::Explicit(a) => {
            if a.len() != n {
                return Err(McsbdError::DimensionMismatch(format!(
                    "explicit kernel has length {}, expected {n}",
                    a.len()
                )));
            }
            a.clone()
        }
    };
    let norm = raw.dot(&raw).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(McsbdError::DegenerateInput("kernel has zero or non-finite norm".into()));
    }
    Ok(raw / norm)
}

/// Draw `p` i.i.d. Bernoulli-Gaussian(θ) signals of length `n`.
pub fn sample_bg_signals(n: usize, p: usize, theta: f64, seed: u64) -> Result<Vec<Array1<f64>>> {
    sample_signals(n, p, theta, SignalModel::BernoulliGaussian, seed)
}

/// Draw `p` sparse signals under the chosen model.
pub fn sample_signals(
    n: usize,
    p: usize,
    theta: f64,
    model: SignalModel,
    seed: u64,
) -> Result<Vec<Array1<f64>>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(McsbdError::InvalidParameter(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let mut rng = signal_rng(seed, i);
        let x = Array1::from_shape_fn(n, |_| {
            let on = rng.gen::<f64>() < theta;
            let g: f64 = match model {
                SignalModel::BernoulliGaussian => rng.sample(StandardNormal),
                SignalModel::BernoulliRademacher => {
                    if rng.gen::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            if on {
                g
            } else {
                0.0
            }
        });
        out.push(x);
    }
    Ok(out)
}

impl GroundTruth {
    /// Synthesize a full instance: uniform-sphere kernel, BG(θ) signals.
    pub fn synthesize(n: usize, p: usize, theta: f64, seed: u64) -> Result<Self> {
        Self::synthesize_with(n, p, theta, seed, &KernelSpec::UniformSphere)
    }

    pub fn synthesize_with(
        n: usize,
        p: usize,
        theta: f64,
        seed: u64,
        kernel: &KernelSpec,
    ) -> Result<Self> {
        let kernel = sample_kernel(n, kernel, seed)?;
        let signals = sample_bg_signals(n, p, theta, seed)?;
        Ok(Self { kernel, signals, theta, seed })
    }

    pub fn n(&self) -> usize {
        self.kernel.len()
    }

    pub fn p(&self) -> usize {
        self.signals.len()
    }
}

/// Forward measurement: `yᵢ = a ⊛ xᵢ` for every channel.
pub fn forward(truth: &GroundTruth) -> Result<ObservationSet> {
    let n = truth.kernel.len();
    let a_hat = fftconv::fft(&truth.kernel);
    let mut channels = Vec::with_capacity(truth.signals.len());
    for (i, x) in truth.signals.iter().enumerate() {
        if x.len() != n {
            return Err(McsbdError::DimensionMismatch(format!(
                "signal {i} has length {}, kernel has length {n}",
                x.len()
            )));
        }
        let mut spec = fftconv::fft(x);
        spec.zip_mut_with(&a_hat, |s, a| *s *= *a);
        channels.push(fftconv::ifft(&spec));
    }
    ObservationSet::new(channels)
}

/// Spectral diagnostics: condition number, minimum spectral magnitude, and an
/// invertibility verdict at relative threshold `zero_tol`.
pub fn diagnose_kernel(a: &Array1<f64>, zero_tol: f64) -> Result<KernelDiagnostics> {
    let mags: Vec<f64> = fftconv::fft(a).iter().map(|c| c.norm()).collect();
    let max = mags.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return Err(McsbdError::DegenerateInput("all-zero kernel".into()));
    }
    let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let invertible = min > zero_tol * max;
    let kappa = if min > 0.0 { max / min } else { f64::INFINITY };
    Ok(KernelDiagnostics { kappa, sigma_min: min, invertible })
}

/// Inverse kernel `h = F⁻¹(â^{⊙−1})`, satisfying `a ⊛ h = δ`.
pub fn inverse_kernel(a: &Array1<f64>) -> Result<Array1<f64>> {
    let diag = diagnose_kernel(a, DEFAULT_ZERO_TOL)?;
    if !diag.invertible {
        return Err(McsbdError::NonInvertible(format!(
            "kernel spectrum has magnitude {} at its smallest bin",
            diag.sigma_min
        )));
    }
    let inv_spec = fftconv::fft(a).mapv(|c| c.inv());
    Ok(fftconv::ifft(&inv_spec))
}

/// The unit delta vector e₀ of length `n`.
pub fn delta(n: usize) -> Array1<f64> {
    let mut d = Array1::zeros(n);
    d[0] = 1.0;
    d
}
