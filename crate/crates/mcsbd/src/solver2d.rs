//! 2D pipeline: preconditioning, Riemannian descent on the Frobenius sphere
//! of grids, LP rounding, and reconstruction — the grid analogs of the 1D
//! modules, built on the 2D circulant primitives.
//!
//! The objective is `φ(Z) = (1/(n₁n₂p)) Σᵢ ψ(Ȳᵢ ⊛ Z)` over `‖Z‖_F = 1`,
//! with `Ȳᵢ = Yᵢ ⊛ V` and `V = F⁻¹((1/(θn₁n₂p) Σ|F(Yᵢ)|²)^{⊙−1/2})`.
//! Recovery: `A⋆ = F⁻¹(F(V ⊛ Z⋆)^{⊙−1})`, `Xᵢ⋆ = Ȳᵢ ⊛ Z⋆`.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;

use crate::error::{McsbdError, Result};
use crate::fftconv::{self, Spectrum2d};
use crate::losses::{huber_grad_scalar, huber_scalar, sign, LossKind, LossSpec};
use crate::rounding::RoundingConfig;
use crate::sphere::{StepMode, StopReason, MAX_LINESEARCH_HALVINGS};

/// A stack of `p` observed frames, all the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    frames: Vec<Array2<f64>>,
}

impl FrameStack {
    pub fn new(frames: Vec<Array2<f64>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(McsbdError::InvalidParameter(
                "frame stack needs at least one frame".into(),
            ));
        }
        let dim = frames[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(McsbdError::InvalidParameter("frames must be non-empty".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(McsbdError::DimensionMismatch(format!(
                    "frame {i} has shape {:?}, expected {dim:?}",
                    f.dim()
                )));
            }
            if !f.iter().all(|x| x.is_finite()) {
                return Err(McsbdError::DegenerateInput(format!(
                    "frame {i} contains a non-finite entry"
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].dim()
    }

    pub fn p(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[Array2<f64>] {
        &self.frames
    }
}

/// 2D ground truth: kernel grid plus sparse activation maps.
#[derive(Debug, Clone)]
pub struct GroundTruth2d {
    pub kernel: Array2<f64>,
    pub signals: Vec<Array2<f64>>,
    pub theta: f64,
    pub seed: u64,
}

impl GroundTruth2d {
    /// Synthesize with an explicit kernel (normalized to unit Frobenius
    /// norm) and BG(θ) activation maps.
    pub fn synthesize(
        kernel: &Array2<f64>,
        p: usize,
        theta: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(McsbdError::InvalidParameter(format!(
                "theta must lie in [0, 1], got {theta}"
            )));
        }
        let fro = kernel.iter().map(|x| x * x).sum::<f64>().sqrt();
        if fro == 0.0 || !fro.is_finite() {
            return Err(McsbdError::DegenerateInput("kernel has zero or non-finite norm".into()));
        }
        let kernel = kernel / fro;
        let (n1, n2) = kernel.dim();
        let mut signals = Vec::with_capacity(p);
        for i in 0..p {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + i as u64);
            let x = Array2::from_shape_fn((n1, n2), |_| {
                let on = rng.gen::<f64>() < theta;
                let g: f64 = rng.sample(StandardNormal);
                if on {
                    g
                } else {
                    0.0
                }
            });
            signals.push(x);
        }
        Ok(Self { kernel, signals, theta, seed })
    }
}

/// Forward measurement `Yᵢ = A ⊛ Xᵢ`.
pub fn forward2d(truth: &GroundTruth2d) -> Result<FrameStack> {
    let mut frames = Vec::with_capacity(truth.signals.len());
    for x in &truth.signals {
        frames.push(fftconv::conv2d(&truth.kernel, x)?);
    }
    FrameStack::new(frames)
}

/// Truncated Gaussian bump of size `size × size` placed at the torus origin
/// of an `n1 × n2` grid, normalized to unit Frobenius norm.
pub fn gaussian_psf(n1: usize, n2: usize, size: usize, sigma: f64) -> Result<Array2<f64>> {
    if size > n1 || size > n2 {
        return Err(McsbdError::InvalidParameter(format!(
            "psf size {size} exceeds grid {n1}×{n2}"
        )));
    }
    if sigma <= 0.0 {
        return Err(McsbdError::InvalidParameter("sigma must be positive".into()));
    }
    let mut a = Array2::zeros((n1, n2));
    // Center on an integer sample: a half-sample-symmetric even-size window
    // would cancel exactly at the Nyquist bin and kill invertibility.
    let center = (size / 2) as f64;
    for i in 0..size {
        for j in 0..size {
            let di = i as f64 - center;
            let dj = j as f64 - center;
            // Wrap around the origin so shifts are irrelevant.
            let r = (i + n1 - size / 2) % n1;
            let c = (j + n2 - size / 2) % n2;
            a[[r, c]] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(a / fro)
}

/// Spectral diagnostics for a 2D kernel.
pub fn diagnose_kernel2d(a: &Array2<f64>, zero_tol: f64) -> Result<crate::model::KernelDiagnostics> {
    let mags: Vec<f64> = fftconv::fft2(a).iter().map(|c| c.norm()).collect();
    let max = mags.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return Err(McsbdError::DegenerateInput("all-zero kernel".into()));
    }
    let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(crate::model::KernelDiagnostics {
        kappa: if min > 0.0 { max / min } else { f64::INFINITY },
        sigma_min: min,
        invertible: min > zero_tol * max,
    })
}

/// Frames after whitening, with cached spectra.
#[derive(Debug, Clone)]
pub struct PreconditionedStack {
    filter: Array2<f64>,
    frames: Vec<Array2<f64>>,
    spectra: Vec<Spectrum2d>,
    theta: f64,
}

impl PreconditionedStack {
    pub fn filter(&self) -> &Array2<f64> {
        &self.filter
    }

    pub fn frames(&self) -> &[Array2<f64>] {
        &self.frames
    }

    pub fn spectra(&self) -> &[Spectrum2d] {
        &self.spectra
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn shape(&self) -> (usize, usize) {
        self.filter.dim()
    }

    pub fn p(&self) -> usize {
        self.frames.len()
    }
}

/// 2D analog of the 1D preconditioner.
pub fn precondition2d(stack: &FrameStack, theta: f64) -> Result<PreconditionedStack> {
    if theta <= 0.0 {
        return Err(McsbdError::InvalidParameter(format!(
            "theta must be positive, got {theta}"
        )));
    }
    let (n1, n2) = stack.shape();
    let cells = n1 * n2;
    let p = stack.p();
    let spectra_y: Vec<Spectrum2d> = stack.frames().iter().map(fftconv::fft2).collect();

    let scale = 1.0 / (theta * cells as f64 * p as f64);
    let mut agg = vec![0.0_f64; cells];
    let mut bin = vec![0.0_f64; p];
    for k in 0..cells {
        for (i, s) in spectra_y.iter().enumerate() {
            bin[i] = s.as_slice().expect("contiguous")[k].norm_sqr();
        }
        bin.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
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
    if let Some(bin) = agg.iter().position(|&a| a <= 0.0) {
        return Err(McsbdError::DegenerateData { bin });
    }

    let v_hat = Array2::from_shape_vec(
        (n1, n2),
        agg.iter().map(|&a| Complex::new(a.powf(-0.5), 0.0)).collect(),
    )
    .expect("shape preserved");
    let filter = fftconv::ifft2(&v_hat);
    let mut frames = Vec::with_capacity(p);
    let mut spectra = Vec::with_capacity(p);
    for s in &spectra_y {
        let bar: Spectrum2d = Array2::from_shape_fn((n1, n2), |(i, j)| s[[i, j]] * v_hat[[i, j]]);
        frames.push(fftconv::ifft2(&bar));
        spectra.push(bar);
    }
    Ok(PreconditionedStack { filter, frames, spectra, theta })
}

fn fro_norm(z: &Array2<f64>) -> f64 {
    z.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn fro_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
fn psi_value2d(spec: &LossSpec, z: f64) -> f64 {
    match spec.kind {
        LossKind::L1 => z.abs(),
        LossKind::Huber => huber_scalar(z, spec.mu),
        LossKind::L4 => -(z * z) * (z * z),
    }
}

#[inline]
fn psi_grad2d(spec: &LossSpec, z: f64) -> f64 {
    match spec.kind {
        LossKind::L1 => sign(z),
        LossKind::Huber => huber_grad_scalar(z, spec.mu),
        LossKind::L4 => -4.0 * z * z * z,
    }
}

fn check_grid(pre: &PreconditionedStack, z: &Array2<f64>) -> Result<()> {
    if z.dim() != pre.shape() {
        return Err(McsbdError::DimensionMismatch(format!(
            "iterate has shape {:?}, frames have shape {:?}",
            z.dim(),
            pre.shape()
        )));
    }
    Ok(())
}

/// Objective value `φ(Z)`.
pub fn loss_value2d(pre: &PreconditionedStack, z: &Array2<f64>, spec: &LossSpec) -> Result<f64> {
    Ok(evaluate2d(pre, z, spec, false)?.0)
}

/// Value and Euclidean gradient in one pass.
pub fn loss_value_and_grad2d(
    pre: &PreconditionedStack,
    z: &Array2<f64>,
    spec: &LossSpec,
) -> Result<(f64, Array2<f64>)> {
    let (v, g) = evaluate2d(pre, z, spec, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn evaluate2d(
    pre: &PreconditionedStack,
    z: &Array2<f64>,
    spec: &LossSpec,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    check_grid(pre, z)?;
    let (n1, n2) = pre.shape();
    let p = pre.p();
    let scale = 1.0 / (n1 as f64 * n2 as f64 * p as f64);
    let z_hat = fftconv::fft2(z);

    let mut value = 0.0;
    let mut grad_spec: Option<Spectrum2d> = if want_grad {
        Some(Array2::from_elem((n1, n2), Complex::new(0.0, 0.0)))
    } else {
        None
    };

    for y_spec in pre.spectra() {
        let prod: Spectrum2d =
            Array2::from_shape_fn((n1, n2), |(i, j)| y_spec[[i, j]] * z_hat[[i, j]]);
        let zi = fftconv::ifft2(&prod);
        for &v in zi.iter() {
            value += psi_value2d(spec, v);
        }
        if let Some(acc) = grad_spec.as_mut() {
            let w = zi.mapv(|v| psi_grad2d(spec, v));
            let w_spec = fftconv::fft2(&w);
            acc.zip_mut_with(
                &Array2::from_shape_fn((n1, n2), |(i, j)| y_spec[[i, j]].conj() * w_spec[[i, j]]),
                |a, b| *a += *b,
            );
        }
    }

    let grad = grad_spec.map(|acc| fftconv::ifft2(&acc) * scale);
    Ok((value * scale, grad))
}

/// Iterate on the Frobenius sphere plus diagnostics.
#[derive(Debug, Clone)]
pub struct GridSolverState {
    pub z: Array2<f64>,
    pub iter: usize,
    pub tau: f64,
    pub trace: Vec<crate::sphere::TraceRecord>,
    pub stalled: bool,
}

/// Phase-1 configuration for grids.
#[derive(Debug, Clone)]
pub struct Rgd2dConfig {
    pub loss: LossSpec,
    pub max_iters: usize,
    pub tol_grad: f64,
    pub step: StepMode,
    pub init: Init2d,
}

#[derive(Debug, Clone)]
pub enum Init2d {
    RandomSphere { seed: u64 },
    Explicit(Array2<f64>),
}

impl Rgd2dConfig {
    pub fn new(loss: LossSpec, init: Init2d) -> Self {
        Self {
            loss,
            max_iters: 10_000,
            tol_grad: 1e-8,
            step: StepMode::default_linesearch(),
            init,
        }
    }
}

/// Uniform draw from the Frobenius sphere.
pub fn init_random_grid(n1: usize, n2: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let z = Array2::from_shape_fn((n1, n2), |_| rng.sample::<f64, _>(StandardNormal));
        let nz = fro_norm(&z);
        if nz > 0.0 {
            return z / nz;
        }
    }
}

fn retract2d(w: &Array2<f64>) -> Result<Array2<f64>> {
    let nw = fro_norm(w);
    if nw == 0.0 || !nw.is_finite() {
        return Err(McsbdError::DegenerateInput(
            "cannot retract a zero or non-finite grid onto the Frobenius sphere".into(),
        ));
    }
    Ok(w / nw)
}

fn tangent_project2d(z: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    g - &(z * fro_inner(z, g))
}

#[derive(Debug, Clone)]
pub struct Rgd2dOutcome {
    pub state: GridSolverState,
    pub stop: StopReason,
}

/// Phase 1 on the Frobenius sphere. The optional monitor records per-iteration
/// 2D signed-shift distance to a unit target grid.
pub fn rgd2d_solve(
    pre: &PreconditionedStack,
    cfg: &Rgd2dConfig,
    monitor: Option<&Array2<f64>>,
) -> Result<Rgd2dOutcome> {
    let (n1, n2) = pre.shape();
    let z0 = match &cfg.init {
        Init2d::RandomSphere { seed } => init_random_grid(n1, n2, *seed),
        Init2d::Explicit(z) => {
            if z.dim() != (n1, n2) {
                return Err(McsbdError::DimensionMismatch(format!(
                    "explicit initialization has shape {:?}, expected {:?}",
                    z.dim(),
                    (n1, n2)
                )));
            }
            retract2d(z)?
        }
    };
    let mut state =
        GridSolverState { z: z0, iter: 0, tau: 0.0, trace: Vec::new(), stalled: false };
    let mut stop = StopReason::MaxIters;

    while state.iter < cfg.max_iters {
        let (phi, eg) = loss_value_and_grad2d(pre, &state.z, &cfg.loss)?;
        let rg = tangent_project2d(&state.z, &eg);
        let grad_norm = fro_norm(&rg);
        let dist = monitor.map(|t| signed_shift_dist2d(&state.z, t).unwrap_or(f64::NAN));

        if grad_norm <= cfg.tol_grad {
            state.trace.push(crate::sphere::TraceRecord {
                iter: state.iter,
                loss: phi,
                grad_norm,
                tau: 0.0,
                dist,
            });
            stop = StopReason::GradTol;
            break;
        }

        let (next, tau, stalled) = match cfg.step {
            StepMode::Fixed { tau } => (retract2d(&(&state.z - &(&rg * tau)))?, tau, false),
            StepMode::Geometric { tau0, rate } => {
                let tau = tau0 * rate.powi(state.iter as i32);
                (retract2d(&(&state.z - &(&rg * tau)))?, tau, false)
            }
            StepMode::Linesearch { tau0, eta, beta } => {
                let mut tau = tau0;
                let mut cand = retract2d(&(&state.z - &(&rg * tau)))?;
                let mut halvings = 0;
                let mut stalled = false;
                while loss_value2d(pre, &cand, &cfg.loss)?
                    >= phi - tau * eta * grad_norm * grad_norm
                {
                    halvings += 1;
                    if halvings > MAX_LINESEARCH_HALVINGS {
                        stalled = true;
                        break;
                    }
                    tau *= beta;
                    cand = retract2d(&(&state.z - &(&rg * tau)))?;
                }
                (cand, tau, stalled)
            }
        };

        state.trace.push(crate::sphere::TraceRecord {
            iter: state.iter,
            loss: phi,
            grad_norm,
            tau,
            dist,
        });
        if stalled {
            state.stalled = true;
            stop = StopReason::Stall;
            break;
        }
        state.z = next;
        state.tau = tau;
        state.iter += 1;
    }

    Ok(Rgd2dOutcome { state, stop })
}

#[derive(Debug, Clone)]
pub struct Rounding2dOutcome {
    pub z: Array2<f64>,
    pub trace: Vec<crate::rounding::RoundingTraceRecord>,
    pub best_zeta: f64,
}

/// Phase 2 on the affine slice `⟨U, Z⟩_F = 1` with geometric stepsize.
pub fn lp_round2d(
    pre: &PreconditionedStack,
    u: &Array2<f64>,
    cfg: &RoundingConfig,
) -> Result<Rounding2dOutcome> {
    cfg.validate()?;
    check_grid(pre, u)?;
    let nu = fro_norm(u);
    if (nu - 1.0).abs() > 1e-9 {
        return Err(McsbdError::ContractViolation(format!(
            "LP rounding requires a unit-Frobenius warm start, got ‖U‖_F = {nu}"
        )));
    }

    let mut z = u.clone();
    let mut tau = cfg.tau0;
    let mut trace = Vec::new();
    let mut best_zeta = f64::INFINITY;
    for k in 0..cfg.max_iters {
        let (zeta, g) = loss_value_and_grad2d(pre, &z, &LossSpec::l1())?;
        best_zeta = best_zeta.min(zeta);
        let pg = &g - &(u * fro_inner(u, &g));
        let step_norm = tau * fro_norm(&pg);
        trace.push(crate::rounding::RoundingTraceRecord {
            iter: k,
            zeta,
            tau,
            step_norm,
            dist: None,
        });
        if step_norm < cfg.tol {
            break;
        }
        z = &z - &(&pg * tau);
        tau *= cfg.eta;
    }
    Ok(Rounding2dOutcome { z, trace, best_zeta })
}

/// Recover `(A⋆, {Xᵢ⋆})` from the solved grid.
pub fn reconstruct2d(
    pre: &PreconditionedStack,
    z_star: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    check_grid(pre, z_star)?;
    let (n1, n2) = pre.shape();
    let z_hat = fftconv::fft2(z_star);
    let v_hat = fftconv::fft2(pre.filter());
    let w_hat: Spectrum2d =
        Array2::from_shape_fn((n1, n2), |(i, j)| v_hat[[i, j]] * z_hat[[i, j]]);
    let max_mag = w_hat.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if let Some(k) = w_hat.iter().position(|c| c.norm() <= 1e-14 * max_mag) {
        return Err(McsbdError::NonInvertible(format!(
            "whitened kernel estimate has a vanishing spectral entry at bin {k}"
        )));
    }
    let a_star = fftconv::ifft2(&w_hat.mapv(|c| c.inv()));
    let x_star = pre
        .spectra()
        .iter()
        .map(|ys| {
            let spec: Spectrum2d =
                Array2::from_shape_fn((n1, n2), |(i, j)| ys[[i, j]] * z_hat[[i, j]]);
            fftconv::ifft2(&spec)
        })
        .collect();
    Ok((a_star, x_star))
}

/// 2D recovery accuracy `‖A ⊛ V ⊛ Z⋆‖∞ / ‖A ⊛ V ⊛ Z⋆‖_F`.
pub fn rho_acc2d(
    kernel: &Array2<f64>,
    pre: &PreconditionedStack,
    z_star: &Array2<f64>,
) -> Result<f64> {
    check_grid(pre, z_star)?;
    if kernel.dim() != pre.shape() {
        return Err(McsbdError::DimensionMismatch(format!(
            "kernel has shape {:?}, frames have shape {:?}",
            kernel.dim(),
            pre.shape()
        )));
    }
    let (n1, n2) = pre.shape();
    let a_hat = fftconv::fft2(kernel);
    let v_hat = fftconv::fft2(pre.filter());
    let z_hat = fftconv::fft2(z_star);
    let w_hat: Spectrum2d =
        Array2::from_shape_fn((n1, n2), |(i, j)| a_hat[[i, j]] * v_hat[[i, j]] * z_hat[[i, j]]);
    let w = fftconv::ifft2(&w_hat);
    let l2 = fro_norm(&w);
    if l2 == 0.0 {
        return Err(McsbdError::DegenerateInput(
            "rho_acc2d is undefined for a zero whitened iterate".into(),
        ));
    }
    let linf = w.iter().map(|x| x.abs()).fold(0.0_f64, f64::max);
    Ok(linf / l2)
}

/// Quotient distance over the full torus of 2D shifts and sign, via one 2D
/// correlation argmax.
pub fn signed_shift_dist2d(a_hat: &Array2<f64>, a_true: &Array2<f64>) -> Result<f64> {
    if a_hat.dim() != a_true.dim() {
        return Err(McsbdError::DimensionMismatch(format!(
            "signed_shift_dist2d: shapes {:?} and {:?}",
            a_hat.dim(),
            a_true.dim()
        )));
    }
    let nh = fro_norm(a_hat);
    let nt = fro_norm(a_true);
    if nh == 0.0 || nt == 0.0 {
        return Err(McsbdError::DegenerateInput(
            "signed_shift_dist2d requires nonzero grids".into(),
        ));
    }
    let u = a_hat / nh;
    let t = a_true / nt;
    // Argmax of |corr| over the shift torus, then the distance is evaluated
    // directly for precision near zero.
    let corr = fftconv::corr2d(&t, &u)?;
    let (n1, n2) = corr.dim();
    let mut best = (0usize, 0usize);
    for i in 0..n1 {
        for j in 0..n2 {
            if corr[[i, j]].abs() > corr[best].abs() {
                best = (i, j);
            }
        }
    }
    let sigma = if corr[best] >= 0.0 { 1.0 } else { -1.0 };
    let shifted = fftconv::cyclic_shift2d(&t, best.0 as i64, best.1 as i64);
    Ok((&u * sigma - &shifted).iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Unit-Frobenius target grid `P_F(F⁻¹((F(A) ⊙ F(V))^{⊙−1}))`.
pub fn preconditioned_inverse_target2d(
    kernel: &Array2<f64>,
    pre: &PreconditionedStack,
) -> Result<Array2<f64>> {
    if kernel.dim() != pre.shape() {
        return Err(McsbdError::DimensionMismatch(format!(
            "kernel has shape {:?}, frames have shape {:?}",
            kernel.dim(),
            pre.shape()
        )));
    }
    let (n1, n2) = pre.shape();
    let a_hat = fftconv::fft2(kernel);
    let v_hat = fftconv::fft2(pre.filter());
    let prod: Spectrum2d =
        Array2::from_shape_fn((n1, n2), |(i, j)| a_hat[[i, j]] * v_hat[[i, j]]);
    let max_mag = prod.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if prod.iter().any(|c| c.norm() <= 1e-14 * max_mag) {
        return Err(McsbdError::NonInvertible(
            "whitened kernel has a vanishing spectral entry".into(),
        ));
    }
    let g = fftconv::ifft2(&prod.mapv(|c| c.inv()));
    let ng = fro_norm(&g);
    Ok(g / ng)
}

/// Embed a 1D vector as an n×1 grid.
pub fn embed_column(v: &Array1<f64>) -> Array2<f64> {
    let n = v.len();
    Array2::from_shape_fn((n, 1), |(i, _)| v[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn delta_grid(n1: usize, n2: usize) -> Array2<f64> {
        let mut d = Array2::zeros((n1, n2));
        d[[0, 0]] = 1.0;
        d
    }

    #[test]
    fn precondition2d_flat_spectrum() {
        // Single δ frame with θ·n²·p = 1 → V = δ.
        let n = 4;
        let theta = 1.0 / (n * n) as f64;
        let stack = FrameStack::new(vec![delta_grid(n, n)]).unwrap();
        let pre = precondition2d(&stack, theta).unwrap();
        for (got, want) in pre.filter().iter().zip(delta_grid(n, n).iter()) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn precondition2d_channel_permutation_invariance() {
        let psf = gaussian_psf(8, 8, 4, 0.9).unwrap();
        let truth = GroundTruth2d::synthesize(&psf, 5, 0.2, 3).unwrap();
        let stack = forward2d(&truth).unwrap();
        let mut permuted = stack.frames().to_vec();
        permuted.rotate_left(2);
        let stack_perm = FrameStack::new(permuted).unwrap();
        let a = precondition2d(&stack, 0.2).unwrap();
        let b = precondition2d(&stack_perm, 0.2).unwrap();
        assert_eq!(a.filter(), b.filter());
    }

    #[test]
    fn precondition2d_zero_bin_rejected() {
        let stack = FrameStack::new(vec![Array2::from_elem((4, 4), 1.0)]).unwrap();
        assert!(matches!(
            precondition2d(&stack, 0.5),
            Err(McsbdError::DegenerateData { .. })
        ));
    }

    #[test]
    fn fixed_point_under_zero_gradient() {
        // Flat instance: V = δ, single δ frame; at Z = δ the Huber gradient
        // is tangent-free only up to the smoothing band, so use tol large
        // enough to register the fixed point immediately.
        let n = 4;
        let theta = 1.0 / (n * n) as f64;
        let stack = FrameStack::new(vec![delta_grid(n, n)]).unwrap();
        let pre = precondition2d(&stack, theta).unwrap();
        let cfg = Rgd2dConfig {
            max_iters: 5,
            tol_grad: 0.5,
            ..Rgd2dConfig::new(
                LossSpec::huber(1e-2).unwrap(),
                Init2d::Explicit(delta_grid(n, n)),
            )
        };
        let out = rgd2d_solve(&pre, &cfg, None).unwrap();
        assert_eq!(out.stop, StopReason::GradTol);
        for (got, want) in out.state.z.iter().zip(delta_grid(n, n).iter()) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-12);
        }
    }

    #[test]
    fn frobenius_sphere_invariant() {
        let psf = gaussian_psf(8, 8, 4, 0.9).unwrap();
        let truth = GroundTruth2d::synthesize(&psf, 12, 0.15, 5).unwrap();
        let stack = forward2d(&truth).unwrap();
        let pre = precondition2d(&stack, 0.15).unwrap();
        let cfg = Rgd2dConfig {
            max_iters: 15,
            ..Rgd2dConfig::new(LossSpec::huber(1e-2).unwrap(), Init2d::RandomSphere { seed: 2 })
        };
        let out = rgd2d_solve(&pre, &cfg, None).unwrap();
        assert!((fro_norm(&out.state.z) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn separable_instance_reduces_to_1d() {
        // A 1D instance embedded as n×1 grids follows the same arithmetic,
        // so the 2D solver's loss trace matches the 1D solver's within 1e-10.
        let n = 16;
        let p = 8;
        let theta = 0.3;
        let truth = crate::model::GroundTruth::synthesize(n, p, theta, 11).unwrap();
        let obs = crate::model::forward(&truth).unwrap();
        let pre1 = crate::precond::compute_preconditioner(&obs, theta).unwrap();

        let frames: Vec<Array2<f64>> = obs.channels().iter().map(embed_column).collect();
        let stack = FrameStack::new(frames).unwrap();
        let pre2 = precondition2d(&stack, theta).unwrap();

        let q0 = crate::sphere::init_random_sphere(n, 4);
        let cfg1 = crate::sphere::RgdConfig {
            max_iters: 10,
            ..crate::sphere::RgdConfig::new(
                LossSpec::huber(1e-2).unwrap(),
                crate::sphere::InitMode::Explicit(q0.clone()),
            )
        };
        let cfg2 = Rgd2dConfig {
            max_iters: 10,
            ..Rgd2dConfig::new(
                LossSpec::huber(1e-2).unwrap(),
                Init2d::Explicit(embed_column(&q0)),
            )
        };
        let out1 = crate::sphere::rgd_solve(&pre1, &cfg1).unwrap();
        let out2 = rgd2d_solve(&pre2, &cfg2, None).unwrap();
        assert_eq!(out1.state.trace.len(), out2.state.trace.len());
        for (a, b) in out1.state.trace.iter().zip(out2.state.trace.iter()) {
            assert_abs_diff_eq!(a.loss, b.loss, epsilon = 1e-10);
            assert_abs_diff_eq!(a.grad_norm, b.grad_norm, epsilon = 1e-10);
        }
    }

    #[test]
    fn conv2d_fft_matches_naive_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let n1 = rng.gen_range(2..9);
            let n2 = rng.gen_range(2..9);
            let a = Array2::from_shape_fn((n1, n2), |_| rng.gen::<f64>() - 0.5);
            let b = Array2::from_shape_fn((n1, n2), |_| rng.gen::<f64>() - 0.5);
            let fast = fftconv::conv2d(&a, &b).unwrap();
            let slow = fftconv::conv2d_naive(&a, &b).unwrap();
            for (x, y) in fast.iter().zip(slow.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruct2d_exact_instance() {
        let n = 8;
        let theta = 1.0 / (n * n) as f64;
        // δ kernel, single δ activation: exact flat instance.
        let truth = GroundTruth2d {
            kernel: delta_grid(n, n),
            signals: vec![delta_grid(n, n)],
            theta,
            seed: 0,
        };
        let stack = forward2d(&truth).unwrap();
        let pre = precondition2d(&stack, theta).unwrap();
        let (a_star, _x) = reconstruct2d(&pre, &delta_grid(n, n)).unwrap();
        let scale = a_star[[0, 0]];
        for (got, want) in a_star.iter().zip(delta_grid(n, n).iter()) {
            assert_abs_diff_eq!(*got, scale * want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            signed_shift_dist2d(&a_star, &truth.kernel).unwrap(),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn reconstruct2d_round_trip() {
        let psf = gaussian_psf(16, 16, 6, 1.0).unwrap();
        assert!(diagnose_kernel2d(&psf, 1e-10).unwrap().invertible);
        let truth = GroundTruth2d::synthesize(&psf, 6, 0.1, 13).unwrap();
        let stack = forward2d(&truth).unwrap();
        let pre = precondition2d(&stack, 0.1).unwrap();
        let z = preconditioned_inverse_target2d(&truth.kernel, &pre).unwrap();
        let (a_star, x_star) = reconstruct2d(&pre, &z).unwrap();
        let mut worst: f64 = 0.0;
        for (xs, y) in x_star.iter().zip(stack.frames().iter()) {
            let rec = fftconv::conv2d(&a_star, xs).unwrap();
            let num = rec
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(num / fro_norm(y).max(1e-300));
        }
        assert!(worst <= 1e-6, "worst relative residual {worst}");
        assert!(signed_shift_dist2d(&a_star, &truth.kernel).unwrap() < 1e-7);
    }

    #[test]
    fn shift_quotient_2d() {
        let psf = gaussian_psf(8, 8, 4, 1.0).unwrap();
        let shifted = fftconv::cyclic_shift2d(&psf, 3, 5) * -2.0;
        assert_abs_diff_eq!(
            signed_shift_dist2d(&shifted, &psf).unwrap(),
            0.0,
            epsilon = 1e-9
        );
    }
}
