//! Phase 1: vanilla Riemannian (sub)gradient descent over the unit sphere.
//!
//! The update is `q⁺ = P_S(q − τ · P_{q⊥}∇φ(q))` with the normalization
//! retraction. Stepsizes are fixed, geometrically decaying, or chosen by
//! Armijo backtracking: starting from τ₀, halve by β until
//! `φ(q̃) < φ(q) − τ·η·‖grad φ(q)‖²`.

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

use crate::error::{McsbdError, Result};
use crate::fftconv;
use crate::losses::{self, LossSpec};
use crate::precond::PreconditionedSet;

/// Linesearch gives up after this many halvings and the solve stops with
/// [`StopReason::Stall`] (recorded, not an error).
pub const MAX_LINESEARCH_HALVINGS: usize = 50;

/// Stepsize policy.
#[derive(Debug, Clone, Copy)]
pub enum StepMode {
    /// Constant stepsize.
    Fixed { tau: f64 },
    /// Armijo backtracking, reset to `tau0` every iteration.
    /// Requires `eta ∈ (0.5, 1)` and `beta ∈ (0, 1)`.
    Linesearch { tau0: f64, eta: f64, beta: f64 },
    /// `τ_k = tau0 · rate^k`, the standard schedule for nonsmooth descent.
    Geometric { tau0: f64, rate: f64 },
}

impl StepMode {
    /// Conventional Armijo defaults; the algorithm constrains the intervals
    /// but fixes no values.
    pub fn default_linesearch() -> Self {
        StepMode::Linesearch { tau0: 1.0, eta: 0.8, beta: 0.5 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            StepMode::Fixed { tau } => {
                if tau <= 0.0 {
                    return Err(McsbdError::InvalidParameter(format!(
                        "fixed stepsize must be positive, got {tau}"
                    )));
                }
            }
            StepMode::Linesearch { tau0, eta, beta } => {
                if tau0 <= 0.0 {
                    return Err(McsbdError::InvalidParameter(format!(
                        "linesearch tau0 must be positive, got {tau0}"
                    )));
                }
                if !(eta > 0.5 && eta < 1.0) {
                    return Err(McsbdError::InvalidParameter(format!(
                        "linesearch eta must lie in (0.5, 1), got {eta}"
                    )));
                }
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(McsbdError::InvalidParameter(format!(
                        "linesearch beta must lie in (0, 1), got {beta}"
                    )));
                }
            }
            StepMode::Geometric { tau0, rate } => {
                if tau0 <= 0.0 {
                    return Err(McsbdError::InvalidParameter(format!(
                        "geometric tau0 must be positive, got {tau0}"
                    )));
                }
                if !(rate > 0.0 && rate < 1.0) {
                    return Err(McsbdError::InvalidParameter(format!(
                        "geometric rate must lie in (0, 1), got {rate}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Initial iterate.
#[derive(Debug, Clone)]
pub enum InitMode {
    /// Uniform draw from the sphere.
    RandomSphere { seed: u64 },
    /// Row of the correlation structure of one preconditioned channel:
    /// `q⁰ = P_S(C_{ȳᵢ}ᵀ e_j)`.
    DataDriven { channel: usize, row: usize },
    /// Caller-supplied starting point (normalized).
    Explicit(Array1<f64>),
}

/// Phase-1 solver configuration.
#[derive(Debug, Clone)]
pub struct RgdConfig {
    pub loss: LossSpec,
    pub max_iters: usize,
    /// Stop once the Riemannian gradient norm falls below this.
    pub tol_grad: f64,
    pub step: StepMode,
    pub init: InitMode,
}

impl RgdConfig {
    pub fn new(loss: LossSpec, init: InitMode) -> Self {
        Self {
            loss,
            max_iters: 10_000,
            tol_grad: 1e-8,
            step: StepMode::default_linesearch(),
            init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(McsbdError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if self.tol_grad < 0.0 {
            return Err(McsbdError::InvalidParameter("tol_grad must be non-negative".into()));
        }
        self.step.validate()
    }
}

/// One trace row per iteration.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub tau: f64,
    pub dist: Option<f64>,
}

/// Iterate plus per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub q: Array1<f64>,
    pub iter: usize,
    pub tau: f64,
    pub trace: Vec<TraceRecord>,
    pub stalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradTol,
    MaxIters,
    Stall,
}

#[derive(Debug, Clone)]
pub struct RgdOutcome {
    pub state: SolverState,
    pub stop: StopReason,
}

impl RgdOutcome {
    pub fn q_star(&self) -> &Array1<f64> {
        &self.state.q
    }
}

/// Optional per-iteration distance to the signed-shift target, for traces.
#[derive(Debug, Clone)]
pub struct DistanceMonitor {
    target: Array1<f64>,
}

impl DistanceMonitor {
    /// Target is the unit-normalized inverse of the whitened kernel
    /// `P_S(F⁻¹((â ⊙ v̂)^{⊙−1}))`; the solver's goal is a signed shift of it.
    pub fn from_truth(truth: &crate::model::GroundTruth, pre: &PreconditionedSet) -> Result<Self> {
        let target = crate::recover::preconditioned_inverse_target(&truth.kernel, pre)?;
        Ok(Self { target })
    }

    pub fn target(&self) -> &Array1<f64> {
        &self.target
    }

    /// Signed-shift distance from `q` (normalized) to the target.
    pub fn distance(&self, q: &Array1<f64>) -> f64 {
        crate::recover::signed_shift_dist(q, &self.target).unwrap_or(f64::NAN)
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Project `g` onto the tangent space of the sphere at `q`:
/// `g − ⟨q,g⟩q`. `q` must be unit-norm (within 1e-9).
pub fn tangent_project(q: &Array1<f64>, g: &Array1<f64>) -> Result<Array1<f64>> {
    if q.len() != g.len() {
        return Err(McsbdError::DimensionMismatch(format!(
            "point has length {}, gradient has length {}",
            q.len(),
            g.len()
        )));
    }
    if (norm(q) - 1.0).abs() > 1e-9 {
        return Err(McsbdError::ContractViolation(format!(
            "tangent_project requires a unit-norm point, got ‖q‖ = {}",
            norm(q)
        )));
    }
    let inner = q.dot(g);
    Ok(g - &(q * inner))
}

/// Normalization retraction `v ↦ v/‖v‖`.
pub fn retract(v: &Array1<f64>) -> Result<Array1<f64>> {
    let nv = norm(v);
    if nv == 0.0 || !nv.is_finite() {
        return Err(McsbdError::DegenerateInput(
            "cannot retract a zero or non-finite vector onto the sphere".into(),
        ));
    }
    Ok(v / nv)
}

/// Uniform draw from the unit sphere (normalized Gaussian vector).
pub fn init_random_sphere(n: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let nv = norm(&v);
        if nv > 0.0 {
            return v / nv;
        }
    }
}

/// Data-driven initialization `q⁰ = P_S(C_{ȳᵢ}ᵀ e_j) = P_S(s_j[y̌ᵢ])`.
pub fn init_data_driven(pre: &PreconditionedSet, channel: usize, row: usize) -> Result<Array1<f64>> {
    if channel >= pre.p() {
        return Err(McsbdError::IndexOutOfRange(format!(
            "channel {channel} out of range for p = {}",
            pre.p()
        )));
    }
    if row >= pre.n() {
        return Err(McsbdError::IndexOutOfRange(format!(
            "row {row} out of range for n = {}",
            pre.n()
        )));
    }
    let col = fftconv::cyclic_shift(&fftconv::cyclic_reverse(&pre.channels()[channel]), row as i64);
    retract(&col)
}

fn initial_iterate(pre: &PreconditionedSet, init: &InitMode) -> Result<Array1<f64>> {
    match init {
        InitMode::RandomSphere { seed } => Ok(init_random_sphere(pre.n(), *seed)),
        InitMode::DataDriven { channel, row } => init_data_driven(pre, *channel, *row),
        InitMode::Explicit(q0) => {
            if q0.len() != pre.n() {
                return Err(McsbdError::DimensionMismatch(format!(
                    "explicit initialization has length {}, expected {}",
                    q0.len(),
                    pre.n()
                )));
            }
            retract(q0)
        }
    }
}

enum StepStatus {
    Converged,
    Stepped,
    Stalled,
}

/// One descent iteration; pushes a trace row and advances `state.q` unless
/// converged or stalled.
fn step_once(
    state: &mut SolverState,
    pre: &PreconditionedSet,
    cfg: &RgdConfig,
    monitor: Option<&DistanceMonitor>,
) -> Result<StepStatus> {
    let (phi, eg) = losses::loss_value_and_grad(pre, &state.q, &cfg.loss)?;
    let rg = tangent_project(&state.q, &eg)?;
    let grad_norm = norm(&rg);
    let dist = monitor.map(|m| m.distance(&state.q));

    if grad_norm <= cfg.tol_grad {
        state.trace.push(TraceRecord {
            iter: state.iter,
            loss: phi,
            grad_norm,
            tau: 0.0,
            dist,
        });
        return Ok(StepStatus::Converged);
    }

    let (next_q, tau, stalled) = match cfg.step {
        StepMode::Fixed { tau } => (retract(&(&state.q - &(&rg * tau)))?, tau, false),
        StepMode::Geometric { tau0, rate } => {
            let tau = tau0 * rate.powi(state.iter as i32);
            (retract(&(&state.q - &(&rg * tau)))?, tau, false)
        }
        StepMode::Linesearch { tau0, eta, beta } => {
            let mut tau = tau0;
            let mut cand = retract(&(&state.q - &(&rg * tau)))?;
            let mut halvings = 0;
            let mut stalled = false;
            while losses::loss_value(pre, &cand, &cfg.loss)?
                >= phi - tau * eta * grad_norm * grad_norm
            {
                halvings += 1;
                if halvings > MAX_LINESEARCH_HALVINGS {
                    stalled = true;
                    break;
                }
                tau *= beta;
                cand = retract(&(&state.q - &(&rg * tau)))?;
            }
            (cand, tau, stalled)
        }
    };

    state.trace.push(TraceRecord { iter: state.iter, loss: phi, grad_norm, tau, dist });
    if stalled {
        state.stalled = true;
        return Ok(StepStatus::Stalled);
    }
    state.q = next_q;
    state.tau = tau;
    state.iter += 1;
    Ok(StepStatus::Stepped)
}

/// Advance one iteration of an existing solve.
pub fn rgd_step(state: &mut SolverState, pre: &PreconditionedSet, cfg: &RgdConfig) -> Result<()> {
    cfg.validate()?;
    step_once(state, pre, cfg, None).map(|_| ())
}

/// Run the full Phase-1 solve.
pub fn rgd_solve(pre: &PreconditionedSet, cfg: &RgdConfig) -> Result<RgdOutcome> {
    rgd_solve_monitored(pre, cfg, None)
}

/// Run the full Phase-1 solve, optionally recording distance-to-truth in the
/// trace. The production path never needs the monitor.
pub fn rgd_solve_monitored(
    pre: &PreconditionedSet,
    cfg: &RgdConfig,
    monitor: Option<&DistanceMonitor>,
) -> Result<RgdOutcome> {
    cfg.validate()?;
    let q0 = initial_iterate(pre, &cfg.init)?;
    let mut state = SolverState { q: q0, iter: 0, tau: 0.0, trace: Vec::new(), stalled: false };
    let mut stop = StopReason::MaxIters;
    while state.iter < cfg.max_iters {
        match step_once(&mut state, pre, cfg, monitor)? {
            StepStatus::Converged => {
                stop = StopReason::GradTol;
                break;
            }
            StepStatus::Stalled => {
                stop = StopReason::Stall;
                break;
            }
            StepStatus::Stepped => {}
        }
    }
    Ok(RgdOutcome { state, stop })
}

/// Write the trace as CSV: `iter,loss,grad_norm,tau[,dist]`.
pub fn export_trace_csv(state: &SolverState, path: &Path) -> Result<()> {
    let with_dist = state.trace.iter().any(|r| r.dist.is_some());
    let mut out = String::new();
    out.push_str(if with_dist {
        "iter,loss,grad_norm,tau,dist\n"
    } else {
        "iter,loss,grad_norm,tau\n"
    });
    for r in &state.trace {
        if with_dist {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.iter,
                r.loss,
                r.grad_norm,
                r.tau,
                r.dist.unwrap_or(f64::NAN)
            ));
        } else {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.iter, r.loss, r.grad_norm, r.tau));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| McsbdError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| McsbdError::io(path, e))
}

/// Index and sign of the strictly dominant coordinate if `q` lies in one of
/// the spherical regions `S_ξ^{i±}` (|q_i| ≥ √(1+ξ)·max_{j≠i}|q_j|).
pub fn region_membership(q: &Array1<f64>, xi: f64) -> Option<(usize, bool)> {
    let n = q.len();
    let mut best = 0usize;
    for i in 1..n {
        if q[i].abs() > q[best].abs() {
            best = i;
        }
    }
    let mut second = 0.0_f64;
    for (i, v) in q.iter().enumerate() {
        if i != best {
            second = second.max(v.abs());
        }
    }
    if second == 0.0 || q[best].abs() >= (1.0 + xi).sqrt() * second {
        Some((best, q[best] > 0.0))
    } else {
        None
    }
}

/// The region width `ξ = 1/(5 log n)` under which a uniform draw lands in
/// some `S_ξ^{i±}` with probability at least 1/2.
pub fn default_xi(n: usize) -> f64 {
    1.0 / (5.0 * (n as f64).ln())
}
