//! Experiment harness: convergence traces, vary-θ success curves, (p, n)
//! phase-transition grids, and geometry probes, all emitting schema-stable
//! CSV files.
//!
//! Determinism: every trial's seed is derived from
//! `hash(master, n, p, theta, loss, trial)`, results are collected in index
//! order, and wall-clock timings go to a separate `*_timings.csv` sidecar —
//! so the data CSVs are bit-identical across runs and thread counts.
//! Parallelism spans cells and trials; a single solve is sequential. Thread
//! count comes from the `MCSBD_THREADS` environment variable (rayon default
//! otherwise).

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Deserialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{McsbdError, Result};
use crate::losses::{LossKind, LossSpec, DEFAULT_MU};
use crate::model::{forward, GroundTruth};
use crate::precond::{compute_preconditioner, orthogonality_defect, PreconditionedSet};
use crate::recover::{self, DEFAULT_SUCCESS_THRESHOLD};
use crate::rounding::{self, RoundingConfig};
use crate::sphere::{self, DistanceMonitor, InitMode, RgdConfig};

/// Phase-1 budget used by the experiment harness (linesearch iterations
/// before rounding) for the smooth losses.
pub const DEFAULT_PHASE1_ITERS: usize = 100;

/// ℓ¹ Phase-1 runs Riemannian subgradient descent with geometrically
/// decaying steps instead of linesearch (Armijo on the nonsmooth objective
/// accepts only vanishing steps). The travel budget τ₀/(1−η) ≈ 133 covers
/// the sphere many times over at the ~0.05 subgradient scale of these
/// problems, and the decay is slow enough to converge near machine scale
/// within the budget below.
pub const L1_GEOMETRIC_TAU0: f64 = 4.0;
pub const L1_GEOMETRIC_RATE: f64 = 0.97;
pub const DEFAULT_L1_PHASE1_ITERS: usize = 300;

/// Trials per cell.
pub const DEFAULT_TRIALS: usize = 15;

/// Grid of cells plus solver settings. One struct serves every experiment;
/// unused axes are simply singletons.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub theta: Vec<f64>,
    pub losses: Vec<LossKind>,
    pub mu: f64,
    pub trials: usize,
    pub seed: u64,
    pub success_threshold: f64,
    pub out_dir: PathBuf,
    pub phase1_iters: usize,
    pub l1_phase1_iters: usize,
    pub rounding_tau0: f64,
    pub rounding_eta: f64,
    pub rounding_iters: usize,
    /// Round ℓ¹ solutions too (kept on for cell experiments so every loss is
    /// scored after the same two-stage procedure; convergence traces switch
    /// it off to show the raw subgradient path).
    pub l1_rounding: bool,
    /// Sample count for geometry probes.
    pub samples: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            n: vec![100],
            p: vec![50],
            theta: vec![0.25],
            losses: vec![LossKind::Huber],
            mu: DEFAULT_MU,
            trials: DEFAULT_TRIALS,
            seed: 0,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            out_dir: PathBuf::from("out"),
            phase1_iters: DEFAULT_PHASE1_ITERS,
            l1_phase1_iters: DEFAULT_L1_PHASE1_ITERS,
            rounding_tau0: RoundingConfig::default().tau0,
            rounding_eta: RoundingConfig::default().eta,
            rounding_iters: RoundingConfig::default().max_iters,
            l1_rounding: true,
            samples: 1000,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(McsbdError::InvalidParameter("trials must be at least 1".into()));
        }
        if self.n.is_empty() || self.p.is_empty() || self.theta.is_empty() || self.losses.is_empty()
        {
            return Err(McsbdError::InvalidParameter(
                "n, p, theta, and losses grids must be non-empty".into(),
            ));
        }
        if !(self.success_threshold > 0.0 && self.success_threshold <= 1.0) {
            return Err(McsbdError::InvalidParameter(format!(
                "success threshold must lie in (0, 1], got {}",
                self.success_threshold
            )));
        }
        for &t in &self.theta {
            if !(t > 0.0 && t <= 1.0) {
                return Err(McsbdError::InvalidParameter(format!(
                    "theta values must lie in (0, 1], got {t}"
                )));
            }
        }
        self.rounding_config().validate()?;
        for &loss in &self.losses {
            LossSpec::new(loss, self.mu)?;
        }
        Ok(())
    }

    pub fn rounding_config(&self) -> RoundingConfig {
        RoundingConfig {
            tau0: self.rounding_tau0,
            eta: self.rounding_eta,
            max_iters: self.rounding_iters,
            ..Default::default()
        }
    }

    fn loss_spec(&self, kind: LossKind) -> Result<LossSpec> {
        LossSpec::new(kind, self.mu)
    }

    /// Header comment lines shared by every CSV this spec emits.
    fn header_lines(&self, kind: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("# mcsbd {kind} experiment\n"));
        s.push_str(&format!("# seed={}\n", self.seed));
        s.push_str(&format!(
            "# mu={:e} trials={} success_threshold={}\n",
            self.mu, self.trials, self.success_threshold
        ));
        s.push_str(&format!(
            "# phase1: linesearch tau0=1 eta=0.8 beta=0.5 iters={}; l1 geometric tau0={} rate={} iters={}\n",
            self.phase1_iters, L1_GEOMETRIC_TAU0, L1_GEOMETRIC_RATE, self.l1_phase1_iters
        ));
        s.push_str(&format!(
            "# phase2: tau0={} eta={} max_iters={} l1_rounding={}\n",
            self.rounding_tau0, self.rounding_eta, self.rounding_iters, self.l1_rounding
        ));
        s
    }
}

/// Stable per-trial seed: FNV-1a over the cell key, splitmix64-finished.
/// Extending a grid never reshuffles existing cells.
pub fn cell_seed(master: u64, n: usize, p: usize, theta: f64, loss: LossKind, trial: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&master.to_le_bytes());
    eat(&(n as u64).to_le_bytes());
    eat(&(p as u64).to_le_bytes());
    eat(&theta.to_bits().to_le_bytes());
    eat(&[match loss {
        LossKind::L1 => 1,
        LossKind::Huber => 2,
        LossKind::L4 => 3,
    }]);
    eat(&(trial as u64).to_le_bytes());
    // splitmix64 finalizer
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Result of one two-stage solve on a synthetic instance.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    pub rho_acc: f64,
    /// Signed-shift distance from the iterate to the whitened inverse-kernel
    /// target, before and after rounding.
    pub phase1_dist: f64,
    pub final_dist: f64,
    /// Signed-shift distance of the reconstructed kernel (NaN when the
    /// estimate was not invertible).
    pub kernel_dist: f64,
    pub success: bool,
    pub wall_ms: f64,
    pub phase1_trace: Vec<sphere::TraceRecord>,
    pub phase2_trace: Vec<rounding::RoundingTraceRecord>,
}

/// Run synthesis + preconditioning + Phase 1 (+ optional Phase 2) on one
/// seeded cell. Smooth losses use Armijo linesearch; ℓ¹ uses the geometric
/// subgradient schedule.
pub fn two_stage_trial(
    n: usize,
    p: usize,
    theta: f64,
    loss: LossSpec,
    seed: u64,
    phase1_iters: usize,
    rounding: Option<&RoundingConfig>,
    success_threshold: f64,
) -> Result<TrialResult> {
    let start = Instant::now();
    let truth = GroundTruth::synthesize(n, p, theta, seed)?;
    let obs = forward(&truth)?;
    let pre = compute_preconditioner(&obs, theta)?;
    let monitor = DistanceMonitor::from_truth(&truth, &pre)?;

    let init_seed = cell_seed(seed, n, p, theta, loss.kind, usize::MAX);
    let step = match loss.kind {
        LossKind::L1 => sphere::StepMode::Geometric {
            tau0: L1_GEOMETRIC_TAU0,
            rate: L1_GEOMETRIC_RATE,
        },
        _ => sphere::StepMode::default_linesearch(),
    };
    let cfg = RgdConfig {
        max_iters: phase1_iters,
        step,
        ..RgdConfig::new(loss, InitMode::RandomSphere { seed: init_seed })
    };
    let phase1 = sphere::rgd_solve_monitored(&pre, &cfg, Some(&monitor))?;
    let r = phase1.state.q.clone();
    let phase1_dist = monitor.distance(&r);

    let (q_star, phase2_trace) = match rounding {
        Some(rcfg) => {
            let target = rounding::feasible_target(&r, monitor.target())
                .ok()
                .filter(|t| t.iter().all(|x| x.is_finite()));
            let out = rounding::lp_round_monitored(&pre, &r, rcfg, target.as_ref())?;
            (out.q, out.trace)
        }
        None => (r.clone(), Vec::new()),
    };

    let rho = recover::rho_acc(&truth, &pre, &q_star)?;
    let final_dist = monitor.distance(&q_star);
    let kernel_dist = match recover::reconstruct(&pre, &q_star) {
        Ok((a_star, _)) => recover::signed_shift_dist(&a_star, &truth.kernel)?,
        Err(_) => f64::NAN,
    };

    Ok(TrialResult {
        seed,
        rho_acc: rho,
        phase1_dist,
        final_dist,
        kernel_dist,
        success: rho >= success_threshold,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        phase1_trace: phase1.state.trace,
        phase2_trace,
    })
}

/// One cell of a grid experiment.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub n: usize,
    pub p: usize,
    pub theta: f64,
    pub loss: LossKind,
    pub successes: usize,
    pub trials: usize,
    pub median_final_dist: f64,
    pub median_wall_ms: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    values[values.len() / 2]
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| McsbdError::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| McsbdError::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| McsbdError::io(path, e))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:e}")
    }
}

/// Run all trials of a cell grid in parallel and aggregate per cell.
/// Collection is by index, so output order is thread-count independent.
fn run_cells(
    spec: &ExperimentSpec,
    cells: &[(usize, usize, f64, LossKind)],
) -> Result<(Vec<CellResult>, Vec<(usize, TrialResult)>)> {
    let jobs: Vec<(usize, usize, usize, f64, LossKind, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, &(n, p, theta, loss))| {
            (0..spec.trials).map(move |t| (ci, n, p, theta, loss, t))
        })
        .collect();

    let results: Vec<Result<(usize, TrialResult)>> = jobs
        .par_iter()
        .map(|&(ci, n, p, theta, loss, trial)| {
            let seed = cell_seed(spec.seed, n, p, theta, loss, trial);
            let loss_spec = spec.loss_spec(loss)?;
            let round_cfg = spec.rounding_config();
            let rounding = if loss == LossKind::L1 && !spec.l1_rounding {
                None
            } else {
                Some(&round_cfg)
            };
            let iters = if loss == LossKind::L1 {
                spec.l1_phase1_iters
            } else {
                spec.phase1_iters
            };
            let trial_result = two_stage_trial(
                n,
                p,
                theta,
                loss_spec,
                seed,
                iters,
                rounding,
                spec.success_threshold,
            )?;
            Ok((ci, trial_result))
        })
        .collect();

    let mut per_trial: Vec<(usize, TrialResult)> = Vec::with_capacity(results.len());
    for r in results {
        per_trial.push(r?);
    }

    let mut cells_out = Vec::with_capacity(cells.len());
    for (ci, &(n, p, theta, loss)) in cells.iter().enumerate() {
        let mine: Vec<&TrialResult> =
            per_trial.iter().filter(|(i, _)| *i == ci).map(|(_, t)| t).collect();
        let successes = mine.iter().filter(|t| t.success).count();
        let mut dists: Vec<f64> = mine.iter().map(|t| t.final_dist).collect();
        let mut walls: Vec<f64> = mine.iter().map(|t| t.wall_ms).collect();
        cells_out.push(CellResult {
            n,
            p,
            theta,
            loss,
            successes,
            trials: mine.len(),
            median_final_dist: median(&mut dists),
            median_wall_ms: median(&mut walls),
        });
    }
    Ok((cells_out, per_trial))
}

fn write_cell_outputs(
    spec: &ExperimentSpec,
    kind: &str,
    cells: &[(usize, usize, f64, LossKind)],
    results: &(Vec<CellResult>, Vec<(usize, TrialResult)>),
) -> Result<Vec<PathBuf>> {
    let (cell_results, per_trial) = results;
    let mut paths = Vec::new();

    let mut body = spec.header_lines(kind);
    body.push_str("n,p,theta,loss,successes,trials,success_fraction,median_final_dist\n");
    for c in cell_results {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.n,
            c.p,
            c.theta,
            c.loss.as_str(),
            c.successes,
            c.trials,
            fmt(c.successes as f64 / c.trials.max(1) as f64),
            fmt(c.median_final_dist),
        ));
    }
    let cells_path = spec.out_dir.join(format!("{kind}_cells.csv"));
    write_text(&cells_path, &body)?;
    paths.push(cells_path);

    // Per-trial rows let every success decision be re-derived from the
    // stored rho_acc values.
    let mut body = spec.header_lines(kind);
    body.push_str("n,p,theta,loss,trial,seed,rho_acc,phase1_dist,final_dist,kernel_dist,success\n");
    for (ci, group) in cells.iter().enumerate() {
        let (n, p, theta, loss) = *group;
        for (trial, (_, t)) in per_trial.iter().filter(|(i, _)| *i == ci).enumerate() {
            body.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                n,
                p,
                theta,
                loss.as_str(),
                trial,
                t.seed,
                fmt(t.rho_acc),
                fmt(t.phase1_dist),
                fmt(t.final_dist),
                fmt(t.kernel_dist),
                t.success as u8,
            ));
        }
    }
    let trials_path = spec.out_dir.join(format!("{kind}_trials.csv"));
    write_text(&trials_path, &body)?;
    paths.push(trials_path);

    // Wall-clock sidecar, deliberately separate: timings are not
    // deterministic and would break the bit-identical guarantee of the
    // data files.
    let mut body = String::from("# non-deterministic timing sidecar\n");
    body.push_str("n,p,theta,loss,median_wall_ms\n");
    for c in cell_results {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            c.n,
            c.p,
            c.theta,
            c.loss.as_str(),
            fmt(c.median_wall_ms)
        ));
    }
    let timings_path = spec.out_dir.join(format!("{kind}_timings.csv"));
    write_text(&timings_path, &body)?;

    Ok(paths)
}

/// Per-iteration convergence traces (both phases, every loss).
pub fn run_convergence(spec: &ExperimentSpec) -> Result<PathBuf> {
    spec.validate()?;
    let n = spec.n[0];
    let p = spec.p[0];
    let theta = spec.theta[0];

    let mut body = spec.header_lines("convergence");
    body.push_str("loss,phase,iter,dist,objective,grad_norm,tau\n");
    for &loss in &spec.losses {
        let seed = cell_seed(spec.seed, n, p, theta, loss, 0);
        let rounding_cfg = spec.rounding_config();
        let rounding = if loss == LossKind::L1 && !spec.l1_rounding {
            None
        } else {
            Some(&rounding_cfg)
        };
        let iters = if loss == LossKind::L1 {
            spec.l1_phase1_iters
        } else {
            spec.phase1_iters
        };
        let t = two_stage_trial(
            n,
            p,
            theta,
            spec.loss_spec(loss)?,
            seed,
            iters,
            rounding,
            spec.success_threshold,
        )?;
        for r in &t.phase1_trace {
            body.push_str(&format!(
                "{},1,{},{},{},{},{}\n",
                loss.as_str(),
                r.iter,
                fmt(r.dist.unwrap_or(f64::NAN)),
                fmt(r.loss),
                fmt(r.grad_norm),
                fmt(r.tau)
            ));
        }
        for r in &t.phase2_trace {
            body.push_str(&format!(
                "{},2,{},{},{},{},{}\n",
                loss.as_str(),
                r.iter,
                fmt(r.dist.unwrap_or(f64::NAN)),
                fmt(r.zeta),
                fmt(r.step_norm),
                fmt(r.tau)
            ));
        }
    }
    let path = spec.out_dir.join("convergence.csv");
    write_text(&path, &body)?;
    Ok(path)
}

/// Success curves over θ at fixed (n, p).
pub fn run_vary_theta(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let n = spec.n[0];
    let p = spec.p[0];
    let cells: Vec<(usize, usize, f64, LossKind)> = spec
        .theta
        .iter()
        .flat_map(|&t| spec.losses.iter().map(move |&l| (n, p, t, l)))
        .collect();
    let results = run_cells(spec, &cells)?;
    write_cell_outputs(spec, "vary_theta", &cells, &results)
}

/// Phase-transition grid over (p, n) at fixed θ, plus one success-fraction
/// matrix per (loss, θ).
pub fn run_phase_pn(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let cells: Vec<(usize, usize, f64, LossKind)> = spec
        .theta
        .iter()
        .flat_map(|&t| {
            spec.losses.iter().flat_map(move |&l| {
                spec.n
                    .iter()
                    .flat_map(move |&n| spec.p.iter().map(move |&p| (n, p, t, l)))
            })
        })
        .collect();
    let results = run_cells(spec, &cells)?;
    let mut paths = write_cell_outputs(spec, "phase_pn", &cells, &results)?;

    // Success-fraction matrix: rows = p, columns = n.
    for &theta in &spec.theta {
        for &loss in &spec.losses {
            let mut body = spec.header_lines("phase_pn_matrix");
            body.push_str(&format!("# loss={} theta={}\n", loss.as_str(), theta));
            body.push_str("p_over_n");
            for &n in &spec.n {
                body.push_str(&format!(",{n}"));
            }
            body.push('\n');
            for &p in &spec.p {
                body.push_str(&format!("{p}"));
                for &n in &spec.n {
                    let c = results
                        .0
                        .iter()
                        .find(|c| c.n == n && c.p == p && c.theta == theta && c.loss == loss)
                        .expect("cell present");
                    body.push_str(&format!(
                        ",{}",
                        fmt(c.successes as f64 / c.trials.max(1) as f64)
                    ));
                }
                body.push('\n');
            }
            let path = spec
                .out_dir
                .join(format!("phase_pn_matrix_{}_theta{}.csv", loss.as_str(), theta));
            write_text(&path, &body)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Geometry probe statistics for one (n, p, θ) cell.
#[derive(Debug, Clone, Copy)]
pub struct GeometryStats {
    pub regularity_fraction: f64,
    pub regularity_samples: usize,
    pub implicit_fraction: f64,
    pub implicit_pairs: usize,
    pub sharpness_min_ratio: f64,
    pub coverage_fraction: f64,
    pub coverage_draws: usize,
    pub xi: f64,
}

/// Empirical checks of the first-order geometry on the orthogonal-case
/// objective (identity kernel, raw Bernoulli-Gaussian channels):
///
/// * regularity: `⟨grad f̃(q), q_i q − e_i⟩ > 0` on dominant-coordinate
///   regions (excluding the O(μ) cap around the target),
/// * implicit regularization: `⟨grad f̃(q), e_j/q_j − e_i/q_i⟩ > 0` for every
///   near-dominant coordinate j,
/// * sharpness of the rounding objective near the target,
/// * coverage: fraction of uniform draws landing in some dominant region.
pub fn geometry_probe(
    n: usize,
    p: usize,
    theta: f64,
    mu: f64,
    samples: usize,
    coverage_draws: usize,
    seed: u64,
) -> Result<GeometryStats> {
    let xi = sphere::default_xi(n);
    let loss = LossSpec::huber(mu)?;
    let signals = crate::model::sample_bg_signals(n, p, theta, seed)?;
    let pre = PreconditionedSet::from_raw_channels(signals, theta)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6765_6f6d);
    let mut reg_hits = 0usize;
    let mut reg_total = 0usize;
    let mut imp_hits = 0usize;
    let mut imp_total = 0usize;

    let mut accepted = 0usize;
    while accepted < samples {
        let raw = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let q = match sphere::retract(&raw) {
            Ok(q) => q,
            Err(_) => continue,
        };
        let Some((idx, positive)) = sphere::region_membership(&q, xi) else {
            continue;
        };
        accepted += 1;
        // Work in the q_i > 0 half by symmetry (the objective is even).
        let q = if positive { q } else { q * -1.0 };

        let eg = crate::losses::loss_euclid_grad(&pre, &q, &loss)?;
        let rg = sphere::tangent_project(&q, &eg)?;
        let qi = q[idx];

        if (1.0 - qi * qi).max(0.0).sqrt() >= mu {
            // ⟨grad, q_i q − e_i⟩, with grad tangent at q.
            let inner = qi * q.dot(&rg) - rg[idx];
            reg_total += 1;
            if inner > 0.0 {
                reg_hits += 1;
            }
        }

        for j in 0..n {
            if j == idx || q[j] == 0.0 {
                continue;
            }
            if q[j] * q[j] >= qi * qi / 3.0 {
                let inner = rg[j] / q[j] - rg[idx] / qi;
                imp_total += 1;
                if inner > 0.0 {
                    imp_hits += 1;
                }
            }
        }
    }

    // Sharpness probe near a basis-vector target on a matched identity-kernel
    // instance run through the real preconditioning pipeline.
    let truth = GroundTruth::synthesize_with(
        n,
        p,
        theta,
        seed,
        &crate::model::KernelSpec::Explicit(crate::model::delta(n)),
    )?;
    let obs = forward(&truth)?;
    let pre_full = compute_preconditioner(&obs, theta)?;
    let unit_target = recover::preconditioned_inverse_target(&truth.kernel, &pre_full)?;
    let noise = sphere::init_random_sphere(n, seed ^ 0xa5a5) * 0.03;
    let r = sphere::retract(&(&unit_target + &noise))?;
    let sharp = rounding::sharpness_probe(&pre_full, &r, &truth, samples, seed ^ 0x1234)?;

    // Region coverage of uniform initializations.
    let mut cov_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    let mut covered = 0usize;
    for _ in 0..coverage_draws {
        let q = loop {
            let raw = Array1::from_shape_fn(n, |_| cov_rng.sample::<f64, _>(StandardNormal));
            if let Ok(q) = sphere::retract(&raw) {
                break q;
            }
        };
        if sphere::region_membership(&q, xi).is_some() {
            covered += 1;
        }
    }

    Ok(GeometryStats {
        regularity_fraction: reg_hits as f64 / reg_total.max(1) as f64,
        regularity_samples: reg_total,
        implicit_fraction: imp_hits as f64 / imp_total.max(1) as f64,
        implicit_pairs: imp_total,
        sharpness_min_ratio: sharp.min_ratio,
        coverage_fraction: covered as f64 / coverage_draws.max(1) as f64,
        coverage_draws,
        xi,
    })
}

/// Geometry probe over the spec's (n, p, θ) grid.
pub fn run_geometry(spec: &ExperimentSpec) -> Result<PathBuf> {
    spec.validate()?;
    let mut body = spec.header_lines("geometry");
    body.push_str(
        "n,p,theta,mu,xi,regularity_fraction,regularity_samples,implicit_fraction,implicit_pairs,sharpness_min_ratio,coverage_fraction,coverage_draws\n",
    );
    for &n in &spec.n {
        for &p in &spec.p {
            for &theta in &spec.theta {
                let stats = geometry_probe(n, p, theta, spec.mu, spec.samples, 10_000, spec.seed)?;
                body.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    n,
                    p,
                    theta,
                    fmt(spec.mu),
                    fmt(stats.xi),
                    fmt(stats.regularity_fraction),
                    stats.regularity_samples,
                    fmt(stats.implicit_fraction),
                    stats.implicit_pairs,
                    fmt(stats.sharpness_min_ratio),
                    fmt(stats.coverage_fraction),
                    stats.coverage_draws,
                ));
            }
        }
    }
    let path = spec.out_dir.join("geometry.csv");
    write_text(&path, &body)?;
    Ok(path)
}

/// Median orthogonality defect across seeds, per channel count. Used by the
/// preconditioner-convergence study.
pub fn defect_sweep(n: usize, theta: f64, ps: &[usize], seeds: usize, master: u64) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for &p in ps {
        let mut defects = Vec::with_capacity(seeds);
        for s in 0..seeds {
            let seed = cell_seed(master, n, p, theta, LossKind::Huber, s);
            let truth = GroundTruth::synthesize_with(
                n,
                p,
                theta,
                seed,
                &crate::model::KernelSpec::Explicit(crate::model::delta(n)),
            )?;
            let obs = forward(&truth)?;
            let pre = compute_preconditioner(&obs, theta)?;
            defects.push(orthogonality_defect(&truth, &pre)?);
        }
        out.push((p, median(&mut defects)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seed_is_stable_and_distinguishes_fields() {
        let a = cell_seed(7, 50, 10, 0.25, LossKind::Huber, 0);
        assert_eq!(a, cell_seed(7, 50, 10, 0.25, LossKind::Huber, 0));
        assert_ne!(a, cell_seed(7, 50, 10, 0.25, LossKind::Huber, 1));
        assert_ne!(a, cell_seed(7, 50, 10, 0.25, LossKind::L4, 0));
        assert_ne!(a, cell_seed(7, 51, 10, 0.25, LossKind::Huber, 0));
        assert_ne!(a, cell_seed(8, 50, 10, 0.25, LossKind::Huber, 0));
        assert_ne!(a, cell_seed(7, 50, 10, 0.3, LossKind::Huber, 0));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::default();
        assert!(spec.validate().is_ok());
        spec.trials = 0;
        assert!(spec.validate().is_err());
        spec.trials = 1;
        spec.theta = vec![];
        assert!(spec.validate().is_err());
        spec.theta = vec![1.5];
        assert!(spec.validate().is_err());
        spec.theta = vec![0.25];
        spec.success_threshold = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn tiny_end_to_end_cells_run() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            n: vec![24],
            p: vec![20],
            theta: vec![0.25],
            losses: vec![LossKind::Huber],
            trials: 2,
            seed: 5,
            out_dir: dir.path().to_path_buf(),
            phase1_iters: 40,
            rounding_iters: 300,
            ..Default::default()
        };
        let paths = run_vary_theta(&spec).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
        let cells = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(cells.contains("n,p,theta,loss"));
    }

    #[test]
    fn convergence_emits_rows_per_loss_and_phase() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            n: vec![24],
            p: vec![20],
            theta: vec![0.25],
            losses: vec![LossKind::Huber, LossKind::L1],
            trials: 1,
            seed: 3,
            out_dir: dir.path().to_path_buf(),
            phase1_iters: 5,
            rounding_iters: 5,
            l1_rounding: false,
            ..Default::default()
        };
        let path = run_convergence(&spec).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.contains("huber,1,0,"));
        assert!(text.contains("huber,2,0,"));
        assert!(text.contains("l1,1,0,"));
        assert!(!text.contains("l1,2,0,"), "l1 rounding disabled");
    }

    #[test]
    fn phase_pn_outputs_are_bit_identical_across_thread_counts() {
        let run_with_threads = |threads: usize, dir: &Path| {
            let spec = ExperimentSpec {
                n: vec![16, 24],
                p: vec![6, 12],
                theta: vec![0.25],
                losses: vec![LossKind::Huber],
                trials: 2,
                seed: 11,
                out_dir: dir.to_path_buf(),
                phase1_iters: 15,
                rounding_iters: 50,
                ..Default::default()
            };
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_phase_pn(&spec)).unwrap();
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_with_threads(1, d1.path());
        run_with_threads(4, d2.path());
        for name in ["phase_pn_cells.csv", "phase_pn_trials.csv", "phase_pn_matrix_huber_theta0.25.csv"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between thread counts");
        }
    }
}
