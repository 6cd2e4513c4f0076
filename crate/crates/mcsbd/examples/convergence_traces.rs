//! Per-iteration convergence comparison of the three losses: Phase-1
//! distance stagnates at the smoothing floor, Phase-2 rounding resumes a
//! linear decay to exactness. Writes `convergence.csv` for plotting
//! (see docs/plot.gp).
//!
//!     cargo run --release --example convergence_traces

use mcsbd::experiments::{run_convergence, ExperimentSpec};
use mcsbd::losses::LossKind;
use std::path::PathBuf;

fn main() -> mcsbd::Result<()> {
    let spec = ExperimentSpec {
        n: vec![200],
        p: vec![50],
        theta: vec![0.25],
        losses: vec![LossKind::Huber, LossKind::L1, LossKind::L4],
        // A seed whose first trial recovers under every loss, so the traces
        // show the full two-phase shape.
        seed: 11,
        out_dir: PathBuf::from("target/example-out/convergence"),
        // The raw Riemannian subgradient path is the interesting part for
        // the nonsmooth loss.
        l1_rounding: false,
        ..Default::default()
    };
    let path = run_convergence(&spec)?;
    println!("wrote {}", path.display());
    println!("columns: loss,phase,iter,dist,objective,grad_norm,tau");
    Ok(())
}
