//! (p, n) phase-transition grid at fixed θ: how many channels are needed at
//! each dimension. Emits per-cell CSVs plus one success-fraction matrix per
//! loss (rows = p, columns = n).
//!
//!     cargo run --release --example phase_transition

use mcsbd::experiments::{run_phase_pn, ExperimentSpec};
use mcsbd::losses::LossKind;
use std::path::PathBuf;

fn main() -> mcsbd::Result<()> {
    let spec = ExperimentSpec {
        n: vec![50, 100, 200],
        p: vec![5, 10, 25, 50],
        theta: vec![0.25],
        losses: vec![LossKind::Huber, LossKind::L4],
        trials: 15,
        seed: 7,
        out_dir: PathBuf::from("target/example-out/phase_pn"),
        ..Default::default()
    };
    for path in run_phase_pn(&spec)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
