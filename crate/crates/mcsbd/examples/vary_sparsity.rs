//! Recovery probability as the sparsity level θ grows, for Huber vs ℓ¹ vs
//! ℓ⁴. The Huber and ℓ¹ curves stay near 1 up to θ ≈ 1/3; ℓ⁴ drops much
//! earlier at this channel count.
//!
//!     cargo run --release --example vary_sparsity

use mcsbd::experiments::{run_vary_theta, ExperimentSpec};
use mcsbd::losses::LossKind;
use std::path::PathBuf;

fn main() -> mcsbd::Result<()> {
    let spec = ExperimentSpec {
        // Desk-scale version of the n=500, p=50 study.
        n: vec![200],
        p: vec![50],
        theta: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.6],
        losses: vec![LossKind::Huber, LossKind::L1, LossKind::L4],
        trials: 15,
        seed: 7,
        out_dir: PathBuf::from("target/example-out/vary_theta"),
        ..Default::default()
    };
    for path in run_vary_theta(&spec)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
