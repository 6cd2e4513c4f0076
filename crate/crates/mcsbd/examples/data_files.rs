//! File-format tour: the MCSBD1/MCSBD2 binary containers and the CSV
//! fallbacks, with a bit-exact binary round trip.
//!
//!     cargo run --release --example data_files

use mcsbd::io;
use mcsbd::model::{forward, GroundTruth};
use mcsbd::solver2d::{forward2d, gaussian_psf, GroundTruth2d};
use std::path::PathBuf;

fn main() -> mcsbd::Result<()> {
    let dir = PathBuf::from("target/example-out/data_files");
    std::fs::create_dir_all(&dir).expect("create output dir");

    let truth = GroundTruth::synthesize(64, 8, 0.3, 11)?;
    let obs = forward(&truth)?;

    // 1D binary containers: observations (kind 0) and the full bundle (kind 1).
    io::save_observations_bin(&dir.join("obs.bin"), &obs)?;
    io::save_ground_truth_bin(&dir.join("truth.bin"), &truth)?;
    match io::load_1d_bin(&dir.join("truth.bin"))? {
        io::Payload1d::GroundTruth(t) => {
            assert_eq!(t.kernel, truth.kernel, "binary round trip is bit-exact");
            println!("truth.bin: n={}, p={}, theta={}", t.n(), t.p(), t.theta);
        }
        _ => unreachable!(),
    }

    // CSV: one channel per column.
    io::save_observations_csv(&dir.join("obs.csv"), &obs)?;
    let columns = io::load_channels_csv(&dir.join("obs.csv"))?;
    println!("obs.csv: {} columns of length {}", columns.len(), columns[0].len());

    // 2D frame stack.
    let psf = gaussian_psf(16, 16, 6, 0.8)?;
    let stack = forward2d(&GroundTruth2d::synthesize(&psf, 5, 0.1, 3)?)?;
    io::save_frames_bin(&dir.join("frames.bin"), stack.frames())?;
    let frames = io::load_frames_bin(&dir.join("frames.bin"))?;
    assert_eq!(frames, stack.frames().to_vec());
    println!("frames.bin: {} frames of {:?}", frames.len(), frames[0].dim());

    println!("all files under {}", dir.display());
    Ok(())
}
