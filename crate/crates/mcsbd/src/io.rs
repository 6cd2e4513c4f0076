//! File formats.
//!
//! 1D container (`MCSBD1`): magic `"MCSBD1"`, little-endian `u32 n`,
//! `u32 p`, `u8 kind`, then the payload. `kind = 0` is a plain channel set
//! (p·n f64 values); `kind = 1` is a ground-truth bundle (`f64 theta`,
//! `u64 seed`, kernel, then the p signals). Binary round trips are
//! bit-exact.
//!
//! 2D frame stack (`MCSBD2`): magic `"MCSBD2"`, `u32 n1`, `u32 n2`, `u32 p`,
//! then p frames of row-major f64.
//!
//! CSV: one channel per column; ground-truth CSV carries theta/seed in `#`
//! header comments and the kernel as the first column.

use ndarray::{Array1, Array2};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{McsbdError, Result};
use crate::model::{GroundTruth, ObservationSet};

const MAGIC_1D: &[u8; 6] = b"MCSBD1";
const MAGIC_2D: &[u8; 6] = b"MCSBD2";

const KIND_CHANNELS: u8 = 0;
const KIND_GROUND_TRUTH: u8 = 1;

/// What a 1D container file holds.
#[derive(Debug)]
pub enum Payload1d {
    Channels(Vec<Array1<f64>>),
    GroundTruth(GroundTruth),
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| McsbdError::io(path, e))?;
    f.write_all(bytes).map_err(|e| McsbdError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path).map_err(|e| McsbdError::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| McsbdError::io(path, e))?;
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, count: usize) -> Result<&'a [u8]> {
        if self.pos + count > self.buf.len() {
            return Err(McsbdError::format(self.path, "truncated file"));
        }
        let slice = &self.buf[self.pos..self.pos + count];
        self.pos += count;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec(&mut self, n: usize) -> Result<Array1<f64>> {
        let mut v = Array1::zeros(n);
        for i in 0..n {
            v[i] = self.f64()?;
        }
        Ok(v)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(McsbdError::format(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

fn push_vec(out: &mut Vec<u8>, v: &Array1<f64>) {
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Save a plain channel set (`kind = 0`).
pub fn save_channels_bin(path: &Path, channels: &[Array1<f64>]) -> Result<()> {
    if channels.is_empty() {
        return Err(McsbdError::InvalidParameter("cannot save an empty channel set".into()));
    }
    let n = channels[0].len();
    let mut out = Vec::with_capacity(15 + 8 * n * channels.len());
    out.extend_from_slice(MAGIC_1D);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    out.push(KIND_CHANNELS);
    for c in channels {
        if c.len() != n {
            return Err(McsbdError::DimensionMismatch("channel lengths differ".into()));
        }
        push_vec(&mut out, c);
    }
    write_file(path, &out)
}

pub fn save_observations_bin(path: &Path, obs: &ObservationSet) -> Result<()> {
    save_channels_bin(path, obs.channels())
}

/// Save a ground-truth bundle (`kind = 1`).
pub fn save_ground_truth_bin(path: &Path, truth: &GroundTruth) -> Result<()> {
    let n = truth.kernel.len();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_1D);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(truth.signals.len() as u32).to_le_bytes());
    out.push(KIND_GROUND_TRUTH);
    out.extend_from_slice(&truth.theta.to_le_bytes());
    out.extend_from_slice(&truth.seed.to_le_bytes());
    push_vec(&mut out, &truth.kernel);
    for x in &truth.signals {
        if x.len() != n {
            return Err(McsbdError::DimensionMismatch("signal lengths differ".into()));
        }
        push_vec(&mut out, x);
    }
    write_file(path, &out)
}

/// Load either payload kind from a 1D container.
pub fn load_1d_bin(path: &Path) -> Result<Payload1d> {
    let buf = read_file(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0, path };
    if cur.take(6)? != MAGIC_1D {
        return Err(McsbdError::format(path, "bad magic (expected MCSBD1)"));
    }
    let n = cur.u32()? as usize;
    let p = cur.u32()? as usize;
    let kind = cur.u8()?;
    match kind {
        KIND_CHANNELS => {
            let mut channels = Vec::with_capacity(p);
            for _ in 0..p {
                channels.push(cur.vec(n)?);
            }
            cur.done()?;
            Ok(Payload1d::Channels(channels))
        }
        KIND_GROUND_TRUTH => {
            let theta = cur.f64()?;
            let seed = cur.u64()?;
            let kernel = cur.vec(n)?;
            let mut signals = Vec::with_capacity(p);
            for _ in 0..p {
                signals.push(cur.vec(n)?);
            }
            cur.done()?;
            Ok(Payload1d::GroundTruth(GroundTruth { kernel, signals, theta, seed }))
        }
        other => Err(McsbdError::format(path, format!("unknown payload kind {other}"))),
    }
}

/// Load a channel set, rejecting ground-truth bundles.
pub fn load_channels_bin(path: &Path) -> Result<Vec<Array1<f64>>> {
    match load_1d_bin(path)? {
        Payload1d::Channels(c) => Ok(c),
        Payload1d::GroundTruth(_) => {
            Err(McsbdError::format(path, "expected a channel set, found a ground-truth bundle"))
        }
    }
}

/// Save a 2D frame stack.
pub fn save_frames_bin(path: &Path, frames: &[Array2<f64>]) -> Result<()> {
    if frames.is_empty() {
        return Err(McsbdError::InvalidParameter("cannot save an empty frame stack".into()));
    }
    let (n1, n2) = frames[0].dim();
    let mut out = Vec::with_capacity(18 + 8 * n1 * n2 * frames.len());
    out.extend_from_slice(MAGIC_2D);
    out.extend_from_slice(&(n1 as u32).to_le_bytes());
    out.extend_from_slice(&(n2 as u32).to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        if f.dim() != (n1, n2) {
            return Err(McsbdError::DimensionMismatch("frame shapes differ".into()));
        }
        for x in f.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_file(path, &out)
}

/// Load a 2D frame stack.
pub fn load_frames_bin(path: &Path) -> Result<Vec<Array2<f64>>> {
    let buf = read_file(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0, path };
    if cur.take(6)? != MAGIC_2D {
        return Err(McsbdError::format(path, "bad magic (expected MCSBD2)"));
    }
    let n1 = cur.u32()? as usize;
    let n2 = cur.u32()? as usize;
    let p = cur.u32()? as usize;
    let mut frames = Vec::with_capacity(p);
    for _ in 0..p {
        let mut frame = Array2::zeros((n1, n2));
        for i in 0..n1 {
            for j in 0..n2 {
                frame[[i, j]] = cur.f64()?;
            }
        }
        frames.push(frame);
    }
    cur.done()?;
    Ok(frames)
}

/// Observations as CSV, one channel per column.
pub fn save_observations_csv(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut out = String::new();
    out.push_str(&(0..obs.p()).map(|i| format!("y{i}")).collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in 0..obs.n() {
        let line = obs
            .channels()
            .iter()
            .map(|c| format!("{:e}", c[row]))
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&line);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Ground truth as CSV: kernel first column, then signals; theta/seed in
/// header comments.
pub fn save_ground_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# theta={:e}\n# seed={}\n", truth.theta, truth.seed));
    out.push_str("kernel,");
    out.push_str(&(0..truth.p()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in 0..truth.n() {
        let mut cells = vec![format!("{:e}", truth.kernel[row])];
        cells.extend(truth.signals.iter().map(|x| format!("{:e}", x[row])));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Parse a ground-truth CSV written by [`save_ground_truth_csv`]: kernel in
/// the first column, signals after it, theta/seed in `#` comments.
pub fn load_ground_truth_csv(path: &Path) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| McsbdError::io(path, e))?;
    let mut theta = None;
    let mut seed = 0u64;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# theta=") {
            theta = rest.trim().parse::<f64>().ok();
        } else if let Some(rest) = line.strip_prefix("# seed=") {
            seed = rest.trim().parse::<u64>().unwrap_or(0);
        }
    }
    let theta = theta.ok_or_else(|| McsbdError::format(path, "missing '# theta=' header"))?;
    let mut columns = load_channels_csv(path)?;
    if columns.is_empty() {
        return Err(McsbdError::format(path, "no kernel column"));
    }
    let kernel = columns.remove(0);
    Ok(GroundTruth { kernel, signals: columns, theta, seed })
}

/// Parse a CSV of numeric columns (one channel per column), skipping `#`
/// comments and an optional non-numeric header row.
pub fn load_channels_csv(path: &Path) -> Result<Vec<Array1<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| McsbdError::io(path, e))?;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        let parsed: Vec<std::result::Result<f64, _>> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        if parsed.iter().any(|r| r.is_err()) {
            if columns.is_empty() {
                continue; // header row
            }
            return Err(McsbdError::format(
                path,
                format!("unparsable numeric cell on line {}", lineno + 1),
            ));
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); cells.len()];
        }
        if cells.len() != columns.len() {
            return Err(McsbdError::format(
                path,
                format!("ragged row on line {}", lineno + 1),
            ));
        }
        for (col, val) in columns.iter_mut().zip(parsed) {
            col.push(val.unwrap());
        }
    }
    if columns.is_empty() {
        return Err(McsbdError::format(path, "no numeric rows"));
    }
    Ok(columns.into_iter().map(Array1::from_vec).collect())
}

/// Parse a single grid from CSV (rows of comma-separated values).
pub fn load_grid_csv(path: &Path) -> Result<Array2<f64>> {
    let columns = load_channels_csv(path)?;
    let n2 = columns.len();
    let n1 = columns[0].len();
    Ok(Array2::from_shape_fn((n1, n2), |(i, j)| columns[j][i]))
}
