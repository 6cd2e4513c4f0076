//! Circulant algebra over 1D vectors and 2D grids.
//!
//! All convolutions are circular (indices modulo n). The DFT convention is
//! the unnormalized forward transform with `(1/n)`-scaled inverse, so
//! `‖fft(v)‖² = n·‖v‖²` and `ifft(fft(v)) = v`. Every operation has a naive
//! O(n²) (resp. O(n⁴)) counterpart kept as a permanent test oracle.

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{McsbdError, Result};

/// Full-length complex spectrum of a real 1D signal.
pub type Spectrum = Array1<Complex<f64>>;

/// Full complex spectrum of a real 2D grid.
pub type Spectrum2d = Array2<Complex<f64>>;

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Plans are cached per length inside the shared planner; the returned
/// `Arc<dyn Fft>` is thread-safe, so the lock is only held for the lookup.
fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    planner().lock().unwrap().plan_fft_forward(n)
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    planner().lock().unwrap().plan_fft_inverse(n)
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(McsbdError::DimensionMismatch(format!(
            "expected equal lengths, got {a} and {b}"
        )));
    }
    Ok(())
}

fn check_same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(McsbdError::DimensionMismatch(format!(
            "expected equal grid shapes, got {a:?} and {b:?}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 1D transforms
// ---------------------------------------------------------------------------

/// Unnormalized forward DFT of a real vector.
pub fn fft(v: &Array1<f64>) -> Spectrum {
    let mut buf: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
    forward_plan(buf.len()).process(&mut buf);
    Array1::from_vec(buf)
}

/// Inverse DFT scaled by 1/n; returns the real part.
pub fn ifft(s: &Spectrum) -> Array1<f64> {
    let n = s.len();
    let mut buf = s.to_vec();
    inverse_plan(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Array1::from_iter(buf.iter().map(|c| c.re * scale))
}

fn fft_inplace(buf: &mut [Complex<f64>]) {
    forward_plan(buf.len()).process(buf);
}

fn ifft_real(mut buf: Vec<Complex<f64>>) -> Array1<f64> {
    let n = buf.len();
    inverse_plan(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Array1::from_iter(buf.iter().map(|c| c.re * scale))
}

fn complexify(v: &Array1<f64>) -> Vec<Complex<f64>> {
    v.iter().map(|&x| Complex::new(x, 0.0)).collect()
}

// ---------------------------------------------------------------------------
// 1D circulant operations
// ---------------------------------------------------------------------------

/// Circular convolution `(u ⊛ v)_i = Σ_j u_j v_{(i−j) mod n}`, via FFT.
pub fn circ_conv(u: &Array1<f64>, v: &Array1<f64>) -> Result<Array1<f64>> {
    check_same_len(u.len(), v.len())?;
    let mut a = complexify(u);
    let mut b = complexify(v);
    fft_inplace(&mut a);
    fft_inplace(&mut b);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x *= *y;
    }
    Ok(ifft_real(a))
}

/// Circular correlation `C_vᵀ u = v̌ ⊛ u`, via FFT (`conj(v̂) ⊙ û`).
pub fn circ_corr(v: &Array1<f64>, u: &Array1<f64>) -> Result<Array1<f64>> {
    check_same_len(v.len(), u.len())?;
    let mut a = complexify(v);
    let mut b = complexify(u);
    fft_inplace(&mut a);
    fft_inplace(&mut b);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x = x.conj() * *y;
    }
    Ok(ifft_real(a))
}

/// Cyclic shift `s_ℓ[v]_i = v_{(i−ℓ) mod n}`; any `ℓ` is reduced mod n.
pub fn cyclic_shift(v: &Array1<f64>, ell: i64) -> Array1<f64> {
    let n = v.len();
    let shift = ell.rem_euclid(n as i64) as usize;
    Array1::from_shape_fn(n, |i| v[(i + n - shift) % n])
}

/// Cyclic reversal `v̌ = [v₁, vₙ, vₙ₋₁, …, v₂]`, i.e. `v̌_i = v_{(−i) mod n}`.
/// An involution.
pub fn cyclic_reverse(v: &Array1<f64>) -> Array1<f64> {
    let n = v.len();
    Array1::from_shape_fn(n, |i| v[(n - i) % n])
}

/// Naive O(n²) circular convolution; test oracle for the FFT path.
pub fn circ_conv_naive(u: &Array1<f64>, v: &Array1<f64>) -> Result<Array1<f64>> {
    check_same_len(u.len(), v.len())?;
    let n = u.len();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += u[j] * v[(i + n - j) % n];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Naive circular correlation `(C_vᵀu)_ℓ = Σ_m v_{(m−ℓ) mod n} u_m`,
/// written as the explicit adjoint matvec rather than via [`cyclic_reverse`].
pub fn circ_corr_naive(v: &Array1<f64>, u: &Array1<f64>) -> Result<Array1<f64>> {
    check_same_len(v.len(), u.len())?;
    let n = v.len();
    let mut out = Array1::zeros(n);
    for ell in 0..n {
        let mut acc = 0.0;
        for m in 0..n {
            acc += v[(m + n - ell) % n] * u[m];
        }
        out[ell] = acc;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// 2D transforms and circulant operations
// ---------------------------------------------------------------------------

/// Unnormalized 2D DFT (rows, then columns).
pub fn fft2(g: &Array2<f64>) -> Spectrum2d {
    let (n1, n2) = g.dim();
    let mut buf: Vec<Complex<f64>> = g.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2_buf(&mut buf, n1, n2, false);
    Array2::from_shape_vec((n1, n2), buf).expect("shape preserved")
}

/// Inverse 2D DFT scaled by 1/(n1·n2); returns the real part.
pub fn ifft2(s: &Spectrum2d) -> Array2<f64> {
    let (n1, n2) = s.dim();
    let mut buf = s.iter().copied().collect::<Vec<_>>();
    fft2_buf(&mut buf, n1, n2, true);
    let scale = 1.0 / (n1 * n2) as f64;
    Array2::from_shape_vec((n1, n2), buf.iter().map(|c| c.re * scale).collect())
        .expect("shape preserved")
}

/// Row-major in-place 2D transform. `inverse` leaves the 1/(n1·n2) scaling
/// to the caller.
fn fft2_buf(buf: &mut [Complex<f64>], n1: usize, n2: usize, inverse: bool) {
    let row_plan = if inverse { inverse_plan(n2) } else { forward_plan(n2) };
    let col_plan = if inverse { inverse_plan(n1) } else { forward_plan(n1) };
    for r in 0..n1 {
        row_plan.process(&mut buf[r * n2..(r + 1) * n2]);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n1];
    for c in 0..n2 {
        for r in 0..n1 {
            col[r] = buf[r * n2 + c];
        }
        col_plan.process(&mut col);
        for r in 0..n1 {
            buf[r * n2 + c] = col[r];
        }
    }
}

fn spec2_mul_ifft(mut a: Vec<Complex<f64>>, n1: usize, n2: usize) -> Array2<f64> {
    fft2_buf(&mut a, n1, n2, true);
    let scale = 1.0 / (n1 * n2) as f64;
    Array2::from_shape_vec((n1, n2), a.iter().map(|c| c.re * scale).collect())
        .expect("shape preserved")
}

/// 2D circular convolution via FFT.
pub fn conv2d(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(a.dim(), b.dim())?;
    let (n1, n2) = a.dim();
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2_buf(&mut fa, n1, n2, false);
    fft2_buf(&mut fb, n1, n2, false);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= *y;
    }
    Ok(spec2_mul_ifft(fa, n1, n2))
}

/// 2D circular correlation, the adjoint of `X ↦ conv2d(A, X)`.
/// Equals `conv2d(flip2d(A), X)`.
pub fn corr2d(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(a.dim(), b.dim())?;
    let (n1, n2) = a.dim();
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2_buf(&mut fa, n1, n2, false);
    fft2_buf(&mut fb, n1, n2, false);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x = x.conj() * *y;
    }
    Ok(spec2_mul_ifft(fa, n1, n2))
}

/// Cyclic flip on both axes, `flip2d(Z)_{i,j} = Z_{(−i) mod n1, (−j) mod n2}`.
/// This is the 2D analog of [`cyclic_reverse`] and an involution; convolving
/// with the flipped grid realizes correlation.
pub fn flip2d(g: &Array2<f64>) -> Array2<f64> {
    let (n1, n2) = g.dim();
    Array2::from_shape_fn((n1, n2), |(i, j)| g[[(n1 - i) % n1, (n2 - j) % n2]])
}

/// Cyclic shift of a grid by `(dr, dc)`.
pub fn cyclic_shift2d(g: &Array2<f64>, dr: i64, dc: i64) -> Array2<f64> {
    let (n1, n2) = g.dim();
    let sr = dr.rem_euclid(n1 as i64) as usize;
    let sc = dc.rem_euclid(n2 as i64) as usize;
    Array2::from_shape_fn((n1, n2), |(i, j)| {
        g[[(i + n1 - sr) % n1, (j + n2 - sc) % n2]]
    })
}

/// Naive O(n⁴) 2D circular convolution; test oracle.
pub fn conv2d_naive(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(a.dim(), b.dim())?;
    let (n1, n2) = a.dim();
    let mut out = Array2::zeros((n1, n2));
    for i in 0..n1 {
        for j in 0..n2 {
            let mut acc = 0.0;
            for k in 0..n1 {
                for l in 0..n2 {
                    acc += a[[k, l]] * b[[(i + n1 - k) % n1, (j + n2 - l) % n2]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

/// Naive 2D circular correlation (explicit adjoint sums); test oracle.
pub fn corr2d_naive(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(a.dim(), b.dim())?;
    let (n1, n2) = a.dim();
    let mut out = Array2::zeros((n1, n2));
    for i in 0..n1 {
        for j in 0..n2 {
            let mut acc = 0.0;
            for k in 0..n1 {
                for l in 0..n2 {
                    acc += a[[k, l]] * b[[(i + k) % n1, (j + l) % n2]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}
