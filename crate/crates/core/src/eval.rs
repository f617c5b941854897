//! Source-to-distortion ratio evaluation.
//!
//! Two variants: a scale-invariant SDR and a projection-based SDR in which
//! the estimate is projected onto the span of the reference and its
//! delayed copies (the single-target decomposition used by separation
//! benchmark tooling).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::dsp::Waveform;
use crate::scalar::Scalar;

/// Cap reported instead of +Inf when the residual vanishes.
pub const SDR_CAP_DB: f64 = 100.0;

/// Default projection filter length at 16 kHz.
pub const DEFAULT_FILTER_TAPS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdrVariant {
    BssProj,
    SiSdr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + serde::de::DeserializeOwned")]
pub struct SdrReport<T> {
    pub sdr_db: T,
    pub variant: SdrVariant,
    pub filter_taps: Option<usize>,
    /// Set when the projection solve needed ridge regularization.
    pub ridge_fallback: bool,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn ratio_db<T: Scalar>(signal: T, residual: T) -> T {
    let cap = T::from_f64_lossy(SDR_CAP_DB);
    if residual <= T::zero() {
        return cap;
    }
    let ten = T::from_f64_lossy(10.0);
    let db = ten * (signal / residual).log10();
    db.min(cap)
}

/// Scale-invariant SDR: 10 log10(|as|^2 / |as - e|^2) with
/// a = <e, s> / |s|^2.
pub fn si_sdr<T: Scalar>(estimate: &Waveform<T>, reference: &Waveform<T>) -> Result<SdrReport<T>> {
    if estimate.len() != reference.len() {
        return Err(CoreError::dims("si_sdr length", estimate.len(), reference.len()));
    }
    let s = reference.samples();
    let e = estimate.samples();
    let ref_energy = dot(s, s);
    if ref_energy <= T::zero() {
        return Err(CoreError::InvalidArgument("zero reference signal".into()));
    }
    let alpha = dot(e, s) / ref_energy;
    let mut target_energy = T::zero();
    let mut resid_energy = T::zero();
    for (&ei, &si) in e.iter().zip(s) {
        let t = alpha * si;
        let r = t - ei;
        target_energy += t * t;
        resid_energy += r * r;
    }
    Ok(SdrReport {
        sdr_db: ratio_db(target_energy, resid_energy),
        variant: SdrVariant::SiSdr,
        filter_taps: None,
        ridge_fallback: false,
    })
}

/// Projection-based SDR: least-squares projection of the estimate onto the
/// reference delayed by 0..taps-1 samples; SDR is the projection-to-residual
/// energy ratio. A rank-deficient normal system falls back to a
/// ridge-regularized solve, flagged in the report.
pub fn sdr_bss<T: Scalar>(
    estimate: &Waveform<T>,
    reference: &Waveform<T>,
    filter_taps: usize,
) -> Result<SdrReport<T>> {
    if estimate.len() != reference.len() {
        return Err(CoreError::dims("sdr length", estimate.len(), reference.len()));
    }
    if filter_taps == 0 || estimate.len() < filter_taps {
        return Err(CoreError::InvalidArgument(format!(
            "need signal length >= filter_taps, got {} < {}",
            estimate.len(),
            filter_taps
        )));
    }

    let n = reference.len();
    let s: Vec<f64> = reference.samples().iter().map(|v| v.to_f64_lossy()).collect();
    let e: Vec<f64> = estimate.samples().iter().map(|v| v.to_f64_lossy()).collect();

    if dot(&s, &s) <= 0.0 {
        return Err(CoreError::InvalidArgument("zero reference signal".into()));
    }

    // Exact Gram matrix of the zero-padded delayed references,
    // G[i][j] = sum_{m=0}^{n-1-max(i,j)} s[m] s[m+|i-j|], built per diagonal
    // in O(taps^2). Exactness (rather than a Toeplitz approximation) makes a
    // delayed copy of the reference land exactly in the projection span.
    let l = filter_taps;
    let mut gram = vec![0.0f64; l * l];
    for d in 0..l {
        let full: f64 = (0..n - d).map(|m| s[m] * s[m + d]).sum();
        let mut tail = 0.0f64;
        for j in d..l {
            // Entry with max(i, j) = j on diagonal |i - j| = d.
            if j > d {
                let m = n - j;
                tail += s[m] * s[m + d];
            }
            let value = full - tail;
            gram[(j - d) * l + j] = value;
            gram[j * l + (j - d)] = value;
        }
    }
    let mut cross = vec![0.0f64; l];
    for (k, c) in cross.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in k..n {
            acc += e[i] * s[i - k];
        }
        *c = acc;
    }

    // Plain Cholesky is cheap at these sizes; ridge retry handles rank
    // deficiency.
    let mut ridge_fallback = false;
    let mut lambda = 0.0f64;
    let filter = loop {
        match cholesky_solve(&gram, &cross, lambda) {
            Some(h) => break h,
            None => {
                ridge_fallback = true;
                lambda = if lambda == 0.0 { 1e-10 } else { lambda * 10.0 };
                if lambda > 1.0 {
                    return Err(CoreError::InvalidArgument(
                        "projection solve failed even with ridge".into(),
                    ));
                }
            }
        }
    };

    let mut proj_energy = 0.0f64;
    let mut resid_energy = 0.0f64;
    for i in 0..n {
        let mut p = 0.0;
        for (k, &h) in filter.iter().enumerate() {
            if i >= k {
                p += h * s[i - k];
            }
        }
        let r = e[i] - p;
        proj_energy += p * p;
        resid_energy += r * r;
    }

    Ok(SdrReport {
        sdr_db: ratio_db(
            T::from_f64_lossy(proj_energy),
            T::from_f64_lossy(resid_energy),
        ),
        variant: SdrVariant::BssProj,
        filter_taps: Some(filter_taps),
        ridge_fallback,
    })
}

/// Solves (G + lambda I) x = b via Cholesky; returns None if the matrix is
/// not numerically positive definite.
fn cholesky_solve(gram: &[f64], b: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let n = b.len();
    let mut mat = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            mat[i * n + j] = gram[i * n + j];
        }
        mat[i * n + i] += lambda;
    }
    // In-place lower Cholesky.
    for i in 0..n {
        for j in 0..=i {
            let mut sum = mat[i * n + j];
            for k in 0..j {
                sum -= mat[i * n + k] * mat[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                mat[i * n + i] = sum.sqrt();
            } else {
                mat[i * n + j] = sum / mat[j * n + j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= mat[i * n + k] * y[k];
        }
        y[i] = sum / mat[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= mat[k * n + i] * x[k];
        }
        x[i] = sum / mat[i * n + i];
    }
    Some(x)
}
