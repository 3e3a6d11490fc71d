//! Signal primitives used by the feature extractors: analytic-signal
//! envelope, onset detection, threshold-crossing counts, one-sided PSD and
//! the level-3 wavelet packet transform.

mod wavelet;

pub use wavelet::{wpt3, wpt3_with, NodeOrder, Wavelet, WptConfig, WptNodes, WPT_LEVEL};

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude of the analytic signal (FFT-based Hilbert transform).
pub fn envelope(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 4 {
        return Err(Error::Signal(format!("envelope needs >= 4 samples, got {n}")));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);

    // Keep DC (and Nyquist for even n), double positive bins, zero negative bins.
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= gain;
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.norm() * scale).collect())
}

/// First index where `|x[n]| >= frac * max|x|`.
pub fn detect_onset(x: &[f64], frac: f64) -> Result<usize> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Signal(format!("onset fraction {frac} not in (0,1)")));
    }
    let peak = peak_abs(x);
    if peak == 0.0 {
        return Err(Error::Signal("onset undefined for an all-zero signal".into()));
    }
    let threshold = frac * peak;
    Ok(x.iter().position(|v| v.abs() >= threshold).unwrap_or(0))
}

/// Positive-going crossings of the rectified signal in `(start, end]`:
/// indices `n` with `|x[n-1]| < threshold <= |x[n]|`.
pub fn count_crossings(x: &[f64], threshold: f64, start: usize, end: usize) -> Result<usize> {
    if start > end || end >= x.len() {
        return Err(Error::Signal(format!(
            "invalid crossing range {start}..={end} for {} samples",
            x.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::Signal(format!("threshold must be > 0, got {threshold}")));
    }
    Ok(((start + 1)..=end)
        .filter(|&n| x[n - 1].abs() < threshold && threshold <= x[n].abs())
        .count())
}

pub(crate) fn peak_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// First index of the maximum absolute value.
pub(crate) fn argmax_abs(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    best
}

/// One-sided power spectral density on a uniform grid starting at 0 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub df: f64,
}

impl Spectrum {
    /// `Σ psd · df`.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df
    }
}

/// Periodic Hann window, `w[n] = 0.5 - 0.5 cos(2πn/N)`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Single Hann-windowed periodogram of the whole record.
///
/// Scaled so that `Σ psd · df` equals the mean square of the windowed
/// signal; `df = sample_rate / len`.
pub fn psd(x: &[f64], sample_rate: f64) -> Result<Spectrum> {
    let n = x.len();
    if n < 8 {
        return Err(Error::Signal(format!("psd needs >= 8 samples, got {n}")));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::Signal(format!("sample rate must be > 0, got {sample_rate}")));
    }
    let window = hann(n);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .zip(&window)
        .map(|(&v, &w)| Complex::new(v * w, 0.0))
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);

    let df = sample_rate / n as f64;
    let n_bins = n / 2 + 1;
    let norm = 1.0 / (n as f64 * n as f64 * df);
    let psd = (0..n_bins)
        .map(|k| {
            let p = buf[k].norm_sqr() * norm;
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            if edge {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * df).collect();
    Ok(Spectrum { freqs, psd, df })
}
