//! Single-channel comparison features: RMS, |ToC| and approximate entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples of one channel inside one analysis window.
#[derive(Debug, Clone, Copy)]
pub struct SingleChannelWindow<'a> {
    samples: &'a [f64],
    fs: f64,
}

impl<'a> SingleChannelWindow<'a> {
    pub fn new(samples: &'a [f64], fs: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("window has no samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("window has non-finite samples".into()));
        }
        if !(fs > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sampling rate must be > 0, got {fs}"
            )));
        }
        Ok(Self { samples, fs })
    }

    pub fn samples(&self) -> &'a [f64] {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }
}

pub fn rms(w: &SingleChannelWindow<'_>) -> f64 {
    let ss: f64 = w.samples.iter().map(|v| v * v).sum();
    (ss / w.len() as f64).sqrt()
}

/// How the zero-lag third-order cumulant is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ToCNormalization {
    /// Raw cumulant `(1/N) sum (x - mean)^3`.
    #[default]
    Raw,
    /// Divided by `sd^3` (skewness).
    Skewness,
}

/// `|(1/N) sum (x_i - mean)^3|`.
pub fn abs_toc(w: &SingleChannelWindow<'_>) -> f64 {
    abs_toc_with(w, ToCNormalization::Raw)
}

pub fn abs_toc_with(w: &SingleChannelWindow<'_>, norm: ToCNormalization) -> f64 {
    let n = w.len() as f64;
    let mean = w.mean();
    let (m2, m3) = w.samples.iter().fold((0.0, 0.0), |(m2, m3), &v| {
        let c = v - mean;
        (m2 + c * c, m3 + c * c * c)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    match norm {
        ToCNormalization::Raw => m3.abs(),
        ToCNormalization::Skewness if m2 > 0.0 => (m3 / m2.powf(1.5)).abs(),
        ToCNormalization::Skewness => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApEn {
    pub value: f64,
    /// Zero standard deviation: every template matches every other.
    pub degenerate: bool,
}

/// Pincus approximate entropy with tolerance `r = r_factor * sd` (population sd),
/// Chebyshev distance and self-matches counted.
pub fn apen(w: &SingleChannelWindow<'_>, m: usize, r_factor: f64) -> Result<ApEn> {
    let x = w.samples;
    let n = x.len();
    if m == 0 || n <= m + 1 {
        return Err(Error::InvalidInput(format!(
            "approximate entropy needs N > m + 1, got N = {n}, m = {m}"
        )));
    }
    if !(r_factor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "r factor must be > 0, got {r_factor}"
        )));
    }
    let mean = w.mean();
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    // The computed mean of a constant series can be off by one ulp.
    if sd == 0.0 || x.iter().all(|&v| v == x[0]) {
        return Ok(ApEn {
            value: 0.0,
            degenerate: true,
        });
    }
    let r = r_factor * sd;

    let n_m = n - m + 1;
    let n_m1 = n - m;
    let mut counts_m = vec![0u32; n_m];
    let mut counts_m1 = vec![0u32; n_m1];

    // Candidates sorted by their first coordinate; each scan is limited to a
    // slightly widened first-coordinate interval and then checked exactly.
    let mut order: Vec<usize> = (0..n_m).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let keys: Vec<f64> = order.iter().map(|&j| x[j]).collect();
    let slack = r * 1e-9 + f64::EPSILON * x.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    for i in 0..n_m {
        let lo = keys.partition_point(|&k| k < x[i] - r - slack);
        let hi = keys.partition_point(|&k| k <= x[i] + r + slack);
        for &j in &order[lo..hi] {
            if (0..m).all(|k| (x[i + k] - x[j + k]).abs() <= r) {
                counts_m[i] += 1;
                if i < n_m1 && j < n_m1 && (x[i + m] - x[j + m]).abs() <= r {
                    counts_m1[i] += 1;
                }
            }
        }
    }

    let phi = |counts: &[u32]| {
        let total = counts.len() as f64;
        counts.iter().map(|&c| (c as f64 / total).ln()).sum::<f64>() / total
    };
    Ok(ApEn {
        value: phi(&counts_m) - phi(&counts_m1),
        degenerate: false,
    })
}

/// RMS, |ToC| and ApEn (m = 2, r = 0.2 sd) of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineFeatures {
    pub rms: f64,
    pub abs_toc: f64,
    pub apen: f64,
}

pub fn compute_all(
    w: &SingleChannelWindow<'_>,
    norm: ToCNormalization,
) -> Result<BaselineFeatures> {
    Ok(BaselineFeatures {
        rms: rms(w),
        abs_toc: abs_toc_with(w, norm),
        apen: apen(w, 2, 0.2)?.value,
    })
}
