//! Butterworth band-pass filter bank.
//!
//! Each band is a 3rd-order analog Butterworth low-pass prototype mapped to a
//! band-pass (6th order overall), discretized with the bilinear transform at
//! prewarped band edges and realized as three cascaded biquads. Filtering is
//! causal with zero initial state; the startup transient is left in the output.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MultichannelSegment;

/// Order of the analog low-pass prototype.
pub const PROTOTYPE_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, low_hz: f64, high_hz: f64) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            low_hz,
            high_hz,
        };
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz.is_finite()) {
            return Err(spec.invalid(format!("need 0 < low < high, got {low_hz}-{high_hz} Hz")));
        }
        Ok(spec)
    }

    /// delta 1-3, theta 4-7, alpha 8-12, beta 13-24, gamma 25-100 Hz.
    pub fn defaults() -> Vec<BandSpec> {
        [
            ("delta", 1.0, 3.0),
            ("theta", 4.0, 7.0),
            ("alpha", 8.0, 12.0),
            ("beta", 13.0, 24.0),
            ("gamma", 25.0, 100.0),
        ]
        .into_iter()
        .map(|(name, lo, hi)| BandSpec {
            name: name.to_string(),
            low_hz: lo,
            high_hz: hi,
        })
        .collect()
    }

    pub fn validate_for(&self, fs: f64) -> Result<()> {
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return Err(self.invalid(format!(
                "need 0 < low < high, got {}-{} Hz",
                self.low_hz, self.high_hz
            )));
        }
        if self.high_hz >= 0.5 * fs {
            return Err(self.invalid(format!(
                "upper edge {} Hz is not below Nyquist {} Hz",
                self.high_hz,
                0.5 * fs
            )));
        }
        Ok(())
    }

    fn invalid(&self, reason: String) -> Error {
        Error::InvalidBand {
            name: self.name.clone(),
            reason,
        }
    }
}

/// One second-order section, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2)
            / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn poles(&self) -> [Complex64; 2] {
        // z^2 + a1 z + a2 = 0
        let disc = Complex64::new(self.a[1] * self.a[1] - 4.0 * self.a[2], 0.0).sqrt();
        [(-self.a[1] + disc) / 2.0, (-self.a[1] - disc) / 2.0]
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn gain(&self, f_hz: f64, fs: f64) -> f64 {
        self.response(f_hz, fs).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    /// Causal filtering from zero state (transposed direct form II).
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b[0] * x + z1;
                z1 = s.b[1] * x - s.a[1] * y + z2;
                z2 = s.b[2] * x - s.a[2] * y;
                *v = y;
            }
        }
        out
    }
}

/// Designs the band-pass cascade for `spec` at sampling rate `fs`.
pub fn design_bandpass(spec: &BandSpec, fs: f64) -> Result<SosFilter> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling rate must be > 0, got {fs}"
        )));
    }
    spec.validate_for(fs)?;

    let prewarp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (w1, w2) = (prewarp(spec.low_hz), prewarp(spec.high_hz));
    let w0_sq = w1 * w2;
    let bw = w2 - w1;

    // Prototype poles in the upper half plane plus the real pole.
    let n = PROTOTYPE_ORDER;
    let proto: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
        .filter(|p| p.im >= -1e-12)
        .collect();

    let to_z = |s: Complex64| (2.0 * fs + s) / (2.0 * fs - s);
    let mut sections = Vec::with_capacity(n);
    for p in proto {
        // s^2 - p bw s + w0^2 = 0 for each prototype pole p.
        let pb = p * bw;
        let root = (pb * pb - 4.0 * w0_sq).sqrt();
        let s_a = (pb + root) / 2.0;
        let s_b = (pb - root) / 2.0;
        let (z_a, z_b) = (to_z(s_a), to_z(s_b));
        if p.im.abs() < 1e-12 {
            // Real prototype pole: its two band-pass poles form one section.
            sections.push(section_from_poles(z_a, z_b));
        } else {
            sections.push(section_from_poles(z_a, z_a.conj()));
            sections.push(section_from_poles(z_b, z_b.conj()));
        }
    }

    let mut filter = SosFilter { sections };
    // Unit gain at the digital image of the analog center frequency.
    let f_center = fs / PI * (w0_sq.sqrt() / (2.0 * fs)).atan();
    let g = filter.gain(f_center, fs);
    let per_section = g.powf(-1.0 / filter.sections.len() as f64);
    for s in &mut filter.sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }
    Ok(filter)
}

/// Section with numerator `1 - z^-2` (zeros at DC and Nyquist) and the given pole pair.
fn section_from_poles(p1: Complex64, p2: Complex64) -> Biquad {
    let sum = p1 + p2;
    let prod = p1 * p2;
    Biquad {
        b: [1.0, 0.0, -1.0],
        a: [1.0, -sum.re, prod.re],
    }
}

/// Band outputs in the order of the specs they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDecomposition {
    pub bands: Vec<(BandSpec, MultichannelSegment)>,
}

impl BandDecomposition {
    pub fn get(&self, name: &str) -> Option<&MultichannelSegment> {
        self.bands
            .iter()
            .find(|(s, _)| s.name == name)
            .map(|(_, seg)| seg)
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}

/// Filters every channel of `x` through each band independently.
pub fn apply_filterbank(x: &MultichannelSegment, specs: &[BandSpec]) -> Result<BandDecomposition> {
    let filters = specs
        .iter()
        .map(|s| design_bandpass(s, x.fs()))
        .collect::<Result<Vec<_>>>()?;
    let bands = specs
        .par_iter()
        .zip(filters.par_iter())
        .map(|(spec, filt)| {
            let (d, n) = x.data().shape();
            let mut out = DMatrix::<f64>::zeros(d, n);
            for ch in 0..d {
                let row: Vec<f64> = x.data().row(ch).iter().copied().collect();
                let y = filt.filter(&row);
                for (dst, v) in out.row_mut(ch).iter_mut().zip(y) {
                    *dst = v;
                }
            }
            let seg = MultichannelSegment::new(out, x.fs(), x.channel_labels().to_vec())?;
            Ok((spec.clone(), seg))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BandDecomposition { bands })
}
