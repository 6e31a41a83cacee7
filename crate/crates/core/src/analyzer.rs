//! Filter bank, sliding windows and one EM fit per (band, window).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{compute_all, BaselineFeatures, SingleChannelWindow, ToCNormalization};
use crate::em::{fit_view, EmConfig};
use crate::error::{Error, Result};
use crate::filter::{apply_filterbank, BandSpec};
use crate::model::MultichannelSegment;
use crate::select::{select_view, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub window_s: f64,
    pub slide_s: f64,
    pub bands: Vec<BandSpec>,
    pub em: EmConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_s: 15.0,
            slide_s: 1.0,
            bands: BandSpec::defaults(),
            em: EmConfig::default(),
        }
    }
}

impl AnalysisConfig {
    /// Checks the configuration against a recording with `d` channels at `fs`.
    pub fn validate(&self, d: usize, fs: f64) -> Result<WindowLayout> {
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "window must be > 0 s, got {}",
                self.window_s
            )));
        }
        if !(self.slide_s > 0.0 && self.slide_s <= self.window_s) {
            return Err(Error::InvalidParameter(format!(
                "slide must be in (0, window], got {} with window {}",
                self.slide_s, self.window_s
            )));
        }
        if self.bands.is_empty() {
            return Err(Error::InvalidParameter("no bands configured".into()));
        }
        for b in &self.bands {
            b.validate_for(fs)?;
        }
        self.em.validate()?;
        let layout = WindowLayout::new(fs, self.window_s, self.slide_s)?;
        if layout.len < d + 1 {
            return Err(Error::InvalidParameter(format!(
                "window of {} samples is too short for {d} channels (needs {})",
                layout.len,
                d + 1
            )));
        }
        Ok(layout)
    }
}

/// Window length and hop in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub len: usize,
    pub step: usize,
}

impl WindowLayout {
    pub fn new(fs: f64, window_s: f64, slide_s: f64) -> Result<Self> {
        let len = (window_s * fs).round();
        let step = (slide_s * fs).round();
        if !(len >= 1.0 && step >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "window {window_s} s / slide {slide_s} s is shorter than one sample at {fs} Hz"
            )));
        }
        Ok(Self {
            len: len as usize,
            step: step as usize,
        })
    }

    /// Number of complete windows; a trailing partial window is dropped.
    pub fn count(&self, n_samples: usize) -> usize {
        if n_samples < self.len {
            0
        } else {
            (n_samples - self.len) / self.step + 1
        }
    }

    pub fn start(&self, i: usize) -> usize {
        i * self.step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum WindowFit {
    Fitted {
        log_likelihood: f64,
        n_iters: usize,
        converged: bool,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFeatureSeries {
    pub band: String,
    pub window_s: f64,
    pub slide_s: f64,
    pub window_starts: Vec<f64>,
    /// `None` marks a window whose fit failed.
    pub inv_nu: Vec<Option<f64>>,
    pub diagnostics: Vec<WindowFit>,
    /// Single-channel comparison features, when requested.
    pub baselines: Option<Vec<Option<BaselineFeatures>>>,
    /// Minimum-BIC model per window, when requested.
    pub bic_winner: Option<Vec<Option<ModelKind>>>,
}

impl BandFeatureSeries {
    pub fn len(&self) -> usize {
        self.window_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_starts.is_empty()
    }

    pub fn n_failed(&self) -> usize {
        self.inv_nu.iter().filter(|v| v.is_none()).count()
    }
}

/// Optional per-window work on top of the 1/nu fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtraFeatures {
    /// Channel used for RMS, |ToC| and ApEn.
    pub baseline_channel: Option<usize>,
    pub toc_norm: ToCNormalization,
    pub model_selection: bool,
}

struct WindowOutput {
    inv_nu: Option<f64>,
    diag: WindowFit,
    baseline: Option<BaselineFeatures>,
    winner: Option<ModelKind>,
}

/// 1/nu per band and window.
pub fn analyze(x: &MultichannelSegment, cfg: &AnalysisConfig) -> Result<Vec<BandFeatureSeries>> {
    analyze_with(x, cfg, &ExtraFeatures::default())
}

pub fn analyze_with(
    x: &MultichannelSegment,
    cfg: &AnalysisConfig,
    extra: &ExtraFeatures,
) -> Result<Vec<BandFeatureSeries>> {
    let layout = cfg.validate(x.dim(), x.fs())?;
    let count = layout.count(x.len());
    if count == 0 {
        return Err(Error::EmptyResult {
            samples: x.len(),
            window: layout.len,
        });
    }
    if let Some(ch) = extra.baseline_channel {
        if ch >= x.dim() {
            return Err(Error::InvalidParameter(format!(
                "baseline channel {ch} out of range for {} channels",
                x.dim()
            )));
        }
    }
    let bands = apply_filterbank(x, &cfg.bands)?;
    let fs = x.fs();

    let jobs: Vec<(usize, usize)> = (0..bands.len())
        .flat_map(|b| (0..count).map(move |w| (b, w)))
        .collect();
    let outputs: Vec<WindowOutput> = jobs
        .par_iter()
        .map(|&(b, w)| {
            let seg = &bands.bands[b].1;
            let start = layout.start(w);
            let view = seg.columns(start, layout.len);
            let fit = fit_view(view, &cfg.em);
            let (inv_nu, diag) = match &fit {
                Ok(r) => (
                    Some(r.inv_nu()),
                    WindowFit::Fitted {
                        log_likelihood: r.log_likelihood,
                        n_iters: r.n_iters,
                        converged: r.converged,
                    },
                ),
                Err(e) => {
                    log::debug!("band {} window {w}: {e}", bands.bands[b].0.name);
                    (
                        None,
                        WindowFit::Failed {
                            reason: e.to_string(),
                        },
                    )
                }
            };
            let baseline = extra.baseline_channel.and_then(|ch| {
                let row: Vec<f64> = view.row(ch).iter().copied().collect();
                SingleChannelWindow::new(&row, fs)
                    .and_then(|win| compute_all(&win, extra.toc_norm))
                    .ok()
            });
            let winner = if extra.model_selection {
                select_view(view, &cfg.em, fit.as_ref().ok())
                    .ok()
                    .map(|s| s.winner)
            } else {
                None
            };
            WindowOutput {
                inv_nu,
                diag,
                baseline,
                winner,
            }
        })
        .collect();

    let window_starts: Vec<f64> = (0..count).map(|w| layout.start(w) as f64 / fs).collect();
    let mut outputs = outputs.into_iter();
    let series = bands
        .bands
        .iter()
        .map(|(spec, _)| {
            let chunk: Vec<WindowOutput> = outputs.by_ref().take(count).collect();
            let failed = chunk.iter().filter(|o| o.inv_nu.is_none()).count();
            if failed > 0 {
                log::warn!("band {}: {failed} of {count} window fits failed", spec.name);
            }
            BandFeatureSeries {
                band: spec.name.clone(),
                window_s: cfg.window_s,
                slide_s: cfg.slide_s,
                window_starts: window_starts.clone(),
                inv_nu: chunk.iter().map(|o| o.inv_nu).collect(),
                baselines: extra
                    .baseline_channel
                    .map(|_| chunk.iter().map(|o| o.baseline).collect()),
                bic_winner: extra
                    .model_selection
                    .then(|| chunk.iter().map(|o| o.winner).collect()),
                diagnostics: chunk.into_iter().map(|o| o.diag).collect(),
            }
        })
        .collect();
    Ok(series)
}

/// Jointly min-max normalized 1/nu, bands as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub bands: Vec<String>,
    /// Gaps stay `None`.
    pub values: Vec<Vec<Option<f64>>>,
    /// Set when every finite value was equal; the map is then all zeros.
    pub degenerate: bool,
}

pub fn to_heatmap(series: &[BandFeatureSeries]) -> Result<Heatmap> {
    let finite = || {
        series
            .iter()
            .flat_map(|s| s.inv_nu.iter().flatten())
            .copied()
            .filter(|v| v.is_finite())
    };
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Err(Error::InvalidInput(
            "heatmap needs at least one finite value".into(),
        ));
    }
    let degenerate = hi == lo;
    if degenerate {
        log::warn!("heatmap input is constant ({lo}); emitting zeros");
    }
    let values = series
        .iter()
        .map(|s| {
            s.inv_nu
                .iter()
                .map(|v| {
                    v.filter(|v| v.is_finite()).map(|v| {
                        if degenerate {
                            0.0
                        } else {
                            (v - lo) / (hi - lo)
                        }
                    })
                })
                .collect()
        })
        .collect();
    Ok(Heatmap {
        bands: series.iter().map(|s| s.band.clone()).collect(),
        values,
        degenerate,
    })
}
