//! Estimator accuracy sweep over window length and channel count on simulated data.

use std::time::Duration;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{fit_view, EmConfig};
use crate::error::{Error, Result};
use crate::model::{sample, StudentTParams, WishartParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub window_lengths_s: Vec<f64>,
    pub dims: Vec<usize>,
    pub nu_grid: Vec<f64>,
    pub psi_diag_grid: Vec<f64>,
    pub off_diag: f64,
    pub t_s: f64,
    pub fs: f64,
    pub seed: u64,
    pub em: EmConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            window_lengths_s: vec![1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0, 100.0],
            dims: vec![1, 2, 4, 8, 16, 19],
            nu_grid: (1..=20).map(|i| 0.5 * i as f64).collect(),
            psi_diag_grid: (1..=20).map(f64::from).collect(),
            off_diag: 0.5,
            t_s: 100.0,
            fs: 500.0,
            seed: 0,
            em: EmConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.window_lengths_s.is_empty() || self.dims.is_empty() {
            return bad("window and dimension grids must be non-empty".into());
        }
        if self.nu_grid.is_empty() || self.psi_diag_grid.is_empty() {
            return bad("parameter grids must be non-empty".into());
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("fs must be > 0, got {}", self.fs));
        }
        if let Some(&nu) = self.nu_grid.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return bad(format!("nu' grid values must be > 0, got {nu}"));
        }
        if self.dims.contains(&0) {
            return bad("dimensions must be >= 1".into());
        }
        let max_w = self
            .window_lengths_s
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(self.t_s >= max_w && self.t_s.is_finite()) {
            return bad(format!(
                "recording length {} s is shorter than window {max_w} s",
                self.t_s
            ));
        }
        let max_d = *self.dims.iter().max().unwrap_or(&1);
        for &w in &self.window_lengths_s {
            if !(w > 0.0) || ((w * self.fs).round() as usize) < max_d + 1 {
                return bad(format!(
                    "window {w} s holds too few samples for {max_d} channels"
                ));
            }
        }
        for &d in &self.dims {
            for &psi in &self.psi_diag_grid {
                true_params(self.nu_grid[0], psi, self.off_diag, d).map_err(|e| {
                    Error::InvalidParameter(format!("psi' diagonal {psi} at D = {d}: {e}"))
                })?;
            }
        }
        self.em.validate()
    }

    fn n_samples(&self, w: f64) -> usize {
        (w * self.fs).round() as usize
    }
}

/// `|nu0 - nu| / |nu0| * 100`.
pub fn ape_nu(true_nu: f64, est_nu: f64) -> f64 {
    (true_nu - est_nu).abs() / true_nu.abs() * 100.0
}

/// Relative Frobenius error in percent.
pub fn ape_psi(true_psi: &DMatrix<f64>, est_psi: &DMatrix<f64>) -> f64 {
    (true_psi - est_psi).norm() / true_psi.norm() * 100.0
}

/// Mixture-form parameters with diagonal `psi` and constant off-diagonal.
pub fn true_params(nu_prime: f64, psi: f64, off_diag: f64, d: usize) -> Result<StudentTParams> {
    let m = DMatrix::from_fn(d, d, |i, j| if i == j { psi } else { off_diag });
    StudentTParams::new(nu_prime, m)
}

/// Aggregate over all grid cells of one `(W, D)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub window_s: f64,
    pub dim: usize,
    pub mean_ape_nu: f64,
    pub mean_ape_psi: f64,
    pub mean_iters: f64,
    pub n_fits: usize,
    pub n_failed: usize,
}

/// Wall-clock statistics, kept apart from the reproducible numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCell {
    pub window_s: f64,
    pub dim: usize,
    pub mean_time_s: f64,
    pub max_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    /// Ordered by dimension, then window length, as in the config.
    pub cells: Vec<SweepCell>,
    pub timing: Vec<TimingCell>,
}

impl SweepResult {
    pub fn get(&self, window_s: f64, dim: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.window_s == window_s && c.dim == dim)
    }
}

struct FitOutcome {
    ape_nu: f64,
    ape_psi: f64,
    iters: usize,
    elapsed: Duration,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of grid cell `cell` at dimension `d`, independent of scheduling.
pub fn cell_seed(master: u64, d: usize, cell: usize) -> u64 {
    splitmix64(master ^ splitmix64(((d as u64) << 32) | cell as u64))
}

/// One simulated recording per grid cell; each window length fits its prefix.
fn run_cell(cfg: &SweepConfig, d: usize, cell: usize) -> Vec<Option<FitOutcome>> {
    let n_psi = cfg.psi_diag_grid.len();
    let nu_prime = cfg.nu_grid[cell / n_psi];
    let psi = cfg.psi_diag_grid[cell % n_psi];
    let params = match true_params(nu_prime, psi, cfg.off_diag, d) {
        Ok(p) => p,
        Err(_) => return cfg.window_lengths_s.iter().map(|_| None).collect(),
    };
    let truth: WishartParams = params.to_wishart();
    let x = match sample(
        &params,
        cfg.n_samples(cfg.t_s),
        cell_seed(cfg.seed, d, cell),
    ) {
        Ok(x) => x,
        Err(_) => return cfg.window_lengths_s.iter().map(|_| None).collect(),
    };
    cfg.window_lengths_s
        .iter()
        .map(|&w| {
            let view = x.columns(0, cfg.n_samples(w));
            match fit_view(view, &cfg.em) {
                Ok(r) => Some(FitOutcome {
                    ape_nu: ape_nu(truth.nu(), r.wishart.nu()),
                    ape_psi: ape_psi(truth.psi(), r.wishart.psi()),
                    iters: r.n_iters,
                    elapsed: r.elapsed,
                }),
                Err(e) => {
                    log::debug!("D = {d}, cell {cell}, W = {w}: {e}");
                    None
                }
            }
        })
        .collect()
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let n_cells = cfg.nu_grid.len() * cfg.psi_diag_grid.len();
    let mut cells = Vec::new();
    let mut timing = Vec::new();
    for &d in &cfg.dims {
        let outcomes: Vec<Vec<Option<FitOutcome>>> = (0..n_cells)
            .into_par_iter()
            .map(|c| run_cell(cfg, d, c))
            .collect();
        for (wi, &w) in cfg.window_lengths_s.iter().enumerate() {
            let ok: Vec<&FitOutcome> = outcomes.iter().filter_map(|o| o[wi].as_ref()).collect();
            let n = ok.len() as f64;
            let mean = |f: &dyn Fn(&FitOutcome) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|o| f(o)).sum::<f64>() / n
                }
            };
            cells.push(SweepCell {
                window_s: w,
                dim: d,
                mean_ape_nu: mean(&|o| o.ape_nu),
                mean_ape_psi: mean(&|o| o.ape_psi),
                mean_iters: mean(&|o| o.iters as f64),
                n_fits: ok.len(),
                n_failed: n_cells - ok.len(),
            });
            timing.push(TimingCell {
                window_s: w,
                dim: d,
                mean_time_s: mean(&|o| o.elapsed.as_secs_f64()),
                max_time_s: ok
                    .iter()
                    .map(|o| o.elapsed.as_secs_f64())
                    .fold(0.0, f64::max),
            });
        }
        log::info!("sweep: D = {d} done ({n_cells} cells)");
    }
    Ok(SweepResult {
        config: cfg.clone(),
        cells,
        timing,
    })
}
