//! Marginal maximum-likelihood fitting of `(nu', psi')` by EM.
//!
//! Each iteration computes the latent scale moments (E-step), then the
//! weighted second-moment update for `psi'` and a bisection search for the
//! `nu'` that maximizes the expected complete-data log-likelihood (M-step).
//! Iteration stops on the relative change of the marginal log-likelihood.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{
    log_density_from_mahalanobis, LatentExpectations, MultichannelSegment, ScaleFactor,
    StudentTParams, WishartParams,
};

/// Smallest accepted `L_ii^2` relative to the jitter after a jitter retry.
const DEGENERATE_PIVOT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when `|L_k - L_{k-1}| <= loglik_rel_tol * |L_{k-1}|`.
    pub loglik_rel_tol: f64,
    /// Search interval for `nu'`.
    pub nu_bracket: (f64, f64),
    /// Absolute tolerance of the `nu'` bisection.
    pub bisection_tol: f64,
    /// Diagonal jitter on factorization failure, as a fraction of `trace(psi') / D`.
    pub jitter: f64,
    pub init_nu_prime: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            loglik_rel_tol: 1e-8,
            nu_bracket: (1e-2, 1e3),
            bisection_tol: 1e-6,
            jitter: 1e-10,
            init_nu_prime: 10.0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.nu_bracket;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.loglik_rel_tol > 0.0 && self.bisection_tol > 0.0) {
            return bad("tolerances must be > 0".into());
        }
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!(
                "nu bracket must satisfy 0 < lower < upper, got ({lo}, {hi})"
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be >= 0, got {}", self.jitter));
        }
        if !(self.init_nu_prime > 0.0 && self.init_nu_prime.is_finite()) {
            return bad(format!("init nu' must be > 0, got {}", self.init_nu_prime));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: StudentTParams,
    pub wishart: WishartParams,
    /// Marginal log-likelihood at `params`.
    pub log_likelihood: f64,
    pub n_iters: usize,
    pub converged: bool,
    pub elapsed: Duration,
    /// Log-likelihood at the initial parameters followed by one entry per iteration.
    pub loglik_trace: Vec<f64>,
}

impl FitResult {
    pub fn inv_nu(&self) -> f64 {
        self.wishart.inv_nu()
    }
}

/// Fits the scale-mixture model to every sample of `x`.
pub fn fit(x: &MultichannelSegment, cfg: &EmConfig) -> Result<FitResult> {
    fit_view(x.data().as_view(), cfg)
}

/// [`fit`] on a raw `D x N` view, used for windows of a longer recording.
pub fn fit_view(x: DMatrixView<'_, f64>, cfg: &EmConfig) -> Result<FitResult> {
    run_em(x, cfg, None)
}

/// EM with `nu'` frozen at `nu_prime`; only `psi'` is updated.
pub fn fit_fixed_nu(x: DMatrixView<'_, f64>, cfg: &EmConfig, nu_prime: f64) -> Result<FitResult> {
    if !(nu_prime > 0.0 && nu_prime.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "nu' must be > 0, got {nu_prime}"
        )));
    }
    run_em(x, cfg, Some(nu_prime))
}

fn run_em(x: DMatrixView<'_, f64>, cfg: &EmConfig, fixed_nu: Option<f64>) -> Result<FitResult> {
    cfg.validate()?;
    let (d, n) = x.shape();
    if d == 0 || n < d + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least D + 1 = {} samples, got {n}",
            d + 1
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "samples contain non-finite values".into(),
        ));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::EstimationFailed {
            iterations: 0,
            reason: "all samples are zero".into(),
        });
    }

    let start = Instant::now();
    let (lo, hi) = cfg.nu_bracket;
    let mut nu = fixed_nu.unwrap_or_else(|| cfg.init_nu_prime.clamp(lo, hi));
    let mut psi = weighted_second_moment(x, None);
    let mut factor = factor_with_jitter(&mut psi, cfg.jitter, 0)?;
    let mut deltas = factor.mahalanobis_columns(x);
    let mut ll = log_likelihood(&deltas, factor.log_det(), nu, d);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut n_iters = 0;

    for iter in 1..=cfg.max_iters {
        let e = LatentExpectations::from_mahalanobis(&deltas, nu, d);
        let mut psi_new = weighted_second_moment(x, Some(&e.e_inv_tau));
        let nu_new = match fixed_nu {
            Some(v) => v,
            None => update_nu_prime(n, &e, cfg),
        };
        let factor_new = factor_with_jitter(&mut psi_new, cfg.jitter, iter)?;
        deltas = factor_new.mahalanobis_columns(x);
        let ll_new = log_likelihood(&deltas, factor_new.log_det(), nu_new, d);
        if !ll_new.is_finite() {
            return Err(Error::EstimationFailed {
                iterations: iter,
                reason: "log-likelihood is not finite".into(),
            });
        }
        psi = psi_new;
        nu = nu_new;
        factor = factor_new;
        trace.push(ll_new);
        n_iters = iter;
        let change = (ll_new - ll).abs();
        ll = ll_new;
        if change <= cfg.loglik_rel_tol * trace[trace.len() - 2].abs().max(1.0) {
            converged = true;
            break;
        }
    }
    drop(factor);

    symmetrize(&mut psi);
    let params = StudentTParams::new(nu, psi).map_err(|e| Error::EstimationFailed {
        iterations: n_iters,
        reason: e.to_string(),
    })?;
    let wishart = params.to_wishart();
    Ok(FitResult {
        params,
        wishart,
        log_likelihood: ll,
        n_iters,
        converged,
        elapsed: start.elapsed(),
        loglik_trace: trace,
    })
}

/// `(1/N) sum_n w_n x_n x_n^T`, with unit weights when `weights` is `None`.
fn weighted_second_moment(x: DMatrixView<'_, f64>, weights: Option<&[f64]>) -> DMatrix<f64> {
    let n = x.ncols() as f64;
    let scaled = match weights {
        Some(w) => {
            let mut s = x.into_owned();
            for (mut col, wi) in s.column_iter_mut().zip(w) {
                col *= wi.sqrt();
            }
            s
        }
        None => x.into_owned(),
    };
    let mut m = &scaled * scaled.transpose();
    m /= n;
    symmetrize(&mut m);
    m
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Factorizes `m`, adding `jitter * trace(m) / D` to its diagonal once on failure.
fn factor_with_jitter(m: &mut DMatrix<f64>, jitter: f64, iterations: usize) -> Result<ScaleFactor> {
    if let Ok(f) = ScaleFactor::new(m) {
        return Ok(f);
    }
    let d = m.nrows();
    let amount = jitter * m.trace() / d as f64;
    let fail = |reason: String| Error::EstimationFailed { iterations, reason };
    if !(amount > 0.0 && amount.is_finite()) {
        return Err(fail(
            "scale matrix is singular and cannot be regularized".into(),
        ));
    }
    for i in 0..d {
        m[(i, i)] += amount;
    }
    let f = ScaleFactor::new(m).map_err(|e| fail(e.to_string()))?;
    let min_pivot = f
        .lower()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v * v));
    if min_pivot < DEGENERATE_PIVOT_FACTOR * amount {
        return Err(fail("sample second-moment matrix is rank deficient".into()));
    }
    log::debug!("factorization needed diagonal jitter {amount:e} at iteration {iterations}");
    Ok(f)
}

fn log_likelihood(deltas: &[f64], log_det: f64, nu_prime: f64, d: usize) -> f64 {
    // Same as summing log_density_from_mahalanobis, with the constant hoisted.
    let constant = log_density_from_mahalanobis(0.0, log_det, nu_prime, d);
    let half = 0.5 * (nu_prime + d as f64);
    let tail: f64 = deltas.iter().map(|&delta| (delta / nu_prime).ln_1p()).sum();
    deltas.len() as f64 * constant - half * tail
}

/// Marginal log-likelihood `sum_n ln St(x_n | nu', psi')`.
pub fn marginal_log_likelihood(x: &MultichannelSegment, p: &StudentTParams) -> Result<f64> {
    let f = p.factor()?;
    let deltas = f.mahalanobis_columns(x.data().as_view());
    Ok(log_likelihood(&deltas, f.log_det(), p.nu_prime(), p.dim()))
}

/// Expected complete-data log-likelihood `Q(nu', psi')` given E-step moments.
pub fn q_function(
    nu_prime: f64,
    psi_prime: &DMatrix<f64>,
    x: &MultichannelSegment,
    e: &LatentExpectations,
) -> Result<f64> {
    if e.len() != x.len() {
        return Err(Error::InvalidInput(format!(
            "{} expectations for {} samples",
            e.len(),
            x.len()
        )));
    }
    if !(nu_prime > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "nu' must be > 0, got {nu_prime}"
        )));
    }
    let f = ScaleFactor::new(psi_prime)?;
    let deltas = f.mahalanobis_columns(x.data().as_view());
    let d = x.dim() as f64;
    let half_nu = 0.5 * nu_prime;
    let per_sample_const = -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * f.log_det()
        + half_nu * half_nu.ln()
        - ln_gamma(half_nu);
    let q = deltas
        .iter()
        .zip(e.e_inv_tau.iter().zip(&e.e_ln_tau))
        .map(|(&delta, (&inv_tau, &ln_tau))| {
            per_sample_const
                - 0.5 * d * ln_tau
                - 0.5 * inv_tau * delta
                - (half_nu + 1.0) * ln_tau
                - half_nu * inv_tau
        })
        .sum();
    Ok(q)
}

/// `dQ/dnu'` divided by `N/2`: `ln(nu'/2) + 1 - digamma(nu'/2) - mean(E[ln tau] + E[1/tau])`.
fn nu_score(nu_prime: f64, mean_stat: f64) -> f64 {
    let h = 0.5 * nu_prime;
    h.ln() + 1.0 - digamma(h) - mean_stat
}

/// Derivative of `Q` with respect to `nu'`.
pub fn q_derivative_nu(nu_prime: f64, e: &LatentExpectations) -> f64 {
    let n = e.len() as f64;
    0.5 * n * nu_score(nu_prime, mean_latent_stat(e))
}

fn mean_latent_stat(e: &LatentExpectations) -> f64 {
    let s: f64 = e
        .e_ln_tau
        .iter()
        .zip(&e.e_inv_tau)
        .map(|(a, b)| a + b)
        .sum();
    s / e.len() as f64
}

/// Maximizes `Q` over `nu'` inside `cfg.nu_bracket` by bisection on `dQ/dnu'`.
///
/// `dQ/dnu'` is decreasing in `nu'`, so when it does not change sign on the
/// bracket the maximizing endpoint is returned. `n` is the sample count.
pub fn update_nu_prime(n: usize, e: &LatentExpectations, cfg: &EmConfig) -> f64 {
    debug_assert_eq!(n, e.len());
    let stat = mean_latent_stat(e);
    let (mut lo, mut hi) = cfg.nu_bracket;
    if nu_score(lo, stat) <= 0.0 {
        return lo;
    }
    if nu_score(hi, stat) >= 0.0 {
        return hi;
    }
    while hi - lo > cfg.bisection_tol {
        let mid = 0.5 * (lo + hi);
        if nu_score(mid, stat) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
