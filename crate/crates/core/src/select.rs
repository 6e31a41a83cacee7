//! BIC comparison of the scale-mixture model against its Gaussian and Cauchy special cases.

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::em::{fit_fixed_nu, fit_view, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{MultichannelSegment, ScaleFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Proposed,
    Gaussian,
    Cauchy,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Proposed, ModelKind::Gaussian, ModelKind::Cauchy];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Proposed => "proposed",
            ModelKind::Gaussian => "gaussian",
            ModelKind::Cauchy => "cauchy",
        }
    }

    /// Free parameters for `d` channels: the symmetric scale matrix, plus `nu` for the proposed model.
    pub fn param_count(self, d: usize) -> usize {
        let scale = d * (d + 1) / 2;
        match self {
            ModelKind::Proposed => scale + 1,
            ModelKind::Gaussian | ModelKind::Cauchy => scale,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: ModelKind,
    pub log_likelihood: f64,
    pub k: usize,
    pub bic: f64,
}

impl ModelFit {
    fn new(model: ModelKind, log_likelihood: f64, d: usize, n: usize) -> Self {
        let k = model.param_count(d);
        Self {
            model,
            log_likelihood,
            k,
            bic: bic(log_likelihood, k, n as f64),
        }
    }
}

/// `-2 loglik + k ln(n_w)`.
pub fn bic(loglik: f64, k: usize, n_w: f64) -> f64 {
    -2.0 * loglik + k as f64 * n_w.ln()
}

/// Zero-mean Gaussian log-likelihood of the columns of `x` under covariance `sigma`.
pub fn gaussian_log_likelihood(x: DMatrixView<'_, f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let f = ScaleFactor::new(sigma)?;
    let d = x.nrows() as f64;
    let quad: f64 = f.mahalanobis_columns(x).iter().sum();
    let n = x.ncols() as f64;
    Ok(-0.5 * n * (d * (2.0 * std::f64::consts::PI).ln() + f.log_det()) - 0.5 * quad)
}

/// Zero-mean Gaussian fit at the MLE `(1/N) sum x x^T`.
pub fn fit_gaussian(x: &MultichannelSegment) -> Result<ModelFit> {
    fit_gaussian_view(x.data().as_view())
}

pub fn fit_gaussian_view(x: DMatrixView<'_, f64>) -> Result<ModelFit> {
    let (d, n) = x.shape();
    if n < d + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} samples, got {n}",
            d + 1
        )));
    }
    let sigma = (x * x.transpose()) / n as f64;
    let ll = gaussian_log_likelihood(x, &sigma).map_err(|e| Error::EstimationFailed {
        iterations: 0,
        reason: format!("sample covariance: {e}"),
    })?;
    Ok(ModelFit::new(ModelKind::Gaussian, ll, d, n))
}

/// Multivariate Cauchy fit: EM with `nu'` pinned to 1 (`nu = D`).
pub fn fit_cauchy(x: &MultichannelSegment, cfg: &EmConfig) -> Result<ModelFit> {
    fit_cauchy_view(x.data().as_view(), cfg)
}

pub fn fit_cauchy_view(x: DMatrixView<'_, f64>, cfg: &EmConfig) -> Result<ModelFit> {
    let r = fit_fixed_nu(x, cfg, 1.0)?;
    Ok(ModelFit::new(
        ModelKind::Cauchy,
        r.log_likelihood,
        x.nrows(),
        x.ncols(),
    ))
}

/// Wraps an existing scale-mixture fit as a [`ModelFit`].
pub fn proposed_fit(r: &FitResult, n: usize) -> ModelFit {
    ModelFit::new(ModelKind::Proposed, r.log_likelihood, r.params.dim(), n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub winner: ModelKind,
    /// Successful fits in [`ModelKind::ALL`] order.
    pub fits: Vec<ModelFit>,
}

impl Selection {
    pub fn get(&self, kind: ModelKind) -> Option<&ModelFit> {
        self.fits.iter().find(|f| f.model == kind)
    }
}

/// Fits all three models and picks the minimum BIC; ties go to fewer parameters.
pub fn select(x: &MultichannelSegment, cfg: &EmConfig) -> Result<Selection> {
    select_view(x.data().as_view(), cfg, None)
}

/// [`select`] reusing an already computed scale-mixture fit when given.
pub fn select_view(
    x: DMatrixView<'_, f64>,
    cfg: &EmConfig,
    proposed: Option<&FitResult>,
) -> Result<Selection> {
    let n = x.ncols();
    let mut fits = Vec::with_capacity(3);
    let mut errors = Vec::new();
    let proposed = match proposed {
        Some(r) => Ok(proposed_fit(r, n)),
        None => fit_view(x, cfg).map(|r| proposed_fit(&r, n)),
    };
    for (kind, result) in [
        (ModelKind::Proposed, proposed),
        (ModelKind::Gaussian, fit_gaussian_view(x)),
        (ModelKind::Cauchy, fit_cauchy_view(x, cfg)),
    ] {
        match result {
            Ok(f) => fits.push(f),
            Err(e) => errors.push(format!("{kind}: {e}")),
        }
    }
    let winner = pick_winner(&fits).ok_or_else(|| Error::SelectionFailed(errors.join("; ")))?;
    Ok(Selection { winner, fits })
}

fn pick_winner(fits: &[ModelFit]) -> Option<ModelKind> {
    fits.iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.k.cmp(&b.k)))
        .map(|f| f.model)
}
