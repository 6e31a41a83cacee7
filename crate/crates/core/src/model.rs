//! Gaussian scale-mixture model with inverse-Wishart mixed covariance.
//!
//! A sample `x` is zero-mean Gaussian given its covariance, and the
//! covariance is inverse-Wishart distributed with degrees of freedom `nu` and
//! scale `psi`. Marginally `x` is multivariate Student-t. Two
//! parameterizations are used throughout:
//!
//! * mixture form [`StudentTParams`] `(nu', psi')`, where
//!   `x = sqrt(tau) * psi'^(1/2) * z` with `tau ~ InvGamma(nu'/2, nu'/2)`;
//! * covariance-distribution form [`WishartParams`] `(nu, psi)` with
//!   `nu = nu' + D - 1` and `psi = nu' * psi'`.
//!
//! The reported non-Gaussianity feature is `1 / nu` in the covariance form.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Smallest accepted ratio of squared Cholesky pivots (min / max).
const MIN_PIVOT_RATIO: f64 = 1e-13;

/// Mixture-form (multivariate Student-t) parameters `(nu', psi')`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTParams {
    nu_prime: f64,
    psi_prime: DMatrix<f64>,
}

impl StudentTParams {
    /// Validates `nu' > 0` and that `psi'` is symmetric positive definite.
    pub fn new(nu_prime: f64, psi_prime: DMatrix<f64>) -> Result<Self> {
        if !(nu_prime.is_finite() && nu_prime > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nu' must be finite and > 0, got {nu_prime}"
            )));
        }
        check_spd(&psi_prime, "psi'")?;
        Ok(Self {
            nu_prime,
            psi_prime,
        })
    }

    /// Isotropic scale `psi' = scale * I_d`.
    pub fn isotropic(nu_prime: f64, scale: f64, d: usize) -> Result<Self> {
        Self::new(nu_prime, DMatrix::from_diagonal_element(d, d, scale))
    }

    pub fn nu_prime(&self) -> f64 {
        self.nu_prime
    }

    pub fn psi_prime(&self) -> &DMatrix<f64> {
        &self.psi_prime
    }

    pub fn dim(&self) -> usize {
        self.psi_prime.nrows()
    }

    /// Converts to covariance-distribution form: `nu = nu' + D - 1`, `psi = nu' psi'`.
    pub fn to_wishart(&self) -> WishartParams {
        let d = self.dim() as f64;
        WishartParams {
            nu: self.nu_prime + d - 1.0,
            psi: &self.psi_prime * self.nu_prime,
        }
    }

    pub fn factor(&self) -> Result<ScaleFactor> {
        ScaleFactor::new(&self.psi_prime)
    }
}

/// Covariance-distribution (inverse-Wishart) parameters `(nu, psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    nu: f64,
    psi: DMatrix<f64>,
}

impl WishartParams {
    /// Requires `nu > D - 1` and a symmetric positive-definite `psi`.
    pub fn new(nu: f64, psi: DMatrix<f64>) -> Result<Self> {
        check_spd(&psi, "psi")?;
        let d = psi.nrows() as f64;
        if !(nu.is_finite() && nu > d - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nu must be finite and > D - 1 = {}, got {nu}",
                d - 1.0
            )));
        }
        Ok(Self { nu, psi })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    /// The non-Gaussianity feature `1 / nu`.
    pub fn inv_nu(&self) -> f64 {
        1.0 / self.nu
    }

    /// Inverse of [`StudentTParams::to_wishart`].
    pub fn to_student_t(&self) -> StudentTParams {
        let d = self.dim() as f64;
        let nu_prime = self.nu - d + 1.0;
        StudentTParams {
            nu_prime,
            psi_prime: &self.psi / nu_prime,
        }
    }
}

/// Free-function form of [`StudentTParams::to_wishart`]; `d` must match the scale matrix.
pub fn to_wishart(p: &StudentTParams, d: usize) -> Result<WishartParams> {
    if d != p.dim() {
        return Err(Error::InvalidParameter(format!(
            "channel count {d} does not match scale matrix dimension {}",
            p.dim()
        )));
    }
    Ok(p.to_wishart())
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::InvalidParameter(format!(
            "{what} must be a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what} has non-finite entries"
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidParameter(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    ScaleFactor::new(m).map(|_| ())
}

/// Lower Cholesky factor of a scale matrix with its log-determinant.
///
/// Computed once per parameter set and reused for every sample.
#[derive(Debug, Clone)]
pub struct ScaleFactor {
    lower: DMatrix<f64>,
    lower_inv: DMatrix<f64>,
    log_det: f64,
}

impl ScaleFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let chol = m.clone().cholesky().ok_or_else(|| {
            Error::SingularMatrix(format!("{}x{} factorization failed", m.nrows(), m.ncols()))
        })?;
        let lower = chol.unpack();
        let (min_p, max_p) = lower
            .diagonal()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v * v), hi.max(v * v))
            });
        if !(min_p > MIN_PIVOT_RATIO * max_p) {
            return Err(Error::SingularMatrix(format!(
                "numerically singular (pivot ratio {:e})",
                min_p / max_p
            )));
        }
        let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SingularMatrix(
                "log-determinant is not finite".into(),
            ));
        }
        let d = lower.nrows();
        let lower_inv = lower
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::SingularMatrix("triangular inverse failed".into()))?;
        Ok(Self {
            lower,
            lower_inv,
            log_det,
        })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Squared Mahalanobis distance `x^T M^-1 x`.
    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let y = self
            .lower
            .solve_lower_triangular(&v)
            .expect("factor has a positive diagonal");
        y.norm_squared()
    }

    /// Squared Mahalanobis distance of every column of `x`.
    ///
    /// Uses the explicit inverse factor so the whole block is one matrix product.
    pub fn mahalanobis_columns(&self, x: DMatrixView<'_, f64>) -> Vec<f64> {
        let y = &self.lower_inv * x;
        y.column_iter().map(|c| c.norm_squared()).collect()
    }
}

/// Log-density of the Student-t form given a precomputed Mahalanobis distance.
pub fn log_density_from_mahalanobis(delta: f64, log_det: f64, nu_prime: f64, d: usize) -> f64 {
    let d = d as f64;
    let half = 0.5 * (nu_prime + d);
    ln_gamma(half)
        - ln_gamma(0.5 * nu_prime)
        - 0.5 * log_det
        - 0.5 * d * (LN_PI + nu_prime.ln())
        - half * (delta / nu_prime).ln_1p()
}

/// `ln St(x | nu', psi')`.
pub fn log_density(x: &[f64], p: &StudentTParams) -> Result<f64> {
    check_vector(x, p.dim())?;
    let f = p.factor()?;
    Ok(log_density_from_mahalanobis(
        f.mahalanobis(x),
        f.log_det(),
        p.nu_prime,
        p.dim(),
    ))
}

/// Log-density written in covariance-distribution form, with
/// `Delta = x^T psi^-1 x` and `nu - D + 1` standing in for `nu'`.
pub fn log_density_wishart(x: &[f64], w: &WishartParams) -> Result<f64> {
    check_vector(x, w.dim())?;
    let f = ScaleFactor::new(&w.psi)?;
    let d = w.dim() as f64;
    let dof = w.nu - d + 1.0;
    let delta = f.mahalanobis(x);
    let log_det_scaled = f.log_det() - d * dof.ln();
    Ok(ln_gamma(0.5 * (w.nu + 1.0))
        - ln_gamma(0.5 * dof)
        - 0.5 * log_det_scaled
        - 0.5 * d * (LN_PI + dof.ln())
        - 0.5 * (w.nu + 1.0) * delta.ln_1p())
}

fn check_vector(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::InvalidInput(format!(
            "sample has {} entries, model has {d} channels",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("sample has non-finite entries".into()));
    }
    Ok(())
}

/// A `D x N` block of samples (channels in rows) with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSegment {
    data: DMatrix<f64>,
    fs: f64,
    channel_labels: Vec<String>,
}

impl MultichannelSegment {
    pub fn new(data: DMatrix<f64>, fs: f64, channel_labels: Vec<String>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "segment must have at least one channel and one sample, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sampling rate must be > 0, got {fs}"
            )));
        }
        if channel_labels.len() != data.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} channel labels for {} channels",
                channel_labels.len(),
                data.nrows()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at channel {}, sample {}",
                pos % data.nrows(),
                pos / data.nrows()
            )));
        }
        Ok(Self {
            data,
            fs,
            channel_labels,
        })
    }

    /// Segment with labels `ch0, ch1, ...`.
    pub fn unlabeled(data: DMatrix<f64>, fs: f64) -> Result<Self> {
        let labels = default_labels(data.nrows());
        Self::new(data, fs, labels)
    }

    pub fn with_fs(mut self, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sampling rate must be > 0, got {fs}"
            )));
        }
        self.fs = fs;
        Ok(self)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    /// Samples `[start, start + len)` as a view.
    pub fn columns(&self, start: usize, len: usize) -> DMatrixView<'_, f64> {
        self.data.columns(start, len)
    }

    /// Copies out samples `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::InvalidInput(format!(
                "slice [{start}, {}) outside 0..{}",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            data: self.data.columns(start, len).into_owned(),
            fs: self.fs,
            channel_labels: self.channel_labels.clone(),
        })
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }
}

pub(crate) fn default_labels(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("ch{i}")).collect()
}

/// Posterior moments of the latent scale `tau_n` given each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentExpectations {
    /// `E[1 / tau_n]`
    pub e_inv_tau: Vec<f64>,
    /// `E[ln tau_n]`
    pub e_ln_tau: Vec<f64>,
}

impl LatentExpectations {
    /// Builds the expectations from squared Mahalanobis distances under `psi'`.
    ///
    /// The posterior of `tau_n` is `InvGamma((nu' + D) / 2, (nu' + Delta'_n) / 2)`.
    pub fn from_mahalanobis(deltas: &[f64], nu_prime: f64, d: usize) -> Self {
        let shape = 0.5 * (nu_prime + d as f64);
        let offset = shape.ln() - digamma(shape);
        let e_inv_tau: Vec<f64> = deltas
            .iter()
            .map(|&delta| (nu_prime + d as f64) / (nu_prime + delta))
            .collect();
        let e_ln_tau = e_inv_tau.iter().map(|w| -w.ln() + offset).collect();
        Self {
            e_inv_tau,
            e_ln_tau,
        }
    }

    pub fn len(&self) -> usize {
        self.e_inv_tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_inv_tau.is_empty()
    }
}

/// E-step moments for every sample of `x` under `p`.
pub fn latent_posterior_expectations(
    x: &MultichannelSegment,
    p: &StudentTParams,
) -> Result<LatentExpectations> {
    if x.dim() != p.dim() {
        return Err(Error::InvalidInput(format!(
            "segment has {} channels, model has {}",
            x.dim(),
            p.dim()
        )));
    }
    let f = p.factor()?;
    let deltas = f.mahalanobis_columns(x.data.as_view());
    Ok(LatentExpectations::from_mahalanobis(
        &deltas,
        p.nu_prime,
        p.dim(),
    ))
}

/// Draws `n` samples as `sqrt(tau) L z` with `tau` the reciprocal of a
/// `Gamma(nu'/2, rate nu'/2)` draw. The result carries `fs = 1`.
pub fn sample(p: &StudentTParams, n: usize, seed: u64) -> Result<MultichannelSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(p, n, &mut rng)
}

pub fn sample_with_rng<R: Rng + ?Sized>(
    p: &StudentTParams,
    n: usize,
    rng: &mut R,
) -> Result<MultichannelSegment> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let d = p.dim();
    let factor = p.factor()?;
    let gamma = Gamma::new(0.5 * p.nu_prime, 2.0 / p.nu_prime)
        .map_err(|e| Error::InvalidParameter(format!("gamma sampler: {e}")))?;
    let mut z = DMatrix::<f64>::zeros(d, n);
    let mut scales = Vec::with_capacity(n);
    for mut col in z.column_iter_mut() {
        let g: f64 = gamma.sample(rng);
        scales.push((1.0 / g).sqrt());
        for v in col.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
    }
    let mut x = factor.lower() * z;
    for (mut col, s) in x.column_iter_mut().zip(scales) {
        col *= s;
    }
    MultichannelSegment::unlabeled(x, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wishart_conversion_examples() {
        let w = StudentTParams::isotropic(1.0, 1.0, 19)
            .unwrap()
            .to_wishart();
        assert_eq!(w.nu(), 19.0);
        assert_eq!(w.psi(), &DMatrix::identity(19, 19));

        let w = StudentTParams::isotropic(2.0, 1.0, 4).unwrap().to_wishart();
        assert_eq!(w.nu(), 5.0);
        assert_eq!(w.psi(), &(DMatrix::identity(4, 4) * 2.0));

        let psi = DMatrix::from_row_slice(2, 2, &[20.0, 0.5, 0.5, 3.0]);
        let w = StudentTParams::new(0.5, psi).unwrap().to_wishart();
        assert_eq!(w.nu(), 1.5);
        assert_eq!(w.psi()[(0, 0)], 10.0);
    }

    #[test]
    fn wishart_round_trip() {
        let psi = DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 0.5, 2.0]);
        let p = StudentTParams::new(3.25, psi).unwrap();
        let back = p.to_wishart().to_student_t();
        assert_eq!(back.nu_prime(), p.nu_prime());
        assert_relative_eq!(back.psi_prime(), p.psi_prime(), max_relative = 1e-15);
        assert!(to_wishart(&p, 3).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(StudentTParams::isotropic(0.0, 1.0, 2).is_err());
        assert!(StudentTParams::isotropic(f64::NAN, 1.0, 2).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(StudentTParams::new(2.0, asym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            StudentTParams::new(2.0, indefinite),
            Err(Error::SingularMatrix(_))
        ));
        assert!(WishartParams::new(0.5, DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn cauchy_at_mode() {
        let p = StudentTParams::isotropic(1.0, 1.0, 1).unwrap();
        let lp = log_density(&[0.0], &p).unwrap();
        assert_relative_eq!(lp, -std::f64::consts::PI.ln(), epsilon = 1e-12);
        assert_relative_eq!(lp, -1.14473, epsilon = 1e-5);
    }

    #[test]
    fn gaussian_limit() {
        let p = StudentTParams::isotropic(1e6, 1.0, 1).unwrap();
        let lp = log_density(&[0.0], &p).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-4, "{lp}");
    }

    #[test]
    fn wishart_form_matches() {
        let psi = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let p = StudentTParams::new(2.5, psi).unwrap();
        let w = p.to_wishart();
        for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5], [10.0, 3.0, -7.0]] {
            let a = log_density(&x, &p).unwrap();
            let b = log_density_wishart(&x, &w).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn latent_expectations_examples() {
        let p = StudentTParams::isotropic(2.0, 1.0, 1).unwrap();
        let x = MultichannelSegment::unlabeled(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), 1.0)
            .unwrap();
        let e = latent_posterior_expectations(&x, &p).unwrap();
        assert_relative_eq!(e.e_inv_tau[0], 1.5, epsilon = 1e-15);
        // psi(3/2) = 2 - gamma - 2 ln 2
        let digamma_3_2 = 2.0 - 0.577_215_664_901_532_9 - 2.0 * std::f64::consts::LN_2;
        assert_relative_eq!(e.e_ln_tau[0], -digamma_3_2, epsilon = 1e-12);
        assert_relative_eq!(e.e_ln_tau[0], -0.03649, epsilon = 1e-5);
        // Delta' = D gives E[1/tau] = 1
        assert_relative_eq!(e.e_inv_tau[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inv_tau_decreasing_in_distance() {
        let e = LatentExpectations::from_mahalanobis(&[0.0, 0.5, 1.0, 4.0, 100.0], 3.0, 2);
        assert!(e.e_inv_tau.windows(2).all(|w| w[1] < w[0]));
        assert!(e.e_inv_tau.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sample_is_deterministic() {
        let p = StudentTParams::isotropic(3.0, 2.0, 3).unwrap();
        let a = sample(&p, 100, 7).unwrap();
        let b = sample(&p, 100, 7).unwrap();
        let c = sample(&p, 100, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn segment_validation() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, f64::NAN]);
        assert!(MultichannelSegment::unlabeled(m, 1.0).is_err());
        let m = DMatrix::zeros(2, 3);
        assert!(MultichannelSegment::new(m.clone(), 1.0, vec!["a".into()]).is_err());
        assert!(MultichannelSegment::unlabeled(m.clone(), 0.0).is_err());
        let s = MultichannelSegment::unlabeled(m, 2.0).unwrap();
        assert_eq!(s.duration_s(), 1.5);
        assert_eq!(s.channel_index("ch1"), Some(1));
    }
}
