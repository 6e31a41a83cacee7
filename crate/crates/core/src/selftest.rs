//! Built-in consistency checks: closed-form density against numerical
//! integration of the scale mixture, EM monotonicity, and AUC against pair counting.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::em::{fit, EmConfig};
use crate::error::{Error, Result};
use crate::evaluation::{rank_auc, roc_auc, LabeledScores};
use crate::model::{log_density, sample, StudentTParams};

/// Deliberate defects for exercising the checks themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Shifts the closed-form log-density by a small constant.
    DensityConstant,
}

const DENSITY_FAULT_OFFSET: f64 = 1e-3;

pub const CHECK_NAMES: [&str; 3] = ["mixture-equivalence", "em-monotonicity", "auc-oracle"];

/// Log of the inverse-gamma mixture of zero-mean Gaussians, by quadrature over `u = ln tau`.
///
/// Uses an LU inverse and determinant of `psi'`, so it shares nothing with the
/// Cholesky-based closed form.
pub fn mixture_log_density_quadrature(
    x: &[f64],
    nu_prime: f64,
    psi_prime: &DMatrix<f64>,
) -> Result<f64> {
    let d = psi_prime.nrows();
    if x.len() != d {
        return Err(Error::InvalidInput(format!(
            "x has {} entries, scale is {d}x{d}",
            x.len()
        )));
    }
    let lu = psi_prime.clone().lu();
    let det = lu.determinant();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("scale matrix not invertible".into()))?;
    if !(det > 0.0) {
        return Err(Error::SingularMatrix(format!(
            "determinant {det} is not positive"
        )));
    }
    let xv = DVector::from_column_slice(x);
    let delta = (xv.transpose() * inv * &xv)[(0, 0)];
    let a = 0.5 * nu_prime;
    let dh = 0.5 * d as f64;

    // ln[IG(e^u; a, a) N(x | 0, e^u psi') e^u] = c0 - (a + D/2) u - (a + delta/2) e^-u
    let c0 = a * a.ln() - ln_gamma(a) - dh * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln();
    let slope = a + dh;
    let scale = a + 0.5 * delta;
    let log_f = |u: f64| c0 - slope * u - scale * (-u).exp();
    let u_peak = (scale / slope).ln();
    let peak = log_f(u_peak);
    let g = |u: f64| (log_f(u) - peak).exp();

    // Left tail falls double-exponentially, right tail like exp(-slope * u).
    let right = u_peak + 80.0 / slope + 10.0;
    let pieces = [
        u_peak - 12.0,
        u_peak - 2.0,
        u_peak,
        u_peak + 2.0,
        u_peak + 12.0,
        right,
    ];
    let total: f64 = pieces
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| quadrature::double_exponential::integrate(g, w[0], w[1], 1e-14).integral)
        .sum();
    Ok(peak + total.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub n_cases: usize,
    /// Largest `|p_quad / p_closed - 1|`.
    pub max_rel_err: f64,
}

/// Random cases with `nu'` in [0.5, 50], `D` in {1, 2} and random SPD scale.
pub fn mixture_equivalence(
    n_cases: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = match fault {
        Some(Fault::DensityConstant) => DENSITY_FAULT_OFFSET,
        None => 0.0,
    };
    let mut max_rel_err = 0.0f64;
    for i in 0..n_cases {
        let d = 1 + i % 2;
        let nu_prime = rng.random_range(0.5..=50.0);
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        let psi = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        let spread = rng.random_range(0.1..4.0);
        let x: Vec<f64> = (0..d)
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let closed = log_density(&x, &StudentTParams::new(nu_prime, psi.clone())?)? + offset;
        let quad = mixture_log_density_quadrature(&x, nu_prime, &psi)?;
        max_rel_err = max_rel_err.max((quad - closed).exp_m1().abs());
    }
    Ok(EquivalenceReport {
        n_cases,
        max_rel_err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub n_fits: usize,
    /// Largest single-iteration decrease of the log-likelihood (0 if none).
    pub worst_drop: f64,
}

/// EM fits on simulated data cycling through `D` in {1, 4, 19}.
pub fn em_monotonicity(n_datasets: usize, seed: u64) -> Result<MonotonicityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EmConfig::default();
    let mut worst_drop = 0.0f64;
    for i in 0..n_datasets {
        let d = [1, 4, 19][i % 3];
        let nu_prime = rng.random_range(0.5..10.0);
        let scale = rng.random_range(0.5..20.0);
        let n = if d == 19 { 1000 } else { 500 };
        let p = StudentTParams::isotropic(nu_prime, scale, d)?;
        let x = sample(&p, n, rng.random())?;
        let r = fit(&x, &cfg)?;
        for w in r.loglik_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    Ok(MonotonicityReport {
        n_fits: n_datasets,
        worst_drop,
    })
}

/// `(#{s > n} + #{s = n} / 2) / (n_s n_n)` over all pairs.
pub fn pair_count_auc(s: &LabeledScores) -> f64 {
    let mut twice = 0u64;
    for a in &s.seizure {
        for b in &s.nonseizure {
            twice += match a.partial_cmp(b) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    twice as f64 / (2 * s.seizure.len() * s.nonseizure.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucOracleReport {
    pub n_instances: usize,
    /// Instances where the rank AUC differs from the pair count at all.
    pub mismatches: usize,
    pub max_trapezoid_err: f64,
}

/// Random instances, half of them with coarse integer scores to force ties.
pub fn auc_oracle(n_instances: usize, seed: u64) -> Result<AucOracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut max_trapezoid_err = 0.0f64;
    for i in 0..n_instances {
        let n1 = rng.random_range(1..60);
        let n2 = rng.random_range(1..60);
        let shift: f64 = rng.random_range(-1.0..1.0);
        let mut draw = |n: usize, mu: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = mu + rng.sample::<f64, _>(StandardNormal);
                    if i % 2 == 0 {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect()
        };
        let s = LabeledScores::new(draw(n1, shift), draw(n2, 0.0));
        if rank_auc(&s)? != pair_count_auc(&s) {
            mismatches += 1;
        }
        let roc = roc_auc(&s)?;
        max_trapezoid_err = max_trapezoid_err.max((roc.trapezoid_area() - roc.auc).abs());
    }
    Ok(AucOracleReport {
        n_instances,
        mismatches,
        max_trapezoid_err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> CheckOutcome {
    match r {
        Ok((passed, detail)) => CheckOutcome {
            name,
            passed,
            detail,
        },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every check in [`CHECK_NAMES`] order.
pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckOutcome> {
    vec![
        outcome(
            CHECK_NAMES[0],
            mixture_equivalence(1000, 1, fault).map(|r| {
                (
                    r.max_rel_err <= 1e-6,
                    format!("{} cases, max rel err {:.3e}", r.n_cases, r.max_rel_err),
                )
            }),
        ),
        outcome(
            CHECK_NAMES[1],
            em_monotonicity(12, 2).map(|r| {
                (
                    r.worst_drop <= 1e-8,
                    format!("{} fits, worst drop {:.3e}", r.n_fits, r.worst_drop),
                )
            }),
        ),
        outcome(
            CHECK_NAMES[2],
            auc_oracle(1000, 3).map(|r| {
                (
                    r.mismatches == 0 && r.max_trapezoid_err <= 1e-12,
                    format!(
                        "{} instances, {} mismatches, max trapezoid err {:.3e}",
                        r.n_instances, r.mismatches, r.max_trapezoid_err
                    ),
                )
            }),
        ),
    ]
}
