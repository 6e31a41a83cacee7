use nalgebra::DMatrix;
use proptest::prelude::*;
use scalemix::model::{
    log_density, log_density_wishart, sample, LatentExpectations, StudentTParams, WishartParams,
};
use scalemix::selftest::mixture_log_density_quadrature;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn row(x: &scalemix::model::MultichannelSegment) -> Vec<f64> {
    x.data().row(0).iter().copied().collect()
}

#[test]
fn gaussian_limit_variance() {
    let p = StudentTParams::isotropic(1e6, 1.0, 1).unwrap();
    let v = row(&sample(&p, 100_000, 21).unwrap());
    let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    assert!((var - 1.0).abs() < 0.02, "{var}");
}

#[test]
fn excess_kurtosis_matches_moment_formula() {
    let p = StudentTParams::isotropic(8.0, 1.0, 1).unwrap();
    let v = row(&sample(&p, 1_000_000, 22).unwrap());
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let excess = m4 / (m2 * m2) - 3.0;
    // 6 / (nu' - 4)
    assert!((excess - 1.5).abs() < 0.2, "{excess}");
}

#[test]
fn ks_against_students_t_cdf() {
    for (nu, seed) in [(0.7, 1), (3.0, 2), (12.0, 3)] {
        let p = StudentTParams::isotropic(nu, 1.0, 1).unwrap();
        let mut v = row(&sample(&p, 100_000, seed).unwrap());
        v.sort_by(f64::total_cmp);
        let t = StudentsT::new(0.0, 1.0, nu).unwrap();
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = t.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "nu' = {nu}: KS {ks}");
    }
}

#[test]
fn univariate_density_integrates_to_one() {
    for nu in [0.6, 1.0, 3.0, 30.0] {
        let p = StudentTParams::isotropic(nu, 2.5, 1).unwrap();
        // x = tan(theta) maps the real line onto (-pi/2, pi/2).
        let g = |th: f64| {
            let c = th.cos();
            (log_density(&[th.tan()], &p).unwrap()).exp() / (c * c)
        };
        let h = std::f64::consts::FRAC_PI_2;
        let total: f64 = [(-h, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, h)]
            .iter()
            .map(|&(a, b)| quadrature::double_exponential::integrate(g, a, b, 1e-10).integral)
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "nu' = {nu}: {total}");
    }
}

#[test]
fn bivariate_density_matches_mixture_quadrature() {
    let psi = DMatrix::identity(2, 2);
    let p = StudentTParams::new(3.0, psi.clone()).unwrap();
    let closed = log_density(&[1.0, 1.0], &p).unwrap();
    let quad = mixture_log_density_quadrature(&[1.0, 1.0], 3.0, &psi).unwrap();
    assert!((quad - closed).exp_m1().abs() < 1e-6);
}

#[test]
fn sampling_is_seeded() {
    let p = StudentTParams::isotropic(2.0, 1.0, 3).unwrap();
    assert_eq!(sample(&p, 50, 9).unwrap(), sample(&p, 50, 9).unwrap());
    assert_ne!(sample(&p, 50, 9).unwrap(), sample(&p, 50, 10).unwrap());
}

fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.2
    })
}

fn case() -> impl Strategy<Value = (f64, DMatrix<f64>, Vec<f64>)> {
    (1usize..6).prop_flat_map(|d| (0.1f64..80.0, spd(d), prop::collection::vec(-5.0f64..5.0, d)))
}

proptest! {
    #[test]
    fn wishart_form_agrees((nu, psi, x) in case()) {
        let p = StudentTParams::new(nu, psi).unwrap();
        let a = log_density(&x, &p).unwrap();
        let b = log_density_wishart(&x, &p.to_wishart()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn density_is_even((nu, psi, x) in case()) {
        let p = StudentTParams::new(nu, psi).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(log_density(&x, &p).unwrap(), log_density(&neg, &p).unwrap());
    }

    #[test]
    fn conversion_round_trip((nu, psi, _x) in case()) {
        let d = psi.nrows();
        let p = StudentTParams::new(nu, psi.clone()).unwrap();
        let w = p.to_wishart();
        prop_assert!((w.nu() - (nu + d as f64 - 1.0)).abs() < 1e-12);
        prop_assert!(w.inv_nu() > 0.0 && w.inv_nu().is_finite());
        let back = WishartParams::new(w.nu(), w.psi().clone()).unwrap().to_student_t();
        prop_assert!((back.nu_prime() - nu).abs() <= 1e-12 * nu.max(1.0));
        prop_assert!((back.psi_prime() - &psi).norm() <= 1e-12 * psi.norm());
    }

    #[test]
    fn inv_tau_decreases_in_mahalanobis(nu in 0.1f64..100.0, d in 1usize..20, a in 0.0f64..50.0, gap in 1e-3f64..50.0) {
        let e = LatentExpectations::from_mahalanobis(&[a, a + gap], nu, d);
        prop_assert!(e.e_inv_tau[0] > e.e_inv_tau[1]);
        prop_assert!(e.e_inv_tau[1] > 0.0);
    }
}
