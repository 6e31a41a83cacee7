use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scalemix::evaluation::{evaluate, hedges_g, operating_point, rank_auc, roc_auc, LabeledScores};
use scalemix::selftest::pair_count_auc;

fn scores() -> impl Strategy<Value = LabeledScores> {
    let v = || {
        prop::collection::vec(-20i32..20, 1..40)
            .prop_map(|v| v.into_iter().map(f64::from).collect())
    };
    (v(), v()).prop_map(|(a, b)| LabeledScores::new(a, b))
}

fn distinct_scores() -> impl Strategy<Value = LabeledScores> {
    prop::collection::hash_set(-10_000i32..10_000, 2..60).prop_flat_map(|set| {
        let all: Vec<f64> = set.into_iter().map(f64::from).collect();
        let n = all.len();
        (Just(all), 1..n)
            .prop_map(|(all, k)| LabeledScores::new(all[..k].to_vec(), all[k..].to_vec()))
    })
}

proptest! {
    #[test]
    fn rank_auc_equals_pair_count(s in scores()) {
        prop_assert_eq!(rank_auc(&s).unwrap(), pair_count_auc(&s));
    }

    #[test]
    fn trapezoid_equals_rank_auc(s in scores()) {
        let roc = roc_auc(&s).unwrap();
        prop_assert!((roc.trapezoid_area() - roc.auc).abs() <= 1e-12);
        for w in roc.points.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        prop_assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        prop_assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn auc_invariant_under_increasing_transform(s in scores()) {
        let f = |v: &Vec<f64>| v.iter().map(|x| (x / 7.0).exp() * 3.0 - 1.0).collect::<Vec<f64>>();
        let t = LabeledScores::new(f(&s.seizure), f(&s.nonseizure));
        prop_assert_eq!(rank_auc(&s).unwrap(), rank_auc(&t).unwrap());
    }

    #[test]
    fn reversed_labels_complement_auc(s in distinct_scores()) {
        let a = rank_auc(&s).unwrap();
        let b = rank_auc(&s.swapped()).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn confusion_rows_are_normalized(s in scores()) {
        let op = operating_point(&s).unwrap();
        for row in op.confusion.0 {
            prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert!(op.confusion.tpr() >= op.confusion.fpr());
    }
}

#[test]
fn hedges_g_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a: Vec<f64> = (0..37)
        .map(|_| 1.3 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let b: Vec<f64> = (0..52)
        .map(|_| 0.4 + 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    // unbiased variances, pooled with (n - 1) weights
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let sp = (((n1 - 1.0) * var(&a) + (n2 - 1.0) * var(&b)) / (n1 + n2 - 2.0)).sqrt();
    let j = 1.0 - 3.0 / (4.0 * (n1 + n2) - 9.0);
    let expected = j * (mean(&a) - mean(&b)) / sp;
    let g = hedges_g(&LabeledScores::new(a, b)).unwrap();
    assert!((g - expected).abs() < 1e-12, "{g} vs {expected}");
}

#[test]
fn identical_distributions_give_balanced_operating_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut draw = |n| {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<f64>>()
    };
    let s = LabeledScores::new(draw(4000), draw(4000));
    let r = evaluate(&s).unwrap();
    assert!((r.auc - 0.5).abs() < 0.03, "{}", r.auc);
    let c = r.confusion;
    assert!(
        (c.tpr() - c.fpr()).abs() < 0.06,
        "tpr {} fpr {}",
        c.tpr(),
        c.fpr()
    );
}
