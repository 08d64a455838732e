use proptest::prelude::*;

use monde::data::{Matrix, Standardization};
use monde::eval::{empirical_tail_dep, pr_ap, quantile_invert, roc_auc};
use monde::models::{from_bytes, to_bytes, Family, Model, ModelSpec};
use monde::stats::norm_cdf;

fn labelled(n: usize) -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (
        prop::collection::vec(any::<bool>(), n),
        prop::collection::vec(-100.0f64..100.0, n),
    )
        .prop_filter("both classes", |(l, _)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
}

fn small_spec(family: Family) -> ModelSpec {
    match family {
        Family::Umonde => ModelSpec::Umonde {
            x_hidden: vec![4],
            mono_hidden: vec![4, 3],
        },
        Family::MondeMade => ModelSpec::MondeMade { m: 3, hidden_layers: 2 },
        Family::CopulaConst => ModelSpec::CopulaConst {
            width: 4,
            x_layers: 1,
            y_layers: 2,
        },
        Family::CopulaParam => ModelSpec::CopulaParam {
            width: 4,
            x_layers: 1,
            y_layers: 1,
            corr_hidden: vec![3],
        },
        Family::Pumonde => ModelSpec::Pumonde {
            hx_hidden: vec![4],
            hxy_hidden: vec![4, 3],
            t_hidden: vec![3],
            x_init_scale: None,
        },
        Family::DiagonalGaussian => ModelSpec::DiagonalGaussian,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_ignores_monotone_rescaling((labels, scores) in labelled(40)) {
        let a = roc_auc(&labels, &scores).unwrap().summary;
        let warped: Vec<f64> = scores.iter().map(|s| (s / 10.0).exp() + 3.0).collect();
        let b = roc_auc(&labels, &warped).unwrap().summary;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auc_flips_with_negated_scores((labels, scores) in labelled(30)) {
        let a = roc_auc(&labels, &scores).unwrap().summary;
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = roc_auc(&labels, &neg).unwrap().summary;
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_curve_is_ordered((labels, scores) in labelled(25)) {
        let c = roc_auc(&labels, &scores).unwrap();
        prop_assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        prop_assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
        prop_assert!(c.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        let ap = pr_ap(&labels, &scores).unwrap().summary;
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }

    #[test]
    fn quantile_inverts_the_cdf(mu in -50.0f64..50.0, sd in 0.1f64..20.0, p in 0.001f64..0.999) {
        let f = |y: f64| norm_cdf((y - mu) / sd);
        let q = quantile_invert(f, p).unwrap();
        prop_assert!((f(q) - p).abs() < 1e-8);
    }

    #[test]
    fn empirical_tail_dependence_is_a_probability(
        a in prop::collection::vec(-5.0f64..5.0, 120),
        b in prop::collection::vec(-5.0f64..5.0, 120),
    ) {
        let grid = [0.05, 0.25, 0.5, 0.75, 0.95];
        let t = empirical_tail_dep(&a, &b, &grid).unwrap();
        prop_assert!(t.lambda.iter().all(|l| (0.0..=1.0).contains(l)));
    }

    #[test]
    fn standardization_round_trips(
        row in prop::collection::vec(-1e3f64..1e3, 3),
        mean in prop::collection::vec(-10.0f64..10.0, 3),
        sd in prop::collection::vec(0.01f64..10.0, 3),
    ) {
        let s = Standardization { mean, sd };
        let back = s.invert(&s.apply(&row));
        prop_assert!(row.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_cdfs_are_monotone(
        seed in 0u64..1000,
        family in prop::sample::select(vec![Family::Umonde, Family::CopulaConst, Family::CopulaParam, Family::Pumonde]),
        x in prop::collection::vec(-2.0f64..2.0, 2),
        y in prop::collection::vec(-3.0f64..3.0, 2),
        step in prop::collection::vec(0.0f64..2.0, 2),
    ) {
        let k = if family == Family::Umonde { 1 } else { 2 };
        let m = Model::new(&small_spec(family), 2, k, seed).unwrap();
        let xs = Matrix::new(1, 2, x).unwrap();
        let lo = Matrix::new(1, k, y[..k].to_vec()).unwrap();
        let hi = Matrix::new(1, k, y[..k].iter().zip(&step).map(|(a, s)| a + s).collect()).unwrap();
        let (a, b) = (m.cdf(&xs, &lo).unwrap()[0], m.cdf(&xs, &hi).unwrap()[0]);
        prop_assert!(a > 0.0 && b < 1.0 && a <= b, "{} {}", a, b);
        prop_assert!(!m.logpdf(&xs, &lo).unwrap().values[0].is_nan());
    }

    #[test]
    fn pumonde_joint_is_below_marginals(seed in 0u64..1000, y in prop::collection::vec(-3.0f64..3.0, 3)) {
        let m = Model::new(&small_spec(Family::Pumonde), 0, 3, seed).unwrap();
        let xs = Matrix::zeros(1, 0);
        let ys = Matrix::new(1, 3, y).unwrap();
        let joint = m.cdf(&xs, &ys).unwrap()[0];
        for subset in [vec![0], vec![1], vec![2], vec![0, 1], vec![1, 2]] {
            prop_assert!(joint <= m.marginal_cdf(&xs, &ys, &subset).unwrap()[0]);
        }
    }

    #[test]
    fn persistence_is_lossless(
        seed in 0u64..1000,
        family in prop::sample::select(vec![Family::Umonde, Family::MondeMade, Family::CopulaConst, Family::CopulaParam, Family::Pumonde]),
    ) {
        let k = if family == Family::Umonde { 1 } else { 2 };
        let m = Model::new(&small_spec(family), 2, k, seed).unwrap();
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
    }
}
