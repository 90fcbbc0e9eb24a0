use igeo::divergences::{divergence, DivergenceSpec};
use igeo::models::builtin;
use igeo::quadrature::expect_vec;
use igeo::tensors::fisher;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn score_has_zero_mean(p in 0.05f64..0.95, mu in -2.0f64..2.0, sigma in 0.5f64..2.0) {
        for (name, theta) in [
            ("bernoulli-mean", vec![p]),
            ("gaussian-loc-scale", vec![mu, sigma]),
            ("poisson-natural", vec![mu.min(1.5)]),
        ] {
            let fam = builtin(name).unwrap();
            let n = fam.dim();
            let mean = expect_vec(&fam, &theta, n, |y, pt, out| out.copy_from_slice(&pt.score(y))).unwrap();
            for m in mean {
                prop_assert!(m.abs() < 1e-9, "{name} {theta:?}: {m}");
            }
        }
    }

    #[test]
    fn fisher_is_symmetric_positive(a in 0.1f64..0.3, b in 0.1f64..0.3) {
        let fam = builtin("categorical-3").unwrap();
        let g = fisher(&fam, &[a, b]).unwrap();
        prop_assert!((g.g[(0, 1)] - g.g[(1, 0)]).abs() < 1e-14);
        prop_assert!(g.det() > 0.0 && g.g[(0, 0)] > 0.0);
    }

    #[test]
    fn divergences_are_nonnegative_and_vanish_on_the_diagonal(
        t in 0.05f64..0.95,
        s in 0.05f64..0.95,
        rho in 0.1f64..3.0,
        alpha in -0.9f64..0.9,
    ) {
        let fam = builtin("bernoulli-mean").unwrap();
        for spec in [
            DivergenceSpec::Kl,
            DivergenceSpec::Alpha(alpha),
            DivergenceSpec::Renyi(rho),
            DivergenceSpec::Bhattacharyya,
        ] {
            let d = divergence(spec, &fam, &[t], &[s]).unwrap();
            prop_assert!(d >= -1e-12, "{spec} {t} {s}: {d}");
            prop_assert!(divergence(spec, &fam, &[t], &[t]).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn renyi_is_nondecreasing_in_order(t in 0.05f64..0.95, s in 0.05f64..0.95, r in 0.1f64..2.0) {
        let fam = builtin("bernoulli-mean").unwrap();
        let lo = divergence(DivergenceSpec::Renyi(r), &fam, &[t], &[s]).unwrap();
        let hi = divergence(DivergenceSpec::Renyi(r * 1.5), &fam, &[t], &[s]).unwrap();
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn natural_and_mean_charts_agree(theta in -3.0f64..3.0, other in -3.0f64..3.0) {
        let natural = builtin("bernoulli-natural").unwrap();
        let mean = builtin("bernoulli-mean").unwrap();
        let p = |x: f64| 1.0 / (1.0 + (-x).exp());
        let a = divergence(DivergenceSpec::Kl, &natural, &[theta], &[other]).unwrap();
        let b = divergence(DivergenceSpec::Kl, &mean, &[p(theta)], &[p(other)]).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
}
