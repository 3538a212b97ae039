mod common;

use common::*;
use expressivity::bounds::{c1, c2, gamma_bound, layer_lipschitz, ln_factor};
use expressivity::model::{ModelConfig, ScsaParams, Variant};
use expressivity::pooling::{pooling_factor, PoolingSpec};
use expressivity::Error;
use proptest::prelude::*;

fn config(variant: Variant, n: usize, d: usize, h: usize, layers: usize, seed: u64) -> ModelConfig {
    let scsa = (variant == Variant::Scsa).then_some(ScsaParams {
        nabla: 1.5,
        nu: 0.8,
        tau: 1.2,
        window: 2,
    });
    ModelConfig::gaussian(n, d, h, 0.9, variant, layers, scsa, seed).unwrap()
}

#[test]
fn constants_match_transcription_oracle() {
    for variant in Variant::ALL {
        for (n, d, h) in [(4, 4, 1), (8, 6, 2), (16, 8, 4)] {
            for seed in 0..3 {
                let cfg = config(variant, n, d, h, 1, seed);
                let layer = &cfg.layers()[0];
                let want = oracle_c1(layer, variant, n, d, cfg.bound(), cfg.scsa());
                let got = c1(layer, &cfg).unwrap();
                assert!(rel_err(got, want) <= 1e-9, "{variant} n={n}: {got} vs {want}");
                assert!(rel_err(c2(layer).unwrap(), oracle_c2(layer)) <= 1e-9);
            }
        }
    }
}

#[test]
fn three_layer_gamma_is_multiplicative() {
    for variant in Variant::ALL {
        let cfg = config(variant, 8, 4, 2, 3, 17);
        for spec in PoolingSpec::FIXED {
            let report = gamma_bound(&cfg, spec, 0.01, 0.5).unwrap();
            let mut product = 1.0;
            for layer in cfg.layers() {
                product *= ln_factor(4) * c1(layer, &cfg).unwrap() * c2(layer).unwrap();
            }
            let want = 0.01 / 0.5 * pooling_factor(spec, 8, 4).unwrap() * product;
            assert!(rel_err(report.gamma, want) <= 1e-12, "{variant} {spec}");
            assert_eq!(report.num_layers(), 3);
        }
    }
}

#[test]
fn layer_prefix_gives_prefix_product() {
    let three = config(Variant::DotProduct, 8, 4, 1, 3, 2);
    let one = three.with_layers(three.layers()[..1].to_vec()).unwrap();
    let r3 = gamma_bound(&three, PoolingSpec::Avg, 1.0, 1.0).unwrap();
    let r1 = gamma_bound(&one, PoolingSpec::Avg, 1.0, 1.0).unwrap();
    let tail: f64 = three.layers()[1..]
        .iter()
        .map(|l| layer_lipschitz(l, &three).unwrap())
        .product();
    assert!(rel_err(r3.gamma, r1.gamma * tail) <= 1e-12);
}

#[test]
fn gamma_vacuity_flag() {
    let cfg = config(Variant::DotProduct, 16, 8, 2, 2, 0);
    let big = gamma_bound(&cfg, PoolingSpec::Sum, 1.0, 1.0).unwrap();
    assert!(big.is_vacuous());
    let small = gamma_bound(&cfg, PoolingSpec::Avg, 1e-12, 1.0).unwrap();
    assert!(!small.is_vacuous());
}

#[test]
fn gamma_rejects_bad_arguments() {
    let cfg = config(Variant::L2Tied, 4, 4, 1, 1, 0);
    assert!(matches!(
        gamma_bound(&cfg, PoolingSpec::Avg, 0.0, 1.0),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        gamma_bound(&cfg, PoolingSpec::Avg, 1.0, -1.0),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        gamma_bound(&cfg, PoolingSpec::WeightedAvg, 1.0, 1.0),
        Err(Error::Unsupported(_))
    ));
}

proptest! {
    #[test]
    fn gamma_is_linear_in_eps_over_sigma(seed in 0u64..1000, eps in 1e-6f64..10.0, sigma in 1e-3f64..10.0, t in 0.1f64..10.0) {
        let cfg = config(Variant::Scsa, 4, 4, 2, 1, seed);
        let a = gamma_bound(&cfg, PoolingSpec::Max, eps, sigma).unwrap().gamma;
        let b = gamma_bound(&cfg, PoolingSpec::Max, t * eps, sigma).unwrap().gamma;
        let c = gamma_bound(&cfg, PoolingSpec::Max, eps, t * sigma).unwrap().gamma;
        prop_assert!(rel_err(b, t * a) <= 1e-12);
        prop_assert!(rel_err(c, a / t) <= 1e-12);
    }

    #[test]
    fn pooling_order_of_bounds(seed in 0u64..1000, n in 2usize..32) {
        let cfg = config(Variant::DotProduct, n, 4, 1, 1, seed);
        let g = |s| gamma_bound(&cfg, s, 0.1, 1.0).unwrap().gamma;
        prop_assert!(g(PoolingSpec::Avg) < g(PoolingSpec::Last));
        prop_assert!(g(PoolingSpec::Last) < g(PoolingSpec::Max));
        prop_assert!(g(PoolingSpec::Max) <= g(PoolingSpec::Sum));
        prop_assert!(rel_err(g(PoolingSpec::Sum) / g(PoolingSpec::Avg), n as f64) <= 1e-12);
    }

    #[test]
    fn dot_c1_grows_with_input_bound(seed in 0u64..1000, b in 0.1f64..5.0) {
        let base = config(Variant::DotProduct, 6, 4, 2, 1, seed);
        let lo = ModelConfig::new(6, 4, 2, b, Variant::DotProduct, base.layers().to_vec(), None).unwrap();
        let hi = ModelConfig::new(6, 4, 2, 2.0 * b, Variant::DotProduct, base.layers().to_vec(), None).unwrap();
        prop_assert!(c1(&lo.layers()[0], &lo).unwrap() < c1(&hi.layers()[0], &hi).unwrap());
    }

    #[test]
    fn factors_are_at_least_one(seed in 0u64..1000, v in 0usize..3, layers in 1usize..4) {
        let cfg = config(Variant::ALL[v], 8, 4, 2, layers, seed);
        let r = gamma_bound(&cfg, PoolingSpec::Avg, 0.1, 1.0).unwrap();
        prop_assert!(r.ln_factor >= 1.0);
        prop_assert!(r.c1_per_layer.iter().all(|&c| c >= 1.0));
        prop_assert!(r.c2_per_layer.iter().all(|&c| c >= 1.0));
        prop_assert!(r.lipschitz_total >= 1.0);
    }

    #[test]
    fn max_bound_is_last_times_root_rank(seed in 0u64..1000, n in 1usize..20) {
        let cfg = config(Variant::L2Tied, n, 6, 2, 1, seed);
        let max = gamma_bound(&cfg, PoolingSpec::Max, 0.1, 1.0).unwrap().gamma;
        let last = gamma_bound(&cfg, PoolingSpec::Last, 0.1, 1.0).unwrap().gamma;
        prop_assert!(rel_err(max, last * (n.min(6) as f64).sqrt()) <= 1e-12);
    }
}
