use bnslim::layers::gradcheck::{gradient_check, random_case, LayerKind, LayerUnderTest};

const SEEDS: u64 = 20;

#[test]
fn every_layer_kind_matches_central_differences() {
    for kind in LayerKind::ALL {
        for seed in 0..SEEDS {
            let (layer, x) = random_case(kind, 1000 + seed);
            let check = gradient_check(&layer, &x, 1e-5).unwrap();
            assert!(
                check.within_tolerance,
                "{kind:?} seed {seed}: relative error {:.3e}",
                check.max_relative_error
            );
        }
    }
}

#[test]
fn batchnorm_penalty_gradient() {
    for seed in 0..SEEDS {
        let (layer, x) = random_case(LayerKind::BatchNorm, 2000 + seed);
        let LayerUnderTest::BatchNorm { params, .. } = layer else {
            unreachable!()
        };
        let layer = LayerUnderTest::BatchNorm { params, l1: 1e-2 };
        assert!(gradient_check(&layer, &x, 1e-5).unwrap().within_tolerance, "seed {seed}");
    }
}
