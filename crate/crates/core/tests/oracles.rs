mod common;

use common::oracles;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stitchwork_core::features::{extract_features, gram, FeatureMap, FeatureNetwork, LayerSpec};
use stitchwork_core::tensor::{spectral_normalize, SpectralState};
use stitchwork_core::{Graph, Image, Tensor};

const TOL: f64 = 1e-6;

fn conv_case(seed: u64, transpose: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=4);
    let o = rng.random_range(1..=4);
    let h = rng.random_range(3..=8);
    let w = rng.random_range(3..=8);
    let k = rng.random_range(1..=3usize);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..k);
    let x = Tensor::<f64>::randn(&[c, h, w], 1.0, &mut rng);
    let kshape = if transpose { [c, o, k, k] } else { [o, c, k, k] };
    let kern = Tensor::<f64>::randn(&kshape, 1.0, &mut rng);
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(kern.clone()));
    let (y, (expected, oh, ow)) = if transpose {
        (g.conv_transpose2d(xv, kv, stride, pad).unwrap(), oracles::conv_transpose2d(x.data(), (c, h, w), kern.data(), (o, k, k), stride, pad))
    } else {
        (g.conv2d(xv, kv, stride, pad).unwrap(), oracles::conv2d(x.data(), (c, h, w), kern.data(), (o, k, k), stride, pad))
    };
    assert_eq!(g.shape(y), &[o, oh, ow]);
    oracles::max_abs_diff(g.value(y).data(), &expected)
}

#[test]
fn conv2d_matches_direct_sum() {
    for seed in 0..200 {
        let d = conv_case(seed, false);
        assert!(d < TOL, "seed {seed}: {d:e}");
    }
}

#[test]
fn conv_transpose2d_matches_scatter() {
    for seed in 0..200 {
        let d = conv_case(seed, true);
        assert!(d < TOL, "seed {seed}: {d:e}");
    }
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image {
    Image::new(c, h, w, (0..c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
}

#[test]
fn features_match_layer_loops() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = if rng.random::<bool>() { 1 } else { 3 };
        let (h, w) = (rng.random_range(4..=8), rng.random_range(4..=8));
        let layers = vec![LayerSpec::conv3(rng.random_range(1..=4)).pooled(), LayerSpec::conv3(rng.random_range(1..=4))];
        let net = FeatureNetwork::random(c, layers, rng.random()).unwrap();
        let img = random_image(&mut rng, c, h, w);
        let got = extract_features::<f64>(&img, &net, &[2, 1]).unwrap();
        let want = oracles::features(&img, &net, &[2, 1]);
        for (g, (d, p, v)) in got.iter().zip(&want) {
            assert_eq!(g.matrix.shape(), &[*d, *p]);
            let diff = oracles::max_abs_diff(g.matrix.data(), v);
            assert!(diff < TOL, "seed {seed} layer {}: {diff:e}", g.layer);
        }
    }
}

#[test]
fn gram_matches_double_loop() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, p) = (rng.random_range(1..=4), rng.random_range(1..=64));
        let m = Tensor::<f64>::randn(&[d, p], 1.0, &mut rng);
        let got = gram(&FeatureMap { layer: 1, matrix: m.clone() });
        assert_eq!(got.positions, p);
        let diff = oracles::max_abs_diff(got.matrix.data(), &oracles::gram(m.data(), d, p));
        assert!(diff < TOL, "seed {seed}: {diff:e}");
    }
}

#[test]
fn spectral_sigma_matches_svd() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::<f64>::randn(&[8, 8], 1.0, &mut rng);
        let oracle = oracles::svd_sigma(w.data(), 8, 8);

        // Many iterations in one call.
        let mut state = SpectralState::new(8, seed).with_iterations(500);
        let (normalized, outcome) = spectral_normalize(&w, &mut state).unwrap();
        let rel = (outcome.sigma() - oracle).abs() / oracle;
        assert!(rel < 1e-3, "seed {seed}: sigma {} vs {oracle}", outcome.sigma());
        let after = oracles::svd_sigma(normalized.data(), 8, 8);
        assert!((after - 1.0).abs() < 1e-3, "normalized sigma {after}");

        // One iteration per call with a persisted estimate, as in training.
        let mut state = SpectralState::new(8, seed);
        let mut sigma = 0.0;
        for _ in 0..500 {
            sigma = spectral_normalize(&w, &mut state).unwrap().1.sigma();
        }
        assert!((sigma - oracle).abs() / oracle < 1e-3, "seed {seed}: amortized sigma {sigma} vs {oracle}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_estimate_never_exceeds_svd(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::<f64>::randn(&[rows, cols], 1.0, &mut rng);
        let mut state = SpectralState::new(rows, seed);
        let (_, outcome) = spectral_normalize(&w, &mut state).unwrap();
        // uᵀWv with unit u, v is bounded by the largest singular value.
        prop_assert!(outcome.sigma() <= oracles::svd_sigma(w.data(), rows, cols) * (1.0 + 1e-12));
    }
}
