mod common;

use approx::assert_abs_diff_eq;
use common::oracles;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stitchwork_core::embgan::{
    adversarial_loss, cycle_loss, embedding_loss, identity_loss, identity_terms, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig,
};
use stitchwork_core::tensor::{spectral_normalize, SpectralState};
use stitchwork_core::Tensor;

#[test]
fn adversarial_objective_at_half_scores() {
    let half = Tensor::<f64>::full(&[1, 4, 4], 0.5);
    let (d, g) = adversarial_loss(&half, &half).unwrap();
    assert_abs_diff_eq!(d, 2.0 * 0.5f64.ln(), epsilon = 1e-6);
    assert_abs_diff_eq!(g, 0.5f64.ln(), epsilon = 1e-6);
}

#[test]
fn cycle_loss_of_constant_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng)).collect();
    for offset in [0.25, -0.25] {
        let shifted: Vec<_> = batch.iter().map(|t| t.map(|v| v + offset)).collect();
        assert_abs_diff_eq!(cycle_loss(&batch, &shifted).unwrap(), 0.25, epsilon = 1e-6);
    }
    assert_eq!(cycle_loss(&batch, &batch).unwrap(), 0.0);
    assert!(cycle_loss(&batch, &batch[..2]).is_err());
}

#[test]
fn identity_loss_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng)).collect();
    let y: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng)).collect();
    assert_eq!(identity_terms(&x, &x, &y, &y).unwrap(), 0.0);
    let g2_x: Vec<_> = x.iter().map(|t| t.map(|v| v + 0.1)).collect();
    assert_abs_diff_eq!(identity_terms(&g2_x, &x, &y, &y).unwrap(), 0.1, epsilon = 1e-9);

    let cfg = GeneratorConfig { base_filters: 4, res_blocks: 1, ..GeneratorConfig::default() };
    let g1 = Generator::<f32>::new(cfg.clone(), &mut rng).unwrap().cast::<f64>();
    let g2 = Generator::<f32>::new(cfg, &mut rng).unwrap().cast::<f64>();
    assert!(identity_loss(&g1, &g2, &x, &y).unwrap() >= 0.0);
}

#[test]
fn embedding_loss_closed_forms() {
    let ones = vec![Tensor::<f64>::ones(&[1, 4, 4])];
    assert_abs_diff_eq!(embedding_loss(&ones, &ones), 2.0, epsilon = 1e-12);
    let halves: Vec<_> = ones.iter().map(|t| t.scale(0.5)).collect();
    assert_abs_diff_eq!(embedding_loss(&halves, &halves), 1.0, epsilon = 1e-12);
    let zeros = vec![Tensor::<f64>::zeros(&[1, 4, 4])];
    assert_eq!(embedding_loss(&zeros, &zeros), 0.0);
}

#[test]
fn scaled_discriminator_weights_normalize_to_unit_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut rng).unwrap().cast::<f64>();
    for (name, w) in d.params.iter().filter(|(n, _)| n.ends_with("weight")) {
        let big = w.scale(10.0);
        let rows = big.shape()[0];
        let cols = big.len() / rows;
        let mut state = SpectralState::new(rows, 1).with_iterations(500);
        let (normalized, _) = spectral_normalize(&big, &mut state).unwrap();
        let sigma = oracles::svd_sigma(normalized.data(), rows, cols);
        assert!((sigma - 1.0).abs() < 1e-3, "{name}: {sigma}");
    }
}
