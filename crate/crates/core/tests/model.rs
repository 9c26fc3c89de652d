use proptest::prelude::*;
use wftnet::checkpoint::{decode, encode};
use wftnet::model::{ModelConfig, WftNet};
use wftnet::wftblock::BranchMode;
use wftnet::{RngState, Tensor};

fn config(mode: BranchMode) -> ModelConfig {
    ModelConfig {
        d_model: 4,
        layers: 2,
        top_k: 2,
        mode,
        ..ModelConfig::new(24, 12, 2)
    }
}

fn input(seed: u64) -> Tensor {
    let mut rng = RngState::new(seed);
    let data = (0..48)
        .map(|i| ((i / 2) as f64 * 0.5).sin() + 0.3 * rng.uniform_in(-1.0, 1.0))
        .collect();
    Tensor::new(&[24, 2], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forecast_is_affine_equivariant(seed in 0u64..1000, a in 0.1f64..20.0, b in -50.0f64..50.0) {
        let model = WftNet::new(config(BranchMode::Fused), &mut RngState::new(seed)).unwrap();
        let x = input(seed + 1);
        let moved = Tensor::new(x.shape(), x.data().iter().map(|v| a * v + b).collect()).unwrap();
        let y = model.predict(&x).unwrap();
        let z = model.predict(&moved).unwrap();
        for (p, q) in y.data().iter().zip(z.data()) {
            prop_assert!((a * p + b - q).abs() < 1e-8 * (1.0 + q.abs()), "{} vs {}", a * p + b, q);
        }
    }
}

fn perturb(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v += 0.37);
}

#[test]
fn fourier_only_ignores_wavelet_parameters() {
    let mut model = WftNet::new(config(BranchMode::FourierOnly), &mut RngState::new(1)).unwrap();
    let x = input(2);
    let before = model.predict(&x).unwrap();
    for b in &mut model.params.blocks {
        perturb(&mut b.strip_kernel);
        perturb(&mut b.strip_bias);
        b.wavelet_inception.kernels.iter_mut().for_each(perturb);
    }
    assert_eq!(model.predict(&x).unwrap(), before);
    perturb(&mut model.params.blocks[0].fourier_inception.kernels[1]);
    assert_ne!(model.predict(&x).unwrap(), before);
}

#[test]
fn wavelet_only_ignores_fourier_parameters() {
    let mut model = WftNet::new(config(BranchMode::WaveletOnly), &mut RngState::new(3)).unwrap();
    let x = input(4);
    let before = model.predict(&x).unwrap();
    for b in &mut model.params.blocks {
        b.fourier_inception.kernels.iter_mut().for_each(perturb);
        b.fourier_inception.biases.iter_mut().for_each(perturb);
    }
    assert_eq!(model.predict(&x).unwrap(), before);
    perturb(&mut model.params.blocks[1].strip_bias);
    assert_ne!(model.predict(&x).unwrap(), before);
}

#[test]
fn forward_is_deterministic() {
    let model = WftNet::new(config(BranchMode::Fused), &mut RngState::new(5)).unwrap();
    let x = input(6);
    let a = model.forward(&x, &mut RngState::new(9), true).unwrap();
    let b = model.forward(&x, &mut RngState::new(9), true).unwrap();
    assert_eq!(a, b);
    let c = model.forward(&x, &mut RngState::new(10), true).unwrap();
    assert_ne!(a, c);
    assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap());
}

#[test]
fn checkpoint_preserves_forecasts() {
    let model = WftNet::new(config(BranchMode::Fused), &mut RngState::new(7)).unwrap();
    let back = decode(&encode(&model, None).unwrap()).unwrap().model;
    let x = input(8);
    assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
}

#[test]
fn alpha_tracks_periodicity() {
    let model = WftNet::new(config(BranchMode::Fused), &mut RngState::new(0)).unwrap();
    let sine: Vec<f64> = (0..48)
        .map(|i| (2.0 * std::f64::consts::PI * (i / 2) as f64 / 6.0).sin())
        .collect();
    let a = model.alpha(&Tensor::new(&[24, 2], sine).unwrap()).unwrap();
    assert!(a > 0.99, "{a}");
}
