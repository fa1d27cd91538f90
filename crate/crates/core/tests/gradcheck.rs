mod common;

use common::*;
use salient_core::{Architecture, Network, PinnedRng};

#[test]
fn every_layer_kind_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = PinnedRng::new(seed);
        for (name, layer, shape) in layer_zoo(&mut rng) {
            let x = random_tensor(&mut rng, &shape, true);
            let err = check_layer(&layer, &x, &mut rng);
            assert!(err < GRAD_TOLERANCE, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn small_network_all_parameters() {
    let arch = small_arch();
    for seed in 0..10 {
        let mut rng = PinnedRng::new(100 + seed);
        let net = Network::<f64>::he_init(arch.clone(), &mut rng).unwrap();
        let xs: Vec<_> = (0..3).map(|_| random_tensor(&mut rng, &[3, 8, 8], true)).collect();
        let batch: Vec<_> = xs.iter().zip([0, 1, 2]).collect();
        let err = check_network(&net, &batch, usize::MAX);
        assert!(err < GRAD_TOLERANCE, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn micro_vd_sampled_parameters() {
    let arch = Architecture::micro_vd();
    for seed in 0..2 {
        let mut rng = PinnedRng::new(200 + seed);
        let net = Network::<f64>::he_init(arch.clone(), &mut rng).unwrap();
        let x = random_tensor(&mut rng, &[3, 64, 64], true).map(|v| v.abs().min(1.0));
        let err = check_network(&net, &[(&x, seed as usize % 3)], 12);
        assert!(err < GRAD_TOLERANCE, "seed {seed}: rel err {err:e}");
    }
}
