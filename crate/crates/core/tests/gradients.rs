mod common;

#[test]
fn full_network_matches_central_differences() {
    for seed in 1..=20 {
        let e = common::network_gradient_error(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
    }
}

#[test]
fn bn_layer_matches_central_differences() {
    for seed in 1..=20 {
        let e = common::bn_gradient_error(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
    }
}
