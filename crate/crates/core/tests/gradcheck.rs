use kdforge_core::gradcheck::{check_encoder, check_primitive, EndToEnd, Primitive};

#[test]
fn primitives_match_finite_differences_over_100_seeds() {
    for op in Primitive::ALL {
        let worst = (0..100)
            .map(|seed| check_primitive(op, seed).unwrap())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-4, "{op:?}: relative error {worst:e}");
    }
}

#[test]
fn tiny_encoder_mlm_gradients() {
    for seed in 0..3 {
        let worst = check_encoder(EndToEnd::Mlm, seed).unwrap();
        assert!(worst < 1e-3, "seed {seed}: relative error {worst:e}");
    }
}

#[test]
fn tiny_encoder_gradients_with_fixed_dropout() {
    let worst = check_encoder(EndToEnd::MlmDropout, 11).unwrap();
    assert!(worst < 1e-3, "relative error {worst:e}");
}

#[test]
fn tiny_encoder_classifier_gradients() {
    let worst = check_encoder(EndToEnd::Classifier, 5).unwrap();
    assert!(worst < 1e-3, "relative error {worst:e}");
}
