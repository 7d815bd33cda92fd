use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vitstem::complexity::analyze;
use vitstem::models::{canonical_config, canonical_names, scaled_config, Model, ScaleSpec};
use vitstem::tensor::{Mode, Tape, Tensor};

fn desk(name: &str) -> vitstem::models::ModelConfig {
    let spec = ScaleSpec::new(32, 4, 1.0 / 6.0, 0.25).heads(4).classes(10);
    scaled_config(&canonical_config(name).unwrap(), &spec).unwrap()
}

fn noise(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(&mut rng))
}

#[test]
fn built_parameters_match_static_count() {
    for name in canonical_names() {
        let cfg = canonical_config(name).unwrap();
        let built = Model::build(&cfg, 0).unwrap().param_count() as u64;
        assert_eq!(built, analyze(&cfg).unwrap().params, "{name}");
    }
}

#[test]
fn headline_parameter_counts() {
    let p = Model::build(&canonical_config("ViT_P-4GF").unwrap(), 0).unwrap();
    assert!((p.param_count() as f64 / 18.5e6 - 1.0).abs() < 0.01);
    let c = Model::build(&canonical_config("ViT_C-18GF").unwrap(), 0).unwrap();
    assert!((c.param_count() as f64 / 81.6e6 - 1.0).abs() < 0.01);
}

#[test]
fn full_resolution_forward_shapes() {
    let mut model = Model::build(&canonical_config("ViT_P-4GF").unwrap(), 1).unwrap();
    let tape = Tape::new();
    let x = tape.constant(&noise(&[2, 3, 224, 224], 3));
    let out = model.forward(&tape, x, Mode::Eval).unwrap();
    assert_eq!(out.tokens_shape, vec![2, 197, 384]);
    assert_eq!(out.logits.shape(), vec![2, 1000]);
}

#[test]
fn desk_models_have_expected_shape() {
    let p = desk("ViT_P-4GF");
    let c = desk("ViT_C-4GF");
    assert_eq!((p.encoder.hidden_size, p.encoder.num_blocks), (64, 3));
    assert_eq!((c.encoder.hidden_size, c.encoder.num_blocks), (64, 2));
    assert_eq!(p.encoder.image_size, 32);
    assert_eq!(p.encoder.patch_size, 4);
}

#[test]
fn logits_are_finite_across_seeds() {
    for name in ["ViT_P-4GF", "ViT_C-4GF"] {
        for seed in 0..10 {
            let mut model = Model::build(&desk(name), seed).unwrap();
            let logits = model.predict(&noise(&[4, 3, 32, 32], 100 + seed), Mode::Train).unwrap();
            assert_eq!(logits.shape(), &[4, 10]);
            assert!(logits.data().iter().all(|v| v.is_finite()), "{name} seed {seed}");
        }
    }
}

#[test]
fn every_conv_model_is_one_block_shallower() {
    for name in canonical_names().iter().filter(|n| n.starts_with("ViT_C-")) {
        let twin = name.replacen("ViT_C-", "ViT_P-", 1);
        let twin = twin.replace("-47blk", "-48blk");
        let (c, p) = (canonical_config(name).unwrap(), canonical_config(&twin).unwrap());
        assert_eq!(c.encoder.num_blocks + 1, p.encoder.num_blocks, "{name}");
    }
}
