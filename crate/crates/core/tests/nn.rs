use depvoice::nn::gradcheck::run_gradient_suite;
use depvoice::nn::layers::cross_entropy;
use depvoice::nn::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Act, Mode, Model, ModelConfig, NnError,
    Sgd, HEAD_GROUP,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(size: usize) -> ModelConfig {
    ModelConfig {
        stage_blocks: vec![1, 1, 1],
        stage_channels: vec![4, 6, 8],
        input_size: size,
        arch_tag: "test".into(),
        ..ModelConfig::default()
    }
}

fn random_batch(n: usize, size: usize, seed: u64) -> Act<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    Act::from_vec(n, 3, size, size, data)
}

#[test]
fn gradients_match_finite_differences() {
    let results = run_gradient_suite(7);
    for r in &results {
        assert!(r.passes(1e-4), "{}: rel err {:e} over {}", r.name, r.max_rel_err, r.checked);
    }
    assert!(results.iter().any(|r| r.name.starts_with("model stem")));
    assert!(results.iter().any(|r| r.name.contains("shortcut")));
}

#[test]
fn default_config_logit_shape() {
    let model = Model::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let logits = model.forward_eval(&random_batch(1, 224, 1)).unwrap();
    assert_eq!(logits.len(), 2);
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn parameter_count_matches_closed_form() {
    // Trainable: conv weights, BN scale + offset, head weight + bias.
    let cfg = ModelConfig::default();
    let conv = |i: usize, o: usize, k: usize| i * o * k * k;
    let bn = |c: usize| 2 * c;
    let c0 = cfg.stage_channels[0];
    let mut expected = conv(3, c0, 3) + bn(c0);
    let mut in_ch = c0;
    for (s, (&blocks, &ch)) in cfg.stage_blocks.iter().zip(&cfg.stage_channels).enumerate() {
        for b in 0..blocks {
            expected += conv(in_ch, ch, 3) + bn(ch) + conv(ch, ch, 3) + bn(ch);
            if s > 0 && b == 0 {
                expected += conv(in_ch, ch, 1) + bn(ch);
            }
            in_ch = ch;
        }
    }
    expected += in_ch * cfg.num_classes + cfg.num_classes;
    let model = Model::<f32>::build(&cfg, 0).unwrap();
    assert_eq!(model.num_parameters(), expected);
}

#[test]
fn zero_input_gives_zero_logits_and_even_odds() {
    let model = Model::<f32>::build(&small_config(16), 3).unwrap();
    let x = Act::zeros(2, 3, 16, 16);
    assert!(model.forward_eval(&x).unwrap().iter().all(|&v| v == 0.0));
    assert_eq!(model.predict_proba(&x).unwrap(), vec![0.5; 4]);
}

#[test]
fn uniform_logits_loss_is_ln2() {
    let (loss, _) = cross_entropy(&[0.3f64, 0.3, -1.0, -1.0], &[0, 1], 2);
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::<f32>::build(&small_config(16), 11).unwrap();
    let b = Model::<f32>::build(&small_config(16), 11).unwrap();
    let c = Model::<f32>::build(&small_config(16), 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn wrong_input_size_is_shape_mismatch() {
    let model = Model::<f32>::build(&small_config(16), 0).unwrap();
    assert!(matches!(
        model.forward_eval(&random_batch(1, 8, 0)),
        Err(NnError::ShapeMismatch(_))
    ));
}

#[test]
fn unknown_arch_is_invalid_config() {
    assert!(matches!(ModelConfig::from_arch("resnet-50", 224), Err(NnError::InvalidConfig(_))));
    assert_eq!(ModelConfig::from_arch("mini-34", 64).unwrap().stage_blocks, vec![3, 4, 6]);
}

#[test]
fn every_parameter_in_exactly_one_group_and_head_alone_in_group_two() {
    let model = Model::<f32>::build(&small_config(16), 0).unwrap();
    let tensors = model.tensors();
    let mut names: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), tensors.len());
    let head: Vec<&str> = tensors.iter().filter(|t| t.group == HEAD_GROUP).map(|t| t.name.as_str()).collect();
    assert_eq!(head, vec!["head.weight", "head.bias"]);
}

#[test]
fn freezing_body_leaves_only_head_gradients() {
    let mut model = Model::<f32>::build(&small_config(16), 0).unwrap();
    let x = random_batch(3, 16, 1);
    model.set_frozen(&[0, 1], true).unwrap();
    let (_, grads) = model.loss_and_grads(&x, &[0, 1, 0]).unwrap();
    assert_eq!(grads.keys().collect::<Vec<_>>(), vec!["head.bias", "head.weight"]);

    model.set_frozen(&[0, 1], false).unwrap();
    let (_, grads) = model.loss_and_grads(&x, &[0, 1, 0]).unwrap();
    let trainable = model.tensors().iter().filter(|t| t.trainable).count();
    assert_eq!(grads.len(), trainable);
}

#[test]
fn freeze_flags_do_not_touch_values() {
    let mut model = Model::<f32>::build(&small_config(16), 0).unwrap();
    let before = model.digest();
    let body = model.body_digest();
    model.set_frozen(&[0, 1, 2], true).unwrap();
    model.set_frozen(&[0, 1, 2], false).unwrap();
    assert_eq!(model.digest(), before);
    assert_eq!(model.body_digest(), body);
    assert!(model.set_frozen(&[3], true).is_err());
}

#[test]
fn frozen_body_is_bit_identical_after_training_steps() {
    let mut model = Model::<f32>::build(&small_config(16), 0).unwrap();
    model.set_frozen(&[0, 1], true).unwrap();
    let body = model.body_digest();
    let head_before = model.head.weight.clone();
    let mut opt = Sgd::new(0.9);
    for step in 0..3 {
        let x = random_batch(4, 16, step);
        let (_, grads) = model.loss_and_grads(&x, &[0, 1, 1, 0]).unwrap();
        opt.step(&mut model, &grads, 0.1);
    }
    assert_eq!(model.body_digest(), body);
    assert_ne!(model.head.weight, head_before);
}

#[test]
fn train_mode_updates_running_stats_only_when_unfrozen() {
    let mut model = Model::<f32>::build(&small_config(16), 0).unwrap();
    let x = random_batch(4, 16, 2);
    let before = model.stem_bn.running_mean.clone();
    model.forward(&x, Mode::Train).unwrap();
    assert_ne!(model.stem_bn.running_mean, before);

    let mut frozen = Model::<f32>::build(&small_config(16), 0).unwrap();
    frozen.set_frozen(&[0], true).unwrap();
    frozen.forward(&x, Mode::Train).unwrap();
    assert_eq!(frozen.stem_bn.running_mean, before);
}

#[test]
fn residual_block_with_zeroed_branch_is_relu_identity() {
    let cfg = ModelConfig {
        stage_blocks: vec![2],
        stage_channels: vec![4],
        input_size: 8,
        arch_tag: "test".into(),
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::build(&cfg, 0).unwrap();
    let block = &mut model.blocks[1];
    block.conv2.weight.iter_mut().for_each(|w| *w = 0.0);
    block.bn2.gamma.iter_mut().for_each(|g| *g = 0.0);
    assert!(block.shortcut.is_none());

    let mut without_second = model.clone();
    without_second.blocks.truncate(1);
    let x = Act::from_vec(2, 3, 8, 8, (0..384).map(|i| (i % 17) as f64 / 17.0).collect());
    // Output of block 0 is non-negative; block 1 must return it unchanged.
    assert_eq!(model.features(&x).unwrap(), without_second.features(&x).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut model = Model::<f32>::build(&small_config(16), 5).unwrap();
    model.forward(&random_batch(4, 16, 9), Mode::Train).unwrap();
    model.set_frozen(&[0], true).unwrap();
    model.set_lr_scales([0.01, 0.1, 1.0]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);
    let x = random_batch(2, 16, 4);
    assert_eq!(loaded.forward_eval(&x).unwrap(), model.forward_eval(&x).unwrap());
}

#[test]
fn checkpoint_keeps_custom_width() {
    let cfg = ModelConfig {
        stage_channels: vec![5, 7, 9],
        ..small_config(16)
    };
    let model = Model::<f32>::build(&cfg, 1).unwrap();
    let loaded = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
    assert_eq!(loaded.config.stage_channels, vec![5, 7, 9]);
    assert_eq!(loaded.feature_dim(), 9);
}

#[test]
fn checkpoint_errors() {
    let model = Model::<f32>::build(&small_config(16), 1).unwrap();
    let bytes = encode_checkpoint(&model);

    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    let n = bad_version.len();
    let crc = crc32fast::hash(&bad_version[..n - 4]);
    bad_version[n - 4..].copy_from_slice(&crc.to_le_bytes());
    assert!(matches!(decode_checkpoint(&bad_version), Err(NnError::VersionMismatch { found: 9, .. })));

    assert!(matches!(
        load_checkpoint(std::path::Path::new("/nonexistent/m.ckpt")),
        Err(NnError::Io(_))
    ));
    assert!(decode_checkpoint(&bytes[..8]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_flipped_byte_is_rejected(pos in 0usize..10_000, bit in 0u8..8) {
        let model = Model::<f32>::build(&small_config(8), 2).unwrap();
        let mut bytes = encode_checkpoint(&model);
        let pos = pos % bytes.len();
        bytes[pos] ^= 1 << bit;
        let err = decode_checkpoint(&bytes).unwrap_err();
        let is_checksum = matches!(err, NnError::ChecksumMismatch { .. });
        prop_assert!(is_checksum, "{:?}", err);
    }

    #[test]
    fn eval_forward_is_per_sample(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let model = Model::<f32>::build(&small_config(8), 4).unwrap();
        let x = random_batch(4, 8, seed);
        let logits = model.forward_eval(&x).unwrap();
        let mut order: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..4).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut permuted = x.same_shape();
        for (dst, &src) in order.iter().enumerate() {
            permuted.sample_mut(dst).copy_from_slice(x.sample(src));
        }
        let plog = model.forward_eval(&permuted).unwrap();
        for (dst, &src) in order.iter().enumerate() {
            prop_assert_eq!(&plog[dst * 2..dst * 2 + 2], &logits[src * 2..src * 2 + 2]);
        }
    }
}

#[test]
fn copies_of_one_image_give_identical_rows() {
    let model = Model::<f32>::build(&small_config(8), 4).unwrap();
    let one = random_batch(1, 8, 3);
    let mut x = Act::zeros(3, 3, 8, 8);
    for i in 0..3 {
        x.sample_mut(i).copy_from_slice(one.sample(0));
    }
    let logits = model.forward_eval(&x).unwrap();
    assert_eq!(logits[0..2], logits[2..4]);
    assert_eq!(logits[0..2], logits[4..6]);
}
