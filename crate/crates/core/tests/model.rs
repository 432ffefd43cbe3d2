use lanstyle::autograd::Mat;
use lanstyle::features::FeatureKind;
use lanstyle::model::{
    duration_loss, durations_from_log, encode, fft_block, fuse, length_regulate, tts_loss, AcousticFeature, AcousticModel,
    Durations, EmbeddingSequence, ModelConfig,
};
use lanstyle::optim::{Adam, AdamConfig};
use lanstyle::text::{Scheme, TokenSequence};
use lanstyle::training::{batch_objective, Batch};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Mat {
    // sum of uniforms, close enough to N(0,1) for input fuzzing
    Array2::from_shape_simple_fn(shape, || (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0)
}

fn tiny_config(feature_dim: usize) -> ModelConfig {
    ModelConfig {
        embedding_dim: 8,
        ffn_hidden: 16,
        ..ModelConfig::desk(6, 4, feature_dim, FeatureKind::Mel)
    }
}

fn tokens(ids: &[usize], styles: &[usize]) -> TokenSequence {
    TokenSequence {
        scheme: Scheme::Ipa,
        phoneme_ids: ids.to_vec(),
        style_ids: styles.to_vec(),
    }
}

fn single_batch(tokens: TokenSequence, durations: Vec<usize>, target: Mat) -> Batch {
    let l = tokens.len();
    let t = target.ncols();
    Batch {
        ids: vec!["x".into()],
        tokens: vec![tokens],
        token_masks: vec![vec![true; l]],
        durations: vec![Durations::new(durations)],
        features: vec![target],
        frame_masks: vec![vec![true; t]],
        kind: FeatureKind::Mel,
    }
}

fn seq(m: usize, l: usize, seed: u64) -> EmbeddingSequence {
    EmbeddingSequence::unmasked(randn((m, l), &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[test]
fn fusion_values() {
    let zero = EmbeddingSequence::unmasked(Mat::zeros((2, 3)));
    assert!(fuse(&zero, &zero).unwrap().data.iter().all(|&v| v == 0.0));
    let a = EmbeddingSequence::unmasked(Mat::from_elem((2, 2), 0.7));
    let b = EmbeddingSequence::unmasked(Mat::from_elem((2, 2), -0.7));
    assert!(fuse(&a, &b).unwrap().data.iter().all(|&v| v == 0.0));
    let one = EmbeddingSequence::unmasked(Mat::from_elem((1, 1), 1.0));
    let z = EmbeddingSequence::unmasked(Mat::zeros((1, 1)));
    let v = fuse(&one, &z).unwrap().data[[0, 0]];
    let expected = 1f64.tanh() / (1.0 + (-1f64).exp());
    assert!((v - expected).abs() < 1e-12);
    assert!((v - 0.556770).abs() < 1e-6);
}

#[test]
fn gate_has_a_single_minimum_on_the_grid() {
    let gate = |h: f64| {
        let x = EmbeddingSequence::unmasked(Mat::from_elem((1, 1), h));
        let z = EmbeddingSequence::unmasked(Mat::zeros((1, 1)));
        fuse(&x, &z).unwrap().data[[0, 0]]
    };
    let grid: Vec<f64> = (0..=800).map(|i| -4.0 + i as f64 * 0.01).collect();
    let values: Vec<f64> = grid.iter().map(|&h| gate(h)).collect();
    let low = (0..values.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    // tanh(h)σ(h) dips below zero before rising; the minimum is near -0.881
    assert!((grid[low] + 0.881).abs() < 0.011, "minimum at {}", grid[low]);
    for (i, w) in values.windows(2).enumerate() {
        if i < low {
            assert!(w[1] < w[0], "not decreasing at {}", grid[i]);
        } else {
            assert!(w[1] > w[0], "not increasing at {}", grid[i]);
        }
    }
}

#[test]
fn duration_loss_examples() {
    let gt = Durations::new(vec![1, 2, 4]);
    let exact: Vec<f64> = [1.0f64, 2.0, 4.0].iter().map(|d| d.ln()).collect();
    let mask = [true; 3];
    assert_eq!(duration_loss(&gt, &exact, &mask).unwrap(), 0.0);
    let off: Vec<f64> = exact.iter().map(|v| v + 1.0).collect();
    assert!((duration_loss(&gt, &off, &mask).unwrap() - 1.0).abs() < 1e-12);
    let one = Durations::new(vec![2]);
    assert!((duration_loss(&one, &[0.0], &[true]).unwrap() - 2f64.ln()).abs() < 1e-9);
    // masked positions are ignored
    assert_eq!(duration_loss(&Durations::new(vec![1, 0]), &[0.0, 5.0], &[true, false]).unwrap(), 0.0);
}

#[test]
fn tts_loss_example_and_total() {
    let y = AcousticFeature::new(Mat::zeros((2, 2)), FeatureKind::Mel);
    let p = AcousticFeature::new(Mat::from_shape_vec((2, 2), vec![1.0, 0.0, 1.0, 0.0]).unwrap(), FeatureKind::Mel);
    assert_eq!(tts_loss(&y, &p).unwrap(), 0.5);
    assert_eq!(lanstyle::model::total_loss(0.25, 0.5), 0.75);
    let q = AcousticFeature::new(Mat::zeros((2, 2)), FeatureKind::Latent);
    assert!(tts_loss(&y, &q).is_err());
}

#[test]
fn inference_rounding() {
    let d = durations_from_log(&[2.5f64.ln(), 3.5f64.ln(), -3.0, 9.0], &[true, true, true, false]);
    assert_eq!(d.frames(), &[2, 4, 1, 0]);
}

#[test]
fn all_ones_regulation_round_trips() {
    let h = seq(4, 6, 3);
    let out = length_regulate(&h, &Durations::new(vec![1; 6])).unwrap();
    assert_eq!(out.data, h.data);
    assert_eq!(out.frame_to_token, (0..6).collect::<Vec<_>>());
}

#[test]
fn regulation_conserves_frames_for_many_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = seq(3, 12, 1);
    for _ in 0..1000 {
        let l = rng.gen_range(1..=12);
        let frames: Vec<usize> = (0..l).map(|_| rng.gen_range(0..6)).collect();
        let d = Durations::new(frames.clone());
        let h = EmbeddingSequence::unmasked(h.data.slice(ndarray::s![.., ..l]).to_owned());
        match length_regulate(&h, &d) {
            Ok(out) => {
                assert_eq!(out.len(), frames.iter().sum::<usize>());
                assert!(out.frame_to_token.windows(2).all(|w| w[0] <= w[1]));
                for (i, &f) in frames.iter().enumerate() {
                    assert_eq!(out.frame_to_token.iter().filter(|&&k| k == i).count(), f);
                }
                for (t, &k) in out.frame_to_token.iter().enumerate() {
                    assert_eq!(out.data.column(t), h.data.column(k));
                }
            }
            Err(_) => assert_eq!(frames.iter().sum::<usize>(), 0),
        }
    }
}

#[test]
fn duration_loss_slope_follows_the_error_sign() {
    let gt = Durations::new(vec![1, 3, 5, 2]);
    let pred = [0.4, 1.0, 1.8, -0.2];
    let mask = [true; 4];
    for i in 0..4 {
        let mut up = pred;
        let mut down = pred;
        up[i] += 1e-6;
        down[i] -= 1e-6;
        let slope = (duration_loss(&gt, &up, &mask).unwrap() - duration_loss(&gt, &down, &mask).unwrap()) / 2e-6;
        let diff = pred[i] - (gt.frames()[i] as f64).ln();
        assert_eq!(slope.signum(), diff.signum(), "token {i}");
    }
}

#[test]
fn forward_shapes_and_finite_outputs() {
    let model = AcousticModel::new(ModelConfig::desk(6, 4, 5, FeatureKind::Mel), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let l = rng.gen_range(1..8);
        let ids: Vec<usize> = (0..l).map(|_| rng.gen_range(1..6)).collect();
        let styles: Vec<usize> = (0..l).map(|_| rng.gen_range(1..4)).collect();
        let d: Vec<usize> = (0..l).map(|_| rng.gen_range(1..4)).collect();
        let t = tokens(&ids, &styles);
        let gt = Durations::new(d);
        let out = model.synthesize(&t, Some(&gt)).unwrap();
        assert_eq!(out.feature.data.dim(), (5, gt.total()));
        assert!(out.feature.data.iter().all(|v| v.is_finite()));
        let free = model.synthesize(&t, None).unwrap();
        assert_eq!(free.feature.frames(), free.durations.total());
        assert!(free.durations.frames().iter().all(|&f| f >= 1));
    }
}

#[test]
fn encoder_ignores_pad_content() {
    let model = AcousticModel::new(ModelConfig::desk(6, 4, 5, FeatureKind::Mel), 9).unwrap();
    let a = tokens(&[1, 2, 3, 0, 0], &[1, 2, 3, 0, 0]);
    let (hx, hs) = encode(&a, &model.params, &model.config, &model.encoder).unwrap();
    let (hx5, _) = encode(&tokens(&[1, 2, 3], &[1, 2, 3]), &model.params, &model.config, &model.encoder).unwrap();
    assert_eq!(hx.mask, vec![true, true, true, false, false]);
    assert_eq!(hs.data.ncols(), 5);
    for c in 0..3 {
        for r in 0..hx.dim() {
            assert!((hx.data[[r, c]] - hx5.data[[r, c]]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_range_and_symmetry(seed in any::<u64>(), m in 1usize..6, l in 1usize..6) {
        let a = seq(m, l, seed);
        let b = seq(m, l, seed.wrapping_add(1));
        let ab = fuse(&a, &b).unwrap();
        prop_assert_eq!(&ab, &fuse(&b, &a).unwrap());
        prop_assert!(ab.data.iter().all(|&v| v > -1.0 && v < 1.0));
        prop_assert_eq!(ab.data.dim(), (m, l));
    }

    #[test]
    fn fft_block_keeps_shape_and_isolates_masked_columns(seed in any::<u64>(), l in 2usize..8, pad in 1usize..3) {
        let model = AcousticModel::new(ModelConfig::desk(6, 4, 5, FeatureKind::Mel), seed).unwrap();
        let block = &model.encoder.phoneme_blocks[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = model.config.embedding_dim;
        let n = l + pad;
        let mask: Vec<bool> = (0..n).map(|i| i < l).collect();
        let x = randn((m, n), &mut rng);
        let mut y = x.clone();
        y.slice_mut(ndarray::s![.., l..]).assign(&randn((m, pad), &mut rng));
        let ox = fft_block(&EmbeddingSequence::new(x, mask.clone()).unwrap(), &model.params, block).unwrap();
        let oy = fft_block(&EmbeddingSequence::new(y, mask).unwrap(), &model.params, block).unwrap();
        prop_assert_eq!(ox.data.dim(), (m, n));
        prop_assert!(ox.data.iter().all(|v| v.is_finite()));
        prop_assert_eq!(ox.data.slice(ndarray::s![.., ..l]), oy.data.slice(ndarray::s![.., ..l]));
    }

    #[test]
    fn tts_loss_is_non_negative_and_zero_only_on_equality(seed in any::<u64>(), same in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = randn((3, 4), &mut rng);
        let p = if same { y.clone() } else { randn((3, 4), &mut rng) };
        let loss = tts_loss(&AcousticFeature::new(y.clone(), FeatureKind::Mel), &AcousticFeature::new(p.clone(), FeatureKind::Mel)).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, y == p);
    }
}

/// Largest relative error over parameter tensors, where a tensor's error is
/// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.
fn max_gradient_error(model: &mut AcousticModel, batch: &Batch) -> (f64, String) {
    let (_, grads) = batch_objective(model, batch, 1.0, 1.0, None).unwrap();
    let h = 1e-5;
    let ids: Vec<_> = model.params.ids().collect();
    let mut worst = (0.0, String::new());
    for id in ids {
        let shape = model.params.value(id).dim();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Mat::zeros(shape));
        let mut numeric = Mat::zeros(shape);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = model.params.value(id)[[r, c]];
                model.params.value_mut(id)[[r, c]] = orig + h;
                let up = batch_objective(model, batch, 1.0, 1.0, None).unwrap().0.total;
                model.params.value_mut(id)[[r, c]] = orig - h;
                let down = batch_objective(model, batch, 1.0, 1.0, None).unwrap().0.total;
                model.params.value_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (up - down) / (2.0 * h);
            }
        }
        let norm = |m: &Mat| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric));
        let err = if scale < 1e-9 { 0.0 } else { norm(&(&analytic - &numeric)) / scale };
        if err > worst.0 {
            worst = (err, model.params.name(id).to_string());
        }
    }
    worst
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = AcousticModel::new(tiny_config(5), 21).unwrap();
    let batch = single_batch(tokens(&[1, 3, 2, 5], &[1, 2, 3, 1]), vec![1, 2, 3, 1], randn((5, 7), &mut rng));
    let (err, name) = max_gradient_error(&mut model, &batch);
    assert!(err < 1e-4, "{name}: relative error {err:e}");
}

#[test]
fn single_pair_overfits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = AcousticModel::new(ModelConfig::desk(6, 4, 5, FeatureKind::Mel), 4).unwrap();
    let batch = single_batch(
        tokens(&[1, 3, 2, 5, 4], &[1, 2, 3, 1, 2]),
        vec![2, 1, 3, 2, 4],
        randn((5, 12), &mut rng),
    );
    let mut adam = Adam::new(AdamConfig::default(), &model.params);
    let (first, _) = batch_objective(&model, &batch, 1.0, 1.0, None).unwrap();
    for _ in 0..300 {
        let (_, grads) = batch_objective(&model, &batch, 1.0, 1.0, None).unwrap();
        adam.step(&mut model.params, &grads, 1e-3, 1.0);
    }
    let (last, _) = batch_objective(&model, &batch, 1.0, 1.0, None).unwrap();
    assert!(last.total <= 0.1 * first.total, "{} -> {}", first.total, last.total);
}
