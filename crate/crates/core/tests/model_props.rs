use anatomy_attn::model::{
    gradcam, ten_crop_predict, train, AttentionLevel, CamStage, Fusion, LabeledSet, Model,
    ModelConfig, Pooling, TrainConfig,
};
use anatomy_attn::ops::{resize_tensor, ResizeMethod};
use anatomy_attn::{AnatomyMasks, Ctx, Graph, Mode, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(level: AttentionLevel) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        mask_size: 8,
        attention_level: level,
        backbone_widths: vec![4, 6, 8],
        ..Default::default()
    }
}

fn random_images(rng: &mut ChaCha8Rng, n: usize, side: usize) -> Tensor {
    Tensor::from_fn(&[n, 1, side, side], |_| rng.random_range(-1.0..1.0))
}

fn band_masks(n: usize, side: usize) -> AnatomyMasks {
    let lung = Tensor::from_fn(&[n, 1, side, side], |i| ((i % side) < side / 3) as u8 as f64);
    let heart = Tensor::from_fn(&[n, 1, side, side], |i| {
        let (y, x) = ((i / side) % side, i % side);
        (x > side / 2 && y > side / 2) as u8 as f64
    });
    AnatomyMasks::new(lung, heart).unwrap()
}

fn same_params(a: &ParamStore, b: &ParamStore) -> bool {
    a.ids().all(|id| a.get(id) == b.get(id))
}

fn crop_flip(t: &Tensor, top: usize, left: usize, size: usize, flip: bool) -> Tensor {
    let (n, c, _, _) = t.dims4().unwrap();
    let mut out = Tensor::zeros(&[n, c, size, size]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..size {
                for x in 0..size {
                    let sx = if flip { size - 1 - x } else { x };
                    out.set4(b, ch, y, x, t.at4(b, ch, top + y, left + sx));
                }
            }
        }
    }
    out
}

#[test]
fn eval_prediction_is_deterministic_and_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::new(small_config(AttentionLevel::L2), 3).unwrap();
    let images = random_images(&mut rng, 4, 16);
    let masks = band_masks(4, 16);
    let before = model.store.clone();
    let a = model.predict(&images, &masks).unwrap();
    let b = model.predict(&images, &masks).unwrap();
    assert_eq!(a, b);
    assert!(same_params(&model.store, &before));
    // Eval-mode normalization uses stored statistics, so samples are independent.
    for i in 0..4 {
        let one = model
            .predict(&images.select_batch(&[i]).unwrap(), &masks.select_batch(&[i]).unwrap())
            .unwrap();
        for k in 0..2 {
            assert!((one.data()[k] - a.data()[i * 2 + k]).abs() <= 1e-12);
        }
    }
}

#[test]
fn ten_crop_is_the_mean_of_its_views() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(small_config(AttentionLevel::L1), 5).unwrap();
    let (side, crop) = (16, 12);
    let images = random_images(&mut rng, 2, side);
    let masks = band_masks(2, side);
    let got = ten_crop_predict(&model, &images, &masks, crop).unwrap();

    let m = side - crop;
    let offsets = [(0, 0), (0, m), (m, 0), (m, m), (m / 2, m / 2)];
    let mut sum = vec![0.0; 4];
    for (top, left) in offsets {
        for flip in [false, true] {
            let img = crop_flip(&images, top, left, crop, flip);
            let lung = crop_flip(masks.lung(), top, left, crop, flip);
            let heart = crop_flip(masks.heart(), top, left, crop, flip);
            let p = model.predict(&img, &AnatomyMasks::new(lung, heart).unwrap()).unwrap();
            for (s, v) in sum.iter_mut().zip(p.data()) {
                *s += v;
            }
        }
    }
    for (g, s) in got.data().iter().zip(&sum) {
        assert!((g - s / 10.0).abs() <= 1e-12, "{g} vs {}", s / 10.0);
    }
}

#[test]
fn ten_crop_of_a_constant_image_is_a_single_prediction() {
    let model = Model::new(small_config(AttentionLevel::L2), 6).unwrap();
    let images = Tensor::full(&[1, 1, 16, 16], 0.3);
    let masks = AnatomyMasks::new(Tensor::full(&[1, 1, 16, 16], 1.0), Tensor::zeros(&[1, 1, 16, 16])).unwrap();
    let got = ten_crop_predict(&model, &images, &masks, 12).unwrap();
    let single = model
        .predict(&Tensor::full(&[1, 1, 12, 12], 0.3), &masks.crop(0, 0, 12, 12).unwrap())
        .unwrap();
    for (a, b) in got.data().iter().zip(single.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(ten_crop_predict(&model, &images, &masks, 17).is_err());
}

/// With average pooling and a classifier row selecting channel `k`, the
/// class score is `mean(F_k)`, so every Grad-CAM weight but the k-th is
/// zero and the map is `ReLU(F_k)` up to scale.
#[test]
fn gradcam_of_a_single_channel_classifier() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ModelConfig {
        attention_level: AttentionLevel::L0,
        pooling: Pooling::Average,
        ..small_config(AttentionLevel::L0)
    };
    let mut model = Model::new(cfg, 7).unwrap();
    let (wid, bid) = model.classifier_params();
    let (class, k, width) = (1, 5, 8);
    let mut weight = Tensor::zeros(&[2, width]);
    weight.data_mut()[class * width + k] = 1.0;
    *model.store.get_mut(wid) = weight;
    *model.store.get_mut(bid) = Tensor::zeros(&[2]);

    let image = random_images(&mut rng, 1, 16);
    let masks = band_masks(1, 16);
    let cam = gradcam(&model, &image, &masks, class, CamStage::Last).unwrap();

    let mut store = model.store.clone();
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
    let out = model.forward(&mut ctx, x, &masks).unwrap();
    let f = g.value(*out.attended.last().unwrap()).clone();
    let (_, _, fh, fw) = f.dims4().unwrap();
    let fk = Tensor::from_fn(&[1, 1, fh, fw], |i| f.data()[k * fh * fw + i].max(0.0));
    let up = resize_tensor(&fk, (16, 16), ResizeMethod::Bilinear).unwrap();
    let lo = up.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = up.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi > lo);
    for (c, u) in cam.data().iter().zip(up.data()) {
        assert!((c - (u - lo) / (hi - lo)).abs() <= 1e-12);
    }
    assert!(gradcam(&model, &image, &masks, 2, CamStage::Last).is_err());
    assert!(gradcam(&model, &image, &masks, 0, CamStage::Index(1)).is_err());
}

#[test]
fn single_sample_is_memorized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = Model::new(small_config(AttentionLevel::L0), 8).unwrap();
    let data = LabeledSet::new(
        random_images(&mut rng, 1, 16),
        band_masks(1, 16),
        Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap(),
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        lr: 1e-2,
        batch_size: 4,
        seed: 0,
    };
    let history = train(&mut model, &data, None, &cfg).unwrap();
    let last = history.last().unwrap().loss;
    assert!(last < 0.01, "final loss {last}");
}

fn small_set(seed: u64, n: usize) -> LabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = random_images(&mut rng, n, 16);
    let labels = Tensor::from_fn(&[n, 2], |_| rng.random_range(0..2) as f64);
    LabeledSet::new(images, band_masks(n, 16), labels).unwrap()
}

#[test]
fn zero_learning_rate_gives_a_flat_history() {
    let data = small_set(5, 10);
    let mut model = Model::new(small_config(AttentionLevel::L1), 9).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.0,
        batch_size: 4,
        seed: 1,
    };
    let h = train(&mut model, &data, None, &cfg).unwrap();
    assert_eq!(h.len(), 3);
    assert!(h.iter().all(|r| r.loss == h[0].loss));
}

#[test]
fn training_is_reproducible() {
    let data = small_set(6, 10);
    let val = small_set(7, 8);
    let cfg = TrainConfig {
        epochs: 2,
        lr: 3e-3,
        batch_size: 4,
        seed: 2,
    };
    let run = || {
        let mut model = Model::new(small_config(AttentionLevel::L2), 10).unwrap();
        let h = train(&mut model, &data, Some(&val), &cfg).unwrap();
        (h, model.store)
    };
    let (h1, s1) = run();
    let (h2, s2) = run();
    assert_eq!(h1, h2);
    assert!(same_params(&s1, &s2));
}

/// Every pooling maps an all-zero map to zero, except GeM which pools its
/// clamp floor.
#[test]
fn hardmask_with_empty_masks_sees_only_zero_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bias = [0.4, -1.3];
    for pooling in Pooling::ALL {
        let cfg = ModelConfig {
            fusion: Fusion::Hardmask,
            pooling,
            ..small_config(AttentionLevel::L2)
        };
        let mut model = Model::new(cfg, 12).unwrap();
        let (wid, bid) = model.classifier_params();
        *model.store.get_mut(bid) = Tensor::new(&[2], bias.to_vec()).unwrap();
        let weight = model.store.get(wid).clone();
        let pooled = if pooling == Pooling::Gem { 1e-6 } else { 0.0 };
        let images = random_images(&mut rng, 3, 16);
        let p = model.predict(&images, &AnatomyMasks::zeros(3, 16, 16)).unwrap();
        for i in 0..3 {
            for (k, b) in bias.iter().enumerate() {
                let row = &weight.data()[k * 14..(k + 1) * 14];
                let logit = b + pooled * row.iter().sum::<f64>();
                let expected = 1.0 / (1.0 + (-logit).exp());
                assert!((p.data()[i * 2 + k] - expected).abs() <= 1e-12, "{pooling}");
            }
        }
    }
}
