use anatomy_attn::attention::{couple_attention, weighted_pool, AaaBlock, Pwap};
use anatomy_attn::seg::{apply_cutout, CutoutWindow};
use anatomy_attn::{AnatomyMasks, Ctx, Graph, Mode, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn random_masks(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> AnatomyMasks {
    let draw: Vec<u8> = (0..n * h * w).map(|_| rng.random_range(0..3u8)).collect();
    let lung = Tensor::new(&[n, 1, h, w], draw.iter().map(|&d| (d == 1) as u8 as f64).collect()).unwrap();
    let heart = Tensor::new(&[n, 1, h, w], draw.iter().map(|&d| (d == 2) as u8 as f64).collect()).unwrap();
    AnatomyMasks::new(lung, heart).unwrap()
}

proptest! {
    #[test]
    fn coupling_identities(v in prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64, -30.0..30.0f64), 1..12)) {
        let n = v.len();
        let mut g = Graph::new();
        let col = |g: &mut Graph, f: fn(&(f64, f64, f64)) -> f64| {
            g.constant(Tensor::new(&[1, n], v.iter().map(f).collect()).unwrap())
        };
        let a1 = col(&mut g, |t| t.0);
        let a2 = col(&mut g, |t| t.1);
        let a3 = col(&mut g, |t| t.2);
        let c = couple_attention(&mut g, a1, a2, a3).unwrap();
        let le = g.value(c.lung_enhancer).data();
        let le_bar = g.value(c.lung_complement).data();
        let he = g.value(c.heart_enhancer).data();
        let he_bar = g.value(c.heart_complement).data();
        let bks = g.value(c.background_suppressor).data();
        for i in 0..n {
            prop_assert!((le[i] + le_bar[i] - 1.0).abs() <= 1e-12);
            prop_assert!((he[i] + he_bar[i] - 1.0).abs() <= 1e-12);
            prop_assert!((bks[i] - (le_bar[i] + he_bar[i]) / 2.0).abs() <= 1e-12);
        }
    }

    /// With `P = u` everywhere the pooled value is `mean * S / (S + eps)`,
    /// `S = u H W`; for maps of at least 5x5 that is within 1e-9 of the mean.
    #[test]
    fn uniform_map_is_mean_pooling(
        seed in any::<u64>(),
        h in 5..10usize,
        w in 5..10usize,
        u in 0.5..1.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_tensor(&mut rng, &[2, 3, h, w], -1.0, 1.0);
        let mut g = Graph::new();
        let fv = g.constant(f.clone());
        let p = g.constant(Tensor::full(&[2, 1, h, w], u));
        let v = weighted_pool(&mut g, fv, p, Pwap::EPS_DENOM).unwrap();
        let s = u * (h * w) as f64;
        for (k, plane) in f.data().chunks(h * w).enumerate() {
            let mean = plane.iter().sum::<f64>() / (h * w) as f64;
            let err = (g.value(v).data()[k] - mean).abs();
            prop_assert!(err <= mean.abs() * Pwap::EPS_DENOM / (s + Pwap::EPS_DENOM) + 1e-15);
            prop_assert!(err <= 1e-9);
        }
    }

    /// A learned map over spatially constant features is itself constant, so
    /// the pooled value is the constant up to the same epsilon factor.
    #[test]
    fn constant_features_pool_to_constant(
        seed in any::<u64>(),
        h in 10..14usize,
        w in 10..14usize,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let consts: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Tensor::from_fn(&[2, 3, h, w], |i| consts[i / (h * w)]);
        let mut store = ParamStore::new();
        let pwap = Pwap::new(&mut store, "pwap", 3);
        *store.get_mut(pwap.kernel) = random_tensor(&mut rng, &[1, 3], -0.5, 0.5);
        *store.get_mut(pwap.bias) = random_tensor(&mut rng, &[1], -0.5, 0.5);
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
        let fv = ctx.graph.constant(f);
        let (v, _) = pwap.forward(&mut ctx, fv).unwrap();
        for (k, c) in consts.iter().enumerate() {
            prop_assert!((g.value(v).data()[k] - c).abs() <= 1e-9);
        }
    }

    #[test]
    fn aaa_keeps_input_shape(n in 2..4usize, c in 1..5usize, h in 1..6usize, w in 1..6usize, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let block = AaaBlock::new(&mut store, "aaa", c, 0.5, &mut rng);
        let f = random_tensor(&mut rng, &[n, c, h, w], -1.0, 1.0);
        let masks = random_masks(&mut rng, n, h, w);
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut store, Mode::Train);
        let fv = ctx.graph.constant(f);
        let out = block.forward(&mut ctx, fv, &masks).unwrap();
        prop_assert_eq!(g.shape(out.out), &[n, c, h, w]);
    }
}

fn swap_prefix(store: &mut ParamStore, a: &str, b: &str) {
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with(a)).collect();
    for id in ids {
        let other = store.name(id).replacen(a, b, 1);
        let jd = store.find(&other).unwrap();
        let (x, y) = (store.get(id).clone(), store.get(jd).clone());
        *store.get_mut(id) = y;
        *store.get_mut(jd) = x;
    }
}

#[test]
fn joint_relabeling_leaves_output_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let block = AaaBlock::new(&mut store, "aaa", 4, 0.5, &mut rng);
    for id in store.trainable_ids() {
        let shape = store.get(id).shape().to_vec();
        let noise = random_tensor(&mut rng, &shape, -0.3, 0.3);
        let t = store.get_mut(id);
        *t = t.zip_map(&noise, |a, b| a + b).unwrap();
    }
    let f = random_tensor(&mut rng, &[3, 4, 5, 5], -1.0, 1.0);
    let masks = random_masks(&mut rng, 3, 5, 5);

    let run = |store: &ParamStore, masks: &AnatomyMasks| {
        let mut s = store.clone();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut s, Mode::Train);
        let fv = ctx.graph.constant(f.clone());
        let out = block.forward(&mut ctx, fv, masks).unwrap();
        g.value(out.out).clone()
    };
    let base = run(&store, &masks);
    let mut swapped = store.clone();
    swap_prefix(&mut swapped, "aaa.enc1.", "aaa.enc3.");
    swap_prefix(&mut swapped, "aaa.bn_le.", "aaa.bn_he.");
    let relabeled = run(&swapped, &masks.swapped());
    for (a, b) in base.data().iter().zip(relabeled.data()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    // Swapping only the masks is not a symmetry.
    assert_ne!(run(&store, &masks.swapped()), base);
}

#[test]
fn cut_lung_region_only_touches_lung_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let block = AaaBlock::new(&mut store, "aaa", 3, 0.5, &mut rng);
    let (n, h, w) = (2, 6, 6);
    let f = random_tensor(&mut rng, &[n, 3, h, w], -1.0, 1.0);
    let lung = Tensor::from_fn(&[n, 1, h, w], |i| ((i % w) < 3) as u8 as f64);
    let heart = Tensor::from_fn(&[n, 1, h, w], |i| ((i % w) >= 4) as u8 as f64);
    let masks = AnatomyMasks::new(lung, heart).unwrap();
    let win = CutoutWindow {
        top: 1,
        left: 0,
        bottom: 4,
        right: 3,
    };
    // Cut the lung mask only.
    let cut_both = apply_cutout(&masks, &[Some(win), Some(win)]).unwrap();
    let cut = AnatomyMasks::new(cut_both.lung().clone(), masks.heart().clone()).unwrap();

    let run = |masks: &AnatomyMasks| {
        let mut s = store.clone();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut s, Mode::Train);
        let fv = ctx.graph.constant(f.clone());
        let o = block.forward(&mut ctx, fv, masks).unwrap();
        [o.r_le, o.r_he, o.r_bks, o.out].map(|v| g.value(v).clone())
    };
    let [le0, he0, bks0, out0] = run(&masks);
    let [le1, he1, bks1, out1] = run(&cut);
    assert_eq!(he0, he1);
    assert_eq!(bks0, bks1);
    assert_ne!(out0, out1);
    for ni in 0..n {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    if win.contains(y, x) {
                        assert_eq!(le1.at4(ni, c, y, x), 0.0);
                    } else {
                        assert_eq!(le1.at4(ni, c, y, x), le0.at4(ni, c, y, x));
                    }
                }
            }
        }
    }
}

#[test]
fn empty_masks_silence_both_enhancers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let block = AaaBlock::new(&mut store, "aaa", 3, 0.5, &mut rng);
    let f = random_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Train);
    let fv = ctx.graph.constant(f);
    let o = block.forward(&mut ctx, fv, &AnatomyMasks::zeros(2, 4, 4)).unwrap();
    assert!(g.value(o.r_le).data().iter().all(|&v| v == 0.0));
    assert!(g.value(o.r_he).data().iter().all(|&v| v == 0.0));
    assert!(g.value(o.r_bks).data().iter().any(|&v| v != 0.0));
}
