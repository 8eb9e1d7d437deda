use anatomy_attn::ops::{resize_tensor, ResizeMethod};
use anatomy_attn::{Graph, Tensor};
use proptest::prelude::*;

fn tensor4(max_side: usize) -> impl Strategy<Value = Tensor> {
    (1..3usize, 1..4usize, 1..=max_side, 1..=max_side).prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(-3.0..3.0f64, n * c * h * w)
            .prop_map(move |v| Tensor::new(&[n, c, h, w], v).unwrap())
    })
}

fn same_shape_pair(max_side: usize) -> impl Strategy<Value = (Tensor, Tensor)> {
    tensor4(max_side).prop_flat_map(|a| {
        let shape = a.shape().to_vec();
        prop::collection::vec(-3.0..3.0f64, a.numel())
            .prop_map(move |v| (a.clone(), Tensor::new(&shape, v).unwrap()))
    })
}

proptest! {
    #[test]
    fn softmax_pair_sums_to_one(v in prop::collection::vec((-40.0..40.0f64, -40.0..40.0f64), 1..20)) {
        let mut g = Graph::new();
        let n = v.len();
        let a = g.constant(Tensor::new(&[n], v.iter().map(|p| p.0).collect()).unwrap());
        let b = g.constant(Tensor::new(&[n], v.iter().map(|p| p.1).collect()).unwrap());
        let (p, q) = g.softmax_pair(a, b).unwrap();
        for (x, y) in g.value(p).data().iter().zip(g.value(q).data()) {
            prop_assert!((x + y - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn resize_is_linear(
        (x, y) in same_shape_pair(5),
        alpha in -2.0..2.0f64,
        beta in -2.0..2.0f64,
        th in 1..9usize,
        tw in 1..9usize,
    ) {
        let combo = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
        for method in [ResizeMethod::Bilinear, ResizeMethod::Nearest] {
            let lhs = resize_tensor(&combo, (th, tw), method).unwrap();
            let rx = resize_tensor(&x, (th, tw), method).unwrap();
            let ry = resize_tensor(&y, (th, tw), method).unwrap();
            let rhs = rx.zip_map(&ry, |a, b| alpha * a + beta * b).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                match method {
                    ResizeMethod::Nearest => prop_assert_eq!(l, r),
                    ResizeMethod::Bilinear => prop_assert!((l - r).abs() <= 1e-12, "{} vs {}", l, r),
                }
            }
        }
    }

    #[test]
    fn conv1x1_commutes_with_spatial_permutation(
        x in tensor4(4),
        co in 1..4usize,
        seed in any::<u64>(),
    ) {
        let (n, c, h, w) = x.dims4().unwrap();
        let hw = h * w;
        let weights = Tensor::from_fn(&[co, c], |i| ((i as u64).wrapping_mul(seed | 1) % 17) as f64 / 8.0 - 1.0);
        let bias = Tensor::from_fn(&[co], |i| i as f64 * 0.25 - 0.3);
        let mut perm: Vec<usize> = (0..hw).collect();
        let mut s = seed;
        for i in (1..hw).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permute = |t: &Tensor, ch: usize| {
            Tensor::from_fn(&[n, ch, h, w], |i| {
                let (plane, pos) = (i / hw, i % hw);
                t.data()[plane * hw + perm[pos]]
            })
        };
        let conv = |input: &Tensor| {
            let mut g = Graph::new();
            let xv = g.constant(input.clone());
            let wv = g.constant(weights.clone());
            let bv = g.constant(bias.clone());
            let y = g.conv1x1(xv, wv, bv).unwrap();
            g.value(y).clone()
        };
        let a = conv(&permute(&x, c));
        let b = permute(&conv(&x), co);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn nearest_upsample_then_downsample_round_trips() {
    let x = Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64);
    let up = resize_tensor(&x, (9, 9), ResizeMethod::Nearest).unwrap();
    assert_eq!(resize_tensor(&up, (3, 3), ResizeMethod::Nearest).unwrap(), x);
}
