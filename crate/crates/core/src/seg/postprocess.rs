//! Turning segmentation outputs into binary anatomy masks, and corrupting
//! those masks with cutout windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::masks::AnatomyMasks;
use crate::ops::softmax_channels_tensor;
use crate::tensor::Tensor;

pub const BACKGROUND: usize = 0;
pub const LUNG: usize = 1;
pub const HEART: usize = 2;

/// Per-pixel argmax of the class softmax of `N x 3 x H x W` logits ordered
/// (background, lung, heart). Ties resolve to the earlier class, so
/// background beats lung beats heart.
pub fn binarize_masks(logits: &Tensor) -> Result<AnatomyMasks> {
    let (n, k, h, w) = logits.dims4()?;
    if k != 3 {
        return shape_err("binarize_masks", format!("expected 3 classes, got {k}"));
    }
    let probs = softmax_channels_tensor(logits)?;
    let hw = h * w;
    let p = probs.data();
    let mut lung = vec![0.0; n * hw];
    let mut heart = vec![0.0; n * hw];
    for ni in 0..n {
        for i in 0..hw {
            let mut best = BACKGROUND;
            for c in [LUNG, HEART] {
                if p[(ni * 3 + c) * hw + i] > p[(ni * 3 + best) * hw + i] {
                    best = c;
                }
            }
            match best {
                LUNG => lung[ni * hw + i] = 1.0,
                HEART => heart[ni * hw + i] = 1.0,
                _ => {}
            }
        }
    }
    Ok(AnatomyMasks::from_parts_unchecked(
        Tensor::new(&[n, 1, h, w], lung)?,
        Tensor::new(&[n, 1, h, w], heart)?,
    ))
}

/// Half-open pixel rectangle `[top, bottom) x [left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CutoutWindow {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl CutoutWindow {
    /// A `size x size` window centred on `(cy, cx)`, clipped to `h x w`.
    /// Even sizes extend one pixel further up and left of the centre.
    pub fn centered(cy: usize, cx: usize, size: usize, h: usize, w: usize) -> Self {
        let clip = |c: usize, len: usize| {
            let start = c as isize - (size / 2) as isize;
            let end = start + size as isize;
            (start.max(0) as usize, (end.max(0) as usize).min(len))
        };
        let (top, bottom) = clip(cy, h);
        let (left, right) = clip(cx, w);
        Self {
            top,
            left,
            bottom,
            right,
        }
    }

    pub fn area(&self) -> usize {
        (self.bottom - self.top) * (self.right - self.left)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }
}

/// One window per sample, centred on a pixel drawn uniformly from that
/// sample's `lung OR heart` region. Samples with an empty region, or a zero
/// window size, get `None`.
pub fn sample_cutout_windows(masks: &AnatomyMasks, size: usize, seed: u64) -> Vec<Option<CutoutWindow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = masks.spatial();
    let union = masks.union();
    union
        .data()
        .chunks(h * w)
        .map(|plane| {
            let region: Vec<usize> = plane
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(i, _)| i)
                .collect();
            if size == 0 || region.is_empty() {
                return None;
            }
            let centre = region[rng.random_range(0..region.len())];
            Some(CutoutWindow::centered(centre / w, centre % w, size, h, w))
        })
        .collect()
}

/// Zero both masks inside each sample's window.
pub fn apply_cutout(masks: &AnatomyMasks, windows: &[Option<CutoutWindow>]) -> Result<AnatomyMasks> {
    if windows.len() != masks.batch() {
        return shape_err(
            "cutout",
            format!("{} windows for {} samples", windows.len(), masks.batch()),
        );
    }
    let (h, w) = masks.spatial();
    let mut out = masks.clone();
    let (lung, heart) = out.parts_mut();
    for (ni, win) in windows.iter().enumerate() {
        let Some(win) = win else { continue };
        for y in win.top..win.bottom {
            let row = ni * h * w + y * w;
            lung.data_mut()[row + win.left..row + win.right].fill(0.0);
            heart.data_mut()[row + win.left..row + win.right].fill(0.0);
        }
    }
    Ok(out)
}

/// Sample windows with `seed` and apply them.
pub fn cutout(masks: &AnatomyMasks, size: usize, seed: u64) -> Result<AnatomyMasks> {
    let windows = sample_cutout_windows(masks, size, seed);
    apply_cutout(masks, &windows)
}
