use crate::autograd::Graph;
use crate::error::{shape_err, Error, Result};
use crate::masks::AnatomyMasks;
use crate::nn::{Ctx, Mode};
use crate::ops::{resize_tensor, ResizeMethod};
use crate::tensor::Tensor;

use super::Model;

/// Mean of the predictions on four corner crops, the center crop, and the
/// horizontal mirror of each. Masks must share the image resolution and are
/// cropped and mirrored with the images.
pub fn ten_crop_predict(model: &Model, images: &Tensor, masks: &AnatomyMasks, crop: usize) -> Result<Tensor> {
    let (n, _, h, w) = images.dims4()?;
    if masks.spatial() != (h, w) || masks.batch() != n {
        return shape_err(
            "ten_crop",
            format!("images {:?}, masks {:?}", images.shape(), masks.lung().shape()),
        );
    }
    if crop == 0 || crop > h || crop > w {
        return Err(Error::InvalidArgument(format!(
            "crop {crop} does not fit {h}x{w} images"
        )));
    }
    let offsets = [
        (0, 0),
        (0, w - crop),
        (h - crop, 0),
        (h - crop, w - crop),
        ((h - crop) / 2, (w - crop) / 2),
    ];
    let mut sum: Option<Tensor> = None;
    for (top, left) in offsets {
        let img = images.crop(top, left, crop, crop)?;
        let m = masks.crop(top, left, crop, crop)?;
        for flip in [false, true] {
            let (img, m) = if flip {
                (img.flip_horizontal()?, m.flip_horizontal()?)
            } else {
                (img.clone(), m.clone())
            };
            let p = model.predict(&img, &m)?;
            sum = Some(match sum {
                None => p,
                Some(s) => s.zip_map(&p, |a, b| a + b)?,
            });
        }
    }
    Ok(sum.expect("ten crops").map(|v| v / 10.0))
}

/// Which pooled map Grad-CAM explains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamStage {
    /// The map of the deepest pooled stage.
    Last,
    /// Index into the pooled stages, earliest first.
    Index(usize),
}

/// Grad-CAM for one image `1 x 1 x H x W`: channel weights are the spatial
/// means of the class-score gradient at the chosen map, the map is
/// `ReLU(sum_c w_c F_c)` upsampled bilinearly to `H x W` and scaled to
/// `[0, 1]`. A constant map becomes all zeros. Runs in eval mode.
pub fn gradcam(
    model: &Model,
    image: &Tensor,
    masks: &AnatomyMasks,
    class_index: usize,
    stage: CamStage,
) -> Result<Tensor> {
    let (n, _, h, w) = image.dims4()?;
    if n != 1 {
        return shape_err("gradcam", format!("expected one image, got {n}"));
    }
    if class_index >= model.config().n_classes {
        return Err(Error::InvalidArgument(format!(
            "class {class_index} out of range for {} classes",
            model.config().n_classes
        )));
    }
    let mut store = model.store.clone();
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
    let out = model.forward(&mut ctx, x, masks)?;
    let idx = match stage {
        CamStage::Last => out.attended.len() - 1,
        CamStage::Index(i) if i < out.attended.len() => i,
        CamStage::Index(i) => {
            return Err(Error::InvalidArgument(format!(
                "stage {i} out of range for {} pooled stages",
                out.attended.len()
            )))
        }
    };
    let feat = out.attended[idx];
    let score = g.pick(out.logits, class_index)?;
    let grads = g.backward(score)?;
    let f = g.value(feat);
    let (_, c, fh, fw) = f.dims4()?;
    let grad = grads.get_or_zeros(feat, f.shape());
    let hw = fh * fw;
    let weights: Vec<f64> = grad
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    let mut cam = vec![0.0; hw];
    for ch in 0..c {
        let plane = &f.data()[ch * hw..(ch + 1) * hw];
        for (o, v) in cam.iter_mut().zip(plane) {
            *o += weights[ch] * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let cam = Tensor::new(&[1, 1, fh, fw], cam)?;
    let up = resize_tensor(&cam, (h, w), ResizeMethod::Bilinear)?;
    Ok(min_max_normalize(&up))
}

fn min_max_normalize(t: &Tensor) -> Tensor {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        t.map(|v| (v - lo) / span)
    } else {
        t.map(|_| 0.0)
    }
}

/// Elementwise maximum of equally shaped heatmaps.
pub fn overlay(maps: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = maps
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("overlay needs at least one map".into()))?;
    rest.iter()
        .try_fold(first.clone(), |acc, m| acc.zip_map(m, f64::max))
}
