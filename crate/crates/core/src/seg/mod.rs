//! Semi-supervised segmentation objective over toy image <-> mask networks,
//! plus mask binarization and the cutout corruption used for robustness runs.

mod losses;
mod nets;
mod postprocess;
mod train;

pub use losses::{
    adv_losses, cycle_losses, disc_losses, gen_losses, generator_pass, pixel_ce, total_loss,
    BatchVars, GeneratorPass, LossParts, LOG_CLAMP,
};
pub use nets::{ConvStack, CycleNets, CycleNetsConfig, SegModels};
pub use postprocess::{
    apply_cutout, binarize_masks, cutout, sample_cutout_windows, CutoutWindow, BACKGROUND, HEART,
    LUNG,
};
pub use train::{train_cyclegan_toy, write_loss_curve, LossRecord, SegTrainConfig};

use crate::error::{shape_err, Error, Result};
use crate::masks::AnatomyMasks;
use crate::tensor::Tensor;

/// Annotated images with one-hot `(background, lung, heart)` masks, plus
/// unannotated images.
#[derive(Clone, Debug)]
pub struct SegBatch {
    annotated_images: Tensor,
    annotated_masks: Tensor,
    unannotated: Tensor,
}

impl SegBatch {
    pub fn new(annotated_images: Tensor, annotated_masks: Tensor, unannotated: Tensor) -> Result<Self> {
        let (n, c, h, w) = annotated_images.dims4()?;
        let (nm, k, hm, wm) = annotated_masks.dims4()?;
        let (_, cu, hu, wu) = unannotated.dims4()?;
        if c != 1 || cu != 1 || nm != n || (hm, wm) != (h, w) || (hu, wu) != (h, w) || k != 3 {
            return shape_err(
                "seg_batch",
                format!(
                    "images {:?}, masks {:?}, unannotated {:?}",
                    annotated_images.shape(),
                    annotated_masks.shape(),
                    unannotated.shape()
                ),
            );
        }
        for px in 0..n * h * w {
            let (b, s) = (px / (h * w), px % (h * w));
            let vals: Vec<f64> = (0..k).map(|c| annotated_masks.data()[(b * k + c) * h * w + s]).collect();
            let ones = vals.iter().filter(|&&v| v == 1.0).count();
            if ones != 1 || vals.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "annotated mask is not one-hot at sample {b}, pixel {s}"
                )));
            }
        }
        Ok(Self {
            annotated_images,
            annotated_masks,
            unannotated,
        })
    }

    pub fn annotated_images(&self) -> &Tensor {
        &self.annotated_images
    }

    pub fn annotated_masks(&self) -> &Tensor {
        &self.annotated_masks
    }

    pub fn unannotated(&self) -> &Tensor {
        &self.unannotated
    }
}

/// `N x 3 x H x W` one-hot encoding of anatomy masks.
pub fn one_hot(masks: &AnatomyMasks) -> Tensor {
    let (h, w) = masks.spatial();
    let n = masks.batch();
    let (lung, heart) = (masks.lung().data(), masks.heart().data());
    let mut out = Tensor::zeros(&[n, 3, h, w]);
    let d = out.data_mut();
    for b in 0..n {
        for s in 0..h * w {
            let i = b * h * w + s;
            let class = if lung[i] == 1.0 {
                LUNG
            } else if heart[i] == 1.0 {
                HEART
            } else {
                BACKGROUND
            };
            d[(b * 3 + class) * h * w + s] = 1.0;
        }
    }
    out
}
