use crate::error::{shape_err, Error, Result};
use crate::ops::{resize_tensor, ResizeMethod};
use crate::tensor::Tensor;

/// Binary lung and heart masks, each `N x 1 x h x w`, disjoint per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct AnatomyMasks {
    lung: Tensor,
    heart: Tensor,
}

impl AnatomyMasks {
    pub fn new(lung: Tensor, heart: Tensor) -> Result<Self> {
        let (_, c, _, _) = lung.dims4()?;
        if c != 1 || lung.shape() != heart.shape() {
            return shape_err(
                "anatomy_masks",
                format!("lung {:?}, heart {:?}", lung.shape(), heart.shape()),
            );
        }
        let binary = |t: &Tensor| t.data().iter().all(|&v| v == 0.0 || v == 1.0);
        if !binary(&lung) || !binary(&heart) {
            return Err(Error::InvalidArgument("anatomy masks must be binary".into()));
        }
        if lung.data().iter().zip(heart.data()).any(|(&l, &h)| l == 1.0 && h == 1.0) {
            return Err(Error::InvalidArgument(
                "lung and heart masks overlap".into(),
            ));
        }
        Ok(Self { lung, heart })
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        Self {
            lung: Tensor::zeros(&[n, 1, h, w]),
            heart: Tensor::zeros(&[n, 1, h, w]),
        }
    }

    pub fn lung(&self) -> &Tensor {
        &self.lung
    }

    pub fn heart(&self) -> &Tensor {
        &self.heart
    }

    pub fn batch(&self) -> usize {
        self.lung.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.lung.shape()[2], self.lung.shape()[3])
    }

    /// `lung OR heart`.
    pub fn union(&self) -> Tensor {
        self.lung
            .zip_map(&self.heart, |a, b| a.max(b))
            .expect("masks share a shape")
    }

    /// Masks with lung and heart exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            lung: self.heart.clone(),
            heart: self.lung.clone(),
        }
    }

    /// Nearest-neighbour resize, which keeps masks binary and disjoint.
    pub fn resize(&self, size: (usize, usize)) -> Result<Self> {
        Ok(Self {
            lung: resize_tensor(&self.lung, size, ResizeMethod::Nearest)?,
            heart: resize_tensor(&self.heart, size, ResizeMethod::Nearest)?,
        })
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            lung: self.lung.crop(top, left, h, w)?,
            heart: self.heart.crop(top, left, h, w)?,
        })
    }

    pub fn flip_horizontal(&self) -> Result<Self> {
        Ok(Self {
            lung: self.lung.flip_horizontal()?,
            heart: self.heart.flip_horizontal()?,
        })
    }

    pub fn select_batch(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            lung: self.lung.select_batch(idx)?,
            heart: self.heart.select_batch(idx)?,
        })
    }

    pub fn stack(parts: &[AnatomyMasks]) -> Result<Self> {
        let lungs: Vec<Tensor> = parts.iter().map(|m| m.lung.clone()).collect();
        let hearts: Vec<Tensor> = parts.iter().map(|m| m.heart.clone()).collect();
        Ok(Self {
            lung: Tensor::stack_batch(&lungs)?,
            heart: Tensor::stack_batch(&hearts)?,
        })
    }

    pub(crate) fn from_parts_unchecked(lung: Tensor, heart: Tensor) -> Self {
        Self { lung, heart }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.lung, &mut self.heart)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let l = Tensor::new(&[1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        let h = Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert!(AnatomyMasks::new(l.clone(), h.clone()).is_ok());
        assert!(AnatomyMasks::new(l.clone(), l.clone()).is_err());
        let half = Tensor::new(&[1, 1, 1, 2], vec![0.5, 0.0]).unwrap();
        assert!(AnatomyMasks::new(half, h.clone()).is_err());
        let wide = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(AnatomyMasks::new(wide.clone(), wide).is_err());
    }

    #[test]
    fn resize_keeps_masks_binary() {
        let l = Tensor::from_fn(&[1, 1, 8, 8], |i| ((i % 8) < 3) as u8 as f64);
        let h = Tensor::from_fn(&[1, 1, 8, 8], |i| ((i % 8) > 5) as u8 as f64);
        let m = AnatomyMasks::new(l, h).unwrap();
        let r = m.resize((5, 3)).unwrap();
        assert!(AnatomyMasks::new(r.lung().clone(), r.heart().clone()).is_ok());
    }
}
