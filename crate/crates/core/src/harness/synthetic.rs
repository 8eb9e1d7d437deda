//! Synthetic chest-film stand-ins: two lung ellipses and a heart ellipse,
//! faint in the image by default but exact in the masks, with identical-looking
//! lesion blobs whose label depends only on which region holds them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::masks::AnatomyMasks;
use crate::model::LabeledSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Lung,
    Heart,
    /// Inside the image but outside both organs.
    Outside,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LesionClass {
    pub name: String,
    pub region: Region,
    /// Probability that a sample carries this lesion.
    pub prevalence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub classes: Vec<LesionClass>,
    /// Probability of each of two label-free blobs outside the anatomy.
    pub distractor_rate: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Lungs darken and the heart brightens the image by this much.
    pub anatomy_contrast: f64,
    pub lesion_amplitude: f64,
    /// Lesion disk radius as a fraction of the image size.
    pub lesion_radius: f64,
    /// Organ position jitter as a fraction of the image size.
    pub position_jitter: f64,
    /// Largest erosion/dilation, in pixels, applied to make noisy masks.
    pub mask_jitter: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 48,
            n_train: 800,
            n_val: 96,
            n_test: 320,
            classes: vec![
                LesionClass {
                    name: "lung_lesion".into(),
                    region: Region::Lung,
                    prevalence: 0.4,
                },
                LesionClass {
                    name: "heart_lesion".into(),
                    region: Region::Heart,
                    prevalence: 0.4,
                },
            ],
            distractor_rate: 0.2,
            noise: 0.15,
            anatomy_contrast: 0.05,
            lesion_amplitude: 1.0,
            lesion_radius: 0.06,
            position_jitter: 0.14,
            mask_jitter: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.image_size < 8 {
            return bad(format!("image_size {} below 8", self.image_size));
        }
        if self.classes.is_empty() {
            return bad("at least one lesion class is required".into());
        }
        for c in &self.classes {
            if !(0.0..=1.0).contains(&c.prevalence) {
                return bad(format!("{}: prevalence {}", c.name, c.prevalence));
            }
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad(format!("distractor_rate {}", self.distractor_rate));
        }
        if self.noise < 0.0 || self.lesion_radius <= 0.0 || self.position_jitter < 0.0 {
            return bad("noise, lesion_radius and position_jitter must be non-negative".into());
        }
        Ok(())
    }

    /// Set one field from text. Lesion classes are fixed.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let int = || -> Result<usize> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: expected an integer, got {v:?}")))
        };
        let real = || -> Result<f64> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: expected a number, got {v:?}")))
        };
        match key {
            "image_size" => self.image_size = int()?,
            "n_train" => self.n_train = int()?,
            "n_val" => self.n_val = int()?,
            "n_test" => self.n_test = int()?,
            "distractor_rate" => self.distractor_rate = real()?,
            "noise" => self.noise = real()?,
            "anatomy_contrast" => self.anatomy_contrast = real()?,
            "lesion_amplitude" => self.lesion_amplitude = real()?,
            "lesion_radius" => self.lesion_radius = real()?,
            "position_jitter" => self.position_jitter = real()?,
            "mask_jitter" => self.mask_jitter = int()?,
            "seed" => self.seed = v.parse().map_err(|_| Error::InvalidArgument(format!("seed: {v:?}")))?,
            _ => return Err(Error::InvalidArgument(format!("unknown data key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("image_size", self.image_size.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_val", self.n_val.to_string()),
            ("n_test", self.n_test.to_string()),
            ("distractor_rate", format!("{:?}", self.distractor_rate)),
            ("noise", format!("{:?}", self.noise)),
            ("anatomy_contrast", format!("{:?}", self.anatomy_contrast)),
            ("lesion_amplitude", format!("{:?}", self.lesion_amplitude)),
            ("lesion_radius", format!("{:?}", self.lesion_radius)),
            ("position_jitter", format!("{:?}", self.position_jitter)),
            ("mask_jitter", self.mask_jitter.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// One split of generated samples.
#[derive(Clone, Debug)]
pub struct SyntheticSplit {
    pub images: Tensor,
    pub true_masks: AnatomyMasks,
    pub noisy_masks: AnatomyMasks,
    pub labels: Tensor,
    /// Binary lesion disks per class, `N x K x H x W`.
    pub lesions: Tensor,
}

impl SyntheticSplit {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Images, noisy masks and labels, as a classifier sees them.
    pub fn labeled(&self) -> LabeledSet {
        LabeledSet {
            images: self.images.clone(),
            masks: self.noisy_masks.clone(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub train: SyntheticSplit,
    pub val: SyntheticSplit,
    pub test: SyntheticSplit,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = gen_split(spec, spec.n_train, &mut rng)?;
    let val = gen_split(spec, spec.n_val, &mut rng)?;
    let test = gen_split(spec, spec.n_test, &mut rng)?;
    Ok(SyntheticData {
        spec: spec.clone(),
        train,
        val,
        test,
    })
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// Pixel grid of one sample, row-major.
type Grid = Vec<bool>;

struct Sample {
    image: Vec<f64>,
    lung: Grid,
    heart: Grid,
    noisy_lung: Grid,
    noisy_heart: Grid,
    labels: Vec<f64>,
    lesions: Vec<Grid>,
}

fn gen_split(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticSplit> {
    let s = spec.image_size;
    let k = spec.classes.len();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(gen_sample(spec, rng)?);
    }
    let flat = |f: &dyn Fn(&Sample) -> Vec<f64>| -> Vec<f64> { samples.iter().flat_map(f).collect() };
    let to_f = |g: &Grid| g.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>();
    let shape = [n, 1, s, s];
    let images = Tensor::new(&shape, flat(&|x| x.image.clone()))?;
    let true_masks = AnatomyMasks::new(
        Tensor::new(&shape, flat(&|x| to_f(&x.lung)))?,
        Tensor::new(&shape, flat(&|x| to_f(&x.heart)))?,
    )?;
    let noisy_masks = AnatomyMasks::new(
        Tensor::new(&shape, flat(&|x| to_f(&x.noisy_lung)))?,
        Tensor::new(&shape, flat(&|x| to_f(&x.noisy_heart)))?,
    )?;
    let labels = Tensor::new(&[n, k], flat(&|x| x.labels.clone()))?;
    let lesions = Tensor::new(
        &[n, k, s, s],
        flat(&|x| x.lesions.iter().flat_map(to_f).collect()),
    )?;
    Ok(SyntheticSplit {
        images,
        true_masks,
        noisy_masks,
        labels,
        lesions,
    })
}

fn gen_sample(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let s = spec.image_size;
    let sf = s as f64;
    let j = spec.position_jitter;
    let mut jit = |amp: f64| if amp > 0.0 { rng.random_range(-amp..amp) } else { 0.0 };
    let (gy, gx) = (jit(j), jit(j));
    let scale = 1.0 + jit(0.12);
    let organ = |cy: f64, cx: f64, ry: f64, rx: f64, jy: f64, jx: f64| Ellipse {
        cy: (cy + gy + jy) * sf,
        cx: (cx + gx + jx) * sf,
        ry: ry * scale * sf,
        rx: rx * scale * sf,
    };
    let left = organ(0.44, 0.29, 0.25, 0.13, jit(j / 2.0), jit(j / 2.0));
    let right = organ(0.44, 0.71, 0.25, 0.13, jit(j / 2.0), jit(j / 2.0));
    let heart_e = organ(0.63, 0.54, 0.13, 0.15, jit(j / 2.0), jit(j / 2.0));

    let mut lung = vec![false; s * s];
    let mut heart = vec![false; s * s];
    for y in 0..s {
        for x in 0..s {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let i = y * s + x;
            if heart_e.contains(py, px) {
                heart[i] = true;
            } else if left.contains(py, px) || right.contains(py, px) {
                lung[i] = true;
            }
        }
    }
    let outside: Grid = lung.iter().zip(&heart).map(|(&l, &h)| !l && !h).collect();

    let noise = Normal::new(0.0, spec.noise.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("noise: {e}")))?;
    let mut image: Vec<f64> = (0..s * s)
        .map(|i| {
            let base = if lung[i] {
                -spec.anatomy_contrast
            } else if heart[i] {
                spec.anatomy_contrast
            } else {
                0.0
            };
            base + noise.sample(rng)
        })
        .collect();

    let radius = spec.lesion_radius * sf;
    let sigma = (radius * 0.6).max(0.5);
    let stamp = |image: &mut [f64], region: &Grid, rng: &mut ChaCha8Rng| -> Result<Grid> {
        let (cy, cx) = sample_center(region, s, radius, rng)?;
        let mut disk = vec![false; s * s];
        for y in 0..s {
            for x in 0..s {
                let d2 = sq(y as f64 + 0.5 - cy) + sq(x as f64 + 0.5 - cx);
                if d2 <= radius * radius {
                    disk[y * s + x] = true;
                    image[y * s + x] += spec.lesion_amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        Ok(disk)
    };

    let mut labels = Vec::with_capacity(spec.classes.len());
    let mut lesions = Vec::with_capacity(spec.classes.len());
    for class in &spec.classes {
        if rng.random_bool(class.prevalence) {
            let region = match class.region {
                Region::Lung => &lung,
                Region::Heart => &heart,
                Region::Outside => &outside,
            };
            lesions.push(stamp(&mut image, region, rng)?);
            labels.push(1.0);
        } else {
            lesions.push(vec![false; s * s]);
            labels.push(0.0);
        }
    }
    for _ in 0..2 {
        if rng.random_bool(spec.distractor_rate) {
            stamp(&mut image, &outside, rng)?;
        }
    }

    let (noisy_lung, noisy_heart) = jitter_masks(&lung, &heart, s, spec.mask_jitter, rng);
    Ok(Sample {
        image,
        lung,
        heart,
        noisy_lung,
        noisy_heart,
        labels,
        lesions,
    })
}

fn sq(v: f64) -> f64 {
    v * v
}

/// Uniform pixel center whose whole lesion disk lies in `region`.
fn sample_center(region: &Grid, s: usize, radius: f64, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let r = radius.ceil() as isize;
    let fits = |y: usize, x: usize| {
        let (cy, cx) = (y as f64 + 0.5, x as f64 + 0.5);
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                let d2 = sq(yy as f64 + 0.5 - cy) + sq(xx as f64 + 0.5 - cx);
                if d2 > radius * radius {
                    continue;
                }
                if yy < 0 || xx < 0 || yy >= s as isize || xx >= s as isize {
                    return false;
                }
                if !region[yy as usize * s + xx as usize] {
                    return false;
                }
            }
        }
        true
    };
    let candidates: Vec<(usize, usize)> = (0..s * s)
        .map(|i| (i / s, i % s))
        .filter(|&(y, x)| region[y * s + x] && fits(y, x))
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no room for a lesion of radius {radius:.2} px"
        )));
    }
    let (y, x) = candidates[rng.random_range(0..candidates.len())];
    Ok((y as f64 + 0.5, x as f64 + 0.5))
}

/// Grow (`k > 0`) or shrink (`k < 0`) by `|k|` steps of a 3x3 neighbourhood.
fn morph(g: &Grid, s: usize, k: i64) -> Grid {
    let mut cur = g.clone();
    for _ in 0..k.unsigned_abs() {
        let grow = k > 0;
        let prev = cur.clone();
        for y in 0..s {
            for x in 0..s {
                let mut any = false;
                let mut all = true;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        let v = yy >= 0
                            && xx >= 0
                            && yy < s as isize
                            && xx < s as isize
                            && prev[yy as usize * s + xx as usize];
                        any |= v;
                        all &= v;
                    }
                }
                cur[y * s + x] = if grow { any } else { all };
            }
        }
    }
    cur
}

fn jitter_masks(lung: &Grid, heart: &Grid, s: usize, amp: usize, rng: &mut ChaCha8Rng) -> (Grid, Grid) {
    if amp == 0 {
        return (lung.clone(), heart.clone());
    }
    let a = amp as i64;
    let l = morph(lung, s, rng.random_range(-a..=a));
    let h = morph(heart, s, rng.random_range(-a..=a));
    let l = l.iter().zip(&h).map(|(&l, &h)| l && !h).collect();
    (l, h)
}
