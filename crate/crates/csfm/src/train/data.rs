//! Training data: paired low/high-resolution patch sampling.
//!
//! A dataset is built from a directory of high-resolution PNGs. Each image
//! is cropped to a multiple of the scale factor and paired with a bicubic
//! downscale of itself, quantized to the 0..255 integer grid so the pair
//! matches what an on-disk low-resolution PNG would contain. Batches are
//! drawn as aligned patch pairs with optional flip/rotation augmentation.

use std::path::Path;
use std::sync::Once;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, png_files, ImagePlane};
use crate::tensor::{Scalar, Shape, Tensor};

/// One training image: the prepared high-resolution plane and its bicubic
/// low-resolution counterpart, both in the unit float domain.
pub struct DatasetImage {
    name: String,
    hr: ImagePlane,
    lr: ImagePlane,
}

impl DatasetImage {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hr(&self) -> &ImagePlane {
        &self.hr
    }

    pub fn lr(&self) -> &ImagePlane {
        &self.lr
    }
}

/// Where and how one batch member is cut out of the dataset.
///
/// Coordinates are in low-resolution pixels; the high-resolution member uses
/// the same plan scaled by the dataset's factor, so the pair stays aligned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchPlan {
    pub image: usize,
    pub x: usize,
    pub y: usize,
    pub flip: bool,
    pub quarter_turns: usize,
}

/// A super-resolution training set with a fixed scale factor.
pub struct SrDataset {
    images: Vec<DatasetImage>,
    scale: usize,
    rgb_mean: [f64; 3],
    skip_warning: Once,
}

impl SrDataset {
    /// Loads every PNG in `dir` (sorted by file name), prepares the
    /// high/low-resolution pair for each, and computes the per-channel mean
    /// of the high-resolution pixels across the whole set.
    pub fn load_dir(dir: &Path, scale: usize) -> Result<SrDataset> {
        if !(2..=4).contains(&scale) {
            return Err(Error::Config(format!(
                "scale must be 2, 3, or 4, got {scale}"
            )));
        }
        let mut images = Vec::new();
        let mut sums = [0f64; 3];
        let mut pixels = 0u64;
        for path in png_files(dir)? {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let hr = ImagePlane::load_png(&path)?
                .modcrop(scale)
                .map_err(|e| Error::Data(format!("{name}: {e}")))?
                .to_unit()?;
            for (c, s) in sums.iter_mut().enumerate() {
                let mut acc = 0f64;
                for p in 0..hr.width() * hr.height() {
                    acc += hr.data()[3 * p + c];
                }
                *s += acc;
            }
            pixels += (hr.width() * hr.height()) as u64;
            let lr = bicubic_resize(&hr, hr.width() / scale, hr.height() / scale)?
                .quantize()?
                .to_unit()?;
            images.push(DatasetImage { name, hr, lr });
        }
        let rgb_mean = sums.map(|s| s / pixels as f64);
        Ok(SrDataset {
            images,
            scale,
            rgb_mean,
            skip_warning: Once::new(),
        })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    /// Per-channel mean of the high-resolution pixels, in the unit domain.
    pub fn rgb_mean(&self) -> [f64; 3] {
        self.rgb_mean
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &DatasetImage {
        &self.images[i]
    }

    /// Indices of images large enough to contain a `patch` x `patch`
    /// low-resolution crop.
    pub fn eligible(&self, patch: usize) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| {
                let lr = &self.images[i].lr;
                lr.width() >= patch && lr.height() >= patch
            })
            .collect()
    }

    /// Draws one patch plan. The draw order is fixed — image index, x, y,
    /// then (when augmenting) flip and quarter turns — so a cloned RNG
    /// reproduces the plan exactly.
    pub fn draw_plan<R: Rng>(
        &self,
        rng: &mut R,
        patch: usize,
        augment: bool,
        eligible: &[usize],
    ) -> PatchPlan {
        let image = eligible[rng.random_range(0..eligible.len())];
        let lr = &self.images[image].lr;
        let x = rng.random_range(0..=lr.width() - patch);
        let y = rng.random_range(0..=lr.height() - patch);
        let (flip, quarter_turns) = if augment {
            (rng.random::<bool>(), rng.random_range(0..4usize))
        } else {
            (false, 0)
        };
        PatchPlan {
            image,
            x,
            y,
            flip,
            quarter_turns,
        }
    }

    /// Cuts the aligned patch pair a plan describes and applies its
    /// augmentation (flip first, then rotation) identically to both members.
    /// Patches keep the unit domain; mean subtraction happens at batch
    /// assembly.
    pub fn cut_pair(&self, plan: PatchPlan, patch: usize) -> Result<(ImagePlane, ImagePlane)> {
        let img = &self.images[plan.image];
        let s = self.scale;
        let lr = img.lr.crop(plan.x, plan.y, patch, patch)?;
        let hr = img.hr.crop(s * plan.x, s * plan.y, s * patch, s * patch)?;
        Ok((apply_augment(lr, plan), apply_augment(hr, plan)))
    }

    /// Samples a batch of aligned, mean-subtracted patch pairs as planar
    /// tensors: low-resolution `(batch, 3, patch, patch)` and
    /// high-resolution `(batch, 3, s*patch, s*patch)`.
    ///
    /// Images smaller than the patch in low resolution are skipped (with a
    /// one-time warning); if none qualify this is an error.
    pub fn sample_batch<S: Scalar, R: Rng>(
        &self,
        rng: &mut R,
        patch: usize,
        batch: usize,
        augment: bool,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        if patch == 0 || batch == 0 {
            return Err(Error::Config(format!(
                "patch size ({patch}) and batch size ({batch}) must be >= 1"
            )));
        }
        let eligible = self.eligible(patch);
        if eligible.len() < self.images.len() {
            self.skip_warning.call_once(|| {
                let skipped: Vec<&str> = (0..self.images.len())
                    .filter(|i| !eligible.contains(i))
                    .map(|i| self.images[i].name.as_str())
                    .collect();
                eprintln!(
                    "warning: skipping {} image(s) smaller than a {patch}x{patch} \
                     low-resolution patch: {}",
                    skipped.len(),
                    skipped.join(", ")
                );
            });
        }
        if eligible.is_empty() {
            return Err(Error::Data(format!(
                "no training image is at least {patch}x{patch} after {}x downscale",
                self.scale
            )));
        }

        let s = self.scale;
        let mut lr_data = Vec::with_capacity(batch * 3 * patch * patch);
        let mut hr_data = Vec::with_capacity(batch * 3 * s * patch * s * patch);
        for _ in 0..batch {
            let plan = self.draw_plan(rng, patch, augment, &eligible);
            let (lr, hr) = self.cut_pair(plan, patch)?;
            lr_data.extend_from_slice(lr.mean_subtract(self.rgb_mean)?.to_tensor::<S>().data());
            hr_data.extend_from_slice(hr.mean_subtract(self.rgb_mean)?.to_tensor::<S>().data());
        }
        let lr = Tensor::new(Shape::new(batch, 3, patch, patch), lr_data)?;
        let hr = Tensor::new(Shape::new(batch, 3, s * patch, s * patch), hr_data)?;
        Ok((lr, hr))
    }
}

fn apply_augment(plane: ImagePlane, plan: PatchPlan) -> ImagePlane {
    let mut out = plane;
    if plan.flip {
        out = out.flip_horizontal();
    }
    for _ in 0..plan.quarter_turns {
        out = out.rotate90();
    }
    out
}
