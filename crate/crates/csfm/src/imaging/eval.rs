//! The evaluation pipeline: degrade a ground-truth image, reconstruct it
//! with either plain bicubic upscaling or the network, and score the
//! reconstruction with PSNR/SSIM on the luminance channel.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::metrics::{psnr, rgb_to_y, ssim};
use crate::imaging::plane::{ColorSpace, Domain, ImagePlane};
use crate::imaging::resize::bicubic_resize;
use crate::model::CsfmNetwork;
use crate::tensor::Tape;

/// How to reconstruct the high-resolution image from the degraded input.
pub enum Upscaler<'a> {
    /// Bicubic interpolation back to the original size (the baseline).
    Bicubic,
    /// The network, with the dataset RGB mean it was trained with
    /// (unit-scale).
    Network(&'a CsfmNetwork<f32>, [f64; 3]),
}

/// One image's scores.
#[derive(Clone, Debug)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores plus their arithmetic means.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub scores: Vec<ImageScore>,
    pub avg_psnr: f64,
    pub avg_ssim: f64,
}

/// Runs the network on a quantized low-resolution image: mean-subtract,
/// forward, mean-add, snap to the 8-bit grid.
pub fn super_resolve(
    lr: &ImagePlane,
    net: &CsfmNetwork<f32>,
    rgb_mean: [f64; 3],
) -> Result<ImagePlane> {
    let x = lr.to_unit()?.mean_subtract(rgb_mean)?;
    let mut tape = Tape::disabled();
    let y = net.forward(&mut tape, &x.to_tensor::<f32>())?;
    ImagePlane::from_tensor(&y, Domain::MeanCentered, ColorSpace::Rgb)?
        .mean_add(rgb_mean)?
        .quantize()
}

/// Synthesizes the degraded input for `hr` at `scale`: crop to a multiple
/// of the scale, bicubic-downsample, snap to the 8-bit grid. Returns
/// `(cropped ground truth, low-resolution input)`.
pub fn degrade(hr: &ImagePlane, scale: usize) -> Result<(ImagePlane, ImagePlane)> {
    if scale == 0 {
        return Err(Error::Config("scale must be positive".into()));
    }
    let hr = hr.modcrop(scale)?;
    let lr = bicubic_resize(&hr.to_unit()?, hr.width() / scale, hr.height() / scale)?.quantize()?;
    Ok((hr, lr))
}

/// Scores one ground-truth image: degrade, reconstruct with `up`, compare
/// on luminance with `crop` border pixels removed. Returns `(psnr, ssim)`.
pub fn evaluate_image(
    hr: &ImagePlane,
    scale: usize,
    crop: usize,
    up: &Upscaler,
) -> Result<(f64, f64)> {
    let (hr, lr) = degrade(hr, scale)?;
    let sr = match up {
        Upscaler::Bicubic => bicubic_resize(&lr.to_unit()?, hr.width(), hr.height())?.quantize()?,
        Upscaler::Network(net, rgb_mean) => {
            if net.config().scale != scale {
                return Err(Error::Config(format!(
                    "checkpoint was trained for scale {}, requested {scale}",
                    net.config().scale
                )));
            }
            super_resolve(&lr, net, *rgb_mean)?
        }
    };
    let y_hr = rgb_to_y(&hr)?;
    let y_sr = rgb_to_y(&sr)?;
    Ok((psnr(&y_hr, &y_sr, crop)?, ssim(&y_hr, &y_sr, crop)?))
}

/// Lists the PNG files in `dir`, sorted by filename for stable reports.
pub fn png_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no PNG images found in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Evaluates every PNG in `dir` and averages the scores.
pub fn evaluate_dir(dir: &Path, scale: usize, crop: usize, up: &Upscaler) -> Result<EvalReport> {
    let files = png_files(dir)?;
    let mut scores = Vec::with_capacity(files.len());
    for path in &files {
        let hr = ImagePlane::load_png(path)?;
        let (p, s) = evaluate_image(&hr, scale, crop, up)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        scores.push(ImageScore {
            name,
            psnr: p,
            ssim: s,
        });
    }
    let n = scores.len() as f64;
    let avg_psnr = scores.iter().map(|s| s.psnr).sum::<f64>() / n;
    let avg_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
    Ok(EvalReport {
        scores,
        avg_psnr,
        avg_ssim,
    })
}
