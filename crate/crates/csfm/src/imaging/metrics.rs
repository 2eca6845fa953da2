//! Luminance conversion and the PSNR/SSIM quality metrics, computed the way
//! the SR literature reports them: on the BT.601 studio-swing Y channel of
//! 0..255 RGB, with a border crop before measuring.

use crate::error::{Error, Result};
use crate::imaging::plane::{ColorSpace, Domain, ImagePlane};

/// A single-channel (luminance) plane on the 0..255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LumaPlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LumaPlane {
    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<LumaPlane> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "luma buffer has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(LumaPlane {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Drops `crop` pixels from every side.
    pub fn shave(&self, crop: usize) -> Result<LumaPlane> {
        if 2 * crop >= self.width.min(self.height) {
            return Err(Error::Data(format!(
                "crop {crop} leaves nothing of a {}x{} plane",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width - 2 * crop, self.height - 2 * crop);
        let mut data = Vec::with_capacity(w * h);
        for y in crop..crop + h {
            let row = y * self.width + crop;
            data.extend_from_slice(&self.data[row..row + w]);
        }
        LumaPlane::from_raw(w, h, data)
    }
}

/// BT.601 studio-swing luminance of a 0..255 RGB plane:
/// `Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255`.
pub fn rgb_to_y(img: &ImagePlane) -> Result<LumaPlane> {
    if img.color() != ColorSpace::Rgb {
        return Err(Error::Data(format!(
            "rgb_to_y needs an RGB plane, got {}",
            img.color()
        )));
    }
    if img.domain() != Domain::U8Range {
        return Err(Error::Data(format!(
            "rgb_to_y needs 0..255 values, got a {} plane",
            img.domain()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| 16.0 + (65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]) / 255.0)
        .collect();
    LumaPlane::from_raw(img.width(), img.height(), data)
}

/// Full BT.601 studio-swing RGB → YCbCr conversion (0..255 in, 0..255 out).
/// Provided so YCbCr-tagged planes have a real producer; the metrics only
/// need the Y channel via [`rgb_to_y`].
pub fn rgb_to_ycbcr(img: &ImagePlane) -> Result<ImagePlane> {
    if img.color() != ColorSpace::Rgb {
        return Err(Error::Data(format!(
            "rgb_to_ycbcr needs an RGB plane, got {}",
            img.color()
        )));
    }
    if img.domain() != Domain::U8Range {
        return Err(Error::Data(format!(
            "rgb_to_ycbcr needs 0..255 values, got a {} plane",
            img.domain()
        )));
    }
    let mut data = Vec::with_capacity(img.data().len());
    for p in img.data().chunks_exact(3) {
        let (r, g, b) = (p[0], p[1], p[2]);
        data.push(16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
        data.push(128.0 + (-37.797 * r - 74.203 * g + 112.0 * b) / 255.0);
        data.push(128.0 + (112.0 * r - 93.786 * g - 18.214 * b) / 255.0);
    }
    ImagePlane::from_raw(
        img.width(),
        img.height(),
        data,
        Domain::U8Range,
        ColorSpace::YCbCr,
    )
}

fn check_same_dims(op: &'static str, a: &LumaPlane, b: &LumaPlane) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            op,
            format!(
                "planes differ: {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            ),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over the crop-shaved planes:
/// `10 log10(255^2 / MSE)`. Identical planes give `+inf`.
pub fn psnr(a: &LumaPlane, b: &LumaPlane, crop: usize) -> Result<f64> {
    check_same_dims("psnr", a, b)?;
    let (a, b) = (a.shave(crop)?, b.shave(crop)?);
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// The 11-tap Gaussian used by the standard SSIM window (sigma 1.5),
/// normalized to sum 1. The 2-D window is its outer product.
pub(crate) fn ssim_window_1d() -> [f64; 11] {
    let sigma = 1.5;
    let mut w = [0.0; 11];
    let mut total = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        total += *v;
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean structural similarity over the crop-shaved planes: 11x11 Gaussian
/// window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 255, evaluated at
/// every position where the window fits entirely inside the shaved plane.
pub fn ssim(a: &LumaPlane, b: &LumaPlane, crop: usize) -> Result<f64> {
    check_same_dims("ssim", a, b)?;
    let (a, b) = (a.shave(crop)?, b.shave(crop)?);
    let (w, h) = (a.width(), a.height());
    if w < 11 || h < 11 {
        return Err(Error::Data(format!(
            "ssim needs at least 11x11 after cropping, got {w}x{h}"
        )));
    }
    let window = ssim_window_1d();

    // Gaussian-weighted local moments via the separable window: first the
    // five product maps, then a horizontal pass, then a vertical pass.
    let products: [Vec<f64>; 5] = [
        a.data().to_vec(),
        b.data().to_vec(),
        a.data().iter().map(|x| x * x).collect(),
        b.data().iter().map(|x| x * x).collect(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    ];
    let (vw, vh) = (w - 10, h - 10); // valid window positions
    let mut filtered: Vec<Vec<f64>> = Vec::with_capacity(5);
    for map in &products {
        let mut mid = vec![0.0; vw * h];
        for y in 0..h {
            for x in 0..vw {
                let mut acc = 0.0;
                for (t, wt) in window.iter().enumerate() {
                    acc += wt * map[y * w + x + t];
                }
                mid[y * vw + x] = acc;
            }
        }
        let mut out = vec![0.0; vw * vh];
        for y in 0..vh {
            for x in 0..vw {
                let mut acc = 0.0;
                for (t, wt) in window.iter().enumerate() {
                    acc += wt * mid[(y + t) * vw + x];
                }
                out[y * vw + x] = acc;
            }
        }
        filtered.push(out);
    }

    let c1 = (0.01 * 255.0) * (0.01 * 255.0);
    let c2 = (0.03 * 255.0) * (0.03 * 255.0);
    let mut total = 0.0;
    for i in 0..vw * vh {
        let (mu1, mu2) = (filtered[0][i], filtered[1][i]);
        let var1 = filtered[2][i] - mu1 * mu1;
        let var2 = filtered[3][i] - mu2 * mu2;
        let cov = filtered[4][i] - mu1 * mu2;
        total += (2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)
            / ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2));
    }
    Ok(total / (vw * vh) as f64)
}
