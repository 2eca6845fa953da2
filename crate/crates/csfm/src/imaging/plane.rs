//! Image container with explicit scale-convention and color tags.
//!
//! Pixels are stored as `f64` triples, interleaved row-major:
//! `data[3 * (y * width + x) + channel]`. The [`Domain`] tag records which
//! scale convention the numbers follow so conversions are explicit and a
//! plane can never be silently reinterpreted. Resampling and network
//! inference can overshoot the nominal range of a float domain (cubic
//! kernels have negative lobes); the overshoot is only removed by an
//! explicit [`ImagePlane::quantize`], never silently.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Scale convention of the stored values.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Domain {
    /// 0..255 scale on the 8-bit integer grid (every value is a whole
    /// number in `[0, 255]`). This is the only domain PNG I/O accepts.
    U8Range,
    /// 0..1 scale floats (nominally; resampling may overshoot slightly).
    Unit,
    /// 0..1 scale floats with a per-channel dataset mean subtracted —
    /// the domain the network consumes and produces.
    MeanCentered,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::U8Range => "u8-range",
            Domain::Unit => "unit",
            Domain::MeanCentered => "mean-centered",
        })
    }
}

/// Color interpretation of the three interleaved channels.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
}

impl std::fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ColorSpace::Rgb => "RGB",
            ColorSpace::YCbCr => "YCbCr",
        })
    }
}

/// A three-channel image with tagged scale convention and color space.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
    domain: Domain,
    color: ColorSpace,
}

impl ImagePlane {
    /// Wraps raw interleaved data; `data.len()` must be `3 * width * height`.
    pub fn from_raw(
        width: usize,
        height: usize,
        data: Vec<f64>,
        domain: Domain,
        color: ColorSpace,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "image dims must be positive, got {width}x{height}"
            )));
        }
        if data.len() != 3 * width * height {
            return Err(Error::Data(format!(
                "image buffer has {} values, expected 3*{width}*{height} = {}",
                data.len(),
                3 * width * height
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite pixel value {v}")));
        }
        if domain == Domain::U8Range {
            if let Some(v) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
                return Err(Error::Data(format!(
                    "value {v} outside [0, 255] in a u8-range plane"
                )));
            }
        }
        Ok(ImagePlane {
            width,
            height,
            data,
            domain,
            color,
        })
    }

    /// Builds a plane by evaluating `f(x, y, channel)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        domain: Domain,
        color: ColorSpace,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        ImagePlane::from_raw(width, height, data, domain, color)
    }

    /// Wraps an 8-bit interleaved RGB buffer (as decoded from a PNG).
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f64).collect();
        ImagePlane::from_raw(width, height, data, Domain::U8Range, ColorSpace::Rgb)
    }

    /// Decodes a PNG (any 8-bit color type; converted to RGB).
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.display().to_string(),
            source,
        })?;
        let rgb = img.to_rgb8();
        ImagePlane::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
    }

    /// Encodes as an 8-bit RGB PNG. Requires [`Domain::U8Range`] (call
    /// [`ImagePlane::quantize`] first) and RGB color.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.color != ColorSpace::Rgb {
            return Err(Error::Data(format!(
                "can only write RGB PNGs, this plane is {}",
                self.color
            )));
        }
        self.require_domain("save_png", Domain::U8Range)?;
        if let Some(v) = self.data.iter().find(|v| v.fract() != 0.0) {
            return Err(Error::Data(format!(
                "pixel value {v} is not on the 8-bit grid; call quantize() before saving"
            )));
        }
        let bytes: Vec<u8> = self.data.iter().map(|&v| v as u8).collect();
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer length is validated at construction");
        buf.save(path).map_err(|source| Error::Image {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    /// Interleaved pixel data, row-major, `3 * width * height` values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value of `channel` at `(x, y)`.
    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height && channel < 3);
        self.data[3 * (y * self.width + x) + channel]
    }

    fn require_domain(&self, op: &str, want: Domain) -> Result<()> {
        if self.domain != want {
            return Err(Error::Data(format!(
                "{op} requires a {want} plane, got {}",
                self.domain
            )));
        }
        Ok(())
    }

    /// `U8Range` → `Unit`: divides by 255.
    pub fn to_unit(&self) -> Result<ImagePlane> {
        self.require_domain("to_unit", Domain::U8Range)?;
        Ok(ImagePlane {
            data: self.data.iter().map(|v| v / 255.0).collect(),
            domain: Domain::Unit,
            ..self.clone()
        })
    }

    /// Snaps to the 8-bit grid: rescales `Unit` values by 255, clamps to
    /// `[0, 255]`, and rounds half away from zero. This is the only place
    /// out-of-range values are clipped, and it is explicit by design.
    /// `MeanCentered` planes must go through [`ImagePlane::mean_add`] first.
    pub fn quantize(&self) -> Result<ImagePlane> {
        let to_255 = match self.domain {
            Domain::U8Range => 1.0,
            Domain::Unit => 255.0,
            Domain::MeanCentered => {
                return Err(Error::Data(
                    "cannot quantize a mean-centered plane; add the mean back first".into(),
                ))
            }
        };
        Ok(ImagePlane {
            data: self
                .data
                .iter()
                .map(|v| (v * to_255).clamp(0.0, 255.0).round())
                .collect(),
            domain: Domain::U8Range,
            ..self.clone()
        })
    }

    /// `Unit` → `MeanCentered`: subtracts `mean[c]` from channel `c`.
    pub fn mean_subtract(&self, mean: [f64; 3]) -> Result<ImagePlane> {
        self.require_domain("mean_subtract", Domain::Unit)?;
        Ok(ImagePlane {
            data: self.shift_channels([-mean[0], -mean[1], -mean[2]]),
            domain: Domain::MeanCentered,
            ..self.clone()
        })
    }

    /// `MeanCentered` → `Unit`: adds `mean[c]` back to channel `c`.
    pub fn mean_add(&self, mean: [f64; 3]) -> Result<ImagePlane> {
        self.require_domain("mean_add", Domain::MeanCentered)?;
        Ok(ImagePlane {
            data: self.shift_channels(mean),
            domain: Domain::Unit,
            ..self.clone()
        })
    }

    fn shift_channels(&self, delta: [f64; 3]) -> Vec<f64> {
        self.data
            .iter()
            .enumerate()
            .map(|(i, v)| v + delta[i % 3])
            .collect()
    }

    /// Axis-aligned crop; the rectangle must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImagePlane> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Data(format!(
                "crop {w}x{h}+{x0}+{y0} does not fit in {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(3 * w * h);
        for y in y0..y0 + h {
            let row = 3 * (y * self.width + x0);
            data.extend_from_slice(&self.data[row..row + 3 * w]);
        }
        Ok(ImagePlane {
            width: w,
            height: h,
            data,
            domain: self.domain,
            color: self.color,
        })
    }

    /// Top-left crop to the largest size divisible by `s` in both dims
    /// (the standard pre-step before evaluating at scale `s`).
    pub fn modcrop(&self, s: usize) -> Result<ImagePlane> {
        let w = self.width - self.width % s;
        let h = self.height - self.height % s;
        if w == 0 || h == 0 {
            return Err(Error::Data(format!(
                "image {}x{} too small to modcrop by {s}",
                self.width, self.height
            )));
        }
        self.crop(0, 0, w, h)
    }

    /// Mirrors left-right: output `(x, y)` reads input `(width-1-x, y)`.
    pub fn flip_horizontal(&self) -> ImagePlane {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = 3 * (y * self.width + (self.width - 1 - x));
                let dst = 3 * (y * self.width + x);
                out.data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        out
    }

    /// Rotates 90° clockwise: output `(x, y)` reads input `(y, height-1-x)`
    /// of the original; width and height swap.
    pub fn rotate90(&self) -> ImagePlane {
        let (ow, oh) = (self.height, self.width);
        let mut data = vec![0.0; self.data.len()];
        for y in 0..oh {
            for x in 0..ow {
                let src = 3 * ((self.height - 1 - x) * self.width + y);
                let dst = 3 * (y * ow + x);
                data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        ImagePlane {
            width: ow,
            height: oh,
            data,
            domain: self.domain,
            color: self.color,
        }
    }

    /// Converts to a `(1, 3, h, w)` planar tensor.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let shape = Shape::new(1, 3, self.height, self.width);
        Tensor::from_fn(shape, |i| {
            let plane = self.height * self.width;
            let c = i / plane;
            let y = (i % plane) / self.width;
            let x = i % self.width;
            S::from_f64(self.get(x, y, c))
        })
    }

    /// Converts a `(1, 3, h, w)` tensor back into an interleaved plane.
    pub fn from_tensor<S: Scalar>(
        t: &Tensor<S>,
        domain: Domain,
        color: ColorSpace,
    ) -> Result<ImagePlane> {
        let s = t.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::shape(
                "from_tensor",
                format!("expected a 1x3xHxW tensor, got {s}"),
            ));
        }
        let plane = s.h * s.w;
        let mut data = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                data.push(t.data()[c * plane + i].as_f64());
            }
        }
        ImagePlane::from_raw(s.w, s.h, data, domain, color)
    }
}
