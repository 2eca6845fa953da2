//! Image I/O, color conversion, bicubic resampling, luminance quality
//! metrics, the degrade-and-reconstruct evaluation pipeline, and the gate
//! weight-norm analysis.

mod analysis;
mod eval;
mod metrics;
mod plane;
mod resize;

pub use analysis::{gf_weight_norms, GfModuleNorms, GfNormReport};
pub use eval::{
    degrade, evaluate_dir, evaluate_image, png_files, super_resolve, EvalReport, ImageScore,
    Upscaler,
};
pub use metrics::{psnr, rgb_to_y, rgb_to_ycbcr, ssim, LumaPlane};
pub use plane::{ColorSpace, Domain, ImagePlane};
pub use resize::bicubic_resize;
