//! The replacement sky: a tileable template image viewed through a virtual
//! camera that follows the accumulated background motion.

use tracing::warn;

use crate::error::{Error, Result};
use crate::imaging::{warp_similarity, Frame};
use crate::motion::SimilarityTransform;

#[derive(Debug, Clone)]
pub struct SkyBoxTemplate {
    image: Frame,
    crop_factor: f64,
}

/// Output frame size the template is rendered into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewportSpec {
    pub out_w: usize,
    pub out_h: usize,
}

impl ViewportSpec {
    pub fn new(out_w: usize, out_h: usize) -> Result<Self> {
        if out_w == 0 || out_h == 0 {
            return Err(Error::invalid(format!(
                "viewport must be positive, got {out_w}x{out_h}"
            )));
        }
        Ok(Self { out_w, out_h })
    }
}

impl SkyBoxTemplate {
    /// `crop_factor` is the fraction of the template (per axis) visible in
    /// the viewport; it must lie in `(0, 1]`.
    pub fn new(image: Frame, crop_factor: f64) -> Result<Self> {
        if !(crop_factor > 0.0 && crop_factor <= 1.0) {
            return Err(Error::invalid(format!(
                "crop factor must lie in (0, 1], got {crop_factor}"
            )));
        }
        Ok(Self { image, crop_factor })
    }

    /// Mirrors the image into a 2x2 arrangement so opposite edges match and
    /// the result tiles without seams.
    pub fn mirror_tiled(image: &Frame, crop_factor: f64) -> Result<Self> {
        let (w, h) = image.dims();
        let tiled = Frame::from_fn(2 * w, 2 * h, |x, y| {
            let sx = if x < w { x } else { 2 * w - 1 - x };
            let sy = if y < h { y } else { 2 * h - 1 - y };
            image.pixel(sx, sy)
        });
        Self::new(tiled, crop_factor)
    }

    pub fn image(&self) -> &Frame {
        &self.image
    }

    pub fn crop_factor(&self) -> f64 {
        self.crop_factor
    }

    /// Logs a warning when the template is smaller than twice the viewport;
    /// such templates upscale visibly.
    pub fn check_resolution(&self, view: &ViewportSpec) {
        let (w, h) = self.image.dims();
        if w < 2 * view.out_w || h < 2 * view.out_h {
            warn!(
                template_w = w,
                template_h = h,
                view_w = view.out_w,
                view_h = view.out_h,
                "sky template is smaller than twice the output frame"
            );
        }
    }
}

/// Maps the centered `crop * W x crop * H` template region onto the viewport.
///
/// Scale comes from the width (`s = out_w / (crop * W)`) so the transform stays
/// a uniform-scale similarity; the template center `(W/2, H/2)` lands on the
/// viewport center `(out_w/2, out_h/2)`.
pub fn center_crop_transform(template: &SkyBoxTemplate, view: &ViewportSpec) -> SimilarityTransform {
    let (tw, th) = template.image.dims();
    let s = view.out_w as f64 / (template.crop_factor * tw as f64);
    let tx = view.out_w as f64 / 2.0 - s * tw as f64 / 2.0;
    let ty = view.out_h as f64 / 2.0 - s * th as f64 / 2.0;
    SimilarityTransform::from_components(s, 0.0, tx, ty)
        .expect("positive dimensions give a positive scale")
}

/// Warps the template into the viewport with tiling in both axes.
pub fn render_background(
    template: &SkyBoxTemplate,
    transform: &SimilarityTransform,
    view: &ViewportSpec,
) -> Result<Frame> {
    warp_similarity(&template.image, transform, view.out_w, view.out_h, true)
}
