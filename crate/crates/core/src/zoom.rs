//! Aspect-preserving zoom-in around the projected object center.
//!
//! The crop half-extents come from the farthest mask bound (observed or
//! rendered) from the center, expanded by `lambda`, and the window keeps the
//! aspect ratio of the source image. The window is then resampled bilinearly
//! to a fixed output size.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{mask_bounds, Image, MaskBounds, MaskImage};
use crate::pose::CameraIntrinsics;

pub const DEFAULT_EXPAND_RATIO: f64 = 1.4;
/// Smallest allowed half-extent (pixels) along the shorter window side.
pub const MIN_HALF_EXTENT: f64 = 16.0;
pub const DEFAULT_OUT_SIZE: (usize, usize) = (480, 640);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZoomError {
    #[error("rendered mask is empty")]
    EmptyRenderedMask,
    #[error("invalid zoom parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomConfig {
    /// Expand ratio applied to the mask extents.
    pub lambda: f64,
    /// `(height, width)` of the resampled crop.
    pub out_size: (usize, usize),
}

impl Default for ZoomConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_EXPAND_RATIO,
            out_size: DEFAULT_OUT_SIZE,
        }
    }
}

/// Crop centered at `center` (continuous pixel coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub center: Vector2<f64>,
    pub width: f64,
    pub height: f64,
}

impl CropWindow {
    pub fn full(intr: &CameraIntrinsics) -> Self {
        Self {
            center: Vector2::new(intr.width as f64 / 2.0, intr.height as f64 / 2.0),
            width: intr.width as f64,
            height: intr.height as f64,
        }
    }

    /// Top-left corner in continuous coordinates.
    pub fn origin(&self) -> Vector2<f64> {
        self.center - Vector2::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn contains_bounds(&self, b: &MaskBounds) -> bool {
        let o = self.origin();
        o.x <= b.l as f64
            && b.r as f64 <= o.x + self.width
            && o.y <= b.u as f64
            && b.d as f64 <= o.y + self.height
    }

    /// Intrinsics of the virtual camera whose image is this window resampled
    /// to `out_w x out_h`.
    pub fn zoomed_intrinsics(
        &self,
        intr: &CameraIntrinsics,
        out_w: usize,
        out_h: usize,
    ) -> CameraIntrinsics {
        let sx = out_w as f64 / self.width;
        let sy = out_h as f64 / self.height;
        let o = self.origin();
        CameraIntrinsics {
            fx: intr.fx * sx,
            fy: intr.fy * sy,
            cx: (intr.cx - o.x) * sx,
            cy: (intr.cy - o.y) * sy,
            width: out_w,
            height: out_h,
        }
    }
}

/// Crop window from the observed and rendered masks. An empty observed mask
/// falls back to the rendered bounds alone.
pub fn compute_crop(
    m_obs: &MaskImage,
    m_rend: &MaskImage,
    center: Vector2<f64>,
    aspect: f64,
    lambda: f64,
) -> Result<CropWindow, ZoomError> {
    if !(lambda > 0.0) {
        return Err(ZoomError::InvalidParameter("lambda must be positive"));
    }
    if !(aspect > 0.0) {
        return Err(ZoomError::InvalidParameter("aspect must be positive"));
    }
    let rend = mask_bounds(m_rend).map_err(|_| ZoomError::EmptyRenderedMask)?;
    let mut all = vec![rend];
    if let Ok(obs) = mask_bounds(m_obs) {
        all.push(obs);
    }
    Ok(crop_from_bounds(&all, center, aspect, lambda))
}

/// Window arithmetic on explicit bounds.
pub fn crop_from_bounds(
    bounds: &[MaskBounds],
    center: Vector2<f64>,
    aspect: f64,
    lambda: f64,
) -> CropWindow {
    let (xc, yc) = (center.x, center.y);
    let x_dist = bounds
        .iter()
        .flat_map(|b| [(b.l as f64 - xc).abs(), (b.r as f64 - xc).abs()])
        .fold(0.0, f64::max);
    let y_dist = bounds
        .iter()
        .flat_map(|b| [(b.u as f64 - yc).abs(), (b.d as f64 - yc).abs()])
        .fold(0.0, f64::max);
    let mut width = x_dist.max(y_dist * aspect) * 2.0 * lambda;
    let mut height = (x_dist / aspect).max(y_dist) * 2.0 * lambda;
    let short_half = width.min(height) / 2.0;
    if short_half < MIN_HALF_EXTENT {
        if short_half > 0.0 {
            let s = MIN_HALF_EXTENT / short_half;
            width *= s;
            height *= s;
        } else if aspect >= 1.0 {
            height = 2.0 * MIN_HALF_EXTENT;
            width = height * aspect;
        } else {
            width = 2.0 * MIN_HALF_EXTENT;
            height = width / aspect;
        }
    }
    CropWindow {
        center,
        width,
        height,
    }
}

/// Bilinear resample of `window` to `out_w x out_h`. Output pixel centers map
/// to continuous source coordinates; taps outside the source read as 0.
pub fn crop_resample(image: &Image, window: &CropWindow, out_w: usize, out_h: usize) -> Image {
    let mut out = Image::new(out_w, out_h, image.channels);
    let o = window.origin();
    let sx = window.width / out_w as f64;
    let sy = window.height / out_h as f64;
    let ch = image.channels;
    let (w, h) = (image.width as isize, image.height as isize);
    let tap = |x: isize, y: isize, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            image.data[(y as usize * image.width + x as usize) * ch + c]
        }
    };
    for i in 0..out_h {
        // source sample position in pixel-index space
        let fy = o.y + (i as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let ty = fy - y0;
        let y0 = y0 as isize;
        for j in 0..out_w {
            let fx = o.x + (j as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let tx = fx - x0;
            let x0 = x0 as isize;
            let dst = (i * out_w + j) * ch;
            for c in 0..ch {
                let mut v = 0.0;
                if (1.0 - tx) * (1.0 - ty) != 0.0 {
                    v += (1.0 - tx) * (1.0 - ty) * tap(x0, y0, c);
                }
                if tx * (1.0 - ty) != 0.0 {
                    v += tx * (1.0 - ty) * tap(x0 + 1, y0, c);
                }
                if (1.0 - tx) * ty != 0.0 {
                    v += (1.0 - tx) * ty * tap(x0, y0 + 1, c);
                }
                if tx * ty != 0.0 {
                    v += tx * ty * tap(x0 + 1, y0 + 1, c);
                }
                out.data[dst + c] = v;
            }
        }
    }
    out
}
