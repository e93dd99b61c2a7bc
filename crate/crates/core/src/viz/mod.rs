//! Color-coded angular error maps.

mod colormap;

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

pub use colormap::COLORMAP;

use crate::error::Result;
use crate::eval::angular_errors;
use crate::geometry::NormalMap;

/// Errors at or above this many degrees get the last colormap entry.
pub const SATURATION_DEG: f64 = 90.0;

/// Color for `error_deg`, interpolated linearly between table entries at
/// position `min(err, 90) / 90 · 255`.
pub fn error_color(error_deg: f64) -> [f64; 3] {
    let t = (error_deg.max(0.0).min(SATURATION_DEG) / SATURATION_DEG) * 255.0;
    let lo = t.floor() as usize;
    let hi = (lo + 1).min(255);
    let f = t - lo as f64;
    let (a, b) = (COLORMAP[lo], COLORMAP[hi]);
    [0, 1, 2].map(|c| a[c] as f64 * (1.0 - f) + b[c] as f64 * f)
}

/// RGB error map of `pred` against `gt`; background pixels are black.
pub fn render_error_map(pred: &NormalMap, gt: &NormalMap) -> Result<RgbImage> {
    let errs = angular_errors(pred, gt)?;
    Ok(RgbImage::from_fn(gt.width as u32, gt.height as u32, |x, y| {
        let i = y as usize * gt.width + x as usize;
        if gt.mask[i] {
            Rgb(error_color(errs[i]).map(|v| v.round() as u8))
        } else {
            Rgb([0, 0, 0])
        }
    }))
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(normals: Vec<[f32; 3]>, mask: Vec<bool>) -> NormalMap {
        NormalMap::new(1, normals.len(), normals, mask).unwrap()
    }

    #[test]
    fn zero_error_is_first_color_and_background_black() {
        let gt = map(vec![[0.0, 0.0, 1.0]; 3], vec![true, true, false]);
        let img = render_error_map(&gt, &gt).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, COLORMAP[0]);
        assert_eq!(img.get_pixel(1, 0).0, COLORMAP[0]);
        assert_eq!(img.get_pixel(2, 0).0, [0, 0, 0]);
    }

    #[test]
    fn antipodal_saturates() {
        let gt = map(vec![[0.0, 0.0, 1.0]], vec![true]);
        let pred = map(vec![[0.0, 0.0, -1.0]], vec![true]);
        assert_eq!(render_error_map(&pred, &gt).unwrap().get_pixel(0, 0).0, COLORMAP[255]);
        assert_eq!(error_color(90.0), error_color(170.0));
    }

    #[test]
    fn forty_five_degrees_is_exactly_mid_scale() {
        let mid = error_color(45.0);
        for c in 0..3 {
            let expect = (COLORMAP[127][c] as f64 + COLORMAP[128][c] as f64) / 2.0;
            assert_eq!(mid[c], expect);
        }
    }
}
