use crate::error::{Error, Result};
use crate::geometry::Corner;
use crate::templates::window_size;

use super::RasterImage;

fn same_dims(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_dims(a, b)?;
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.values.len().max(1) as f64)
}

/// `sum(a * b) / sum(clip(a + b, 0, 1))`; 1 when both images are all zero.
pub fn soft_iou(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_dims(a, b)?;
    Ok(siou_sums(a.values.iter().zip(&b.values).map(|(x, y)| (*x, *y))))
}

fn siou_sums(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for (x, y) in pairs {
        inter += x * y;
        union += (x + y).clamp(0.0, 1.0);
    }
    if union == 0.0 {
        1.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Binary mask aligned with an image.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl RegionMask {
    pub fn full(width: usize, height: usize) -> Self {
        RegionMask {
            width,
            height,
            mask: vec![true; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn check(&self, img: &RasterImage) -> Result<()> {
        if self.width != img.width || self.height != img.height {
            return Err(Error::Shape(format!(
                "mask is {}x{}, image is {}x{}",
                self.width, self.height, img.width, img.height
            )));
        }
        Ok(())
    }
}

/// Union of corner windows at resolution `w`: a `window_size(w)` square of
/// pixels centered on the pixel containing each corner.
pub fn corner_mask(corners: &[Corner], w: usize) -> RegionMask {
    let mut m = RegionMask {
        width: w,
        height: w,
        mask: vec![false; w * w],
    };
    let r = (window_size(w) / 2) as i64;
    let cell = |v: f64| (((v + 1.0) / 2.0 * w as f64).floor() as i64).clamp(0, w as i64 - 1);
    for c in corners {
        let (ci, cj) = (cell(c.position.y), cell(c.position.x));
        for i in (ci - r).max(0)..=(ci + r).min(w as i64 - 1) {
            for j in (cj - r).max(0)..=(cj + r).min(w as i64 - 1) {
                m.mask[i as usize * w + j as usize] = true;
            }
        }
    }
    m
}

pub fn masked_mse(a: &RasterImage, b: &RasterImage, mask: &RegionMask) -> Result<f64> {
    same_dims(a, b)?;
    mask.check(a)?;
    let mut s = 0.0;
    let mut n = 0usize;
    for k in 0..a.values.len() {
        if mask.mask[k] {
            s += (a.values[k] - b.values[k]).powi(2);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

pub fn masked_soft_iou(a: &RasterImage, b: &RasterImage, mask: &RegionMask) -> Result<f64> {
    same_dims(a, b)?;
    mask.check(a)?;
    Ok(siou_sums(
        (0..a.values.len())
            .filter(|&k| mask.mask[k])
            .map(|k| (a.values[k], b.values[k])),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CornerMetrics {
    NoCorners,
    Region { mse: f64, siou: f64 },
}

/// Metrics restricted to the union of corner windows at the images' width.
pub fn corner_region_metrics(a: &RasterImage, b: &RasterImage, corners: &[Corner]) -> Result<CornerMetrics> {
    same_dims(a, b)?;
    let mask = corner_mask(corners, a.width);
    if mask.count() == 0 {
        return Ok(CornerMetrics::NoCorners);
    }
    Ok(CornerMetrics::Region {
        mse: masked_mse(a, b, &mask)?,
        siou: masked_soft_iou(a, b, &mask)?,
    })
}

/// Mean absolute 5-point Laplacian over interior nodes of a `w x w` distance
/// grid, in units of the `[-1, 1]` domain (grid spacing `2 / w`).
pub fn laplacian_smoothness(grid: &[f64], w: usize) -> f64 {
    if w < 3 {
        return 0.0;
    }
    let h = 2.0 / w as f64;
    let at = |i: usize, j: usize| grid[i * w + j];
    let mut s = 0.0;
    for i in 1..w - 1 {
        for j in 1..w - 1 {
            let lap = at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4.0 * at(i, j);
            s += (lap / (h * h)).abs();
        }
    }
    s / ((w - 2) * (w - 2)) as f64
}
