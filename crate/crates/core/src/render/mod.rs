//! Rendering at arbitrary resolution, image metrics, zero-level extraction
//! and PGM output.

mod contour;
mod metrics;
mod pgm;

pub use contour::{contours_to_json, extract_zero_level};
pub use metrics::{
    corner_mask, corner_region_metrics, laplacian_smoothness, masked_mse, masked_soft_iou, mse, soft_iou,
    CornerMetrics, RegionMask,
};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

use rayon::prelude::*;

use crate::autodecoder::{conditioning, Network};
use crate::error::{Error, Result};
use crate::field::{aa_range, compose_median, pixel_center, Grid, Supervision};

/// Row-major opacities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl RasterImage {
    /// Values are clamped to `[0, 1]`; NaN is rejected.
    pub fn new(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("image contains NaN".into()));
        }
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(RasterImage { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        RasterImage::new(width, height, vec![value; width * height]).expect("sized by construction")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    /// Mean of each `factor x factor` block.
    pub fn box_downsample(&self, factor: usize) -> Result<RasterImage> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Shape(format!(
                "{}x{} image is not divisible by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = (factor * factor) as f64;
        let mut out = Vec::with_capacity(w * h);
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                for a in 0..factor {
                    for b in 0..factor {
                        s += self.get(i * factor + a, j * factor + b);
                    }
                }
                out.push(s / norm);
            }
        }
        RasterImage::new(w, h, out)
    }
}

/// Raw network outputs at the centers of a `w x w` raster, in f64, laid out
/// pixel-major (`[pixel][channel]`).
pub fn predict_raw(net: &Network, latent: &[f64], label: usize, w: usize) -> Result<Vec<f64>> {
    let cond = conditioning(net.config(), label, latent)?;
    let points: Vec<[f64; 2]> = (0..w * w)
        .map(|k| {
            let p = pixel_center(k / w, k % w, w, w);
            [p.x, p.y]
        })
        .collect();
    net.predict(&points, &cond)
}

/// Raw outputs at `w x w` pixel centers as a channel-major grid.
pub fn predict_grid(net: &Network, latent: &[f64], label: usize, w: usize) -> Result<Grid> {
    let raw = predict_raw(net, latent, label, w)?;
    let n = net.config().out_channels;
    let mut data = vec![0f32; n * w * w];
    for (k, px) in raw.chunks_exact(n).enumerate() {
        for (c, v) in px.iter().enumerate() {
            data[c * w * w + k] = *v as f32;
        }
    }
    Grid::new(n, w, w, data)
}

fn ensure_defined(values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().any(f64::is_nan) {
        return Err(Error::Numerical("network output is NaN".into()));
    }
    Ok(())
}

fn compose_pixels(raw: &[f64], n: usize, w: usize, h: usize, aa_k: f64, mode: Supervision) -> Result<RasterImage> {
    ensure_defined(raw.iter().copied())?;
    let gamma = aa_range(aa_k, w);
    let values = raw
        .par_chunks_exact(n)
        .map(|px| mode.render_opacity(compose_median(px), gamma))
        .collect();
    RasterImage::new(w, h, values)
}

/// Dense evaluation at `w x w` pixel centers, median over channels, then the
/// kernel with the anti-alias range scaled to the output width.
pub fn render_implicit(
    net: &Network,
    latent: &[f64],
    label: usize,
    w: usize,
    aa_k: f64,
    mode: Supervision,
) -> Result<RasterImage> {
    if w < 8 {
        return Err(Error::Contract(format!("render width {w} is below 8")));
    }
    let raw = predict_raw(net, latent, label, w)?;
    compose_pixels(&raw, net.config().out_channels, w, w, aa_k, mode)
}

/// One channel read as its own image.
pub fn render_channel(grid: &Grid, c: usize, aa_k: f64, mode: Supervision) -> Result<RasterImage> {
    ensure_defined(grid.channel(c).iter().map(|&d| d as f64))?;
    let gamma = aa_range(aa_k, grid.width);
    let values = grid
        .channel(c)
        .iter()
        .map(|&d| mode.render_opacity(d as f64, gamma))
        .collect();
    RasterImage::new(grid.width, grid.height, values)
}

/// Per-pixel median of the grid's channels.
pub fn median_grid(grid: &Grid) -> Vec<f64> {
    let n = grid.height * grid.width;
    (0..n)
        .map(|k| {
            let px: Vec<f64> = (0..grid.channels).map(|c| grid.data[c * n + k] as f64).collect();
            compose_median(&px)
        })
        .collect()
}

/// Bilinear resampling of every channel to `w x w`, with pixel centers aligned
/// and edges clamped. At the source width this is the identity.
pub fn resample_bilinear(grid: &Grid, w: usize) -> Grid {
    let (sh, sw) = (grid.height, grid.width);
    let coord = |k: usize, src: usize| -> (usize, usize, f64) {
        let u = ((k as f64 + 0.5) * src as f64 / w as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = u.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, u - i0 as f64)
    };
    let rows: Vec<_> = (0..w).map(|i| coord(i, sh)).collect();
    let cols: Vec<_> = (0..w).map(|j| coord(j, sw)).collect();
    let mut data = Vec::with_capacity(grid.channels * w * w);
    for c in 0..grid.channels {
        for &(i0, i1, fy) in &rows {
            for &(j0, j1, fx) in &cols {
                let g = |i, j| grid.get(c, i, j) as f64;
                let top = g(i0, j0) * (1.0 - fx) + g(i0, j1) * fx;
                let bottom = g(i1, j0) * (1.0 - fx) + g(i1, j1) * fx;
                data.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Grid::new(grid.channels, w, w, data).expect("sized by construction")
}

/// Upsample the stored distance grid bilinearly, then median and kernel at
/// the output width.
pub fn render_bilateral(grid: &Grid, w: usize, aa_k: f64, mode: Supervision) -> Result<RasterImage> {
    let up = resample_bilinear(grid, w);
    let med = median_grid(&up);
    compose_pixels(&med, 1, w, w, aa_k, mode)
}
