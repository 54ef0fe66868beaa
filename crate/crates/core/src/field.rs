//! Opacity kernel, channel composition and the float grid container.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::glyph_sdf;
use crate::glyph::Glyph;
use crate::point::Point;
use crate::render::RasterImage;

/// Anti-alias band parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Number of distance channels (1 or 3).
    pub channels: usize,
    /// Anti-alias band width in pixels; the final range is `aa_k / train_width`.
    pub aa_k: f64,
    pub train_width: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            channels: 3,
            aa_k: 4.0,
            train_width: 64,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!(
                "field.channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if !(self.aa_k > 0.0) {
            return Err(Error::Config("field.aa_k must be positive".into()));
        }
        if self.train_width < 8 {
            return Err(Error::Config("field.train_width must be at least 8".into()));
        }
        Ok(())
    }

    /// Anti-alias range once warm-up is over.
    pub fn final_gamma(&self) -> f64 {
        aa_range(self.aa_k, self.train_width)
    }
}

/// `k / w` in normalized units. A width-`w` raster covers `[-1, 1]`, so the
/// band `(-gamma, gamma)` spans `k` pixels.
pub fn aa_range(aa_k: f64, width: usize) -> f64 {
    aa_k / width as f64
}

/// Opacity of a signed distance (positive inside).
///
/// `K(d) = 1/2 + (3t - t^3)/4` with `t = d / gamma` inside the band, clamped to
/// 0 and 1 outside.
pub fn kernel(d: f64, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0, "anti-alias range must be positive");
    if d >= gamma {
        1.0
    } else if d <= -gamma {
        0.0
    } else {
        let t = d / gamma;
        0.5 + (3.0 * t - t * t * t) / 4.0
    }
}

/// `dK/dd`, zero outside the band.
pub fn kernel_derivative(d: f64, gamma: f64) -> f64 {
    if d.abs() >= gamma {
        0.0
    } else {
        let t = d / gamma;
        3.0 * (1.0 - t * t) / (4.0 * gamma)
    }
}

/// Checked variant for callers taking user input.
pub fn try_kernel(d: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Contract(format!("anti-alias range {gamma} must be positive")));
    }
    Ok(kernel(d, gamma))
}

fn median_index(c: &[f64; 3]) -> (usize, usize, usize) {
    // Stable sort of indices by value: (low, mid, high).
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
    (idx[0], idx[1], idx[2])
}

pub fn median3(c: [f64; 3]) -> f64 {
    c[median_index(&c).1]
}

/// Median composition; a single channel passes through.
pub fn compose_median(c: &[f64]) -> f64 {
    match c {
        [v] => *v,
        [a, b, d] => median3([*a, *b, *d]),
        _ => panic!("median composition needs 1 or 3 channels, got {}", c.len()),
    }
}

/// Differentiable stand-ins for the median used while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composer {
    Mean,
    MedianPair,
}

/// Composed value together with `d(value)/d(channel)`.
pub fn compose_train_grad(c: &[f64], mode: Composer) -> (f64, [f64; 3]) {
    match (c, mode) {
        ([v], _) => (*v, [1.0, 0.0, 0.0]),
        ([a, b, d], Composer::Mean) => ((a + b + d) / 3.0, [1.0 / 3.0; 3]),
        ([a, b, d], Composer::MedianPair) => {
            let v = [*a, *b, *d];
            let (lo, mid, hi) = median_index(&v);
            let partner = if (v[hi] - v[mid]) < (v[mid] - v[lo]) { hi } else { lo };
            let mut g = [0.0; 3];
            g[mid] += 0.5;
            g[partner] += 0.5;
            (0.5 * (v[mid] + v[partner]), g)
        }
        _ => panic!("training composition needs 1 or 3 channels, got {}", c.len()),
    }
}

/// `mean` averages all channels; `median_pair` averages the median with its
/// nearest other channel (ties pick the smaller value).
pub fn compose_train(c: &[f64], mode: Composer) -> f64 {
    compose_train_grad(c, mode).0
}

/// How the network outputs are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Outputs are signed distances mapped through the kernel.
    #[default]
    Sdf,
    /// Outputs are opacities used as-is (clamped only when rendering).
    Pixel,
}

impl Supervision {
    /// Opacity used while training, with its derivative w.r.t. the raw output.
    pub fn train_opacity(self, d: f64, gamma: f64) -> (f64, f64) {
        match self {
            Supervision::Sdf => (kernel(d, gamma), kernel_derivative(d, gamma)),
            Supervision::Pixel => (d, 1.0),
        }
    }

    /// Opacity of a composed output for display.
    pub fn render_opacity(self, d: f64, gamma: f64) -> f64 {
        match self {
            Supervision::Sdf => kernel(d, gamma),
            Supervision::Pixel => d.clamp(0.0, 1.0),
        }
    }
}

/// Pixel center of row `i`, column `j` on an `h x w` raster over `[-1, 1]²`.
pub fn pixel_center(i: usize, j: usize, h: usize, w: usize) -> Point {
    Point::new(
        (j as f64 + 0.5) / w as f64 * 2.0 - 1.0,
        (i as f64 + 0.5) / h as f64 * 2.0 - 1.0,
    )
}

/// Analytic signed distance sampled at every pixel center of a `w x w` raster.
pub fn sdf_grid(g: &Glyph, w: usize) -> Grid {
    let mut data = Vec::with_capacity(w * w);
    for i in 0..w {
        for j in 0..w {
            data.push(glyph_sdf(pixel_center(i, j, w, w), g) as f32);
        }
    }
    Grid::new(1, w, w, data).expect("sized by construction")
}

/// `I(p) = K(sdf(p), gamma)` on every pixel center.
pub fn rasterize_ground_truth(g: &Glyph, w: usize, gamma: f64) -> RasterImage {
    let mut values = Vec::with_capacity(w * w);
    for i in 0..w {
        for j in 0..w {
            values.push(kernel(glyph_sdf(pixel_center(i, j, w, w), g), gamma));
        }
    }
    RasterImage::new(w, w, values).expect("sized by construction")
}

/// Re-apply the kernel to a cached distance grid (first channel).
pub fn rasterize_sdf(sdf: &[f64], w: usize, gamma: f64) -> RasterImage {
    RasterImage::new(w, w, sdf.iter().map(|&d| kernel(d, gamma)).collect()).expect("sized by construction")
}

/// `n x H x W` float grid, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

const GRID_MAGIC: &[u8; 4] = b"GFGD";
const GRID_VERSION: u16 = 1;

impl Grid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "grid {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Grid {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Header: magic `GFGD`, version (u16), channels (u16), height (u32),
    /// width (u32), all little-endian; then the f32 payload.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&(self.channels as u16).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("grid header truncated".into()))?;
        if &header[0..4] != GRID_MAGIC {
            return Err(Error::Format("not a grid file (bad magic)".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != GRID_VERSION {
            return Err(Error::Format(format!("unsupported grid version {version}")));
        }
        let channels = u16::from_le_bytes([header[6], header[7]]) as usize;
        let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let n = channels * height * width;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)
            .map_err(|e| Error::Format(format!("grid payload: {e}")))?;
        if payload.len() != n * 4 {
            return Err(Error::Format(format!(
                "grid payload has {} bytes, expected {}",
                payload.len(),
                n * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Grid::new(channels, height, width, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Grid::read_from(bytes.as_slice())
    }
}
