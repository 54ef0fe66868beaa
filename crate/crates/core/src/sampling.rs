//! Training locations: every pixel around the anti-alias band, every corner
//! window point, and a sparse set of random points well inside or outside.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{kernel, pixel_center};
use crate::geometry::glyph_sdf;
use crate::glyph::Glyph;
use crate::point::Point;
use crate::render::RasterImage;
use crate::templates::CornerTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Homogeneous samples per edge sample.
    pub homogeneous_ratio: f64,
    /// Lower bound on the homogeneous sample count, so glyphs with few or no
    /// edge pixels still see background.
    pub min_homogeneous: usize,
    /// Rejection-sampling attempts allowed per requested point.
    pub max_attempts_per_point: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            homogeneous_ratio: 0.25,
            min_homogeneous: 64,
            max_attempts_per_point: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Edge,
    Corner,
    Homogeneous,
}

/// Index of a window point within a glyph's template list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CornerRef {
    pub template: usize,
    pub point: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub position: Point,
    pub kind: SampleKind,
    pub target: f64,
    pub corner_ref: Option<CornerRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<FieldSample>,
    pub seed: u64,
}

impl SampleSet {
    pub fn count(&self, kind: SampleKind) -> usize {
        self.samples.iter().filter(|s| s.kind == kind).count()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Pixels with opacity strictly between 0 and 1, dilated by a 3x3 square,
/// in row-major order.
pub fn edge_pixels(raster: &RasterImage) -> Vec<(usize, usize)> {
    let (w, h) = (raster.width, raster.height);
    let mut hit = vec![false; w * h];
    for i in 0..h {
        for j in 0..w {
            let v = raster.get(i, j);
            if v > 0.0 && v < 1.0 {
                for a in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                    for b in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                        hit[a * w + b] = true;
                    }
                }
            }
        }
    }
    (0..w * h).filter(|&k| hit[k]).map(|k| (k / w, k % w)).collect()
}

/// Build the sample set of one glyph. `raster` is its ground truth at the
/// current anti-alias range `gamma`; homogeneous points are drawn with a
/// generator seeded from `seed` alone.
pub fn sample_glyph(
    glyph: &Glyph,
    raster: &RasterImage,
    templates: &[CornerTemplate],
    gamma: f64,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<SampleSet> {
    let (w, h) = (raster.width, raster.height);
    let edges = edge_pixels(raster);
    let has_outline = glyph.segments().next().is_some();
    if edges.is_empty() && has_outline {
        return Err(Error::Config(format!(
            "no anti-alias pixels at range {gamma} and width {w}; the range is too small for the resolution"
        )));
    }

    let mut samples = Vec::with_capacity(edges.len() * 5 / 4 + 64);
    for &(i, j) in &edges {
        samples.push(FieldSample {
            position: pixel_center(i, j, h, w),
            kind: SampleKind::Edge,
            target: raster.get(i, j),
            corner_ref: None,
        });
    }
    for (t, tpl) in templates.iter().enumerate() {
        for (k, &p) in tpl.points.iter().enumerate() {
            samples.push(FieldSample {
                position: p,
                kind: SampleKind::Corner,
                target: kernel(glyph_sdf(p, glyph), gamma),
                corner_ref: Some(CornerRef { template: t, point: k }),
            });
        }
    }

    let wanted = ((cfg.homogeneous_ratio * edges.len() as f64).round() as usize).max(cfg.min_homogeneous);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = cfg.max_attempts_per_point.max(1);
    // A side with no saturated pixel has (almost) no room for homogeneous
    // points; skip it rather than exhaust the attempt budget.
    let room_inside = raster.values.iter().any(|&v| v == 1.0);
    let room_outside = !has_outline || raster.values.iter().any(|&v| v == 0.0);
    let mut inside = Vec::new();
    if has_outline && room_inside {
        // Inside points are drawn from the bounding box, which contains them all.
        let (lo, hi) = glyph.bounds().expect("glyph has segments");
        let target = wanted / 2;
        for _ in 0..target * budget {
            if inside.len() == target {
                break;
            }
            let p = Point::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
            if glyph_sdf(p, glyph) > gamma {
                inside.push(p);
            }
        }
    }
    let outside_target = if room_outside { wanted - inside.len() } else { 0 };
    let mut outside = Vec::new();
    for _ in 0..outside_target * budget {
        if outside.len() == outside_target {
            break;
        }
        let p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if !has_outline || glyph_sdf(p, glyph) < -gamma {
            outside.push(p);
        }
    }
    for (pts, target) in [(inside, 1.0), (outside, 0.0)] {
        samples.extend(pts.into_iter().map(|p| FieldSample {
            position: p,
            kind: SampleKind::Homogeneous,
            target,
            corner_ref: None,
        }));
    }
    Ok(SampleSet { samples, seed })
}
