//! Corner templates: a small window around each detected corner split into
//! four quadrants by the two boundary lines meeting there, plus one soft
//! half-plane raster per boundary line.
//!
//! For a convex corner the glyph interior is the intersection of the two
//! half-planes, for a concave corner their union. Only the two mixed
//! quadrants (Q2, Q3) are supervised, and the loss is taken over the best
//! injective assignment of the two targets to the three predicted channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::kernel;
use crate::geometry::Corner;
use crate::point::Point;

/// Window side in pixels at raster width `width`: 7 at 128, scaled linearly,
/// at least 5 and always odd.
pub fn window_size(width: usize) -> usize {
    let w = ((7.0 * width as f64 / 128.0).round() as usize).max(5);
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    /// Both half-plane distances non-negative.
    Q1,
    /// First non-negative, second negative.
    Q2,
    /// First negative, second non-negative.
    Q3,
    /// Both negative.
    Q4,
}

impl Quadrant {
    fn classify(d1: f64, d2: f64) -> Quadrant {
        match (d1 >= 0.0, d2 >= 0.0) {
            (true, true) => Quadrant::Q1,
            (true, false) => Quadrant::Q2,
            (false, true) => Quadrant::Q3,
            (false, false) => Quadrant::Q4,
        }
    }

    pub fn is_supervised(self) -> bool {
        matches!(self, Quadrant::Q2 | Quadrant::Q3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerTemplate {
    pub corner: Corner,
    /// Unit normals of the two boundary lines, pointing to the positive side.
    pub normals: [Point; 2],
    /// Window side in pixels.
    pub window: usize,
    pub points: Vec<Point>,
    pub quadrants: Vec<Quadrant>,
    pub targets: [Vec<f64>; 2],
    /// Window points dropped because they fell outside `[-1, 1]²`.
    pub clipped: usize,
    pub gamma: f64,
}

impl CornerTemplate {
    /// Signed distance to boundary line `j`, positive on its interior side.
    pub fn halfplane_sdf(&self, j: usize, p: Point) -> f64 {
        self.normals[j].dot(p - self.corner.position)
    }

    /// Target of the composed (median) render at window point `i`.
    pub fn composed_target(&self, i: usize) -> f64 {
        let (a, b) = (self.targets[0][i], self.targets[1][i]);
        if self.corner.convex {
            a.min(b)
        } else {
            a.max(b)
        }
    }

    pub fn supervised(&self) -> impl Iterator<Item = usize> + '_ {
        self.quadrants
            .iter()
            .enumerate()
            .filter(|(_, q)| q.is_supervised())
            .map(|(i, _)| i)
    }

    pub fn count(&self, q: Quadrant) -> usize {
        self.quadrants.iter().filter(|&&x| x == q).count()
    }
}

/// Build the template of `corner` for a raster of width `width` and
/// anti-alias range `gamma`. Window points sit at whole-pixel offsets from
/// the corner itself.
pub fn build_template(corner: &Corner, width: usize, gamma: f64) -> Result<CornerTemplate> {
    for t in [corner.tangent_in, corner.tangent_out] {
        if (t.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "corner tangent ({}, {}) is not unit length",
                t.x, t.y
            )));
        }
    }
    if !(gamma > 0.0) {
        return Err(Error::Contract(format!("anti-alias range {gamma} must be positive")));
    }
    // Line 1 runs along the incoming tangent, line 2 along the outgoing one.
    // Oriented so their intersection is the narrow wedge between the reversed
    // incoming and the outgoing direction; flipped for concave corners, where
    // the interior is the union of the complements.
    let mut n1 = corner.tangent_in.perp();
    if n1.dot(corner.tangent_out) < 0.0 {
        n1 = -n1;
    }
    let mut n2 = corner.tangent_out.perp();
    if n2.dot(-corner.tangent_in) < 0.0 {
        n2 = -n2;
    }
    if !corner.convex {
        n1 = -n1;
        n2 = -n2;
    }

    let window = window_size(width);
    let r = (window / 2) as i64;
    let h = 2.0 / width as f64;
    let mut tpl = CornerTemplate {
        corner: *corner,
        normals: [n1, n2],
        window,
        points: Vec::with_capacity(window * window),
        quadrants: Vec::with_capacity(window * window),
        targets: [Vec::new(), Vec::new()],
        clipped: 0,
        gamma,
    };
    for i in -r..=r {
        for j in -r..=r {
            let p = corner.position + Point::new(j as f64 * h, i as f64 * h);
            if p.x.abs() > 1.0 || p.y.abs() > 1.0 {
                tpl.clipped += 1;
                continue;
            }
            let d1 = tpl.halfplane_sdf(0, p);
            let d2 = tpl.halfplane_sdf(1, p);
            tpl.points.push(p);
            tpl.quadrants.push(Quadrant::classify(d1, d2));
            tpl.targets[0].push(kernel(d1, gamma));
            tpl.targets[1].push(kernel(d2, gamma));
        }
    }
    if tpl.clipped > 0 {
        log::warn!(
            "corner template at ({:.3}, {:.3}) clipped {} window points",
            corner.position.x,
            corner.position.y,
            tpl.clipped
        );
    }
    Ok(tpl)
}

/// Ordered (target 1 channel, target 2 channel) pairs, in tie-break order.
pub const ASSIGNMENTS: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];

/// Minimum summed squared error over the injective assignments, restricted to
/// Q2 ∪ Q3. Returns `(sse, supervised point count, d sse / d pred)`.
pub fn corner_sse_grad(pred: &[[f64; 3]], t: &CornerTemplate) -> (f64, usize, Vec<[f64; 3]>) {
    assert_eq!(pred.len(), t.points.len(), "prediction must cover the template window");
    let idx: Vec<usize> = t.supervised().collect();
    let mut best = (f64::INFINITY, 0);
    for (k, &(a, b)) in ASSIGNMENTS.iter().enumerate() {
        let sse: f64 = idx
            .iter()
            .map(|&i| {
                let e1 = pred[i][a] - t.targets[0][i];
                let e2 = pred[i][b] - t.targets[1][i];
                e1 * e1 + e2 * e2
            })
            .sum();
        if sse < best.0 {
            best = (sse, k);
        }
    }
    let mut grad = vec![[0.0; 3]; pred.len()];
    if idx.is_empty() {
        return (0.0, 0, grad);
    }
    let (a, b) = ASSIGNMENTS[best.1];
    for &i in &idx {
        grad[i][a] = 2.0 * (pred[i][a] - t.targets[0][i]);
        grad[i][b] = 2.0 * (pred[i][b] - t.targets[1][i]);
    }
    (best.0, idx.len(), grad)
}

/// Corner loss of one template: best-assignment squared error averaged over
/// the supervised points.
pub fn corner_loss(pred: &[[f64; 3]], t: &CornerTemplate) -> f64 {
    let (sse, n, _) = corner_sse_grad(pred, t);
    if n == 0 {
        0.0
    } else {
        sse / n as f64
    }
}
