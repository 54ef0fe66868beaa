//! Exact distances to outlines, nonzero-winding containment and corner detection.
//!
//! Every polynomial root needed here (nearest points, curve extrema, y-monotone
//! splits) goes through [`roots_in_unit_interval`], which isolates roots between
//! the critical points of the polynomial and then polishes each bracket with a
//! safeguarded Newton iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyph::{poly_derivative, poly_eval, Glyph, Segment};
use crate::point::Point;

/// Default corner threshold, 3 rad (about 171.9 degrees).
pub const DEFAULT_CORNER_THRESHOLD: f64 = 3.0;

/// Real roots of `c[0] + c[1] t + ... ` in `[0, 1]`, ascending.
pub fn roots_in_unit_interval(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c = coeffs.to_vec();
    while c.len() > 1 && c.last().unwrap().abs() <= 1e-13 * scale {
        c.pop();
    }
    match c.len() {
        0 | 1 => Vec::new(),
        2 => {
            let t = -c[0] / c[1];
            if (0.0..=1.0).contains(&t) {
                vec![t]
            } else {
                Vec::new()
            }
        }
        _ => {
            let d = poly_derivative(&c);
            let mut knots = vec![0.0];
            knots.extend(roots_in_unit_interval(&d));
            knots.push(1.0);
            let mut roots: Vec<f64> = Vec::new();
            let push = |t: f64, roots: &mut Vec<f64>| {
                if roots.last().is_none_or(|&r| t - r > 1e-12) {
                    roots.push(t);
                }
            };
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (fa, fb) = (poly_eval(&c, a), poly_eval(&c, b));
                if fa == 0.0 {
                    push(a, &mut roots);
                }
                if fa != 0.0 && fb != 0.0 && (fa < 0.0) != (fb < 0.0) {
                    push(polish_bracket(&c, &d, a, b, fa), &mut roots);
                }
            }
            if poly_eval(&c, 1.0) == 0.0 {
                push(1.0, &mut roots);
            }
            roots
        }
    }
}

/// Root of a polynomial that is monotone on `[a, b]` with a sign change.
fn polish_bracket(c: &[f64], d: &[f64], mut a: f64, mut b: f64, fa: f64) -> f64 {
    let rising = fa < 0.0;
    let mut t = 0.5 * (a + b);
    for _ in 0..100 {
        let f = poly_eval(c, t);
        if f == 0.0 {
            return t;
        }
        if (f < 0.0) == rising {
            a = t;
        } else {
            b = t;
        }
        if b - a <= 4.0 * f64::EPSILON {
            break;
        }
        let slope = poly_eval(d, t);
        let newton = t - f / slope;
        t = if slope != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    t
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

/// Unsigned distance from `p` to the segment and the parameter of the nearest
/// point. Ties resolve to the smallest parameter.
pub fn segment_distance(p: Point, s: &Segment) -> (f64, f64) {
    if let Segment::Line([a, b]) = s {
        let ab = *b - *a;
        let len2 = ab.norm_sq();
        let t = if len2 > 0.0 {
            ((p - *a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        return ((*a + ab * t - p).norm(), t);
    }
    let (mut x, mut y) = s.power_basis();
    x[0] -= p.x;
    y[0] -= p.y;
    // Stationary points of |B(t) - p|^2: (B - p) . B' = 0.
    let g = poly_add(&poly_mul(&x, &poly_derivative(&x)), &poly_mul(&y, &poly_derivative(&y)));
    let mut candidates = vec![0.0];
    candidates.extend(roots_in_unit_interval(&g));
    candidates.push(1.0);
    let mut best = (f64::INFINITY, 0.0);
    for t in candidates {
        let d = Point::new(poly_eval(&x, t), poly_eval(&y, t)).norm();
        if d < best.0 {
            best = (d, t);
        }
    }
    best
}

/// Unsigned distance to the nearest outline point of the glyph.
pub fn outline_distance(p: Point, g: &Glyph) -> f64 {
    g.segments()
        .map(|s| segment_distance(p, s).0)
        .fold(f64::INFINITY, f64::min)
}

/// Nonzero winding number of the outline around `p`, from a ray cast towards +x.
///
/// Each segment is split into y-monotone pieces; a piece counts when `p.y` lies
/// in its half-open y-range and the crossing is right of `p`.
pub fn winding_number(p: Point, g: &Glyph) -> i32 {
    let mut w = 0;
    for s in g.segments() {
        w += segment_winding(p, s);
    }
    w
}

fn segment_winding(p: Point, s: &Segment) -> i32 {
    let pts = s.points();
    let (ymin, ymax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
        (lo.min(q.y), hi.max(q.y))
    });
    if p.y < ymin || p.y > ymax {
        return 0;
    }
    let xmax = pts.iter().fold(f64::NEG_INFINITY, |m, q| m.max(q.x));
    if xmax < p.x {
        return 0;
    }
    let (x, y) = s.power_basis();
    let mut knots = vec![0.0];
    if s.degree() > 1 {
        knots.extend(roots_in_unit_interval(&poly_derivative(&y)));
    }
    knots.push(1.0);
    let mut w = 0;
    for k in knots.windows(2) {
        let (ta, tb) = (k[0], k[1]);
        let (ya, yb) = (poly_eval(&y, ta), poly_eval(&y, tb));
        let dir = if ya < yb && ya <= p.y && p.y < yb {
            1
        } else if ya > yb && yb <= p.y && p.y < ya {
            -1
        } else {
            continue;
        };
        // Bisection on the monotone piece.
        let (mut lo, mut hi) = if dir == 1 { (ta, tb) } else { (tb, ta) };
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if poly_eval(&y, mid) < p.y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if poly_eval(&x, 0.5 * (lo + hi)) > p.x {
            w += dir;
        }
    }
    w
}

pub fn is_inside(p: Point, g: &Glyph) -> bool {
    winding_number(p, g) != 0
}

/// Signed distance, positive inside the glyph.
pub fn glyph_sdf(p: Point, g: &Glyph) -> f64 {
    let d = outline_distance(p, g);
    if is_inside(p, g) {
        d
    } else {
        -d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub position: Point,
    /// Unit direction of travel at the end of the incoming segment.
    pub tangent_in: Point,
    /// Unit direction of travel at the start of the outgoing segment.
    pub tangent_out: Point,
    /// Angle between the reversed incoming tangent and the outgoing tangent.
    pub interior_angle: f64,
    /// The glyph interior occupies the narrow wedge at the corner.
    pub convex: bool,
    pub contour: usize,
    /// Index of the outgoing segment within its contour.
    pub segment: usize,
}

/// Junctions whose interior angle is below `threshold`, in contour order.
pub fn detect_corners(g: &Glyph, threshold: f64) -> Result<Vec<Corner>> {
    if !(threshold > 0.0 && threshold < std::f64::consts::PI) {
        return Err(Error::Config(format!("corner threshold {threshold} outside (0, pi)")));
    }
    let mut corners = Vec::new();
    for (ci, contour) in g.contours.iter().enumerate() {
        let n = contour.segments.len();
        let dirs: Vec<(Point, Point)> = contour
            .segments
            .iter()
            .enumerate()
            .map(|(si, s)| match (s.start_direction(), s.end_direction()) {
                (Some(a), Some(b)) => Ok((a.normalized(), b.normalized())),
                _ => Err(Error::DegenerateGeometry {
                    contour: ci,
                    segment: si,
                    reason: "zero-length tangent".into(),
                }),
            })
            .collect::<Result<_>>()?;
        for i in 0..n {
            let next = (i + 1) % n;
            let t_in = dirs[i].1;
            let t_out = dirs[next].0;
            let back = -t_in;
            let angle = back.cross(t_out).abs().atan2(back.dot(t_out));
            if angle >= threshold {
                continue;
            }
            let position = contour.segments[next].start();
            corners.push(Corner {
                position,
                tangent_in: t_in,
                tangent_out: t_out,
                interior_angle: angle,
                convex: wedge_is_interior(g, position, back, t_out),
                contour: ci,
                segment: next,
            });
        }
    }
    Ok(corners)
}

/// Probe the narrow wedge between `a` and `b` (unit vectors) just off the apex.
fn wedge_is_interior(g: &Glyph, apex: Point, a: Point, b: Point) -> bool {
    let mut bis = a + b;
    if bis.norm_sq() < 1e-24 {
        // Antiparallel: any perpendicular is a bisector.
        bis = a.perp();
    }
    is_inside(apex + bis.normalized() * 1e-7, g)
}
