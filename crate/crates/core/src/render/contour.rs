//! Marching squares on a grid of signed distances sampled at pixel centers.

use crate::field::pixel_center;
use crate::point::Point;

/// Zero-level polylines of a `w x w` node grid (row-major, positive inside),
/// in domain coordinates. Loops repeat their first point at the end; a curve
/// leaving the grid comes back open. Saddle cells are split by the sign of the
/// mean of their four corners.
pub fn extract_zero_level(grid: &[f64], w: usize) -> Vec<Vec<Point>> {
    assert_eq!(grid.len(), w * w, "grid must be w x w");
    if w < 2 {
        return Vec::new();
    }
    let v = |i: usize, j: usize| grid[i * w + j];
    let pos = |x: f64| x >= 0.0;
    // Edge ids: horizontal (i, j)-(i, j+1) then vertical (i, j)-(i+1, j).
    let h_edge = |i: usize, j: usize| i * w + j;
    let v_edge = |i: usize, j: usize| w * w + i * w + j;
    let node = |i: usize, j: usize| {
        let p = pixel_center(i, j, w, w);
        (p, v(i, j))
    };
    let crossing = |e: usize| -> Point {
        let (a, b) = if e < w * w {
            let (i, j) = (e / w, e % w);
            (node(i, j), node(i, j + 1))
        } else {
            let k = e - w * w;
            let (i, j) = (k / w, k % w);
            (node(i, j), node(i + 1, j))
        };
        let t = a.1 / (a.1 - b.1);
        a.0 + (b.0 - a.0) * t
    };

    let mut segments: Vec<[usize; 2]> = Vec::new();
    for i in 0..w - 1 {
        for j in 0..w - 1 {
            let c = [v(i, j), v(i, j + 1), v(i + 1, j + 1), v(i + 1, j)];
            let s = c.map(pos);
            let edges = [h_edge(i, j), v_edge(i, j + 1), h_edge(i + 1, j), v_edge(i, j)];
            // Edge k joins corners k and k+1.
            let cut: Vec<usize> = (0..4).filter(|&k| s[k] != s[(k + 1) % 4]).collect();
            match cut.len() {
                0 => {}
                2 => segments.push([edges[cut[0]], edges[cut[1]]]),
                4 => {
                    let center = pos((c[0] + c[1] + c[2] + c[3]) / 4.0);
                    // Cut off each corner whose sign disagrees with the center;
                    // corner k touches edges k-1 and k.
                    for k in 0..4 {
                        if s[k] != center {
                            segments.push([edges[(k + 3) % 4], edges[k]]);
                        }
                    }
                }
                _ => unreachable!("a cell has an even number of sign changes"),
            }
        }
    }

    let mut at_edge: Vec<[usize; 2]> = vec![[usize::MAX; 2]; 2 * w * w];
    for (id, seg) in segments.iter().enumerate() {
        for &e in seg {
            let slot = &mut at_edge[e];
            if slot[0] == usize::MAX {
                slot[0] = id;
            } else {
                slot[1] = id;
            }
        }
    }
    let other =
        |e: usize, s: usize| -> Option<usize> { at_edge[e].iter().copied().find(|&x| x != s && x != usize::MAX) };

    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let [first, second] = segments[start];
        let mut forward = vec![first, second];
        let mut closed = false;
        let (mut cur_seg, mut cur_edge) = (start, second);
        while let Some(n) = other(cur_edge, cur_seg) {
            if used[n] {
                closed = n == start;
                break;
            }
            used[n] = true;
            let next_edge = if segments[n][0] == cur_edge {
                segments[n][1]
            } else {
                segments[n][0]
            };
            forward.push(next_edge);
            cur_seg = n;
            cur_edge = next_edge;
        }
        if cur_edge == first && forward.len() > 2 {
            closed = true;
        }
        if !closed {
            // Extend backwards from the start until the grid border.
            let mut back = Vec::new();
            let (mut cs, mut ce) = (start, first);
            while let Some(n) = other(ce, cs) {
                if used[n] {
                    break;
                }
                used[n] = true;
                let ne = if segments[n][0] == ce {
                    segments[n][1]
                } else {
                    segments[n][0]
                };
                back.push(ne);
                cs = n;
                ce = ne;
            }
            back.reverse();
            back.extend(forward);
            forward = back;
        }
        out.push(forward.into_iter().map(crossing).collect());
    }
    out
}

/// Contours as a JSON list of point lists.
pub fn contours_to_json(contours: &[Vec<Point>]) -> serde_json::Value {
    serde_json::Value::Array(
        contours
            .iter()
            .map(|c| serde_json::json!(c.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sdf_grid;
    use crate::geometry::outline_distance;
    use crate::glyph::Glyph;

    fn segs_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
        let o = |p: Point, q: Point, r: Point| (q - p).cross(r - p);
        let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
        (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
    }

    #[test]
    fn square_contour_is_close_to_outline() {
        let g = Glyph::from_path("M -0.6 -0.6 L 0.6 -0.6 L 0.6 0.6 L -0.6 0.6 Z").unwrap();
        let w = 256;
        let grid: Vec<f64> = sdf_grid(&g, w).data.iter().map(|&v| v as f64).collect();
        let cs = extract_zero_level(&grid, w);
        assert_eq!(cs.len(), 1);
        let c = &cs[0];
        assert_eq!(c.first(), c.last());
        let cell = 2.0 / w as f64;
        // Directed distances both ways (Hausdorff).
        for p in c {
            assert!(outline_distance(*p, &g) < 2.0 * cell);
        }
        for k in 0..400 {
            let t = k as f64 / 400.0 * 4.0;
            let side = t.floor() as usize;
            let f = t - t.floor();
            let q = match side {
                0 => Point::new(-0.6 + 1.2 * f, -0.6),
                1 => Point::new(0.6, -0.6 + 1.2 * f),
                2 => Point::new(0.6 - 1.2 * f, 0.6),
                _ => Point::new(-0.6, 0.6 - 1.2 * f),
            };
            let d = c
                .windows(2)
                .map(|s| crate::geometry::segment_distance(q, &crate::glyph::Segment::Line([s[0], s[1]])).0)
                .fold(f64::INFINITY, f64::min);
            assert!(d < 2.0 * cell);
        }
    }

    #[test]
    fn convex_contours_do_not_self_intersect() {
        let g = Glyph::from_path("M 0 -0.7 C 0.9 -0.7 0.9 0.7 0 0.7 C -0.9 0.7 -0.9 -0.7 0 -0.7 Z").unwrap();
        let w = 64;
        let grid: Vec<f64> = sdf_grid(&g, w).data.iter().map(|&v| v as f64).collect();
        let cs = extract_zero_level(&grid, w);
        assert_eq!(cs.len(), 1);
        let c = &cs[0];
        assert_eq!(c.first(), c.last());
        let n = c.len() - 1;
        for a in 0..n {
            for b in a + 2..n {
                if a == 0 && b == n - 1 {
                    continue;
                }
                assert!(!segs_intersect(c[a], c[a + 1], c[b], c[b + 1]));
            }
        }
    }

    #[test]
    fn all_positive_grid_has_no_contours() {
        assert!(extract_zero_level(&[1.0; 16], 4).is_empty());
        assert!(extract_zero_level(&[-1.0; 16], 4).is_empty());
    }

    #[test]
    fn saddle_follows_center_value() {
        // Positive diagonal corners with a positive center join up.
        let joined = [1.0, -0.5, -0.5, 1.0];
        let split = [0.2, -1.0, -1.0, 0.2];
        let a = extract_zero_level(&joined, 2);
        let b = extract_zero_level(&split, 2);
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 2);
        // Positive center: each segment cuts off a negative corner.
        let tr = pixel_center(0, 1, 2, 2);
        assert!(a
            .iter()
            .any(|s| s.iter().all(|p| (p.x - tr.x).abs() < 0.51 && (p.y - tr.y).abs() < 0.51)));
        let tl = pixel_center(0, 0, 2, 2);
        assert!(b
            .iter()
            .any(|s| s.iter().all(|p| (p.x - tl.x).abs() < 0.51 && (p.y - tl.y).abs() < 0.51)));
        assert_eq!(a, extract_zero_level(&joined, 2));
    }

    #[test]
    fn ring_gives_two_loops() {
        let g = Glyph::from_path(
            "M -0.8 -0.8 L 0.8 -0.8 L 0.8 0.8 L -0.8 0.8 Z M -0.3 -0.3 L -0.3 0.3 L 0.3 0.3 L 0.3 -0.3 Z",
        )
        .unwrap();
        let grid: Vec<f64> = sdf_grid(&g, 64).data.iter().map(|&v| v as f64).collect();
        let cs = extract_zero_level(&grid, 64);
        assert_eq!(cs.len(), 2);
        assert!(cs.iter().all(|c| c.first() == c.last()));
        let json = contours_to_json(&cs);
        assert_eq!(json.as_array().unwrap().len(), 2);
    }
}
