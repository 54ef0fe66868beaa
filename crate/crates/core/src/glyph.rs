//! Vector glyph outlines: segments, contours, the path text format and
//! dataset manifests.
//!
//! Path grammar (absolute coordinates only, whitespace separated):
//!
//! ```text
//! M x y                      start a subpath
//! L x y                      line
//! Q cx cy x y                quadratic Bézier
//! C c1x c1y c2x c2y x y      cubic Bézier
//! Z                          close the subpath
//! ```
//!
//! Coordinates follow the image convention: `y` grows downwards, so row `i`
//! of a raster sits at `y = (i + 0.5) / H * 2 - 1` after normalization.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::Point;

/// Default margin left between the normalized glyph and the `[-1, 1]²` field domain.
pub const DEFAULT_MARGIN: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line([Point; 2]),
    Quadratic([Point; 3]),
    Cubic([Point; 4]),
}

impl Segment {
    pub fn points(&self) -> &[Point] {
        match self {
            Segment::Line(p) => p,
            Segment::Quadratic(p) => p,
            Segment::Cubic(p) => p,
        }
    }

    fn points_mut(&mut self) -> &mut [Point] {
        match self {
            Segment::Line(p) => p,
            Segment::Quadratic(p) => p,
            Segment::Cubic(p) => p,
        }
    }

    pub fn start(&self) -> Point {
        self.points()[0]
    }

    pub fn end(&self) -> Point {
        *self.points().last().unwrap()
    }

    pub fn degree(&self) -> usize {
        self.points().len() - 1
    }

    pub fn eval(&self, t: f64) -> Point {
        let (x, y) = self.power_basis();
        Point::new(poly_eval(&x, t), poly_eval(&y, t))
    }

    pub fn derivative(&self, t: f64) -> Point {
        let (x, y) = self.power_basis();
        Point::new(poly_eval(&poly_derivative(&x), t), poly_eval(&poly_derivative(&y), t))
    }

    /// Power-basis coefficients `c[0] + c[1] t + ...` of both coordinates.
    pub fn power_basis(&self) -> (Vec<f64>, Vec<f64>) {
        let coeffs = |f: fn(&Point) -> f64| -> Vec<f64> {
            match self {
                Segment::Line(p) => {
                    let (a, b) = (f(&p[0]), f(&p[1]));
                    vec![a, b - a]
                }
                Segment::Quadratic(p) => {
                    let (a, b, c) = (f(&p[0]), f(&p[1]), f(&p[2]));
                    vec![a, 2.0 * (b - a), a - 2.0 * b + c]
                }
                Segment::Cubic(p) => {
                    let (a, b, c, d) = (f(&p[0]), f(&p[1]), f(&p[2]), f(&p[3]));
                    vec![a, 3.0 * (b - a), 3.0 * (a - 2.0 * b + c), d - 3.0 * c + 3.0 * b - a]
                }
            }
        };
        (coeffs(|p| p.x), coeffs(|p| p.y))
    }

    /// Direction of travel at the start, skipping coincident control points.
    pub fn start_direction(&self) -> Option<Point> {
        let pts = self.points();
        pts[1..].iter().map(|&q| q - pts[0]).find(|d| d.norm_sq() > 0.0)
    }

    /// Direction of travel at the end, skipping coincident control points.
    pub fn end_direction(&self) -> Option<Point> {
        let pts = self.points();
        let last = *pts.last().unwrap();
        pts[..pts.len() - 1]
            .iter()
            .rev()
            .map(|&q| last - q)
            .find(|d| d.norm_sq() > 0.0)
    }

    /// Tight axis-aligned bounds of the curve (not of the control polygon).
    pub fn bounds(&self) -> (Point, Point) {
        let (x, y) = self.power_basis();
        let axis = |c: &[f64]| {
            let mut lo = poly_eval(c, 0.0).min(poly_eval(c, 1.0));
            let mut hi = poly_eval(c, 0.0).max(poly_eval(c, 1.0));
            for t in crate::geometry::roots_in_unit_interval(&poly_derivative(c)) {
                let v = poly_eval(c, t);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let (x0, x1) = axis(&x);
        let (y0, y1) = axis(&y);
        (Point::new(x0, y0), Point::new(x1, y1))
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Segment {
        let mut s = *self;
        for p in s.points_mut() {
            *p = f(*p);
        }
        s
    }

    fn command(&self) -> char {
        match self {
            Segment::Line(_) => 'L',
            Segment::Quadratic(_) => 'Q',
            Segment::Cubic(_) => 'C',
        }
    }
}

pub(crate) fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * t + k)
}

pub(crate) fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &k)| i as f64 * k).collect()
}

/// A closed sequence of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub segments: Vec<Segment>,
}

impl Contour {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Degenerate("contour without segments".into()));
        }
        let c = Contour { segments };
        if !c.is_closed() {
            return Err(Error::Degenerate("contour is not closed".into()));
        }
        Ok(c)
    }

    pub fn is_closed(&self) -> bool {
        let n = self.segments.len();
        (0..n).all(|i| self.segments[i].end() == self.segments[(i + 1) % n].start())
    }

    /// Shoelace area of the control polygon; its sign is the orientation.
    pub fn signed_area(&self) -> f64 {
        let mut a = 0.0;
        for s in &self.segments {
            let pts = s.points();
            for w in pts.windows(2) {
                a += w[0].cross(w[1]);
            }
        }
        0.5 * a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub contours: Vec<Contour>,
    pub label: usize,
    pub family_id: String,
}

impl Glyph {
    pub fn new(contours: Vec<Contour>, label: usize, family_id: impl Into<String>) -> Self {
        Glyph {
            contours,
            label,
            family_id: family_id.into(),
        }
    }

    /// Build a glyph straight from path text, unlabeled (label 0).
    pub fn from_path(text: &str) -> Result<Self> {
        Ok(Glyph::new(parse_path(text)?, 0, ""))
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.contours.iter().flat_map(|c| c.segments.iter())
    }

    pub fn bounds(&self) -> Option<(Point, Point)> {
        let mut it = self.segments().map(Segment::bounds);
        let first = it.next()?;
        Some(it.fold(first, |(lo, hi), (a, b)| {
            (
                Point::new(lo.x.min(a.x), lo.y.min(a.y)),
                Point::new(hi.x.max(b.x), hi.y.max(b.y)),
            )
        }))
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Glyph {
        Glyph {
            contours: self
                .contours
                .iter()
                .map(|c| Contour {
                    segments: c.segments.iter().map(|s| s.map(&f)).collect(),
                })
                .collect(),
            label: self.label,
            family_id: self.family_id.clone(),
        }
    }

    pub fn to_path_string(&self) -> String {
        contours_to_path(&self.contours)
    }
}

pub fn contours_to_path(contours: &[Contour]) -> String {
    let mut out = String::new();
    for c in contours {
        let start = c.segments[0].start();
        let _ = write!(out, "M {} {}", start.x, start.y);
        for s in &c.segments {
            let _ = write!(out, " {}", s.command());
            for p in &s.points()[1..] {
                let _ = write!(out, " {} {}", p.x, p.y);
            }
        }
        out.push_str(" Z\n");
    }
    out
}

struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let mut start: Option<usize> = None;
        for (ci, ch) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
            if ch.is_whitespace() || ch == ',' {
                if let Some(s) = start.take() {
                    tokens.push(Token {
                        text: &line[s..ci],
                        line: li + 1,
                        column: line[..s].chars().count() + 1,
                    });
                }
            } else if ch.is_ascii_alphabetic() && !is_exponent(line, ci, start) {
                // Command letters may be glued to numbers ("M0 0L1 0").
                if let Some(s) = start.take() {
                    tokens.push(Token {
                        text: &line[s..ci],
                        line: li + 1,
                        column: line[..s].chars().count() + 1,
                    });
                }
                tokens.push(Token {
                    text: &line[ci..ci + ch.len_utf8()],
                    line: li + 1,
                    column: line[..ci].chars().count() + 1,
                });
            } else if start.is_none() {
                start = Some(ci);
            }
        }
    }
    tokens
}

fn is_exponent(line: &str, at: usize, current: Option<usize>) -> bool {
    let Some(s) = current else { return false };
    let c = line.as_bytes()[at];
    (c == b'e' || c == b'E') && line[s..at].bytes().any(|b| b.is_ascii_digit())
}

/// Parse path text into closed contours.
///
/// A closing line is inserted at `Z` when the pen is away from the subpath start.
pub fn parse_path(text: &str) -> Result<Vec<Contour>> {
    let tokens = tokenize(text);
    let mut contours = Vec::new();
    let mut current: Option<(Point, Vec<Segment>, &Token)> = None;
    let mut pen = Point::ZERO;
    let mut i = 0;

    let err = |t: &Token, message: String| Error::Parse {
        line: t.line,
        column: t.column,
        message,
    };

    while i < tokens.len() {
        let tok = &tokens[i];
        let mut chars = tok.text.chars();
        let cmd = match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_alphabetic() => c,
            _ => return Err(err(tok, format!("expected a command, found '{}'", tok.text))),
        };
        let arity = match cmd {
            'M' | 'L' => 2,
            'Q' => 4,
            'C' => 6,
            'Z' => 0,
            other => return Err(err(tok, format!("unknown command '{other}'"))),
        };
        let mut args = Vec::with_capacity(arity);
        for k in 0..arity {
            let Some(a) = tokens.get(i + 1 + k) else {
                return Err(err(
                    tok,
                    format!("wrong arity for '{cmd}': expected {arity} numbers, found {k}"),
                ));
            };
            let v: f64 = a.text.parse().map_err(|_| {
                if a.text.chars().all(|c| c.is_alphabetic()) {
                    err(
                        tok,
                        format!("wrong arity for '{cmd}': expected {arity} numbers, found {k}"),
                    )
                } else {
                    err(a, format!("invalid number '{}'", a.text))
                }
            })?;
            if !v.is_finite() {
                return Err(err(a, format!("non-finite number '{}'", a.text)));
            }
            args.push(v);
        }
        if let Some(next) = tokens.get(i + 1 + arity) {
            if next.text.parse::<f64>().is_ok() {
                return Err(err(next, format!("wrong arity for '{cmd}': expected {arity} numbers")));
            }
        }
        let pts: Vec<Point> = args.chunks(2).map(|c| Point::new(c[0], c[1])).collect();

        match cmd {
            'M' => {
                if current.is_some() {
                    return Err(err(tok, "subpath not closed before 'M'".into()));
                }
                pen = pts[0];
                current = Some((pen, Vec::new(), tok));
            }
            'Z' => {
                let Some((start, mut segs, _)) = current.take() else {
                    return Err(err(tok, "'Z' without an open subpath".into()));
                };
                if pen != start {
                    segs.push(Segment::Line([pen, start]));
                }
                if segs.is_empty() {
                    return Err(err(tok, "degenerate contour with no segments".into()));
                }
                contours.push(Contour { segments: segs });
                pen = start;
            }
            _ => {
                let Some((_, segs, _)) = current.as_mut() else {
                    return Err(err(tok, format!("'{cmd}' before 'M'")));
                };
                let seg = match cmd {
                    'L' => Segment::Line([pen, pts[0]]),
                    'Q' => Segment::Quadratic([pen, pts[0], pts[1]]),
                    _ => Segment::Cubic([pen, pts[0], pts[1], pts[2]]),
                };
                pen = seg.end();
                segs.push(seg);
            }
        }
        i += 1 + arity;
    }

    if let Some((_, _, opened)) = current {
        return Err(err(opened, "unclosed subpath at end of input".into()));
    }
    Ok(contours)
}

/// Uniformly scale and translate so the tight bounding box is centered at the
/// origin with its larger side equal to `2 (1 - margin)`.
pub fn normalize(glyph: &Glyph, margin: f64) -> Result<Glyph> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::Config(format!("margin {margin} outside [0, 1)")));
    }
    let (lo, hi) = glyph
        .bounds()
        .ok_or_else(|| Error::Degenerate("glyph has no contours".into()))?;
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::Degenerate(format!(
            "glyph '{}' has zero bounding-box extent",
            glyph.family_id
        )));
    }
    let scale = 2.0 * (1.0 - margin) / extent;
    let center = 0.5 * (lo + hi);
    Ok(glyph.map(|p| (p - center) * scale))
}

/// The ordered label set glyphs are indexed against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Alphabet(String);

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet(('A'..='Z').chain('a'..='z').collect())
    }
}

impl Alphabet {
    pub fn new(symbols: impl Into<String>) -> Result<Self> {
        let s: String = symbols.into();
        let mut seen = HashSet::new();
        for c in s.chars() {
            if !seen.insert(c) {
                return Err(Error::Config(format!("duplicate symbol '{c}' in alphabet")));
            }
        }
        if s.is_empty() {
            return Err(Error::Config("empty alphabet".into()));
        }
        Ok(Alphabet(s))
    }

    pub fn len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let mut it = label.chars();
        let c = it.next()?;
        if it.next().is_some() {
            return None;
        }
        self.0.chars().position(|x| x == c)
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.0.chars().nth(index)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    family: String,
    label: String,
    file: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub family: String,
    /// Row of this family in the latent table (first-appearance order).
    pub family_index: usize,
    pub label: String,
    pub label_index: usize,
    /// Resolved against the manifest's directory.
    pub file: PathBuf,
}

pub fn load_manifest(path: &Path, alphabet: &Alphabet) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<ManifestRecord> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut families: HashMap<String, usize> = HashMap::new();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let label_index = alphabet.index_of(&r.label).ok_or_else(|| {
            Error::Dataset(format!(
                "label '{}' of family '{}' is not in the alphabet",
                r.label, r.family
            ))
        })?;
        if !seen.insert((r.family.clone(), label_index)) {
            return Err(Error::Dataset(format!(
                "duplicate entry for family '{}', label '{}'",
                r.family, r.label
            )));
        }
        let file = base.join(&r.file);
        if !file.is_file() {
            return Err(Error::Dataset(format!("glyph file {} does not exist", file.display())));
        }
        let next = families.len();
        let family_index = *families.entry(r.family.clone()).or_insert(next);
        out.push(ManifestEntry {
            family: r.family,
            family_index,
            label: r.label,
            label_index,
            file,
        });
    }
    Ok(out)
}

/// Read, parse and normalize the glyph a manifest entry points at.
pub fn load_glyph(entry: &ManifestEntry, margin: f64) -> Result<Glyph> {
    let text = std::fs::read_to_string(&entry.file).map_err(|e| Error::io(&entry.file, e))?;
    let contours = parse_path(&text).map_err(|e| match e {
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", entry.file.display()),
        },
        other => other,
    })?;
    let g = Glyph::new(contours, entry.label_index, entry.family.clone());
    normalize(&g, margin).map_err(|e| Error::Dataset(format!("{}: {e}", entry.file.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square() -> Glyph {
        Glyph::from_path("M 0 0 L 1 0 L 1 1 L 0 1 Z").unwrap()
    }

    #[test]
    fn closing_line_is_inserted() {
        let c = parse_path("M 0 0 L 1 0 L 1 1 Z").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].segments.len(), 3);
        assert!(c[0].segments.iter().all(|s| matches!(s, Segment::Line(_))));
        assert!(c[0].is_closed());
    }

    #[test]
    fn quadratic_plus_closing_line() {
        let c = parse_path("M 0 0 Q 0.5 1 1 0 Z").unwrap();
        assert_eq!(c[0].segments.len(), 2);
        assert!(matches!(c[0].segments[0], Segment::Quadratic(_)));
        assert!(matches!(c[0].segments[1], Segment::Line(_)));
    }

    #[test]
    fn no_closing_line_when_pen_is_home() {
        let c = parse_path("M 0 0 L 1 0 L 0 1 L 0 0 Z").unwrap();
        assert_eq!(c[0].segments.len(), 3);
    }

    #[test]
    fn unknown_command() {
        let e = parse_path("M 0 0 X 1 1 Z").unwrap_err();
        match e {
            Error::Parse { line, column, message } => {
                assert_eq!((line, column), (1, 7));
                assert!(message.contains("unknown command 'X'"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arity_and_closure_errors() {
        for bad in [
            "M 0 0 L 1 Z",
            "M 0 0 L 1 0 2 Z",
            "M 0 0 L 1 0",
            "M 0 0 L 1e999 0 Z",
            "L 1 1 Z",
            "M 0 0 Z",
        ] {
            assert!(matches!(parse_path(bad), Err(Error::Parse { .. })), "{bad} should fail");
        }
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_path("M 0 0 L 1 0 L 1 1 Z\nM 2 2 L 3 q 3 Z").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn multiple_subpaths_and_glued_commands() {
        let c = parse_path("M0 0L1 0L1 1Z M 0.2 0.2 L 0.2 0.4 L 0.4 0.4 Z").unwrap();
        assert_eq!(c.len(), 2);
        let c = parse_path("M 1e-1 0 L 1.5E1 0 L 0 2 Z").unwrap();
        assert_eq!(c[0].segments[0].end(), Point::new(15.0, 0.0));
    }

    #[test]
    fn normalize_unit_square() {
        let g = normalize(&square(), 0.15).unwrap();
        let (lo, hi) = g.bounds().unwrap();
        assert!((lo.x + 0.85).abs() < 1e-15 && (lo.y + 0.85).abs() < 1e-15);
        assert!((hi.x - 0.85).abs() < 1e-15 && (hi.y - 0.85).abs() < 1e-15);
        for s in g.segments() {
            for p in s.points() {
                assert!((p.x.abs() - 0.85).abs() < 1e-15 && (p.y.abs() - 0.85).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_preserves_aspect() {
        let g = Glyph::from_path("M 0 0 L 4 0 L 4 1 L 0 1 Z").unwrap();
        let n = normalize(&g, 0.15).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert!((hi.x - lo.x - 1.7).abs() < 1e-12);
        assert!((hi.y - lo.y - 1.7 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_uses_tight_curve_bounds() {
        // Control point at y=2, curve apex at y=1.
        let g = Glyph::from_path("M 0 0 Q 1 2 2 0 Z").unwrap();
        let n = normalize(&g, 0.15).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert!((hi.x - 0.85).abs() < 1e-12 && (lo.x + 0.85).abs() < 1e-12);
        assert!((hi.y - lo.y - 0.85).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_point_glyph() {
        let g = Glyph::from_path("M 0.3 0.3 L 0.3 0.3 Z").unwrap();
        assert!(matches!(normalize(&g, 0.15), Err(Error::Degenerate(_))));
    }

    #[test]
    fn alphabet_default() {
        let a = Alphabet::default();
        assert_eq!(a.len(), 52);
        assert_eq!(a.index_of("A"), Some(0));
        assert_eq!(a.index_of("z"), Some(51));
        assert_eq!(a.index_of("µ"), None);
        assert_eq!(a.index_of("AB"), None);
    }

    fn write_manifest(dir: &Path, records: &str, files: &[&str]) -> PathBuf {
        for f in files {
            std::fs::write(dir.join(f), "M 0 0 L 1 0 L 1 1 Z").unwrap();
        }
        let p = dir.join("manifest.json");
        std::fs::write(&p, records).unwrap();
        p
    }

    #[test]
    fn manifest_two_families_three_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = Vec::new();
        let mut files = Vec::new();
        for fam in ["serif", "sans"] {
            for l in ["A", "B", "c"] {
                let f = format!("{fam}_{l}.txt");
                recs.push(format!(r#"{{"family":"{fam}","label":"{l}","file":"{f}"}}"#));
                files.push(f);
            }
        }
        let fr: Vec<&str> = files.iter().map(String::as_str).collect();
        let p = write_manifest(dir.path(), &format!("[{}]", recs.join(",")), &fr);
        let entries = load_manifest(&p, &Alphabet::default()).unwrap();
        assert_eq!(entries.len(), 6);
        let fams: HashSet<usize> = entries.iter().map(|e| e.family_index).collect();
        assert_eq!(fams, HashSet::from([0, 1]));
        assert_eq!(entries[0].family, "serif");
        assert_eq!(entries[3].family_index, 1);
        assert_eq!(entries[2].label_index, 28);
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), r#"[{"family":"f","label":"µ","file":"a.txt"}]"#, &["a.txt"]);
        assert!(matches!(
            load_manifest(&p, &Alphabet::default()),
            Err(Error::Dataset(_))
        ));
        let p = write_manifest(dir.path(), r#"[{"family":"f","label":"A","file":"missing.txt"}]"#, &[]);
        assert!(load_manifest(&p, &Alphabet::default()).is_err());
        let p = write_manifest(
            dir.path(),
            r#"[{"family":"f","label":"A","file":"a.txt"},{"family":"f","label":"A","file":"a.txt"}]"#,
            &["a.txt"],
        );
        let e = load_manifest(&p, &Alphabet::default()).unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
    }

    #[test]
    fn manifest_empty_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), "[]", &[]);
        assert!(load_manifest(&p, &Alphabet::default()).unwrap().is_empty());
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (-10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y)| Point::new(x, y))
    }

    fn arb_contour() -> impl Strategy<Value = Vec<Segment>> {
        (
            arb_point(),
            prop::collection::vec((0usize..3, prop::collection::vec(arb_point(), 3)), 1..6),
        )
            .prop_map(|(start, specs)| {
                let mut pen = start;
                let mut segs = Vec::new();
                for (kind, pts) in specs {
                    let s = match kind {
                        0 => Segment::Line([pen, pts[0]]),
                        1 => Segment::Quadratic([pen, pts[0], pts[1]]),
                        _ => Segment::Cubic([pen, pts[0], pts[1], pts[2]]),
                    };
                    pen = s.end();
                    segs.push(s);
                }
                if pen != start {
                    segs.push(Segment::Line([pen, start]));
                }
                segs
            })
    }

    proptest! {
        #[test]
        fn path_text_round_trip(contours in prop::collection::vec(arb_contour(), 1..4)) {
            let contours: Vec<Contour> = contours.into_iter().map(|s| Contour { segments: s }).collect();
            let text = contours_to_path(&contours);
            let back = parse_path(&text).unwrap();
            prop_assert_eq!(back, contours);
        }

        #[test]
        fn normalize_idempotent_and_closed(contours in prop::collection::vec(arb_contour(), 1..3)) {
            let g = Glyph::new(contours.into_iter().map(|s| Contour { segments: s }).collect(), 0, "f");
            prop_assume!(g.bounds().map(|(lo, hi)| (hi.x - lo.x).max(hi.y - lo.y) > 1e-3).unwrap_or(false));
            let once = normalize(&g, 0.15).unwrap();
            let twice = normalize(&once, 0.15).unwrap();
            for c in &once.contours {
                prop_assert!(c.is_closed());
            }
            let (lo, hi) = once.bounds().unwrap();
            prop_assert!(lo.x >= -0.85 - 1e-12 && lo.y >= -0.85 - 1e-12);
            prop_assert!(hi.x <= 0.85 + 1e-12 && hi.y <= 0.85 + 1e-12);
            for (a, b) in once.segments().zip(twice.segments()) {
                for (p, q) in a.points().iter().zip(b.points()) {
                    prop_assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12);
                }
            }
        }
    }
}
