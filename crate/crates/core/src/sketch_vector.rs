//! Sketch geometry: absolute and stroke-5 offset formats, polyline
//! simplification, rasterization, affine transforms and padding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paper-default maximum sequence length.
pub const DEFAULT_T_MAX: usize = 250;
/// Tolerance of the simplification step, in pixels of a 256x256 canvas.
pub const DEFAULT_RDP_EPSILON_256: f64 = 2.0;

/// `(height, width)` of a drawing canvas in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub height: usize,
    pub width: usize,
}

impl Canvas {
    pub fn square(side: usize) -> Self {
        Self {
            height: side,
            width: side,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// One absolute point; `starts_stroke` marks the first point of a stroke.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsPoint {
    pub x: f64,
    pub y: f64,
    pub starts_stroke: bool,
}

impl AbsPoint {
    pub fn new(x: f64, y: f64, starts_stroke: bool) -> Self {
        Self { x, y, starts_stroke }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenState {
    /// Pen stays on paper after this point.
    Down,
    /// Pen lifts; the next point starts a new stroke.
    Lift,
    /// End of drawing.
    End,
}

impl PenState {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            PenState::Down => [1.0, 0.0, 0.0],
            PenState::Lift => [0.0, 1.0, 0.0],
            PenState::End => [0.0, 0.0, 1.0],
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => PenState::Down,
            1 => PenState::Lift,
            _ => PenState::End,
        }
    }

    /// Most probable state of a (possibly soft) pen vector.
    pub fn argmax(p: &[f64; 3]) -> Self {
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        Self::from_index(best)
    }
}

/// Offset point `(dx, dy, p1, p2, p3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke5 {
    pub dx: f64,
    pub dy: f64,
    pub pen: [f64; 3],
}

impl Stroke5 {
    /// Decoder input at the first step.
    pub const START: Stroke5 = Stroke5 {
        dx: 0.0,
        dy: 0.0,
        pen: [1.0, 0.0, 0.0],
    };
    pub const ZERO: Stroke5 = Stroke5 {
        dx: 0.0,
        dy: 0.0,
        pen: [0.0; 3],
    };

    pub fn new(dx: f64, dy: f64, pen: PenState) -> Self {
        Self {
            dx,
            dy,
            pen: pen.one_hot(),
        }
    }

    pub fn end() -> Self {
        Self::new(0.0, 0.0, PenState::End)
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.dx, self.dy, self.pen[0], self.pen[1], self.pen[2]]
    }

    pub fn pen_state(&self) -> PenState {
        PenState::argmax(&self.pen)
    }
}

/// Stroke-5 sequence; offsets are stored divided by `scale_factor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchSequence {
    pub points: Vec<Stroke5>,
    pub canvas: Canvas,
    pub scale_factor: f64,
}

impl SketchSequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks one-hot pen labels and a single terminal end-of-drawing point.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidSketch("empty sequence".into()));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::InvalidSketch(format!(
                "scale factor {} must be positive",
                self.scale_factor
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.dx.is_finite() && p.dy.is_finite()) {
                return Err(Error::InvalidSketch(format!("non-finite offset at {i}")));
            }
            let ones = p.pen.iter().filter(|&&v| v == 1.0).count();
            let zeros = p.pen.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != 2 {
                return Err(Error::InvalidSketch(format!("pen state at {i} is not one-hot")));
            }
            let is_last = i + 1 == self.points.len();
            if (p.pen[2] == 1.0) != is_last {
                return Err(Error::InvalidSketch(format!(
                    "end-of-drawing must be exactly the last point (found at {i})"
                )));
            }
        }
        Ok(())
    }

    /// Offsets in canvas pixels (undoing the normalization).
    pub fn raw_offsets(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .filter(|p| p.pen[2] == 0.0)
            .map(|p| (p.dx * self.scale_factor, p.dy * self.scale_factor))
    }

    /// Same drawing expressed with a different normalization divisor.
    pub fn rescaled(&self, scale_factor: f64) -> SketchSequence {
        let k = self.scale_factor / scale_factor;
        SketchSequence {
            points: self
                .points
                .iter()
                .map(|p| Stroke5 {
                    dx: p.dx * k,
                    dy: p.dy * k,
                    pen: p.pen,
                })
                .collect(),
            canvas: self.canvas,
            scale_factor,
        }
    }
}

fn check_points(sketch: &[AbsPoint]) -> Result<()> {
    if sketch.is_empty() {
        return Err(Error::InvalidSketch("empty sketch".into()));
    }
    if let Some(i) = sketch.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::InvalidSketch(format!("non-finite coordinate at point {i}")));
    }
    Ok(())
}

/// Absolute points to stroke-5: `n - 1` offsets followed by an end marker.
/// The move from point `i` to `i + 1` is a pen lift when point `i + 1`
/// starts a new stroke.
pub fn absolute_to_offsets(sketch: &[AbsPoint], canvas: Canvas, scale_factor: f64) -> Result<SketchSequence> {
    check_points(sketch)?;
    if !(scale_factor > 0.0 && scale_factor.is_finite()) {
        return Err(Error::InvalidSketch(format!("scale factor {scale_factor} must be positive")));
    }
    let mut points: Vec<Stroke5> = sketch
        .windows(2)
        .map(|w| {
            let pen = if w[1].starts_stroke { PenState::Lift } else { PenState::Down };
            Stroke5::new(
                (w[1].x - w[0].x) / scale_factor,
                (w[1].y - w[0].y) / scale_factor,
                pen,
            )
        })
        .collect();
    points.push(Stroke5::end());
    Ok(SketchSequence {
        points,
        canvas,
        scale_factor,
    })
}

/// Cumulative sum of the un-normalized offsets starting at `origin`.
/// The first point always starts a stroke.
pub fn offsets_to_absolute(seq: &SketchSequence, origin: (f64, f64)) -> Vec<AbsPoint> {
    let mut out = vec![AbsPoint::new(origin.0, origin.1, true)];
    let (mut x, mut y) = origin;
    for p in &seq.points {
        if p.pen_state() == PenState::End {
            break;
        }
        x += p.dx * seq.scale_factor;
        y += p.dy * seq.scale_factor;
        out.push(AbsPoint::new(x, y, p.pen_state() == PenState::Lift));
    }
    out
}

/// Group absolute points into strokes of `(x, y)`.
pub fn split_strokes(sketch: &[AbsPoint]) -> Vec<Vec<(f64, f64)>> {
    let mut strokes: Vec<Vec<(f64, f64)>> = Vec::new();
    for (i, p) in sketch.iter().enumerate() {
        if i == 0 || p.starts_stroke {
            strokes.push(Vec::new());
        }
        strokes.last_mut().unwrap().push((p.x, p.y));
    }
    strokes
}

/// Inverse of [`split_strokes`].
pub fn join_strokes(strokes: &[Vec<(f64, f64)>]) -> Vec<AbsPoint> {
    strokes
        .iter()
        .flat_map(|s| {
            s.iter()
                .enumerate()
                .map(|(i, &(x, y))| AbsPoint::new(x, y, i == 0))
        })
        .collect()
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Ramer-Douglas-Peucker simplification using point-to-segment distance.
/// Interior points farther than `epsilon` from the chord are kept; the first
/// farthest point splits the range. `epsilon == 0` returns the input.
pub fn rdp_simplify(polyline: &[(f64, f64)], epsilon: f64) -> Result<Vec<(f64, f64)>> {
    if polyline.len() < 2 {
        return Err(Error::InvalidSketch(format!(
            "simplification needs at least 2 points, got {}",
            polyline.len()
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidSketch(format!("epsilon {epsilon} must be >= 0")));
    }
    if epsilon == 0.0 {
        return Ok(polyline.to_vec());
    }
    let n = polyline.len();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut best, mut best_d) = (lo, -1.0);
        for i in lo + 1..hi {
            let d = seg_dist(polyline[i], polyline[lo], polyline[hi]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > epsilon {
            keep[best] = true;
            stack.push((lo, best));
            stack.push((best, hi));
        }
    }
    Ok(polyline
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect())
}

/// Binary `height x width` raster (row-major, 1 = ink).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub canvas: Canvas,
    pub pixels: Vec<u8>,
    /// Set when any input point had to be clamped into the canvas.
    pub clamped: bool,
}

impl Raster {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.canvas.width + x]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }
}

/// Draw each stroke as connected integer lines (Bresenham) with a square brush
/// of side `line_width`. Strokes are never joined to each other.
pub fn rasterize(sketch: &[AbsPoint], canvas: Canvas, line_width: usize) -> Raster {
    let (h, w) = (canvas.height, canvas.width);
    let mut r = Raster {
        canvas,
        pixels: vec![0; h * w],
        clamped: false,
    };
    if h == 0 || w == 0 {
        return r;
    }
    let lw = line_width.max(1) as i64;
    let lo = -(lw - 1) / 2;
    let mut clamped = false;
    let mut to_px = |x: f64, y: f64| -> (i64, i64) {
        let (cx, cy) = (x.round(), y.round());
        let px = cx.clamp(0.0, (w - 1) as f64);
        let py = cy.clamp(0.0, (h - 1) as f64);
        if px != cx || py != cy {
            clamped = true;
        }
        (px as i64, py as i64)
    };
    let stamp = |pixels: &mut Vec<u8>, x: i64, y: i64| {
        for dy in lo..lo + lw {
            for dx in lo..lo + lw {
                let (xx, yy) = (x + dx, y + dy);
                if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                    pixels[yy as usize * w + xx as usize] = 1;
                }
            }
        }
    };
    for stroke in split_strokes(sketch) {
        let pts: Vec<(i64, i64)> = stroke.iter().map(|&(x, y)| to_px(x, y)).collect();
        stamp(&mut r.pixels, pts[0].0, pts[0].1);
        for seg in pts.windows(2) {
            for (x, y) in bresenham(seg[0], seg[1]) {
                stamp(&mut r.pixels, x, y);
            }
        }
    }
    r.clamped = clamped;
    r
}

/// Integer points of the digital line from `a` to `b`, inclusive.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    Hflip,
    Vflip,
    /// Degrees; positive angles turn +x toward +y (clockwise on screen).
    Rotate { angle: f64 },
    Scale { factor: f64 },
    /// Composition result: row-major 2x3 matrix in canvas pixel coordinates.
    Matrix { m: [[f64; 3]; 2] },
}

/// Geometric transform of a canvas, applied identically to photos, sketches
/// and saliency grids.
///
/// Coordinates are canvas pixel coordinates with pixel centers at integers.
/// Flips and rotation act about the canvas center; scaling acts about the
/// canvas origin, which is the outer corner of pixel `(0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub kind: TransformKind,
    pub canvas: Canvas,
}

impl AffineTransform {
    pub fn identity(canvas: Canvas) -> Self {
        Self {
            kind: TransformKind::Identity,
            canvas,
        }
    }

    pub fn hflip(canvas: Canvas) -> Self {
        Self {
            kind: TransformKind::Hflip,
            canvas,
        }
    }

    pub fn vflip(canvas: Canvas) -> Self {
        Self {
            kind: TransformKind::Vflip,
            canvas,
        }
    }

    pub fn rotate(canvas: Canvas, angle: f64) -> Self {
        Self {
            kind: TransformKind::Rotate { angle },
            canvas,
        }
    }

    pub fn scale(canvas: Canvas, factor: f64) -> Self {
        Self {
            kind: TransformKind::Scale { factor },
            canvas,
        }
    }

    pub fn canvas(&self) -> (usize, usize) {
        (self.canvas.height, self.canvas.width)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, TransformKind::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            TransformKind::Identity | TransformKind::Hflip | TransformKind::Vflip => true,
            TransformKind::Rotate { angle } => angle.is_finite(),
            TransformKind::Scale { factor } => factor.is_finite() && factor > 0.0,
            TransformKind::Matrix { m } => {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                m.iter().flatten().all(|v| v.is_finite()) && det.abs() > 1e-12
            }
        };
        if self.canvas.height == 0 || self.canvas.width == 0 {
            return Err(Error::UnsupportedTransform("empty canvas".into()));
        }
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedTransform(format!("{:?}", self.kind)))
        }
    }

    /// Row-major 2x3 matrix acting on canvas pixel coordinates.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let cx = (self.canvas.width as f64 - 1.0) / 2.0;
        let cy = (self.canvas.height as f64 - 1.0) / 2.0;
        match self.kind {
            TransformKind::Identity => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            TransformKind::Hflip => [[-1.0, 0.0, 2.0 * cx], [0.0, 1.0, 0.0]],
            TransformKind::Vflip => [[1.0, 0.0, 0.0], [0.0, -1.0, 2.0 * cy]],
            TransformKind::Rotate { angle } => {
                let (s, c) = angle.to_radians().sin_cos();
                // exact quarter turns keep flips/rotations permutation-exact
                let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
                let (s, c) = (snap(s), snap(c));
                [
                    [c, -s, cx - c * cx + s * cy],
                    [s, c, cy - s * cx - c * cy],
                ]
            }
            TransformKind::Scale { factor } => [
                [factor, 0.0, 0.5 * (factor - 1.0)],
                [0.0, factor, 0.5 * (factor - 1.0)],
            ],
            TransformKind::Matrix { m } => m,
        }
    }

    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        let m = self.matrix();
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Linear part, used for offsets.
    pub fn apply_vector(&self, dx: f64, dy: f64) -> (f64, f64) {
        let m = self.matrix();
        (m[0][0] * dx + m[0][1] * dy, m[1][0] * dx + m[1][1] * dy)
    }

    pub fn inverse(&self) -> AffineTransform {
        let kind = match self.kind {
            TransformKind::Identity | TransformKind::Hflip | TransformKind::Vflip => self.kind,
            TransformKind::Rotate { angle } => TransformKind::Rotate { angle: -angle },
            TransformKind::Scale { factor } => TransformKind::Scale { factor: 1.0 / factor },
            TransformKind::Matrix { m } => {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
                TransformKind::Matrix {
                    m: [
                        [a, b, -(a * m[0][2] + b * m[1][2])],
                        [c, d, -(c * m[0][2] + d * m[1][2])],
                    ],
                }
            }
        };
        AffineTransform {
            kind,
            canvas: self.canvas,
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &AffineTransform) -> AffineTransform {
        let a = self.matrix();
        let b = next.matrix();
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                m[r][c] = b[r][0] * a[0][c] + b[r][1] * a[1][c];
            }
            m[r][2] += b[r][2];
        }
        AffineTransform {
            kind: TransformKind::Matrix { m },
            canvas: self.canvas,
        }
    }
}

/// Map every point through `t`; stroke markers are unchanged.
pub fn apply_affine_sketch(sketch: &[AbsPoint], t: &AffineTransform) -> Result<Vec<AbsPoint>> {
    t.validate()?;
    if t.is_identity() {
        return Ok(sketch.to_vec());
    }
    Ok(sketch
        .iter()
        .map(|p| {
            let (x, y) = t.apply_point(p.x, p.y);
            AbsPoint::new(x, y, p.starts_stroke)
        })
        .collect())
}

/// Transform a stroke-5 label directly: offsets move by the linear part only.
pub fn apply_affine_offsets(seq: &SketchSequence, t: &AffineTransform) -> Result<SketchSequence> {
    t.validate()?;
    Ok(SketchSequence {
        points: seq
            .points
            .iter()
            .map(|p| {
                let (dx, dy) = t.apply_vector(p.dx, p.dy);
                Stroke5 { dx, dy, pen: p.pen }
            })
            .collect(),
        canvas: seq.canvas,
        scale_factor: seq.scale_factor,
    })
}

/// Fixed-length sequence with a validity mask (1 = real step).
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedSequence {
    pub points: Vec<Stroke5>,
    pub mask: Vec<f64>,
    pub length: usize,
}

impl PaddedSequence {
    pub fn t_max(&self) -> usize {
        self.points.len()
    }

    pub fn valid(&self) -> &[Stroke5] {
        &self.points[..self.length]
    }
}

pub fn pad_and_mask(seq: &SketchSequence, t_max: usize) -> Result<PaddedSequence> {
    if seq.len() > t_max {
        return Err(Error::SequenceTooLong {
            len: seq.len(),
            max: t_max,
        });
    }
    let mut points = seq.points.clone();
    points.resize(t_max, Stroke5::ZERO);
    let mut mask = vec![1.0; seq.len()];
    mask.resize(t_max, 0.0);
    Ok(PaddedSequence {
        points,
        mask,
        length: seq.len(),
    })
}

/// Population standard deviation of every raw `dx` and `dy` pooled together
/// (end-of-drawing markers excluded).
pub fn compute_offset_scale(dataset: &[SketchSequence]) -> Result<f64> {
    let values: Vec<f64> = dataset
        .iter()
        .flat_map(|s| s.raw_offsets().flat_map(|(dx, dy)| [dx, dy]))
        .collect();
    if values.is_empty() {
        return Err(Error::DegenerateDataset("no offsets".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateDataset("all offsets are identical".into()));
    }
    Ok(std)
}

/// NDJSON interchange record: absolute points grouped by stroke.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchRecord {
    /// `[H, W]`
    pub canvas: [usize; 2],
    pub strokes: Vec<Vec<[f64; 2]>>,
}

impl SketchRecord {
    pub fn from_points(sketch: &[AbsPoint], canvas: Canvas) -> Self {
        Self {
            canvas: [canvas.height, canvas.width],
            strokes: split_strokes(sketch)
                .into_iter()
                .map(|s| s.into_iter().map(|(x, y)| [x, y]).collect())
                .collect(),
        }
    }

    pub fn canvas(&self) -> Canvas {
        Canvas {
            height: self.canvas[0],
            width: self.canvas[1],
        }
    }

    /// Absolute points; rejects empty strokes and drawings with fewer than two points.
    pub fn to_points(&self) -> Result<Vec<AbsPoint>> {
        if self.strokes.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidSketch("empty stroke".into()));
        }
        let strokes: Vec<Vec<(f64, f64)>> = self
            .strokes
            .iter()
            .map(|s| s.iter().map(|p| (p[0], p[1])).collect())
            .collect();
        let pts = join_strokes(&strokes);
        check_points(&pts)?;
        if pts.len() < 2 {
            return Err(Error::InvalidSketch("single-point sketch".into()));
        }
        Ok(pts)
    }
}

pub fn write_ndjson<W: Write>(mut w: W, records: &[SketchRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(r: R) -> Result<Vec<SketchRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<ndjson>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c256() -> Canvas {
        Canvas::square(256)
    }

    #[test]
    fn two_point_sketch_to_offsets() {
        let s = [AbsPoint::new(0.0, 0.0, true), AbsPoint::new(3.0, 4.0, false)];
        let seq = absolute_to_offsets(&s, c256(), 1.0).unwrap();
        assert_eq!(seq.points, vec![Stroke5::new(3.0, 4.0, PenState::Down), Stroke5::end()]);
        seq.validate().unwrap();
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert!(matches!(absolute_to_offsets(&[], c256(), 1.0), Err(Error::InvalidSketch(_))));
        let bad = [AbsPoint::new(f64::NAN, 0.0, true)];
        assert!(matches!(absolute_to_offsets(&bad, c256(), 1.0), Err(Error::InvalidSketch(_))));
    }

    #[test]
    fn pen_lift_marks_move_into_new_stroke() {
        let s = [
            AbsPoint::new(0.0, 0.0, true),
            AbsPoint::new(1.0, 0.0, false),
            AbsPoint::new(5.0, 5.0, true),
            AbsPoint::new(6.0, 5.0, false),
        ];
        let seq = absolute_to_offsets(&s, c256(), 2.0).unwrap();
        let states: Vec<_> = seq.points.iter().map(Stroke5::pen_state).collect();
        assert_eq!(states, vec![PenState::Down, PenState::Lift, PenState::Down, PenState::End]);
        assert_eq!(seq.points[1].dx, 2.0);
        assert_eq!(offsets_to_absolute(&seq, (0.0, 0.0)), s.to_vec());
    }

    #[test]
    fn offsets_to_absolute_cumulates() {
        let seq = SketchSequence {
            points: vec![Stroke5::new(3.0, 4.0, PenState::Down), Stroke5::end()],
            canvas: c256(),
            scale_factor: 1.0,
        };
        let abs = offsets_to_absolute(&seq, (0.0, 0.0));
        assert_eq!(abs[1], AbsPoint::new(3.0, 4.0, false));
        let zeros = SketchSequence {
            points: vec![Stroke5::new(0.0, 0.0, PenState::Down); 3]
                .into_iter()
                .chain([Stroke5::end()])
                .collect(),
            canvas: c256(),
            scale_factor: 1.0,
        };
        assert!(offsets_to_absolute(&zeros, (7.0, 9.0))
            .iter()
            .all(|p| p.x == 7.0 && p.y == 9.0));
    }

    #[test]
    fn rdp_examples() {
        let p = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert_eq!(rdp_simplify(&p, 0.1).unwrap(), vec![(0.0, 0.0), (2.0, 2.0)]);
        assert_eq!(rdp_simplify(&p, 0.0).unwrap(), p.to_vec());
        assert!(rdp_simplify(&p[..1], 1.0).is_err());
    }

    #[test]
    fn raster_examples() {
        let c = Canvas::square(8);
        assert_eq!(rasterize(&[], c, 1).count(), 0);
        let line = [AbsPoint::new(1.0, 1.0, true), AbsPoint::new(5.0, 1.0, false)];
        let r = rasterize(&line, c, 1);
        assert_eq!(r.count(), 5);
        for x in 1..=5 {
            assert_eq!(r.get(x, 1), 1);
        }
        assert!(!r.clamped);
        let dots = [AbsPoint::new(1.0, 1.0, true), AbsPoint::new(6.0, 1.0, true)];
        let r = rasterize(&dots, c, 1);
        assert_eq!(r.count(), 2);
        assert!((2..6).all(|x| r.get(x, 1) == 0));
        let out = [AbsPoint::new(-3.0, 1.0, true), AbsPoint::new(20.0, 1.0, false)];
        assert!(rasterize(&out, c, 1).clamped);
    }

    #[test]
    fn affine_examples() {
        let s = [AbsPoint::new(10.0, 20.0, true), AbsPoint::new(30.5, 7.25, false)];
        assert_eq!(apply_affine_sketch(&s, &AffineTransform::identity(c256())).unwrap(), s.to_vec());
        let f = apply_affine_sketch(&s, &AffineTransform::hflip(c256())).unwrap();
        assert_eq!((f[0].x, f[0].y), (245.0, 20.0));
        assert_eq!((f[1].x, f[1].y), (255.0 - 30.5, 7.25));
        let bad = AffineTransform::scale(c256(), -1.0);
        assert!(matches!(apply_affine_sketch(&s, &bad), Err(Error::UnsupportedTransform(_))));
    }

    #[test]
    fn rotation_turns_x_toward_y() {
        let c = Canvas::square(3);
        let (x, y) = AffineTransform::rotate(c, 90.0).apply_point(2.0, 1.0);
        assert!((x - 1.0).abs() < 1e-12 && (y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn offsets_transform_matches_absolute_transform() {
        let s = [
            AbsPoint::new(10.0, 20.0, true),
            AbsPoint::new(30.0, 7.0, false),
            AbsPoint::new(12.0, 40.0, true),
            AbsPoint::new(2.0, 4.0, false),
        ];
        for t in [
            AffineTransform::hflip(c256()),
            AffineTransform::rotate(c256(), 13.0),
            AffineTransform::scale(c256(), 1.1),
        ] {
            let via_abs = absolute_to_offsets(&apply_affine_sketch(&s, &t).unwrap(), c256(), 2.0).unwrap();
            let direct = apply_affine_offsets(&absolute_to_offsets(&s, c256(), 2.0).unwrap(), &t).unwrap();
            for (a, b) in via_abs.points.iter().zip(&direct.points) {
                assert!((a.dx - b.dx).abs() < 1e-9 && (a.dy - b.dy).abs() < 1e-9);
                assert_eq!(a.pen, b.pen);
            }
        }
    }

    #[test]
    fn padding_examples() {
        let seq = SketchSequence {
            points: vec![
                Stroke5::new(1.0, 2.0, PenState::Down),
                Stroke5::new(3.0, 4.0, PenState::Down),
                Stroke5::end(),
            ],
            canvas: c256(),
            scale_factor: 1.0,
        };
        let p = pad_and_mask(&seq, 5).unwrap();
        assert_eq!(p.mask, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(&p.points[..3], &seq.points[..]);
        assert!(p.points[3..].iter().all(|q| *q == Stroke5::ZERO));
        assert_eq!(pad_and_mask(&seq, 3).unwrap().mask, vec![1.0; 3]);
        assert!(matches!(pad_and_mask(&seq, 2), Err(Error::SequenceTooLong { len: 3, max: 2 })));
    }

    fn seq_of(offsets: &[(f64, f64)]) -> SketchSequence {
        SketchSequence {
            points: offsets
                .iter()
                .map(|&(x, y)| Stroke5::new(x, y, PenState::Down))
                .chain([Stroke5::end()])
                .collect(),
            canvas: c256(),
            scale_factor: 1.0,
        }
    }

    #[test]
    fn offset_scale_pooled_std() {
        // pooled values {1, 0, -1, 0}: mean 0, population variance 0.5
        let s = compute_offset_scale(&[seq_of(&[(1.0, 0.0), (-1.0, 0.0)])]).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            compute_offset_scale(&[seq_of(&[(0.0, 0.0), (0.0, 0.0)])]),
            Err(Error::DegenerateDataset(_))
        ));
        let base = [(1.0, 2.0), (-3.0, 0.5), (0.25, -1.0)];
        let k = 3.5;
        let scaled: Vec<_> = base.iter().map(|&(x, y)| (k * x, k * y)).collect();
        let a = compute_offset_scale(&[seq_of(&base)]).unwrap();
        let b = compute_offset_scale(&[seq_of(&scaled)]).unwrap();
        assert!((b - k * a).abs() < 1e-12);
    }

    #[test]
    fn ndjson_rejects_single_point() {
        let r = SketchRecord {
            canvas: [64, 64],
            strokes: vec![vec![[1.0, 2.0]]],
        };
        assert!(r.to_points().is_err());
        let mut buf = Vec::new();
        let ok = SketchRecord {
            canvas: [64, 64],
            strokes: vec![vec![[1.0, 2.0], [3.0, 4.0]], vec![[5.0, 5.0]]],
        };
        write_ndjson(&mut buf, &[ok.clone()]).unwrap();
        assert_eq!(read_ndjson(&buf[..]).unwrap(), vec![ok]);
    }
}
