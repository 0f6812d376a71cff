//! Paired photo/sketch data: synthetic generation with ground-truth masks,
//! manifest loading, photo preprocessing and transform sampling.

use std::f64::consts::PI;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::resample::SpatialMap;
use crate::sketch_vector::{
    absolute_to_offsets, rdp_simplify, read_ndjson, AbsPoint, AffineTransform, Canvas, SketchRecord,
    SketchSequence,
};
use crate::tensor::Tensor;

/// RGB photo stored channel-major as a `(3, H, W)` tensor in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotoSample {
    pub id: String,
    pub pixels: Tensor,
}

impl PhotoSample {
    pub fn new(id: impl Into<String>, pixels: Tensor) -> Self {
        assert_eq!(pixels.shape().len(), 3);
        assert_eq!(pixels.shape()[0], 3);
        Self {
            id: id.into(),
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn canvas(&self) -> Canvas {
        Canvas {
            height: self.height(),
            width: self.width(),
        }
    }
}

/// Bilinear resize to `side x side`.
pub fn resize_photo(photo: &PhotoSample, side: usize) -> PhotoSample {
    assert!(side > 0);
    let (h, w) = (photo.height(), photo.width());
    if (h, w) == (side, side) {
        return photo.clone();
    }
    let map = SpatialMap::bilinear(h, w, side, side);
    let out = map.apply(photo.pixels.data(), 3);
    PhotoSample::new(photo.id.clone(), Tensor::from_vec(&[3, side, side], out))
}

/// Warp a photo by `t` (bilinear, zero outside the canvas).
pub fn warp_photo(photo: &PhotoSample, t: &AffineTransform) -> PhotoSample {
    if t.is_identity() {
        return photo.clone();
    }
    let map = SpatialMap::affine_warp(photo.height(), photo.width(), t);
    let out = map.apply(photo.pixels.data(), 3);
    PhotoSample::new(photo.id.clone(), Tensor::from_vec(photo.pixels.shape(), out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub photo: PhotoSample,
    /// Absolute points in photo pixel coordinates.
    pub points: Vec<AbsPoint>,
    pub sketch: SketchSequence,
    /// Binary `H x W` mask (1 = object), present for synthetic data.
    pub gt_mask: Option<Vec<u8>>,
}

impl PairedSample {
    pub fn mask_f64(&self) -> Option<Vec<f64>> {
        self.gt_mask
            .as_ref()
            .map(|m| m.iter().map(|&v| v as f64).collect())
    }

    pub fn with_scale(&self, scale_factor: f64) -> Self {
        let mut out = self.clone();
        out.sketch = self.sketch.rescaled(scale_factor);
        out
    }
}

/// Rescale every sketch of a dataset to a shared offset divisor.
pub fn normalize_sketches(samples: &[PairedSample], scale_factor: f64) -> Vec<PairedSample> {
    samples.iter().map(|s| s.with_scale(scale_factor)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
    Star,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Circle,
        ShapeKind::Rectangle,
        ShapeKind::Triangle,
        ShapeKind::Star,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub side: usize,
    /// Allowed object area as a fraction of the canvas.
    pub area_min: f64,
    pub area_max: f64,
    pub shapes: Vec<ShapeKind>,
    /// Amplitude of background texture and photo noise.
    pub texture: f64,
    /// Simplification tolerance in pixels.
    pub rdp_epsilon: f64,
    /// Hand-drawn wobble of the outline, pixels.
    pub jitter: f64,
    /// Spacing of outline samples before simplification, pixels.
    pub outline_step: f64,
    /// Longest allowed stroke-5 sequence.
    pub max_len: usize,
    /// Up to this many small unsketched shapes scattered over the background.
    pub distractors: usize,
    pub distractor_area: (f64, f64),
    /// Start every outline at its top-most vertex instead of a random one.
    pub canonical_start: bool,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            side: 64,
            area_min: 0.05,
            area_max: 0.4,
            shapes: ShapeKind::ALL.to_vec(),
            texture: 0.3,
            rdp_epsilon: 0.5,
            jitter: 0.35,
            outline_step: 2.0,
            max_len: 48,
            distractors: 0,
            distractor_area: (0.01, 0.03),
            canonical_start: true,
            train: 500,
            val: 100,
            test: 100,
            seed: 0,
        }
    }
}

pub const MIN_SYNTH_SIDE: usize = 16;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < MIN_SYNTH_SIDE {
            return Err(Error::Config(format!(
                "canvas side {} is below the minimum {MIN_SYNTH_SIDE} for synthetic shapes",
                self.side
            )));
        }
        if !(0.0 < self.area_min && self.area_min < self.area_max && self.area_max < 0.9) {
            return Err(Error::Config(format!(
                "area range [{}, {}] must satisfy 0 < min < max < 0.9",
                self.area_min, self.area_max
            )));
        }
        if self.shapes.is_empty() {
            return Err(Error::Config("shape vocabulary is empty".into()));
        }
        if self.max_len < 4 {
            return Err(Error::Config("max_len must be at least 4".into()));
        }
        if !(self.outline_step > 0.0 && self.rdp_epsilon >= 0.0 && self.jitter >= 0.0 && self.texture >= 0.0) {
            return Err(Error::Config("outline parameters must be non-negative".into()));
        }
        let (a0, a1) = self.distractor_area;
        if self.distractors > 0 && !(0.0 < a0 && a0 <= a1 && a1 < 0.5) {
            return Err(Error::Config(format!("distractor area range [{a0}, {a1}] is invalid")));
        }
        Ok(())
    }

    /// Seed of sample `index` across the concatenated train/val/test splits.
    pub fn sample_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64)
            .rotate_left(17)
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Val => self.train..self.train + self.val,
            Split::Test => self.train + self.val..self.train + self.val + self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

fn unit_polygon<R: Rng>(kind: ShapeKind, rng: &mut R) -> Vec<(f64, f64)> {
    match kind {
        ShapeKind::Circle => (0..24)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 24.0;
                (a.cos(), a.sin())
            })
            .collect(),
        ShapeKind::Rectangle => {
            let aspect: f64 = rng.random_range(0.5..2.0);
            let (hx, hy) = (aspect.sqrt(), 1.0 / aspect.sqrt());
            vec![(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
        }
        ShapeKind::Triangle => (0..3)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 3.0 + rng.random_range(-0.2..0.2);
                (a.cos(), a.sin())
            })
            .collect(),
        ShapeKind::Star => (0..10)
            .map(|i| {
                let a = PI * i as f64 / 5.0;
                let r = if i % 2 == 0 { 1.0 } else { 0.45 };
                (r * a.cos(), r * a.sin())
            })
            .collect(),
    }
}

fn polygon_area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Fill mask sampled at pixel centers.
pub fn polygon_mask(poly: &[(f64, f64)], canvas: Canvas) -> Vec<u8> {
    let mut m = vec![0u8; canvas.height * canvas.width];
    for y in 0..canvas.height {
        for x in 0..canvas.width {
            if point_in_polygon(x as f64, y as f64, poly) {
                m[y * canvas.width + x] = 1;
            }
        }
    }
    m
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn render_photo<R: Rng>(rng: &mut R, mask: &[u8], clutter: &[Vec<u8>], side: usize, texture: f64) -> Tensor {
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let fg: [f64; 3] = loop {
        let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let d2: f64 = c.iter().zip(&bg).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2.sqrt() >= 0.35 {
            break c;
        }
    };
    let gratings: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..PI);
            let f: f64 = rng.random_range(0.15..0.6);
            (a.cos() * f, a.sin() * f, rng.random_range(0.0..2.0 * PI), rng.random_range(-1.0..1.0))
        })
        .collect();
    let clutter_rgb: Vec<[f64; 3]> = clutter
        .iter()
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
        .collect();
    let mut px = vec![0.0; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let i = y * side + x;
            let wave: f64 = gratings
                .iter()
                .map(|&(kx, ky, ph, _)| (kx * x as f64 + ky * y as f64 + ph).sin())
                .sum::<f64>()
                * 0.25
                * texture;
            for c in 0..3 {
                let d = clutter.iter().position(|m| m[i] != 0);
                let v = if mask[i] != 0 {
                    fg[c] + 0.25 * texture * rng.random_range(-1.0..1.0)
                } else if let Some(d) = d {
                    clutter_rgb[d][c] + 0.25 * texture * rng.random_range(-1.0..1.0)
                } else {
                    let tint = gratings[c % 2].3 * 0.5 + 0.5;
                    bg[c] + wave * tint + 0.5 * texture * rng.random_range(-1.0..1.0)
                };
                px[c * side * side + i] = quantize(v);
            }
        }
    }
    Tensor::from_vec(&[3, side, side], px)
}

fn outline<R: Rng>(rng: &mut R, poly: &[(f64, f64)], cfg: &SynthConfig) -> Result<Vec<(f64, f64)>> {
    let n = poly.len();
    let start = if cfg.canonical_start {
        (0..n)
            .min_by(|&a, &b| poly[a].1.total_cmp(&poly[b].1).then(poly[a].0.total_cmp(&poly[b].0)))
            .expect("polygon has vertices")
    } else {
        rng.random_range(0..n)
    };
    let noise = Normal::new(0.0, cfg.jitter.max(1e-12)).expect("valid sigma");
    let hi = (cfg.side - 1) as f64;
    let mut pts = Vec::new();
    for k in 0..n {
        let a = poly[(start + k) % n];
        let b = poly[(start + k + 1) % n];
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let steps = (len / cfg.outline_step).ceil().max(1.0) as usize;
        for s in 0..steps {
            let t = s as f64 / steps as f64;
            pts.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    pts.push(poly[start]);
    let pts: Vec<(f64, f64)> = pts
        .into_iter()
        .map(|(x, y)| {
            let (jx, jy) = if cfg.jitter > 0.0 {
                (noise.sample(rng), noise.sample(rng))
            } else {
                (0.0, 0.0)
            };
            ((x + jx).clamp(0.0, hi), (y + jy).clamp(0.0, hi))
        })
        .collect();
    rdp_simplify(&pts, cfg.rdp_epsilon)
}

fn distractor<R: Rng>(rng: &mut R, cfg: &SynthConfig, canvas: Canvas) -> Vec<u8> {
    let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
    let (s, c) = rng.random_range(0.0..2.0 * PI).sin_cos();
    let unit = unit_polygon(kind, rng);
    let (a0, a1) = cfg.distractor_area;
    let frac = if a0 < a1 { rng.random_range(a0..a1) } else { a0 };
    let k = (frac * (canvas.height * canvas.width) as f64 / polygon_area(&unit)).sqrt();
    let cx = rng.random_range(0.0..canvas.width as f64);
    let cy = rng.random_range(0.0..canvas.height as f64);
    let poly: Vec<(f64, f64)> = unit
        .iter()
        .map(|&(x, y)| ((c * x - s * y) * k + cx, (s * x + c * y) * k + cy))
        .collect();
    polygon_mask(&poly, canvas)
}

/// One synthetic pair: a filled shape over a textured background, its
/// outline as a single-stroke sketch and its fill mask. Offsets are left in
/// pixel units (scale factor 1).
pub fn generate_synthetic_pair(seed: u64, cfg: &SynthConfig) -> Result<PairedSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.side;
    let canvas = Canvas::square(side);
    let total = (side * side) as f64;
    for _ in 0..1000 {
        let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
        let theta: f64 = rng.random_range(0.0..2.0 * PI);
        let (s, c) = theta.sin_cos();
        let unit: Vec<(f64, f64)> = unit_polygon(kind, &mut rng)
            .into_iter()
            .map(|(x, y)| (c * x - s * y, s * x + c * y))
            .collect();
        let frac: f64 = rng.random_range(cfg.area_min..cfg.area_max);
        let k = (frac * total / polygon_area(&unit)).sqrt();
        let xs = unit.iter().map(|p| p.0 * k);
        let ys = unit.iter().map(|p| p.1 * k);
        let (x0, x1) = xs.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
        let (y0, y1) = ys.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
        let (lo, hi) = (1.0, side as f64 - 2.0);
        if x1 - x0 > hi - lo || y1 - y0 > hi - lo {
            continue;
        }
        let cx = rng.random_range(lo - x0..=hi - x1);
        let cy = rng.random_range(lo - y0..=hi - y1);
        let poly: Vec<(f64, f64)> = unit.iter().map(|p| (p.0 * k + cx, p.1 * k + cy)).collect();
        let mask = polygon_mask(&poly, canvas);
        let area = mask.iter().filter(|&&v| v != 0).count() as f64 / total;
        if area < cfg.area_min || area > cfg.area_max {
            continue;
        }
        let line = outline(&mut rng, &poly, cfg)?;
        if line.len() > cfg.max_len {
            continue;
        }
        let points: Vec<AbsPoint> = line
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| AbsPoint::new(x, y, i == 0))
            .collect();
        let sketch = absolute_to_offsets(&points, canvas, 1.0)?;
        let n_clutter = if cfg.distractors > 0 {
            rng.random_range(0..=cfg.distractors)
        } else {
            0
        };
        let clutter: Vec<Vec<u8>> = (0..n_clutter).map(|_| distractor(&mut rng, cfg, canvas)).collect();
        let pixels = render_photo(&mut rng, &mask, &clutter, side, cfg.texture);
        let photo = PhotoSample::new(format!("synth_{seed:016x}"), pixels);
        return Ok(PairedSample {
            photo,
            points,
            sketch,
            gt_mask: Some(mask),
        });
    }
    Err(Error::Config(format!(
        "could not place a shape on a {side}x{side} canvas within the configured bounds"
    )))
}

/// All samples of one split, in index order.
pub fn synthetic_split(cfg: &SynthConfig, split: Split) -> Result<Vec<PairedSample>> {
    cfg.split_range(split)
        .map(|i| {
            let mut s = generate_synthetic_pair(cfg.sample_seed(i), cfg)?;
            s.photo.id = format!("{}_{i:05}", split.name());
            Ok(s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub photo: String,
    pub sketch_idx: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

/// On-disk description of a paired dataset. Relative paths resolve against
/// the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub photos_dir: String,
    pub sketches_ndjson: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_dir: Option<String>,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn photo_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&self.photos_dir).join(&e.photo)
    }

    pub fn mask_path(&self, e: &ManifestEntry) -> Option<PathBuf> {
        let m = e.mask.as_ref()?;
        let dir = self.masks_dir.as_deref().unwrap_or(".");
        Some(self.root.join(dir).join(m))
    }

    pub fn sketches_path(&self) -> PathBuf {
        self.root.join(&self.sketches_ndjson)
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bad = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let sk = m.sketches_path();
    if !sk.is_file() {
        return Err(Error::Manifest {
            path: sk,
            reason: "sketch file not found".into(),
        });
    }
    for e in &m.entries {
        let p = m.photo_path(e);
        if !p.is_file() {
            return Err(Error::Manifest {
                path: p,
                reason: "photo not found".into(),
            });
        }
        if let Some(mp) = m.mask_path(e) {
            if !mp.is_file() {
                return Err(Error::Manifest {
                    path: mp,
                    reason: "mask not found".into(),
                });
            }
        }
    }
    Ok(m)
}

pub fn rescale_points(points: &[AbsPoint], from: Canvas, side: usize) -> Vec<AbsPoint> {
    let sx = side as f64 / from.width as f64;
    let sy = side as f64 / from.height as f64;
    points
        .iter()
        .map(|p| AbsPoint::new((p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5, p.starts_stroke))
        .collect()
}

/// Load one split, resizing photos (and sketches, masks) to `side`.
/// Offsets are in pixel units of the resized canvas.
pub fn load_split(manifest: &DatasetManifest, split: Split, side: usize) -> Result<Vec<PairedSample>> {
    let path = manifest.sketches_path();
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let records: Vec<SketchRecord> = read_ndjson(BufReader::new(file))?;
    let mut out = Vec::new();
    for e in manifest.entries_for(split) {
        let rec = records.get(e.sketch_idx).ok_or_else(|| Error::Manifest {
            path: path.clone(),
            reason: format!("sketch index {} out of range ({} records)", e.sketch_idx, records.len()),
        })?;
        let photo = imageio::load_photo(&manifest.photo_path(e))?;
        let photo = resize_photo(&photo, side);
        let points = rescale_points(&rec.to_points()?, rec.canvas(), side);
        let canvas = Canvas::square(side);
        let sketch = absolute_to_offsets(&points, canvas, 1.0)?;
        let gt_mask = match manifest.mask_path(e) {
            Some(p) => Some(imageio::load_mask(&p, side)?),
            None => None,
        };
        out.push(PairedSample {
            photo,
            points,
            sketch,
            gt_mask,
        });
    }
    Ok(out)
}

/// Write the synthetic dataset (photos, masks, sketches, manifest) under
/// `dir`; returns the manifest path.
pub fn write_synthetic_dataset(cfg: &SynthConfig, dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let photos = dir.join("photos");
    let masks = dir.join("masks");
    for d in [&photos, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut records = Vec::new();
    let mut entries = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for s in synthetic_split(cfg, split)? {
            let name = format!("{}.png", s.photo.id);
            imageio::save_photo(&photos.join(&name), &s.photo)?;
            let mask = s.gt_mask.as_ref().expect("synthetic samples carry masks");
            imageio::save_mask(&masks.join(&name), mask, cfg.side, cfg.side)?;
            entries.push(ManifestEntry {
                photo: name.clone(),
                sketch_idx: records.len(),
                split,
                mask: Some(name),
            });
            records.push(SketchRecord::from_points(&s.points, s.photo.canvas()));
        }
    }
    let sk = dir.join("sketches.ndjson");
    let mut buf = Vec::new();
    crate::sketch_vector::write_ndjson(&mut buf, &records).map_err(|e| Error::io(&sk, e))?;
    fs::write(&sk, buf).map_err(|e| Error::io(&sk, e))?;
    let manifest = DatasetManifest {
        photos_dir: "photos".into(),
        sketches_ndjson: "sketches.ndjson".into(),
        masks_dir: Some("masks".into()),
        entries,
        seed: cfg.seed,
        root: PathBuf::new(),
    };
    let mp = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mp, text + "\n").map_err(|e| Error::io(&mp, e))?;
    Ok(mp)
}

/// Relative weights of each transform kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineConfig {
    pub identity: f64,
    pub hflip: f64,
    pub vflip: f64,
    pub rotate: f64,
    pub scale: f64,
    /// Degrees.
    pub rotation_range: (f64, f64),
    pub scale_range: (f64, f64),
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            identity: 0.0,
            hflip: 0.5,
            vflip: 0.0,
            rotate: 0.25,
            scale: 0.25,
            rotation_range: (-15.0, 15.0),
            scale_range: (0.8, 1.2),
        }
    }
}

impl AffineConfig {
    pub fn only_hflip() -> Self {
        Self {
            identity: 0.0,
            hflip: 1.0,
            vflip: 0.0,
            rotate: 0.0,
            scale: 0.0,
            ..Self::default()
        }
    }

    fn weights(&self) -> [f64; 5] {
        [self.identity, self.hflip, self.vflip, self.rotate, self.scale]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("transform set is empty".into()));
        }
        let (r0, r1) = self.rotation_range;
        let (s0, s1) = self.scale_range;
        if self.rotate > 0.0 && !(r0.is_finite() && r1.is_finite() && r0 <= r1) {
            return Err(Error::Config("invalid rotation range".into()));
        }
        if self.scale > 0.0 && !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::Config("invalid scale range".into()));
        }
        Ok(())
    }
}

/// Draw a transform kind by weight, then its parameter uniformly.
pub fn sample_affine<R: Rng + ?Sized>(rng: &mut R, cfg: &AffineConfig, canvas: Canvas) -> Result<AffineTransform> {
    cfg.validate()?;
    let dist = WeightedIndex::new(cfg.weights()).map_err(|e| Error::Config(e.to_string()))?;
    let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..=hi) };
    Ok(match dist.sample(rng) {
        0 => AffineTransform::identity(canvas),
        1 => AffineTransform::hflip(canvas),
        2 => AffineTransform::vflip(canvas),
        3 => AffineTransform::rotate(canvas, uniform(rng, cfg.rotation_range)),
        _ => AffineTransform::scale(canvas, uniform(rng, cfg.scale_range)),
    })
}
