//! Saliency metrics: MAE, max F-beta, weighted F-beta, S-measure and
//! precision-recall curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub beta_sq: f64,
    pub s_alpha: f64,
    /// Number of binarization thresholds `k / (n - 1)`.
    pub thresholds: usize,
    /// Report the mean of per-image max F-beta instead of the max of the
    /// dataset-mean curve.
    pub per_image_max_fbeta: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            beta_sq: 0.3,
            s_alpha: 0.5,
            thresholds: 256,
            per_image_max_fbeta: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_sq > 0.0) || !(0.0..=1.0).contains(&self.s_alpha) || self.thresholds < 2 {
            return Err(Error::Config(format!("invalid metric config {self:?}")));
        }
        Ok(())
    }

    pub fn threshold(&self, k: usize) -> f64 {
        k as f64 / (self.thresholds - 1) as f64
    }
}

/// A prediction and its binary ground truth over the same `h x w` grid.
#[derive(Clone, Copy, Debug)]
pub struct Pair<'a> {
    pub pred: &'a [f64],
    pub gt: &'a [u8],
    pub height: usize,
    pub width: usize,
}

impl<'a> Pair<'a> {
    pub fn new(pred: &'a [f64], gt: &'a [u8], height: usize, width: usize) -> Result<Self> {
        if pred.len() != height * width || gt.len() != height * width {
            return Err(Error::Shape(format!(
                "prediction has {} values, mask {}, expected {}",
                pred.len(),
                gt.len(),
                height * width
            )));
        }
        Ok(Self { pred, gt, height, width })
    }

    fn positives(&self) -> usize {
        self.gt.iter().filter(|&&g| g != 0).count()
    }
}

pub fn mae(p: Pair<'_>) -> f64 {
    p.pred
        .iter()
        .zip(p.gt)
        .map(|(&s, &g)| (s - g as f64).abs())
        .sum::<f64>()
        / p.pred.len() as f64
}

pub fn fbeta(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den > 0.0 {
        (1.0 + beta_sq) * precision * recall / den
    } else {
        0.0
    }
}

/// Precision and recall of `pred >= threshold`; precision is 0 when nothing
/// is predicted positive.
pub fn precision_recall(p: Pair<'_>, threshold: f64) -> (f64, f64) {
    let (mut tp, mut pp) = (0usize, 0usize);
    for (&s, &g) in p.pred.iter().zip(p.gt) {
        if s >= threshold {
            pp += 1;
            if g != 0 {
                tp += 1;
            }
        }
    }
    let pos = p.positives();
    let prec = if pp > 0 { tp as f64 / pp as f64 } else { 0.0 };
    let rec = if pos > 0 { tp as f64 / pos as f64 } else { 0.0 };
    (prec, rec)
}

/// `(precision, recall)` at every grid threshold, ascending.
pub fn pr_points(p: Pair<'_>, cfg: &MetricConfig) -> Result<Vec<(f64, f64)>> {
    if p.positives() == 0 {
        return Err(Error::UndefinedMetric("ground truth has no positive pixel".into()));
    }
    // histogram of grid bins makes the sweep linear in pixels
    let n = cfg.thresholds;
    let bin = |s: f64| -> usize {
        let k = (s.clamp(0.0, 1.0) * (n - 1) as f64).floor() as usize;
        // `s >= k/(n-1)` must hold exactly for the chosen bin
        let mut k = k.min(n - 1);
        while k > 0 && s < cfg.threshold(k) {
            k -= 1;
        }
        while k + 1 < n && s >= cfg.threshold(k + 1) {
            k += 1;
        }
        k
    };
    let mut fg = vec![0usize; n];
    let mut all = vec![0usize; n];
    for (&s, &g) in p.pred.iter().zip(p.gt) {
        if s < 0.0 {
            continue;
        }
        let k = bin(s);
        all[k] += 1;
        if g != 0 {
            fg[k] += 1;
        }
    }
    let pos = p.positives() as f64;
    let mut out = vec![(0.0, 0.0); n];
    let (mut tp, mut pp) = (0usize, 0usize);
    for k in (0..n).rev() {
        tp += fg[k];
        pp += all[k];
        let prec = if pp > 0 { tp as f64 / pp as f64 } else { 0.0 };
        out[k] = (prec, tp as f64 / pos);
    }
    Ok(out)
}

/// Best F-beta over the threshold grid for one image: `(score, threshold)`.
pub fn max_fbeta(p: Pair<'_>, cfg: &MetricConfig) -> Result<(f64, f64)> {
    let pts = pr_points(p, cfg)?;
    Ok(best_of(&pts, cfg))
}

fn best_of(pts: &[(f64, f64)], cfg: &MetricConfig) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (k, &(pr, rc)) in pts.iter().enumerate() {
        let f = fbeta(pr, rc, cfg.beta_sq);
        if f > best.0 {
            best = (f, cfg.threshold(k));
        }
    }
    best
}

/// Dataset-level precision/recall: per-threshold means over images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(threshold, precision, recall)`, ascending threshold.
    pub points: Vec<(f64, f64, f64)>,
    pub images: usize,
    pub skipped: usize,
}

impl PrCurve {
    pub fn max_fbeta(&self, beta_sq: f64) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &(t, pr, rc) in &self.points {
            let f = fbeta(pr, rc, beta_sq);
            if f > best.0 {
                best = (f, t);
            }
        }
        best
    }

    /// `(recall, precision)` pairs in threshold order.
    pub fn recall_precision(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|&(_, p, r)| (r, p)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for (t, p, r) in &self.points {
            s.push_str(&format!("{t:.6},{p:.6},{r:.6}\n"));
        }
        s
    }
}

/// Average per-threshold precision and recall; images without positives
/// are skipped and counted.
pub fn pr_curve(pairs: &[Pair<'_>], cfg: &MetricConfig) -> Result<PrCurve> {
    cfg.validate()?;
    let n = cfg.thresholds;
    let mut sp = vec![0.0; n];
    let mut sr = vec![0.0; n];
    let mut used = 0;
    let mut skipped = 0;
    for p in pairs {
        match pr_points(*p, cfg) {
            Ok(pts) => {
                for (k, (pr, rc)) in pts.into_iter().enumerate() {
                    sp[k] += pr;
                    sr[k] += rc;
                }
                used += 1;
            }
            Err(Error::UndefinedMetric(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("no image has a positive pixel".into()));
    }
    let u = used as f64;
    Ok(PrCurve {
        points: (0..n).map(|k| (cfg.threshold(k), sp[k] / u, sr[k] / u)).collect(),
        images: used,
        skipped,
    })
}

/// Normalized 7x7 Gaussian window with sigma 5.
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut s = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * 25.0)).exp();
            s += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= s);
    k
}

/// Distance to, and index of, the nearest positive pixel (ties broken by the
/// lowest row-major index). Only boundary positives can be nearest to a
/// negative pixel, so they are the only candidates searched.
fn nearest_positive(gt: &[u8], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let is_pos = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && gt[y as usize * w + x as usize] != 0
    };
    let boundary: Vec<usize> = (0..h * w)
        .filter(|&i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            gt[i] != 0
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|&(dy, dx)| !is_pos(y + dy, x + dx))
        })
        .collect();
    let mut dist = vec![0.0; h * w];
    let mut idx: Vec<usize> = (0..h * w).collect();
    for i in 0..h * w {
        if gt[i] != 0 {
            continue;
        }
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let mut best = (f64::INFINITY, 0);
        for &b in &boundary {
            let (by, bx) = ((b / w) as f64, (b % w) as f64);
            let d2 = (by - y).powi(2) + (bx - x).powi(2);
            if d2 < best.0 {
                best = (d2, b);
            }
        }
        dist[i] = best.0.sqrt();
        idx[i] = best.1;
    }
    (dist, idx)
}

/// Weighted F-beta: errors propagated from the nearest object pixel,
/// smoothed by a Gaussian dependency window, and background errors weighted
/// up with distance from the object.
pub fn weighted_fbeta(p: Pair<'_>, cfg: &MetricConfig) -> Result<f64> {
    if p.positives() == 0 {
        return Err(Error::UndefinedMetric("ground truth has no positive pixel".into()));
    }
    if p.pred.iter().all(|&v| v <= 0.0) {
        return Ok(0.0);
    }
    let (h, w) = (p.height, p.width);
    let eps = f64::EPSILON;
    let e: Vec<f64> = p.pred.iter().zip(p.gt).map(|(&s, &g)| (g as f64 - s).abs()).collect();
    let (dist, idx) = nearest_positive(p.gt, h, w);
    let et: Vec<f64> = (0..h * w).map(|i| if p.gt[i] != 0 { e[i] } else { e[idx[i]] }).collect();
    let k = gaussian_kernel();
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, row) in k.iter().enumerate() {
                let yy = y as isize + i as isize - 3;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (j, kv) in row.iter().enumerate() {
                    let xx = x as isize + j as isize - 3;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    s += kv * et[yy as usize * w + xx as usize];
                }
            }
            ea[y * w + x] = s;
        }
    }
    let alpha = 0.5f64.ln() / 5.0;
    let (mut tp, mut fp, mut err_fg) = (0.0, 0.0, 0.0);
    let pos = p.positives() as f64;
    for i in 0..h * w {
        if p.gt[i] != 0 {
            let m = if ea[i] < e[i] { ea[i] } else { e[i] };
            err_fg += m;
        } else {
            let b = 2.0 - (alpha * dist[i]).exp();
            fp += e[i] * b;
        }
    }
    tp += pos - err_fg;
    let r = 1.0 - err_fg / pos;
    let pr = tp / (eps + tp + fp);
    Ok((1.0 + cfg.beta_sq) * r * pr / (eps + r + cfg.beta_sq * pr))
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + f64::EPSILON)
}

fn s_object(p: Pair<'_>) -> f64 {
    let fg = p.pred.iter().zip(p.gt).filter(|(_, &g)| g != 0).map(|(&s, _)| s);
    let bg = p.pred.iter().zip(p.gt).filter(|(_, &g)| g == 0).map(|(&s, _)| 1.0 - s);
    let u = p.positives() as f64 / p.gt.len() as f64;
    u * object_score(fg) + (1.0 - u) * object_score(bg)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let eps = f64::EPSILON;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let sx = pred.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0 + eps);
    let sy = gt.iter().map(|v| (v - y).powi(2)).sum::<f64>() / (n - 1.0 + eps);
    let sxy = pred.iter().zip(gt).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / (n - 1.0 + eps);
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx + sy);
    if a != 0.0 {
        a / (b + eps)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(p: Pair<'_>) -> f64 {
    let (h, w) = (p.height, p.width);
    let total = p.positives() as f64;
    // object centroid, 1-based and rounded; splits are [0, cx) and [cx, w)
    let (cx, cy) = if total == 0.0 {
        ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize)
    } else {
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in 0..h * w {
            if p.gt[i] != 0 {
                sx += (i % w + 1) as f64;
                sy += (i / w + 1) as f64;
            }
        }
        ((sx / total).round() as usize, (sy / total).round() as usize)
    };
    let area = (h * w) as f64;
    let mut score = 0.0;
    for (y0, y1) in [(0, cy), (cy, h)] {
        for (x0, x1) in [(0, cx), (cx, w)] {
            if y1 <= y0 || x1 <= x0 {
                continue;
            }
            let mut a = Vec::new();
            let mut b = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    a.push(p.pred[y * w + x]);
                    b.push(p.gt[y * w + x] as f64);
                }
            }
            let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
            score += weight * ssim(&a, &b);
        }
    }
    score
}

/// Structure measure `alpha * S_object + (1 - alpha) * S_region`, clipped
/// at zero; all-background and all-object masks use the mean prediction.
pub fn s_measure(p: Pair<'_>, cfg: &MetricConfig) -> f64 {
    let y = p.positives() as f64 / p.gt.len() as f64;
    let x = p.pred.iter().sum::<f64>() / p.pred.len() as f64;
    let q = if y == 0.0 {
        1.0 - x
    } else if y == 1.0 {
        x
    } else {
        cfg.s_alpha * s_object(p) + (1.0 - cfg.s_alpha) * s_region(p)
    };
    q.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub max_fbeta: f64,
    pub best_threshold: f64,
    pub weighted_fbeta: f64,
    pub s_measure: f64,
    /// `(recall, precision)` per threshold.
    pub pr_curve: Vec<(f64, f64)>,
    pub images: usize,
}

/// Per-image scores used for CSV export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub id: String,
    pub mae: f64,
    pub max_fbeta: f64,
    pub weighted_fbeta: f64,
    pub s_measure: f64,
}

/// Dataset report: means of the per-image scores and dataset-level max F-beta.
pub fn evaluate_pairs(pairs: &[Pair<'_>], cfg: &MetricConfig) -> Result<(EvalReport, Vec<ImageScores>)> {
    let curve = pr_curve(pairs, cfg)?;
    let mut per = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let has_pos = p.positives() > 0;
        per.push(ImageScores {
            id: i.to_string(),
            mae: mae(*p),
            max_fbeta: if has_pos { max_fbeta(*p, cfg)?.0 } else { f64::NAN },
            weighted_fbeta: if has_pos { weighted_fbeta(*p, cfg)? } else { f64::NAN },
            s_measure: s_measure(*p, cfg),
        });
    }
    let mean = |f: &dyn Fn(&ImageScores) -> f64| {
        let v: Vec<f64> = per.iter().map(f).filter(|v| v.is_finite()).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let (mut best, thr) = curve.max_fbeta(cfg.beta_sq);
    if cfg.per_image_max_fbeta {
        best = mean(&|s| s.max_fbeta);
    }
    Ok((
        EvalReport {
            mae: mean(&|s| s.mae),
            max_fbeta: best,
            best_threshold: thr,
            weighted_fbeta: mean(&|s| s.weighted_fbeta),
            s_measure: mean(&|s| s.s_measure),
            pr_curve: curve.recall_precision(),
            images: pairs.len(),
        },
        per,
    ))
}

/// Mean of per-image max F-beta (the per-image aggregation variant).
pub fn mean_image_max_fbeta(pairs: &[Pair<'_>], cfg: &MetricConfig) -> Result<f64> {
    let mut s = 0.0;
    let mut n = 0;
    for p in pairs {
        if p.positives() > 0 {
            s += max_fbeta(*p, cfg)?.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no image has a positive pixel".into()));
    }
    Ok(s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair<'a>(pred: &'a [f64], gt: &'a [u8], h: usize, w: usize) -> Pair<'a> {
        Pair::new(pred, gt, h, w).unwrap()
    }

    #[test]
    fn mae_examples() {
        let gt = [1, 0, 0, 1];
        assert_eq!(mae(pair(&[1.0, 0.0, 0.0, 1.0], &gt, 2, 2)), 0.0);
        assert_eq!(mae(pair(&[1.0; 4], &[0; 4], 2, 2)), 1.0);
        assert_eq!(mae(pair(&[0.5; 4], &gt, 2, 2)), 0.5);
        assert!(matches!(Pair::new(&[0.0; 3], &gt, 2, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn fbeta_perfect_and_inverted() {
        let cfg = MetricConfig::default();
        let gt = [1, 0, 0, 1, 1, 0];
        let pred: Vec<f64> = gt.iter().map(|&g| g as f64).collect();
        let (f, t) = max_fbeta(pair(&pred, &gt, 2, 3), &cfg).unwrap();
        assert!((f - 1.0).abs() < 1e-15 && t > 0.0);
        let inv: Vec<f64> = pred.iter().map(|v| 1.0 - v).collect();
        let (f, t) = max_fbeta(pair(&inv, &gt, 2, 3), &cfg).unwrap();
        let a = 0.5;
        assert!((f - 1.3 * a / (0.3 * a + 1.0)).abs() < 1e-12);
        assert_eq!(t, 0.0);
        assert!(matches!(max_fbeta(pair(&pred, &[0; 6], 2, 3), &cfg), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn weighted_fbeta_extremes() {
        let cfg = MetricConfig::default();
        let gt: Vec<u8> = (0..64).map(|i| u8::from((2..6).contains(&(i % 8)) && (2..6).contains(&(i / 8)))).collect();
        let pred: Vec<f64> = gt.iter().map(|&g| g as f64).collect();
        assert!((weighted_fbeta(pair(&pred, &gt, 8, 8), &cfg).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(weighted_fbeta(pair(&[0.0; 64], &gt, 8, 8), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn s_measure_examples() {
        let cfg = MetricConfig::default();
        let gt: Vec<u8> = (0..64).map(|i| u8::from(i % 8 < 4)).collect();
        let pred: Vec<f64> = gt.iter().map(|&g| g as f64).collect();
        assert!((s_measure(pair(&pred, &gt, 8, 8), &cfg) - 1.0).abs() < 1e-6);
        let inv: Vec<f64> = pred.iter().map(|v| 1.0 - v).collect();
        assert!(s_measure(pair(&inv, &gt, 8, 8), &cfg) < 0.5);
        let obj = MetricConfig { s_alpha: 1.0, ..cfg };
        let p = pair(&[0.3; 64], &gt, 8, 8);
        assert!((s_measure(p, &obj) - s_object(p)).abs() < 1e-15);
    }

    #[test]
    fn pr_curve_properties() {
        let cfg = MetricConfig::default();
        let gt = [1, 1, 0, 0];
        let pred = [1.0, 1.0, 0.0, 0.0];
        let c = pr_curve(&[pair(&pred, &gt, 2, 2)], &cfg).unwrap();
        assert!(c.recall_precision().contains(&(1.0, 1.0)));
        assert_eq!(c.points[0].2, 1.0);
        let pred = [0.9, 0.2, 0.6, 0.1];
        let c = pr_curve(&[pair(&pred, &gt, 2, 2), pair(&pred, &[0; 4], 2, 2)], &cfg).unwrap();
        assert_eq!(c.skipped, 1);
        assert!(c.points.windows(2).all(|w| w[1].2 <= w[0].2));
    }
}
