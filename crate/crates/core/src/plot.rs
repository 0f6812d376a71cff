//! Minimal raster plots: precision-recall curves and bar charts on a unit
//! grid, without text.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

const MARGIN: u32 = 24;

struct Frame {
    img: RgbImage,
    w: u32,
    h: u32,
}

impl Frame {
    fn new(w: u32, h: u32) -> Self {
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        let (x0, y0, x1, y1) = (MARGIN, MARGIN, w - MARGIN, h - MARGIN);
        for k in 0..=10 {
            let gx = x0 + (x1 - x0) * k / 10;
            let gy = y0 + (y1 - y0) * k / 10;
            let c = if k == 0 || k == 10 { Rgb([0, 0, 0]) } else { Rgb([225, 225, 225]) };
            for y in y0..=y1 {
                img.put_pixel(gx, y, c);
            }
            for x in x0..=x1 {
                img.put_pixel(x, gy, c);
            }
        }
        Self { img, w, h }
    }

    /// Unit coordinates (origin bottom-left) to pixels.
    fn to_px(&self, u: f64, v: f64) -> (f64, f64) {
        let span_x = (self.w - 2 * MARGIN) as f64;
        let span_y = (self.h - 2 * MARGIN) as f64;
        (
            MARGIN as f64 + u.clamp(0.0, 1.0) * span_x,
            (self.h - MARGIN) as f64 - v.clamp(0.0, 1.0) * span_y,
        )
    }

    fn dot(&mut self, x: f64, y: f64, c: [u8; 3]) {
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (px, py) = (xi + dx, yi + dy);
                if px >= 0 && py >= 0 && (px as u32) < self.w && (py as u32) < self.h {
                    self.img.put_pixel(px as u32, py as u32, Rgb(c));
                }
            }
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: [u8; 3]) {
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            self.dot(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), c);
        }
    }
}

/// Curves of `(recall, precision)` points, one palette colour per curve in order.
pub fn pr_plot(curves: &[Vec<(f64, f64)>], width: u32, height: u32) -> Result<RgbImage> {
    if width <= 2 * MARGIN + 10 || height <= 2 * MARGIN + 10 {
        return Err(Error::Config(format!("plot size {width}x{height} is too small")));
    }
    let mut f = Frame::new(width, height);
    for (k, curve) in curves.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = curve.iter().filter(|(r, p)| r.is_finite() && p.is_finite()).copied().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let px: Vec<(f64, f64)> = pts.iter().map(|&(r, p)| f.to_px(r, p)).collect();
        for w in px.windows(2) {
            f.line(w[0], w[1], c);
        }
        if let [only] = px[..] {
            f.dot(only.0, only.1, c);
        }
    }
    Ok(f.img)
}

/// One bar per value in `[0, 1]`, coloured by `group`.
pub fn bar_plot(values: &[(usize, f64)], width: u32, height: u32) -> Result<RgbImage> {
    if values.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let mut f = Frame::new(width, height);
    let n = values.len() as f64;
    for (i, &(group, v)) in values.iter().enumerate() {
        let c = PALETTE[group % PALETTE.len()];
        let (x_lo, _) = f.to_px((i as f64 + 0.15) / n, 0.0);
        let (x_hi, y_top) = f.to_px((i as f64 + 0.85) / n, v);
        let (_, y_base) = f.to_px(0.0, 0.0);
        for x in x_lo.round() as u32..=x_hi.round() as u32 {
            for y in y_top.round() as u32..=y_base.round() as u32 {
                f.img.put_pixel(x, y, Rgb(c));
            }
        }
    }
    Ok(f.img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Parse the `threshold,precision,recall` CSV written by the evaluator into
/// `(recall, precision)` points.
pub fn read_pr_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("threshold")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("line {}: {e}", i + 1)));
        if cols.len() != 3 {
            return Err(Error::Config(format!("line {}: expected 3 columns", i + 1)));
        }
        out.push((parse(cols[2])?, parse(cols[1])?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pr_plot_draws_in_curve_colour() {
        let img = pr_plot(&[vec![(0.0, 1.0), (1.0, 0.0)]], 100, 100).unwrap();
        let centre = img.get_pixel(50, 50).0;
        assert_eq!(centre, PALETTE[0]);
        assert_eq!(img.dimensions(), (100, 100));
    }

    #[test]
    fn csv_round_trip() {
        let pts = read_pr_csv("threshold,precision,recall\n0,0.5,1\n1,1,0.25\n").unwrap();
        assert_eq!(pts, vec![(1.0, 0.5), (0.25, 1.0)]);
        assert!(read_pr_csv("0,1\n").is_err());
    }
}
