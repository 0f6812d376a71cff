//! Sparse spatial resampling shared by photo resizing, attention-scale fusion,
//! saliency upsampling and affine warps.
//!
//! Every grid uses half-pixel centers: output index `o` of an axis of length
//! `n_out` reads the input at continuous position `(o + 0.5) * n_in / n_out - 0.5`.
//! Resizing a grid to its own size is therefore the identity.

use crate::sketch_vector::AffineTransform;

/// Per-output-index bilinear taps `(lo, hi, frac)` along one axis, with the
/// sample position clamped into `[0, n_in - 1]`.
pub fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    assert!(n_in > 0 && n_out > 0);
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// A linear map from an `in_h x in_w` grid to an `out_h x out_w` grid stored
/// in compressed rows: output pixel `p` is `sum(w * x[idx])` over its taps.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMap {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    row_start: Vec<usize>,
    idx: Vec<usize>,
    weight: Vec<f64>,
}

impl SpatialMap {
    fn from_rows(
        in_hw: (usize, usize),
        out_hw: (usize, usize),
        rows: impl Iterator<Item = Vec<(usize, f64)>>,
    ) -> Self {
        let mut row_start = vec![0];
        let mut idx = Vec::new();
        let mut weight = Vec::new();
        for row in rows {
            for (i, w) in row {
                if w != 0.0 {
                    idx.push(i);
                    weight.push(w);
                }
            }
            row_start.push(idx.len());
        }
        assert_eq!(row_start.len(), out_hw.0 * out_hw.1 + 1);
        Self {
            in_h: in_hw.0,
            in_w: in_hw.1,
            out_h: out_hw.0,
            out_w: out_hw.1,
            row_start,
            idx,
            weight,
        }
    }

    /// Bilinear resize (up or down, no anti-aliasing).
    pub fn bilinear(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        let ty = axis_taps(in_h, out_h);
        let tx = axis_taps(in_w, out_w);
        let rows = (0..out_h).flat_map(|oy| {
            let (y0, y1, fy) = ty[oy];
            let tx = &tx;
            (0..out_w).map(move |ox| {
                let (x0, x1, fx) = tx[ox];
                let mut row = Vec::with_capacity(4);
                push_merged(&mut row, y0 * in_w + x0, (1.0 - fy) * (1.0 - fx));
                push_merged(&mut row, y0 * in_w + x1, (1.0 - fy) * fx);
                push_merged(&mut row, y1 * in_w + x0, fy * (1.0 - fx));
                push_merged(&mut row, y1 * in_w + x1, fy * fx);
                row
            })
        });
        Self::from_rows((in_h, in_w), (out_h, out_w), rows)
    }

    /// Warp an `h x w` grid covering the transform's canvas so that the content
    /// moves by `t`. Each output cell samples the input at the inverse-mapped
    /// position; samples outside the grid contribute zero.
    pub fn affine_warp(h: usize, w: usize, t: &AffineTransform) -> Self {
        let (canvas_h, canvas_w) = t.canvas();
        let inv = t.inverse();
        let sy = canvas_h as f64 / h as f64;
        let sx = canvas_w as f64 / w as f64;
        let rows = (0..h).flat_map(|gy| {
            let inv = &inv;
            (0..w).map(move |gx| {
                // grid cell center -> canvas pixel coordinates
                let cx = (gx as f64 + 0.5) * sx - 0.5;
                let cy = (gy as f64 + 0.5) * sy - 0.5;
                let (px, py) = inv.apply_point(cx, cy);
                let u = (px + 0.5) / sx - 0.5;
                let v = (py + 0.5) / sy - 0.5;
                bilinear_taps_zero_pad(u, v, h, w)
            })
        });
        Self::from_rows((h, w), (h, w), rows)
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Apply to `channels` stacked planes.
    pub fn apply(&self, x: &[f64], channels: usize) -> Vec<f64> {
        let (n_in, n_out) = (self.in_len(), self.out_len());
        assert_eq!(x.len(), channels * n_in);
        let mut out = vec![0.0; channels * n_out];
        for c in 0..channels {
            let src = &x[c * n_in..(c + 1) * n_in];
            let dst = &mut out[c * n_out..(c + 1) * n_out];
            for (p, d) in dst.iter_mut().enumerate() {
                let (a, b) = (self.row_start[p], self.row_start[p + 1]);
                *d = self.idx[a..b]
                    .iter()
                    .zip(&self.weight[a..b])
                    .map(|(&i, &w)| w * src[i])
                    .sum();
            }
        }
        out
    }

    /// Accumulate the transposed map: `gx += M^T gy`.
    pub fn apply_transpose_into(&self, gy: &[f64], channels: usize, gx: &mut [f64]) {
        let (n_in, n_out) = (self.in_len(), self.out_len());
        assert_eq!(gy.len(), channels * n_out);
        assert_eq!(gx.len(), channels * n_in);
        for c in 0..channels {
            let src = &gy[c * n_out..(c + 1) * n_out];
            let dst = &mut gx[c * n_in..(c + 1) * n_in];
            for (p, &g) in src.iter().enumerate() {
                let (a, b) = (self.row_start[p], self.row_start[p + 1]);
                for (&i, &w) in self.idx[a..b].iter().zip(&self.weight[a..b]) {
                    dst[i] += w * g;
                }
            }
        }
    }
}

fn push_merged(row: &mut Vec<(usize, f64)>, i: usize, w: f64) {
    if let Some(slot) = row.iter_mut().find(|(j, _)| *j == i) {
        slot.1 += w;
    } else {
        row.push((i, w));
    }
}

/// Bilinear taps at continuous grid position `(u, v)` (x, y), dropping
/// neighbours that fall outside the grid.
fn bilinear_taps_zero_pad(u: f64, v: f64, h: usize, w: usize) -> Vec<(usize, f64)> {
    // snap round-off so exact permutations (flips, quarter turns) stay exact
    let snap = |z: f64| {
        let r = z.round();
        if (z - r).abs() < 1e-9 {
            r
        } else {
            z
        }
    };
    let (u, v) = (snap(u), snap(v));
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let mut row = Vec::with_capacity(4);
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (xx, yy) = (x0 + dx, y0 + dy);
            let wgt = wy * wx;
            if wgt == 0.0 || xx < 0.0 || yy < 0.0 || xx >= w as f64 || yy >= h as f64 {
                continue;
            }
            row.push((yy as usize * w + xx as usize, wgt));
        }
    }
    row
}
