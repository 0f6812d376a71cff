//! PNG and raw-float I/O for photos, masks and saliency maps.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::data::PhotoSample;
use crate::error::{Error, Result};
use crate::resample::SpatialMap;
use crate::tensor::Tensor;

fn img_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_photo(path: &Path) -> Result<PhotoSample> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut px = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            px[c * h * w + y as usize * w + x as usize] = p.0[c] as f64 / 255.0;
        }
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PhotoSample::new(id, Tensor::from_vec(&[3, h, w], px)))
}

pub fn save_photo(path: &Path, photo: &PhotoSample) -> Result<()> {
    let (h, w) = (photo.height(), photo.width());
    let d = photo.pixels.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[h * w + i]), to_u8(d[2 * h * w + i])])
    });
    img.save(path).map_err(|e| img_err(path, e))
}

/// Binary mask (`> 127` is object), resized to `side` when needed.
pub fn load_mask(path: &Path, side: usize) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let vals: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    let vals = if (h, w) == (side, side) {
        vals
    } else {
        SpatialMap::bilinear(h, w, side, side).apply(&vals, 1)
    };
    Ok(vals.iter().map(|&v| u8::from(v > 0.5)).collect())
}

pub fn save_mask(path: &Path, mask: &[u8], h: usize, w: usize) -> Result<()> {
    let vals: Vec<f64> = mask.iter().map(|&m| m as f64).collect();
    save_gray(path, &vals, h, w)
}

/// 8-bit grayscale of values in `[0, 1]` (`round(255 v)`).
pub fn save_gray(path: &Path, values: &[f64], h: usize, w: usize) -> Result<()> {
    assert_eq!(values.len(), h * w);
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(values[y as usize * w + x as usize])]));
    img.save(path).map_err(|e| img_err(path, e))
}

pub fn load_gray(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(), h, w))
}

/// Lossless sidecar: `H`, `W` as little-endian u32 then `H*W` f32 values.
pub fn save_f32(path: &Path, values: &[f64], h: usize, w: usize) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * values.len());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_f32(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Shape(format!("{} is not a float map", path.display()));
    if buf.len() < 8 {
        return Err(bad());
    }
    let h = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    if buf.len() != 8 + 4 * h * w {
        return Err(bad());
    }
    let vals = buf[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((vals, h, w))
}

/// Blend a heat map (red) over a photo.
pub fn overlay(photo: &PhotoSample, heat: &[f64], strength: f64) -> PhotoSample {
    let (h, w) = (photo.height(), photo.width());
    assert_eq!(heat.len(), h * w);
    let mut px = photo.pixels.data().to_vec();
    for (i, &v) in heat.iter().enumerate() {
        let a = (strength * v).clamp(0.0, 1.0);
        px[i] = px[i] * (1.0 - a) + a;
        px[h * w + i] *= 1.0 - a;
        px[2 * h * w + i] *= 1.0 - a;
    }
    PhotoSample::new(photo.id.clone(), Tensor::from_vec(&[3, h, w], px))
}
