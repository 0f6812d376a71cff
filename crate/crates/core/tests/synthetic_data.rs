mod common;

use std::fs;
use std::path::{Path, PathBuf};

use s2s_core::data::{
    generate_synthetic_pair, load_manifest, load_split, sample_affine, synthetic_split, write_synthetic_dataset,
    AffineConfig, Split, SynthConfig,
};
use s2s_core::sketch_vector::{rasterize, Canvas, TransformKind};

fn small() -> SynthConfig {
    SynthConfig {
        train: 12,
        val: 3,
        test: 5,
        seed: 9,
        ..SynthConfig::default()
    }
}

/// Chebyshev distance from every listed pixel to the nearest pixel of `to`.
fn max_gap(from: &[(i64, i64)], to: &[(i64, i64)]) -> i64 {
    from.iter()
        .map(|a| to.iter().map(|b| (a.0 - b.0).abs().max((a.1 - b.1).abs())).min().unwrap())
        .max()
        .unwrap_or(0)
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for e in fs::read_dir(root.join(&rel)).unwrap() {
            let e = e.unwrap();
            let p = rel.join(e.file_name());
            if e.file_type().unwrap().is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn splits_are_reproducible() {
    let cfg = small();
    for split in [Split::Train, Split::Val, Split::Test] {
        assert_eq!(synthetic_split(&cfg, split).unwrap(), synthetic_split(&cfg, split).unwrap());
    }
    let other = SynthConfig { seed: 10, ..small() };
    assert_ne!(synthetic_split(&cfg, Split::Test).unwrap(), synthetic_split(&other, Split::Test).unwrap());
}

#[test]
fn written_datasets_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = write_synthetic_dataset(&small(), a.path()).unwrap();
    write_synthetic_dataset(&small(), b.path()).unwrap();
    let names = files_under(a.path());
    assert!(names.len() > 20);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
    let manifest = load_manifest(&ma).unwrap();
    let test = load_split(&manifest, Split::Test, 64).unwrap();
    let direct = synthetic_split(&small(), Split::Test).unwrap();
    assert_eq!(test.len(), 5);
    for (l, d) in test.iter().zip(&direct) {
        assert_eq!(l.gt_mask, d.gt_mask);
        assert_eq!(l.sketch.len(), d.sketch.len());
        for (p, q) in l.photo.pixels.data().iter().zip(d.photo.pixels.data()) {
            assert!((p - q).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn sketch_traces_the_mask_boundary() {
    let cfg = SynthConfig::default();
    for seed in 0..40 {
        let s = generate_synthetic_pair(seed, &cfg).unwrap();
        let side = cfg.side as i64;
        let mask = s.gt_mask.as_ref().unwrap();
        let at = |x: i64, y: i64| x >= 0 && y >= 0 && x < side && y < side && mask[(y * side + x) as usize] != 0;
        let boundary: Vec<(i64, i64)> = (0..side)
            .flat_map(|y| (0..side).map(move |x| (x, y)))
            .filter(|&(x, y)| at(x, y) && !(at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1)))
            .collect();
        let r = rasterize(&s.points, Canvas::square(cfg.side), 1);
        let ink: Vec<(i64, i64)> = (0..side)
            .flat_map(|y| (0..side).map(move |x| (x, y)))
            .filter(|&(x, y)| r.get(x as usize, y as usize) != 0)
            .collect();
        assert!(!boundary.is_empty() && !ink.is_empty());
        assert!(max_gap(&ink, &boundary) <= 2, "seed {seed}: ink strays from the outline");
        assert!(max_gap(&boundary, &ink) <= 2, "seed {seed}: outline not covered by ink");
        assert_eq!(s.photo.canvas(), s.sketch.canvas);
    }
}

#[test]
fn rotation_draws_stay_in_range() {
    let cfg = AffineConfig {
        rotate: 1.0,
        hflip: 0.0,
        scale: 0.0,
        ..AffineConfig::default()
    };
    let mut r = common::rng(3);
    for _ in 0..1000 {
        match sample_affine(&mut r, &cfg, Canvas::square(64)).unwrap().kind {
            TransformKind::Rotate { angle } => assert!((-15.0..=15.0).contains(&angle)),
            k => panic!("unexpected {k:?}"),
        }
    }
}

#[test]
fn kind_frequencies_follow_weights() {
    let cfg = AffineConfig {
        identity: 0.1,
        vflip: 0.15,
        ..AffineConfig::default()
    };
    let w = [cfg.identity, cfg.hflip, cfg.vflip, cfg.rotate, cfg.scale];
    let total: f64 = w.iter().sum();
    let n = 10_000;
    let mut counts = [0usize; 5];
    let mut r = common::rng(4);
    for _ in 0..n {
        let k = match sample_affine(&mut r, &cfg, Canvas::square(64)).unwrap().kind {
            TransformKind::Identity => 0,
            TransformKind::Hflip => 1,
            TransformKind::Vflip => 2,
            TransformKind::Rotate { .. } => 3,
            TransformKind::Scale { .. } => 4,
            TransformKind::Matrix { .. } => unreachable!(),
        };
        counts[k] += 1;
    }
    for (c, wk) in counts.iter().zip(w) {
        let p = wk / total;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
    }
}
