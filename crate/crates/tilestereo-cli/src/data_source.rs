//! Training data: a fixed pool of samples cycled round-robin. The pool is
//! either generated (planar synthetic scenes) or read from a directory of
//! `<stem>.left.pgm|ppm` / `<stem>.right.pgm|ppm` / `<stem>.gt.pfm` triplets,
//! where non-finite ground-truth values mark unlabeled pixels.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tilestereo::data::{read_image, read_pfm, SceneConfig, SceneStream, StereoSample};
use tilestereo::error::{Error, Result};
use tilestereo::loss::GroundTruth;
use tilestereo::tensor::Tensor;

use crate::config::RunConfig;

/// Worker threads requested through `TILESTEREO_THREADS`. The compute path is
/// single-threaded either way; values of 2 or more let a background thread
/// produce synthetic scenes while the optimizer runs. Unset or unparsable
/// values mean 2, so the producer is on by default.
pub fn thread_count() -> usize {
    std::env::var("TILESTEREO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(2)
}

/// Scene settings shared by the training pool and validation scenes.
pub fn scene_config(cfg: &RunConfig, seed: u64) -> SceneConfig {
    SceneConfig {
        width: cfg.width,
        height: cfg.height,
        channels: cfg.channels,
        rect_count: cfg.rects,
        d_min: cfg.d_min,
        d_max: cfg.d_max,
        slope_max: cfg.slope_max,
        texture_density: cfg.density,
        seed,
    }
}

/// Materializes the training pool: `cfg.pool` synthetic scenes seeded
/// `base_seed..base_seed + pool`, or every triplet found under `data.dir`.
pub fn load_pool(cfg: &RunConfig) -> Result<Vec<StereoSample>> {
    match cfg.source.as_str() {
        "synthetic" => {
            if thread_count() >= 2 {
                SceneStream::new(scene_config(cfg, 0), cfg.base_seed, cfg.pool, 4).collect()
            } else {
                (0..cfg.pool)
                    .map(|k| tilestereo::data::gen_scene(&scene_config(cfg, cfg.base_seed + k as u64)))
                    .collect()
            }
        }
        "dir" => {
            let dir = cfg.data_dir.as_ref().expect("validated");
            let pool = load_dir(dir)?;
            if pool.is_empty() {
                return Err(Error::Format(format!("no sample triplets under {}", dir.display())));
            }
            Ok(pool)
        }
        other => Err(Error::Config(format!("unknown data source {other:?}"))),
    }
}

/// Reads every `<stem>.gt.pfm` triplet in `dir`, sorted by stem.
fn load_dir(dir: &Path) -> Result<Vec<StereoSample>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".gt.pfm") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    stems.iter().map(|stem| load_triplet(dir, stem)).collect()
}

fn view(dir: &Path, stem: &str, side: &str) -> Result<Tensor<f32>> {
    for ext in ["pgm", "ppm"] {
        let path = dir.join(format!("{stem}.{side}.{ext}"));
        if path.exists() {
            return read_image(&path);
        }
    }
    Err(Error::Format(format!("no {stem}.{side}.pgm or .ppm next to {stem}.gt.pfm")))
}

fn load_triplet(dir: &Path, stem: &str) -> Result<StereoSample> {
    let left = view(dir, stem, "left")?;
    let right = view(dir, stem, "right")?;
    let (d_gt, _scale) = read_pfm(&dir.join(format!("{stem}.gt.pfm")))?;
    let valid: Vec<bool> = d_gt.data().iter().map(|v| v.is_finite() && *v >= 0.0).collect();
    let mut d_gt = d_gt;
    for (v, ok) in d_gt.data_mut().iter_mut().zip(&valid) {
        if !ok {
            *v = 0.0;
        }
    }
    let slopes = tilestereo::loss::fit_gt_slopes(&d_gt, &valid);
    let sample = StereoSample {
        left,
        right,
        d_gt,
        valid,
        dx_gt: slopes.0,
        dy_gt: slopes.1,
        slope_valid: slopes.2,
    };
    sample.validate()?;
    Ok(sample)
}

/// Crops a sample to `(h, w)` at a random grid-aligned origin.
pub fn random_crop(s: &StereoSample, (h, w): (usize, usize), rng: &mut ChaCha8Rng) -> Result<StereoSample> {
    let [_, _, sh, sw] = s.d_gt.shape();
    if h > sh || w > sw {
        return Err(Error::Config(format!("crop {h}x{w} exceeds sample {sh}x{sw}")));
    }
    let y0 = if sh == h { 0 } else { rng.gen_range(0..=(sh - h) / 64) * 64 };
    let x0 = if sw == w { 0 } else { rng.gen_range(0..=(sw - w) / 64) * 64 };
    let take = |t: &Tensor<f32>| {
        let [_, c, _, _] = t.shape();
        Tensor::from_fn([1, c, h, w], |_, cc, y, x| t.at(0, cc, y0 + y, x0 + x))
    };
    let take_mask = |m: &[bool]| {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            out.extend_from_slice(&m[(y0 + y) * sw + x0..(y0 + y) * sw + x0 + w]);
        }
        out
    };
    Ok(StereoSample {
        left: take(&s.left),
        right: take(&s.right),
        d_gt: take(&s.d_gt),
        valid: take_mask(&s.valid),
        dx_gt: take(&s.dx_gt),
        dy_gt: take(&s.dy_gt),
        slope_valid: take_mask(&s.slope_valid),
    })
}

/// Stacks samples along the batch axis and wraps the supervision side as
/// [`GroundTruth`]. All samples must share extents and channel count.
pub fn batch(samples: &[StereoSample]) -> Result<(Tensor<f32>, Tensor<f32>, GroundTruth<f32>)> {
    let first = samples.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let [_, c, h, w] = first.left.shape();
    let stack = |pick: &dyn Fn(&StereoSample) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let [_, cc, _, _] = pick(first).shape();
        let mut data = Vec::with_capacity(samples.len() * cc * h * w);
        for s in samples {
            let t = pick(s);
            if t.shape() != [1, cc, h, w] {
                return Err(Error::Shape(format!("batch mixes extents {:?} and {:?}", t.shape(), [1, cc, h, w])));
            }
            data.extend_from_slice(t.data());
        }
        Tensor::new([samples.len(), cc, h, w], data)
    };
    let left = stack(&|s| &s.left)?;
    let right = stack(&|s| &s.right)?;
    let d = stack(&|s| &s.d_gt)?;
    let dx = stack(&|s| &s.dx_gt)?;
    let dy = stack(&|s| &s.dy_gt)?;
    let mut valid = Vec::with_capacity(samples.len() * h * w);
    let mut slope_valid = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        valid.extend_from_slice(&s.valid);
        slope_valid.extend_from_slice(&s.slope_valid);
    }
    let _ = c;
    Ok((left, right, GroundTruth::with_slopes(d, valid, dx, dy, slope_valid)))
}
