//! Synthetic piecewise-planar stereo scenes with exact ground truth.
//!
//! The right image is the texture carrier: every pixel is an independent
//! random dot. The left image is built by sampling the right image's rows
//! with linear interpolation at `x - d(x, y)`, so photometric consistency at
//! the ground-truth disparity holds to interpolation precision by
//! construction. Scene geometry is a stack of axis-aligned rectangles in
//! painter's order, each carrying a disparity plane; the last rectangle
//! covering a pixel is the nearest surface in both views. Left pixels whose
//! match in the right view is covered by a later rectangle, or falls out of
//! frame, are masked invalid and filled with fresh texture that has no
//! counterpart in the right image, mimicking a real occlusion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::store::seeded_rng;
use crate::tensor::{sample_row_linear, Tensor};

/// A disparity plane in absolute image coordinates: `d(x, y) = d0 + dx*x + dy*y`.
#[derive(Debug, Clone, Copy)]
pub struct Plane {
    pub d0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Plane {
    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.d0 + self.dx * x + self.dy * y
    }
}

/// An axis-aligned rectangle `[x0, x1) x [y0, y1)` carrying a plane. Later
/// rectangles in a scene's list are painted over earlier ones and sit nearer
/// to the camera.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub plane: Plane,
}

impl Rect {
    fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// One stereo training sample with exact ground truth. Disparity and slopes
/// are in full-resolution left-view pixel units; `valid` is false where the
/// match is occluded or out of frame, `slope_valid` additionally excludes
/// pixels touching a segment boundary.
#[derive(Debug, Clone)]
pub struct StereoSample {
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    pub d_gt: Tensor<f32>,
    pub valid: Vec<bool>,
    pub dx_gt: Tensor<f32>,
    pub dy_gt: Tensor<f32>,
    pub slope_valid: Vec<bool>,
}

impl StereoSample {
    /// Checks the cross-field invariants; call after any manual surgery.
    pub fn validate(&self) -> Result<()> {
        let [_, _, h, w] = self.d_gt.shape();
        for t in [&self.left, &self.right] {
            let [_, _, th, tw] = t.shape();
            if (th, tw) != (h, w) {
                return Err(Error::Shape(format!("image {th}x{tw} vs ground truth {h}x{w}")));
            }
        }
        if self.valid.len() != h * w || self.slope_valid.len() != h * w {
            return Err(Error::Shape("mask length does not match extents".into()));
        }
        for (i, &v) in self.valid.iter().enumerate() {
            if v && self.d_gt.data()[i] < 0.0 {
                return Err(Error::Numeric(format!("negative disparity at valid pixel {i}")));
            }
        }
        Ok(())
    }
}

/// Parameters of the random scene sampler.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// 1 for grayscale, 3 for RGB.
    pub channels: usize,
    /// Number of rectangles painted over the background plane.
    pub rect_count: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// Slopes are drawn from `[-slope_max, slope_max]`; must stay below 1 so
    /// surfaces never fold over themselves in the right view.
    pub slope_max: f64,
    /// Probability that a pixel carries a random dot; the rest stay mid-gray.
    pub texture_density: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width % 64 != 0 || self.height % 64 != 0 {
            return Err(Error::Config(format!(
                "extents {}x{} must be divisible by 64",
                self.width, self.height
            )));
        }
        if self.d_max >= self.width as f64 {
            return Err(Error::Config(format!(
                "maximum disparity {} must be below the image width {}",
                self.d_max, self.width
            )));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.d_min < 0.0 || self.d_min > self.d_max {
            return Err(Error::Config("need 0 <= d_min <= d_max".into()));
        }
        if !(0.0..1.0).contains(&self.slope_max) {
            return Err(Error::Config("slope_max must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.texture_density) {
            return Err(Error::Config("texture_density must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Samples a plane whose values stay inside `[0, d_max]` over the given
/// rectangle by damping the slopes when the random draw overshoots.
fn sample_plane(rng: &mut ChaCha8Rng, cfg: &SceneConfig, x0: usize, x1: usize, y0: usize, y1: usize) -> Plane {
    let dc = rng.gen_range(cfg.d_min..=cfg.d_max);
    let mut dx = rng.gen_range(-cfg.slope_max..=cfg.slope_max);
    let mut dy = rng.gen_range(-cfg.slope_max..=cfg.slope_max);
    let cx = (x0 + x1 - 1) as f64 / 2.0;
    let cy = (y0 + y1 - 1) as f64 / 2.0;
    let reach = dx.abs() * (cx - x0 as f64) + dy.abs() * (cy - y0 as f64);
    let room = dc.min(cfg.d_max - dc);
    if reach > room {
        let damp = if reach > 0.0 { room / reach } else { 0.0 };
        dx *= damp;
        dy *= damp;
    }
    Plane { d0: dc - dx * cx - dy * cy, dx, dy }
}

/// Renders a stereo pair from an explicit rectangle stack. `rects[0]` must
/// cover the whole image (the background); later entries are nearer.
pub fn render_scene(cfg: &SceneConfig, rects: &[Rect]) -> Result<StereoSample> {
    cfg.validate()?;
    let (w, h, c) = (cfg.width, cfg.height, cfg.channels);
    let bg = rects.first().ok_or_else(|| Error::Config("need at least a background rectangle".into()))?;
    if !(bg.x0 == 0 && bg.y0 == 0 && bg.x1 == w && bg.y1 == h) {
        return Err(Error::Config("the first rectangle must cover the whole image".into()));
    }

    let mut rng = seeded_rng(cfg.seed, "scene");
    let dot = move |rng: &mut ChaCha8Rng| -> f32 {
        if rng.gen_bool(cfg.texture_density) {
            rng.gen_range(0.0..1.0)
        } else {
            0.5
        }
    };
    let right = Tensor::from_fn([1, c, h, w], |_, _, _, _| dot(&mut rng));

    // Topmost rectangle and exact plane per left pixel.
    let mut top = vec![0usize; h * w];
    let mut d_gt = Tensor::zeros([1, 1, h, w]);
    let mut dx_gt = Tensor::zeros([1, 1, h, w]);
    let mut dy_gt = Tensor::zeros([1, 1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = (0..rects.len()).rev().find(|&r| rects[r].covers(x, y)).unwrap();
            top[i] = r;
            let p = &rects[r].plane;
            // The sampler keeps planes nonnegative over their rectangle, but
            // the absolute-form evaluation can leave -1e-15 dust at zero.
            d_gt.data_mut()[i] = p.at(x as f64, y as f64).max(0.0) as f32;
            dx_gt.data_mut()[i] = p.dx as f32;
            dy_gt.data_mut()[i] = p.dy as f32;
        }
    }

    // Visibility: the match of pixel (x, y) is hidden when some nearer
    // rectangle's right-view footprint covers it. Footprints project the
    // first and last covered pixel column along the rectangle's own plane.
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = x as f64 - d_gt.data()[i] as f64;
            if v < 0.0 || v > (w - 1) as f64 {
                continue;
            }
            let occluded = rects[top[i] + 1..].iter().any(|r| {
                let (lo, hi) = (r.x0 as f64, (r.x1 - 1) as f64);
                y >= r.y0
                    && y < r.y1
                    && v >= lo - r.plane.at(lo, y as f64)
                    && v <= hi - r.plane.at(hi, y as f64)
            });
            valid[i] = !occluded;
        }
    }

    // Slopes are exact away from segment boundaries: a pixel keeps its slope
    // label only when its whole 8-neighborhood lies on the same surface.
    let mut slope_valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !valid[i] {
                continue;
            }
            let mut uniform = x > 0 && x + 1 < w && y > 0 && y + 1 < h;
            if uniform {
                'scan: for ny in y - 1..=y + 1 {
                    for nx in x - 1..=x + 1 {
                        if top[ny * w + nx] != top[i] {
                            uniform = false;
                            break 'scan;
                        }
                    }
                }
            }
            slope_valid[i] = uniform;
        }
    }

    // The left view samples the carrier along its rows; occluded or
    // out-of-frame pixels get fresh dots that exist nowhere in the right view.
    let mut left = Tensor::zeros([1, c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            let row_start = (ch * h + y) * w;
            let row: Vec<f32> = right.data()[row_start..row_start + w].to_vec();
            for x in 0..w {
                let i = y * w + x;
                left.data_mut()[row_start + x] = if valid[i] {
                    sample_row_linear(&row, x as f32 - d_gt.data()[i])
                } else {
                    dot(&mut rng)
                };
            }
        }
    }

    let sample = StereoSample { left, right, d_gt, valid, dx_gt, dy_gt, slope_valid };
    sample.validate()?;
    Ok(sample)
}

/// Draws a random piecewise-planar scene: a background plane plus
/// `rect_count` rectangles with random extents and planes, all deterministic
/// in the seed.
pub fn gen_scene(cfg: &SceneConfig) -> Result<StereoSample> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = seeded_rng(cfg.seed, "layout");
    let mut rects = Vec::with_capacity(cfg.rect_count + 1);
    rects.push(Rect { x0: 0, x1: w, y0: 0, y1: h, plane: sample_plane(&mut rng, cfg, 0, w, 0, h) });
    for _ in 0..cfg.rect_count {
        let rw = rng.gen_range(w / 8..=w / 2);
        let rh = rng.gen_range(h / 8..=h / 2);
        let x0 = rng.gen_range(0..=w - rw);
        let y0 = rng.gen_range(0..=h - rh);
        let plane = sample_plane(&mut rng, cfg, x0, x0 + rw, y0, y0 + rh);
        rects.push(Rect { x0, x1: x0 + rw, y0, y1: y0 + rh, plane });
    }
    render_scene(cfg, &rects)
}

/// A bounded queue of generated scenes: a producer thread renders samples for
/// seeds `base_seed, base_seed + 1, ...` ahead of the consumer, which
/// receives them strictly in seed order.
pub struct SceneStream {
    rx: std::sync::mpsc::Receiver<Result<StereoSample>>,
    _producer: std::thread::JoinHandle<()>,
}

impl SceneStream {
    pub fn new(cfg: SceneConfig, base_seed: u64, count: usize, queue: usize) -> Self {
        let (tx, rx) = std::sync::mpsc::sync_channel(queue.max(1));
        let producer = std::thread::spawn(move || {
            for k in 0..count {
                let mut c = cfg.clone();
                c.seed = base_seed + k as u64;
                if tx.send(gen_scene(&c)).is_err() {
                    break;
                }
            }
        });
        Self { rx, _producer: producer }
    }
}

impl Iterator for SceneStream {
    type Item = Result<StereoSample>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.recv().ok()
    }
}
