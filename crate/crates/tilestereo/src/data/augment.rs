//! Training-time augmentations, applied in a fixed order: multiplicative
//! brightness (one symmetric factor for the pair, one small asymmetric factor
//! per view), replacement of a random right-image patch by another right-image
//! region, a smooth vertical jitter field on the right view, and additive
//! Gaussian noise. Geometry labels never change; the only mask edit is that
//! pixels under a replaced patch lose supervision unless explicitly kept.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::StereoSample;
use crate::tensor::store::seeded_rng;
use crate::tensor::Tensor;

/// Which augmentations run, plus the supervision policy for replaced pixels.
#[derive(Debug, Clone, Copy)]
pub struct AugmentOptions {
    pub photometric: bool,
    pub patch_replace: bool,
    pub y_jitter: bool,
    pub noise: bool,
    /// Keep ground-truth supervision under a replaced patch; trains the net
    /// to inpaint instead of abstaining there.
    pub supervise_replaced: bool,
}

impl AugmentOptions {
    pub fn none() -> Self {
        Self { photometric: false, patch_replace: false, y_jitter: false, noise: false, supervise_replaced: false }
    }

    pub fn all() -> Self {
        Self { photometric: true, patch_replace: true, y_jitter: true, noise: true, supervise_replaced: false }
    }
}

/// Multiplies every intensity by `factor` and clamps back to `[0, 1]`.
pub(crate) fn scale_intensities(img: &mut Tensor<f32>, factor: f32) {
    for v in img.data_mut() {
        *v = (*v * factor).clamp(0.0, 1.0);
    }
}

/// Copies the `size` patch at `src` over the one at `dst` (buffered, so the
/// regions may overlap) and, unless supervision is kept, invalidates the
/// destination pixels.
pub(crate) fn replace_patch(
    img: &mut Tensor<f32>,
    valid: &mut [bool],
    src: (usize, usize),
    dst: (usize, usize),
    size: (usize, usize),
    supervise: bool,
) {
    let [_, c, h, w] = img.shape();
    let (ph, pw) = size;
    assert!(src.0 + ph <= h && src.1 + pw <= w && dst.0 + ph <= h && dst.1 + pw <= w);
    for ch in 0..c {
        let mut patch = Vec::with_capacity(ph * pw);
        for y in 0..ph {
            let o = (ch * h + src.0 + y) * w + src.1;
            patch.extend_from_slice(&img.data()[o..o + pw]);
        }
        for y in 0..ph {
            let o = (ch * h + dst.0 + y) * w + dst.1;
            img.data_mut()[o..o + pw].copy_from_slice(&patch[y * pw..(y + 1) * pw]);
        }
    }
    if !supervise {
        for y in 0..ph {
            for x in 0..pw {
                valid[(dst.0 + y) * w + dst.1 + x] = false;
            }
        }
    }
}

/// Upsamples a coarse `[1, 1, ch, cw]` field by `factor` with bilinear
/// interpolation, sample positions at pixel centers.
pub(crate) fn bilinear_upsample(coarse: &Tensor<f32>, factor: usize) -> Tensor<f32> {
    let [_, _, ch, cw] = coarse.shape();
    let f = factor as f32;
    Tensor::from_fn([1, 1, ch * factor, cw * factor], |_, _, y, x| {
        let cy = ((y as f32 + 0.5) / f - 0.5).clamp(0.0, (ch - 1) as f32);
        let cx = ((x as f32 + 0.5) / f - 0.5).clamp(0.0, (cw - 1) as f32);
        let (y0, x0) = (cy.floor() as usize, cx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(ch - 1), (x0 + 1).min(cw - 1));
        let (fy, fx) = (cy - y0 as f32, cx - x0 as f32);
        let at = |yy: usize, xx: usize| coarse.data()[yy * cw + xx];
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
            + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
    })
}

/// Resamples each column of `img` at `y + offset(y, x)` with vertical linear
/// interpolation, clamped at the borders.
pub(crate) fn shift_rows(img: &Tensor<f32>, offsets: &Tensor<f32>) -> Tensor<f32> {
    let [_, c, h, w] = img.shape();
    assert_eq!(offsets.shape()[2..], [h, w]);
    Tensor::from_fn([1, c, h, w], |_, ch, y, x| {
        let sy = (y as f32 + offsets.data()[y * w + x]).clamp(0.0, (h - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f32;
        let at = |yy: usize| img.data()[(ch * h + yy) * w + x];
        (1.0 - fy) * at(y0) + fy * at(y1)
    })
}

/// Adds iid Gaussian noise of the given standard deviation, clamped to `[0, 1]`.
pub(crate) fn add_noise(img: &mut Tensor<f32>, sigma: f32, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0f32, sigma).expect("nonnegative sigma");
    for v in img.data_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
}

/// Applies the enabled augmentations in their fixed order, deterministically
/// in the seed.
pub fn augment(sample: &StereoSample, seed: u64, opts: &AugmentOptions) -> StereoSample {
    let mut out = sample.clone();
    let mut rng = seeded_rng(seed, "augment");
    let [_, _, h, w] = out.right.shape();

    if opts.photometric {
        let symmetric: f32 = rng.gen_range(0.8..=1.2);
        let a_left: f32 = rng.gen_range(0.95..=1.05);
        let a_right: f32 = rng.gen_range(0.95..=1.05);
        scale_intensities(&mut out.left, symmetric * a_left);
        scale_intensities(&mut out.right, symmetric * a_right);
    }

    if opts.patch_replace {
        let ph = rng.gen_range(50..=180usize).min(h);
        let pw = rng.gen_range(50..=250usize).min(w);
        let dst = (rng.gen_range(0..=h - ph), rng.gen_range(0..=w - pw));
        let src = (rng.gen_range(0..=h - ph), rng.gen_range(0..=w - pw));
        replace_patch(&mut out.right, &mut out.valid, src, dst, (ph, pw), opts.supervise_replaced);
    }

    if opts.y_jitter {
        let coarse = Tensor::from_fn([1, 1, h / 64, w / 64], |_, _, _, _| rng.gen_range(-2.0..=2.0f32));
        let field = bilinear_upsample(&coarse, 64);
        out.right = shift_rows(&out.right, &field);
    }

    if opts.noise {
        let variance: f32 = rng.gen_range(0.0..=5.0);
        let sigma = variance.sqrt() / 255.0;
        add_noise(&mut out.left, sigma, &mut rng);
        add_noise(&mut out.right, sigma, &mut rng);
    }

    out
}
