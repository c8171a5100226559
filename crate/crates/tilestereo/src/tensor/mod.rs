//! Dense 4-D tensors and the reverse-mode graph built on top of them.
//!
//! Everything is laid out `[batch, channel, row, col]` in one contiguous
//! buffer, row-major with `col` fastest. The graph in [`graph`] records ops
//! on these tensors and replays them backwards; [`store`] owns the trainable
//! parameters and the Adam state; [`checkpoint`] serializes a store.

pub mod checkpoint;
mod conv;
mod graph;
mod scalar;
pub mod store;
mod tiles;

pub use conv::{conv2d_out_extent, tconv2d_out_extent};
pub use graph::{Graph, NodeId};
pub use scalar::Scalar;
pub use store::ParameterStore;

use crate::error::{Error, Result};

/// Extents of a tensor as `[batch, channels, height, width]`.
pub type Shape = [usize; 4];

/// Plain dense tensor. `grad` is only populated on parameter tensors after a
/// backward pass; intermediate activations keep their gradients inside the
/// graph that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Shape,
    data: Vec<S>,
    pub requires_grad: bool,
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "buffer of {} elements does not fill extents {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![S::zero(); shape.iter().product()], requires_grad: false, grad: None }
    }

    pub fn full(shape: Shape, v: S) -> Self {
        Self { shape, data: vec![v; shape.iter().product()], requires_grad: false, grad: None }
    }

    /// Builds from a function of (batch, channel, row, col).
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Self { shape, data, requires_grad: false, grad: None }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.idx(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: S) {
        let i = self.idx(b, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous (height * width) slice of one channel plane.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[S] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [S] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Replicate-pads the spatial extents on the bottom/right so both become
    /// multiples of `unit`. Returns the original extents alongside.
    pub fn pad_to_multiple(&self, unit: usize) -> (Tensor<S>, usize, usize) {
        let [b, c, h, w] = self.shape;
        let nh = h.div_ceil(unit) * unit;
        let nw = w.div_ceil(unit) * unit;
        if nh == h && nw == w {
            return (self.clone(), h, w);
        }
        let out = Tensor::from_fn([b, c, nh, nw], |bb, cc, y, x| self.at(bb, cc, y.min(h - 1), x.min(w - 1)));
        (out, h, w)
    }

    /// Crops the top-left corner back out of a padded tensor.
    pub fn crop(&self, h: usize, w: usize) -> Tensor<S> {
        let [b, c, _, _] = self.shape;
        Tensor::from_fn([b, c, h, w], |bb, cc, y, x| self.at(bb, cc, y, x))
    }
}

/// Windowed maximum over the spatial extents. Entries flagged `false` in
/// `mask` are ignored; an output cell is valid only if its window held at
/// least one valid entry (its value is 0 otherwise). Without a mask every
/// input counts and every output is valid. Window and stride are (h, w);
/// windows start at multiples of the stride and must fit inside the input.
pub fn maxpool2d<S: Scalar>(
    x: &Tensor<S>,
    window: (usize, usize),
    stride: (usize, usize),
    mask: Option<&[bool]>,
) -> (Tensor<S>, Vec<bool>) {
    let [b, c, h, w] = x.shape();
    if let Some(m) = mask {
        assert_eq!(m.len(), x.numel(), "mask must cover every element");
    }
    let oh = if h >= window.0 { (h - window.0) / stride.0 + 1 } else { 0 };
    let ow = if w >= window.1 { (w - window.1) / stride.1 + 1 } else { 0 };
    let mut out = Tensor::zeros([b, c, oh, ow]);
    let mut out_valid = vec![false; out.numel()];
    for bb in 0..b {
        for cc in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<S> = None;
                    for ky in 0..window.0 {
                        for kx in 0..window.1 {
                            let iy = oy * stride.0 + ky;
                            let ix = ox * stride.1 + kx;
                            let i = x.idx(bb, cc, iy, ix);
                            if mask.map_or(true, |m| m[i]) {
                                let v = x.data[i];
                                best = Some(match best {
                                    Some(p) if p >= v => p,
                                    _ => v,
                                });
                            }
                        }
                    }
                    let o = out.idx(bb, cc, oy, ox);
                    if let Some(v) = best {
                        out.data[o] = v;
                        out_valid[o] = true;
                    }
                }
            }
        }
    }
    (out, out_valid)
}

/// Samples one row of values at fractional x coordinates with linear
/// interpolation, clamping coordinates to `[0, len - 1]`.
#[inline]
pub fn sample_row_linear<S: Scalar>(row: &[S], x: S) -> S {
    let max = S::from_f64((row.len() - 1) as f64);
    let x = x.max(S::zero()).min(max);
    let x0 = x.floor();
    let f = x - x0;
    let i0 = x0.as_f64() as usize;
    let i1 = (i0 + 1).min(row.len() - 1);
    row[i0] * (S::one() - f) + row[i1] * f
}
