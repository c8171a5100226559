//! Convolution kernels. Forward, input-gradient and weight-gradient are all
//! GEMM contractions against an im2col patch matrix, so one geometry struct
//! and two scatter/gather helpers serve conv2d, its backward pass, and
//! transposed convolution (which is exactly the input-gradient of a matching
//! conv2d, and shares its weight layout `[conv_out, conv_in, kh, kw]`).

use super::graph::{grad_buf, Graph, Op};
use super::{Scalar, Tensor};

/// Output extent of a convolution along one axis.
pub fn conv2d_out_extent(input: usize, kernel: usize, stride: usize, dilation: usize, pad_lo: usize, pad_hi: usize) -> usize {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + pad_lo + pad_hi;
    assert!(padded >= span, "kernel span {span} exceeds padded extent {padded}");
    (padded - span) / stride + 1
}

/// Output extent of a transposed convolution along one axis.
pub fn tconv2d_out_extent(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

#[derive(Clone, Copy)]
struct Geom {
    ic: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    dh: usize,
    dw: usize,
    pt: usize,
    pl: usize,
    ih: usize,
    iw: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn k(&self) -> usize {
        self.ic * self.kh * self.kw
    }
    fn m(&self) -> usize {
        self.oh * self.ow
    }
    /// Input coordinates tapped by patch row m at patch column k, or None in padding.
    #[inline]
    fn tap(&self, m: usize, k: usize) -> Option<usize> {
        let (oy, ox) = (m / self.ow, m % self.ow);
        let kx = k % self.kw;
        let rest = k / self.kw;
        let ky = rest % self.kh;
        let c = rest / self.kh;
        let iy = (oy * self.sh + ky * self.dh) as isize - self.pt as isize;
        let ix = (ox * self.sw + kx * self.dw) as isize - self.pl as isize;
        if iy < 0 || ix < 0 || iy >= self.ih as isize || ix >= self.iw as isize {
            return None;
        }
        Some((c * self.ih + iy as usize) * self.iw + ix as usize)
    }
}

/// Gathers one batch item into a row-major (M, K) patch matrix, zeros in padding.
fn im2col<S: Scalar>(x: &[S], g: &Geom) -> Vec<S> {
    let (m, k) = (g.m(), g.k());
    let mut p = vec![S::zero(); m * k];
    for mi in 0..m {
        let row = &mut p[mi * k..(mi + 1) * k];
        for (ki, slot) in row.iter_mut().enumerate() {
            if let Some(src) = g.tap(mi, ki) {
                *slot = x[src];
            }
        }
    }
    p
}

/// Scatter-adds a (M, K) patch matrix back onto the input layout.
fn col2im<S: Scalar>(p: &[S], g: &Geom, out: &mut [S]) {
    let (m, k) = (g.m(), g.k());
    for mi in 0..m {
        let row = &p[mi * k..(mi + 1) * k];
        for (ki, &v) in row.iter().enumerate() {
            if let Some(dst) = g.tap(mi, ki) {
                out[dst] += v;
            }
        }
    }
}

fn is_pointwise(g: &Geom) -> bool {
    g.kh == 1 && g.kw == 1 && g.sh == 1 && g.sw == 1 && g.dh == 1 && g.dw == 1 && g.pt == 0 && g.pl == 0 && g.oh == g.ih && g.ow == g.iw
}

impl<S: Scalar> Graph<S> {
    /// Cross-correlation with explicit per-side padding `[top, bottom, left,
    /// right]`, stride and dilation (both `(h, w)`). Weights are laid out
    /// `[out_c, in_c, kh, kw]`, bias `[1, out_c, 1, 1]`.
    pub fn conv2d(
        &mut self,
        x: NodeIdT,
        w: NodeIdT,
        b: NodeIdT,
        stride: (usize, usize),
        dilation: (usize, usize),
        pad: [usize; 4],
    ) -> NodeIdT {
        let [bsz, ic, ih, iw] = self.value(x).shape();
        let [oc, wic, kh, kw] = self.value(w).shape();
        assert_eq!(ic, wic, "weight expects {wic} input channels, tensor has {ic}");
        assert_eq!(self.value(b).shape(), [1, oc, 1, 1], "bias extents must be [1,{oc},1,1]");
        let oh = conv2d_out_extent(ih, kh, stride.0, dilation.0, pad[0], pad[1]);
        let ow = conv2d_out_extent(iw, kw, stride.1, dilation.1, pad[2], pad[3]);
        let g = Geom {
            ic,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            dh: dilation.0,
            dw: dilation.1,
            pt: pad[0],
            pl: pad[2],
            ih,
            iw,
            oh,
            ow,
        };
        let (m, k) = (g.m(), g.k());
        let mut out = Tensor::zeros([bsz, oc, oh, ow]);
        for bi in 0..bsz {
            let xplane = &self.value(x).data()[bi * ic * ih * iw..(bi + 1) * ic * ih * iw];
            let wdata = self.value(w).data();
            let dst = &mut out.data_mut()[bi * oc * m..(bi + 1) * oc * m];
            // out[N=oc, M] = W2[N, K] * P^T
            unsafe {
                if is_pointwise(&g) {
                    // P^T is just the channel-major input plane.
                    S::gemm(oc, k, m, S::one(), wdata.as_ptr(), k as isize, 1, xplane.as_ptr(), m as isize, 1, S::zero(), dst.as_mut_ptr(), m as isize, 1);
                } else {
                    let p = im2col(xplane, &g);
                    S::gemm(oc, k, m, S::one(), wdata.as_ptr(), k as isize, 1, p.as_ptr(), 1, k as isize, S::zero(), dst.as_mut_ptr(), m as isize, 1);
                }
            }
            let bias = self.value(b).data();
            for c in 0..oc {
                let bv = bias[c];
                for v in &mut dst[c * m..(c + 1) * m] {
                    *v += bv;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::Conv2d { x, w, b, stride, dilation, pad }, needs)
    }

    /// Adjoint of [`Graph::conv2d`] with the same weight tensor: maps a
    /// `[b, out_c, h, w]` input back to `[b, in_c, (h-1)*sh+kh, (w-1)*sw+kw]`.
    /// Bias is `[1, in_c, 1, 1]`, added after the transport.
    pub fn tconv2d(&mut self, x: NodeIdT, w: NodeIdT, b: NodeIdT, stride: (usize, usize)) -> NodeIdT {
        let [bsz, a_ch, ih, iw] = self.value(x).shape();
        let [woc, wic, kh, kw] = self.value(w).shape();
        assert_eq!(a_ch, woc, "transposed conv input channels must match weight out_c {woc}");
        assert_eq!(self.value(b).shape(), [1, wic, 1, 1], "bias extents must be [1,{wic},1,1]");
        let oh = tconv2d_out_extent(ih, kh, stride.0);
        let ow = tconv2d_out_extent(iw, kw, stride.1);
        // Virtual conv: maps our output (ih*iw side) down to our input extent.
        let g = Geom {
            ic: wic,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            dh: 1,
            dw: 1,
            pt: 0,
            pl: 0,
            ih: oh,
            iw: ow,
            oh: ih,
            ow: iw,
        };
        let (m, k) = (g.m(), g.k());
        let mut out = Tensor::zeros([bsz, wic, oh, ow]);
        for bi in 0..bsz {
            let xplane = &self.value(x).data()[bi * a_ch * m..(bi + 1) * a_ch * m];
            let wdata = self.value(w).data();
            // P[M, K] = X^T[M, A] * W2[A, K], then scatter.
            let mut p = vec![S::zero(); m * k];
            unsafe {
                S::gemm(m, a_ch, k, S::one(), xplane.as_ptr(), 1, m as isize, wdata.as_ptr(), k as isize, 1, S::zero(), p.as_mut_ptr(), k as isize, 1);
            }
            let dst = &mut out.data_mut()[bi * wic * oh * ow..(bi + 1) * wic * oh * ow];
            col2im(&p, &g, dst);
            let bias = self.value(b).data();
            for c in 0..wic {
                let bv = bias[c];
                for v in &mut dst[c * oh * ow..(c + 1) * oh * ow] {
                    *v += bv;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::ConvT2d { x, w, b, stride }, needs)
    }
}

type NodeIdT = super::NodeId;

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<S: Scalar>(
    graph: &Graph<S>,
    x: NodeIdT,
    w: NodeIdT,
    b: NodeIdT,
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: [usize; 4],
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let [bsz, ic, ih, iw] = graph.value(x).shape();
    let [oc, _, kh, kw] = graph.value(w).shape();
    let oh = conv2d_out_extent(ih, kh, stride.0, dilation.0, pad[0], pad[1]);
    let ow = conv2d_out_extent(iw, kw, stride.1, dilation.1, pad[2], pad[3]);
    let g = Geom {
        ic,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        dh: dilation.0,
        dw: dilation.1,
        pt: pad[0],
        pl: pad[2],
        ih,
        iw,
        oh,
        ow,
    };
    let (m, k) = (g.m(), g.k());
    let needs_x = graph.needs(x);
    let needs_w = graph.needs(w);
    let needs_b = graph.needs(b);
    for bi in 0..bsz {
        let gy = &gout[bi * oc * m..(bi + 1) * oc * m];
        let pointwise = is_pointwise(&g);
        let p = if pointwise || !(needs_w || needs_x) {
            Vec::new()
        } else {
            im2col(&graph.value(x).data()[bi * ic * ih * iw..(bi + 1) * ic * ih * iw], &g)
        };
        if needs_w {
            let gw = grad_buf(grads, w, oc * k);
            unsafe {
                if pointwise {
                    let xplane = &graph.value(x).data()[bi * ic * m..(bi + 1) * ic * m];
                    // dW[N, K] += dY[N, M] * X^T (X channel-major is K x M)
                    S::gemm(oc, m, k, S::one(), gy.as_ptr(), m as isize, 1, xplane.as_ptr(), 1, m as isize, S::one(), gw.as_mut_ptr(), k as isize, 1);
                } else {
                    S::gemm(oc, m, k, S::one(), gy.as_ptr(), m as isize, 1, p.as_ptr(), k as isize, 1, S::one(), gw.as_mut_ptr(), k as isize, 1);
                }
            }
        }
        if needs_x {
            if pointwise {
                let gx = grad_buf(grads, x, bsz * ic * m);
                let wdata = graph.value(w).data();
                let dst = &mut gx[bi * ic * m..(bi + 1) * ic * m];
                // dX[K, M] += W2^T[K, N] * dY[N, M]
                unsafe {
                    S::gemm(k, oc, m, S::one(), wdata.as_ptr(), 1, k as isize, gy.as_ptr(), m as isize, 1, S::one(), dst.as_mut_ptr(), m as isize, 1);
                }
            } else {
                // dP[M, K] = dY^T[M, N] * W2[N, K]
                let mut dp = vec![S::zero(); m * k];
                let wdata = graph.value(w).data();
                unsafe {
                    S::gemm(m, oc, k, S::one(), gy.as_ptr(), 1, m as isize, wdata.as_ptr(), k as isize, 1, S::zero(), dp.as_mut_ptr(), k as isize, 1);
                }
                let gx = grad_buf(grads, x, bsz * ic * ih * iw);
                col2im(&dp, &g, &mut gx[bi * ic * ih * iw..(bi + 1) * ic * ih * iw]);
            }
        }
        if needs_b {
            let gb = grad_buf(grads, b, oc);
            for c in 0..oc {
                let mut acc = S::zero();
                for &v in &gy[c * m..(c + 1) * m] {
                    acc += v;
                }
                gb[c] += acc;
            }
        }
    }
}

pub(crate) fn tconv2d_backward<S: Scalar>(
    graph: &Graph<S>,
    x: NodeIdT,
    w: NodeIdT,
    b: NodeIdT,
    stride: (usize, usize),
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let [bsz, a_ch, ih, iw] = graph.value(x).shape();
    let [_, wic, kh, kw] = graph.value(w).shape();
    let oh = tconv2d_out_extent(ih, kh, stride.0);
    let ow = tconv2d_out_extent(iw, kw, stride.1);
    let g = Geom {
        ic: wic,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        dh: 1,
        dw: 1,
        pt: 0,
        pl: 0,
        ih: oh,
        iw: ow,
        oh: ih,
        ow: iw,
    };
    let (m, k) = (g.m(), g.k());
    let needs_x = graph.needs(x);
    let needs_w = graph.needs(w);
    let needs_b = graph.needs(b);
    for bi in 0..bsz {
        let gy = &gout[bi * wic * oh * ow..(bi + 1) * wic * oh * ow];
        let p = if needs_x || needs_w { im2col(gy, &g) } else { Vec::new() };
        if needs_x {
            let gx = grad_buf(grads, x, bsz * a_ch * m);
            let wdata = graph.value(w).data();
            let dst = &mut gx[bi * a_ch * m..(bi + 1) * a_ch * m];
            // dX[A, M] += W2[A, K] * P^T
            unsafe {
                S::gemm(a_ch, k, m, S::one(), wdata.as_ptr(), k as isize, 1, p.as_ptr(), 1, k as isize, S::one(), dst.as_mut_ptr(), m as isize, 1);
            }
        }
        if needs_w {
            let xplane = &graph.value(x).data()[bi * a_ch * m..(bi + 1) * a_ch * m];
            let gw = grad_buf(grads, w, a_ch * k);
            // dW2[A, K] += X[A, M] * P[M, K]
            unsafe {
                S::gemm(a_ch, m, k, S::one(), xplane.as_ptr(), m as isize, 1, p.as_ptr(), k as isize, 1, S::one(), gw.as_mut_ptr(), k as isize, 1);
            }
        }
        if needs_b {
            let gb = grad_buf(grads, b, wic);
            for c in 0..wic {
                let mut acc = S::zero();
                for &v in &gy[c * oh * ow..(c + 1) * oh * ow] {
                    acc += v;
                }
                gb[c] += acc;
            }
        }
    }
}
