use std::rc::Rc;

use super::{conv, tiles, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::tensor::store::ParameterStore;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Operation record. Holds input ids plus whatever constants the backward
/// pass needs; activations themselves stay on the nodes.
#[derive(Clone)]
pub(crate) enum Op<S> {
    Leaf,
    LeakyRelu { x: NodeId, slope: S },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddScalar { x: NodeId },
    MulScalar { x: NodeId, c: S },
    Abs { x: NodeId },
    MinScalar { x: NodeId, c: S },
    RobustRho { x: NodeId, alpha: f64, c: f64 },
    ConcatCh { xs: Vec<NodeId> },
    SliceCh { x: NodeId, start: usize },
    SumAll { x: NodeId },
    MaskedMean { x: NodeId, mask: Rc<Vec<bool>>, count: usize },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: (usize, usize), dilation: (usize, usize), pad: [usize; 4] },
    ConvT2d { x: NodeId, w: NodeId, b: NodeId, stride: (usize, usize) },
    SampleLinearX { feat: NodeId, coords: NodeId },
    L1DistGather { a: NodeId, b: NodeId, stride_x: usize, dmap: Rc<Vec<i32>> },
    ExpandPlane { geo: NodeId, t: usize },
    WarpCost { el: NodeId, er: NodeId, dprime: NodeId, t: usize },
    PlaneToFull { geo: NodeId, foot: usize, disp_scale: f64 },
    UpsampleNearest { x: NodeId, fy: usize, fx: usize },
    UpsampleHyp { h: NodeId, offset: f64, disp_scale: f64 },
    SelectTiles { a: NodeId, b: NodeId, take_a: Rc<Vec<bool>> },
}

pub(crate) struct Node<S: Scalar> {
    pub value: Tensor<S>,
    pub op: Op<S>,
    pub needs_grad: bool,
}

/// Reverse-mode tape. Ops append nodes; [`Graph::backward`] walks the tape in
/// reverse and accumulates gradients additively, so values feeding several
/// consumers collect every contribution. One graph records one forward pass.
pub struct Graph<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
    params: Vec<(NodeId, String)>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), grads: Vec::new() }
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "op produced a non-finite value");
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Records a leaf the backward pass treats as data.
    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        let mut t = t;
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    /// Records a leaf that collects a gradient (used directly in tests; model
    /// parameters go through [`Graph::param`]).
    pub fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> NodeId {
        let mut t = t;
        t.requires_grad = requires_grad;
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Copies a named parameter out of the store as a gradient-collecting
    /// leaf. Gradients flow back through [`Graph::export_grads`].
    pub fn param(&mut self, store: &ParameterStore<S>, name: &str) -> NodeId {
        let t = store.get(name).expect("unknown parameter name").clone();
        let id = self.leaf(t, true);
        self.params.push((id, name.to_string()));
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Scalar payload of a [1,1,1,1] node.
    pub fn scalar(&self, id: NodeId) -> S {
        let t = self.value(id);
        assert_eq!(t.numel(), 1, "node is not a scalar");
        t.data()[0]
    }

    /// Gradient buffer of a leaf after [`Graph::backward`]; `None` when no
    /// gradient reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Accumulates leaf gradients into the store (adding onto whatever is
    /// already there, to allow multi-sample accumulation between steps).
    pub fn export_grads(&self, store: &mut ParameterStore<S>) {
        for (id, name) in &self.params {
            if let Some(g) = self.grad(*id) {
                store.accumulate_grad(name, g);
            }
        }
    }

    /// Reverse pass from a scalar loss node. Errors if the loss is not a
    /// finite scalar; the training harness treats that as an abort.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Shape("backward expects a scalar loss".into()));
        }
        if !lt.data()[0].is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lt.data()[0])));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            self.backprop(i, &gout, &op, &mut grads);
            if matches!(op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop(&self, out: usize, gout: &[S], op: &Op<S>, grads: &mut [Option<Vec<S>>]) {
        match op {
            Op::Leaf => {}
            Op::LeakyRelu { x, slope } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let gx = grad_buf(grads, *x, xv.len());
                    for i in 0..xv.len() {
                        // Kink at exactly zero takes the positive branch.
                        gx[i] += if xv[i] >= S::zero() { gout[i] } else { gout[i] * *slope };
                    }
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let gx = grad_buf(grads, *x, xv.len());
                    for i in 0..xv.len() {
                        if xv[i] > S::zero() {
                            gx[i] += gout[i];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    if self.needs(*id) {
                        let g = grad_buf(grads, *id, gout.len());
                        for i in 0..gout.len() {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    let g = grad_buf(grads, *a, gout.len());
                    for i in 0..gout.len() {
                        g[i] += gout[i];
                    }
                }
                if self.needs(*b) {
                    let g = grad_buf(grads, *b, gout.len());
                    for i in 0..gout.len() {
                        g[i] -= gout[i];
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let g = grad_buf(grads, *a, gout.len());
                    for i in 0..gout.len() {
                        g[i] += gout[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let g = grad_buf(grads, *b, gout.len());
                    for i in 0..gout.len() {
                        g[i] += gout[i] * av[i];
                    }
                }
            }
            Op::AddScalar { x } => {
                if self.needs(*x) {
                    let g = grad_buf(grads, *x, gout.len());
                    for i in 0..gout.len() {
                        g[i] += gout[i];
                    }
                }
            }
            Op::MulScalar { x, c } => {
                if self.needs(*x) {
                    let g = grad_buf(grads, *x, gout.len());
                    for i in 0..gout.len() {
                        g[i] += gout[i] * *c;
                    }
                }
            }
            Op::Abs { x } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let g = grad_buf(grads, *x, xv.len());
                    for i in 0..xv.len() {
                        // Subgradient 0 at the origin.
                        if xv[i] > S::zero() {
                            g[i] += gout[i];
                        } else if xv[i] < S::zero() {
                            g[i] -= gout[i];
                        }
                    }
                }
            }
            Op::MinScalar { x, c } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let g = grad_buf(grads, *x, xv.len());
                    for i in 0..xv.len() {
                        if xv[i] <= *c {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::RobustRho { x, alpha, c } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let g = grad_buf(grads, *x, xv.len());
                    let am2 = S::from_f64((alpha - 2.0).abs());
                    let cc = S::from_f64(c * c);
                    let half_am1 = S::from_f64(alpha / 2.0 - 1.0);
                    for i in 0..xv.len() {
                        let t = xv[i] * xv[i] / (cc * am2) + S::one();
                        g[i] += gout[i] * xv[i] / cc * t.powf(half_am1);
                    }
                }
            }
            Op::ConcatCh { xs } => {
                let [bsz, _, h, w] = self.value(NodeId(out)).shape();
                let hw = h * w;
                let total_c = self.value(NodeId(out)).shape()[1];
                let mut c_off = 0usize;
                for id in xs {
                    let ci = self.value(*id).shape()[1];
                    if self.needs(*id) {
                        let g = grad_buf(grads, *id, bsz * ci * hw);
                        for b in 0..bsz {
                            let src = (b * total_c + c_off) * hw;
                            let dst = b * ci * hw;
                            for j in 0..ci * hw {
                                g[dst + j] += gout[src + j];
                            }
                        }
                    }
                    c_off += ci;
                }
            }
            Op::SliceCh { x, start } => {
                if self.needs(*x) {
                    let [bsz, cx, h, w] = self.value(*x).shape();
                    let cs = self.value(NodeId(out)).shape()[1];
                    let hw = h * w;
                    let g = grad_buf(grads, *x, bsz * cx * hw);
                    for b in 0..bsz {
                        let dst = (b * cx + start) * hw;
                        let src = b * cs * hw;
                        for j in 0..cs * hw {
                            g[dst + j] += gout[src + j];
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let g = grad_buf(grads, *x, n);
                    for v in g.iter_mut() {
                        *v += gout[0];
                    }
                }
            }
            Op::MaskedMean { x, mask, count } => {
                if self.needs(*x) && *count > 0 {
                    let n = self.value(*x).numel();
                    let g = grad_buf(grads, *x, n);
                    let scale = gout[0] / S::from_f64(*count as f64);
                    for (i, keep) in mask.iter().enumerate() {
                        if *keep {
                            g[i] += scale;
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, dilation, pad } => {
                conv::conv2d_backward(self, *x, *w, *b, *stride, *dilation, *pad, gout, grads);
            }
            Op::ConvT2d { x, w, b, stride } => {
                conv::tconv2d_backward(self, *x, *w, *b, *stride, gout, grads);
            }
            Op::SampleLinearX { feat, coords } => {
                tiles::sample_linear_x_backward(self, *feat, *coords, gout, grads);
            }
            Op::L1DistGather { a, b, stride_x, dmap } => {
                tiles::l1_dist_gather_backward(self, *a, *b, *stride_x, dmap, gout, grads);
            }
            Op::ExpandPlane { geo, t } => {
                tiles::expand_plane_backward(self, *geo, *t, gout, grads);
            }
            Op::WarpCost { el, er, dprime, t } => {
                tiles::warp_cost_backward(self, *el, *er, *dprime, *t, gout, grads);
            }
            Op::PlaneToFull { geo, foot, disp_scale } => {
                tiles::plane_to_full_backward(self, *geo, *foot, *disp_scale, gout, grads);
            }
            Op::UpsampleNearest { x, fy, fx } => {
                tiles::upsample_nearest_backward(self, *x, *fy, *fx, gout, grads);
            }
            Op::UpsampleHyp { h, offset, disp_scale } => {
                tiles::upsample_hyp_backward(self, *h, *offset, *disp_scale, gout, grads);
            }
            Op::SelectTiles { a, b, take_a } => {
                tiles::select_tiles_backward(self, *a, *b, take_a, gout, grads);
            }
        }
    }

    // ---- elementwise and reduction ops ----

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = S::from_f64(slope);
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| if a >= S::zero() { a } else { a * s }).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::LeakyRelu { x, slope: s }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a.max(S::zero())).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add expects identical extents");
        let out = Tensor::new(va.shape(), va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect()).unwrap();
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Add { a, b }, needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub expects identical extents");
        let out = Tensor::new(va.shape(), va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect()).unwrap();
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub { a, b }, needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul expects identical extents");
        let out = Tensor::new(va.shape(), va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect()).unwrap();
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul { a, b }, needs)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = S::from_f64(c);
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a + s).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::AddScalar { x }, needs)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = S::from_f64(c);
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a * s).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::MulScalar { x, c: s }, needs)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a.abs()).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::Abs { x }, needs)
    }

    /// Elementwise min(x, c); the gradient follows x wherever x <= c.
    pub fn min_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = S::from_f64(c);
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a.min(s)).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::MinScalar { x, c: s }, needs)
    }

    /// General robust penalty rho(x; alpha, c) =
    /// (|alpha-2|/alpha) * (((x/c)^2/|alpha-2| + 1)^(alpha/2) - 1).
    /// `alpha` must stay away from the removable singularities at 0 and 2.
    pub fn robust_rho(&mut self, x: NodeId, alpha: f64, c: f64) -> NodeId {
        assert!(alpha.abs() > 1e-6 && (alpha - 2.0).abs() > 1e-6, "alpha at a singular point of the penalty");
        let v = self.value(x);
        let am2 = S::from_f64((alpha - 2.0).abs());
        let lead = S::from_f64((alpha - 2.0).abs() / alpha);
        let cc = S::from_f64(c * c);
        let half = S::from_f64(alpha / 2.0);
        let out = Tensor::new(
            v.shape(),
            v.data()
                .iter()
                .map(|&a| {
                    let t = a * a / (cc * am2) + S::one();
                    lead * (t.powf(half) - S::one())
                })
                .collect(),
        )
        .unwrap();
        let needs = self.needs(x);
        self.push(out, Op::RobustRho { x, alpha, c }, needs)
    }

    /// Concatenates along the channel axis; batch and spatial extents must agree.
    pub fn concat_ch(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let [bsz, _, h, w] = self.value(xs[0]).shape();
        let total_c: usize = xs.iter().map(|&id| self.value(id).shape()[1]).sum();
        for &id in xs {
            let s = self.value(id).shape();
            assert!(s[0] == bsz && s[2] == h && s[3] == w, "concat_ch extents differ: {:?}", s);
        }
        let hw = h * w;
        let mut data = vec![S::zero(); bsz * total_c * hw];
        for b in 0..bsz {
            let mut c_off = 0usize;
            for &id in xs {
                let v = self.value(id);
                let ci = v.shape()[1];
                let src = &v.data()[b * ci * hw..(b + 1) * ci * hw];
                data[(b * total_c + c_off) * hw..(b * total_c + c_off) * hw + ci * hw].copy_from_slice(src);
                c_off += ci;
            }
        }
        let out = Tensor::new([bsz, total_c, h, w], data).unwrap();
        let needs = xs.iter().any(|&id| self.needs(id));
        self.push(out, Op::ConcatCh { xs: xs.to_vec() }, needs)
    }

    /// Copies channels [start, start+len) into a new node.
    pub fn slice_ch(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let [bsz, c, h, w] = self.value(x).shape();
        assert!(start + len <= c, "channel slice out of range");
        let hw = h * w;
        let mut data = vec![S::zero(); bsz * len * hw];
        for b in 0..bsz {
            let v = self.value(x);
            let src = (b * c + start) * hw;
            data[b * len * hw..(b + 1) * len * hw].copy_from_slice(&v.data()[src..src + len * hw]);
        }
        let out = Tensor::new([bsz, len, h, w], data).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::SliceCh { x, start }, needs)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s: S = v.data().iter().copied().sum();
        let out = Tensor::new([1, 1, 1, 1], vec![s]).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::SumAll { x }, needs)
    }

    /// Mean over elements where `mask` is true. An empty mask yields exactly
    /// zero with no gradient, so optional loss terms can drop out cleanly.
    pub fn masked_mean(&mut self, x: NodeId, mask: Rc<Vec<bool>>) -> NodeId {
        let v = self.value(x);
        assert_eq!(mask.len(), v.numel(), "mask must cover every element");
        let count = mask.iter().filter(|&&m| m).count();
        let mut acc = S::zero();
        if count > 0 {
            for (val, keep) in v.data().iter().zip(mask.iter()) {
                if *keep {
                    acc += *val;
                }
            }
            acc = acc / S::from_f64(count as f64);
        }
        let out = Tensor::new([1, 1, 1, 1], vec![acc]).unwrap();
        let needs = self.needs(x) && count > 0;
        self.push(out, Op::MaskedMean { x, mask, count }, needs)
    }
}

/// Zero-initializes on first touch so contributions accumulate additively.
pub(crate) fn grad_buf<S: Scalar>(grads: &mut [Option<Vec<S>>], id: NodeId, len: usize) -> &mut [S] {
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(vec![S::zero(); len]);
    }
    let buf = slot.as_mut().unwrap();
    debug_assert_eq!(buf.len(), len);
    buf
}

