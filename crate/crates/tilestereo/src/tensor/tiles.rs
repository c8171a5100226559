//! Tile-level ops for slanted-plane stereo.
//!
//! Plane channel convention used throughout: a tile hypothesis stores
//! `[d, dx, dy, descriptor...]`, with `d` the disparity at the tile center,
//! `dx` the change per pixel along x (columns) and `dy` along y (rows).
//! Expanded per-pixel values are ordered channel `k = i * t + j` for the
//! in-tile offset `(i, j)` = (column, row), and land on image pixel
//! `(row, col) = (t*y + j, t*x + i)` for tile `(y, x)`.

use std::rc::Rc;

use super::graph::{grad_buf, Graph, Op};
use super::{NodeId, Scalar, Tensor};

#[inline]
fn lerp_prep<S: Scalar>(x: S, w: usize) -> (usize, usize, S, bool) {
    let max = S::from_f64((w - 1) as f64);
    let clamped = !(x > S::zero()) || !(x < max);
    let xc = x.max(S::zero()).min(max);
    let x0 = xc.floor();
    let i0 = x0.as_f64() as usize;
    let i1 = (i0 + 1).min(w - 1);
    (i0, i1, xc - x0, clamped)
}

impl<S: Scalar> Graph<S> {
    /// Samples every channel row of `feat` at fractional x coordinates given
    /// per output pixel, linearly interpolated and clamped to the row. Both
    /// the features and the coordinates receive gradients; the coordinate
    /// gradient is zero where clamping pinned the sample.
    pub fn sample_linear_x(&mut self, feat: NodeId, coords: NodeId) -> NodeId {
        let [bsz, c, h, w] = self.value(feat).shape();
        let [cb, cc, ch, wo] = self.value(coords).shape();
        assert!(cb == bsz && cc == 1 && ch == h, "coords must be [b,1,h,w_out]");
        let mut out = Tensor::zeros([bsz, c, h, wo]);
        for bi in 0..bsz {
            for ci in 0..c {
                for y in 0..h {
                    let frow = self.value(feat).plane(bi, ci);
                    let frow = &frow[y * w..(y + 1) * w];
                    for xo in 0..wo {
                        let xc = self.value(coords).at(bi, 0, y, xo);
                        let (i0, i1, f, _) = lerp_prep(xc, w);
                        let v = frow[i0] * (S::one() - f) + frow[i1] * f;
                        out.set(bi, ci, y, xo, v);
                    }
                }
            }
        }
        let needs = self.needs(feat) || self.needs(coords);
        self.push(out, Op::SampleLinearX { feat, coords }, needs)
    }

    /// L1 distance between reference tiles and one gathered column of the
    /// secondary map per tile: `out[y,x] = sum_c |a[c,y,x] - b[c,y, sx*x - d]|`
    /// with the integer `d` per tile from `dmap` (negative entries or columns
    /// outside the secondary map produce 0 and no gradient).
    pub fn l1_dist_gather(&mut self, a: NodeId, b: NodeId, stride_x: usize, dmap: Rc<Vec<i32>>) -> NodeId {
        let [bsz, c, ht, wt] = self.value(a).shape();
        let [b2, c2, h2, ws] = self.value(b).shape();
        assert!(b2 == bsz && c2 == c && h2 == ht, "embedding grids disagree");
        assert_eq!(dmap.len(), bsz * ht * wt, "one disparity per reference tile");
        let mut out = Tensor::zeros([bsz, 1, ht, wt]);
        for bi in 0..bsz {
            for y in 0..ht {
                for x in 0..wt {
                    let d = dmap[(bi * ht + y) * wt + x];
                    if d < 0 {
                        continue;
                    }
                    let col = stride_x as i64 * x as i64 - d as i64;
                    if col < 0 || col >= ws as i64 {
                        continue;
                    }
                    let col = col as usize;
                    let mut acc = S::zero();
                    for ci in 0..c {
                        let va = self.value(a).at(bi, ci, y, x);
                        let vb = self.value(b).at(bi, ci, y, col);
                        acc += (va - vb).abs();
                    }
                    out.set(bi, 0, y, x, acc);
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::L1DistGather { a, b, stride_x, dmap }, needs)
    }

    /// Expands `[d, dx, dy]` tile channels to the t*t per-pixel disparities
    /// `d + (i - (t-1)/2) dx + (j - (t-1)/2) dy` (channel order in the module
    /// doc). Extra input channels beyond the first three are ignored.
    pub fn expand_plane(&mut self, geo: NodeId, t: usize) -> NodeId {
        let [bsz, c, ht, wt] = self.value(geo).shape();
        assert!(c >= 3, "plane expansion wants [d, dx, dy] channels");
        let ctr = S::from_f64((t as f64 - 1.0) / 2.0);
        let mut out = Tensor::zeros([bsz, t * t, ht, wt]);
        for bi in 0..bsz {
            for i in 0..t {
                let oi = S::from_f64(i as f64) - ctr;
                for j in 0..t {
                    let oj = S::from_f64(j as f64) - ctr;
                    let k = i * t + j;
                    for y in 0..ht {
                        for x in 0..wt {
                            let d = self.value(geo).at(bi, 0, y, x);
                            let dx = self.value(geo).at(bi, 1, y, x);
                            let dy = self.value(geo).at(bi, 2, y, x);
                            out.set(bi, k, y, x, d + oi * dx + oj * dy);
                        }
                    }
                }
            }
        }
        let needs = self.needs(geo);
        self.push(out, Op::ExpandPlane { geo, t }, needs)
    }

    /// Photometric cost of a local plane: for tile (y, x) and in-tile offset
    /// (i, j), compares the reference feature at pixel (t*y+j, t*x+i) with
    /// the secondary features sampled at that column minus the plane's
    /// per-pixel disparity. Gradients reach both feature maps and the
    /// disparities.
    pub fn warp_cost(&mut self, el: NodeId, er: NodeId, dprime: NodeId, t: usize) -> NodeId {
        let [bsz, c, hf, wf] = self.value(el).shape();
        assert_eq!(self.value(er).shape(), [bsz, c, hf, wf], "feature maps must agree");
        let [b2, k2, ht, wt] = self.value(dprime).shape();
        assert!(b2 == bsz && k2 == t * t && ht * t == hf && wt * t == wf, "disparity grid does not tile the features");
        let mut out = Tensor::zeros([bsz, t * t, ht, wt]);
        for bi in 0..bsz {
            for y in 0..ht {
                for x in 0..wt {
                    for i in 0..t {
                        for j in 0..t {
                            let k = i * t + j;
                            let py = t * y + j;
                            let px = t * x + i;
                            let dp = self.value(dprime).at(bi, k, y, x);
                            let xr = S::from_f64(px as f64) - dp;
                            let (i0, i1, f, _) = lerp_prep(xr, wf);
                            let mut acc = S::zero();
                            for ci in 0..c {
                                let row = &self.value(er).plane(bi, ci)[py * wf..(py + 1) * wf];
                                let r = row[i0] * (S::one() - f) + row[i1] * f;
                                acc += (self.value(el).at(bi, ci, py, px) - r).abs();
                            }
                            out.set(bi, k, y, x, acc);
                        }
                    }
                }
            }
        }
        let needs = self.needs(el) || self.needs(er) || self.needs(dprime);
        self.push(out, Op::WarpCost { el, er, dprime, t }, needs)
    }

    /// Expands tile hypotheses to a full-resolution disparity map. `foot` is
    /// the tile footprint in output pixels; `disp_scale` converts the stored
    /// disparity units to output units (2^level for pyramid tiles, 1 for the
    /// refinement tiles that already live at full resolution). Slopes are per
    /// output pixel and unit-free, so they are not rescaled.
    pub fn plane_to_full(&mut self, geo: NodeId, foot: usize, disp_scale: f64) -> NodeId {
        let [bsz, c, ht, wt] = self.value(geo).shape();
        assert!(c >= 3, "plane expansion wants [d, dx, dy] channels");
        let ctr = S::from_f64((foot as f64 - 1.0) / 2.0);
        let scale = S::from_f64(disp_scale);
        let mut out = Tensor::zeros([bsz, 1, ht * foot, wt * foot]);
        for bi in 0..bsz {
            for y in 0..ht {
                for x in 0..wt {
                    let d = self.value(geo).at(bi, 0, y, x) * scale;
                    let dx = self.value(geo).at(bi, 1, y, x);
                    let dy = self.value(geo).at(bi, 2, y, x);
                    for j in 0..foot {
                        let oj = S::from_f64(j as f64) - ctr;
                        for i in 0..foot {
                            let oi = S::from_f64(i as f64) - ctr;
                            out.set(bi, 0, foot * y + j, foot * x + i, d + oi * dx + oj * dy);
                        }
                    }
                }
            }
        }
        let needs = self.needs(geo);
        self.push(out, Op::PlaneToFull { geo, foot, disp_scale }, needs)
    }

    /// Nearest-neighbor upsampling by integer factors (fy, fx).
    pub fn upsample_nearest(&mut self, x: NodeId, fy: usize, fx: usize) -> NodeId {
        let [bsz, c, h, w] = self.value(x).shape();
        let out = Tensor::from_fn([bsz, c, h * fy, w * fx], |bi, ci, yy, xx| self.value(x).at(bi, ci, yy / fy, xx / fx));
        let needs = self.needs(x);
        self.push(out, Op::UpsampleNearest { x, fy, fx }, needs)
    }

    /// Splits every tile into 2x2 children. Child centers sit `offset`
    /// parent pixels from the parent center along each axis, so the child
    /// disparity is `disp_scale * (d +/- offset*dx +/- offset*dy)`; slopes
    /// and descriptor channels are copied. `disp_scale` is 2 when the
    /// children live at the next finer pyramid level (disparity units halve)
    /// and 1 within the full-resolution refinement phase.
    pub fn upsample_hyp(&mut self, h: NodeId, offset: f64, disp_scale: f64) -> NodeId {
        let [bsz, c, ht, wt] = self.value(h).shape();
        assert!(c >= 3, "hypothesis tensor wants [d, dx, dy, ...] channels");
        let off = S::from_f64(offset);
        let scale = S::from_f64(disp_scale);
        let mut out = Tensor::zeros([bsz, c, ht * 2, wt * 2]);
        for bi in 0..bsz {
            for y in 0..ht {
                for x in 0..wt {
                    let d = self.value(h).at(bi, 0, y, x);
                    let dx = self.value(h).at(bi, 1, y, x);
                    let dy = self.value(h).at(bi, 2, y, x);
                    for jj in 0..2usize {
                        let sj = S::from_f64(2.0 * jj as f64 - 1.0);
                        for ii in 0..2usize {
                            let si = S::from_f64(2.0 * ii as f64 - 1.0);
                            let (cy, cx) = (2 * y + jj, 2 * x + ii);
                            out.set(bi, 0, cy, cx, scale * (d + si * off * dx + sj * off * dy));
                            for ci in 1..c {
                                out.set(bi, ci, cy, cx, self.value(h).at(bi, ci, y, x));
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(h);
        self.push(out, Op::UpsampleHyp { h, offset, disp_scale }, needs)
    }

    /// Per-tile winner-take-all across all channels: where `take_a` is true
    /// the output copies `a`, otherwise `b`. The mask is data, so gradients
    /// route only through the selected hypothesis.
    pub fn select_tiles(&mut self, a: NodeId, b: NodeId, take_a: Rc<Vec<bool>>) -> NodeId {
        let [bsz, c, ht, wt] = self.value(a).shape();
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "branches must agree");
        assert_eq!(take_a.len(), bsz * ht * wt, "one flag per tile");
        let out = Tensor::from_fn([bsz, c, ht, wt], |bi, ci, y, x| {
            if take_a[(bi * ht + y) * wt + x] {
                self.value(a).at(bi, ci, y, x)
            } else {
                self.value(b).at(bi, ci, y, x)
            }
        });
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::SelectTiles { a, b, take_a }, needs)
    }
}

pub(crate) fn sample_linear_x_backward<S: Scalar>(graph: &Graph<S>, feat: NodeId, coords: NodeId, gout: &[S], grads: &mut [Option<Vec<S>>]) {
    let [bsz, c, h, w] = graph.value(feat).shape();
    let wo = graph.value(coords).shape()[3];
    let needs_f = graph.needs(feat);
    let needs_c = graph.needs(coords);
    for bi in 0..bsz {
        for y in 0..h {
            for xo in 0..wo {
                let xc = graph.value(coords).at(bi, 0, y, xo);
                let (i0, i1, f, clamped) = lerp_prep(xc, w);
                let mut dcoord = S::zero();
                for ci in 0..c {
                    let g = gout[((bi * c + ci) * h + y) * wo + xo];
                    if g == S::zero() {
                        continue;
                    }
                    let frow = graph.value(feat).plane(bi, ci);
                    let frow = &frow[y * w..(y + 1) * w];
                    if needs_f {
                        let gf = grad_buf(grads, feat, bsz * c * h * w);
                        gf[((bi * c + ci) * h + y) * w + i0] += g * (S::one() - f);
                        gf[((bi * c + ci) * h + y) * w + i1] += g * f;
                    }
                    if needs_c && !clamped {
                        dcoord += g * (frow[i1] - frow[i0]);
                    }
                }
                if needs_c && dcoord != S::zero() {
                    let gc = grad_buf(grads, coords, bsz * h * wo);
                    gc[(bi * h + y) * wo + xo] += dcoord;
                }
            }
        }
    }
}

pub(crate) fn l1_dist_gather_backward<S: Scalar>(
    graph: &Graph<S>,
    a: NodeId,
    b: NodeId,
    stride_x: usize,
    dmap: &Rc<Vec<i32>>,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let [bsz, c, ht, wt] = graph.value(a).shape();
    let ws = graph.value(b).shape()[3];
    let needs_a = graph.needs(a);
    let needs_b = graph.needs(b);
    for bi in 0..bsz {
        for y in 0..ht {
            for x in 0..wt {
                let g = gout[(bi * ht + y) * wt + x];
                if g == S::zero() {
                    continue;
                }
                let d = dmap[(bi * ht + y) * wt + x];
                if d < 0 {
                    continue;
                }
                let col = stride_x as i64 * x as i64 - d as i64;
                if col < 0 || col >= ws as i64 {
                    continue;
                }
                let col = col as usize;
                for ci in 0..c {
                    let va = graph.value(a).at(bi, ci, y, x);
                    let vb = graph.value(b).at(bi, ci, y, col);
                    let s = if va > vb {
                        g
                    } else if va < vb {
                        -g
                    } else {
                        continue;
                    };
                    if needs_a {
                        let ga = grad_buf(grads, a, bsz * c * ht * wt);
                        ga[((bi * c + ci) * ht + y) * wt + x] += s;
                    }
                    if needs_b {
                        let gb = grad_buf(grads, b, bsz * c * ht * ws);
                        gb[((bi * c + ci) * ht + y) * ws + col] -= s;
                    }
                }
            }
        }
    }
}

pub(crate) fn expand_plane_backward<S: Scalar>(graph: &Graph<S>, geo: NodeId, t: usize, gout: &[S], grads: &mut [Option<Vec<S>>]) {
    if !graph.needs(geo) {
        return;
    }
    let [bsz, c, ht, wt] = graph.value(geo).shape();
    let ctr = (t as f64 - 1.0) / 2.0;
    let gg = grad_buf(grads, geo, bsz * c * ht * wt);
    let hw = ht * wt;
    for bi in 0..bsz {
        for i in 0..t {
            let oi = S::from_f64(i as f64 - ctr);
            for j in 0..t {
                let oj = S::from_f64(j as f64 - ctr);
                let k = i * t + j;
                for p in 0..hw {
                    let g = gout[(bi * t * t + k) * hw + p];
                    gg[(bi * c) * hw + p] += g;
                    gg[(bi * c + 1) * hw + p] += g * oi;
                    gg[(bi * c + 2) * hw + p] += g * oj;
                }
            }
        }
    }
}

pub(crate) fn warp_cost_backward<S: Scalar>(
    graph: &Graph<S>,
    el: NodeId,
    er: NodeId,
    dprime: NodeId,
    t: usize,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let [bsz, c, hf, wf] = graph.value(el).shape();
    let [_, k2, ht, wt] = graph.value(dprime).shape();
    let needs_l = graph.needs(el);
    let needs_r = graph.needs(er);
    let needs_d = graph.needs(dprime);
    for bi in 0..bsz {
        for y in 0..ht {
            for x in 0..wt {
                for i in 0..t {
                    for j in 0..t {
                        let k = i * t + j;
                        let g = gout[((bi * k2 + k) * ht + y) * wt + x];
                        if g == S::zero() {
                            continue;
                        }
                        let py = t * y + j;
                        let px = t * x + i;
                        let dp = graph.value(dprime).at(bi, k, y, x);
                        let xr = S::from_f64(px as f64) - dp;
                        let (i0, i1, f, clamped) = lerp_prep(xr, wf);
                        let mut ddisp = S::zero();
                        for ci in 0..c {
                            let row = &graph.value(er).plane(bi, ci)[py * wf..(py + 1) * wf];
                            let r = row[i0] * (S::one() - f) + row[i1] * f;
                            let diff = graph.value(el).at(bi, ci, py, px) - r;
                            let s = if diff > S::zero() {
                                g
                            } else if diff < S::zero() {
                                -g
                            } else {
                                continue;
                            };
                            if needs_l {
                                let gl = grad_buf(grads, el, bsz * c * hf * wf);
                                gl[((bi * c + ci) * hf + py) * wf + px] += s;
                            }
                            if needs_r {
                                let gr = grad_buf(grads, er, bsz * c * hf * wf);
                                gr[((bi * c + ci) * hf + py) * wf + i0] -= s * (S::one() - f);
                                gr[((bi * c + ci) * hf + py) * wf + i1] -= s * f;
                            }
                            if needs_d && !clamped {
                                // d(cost)/d(dp) = sign * -dr/dxr * dxr/ddp = sign * (row[i1]-row[i0])
                                ddisp += s * (row[i1] - row[i0]);
                            }
                        }
                        if needs_d && ddisp != S::zero() {
                            let gd = grad_buf(grads, dprime, bsz * k2 * ht * wt);
                            gd[((bi * k2 + k) * ht + y) * wt + x] += ddisp;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn plane_to_full_backward<S: Scalar>(
    graph: &Graph<S>,
    geo: NodeId,
    foot: usize,
    disp_scale: f64,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    if !graph.needs(geo) {
        return;
    }
    let [bsz, c, ht, wt] = graph.value(geo).shape();
    let ctr = (foot as f64 - 1.0) / 2.0;
    let scale = S::from_f64(disp_scale);
    let (oh, ow) = (ht * foot, wt * foot);
    let gg = grad_buf(grads, geo, bsz * c * ht * wt);
    let hw = ht * wt;
    for bi in 0..bsz {
        for y in 0..ht {
            for x in 0..wt {
                let mut gd = S::zero();
                let mut gdx = S::zero();
                let mut gdy = S::zero();
                for j in 0..foot {
                    let oj = S::from_f64(j as f64 - ctr);
                    for i in 0..foot {
                        let oi = S::from_f64(i as f64 - ctr);
                        let g = gout[(bi * oh + foot * y + j) * ow + foot * x + i];
                        gd += g;
                        gdx += g * oi;
                        gdy += g * oj;
                    }
                }
                gg[(bi * c) * hw + y * wt + x] += gd * scale;
                gg[(bi * c + 1) * hw + y * wt + x] += gdx;
                gg[(bi * c + 2) * hw + y * wt + x] += gdy;
            }
        }
    }
}

pub(crate) fn upsample_nearest_backward<S: Scalar>(graph: &Graph<S>, x: NodeId, fy: usize, fx: usize, gout: &[S], grads: &mut [Option<Vec<S>>]) {
    if !graph.needs(x) {
        return;
    }
    let [bsz, c, h, w] = graph.value(x).shape();
    let (oh, ow) = (h * fy, w * fx);
    let gx = grad_buf(grads, x, bsz * c * h * w);
    for bc in 0..bsz * c {
        for yy in 0..oh {
            for xx in 0..ow {
                gx[(bc * h + yy / fy) * w + xx / fx] += gout[(bc * oh + yy) * ow + xx];
            }
        }
    }
}

pub(crate) fn upsample_hyp_backward<S: Scalar>(
    graph: &Graph<S>,
    h: NodeId,
    offset: f64,
    disp_scale: f64,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    if !graph.needs(h) {
        return;
    }
    let [bsz, c, ht, wt] = graph.value(h).shape();
    let off = S::from_f64(offset);
    let scale = S::from_f64(disp_scale);
    let (oh, ow) = (ht * 2, wt * 2);
    let gh = grad_buf(grads, h, bsz * c * ht * wt);
    for bi in 0..bsz {
        for y in 0..ht {
            for x in 0..wt {
                for jj in 0..2usize {
                    let sj = S::from_f64(2.0 * jj as f64 - 1.0);
                    for ii in 0..2usize {
                        let si = S::from_f64(2.0 * ii as f64 - 1.0);
                        let (cy, cx) = (2 * y + jj, 2 * x + ii);
                        let gd = gout[((bi * c) * oh + cy) * ow + cx];
                        gh[(bi * c) * ht * wt + y * wt + x] += scale * gd;
                        gh[(bi * c + 1) * ht * wt + y * wt + x] += scale * si * off * gd;
                        gh[(bi * c + 2) * ht * wt + y * wt + x] += scale * sj * off * gd;
                        for ci in 1..c {
                            gh[(bi * c + ci) * ht * wt + y * wt + x] += gout[((bi * c + ci) * oh + cy) * ow + cx];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn select_tiles_backward<S: Scalar>(
    graph: &Graph<S>,
    a: NodeId,
    b: NodeId,
    take_a: &Rc<Vec<bool>>,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let [bsz, c, ht, wt] = graph.value(a).shape();
    let hw = ht * wt;
    for (branch, wanted) in [(a, true), (b, false)] {
        if !graph.needs(branch) {
            continue;
        }
        let g = grad_buf(grads, branch, bsz * c * hw);
        for bi in 0..bsz {
            for ci in 0..c {
                for p in 0..hw {
                    if take_a[bi * hw + p] == wanted {
                        g[(bi * c + ci) * hw + p] += gout[(bi * c + ci) * hw + p];
                    }
                }
            }
        }
    }
}
