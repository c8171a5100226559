//! Naive reference implementations used by the test suites and the
//! `selftest` command. Everything here is a direct transcription of the
//! defining formulas: plain loops, 64-bit arithmetic where precision
//! matters, and no code shared with the optimized paths being checked.

use crate::tensor::store::ParameterStore;
use crate::tensor::{conv2d_out_extent, tconv2d_out_extent, Graph, NodeId, Scalar, Tensor};

/// Cross-correlation evaluated tap by tap with explicit loops.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: [usize; 4],
) -> Tensor<f64> {
    let [bsz, ic, ih, iw] = x.shape();
    let [oc, wic, kh, kw] = w.shape();
    assert_eq!(ic, wic);
    let oh = conv2d_out_extent(ih, kh, stride.0, dilation.0, pad[0], pad[1]);
    let ow = conv2d_out_extent(iw, kw, stride.1, dilation.1, pad[2], pad[3]);
    let mut out = Tensor::zeros([bsz, oc, oh, ow]);
    for bi in 0..bsz {
        for co in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..ic {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride.0 + ky * dilation.0) as isize - pad[0] as isize;
                                let ix = (ox * stride.1 + kx * dilation.1) as isize - pad[2] as isize;
                                if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                    continue;
                                }
                                acc += x.at(bi, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set(bi, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution by scattering every input value through the kernel.
/// Weights use the shared `[conv_out, conv_in, kh, kw]` layout, so the input
/// carries `conv_out` channels and the output `conv_in`.
pub fn naive_tconv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: (usize, usize)) -> Tensor<f64> {
    let [bsz, a_ch, ih, iw] = x.shape();
    let [woc, wic, kh, kw] = w.shape();
    assert_eq!(a_ch, woc);
    let oh = tconv2d_out_extent(ih, kh, stride.0);
    let ow = tconv2d_out_extent(iw, kw, stride.1);
    let mut out = Tensor::zeros([bsz, wic, oh, ow]);
    for bi in 0..bsz {
        for co in 0..wic {
            for y in 0..oh {
                for xx in 0..ow {
                    out.set(bi, co, y, xx, b.data()[co]);
                }
            }
        }
        for ca in 0..a_ch {
            for y in 0..ih {
                for xx in 0..iw {
                    let v = x.at(bi, ca, y, xx);
                    for ci in 0..wic {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = y * stride.0 + ky;
                                let ox = xx * stride.1 + kx;
                                let cur = out.at(bi, ci, oy, ox);
                                out.set(bi, ci, oy, ox, cur + v * w.at(ca, ci, ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Dense cost-volume matcher: materializes the full per-tile cost over every
/// candidate disparity and takes the argmin, ties toward the smaller
/// disparity. Candidates whose gathered column `stride_x*x - d` falls left of
/// the secondary map are excluded; `d = 0` is always feasible. Returns one
/// disparity per tile plus its cost.
pub fn dense_argmin<S: Scalar>(el: &Tensor<S>, er: &Tensor<S>, stride_x: usize, d_max: usize) -> (Vec<i32>, Tensor<S>) {
    let [bsz, c, ht, wt] = el.shape();
    let ws = er.shape()[3];
    let mut dmap = vec![0i32; bsz * ht * wt];
    let mut best = Tensor::zeros([bsz, 1, ht, wt]);
    for bi in 0..bsz {
        for y in 0..ht {
            for x in 0..wt {
                let mut volume: Vec<(i32, S)> = Vec::new();
                for d in 0..=d_max {
                    let col = (stride_x * x) as i64 - d as i64;
                    if col < 0 || col >= ws as i64 {
                        continue;
                    }
                    let mut cost = S::zero();
                    for ci in 0..c {
                        cost += (el.at(bi, ci, y, x) - er.at(bi, ci, y, col as usize)).abs();
                    }
                    volume.push((d as i32, cost));
                }
                let (mut bd, mut bc) = volume[0];
                for &(d, cost) in &volume[1..] {
                    if cost < bc {
                        bd = d;
                        bc = cost;
                    }
                }
                dmap[(bi * ht + y) * wt + x] = bd;
                best.set(bi, 0, y, x, bc);
            }
        }
    }
    (dmap, best)
}

/// Per-pixel slanted-plane warping cost written as one literal loop nest:
/// for tile `(y, x)` and in-tile offset `(i, j)`, compares the reference
/// feature at pixel `(t*y + j, t*x + i)` with the secondary row sampled at
/// that column minus the plane disparity, clamped linear interpolation.
pub fn naive_warp_cost<S: Scalar>(el: &Tensor<S>, er: &Tensor<S>, dprime: &Tensor<S>, t: usize) -> Tensor<S> {
    let [bsz, c, _, wf] = el.shape();
    let [_, _, ht, wt] = dprime.shape();
    let mut out = Tensor::zeros([bsz, t * t, ht, wt]);
    for bi in 0..bsz {
        for y in 0..ht {
            for x in 0..wt {
                for i in 0..t {
                    for j in 0..t {
                        let k = i * t + j;
                        let py = t * y + j;
                        let px = t * x + i;
                        let u = S::from_f64(px as f64) - dprime.at(bi, k, y, x);
                        let u = u.max(S::zero()).min(S::from_f64((wf - 1) as f64));
                        let i0 = u.floor().as_f64() as usize;
                        let i1 = (i0 + 1).min(wf - 1);
                        let f = u - u.floor();
                        let mut acc = S::zero();
                        for ci in 0..c {
                            let r = er.at(bi, ci, py, i0) * (S::one() - f) + er.at(bi, ci, py, i1) * f;
                            acc += (el.at(bi, ci, py, px) - r).abs();
                        }
                        out.set(bi, k, y, x, acc);
                    }
                }
            }
        }
    }
    out
}

/// Robust penalty evaluated through logarithms instead of `powf`, as an
/// independent high-precision check of the closed form.
pub fn rho_reference(x: f64, alpha: f64, c: f64) -> f64 {
    let am2 = (alpha - 2.0).abs();
    let t = (x / c) * (x / c) / am2 + 1.0;
    am2 / alpha * ((alpha / 2.0 * t.ln()).exp() - 1.0)
}

/// Relative error with a floor on the denominator so near-zero pairs
/// compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-4)
}

/// Central finite-difference step used by every gradient suite. Small
/// enough that few elementwise kinks (ReLU corners, clamps) fall inside the
/// sampling window even at trained-scale activations, while 64-bit roundoff
/// on the loss stays orders of magnitude below the tolerance.
pub const FD_STEP: f64 = 1e-6;
/// Relative tolerance used by every gradient suite.
pub const FD_TOL: f64 = 1e-3;

/// Checks analytic gradients of a scalar-valued graph against central finite
/// differences, probing every element of every input marked differentiable.
/// `build` must record the same computation each time it is called; inputs
/// not marked differentiable enter the graph as constants. Returns the
/// largest relative error seen, or a message describing the first offender.
pub fn check_op_gradients(
    inputs: &[Tensor<f64>],
    differentiable: &[bool],
    build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
) -> Result<f64, String> {
    assert_eq!(inputs.len(), differentiable.len());
    let record = |tensors: &[Tensor<f64>]| -> (Graph<f64>, Vec<NodeId>, NodeId) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .zip(differentiable)
            .map(|(t, &diff)| if diff { g.leaf(t.clone(), true) } else { g.constant(t.clone()) })
            .collect();
        let out = build(&mut g, &ids);
        (g, ids, out)
    };
    let (mut g, ids, out) = record(inputs);
    g.backward(out).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (which, t) in inputs.iter().enumerate() {
        if !differentiable[which] {
            continue;
        }
        let zeros;
        let analytic = match g.grad(ids[which]) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; t.numel()];
                &zeros
            }
        };
        for j in 0..t.numel() {
            let probe = |delta: f64| -> f64 {
                let mut moved = inputs.to_vec();
                moved[which].data_mut()[j] += delta;
                let (gg, _, oo) = record(&moved);
                gg.scalar(oo)
            };
            let fd = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
            let err = rel_err(analytic[j], fd);
            if err > FD_TOL {
                return Err(format!(
                    "input {which} element {j}: analytic {:.9} vs finite difference {fd:.9} (rel err {err:.2e})",
                    analytic[j]
                ));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Checks store-held parameter gradients against central finite differences
/// at the probed elements. The caller supplies the analytic gradients (one
/// backward pass through whatever pipeline is under test) and a pure forward
/// evaluation; the store is perturbed in place and restored.
///
/// Probes that straddle a kink are skipped rather than failed: a central
/// difference near a nondifferentiable point is step-dependent, so two
/// estimates at different steps that disagree flag the probe as unusable,
/// while a genuine gradient bug produces consistent estimates that differ
/// from the analytic value. Errors out if every probe lands on a kink.
pub fn check_store_gradients(
    store: &mut ParameterStore<f64>,
    probes: &[(String, usize, f64)],
    loss_of: &mut dyn FnMut(&ParameterStore<f64>) -> f64,
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut usable = 0usize;
    for (name, j, analytic) in probes {
        let original = {
            let t = store.get_mut(name).ok_or_else(|| format!("no parameter named {name}"))?;
            t.data()[*j]
        };
        let mut eval_at = |store: &mut ParameterStore<f64>, v: f64| {
            store.get_mut(name).unwrap().data_mut()[*j] = v;
            loss_of(store)
        };
        let fd = (eval_at(store, original + FD_STEP) - eval_at(store, original - FD_STEP)) / (2.0 * FD_STEP);
        let half = (eval_at(store, original + FD_STEP / 2.0) - eval_at(store, original - FD_STEP / 2.0)) / FD_STEP;
        store.get_mut(name).unwrap().data_mut()[*j] = original;
        if rel_err(fd, half) > FD_TOL {
            continue;
        }
        usable += 1;
        let err = rel_err(*analytic, fd);
        if err > FD_TOL {
            return Err(format!(
                "{name}[{j}]: analytic {analytic:.9} vs finite difference {fd:.9} (rel err {err:.2e})"
            ));
        }
        worst = worst.max(err);
    }
    if usable == 0 {
        return Err("every probe straddles a kink; nothing was checked".into());
    }
    Ok(worst)
}
