//! Training losses and their ground-truth preparation. Four terms supervise
//! the network: a contrastive matching loss on the initialization costs, a
//! robust disparity loss on the full-resolution expansion of every updated
//! hypothesis, an L1 slant loss gated to near-correct disparities, and a
//! hinge loss teaching the confidence to rank hypotheses. All terms average
//! over valid pixels and the total is their plain sum.

use std::rc::Rc;

use crate::model::{ForwardOutput, LevelInit, RecordedHyp};
use crate::tensor::{maxpool2d, Graph, NodeId, Scalar, Tensor};

/// Loss hyperparameters. The disparity-error thresholds are in
/// full-resolution pixels.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Robust-loss shape; must avoid the special cases 0 and 2.
    pub alpha: f64,
    /// Robust-loss scale.
    pub c: f64,
    /// Margin of the contrastive matching loss.
    pub beta: f64,
    /// Disparity-error truncation for pyramid-phase hypotheses; refinement
    /// hypotheses are never truncated.
    pub a_truncation: f64,
    /// Slant supervision applies where the disparity error is below this.
    pub b_slant_gate: f64,
    /// Confidence is pushed up below this error and down above `c2_conf`.
    pub c1_conf: f64,
    pub c2_conf: f64,
}

impl LossConfig {
    /// Preset for the synthetic training distribution.
    pub fn sceneflow() -> Self {
        Self {
            alpha: 0.9,
            c: 0.1,
            beta: 1.0,
            a_truncation: 1.0,
            b_slant_gate: 1.0,
            c1_conf: 1.0,
            c2_conf: 1.5,
        }
    }

    /// General-purpose preset with a wider robust-loss basin.
    pub fn general() -> Self {
        Self { alpha: 0.8, c: 0.5, ..Self::sceneflow() }
    }

    fn validate(&self) {
        assert!(self.beta > 0.0, "margin must be positive");
        assert!(self.c > 0.0, "robust scale must be positive");
        assert!(self.c2_conf > self.c1_conf, "confidence band must be ordered");
        assert!(self.alpha != 0.0 && self.alpha != 2.0, "robust shape hits a special case");
    }
}

/// Ground truth for one batch: full-resolution disparity, a validity mask,
/// and per-pixel surface slants with their own defined-mask.
pub struct GroundTruth<S: Scalar> {
    /// Disparity `[b, 1, H, W]` in full-resolution pixel units.
    pub d: Tensor<S>,
    /// Per-pixel validity, row-major over `(b, y, x)`.
    pub valid: Rc<Vec<bool>>,
    /// Horizontal disparity gradient `[b, 1, H, W]`.
    pub dx: Tensor<S>,
    /// Vertical disparity gradient `[b, 1, H, W]`.
    pub dy: Tensor<S>,
    /// Where the slants are defined.
    pub slope_valid: Vec<bool>,
}

impl<S: Scalar> GroundTruth<S> {
    /// Wraps a disparity map whose slants are known exactly.
    pub fn with_slopes(d: Tensor<S>, valid: Vec<bool>, dx: Tensor<S>, dy: Tensor<S>, slope_valid: Vec<bool>) -> Self {
        assert_eq!(valid.len(), d.numel());
        assert_eq!(slope_valid.len(), d.numel());
        assert_eq!(dx.shape(), d.shape());
        assert_eq!(dy.shape(), d.shape());
        Self { d, valid: Rc::new(valid), dx, dy, slope_valid }
    }

    /// Wraps a bare disparity map, deriving slants with the robust plane fit.
    pub fn from_disparity(d: Tensor<S>, valid: Vec<bool>) -> Self {
        let (dx, dy, slope_valid) = fit_gt_slopes(&d, &valid);
        Self::with_slopes(d, valid, dx, dy, slope_valid)
    }
}

/// Pools full-resolution ground truth onto the level-l tile grid: a masked
/// maximum over each tile's square footprint of `4 * 2^l` pixels, converted
/// to level-l disparity units. Tiles with no valid pixel come back invalid.
pub fn downsample_gt<S: Scalar>(d: &Tensor<S>, valid: &[bool], level: usize) -> (Tensor<S>, Vec<bool>) {
    let foot = 4usize << level;
    let (mut pooled, tile_valid) = maxpool2d(d, (foot, foot), (foot, foot), Some(valid));
    let scale = S::from_f64(1.0 / (1u64 << level) as f64);
    for v in pooled.data_mut() {
        *v = *v * scale;
    }
    (pooled, tile_valid)
}

/// Matching cost at a real-valued disparity: linear interpolation between
/// the integer-disparity costs on either side. `costs[d]` holds the cost at
/// integer disparity d; the query is clamped to the interpolable range
/// `[0, len - 2]` (an intentionally forgiving boundary policy, since pooled
/// ground truth can overshoot the scan bound slightly).
pub fn subpixel_cost(costs: &[f64], d: f64) -> f64 {
    assert!(costs.len() >= 2, "need at least two integer costs");
    let d = d.clamp(0.0, (costs.len() - 2) as f64);
    let lo = d.floor() as usize;
    let frac = d - lo as f64;
    frac * costs[lo + 1] + (1.0 - frac) * costs[lo]
}

/// Robust per-pixel plane fit: for every pixel, three rounds of iteratively
/// reweighted least squares (Huber weights, unit scale) over the valid
/// entries of its 9x9 neighborhood. Slopes are undefined where fewer than 16
/// samples exist or the normal system is ill-conditioned.
pub fn fit_gt_slopes<S: Scalar>(d: &Tensor<S>, valid: &[bool]) -> (Tensor<S>, Tensor<S>, Vec<bool>) {
    let [b, c, h, w] = d.shape();
    assert_eq!(c, 1, "expected a single disparity channel");
    assert_eq!(valid.len(), d.numel());
    let mut dx = Tensor::zeros([b, 1, h, w]);
    let mut dy = Tensor::zeros([b, 1, h, w]);
    let mut defined = vec![false; d.numel()];
    let mut samples: Vec<(f64, f64, f64)> = Vec::with_capacity(81);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                samples.clear();
                for v in y.saturating_sub(4)..(y + 5).min(h) {
                    for u in x.saturating_sub(4)..(x + 5).min(w) {
                        if valid[d.idx(bi, 0, v, u)] {
                            let du = u as f64 - x as f64;
                            let dv = v as f64 - y as f64;
                            samples.push((du, dv, d.at(bi, 0, v, u).as_f64()));
                        }
                    }
                }
                if samples.len() < 16 {
                    continue;
                }
                if let Some(sol) = irls_plane(&samples) {
                    let i = d.idx(bi, 0, y, x);
                    dx.data_mut()[i] = S::from_f64(sol.0);
                    dy.data_mut()[i] = S::from_f64(sol.1);
                    defined[i] = true;
                }
            }
        }
    }
    (dx, dy, defined)
}

/// Three reweighted solves of `d ~ d0 + dx*u + dy*v`; returns `(dx, dy)` or
/// `None` when the weighted normal system is ill-conditioned.
fn irls_plane(samples: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let mut weights = vec![1.0; samples.len()];
    let mut sol = [0.0f64; 3];
    for round in 0..3 {
        let mut a = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for (k, &(u, v, d)) in samples.iter().enumerate() {
            let wgt = weights[k];
            let row = [1.0, u, v];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] += wgt * row[i] * row[j];
                }
                rhs[i] += wgt * row[i] * d;
            }
        }
        sol = solve3(a, rhs)?;
        if round + 1 < 3 {
            for (k, &(u, v, d)) in samples.iter().enumerate() {
                let r = (d - sol[0] - sol[1] * u - sol[2] * v).abs();
                weights[k] = if r > 1.0 { 1.0 / r } else { 1.0 };
            }
        }
    }
    Some((sol[1], sol[2]))
}

/// Gaussian elimination with partial pivoting; `None` on a tiny pivot.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-8 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Contrastive matching loss of one level. Per valid tile the subpixel cost
/// at the ground-truth disparity is pulled down while the cheapest non-match
/// (the scan excluding disparities within 1.5 of the truth) is pushed above
/// the margin. Tiles whose ground truth cannot be matched inside the image
/// are skipped, as is the margin term when the exclusion empties the scan.
pub fn init_loss_level<S: Scalar>(
    g: &mut Graph<S>,
    li: &LevelInit,
    tile_gt: &Tensor<S>,
    tile_valid: &[bool],
    cfg: &LossConfig,
) -> NodeId {
    let [b, _, ht, wt] = tile_gt.shape();
    let n = b * ht * wt;
    assert_eq!(tile_valid.len(), n);
    let d_cap = (li.d_max.max(1) - 1) as f64;

    let mut d_lo = vec![-1i32; n];
    let mut d_hi = vec![-1i32; n];
    let mut d_nm = vec![-1i32; n];
    let mut w_lo = vec![S::zero(); n];
    let mut w_hi = vec![S::zero(); n];
    let mut gt_mask = vec![false; n];
    let mut nm_mask = vec![false; n];
    {
        let el = g.value(li.el);
        let er = g.value(li.er);
        let [_, ch, _, ws] = er.shape();
        let in_range = |col: i32| col >= 0 && col < ws as i32;
        for bi in 0..b {
            for y in 0..ht {
                for x in 0..wt {
                    let i = (bi * ht + y) * wt + x;
                    if !tile_valid[i] {
                        continue;
                    }
                    let dgt = tile_gt.at(bi, 0, y, x).as_f64().clamp(0.0, d_cap);
                    let lo = dgt.floor() as i32;
                    let anchor = (4 * x) as i32;
                    if in_range(anchor - lo) && in_range(anchor - lo - 1) {
                        d_lo[i] = lo;
                        d_hi[i] = lo + 1;
                        let frac = dgt - lo as f64;
                        w_hi[i] = S::from_f64(frac);
                        w_lo[i] = S::from_f64(1.0 - frac);
                        gt_mask[i] = true;
                    }
                    let mut best = S::infinity();
                    let mut best_d = -1i32;
                    for d in 0..=li.d_max as i32 {
                        let col = anchor - d;
                        if !in_range(col) || (d as f64 >= dgt - 1.5 && d as f64 <= dgt + 1.5) {
                            continue;
                        }
                        let mut cost = S::zero();
                        for cc in 0..ch {
                            cost = cost + (el.at(bi, cc, y, x) - er.at(bi, cc, y, col as usize)).abs();
                        }
                        if cost < best {
                            best = cost;
                            best_d = d;
                        }
                    }
                    if best_d >= 0 {
                        d_nm[i] = best_d;
                        nm_mask[i] = true;
                    }
                }
            }
        }
    }

    let cost_lo = g.l1_dist_gather(li.el, li.er, 4, Rc::new(d_lo));
    let cost_hi = g.l1_dist_gather(li.el, li.er, 4, Rc::new(d_hi));
    let cost_nm = g.l1_dist_gather(li.el, li.er, 4, Rc::new(d_nm));
    let shape = [b, 1, ht, wt];
    let wl = g.constant(Tensor::new(shape, w_lo).expect("buffer sized to shape"));
    let wh = g.constant(Tensor::new(shape, w_hi).expect("buffer sized to shape"));
    let t_lo = g.mul(cost_lo, wl);
    let t_hi = g.mul(cost_hi, wh);
    let psi_gt = g.add(t_lo, t_hi);
    let match_term = g.masked_mean(psi_gt, Rc::new(gt_mask));

    let neg_nm = g.mul_scalar(cost_nm, -1.0);
    let margin = g.add_scalar(neg_nm, cfg.beta);
    let hinge = g.relu(margin);
    let push_term = g.masked_mean(hinge, Rc::new(nm_mask));
    g.add(match_term, push_term)
}

/// The three supervision terms of one updated hypothesis: robust disparity
/// loss on the full-resolution plane expansion, gated L1 slant loss, and the
/// confidence hinge. Gates compare the expanded disparity against ground
/// truth and enter the graph as constants.
pub fn hyp_losses<S: Scalar>(
    g: &mut Graph<S>,
    rec: &RecordedHyp,
    gt: &GroundTruth<S>,
    cfg: &LossConfig,
) -> (NodeId, NodeId, NodeId) {
    let gt_d = g.constant(gt.d.clone());
    let gt_dx = g.constant(gt.dx.clone());
    let gt_dy = g.constant(gt.dy.clone());
    let geo = g.slice_ch(rec.hyp, 0, 3);
    let dhat = g.plane_to_full(geo, rec.foot, rec.disp_scale);
    assert_eq!(g.value(dhat).shape(), gt.d.shape(), "{}: expansion does not cover the image", rec.name);
    let diff = g.sub(gt_d, dhat);
    let adiff = g.abs(diff);
    let err = if rec.truncated { g.min_scalar(adiff, cfg.a_truncation) } else { adiff };
    let rho = g.robust_rho(err, cfg.alpha, cfg.c);
    let prop = g.masked_mean(rho, gt.valid.clone());

    let n = gt.d.numel();
    let shape = gt.d.shape();
    let mut slant_gate = vec![S::zero(); n];
    let mut conf_lo = vec![S::zero(); n];
    let mut conf_hi = vec![S::zero(); n];
    {
        let av = g.value(adiff).data();
        for i in 0..n {
            let e = av[i].as_f64();
            if e < cfg.b_slant_gate {
                slant_gate[i] = S::one();
            }
            if e < cfg.c1_conf {
                conf_lo[i] = S::one();
            }
            if e > cfg.c2_conf {
                conf_hi[i] = S::one();
            }
        }
    }

    let dx_pred = g.slice_ch(rec.hyp, 1, 1);
    let dy_pred = g.slice_ch(rec.hyp, 2, 1);
    let dx_up = g.upsample_nearest(dx_pred, rec.foot, rec.foot);
    let dy_up = g.upsample_nearest(dy_pred, rec.foot, rec.foot);
    let ex = g.sub(gt_dx, dx_up);
    let ex = g.abs(ex);
    let ey = g.sub(gt_dy, dy_up);
    let ey = g.abs(ey);
    let l1 = g.add(ex, ey);
    let gate = g.constant(Tensor::new(shape, slant_gate).expect("buffer sized to shape"));
    let gated = g.mul(l1, gate);
    let slant_mask: Vec<bool> = gt.valid.iter().zip(&gt.slope_valid).map(|(&a, &b)| a && b).collect();
    let slant = g.masked_mean(gated, Rc::new(slant_mask));

    let w_up = g.upsample_nearest(rec.w, rec.foot, rec.foot);
    let neg_w = g.mul_scalar(w_up, -1.0);
    let one_minus = g.add_scalar(neg_w, 1.0);
    let up_hinge = g.relu(one_minus);
    let down_hinge = g.relu(w_up);
    let m_lo = g.constant(Tensor::new(shape, conf_lo).expect("buffer sized to shape"));
    let m_hi = g.constant(Tensor::new(shape, conf_hi).expect("buffer sized to shape"));
    let up_term = g.mul(up_hinge, m_lo);
    let down_term = g.mul(down_hinge, m_hi);
    let conf_sum = g.add(up_term, down_term);
    let conf = g.masked_mean(conf_sum, gt.valid.clone());
    (prop, slant, conf)
}

/// Every term's name and value after one forward pass, for logging and for
/// the non-finite-loss diagnostic dump.
pub struct LossBreakdown {
    pub terms: Vec<(String, f64)>,
    pub total: f64,
}

impl LossBreakdown {
    /// One-line `name=value` rendering of every term.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (name, v) in &self.terms {
            s.push_str(&format!("{name}={v:.6} "));
        }
        s.push_str(&format!("total={:.6}", self.total));
        s
    }
}

/// Sums every loss over every scale: the matching loss per pyramid level and
/// the three hypothesis terms for each recorded update, pre-fusion. Returns
/// the scalar loss node and the per-term breakdown.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    out: &ForwardOutput,
    gt: &GroundTruth<S>,
    cfg: &LossConfig,
) -> (NodeId, LossBreakdown) {
    cfg.validate();
    assert_eq!(
        g.value(out.final_hyp).shape()[2..],
        gt.d.shape()[2..],
        "ground truth extents do not match the prediction"
    );

    let mut terms: Vec<(String, NodeId)> = Vec::new();
    for li in &out.inits {
        let (tile_gt, tile_valid) = downsample_gt(&gt.d, &gt.valid, li.level);
        let node = init_loss_level(g, li, &tile_gt, &tile_valid, cfg);
        terms.push((format!("init.level{}", li.level), node));
    }
    for rec in &out.recorded {
        let (prop, slant, conf) = hyp_losses(g, rec, gt, cfg);
        terms.push((format!("{}.prop", rec.name), prop));
        terms.push((format!("{}.slant", rec.name), slant));
        terms.push((format!("{}.conf", rec.name), conf));
    }

    let mut total = None;
    for &(_, node) in &terms {
        total = Some(match total {
            None => node,
            Some(t) => g.add(t, node),
        });
    }
    let total = total.expect("at least one loss term");
    let breakdown = LossBreakdown {
        terms: terms.iter().map(|(name, node)| (name.clone(), g.scalar(*node).as_f64())).collect(),
        total: g.scalar(total).as_f64(),
    };
    (total, breakdown)
}
