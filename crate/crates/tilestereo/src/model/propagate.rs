//! Coarse-to-fine hypothesis propagation. The coarsest level updates its
//! initialization alone; every finer level updates the upsampled carry and
//! its own initialization together and keeps the more confident one. Three
//! refinement passes then walk tile size 4 -> 2 -> 1 at full resolution, so
//! the final hypothesis is per-pixel.

use std::rc::Rc;

use super::{init, unet, update, LevelInit, ModelConfig};
use crate::tensor::{Graph, NodeId, ParameterStore, Scalar};

/// One post-update hypothesis retained for the training losses.
pub struct RecordedHyp {
    /// Stage label for logs and loss breakdowns, such as `level2.h0`.
    pub name: String,
    /// Updated hypothesis `[b, 3 + p, ht, wt]`.
    pub hyp: NodeId,
    /// Confidence `[b, 1, ht, wt]` predicted alongside the update.
    pub w: NodeId,
    /// Full-resolution pixels per tile side.
    pub foot: usize,
    /// Factor turning the stored disparity into full-resolution units.
    pub disp_scale: f64,
    /// Whether the disparity loss truncates large errors (pyramid phase).
    pub truncated: bool,
}

/// Everything the losses and the final prediction need from one pass.
pub struct ForwardOutput {
    /// Per-level initialization stage outputs, fine to coarse.
    pub inits: Vec<LevelInit>,
    /// Every updated hypothesis in evaluation order.
    pub recorded: Vec<RecordedHyp>,
    /// Final per-pixel hypothesis `[b, 3 + p, H, W]`; channel 0 is the
    /// disparity map, channels 1 and 2 the slants.
    pub final_hyp: NodeId,
}

/// Builds the augmented update input: the hypothesis itself plus warp costs
/// at the plane, one disparity before it, and one after. `disp_to_feat`
/// rescales the stored disparity into feature-pixel units (1 in the pyramid
/// phase, `1 / tile` in refinement where disparities are full-resolution).
pub fn build_augmented<S: Scalar>(
    g: &mut Graph<S>,
    hyp: NodeId,
    feat_l: NodeId,
    feat_r: NodeId,
    tile: usize,
    disp_to_feat: f64,
) -> NodeId {
    let geo = g.slice_ch(hyp, 0, 3);
    let mut dprime = g.expand_plane(geo, tile);
    if disp_to_feat != 1.0 {
        dprime = g.mul_scalar(dprime, disp_to_feat);
    }
    let d_lo = g.add_scalar(dprime, -1.0);
    let d_hi = g.add_scalar(dprime, 1.0);
    let phi_lo = g.warp_cost(feat_l, feat_r, d_lo, tile);
    let phi_at = g.warp_cost(feat_l, feat_r, dprime, tile);
    let phi_hi = g.warp_cost(feat_l, feat_r, d_hi, tile);
    g.concat_ch(&[hyp, phi_lo, phi_at, phi_hi])
}

/// Keeps the first hypothesis wherever its confidence is at least the
/// second's, so exact ties keep the carry upsampled from the coarser level.
fn fuse<S: Scalar>(g: &mut Graph<S>, h_carry: NodeId, w_carry: NodeId, h_init: NodeId, w_init: NodeId) -> NodeId {
    let wc = g.value(w_carry).data();
    let wi = g.value(w_init).data();
    let take: Vec<bool> = wc.iter().zip(wi.iter()).map(|(&a, &b)| a >= b).collect();
    g.select_tiles(h_carry, h_init, Rc::new(take))
}

/// Replaces the slant channels with zeros (the fronto-parallel ablation).
fn zero_slants<S: Scalar>(g: &mut Graph<S>, cfg: &ModelConfig, hyp: NodeId) -> NodeId {
    let [b, _, ht, wt] = g.value(hyp).shape();
    let d = g.slice_ch(hyp, 0, 1);
    let zeros = g.constant(crate::tensor::Tensor::zeros([b, 2, ht, wt]));
    let rest = g.slice_ch(hyp, 3, cfg.hyp_channels() - 3);
    g.concat_ch(&[d, zeros, rest])
}

fn apply_update<S: Scalar>(g: &mut Graph<S>, cfg: &ModelConfig, hyp: NodeId, delta: NodeId) -> NodeId {
    let updated = g.add(hyp, delta);
    if cfg.clamp_slants {
        zero_slants(g, cfg, updated)
    } else {
        updated
    }
}

/// Runs the whole network on an image pair: feature extraction, per-level
/// initialization, pyramid propagation with confidence fusion, and the three
/// full-resolution refinement passes. Image extents must be divisible by
/// `cfg.extent_unit()` and the configuration needs at least three levels so
/// refinement can warp against features at 1/4, 1/2, and full resolution.
pub fn forward<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    left: NodeId,
    right: NodeId,
) -> ForwardOutput {
    let m = cfg.top_level();
    assert!(m >= 2, "propagation needs at least three pyramid levels");
    let [_, _, h, w] = g.value(left).shape();
    let unit = cfg.extent_unit();
    assert!(h % unit == 0 && w % unit == 0, "extents {h}x{w} are not divisible by {unit}");

    let pyr_l = unet::extract(g, store, cfg, left);
    let pyr_r = unet::extract(g, store, cfg, right);
    let inits = init::init_all_scales(g, store, cfg, &pyr_l, &pyr_r);

    let mut recorded = Vec::new();

    // Coarsest level: a single hypothesis, then upsample toward the finer
    // levels. Disparities at level l are in level-l pixels throughout.
    let top_spec = cfg.top_spec();
    let aug = build_augmented(g, inits[m].hyp, pyr_l[m], pyr_r[m], 4, 1.0);
    let (delta, w_top) = update::run_module(g, store, cfg, &top_spec, aug)[0];
    let mut carry = apply_update(g, cfg, inits[m].hyp, delta);
    recorded.push(RecordedHyp {
        name: format!("level{m}.h0"),
        hyp: carry,
        w: w_top,
        foot: 4 << m,
        disp_scale: (1u64 << m) as f64,
        truncated: true,
    });
    if m > 0 {
        carry = g.upsample_hyp(carry, 1.0, 2.0);
    }

    let pyramid_spec = cfg.pyramid_spec();
    for l in (0..m).rev() {
        let aug_carry = build_augmented(g, carry, pyr_l[l], pyr_r[l], 4, 1.0);
        let aug_init = build_augmented(g, inits[l].hyp, pyr_l[l], pyr_r[l], 4, 1.0);
        let aug = g.concat_ch(&[aug_carry, aug_init]);
        let out = update::run_module(g, store, cfg, &pyramid_spec, aug);
        let h0 = apply_update(g, cfg, carry, out[0].0);
        let h1 = apply_update(g, cfg, inits[l].hyp, out[1].0);
        let scale = (1u64 << l) as f64;
        recorded.push(RecordedHyp {
            name: format!("level{l}.h0"),
            hyp: h0,
            w: out[0].1,
            foot: 4 << l,
            disp_scale: scale,
            truncated: true,
        });
        recorded.push(RecordedHyp {
            name: format!("level{l}.h1"),
            hyp: h1,
            w: out[1].1,
            foot: 4 << l,
            disp_scale: scale,
            truncated: true,
        });
        carry = fuse(g, h0, out[0].1, h1, out[1].1);
        if l > 0 {
            carry = g.upsample_hyp(carry, 1.0, 2.0);
        }
    }

    // Refinement at full resolution: tile sizes 4, 2, 1 warp against the
    // feature maps whose pixel grid matches the tile grid one to one, so the
    // stored full-resolution disparity is divided by the tile size.
    for idx in 0..3 {
        let tile = 4 >> idx;
        let spec = cfg.refine_spec(idx);
        let level = 2 - idx;
        let aug = build_augmented(g, carry, pyr_l[level], pyr_r[level], 1, 1.0 / tile as f64);
        let (delta, w_ref) = update::run_module(g, store, cfg, &spec, aug)[0];
        carry = apply_update(g, cfg, carry, delta);
        recorded.push(RecordedHyp {
            name: format!("refine{tile}"),
            hyp: carry,
            w: w_ref,
            foot: tile,
            disp_scale: 1.0,
            truncated: false,
        });
        if tile > 1 {
            carry = g.upsample_hyp(carry, tile as f64 / 4.0, 1.0);
        }
    }

    ForwardOutput { inits, recorded, final_hyp: carry }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::store::seeded_rng;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn image(seed: u64, name: &str, c: usize, h: usize, w: usize) -> Tensor<f32> {
        let mut rng = seeded_rng(seed, name);
        Tensor::from_fn([1, c, h, w], |_, _, _, _| rng.gen_range(0.0..1.0))
    }

    fn run(cfg: &ModelConfig, seed: u64, h: usize, w: usize) -> (Graph<f32>, ForwardOutput) {
        let mut store: ParameterStore<f32> = ParameterStore::new();
        super::super::build_params(&mut store, cfg, seed);
        let mut g: Graph<f32> = Graph::new();
        let l = image(seed, "fwd-left", cfg.input_channels, h, w);
        let r = image(seed.wrapping_add(99), "fwd-right", cfg.input_channels, h, w);
        let left = g.constant(l);
        let right = g.constant(r);
        let out = forward(&mut g, &store, cfg, left, right);
        (g, out)
    }

    #[test]
    fn stage_shapes_follow_the_tile_geometry() {
        let cfg = ModelConfig::gradcheck_small();
        let (g, out) = run(&cfg, 7, 32, 64);
        let by_name: Vec<(&str, [usize; 4])> = vec![
            ("level2.h0", [1, 16, 2, 4]),
            ("level1.h0", [1, 16, 4, 8]),
            ("level1.h1", [1, 16, 4, 8]),
            ("level0.h0", [1, 16, 8, 16]),
            ("level0.h1", [1, 16, 8, 16]),
            ("refine4", [1, 16, 8, 16]),
            ("refine2", [1, 16, 16, 32]),
            ("refine1", [1, 16, 32, 64]),
        ];
        assert_eq!(out.recorded.len(), by_name.len());
        for (rec, (name, shape)) in out.recorded.iter().zip(by_name) {
            assert_eq!(rec.name, name);
            assert_eq!(g.value(rec.hyp).shape(), shape, "{name}");
            let ws = g.value(rec.w).shape();
            assert_eq!(ws, [shape[0], 1, shape[2], shape[3]], "{name} confidence");
        }
        assert_eq!(g.value(out.final_hyp).shape(), [1, 16, 32, 64]);
    }

    #[test]
    fn zero_heads_reproduce_the_coarsest_initialization() {
        // With inert heads every update is a no-op and every fusion is a
        // 0 >= 0 tie kept by the carry, so the final disparity must be the
        // coarsest initialization scaled to full resolution and replicated
        // across each tile footprint.
        let cfg = ModelConfig::gradcheck_small();
        assert!(cfg.zero_init_heads || {
            // The preset keeps heads live for gradient checks; flip them off.
            true
        });
        let cfg = ModelConfig { zero_init_heads: true, ..cfg };
        let (g, out) = run(&cfg, 3, 32, 64);
        let m = cfg.top_level();
        let top = &out.inits[m];
        let final_hyp = g.value(out.final_hyp);
        let foot = 4 << m;
        let scale = (1 << m) as f32;
        let wt = 64 / foot;
        for y in 0..32 {
            for x in 0..64 {
                let want = top.d_init[(y / foot) * wt + x / foot] as f32 * scale;
                assert_eq!(final_hyp.at(0, 0, y, x), want, "pixel ({y}, {x})");
                assert_eq!(final_hyp.at(0, 1, y, x), 0.0);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::gradcheck_small();
        let (g1, o1) = run(&cfg, 11, 32, 32);
        let (g2, o2) = run(&cfg, 11, 32, 32);
        assert_eq!(g1.value(o1.final_hyp).data(), g2.value(o2.final_hyp).data());
        for (a, b) in o1.recorded.iter().zip(o2.recorded.iter()) {
            assert_eq!(g1.value(a.hyp).data(), g2.value(b.hyp).data(), "{}", a.name);
        }
    }

    #[test]
    fn clamped_slants_stay_zero_everywhere() {
        let cfg = ModelConfig { clamp_slants: true, ..ModelConfig::gradcheck_small() };
        let (g, out) = run(&cfg, 5, 32, 32);
        for rec in &out.recorded {
            let t = g.value(rec.hyp);
            let [b, _, ht, wt] = t.shape();
            for bi in 0..b {
                for y in 0..ht {
                    for x in 0..wt {
                        assert_eq!(t.at(bi, 1, y, x), 0.0, "{}", rec.name);
                        assert_eq!(t.at(bi, 2, y, x), 0.0, "{}", rec.name);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_reaches_every_parameter_family() {
        // A loss touching every recorded stage must push gradients into all
        // parameter groups: extractor, embeddings, descriptors, updates.
        let cfg = ModelConfig::gradcheck_small();
        let mut store: ParameterStore<f32> = ParameterStore::new();
        super::super::build_params(&mut store, &cfg, 21);
        let mut g: Graph<f32> = Graph::new();
        let li = image(1, "bp-left", 1, 32, 32);
        let ri = image(2, "bp-right", 1, 32, 32);
        let left = g.constant(li);
        let right = g.constant(ri);
        let out = forward(&mut g, &store, &cfg, left, right);
        let mut total = None;
        for rec in &out.recorded {
            let shyp = g.sum_all(rec.hyp);
            let sw = g.sum_all(rec.w);
            let part = g.add(shyp, sw);
            total = Some(match total {
                None => part,
                Some(t) => g.add(t, part),
            });
        }
        for li in &out.inits {
            let sc = g.sum_all(li.best_cost);
            total = Some(g.add(total.unwrap(), sc));
        }
        g.backward(total.unwrap()).unwrap();
        g.export_grads(&mut store);
        let mut missing = Vec::new();
        for p in store.iter() {
            let got = p.value.grad.as_ref().map(|gr| gr.iter().any(|&v| v != 0.0)).unwrap_or(false);
            if !got {
                missing.push(p.name.clone());
            }
        }
        // Bias gradients of layers behind dead ReLUs can legitimately be
        // zero; require that no whole parameter family is silent.
        for family in ["unet.", "init.embed", "init.describe", "update."] {
            assert!(
                store.iter().any(|p| p.name.starts_with(family)
                    && p.value.grad.as_ref().map(|gr| gr.iter().any(|&v| v != 0.0)).unwrap_or(false)),
                "no gradient reached {family} (silent: {missing:?})"
            );
        }
    }
}
