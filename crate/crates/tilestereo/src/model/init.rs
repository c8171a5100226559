//! Tile hypothesis initialization. Features are folded into per-tile
//! embeddings with a 4x4 convolution (stride 4x4 on the reference view,
//! stride 4x1 on the secondary view so every integer disparity stays
//! addressable), matched by a streaming L1 argmin that never materializes a
//! cost volume, and summarized into a learned tile descriptor.

use std::rc::Rc;

use super::{add_conv, conv_block, ModelConfig};
use crate::tensor::{Graph, NodeId, ParameterStore, Scalar, Tensor};

/// Per-level output of the initialization stage. Embedding nodes and the
/// integer argmin stay available for the matching loss, which probes costs
/// at ground-truth disparities.
pub struct LevelInit {
    /// Pyramid level l.
    pub level: usize,
    /// Reference-view tile embeddings `[b, e, ht, wt]`.
    pub el: NodeId,
    /// Secondary-view tile embeddings `[b, e, ht, ws]`, dense along x.
    pub er: NodeId,
    /// Winning integer disparity per tile, row-major over `(b, y, x)`.
    pub d_init: Vec<i32>,
    /// Inclusive disparity bound used for the scan, in level-l pixels.
    pub d_max: usize,
    /// Matching cost at the winning disparity, on the graph `[b, 1, ht, wt]`.
    pub best_cost: NodeId,
    /// Assembled initial hypothesis `[b, 3 + p, ht, wt]`: the constant winning
    /// disparity, zero slants, and the learned descriptor.
    pub hyp: NodeId,
}

/// Creates the initialization parameters for every pyramid level: the shared
/// 4x4 patch embedding, a two-layer 1x1 MLP, and the descriptor head.
pub fn build<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, seed: u64) {
    for (l, &ch) in cfg.channels.iter().enumerate() {
        add_conv(store, &format!("init.embed{l}.patch"), cfg.embed_channels, ch, (4, 4), seed);
        add_conv(store, &format!("init.embed{l}.mlp0"), cfg.embed_hidden, cfg.embed_channels, (1, 1), seed);
        add_conv(store, &format!("init.embed{l}.mlp1"), cfg.embed_channels, cfg.embed_hidden, (1, 1), seed);
        add_conv(
            store,
            &format!("init.describe{l}"),
            cfg.descriptor_channels,
            cfg.embed_channels + 1,
            (1, 1),
            seed,
        );
    }
}

/// Records the tile embedding of one view: the level's shared 4x4 patch conv
/// (leaky ReLU) followed by the per-tile MLP (plain ReLU). The reference view
/// strides 4x4, producing one embedding per tile; the secondary view strides
/// 4x1, producing one embedding per (tile row, pixel column).
pub fn tile_embed<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    level: usize,
    feat: NodeId,
    dense_x: bool,
) -> NodeId {
    let stride = if dense_x { (4, 1) } else { (4, 4) };
    let x = conv_block(g, store, &format!("init.embed{level}.patch"), feat, stride, (1, 1), [0, 0, 0, 0], cfg.leaky_slope);
    let w0 = g.param(store, &format!("init.embed{level}.mlp0.weight"));
    let b0 = g.param(store, &format!("init.embed{level}.mlp0.bias"));
    let h = g.conv2d(x, w0, b0, (1, 1), (1, 1), [0, 0, 0, 0]);
    let h = g.relu(h);
    let w1 = g.param(store, &format!("init.embed{level}.mlp1.weight"));
    let b1 = g.param(store, &format!("init.embed{level}.mlp1.bias"));
    let out = g.conv2d(h, w1, b1, (1, 1), (1, 1), [0, 0, 0, 0]);
    g.relu(out)
}

/// Streaming integer matcher. For every reference tile `(b, y, x)` it scans
/// disparities `0..=d_max`, comparing against the secondary embedding at
/// column `stride_x * x - d`, and keeps the L1-cheapest one. Ties keep the
/// smaller disparity; columns left of the image are skipped. Memory stays at
/// one running best per tile.
pub fn match_tiles<S: Scalar>(el: &Tensor<S>, er: &Tensor<S>, stride_x: usize, d_max: usize) -> Vec<i32> {
    let [b, c, ht, wt] = el.shape();
    let [br, cr, hr, ws] = er.shape();
    assert_eq!((b, c, ht), (br, cr, hr), "embedding layouts must agree");
    let mut out = vec![0i32; b * ht * wt];
    for bi in 0..b {
        for y in 0..ht {
            for x in 0..wt {
                let mut best_cost = S::infinity();
                let mut best_d = 0i32;
                for d in 0..=d_max as i32 {
                    let col = (stride_x * x) as i32 - d;
                    if col < 0 || col >= ws as i32 {
                        continue;
                    }
                    let mut cost = S::zero();
                    for ch in 0..c {
                        let a = el.at(bi, ch, y, x);
                        let r = er.at(bi, ch, y, col as usize);
                        cost = cost + (a - r).abs();
                    }
                    if cost < best_cost {
                        best_cost = cost;
                        best_d = d;
                    }
                }
                out[(bi * ht + y) * wt + x] = best_d;
            }
        }
    }
    out
}

/// Runs initialization for one level: embeds both views, scans for the best
/// integer disparity off the graph, gathers the winning cost on the graph,
/// and assembles the initial hypothesis with zero slants and the descriptor
/// from a 1x1 conv over `[cost, reference embedding]`.
pub fn init_level<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    level: usize,
    feat_l: NodeId,
    feat_r: NodeId,
) -> LevelInit {
    let el = tile_embed(g, store, cfg, level, feat_l, false);
    let er = tile_embed(g, store, cfg, level, feat_r, true);
    let d_max = cfg.d_max_at(level);
    let d_init = match_tiles(g.value(el), g.value(er), 4, d_max);
    let dmap = Rc::new(d_init.clone());
    let best_cost = g.l1_dist_gather(el, er, 4, dmap);

    let [b, _, ht, wt] = g.value(el).shape();
    let mut k = 0;
    let d_tensor = Tensor::from_fn([b, 1, ht, wt], |_, _, _, _| {
        let v = S::from_f64(d_init[k] as f64);
        k += 1;
        v
    });
    let d_node = g.constant(d_tensor);
    let slants = g.constant(Tensor::zeros([b, 2, ht, wt]));
    let desc_in = g.concat_ch(&[best_cost, el]);
    let desc = conv_block(g, store, &format!("init.describe{level}"), desc_in, (1, 1), (1, 1), [0, 0, 0, 0], cfg.leaky_slope);
    let hyp = g.concat_ch(&[d_node, slants, desc]);
    LevelInit { level, el, er, d_init, d_max, best_cost, hyp }
}

/// Runs initialization on every pyramid level. Feature extents at each level
/// must be divisible by 4 (one tile is 4x4 feature pixels).
pub fn init_all_scales<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    pyr_l: &[NodeId],
    pyr_r: &[NodeId],
) -> Vec<LevelInit> {
    assert_eq!(pyr_l.len(), pyr_r.len());
    (0..pyr_l.len()).map(|l| init_level(g, store, cfg, l, pyr_l[l], pyr_r[l])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::dense_argmin;
    use crate::tensor::store::seeded_rng;
    use rand::Rng;

    fn embed_pair(seed: u64, ht: usize, wt: usize, ws: usize, c: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = seeded_rng(seed, "init-match");
        let el = Tensor::from_fn([2, c, ht, wt], |_, _, _, _| rng.gen_range(0.0..1.0));
        let er = Tensor::from_fn([2, c, ht, ws], |_, _, _, _| rng.gen_range(0.0..1.0));
        (el, er)
    }

    #[test]
    fn streaming_matcher_agrees_with_dense_argmin() {
        for seed in 0..8 {
            let (el, er) = embed_pair(seed, 4, 6, 24, 5);
            let got = match_tiles(&el, &er, 4, 13);
            let (want, _) = dense_argmin(&el.cast::<f64>(), &er.cast::<f64>(), 4, 13);
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn planted_match_is_recovered() {
        // Copy the reference embedding of tile (y=1, x=2) into the secondary
        // view at disparity 3 and make everything else expensive.
        let c = 4;
        let el = Tensor::from_fn([1, c, 2, 3], |_, ch, y, x| (ch + 10 * y + 100 * x) as f32 * 0.01);
        let mut er = Tensor::full([1, c, 2, 16], 50.0f32);
        for ch in 0..c {
            let v = el.at(0, ch, 1, 2);
            er.set(0, ch, 1, 4 * 2 - 3, v);
        }
        let d = match_tiles(&el, &er, 4, 8);
        assert_eq!(d[1 * 3 + 2], 3);
    }

    #[test]
    fn leftmost_tile_only_sees_disparity_zero() {
        // At x = 0 every positive disparity lands left of the image, so the
        // scan must return 0 regardless of the costs there.
        let (el, mut er) = embed_pair(9, 3, 4, 16, 4);
        for ch in 0..4 {
            for y in 0..3 {
                // Make column 0 maximally unattractive; it is still the only
                // feasible candidate for tile x = 0.
                er.set(0, ch, y, 0, 1000.0);
            }
        }
        let d = match_tiles(&el, &er, 4, 12);
        for y in 0..3 {
            assert_eq!(d[y * 4], 0, "row {y}");
        }
    }

    #[test]
    fn ties_prefer_the_smaller_disparity() {
        let el = Tensor::full([1, 2, 1, 2], 0.25f32);
        let er = Tensor::full([1, 2, 1, 8], 0.25f32);
        let d = match_tiles(&el, &er, 4, 6);
        assert_eq!(d, vec![0, 0]);
    }

    #[test]
    fn init_level_shapes_and_constant_disparity() {
        let cfg = ModelConfig::gradcheck_small();
        let mut store: ParameterStore<f32> = ParameterStore::new();
        super::super::build_params(&mut store, &cfg, 5);
        let mut g: Graph<f32> = Graph::new();
        let mut rng = seeded_rng(11, "init-level");
        let fl = g.constant(Tensor::from_fn([1, 8, 8, 16], |_, _, _, _| rng.gen_range(-1.0..1.0)));
        let fr = g.constant(Tensor::from_fn([1, 8, 8, 16], |_, _, _, _| rng.gen_range(-1.0..1.0)));
        let out = init_level(&mut g, &store, &cfg, 0, fl, fr);
        assert_eq!(g.value(out.el).shape(), [1, 8, 2, 4]);
        assert_eq!(g.value(out.er).shape(), [1, 8, 2, 13]);
        assert_eq!(g.value(out.hyp).shape(), [1, 16, 2, 4]);
        let hyp = g.value(out.hyp);
        for y in 0..2 {
            for x in 0..4 {
                assert_eq!(hyp.at(0, 0, y, x), out.d_init[y * 4 + x] as f32);
                assert_eq!(hyp.at(0, 1, y, x), 0.0);
                assert_eq!(hyp.at(0, 2, y, x), 0.0);
            }
        }
    }

    #[test]
    fn secondary_stride_keeps_full_column_resolution() {
        // The 4x1 stride means the embedding at tile x, disparity d lives at
        // column 4x - d: check one case end to end through tile_embed.
        let cfg = ModelConfig::gradcheck_small();
        let mut store: ParameterStore<f32> = ParameterStore::new();
        build(&mut store, &cfg, 2);
        let mut g: Graph<f32> = Graph::new();
        let mut rng = seeded_rng(3, "stride-check");
        let feat = Tensor::from_fn([1, 8, 4, 20], |_, _, _, _| rng.gen_range(-1.0..1.0));
        // A shifted copy: dropping the first column moves content one pixel
        // left, so dense embeddings shift by exactly one column too.
        let shifted = Tensor::from_fn([1, 8, 4, 16], |b, c, y, x| feat.at(b, c, y, x + 1));
        let f0 = g.constant(feat);
        let f1 = g.constant(shifted);
        let dense = tile_embed(&mut g, &store, &cfg, 0, f0, true);
        let dense_shift = tile_embed(&mut g, &store, &cfg, 0, f1, true);
        let a = g.value(dense);
        let b = g.value(dense_shift);
        for ch in 0..8 {
            for x in 0..13 {
                assert!((a.at(0, ch, 0, x + 1) - b.at(0, ch, 0, x)).abs() < 1e-6);
            }
        }
    }
}
