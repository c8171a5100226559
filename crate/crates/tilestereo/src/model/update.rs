//! Hypothesis update modules. Each module takes augmented tile states,
//! squeezes them with a 1x1 conv, runs a stack of dilated residual blocks,
//! and predicts per-hypothesis deltas plus a scalar confidence through a 3x3
//! head. Heads may start at zero so the untrained network reproduces its
//! input hypotheses.

use super::{add_conv, add_conv_zero, conv_linear, ModelConfig};
use crate::tensor::{Graph, NodeId, ParameterStore, Scalar};

/// Static description of one update module.
#[derive(Debug, Clone)]
pub struct UpdateSpec {
    /// Parameter name prefix, such as `update.pyramid`.
    pub name: String,
    /// Channels of the concatenated augmented input.
    pub in_channels: usize,
    /// Residual block width.
    pub width: usize,
    /// Number of residual blocks.
    pub blocks: usize,
    /// Dilation per block, applied to both of its convolutions.
    pub dilations: Vec<usize>,
    /// Hypotheses updated at once (the head emits `n * (hyp + 1)` channels).
    pub n: usize,
}

impl ModelConfig {
    fn augmented_channels(&self, tile: usize) -> usize {
        self.hyp_channels() + 3 * tile * tile
    }

    /// Module for the coarsest level: one hypothesis, 4x4 tiles.
    pub fn top_spec(&self) -> UpdateSpec {
        UpdateSpec {
            name: "update.top".into(),
            in_channels: self.augmented_channels(4),
            width: self.update_channels,
            blocks: self.update_blocks,
            dilations: vec![1; self.update_blocks],
            n: 1,
        }
    }

    /// Module shared by all remaining pyramid levels: two hypotheses (the
    /// upsampled carry and the level's own initialization).
    pub fn pyramid_spec(&self) -> UpdateSpec {
        UpdateSpec {
            name: "update.pyramid".into(),
            in_channels: 2 * self.augmented_channels(4),
            width: self.update_channels,
            blocks: self.update_blocks,
            dilations: vec![1; self.update_blocks],
            n: 2,
        }
    }

    /// Refinement module for full-resolution tile size 4, 2, or 1. Each tile
    /// sees one feature sample, so the augmented input is `hyp + 3` wide.
    pub fn refine_spec(&self, idx: usize) -> UpdateSpec {
        let tile = 4 >> idx;
        let blocks = self.refine_blocks[idx];
        assert_eq!(
            self.refine_dilations[idx].len(),
            blocks,
            "refinement pass {tile}x{tile} needs one dilation per block"
        );
        UpdateSpec {
            name: format!("update.refine{tile}"),
            in_channels: self.augmented_channels(1),
            width: self.refine_channels[idx],
            blocks,
            dilations: self.refine_dilations[idx].clone(),
            n: 1,
        }
    }
}

/// Creates the parameters of one update module.
pub fn build_module<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, spec: &UpdateSpec, seed: u64) {
    add_conv(store, &format!("{}.pre", spec.name), spec.width, spec.in_channels, (1, 1), seed);
    for i in 0..spec.blocks {
        add_conv(store, &format!("{}.block{i}.conv0", spec.name), spec.width, spec.width, (3, 3), seed);
        add_conv(store, &format!("{}.block{i}.conv1", spec.name), spec.width, spec.width, (3, 3), seed);
    }
    let head_out = spec.n * (cfg.hyp_channels() + 1);
    if cfg.zero_init_heads {
        add_conv_zero(store, &format!("{}.head", spec.name), head_out, spec.width, (3, 3));
    } else {
        add_conv(store, &format!("{}.head", spec.name), head_out, spec.width, (3, 3), seed);
    }
}

/// Creates every update module: the coarsest-level module, the shared
/// pyramid module (only when there is more than one level), and the three
/// refinement modules.
pub fn build_all<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, seed: u64) {
    build_module(store, cfg, &cfg.top_spec(), seed);
    if cfg.top_level() > 0 {
        build_module(store, cfg, &cfg.pyramid_spec(), seed);
    }
    for idx in 0..3 {
        build_module(store, cfg, &cfg.refine_spec(idx), seed);
    }
}

/// Records one update module and returns `(delta, confidence)` per
/// hypothesis, sliced from the head output in hypothesis order.
pub fn run_module<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    spec: &UpdateSpec,
    augmented: NodeId,
) -> Vec<(NodeId, NodeId)> {
    let slope = cfg.leaky_slope;
    assert_eq!(
        g.value(augmented).shape()[1],
        spec.in_channels,
        "augmented input width does not match {}",
        spec.name
    );
    let pre = conv_linear(g, store, &format!("{}.pre", spec.name), augmented, (1, 1), (1, 1), [0, 0, 0, 0]);
    let mut x = g.leaky_relu(pre, slope);
    for i in 0..spec.blocks {
        let d = spec.dilations[i];
        let pad = [d, d, d, d];
        let a = g.leaky_relu(x, slope);
        let a = conv_linear(g, store, &format!("{}.block{i}.conv0", spec.name), a, (1, 1), (d, d), pad);
        let a = g.leaky_relu(a, slope);
        let a = conv_linear(g, store, &format!("{}.block{i}.conv1", spec.name), a, (1, 1), (d, d), pad);
        x = g.add(x, a);
    }
    let head = conv_linear(g, store, &format!("{}.head", spec.name), x, (1, 1), (1, 1), [1, 1, 1, 1]);
    let hc = cfg.hyp_channels();
    (0..spec.n)
        .map(|i| {
            let delta = g.slice_ch(head, i * (hc + 1), hc);
            let w = g.slice_ch(head, i * (hc + 1) + hc, 1);
            (delta, w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::store::seeded_rng;
    use crate::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn zero_head_produces_zero_delta_and_confidence() {
        let cfg = ModelConfig::base();
        let spec = cfg.top_spec();
        let mut store: ParameterStore<f32> = ParameterStore::new();
        build_module(&mut store, &cfg, &spec, 4);
        let mut g: Graph<f32> = Graph::new();
        let mut rng = seeded_rng(1, "update-zero");
        let a = g.constant(Tensor::from_fn([1, 64, 4, 6], |_, _, _, _| rng.gen_range(-1.0..1.0)));
        for (delta, w) in run_module(&mut g, &store, &cfg, &spec, a) {
            assert_eq!(g.value(delta).shape(), [1, 16, 4, 6]);
            assert_eq!(g.value(w).shape(), [1, 1, 4, 6]);
            assert!(g.value(delta).data().iter().all(|&v| v == 0.0));
            assert!(g.value(w).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pyramid_module_emits_two_hypotheses() {
        let mut cfg = ModelConfig::base();
        cfg.zero_init_heads = false;
        let spec = cfg.pyramid_spec();
        let mut store: ParameterStore<f32> = ParameterStore::new();
        build_module(&mut store, &cfg, &spec, 4);
        let mut g: Graph<f32> = Graph::new();
        let mut rng = seeded_rng(2, "update-two");
        let a = g.constant(Tensor::from_fn([2, 128, 3, 5], |_, _, _, _| rng.gen_range(-1.0..1.0)));
        let out = run_module(&mut g, &store, &cfg, &spec, a);
        assert_eq!(out.len(), 2);
        let (d0, _) = out[0];
        let (d1, _) = out[1];
        assert_ne!(g.value(d0).data(), g.value(d1).data());
    }

    #[test]
    fn dilation_schedule_is_validated() {
        let mut cfg = ModelConfig::base();
        cfg.refine_dilations[0] = vec![1, 2];
        let err = std::panic::catch_unwind(|| cfg.refine_spec(0));
        assert!(err.is_err());
    }

    #[test]
    fn update_module_parameter_counts() {
        let cfg = ModelConfig::base();
        let counts = [
            (cfg.top_spec(), 43_985),
            (cfg.pyramid_spec(), 50_946),
            (cfg.refine_spec(0), 116_529),
            (cfg.refine_spec(1), 116_529),
            (cfg.refine_spec(2), 30_625),
        ];
        for (spec, want) in counts {
            let mut store: ParameterStore<f32> = ParameterStore::new();
            build_module(&mut store, &cfg, &spec, 0);
            assert_eq!(store.element_count(), want, "{}", spec.name);
        }
    }
}
