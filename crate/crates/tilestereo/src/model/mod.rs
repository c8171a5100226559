//! Network assembly: architecture configuration with presets, parameter
//! construction, and shared conv helpers. The forward pass lives in
//! [`propagate`], features in [`unet`], matching in [`init`], and the
//! hypothesis update modules in [`update`].

pub mod init;
pub mod propagate;
pub mod unet;
pub mod update;

use crate::tensor::store::{seeded_rng, uniform_init, ParameterStore};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

pub use init::LevelInit;
pub use propagate::{forward, ForwardOutput, RecordedHyp};

/// Everything that fixes the network architecture. A tile hypothesis holds
/// `[d, dx, dy, descriptor]`, so its channel count is `3 + descriptor`.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Image channels: 1 for grayscale, 3 for color.
    pub input_channels: usize,
    /// Feature channels per pyramid level, fine to coarse; the list length
    /// is the number of levels M+1.
    pub channels: Vec<usize>,
    /// Tile embedding width after the 4x4 patch convolution.
    pub embed_channels: usize,
    /// Hidden width of the per-tile embedding MLP.
    pub embed_hidden: usize,
    /// Learned tile descriptor width.
    pub descriptor_channels: usize,
    /// Maximum full-resolution disparity D; level l matches candidates up to
    /// ceil(D / 2^l) inclusive.
    pub max_disparity: usize,
    /// Residual-block width of the pyramid-phase update modules.
    pub update_channels: usize,
    /// Residual blocks per pyramid-phase update module.
    pub update_blocks: usize,
    /// Residual-block widths of the three full-resolution refinement passes
    /// (tile sizes 4, 2, 1).
    pub refine_channels: [usize; 3],
    /// Residual blocks per refinement pass.
    pub refine_blocks: [usize; 3],
    /// Dilation schedule per refinement pass, one entry per block.
    pub refine_dilations: [Vec<usize>; 3],
    /// Negative slope of every leaky ReLU.
    pub leaky_slope: f64,
    /// Zero-initialize the update heads so training starts exactly from the
    /// initialization solution. The gradient-check preset disables this:
    /// zero confidences sit on the hinge of the confidence loss.
    pub zero_init_heads: bool,
    /// Ablation switch: clamp predicted slants to zero everywhere.
    pub clamp_slants: bool,
}

impl ModelConfig {
    /// Default configuration: color input, 5 levels, 0.45M parameters.
    pub fn base() -> Self {
        Self {
            input_channels: 3,
            channels: vec![16, 16, 24, 24, 32],
            embed_channels: 16,
            embed_hidden: 32,
            descriptor_channels: 13,
            max_disparity: 320,
            update_channels: 32,
            update_blocks: 2,
            refine_channels: [32, 32, 16],
            refine_blocks: [6, 6, 6],
            refine_dilations: [vec![1, 2, 4, 8, 1, 1], vec![1, 2, 4, 8, 1, 1], vec![1, 2, 4, 8, 1, 1]],
            leaky_slope: 0.2,
            zero_init_heads: true,
            clamp_slants: false,
        }
    }

    /// Wider feature extractor and uniform 32-wide refinement.
    pub fn large() -> Self {
        Self {
            channels: vec![32, 40, 48, 56, 64],
            refine_channels: [32, 32, 32],
            ..Self::base()
        }
    }

    /// Like [`ModelConfig::large`] with 64-wide refinement passes.
    pub fn xlarge() -> Self {
        Self {
            channels: vec![32, 40, 48, 56, 64],
            refine_channels: [64, 64, 64],
            ..Self::base()
        }
    }

    /// Six-level variant of [`ModelConfig::large`] for very large disparity
    /// ranges.
    pub fn middlebury() -> Self {
        Self {
            channels: vec![32, 40, 48, 56, 64, 64],
            refine_channels: [32, 32, 32],
            ..Self::base()
        }
    }

    /// Shallower refinement schedule for small datasets.
    pub fn kitti() -> Self {
        Self {
            max_disparity: 256,
            refine_blocks: [4, 4, 2],
            refine_dilations: [vec![1, 3, 1, 1], vec![1, 3, 1, 1], vec![1, 1]],
            ..Self::base()
        }
    }

    /// Overfit-experiment configuration: grayscale input with halved feature
    /// channels and a small disparity range.
    pub fn overfit_reduced() -> Self {
        Self {
            input_channels: 1,
            channels: vec![8, 8, 12, 12, 16],
            max_disparity: 64,
            ..Self::base()
        }
    }

    /// Tiny three-level configuration for whole-network finite-difference
    /// checks: 8-channel features, shallow refinement, live update heads.
    pub fn gradcheck_small() -> Self {
        Self {
            input_channels: 1,
            channels: vec![8, 8, 8],
            embed_channels: 8,
            embed_hidden: 8,
            descriptor_channels: 13,
            max_disparity: 16,
            update_channels: 8,
            update_blocks: 1,
            refine_channels: [8, 8, 8],
            refine_blocks: [2, 2, 2],
            refine_dilations: [vec![1, 2], vec![1, 2], vec![1, 1]],
            zero_init_heads: false,
            ..Self::base()
        }
    }

    /// The coarsest pyramid level M.
    pub fn top_level(&self) -> usize {
        assert!(!self.channels.is_empty(), "at least one pyramid level is required");
        self.channels.len() - 1
    }

    /// Channels of a tile hypothesis: disparity, two slants, descriptor.
    pub fn hyp_channels(&self) -> usize {
        3 + self.descriptor_channels
    }

    /// Inclusive disparity search bound at pyramid level l, in level-l pixels.
    pub fn d_max_at(&self, level: usize) -> usize {
        let unit = 1usize << level;
        self.max_disparity.div_ceil(unit)
    }

    /// Spatial granularity the input must be divisible by: tiles are 4x4 at
    /// the coarsest level.
    pub fn extent_unit(&self) -> usize {
        4 << self.top_level()
    }
}

/// Inserts a convolution weight (fan-in scaled uniform) and zero bias.
pub(crate) fn add_conv<S: Scalar>(store: &mut ParameterStore<S>, name: &str, oc: usize, ic: usize, k: (usize, usize), seed: u64) {
    let fan_in = ic * k.0 * k.1;
    let mut rng = seeded_rng(seed, name);
    store.insert(&format!("{name}.weight"), uniform_init([oc, ic, k.0, k.1], fan_in, &mut rng));
    store.insert(&format!("{name}.bias"), Tensor::zeros([1, oc, 1, 1]));
}

/// Inserts a transposed-convolution weight in the shared `[conv_out,
/// conv_in, kh, kw]` layout. With kernel equal to stride every output pixel
/// sees exactly one tap, so fan-in is the input channel count.
pub(crate) fn add_tconv<S: Scalar>(store: &mut ParameterStore<S>, name: &str, in_c: usize, out_c: usize, k: (usize, usize), seed: u64) {
    let mut rng = seeded_rng(seed, name);
    store.insert(&format!("{name}.weight"), uniform_init([in_c, out_c, k.0, k.1], in_c, &mut rng));
    store.insert(&format!("{name}.bias"), Tensor::zeros([1, out_c, 1, 1]));
}

/// Inserts an all-zero convolution (update heads start inert).
pub(crate) fn add_conv_zero<S: Scalar>(store: &mut ParameterStore<S>, name: &str, oc: usize, ic: usize, k: (usize, usize)) {
    store.insert(&format!("{name}.weight"), Tensor::zeros([oc, ic, k.0, k.1]));
    store.insert(&format!("{name}.bias"), Tensor::zeros([1, oc, 1, 1]));
}

/// Records `conv(x) + leaky ReLU` with parameters `<name>.weight/.bias`.
pub(crate) fn conv_block<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    name: &str,
    x: NodeId,
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: [usize; 4],
    slope: f64,
) -> NodeId {
    let w = g.param(store, &format!("{name}.weight"));
    let b = g.param(store, &format!("{name}.bias"));
    let y = g.conv2d(x, w, b, stride, dilation, pad);
    g.leaky_relu(y, slope)
}

/// Records a bare convolution without nonlinearity.
pub(crate) fn conv_linear<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    name: &str,
    x: NodeId,
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: [usize; 4],
) -> NodeId {
    let w = g.param(store, &format!("{name}.weight"));
    let b = g.param(store, &format!("{name}.bias"));
    g.conv2d(x, w, b, stride, dilation, pad)
}

/// Records `transposed conv(x) + leaky ReLU`.
pub(crate) fn tconv_block<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    name: &str,
    x: NodeId,
    stride: (usize, usize),
    slope: f64,
) -> NodeId {
    let w = g.param(store, &format!("{name}.weight"));
    let b = g.param(store, &format!("{name}.bias"));
    let y = g.tconv2d(x, w, b, stride);
    g.leaky_relu(y, slope)
}

/// Creates every parameter of the network in a deterministic order with
/// per-name seeded initialization.
pub fn build_params<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, seed: u64) {
    unet::build(store, cfg, seed);
    init::build(store, cfg, seed);
    update::build_all(store, cfg, seed);
}
