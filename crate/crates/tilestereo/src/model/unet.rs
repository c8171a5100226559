//! Multi-scale feature extractor. An encoder halves resolution per level
//! while a decoder walks back up, merging skip connections, so every level
//! of the output pyramid sees global context. Level 0 is full resolution.

use super::{add_conv, add_tconv, conv_block, tconv_block, ModelConfig};
use crate::tensor::{Graph, NodeId, ParameterStore, Scalar};

/// Creates the extractor parameters.
///
/// Per encoder level: a 3x3 stride-1 conv followed by a 2x2 stride-2
/// downsampling conv. The coarsest level runs a single 3x3 bottleneck whose
/// output is both the top pyramid feature and the decoder start. Per decoder
/// level: a 2x2 stride-2 transposed conv, then a 1x1 conv merging the skip
/// connection, then a 3x3 conv. Every conv is followed by a leaky ReLU.
pub fn build<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, seed: u64) {
    let m = cfg.top_level();
    let ch = &cfg.channels;
    let mut inc = cfg.input_channels;
    for l in 0..m {
        add_conv(store, &format!("unet.down{l}.conv3"), ch[l], inc, (3, 3), seed);
        add_conv(store, &format!("unet.down{l}.down2"), ch[l + 1], ch[l], (2, 2), seed);
        inc = ch[l + 1];
    }
    add_conv(store, "unet.bottleneck", ch[m], inc, (3, 3), seed);
    for l in (0..m).rev() {
        add_tconv(store, &format!("unet.up{l}.expand"), ch[l + 1], ch[l], (2, 2), seed);
        add_conv(store, &format!("unet.up{l}.merge"), ch[l], 2 * ch[l], (1, 1), seed);
        add_conv(store, &format!("unet.up{l}.conv3"), ch[l], ch[l], (3, 3), seed);
    }
}

/// Records the extractor on the graph and returns the feature pyramid
/// `e[0..=M]`, fine to coarse. Level l has extents `(H / 2^l, W / 2^l)` and
/// `cfg.channels[l]` channels; the input extents must be divisible by `2^M`.
pub fn extract<S: Scalar>(g: &mut Graph<S>, store: &ParameterStore<S>, cfg: &ModelConfig, image: NodeId) -> Vec<NodeId> {
    let m = cfg.top_level();
    let slope = cfg.leaky_slope;
    let [_, c, h, w] = g.value(image).shape();
    assert_eq!(c, cfg.input_channels, "image channels do not match the configuration");
    assert!(
        h % (1 << m) == 0 && w % (1 << m) == 0,
        "extents {h}x{w} are not divisible by 2^{m}"
    );

    let mut skips = Vec::with_capacity(m);
    let mut x = image;
    for l in 0..m {
        let s = conv_block(g, store, &format!("unet.down{l}.conv3"), x, (1, 1), (1, 1), [1, 1, 1, 1], slope);
        skips.push(s);
        x = conv_block(g, store, &format!("unet.down{l}.down2"), s, (2, 2), (1, 1), [0, 0, 0, 0], slope);
    }

    let mut pyramid = vec![None; m + 1];
    let mut dec = conv_block(g, store, "unet.bottleneck", x, (1, 1), (1, 1), [1, 1, 1, 1], slope);
    pyramid[m] = Some(dec);
    for l in (0..m).rev() {
        let up = tconv_block(g, store, &format!("unet.up{l}.expand"), dec, (2, 2), slope);
        let cat = g.concat_ch(&[up, skips[l]]);
        let merged = conv_block(g, store, &format!("unet.up{l}.merge"), cat, (1, 1), (1, 1), [0, 0, 0, 0], slope);
        dec = conv_block(g, store, &format!("unet.up{l}.conv3"), merged, (1, 1), (1, 1), [1, 1, 1, 1], slope);
        pyramid[l] = Some(dec);
    }
    pyramid.into_iter().map(|n| n.expect("every level is filled")).collect()
}
