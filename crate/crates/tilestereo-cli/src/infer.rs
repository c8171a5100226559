//! Inference: pad a rectified pair to the network's extent unit, run the
//! forward pass, crop the per-pixel hypothesis back, and write the disparity
//! as PFM (optionally with a color rendering and the slant maps).

use std::path::{Path, PathBuf};

use tilestereo::data::{read_image, write_image, write_pfm};
use tilestereo::error::{Error, Result};
use tilestereo::model::{self, ModelConfig};
use tilestereo::tensor::{checkpoint, Graph, ParameterStore, Tensor};

use crate::config::RunConfig;

/// Per-pixel outputs of one forward pass, each `[1, 1, H, W]` at the input
/// extents.
pub struct Prediction {
    pub d: Tensor<f32>,
    pub dx: Tensor<f32>,
    pub dy: Tensor<f32>,
}

/// Runs the network on one pair. Extents only need to match each other; both
/// images are padded to the extent unit by edge replication and the outputs
/// cropped back.
pub fn predict(store: &ParameterStore<f32>, cfg: &ModelConfig, left: &Tensor<f32>, right: &Tensor<f32>) -> Result<Prediction> {
    if left.shape() != right.shape() {
        return Err(Error::Shape(format!("left {:?} vs right {:?}", left.shape(), right.shape())));
    }
    let [_, c, h, w] = left.shape();
    if c != cfg.input_channels {
        return Err(Error::Config(format!("images have {c} channels but the model wants {}", cfg.input_channels)));
    }
    let (pl, _, _) = left.pad_to_multiple(cfg.extent_unit());
    let (pr, _, _) = right.pad_to_multiple(cfg.extent_unit());
    let mut g: Graph<f32> = Graph::new();
    let l = g.constant(pl);
    let r = g.constant(pr);
    let out = model::forward(&mut g, store, cfg, l, r);
    let hyp = g.value(out.final_hyp);
    let channel = |c: usize| Tensor::from_fn([1, 1, h, w], |_, _, y, x| hyp.at(0, c, y, x));
    Ok(Prediction { d: channel(0), dx: channel(1), dy: channel(2) })
}

/// Maps disparity to a blue-to-red ramp for quick visual checks; invalid
/// (non-finite) values come out black.
pub fn colorize(d: &Tensor<f32>, d_max: f64) -> Tensor<f32> {
    let [b, _, h, w] = d.shape();
    Tensor::from_fn([b, 3, h, w], |bb, c, y, x| {
        let v = d.at(bb, 0, y, x) as f64;
        if !v.is_finite() {
            return 0.0;
        }
        let t = (v / d_max.max(1e-9)).clamp(0.0, 1.0);
        let arm = match c {
            0 => 4.0 * t - 3.0,
            1 => 4.0 * t - 2.0,
            _ => 4.0 * t - 1.0,
        };
        (1.5 - arm.abs()).clamp(0.0, 1.0) as f32
    })
}

/// Arguments of the `infer` subcommand, decoupled from clap for tests.
pub struct InferArgs {
    pub left: PathBuf,
    pub right: PathBuf,
    pub model: PathBuf,
    pub out: PathBuf,
    pub viz: Option<PathBuf>,
    pub slants: Option<PathBuf>,
}

/// Loads the pair and checkpoint, predicts, and writes the outputs. The run
/// configuration supplies the architecture preset; checkpoints store bare
/// tensors, so a preset mismatch surfaces as a checkpoint error here.
pub fn cmd_infer(args: &InferArgs, cfg: &RunConfig) -> Result<()> {
    let model_cfg = cfg.model_config()?;
    let left = read_image(&args.left)?;
    let right = read_image(&args.right)?;
    let mut store: ParameterStore<f32> = ParameterStore::new();
    model::build_params(&mut store, &model_cfg, 0);
    checkpoint::load_into(&mut store, &args.model)?;
    let pred = predict(&store, &model_cfg, &left, &right)?;
    if !pred.d.all_finite() {
        return Err(Error::Numeric("predicted disparity contains non-finite values".into()));
    }
    write_pfm(&args.out, &pred.d)?;
    if let Some(viz) = &args.viz {
        write_image(viz, &colorize(&pred.d, model_cfg.max_disparity as f64))?;
    }
    if let Some(prefix) = &args.slants {
        write_pfm(Path::new(&format!("{}.dx.pfm", prefix.display())), &pred.dx)?;
        write_pfm(Path::new(&format!("{}.dy.pfm", prefix.display())), &pred.dy)?;
    }
    Ok(())
}
