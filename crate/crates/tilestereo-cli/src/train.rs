//! The training loop: fixed-pool round-robin batches, Adam with a piecewise
//! constant schedule, per-step loss logging, periodic validation EPE on
//! held-out scenes, and periodic checkpoints. Runs with the same seed are
//! bit-identical; nothing in the loop reads the clock.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::Rng;
use tilestereo::data::augment;
use tilestereo::error::{Error, Result};
use tilestereo::loss::total_loss;
use tilestereo::model::{self, ModelConfig};
use tilestereo::tensor::checkpoint;
use tilestereo::tensor::store::{seeded_rng, AdamConfig};
use tilestereo::tensor::{Graph, ParameterStore};

use crate::config::RunConfig;
use crate::data_source::{self, batch, random_crop, scene_config};
use crate::infer::predict;

/// What `cmd_train` leaves behind, for tests and callers.
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub steps: u64,
    pub last_loss: f64,
}

/// Writes a line to stdout and the run log.
fn log_line(log: &mut BufWriter<File>, line: &str) -> Result<()> {
    println!("{line}");
    writeln!(log, "{line}")?;
    Ok(())
}

/// Trains the configured model from scratch and returns the path of the
/// final checkpoint. A non-finite loss aborts with the per-term breakdown in
/// the log; an empty schedule just saves the initial parameters.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let loss_cfg = cfg.loss_config()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut log = BufWriter::new(File::create(cfg.out_dir.join("train.log"))?);

    let mut store: ParameterStore<f32> = ParameterStore::new();
    model::build_params(&mut store, &model_cfg, cfg.seed);
    let final_path = cfg.out_dir.join("final.ckpt");
    let total = cfg.total_steps();
    if total == 0 {
        checkpoint::save(&store, &final_path)?;
        log_line(&mut log, "empty schedule, wrote the initial checkpoint")?;
        log.flush()?;
        return Ok(TrainOutcome { final_checkpoint: final_path, steps: 0, last_loss: f64::NAN });
    }

    let pool = data_source::load_pool(cfg)?;
    for s in &pool {
        check_sample(&model_cfg, s.left.shape())?;
    }
    let augmenting = cfg.aug.photometric || cfg.aug.patch_replace || cfg.aug.y_jitter || cfg.aug.noise;
    let mut rng = seeded_rng(cfg.seed, "train-loop");
    let mut last_loss = 0.0;

    for step in 0..total {
        let lr = cfg.lr_at(step);
        let mut parts = Vec::with_capacity(cfg.batch);
        for k in 0..cfg.batch {
            let idx = (step as usize * cfg.batch + k) % pool.len();
            let mut s = pool[idx].clone();
            if augmenting {
                s = augment(&s, rng.gen(), &cfg.aug);
            }
            if cfg.crop != (0, 0) {
                s = random_crop(&s, cfg.crop, &mut rng)?;
            }
            parts.push(s);
        }
        let (left, right, gt) = batch(&parts)?;

        let mut g: Graph<f32> = Graph::new();
        let l = g.constant(left);
        let r = g.constant(right);
        let out = model::forward(&mut g, &store, &model_cfg, l, r);
        let (node, breakdown) = total_loss(&mut g, &out, &gt, &loss_cfg);
        if !breakdown.total.is_finite() {
            let line = format!("abort: non-finite loss at step {}: {}", step + 1, breakdown.render());
            eprintln!("{line}");
            writeln!(log, "{line}")?;
            log.flush()?;
            return Err(Error::Numeric(format!("loss diverged at step {}", step + 1)));
        }
        g.backward(node)?;
        g.export_grads(&mut store);
        store.adam_step(lr, AdamConfig::default())?;
        last_loss = breakdown.total;

        let done = step + 1;
        log_line(&mut log, &format!("step={done} lr={lr} {}", breakdown.render()))?;
        if cfg.val_every > 0 && cfg.val_count > 0 && (done % cfg.val_every == 0 || done == total) {
            let epe = validation_epe(&store, &model_cfg, cfg)?;
            log_line(&mut log, &format!("step={done} val_epe={epe:.6}"))?;
        }
        let boundary = cfg.schedule.iter().any(|&(until, _)| until == done) && done != total;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != total) || boundary {
            checkpoint::save(&store, &cfg.out_dir.join(format!("step_{done}.ckpt")))?;
        }
    }

    checkpoint::save(&store, &final_path)?;
    log.flush()?;
    Ok(TrainOutcome { final_checkpoint: final_path, steps: total, last_loss })
}

/// Rejects pools whose images cannot feed the configured network.
fn check_sample(model_cfg: &ModelConfig, shape: [usize; 4]) -> Result<()> {
    let [_, c, h, w] = shape;
    if c != model_cfg.input_channels {
        return Err(Error::Config(format!(
            "samples have {c} channels but the model wants {}",
            model_cfg.input_channels
        )));
    }
    let unit = model_cfg.extent_unit();
    if h % unit != 0 || w % unit != 0 {
        return Err(Error::Config(format!("sample extents {h}x{w} are not divisible by {unit}")));
    }
    Ok(())
}

/// Mean EPE over freshly generated scenes whose seeds sit far above the
/// training pool. Directory-sourced runs skip validation (there is no
/// held-out split to draw from), reporting NaN.
pub fn validation_epe(store: &ParameterStore<f32>, model_cfg: &ModelConfig, cfg: &RunConfig) -> Result<f64> {
    if cfg.source != "synthetic" {
        return Ok(f64::NAN);
    }
    let mut abs_sum = 0.0f64;
    let mut n = 0u64;
    for k in 0..cfg.val_count {
        let seed = cfg.base_seed + 1_000_000 + k as u64;
        let s = tilestereo::data::gen_scene(&scene_config(cfg, seed))?;
        let pred = predict(store, model_cfg, &s.left, &s.right)?;
        for (i, (&p, &t)) in pred.d.data().iter().zip(s.d_gt.data()).enumerate() {
            if s.valid[i] {
                abs_sum += (p as f64 - t as f64).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Config("validation scenes have no valid pixels".into()));
    }
    Ok(abs_sum / n as f64)
}
