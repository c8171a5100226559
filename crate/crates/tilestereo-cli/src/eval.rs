//! Scoring predicted disparity maps against ground truth. Both directories
//! hold `.pfm` files paired by file stem; ground-truth pixels with non-finite
//! values are unlabeled. Prints one metric row per file plus an aggregate
//! weighted by each file's valid pixel count.

use std::path::{Path, PathBuf};

use tilestereo::data::read_pfm;
use tilestereo::error::{Error, Result};
use tilestereo::metrics::{sceneflow_mask, MetricReport, BAD_THRESHOLDS};
use tilestereo::tensor::Tensor;

/// Per-file reports plus the pixel-weighted aggregate.
pub struct EvalOutcome {
    pub per_file: Vec<(String, MetricReport)>,
    pub aggregate: MetricReport,
}

/// Lists `<stem>.pfm` files sorted by stem.
fn pfm_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "pfm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Scores every prediction in `pred_dir` against the same stem in `gt_dir`.
/// `protocol` is `none` (score every labeled pixel) or `sceneflow` (also
/// drop pixels whose true disparity exceeds 192).
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, protocol: &str) -> Result<EvalOutcome> {
    let stems = pfm_stems(pred_dir)?;
    if stems.is_empty() {
        return Err(Error::Format(format!("no .pfm predictions under {}", pred_dir.display())));
    }
    let mut per_file = Vec::new();
    let mut abs_sum = 0.0f64;
    let mut bad_sum = [0u64; BAD_THRESHOLDS.len()];
    let mut n_sum = 0u64;
    for stem in stems {
        let gt_path = gt_dir.join(format!("{stem}.pfm"));
        if !gt_path.exists() {
            return Err(Error::Format(format!("prediction {stem}.pfm has no ground truth in {}", gt_dir.display())));
        }
        let (pred, _) = read_pfm(&pred_dir.join(format!("{stem}.pfm")))?;
        let (gt, _) = read_pfm(&gt_path)?;
        if pred.shape() != gt.shape() {
            return Err(Error::Shape(format!("{stem}: prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
        }
        let labeled: Vec<bool> = gt.data().iter().map(|v| v.is_finite()).collect();
        let mask = match protocol {
            "none" => labeled,
            "sceneflow" => sceneflow_mask(&gt, &labeled),
            other => return Err(Error::Config(format!("unknown protocol {other:?}"))),
        };
        let report = MetricReport::compute(&pred, &gt, &mask)
            .map_err(|e| Error::Format(format!("{stem}: {e}")))?;
        accumulate(&pred, &gt, &mask, &mut abs_sum, &mut bad_sum, &mut n_sum);
        per_file.push((stem, report));
    }
    if n_sum == 0 {
        return Err(Error::Format("no labeled pixels across the whole set".into()));
    }
    let aggregate = MetricReport {
        epe: abs_sum / n_sum as f64,
        bad: std::array::from_fn(|k| 100.0 * bad_sum[k] as f64 / n_sum as f64),
        valid_count: n_sum as usize,
    };
    Ok(EvalOutcome { per_file, aggregate })
}

fn accumulate(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &[bool], abs_sum: &mut f64, bad_sum: &mut [u64; BAD_THRESHOLDS.len()], n: &mut u64) {
    for (i, (&p, &t)) in pred.data().iter().zip(gt.data()).enumerate() {
        if !mask[i] {
            continue;
        }
        let err = (p as f64 - t as f64).abs();
        *abs_sum += err;
        for (k, &thr) in BAD_THRESHOLDS.iter().enumerate() {
            if err > thr {
                bad_sum[k] += 1;
            }
        }
        *n += 1;
    }
}

/// Arguments of the `eval` subcommand.
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub protocol: String,
}

/// Runs the evaluation and prints per-file rows, the aggregate table, and
/// machine-readable `key=value` lines.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome> {
    let outcome = evaluate(&args.pred, &args.gt, &args.protocol)?;
    for (stem, report) in &outcome.per_file {
        println!("{stem}: {}", report.lines().trim_end().replace('\n', " "));
    }
    println!("aggregate over {} files:", outcome.per_file.len());
    println!("{}", outcome.aggregate.table());
    print!("{}", outcome.aggregate.lines());
    Ok(outcome)
}
