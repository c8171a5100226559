//! A quick built-in diagnostic: independent oracles for the core numerics
//! plus file-format round trips, printing one line per suite. Useful after a
//! build on a new machine; the full test suite covers far more ground.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilestereo::error::{Error, Result};
use tilestereo::model::init::match_tiles;
use tilestereo::reference::{check_op_gradients, dense_argmin, naive_warp_cost};
use tilestereo::tensor::store::seeded_rng;
use tilestereo::tensor::{checkpoint, Graph, ParameterStore, Shape, Tensor};

type SuiteResult = std::result::Result<(), String>;

fn uniform(shape: Shape, r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| r.gen_range(lo..hi))
}

/// Streaming tile matching agrees exactly with a dense argmin that builds
/// the whole cost volume.
fn suite_matching() -> SuiteResult {
    for seed in 0..10u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let el: Tensor<f32> = Tensor::from_fn([1, 6, 4, 8], |_, _, _, _| r.gen_range(-1.0..1.0));
        let er: Tensor<f32> = Tensor::from_fn([1, 6, 4, 32], |_, _, _, _| r.gen_range(-1.0..1.0));
        let fast = match_tiles(&el, &er, 4, 20);
        let (dense, _) = dense_argmin(&el, &er, 4, 20);
        if fast != dense {
            return Err(format!("seed {seed}: streaming and dense argmin disagree"));
        }
    }
    Ok(())
}

/// The graph's plane-warped cost matches a loop-nest oracle.
fn suite_warp() -> SuiteResult {
    let t = 4usize;
    let (ht, wt, c) = (2usize, 3usize, 3usize);
    for seed in 0..10u64 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let el = uniform([1, c, ht * t, wt * t], &mut r, 0.0, 1.0);
        let er = uniform([1, c, ht * t, wt * t], &mut r, 0.0, 1.0);
        let dprime = uniform([1, t * t, ht, wt], &mut r, -2.0, 10.0);
        let oracle = naive_warp_cost(&el, &er, &dprime, t);
        let mut g: Graph<f64> = Graph::new();
        let (l, rr, d) = (g.constant(el), g.constant(er), g.constant(dprime));
        let cost = g.warp_cost(l, rr, d, t);
        let worst = g
            .value(cost)
            .data()
            .iter()
            .zip(oracle.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if worst > 1e-9 {
            return Err(format!("seed {seed}: warp cost off by {worst:.3e}"));
        }
    }
    Ok(())
}

/// Plane expansion and hypothesis upsampling reproduce their closed forms.
fn suite_planes() -> SuiteResult {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let geo = uniform([1, 4, 5, 6], &mut r, -1.0, 1.0);
    let mut g: Graph<f64> = Graph::new();
    let id = g.constant(geo.clone());
    let t = 4usize;
    let expanded = g.expand_plane(id, t);
    let full = g.plane_to_full(id, t, 2.0);
    let children = g.upsample_hyp(id, 0.5, 2.0);
    let ctr = (t as f64 - 1.0) / 2.0;
    for y in 0..5 {
        for x in 0..6 {
            let (d, dx, dy) = (geo.at(0, 0, y, x), geo.at(0, 1, y, x), geo.at(0, 2, y, x));
            for i in 0..t {
                for j in 0..t {
                    let want = d + (i as f64 - ctr) * dx + (j as f64 - ctr) * dy;
                    let got = g.value(expanded).at(0, i * t + j, y, x);
                    if (got - want).abs() > 1e-12 {
                        return Err(format!("expand_plane({y},{x},{i},{j}) = {got}, want {want}"));
                    }
                    let wantf = 2.0 * d + (i as f64 - ctr) * dx + (j as f64 - ctr) * dy;
                    let gotf = g.value(full).at(0, 0, t * y + j, t * x + i);
                    if (gotf - wantf).abs() > 1e-12 {
                        return Err(format!("plane_to_full({y},{x},{i},{j}) = {gotf}, want {wantf}"));
                    }
                }
            }
            for (ii, jj) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
                let (si, sj) = (2.0 * ii as f64 - 1.0, 2.0 * jj as f64 - 1.0);
                let want = 2.0 * (d + si * 0.5 * dx + sj * 0.5 * dy);
                let got = g.value(children).at(0, 0, 2 * y + jj, 2 * x + ii);
                if (got - want).abs() > 1e-12 {
                    return Err(format!("upsample_hyp({y},{x},{ii},{jj}) = {got}, want {want}"));
                }
            }
        }
    }
    Ok(())
}

/// Finite-difference sanity on a few core differentiable ops.
fn suite_gradients() -> SuiteResult {
    for seed in 0..3u64 {
        let mut r = ChaCha8Rng::seed_from_u64(50 + seed);
        let x = uniform([1, 2, 6, 6], &mut r, -1.0, 1.0);
        let w = uniform([3, 2, 3, 3], &mut r, -0.5, 0.5);
        let b = uniform([1, 3, 1, 1], &mut r, -0.1, 0.1);
        check_op_gradients(&[x, w, b], &[true, true, true], &|g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], (1, 1), (1, 1), [1, 1, 1, 1]);
            let y = g.leaky_relu(y, 0.2);
            let sq = g.mul(y, y);
            g.sum_all(sq)
        })?;
        let v = uniform([1, 1, 4, 4], &mut r, 0.2, 2.0);
        check_op_gradients(&[v], &[true], &|g, ids| {
            let y = g.robust_rho(ids[0], 0.9, 0.1);
            g.sum_all(y)
        })?;
    }
    Ok(())
}

/// PFM and netpbm writes read back bit-exact (PFM) or quantized (PGM).
fn suite_formats() -> SuiteResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = seeded_rng(11, "selftest-formats");
    let d: Tensor<f32> = Tensor::from_fn([1, 1, 9, 13], |_, _, _, _| r.gen_range(-50.0..50.0));
    let path = dir.path().join("x.pfm");
    tilestereo::data::write_pfm(&path, &d).map_err(|e| e.to_string())?;
    let (back, scale) = tilestereo::data::read_pfm(&path).map_err(|e| e.to_string())?;
    if scale != 1.0 || back.shape() != d.shape() {
        return Err("pfm header round trip failed".into());
    }
    for (a, b) in back.data().iter().zip(d.data()) {
        if a.to_bits() != b.to_bits() {
            return Err("pfm payload is not bit-exact".into());
        }
    }
    let img: Tensor<f32> = Tensor::from_fn([1, 3, 6, 7], |_, _, _, _| r.gen_range(0.0..1.0));
    let ipath = dir.path().join("x.ppm");
    tilestereo::data::write_image(&ipath, &img).map_err(|e| e.to_string())?;
    let back = tilestereo::data::read_image(&ipath).map_err(|e| e.to_string())?;
    for (a, b) in back.data().iter().zip(img.data()) {
        if (a - b).abs() > 0.5 / 255.0 + 1e-6 {
            return Err("netpbm round trip exceeded quantization error".into());
        }
    }
    Ok(())
}

/// Checkpoints restore parameters bit-exactly and rewrite identically.
fn suite_checkpoint() -> SuiteResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut store: ParameterStore<f32> = ParameterStore::new();
    let mut r = seeded_rng(12, "selftest-ckpt");
    store.insert("a.weight", Tensor::from_fn([2, 3, 3, 3], |_, _, _, _| r.gen_range(-1.0..1.0)));
    store.insert("a.bias", Tensor::from_fn([1, 2, 1, 1], |_, _, _, _| r.gen_range(-1.0..1.0)));
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    checkpoint::save(&store, &p1).map_err(|e| e.to_string())?;
    let mut restored: ParameterStore<f32> = ParameterStore::new();
    restored.insert("a.weight", Tensor::zeros([2, 3, 3, 3]));
    restored.insert("a.bias", Tensor::zeros([1, 2, 1, 1]));
    checkpoint::load_into(&mut restored, &p1).map_err(|e| e.to_string())?;
    checkpoint::save(&restored, &p2).map_err(|e| e.to_string())?;
    let (b1, b2) = (std::fs::read(&p1).map_err(|e| e.to_string())?, std::fs::read(&p2).map_err(|e| e.to_string())?);
    if b1 != b2 {
        return Err("save -> load -> save changed the bytes".into());
    }
    Ok(())
}

/// Runs every suite, printing one status line each; any failure is reported
/// as an error so the binary exits nonzero.
pub fn cmd_selftest() -> Result<()> {
    let suites: &[(&str, fn() -> SuiteResult)] = &[
        ("matching-argmin", suite_matching),
        ("warp-oracle", suite_warp),
        ("plane-algebra", suite_planes),
        ("op-gradients", suite_gradients),
        ("format-round-trip", suite_formats),
        ("checkpoint-round-trip", suite_checkpoint),
    ];
    let mut failed = 0;
    for (name, run) in suites {
        match run() {
            Ok(()) => println!("{name} ... ok"),
            Err(msg) => {
                failed += 1;
                println!("{name} ... FAIL: {msg}");
            }
        }
    }
    if failed > 0 {
        return Err(Error::Format(format!("{failed} selftest suite(s) failed")));
    }
    println!("all selftest suites passed");
    Ok(())
}
