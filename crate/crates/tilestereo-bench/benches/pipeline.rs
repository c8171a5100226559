//! End-to-end and kernel-level benchmarks: convolution forward and backward,
//! streaming tile matching, slanted warp costs, and a whole forward plus
//! training step on the small configuration.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tilestereo::loss::{total_loss, GroundTruth, LossConfig};
use tilestereo::model::{self, init::match_tiles};
use tilestereo::tensor::Graph;
use tilestereo_bench::{random_tensor, small_model};

fn bench_conv2d(c: &mut Criterion) {
    let x = random_tensor([1, 16, 64, 128], 1, "conv-x");
    let w = random_tensor([16, 16, 3, 3], 1, "conv-w");
    let b = random_tensor([1, 16, 1, 1], 1, "conv-b");

    c.bench_function("conv2d 16x16x3x3 on 64x128 forward", |bench| {
        bench.iter(|| {
            let mut g: Graph<f32> = Graph::new();
            let (xn, wn, bn) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
            let y = g.conv2d(xn, wn, bn, (1, 1), (1, 1), [1, 1, 1, 1]);
            black_box(g.value(y).data()[0])
        })
    });

    c.bench_function("conv2d 16x16x3x3 on 64x128 forward+backward", |bench| {
        bench.iter(|| {
            let mut g: Graph<f32> = Graph::new();
            let (xn, bn) = (g.constant(x.clone()), g.constant(b.clone()));
            let wn = g.leaf(w.clone(), true);
            let y = g.conv2d(xn, wn, bn, (1, 1), (1, 1), [1, 1, 1, 1]);
            let s = g.sum_all(y);
            g.backward(s).unwrap();
            black_box(g.grad(wn).unwrap()[0])
        })
    });
}

fn bench_matching(c: &mut Criterion) {
    // Level-0 extents of a 256x512 input: 128-wide tile grid, dense scan.
    let el = random_tensor([1, 16, 64, 128], 2, "match-el");
    let er = random_tensor([1, 16, 64, 512], 2, "match-er");
    c.bench_function("match_tiles 64x128 grid, d_max 160", |bench| {
        bench.iter(|| black_box(match_tiles(&el, &er, 4, 160)))
    });
}

fn bench_warp_cost(c: &mut Criterion) {
    let el = random_tensor([1, 16, 64, 128], 3, "warp-el");
    let er = random_tensor([1, 16, 64, 128], 3, "warp-er");
    let dp = random_tensor([1, 16, 16, 32], 3, "warp-d");
    c.bench_function("warp_cost 4x4 tiles on 64x128", |bench| {
        bench.iter(|| {
            let mut g: Graph<f32> = Graph::new();
            let (l, r, d) = (g.constant(el.clone()), g.constant(er.clone()), g.constant(dp.clone()));
            let cost = g.warp_cost(l, r, d, 4);
            black_box(g.value(cost).data()[0])
        })
    });
}

fn bench_full_network(c: &mut Criterion) {
    let (store, cfg) = small_model();
    let left = random_tensor([1, 1, 64, 128], 4, "net-left");
    let right = random_tensor([1, 1, 64, 128], 4, "net-right");
    let gt_d = random_tensor([1, 1, 64, 128], 4, "net-gt");
    let gt = GroundTruth::from_disparity(gt_d, vec![true; 64 * 128]);
    let loss_cfg = LossConfig::sceneflow();

    c.bench_function("small network 64x128 forward", |bench| {
        bench.iter(|| {
            let mut g: Graph<f32> = Graph::new();
            let (l, r) = (g.constant(left.clone()), g.constant(right.clone()));
            let out = model::forward(&mut g, &store, &cfg, l, r);
            black_box(g.value(out.final_hyp).data()[0])
        })
    });

    c.bench_function("small network 64x128 forward+loss+backward", |bench| {
        bench.iter(|| {
            let mut g: Graph<f32> = Graph::new();
            let (l, r) = (g.constant(left.clone()), g.constant(right.clone()));
            let out = model::forward(&mut g, &store, &cfg, l, r);
            let (node, _) = total_loss(&mut g, &out, &gt, &loss_cfg);
            g.backward(node).unwrap();
            black_box(g.value(node).data()[0])
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_conv2d, bench_matching, bench_warp_cost, bench_full_network
}
criterion_main!(benches);
