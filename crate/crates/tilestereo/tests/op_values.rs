//! Forward-value checks for tensor ops: hand-computable examples, the
//! naive-loop oracles, linearity, adjoint identities, and determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilestereo::reference::{naive_conv2d, naive_tconv2d, rho_reference};
use tilestereo::tensor::{conv2d_out_extent, tconv2d_out_extent, Graph, Shape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: Shape, r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| r.gen_range(lo..hi))
}

#[test]
fn identity_kernel_is_identity() {
    let x = Tensor::new([1, 1, 2, 3], vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
    let mut g: Graph<f64> = Graph::new();
    let xi = g.constant(x.clone());
    let w = g.constant(Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap());
    let b = g.constant(Tensor::zeros([1, 1, 1, 1]));
    let y = g.conv2d(xi, w, b, (1, 1), (1, 1), [0, 0, 0, 0]);
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn all_ones_kernel_counts_taps() {
    let x = Tensor::full([1, 1, 4, 4], 5.0);
    let mut g: Graph<f64> = Graph::new();
    let xi = g.constant(x);
    let w = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros([1, 1, 1, 1]));
    let y = g.conv2d(xi, w, b, (1, 1), (1, 1), [1, 1, 1, 1]);
    let v = g.value(y);
    assert_eq!(v.shape(), [1, 1, 4, 4]);
    // Interior positions see all 9 taps of the constant-5 input, corners 4.
    assert_eq!(v.at(0, 0, 1, 1), 45.0);
    assert_eq!(v.at(0, 0, 1, 2), 45.0);
    assert_eq!(v.at(0, 0, 0, 0), 20.0);
    assert_eq!(v.at(0, 0, 3, 3), 20.0);
    // Edge (non-corner) positions see 6 taps.
    assert_eq!(v.at(0, 0, 0, 1), 30.0);
}

#[test]
fn single_tap_transposed_conv_broadcasts() {
    let x = Tensor::new([1, 1, 1, 1], vec![3.0]).unwrap();
    let mut g: Graph<f64> = Graph::new();
    let xi = g.constant(x);
    let w = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
    let b = g.constant(Tensor::zeros([1, 1, 1, 1]));
    let y = g.tconv2d(xi, w, b, (2, 2));
    assert_eq!(g.value(y).shape(), [1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[3.0; 4]);
}

#[test]
fn conv2d_matches_naive_reference() {
    let cases: &[(Shape, Shape, (usize, usize), (usize, usize), [usize; 4])] = &[
        ([2, 3, 5, 5], [4, 3, 3, 3], (1, 1), (1, 1), [1, 1, 1, 1]),
        ([1, 2, 6, 8], [3, 2, 2, 2], (2, 2), (1, 1), [0, 0, 0, 0]),
        ([1, 2, 7, 7], [2, 2, 3, 3], (1, 1), (2, 2), [1, 2, 0, 3]),
        ([2, 4, 4, 4], [5, 4, 1, 1], (1, 1), (1, 1), [0, 0, 0, 0]),
        ([1, 3, 8, 13], [6, 3, 4, 4], (4, 1), (1, 1), [0, 0, 0, 0]),
    ];
    for (case, &(xs, ws, stride, dilation, pad)) in cases.iter().enumerate() {
        let mut r = rng(case as u64);
        let x = uniform(xs, &mut r, -1.0, 1.0);
        let w = uniform(ws, &mut r, -1.0, 1.0);
        let b = uniform([1, ws[0], 1, 1], &mut r, -0.5, 0.5);
        let expect = naive_conv2d(&x, &w, &b, stride, dilation, pad);
        let mut g: Graph<f64> = Graph::new();
        let (xi, wi, bi) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.conv2d(xi, wi, bi, stride, dilation, pad);
        let got = g.value(y);
        assert_eq!(got.shape(), expect.shape());
        for (a, e) in got.data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12, "case {case}: {a} vs {e}");
        }
    }
}

#[test]
fn tconv2d_matches_naive_reference() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let x = uniform([2, 3, 3, 4], &mut r, -1.0, 1.0);
        let w = uniform([3, 2, 2, 2], &mut r, -1.0, 1.0);
        let b = uniform([1, 2, 1, 1], &mut r, -0.5, 0.5);
        let expect = naive_tconv2d(&x, &w, &b, (2, 2));
        let mut g: Graph<f64> = Graph::new();
        let (xi, wi, bi) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.tconv2d(xi, wi, bi, (2, 2));
        assert_eq!(g.value(y).shape(), expect.shape());
        for (a, e) in g.value(y).data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_is_linear_in_input() {
    let mut r = rng(7);
    let x1 = uniform([1, 2, 5, 5], &mut r, -1.0, 1.0);
    let x2 = uniform([1, 2, 5, 5], &mut r, -1.0, 1.0);
    let w = uniform([3, 2, 3, 3], &mut r, -1.0, 1.0);
    let (a, b) = (1.7, -0.4);
    let run = |x: Tensor<f64>, w: Tensor<f64>| {
        let mut g: Graph<f64> = Graph::new();
        let (xi, wi) = (g.constant(x), g.constant(w));
        let bi = g.constant(Tensor::zeros([1, 3, 1, 1]));
        let y = g.conv2d(xi, wi, bi, (1, 1), (1, 1), [1, 1, 1, 1]);
        g.value(y).data().to_vec()
    };
    let combined = Tensor::new(
        x1.shape(),
        x1.data().iter().zip(x2.data()).map(|(&u, &v)| a * u + b * v).collect(),
    )
    .unwrap();
    let lhs = run(combined, w.clone());
    let y1 = run(x1, w.clone());
    let y2 = run(x2, w);
    for (i, l) in lhs.iter().enumerate() {
        let rhs = a * y1[i] + b * y2[i];
        assert!((l - rhs).abs() <= 1e-5 * rhs.abs().max(1.0), "{l} vs {rhs}");
    }
}

#[test]
fn transposed_conv_is_the_adjoint_of_conv() {
    // <conv(x, w), y> must equal <x, tconv(y, w)> for matching geometry.
    let cases: &[(Shape, Shape, (usize, usize))] = &[
        ([1, 2, 6, 6], [3, 2, 2, 2], (2, 2)),
        ([2, 3, 5, 7], [4, 3, 3, 3], (1, 1)),
        ([1, 1, 9, 9], [2, 1, 3, 3], (3, 3)),
    ];
    for (case, &(xs, ws, stride)) in cases.iter().enumerate() {
        let mut r = rng(100 + case as u64);
        let x = uniform(xs, &mut r, -1.0, 1.0);
        let w = uniform(ws, &mut r, -1.0, 1.0);
        let oh = conv2d_out_extent(xs[2], ws[2], stride.0, 1, 0, 0);
        let ow = conv2d_out_extent(xs[3], ws[3], stride.1, 1, 0, 0);
        let y = uniform([xs[0], ws[0], oh, ow], &mut r, -1.0, 1.0);
        assert_eq!(tconv2d_out_extent(oh, ws[2], stride.0), xs[2]);
        assert_eq!(tconv2d_out_extent(ow, ws[3], stride.1), xs[3]);

        let mut g: Graph<f64> = Graph::new();
        let (xi, wi, yi) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(y.clone()));
        let zb = g.constant(Tensor::zeros([1, ws[0], 1, 1]));
        let conv = g.conv2d(xi, wi, zb, stride, (1, 1), [0, 0, 0, 0]);
        let zb2 = g.constant(Tensor::zeros([1, ws[1], 1, 1]));
        let tconv = g.tconv2d(yi, wi, zb2, stride);

        let lhs: f64 = g.value(conv).data().iter().zip(y.data()).map(|(&a, &b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(g.value(tconv).data()).map(|(&a, &b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0), "case {case}: {lhs} vs {rhs}");
    }
}

#[test]
fn leaky_relu_values() {
    let x = Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
    let mut g: Graph<f64> = Graph::new();
    let xi = g.constant(x);
    let y = g.leaky_relu(xi, 0.2);
    assert_eq!(g.value(y).data(), &[-0.2, 0.0, 2.0]);

    let pos = Tensor::new([1, 1, 1, 3], vec![0.5, 1.0, 7.0]).unwrap();
    let pi = g.constant(pos.clone());
    let py = g.leaky_relu(pi, 0.37);
    assert_eq!(g.value(py).data(), pos.data());
}

#[test]
fn sample_linear_x_values() {
    let feat = Tensor::new([1, 1, 1, 3], vec![0.0, 10.0, 20.0]).unwrap();
    let mut g: Graph<f64> = Graph::new();
    let fi = g.constant(feat);
    let midpoint = g.constant(Tensor::new([1, 1, 1, 1], vec![0.5]).unwrap());
    let y = g.sample_linear_x(fi, midpoint);
    assert_eq!(g.value(y).data(), &[5.0]);

    let integers = g.constant(Tensor::new([1, 1, 1, 3], vec![2.0, 0.0, 1.0]).unwrap());
    let y2 = g.sample_linear_x(fi, integers);
    assert_eq!(g.value(y2).data(), &[20.0, 0.0, 10.0]);
}

#[test]
fn robust_penalty_matches_independent_evaluation() {
    for (alpha, c) in [(0.9, 0.1), (0.8, 0.5)] {
        assert_eq!(rho_reference(0.0, alpha, c), 0.0);
        let mut g: Graph<f64> = Graph::new();
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.02).collect();
        let xi = g.constant(Tensor::new([1, 1, 1, xs.len()], xs.clone()).unwrap());
        let y = g.robust_rho(xi, alpha, c);
        let got = g.value(y).data();
        let mut prev = -1.0;
        for (i, &x) in xs.iter().enumerate() {
            let expect = rho_reference(x, alpha, c);
            assert!((got[i] - expect).abs() < 1e-10, "rho({x}; {alpha}, {c}): {} vs {expect}", got[i]);
            assert!(got[i] >= prev, "penalty must be monotone nondecreasing for x >= 0");
            prev = got[i];
        }
        assert!((rho_reference(1.0, alpha, c) - got[50]).abs() < 1e-10, "xs[50] is exactly 1.0");
    }
}

#[test]
fn op_outputs_are_deterministic() {
    let run = |seed: u64| -> Vec<f64> {
        let mut r = rng(seed);
        let x = uniform([1, 3, 8, 8], &mut r, -1.0, 1.0);
        let w = uniform([4, 3, 3, 3], &mut r, -1.0, 1.0);
        let b = uniform([1, 4, 1, 1], &mut r, -0.5, 0.5);
        let mut g: Graph<f64> = Graph::new();
        let (xi, wi, bi) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.conv2d(xi, wi, bi, (1, 1), (1, 1), [1, 1, 1, 1]);
        g.value(y).data().to_vec()
    };
    let a = run(3);
    let b = run(3);
    assert_eq!(a, b, "identical seeds must give bit-identical outputs");
}
