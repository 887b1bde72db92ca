//! Checks against independently computed reference solutions.

mod common;

use common::consistency_qp;
use nalgebra::DMatrix;
use rand::Rng;
use sepkit::masking::mixture_consistency;
use sepkit::nets::{feature_norm, FEATURE_NORM_EPS};
use sepkit::signal::{seeded_rng, Waveform};
use sepkit::transforms::{learned_analysis, learned_synthesis, FrameSpec, LearnedBasis};

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, 16_000).unwrap()
}

#[test]
fn pseudo_inverse_basis_reconstructs() {
    let spec = FrameSpec::new(16, 8, 16_000).unwrap();
    let (w, n) = (spec.window_len, 2 * spec.window_len);
    let mut rng = seeded_rng(1);
    // Nonnegative analysis rows and a nonnegative signal keep the ReLU inactive.
    let a = DMatrix::from_fn(n, w, |_, _| rng.gen_range(0.0..1.0));
    let pinv = a.clone().pseudo_inverse(1e-12).unwrap();
    // Every sample lies under two frames at hop = window/2, so each frame
    // contributes half of the least-squares reconstruction.
    let synthesis: Vec<f64> = (0..n).flat_map(|row| (0..w).map(move |c| (row, c))).map(|(row, c)| 0.5 * pinv[(c, row)]).collect();
    let analysis: Vec<f64> = (0..n).flat_map(|row| (0..w).map(move |c| (row, c))).map(|(row, c)| a[(row, c)]).collect();
    let basis = LearnedBasis::from_matrices(analysis, synthesis, n, spec).unwrap();
    for len in [1, 8, 100, 333] {
        let x = wave((0..len).map(|_| rng.gen_range(0.0..1.0)).collect());
        let coeffs = learned_analysis(&x, &basis).unwrap();
        let y = learned_synthesis(&coeffs, &basis, len).unwrap();
        let err = x.samples().iter().zip(y.samples()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "len {len}: {err}");
    }
}

#[test]
fn consistency_is_the_least_squares_projection() {
    let mut rng = seeded_rng(2);
    for _ in 0..100 {
        let k = rng.gen_range(1..=4);
        let l = rng.gen_range(1..=12);
        let est: Vec<Vec<f64>> = (0..k).map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let x: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let out = mixture_consistency(&est.iter().cloned().map(wave).collect::<Vec<_>>(), &wave(x.clone())).unwrap();
        let oracle = consistency_qp(&est, &x);
        for (o, q) in out.iter().zip(&oracle) {
            for (a, b) in o.samples().iter().zip(q) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn feature_norm_matches_two_pass_statistics() {
    let mut rng = seeded_rng(3);
    let (c, t) = (5, 37);
    let x: Vec<f64> = (0..c * t).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = feature_norm(&x, c, &gamma, &beta).unwrap();
    for ch in 0..c {
        let row = &x[ch * t..(ch + 1) * t];
        let mut mean = 0.0;
        for v in row {
            mean += v;
        }
        mean /= t as f64;
        let mut var = 0.0;
        for v in row {
            var += (v - mean) * (v - mean);
        }
        var /= t as f64;
        for f in 0..t {
            let want = gamma[ch] * (row[f] - mean) / (var + FEATURE_NORM_EPS).sqrt() + beta[ch];
            assert!((y[ch * t + f] - want).abs() < 1e-12);
        }
    }
}
