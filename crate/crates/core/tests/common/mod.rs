//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Solves `min Σ_k ‖s'_k − s_k‖²` subject to `Σ_k s'_k = x` through its KKT system.
pub fn consistency_qp(estimates: &[Vec<f64>], x: &[f64]) -> Vec<Vec<f64>> {
    let (k, l) = (estimates.len(), x.len());
    let n = k * l;
    let mut kkt = DMatrix::zeros(n + l, n + l);
    let mut rhs = DVector::zeros(n + l);
    for j in 0..k {
        for i in 0..l {
            let v = j * l + i;
            kkt[(v, v)] = 2.0;
            kkt[(v, n + i)] = 1.0;
            kkt[(n + i, v)] = 1.0;
            rhs[v] = 2.0 * estimates[j][i];
        }
    }
    for i in 0..l {
        rhs[n + i] = x[i];
    }
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
    (0..k).map(|j| (0..l).map(|i| sol[j * l + i]).collect()).collect()
}

/// Every ordering of `0..k`, built by insertion.
pub fn all_orderings(k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for item in 0..k {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..=p.len()).map(move |at| {
                    let mut q = p.clone();
                    q.insert(at, item);
                    q
                })
            })
            .collect();
    }
    out
}

/// SI-SDR from the projection formula, written out directly.
pub fn si_sdr_direct(s: &[f64], est: &[f64]) -> f64 {
    let dot: f64 = s.iter().zip(est).map(|(a, b)| a * b).sum();
    let ss: f64 = s.iter().map(|a| a * a).sum();
    let alpha = dot / ss;
    let target: f64 = s.iter().map(|a| (alpha * a).powi(2)).sum();
    let noise: f64 = s.iter().zip(est).map(|(a, b)| (alpha * a - b).powi(2)).sum();
    10.0 * (target / noise).log10()
}
