//! Evaluation metrics and training losses.
//!
//! SI-SDR follows the scale-invariant definition with the optimal reference
//! gain `α = <s, ŝ> / ‖s‖²`; exact and orthogonal estimates map to ±∞ rather
//! than being smoothed. The training loss (negative SNR) instead carries a
//! small relative stabilizer so that it stays finite and differentiable.

use thiserror::Error;

/// Default relative stabilizer for [`neg_snr_loss`].
pub const DEFAULT_SNR_TAU: f64 = 1e-8;

/// Largest source count accepted by the exhaustive permutation search.
pub const MAX_PIT_SOURCES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference has zero energy")]
    ZeroReference,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("expected {expected} signals, got {got}")]
    SourceCount { expected: usize, got: usize },
    #[error("permutation search supports 1..={max} sources, got {0}", max = MAX_PIT_SOURCES)]
    TooManySources(usize),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Length(a.len(), b.len()));
    }
    Ok(())
}

/// Scale-invariant SDR in dB. `+∞` when the estimate is an exact rescaling of
/// the reference, `-∞` when it is orthogonal to it.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64, MetricError> {
    check_lengths(reference, estimate)?;
    let ref_energy = dot(reference, reference);
    if ref_energy == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let alpha = dot(reference, estimate) / ref_energy;
    let signal = alpha * alpha * ref_energy;
    let error: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(s, e)| (alpha * s - e).powi(2))
        .sum();
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    if signal == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (signal / error).log10())
}

/// `si_sdr(s, ŝ) - si_sdr(s, x)`.
pub fn si_sdr_improvement(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64, MetricError> {
    let est = si_sdr(reference, estimate)?;
    let mix = si_sdr(reference, mixture)?;
    if est == mix {
        // also covers ∞ - ∞ when the estimate is the mixture itself
        return Ok(0.0);
    }
    Ok(est - mix)
}

/// `-10 log10(Σy² / (Σ(y-ŷ)² + τΣy²))`, bounded below by `10 log10 τ`.
pub fn neg_snr_loss(reference: &[f64], estimate: &[f64], tau: f64) -> Result<f64, MetricError> {
    check_lengths(reference, estimate)?;
    let energy = dot(reference, reference);
    if energy == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let error: f64 = reference.iter().zip(estimate).map(|(y, e)| (y - e).powi(2)).sum();
    Ok(-10.0 * (energy / (error + tau * energy)).log10())
}

/// Outcome of a permutation-invariant loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PitResult {
    pub loss: f64,
    /// `permutation[i]` is the reference matched to estimate `i`.
    pub permutation: Vec<usize>,
    /// `per_pair_losses[i][j]` is the loss of estimate `i` against reference `j`.
    pub per_pair_losses: Vec<Vec<f64>>,
}

/// All permutations of `0..k` in lexicographic order, identity first.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..k).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

/// Minimizes `Σ_i matrix[i][perm[i]]` over all permutations. Ties keep the
/// lexicographically first permutation.
pub fn best_assignment(matrix: &[Vec<f64>]) -> Result<(Vec<usize>, f64), MetricError> {
    let k = matrix.len();
    if k == 0 || k > MAX_PIT_SOURCES {
        return Err(MetricError::TooManySources(k));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in permutations(k) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| matrix[i][j]).sum();
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            best = Some((perm, total));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Permutation-invariant loss: the K×K pairwise matrix is computed once and
/// the best assignment is found by exhaustive search.
pub fn pit_loss<R, E, F>(references: &[R], estimates: &[E], mut pairwise: F) -> Result<PitResult, MetricError>
where
    R: AsRef<[f64]>,
    E: AsRef<[f64]>,
    F: FnMut(&[f64], &[f64]) -> Result<f64, MetricError>,
{
    let k = references.len();
    if estimates.len() != k {
        return Err(MetricError::SourceCount {
            expected: k,
            got: estimates.len(),
        });
    }
    if k == 0 || k > MAX_PIT_SOURCES {
        return Err(MetricError::TooManySources(k));
    }
    let per_pair_losses = estimates
        .iter()
        .map(|e| {
            references
                .iter()
                .map(|r| pairwise(r.as_ref(), e.as_ref()))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (permutation, loss) = best_assignment(&per_pair_losses)?;
    Ok(PitResult {
        loss,
        permutation,
        per_pair_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_sdr_sentinels_and_scalar_case() {
        let s = [0.3, -0.2, 0.9];
        assert_eq!(si_sdr(&s, &s).unwrap(), f64::INFINITY);
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&s, &doubled).unwrap(), f64::INFINITY);
        assert!((si_sdr(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.0).abs() < 1e-12);
        assert_eq!(si_sdr(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn si_sdr_errors() {
        assert_eq!(si_sdr(&[0.0, 0.0], &[1.0, 1.0]), Err(MetricError::ZeroReference));
        assert_eq!(si_sdr(&[1.0], &[1.0, 1.0]), Err(MetricError::Length(1, 2)));
    }

    #[test]
    fn improvement_cases() {
        let s = [1.0, 0.0];
        let x = [1.0, 1.0];
        assert_eq!(si_sdr_improvement(&s, &x, &x).unwrap(), 0.0);
        assert_eq!(si_sdr_improvement(&s, &s, &x).unwrap(), f64::INFINITY);
        let expected = 10.0 * (1.0f64 / 0.25).log10();
        assert!((si_sdr_improvement(&s, &[1.0, 0.5], &x).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn neg_snr_values() {
        let y = [1.0, 0.0, 0.0];
        assert!(neg_snr_loss(&y, &[0.0; 3], DEFAULT_SNR_TAU).unwrap().abs() < 1e-6);
        let floor = neg_snr_loss(&y, &y, DEFAULT_SNR_TAU).unwrap();
        assert!((floor - 10.0 * DEFAULT_SNR_TAU.log10()).abs() < 1e-9);
        assert!((floor + 80.0).abs() < 1e-9);
        assert_eq!(neg_snr_loss(&[0.0], &[1.0], DEFAULT_SNR_TAU), Err(MetricError::ZeroReference));
    }

    #[test]
    fn neg_snr_decreases_along_line_to_reference() {
        let y = [0.4, -0.7, 0.2, 0.9];
        let mut prev = f64::INFINITY;
        for step in 0..=50 {
            let a = step as f64 / 50.0;
            let est: Vec<f64> = y.iter().map(|v| a * v).collect();
            let l = neg_snr_loss(&y, &est, DEFAULT_SNR_TAU).unwrap();
            assert!(l < prev, "step {step}: {l} !< {prev}");
            prev = l;
        }
    }

    #[test]
    fn permutation_enumeration() {
        assert_eq!(permutations(1), vec![vec![0]]);
        let p3 = permutations(3);
        assert_eq!(p3.len(), 6);
        assert_eq!(p3[0], vec![0, 1, 2]);
        assert_eq!(p3[5], vec![2, 1, 0]);
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn pit_single_and_reversed() {
        let refs = [vec![1.0, 0.0, 0.5]];
        let ests = [vec![0.8, 0.1, 0.4]];
        let r = pit_loss(&refs, &ests, |a, b| neg_snr_loss(a, b, DEFAULT_SNR_TAU)).unwrap();
        assert_eq!(r.permutation, vec![0]);
        assert_eq!(r.loss, neg_snr_loss(&refs[0], &ests[0], DEFAULT_SNR_TAU).unwrap());

        let refs = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.2]];
        let ests = [vec![0.1, 0.9, 0.2], vec![0.9, 0.0, 0.1]];
        let pairwise = |a: &[f64], b: &[f64]| neg_snr_loss(a, b, DEFAULT_SNR_TAU);
        let r = pit_loss(&refs, &ests, pairwise).unwrap();
        assert_eq!(r.permutation, vec![1, 0]);
        let aligned = pit_loss(&refs, &[ests[1].clone(), ests[0].clone()], pairwise).unwrap();
        assert_eq!(aligned.permutation, vec![0, 1]);
        assert_eq!(r.loss, aligned.loss);
    }

    #[test]
    fn pit_rejects_bad_counts() {
        let a = vec![vec![1.0]; 2];
        let b = vec![vec![1.0]; 3];
        let f = |x: &[f64], y: &[f64]| neg_snr_loss(x, y, DEFAULT_SNR_TAU);
        assert!(matches!(pit_loss(&a, &b, f), Err(MetricError::SourceCount { .. })));
        let five = vec![vec![1.0]; 5];
        assert_eq!(pit_loss(&five, &five, f), Err(MetricError::TooManySources(5)));
    }
}
