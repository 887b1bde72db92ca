//! Central finite-difference check of tape gradients.

use rand::Rng;

use super::{GradError, Grads, ParamId, ParamStore, Tape, Var};
use crate::signal::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub fd_step: f64,
    /// Parameters with at most this many entries are probed coordinate by
    /// coordinate; larger ones along random unit directions.
    pub max_coords: usize,
    pub n_directions: usize,
    /// A probe is discarded when it moves a kink input (a relu or prelu
    /// pre-activation) across zero or to within `kink_margin` times its
    /// displacement of zero.
    pub kink_margin: f64,
    /// Lower bound on the denominator of the relative error, per unit of
    /// loss: the bound is `floor · max(1, |L|)`. Derivatives smaller than
    /// that are compared absolutely. Central differences of a loss of
    /// magnitude |L| carry roundoff of a few `ε · |L| / fd_step`, so the bound
    /// has to grow with |L|.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-5,
            max_coords: 32,
            n_directions: 8,
            kink_margin: 10.0,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter holding the worst probe.
    pub worst_param: Option<String>,
    pub probes: usize,
    /// Probes discarded by the kink rule.
    pub excluded: usize,
}

struct Eval {
    loss: f64,
    kinks: Vec<f64>,
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<Eval, GradError>
where
    F: Fn(&mut Tape) -> Result<Var, GradError>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    let loss = tape.value(out).item();
    if !loss.is_finite() {
        return Err(GradError::NonFinite("loss during gradient check".into()));
    }
    Ok(Eval {
        loss,
        kinks: tape.kink_inputs(),
    })
}

/// True when the probe changes the sign of a kink input, or leaves one
/// within `margin` times its own displacement of zero. For a probe acting
/// directly on a kink input (displacement `fd_step`) this is the plain rule
/// `|x| > margin · fd_step`.
fn near_kink(base: &[f64], plus: &[f64], minus: &[f64], margin: f64) -> bool {
    if base.len() != plus.len() || base.len() != minus.len() {
        return true;
    }
    base.iter().zip(plus.iter().zip(minus)).any(|(&a, (&p, &m))| {
        let moved = (p - a).abs().max((m - a).abs());
        (a > 0.0) != (p > 0.0) || (a > 0.0) != (m > 0.0) || (moved > 0.0 && a.abs() <= margin * moved)
    })
}

/// Compares the analytic gradient of `f` against central differences and
/// returns the worst relative error `|a - n| / max(|a|, |n|, floor · max(1, |L|))`.
pub fn grad_check<F>(store: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport, GradError>
where
    F: Fn(&mut Tape) -> Result<Var, GradError>,
{
    let (base_loss, base_kinks, grads) = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        let loss = tape.value(out).item();
        if !loss.is_finite() {
            return Err(GradError::NonFinite("loss during gradient check".into()));
        }
        let grads = tape.backward(out)?;
        (loss, tape.kink_inputs(), grads)
    };
    let floor = opts.floor * base_loss.abs().max(1.0);
    if grads_non_finite(&grads) {
        return Err(GradError::NonFinite("analytic gradient".into()));
    }

    let h = opts.fd_step;
    let mut rng = seeded_rng(opts.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        probes: 0,
        excluded: 0,
    };

    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let directions: Vec<Vec<f64>> = if n <= opts.max_coords {
            (0..n)
                .map(|i| {
                    let mut d = vec![0.0; n];
                    d[i] = 1.0;
                    d
                })
                .collect()
        } else {
            (0..opts.n_directions)
                .map(|_| {
                    let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                    d.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        };
        let g = grads.get(id).data();
        for d in directions {
            let analytic: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let orig = store.get(id).data().to_vec();
            let shift = |sign: f64, work: &mut ParamStore| {
                work.get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .zip(orig.iter().zip(&d))
                    .for_each(|(w, (o, di))| *w = o + sign * h * di);
            };
            shift(1.0, &mut work);
            let plus = evaluate(&work, &f)?;
            shift(-1.0, &mut work);
            let minus = evaluate(&work, &f)?;
            shift(0.0, &mut work);

            if near_kink(&base_kinks, &plus.kinks, &minus.kinks, opts.kink_margin) {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let err = (analytic - numeric).abs() / denom;
            report.probes += 1;
            if err > report.max_rel_err || report.worst_param.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst_param = Some(store.name(id).to_string());
            }
        }
    }
    Ok(report)
}

fn grads_non_finite(grads: &Grads) -> bool {
    !grads.global_norm().is_finite()
}
