use std::io::Write;

use rand::Rng;

use super::HarnessError;
use crate::autograd::{grad_check, GradCheckOptions, GradError, ParamStore, Tape, Tensor, Var, OPERATORS};
use crate::nets::{BasisKind, ModelConfig, NetError, SeparationModel, TdcnConfig};
use crate::signal::{seeded_rng, Waveform};
use crate::transforms::FrameSpec;

/// Signal length of the end-to-end checks: 32 frames of the tiny basis.
pub const TINY_SIGNAL_LEN: usize = 248;

/// The smallest network that still exercises every part of the model:
/// window 16, hop 8, one repeat of two blocks, two sources.
pub fn tiny_model_config(kind: BasisKind, iterative: bool) -> ModelConfig {
    let spec = FrameSpec::new(16, 8, crate::signal::DEFAULT_SAMPLE_RATE).expect("valid tiny frame spec");
    ModelConfig {
        network: TdcnConfig {
            n_basis: if kind == BasisKind::Stft { spec.n_bins() } else { 8 },
            bottleneck: 4,
            conv_channels: 8,
            skip_channels: 4,
            kernel: 3,
            blocks_per_repeat: 2,
            repeats: 1,
            n_sources: 2,
            basis_kind: kind,
            frame_spec: spec,
            use_feature_norm: true,
        },
        iterative,
    }
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, GradError>>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    op: OpFn,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape.to_vec()).expect("shape matches data")
}

fn operator_cases(seed: u64) -> Vec<OpCase> {
    let mut r = seeded_rng(seed);
    let mut t = |shape: &[usize]| uniform(&mut r, shape, -1.0, 1.0);
    let mut cases: Vec<OpCase> = Vec::new();
    let mut case = |name: &'static str, inputs: Vec<Tensor>, op: OpFn| cases.push(OpCase { name, inputs, op });
    case("matmul", vec![t(&[3, 4]), t(&[4, 5])], Box::new(|t, v| t.matmul(v[0], v[1])));
    case("conv1d", vec![t(&[2, 13]), t(&[3, 2, 4])], Box::new(|t, v| t.conv1d(v[0], v[1], 2, 2, 2, 1)));
    case(
        "depthwise_conv1d",
        vec![t(&[3, 11]), t(&[3, 3])],
        Box::new(|t, v| t.depthwise_conv1d(v[0], v[1], 2)),
    );
    case(
        "transposed_conv1d",
        vec![t(&[3, 6]), t(&[3, 2, 8])],
        Box::new(|t, v| t.transposed_conv1d(v[0], v[1], 4)),
    );
    case("add", vec![t(&[3, 4]), t(&[3, 4])], Box::new(|t, v| t.add(v[0], v[1])));
    case("sub", vec![t(&[3, 4]), t(&[3, 4])], Box::new(|t, v| t.sub(v[0], v[1])));
    case("mul", vec![t(&[3, 4]), t(&[3, 4])], Box::new(|t, v| t.mul(v[0], v[1])));
    case("add_row_bias", vec![t(&[3, 5]), t(&[3, 1])], Box::new(|t, v| t.add_row_bias(v[0], v[1])));
    case("scale_by_param", vec![t(&[3, 5]), t(&[1, 1])], Box::new(|t, v| t.scale_by_param(v[0], v[1])));
    case("scale_const", vec![t(&[2, 3])], Box::new(|t, v| Ok(t.scale_const(v[0], -1.7))));
    case("add_const", vec![t(&[2, 3])], Box::new(|t, v| Ok(t.add_const(v[0], 0.3))));
    case("relu", vec![t(&[4, 6])], Box::new(|t, v| Ok(t.relu(v[0]))));
    case("prelu", vec![t(&[4, 6]), Tensor::scalar(0.25)], Box::new(|t, v| t.prelu(v[0], v[1])));
    case("sigmoid", vec![t(&[4, 6])], Box::new(|t, v| Ok(t.sigmoid(v[0]))));
    let positive = |t: Tensor| {
        let shape = t.shape().to_vec();
        Tensor::new(t.into_data().into_iter().map(|x| 1.25 + 0.75 * x).collect(), shape).expect("same shape")
    };
    case("log10", vec![positive(t(&[3, 3]))], Box::new(|t, v| t.log10(v[0])));
    case("ln", vec![positive(t(&[3, 3]))], Box::new(|t, v| t.ln(v[0])));
    case("magnitude", vec![t(&[3, 4]), t(&[3, 4])], Box::new(|t, v| t.magnitude(v[0], v[1])));
    case(
        "feature_norm",
        vec![t(&[3, 7]), t(&[3, 1]), t(&[3, 1])],
        Box::new(|t, v| t.feature_norm(v[0], v[1], v[2], 1e-8)),
    );
    case("reduce_sum", vec![t(&[3, 7])], Box::new(|t, v| Ok(t.reduce_sum(v[0]))));
    case(
        "concat_rows",
        vec![t(&[2, 4]), t(&[3, 4])],
        Box::new(|t, v| t.concat_rows(&[v[0], v[1], v[0]])),
    );
    case("slice_rows", vec![t(&[5, 3])], Box::new(|t, v| t.slice_rows(v[0], 1, 3)));
    case("slice_cols", vec![t(&[3, 7])], Box::new(|t, v| t.slice_cols(v[0], 2, 4)));
    case("overlap_add", vec![t(&[6, 5])], Box::new(|t, v| t.overlap_add(v[0], 3, 3, 14)));
    case("frame", vec![t(&[1, 17])], Box::new(|t, v| t.frame(v[0], 6, 3, 3, 6)));
    cases
}

/// Worst relative error of `Σ c ⊙ op(inputs)` for a fixed random `c`.
fn check_case(case: &OpCase, seed: u64) -> Result<SuiteEntry, GradError> {
    let mut store = ParamStore::new();
    let ids = case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("{}.in{i}", case.name), t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out_shape = {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let out = (case.op)(&mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let weights = uniform(&mut seeded_rng(seed ^ 0x5eed), &out_shape, -1.0, 1.0);
    let opts = GradCheckOptions {
        max_coords: 512,
        seed,
        ..GradCheckOptions::default()
    };
    let report = grad_check(
        &store,
        |tape| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let out = (case.op)(tape, &vars)?;
            let c = tape.constant(weights.clone());
            let weighted = tape.mul(out, c)?;
            Ok(tape.reduce_sum(weighted))
        },
        &opts,
    )?;
    Ok(SuiteEntry {
        component: case.name.to_string(),
        max_rel_err: report.max_rel_err,
        probes: report.probes,
        excluded: report.excluded,
    })
}

fn tone(len: usize, freq_hz: f64) -> Waveform {
    let sr = crate::signal::DEFAULT_SAMPLE_RATE as f64;
    let x = (0..len)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / sr).sin())
        .collect();
    Waveform::new(x, crate::signal::DEFAULT_SAMPLE_RATE).expect("finite tone")
}

fn noise(len: usize, seed: u64) -> Waveform {
    let mut rng = seeded_rng(seed);
    let x = (0..len).map(|_| rng.gen_range(-0.4..0.4)).collect();
    Waveform::new(x, crate::signal::DEFAULT_SAMPLE_RATE).expect("finite noise")
}

/// Gradient check of the full PIT negative-SNR loss of a tiny model,
/// through features, masks, synthesis and mixture consistency.
pub fn check_end_to_end(kind: BasisKind, iterative: bool, seed: u64) -> Result<SuiteEntry, HarnessError> {
    let model = SeparationModel::init(&tiny_model_config(kind, iterative), seed)?;
    let refs = [tone(TINY_SIGNAL_LEN, 700.0), noise(TINY_SIGNAL_LEN, seed ^ 5)];
    let mixture = Waveform::new(
        refs[0].samples().iter().zip(refs[1].samples()).map(|(a, b)| a + b).collect(),
        refs[0].sample_rate_hz(),
    )?;
    let opts = GradCheckOptions {
        max_coords: 16,
        n_directions: 6,
        seed: 3,
        ..GradCheckOptions::default()
    };
    let report = grad_check(
        &model.store,
        |tape| match model.loss_graph(tape, &mixture, &refs, crate::objectives::DEFAULT_SNR_TAU) {
            Ok((loss, _)) => Ok(loss),
            Err(NetError::Grad(g)) => Err(g),
            Err(other) => Err(GradError::NonFinite(other.to_string())),
        },
        &opts,
    )?;
    let kind_name = match kind {
        BasisKind::Stft => "stft",
        BasisKind::Learned => "learned",
    };
    Ok(SuiteEntry {
        component: format!("end_to_end.{kind_name}{}", if iterative { ".iterative" } else { "" }),
        max_rel_err: report.max_rel_err,
        probes: report.probes,
        excluded: report.excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub component: String,
    pub max_rel_err: f64,
    pub probes: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub threshold: f64,
}

impl GradSuiteReport {
    /// Every component was probed at least once and stayed under the threshold.
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.probes > 0 && e.max_rel_err < self.threshold)
    }

    pub fn worst(&self) -> Option<&SuiteEntry> {
        self.entries.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component", "max_rel_err", "probes", "excluded", "status"])?;
        for e in &self.entries {
            let ok = e.probes > 0 && e.max_rel_err < self.threshold;
            w.write_record([
                e.component.clone(),
                format!("{:.3e}", e.max_rel_err),
                e.probes.to_string(),
                e.excluded.to_string(),
                if ok { "pass" } else { "FAIL" }.to_string(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Checks every tape operator once, then the end-to-end loss for both
/// bases with one and two stages.
pub fn grad_check_suite(threshold: f64, seed: u64) -> Result<GradSuiteReport, HarnessError> {
    let mut entries = operator_cases(seed)
        .iter()
        .map(|c| check_case(c, seed))
        .collect::<Result<Vec<_>, _>>()?;
    for kind in [BasisKind::Stft, BasisKind::Learned] {
        for iterative in [false, true] {
            entries.push(check_end_to_end(kind, iterative, 21 + seed)?);
        }
    }
    debug_assert_eq!(entries.len(), OPERATORS.len() + 4);
    Ok(GradSuiteReport { entries, threshold })
}
