use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, NetError, SeparationModel};
use crate::autograd::{adam_step, AdamConfig, AdamState, Grads, Tape};
use crate::objectives::DEFAULT_SNR_TAU;
use crate::signal::{derive_seed, seeded_rng, Waveform};

/// Crops whose quietest reference has a mean square below this are redrawn.
const MIN_CROP_POWER: f64 = 1e-8;
const CROP_ATTEMPTS: usize = 32;

#[derive(Debug, Clone)]
pub struct TrainExample {
    pub mixture: Waveform,
    pub references: Vec<Waveform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Random training crops of this many seconds; 0 trains on whole clips.
    pub crop_s: f64,
    pub snr_tau: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 2,
            crop_s: 0.5,
            snr_tau: DEFAULT_SNR_TAU,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    /// Mean loss over the batch.
    pub loss: f64,
    /// `[example][stage]` chosen permutation.
    pub permutations: Vec<Vec<Vec<usize>>>,
    pub wall_time_s: f64,
}

impl TrainLogRow {
    /// Compact permutation field: stages joined by `|`, examples by `;`,
    /// e.g. `01|10;10|10`.
    pub fn permutation_field(&self) -> String {
        self.permutations
            .iter()
            .map(|stages| {
                stages
                    .iter()
                    .map(|p| p.iter().map(|i| i.to_string()).collect::<String>())
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SeparationModel,
    pub log: Vec<TrainLogRow>,
}

impl TrainOutcome {
    /// CSV with header `step,loss,permutation,wall_time_s`.
    pub fn write_log_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,loss,permutation,wall_time_s")?;
        for row in &self.log {
            writeln!(
                out,
                "{},{:.6},{},{:.3}",
                row.step,
                row.loss,
                row.permutation_field(),
                row.wall_time_s
            )?;
        }
        Ok(())
    }
}

fn crop(example: &TrainExample, crop_len: usize, rng: &mut impl Rng) -> Result<TrainExample, NetError> {
    let len = example.mixture.len();
    let loud = |refs: &[Waveform], n: usize| refs.iter().all(|r| r.energy() / n as f64 >= MIN_CROP_POWER);
    if crop_len > 0 && crop_len < len {
        for _ in 0..CROP_ATTEMPTS {
            let start = rng.gen_range(0..=len - crop_len) as isize;
            let refs: Vec<Waveform> = example.references.iter().map(|r| r.segment(start, crop_len)).collect();
            if loud(&refs, crop_len) {
                return Ok(TrainExample {
                    mixture: example.mixture.segment(start, crop_len),
                    references: refs,
                });
            }
        }
    }
    if !loud(&example.references, len) {
        return Err(NetError::Data("training example has a silent reference".into()));
    }
    Ok(example.clone())
}

/// Trains a freshly initialized model with Adam on PIT negative SNR.
/// Each step draws `batch_size` examples with replacement, takes a random
/// crop of each, and averages the per-example gradients. The run is fully
/// determined by `opts.seed`.
pub fn train(config: &ModelConfig, opts: &TrainConfig, data: &[TrainExample]) -> Result<TrainOutcome, NetError> {
    if data.is_empty() {
        return Err(NetError::Data("no training examples".into()));
    }
    if opts.steps == 0 || opts.batch_size == 0 {
        return Err(NetError::Config("steps and batch_size must be positive".into()));
    }
    let k = config.network.n_sources;
    if let Some(bad) = data.iter().position(|e| e.references.len() != k) {
        return Err(NetError::Data(format!("example {bad} has {} references, expected {k}", data[bad].references.len())));
    }
    let mut model = SeparationModel::init(config, derive_seed(opts.seed, &[0]))?;
    let mut adam = AdamState::new(&model.store, opts.adam);
    let mut rng = seeded_rng(derive_seed(opts.seed, &[1]));
    let crop_len = (opts.crop_s * config.network.frame_spec.sample_rate_hz as f64).round() as usize;
    let started = Instant::now();
    let mut log = Vec::with_capacity(opts.steps);

    for step in 1..=opts.steps {
        let batch: Vec<TrainExample> = (0..opts.batch_size)
            .map(|_| crop(&data[rng.gen_range(0..data.len())], crop_len, &mut rng))
            .collect::<Result<_, _>>()?;
        let mut grads = Grads::zeros_like(&model.store);
        let mut loss = 0.0;
        let mut permutations = Vec::with_capacity(batch.len());
        for ex in &batch {
            let mut tape = Tape::new(&model.store);
            let (l, perms) = model.loss_graph(&mut tape, &ex.mixture, &ex.references, opts.snr_tau)?;
            let value = tape.value(l).item();
            if !value.is_finite() {
                return Err(NetError::NonFiniteLoss { step });
            }
            grads.accumulate(&tape.backward(l)?, 1.0 / batch.len() as f64);
            loss += value / batch.len() as f64;
            permutations.push(perms);
        }
        if !grads.global_norm().is_finite() {
            return Err(NetError::NonFiniteLoss { step });
        }
        adam_step(&mut model.store, &grads, &mut adam)?;
        let row = TrainLogRow {
            step,
            loss,
            permutations,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if step % 100 == 0 || step == 1 {
            log::info!("step {step}: loss {loss:.3} ({:.1} s)", row.wall_time_s);
        }
        log.push(row);
    }
    Ok(TrainOutcome { model, log })
}
