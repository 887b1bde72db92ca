use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tdcn::masks_from_rows;
use super::{BasisKind, NetError, TdcnConfig, TdcnLayout};
use crate::autograd::{load_checkpoint, save_checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::masking::{apply_masks, mixture_consistency, MaskSet};
use crate::objectives::{best_assignment, MetricError};
use crate::signal::{derive_seed, Waveform};
use crate::transforms::{
    istft, learned_analysis, learned_synthesis, log_magnitude_features, stft, synthesis_gain, CoeffFrames,
    LearnedBasis, StftMatrices,
};

const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub network: TdcnConfig,
    /// Two stages (iTDCN++): the second sees the mixture and the first
    /// stage's estimates and re-masks the mixture.
    pub iterative: bool,
}

impl ModelConfig {
    pub fn n_stages(&self) -> usize {
        if self.iterative {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone)]
struct BasisParams {
    analysis: ParamId,
    synthesis: ParamId,
}

/// Parameters and wiring of a complete separation system.
#[derive(Debug, Clone)]
pub struct SeparationModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    stages: Vec<TdcnLayout>,
    basis: Option<BasisParams>,
    stft: Option<StftMatrices>,
}

/// Mixture-side tensors shared by every stage of one forward pass.
enum Front {
    Stft { re: Var, im: Var, features: Var, inv_gain: Var },
    Learned { coeffs: Var },
}

impl SeparationModel {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, NetError> {
        let net = &config.network;
        net.validate()?;
        let mut store = ParamStore::new();
        let basis = match net.basis_kind {
            BasisKind::Learned => {
                let lb = LearnedBasis::init(net.n_basis, net.frame_spec, derive_seed(seed, &[0]));
                let shape = vec![net.n_basis, 1, net.frame_spec.window_len];
                Some(BasisParams {
                    analysis: store.add("basis.analysis", Tensor::new(lb.analysis, shape.clone())?)?,
                    synthesis: store.add("basis.synthesis", Tensor::new(lb.synthesis, shape)?)?,
                })
            }
            BasisKind::Stft => None,
        };
        let mut stages = Vec::new();
        for s in 0..config.n_stages() {
            let in_dim = if s == 0 { net.n_basis } else { (net.n_sources + 1) * net.n_basis };
            let prefix = format!("stage{}.", s + 1);
            stages.push(TdcnLayout::register(
                &mut store,
                &prefix,
                net,
                in_dim,
                derive_seed(seed, &[1, s as u64]),
            )?);
        }
        let stft = match net.basis_kind {
            BasisKind::Stft => Some(StftMatrices::new(&net.frame_spec)?),
            BasisKind::Learned => None,
        };
        Ok(Self {
            config: config.clone(),
            store,
            stages,
            basis,
            stft,
        })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, s: usize) -> &TdcnLayout {
        &self.stages[s]
    }

    /// The current learned basis, if the model uses one.
    pub fn learned_basis(&self) -> Option<LearnedBasis> {
        let b = self.basis.as_ref()?;
        let net = &self.config.network;
        LearnedBasis::from_matrices(
            self.store.get(b.analysis).data().to_vec(),
            self.store.get(b.synthesis).data().to_vec(),
            net.n_basis,
            net.frame_spec,
        )
        .ok()
    }

    fn check_input(&self, mixture: &Waveform) -> Result<(), NetError> {
        let spec = &self.config.network.frame_spec;
        if mixture.sample_rate_hz() != spec.sample_rate_hz {
            return Err(NetError::Data(format!(
                "mixture is {} Hz, model expects {} Hz",
                mixture.sample_rate_hz(),
                spec.sample_rate_hz
            )));
        }
        if mixture.is_empty() {
            return Err(NetError::Data("empty mixture".into()));
        }
        Ok(())
    }

    // ---- differentiable path --------------------------------------------------------------

    fn front(&self, tape: &mut Tape, x: Var, mixture: &Waveform) -> Result<Front, NetError> {
        let net = &self.config.network;
        match &self.basis {
            Some(b) => {
                let a = tape.param(b.analysis);
                let coeffs = self.learned_coeffs(tape, x, a, mixture.len())?;
                Ok(Front::Learned { coeffs })
            }
            None => {
                let coeffs = stft(mixture, &net.frame_spec)?;
                let (n, t) = (coeffs.n_bins, coeffs.n_frames);
                let data = coeffs.as_complex().expect("stft output is complex");
                let mut re = vec![0.0; n * t];
                let mut im = vec![0.0; n * t];
                for f in 0..t {
                    for k in 0..n {
                        re[k * t + f] = data[f * n + k].re;
                        im[k * t + f] = data[f * n + k].im;
                    }
                }
                let features = log_magnitude_features(&coeffs);
                let inv_gain = synthesis_gain(&net.frame_spec, mixture.len())?
                    .into_iter()
                    .map(|g| if g > f64::EPSILON { 1.0 / g } else { 1.0 })
                    .collect();
                Ok(Front::Stft {
                    re: tape.constant(Tensor::matrix(n, t, re)?),
                    im: tape.constant(Tensor::matrix(n, t, im)?),
                    features: tape.constant(Tensor::matrix(n, t, features)?),
                    inv_gain: tape.constant(Tensor::row(inv_gain)),
                })
            }
        }
    }

    fn learned_coeffs(&self, tape: &mut Tape, signal: Var, analysis: Var, len: usize) -> Result<Var, NetError> {
        let spec = &self.config.network.frame_spec;
        let pre = spec.pre_pad();
        let post = spec.padded_len(len) - len - pre;
        let c = tape.conv1d(signal, analysis, spec.hop, 1, pre, post)?;
        Ok(tape.relu(c))
    }

    /// Network input features of a waveform already on the tape.
    fn analyze(&self, tape: &mut Tape, signal: Var, len: usize) -> Result<Var, NetError> {
        let spec = &self.config.network.frame_spec;
        match (&self.basis, &self.stft) {
            (Some(b), _) => {
                let a = tape.param(b.analysis);
                self.learned_coeffs(tape, signal, a, len)
            }
            (None, Some(m)) => {
                let frames = tape.frame(signal, spec.window_len, spec.hop, spec.pre_pad(), spec.n_frames(len))?;
                let are = tape.constant(Tensor::matrix(m.n_bins, m.window_len, m.analysis_re.clone())?);
                let aim = tape.constant(Tensor::matrix(m.n_bins, m.window_len, m.analysis_im.clone())?);
                let re = tape.matmul(are, frames)?;
                let im = tape.matmul(aim, frames)?;
                let mag = tape.magnitude(re, im)?;
                let shifted = tape.add_const(mag, LOG_FLOOR);
                Ok(tape.ln(shifted)?)
            }
            (None, None) => unreachable!("STFT models carry their matrices"),
        }
    }

    fn synthesize(&self, tape: &mut Tape, front: &Front, mask: Var, len: usize) -> Result<Var, NetError> {
        let spec = &self.config.network.frame_spec;
        match front {
            Front::Learned { coeffs } => {
                let b = self.basis.as_ref().expect("learned front has a basis");
                let c = tape.mul(mask, *coeffs)?;
                let s = tape.param(b.synthesis);
                let full = tape.transposed_conv1d(c, s, spec.hop)?;
                Ok(tape.slice_cols(full, spec.pre_pad(), len)?)
            }
            Front::Stft { re, im, inv_gain, .. } => {
                let m = self.stft.as_ref().expect("STFT matrices");
                let mre = tape.mul(mask, *re)?;
                let mim = tape.mul(mask, *im)?;
                let sre = tape.constant(Tensor::matrix(m.window_len, m.n_bins, m.synthesis_re.clone())?);
                let sim = tape.constant(Tensor::matrix(m.window_len, m.n_bins, m.synthesis_im.clone())?);
                let fr = tape.matmul(sre, mre)?;
                let fi = tape.matmul(sim, mim)?;
                let frames = tape.add(fr, fi)?;
                let y = tape.overlap_add(frames, spec.hop, spec.pre_pad(), len)?;
                Ok(tape.mul(y, *inv_gain)?)
            }
        }
    }

    /// Records the full system on `tape`. Returns, per stage, the K
    /// mixture-consistent estimates as `1 × len` rows.
    pub fn graph(&self, tape: &mut Tape, mixture: &Waveform) -> Result<Vec<Vec<Var>>, NetError> {
        self.check_input(mixture)?;
        let net = &self.config.network;
        let (n, k, len) = (net.n_basis, net.n_sources, mixture.len());
        let x = tape.constant(Tensor::row(mixture.samples().to_vec()));
        let front = self.front(tape, x, mixture)?;
        let mix_features = match &front {
            Front::Learned { coeffs } => *coeffs,
            Front::Stft { features, .. } => *features,
        };
        let mut outputs: Vec<Vec<Var>> = Vec::new();
        for (s, layout) in self.stages.iter().enumerate() {
            let features = if s == 0 {
                mix_features
            } else {
                let mut parts = vec![mix_features];
                for &e in outputs.last().expect("previous stage") {
                    parts.push(self.analyze(tape, e, len)?);
                }
                tape.concat_rows(&parts)?
            };
            let masks = layout.graph(tape, net, features)?;
            let mut ests = Vec::with_capacity(k);
            for src in 0..k {
                let m = tape.slice_rows(masks, src * n, n)?;
                ests.push(self.synthesize(tape, &front, m, len)?);
            }
            outputs.push(consistency_graph(tape, &ests, x)?);
        }
        Ok(outputs)
    }

    /// PIT negative-SNR loss summed over stages, with the permutation
    /// chosen independently per stage. `permutation[i]` is the reference
    /// matched to estimate `i`.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        mixture: &Waveform,
        references: &[Waveform],
        tau: f64,
    ) -> Result<(Var, Vec<Vec<usize>>), NetError> {
        let k = self.config.network.n_sources;
        if references.len() != k {
            return Err(NetError::Data(format!("{} references for a {k}-source model", references.len())));
        }
        if let Some(r) = references.iter().find(|r| r.len() != mixture.len()) {
            return Err(NetError::Data(format!("reference of {} samples for a {}-sample mixture", r.len(), mixture.len())));
        }
        let stages = self.graph(tape, mixture)?;
        let refs: Vec<(Var, f64)> = references
            .iter()
            .map(|r| (tape.constant(Tensor::row(r.samples().to_vec())), r.energy()))
            .collect();
        let mut total: Option<Var> = None;
        let mut perms = Vec::new();
        for ests in &stages {
            let mut pair_vars = Vec::with_capacity(k);
            let mut pair_vals = Vec::with_capacity(k);
            for &e in ests {
                let mut row_v = Vec::with_capacity(k);
                let mut row_x = Vec::with_capacity(k);
                for &(r, energy) in &refs {
                    let l = neg_snr_graph(tape, r, energy, e, tau)?;
                    row_x.push(tape.value(l).item());
                    row_v.push(l);
                }
                pair_vars.push(row_v);
                pair_vals.push(row_x);
            }
            let (perm, _) = best_assignment(&pair_vals)?;
            let mut stage_loss = pair_vars[0][perm[0]];
            for (i, &j) in perm.iter().enumerate().skip(1) {
                stage_loss = tape.add(stage_loss, pair_vars[i][j])?;
            }
            total = Some(match total {
                Some(t) => tape.add(t, stage_loss)?,
                None => stage_loss,
            });
            perms.push(perm);
        }
        Ok((total.expect("at least one stage"), perms))
    }

    // ---- inference path --------------------------------------------------------------------

    fn coefficients(&self, signal: &Waveform) -> Result<CoeffFrames, NetError> {
        Ok(match self.learned_basis() {
            Some(basis) => learned_analysis(signal, &basis)?,
            None => stft(signal, &self.config.network.frame_spec)?,
        })
    }

    fn features_of(&self, coeffs: &CoeffFrames) -> Vec<f64> {
        match coeffs.as_real() {
            Some(real) => {
                let (t, n) = (coeffs.n_frames, coeffs.n_bins);
                let mut out = vec![0.0; n * t];
                for f in 0..t {
                    for b in 0..n {
                        out[b * t + f] = real[f * n + b];
                    }
                }
                out
            }
            None => log_magnitude_features(coeffs),
        }
    }

    fn stage_masks(&self, s: usize, features: Vec<f64>, n_frames: usize) -> Result<MaskSet, NetError> {
        let layout = &self.stages[s];
        let net = &self.config.network;
        let mut tape = Tape::new(&self.store);
        let x = tape.constant(Tensor::matrix(layout.in_dim(), n_frames, features)?);
        let masks = layout.graph(&mut tape, net, x)?;
        masks_from_rows(tape.value(masks).data(), net.n_sources, net.n_basis, n_frames)
    }

    fn resynthesize(&self, coeffs: &CoeffFrames, len: usize) -> Result<Waveform, NetError> {
        Ok(match self.learned_basis() {
            Some(basis) => learned_synthesis(coeffs, &basis, len)?,
            None => istft(coeffs, len)?,
        })
    }

    /// Per-stage mixture-consistent estimates, computed with the plain
    /// transforms rather than on a tape.
    pub fn separate_stages(&self, mixture: &Waveform) -> Result<Vec<Vec<Waveform>>, NetError> {
        self.check_input(mixture)?;
        let mix_coeffs = self.coefficients(mixture)?;
        let t = mix_coeffs.n_frames;
        let mix_features = self.features_of(&mix_coeffs);
        let mut outputs: Vec<Vec<Waveform>> = Vec::new();
        for s in 0..self.stages.len() {
            let mut features = mix_features.clone();
            if let Some(prev) = outputs.last() {
                for e in prev {
                    features.extend(self.features_of(&self.coefficients(e)?));
                }
            }
            let masks = self.stage_masks(s, features, t)?;
            let ests = apply_masks(&masks, &mix_coeffs)?
                .iter()
                .map(|c| self.resynthesize(c, mixture.len()))
                .collect::<Result<Vec<_>, _>>()?;
            outputs.push(mixture_consistency(&ests, mixture)?);
        }
        Ok(outputs)
    }
}

/// `s'_k = s_k + (x - Σ s) / K` on the tape.
fn consistency_graph(tape: &mut Tape, ests: &[Var], mixture: Var) -> Result<Vec<Var>, NetError> {
    let mut sum = ests[0];
    for &e in &ests[1..] {
        sum = tape.add(sum, e)?;
    }
    let residual = tape.sub(mixture, sum)?;
    let share = tape.scale_const(residual, 1.0 / ests.len() as f64);
    ests.iter().map(|&e| Ok(tape.add(e, share)?)).collect()
}

/// `10 log10(‖y - ŷ‖² + τ‖y‖²) - 10 log10 ‖y‖²`.
fn neg_snr_graph(tape: &mut Tape, reference: Var, energy: f64, estimate: Var, tau: f64) -> Result<Var, NetError> {
    if energy <= 0.0 {
        return Err(MetricError::ZeroReference.into());
    }
    let d = tape.sub(reference, estimate)?;
    let sq = tape.mul(d, d)?;
    let err = tape.reduce_sum(sq);
    let stab = tape.add_const(err, tau * energy);
    let lg = tape.log10(stab)?;
    let db = tape.scale_const(lg, 10.0);
    Ok(tape.add_const(db, -10.0 * energy.log10()))
}

/// Final-stage estimates of a single- or two-stage model.
pub fn separate(model: &SeparationModel, mixture: &Waveform) -> Result<Vec<Waveform>, NetError> {
    Ok(model.separate_stages(mixture)?.pop().expect("at least one stage"))
}

/// Both iterations of an iTDCN++ model: `[stage-1 estimates, stage-2 estimates]`.
pub fn itdcn_pp_forward(model: &SeparationModel, mixture: &Waveform) -> Result<Vec<Vec<Waveform>>, NetError> {
    if !model.config.iterative {
        return Err(NetError::Config("model has a single stage".into()));
    }
    model.separate_stages(mixture)
}

/// Writes parameters with the model config (TOML) as checkpoint metadata.
pub fn save_model(path: &Path, model: &SeparationModel) -> Result<(), NetError> {
    let meta = toml::to_string(&model.config).map_err(|e| NetError::Config(e.to_string()))?;
    Ok(save_checkpoint(path, &model.store, &meta)?)
}

pub fn load_model(path: &Path) -> Result<SeparationModel, NetError> {
    let ckpt = load_checkpoint(path)?;
    let config: ModelConfig =
        toml::from_str(&ckpt.metadata).map_err(|e| NetError::CheckpointMismatch(format!("config: {e}")))?;
    let mut model = SeparationModel::init(&config, 0)?;
    if ckpt.params.len() != model.store.len() {
        return Err(NetError::CheckpointMismatch(format!(
            "{} tensors stored, model has {}",
            ckpt.params.len(),
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.name(id).to_string();
        let stored = ckpt
            .params
            .id(&name)
            .map(|i| ckpt.params.get(i))
            .ok_or_else(|| NetError::CheckpointMismatch(format!("missing tensor {name}")))?;
        let slot = model.store.get_mut(id);
        if stored.shape() != slot.shape() {
            return Err(NetError::CheckpointMismatch(format!(
                "{name}: stored {:?}, model {:?}",
                stored.shape(),
                slot.shape()
            )));
        }
        *slot = stored.clone();
    }
    Ok(model)
}
