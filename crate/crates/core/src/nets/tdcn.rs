use rand::Rng;

use super::{NetError, TdcnConfig};
use crate::autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::masking::MaskSet;
use crate::signal::{seeded_rng, SeedRng};

pub const FEATURE_NORM_EPS: f64 = 1e-8;
const PRELU_INIT: f64 = 0.25;
/// `0.9^l` rounded once to the nearest double. Repeated multiplication
/// rounds at every step and `powi` may be evaluated either way depending on
/// optimization, so the exact decimal `9^l · 10^-l` is built in base 10^9
/// and parsed.
fn residual_decay(l: usize) -> f64 {
    const BASE: u64 = 1_000_000_000;
    let mut limbs: Vec<u64> = vec![1];
    for _ in 0..l {
        let mut carry = 0;
        for limb in limbs.iter_mut() {
            let v = *limb * 9 + carry;
            *limb = v % BASE;
            carry = v / BASE;
        }
        if carry > 0 {
            limbs.push(carry);
        }
    }
    let mut digits = limbs.last().expect("at least one limb").to_string();
    for limb in limbs.iter().rev().skip(1) {
        digits.push_str(&format!("{limb:09}"));
    }
    format!("{digits}e-{l}").parse().expect("decimal literal")
}

/// `scale · (W x + b)` with a learnable scalar scale.
#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: ParamId,
    scale: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    dilation: usize,
    dense_in: Dense,
    prelu_in: ParamId,
    norm_in: Norm,
    depthwise: ParamId,
    depthwise_bias: ParamId,
    prelu_mid: ParamId,
    norm_mid: Norm,
    residual: Dense,
    skip: Dense,
}

#[derive(Debug, Clone)]
struct RepeatLink {
    from: usize,
    to: usize,
    dense: Dense,
}

/// Parameter handles of one TDCN++ stage inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct TdcnLayout {
    in_dim: usize,
    input: Dense,
    blocks: Vec<Block>,
    links: Vec<RepeatLink>,
    head_prelu: ParamId,
    head: Dense,
}

fn uniform(rng: &mut SeedRng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-bound..bound)).collect(), shape.to_vec()).expect("shape")
}

struct Registrar<'a> {
    store: &'a mut ParamStore,
    prefix: &'a str,
    rng: SeedRng,
}

impl Registrar<'_> {
    fn add(&mut self, name: &str, t: Tensor) -> Result<ParamId, NetError> {
        Ok(self.store.add(format!("{}{name}", self.prefix), t)?)
    }

    fn dense(&mut self, name: &str, inp: usize, out: usize, scale: f64) -> Result<Dense, NetError> {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = uniform(&mut self.rng, &[out, inp], bound);
        Ok(Dense {
            w: self.add(&format!("{name}.w"), w)?,
            b: self.add(&format!("{name}.b"), Tensor::zeros(&[out, 1]))?,
            scale: self.add(&format!("{name}.scale"), Tensor::scalar(scale))?,
        })
    }

    fn norm(&mut self, name: &str, channels: usize) -> Result<Norm, NetError> {
        Ok(Norm {
            gamma: self.add(&format!("{name}.gamma"), Tensor::new(vec![1.0; channels], vec![channels, 1])?)?,
            beta: self.add(&format!("{name}.beta"), Tensor::zeros(&[channels, 1]))?,
        })
    }

    fn prelu(&mut self, name: &str) -> Result<ParamId, NetError> {
        self.add(&format!("{name}.slope"), Tensor::scalar(PRELU_INIT))
    }
}

impl TdcnLayout {
    /// Registers a freshly initialized stage reading `in_dim` feature rows.
    /// Parameter names are prefixed with `prefix`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        config: &TdcnConfig,
        in_dim: usize,
        seed: u64,
    ) -> Result<Self, NetError> {
        config.validate()?;
        let (b, h, sc, p) = (config.bottleneck, config.conv_channels, config.skip_channels, config.kernel);
        let mut reg = Registrar {
            store,
            prefix,
            rng: seeded_rng(seed),
        };
        let input = reg.dense("input", in_dim, b, 1.0)?;
        let mut blocks = Vec::with_capacity(config.n_blocks());
        for r in 0..config.repeats {
            for x in 0..config.blocks_per_repeat {
                let l = r * config.blocks_per_repeat + x;
                let name = format!("block{l}");
                let dense_in = reg.dense(&format!("{name}.dense_in"), b, h, 1.0)?;
                let prelu_in = reg.prelu(&format!("{name}.prelu_in"))?;
                let norm_in = reg.norm(&format!("{name}.norm_in"), h)?;
                let dw = uniform(&mut reg.rng, &[h, p], 1.0 / (p as f64).sqrt());
                let depthwise = reg.add(&format!("{name}.depthwise.w"), dw)?;
                let depthwise_bias = reg.add(&format!("{name}.depthwise.b"), Tensor::zeros(&[h, 1]))?;
                let prelu_mid = reg.prelu(&format!("{name}.prelu_mid"))?;
                let norm_mid = reg.norm(&format!("{name}.norm_mid"), h)?;
                let residual = reg.dense(&format!("{name}.residual"), h, b, residual_decay(l))?;
                let skip = reg.dense(&format!("{name}.skip"), h, sc, 1.0)?;
                blocks.push(Block {
                    dilation: 1 << x,
                    dense_in,
                    prelu_in,
                    norm_in,
                    depthwise,
                    depthwise_bias,
                    prelu_mid,
                    norm_mid,
                    residual,
                    skip,
                });
            }
        }
        let mut links = Vec::new();
        for to in 1..config.repeats {
            for from in 0..to {
                let dense = reg.dense(&format!("link{from}to{to}"), b, b, 1.0)?;
                links.push(RepeatLink { from, to, dense });
            }
        }
        let head_prelu = reg.prelu("head.prelu")?;
        let head = reg.dense("head", sc, config.n_sources * config.n_basis, 1.0)?;
        Ok(Self {
            in_dim,
            input,
            blocks,
            links,
            head_prelu,
            head,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Current residual-path scales γ₂, one per block in global order.
    pub fn residual_scales(&self, store: &ParamStore) -> Vec<f64> {
        self.blocks.iter().map(|b| store.get(b.residual.scale).item()).collect()
    }

    /// Records the stage on `tape`: `features` (`in_dim × T`) to sigmoid
    /// masks stacked source-major (`K·N × T`).
    pub fn graph(&self, tape: &mut Tape, config: &TdcnConfig, features: Var) -> Result<Var, NetError> {
        let rows = tape.shape(features)[0];
        if rows != self.in_dim {
            return Err(NetError::FeatureDim {
                expected: self.in_dim,
                got: rows,
            });
        }
        let mut x = dense(tape, &self.input, features)?;
        let mut repeat_inputs = vec![x];
        let mut skip_sum: Option<Var> = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let r = i / config.blocks_per_repeat;
            if i > 0 && i % config.blocks_per_repeat == 0 {
                for link in self.links.iter().filter(|l| l.to == r) {
                    let proj = dense(tape, &link.dense, repeat_inputs[link.from])?;
                    x = tape.add(x, proj)?;
                }
                repeat_inputs.push(x);
            }
            let (res, skip) = block_graph(tape, block, config.use_feature_norm, x)?;
            x = tape.add(x, res)?;
            skip_sum = Some(match skip_sum {
                Some(s) => tape.add(s, skip)?,
                None => skip,
            });
        }
        let slope = tape.param(self.head_prelu);
        let s = tape.prelu(skip_sum.expect("at least one block"), slope)?;
        let logits = dense(tape, &self.head, s)?;
        Ok(tape.sigmoid(logits))
    }
}

fn dense(tape: &mut Tape, d: &Dense, x: Var) -> Result<Var, NetError> {
    let w = tape.param(d.w);
    let b = tape.param(d.b);
    let s = tape.param(d.scale);
    let y = tape.matmul(w, x)?;
    let y = tape.add_row_bias(y, b)?;
    Ok(tape.scale_by_param(y, s)?)
}

fn norm(tape: &mut Tape, n: &Norm, x: Var) -> Result<Var, NetError> {
    let g = tape.param(n.gamma);
    let b = tape.param(n.beta);
    Ok(tape.feature_norm(x, g, b, FEATURE_NORM_EPS)?)
}

fn block_graph(tape: &mut Tape, blk: &Block, use_norm: bool, x: Var) -> Result<(Var, Var), NetError> {
    let mut h = dense(tape, &blk.dense_in, x)?;
    let a = tape.param(blk.prelu_in);
    h = tape.prelu(h, a)?;
    if use_norm {
        h = norm(tape, &blk.norm_in, h)?;
    }
    let w = tape.param(blk.depthwise);
    let wb = tape.param(blk.depthwise_bias);
    h = tape.depthwise_conv1d(h, w, blk.dilation)?;
    h = tape.add_row_bias(h, wb)?;
    let a = tape.param(blk.prelu_mid);
    h = tape.prelu(h, a)?;
    if use_norm {
        h = norm(tape, &blk.norm_mid, h)?;
    }
    Ok((dense(tape, &blk.residual, h)?, dense(tape, &blk.skip, h)?))
}

/// A standalone single-stage network.
#[derive(Debug, Clone)]
pub struct TdcnParams {
    pub config: TdcnConfig,
    pub store: ParamStore,
    pub layout: TdcnLayout,
}

/// Deterministic initialization: dense and depthwise weights uniform in
/// `±1/sqrt(fan_in)`, biases and norm shifts 0, norm gains 1, PReLU slopes
/// 0.25, every dense scale 1 except the residual scale of block L, `0.9^L`.
pub fn tdcn_pp_init(config: &TdcnConfig, seed: u64) -> Result<TdcnParams, NetError> {
    let mut store = ParamStore::new();
    let layout = TdcnLayout::register(&mut store, "", config, config.n_basis, seed)?;
    Ok(TdcnParams {
        config: config.clone(),
        store,
        layout,
    })
}

/// Masks for `features` given channel-major (`N × n_frames`).
pub fn tdcn_pp_forward(params: &TdcnParams, features: &[f64], n_frames: usize) -> Result<MaskSet, NetError> {
    let n = params.layout.in_dim;
    if n_frames == 0 || features.len() != n * n_frames {
        return Err(NetError::FeatureDim {
            expected: n * n_frames.max(1),
            got: features.len(),
        });
    }
    let mut tape = Tape::new(&params.store);
    let x = tape.constant(Tensor::matrix(n, n_frames, features.to_vec())?);
    let masks = params.layout.graph(&mut tape, &params.config, x)?;
    masks_from_rows(tape.value(masks).data(), params.config.n_sources, params.config.n_basis, n_frames)
}

/// Source-major `K·N × T` rows to a frame-major [`MaskSet`].
pub(crate) fn masks_from_rows(rows: &[f64], k: usize, n: usize, t: usize) -> Result<MaskSet, NetError> {
    let mut values = vec![0.0; k * t * n];
    for s in 0..k {
        for bin in 0..n {
            for f in 0..t {
                values[(s * t + f) * n + bin] = rows[(s * n + bin) * t + f];
            }
        }
    }
    Ok(MaskSet::new(values, k, t, n)?)
}

/// Per-channel normalization over frames of a `channels × frames` array:
/// `gamma[c] (x - mean_c) / sqrt(var_c + 1e-8) + beta[c]`.
pub fn feature_norm(x: &[f64], channels: usize, gamma: &[f64], beta: &[f64]) -> Result<Vec<f64>, NetError> {
    if channels == 0 || x.is_empty() || x.len() % channels != 0 || gamma.len() != channels || beta.len() != channels {
        return Err(NetError::FeatureDim {
            expected: channels,
            got: gamma.len().min(beta.len()),
        });
    }
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let frames = x.len() / channels;
    let xv = tape.constant(Tensor::matrix(channels, frames, x.to_vec())?);
    let g = tape.constant(Tensor::matrix(channels, 1, gamma.to_vec())?);
    let b = tape.constant(Tensor::matrix(channels, 1, beta.to_vec())?);
    let y = tape.feature_norm(xv, g, b, FEATURE_NORM_EPS)?;
    Ok(tape.value(y).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::BasisKind;
    use crate::transforms::FrameSpec;

    fn tiny(norm: bool) -> TdcnConfig {
        TdcnConfig {
            n_basis: 8,
            bottleneck: 4,
            conv_channels: 8,
            skip_channels: 4,
            kernel: 3,
            blocks_per_repeat: 2,
            repeats: 2,
            n_sources: 2,
            basis_kind: BasisKind::Learned,
            frame_spec: FrameSpec::new(16, 8, 16_000).unwrap(),
            use_feature_norm: norm,
        }
    }

    #[test]
    fn residual_scales_follow_decay() {
        let mut cfg = tiny(true);
        cfg.repeats = 3;
        cfg.blocks_per_repeat = 8;
        let p = tdcn_pp_init(&cfg, 1).unwrap();
        let scales = p.layout.residual_scales(&p.store);
        assert_eq!(scales.len(), 24);
        for (l, s) in scales.iter().enumerate() {
            let exact: f64 = format!("{}e-{l}", 9u128.pow(l as u32)).parse().unwrap();
            assert_eq!(*s, exact);
        }
        assert_eq!(scales[4], 0.6561);
        assert_eq!(scales[0], 1.0);
        assert!((scales[23] - 0.0886).abs() < 5e-5);
        for (_, name, t) in p.store.iter() {
            if name.ends_with(".scale") && !name.contains("residual") {
                assert_eq!(t.item(), 1.0, "{name}");
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = tdcn_pp_init(&tiny(true), 5).unwrap();
        let b = tdcn_pp_init(&tiny(true), 5).unwrap();
        let c = tdcn_pp_init(&tiny(true), 6).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn skip_links_cover_every_earlier_repeat() {
        let mut cfg = tiny(true);
        cfg.repeats = 3;
        let p = tdcn_pp_init(&cfg, 0).unwrap();
        let links: Vec<(usize, usize)> = p.layout.links.iter().map(|l| (l.from, l.to)).collect();
        assert_eq!(links, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn masks_have_expected_shape_and_bounds() {
        let cfg = tiny(true);
        let p = tdcn_pp_init(&cfg, 2).unwrap();
        let mut rng = seeded_rng(3);
        for frames in [1usize, 5, 40] {
            let feats: Vec<f64> = (0..8 * frames).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let m = tdcn_pp_forward(&p, &feats, frames).unwrap();
            assert_eq!(m.n_sources(), 2);
            assert_eq!(m.shape(), (frames, 8));
            assert!(m.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(matches!(
            tdcn_pp_forward(&p, &[0.0; 9], 1),
            Err(NetError::FeatureDim { .. })
        ));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = tiny(true);
        cfg.kernel = 4;
        assert!(tdcn_pp_init(&cfg, 0).is_err());
        let mut cfg = tiny(true);
        cfg.bottleneck = 0;
        assert!(tdcn_pp_init(&cfg, 0).is_err());
        let mut cfg = tiny(true);
        cfg.basis_kind = BasisKind::Stft;
        assert!(tdcn_pp_init(&cfg, 0).is_err());
        cfg.n_basis = 9;
        assert!(tdcn_pp_init(&cfg, 0).is_ok());
    }

    #[test]
    fn feature_norm_examples() {
        let x = [2.0, 2.0, 2.0, 1.0, 2.0, 6.0];
        let y = feature_norm(&x, 2, &[3.0, 1.0], &[0.5, 0.0]).unwrap();
        assert!(y[..3].iter().all(|&v| v == 0.5));
        let row = &y[3..];
        let mean = row.iter().sum::<f64>() / 3.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-8);
    }
}
