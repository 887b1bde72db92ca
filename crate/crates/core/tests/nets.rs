use rand::Rng;
use sepkit::autograd::{grad_check, GradCheckOptions, Tape};
use sepkit::nets::{
    itdcn_pp_forward, load_model, save_model, separate, tdcn_pp_forward, tdcn_pp_init, train, BasisKind, ModelConfig,
    NetError, SeparationModel, TdcnConfig, TrainConfig, TrainExample,
};
use sepkit::signal::{seeded_rng, Waveform};
use sepkit::transforms::FrameSpec;

const SR: u32 = 16_000;

fn tiny(kind: BasisKind) -> TdcnConfig {
    let spec = FrameSpec::new(16, 8, SR).unwrap();
    TdcnConfig {
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
    }
}

fn model(kind: BasisKind, iterative: bool, seed: u64) -> SeparationModel {
    SeparationModel::init(
        &ModelConfig {
            network: tiny(kind),
            iterative,
        },
        seed,
    )
    .unwrap()
}

fn noise(len: usize, seed: u64, amp: f64) -> Waveform {
    let mut rng = seeded_rng(seed);
    Waveform::new((0..len).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(), SR).unwrap()
}

fn tone(len: usize, freq: f64) -> Waveform {
    Waveform::new(
        (0..len)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin())
            .collect(),
        SR,
    )
    .unwrap()
}

fn mix(refs: &[Waveform]) -> Waveform {
    let len = refs[0].len();
    Waveform::new((0..len).map(|i| refs.iter().map(|r| r.samples()[i]).sum()).collect(), SR).unwrap()
}

// 248 samples frame into 32 frames at window 16, hop 8.
const TINY_LEN: usize = 248;

#[test]
fn tiny_config_sees_32_frames() {
    assert_eq!(tiny(BasisKind::Learned).frame_spec.n_frames(TINY_LEN), 32);
}

#[test]
fn tape_and_plain_transforms_agree() {
    let refs = [tone(TINY_LEN, 440.0), noise(TINY_LEN, 1, 0.3)];
    let x = mix(&refs);
    for kind in [BasisKind::Stft, BasisKind::Learned] {
        for iterative in [false, true] {
            let m = model(kind, iterative, 7);
            let plain = m.separate_stages(&x).unwrap();
            let mut tape = Tape::new(&m.store);
            let graph = m.graph(&mut tape, &x).unwrap();
            assert_eq!(plain.len(), graph.len());
            for (ps, gs) in plain.iter().zip(&graph) {
                for (p, &g) in ps.iter().zip(gs) {
                    let gv = tape.value(g).data();
                    let diff = p.samples().iter().zip(gv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(diff < 1e-9, "{kind:?} iterative={iterative}: {diff}");
                }
            }
        }
    }
}

#[test]
fn outputs_sum_to_mixture_and_keep_length() {
    for kind in [BasisKind::Stft, BasisKind::Learned] {
        let m = model(kind, true, 3);
        let x = noise(301, 9, 0.8);
        let stages = itdcn_pp_forward(&m, &x).unwrap();
        assert_eq!(stages.len(), 2);
        for ests in &stages {
            assert_eq!(ests.len(), 2);
            for i in 0..x.len() {
                let s: f64 = ests.iter().map(|e| e.samples()[i]).sum();
                assert!((s - x.samples()[i]).abs() < 1e-9);
            }
            assert!(ests.iter().all(|e| e.len() == x.len()));
        }
        assert_eq!(separate(&m, &x).unwrap(), stages[1]);
    }
    let single = model(BasisKind::Stft, false, 0);
    assert!(matches!(itdcn_pp_forward(&single, &noise(50, 0, 1.0)), Err(NetError::Config(_))));
}

#[test]
fn untrained_models_give_finite_outputs() {
    for seed in 0..100u64 {
        let kind = if seed % 2 == 0 { BasisKind::Stft } else { BasisKind::Learned };
        let m = model(kind, seed % 3 == 0, seed);
        let x = noise(100 + seed as usize, seed + 1000, 1.0);
        for e in separate(&m, &x).unwrap() {
            assert!(e.samples().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn stage_two_reads_mixture_and_estimates() {
    let m = model(BasisKind::Learned, true, 0);
    assert_eq!(m.stage(0).in_dim(), 8);
    assert_eq!(m.stage(1).in_dim(), 3 * 8);
}

#[test]
fn receptive_field_without_normalization() {
    let mut cfg = tiny(BasisKind::Learned);
    cfg.repeats = 1;
    cfg.blocks_per_repeat = 4;
    cfg.use_feature_norm = false;
    let p = tdcn_pp_init(&cfg, 11).unwrap();
    let (n, frames, t0) = (cfg.n_basis, 100, 50);
    let mut rng = seeded_rng(4);
    let base: Vec<f64> = (0..n * frames).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let masks = tdcn_pp_forward(&p, &base, frames).unwrap();
    let column = |m: &sepkit::masking::MaskSet| -> Vec<f64> {
        (0..cfg.n_sources)
            .flat_map(|k| m.mask(k)[t0 * n..(t0 + 1) * n].to_vec())
            .collect()
    };
    let reference = column(&masks);
    // Dilations 1, 2, 4, 8 with three centred taps reach 15 frames per side.
    for dist in [-49isize, -31, -16, 16, 31, 49] {
        let mut x = base.clone();
        let f = (t0 as isize + dist) as usize;
        for c in 0..n {
            x[c * frames + f] += 5.0;
        }
        let m = tdcn_pp_forward(&p, &x, frames).unwrap();
        assert_eq!(column(&m), reference, "distance {dist}");
    }
    for dist in [-15isize, 0, 15] {
        let mut x = base.clone();
        let f = (t0 as isize + dist) as usize;
        for c in 0..n {
            x[c * frames + f] += 5.0;
        }
        let m = tdcn_pp_forward(&p, &x, frames).unwrap();
        assert_ne!(column(&m), reference, "distance {dist}");
    }
}

fn end_to_end_check(kind: BasisKind, iterative: bool) -> f64 {
    let m = model(kind, iterative, 21);
    let refs = [tone(TINY_LEN, 700.0), noise(TINY_LEN, 5, 0.4)];
    let x = mix(&refs);
    let opts = GradCheckOptions {
        max_coords: 16,
        n_directions: 6,
        seed: 3,
        ..GradCheckOptions::default()
    };
    let report = grad_check(
        &m.store,
        |tape| Ok(m.loss_graph(tape, &x, &refs, 1e-8).map_err(|e| match e {
            NetError::Grad(g) => g,
            other => panic!("{other}"),
        })?.0),
        &opts,
    )
    .unwrap();
    assert!(report.probes > report.excluded, "{report:?}");
    assert!(report.max_rel_err < 1e-4, "{kind:?} iterative={iterative}: {report:?}");
    report.max_rel_err
}

#[test]
fn end_to_end_gradients_learned() {
    end_to_end_check(BasisKind::Learned, false);
}

#[test]
fn end_to_end_gradients_stft() {
    end_to_end_check(BasisKind::Stft, false);
}

#[test]
fn end_to_end_gradients_iterative() {
    end_to_end_check(BasisKind::Learned, true);
    end_to_end_check(BasisKind::Stft, true);
}

#[test]
fn relabeling_references_leaves_loss_and_gradients() {
    for kind in [BasisKind::Stft, BasisKind::Learned] {
        let m = model(kind, true, 2);
        let refs = vec![tone(TINY_LEN, 300.0), noise(TINY_LEN, 8, 0.2)];
        let swapped = vec![refs[1].clone(), refs[0].clone()];
        let x = mix(&refs);
        let run = |r: &[Waveform]| {
            let mut tape = Tape::new(&m.store);
            let (l, perms) = m.loss_graph(&mut tape, &x, r, 1e-8).unwrap();
            (tape.value(l).item(), tape.backward(l).unwrap(), perms)
        };
        let (l1, g1, p1) = run(&refs);
        let (l2, g2, p2) = run(&swapped);
        assert_eq!(l1, l2);
        assert_eq!(g1.global_norm(), g2.global_norm());
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.iter().map(|&j| 1 - j).collect::<Vec<_>>(), *b);
        }
    }
}

#[test]
fn checkpoints_restore_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let m = model(BasisKind::Learned, true, 17);
    save_model(&path, &m).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.store, m.store);
    let x = noise(200, 3, 0.5);
    assert_eq!(separate(&back, &x).unwrap(), separate(&m, &x).unwrap());

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_model(&path).is_err());
}

fn toy_data(n: usize) -> Vec<TrainExample> {
    (0..n)
        .map(|i| {
            let refs = vec![tone(800, 300.0 + 50.0 * i as f64), noise(800, i as u64, 0.3)];
            TrainExample {
                mixture: mix(&refs),
                references: refs,
            }
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_logged() {
    let cfg = ModelConfig {
        network: tiny(BasisKind::Stft),
        iterative: true,
    };
    let opts = TrainConfig {
        steps: 5,
        crop_s: 0.02,
        seed: 4,
        ..TrainConfig::default()
    };
    let data = toy_data(4);
    let a = train(&cfg, &opts, &data).unwrap();
    let b = train(&cfg, &opts, &data).unwrap();
    let losses = |o: &sepkit::nets::TrainOutcome| o.log.iter().map(|r| r.loss).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.model.store, b.model.store);
    assert_eq!(a.log.len(), 5);
    assert_eq!(a.log[0].permutations.len(), 2);
    assert_eq!(a.log[0].permutations[0].len(), 2);
    let mut csv = Vec::new();
    a.write_log_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("step,loss,permutation,wall_time_s\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn training_rejects_bad_inputs() {
    let cfg = ModelConfig {
        network: tiny(BasisKind::Learned),
        iterative: false,
    };
    assert!(train(&cfg, &TrainConfig::default(), &[]).is_err());
    let mut silent = toy_data(1);
    silent[0].references[1] = Waveform::zeros(800, SR);
    let opts = TrainConfig {
        steps: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&cfg, &opts, &silent), Err(NetError::Data(_))));
}
