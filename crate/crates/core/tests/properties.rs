use proptest::prelude::*;
use sepkit::masking::mixture_consistency;
use sepkit::objectives::si_sdr;
use sepkit::signal::Waveform;
use sepkit::transforms::{istft, stft, FrameSpec};

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, 16_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stft_round_trip(x in prop::collection::vec(-1.0f64..1.0, 1..2000), w in prop::sample::select(vec![2.5, 5.0, 10.0, 25.0, 50.0])) {
        let spec = FrameSpec::from_window_ms(w, 16_000).unwrap();
        let x = wave(x);
        let y = istft(&stft(&x, &spec).unwrap(), x.len()).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn si_sdr_ignores_estimate_scale(
        pair in (2usize..64).prop_flat_map(|n| (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n))),
        c in prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
    ) {
        let (s, e) = pair;
        prop_assume!(s.iter().any(|v| v.abs() > 1e-3));
        let base = si_sdr(&s, &e).unwrap();
        let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
        prop_assume!(base.is_finite());
        prop_assert!((si_sdr(&s, &scaled).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn consistency_sums_to_mixture(
        k in 1usize..5,
        cols in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 5), 1..40),
    ) {
        let l = cols.len();
        let est: Vec<Waveform> = (0..k).map(|j| wave(cols.iter().map(|c| c[j]).collect())).collect();
        let x = wave(cols.iter().map(|c| c[4]).collect());
        let out = mixture_consistency(&est, &x).unwrap();
        for i in 0..l {
            let xi = x.samples()[i];
            let s: f64 = out.iter().map(|w| w.samples()[i]).sum();
            let size = xi.abs() + out.iter().map(|w| w.samples()[i].abs()).sum::<f64>();
            prop_assert!((s - xi).abs() <= 0.5 * k as f64 * f64::EPSILON * size);
        }
        prop_assert_eq!(mixture_consistency(&out, &x).unwrap(), out);
    }
}
