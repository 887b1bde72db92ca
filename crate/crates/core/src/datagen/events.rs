use super::DataError;
use crate::signal::Waveform;

pub const DEFAULT_RMS_WINDOW_S: f64 = 0.05;

/// A crossing only counts after the RMS has dipped this fraction below the
/// threshold, so that ripple on a steady sound does not register as onsets.
const REARM_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EventList {
    pub source_file: String,
    /// Strictly increasing sample indices; never empty.
    pub event_times: Vec<usize>,
    /// The file is all zeros; its single event is the t=0 fallback.
    pub silent: bool,
}

/// Onsets where the local RMS (windows of `rms_window_s`, hop half a window)
/// rises from below the file-wide mean RMS to at or above it. The detector
/// re-arms once the RMS falls under `0.9 ×` the mean. Files without such a
/// crossing get a single event at t=0.
pub fn detect_events(source_file: &str, waveform: &Waveform, rms_window_s: f64) -> Result<EventList, DataError> {
    if waveform.is_empty() {
        return Err(DataError::EmptyWaveform);
    }
    if !(rms_window_s > 0.0 && rms_window_s.is_finite()) {
        return Err(DataError::Param(format!("rms window {rms_window_s} s must be positive")));
    }
    let x = waveform.samples();
    let win = ((rms_window_s * waveform.sample_rate_hz() as f64).round() as usize).clamp(1, x.len());
    let hop = (win / 2).max(1);
    let starts: Vec<usize> = (0..=(x.len() - win)).step_by(hop).collect();
    let rms: Vec<f64> = starts
        .iter()
        .map(|&s| (x[s..s + win].iter().map(|v| v * v).sum::<f64>() / win as f64).sqrt())
        .collect();
    let threshold = rms.iter().sum::<f64>() / rms.len() as f64;
    let silent = x.iter().all(|&v| v == 0.0);
    let mut event_times: Vec<usize> = if silent {
        Vec::new()
    } else {
        let mut armed = false;
        let mut found = Vec::new();
        for (&r, &s) in rms.iter().zip(&starts) {
            if r < (1.0 - REARM_FRACTION) * threshold {
                armed = true;
            } else if armed && r >= threshold {
                found.push(s);
                armed = false;
            }
        }
        found
    };
    if event_times.is_empty() {
        event_times.push(0);
    }
    Ok(EventList {
        source_file: source_file.to_string(),
        event_times,
        silent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    fn tone(len: usize) -> Vec<f64> {
        (0..len).map(|i| 0.5 * (i as f64 * 0.2).sin()).collect()
    }

    #[test]
    fn onset_after_silence() {
        let mut x = vec![0.0; 16_000];
        x.extend(tone(16_000));
        let ev = detect_events("a", &wave(x), 0.05).unwrap();
        assert_eq!(ev.event_times.len(), 1);
        assert!((ev.event_times[0] as f64 - 16_000.0).abs() <= 800.0, "{:?}", ev);
        assert!(!ev.silent);
    }

    #[test]
    fn steady_tone_falls_back_to_zero() {
        let ev = detect_events("b", &wave(tone(32_000)), 0.05).unwrap();
        assert_eq!(ev.event_times, vec![0]);
        assert!(!ev.silent);
    }

    #[test]
    fn silent_file_is_flagged() {
        let ev = detect_events("c", &wave(vec![0.0; 5000]), 0.05).unwrap();
        assert_eq!(ev.event_times, vec![0]);
        assert!(ev.silent);
    }

    #[test]
    fn several_bursts_give_increasing_events() {
        let mut x = Vec::new();
        for _ in 0..3 {
            x.extend(vec![0.0; 8000]);
            x.extend(tone(4000));
        }
        let ev = detect_events("d", &wave(x), 0.05).unwrap();
        assert_eq!(ev.event_times.len(), 3);
        assert!(ev.event_times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn errors() {
        assert!(matches!(detect_events("e", &wave(vec![1.0]), 0.0), Err(DataError::Param(_))));
        assert!(matches!(
            detect_events("e", &Waveform::zeros(0, 16_000), 0.05),
            Err(DataError::EmptyWaveform)
        ));
    }
}
