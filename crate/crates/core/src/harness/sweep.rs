use std::io::Write;

use super::eval::{oracle_eval, EvalReport};
use super::HarnessError;
use crate::datagen::MixtureExample;
use crate::transforms::FrameSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub window_ms: f64,
    /// The cell's report, or the error that stopped it.
    pub outcome: Result<EvalReport, String>,
}

impl SweepCell {
    pub fn mean_si_sdri(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.mean_si_sdri)
    }
}

/// Runs `cell` once per window, sorted by window size. A failing cell is
/// recorded and the remaining cells still run.
pub fn run_sweep<F>(windows_ms: &[f64], mut cell: F) -> Vec<SweepCell>
where
    F: FnMut(f64) -> Result<EvalReport, HarnessError>,
{
    let mut windows = windows_ms.to_vec();
    windows.sort_by(f64::total_cmp);
    windows.dedup();
    windows
        .into_iter()
        .map(|w| {
            let outcome = cell(w).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::error!("sweep cell {w} ms failed: {e}");
            }
            SweepCell { window_ms: w, outcome }
        })
        .collect()
}

/// Oracle binary masking at each window with a hop of half the window.
pub fn oracle_sweep(examples: &[MixtureExample], windows_ms: &[f64], sample_rate_hz: u32) -> Vec<SweepCell> {
    run_sweep(windows_ms, |w| {
        let spec = FrameSpec::from_window_ms(w, sample_rate_hz)?;
        oracle_eval(examples, &spec)
    })
}

/// `window_ms,mean_si_sdri,n_examples,n_excluded,status`; the first two
/// columns are the plot series. Failed cells have an empty mean.
pub fn write_sweep_csv(cells: &[SweepCell], out: impl Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window_ms", "mean_si_sdri", "n_examples", "n_excluded", "status"])?;
    for c in cells {
        let rec = match &c.outcome {
            Ok(r) => [
                c.window_ms.to_string(),
                r.mean_si_sdri.to_string(),
                r.rows.len().to_string(),
                r.n_excluded.to_string(),
                "ok".to_string(),
            ],
            Err(e) => [c.window_ms.to_string(), String::new(), String::new(), String::new(), format!("error: {e}")],
        };
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn cells_are_sorted_and_failures_do_not_stop_the_sweep() {
        let cells = run_sweep(&[50.0, 2.5, 10.0], |w| {
            if w == 10.0 {
                Err(HarnessError::Config("boom".into()))
            } else {
                Ok(EvalReport::from_rows(vec![], BTreeMap::new()))
            }
        });
        let windows: Vec<f64> = cells.iter().map(|c| c.window_ms).collect();
        assert_eq!(windows, vec![2.5, 10.0, 50.0]);
        assert!(cells[1].outcome.is_err() && cells[2].outcome.is_ok());
        let mut buf = Vec::new();
        write_sweep_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().starts_with("10,,"));
    }
}
