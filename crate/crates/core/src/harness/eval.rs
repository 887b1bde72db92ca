use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use super::HarnessError;
use crate::datagen::MixtureExample;
use crate::masking::separate_oracle;
use crate::nets::SeparationModel;
use crate::objectives::{best_assignment, si_sdr};
use crate::signal::Waveform;
use crate::transforms::FrameSpec;

/// Pairwise scores are clamped to this many dB before the assignment search
/// so that exact or orthogonal estimates do not produce `∞ - ∞`.
const ALIGN_CLAMP_DB: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub mixture_id: String,
    /// SI-SDR of the unprocessed mixture against each reference.
    pub input_si_sdr: Vec<f64>,
    /// Improvement per reference after alignment.
    pub si_sdri: Vec<f64>,
    /// `permutation[k]` is the estimate matched to reference `k`.
    pub permutation: Vec<usize>,
}

impl EvalRow {
    pub fn mean_si_sdri(&self) -> f64 {
        self.si_sdri.iter().sum::<f64>() / self.si_sdri.len() as f64
    }

    /// Rows with an infinite score are reported but left out of aggregates.
    pub fn flagged(&self) -> bool {
        self.si_sdri.iter().chain(&self.input_si_sdr).any(|v| v.is_infinite())
    }
}

/// Aligns `estimates` to `references` by maximizing total SI-SDR and scores
/// each pair against the mixture baseline.
pub fn evaluate_example(
    mixture_id: &str,
    mixture: &Waveform,
    references: &[Waveform],
    estimates: &[Waveform],
) -> Result<EvalRow, HarnessError> {
    let k = references.len();
    if estimates.len() != k {
        return Err(HarnessError::Config(format!(
            "{mixture_id}: {} estimates for {k} references",
            estimates.len()
        )));
    }
    let scores: Vec<Vec<f64>> = references
        .iter()
        .map(|r| estimates.iter().map(|e| si_sdr(r.samples(), e.samples())).collect())
        .collect::<Result<_, _>>()?;
    let cost: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| row.iter().map(|s| -s.clamp(-ALIGN_CLAMP_DB, ALIGN_CLAMP_DB)).collect())
        .collect();
    let (permutation, _) = best_assignment(&cost)?;
    let input_si_sdr: Vec<f64> = references
        .iter()
        .map(|r| si_sdr(r.samples(), mixture.samples()))
        .collect::<Result<_, _>>()?;
    let si_sdri = (0..k)
        .map(|j| {
            let (est, inp) = (scores[j][permutation[j]], input_si_sdr[j]);
            // identical scores include an estimate that is the mixture itself
            if est == inp {
                0.0
            } else {
                est - inp
            }
        })
        .collect();
    Ok(EvalRow {
        mixture_id: mixture_id.to_string(),
        input_si_sdr,
        si_sdri,
        permutation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Mean over unflagged rows of the per-row mean improvement.
    pub mean_si_sdri: f64,
    pub median_si_sdri: f64,
    /// Rows left out of the aggregates because of infinite scores.
    pub n_excluded: usize,
    pub settings: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, settings: BTreeMap<String, String>) -> Self {
        let mut kept: Vec<f64> = rows.iter().filter(|r| !r.flagged()).map(EvalRow::mean_si_sdri).collect();
        let n_excluded = rows.len() - kept.len();
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        kept.sort_by(f64::total_cmp);
        let median = match kept.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => kept[n / 2],
            n => 0.5 * (kept[n / 2 - 1] + kept[n / 2]),
        };
        Self {
            rows,
            mean_si_sdri: mean,
            median_si_sdri: median,
            n_excluded,
            settings,
        }
    }

    /// Per-example table. Numbers use the shortest exact decimal form, so
    /// [`read_rows_csv`] returns the rows bit for bit.
    pub fn write_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let k = self.rows.first().map_or(0, |r| r.si_sdri.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["mixture_id".to_string()];
        header.extend((0..k).map(|j| format!("input_si_sdr_{j}")));
        header.extend((0..k).map(|j| format!("si_sdri_{j}")));
        header.extend(["mean_si_sdri", "permutation", "flagged"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.mixture_id.clone()];
            rec.extend(r.input_si_sdr.iter().map(|v| v.to_string()));
            rec.extend(r.si_sdri.iter().map(|v| v.to_string()));
            rec.push(r.mean_si_sdri().to_string());
            rec.push(r.permutation.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" "));
            rec.push(r.flagged().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
        Ok(())
    }

    /// `key,value` table of the aggregates followed by the settings.
    pub fn write_summary_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["key", "value"])?;
        w.write_record(["mean_si_sdri", &self.mean_si_sdri.to_string()])?;
        w.write_record(["median_si_sdri", &self.median_si_sdri.to_string()])?;
        w.write_record(["n_examples", &self.rows.len().to_string()])?;
        w.write_record(["n_excluded", &self.n_excluded.to_string()])?;
        for (key, value) in &self.settings {
            w.write_record([format!("setting.{key}"), value.clone()])?;
        }
        w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
        Ok(())
    }
}

fn parse_f64(field: &str) -> Result<f64, HarnessError> {
    field
        .parse()
        .map_err(|_| HarnessError::Csv(format!("not a number: {field:?}")))
}

/// Reads the rows written by [`EvalReport::write_csv`].
pub fn read_rows_csv(input: impl Read) -> Result<Vec<EvalRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers()?.len();
    if width < 4 || (width - 4) % 2 != 0 {
        return Err(HarnessError::Csv(format!("unexpected column count {width}")));
    }
    let k = (width - 4) / 2;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(EvalRow {
                mixture_id: rec[0].to_string(),
                input_si_sdr: (1..=k).map(|i| parse_f64(&rec[i])).collect::<Result<_, _>>()?,
                si_sdri: (k + 1..=2 * k).map(|i| parse_f64(&rec[i])).collect::<Result<_, _>>()?,
                permutation: rec[2 * k + 2]
                    .split_whitespace()
                    .map(|p| p.parse().map_err(|_| HarnessError::Csv(format!("bad permutation {p:?}"))))
                    .collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

/// Scores the final stage of `model` on every example.
pub fn evaluate_model(
    model: &SeparationModel,
    examples: &[MixtureExample],
    settings: BTreeMap<String, String>,
) -> Result<EvalReport, HarnessError> {
    let last = model.n_stages() - 1;
    Ok(evaluate_model_stages(model, examples, settings)?.swap_remove(last))
}

/// One report per network stage, from a single pass over the examples.
pub fn evaluate_model_stages(
    model: &SeparationModel,
    examples: &[MixtureExample],
    settings: BTreeMap<String, String>,
) -> Result<Vec<EvalReport>, HarnessError> {
    let per_example: Vec<Vec<EvalRow>> = examples
        .par_iter()
        .map(|ex| {
            model
                .separate_stages(&ex.mixture)?
                .iter()
                .map(|est| evaluate_example(&ex.id, &ex.mixture, &ex.references, est))
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok((0..model.n_stages())
        .map(|s| {
            let mut settings = settings.clone();
            settings.insert("stage".into(), (s + 1).to_string());
            EvalReport::from_rows(per_example.iter().map(|rows| rows[s].clone()).collect(), settings)
        })
        .collect())
}

/// Oracle binary masking at `spec`, scored like a model.
pub fn oracle_eval(examples: &[MixtureExample], spec: &FrameSpec) -> Result<EvalReport, HarnessError> {
    let rows = examples
        .par_iter()
        .map(|ex| {
            let est = separate_oracle(&ex.mixture, &ex.references, spec)?;
            evaluate_example(&ex.id, &ex.mixture, &ex.references, &est)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let settings = BTreeMap::from([
        ("method".to_string(), "oracle_binary_mask".to_string()),
        ("window_ms".to_string(), spec.window_ms().to_string()),
        ("hop".to_string(), spec.hop.to_string()),
    ]);
    Ok(EvalReport::from_rows(rows, settings))
}
