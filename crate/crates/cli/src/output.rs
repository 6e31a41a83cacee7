//! Report files. Floats use Rust's shortest round-trip formatting.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use scalemix::analyzer::{BandFeatureSeries, Heatmap};
use scalemix::evaluation::{
    evaluate, label_windows, EvaluationReport, Exclusion, SeizureAnnotation,
};
use scalemix::select::ModelKind;
use serde::Serialize;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_features(dir: &Path, s: &BandFeatureSeries) -> Result<()> {
    let path = dir.join(format!("features_{}.csv", s.band));
    let mut w = csv::Writer::from_path(&path)
        .with_context(|| format!("{}: cannot create", path.display()))?;
    w.write_record([
        "window_start_s",
        "inv_nu",
        "rms",
        "abs_toc",
        "apen",
        "bic_winner",
    ])?;
    for i in 0..s.len() {
        let b = s.baselines.as_ref().and_then(|v| v[i]);
        let winner = s.bic_winner.as_ref().and_then(|v| v[i]);
        w.write_record([
            s.window_starts[i].to_string(),
            fmt_opt(s.inv_nu[i]),
            fmt_opt(b.map(|b| b.rms)),
            fmt_opt(b.map(|b| b.abs_toc)),
            fmt_opt(b.map(|b| b.apen)),
            winner.map(|k| k.name().to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per band; columns are window start times.
pub fn write_heatmap(dir: &Path, h: &Heatmap, window_starts: &[f64]) -> Result<()> {
    let path = dir.join("heatmap.csv");
    let mut w = csv::Writer::from_path(&path)
        .with_context(|| format!("{}: cannot create", path.display()))?;
    let mut header = vec!["band".to_string()];
    header.extend(window_starts.iter().map(f64::to_string));
    w.write_record(&header)?;
    for (band, row) in h.bands.iter().zip(&h.values) {
        let mut rec = vec![band.clone()];
        rec.extend(row.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").with_context(|| format!("{}: cannot write", path.display()))
}

#[derive(Debug, Serialize)]
pub struct SelectionSummary {
    pub band: String,
    pub n_windows: usize,
    pub n_failed: usize,
    pub proposed_pct: f64,
    pub gaussian_pct: f64,
    pub cauchy_pct: f64,
}

pub fn selection_summary(s: &BandFeatureSeries) -> Option<SelectionSummary> {
    let winners = s.bic_winner.as_ref()?;
    let decided: Vec<ModelKind> = winners.iter().flatten().copied().collect();
    let pct = |k: ModelKind| {
        if decided.is_empty() {
            0.0
        } else {
            100.0 * decided.iter().filter(|&&w| w == k).count() as f64 / decided.len() as f64
        }
    };
    Some(SelectionSummary {
        band: s.band.clone(),
        n_windows: winners.len(),
        n_failed: winners.len() - decided.len(),
        proposed_pct: pct(ModelKind::Proposed),
        gaussian_pct: pct(ModelKind::Gaussian),
        cauchy_pct: pct(ModelKind::Cauchy),
    })
}

#[derive(Debug, Serialize)]
pub struct FeatureEvaluation {
    pub feature: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvaluationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct BandEvaluation {
    pub band: String,
    pub features: Vec<FeatureEvaluation>,
}

#[derive(Debug, Serialize)]
pub struct EvaluationBundle {
    pub seed: u64,
    pub bands: Vec<BandEvaluation>,
}

/// Scores each feature of each band against the annotations.
pub fn evaluate_all(
    series: &[BandFeatureSeries],
    ann: &[SeizureAnnotation],
    exclusions: &[Exclusion],
    recording_len_s: f64,
    seed: u64,
) -> EvaluationBundle {
    let bands = series
        .iter()
        .map(|s| {
            let mut columns: Vec<(&'static str, Vec<Option<f64>>)> =
                vec![("inv_nu", s.inv_nu.clone())];
            if let Some(b) = &s.baselines {
                columns.push(("rms", b.iter().map(|f| f.map(|f| f.rms)).collect()));
                columns.push(("abs_toc", b.iter().map(|f| f.map(|f| f.abs_toc)).collect()));
                columns.push(("apen", b.iter().map(|f| f.map(|f| f.apen)).collect()));
            }
            let features = columns
                .into_iter()
                .map(|(feature, scores)| {
                    let result = label_windows(
                        &s.window_starts,
                        s.window_s,
                        &scores,
                        ann,
                        exclusions,
                        recording_len_s,
                        seed,
                    )
                    .and_then(|l| evaluate(&l));
                    match result {
                        Ok(report) => FeatureEvaluation {
                            feature,
                            report: Some(report),
                            error: None,
                        },
                        Err(e) => {
                            log::warn!("band {} feature {feature}: {e}", s.band);
                            FeatureEvaluation {
                                feature,
                                report: None,
                                error: Some(e.to_string()),
                            }
                        }
                    }
                })
                .collect();
            BandEvaluation {
                band: s.band.clone(),
                features,
            }
        })
        .collect();
    EvaluationBundle { seed, bands }
}
