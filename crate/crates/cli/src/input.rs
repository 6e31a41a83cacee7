//! Recording CSV, sidecar JSON and band-list parsing.

use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use scalemix::evaluation::{Exclusion, SeizureAnnotation};
use scalemix::filter::BandSpec;
use scalemix::model::MultichannelSegment;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct Sidecar {
    pub fs: f64,
    #[serde(default)]
    pub annotations: Vec<SeizureAnnotation>,
    #[serde(default)]
    pub exclusions: Vec<Exclusion>,
    pub baseline_channel: Option<String>,
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let file = File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let sc: Sidecar = serde_json::from_reader(file).map_err(|e| {
        anyhow!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        )
    })?;
    if !(sc.fs > 0.0 && sc.fs.is_finite()) {
        bail!("{}: fs must be > 0, got {}", path.display(), sc.fs);
    }
    for e in &sc.exclusions {
        if !(e.start_s < e.end_s) {
            bail!(
                "{}: exclusion [{}, {}] is empty",
                path.display(),
                e.start_s,
                e.end_s
            );
        }
    }
    Ok(sc)
}

/// Header row of channel labels, then one row of floats per sample.
pub fn read_recording(path: &Path, fs: f64) -> Result<MultichannelSegment> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("{}: cannot open", path.display()))?;
    let labels: Vec<String> = rdr
        .headers()
        .with_context(|| format!("{}: cannot read header", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    let d = labels.len();
    if d == 0 || labels.iter().all(String::is_empty) {
        bail!("{}: header row has no channel labels", path.display());
    }
    let mut values = Vec::new();
    let mut n = 0usize;
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("{}: unreadable row", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d {
            bail!(
                "{}: line {line}: expected {d} fields, found {}",
                path.display(),
                rec.len()
            );
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                anyhow!(
                    "{}: line {line}, column {}: cannot parse {field:?} as a number",
                    path.display(),
                    col + 1
                )
            })?;
            if !v.is_finite() {
                bail!(
                    "{}: line {line}, column {}: non-finite value",
                    path.display(),
                    col + 1
                );
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        bail!("{}: no sample rows", path.display());
    }
    // Rows are samples, so the flat buffer is already column-major D x N.
    MultichannelSegment::new(DMatrix::from_vec(d, n, values), fs, labels)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// `default` or a comma list of `name:low-high` (Hz).
pub fn parse_bands(spec: &str) -> Result<Vec<BandSpec>> {
    if spec.trim() == "default" {
        return Ok(BandSpec::defaults());
    }
    let bands = spec
        .split(',')
        .map(|item| {
            let (name, range) = item
                .split_once(':')
                .ok_or_else(|| anyhow!("band {item:?}: expected name:low-high"))?;
            let (lo, hi) = range
                .split_once('-')
                .ok_or_else(|| anyhow!("band {item:?}: expected name:low-high"))?;
            let lo: f64 = lo
                .trim()
                .parse()
                .with_context(|| format!("band {item:?}: bad lower edge"))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .with_context(|| format!("band {item:?}: bad upper edge"))?;
            Ok(BandSpec::new(name.trim(), lo, hi)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = bands.iter().map(|b| b.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        bail!("duplicate band names in {spec:?}");
    }
    Ok(bands)
}
