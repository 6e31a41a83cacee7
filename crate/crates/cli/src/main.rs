// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod input;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use scalemix::analyzer::{analyze_with, to_heatmap, AnalysisConfig, ExtraFeatures};
use scalemix::selftest::{run_selftest, Fault};
use scalemix::sim::{run_sweep, SweepConfig, SweepResult};
use scalemix::Error;

const DEFAULT_FS: f64 = 500.0;
const DEFAULT_BASELINE_CHANNEL: &str = "Cz";

#[derive(Parser)]
#[command(
    name = "scalemix",
    version,
    about = "Scale-mixture non-Gaussianity features for multichannel recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band-wise 1/nu features, baselines, model selection and (with annotations) evaluation.
    Analyze {
        /// Recording: header of channel labels, one sample per row.
        csv: PathBuf,
        /// JSON with fs, annotations, exclusions and baseline_channel.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, default_value_t = 15.0)]
        window_s: f64,
        #[arg(long, default_value_t = 1.0)]
        slide_s: f64,
        /// `default` (delta..gamma) or `name:low-high,...` in Hz.
        #[arg(long, default_value = "default")]
        bands: String,
        #[arg(long, default_value = "scalemix-out")]
        out: PathBuf,
        /// Seed for balancing the seizure and non-seizure classes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampling rate when no sidecar is given [default: 500].
        #[arg(long)]
        fs: Option<f64>,
        /// Skip the Gaussian / Cauchy BIC comparison.
        #[arg(long)]
        no_select: bool,
    },
    /// Estimator accuracy sweep on simulated data.
    Simulate {
        /// Window lengths in seconds.
        #[arg(long, value_delimiter = ',', default_values_t = SweepConfig::default().window_lengths_s)]
        windows: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = SweepConfig::default().dims)]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = SweepConfig::default().nu_grid)]
        nu_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = SweepConfig::default().psi_diag_grid)]
        psi_grid: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scalemix-sim")]
        out: PathBuf,
    },
    /// Runs the built-in consistency checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Density,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_TOO_SHORT: u8 = 3;
const EXIT_ALL_FAILED: u8 = 4;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_INPUT);
    }
    let result = match cli.command {
        Command::Analyze {
            csv,
            sidecar,
            window_s,
            slide_s,
            bands,
            out,
            seed,
            fs,
            no_select,
        } => cmd_analyze(AnalyzeArgs {
            csv,
            sidecar,
            window_s,
            slide_s,
            bands,
            out,
            seed,
            fs,
            select: !no_select,
        }),
        Command::Simulate {
            windows,
            dims,
            nu_grid,
            psi_grid,
            seed,
            out,
        } => cmd_simulate(
            SweepConfig {
                window_lengths_s: windows,
                dims,
                nu_grid,
                psi_diag_grid: psi_grid,
                seed,
                ..SweepConfig::default()
            },
            &out,
        ),
        Command::Selftest { inject_fault } => {
            cmd_selftest(inject_fault.map(|FaultArg::Density| Fault::DensityConstant))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SCALEMIX_THREADS") {
        let n: usize =
            v.trim().parse().ok().filter(|&n| n > 0).with_context(|| {
                format!("SCALEMIX_THREADS must be a positive integer, got {v:?}")
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

struct AnalyzeArgs {
    csv: PathBuf,
    sidecar: Option<PathBuf>,
    window_s: f64,
    slide_s: f64,
    bands: String,
    out: PathBuf,
    seed: u64,
    fs: Option<f64>,
    select: bool,
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let input_err = |e| Failure::new(EXIT_INPUT, e);
    let sidecar = a
        .sidecar
        .as_deref()
        .map(input::read_sidecar)
        .transpose()
        .map_err(input_err)?;
    let fs = match (&sidecar, a.fs) {
        (Some(sc), Some(flag)) if flag != sc.fs => {
            log::warn!("--fs {flag} ignored, sidecar gives {}", sc.fs);
            sc.fs
        }
        (Some(sc), _) => sc.fs,
        (None, Some(flag)) => flag,
        (None, None) => DEFAULT_FS,
    };
    if sidecar.is_none() {
        log::warn!("no sidecar given: assuming fs = {fs} Hz and skipping evaluation");
    }
    let bands = input::parse_bands(&a.bands).map_err(input_err)?;
    let x = input::read_recording(&a.csv, fs).map_err(input_err)?;
    if let (Some(sc), Some(path)) = (&sidecar, &a.sidecar) {
        scalemix::evaluation::validate_annotations(&sc.annotations, x.duration_s())
            .map_err(|e| Failure::new(EXIT_INPUT, anyhow::anyhow!("{}: {e}", path.display())))?;
    }

    let wanted = sidecar
        .as_ref()
        .and_then(|s| s.baseline_channel.clone())
        .unwrap_or_else(|| DEFAULT_BASELINE_CHANNEL.to_string());
    let baseline_channel = x.channel_index(&wanted).unwrap_or_else(|| {
        log::warn!(
            "baseline channel {wanted:?} not found; using {:?}",
            x.channel_labels()[0]
        );
        0
    });

    let cfg = AnalysisConfig {
        window_s: a.window_s,
        slide_s: a.slide_s,
        bands,
        ..AnalysisConfig::default()
    };
    let extra = ExtraFeatures {
        baseline_channel: Some(baseline_channel),
        model_selection: a.select,
        ..ExtraFeatures::default()
    };
    let series = analyze_with(&x, &cfg, &extra).map_err(|e| match e {
        Error::EmptyResult { .. } => {
            Failure::new(EXIT_TOO_SHORT, anyhow::anyhow!("{}: {e}", a.csv.display()))
        }
        e => Failure::new(EXIT_INPUT, e),
    })?;
    let total: usize = series.iter().map(|s| s.len()).sum();
    let failed: usize = series.iter().map(|s| s.n_failed()).sum();
    if failed == total {
        return Err(Failure::new(
            EXIT_ALL_FAILED,
            anyhow::anyhow!("{}: all {total} window fits failed", a.csv.display()),
        ));
    }

    let evaluation = sidecar.as_ref().and_then(|sc| {
        if sc.annotations.is_empty() {
            log::warn!("sidecar has no annotations; skipping evaluation");
            return None;
        }
        Some(output::evaluate_all(
            &series,
            &sc.annotations,
            &sc.exclusions,
            x.duration_s(),
            a.seed,
        ))
    });
    let heatmap = to_heatmap(&series).map_err(|e| Failure::new(EXIT_ALL_FAILED, e))?;

    let write = || -> anyhow::Result<()> {
        fs::create_dir_all(&a.out)
            .with_context(|| format!("{}: cannot create", a.out.display()))?;
        for s in &series {
            output::write_features(&a.out, s)?;
        }
        output::write_heatmap(&a.out, &heatmap, &series[0].window_starts)?;
        if heatmap.degenerate {
            log::warn!("heatmap is constant; written as zeros");
        }
        let selection: Vec<_> = series
            .iter()
            .filter_map(output::selection_summary)
            .collect();
        if !selection.is_empty() {
            output::write_json(&a.out, "model_selection.json", &selection)?;
        }
        if let Some(ev) = &evaluation {
            output::write_json(&a.out, "evaluation.json", ev)?;
        }
        let diagnostics: Vec<_> = series
            .iter()
            .map(|s| serde_json::json!({ "band": s.band, "windows": s.diagnostics }))
            .collect();
        output::write_json(&a.out, "diagnostics.json", &diagnostics)?;
        Ok(())
    };
    write().map_err(|e| Failure::new(EXIT_FAILURE, e))?;

    println!(
        "{} bands x {} windows ({failed} failed fits) written to {}",
        series.len(),
        series[0].len(),
        a.out.display()
    );
    if let Some(ev) = &evaluation {
        for b in &ev.bands {
            let aucs: Vec<String> = b
                .features
                .iter()
                .map(|f| match &f.report {
                    Some(r) => format!("{} {:.3}", f.feature, r.auc),
                    None => format!("{} n/a", f.feature),
                })
                .collect();
            println!("  {:<8} AUC: {}", b.band, aucs.join(", "));
        }
    }
    Ok(())
}

fn cmd_simulate(cfg: SweepConfig, out: &std::path::Path) -> Result<(), Failure> {
    cfg.validate().map_err(|e| Failure::new(EXIT_INPUT, e))?;
    let result = run_sweep(&cfg).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let write = || -> anyhow::Result<()> {
        fs::create_dir_all(out).with_context(|| format!("{}: cannot create", out.display()))?;
        // Timing varies between runs, so it lives in its own file.
        output::write_json(
            out,
            "sweep.json",
            &serde_json::json!({ "config": result.config, "cells": result.cells }),
        )?;
        output::write_json(out, "timing.json", &result.timing)?;
        Ok(())
    };
    write().map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    print_sweep_table(&result);
    Ok(())
}

fn print_sweep_table(r: &SweepResult) {
    let dims = &r.config.dims;
    let mut header = format!("{:>7}", "W [s]");
    for d in dims {
        header.push_str(&format!(" {:>17}", format!("D={d} nu% / psi%")));
    }
    println!("{header}");
    for &w in &r.config.window_lengths_s {
        let mut line = format!("{w:>7}");
        for &d in dims {
            match r.get(w, d) {
                Some(c) => {
                    line.push_str(&format!(" {:>8.2} /{:>7.2}", c.mean_ape_nu, c.mean_ape_psi))
                }
                None => line.push_str(&format!(" {:>17}", "-")),
            }
        }
        println!("{line}");
    }
    let failed: usize = r.cells.iter().map(|c| c.n_failed).sum();
    if failed > 0 {
        println!("{failed} fits failed and were excluded");
    }
}

fn cmd_selftest(fault: Option<Fault>) -> Result<(), Failure> {
    let outcomes = run_selftest(fault);
    for o in &outcomes {
        println!(
            "{} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure::new(
            EXIT_FAILURE,
            anyhow::anyhow!("{failed} self-test check(s) failed"),
        ));
    }
    Ok(())
}
