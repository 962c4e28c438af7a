//! Command-line front end. Each subcommand delegates to one library operation.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::bench_mixing;
use crate::checkpoint::{load_checkpoint, load_config, read_manifest as read_ckpt_manifest};
use crate::data::{generate_dataset, read_manifest, SynthSpec};
use crate::error::{Error, Result};
use crate::gradcheck::{check_fragment, check_network, GradCheckOptions, FRAGMENTS};
use crate::model::{count_flops, count_params, export_filter_spectra, Plane, SFNetConfig};
use crate::train::{evaluate, run_cross_validation, write_json, Dataset, TestMetrics, TrainConfig};

/// Token counts timed by `bench-mixing`.
pub const BENCH_LENGTHS: [usize; 3] = [512, 4096, 32768];
pub const BENCH_DIM: usize = 32;
pub const BENCH_REPEATS: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "sfnet", version, about = "Spatial-frequency volumetric network laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class volume dataset.
    GenData(GenData),
    /// Five-fold cross-validation with a held-out test split.
    Train(Train),
    /// Evaluate a checkpoint on every volume of a dataset.
    Evaluate(Evaluate),
    /// Per-module trainable parameter counts.
    CountParams(Accounting),
    /// Per-stage forward FLOPs for one sample.
    CountFlops(Accounting),
    /// Write centered filter-magnitude slices as PGM images and CSV.
    ExportFilters(ExportFilters),
    /// Time attention against FFT token mixing and fit scaling exponents.
    BenchMixing(BenchMixing),
    /// Compare analytic and finite-difference gradients in f64.
    GradCheck(GradCheck),
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Volumes per class.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Model config whose input extent sets the volume size.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    pub data: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub parallel_folds: usize,
    /// Print the effective model config as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for `metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Accounting {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also walk this checkpoint's manifest and compare totals.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportFilters {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "xy")]
    pub plane: Plane,
    /// Defaults to `<ckpt>/filters`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchMixing {
    /// Directory for `bench_mixing.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradCheck {
    /// Fragment to check; `all` runs every fragment.
    #[arg(default_value = "all")]
    pub fragment: String,
    /// Model config for the `sfnet` fragment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `grad_check.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn model_config(path: Option<&Path>) -> Result<SFNetConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(SFNetConfig::tiny()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_table(title: &str, rows: &[(String, u64)], total: u64) {
    println!("{:<24} {:>16}", "module", title);
    for (name, v) in rows {
        println!("{name:<24} {v:>16}");
    }
    println!("{:<24} {total:>16}", "total");
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let extent = match &a.config {
                Some(p) => load_config(p)?.input_extent,
                None => SynthSpec::default().extent,
            };
            let spec = SynthSpec { extent, seed: a.seed, ..SynthSpec::default() };
            let records = generate_dataset(&spec, a.n, &a.out)?;
            println!("wrote {} volumes to {}", records.len(), a.out.display());
        }
        Command::Train(a) => {
            let cfg = model_config(a.config.as_deref())?;
            cfg.validate()?;
            if a.dump_config {
                println!("{}", serde_json::to_string_pretty(&cfg)?);
                return Ok(());
            }
            let defaults = TrainConfig::default();
            let tc = TrainConfig {
                seed: a.seed,
                epochs: a.epochs.unwrap_or(defaults.epochs),
                batch_size: a.batch.unwrap_or(defaults.batch_size),
                ..defaults
            };
            let (data, out) = (a.data.expect("required by clap"), a.out.expect("required by clap"));
            let report = run_cross_validation(&cfg, &tc, &data, &out, a.parallel_folds)?;
            let fmt = |s: &crate::train::Summary| match s.mean {
                Some(m) => format!("{m:.4} ± {:.4}", s.sd.unwrap_or(0.0)),
                None => "NA".to_string(),
            };
            for (label, agg) in [("best", &report.aggregate_best), ("final", &report.aggregate_final)] {
                println!(
                    "{label:>5}: acc {} sen {} spe {} f1 {} auc {}",
                    fmt(&agg.acc),
                    fmt(&agg.sen),
                    fmt(&agg.spe),
                    fmt(&agg.f1),
                    fmt(&agg.auc)
                );
            }
            println!("report: {}", out.join("report.json").display());
        }
        Command::Evaluate(a) => {
            let model = load_checkpoint::<f32>(&a.ckpt)?;
            let records = read_manifest(&a.data)?;
            let data = Dataset::load(&records, &a.data)?;
            let e = evaluate(&model, &data, a.batch.unwrap_or(TrainConfig::default().eval_batch_size))?;
            let m = TestMetrics::from(&e);
            let text = serde_json::to_string_pretty(&m)?;
            println!("{text}");
            if let Some(out) = a.out {
                create_dir(&out)?;
                write_json(&out.join("metrics.json"), &m)?;
            }
        }
        Command::CountParams(a) => {
            let cfg = model_config(a.config.as_deref())?;
            let p = count_params(&cfg)?;
            print_table("params", &p.modules, p.total);
            if let Some(ckpt) = a.ckpt {
                let walked = read_ckpt_manifest(&ckpt)?.trainable_elements();
                println!("checkpoint {walked}");
                if walked != p.total {
                    return Err(Error::Invalid(format!(
                        "checkpoint holds {walked} trainable elements, config implies {}",
                        p.total
                    )));
                }
            }
        }
        Command::CountFlops(a) => {
            let cfg = model_config(a.config.as_deref())?;
            let f = count_flops(&cfg)?;
            print_table("flops", &f.stages, f.total);
        }
        Command::ExportFilters(a) => {
            let model = load_checkpoint::<f32>(&a.ckpt)?;
            let geo = model.config().geometry()?;
            let channels: Vec<usize> = (0..geo.embed_dim).collect();
            let layers: Vec<usize> = (0..model.config().freq_depth).collect();
            let out = a.out.unwrap_or_else(|| a.ckpt.join("filters"));
            let written = export_filter_spectra(&model, a.plane, &channels, &layers, &out)?;
            println!("wrote {} files to {}", written.len(), out.display());
        }
        Command::BenchMixing(a) => {
            let report = bench_mixing(&BENCH_LENGTHS, BENCH_DIM, BENCH_REPEATS, a.seed)?;
            println!("L,attention_ms,fft_ms");
            for r in &report.rows {
                println!("{},{:.6},{:.6}", r.tokens, r.attention_ms, r.fft_ms);
            }
            println!("attention slope {:.3}, fft slope {:.3}", report.attention_slope, report.fft_slope);
            if let Some(out) = a.out {
                create_dir(&out)?;
                report.write_csv(&out.join("bench_mixing.csv"))?;
            }
        }
        Command::GradCheck(a) => {
            let opts = GradCheckOptions { seed: a.seed, ..GradCheckOptions::default() };
            let names: Vec<&str> = if a.fragment == "all" { FRAGMENTS.to_vec() } else { vec![a.fragment.as_str()] };
            let mut reports = Vec::new();
            for name in names {
                let r = match (name, &a.config) {
                    ("sfnet", Some(p)) => check_network(&load_config(p)?, 1, &opts)?,
                    _ => check_fragment(name, &opts)?,
                };
                let skipped: usize = r.tensors.iter().map(|t| t.skipped).sum();
                println!(
                    "{name:<16} {} max rel err {:.3e} (skipped {skipped})",
                    if r.passed { "pass" } else { "FAIL" },
                    r.max_rel_err
                );
                reports.push((name.to_string(), r));
            }
            if let Some(out) = a.out {
                create_dir(&out)?;
                write_json(&out.join("grad_check.json"), &reports)?;
            }
            if let Some((name, _)) = reports.iter().find(|(_, r)| !r.passed) {
                return Err(Error::Invalid(format!("gradient check failed for {name}")));
            }
        }
    }
    Ok(())
}
