//! The `tenserecon` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 some frames did not
//! converge (their records are still written).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::config::{Config, StretchChoice};
use crate::harness::io::{export_frames, read_frames, read_sensor_csv, save_sensor_csv, FrameRecord};
use crate::harness::metrics::MetricsReport;
use crate::harness::pipeline::{reconstruct_session, StretchModel};
use crate::lstm::{learning_rate_sweep, save_model, train, LstmModel, SequenceDataset, StretchSeries};
use crate::sensor::fit_bending_polynomial;
use crate::simulator::generate_session;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tenserecon", version, about = "Tensegrity shape reconstruction from tendon strain sensors")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Seed for scenario noise, dataset noise and weight initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Clamp out-of-domain sensor readings instead of failing the frame.
    #[arg(long, global = true)]
    clamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the topology as JSON, or check a topology file.
    Topology {
        /// Validate this file instead of printing.
        #[arg(long, value_name = "JSON")]
        validate: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the bending polynomial to a `delta_r_ratio,strain` CSV.
    FitBend {
        samples: PathBuf,
        /// Write the calibration JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the stretching-mode LSTM and print its loss table.
    TrainLstm {
        /// `series,rate,delta_r_ratio,strain` CSV; synthetic data when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model path; defaults to `<output_dir>/model.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also train one model per configured learning rate.
        #[arg(long)]
        sweep: bool,
    },
    /// Generate a sensor CSV and ground-truth frames from a scenario.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Reconstruct node positions from a sensor CSV.
    Reconstruct {
        sensors: PathBuf,
        /// LSTM model file.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        stretch: Option<StretchChoice>,
        /// Frames file; defaults to `<output_dir>/frames.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reconstructed frames against ground truth.
    Evaluate {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Simulate, train if needed, reconstruct and evaluate.
    RunAll {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

enum Outcome {
    Done,
    NotConverged { failed: usize, total: usize },
}

/// Runs the CLI on `args` (program name first). Normal output goes to `out`,
/// diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(cli, out) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::NotConverged { failed, total }) => {
            let _ = writeln!(err, "warning: {failed} of {total} frames did not converge");
            EXIT_NOT_CONVERGED
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.clamp |= cli.clamp;

    match cli.command {
        Command::Topology { validate, out: path } => topology(&cfg, validate, path, out),
        Command::FitBend { samples, out: path } => fit_bend(&samples, path, out),
        Command::TrainLstm { dataset, out: path, sweep } => {
            let path = path.unwrap_or_else(|| cfg.output_dir.join("model.json"));
            train_lstm(&cfg, dataset.as_deref(), &path, sweep, out).map(|_| Outcome::Done)
        }
        Command::Simulate { scenario, out_dir } => {
            if scenario.is_some() {
                cfg.scenario = scenario;
            }
            simulate(&cfg, &out_dir.unwrap_or_else(|| cfg.output_dir.clone()), out)?;
            Ok(Outcome::Done)
        }
        Command::Reconstruct {
            sensors,
            model,
            stretch,
            out: path,
        } => {
            if model.is_some() {
                cfg.lstm_model = model;
            }
            if let Some(s) = stretch {
                cfg.stretch_model = s;
            }
            let stretch = cfg.stretch_model()?.ok_or_else(|| {
                Error::Config("no LSTM model: pass --model, set lstm_model, or use --stretch table".into())
            })?;
            let path = path.unwrap_or_else(|| cfg.output_dir.join("frames.jsonl"));
            reconstruct(&cfg, &stretch, &sensors, &path, out)
        }
        Command::Evaluate { frames, truth, out_dir } => {
            evaluate(&cfg, &frames, &truth, &out_dir.unwrap_or_else(|| cfg.output_dir.clone()), out)?;
            Ok(Outcome::Done)
        }
        Command::RunAll { out_dir } => run_all(&cfg, &out_dir.unwrap_or_else(|| cfg.output_dir.clone()), out),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

fn topology(cfg: &Config, validate: Option<PathBuf>, path: Option<PathBuf>, out: &mut dyn Write) -> Result<Outcome> {
    if let Some(file) = validate {
        let t = crate::topology::Topology::load(&file)?;
        writeln!(
            out,
            "{}: valid ({} nodes, {} struts, {} tendons)",
            file.display(),
            t.nominal_coords_m.len(),
            t.struts.len(),
            t.tendons.len()
        )?;
        return Ok(Outcome::Done);
    }
    let json = cfg.topology()?.to_json_string();
    match path {
        Some(p) => {
            create_parent(&p)?;
            fs::write(&p, json + "\n")?;
            writeln!(out, "wrote {}", p.display())?;
        }
        None => writeln!(out, "{json}")?,
    }
    Ok(Outcome::Done)
}

#[derive(Deserialize)]
struct BendSample {
    delta_r_ratio: f64,
    strain: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

fn fit_bend(samples: &Path, path: Option<PathBuf>, out: &mut dyn Write) -> Result<Outcome> {
    let rows: Vec<BendSample> = read_rows(samples)?;
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta_r_ratio, r.strain)).collect();
    let fit = fit_bending_polynomial(&pairs)?;
    writeln!(out, "samples: {}", pairs.len())?;
    writeln!(out, "coefficients (x^5 .. x^0):")?;
    for (i, c) in fit.calibration.coefficients.iter().enumerate() {
        writeln!(out, "  c{} = {c:.6}", 5 - i)?;
    }
    writeln!(out, "R^2 = {:.6}", fit.r_squared)?;
    if let Some(p) = path {
        create_parent(&p)?;
        fs::write(&p, serde_json::to_string_pretty(&fit.calibration)? + "\n")?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(Outcome::Done)
}

#[derive(Deserialize)]
struct StretchSample {
    series: String,
    rate: f64,
    delta_r_ratio: f64,
    strain: f64,
}

/// Consecutive rows with the same `series` form one recording.
fn read_stretch_dataset(cfg: &Config, path: &Path) -> Result<SequenceDataset> {
    let rows: Vec<StretchSample> = read_rows(path)?;
    let mut series: Vec<(String, StretchSeries)> = Vec::new();
    for r in rows {
        match series.last_mut() {
            Some((id, s)) if *id == r.series => {
                s.ratios.push(r.delta_r_ratio);
                s.strains.push(r.strain);
            }
            _ => series.push((
                r.series,
                StretchSeries {
                    rate: r.rate,
                    ratios: vec![r.delta_r_ratio],
                    strains: vec![r.strain],
                },
            )),
        }
    }
    let series: Vec<StretchSeries> = series.into_iter().map(|(_, s)| s).collect();
    let d = &cfg.dataset;
    SequenceDataset::from_series(&series, d.window, d.stride, d.validation_every)
}

fn train_lstm(
    cfg: &Config,
    dataset: Option<&Path>,
    path: &Path,
    sweep: bool,
    out: &mut dyn Write,
) -> Result<LstmModel> {
    let data = match dataset {
        Some(p) => read_stretch_dataset(cfg, p)?,
        None => {
            let seed = cfg.seed.unwrap_or(cfg.training.seed);
            cfg.dataset.build(&cfg.stretch_table()?, seed)?
        }
    };
    let tc = cfg.training();
    writeln!(
        out,
        "training on {} windows, validating on {} (window {}, hidden {}, lr {}, {} epochs)",
        data.train.len(),
        data.validation.len(),
        data.window,
        tc.hidden_size,
        tc.learning_rate,
        tc.epochs
    )?;
    let (model, report) = train(&data, &tc)?;
    writeln!(out, "{:>6}  {:>12}  {:>12}", "epoch", "train_mse", "valid_mse")?;
    let last = report.train_loss.len() - 1;
    let every = (last / 20).max(1);
    for (epoch, (tl, vl)) in report.train_loss.iter().zip(&report.validation_loss).enumerate() {
        if epoch % every == 0 || epoch == last || epoch == report.best_epoch {
            let mark = if epoch == report.best_epoch { "  best" } else { "" };
            writeln!(out, "{epoch:>6}  {tl:>12.6e}  {vl:>12.6e}{mark}")?;
        }
    }
    writeln!(
        out,
        "validation error (strain): mean {:.5}, sd {:.5}",
        report.error_mean, report.error_std
    )?;
    create_parent(path)?;
    save_model(&model, path)?;
    let report_path = path.with_extension("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    writeln!(out, "wrote {} and {}", path.display(), report_path.display())?;

    if sweep {
        writeln!(out, "{:>10}  {:>12}", "lr", "final_valid_mse")?;
        for (lr, loss) in learning_rate_sweep(&data, &cfg.sweep_rates, &tc)? {
            writeln!(out, "{lr:>10}  {loss:>12.6e}")?;
        }
    }
    Ok(model)
}

fn simulate(cfg: &Config, dir: &Path, out: &mut dyn Write) -> Result<(PathBuf, PathBuf)> {
    let t = cfg.topology()?;
    let scenario = cfg.scenario(&t)?;
    let session = generate_session(&scenario, &t, &cfg.sensor_setup()?)?;
    fs::create_dir_all(dir)?;
    let sensors = dir.join("sensors.csv");
    let truth = dir.join("truth.jsonl");
    save_sensor_csv(&session.sensors, &sensors)?;
    let records: Vec<FrameRecord> = session.truth.iter().map(FrameRecord::truth).collect();
    export_frames(&records, &truth)?;
    writeln!(
        out,
        "simulated {} frames (seed {}): {} and {}",
        records.len(),
        scenario.seed,
        sensors.display(),
        truth.display()
    )?;
    Ok((sensors, truth))
}

fn reconstruct(cfg: &Config, stretch: &StretchModel, sensors: &Path, path: &Path, out: &mut dyn Write) -> Result<Outcome> {
    let t = cfg.topology()?;
    let frames = read_sensor_csv(sensors)?;
    let baseline = cfg.reconstruction_baseline(&frames)?;
    let calibration = cfg.calibration()?;
    let records = reconstruct_session(&frames, &t, &calibration, stretch, baseline, &cfg.solver, cfg.clamp)?;
    create_parent(path)?;
    export_frames(&records, path)?;
    let failed = records.iter().filter(|r| r.converged != Some(true)).count();
    writeln!(
        out,
        "reconstructed {} frames, {} converged: {}",
        records.len(),
        records.len() - failed,
        path.display()
    )?;
    Ok(if failed == 0 {
        Outcome::Done
    } else {
        Outcome::NotConverged {
            failed,
            total: records.len(),
        }
    })
}

fn evaluate(cfg: &Config, frames: &Path, truth: &Path, dir: &Path, out: &mut dyn Write) -> Result<MetricsReport> {
    let t = cfg.topology()?;
    let est = read_frames(frames)?;
    let truth: Vec<_> = read_frames(truth)?.iter().map(FrameRecord::state).collect();
    let states: Vec<_> = est.iter().map(FrameRecord::state).collect();
    let mut report = MetricsReport::compute(&states, &truth, &t)?;
    let flagged: Vec<bool> = est.iter().filter_map(|r| r.converged).collect();
    if !flagged.is_empty() {
        report.converged_fraction = Some(flagged.iter().filter(|&&c| c).count() as f64 / flagged.len() as f64);
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.json"), report.to_json_string() + "\n")?;
    let mut csv = Vec::new();
    report.estimated_tendon_lengths.write_csv(&mut csv)?;
    fs::write(dir.join("tendon_lengths.csv"), csv)?;
    writeln!(out, "{}", report.summary())?;
    writeln!(out, "wrote {}", dir.join("metrics.json").display())?;
    Ok(report)
}

fn run_all(cfg: &Config, dir: &Path, out: &mut dyn Write) -> Result<Outcome> {
    let (sensors, truth) = simulate(cfg, dir, out)?;
    let stretch = match cfg.stretch_model()? {
        Some(m) => m,
        None => {
            log::info!("no LSTM model configured, training one");
            StretchModel::Lstm(train_lstm(cfg, None, &dir.join("model.json"), false, out)?)
        }
    };
    let frames = dir.join("frames.jsonl");
    let outcome = reconstruct(cfg, &stretch, &sensors, &frames, out)?;
    evaluate(cfg, &frames, &truth, dir, out)?;
    Ok(outcome)
}
