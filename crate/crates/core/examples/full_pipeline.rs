//! Every stage through files, as the `run-all` command does: simulate, train
//! the LSTM, reconstruct from the CSV, evaluate.
//!
//! ```text
//! cargo run --release --example full_pipeline [out_dir]
//! ```

use std::path::PathBuf;

use tenserecon::harness::io::{export_frames, read_frames, read_sensor_csv, save_sensor_csv, FrameRecord};
use tenserecon::harness::metrics::MetricsReport;
use tenserecon::harness::pipeline::{reconstruct_session, StretchModel};
use tenserecon::lstm::{save_model, train, StretchDatasetConfig, TrainConfig};
use tenserecon::reconstruction::SolveOptions;
use tenserecon::simulator::{generate_session, Scenario, SensorSetup};
use tenserecon::topology::build_canonical;

fn main() -> tenserecon::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tenserecon_full_pipeline"));
    std::fs::create_dir_all(&dir)?;
    let seed = 7;

    let t = build_canonical(0.30)?;
    let setup = SensorSetup::default();
    let mut scenario = Scenario::press_three_nodes(&t, 0.03);
    scenario.seed = seed;
    let session = generate_session(&scenario, &t, &setup)?;
    save_sensor_csv(&session.sensors, dir.join("sensors.csv"))?;
    let truth: Vec<_> = session.truth.iter().map(FrameRecord::truth).collect();
    export_frames(&truth, dir.join("truth.jsonl"))?;

    let data = StretchDatasetConfig::default().build(&setup.stretch, seed)?;
    let (model, report) = train(&data, &TrainConfig { seed, ..Default::default() })?;
    save_model(&model, dir.join("model.json"))?;
    println!(
        "LSTM: validation MSE {:.3e} -> {:.3e} (best epoch {})",
        report.validation_loss[0], report.validation_loss[report.best_epoch], report.best_epoch
    );

    let frames = read_sensor_csv(dir.join("sensors.csv"))?;
    let records = reconstruct_session(
        &frames,
        &t,
        &setup.calibration,
        &StretchModel::Lstm(model),
        frames[0].clone(),
        &SolveOptions::default(),
        true,
    )?;
    export_frames(&records, dir.join("frames.jsonl"))?;

    let est: Vec<_> = read_frames(dir.join("frames.jsonl"))?.iter().map(FrameRecord::state).collect();
    let metrics = MetricsReport::compute(&est, &session.truth, &t)?;
    std::fs::write(dir.join("metrics.json"), metrics.to_json_string())?;
    println!("{}", metrics.summary());
    println!("outputs in {}", dir.display());
    Ok(())
}
