//! The 30 s press-and-release session with sensor noise, reconstructed with
//! the simulator's own stretch table so no training is needed.
//!
//! ```text
//! cargo run --release --example press_three_nodes [seed]
//! ```

use tenserecon::harness::metrics::MetricsReport;
use tenserecon::harness::pipeline::{reconstruct_session, StretchModel};
use tenserecon::reconstruction::SolveOptions;
use tenserecon::simulator::{generate_session, Scenario, SensorSetup};
use tenserecon::topology::build_canonical;

fn main() -> tenserecon::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let t = build_canonical(0.30)?;
    let setup = SensorSetup::default();
    let mut scenario = Scenario::press_three_nodes(&t, 0.03);
    scenario.seed = seed;
    let session = generate_session(&scenario, &t, &setup)?;

    let stretch = StretchModel::Table(setup.stretch.clone());
    let records = reconstruct_session(
        &session.sensors,
        &t,
        &setup.calibration,
        &stretch,
        session.sensors[0].clone(),
        &SolveOptions::default(),
        true,
    )?;
    let est: Vec<_> = records.iter().map(|r| r.state()).collect();
    let report = MetricsReport::compute(&est, &session.truth, &t)?;
    println!("{}", report.summary());

    let top = t.node_by_name("A22").expect("canonical label");
    println!("\n t (s)   A22 true z (mm)   estimated z (mm)");
    for (r, truth) in records.iter().zip(&session.truth).step_by(25) {
        println!(
            "{:>6.1} {:>17.1} {:>18.1}",
            r.t_ms / 1e3,
            1e3 * truth.coords[top].z,
            1e3 * r.coords_m[top][2]
        );
    }
    Ok(())
}
