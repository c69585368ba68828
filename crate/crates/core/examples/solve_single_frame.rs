//! Pushes one top node down, measures the tendon lengths, and recovers the
//! node positions from those lengths alone.
//!
//! ```text
//! cargo run --example solve_single_frame
//! ```

use std::collections::BTreeMap;

use nalgebra::Vector3;
use tenserecon::reconstruction::{solve, SolveOptions, StateFrame};
use tenserecon::simulator::deform;
use tenserecon::topology::{build_canonical, edge_lengths};

fn main() -> tenserecon::Result<()> {
    let t = build_canonical(0.30)?;
    let node = t.node_by_name("A22").expect("canonical label");
    let truth = deform(&t, &BTreeMap::from([(node, Vector3::new(0.0, 0.0, -0.03))]), 0.0)?;
    let lengths = edge_lengths(&t, &truth.coords);

    let start = std::time::Instant::now();
    let r = solve(&StateFrame::nominal(&t, 0.0), &lengths, &t, &SolveOptions::default())?;
    println!(
        "{:?} after {} iterations in {:.2?}, ‖r‖ = {:.2e}",
        r.stop,
        r.iterations,
        start.elapsed(),
        r.residual_norm
    );

    println!("\nnode   true z (mm)   solved z (mm)   error (mm)");
    for n in t.free_nodes() {
        let err = (r.state.coords[n] - truth.coords[n]).norm();
        println!(
            "{:<5} {:>12.3} {:>15.3} {:>12.2e}",
            t.label(n),
            1e3 * truth.coords[n].z,
            1e3 * r.state.coords[n].z,
            1e3 * err
        );
    }
    Ok(())
}
