//! Builds the 6-strut tensegrity, checks it, and prints its members.
//!
//! ```text
//! cargo run --example canonical_topology
//! ```

use tenserecon::topology::{build_canonical, edge_lengths, strut_lengths};

fn main() -> tenserecon::Result<()> {
    let t = build_canonical(0.30)?;
    println!("violations: {}", t.validate().len());

    let coords = t.nominal_coords();
    println!("\nnodes (m):");
    for (n, c) in coords.iter().enumerate() {
        let tag = if t.is_anchored(n) { "  anchor" } else { "" };
        println!("  N{n:<2} {:>4}  ({:+.4}, {:+.4}, {:+.4}){tag}", t.label(n), c.x, c.y, c.z);
    }

    println!("\nstruts:");
    for (s, len) in t.struts.iter().zip(strut_lengths(&t, &coords)) {
        println!("  N{}-N{}  {len:.5} m", s[0], s[1]);
    }

    let lengths = edge_lengths(&t, &coords);
    println!("\ntendons (rest length {:.5} m):", t.tendons[0].rest_length_m);
    for td in &t.tendons {
        println!("  l{:02}  N{}-N{}  {:.5} m", td.k, td.i, td.j, lengths[td.k]);
    }

    println!("\ntendon faces: {:?}", t.tendon_triangles());
    Ok(())
}
