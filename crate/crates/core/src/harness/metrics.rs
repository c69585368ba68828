//! Reconstruction error against ground truth, in millimeters.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruction::StateFrame;
use crate::topology::{edge_lengths, Topology, TENDON_COUNT};

pub const NODE_HEIGHT_DEFINITION: &str =
    "sqrt(mean over frames and free nodes of (z_est - z_true)^2), mm";
pub const FACE_HEIGHT_DEFINITION: &str =
    "sqrt(mean over frames and the 8 tendon-triangle faces of (centroid z_est - centroid z_true)^2), mm";
pub const SYSTEM_DEFINITION: &str =
    "sqrt(mean over frames, free nodes and x/y/z of squared coordinate error), mm";

/// Pairs estimate and truth frames by timestamp. Both streams must carry the
/// same set of timestamps; order within each stream does not matter.
fn align<'a>(est: &'a [StateFrame], truth: &'a [StateFrame]) -> Result<Vec<(&'a StateFrame, &'a StateFrame)>> {
    if est.is_empty() || truth.is_empty() {
        return Err(Error::Empty("frame stream"));
    }
    let sorted = |s: &'a [StateFrame]| {
        let mut v: Vec<&StateFrame> = s.iter().collect();
        v.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
        v
    };
    let (e, t) = (sorted(est), sorted(truth));
    let range = |v: &[&StateFrame]| format!("[{} ms, {} ms]", v[0].t_ms, v[v.len() - 1].t_ms);
    if e.len() != t.len() {
        let lo = e[0].t_ms.max(t[0].t_ms);
        let hi = e[e.len() - 1].t_ms.min(t[t.len() - 1].t_ms);
        return Err(Error::Misaligned(format!(
            "{} estimated frames {} vs {} truth frames {}; overlapping range [{lo} ms, {hi} ms]",
            e.len(),
            range(&e),
            t.len(),
            range(&t)
        )));
    }
    e.into_iter()
        .zip(t)
        .map(|(a, b)| {
            if a.t_ms == b.t_ms {
                Ok((a, b))
            } else {
                Err(Error::Misaligned(format!(
                    "estimate at {} ms has no truth frame (nearest {} ms)",
                    a.t_ms, b.t_ms
                )))
            }
        })
        .collect()
}

fn rms_mm(sum_sq: f64, count: usize) -> f64 {
    1000.0 * (sum_sq / count as f64).sqrt()
}

fn node_sq(e: &StateFrame, t: &StateFrame, topo: &Topology) -> f64 {
    topo.free_nodes()
        .iter()
        .map(|&n| (e.coords[n].z - t.coords[n].z).powi(2))
        .sum()
}

fn face_sq(e: &StateFrame, t: &StateFrame, faces: &[[usize; 3]]) -> f64 {
    faces
        .iter()
        .map(|f| {
            let z = |s: &StateFrame| f.iter().map(|&n| s.coords[n].z).sum::<f64>() / 3.0;
            (z(e) - z(t)).powi(2)
        })
        .sum()
}

fn system_sq(e: &StateFrame, t: &StateFrame, topo: &Topology) -> f64 {
    topo.free_nodes()
        .iter()
        .map(|&n| (e.coords[n] - t.coords[n]).norm_squared())
        .sum()
}

/// Height error of the free nodes.
pub fn rmse_nodes(est: &[StateFrame], truth: &[StateFrame], topo: &Topology) -> Result<f64> {
    let pairs = align(est, truth)?;
    let sum: f64 = pairs.iter().map(|(e, t)| node_sq(e, t, topo)).sum();
    Ok(rms_mm(sum, pairs.len() * topo.free_nodes().len()))
}

/// Height error of the face centroids.
pub fn rmse_faces(est: &[StateFrame], truth: &[StateFrame], topo: &Topology) -> Result<f64> {
    let pairs = align(est, truth)?;
    let faces = topo.tendon_triangles();
    let sum: f64 = pairs.iter().map(|(e, t)| face_sq(e, t, &faces)).sum();
    Ok(rms_mm(sum, pairs.len() * faces.len()))
}

/// Full 3-D error of the free nodes.
pub fn rmse_system(est: &[StateFrame], truth: &[StateFrame], topo: &Topology) -> Result<f64> {
    let pairs = align(est, truth)?;
    let sum: f64 = pairs.iter().map(|(e, t)| system_sq(e, t, topo)).sum();
    Ok(rms_mm(sum, pairs.len() * 3 * topo.free_nodes().len()))
}

/// Per-tendon length against time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TendonSeries {
    pub t_ms: Vec<f64>,
    pub lengths_m: Vec<[f64; TENDON_COUNT]>,
}

impl TendonSeries {
    pub fn series(&self, tendon: usize) -> Vec<f64> {
        self.lengths_m.iter().map(|l| l[tendon]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header = std::iter::once("t_ms".to_string()).chain((0..TENDON_COUNT).map(|k| format!("l{k:02}")));
        w.write_record(header).map_err(|e| Error::Io(e.into()))?;
        for (t, l) in self.t_ms.iter().zip(&self.lengths_m) {
            let row = std::iter::once(*t).chain(l.iter().copied()).map(|v| v.to_string());
            w.write_record(row).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn tendon_length_series(states: &[StateFrame], topo: &Topology) -> TendonSeries {
    TendonSeries {
        t_ms: states.iter().map(|s| s.t_ms).collect(),
        lengths_m: states.iter().map(|s| edge_lengths(topo, &s.coords)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub t_ms: f64,
    pub node_height_mm: f64,
    pub face_height_mm: f64,
    pub system_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Definitions {
    pub node_height: String,
    pub face_height: String,
    pub system: String,
}

impl Default for Definitions {
    fn default() -> Self {
        Self {
            node_height: NODE_HEIGHT_DEFINITION.into(),
            face_height: FACE_HEIGHT_DEFINITION.into(),
            system: SYSTEM_DEFINITION.into(),
        }
    }
}

/// Errors measured on the physical prototype, for scale only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMagnitudes {
    pub node_height_mm: f64,
    pub face_height_mm: f64,
    pub system_mm: f64,
}

impl Default for ReferenceMagnitudes {
    fn default() -> Self {
        Self {
            node_height_mm: 21.2,
            face_height_mm: 35.8,
            system_mm: 39.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub definitions: Definitions,
    pub frames: usize,
    /// Fraction of estimate frames the solver reported converged, if known.
    pub converged_fraction: Option<f64>,
    pub node_height_rmse_mm: f64,
    pub face_height_rmse_mm: f64,
    pub system_rmse_mm: f64,
    pub reference_mm: ReferenceMagnitudes,
    pub per_frame: Vec<FrameMetrics>,
    pub estimated_tendon_lengths: TendonSeries,
}

impl MetricsReport {
    pub fn compute(est: &[StateFrame], truth: &[StateFrame], topo: &Topology) -> Result<Self> {
        let pairs = align(est, truth)?;
        let faces = topo.tendon_triangles();
        let free = topo.free_nodes().len();
        let per_frame = pairs
            .iter()
            .map(|(e, t)| FrameMetrics {
                t_ms: e.t_ms,
                node_height_mm: rms_mm(node_sq(e, t, topo), free),
                face_height_mm: rms_mm(face_sq(e, t, &faces), faces.len()),
                system_mm: rms_mm(system_sq(e, t, topo), 3 * free),
            })
            .collect();
        let ordered: Vec<StateFrame> = pairs.iter().map(|(e, _)| (*e).clone()).collect();
        Ok(Self {
            definitions: Definitions::default(),
            frames: pairs.len(),
            converged_fraction: None,
            node_height_rmse_mm: rmse_nodes(est, truth, topo)?,
            face_height_rmse_mm: rmse_faces(est, truth, topo)?,
            system_rmse_mm: rmse_system(est, truth, topo)?,
            reference_mm: ReferenceMagnitudes::default(),
            per_frame,
            estimated_tendon_lengths: tendon_length_series(&ordered, topo),
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "frames: {}\nnode height RMSE: {:.3} mm  ({})\nface height RMSE: {:.3} mm  ({})\nsystem RMSE:      {:.3} mm  ({})",
            self.frames,
            self.node_height_rmse_mm,
            self.definitions.node_height,
            self.face_height_rmse_mm,
            self.definitions.face_height,
            self.system_rmse_mm,
            self.definitions.system,
        );
        if let Some(c) = self.converged_fraction {
            s.push_str(&format!("\nconverged: {:.1}%", 100.0 * c));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_canonical;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn canonical() -> Topology {
        build_canonical(0.3).unwrap()
    }

    fn shifted(t: &Topology, t_ms: f64, f: impl Fn(usize) -> [f64; 3]) -> StateFrame {
        let mut s = StateFrame::nominal(t, t_ms);
        for n in t.free_nodes() {
            s.coords[n] += nalgebra::Vector3::from(f(n));
        }
        s
    }

    #[test]
    fn identical_streams_are_zero() {
        let t = canonical();
        let s = vec![StateFrame::nominal(&t, 0.0), shifted(&t, 1.0, |_| [0.01, 0.0, 0.02])];
        assert_eq!(rmse_nodes(&s, &s, &t).unwrap(), 0.0);
        assert_eq!(rmse_faces(&s, &s, &t).unwrap(), 0.0);
        assert_eq!(rmse_system(&s, &s, &t).unwrap(), 0.0);
    }

    #[test]
    fn one_node_nine_mm_high() {
        let t = canonical();
        let truth = vec![StateFrame::nominal(&t, 0.0)];
        let est = vec![shifted(&t, 0.0, |n| if n == 5 { [0.0, 0.0, 0.009] } else { [0.0; 3] })];
        assert_abs_diff_eq!(rmse_nodes(&est, &truth, &t).unwrap(), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn one_node_three_four_offset() {
        let t = canonical();
        let truth = vec![StateFrame::nominal(&t, 0.0)];
        let est = vec![shifted(&t, 0.0, |n| if n == 8 { [0.003, 0.0, 0.004] } else { [0.0; 3] })];
        assert_abs_diff_eq!(
            rmse_system(&est, &truth, &t).unwrap(),
            (25.0f64 / 27.0).sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn uniform_lift_by_face_composition() {
        let t = canonical();
        let truth = vec![StateFrame::nominal(&t, 0.0)];
        let est = vec![shifted(&t, 0.0, |_| [0.0, 0.0, 0.01])];
        let faces = t.tendon_triangles();
        let expected: f64 = faces
            .iter()
            .map(|f| {
                let free = f.iter().filter(|&&n| !t.is_anchored(n)).count() as f64;
                (10.0 * free / 3.0).powi(2)
            })
            .sum::<f64>()
            / faces.len() as f64;
        assert!(faces.iter().any(|f| f.iter().all(|&n| t.is_anchored(n))));
        assert!(faces.iter().any(|f| f.iter().all(|&n| !t.is_anchored(n))));
        assert_abs_diff_eq!(rmse_faces(&est, &truth, &t).unwrap(), expected.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn misaligned_streams() {
        let t = canonical();
        let a = vec![StateFrame::nominal(&t, 0.0), StateFrame::nominal(&t, 100.0)];
        let b = vec![StateFrame::nominal(&t, 0.0)];
        match rmse_nodes(&a, &b, &t) {
            Err(Error::Misaligned(msg)) => assert!(msg.contains("overlapping range")),
            other => panic!("{other:?}"),
        }
        let c = vec![StateFrame::nominal(&t, 0.0), StateFrame::nominal(&t, 50.0)];
        assert!(matches!(rmse_faces(&a, &c, &t), Err(Error::Misaligned(_))));
        assert!(matches!(rmse_system(&[], &[], &t), Err(Error::Empty(_))));
    }

    #[test]
    fn tendon_series_shapes() {
        let t = canonical();
        let states = vec![StateFrame::nominal(&t, 0.0), StateFrame::nominal(&t, 100.0)];
        let s = tendon_length_series(&states, &t);
        assert_eq!(s.lengths_m[0].len(), 24);
        for k in 0..TENDON_COUNT {
            let series = s.series(k);
            assert_abs_diff_eq!(series[0], 0.3 * 6f64.sqrt() / 4.0, epsilon = 1e-12);
            assert_eq!(series[0], series[1]);
        }
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("t_ms,l00,"));
    }

    #[test]
    fn report_traces_match_totals() {
        let t = canonical();
        let truth: Vec<_> = (0..4).map(|i| StateFrame::nominal(&t, i as f64)).collect();
        let est: Vec<_> = (0..4).map(|i| shifted(&t, i as f64, |n| [0.0, 0.001 * n as f64, 0.002 * i as f64])).collect();
        let r = MetricsReport::compute(&est, &truth, &t).unwrap();
        let mean_sq = r.per_frame.iter().map(|f| f.system_mm.powi(2)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(mean_sq.sqrt(), r.system_rmse_mm, epsilon = 1e-9);
        assert!(r.to_json_string().contains("free nodes"));
    }

    fn stream(t: &Topology, seed: &[f64]) -> Vec<StateFrame> {
        seed.chunks(3)
            .enumerate()
            .map(|(i, c)| shifted(t, i as f64 * 10.0, |n| [c[0] * n as f64, c[1], c[2] / (n as f64 + 1.0)]))
            .collect()
    }

    proptest! {
        #[test]
        fn system_matches_brute_force(a in prop::collection::vec(-0.05f64..0.05, 3..30),
                                      b in prop::collection::vec(-0.05f64..0.05, 3..30)) {
            let t = canonical();
            let n = a.len().min(b.len()) / 3 * 3;
            let (est, truth) = (stream(&t, &a[..n]), stream(&t, &b[..n]));
            let mut sum = 0.0;
            let mut count = 0;
            for (e, g) in est.iter().zip(&truth) {
                for node in 0..12 {
                    if t.anchored.contains(&node) { continue; }
                    for axis in 0..3 {
                        sum += (e.coords[node][axis] - g.coords[node][axis]).powi(2);
                        count += 1;
                    }
                }
            }
            let brute = 1000.0 * (sum / count as f64).sqrt();
            prop_assert!((rmse_system(&est, &truth, &t).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn reordering_frames_changes_nothing(a in prop::collection::vec(-0.05f64..0.05, 6..30), rot in 1usize..5) {
            let t = canonical();
            let n = a.len() / 3 * 3;
            let est = stream(&t, &a[..n]);
            let truth: Vec<_> = est.iter().map(|s| StateFrame::nominal(&t, s.t_ms)).collect();
            let mut shuffled = est.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            for f in [rmse_nodes, rmse_faces, rmse_system] {
                prop_assert_eq!(f(&est, &truth, &t).unwrap(), f(&shuffled, &truth, &t).unwrap());
            }
        }
    }
}
