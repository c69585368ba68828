//! Graph and nominal geometry of the 6-strut icosahedral tensegrity.
//!
//! The canonical structure is the expanded octahedron: twelve nodes at the
//! cyclic permutations of `(0, ±1, ±2)` scaled by `L_r / 4`, six struts joining
//! nodes that differ only in the sign of their largest coordinate, and 24
//! tendons joining every pair at distance `L_r·√6/4`. The tendon triangles are
//! the 8 equilateral faces of the hull.
//!
//! Node numbering convention (`N0..N11`):
//!
//! | node | label | role |
//! |------|-------|------|
//! | N0, N1, N2 | A11, B11, C11 | anchored ground triangle |
//! | N5, N8, N11 | A22, B22, C22 | top face, opposite the anchors |
//! | others | N3, N4, N6, N7, N9, N10 | free |
//!
//! Struts are `N0–N3, N4–N5, N1–N6, N7–N8, N2–N9, N10–N11`. Tendons 0..2 close
//! the anchored triangle (`N0N1, N1N2, N0N2`); tendons 3..23 are the remaining
//! pairs in lexicographic order, starting `N0N7, N0N9` and ending `N8N9, N8N11`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NODE_COUNT: usize = 12;
pub const STRUT_COUNT: usize = 6;
pub const TENDON_COUNT: usize = 24;
pub const ANCHOR_COUNT: usize = 3;
pub const FREE_NODE_COUNT: usize = NODE_COUNT - ANCHOR_COUNT;

/// Default strut length, meters.
pub const DEFAULT_STRUT_LENGTH: f64 = 0.30;

/// Anchored ground triangle of [`build_canonical`].
pub const CANONICAL_ANCHORS: [usize; 3] = [0, 1, 2];
/// Top face of [`build_canonical`], opposite the anchored triangle.
pub const CANONICAL_TOP_FACE: [usize; 3] = [5, 8, 11];

/// Tolerance for "lies in the ground plane".
const GROUND_TOLERANCE: f64 = 1e-9;

/// Node positions in meters, indexed by node id.
pub type Coords = [Vector3<f64>; NODE_COUNT];

// Unscaled positions in node-id order.
const LATTICE: [[i32; 3]; NODE_COUNT] = [
    [0, 1, 2],
    [1, 2, 0],
    [2, 0, 1],
    [0, 1, -2],
    [0, -1, 2],
    [0, -1, -2],
    [1, -2, 0],
    [-1, 2, 0],
    [-1, -2, 0],
    [-2, 0, 1],
    [2, 0, -1],
    [-2, 0, -1],
];

const LABELS: [&str; NODE_COUNT] = [
    "A11", "B11", "C11", "N3", "N4", "A22", "N6", "N7", "B22", "N9", "N10", "C22",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tendon {
    pub k: usize,
    pub i: usize,
    pub j: usize,
    pub rest_length_m: f64,
}

/// Immutable description of the structure. Fields are public so alternate
/// labelings can be loaded from JSON; run [`Topology::validate`] on anything
/// not produced by [`build_canonical`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub strut_length_m: f64,
    pub struts: Vec<[usize; 2]>,
    pub tendons: Vec<Tendon>,
    pub anchored: [usize; ANCHOR_COUNT],
    pub nominal_coords_m: Vec<[f64; 3]>,
    /// Human-facing label per node id (convention, see module docs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Count {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    NodeOutOfRange { node: usize },
    TendonIndex { position: usize, k: usize },
    SelfLoop { i: usize },
    StrutDegree { node: usize, degree: usize },
    TendonDegree { node: usize, degree: usize },
    AnchorsNotTriangle,
    DuplicateAnchor { node: usize },
    AnchorOffGround { node: usize, z: f64 },
    TendonOnStrut { k: usize },
    DuplicateTendon { k: usize },
    NonPositiveLength { what: String },
    NonFiniteCoordinate { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Count {
                what,
                expected,
                found,
            } => write!(f, "expected {expected} {what}, found {found}"),
            Violation::NodeOutOfRange { node } => write!(f, "node id {node} out of range"),
            Violation::TendonIndex { position, k } => {
                write!(f, "tendon at position {position} has index {k}")
            }
            Violation::SelfLoop { i } => write!(f, "edge joins node {i} to itself"),
            Violation::StrutDegree { node, degree } => {
                write!(f, "node {node}: strut degree {degree} ≠ 1")
            }
            Violation::TendonDegree { node, degree } => {
                write!(f, "node {node}: node degree {degree} ≠ 4")
            }
            Violation::AnchorsNotTriangle => {
                write!(f, "anchored nodes are not a closed tendon triangle")
            }
            Violation::DuplicateAnchor { node } => write!(f, "node {node} anchored twice"),
            Violation::AnchorOffGround { node, z } => {
                write!(f, "anchored node {node} off ground plane (z = {z})")
            }
            Violation::TendonOnStrut { k } => write!(f, "tendon {k} duplicates a strut"),
            Violation::DuplicateTendon { k } => write!(f, "tendon {k} is a duplicate"),
            Violation::NonPositiveLength { what } => write!(f, "{what} is not positive"),
            Violation::NonFiniteCoordinate { node } => {
                write!(f, "node {node} has a non-finite nominal coordinate")
            }
        }
    }
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Builds the expanded-octahedron topology with the given strut length.
///
/// Tendon rest lengths default to the geometric nominal `L_r·√6/4`. The
/// anchored triangle is placed in `z = 0` with its centroid at the origin and
/// the rest of the structure above it.
pub fn build_canonical(strut_length: f64) -> Result<Topology> {
    if !(strut_length > 0.0) || !strut_length.is_finite() {
        return Err(Error::NonPositive {
            what: "strut length",
            value: strut_length,
        });
    }
    let scale = strut_length / 4.0;
    let sq = |a: usize, b: usize| -> i32 {
        (0..3)
            .map(|d| (LATTICE[a][d] - LATTICE[b][d]).pow(2))
            .sum()
    };

    let mut struts = Vec::with_capacity(STRUT_COUNT);
    let mut tendon_pairs = Vec::with_capacity(TENDON_COUNT);
    for a in 0..NODE_COUNT {
        for b in a + 1..NODE_COUNT {
            match sq(a, b) {
                16 => struts.push([a, b]),
                6 => tendon_pairs.push((a, b)),
                _ => {}
            }
        }
    }
    // anchored triangle first, in N0N1, N1N2, N0N2 order
    let [a0, a1, a2] = CANONICAL_ANCHORS;
    let head = [pair(a0, a1), pair(a1, a2), pair(a0, a2)];
    tendon_pairs.retain(|p| !head.contains(p));
    let rest_length = strut_length * 6f64.sqrt() / 4.0;
    let tendons = head
        .iter()
        .chain(tendon_pairs.iter())
        .enumerate()
        .map(|(k, &(i, j))| Tendon {
            k,
            i,
            j,
            rest_length_m: rest_length,
        })
        .collect();

    // outward normal of the anchored face points along its centroid
    let lattice: Vec<Vector3<f64>> = LATTICE
        .iter()
        .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) * scale)
        .collect();
    let face_centroid = CANONICAL_ANCHORS
        .iter()
        .map(|&n| lattice[n])
        .sum::<Vector3<f64>>()
        / 3.0;
    let rotation = Rotation3::rotation_between(&face_centroid, &-Vector3::z())
        .expect("face normal is not antiparallel to -z");
    let mut nominal: Vec<[f64; 3]> = lattice
        .iter()
        .map(|p| {
            let q = rotation * (p - face_centroid);
            [q.x, q.y, q.z]
        })
        .collect();
    for &n in &CANONICAL_ANCHORS {
        nominal[n][2] = 0.0;
    }

    Ok(Topology {
        strut_length_m: strut_length,
        struts,
        tendons,
        anchored: CANONICAL_ANCHORS,
        nominal_coords_m: nominal,
        labels: LABELS.iter().map(|s| s.to_string()).collect(),
    })
}

impl Topology {
    /// Checks every structural invariant and returns all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let count = |out: &mut Vec<Violation>, what, expected, found| {
            if expected != found {
                out.push(Violation::Count {
                    what,
                    expected,
                    found,
                });
            }
        };
        count(&mut out, "nodes", NODE_COUNT, self.nominal_coords_m.len());
        count(&mut out, "struts", STRUT_COUNT, self.struts.len());
        count(&mut out, "tendons", TENDON_COUNT, self.tendons.len());

        let in_range = |n: usize| n < NODE_COUNT;
        let mut strut_degree = [0usize; NODE_COUNT];
        let mut strut_set = BTreeSet::new();
        for &[a, b] in &self.struts {
            for n in [a, b] {
                if in_range(n) {
                    strut_degree[n] += 1;
                } else {
                    out.push(Violation::NodeOutOfRange { node: n });
                }
            }
            if a == b {
                out.push(Violation::SelfLoop { i: a });
            }
            strut_set.insert(pair(a, b));
        }

        let mut tendon_degree = [0usize; NODE_COUNT];
        let mut tendon_set = BTreeSet::new();
        for (position, t) in self.tendons.iter().enumerate() {
            if t.k != position {
                out.push(Violation::TendonIndex { position, k: t.k });
            }
            for n in [t.i, t.j] {
                if in_range(n) {
                    tendon_degree[n] += 1;
                } else {
                    out.push(Violation::NodeOutOfRange { node: n });
                }
            }
            if t.i == t.j {
                out.push(Violation::SelfLoop { i: t.i });
            }
            let p = pair(t.i, t.j);
            if strut_set.contains(&p) {
                out.push(Violation::TendonOnStrut { k: t.k });
            }
            if !tendon_set.insert(p) {
                out.push(Violation::DuplicateTendon { k: t.k });
            }
            if !(t.rest_length_m > 0.0) {
                out.push(Violation::NonPositiveLength {
                    what: format!("rest length of tendon {}", t.k),
                });
            }
        }
        for node in 0..NODE_COUNT {
            if strut_degree[node] != 1 {
                out.push(Violation::StrutDegree {
                    node,
                    degree: strut_degree[node],
                });
            }
            if tendon_degree[node] != 4 {
                out.push(Violation::TendonDegree {
                    node,
                    degree: tendon_degree[node],
                });
            }
        }
        if !(self.strut_length_m > 0.0) {
            out.push(Violation::NonPositiveLength {
                what: "strut length".into(),
            });
        }

        let [a0, a1, a2] = self.anchored;
        let mut seen = BTreeSet::new();
        for n in self.anchored {
            if !in_range(n) {
                out.push(Violation::NodeOutOfRange { node: n });
            } else if !seen.insert(n) {
                out.push(Violation::DuplicateAnchor { node: n });
            }
        }
        if ![pair(a0, a1), pair(a1, a2), pair(a0, a2)]
            .iter()
            .all(|p| tendon_set.contains(p))
        {
            out.push(Violation::AnchorsNotTriangle);
        }
        for (node, c) in self.nominal_coords_m.iter().enumerate() {
            if c.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFiniteCoordinate { node });
            }
        }
        for n in self.anchored {
            if let Some(c) = self.nominal_coords_m.get(n) {
                if c[2].abs() > GROUND_TOLERANCE {
                    out.push(Violation::AnchorOffGround { node: n, z: c[2] });
                }
            }
        }
        out
    }

    /// Returns `self` if it passes validation.
    pub fn validated(self) -> Result<Self> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidTopology(violations))
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str::<Topology>(s)?.validated()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn nominal_coords(&self) -> Coords {
        std::array::from_fn(|n| Vector3::from(self.nominal_coords_m[n]))
    }

    pub fn rest_lengths(&self) -> [f64; TENDON_COUNT] {
        std::array::from_fn(|k| self.tendons[k].rest_length_m)
    }

    pub fn is_anchored(&self, node: usize) -> bool {
        self.anchored.contains(&node)
    }

    /// Non-anchored node ids in ascending order.
    pub fn free_nodes(&self) -> [usize; FREE_NODE_COUNT] {
        let mut free = [0; FREE_NODE_COUNT];
        let mut it = (0..NODE_COUNT).filter(|n| !self.is_anchored(*n));
        for slot in &mut free {
            *slot = it.next().expect("three distinct anchors");
        }
        free
    }

    /// Indices of the tendons closing the anchored triangle.
    pub fn anchor_tendons(&self) -> [usize; 3] {
        let mut found = [usize::MAX; 3];
        let mut n = 0;
        for t in &self.tendons {
            if self.is_anchored(t.i) && self.is_anchored(t.j) && n < 3 {
                found[n] = t.k;
                n += 1;
            }
        }
        found
    }

    /// Strut partner of `node`.
    pub fn partner(&self, node: usize) -> Option<usize> {
        self.struts.iter().find_map(|&[a, b]| {
            if a == node {
                Some(b)
            } else if b == node {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Closed 3-cycles of tendons, each sorted ascending, in lexicographic order.
    pub fn tendon_triangles(&self) -> Vec<[usize; 3]> {
        let edges: BTreeSet<_> = self.tendons.iter().map(|t| pair(t.i, t.j)).collect();
        let mut faces = Vec::new();
        for a in 0..NODE_COUNT {
            for b in a + 1..NODE_COUNT {
                if !edges.contains(&(a, b)) {
                    continue;
                }
                for c in b + 1..NODE_COUNT {
                    if edges.contains(&(a, c)) && edges.contains(&(b, c)) {
                        faces.push([a, b, c]);
                    }
                }
            }
        }
        faces
    }

    pub fn label(&self, node: usize) -> String {
        self.labels
            .get(node)
            .cloned()
            .unwrap_or_else(|| format!("N{node}"))
    }

    /// Resolves `"N5"`, `"A22"` or a bare `"5"` to a node id.
    pub fn node_by_name(&self, name: &str) -> Option<usize> {
        if let Some(n) = self.labels.iter().position(|l| l == name) {
            return Some(n);
        }
        let digits = name.strip_prefix('N').unwrap_or(name);
        digits.parse().ok().filter(|n| *n < NODE_COUNT)
    }
}

/// Euclidean length of every tendon, in tendon-index order.
pub fn edge_lengths(t: &Topology, coords: &Coords) -> [f64; TENDON_COUNT] {
    std::array::from_fn(|k| {
        let td = &t.tendons[k];
        (coords[td.i] - coords[td.j]).norm()
    })
}

pub fn strut_lengths(t: &Topology, coords: &Coords) -> [f64; STRUT_COUNT] {
    std::array::from_fn(|s| {
        let [a, b] = t.struts[s];
        (coords[a] - coords[b]).norm()
    })
}
