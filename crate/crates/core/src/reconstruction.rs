//! Node positions from tendon lengths.
//!
//! Thirty distance constraints tie the nine free nodes to the three anchors:
//!
//! | rows | constraint |
//! |------|------------|
//! | 0..3 | tendons closing the anchored triangle, `|N_iN_j| − L_k` |
//! | 3..9 | struts in topology order, `|N_iN_j| − L_r` |
//! | 9..30 | remaining 21 tendons in tendon-index order |
//!
//! The 27 unknowns are the free-node coordinates (ascending node id, x/y/z).
//! [`solve`] minimizes `½‖r‖²` with Levenberg-damped Gauss–Newton and
//! [`Tracker`] warm-starts each frame from the previous solution.

use std::sync::{Condvar, Mutex};

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Coords, Topology, FREE_NODE_COUNT, NODE_COUNT, STRUT_COUNT, TENDON_COUNT};

pub const EQUATION_COUNT: usize = 3 + STRUT_COUNT + (TENDON_COUNT - 3);
pub const UNKNOWN_COUNT: usize = 3 * FREE_NODE_COUNT;

/// Connected nodes closer than this are treated as corrupt input.
pub const MIN_EDGE_LENGTH: f64 = 1e-9;

pub type Residuals = SVector<f64, EQUATION_COUNT>;
pub type Jacobian = SMatrix<f64, EQUATION_COUNT, UNKNOWN_COUNT>;
type Normal = SMatrix<f64, UNKNOWN_COUNT, UNKNOWN_COUNT>;
type Step = SVector<f64, UNKNOWN_COUNT>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t_ms: f64,
    pub coords: Coords,
}

impl StateFrame {
    pub fn nominal(t: &Topology, t_ms: f64) -> Self {
        Self {
            t_ms,
            coords: t.nominal_coords(),
        }
    }

    pub fn anchored_flags(&self, t: &Topology) -> [bool; NODE_COUNT] {
        std::array::from_fn(|n| t.is_anchored(n))
    }

    /// Anchored coordinates equal the topology's exactly and everything is finite.
    pub fn check(&self, t: &Topology) -> Result<()> {
        let nominal = t.nominal_coords();
        for &n in &t.anchored {
            if self.coords[n] != nominal[n] {
                return Err(Error::AnchorViolation { node: n });
            }
        }
        if self.coords.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("node coordinates"));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.coords.iter().sum::<Vector3<f64>>() / NODE_COUNT as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Damping {
    /// λ ×10 on a rejected step; an accepted step scales λ by
    /// `max(1/3, 1 − (2ρ − 1)³)`, where ρ is actual over predicted cost
    /// reduction. Near the flexible nominal pose the useful λ falls between
    /// powers of ten, where fixed factors crawl.
    GainRatio,
    /// λ ×10 on a rejected step, ÷10 on an accepted one.
    Levenberg,
    /// Undamped steps, always accepted.
    GaussNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Stop when `‖r‖₂` falls to this, meters.
    pub residual_tolerance: f64,
    /// Stop when a step's 2-norm falls below this, meters.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping: Damping,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            residual_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            damping: Damping::GainRatio,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Residual,
    Step,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub state: StateFrame,
    pub converged: bool,
    pub stop: StopReason,
    pub iterations: usize,
    pub residual_norm: f64,
    pub residuals: [f64; EQUATION_COUNT],
    /// The solver landed below the ground plane and the state was reflected.
    pub reflected: bool,
}

#[derive(Clone, Copy, Debug)]
enum Target {
    Tendon(usize),
    Strut,
}

/// Equation rows and free-node column map for one topology.
#[derive(Clone, Debug)]
struct Constraints {
    rows: [(usize, usize, Target); EQUATION_COUNT],
    column: [Option<usize>; NODE_COUNT],
    strut_length: f64,
}

impl Constraints {
    fn new(t: &Topology) -> Self {
        let anchor_tendons = t.anchor_tendons();
        let mut rows = Vec::with_capacity(EQUATION_COUNT);
        for &k in &anchor_tendons {
            let td = &t.tendons[k];
            rows.push((td.i, td.j, Target::Tendon(k)));
        }
        for &[a, b] in &t.struts {
            rows.push((a, b, Target::Strut));
        }
        for td in &t.tendons {
            if !anchor_tendons.contains(&td.k) {
                rows.push((td.i, td.j, Target::Tendon(td.k)));
            }
        }
        let mut column = [None; NODE_COUNT];
        for (slot, n) in t.free_nodes().into_iter().enumerate() {
            column[n] = Some(3 * slot);
        }
        Self {
            rows: rows.try_into().expect("validated topology has 30 constraints"),
            column,
            strut_length: t.strut_length_m,
        }
    }

    fn residuals(&self, coords: &Coords, lengths: &[f64; TENDON_COUNT]) -> Residuals {
        Residuals::from_fn(|row, _| {
            let (a, b, target) = self.rows[row];
            let d = (coords[a] - coords[b]).norm();
            d - match target {
                Target::Tendon(k) => lengths[k],
                Target::Strut => self.strut_length,
            }
        })
    }

    fn jacobian(&self, coords: &Coords) -> Result<Jacobian> {
        let mut j = Jacobian::zeros();
        for (row, &(a, b, _)) in self.rows.iter().enumerate() {
            let d = coords[a] - coords[b];
            let len = d.norm();
            if !(len >= MIN_EDGE_LENGTH) {
                return Err(Error::SingularGeometry { a, b });
            }
            let u = d / len;
            if let Some(c) = self.column[a] {
                j.fixed_view_mut::<1, 3>(row, c).copy_from(&u.transpose());
            }
            if let Some(c) = self.column[b] {
                j.fixed_view_mut::<1, 3>(row, c).copy_from(&(-u).transpose());
            }
        }
        Ok(j)
    }

    fn apply(&self, coords: &Coords, step: &Step) -> Coords {
        let mut out = *coords;
        for (n, c) in self.column.iter().enumerate() {
            if let Some(c) = *c {
                out[n] += step.fixed_rows::<3>(c).into_owned();
            }
        }
        out
    }
}

fn check_lengths(lengths: &[f64; TENDON_COUNT]) -> Result<()> {
    for (k, &l) in lengths.iter().enumerate() {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::NonPositive {
                what: "target tendon length",
                value: l,
            }
            .at_sensor(k));
        }
    }
    Ok(())
}

/// The 30 constraint residuals, in the row order documented on the module.
pub fn residuals(coords: &Coords, tendon_lengths: &[f64; TENDON_COUNT], t: &Topology) -> Result<Residuals> {
    check_lengths(tendon_lengths)?;
    Ok(Constraints::new(t).residuals(coords, tendon_lengths))
}

/// Analytic `∂r/∂(free-node coordinates)`; anchored nodes have no columns.
pub fn jacobian(coords: &Coords, t: &Topology) -> Result<Jacobian> {
    Constraints::new(t).jacobian(coords)
}

fn reflect(coords: &Coords, t: &Topology) -> Coords {
    std::array::from_fn(|n| {
        let mut c = coords[n];
        if !t.is_anchored(n) {
            c.z = -c.z;
        }
        c
    })
}

/// Damped least-squares fit of the free nodes to the target tendon lengths.
///
/// If the solution ends up with its centroid below the anchor plane, it is
/// mirrored through that plane (every distance is preserved) and the result
/// is flagged `reflected`.
pub fn solve(
    initial: &StateFrame,
    tendon_lengths: &[f64; TENDON_COUNT],
    t: &Topology,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    initial.check(t)?;
    check_lengths(tendon_lengths)?;
    let cons = Constraints::new(t);
    let mut coords = initial.coords;
    let mut r = cons.residuals(&coords, tendon_lengths);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residual"));
    }
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = opts.initial_damping;
    let mut iterations = 0;

    let stop = 'outer: loop {
        if r.norm() <= opts.residual_tolerance {
            break StopReason::Residual;
        }
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }
        let j = cons.jacobian(&coords)?;
        let normal: Normal = j.transpose() * j;
        let gradient: Step = j.transpose() * r;
        iterations += 1;
        loop {
            let step = match opts.damping {
                Damping::GainRatio | Damping::Levenberg => {
                    let damped = normal + Normal::identity() * lambda;
                    match damped.cholesky() {
                        Some(ch) => -ch.solve(&gradient),
                        None => {
                            lambda *= 10.0;
                            continue;
                        }
                    }
                }
                Damping::GaussNewton => normal
                    .svd(true, true)
                    .solve(&-gradient, 1e-12 * normal.norm())
                    .map_err(|_| Error::NonFinite("Gauss-Newton step"))?,
            };
            if step.norm() < opts.step_tolerance {
                break 'outer StopReason::Step;
            }
            let candidate = cons.apply(&coords, &step);
            let r_new = cons.residuals(&candidate, tendon_lengths);
            if r_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("residual"));
            }
            let cost_new = 0.5 * r_new.norm_squared();
            if opts.damping == Damping::GaussNewton || cost_new < cost {
                let factor = match opts.damping {
                    Damping::GainRatio => {
                        let predicted = -(gradient.dot(&step) + 0.5 * (j * step).norm_squared());
                        let rho = (cost - cost_new) / predicted;
                        (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3))
                    }
                    _ => 0.1,
                };
                coords = candidate;
                r = r_new;
                cost = cost_new;
                lambda = (lambda * factor).max(1e-15);
                log::trace!("iteration {iterations}: cost {cost:e}, step {:e}, lambda {lambda:e}", step.norm());
                break;
            }
            lambda *= 10.0;
        }
    };

    let mut state = StateFrame {
        t_ms: initial.t_ms,
        coords,
    };
    let reflected = state.centroid().z < 0.0;
    if reflected {
        log::debug!("t = {} ms: solution below ground, reflecting", state.t_ms);
        state.coords = reflect(&state.coords, t);
        r = cons.residuals(&state.coords, tendon_lengths);
    }
    Ok(SolveResult {
        state,
        converged: stop != StopReason::MaxIterations,
        stop,
        iterations,
        residual_norm: r.norm(),
        residuals: r.into(),
        reflected,
    })
}

/// Frame-to-frame solver: each frame starts from the previous good solution.
#[derive(Clone, Debug)]
pub struct Tracker<'a> {
    topology: &'a Topology,
    opts: SolveOptions,
    last_good: StateFrame,
    last_t: Option<f64>,
    skipped: usize,
}

impl<'a> Tracker<'a> {
    pub fn new(topology: &'a Topology, opts: SolveOptions) -> Self {
        Self {
            topology,
            opts,
            last_good: StateFrame::nominal(topology, 0.0),
            last_t: None,
            skipped: 0,
        }
    }

    pub fn last_good(&self) -> &StateFrame {
        &self.last_good
    }

    /// Frames dropped upstream under latest-wins delivery.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn note_skipped(&mut self, n: usize) {
        self.skipped += n;
    }

    /// Solves one frame. Errors leave the tracker on its last good state.
    pub fn push(&mut self, t_ms: f64, lengths: &[f64; TENDON_COUNT]) -> Result<SolveResult> {
        if let Some(prev) = self.last_t {
            if !(t_ms > prev) {
                return Err(Error::Ordering { prev, next: t_ms });
            }
        }
        self.last_t = Some(t_ms);
        let initial = StateFrame {
            t_ms,
            coords: self.last_good.coords,
        };
        let result = solve(&initial, lengths, self.topology, &self.opts)?;
        self.last_good = result.state.clone();
        Ok(result)
    }
}

/// Solves an ordered stream of `(t_ms, lengths)` frames, one result per frame.
pub fn track<I>(frames: I, t: &Topology, opts: &SolveOptions) -> Vec<Result<SolveResult>>
where
    I: IntoIterator<Item = (f64, [f64; TENDON_COUNT])>,
{
    let mut tracker = Tracker::new(t, opts.clone());
    frames
        .into_iter()
        .map(|(t_ms, l)| tracker.push(t_ms, &l))
        .collect()
}

/// Single-slot mailbox: a newer item replaces an unconsumed one, and the
/// replaced items are counted.
#[derive(Debug)]
pub struct LatestSlot<T> {
    inner: Mutex<SlotState<T>>,
    ready: Condvar,
}

#[derive(Debug)]
struct SlotState<T> {
    item: Option<T>,
    closed: bool,
    overwritten: usize,
}

impl<T> Default for LatestSlot<T> {
    fn default() -> Self {
        Self {
            inner: Mutex::new(SlotState {
                item: None,
                closed: false,
                overwritten: 0,
            }),
            ready: Condvar::new(),
        }
    }
}

impl<T> LatestSlot<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, item: T) {
        let mut s = self.inner.lock().unwrap();
        if s.item.replace(item).is_some() {
            s.overwritten += 1;
        }
        self.ready.notify_one();
    }

    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    /// Blocks for the next item; `None` once closed and drained. The count is
    /// the number of items overwritten since the previous take.
    pub fn take(&self) -> Option<(T, usize)> {
        let mut s = self.inner.lock().unwrap();
        loop {
            if let Some(item) = s.item.take() {
                let skipped = std::mem::take(&mut s.overwritten);
                return Some((item, skipped));
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).unwrap();
        }
    }
}

#[derive(Debug)]
pub struct TrackSummary {
    pub results: Vec<Result<SolveResult>>,
    pub skipped: usize,
}

/// Consumes frames from a [`LatestSlot`] until it is closed.
pub fn track_latest(
    slot: &LatestSlot<(f64, [f64; TENDON_COUNT])>,
    t: &Topology,
    opts: &SolveOptions,
) -> TrackSummary {
    let mut tracker = Tracker::new(t, opts.clone());
    let mut results = Vec::new();
    while let Some(((t_ms, lengths), skipped)) = slot.take() {
        tracker.note_skipped(skipped);
        results.push(tracker.push(t_ms, &lengths));
    }
    TrackSummary {
        results,
        skipped: tracker.skipped(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_canonical, edge_lengths, CANONICAL_TOP_FACE};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical() -> Topology {
        build_canonical(0.3).unwrap()
    }

    fn perturbed(t: &Topology, rng: &mut impl Rng, amount: f64) -> Coords {
        let mut c = t.nominal_coords();
        for n in t.free_nodes() {
            c[n] += Vector3::from_fn(|_, _| rng.random_range(-amount..amount));
        }
        c
    }

    #[test]
    fn nominal_residuals_vanish() {
        let t = canonical();
        let r = residuals(&t.nominal_coords(), &t.rest_lengths(), &t).unwrap();
        assert_eq!(r.len(), 30);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn row_order_follows_constraint_groups() {
        let t = canonical();
        let cons = Constraints::new(&t);
        let pairs: Vec<_> = cons.rows.iter().map(|r| (r.0, r.1)).collect();
        assert_eq!(&pairs[..3], &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(&pairs[3..9], &[(0, 3), (1, 6), (2, 9), (4, 5), (7, 8), (10, 11)]);
        assert_eq!(pairs[9], (0, 7));
        assert_eq!(pairs[29], (8, 11));
    }

    #[test]
    fn perturbed_residuals_match_brute_force() {
        let t = canonical();
        let mut c = t.nominal_coords();
        c[5].x += 0.01;
        let lengths = t.rest_lengths();
        let r = residuals(&c, &lengths, &t).unwrap();
        let cons = Constraints::new(&t);
        for (row, &(a, b, target)) in cons.rows.iter().enumerate() {
            let d = ((c[a].x - c[b].x).powi(2) + (c[a].y - c[b].y).powi(2) + (c[a].z - c[b].z).powi(2)).sqrt();
            let want = match target {
                Target::Tendon(k) => d - lengths[k],
                Target::Strut => d - 0.3,
            };
            assert_abs_diff_eq!(r[row], want, epsilon = 1e-15);
            if a != 5 && b != 5 {
                assert!(r[row].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residuals_reject_bad_lengths() {
        let t = canonical();
        let mut l = t.rest_lengths();
        l[3] = 0.0;
        assert!(residuals(&t.nominal_coords(), &l, &t).is_err());
    }

    fn central_difference(t: &Topology, c: &Coords, h: f64) -> Jacobian {
        let lengths = t.rest_lengths();
        let mut out = Jacobian::zeros();
        for (slot, n) in t.free_nodes().into_iter().enumerate() {
            for axis in 0..3 {
                let mut plus = *c;
                plus[n][axis] += h;
                let mut minus = *c;
                minus[n][axis] -= h;
                let d = (residuals(&plus, &lengths, t).unwrap() - residuals(&minus, &lengths, t).unwrap())
                    / (2.0 * h);
                out.set_column(3 * slot + axis, &d);
            }
        }
        out
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let t = canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let c = perturbed(&t, &mut rng, 0.02);
            let j = jacobian(&c, &t).unwrap();
            let fd = central_difference(&t, &c, 1e-7);
            let scale = j.amax();
            assert!((j - fd).amax() / scale < 1e-6);
        }
    }

    #[test]
    fn jacobian_shape_and_anchor_rows() {
        let t = canonical();
        let j = jacobian(&t.nominal_coords(), &t).unwrap();
        assert_eq!(j.ncols(), 27);
        // rows joining two anchors carry no free columns
        for row in 0..3 {
            assert_eq!(j.row(row).amax(), 0.0);
        }
        // no strut joins two anchors
        for row in 3..9 {
            assert!(j.row(row).amax() > 0.0);
        }
    }

    #[test]
    fn coincident_nodes_are_singular() {
        let t = canonical();
        let mut c = t.nominal_coords();
        c[3] = c[0];
        assert!(matches!(
            jacobian(&c, &t),
            Err(Error::SingularGeometry { a: 0, b: 3 })
        ));
    }

    #[test]
    fn nominal_normal_matrix_has_one_flex() {
        // The nominal pose is a prestressable equilibrium: one self-stress,
        // hence exactly one infinitesimal mechanism with the anchors pinned.
        let t = canonical();
        let j = jacobian(&t.nominal_coords(), &t).unwrap();
        let sv = (j.transpose() * j).singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[0] < 1e-12, "smallest {}", sorted[0]);
        assert!(sorted[1] > 1e-3, "second smallest {}", sorted[1]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = perturbed(&t, &mut rng, 0.02);
        let j = jacobian(&c, &t).unwrap();
        assert!((j.transpose() * j).singular_values().min() > 1e-8);
    }

    #[test]
    fn starting_at_optimum() {
        let t = canonical();
        let r = solve(
            &StateFrame::nominal(&t, 0.0),
            &t.rest_lengths(),
            &t,
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!(r.residual_norm < 1e-12);
    }

    #[test]
    fn zero_iterations_returns_initial() {
        let t = canonical();
        let mut l = t.rest_lengths();
        l[10] *= 1.05;
        let init = StateFrame::nominal(&t, 3.0);
        let r = solve(
            &init,
            &l,
            &t,
            &SolveOptions {
                max_iterations: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.converged);
        assert_eq!(r.state, init);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn moved_anchor_is_rejected() {
        let t = canonical();
        let mut init = StateFrame::nominal(&t, 0.0);
        init.coords[2].x += 1e-6;
        assert!(matches!(
            solve(&init, &t.rest_lengths(), &t, &SolveOptions::default()),
            Err(Error::AnchorViolation { node: 2 })
        ));
    }

    /// Nearest strut-consistent state to `c`: free strut ends share the
    /// length correction, an anchored end stays put.
    fn project_struts(t: &Topology, mut c: Coords) -> Coords {
        for &[a, b] in &t.struts {
            let d = c[b] - c[a];
            let fix = (t.strut_length_m - d.norm()) * d.normalize();
            match (t.is_anchored(a), t.is_anchored(b)) {
                (true, _) => c[b] += fix,
                (_, true) => c[a] -= fix,
                _ => {
                    c[a] -= fix * 0.5;
                    c[b] += fix * 0.5;
                }
            }
        }
        c
    }

    fn pressed_state(t: &Topology, depth: f64) -> Coords {
        let mut c = t.nominal_coords();
        for n in CANONICAL_TOP_FACE {
            c[n].z -= depth;
        }
        project_struts(t, c)
    }

    #[test]
    fn recovers_pressed_state() {
        let t = canonical();
        let truth = pressed_state(&t, 0.03);
        let lengths = edge_lengths(&t, &truth);
        let r = solve(&StateFrame::nominal(&t, 0.0), &lengths, &t, &SolveOptions::default()).unwrap();
        assert!(r.converged);
        let mse: f64 = t
            .free_nodes()
            .iter()
            .map(|&n| (r.state.coords[n] - truth[n]).norm_squared())
            .sum::<f64>()
            / 9.0;
        assert!(mse.sqrt() < 1e-4, "rmse {}", mse.sqrt());
    }

    #[test]
    fn solutions_always_fit_consistent_lengths() {
        // Lengths near nominal can have two exact preimages, so the
        // guarantee checked here is on the residual, not the state.
        let t = canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let state = project_struts(&t, perturbed(&t, &mut rng, 0.03));
            let lengths = edge_lengths(&t, &state);
            let r = solve(&StateFrame::nominal(&t, 0.0), &lengths, &t, &SolveOptions::default()).unwrap();
            assert!(r.converged);
            assert!(r.residual_norm < 1e-10);
        }
    }

    #[test]
    fn recovers_single_pressed_node() {
        let t = canonical();
        let mut c = t.nominal_coords();
        c[5].z -= 0.03;
        let truth = project_struts(&t, c);
        let r = solve(&StateFrame::nominal(&t, 0.0), &edge_lengths(&t, &truth), &t, &SolveOptions::default())
            .unwrap();
        let mse: f64 = t
            .free_nodes()
            .iter()
            .map(|&n| (r.state.coords[n] - truth[n]).norm_squared())
            .sum::<f64>()
            / 9.0;
        assert!(mse.sqrt() < 1e-4, "rmse {}", mse.sqrt());
    }

    #[test]
    fn accepted_steps_decrease_cost() {
        let t = canonical();
        let truth = pressed_state(&t, 0.04);
        let lengths = edge_lengths(&t, &truth);
        let mut previous = f64::INFINITY;
        for iters in 0..8 {
            let r = solve(
                &StateFrame::nominal(&t, 0.0),
                &lengths,
                &t,
                &SolveOptions {
                    max_iterations: iters,
                    ..Default::default()
                },
            )
            .unwrap();
            let cost = 0.5 * r.residual_norm.powi(2);
            assert!(cost <= previous);
            previous = cost;
        }
    }

    #[test]
    fn every_damping_option_converges() {
        let t = canonical();
        let truth = pressed_state(&t, 0.02);
        let lengths = edge_lengths(&t, &truth);
        for damping in [Damping::GainRatio, Damping::Levenberg, Damping::GaussNewton] {
            let r = solve(
                &StateFrame::nominal(&t, 0.0),
                &lengths,
                &t,
                &SolveOptions {
                    damping,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(r.residual_norm < 1e-9, "{damping:?}");
        }
    }

    #[test]
    fn mirrored_start_is_reflected_back() {
        let t = canonical();
        let truth = pressed_state(&t, 0.02);
        let lengths = edge_lengths(&t, &truth);
        let init = StateFrame {
            t_ms: 0.0,
            coords: reflect(&t.nominal_coords(), &t),
        };
        let r = solve(&init, &lengths, &t, &SolveOptions::default()).unwrap();
        assert!(r.reflected);
        assert!(r.state.centroid().z > 0.0);
        for n in t.anchored {
            assert_eq!(r.state.coords[n], t.nominal_coords()[n]);
        }
        assert!(r.residual_norm < 1e-10);
    }

    #[test]
    fn constant_stream_is_a_fixed_point() {
        let t = canonical();
        let lengths = edge_lengths(&t, &pressed_state(&t, 0.015));
        let out = track((0..5).map(|i| (i as f64 * 100.0, lengths)), &t, &SolveOptions::default());
        let states: Vec<_> = out.into_iter().map(|r| r.unwrap().state.coords).collect();
        for s in &states[1..] {
            for n in 0..NODE_COUNT {
                assert_abs_diff_eq!((s[n] - states[0][n]).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn out_of_order_frame_is_reported_and_skipped() {
        let t = canonical();
        let l = t.rest_lengths();
        let out = track([(0.0, l), (100.0, l), (50.0, l), (200.0, l)], &t, &SolveOptions::default());
        assert!(out[0].is_ok() && out[1].is_ok() && out[3].is_ok());
        assert!(matches!(out[2], Err(Error::Ordering { .. })));
    }

    #[test]
    fn bad_frame_keeps_last_good_state() {
        let t = canonical();
        let good = edge_lengths(&t, &pressed_state(&t, 0.01));
        let mut bad = good;
        bad[4] = -1.0;
        let mut tracker = Tracker::new(&t, SolveOptions::default());
        tracker.push(0.0, &good).unwrap();
        let before = tracker.last_good().clone();
        assert!(tracker.push(100.0, &bad).is_err());
        assert_eq!(tracker.last_good().coords, before.coords);
        assert!(tracker.push(200.0, &good).unwrap().converged);
    }

    #[test]
    fn anchors_bit_identical_in_every_result() {
        let t = canonical();
        let nominal = t.nominal_coords();
        let frames = (0..10).map(|i| (i as f64, edge_lengths(&t, &pressed_state(&t, 0.003 * i as f64))));
        for r in track(frames, &t, &SolveOptions::default()) {
            let r = r.unwrap();
            for n in t.anchored {
                assert_eq!(r.state.coords[n], nominal[n]);
            }
        }
    }

    #[test]
    fn latest_wins_counts_overwrites() {
        let t = canonical();
        let l = t.rest_lengths();
        let slot = LatestSlot::new();
        // everything published before the consumer starts: only the last survives
        for i in 0..5 {
            slot.publish((i as f64, l));
        }
        slot.close();
        let summary = track_latest(&slot, &t, &SolveOptions::default());
        assert_eq!(summary.results.len(), 1);
        assert_eq!(summary.skipped, 4);
        assert_eq!(summary.results[0].as_ref().unwrap().state.t_ms, 4.0);
    }

    #[test]
    fn latest_wins_with_concurrent_producer() {
        let t = canonical();
        let slot = LatestSlot::new();
        let total = 200;
        let summary = std::thread::scope(|s| {
            s.spawn(|| {
                for i in 0..total {
                    let depth = 0.0001 * (i % 50) as f64;
                    slot.publish((i as f64, edge_lengths(&t, &pressed_state(&t, depth))));
                }
                slot.close();
            });
            track_latest(&slot, &t, &SolveOptions::default())
        });
        assert_eq!(summary.results.len() + summary.skipped, total);
        let times: Vec<f64> = summary
            .results
            .iter()
            .map(|r| r.as_ref().unwrap().state.t_ms)
            .collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*times.last().unwrap(), (total - 1) as f64);
    }
}
