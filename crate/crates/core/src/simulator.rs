//! Synthetic sessions: kinematic ground truth and the resistances it would
//! produce, standing in for a physical rig and its acquisition hardware.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruction::StateFrame;
use crate::sensor::{BendCalibration, SensorFrame, StretchTable, REST_STRAIN_TOLERANCE};
use crate::topology::{edge_lengths, strut_lengths, Topology, NODE_COUNT, TENDON_COUNT};

pub const DEFAULT_BASELINE_OHMS: f64 = 5.8e6;
pub const DEFAULT_NOISE_BAND: [f64; 2] = [-0.23, 0.13];

/// Largest strut-length error a deformed state may carry, meters.
pub const STRUT_TOLERANCE: f64 = 1e-10;

/// Displaces the given nodes, then projects onto the strut-length manifold.
///
/// Every node sits on exactly one strut, so the nearest strut-consistent state
/// is found strut by strut: a free pair shares the length correction along
/// the strut axis, and a strut with an anchored end moves only its free end.
pub fn deform(
    t: &Topology,
    displacements: &BTreeMap<usize, Vector3<f64>>,
    t_ms: f64,
) -> Result<StateFrame> {
    let mut c = t.nominal_coords();
    for (&n, d) in displacements {
        if n >= NODE_COUNT {
            return Err(Error::Config(format!("no node {n}")));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement"));
        }
        if t.is_anchored(n) {
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            return Err(Error::AnchorViolation { node: n });
        }
        c[n] += d;
    }
    for &[a, b] in &t.struts {
        let axis = c[b] - c[a];
        let len = axis.norm();
        if len < 1e-12 {
            return Err(Error::SingularGeometry { a, b });
        }
        if (len - t.strut_length_m).abs() < 1e-14 {
            continue;
        }
        let fix = axis * ((t.strut_length_m - len) / len);
        match (t.is_anchored(a), t.is_anchored(b)) {
            (true, true) => {}
            (true, false) => c[b] += fix,
            (false, true) => c[a] -= fix,
            (false, false) => {
                c[a] -= fix * 0.5;
                c[b] += fix * 0.5;
            }
        }
    }
    let worst = strut_lengths(t, &c)
        .iter()
        .map(|l| (l - t.strut_length_m).abs())
        .fold(0.0, f64::max);
    if !(worst < STRUT_TOLERANCE) {
        return Err(Error::Config(format!(
            "strut projection left a {worst:e} m length error"
        )));
    }
    Ok(StateFrame { t_ms, coords: c })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    #[default]
    Uniform,
    /// Normal centered on the band with σ = width/6, resampled until inside.
    GaussianTruncated,
}

/// Additive noise on `ΔR/R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub band: [f64; 2],
    /// Overrides the scenario seed when set.
    pub seed: Option<u64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Uniform,
            band: DEFAULT_NOISE_BAND,
            seed: None,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.band;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("noise band [{lo}, {hi}] is empty")));
        }
        Ok(())
    }

    pub fn sampler(&self, seed: u64) -> Result<NoiseSampler> {
        self.validate()?;
        Ok(NoiseSampler {
            model: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(seed)),
        })
    }
}

#[derive(Clone, Debug)]
pub struct NoiseSampler {
    model: NoiseModel,
    rng: ChaCha8Rng,
}

impl NoiseSampler {
    pub fn sample(&mut self) -> f64 {
        let [lo, hi] = self.model.band;
        match self.model.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Uniform => self.rng.random_range(lo..hi),
            NoiseKind::GaussianTruncated => {
                let normal = Normal::new(0.5 * (lo + hi), (hi - lo) / 6.0).expect("band validated");
                loop {
                    let v = normal.sample(&mut self.rng);
                    if (lo..hi).contains(&v) {
                        break v;
                    }
                }
            }
        }
    }
}

/// Sensor readings for a known state: strain per tendon, through the inverse
/// sensor models to `ΔR/R`, plus noise, to resistance against `baseline`.
pub fn resistances_from_state(
    s: &StateFrame,
    t: &Topology,
    cal: &BendCalibration,
    stretch: &StretchTable,
    baseline: &[f64; TENDON_COUNT],
    noise: &mut NoiseSampler,
) -> Result<SensorFrame> {
    let lengths = edge_lengths(t, &s.coords);
    let mut resistances = [0.0; TENDON_COUNT];
    for k in 0..TENDON_COUNT {
        let at = |e: Error| e.at_sensor(k);
        if !(lengths[k] > 0.0) {
            return Err(at(Error::NonPositive {
                what: "tendon length",
                value: lengths[k],
            }));
        }
        let strain = lengths[k] / t.tendons[k].rest_length_m - 1.0;
        let ratio = if strain < -REST_STRAIN_TOLERANCE {
            cal.inverse(strain)
        } else {
            stretch.ratio_for_strain(strain.max(0.0))
        }
        .map_err(at)?;
        let r = baseline[k] * (1.0 + ratio + noise.sample());
        if !(r > 0.0) {
            return Err(at(Error::NonPositive {
                what: "simulated resistance",
                value: r,
            }));
        }
        resistances[k] = r;
    }
    Ok(SensorFrame::new(s.t_ms, resistances))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t_ms: f64,
    /// Node id (`"5"`) or label (`"A22"`) to displacement, meters.
    pub displacements: BTreeMap<String, [f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseModel,
    pub keyframes: Vec<Keyframe>,
}

fn resolve_node(t: &Topology, key: &str) -> Result<usize> {
    key.parse::<usize>()
        .ok()
        .filter(|&n| n < NODE_COUNT)
        .or_else(|| t.node_by_name(key))
        .ok_or_else(|| Error::Config(format!("unknown node \"{key}\"")))
}

impl Scenario {
    /// Three top-face nodes pushed straight down by `depth` and released:
    /// rest to 5 s, ramp to 10 s, hold to 20 s, release by 25 s, rest to 30 s.
    pub fn press_three_nodes(t: &Topology, depth: f64) -> Self {
        let top = ["A22", "B22", "C22"];
        let key = |n: &str| {
            t.node_by_name(n)
                .map(|i| i.to_string())
                .unwrap_or_else(|| n.to_string())
        };
        let frame = |t_ms: f64, d: f64| Keyframe {
            t_ms,
            displacements: top.iter().map(|n| (key(n), [0.0, 0.0, -d])).collect(),
        };
        Self {
            sample_rate_hz: 10.0,
            seed: 0,
            noise: NoiseModel::default(),
            keyframes: vec![
                frame(0.0, 0.0),
                frame(5000.0, 0.0),
                frame(10000.0, depth),
                frame(20000.0, depth),
                frame(25000.0, 0.0),
                frame(30000.0, 0.0),
            ],
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::NonPositive {
                what: "sample rate",
                value: self.sample_rate_hz,
            });
        }
        if self.keyframes.is_empty() {
            return Err(Error::Empty("scenario keyframes"));
        }
        for w in self.keyframes.windows(2) {
            if !(w[1].t_ms > w[0].t_ms) {
                return Err(Error::Ordering {
                    prev: w[0].t_ms,
                    next: w[1].t_ms,
                });
            }
        }
        for k in &self.keyframes {
            if !k.t_ms.is_finite() || k.displacements.values().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("keyframe"));
            }
        }
        self.noise.validate()
    }

    /// Sample times over `[first keyframe, last keyframe)`.
    pub fn sample_times(&self) -> Vec<f64> {
        let t0 = self.keyframes[0].t_ms;
        let span = self.keyframes.last().unwrap().t_ms - t0;
        let dt = 1000.0 / self.sample_rate_hz;
        let count = (span / dt - 1e-9).ceil().max(0.0) as usize;
        (0..count).map(|i| t0 + i as f64 * dt).collect()
    }

    /// Linearly interpolated node displacements at `t_ms`, held constant
    /// outside the keyframe range. Nodes absent from a keyframe are at rest there.
    pub fn displacements_at(&self, t: &Topology, t_ms: f64) -> Result<BTreeMap<usize, Vector3<f64>>> {
        let resolved = |k: &Keyframe| -> Result<BTreeMap<usize, Vector3<f64>>> {
            k.displacements
                .iter()
                .map(|(name, d)| Ok((resolve_node(t, name)?, Vector3::from(*d))))
                .collect()
        };
        let kf = &self.keyframes;
        let i = kf.partition_point(|k| k.t_ms <= t_ms);
        if i == 0 {
            return resolved(&kf[0]);
        }
        if i == kf.len() {
            return resolved(&kf[i - 1]);
        }
        let (a, b) = (resolved(&kf[i - 1])?, resolved(&kf[i])?);
        let w = (t_ms - kf[i - 1].t_ms) / (kf[i].t_ms - kf[i - 1].t_ms);
        let zero = Vector3::zeros();
        Ok(a.keys()
            .chain(b.keys())
            .map(|&n| {
                let da = a.get(&n).unwrap_or(&zero);
                let db = b.get(&n).unwrap_or(&zero);
                (n, da + (db - da) * w)
            })
            .collect())
    }
}

/// Everything besides the scenario that turns states into readings.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSetup {
    pub calibration: BendCalibration,
    pub stretch: StretchTable,
    pub baseline: [f64; TENDON_COUNT],
}

impl Default for SensorSetup {
    fn default() -> Self {
        Self {
            calibration: BendCalibration::default(),
            stretch: StretchTable::default(),
            baseline: [DEFAULT_BASELINE_OHMS; TENDON_COUNT],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub truth: Vec<StateFrame>,
    pub sensors: Vec<SensorFrame>,
}

/// Samples the scenario and produces paired ground-truth and sensor frames.
pub fn generate_session(sc: &Scenario, t: &Topology, setup: &SensorSetup) -> Result<Session> {
    sc.validate()?;
    let mut noise = sc.noise.sampler(sc.seed)?;
    let times = sc.sample_times();
    let mut truth = Vec::with_capacity(times.len());
    let mut sensors = Vec::with_capacity(times.len());
    for t_ms in times {
        let frame = sc
            .displacements_at(t, t_ms)
            .and_then(|d| deform(t, &d, t_ms))
            .and_then(|s| {
                let r = resistances_from_state(
                    &s,
                    t,
                    &setup.calibration,
                    &setup.stretch,
                    &setup.baseline,
                    &mut noise,
                )?;
                Ok((s, r))
            })
            .map_err(|e| e.at_time(t_ms))?;
        truth.push(frame.0);
        sensors.push(frame.1);
    }
    Ok(Session { truth, sensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{strains_from_frame, Mode, SensorHistory};
    use crate::topology::{build_canonical, CANONICAL_TOP_FACE};
    use approx::assert_abs_diff_eq;

    fn canonical() -> Topology {
        build_canonical(0.3).unwrap()
    }

    fn push(node: usize, d: [f64; 3]) -> BTreeMap<usize, Vector3<f64>> {
        BTreeMap::from([(node, Vector3::from(d))])
    }

    #[test]
    fn no_displacement_is_nominal() {
        let t = canonical();
        assert_eq!(deform(&t, &BTreeMap::new(), 0.0).unwrap().coords, t.nominal_coords());
    }

    #[test]
    fn pressed_node_keeps_struts_rigid() {
        let t = canonical();
        let s = deform(&t, &push(5, [0.0, 0.0, -0.03]), 0.0).unwrap();
        for &[a, b] in &t.struts {
            let d = s.coords[a] - s.coords[b];
            let len = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            assert!((len - 0.3).abs() < 1e-10);
        }
        for n in t.anchored {
            assert_eq!(s.coords[n], t.nominal_coords()[n]);
        }
        assert!(s.coords[5].z < t.nominal_coords()[5].z);
    }

    #[test]
    fn projection_is_nearest_point() {
        // any other strut-consistent perturbation of the pair is farther away
        let t = canonical();
        let raw = {
            let mut c = t.nominal_coords();
            c[5].z -= 0.03;
            c
        };
        let s = deform(&t, &push(5, [0.0, 0.0, -0.03]), 0.0).unwrap();
        let dist = |c: &[Vector3<f64>]| (c[4] - raw[4]).norm_squared() + (c[5] - raw[5]).norm_squared();
        let best = dist(&s.coords);
        let p = t.partner(5).unwrap();
        assert_eq!(p, 4);
        for shift in [-0.002, -0.001, 0.001, 0.002] {
            let mut c = s.coords;
            let u = (c[5] - c[4]).normalize();
            c[4] += u * shift;
            c[5] += u * shift;
            assert!(dist(&c) > best);
        }
    }

    #[test]
    fn anchored_displacement_is_rejected() {
        let t = canonical();
        assert!(matches!(
            deform(&t, &push(1, [0.0, 0.0, 0.01]), 0.0),
            Err(Error::AnchorViolation { node: 1 })
        ));
        assert!(deform(&t, &push(1, [0.0; 3]), 0.0).is_ok());
    }

    fn quiet() -> NoiseSampler {
        NoiseModel::none().sampler(0).unwrap()
    }

    #[test]
    fn nominal_state_reads_zero_change() {
        let t = canonical();
        let setup = SensorSetup::default();
        let f = resistances_from_state(
            &StateFrame::nominal(&t, 0.0),
            &t,
            &setup.calibration,
            &setup.stretch,
            &setup.baseline,
            &mut quiet(),
        )
        .unwrap();
        for r in f.resistances {
            assert_abs_diff_eq!(r, DEFAULT_BASELINE_OHMS, epsilon = 1e-6);
        }
    }

    #[test]
    fn compressed_tendon_reads_bending_root() {
        // the bending branch at vanishing compression sits on the polynomial's root
        let cal = BendCalibration::default();
        let x = cal.inverse(-1e-12).unwrap();
        assert_abs_diff_eq!(x, -0.0587689, epsilon = 1e-6);
        assert!(cal.eval(x).abs() < 1e-10);
    }

    #[test]
    fn noiseless_readings_invert_to_strain() {
        let t = canonical();
        let setup = SensorSetup::default();
        let s = deform(&t, &push(8, [0.01, -0.02, -0.03]), 0.0).unwrap();
        let f = resistances_from_state(&s, &t, &setup.calibration, &setup.stretch, &setup.baseline, &mut quiet())
            .unwrap();
        let truth: Vec<f64> = edge_lengths(&t, &s.coords)
            .iter()
            .zip(&t.tendons)
            .map(|(l, td)| l / td.rest_length_m - 1.0)
            .collect();
        assert!(truth.iter().any(|&e| e < 0.0) && truth.iter().any(|&e| e > 0.0));
        let modes = std::array::from_fn(|k| if truth[k] < -REST_STRAIN_TOLERANCE { Mode::Bending } else { Mode::Stretching });
        let baseline = SensorFrame::new(0.0, setup.baseline);
        let got = strains_from_frame(
            &f,
            &baseline,
            &modes,
            &setup.calibration,
            &setup.stretch,
            &SensorHistory::new(0),
            false,
        )
        .unwrap();
        for k in 0..TENDON_COUNT {
            assert_abs_diff_eq!(got.as_array()[k], truth[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn noise_is_seeded_and_bounded() {
        let m = NoiseModel::default();
        let a: Vec<f64> = {
            let mut s = m.sampler(4).unwrap();
            (0..1000).map(|_| s.sample()).collect()
        };
        let b: Vec<f64> = {
            let mut s = m.sampler(4).unwrap();
            (0..1000).map(|_| s.sample()).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (-0.23..0.13).contains(v)));
        let g = NoiseModel {
            kind: NoiseKind::GaussianTruncated,
            ..Default::default()
        };
        let mut s = g.sampler(1).unwrap();
        assert!((0..1000).all(|_| (-0.23..0.13).contains(&s.sample())));
        let bad = NoiseModel {
            band: [0.1, 0.1],
            ..Default::default()
        };
        assert!(bad.sampler(0).is_err());
    }

    #[test]
    fn thirty_seconds_at_ten_hertz() {
        let t = canonical();
        let sc = Scenario::press_three_nodes(&t, 0.03);
        let session = generate_session(&sc, &t, &SensorSetup::default()).unwrap();
        assert_eq!(session.truth.len(), 300);
        assert_eq!(session.sensors.len(), 300);
        for (a, b) in session.truth.iter().zip(&session.sensors) {
            assert_eq!(a.t_ms, b.t_ms);
        }
        assert_eq!(session.truth[299].t_ms, 29900.0);
    }

    #[test]
    fn press_session_ground_truth() {
        let t = canonical();
        let mut sc = Scenario::press_three_nodes(&t, 0.03);
        sc.noise = NoiseModel::none();
        let session = generate_session(&sc, &t, &SensorSetup::default()).unwrap();
        let nominal = t.nominal_coords();
        for s in &session.truth {
            for l in strut_lengths(&t, &s.coords) {
                assert!((l - 0.3).abs() < 1e-9);
            }
            for n in t.anchored {
                assert_eq!(s.coords[n], nominal[n]);
            }
        }
        // held at full depth at 15 s
        let hold = &session.truth[150];
        for n in CANONICAL_TOP_FACE {
            assert!(hold.coords[n].z < nominal[n].z - 0.02);
        }
        // the anchor triangle never changes length
        let rest = t.rest_lengths();
        for s in &session.truth {
            let l = edge_lengths(&t, &s.coords);
            for k in t.anchor_tendons() {
                assert_abs_diff_eq!(l[k], rest[k], epsilon = 1e-15);
            }
        }
        // some tendons rise and fall back
        let series = |k: usize| -> Vec<f64> { session.truth.iter().map(|s| edge_lengths(&t, &s.coords)[k]).collect() };
        let moving = (0..TENDON_COUNT)
            .filter(|&k| {
                let s = series(k);
                (s[150] - s[0]).abs() > 1e-3 && (s[299] - s[0]).abs() < 1e-12
            })
            .count();
        assert!(moving >= 6, "{moving} tendons move");
    }

    #[test]
    fn same_seed_same_session() {
        let t = canonical();
        let sc = Scenario::press_three_nodes(&t, 0.03);
        let a = generate_session(&sc, &t, &SensorSetup::default()).unwrap();
        let b = generate_session(&sc, &t, &SensorSetup::default()).unwrap();
        assert_eq!(a, b);
        let mut other = sc.clone();
        other.seed = 1;
        assert_ne!(generate_session(&other, &t, &SensorSetup::default()).unwrap().sensors, a.sensors);
    }

    #[test]
    fn scenario_json_round_trip_and_labels() {
        let t = canonical();
        let sc = Scenario::press_three_nodes(&t, 0.03);
        let back = Scenario::from_json_str(&sc.to_json_string()).unwrap();
        assert_eq!(back, sc);
        let by_label = r#"{"sample_rate_hz": 5, "keyframes": [
            {"t_ms": 0, "displacements": {}},
            {"t_ms": 1000, "displacements": {"A22": [0, 0, -0.01]}}]}"#;
        let sc = Scenario::from_json_str(by_label).unwrap();
        assert_eq!(sc.noise, NoiseModel::default());
        let d = sc.displacements_at(&t, 500.0).unwrap();
        assert_abs_diff_eq!(d[&5].z, -0.005, epsilon = 1e-15);
        assert_eq!(sc.sample_times(), vec![0.0, 200.0, 400.0, 600.0, 800.0]);
    }

    #[test]
    fn unordered_keyframes_are_rejected() {
        let s = r#"{"sample_rate_hz": 5, "keyframes": [
            {"t_ms": 10, "displacements": {}}, {"t_ms": 5, "displacements": {}}]}"#;
        assert!(matches!(Scenario::from_json_str(s), Err(Error::Ordering { .. })));
        let s = r#"{"sample_rate_hz": 0, "keyframes": [{"t_ms": 0, "displacements": {}}]}"#;
        assert!(Scenario::from_json_str(s).is_err());
    }

    #[test]
    fn per_tick_errors_carry_the_time() {
        let t = canonical();
        let sc = Scenario {
            sample_rate_hz: 10.0,
            seed: 0,
            noise: NoiseModel::none(),
            keyframes: vec![
                Keyframe {
                    t_ms: 0.0,
                    displacements: BTreeMap::new(),
                },
                Keyframe {
                    t_ms: 1000.0,
                    displacements: BTreeMap::from([("A11".to_string(), [0.0, 0.0, 0.1])]),
                },
            ],
        };
        let err = generate_session(&sc, &t, &SensorSetup::default()).unwrap_err();
        assert!(matches!(err, Error::Frame { t_ms, .. } if t_ms == 100.0), "{err}");
    }
}
