//! Sensor models: ADC to resistance, resistance to strain, strain to length.
//!
//! Each tendon sensor runs in one of two regimes. Under compression it bends,
//! and strain is read from a degree-5 polynomial in `ΔR/R`
//! ([`BendCalibration`]). Under tension it stretches, and strain comes from a
//! [`StretchEstimator`], normally the LSTM regressor in [`crate::lstm`].

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Topology, TENDON_COUNT};

/// Timestamped resistances of all 24 sensors, ohms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t_ms: f64,
    pub resistances: [f64; TENDON_COUNT],
}

impl SensorFrame {
    pub fn new(t_ms: f64, resistances: [f64; TENDON_COUNT]) -> Self {
        Self { t_ms, resistances }
    }

    /// Every resistance finite and positive.
    pub fn validate(&self) -> Result<()> {
        for (index, &r) in self.resistances.iter().enumerate() {
            check_resistance(r).map_err(|e| e.at_sensor(index))?;
        }
        Ok(())
    }
}

fn check_resistance(r: f64) -> Result<()> {
    if !r.is_finite() {
        return Err(Error::NonFinite("resistance"));
    }
    if r <= 0.0 {
        return Err(Error::NonPositive {
            what: "resistance",
            value: r,
        });
    }
    Ok(())
}

/// Two-resistor voltage divider read by a 10-bit ADC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DividerConfig {
    pub v_supply: f64,
    pub r_known: f64,
    pub adc_full_scale: u32,
    /// Sensor between supply and the ADC node; `false` puts it on the ground side.
    pub sensor_high_side: bool,
}

impl Default for DividerConfig {
    fn default() -> Self {
        Self {
            v_supply: 5.0,
            r_known: 5.8e6,
            adc_full_scale: 1023,
            sensor_high_side: true,
        }
    }
}

/// Recovers the sensor resistance from a divider ADC reading.
pub fn resistance_from_adc(adc: u32, cfg: &DividerConfig) -> Result<f64> {
    if !(cfg.v_supply > 0.0) || !(cfg.r_known > 0.0) || cfg.adc_full_scale == 0 {
        return Err(Error::Config("divider parameters must be positive".into()));
    }
    if adc == 0 || adc >= cfg.adc_full_scale {
        return Err(Error::SaturatedReading { adc: adc as f64 });
    }
    let v = cfg.v_supply * adc as f64 / cfg.adc_full_scale as f64;
    Ok(if cfg.sensor_high_side {
        cfg.r_known * (cfg.v_supply - v) / v
    } else {
        cfg.r_known * v / (cfg.v_supply - v)
    })
}

/// Relative resistance change `(r1 − r0) / r0`.
pub fn delta_r_ratio(r0: f64, r1: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(Error::NonPositive {
            what: "baseline resistance",
            value: r0,
        });
    }
    Ok((r1 - r0) / r0)
}

/// Degree-5 polynomial mapping `ΔR/R` to compressive strain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BendCalibration {
    /// `c5, c4, c3, c2, c1, c0`.
    pub coefficients: [f64; 6],
    /// Closed interval of valid `ΔR/R`.
    pub domain: [f64; 2],
}

impl Default for BendCalibration {
    fn default() -> Self {
        Self {
            coefficients: [-4.7589, -16.521, -20.239, -9.9675, -0.5464, -0.0016],
            domain: [-1.0, 0.0],
        }
    }
}

impl BendCalibration {
    pub fn new(coefficients: [f64; 6], domain: [f64; 2]) -> Result<Self> {
        if !(domain[0] <= domain[1]) {
            return Err(Error::Config(format!("empty calibration domain {domain:?}")));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("calibration coefficients"));
        }
        Ok(Self {
            coefficients,
            domain,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cal: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(cal.coefficients, cal.domain)
    }

    /// Horner evaluation with no domain check.
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().fold(0.0, |acc, c| acc * x + c)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.coefficients[..5]
            .iter()
            .enumerate()
            .fold(0.0, |acc, (n, c)| acc * x + (5 - n) as f64 * c)
    }

    /// Strain at `x = ΔR/R`; outside the domain is an error.
    pub fn strain(&self, x: f64) -> Result<f64> {
        let [lo, hi] = self.domain;
        if !(lo..=hi).contains(&x) {
            return Err(Error::OutOfDomain { value: x, lo, hi });
        }
        Ok(self.eval(x))
    }

    /// Strain at `x` clamped into the domain.
    pub fn strain_clamped(&self, x: f64) -> f64 {
        let [lo, hi] = self.domain;
        self.eval(if x.is_nan() { x } else { x.clamp(lo, hi) })
    }

    /// The sub-interval `[domain.lo, b]` on which the polynomial is monotone,
    /// where `b` is the first stationary point after `domain.lo` (or
    /// `domain.hi` if there is none).
    pub fn monotone_branch(&self) -> [f64; 2] {
        let [lo, hi] = self.domain;
        const SCAN: usize = 4096;
        let step = (hi - lo) / SCAN as f64;
        let d0 = self.derivative(lo);
        let mut a = lo;
        for n in 1..=SCAN {
            let b = if n == SCAN { hi } else { lo + step * n as f64 };
            if self.derivative(b).signum() != d0.signum() {
                return [lo, bisect(|x| self.derivative(x), a, b)];
            }
            a = b;
        }
        [lo, hi]
    }

    /// `ΔR/R` producing the given strain, by bisection on [`Self::monotone_branch`].
    pub fn inverse(&self, strain: f64) -> Result<f64> {
        let [a, b] = self.monotone_branch();
        let (fa, fb) = (self.eval(a), self.eval(b));
        if !strain.is_finite() || strain < fa.min(fb) || strain > fa.max(fb) {
            return Err(Error::NotInvertible { strain });
        }
        Ok(bisect(|x| self.eval(x) - strain, a, b))
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    if fa == 0.0 {
        return a;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BendFit {
    pub calibration: BendCalibration,
    pub r_squared: f64,
}

/// Least-squares degree-5 fit of `(ΔR/R, strain)` samples.
pub fn fit_bending_polynomial(samples: &[(f64, f64)]) -> Result<BendFit> {
    const REQUIRED: usize = 6;
    if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("calibration samples"));
    }
    let mut xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < REQUIRED || samples.len() < REQUIRED + 1 {
        return Err(Error::RankDeficient {
            distinct: xs.len(),
            required: REQUIRED,
        });
    }
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    // fit in a centered, scaled variable t = (x − mid)/half for conditioning,
    // then expand back to monomials in x
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let n = samples.len();
    let vander = DMatrix::from_fn(n, REQUIRED, |r, c| {
        ((samples[r].0 - mid) / half).powi(c as i32)
    });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let svd = vander.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-13 {
        return Err(Error::RankDeficient {
            distinct: xs.len(),
            required: REQUIRED,
        });
    }
    let t_coef = svd
        .solve(&y, smax * 1e-14)
        .map_err(|e| Error::Config(e.to_string()))?;

    // p(x) = Σ a_c ((x − mid)/half)^c, expanded by binomial theorem
    let mut ascending = [0.0f64; REQUIRED];
    for c in 0..REQUIRED {
        let scale = t_coef[c] / half.powi(c as i32);
        for k in 0..=c {
            ascending[k] += scale * binomial(c, k) as f64 * (-mid).powi((c - k) as i32);
        }
    }
    let mut coefficients = [0.0; REQUIRED];
    for (slot, a) in coefficients.iter_mut().zip(ascending.iter().rev()) {
        *slot = *a;
    }
    let calibration = BendCalibration::new(coefficients, [lo, hi])?;

    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = samples
        .iter()
        .map(|(x, v)| (v - calibration.eval(*x)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(BendFit {
        calibration,
        r_squared,
    })
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Bending,
    Stretching,
}

/// Strains closer to zero than this count as at rest. Rest geometry carries
/// rounding noise, and the two sensor regimes read very differently near zero.
pub const REST_STRAIN_TOLERANCE: f64 = 1e-9;

/// Compressive tendons bend; everything else, including at-rest, stretches.
pub fn select_mode(estimated_length: f64, rest_length: f64) -> Mode {
    if estimated_length < rest_length * (1.0 - REST_STRAIN_TOLERANCE) {
        Mode::Bending
    } else {
        Mode::Stretching
    }
}

/// Strain per tendon; every entry is above −1.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainVector([f64; TENDON_COUNT]);

impl StrainVector {
    pub fn new(strains: [f64; TENDON_COUNT]) -> Result<Self> {
        for (index, &e) in strains.iter().enumerate() {
            if !e.is_finite() {
                return Err(Error::NonFinite("strain").at_sensor(index));
            }
            if e <= -1.0 {
                return Err(Error::DegenerateStrain { index, strain: e });
            }
        }
        Ok(Self(strains))
    }

    pub fn from_slice(strains: &[f64]) -> Result<Self> {
        let arr: [f64; TENDON_COUNT] =
            strains.try_into().map_err(|_| Error::DimensionMismatch {
                what: "strain vector",
                expected: TENDON_COUNT,
                found: strains.len(),
            })?;
        Self::new(arr)
    }

    pub fn as_array(&self) -> &[f64; TENDON_COUNT] {
        &self.0
    }
}

/// `L_k = (1 + ε_k)·L_k0`.
pub fn lengths_from_strain(strain: &StrainVector, t: &Topology) -> [f64; TENDON_COUNT] {
    std::array::from_fn(|k| (1.0 + strain.0[k]) * t.tendons[k].rest_length_m)
}

/// Monotone lookup table between tensile strain and `ΔR/R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchTable {
    pub strain: Vec<f64>,
    pub delta_r_ratio: Vec<f64>,
}

impl Default for StretchTable {
    fn default() -> Self {
        Self::saturating_exponential(2.0, 0.4, 1.0, 401)
    }
}

impl StretchTable {
    pub fn new(strain: Vec<f64>, delta_r_ratio: Vec<f64>) -> Result<Self> {
        if strain.len() != delta_r_ratio.len() {
            return Err(Error::DimensionMismatch {
                what: "stretch table",
                expected: strain.len(),
                found: delta_r_ratio.len(),
            });
        }
        if strain.len() < 2 {
            return Err(Error::Config("stretch table needs at least 2 points".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&strain) || !increasing(&delta_r_ratio) {
            return Err(Error::Config(
                "stretch table must be strictly increasing in both columns".into(),
            ));
        }
        Ok(Self {
            strain,
            delta_r_ratio,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let t: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(t.strain, t.delta_r_ratio)
    }

    /// `ΔR/R = amplitude·(1 − exp(−ε/scale))` sampled at `points` strains in `[0, max_strain]`.
    pub fn saturating_exponential(amplitude: f64, scale: f64, max_strain: f64, points: usize) -> Self {
        let strain: Vec<f64> = (0..points)
            .map(|i| max_strain * i as f64 / (points - 1) as f64)
            .collect();
        let delta_r_ratio = strain
            .iter()
            .map(|e| amplitude * -(-e / scale).exp_m1())
            .collect();
        Self {
            strain,
            delta_r_ratio,
        }
    }

    pub fn strain_range(&self) -> [f64; 2] {
        [self.strain[0], *self.strain.last().unwrap()]
    }

    pub fn ratio_range(&self) -> [f64; 2] {
        [self.delta_r_ratio[0], *self.delta_r_ratio.last().unwrap()]
    }

    pub fn ratio_for_strain(&self, strain: f64) -> Result<f64> {
        interpolate(&self.strain, &self.delta_r_ratio, strain)
            .ok_or(Error::NotInvertible { strain })
    }

    pub fn strain_for_ratio(&self, ratio: f64) -> Result<f64> {
        let [lo, hi] = self.ratio_range();
        interpolate(&self.delta_r_ratio, &self.strain, ratio).ok_or(Error::OutOfDomain {
            value: ratio,
            lo,
            hi,
        })
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if !(xs[0]..=xs[xs.len() - 1]).contains(&x) {
        return None;
    }
    let i = xs.partition_point(|v| *v <= x).clamp(1, xs.len() - 1);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

/// Maps a window of one sensor's `ΔR/R` history (oldest first, current sample
/// last) to tensile strain.
pub trait StretchEstimator {
    fn window_len(&self) -> usize;
    fn estimate(&self, ratios: &[f64], clamp: bool) -> Result<f64>;

    /// `ΔR/R` readings this estimator accepts; a stretched sensor never reads
    /// below its rest resistance.
    fn ratio_domain(&self) -> [f64; 2] {
        [0.0, f64::INFINITY]
    }
}

/// Memoryless inverse of the table; uses only the newest sample.
impl StretchEstimator for StretchTable {
    fn window_len(&self) -> usize {
        1
    }

    fn ratio_domain(&self) -> [f64; 2] {
        self.ratio_range()
    }

    fn estimate(&self, ratios: &[f64], clamp: bool) -> Result<f64> {
        let x = *ratios.last().ok_or(Error::WindowUnderflow {
            needed: 1,
            available: 0,
        })?;
        if clamp {
            let [lo, hi] = self.ratio_range();
            self.strain_for_ratio(x.clamp(lo, hi))
        } else {
            self.strain_for_ratio(x)
        }
    }
}

/// Per-sensor ring buffer of past `ΔR/R` samples.
#[derive(Clone, Debug)]
pub struct SensorHistory {
    capacity: usize,
    samples: Vec<VecDeque<f64>>,
}

impl SensorHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            samples: vec![VecDeque::with_capacity(capacity + 1); TENDON_COUNT],
        }
    }

    /// A history already holding `capacity` copies of `ratios`.
    pub fn filled(capacity: usize, ratios: &[f64; TENDON_COUNT]) -> Self {
        let mut h = Self::new(capacity);
        for _ in 0..capacity {
            h.push(ratios);
        }
        h
    }

    pub fn push(&mut self, ratios: &[f64; TENDON_COUNT]) {
        for (q, &r) in self.samples.iter_mut().zip(ratios) {
            q.push_back(r);
            while q.len() > self.capacity {
                q.pop_front();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The newest `n` samples of one sensor, oldest first.
    pub fn tail(&self, sensor: usize, n: usize) -> Option<Vec<f64>> {
        let q = &self.samples[sensor];
        (q.len() >= n).then(|| q.iter().skip(q.len() - n).copied().collect())
    }
}

/// `ΔR/R` of every sensor against the baseline frame.
pub fn frame_ratios(frame: &SensorFrame, baseline: &SensorFrame) -> Result<[f64; TENDON_COUNT]> {
    let mut out = [0.0; TENDON_COUNT];
    for (k, slot) in out.iter_mut().enumerate() {
        let r1 = frame.resistances[k];
        let r0 = baseline.resistances[k];
        check_resistance(r1)
            .and_then(|_| check_resistance(r0))
            .and_then(|_| delta_r_ratio(r0, r1))
            .map(|x| *slot = x)
            .map_err(|e| e.at_sensor(k))?;
    }
    Ok(out)
}

/// Converts one frame to strains, dispatching each sensor on its mode.
///
/// A reading outside its mode's domain but inside the other mode's is taken
/// as a regime change and read by the other model; the two domains meet only
/// at zero. Readings outside both are errors, or clamped with `clamp` set.
///
/// `history` holds the sensors' previous `ΔR/R` samples (not the current
/// one); stretching sensors need at least `window_len − 1` of them.
pub fn strains_from_frame(
    frame: &SensorFrame,
    baseline: &SensorFrame,
    modes: &[Mode; TENDON_COUNT],
    cal: &BendCalibration,
    stretch: &dyn StretchEstimator,
    history: &SensorHistory,
    clamp: bool,
) -> Result<StrainVector> {
    let ratios = frame_ratios(frame, baseline)?;
    let window = stretch.window_len();
    let mut strains = [0.0; TENDON_COUNT];
    let inside = |[lo, hi]: [f64; 2], x: f64| (lo..=hi).contains(&x);
    for k in 0..TENDON_COUNT {
        let x = ratios[k];
        let mode = match modes[k] {
            Mode::Bending if !inside(cal.domain, x) && inside(stretch.ratio_domain(), x) => Mode::Stretching,
            Mode::Stretching if !inside(stretch.ratio_domain(), x) && inside(cal.domain, x) => Mode::Bending,
            m => m,
        };
        let strain = match mode {
            Mode::Bending if clamp => Ok(cal.strain_clamped(x)),
            Mode::Bending => cal.strain(x),
            Mode::Stretching => {
                let past = window - 1;
                match history.tail(k, past) {
                    Some(mut w) => {
                        w.push(x);
                        stretch.estimate(&w, clamp)
                    }
                    None => Err(Error::WindowUnderflow {
                        needed: past,
                        available: history.len(),
                    }),
                }
            }
        };
        strains[k] = strain.map_err(|e| e.at_sensor(k))?;
        if strains[k] <= -1.0 {
            return Err(Error::DegenerateStrain {
                index: k,
                strain: strains[k],
            });
        }
    }
    StrainVector::new(strains)
}

/// Stateful front end: owns the baseline, history and mode flags for a session.
#[derive(Clone, Debug)]
pub struct SensorPipeline {
    baseline: SensorFrame,
    history: SensorHistory,
    modes: [Mode; TENDON_COUNT],
    clamp: bool,
}

impl SensorPipeline {
    /// History starts filled with the baseline (zero `ΔR/R`), all sensors stretching.
    pub fn new(baseline: SensorFrame, window_len: usize, clamp: bool) -> Result<Self> {
        baseline.validate()?;
        let past = window_len.saturating_sub(1);
        Ok(Self {
            baseline,
            history: SensorHistory::filled(past, &[0.0; TENDON_COUNT]),
            modes: [Mode::Stretching; TENDON_COUNT],
            clamp,
        })
    }

    pub fn modes(&self) -> &[Mode; TENDON_COUNT] {
        &self.modes
    }

    /// Re-selects modes from the latest reconstructed tendon lengths.
    pub fn update_modes(&mut self, lengths: &[f64; TENDON_COUNT], t: &Topology) {
        for k in 0..TENDON_COUNT {
            self.modes[k] = select_mode(lengths[k], t.tendons[k].rest_length_m);
        }
    }

    pub fn strains(
        &mut self,
        frame: &SensorFrame,
        cal: &BendCalibration,
        stretch: &dyn StretchEstimator,
    ) -> Result<StrainVector> {
        let out = strains_from_frame(
            frame,
            &self.baseline,
            &self.modes,
            cal,
            stretch,
            &self.history,
            self.clamp,
        );
        // the sample enters the history even if conversion failed so the
        // window stays aligned with wall time
        if let Ok(r) = frame_ratios(frame, &self.baseline) {
            self.history.push(&r);
        }
        out
    }
}
