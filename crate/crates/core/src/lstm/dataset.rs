use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::StretchTable;

use super::FEATURE_COUNT;

/// `[ΔR/R, first difference]` per time step; the first difference of the
/// oldest sample is 0.
pub fn features(ratios: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(ratios.len(), FEATURE_COUNT, |t, d| match d {
        0 => ratios[t],
        _ if t == 0 => 0.0,
        _ => ratios[t] - ratios[t - 1],
    })
}

/// One recorded stretching run: paired `ΔR/R` and strain samples.
#[derive(Clone, Debug, PartialEq)]
pub struct StretchSeries {
    /// Strain rate of the run, strain per second (informational).
    pub rate: f64,
    pub ratios: Vec<f64>,
    pub strains: Vec<f64>,
}

/// Triangle-wave stretching runs, one per rate, read through `table`.
///
/// Each run goes `0 → max_strain → 0` for `cycles` cycles at the given strain
/// rate; Gaussian noise with standard deviation `noise_std` is added to `ΔR/R`.
pub fn synthetic_stretch_series(
    table: &StretchTable,
    rates: &[f64],
    sample_rate_hz: f64,
    max_strain: f64,
    cycles: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<StretchSeries>> {
    if !(sample_rate_hz > 0.0) {
        return Err(Error::NonPositive {
            what: "sample rate",
            value: sample_rate_hz,
        });
    }
    if !(max_strain > 0.0) {
        return Err(Error::NonPositive {
            what: "max strain",
            value: max_strain,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    rates
        .iter()
        .map(|&rate| {
            if !(rate > 0.0) {
                return Err(Error::NonPositive {
                    what: "strain rate",
                    value: rate,
                });
            }
            let half_period = max_strain / rate;
            let samples = (2.0 * half_period * cycles as f64 * sample_rate_hz).round() as usize;
            let mut ratios = Vec::with_capacity(samples);
            let mut strains = Vec::with_capacity(samples);
            for n in 0..samples {
                let t = n as f64 / sample_rate_hz;
                let phase = (t / half_period) % 2.0;
                let strain = max_strain * if phase <= 1.0 { phase } else { 2.0 - phase };
                let mut x = table.ratio_for_strain(strain)?;
                if noise_std > 0.0 {
                    x += noise.sample(&mut rng);
                }
                ratios.push(x);
                strains.push(strain);
            }
            Ok(StretchSeries {
                rate,
                ratios,
                strains,
            })
        })
        .collect()
}

/// One training example: raw features and the strain at the last step.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub inputs: DMatrix<f64>,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub window: usize,
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
}

impl SequenceDataset {
    pub fn new(window: usize, train: Vec<Window>, validation: Vec<Window>) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        for w in train.iter().chain(&validation) {
            if w.inputs.shape() != (window, FEATURE_COUNT) {
                return Err(Error::DimensionMismatch {
                    what: "dataset window",
                    expected: window * FEATURE_COUNT,
                    found: w.inputs.len(),
                });
            }
            if !w.target.is_finite() || w.inputs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset window"));
            }
        }
        Ok(Self {
            window,
            train,
            validation,
        })
    }

    /// Slides a `window`-sample frame over every series with the given
    /// stride; every `validation_every`-th window goes to the validation split.
    pub fn from_series(
        series: &[StretchSeries],
        window: usize,
        stride: usize,
        validation_every: usize,
    ) -> Result<Self> {
        if window == 0 || stride == 0 || validation_every < 2 {
            return Err(Error::Config(
                "window and stride must be positive, validation_every at least 2".into(),
            ));
        }
        let mut train = Vec::new();
        let mut validation = Vec::new();
        let mut count = 0usize;
        for s in series {
            if s.ratios.len() != s.strains.len() {
                return Err(Error::DimensionMismatch {
                    what: "stretch series",
                    expected: s.ratios.len(),
                    found: s.strains.len(),
                });
            }
            let mut end = window;
            while end <= s.ratios.len() {
                let w = Window {
                    inputs: features(&s.ratios[end - window..end]),
                    target: s.strains[end - 1],
                };
                count += 1;
                if count % validation_every == 0 {
                    validation.push(w);
                } else {
                    train.push(w);
                }
                end += stride;
            }
        }
        Self::new(window, train, validation)
    }
}

/// Recipe for a synthetic stretching dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StretchDatasetConfig {
    /// Strain rates of the runs, strain per second.
    pub rates: Vec<f64>,
    pub sample_rate_hz: f64,
    pub max_strain: f64,
    pub cycles: usize,
    pub noise_std: f64,
    pub window: usize,
    pub stride: usize,
    pub validation_every: usize,
}

impl Default for StretchDatasetConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.05, 0.1, 0.2],
            sample_rate_hz: 10.0,
            max_strain: 0.5,
            cycles: 2,
            noise_std: 0.005,
            window: super::DEFAULT_WINDOW,
            stride: 2,
            validation_every: 5,
        }
    }
}

impl StretchDatasetConfig {
    pub fn build(&self, table: &StretchTable, seed: u64) -> Result<SequenceDataset> {
        let series = synthetic_stretch_series(
            table,
            &self.rates,
            self.sample_rate_hz,
            self.max_strain,
            self.cycles,
            self.noise_std,
            seed,
        )?;
        SequenceDataset::from_series(&series, self.window, self.stride, self.validation_every)
    }
}
