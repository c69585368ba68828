//! Run configuration: one JSON file naming the inputs and tuning knobs.
//!
//! Every field is optional. Relative paths are resolved against the
//! directory holding the config file.
//!
//! ```json
//! {
//!   "topology": "topology.json",
//!   "lstm_model": "model.json",
//!   "stretch_model": "lstm",
//!   "solver": { "max_iterations": 200 },
//!   "seed": 7,
//!   "output_dir": "out"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{load_model, StretchDatasetConfig, TrainConfig};
use crate::reconstruction::SolveOptions;
use crate::sensor::{BendCalibration, SensorFrame, StretchTable};
use crate::simulator::{Scenario, SensorSetup, DEFAULT_BASELINE_OHMS};
use crate::topology::{build_canonical, Topology, DEFAULT_STRUT_LENGTH, TENDON_COUNT};

use super::pipeline::StretchModel;

/// One value for every sensor, or one per sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSensor {
    Uniform(f64),
    Each([f64; TENDON_COUNT]),
}

impl PerSensor {
    pub fn values(&self) -> [f64; TENDON_COUNT] {
        match self {
            Self::Uniform(v) => [*v; TENDON_COUNT],
            Self::Each(v) => *v,
        }
    }
}

/// Which model reads stretching sensors during reconstruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StretchChoice {
    /// The trained LSTM (loaded from `lstm_model`, or trained on the fly by `run-all`).
    #[default]
    Lstm,
    /// The monotone table the simulator uses; an oracle, not a learned model.
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub topology: Option<PathBuf>,
    /// Used when no topology file is given.
    pub strut_length_m: f64,
    pub bend_calibration: Option<PathBuf>,
    pub stretch_table: Option<PathBuf>,
    pub lstm_model: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    /// Press depth of the built-in scenario, meters.
    pub press_depth_m: f64,
    /// Rest resistance of the simulated sensors.
    pub sensor_baseline_ohms: PerSensor,
    /// Rest resistances for reconstruction; the first frame when absent.
    pub reconstruction_baseline_ohms: Option<PerSensor>,
    pub stretch_model: StretchChoice,
    pub solver: SolveOptions,
    pub training: TrainConfig,
    pub dataset: StretchDatasetConfig,
    pub sweep_rates: Vec<f64>,
    pub clamp: bool,
    /// When set, drives scenario noise, dataset noise and weight
    /// initialization, replacing the seeds inside those sections.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            topology: None,
            strut_length_m: DEFAULT_STRUT_LENGTH,
            bend_calibration: None,
            stretch_table: None,
            lstm_model: None,
            scenario: None,
            press_depth_m: 0.03,
            sensor_baseline_ohms: PerSensor::Uniform(DEFAULT_BASELINE_OHMS),
            reconstruction_baseline_ohms: None,
            stretch_model: StretchChoice::Lstm,
            solver: SolveOptions::default(),
            training: TrainConfig::default(),
            dataset: StretchDatasetConfig::default(),
            sweep_rates: vec![1e-3, 1e-2, 1e-1, 1.0],
            clamp: false,
            seed: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl Config {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads a config and makes its relative paths absolute.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.topology,
            &mut self.bend_calibration,
            &mut self.stretch_table,
            &mut self.lstm_model,
            &mut self.scenario,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn topology(&self) -> Result<Topology> {
        match &self.topology {
            Some(p) => Topology::load(p),
            None => build_canonical(self.strut_length_m),
        }
    }

    pub fn calibration(&self) -> Result<BendCalibration> {
        self.bend_calibration
            .as_ref()
            .map_or_else(|| Ok(BendCalibration::default()), BendCalibration::load)
    }

    pub fn stretch_table(&self) -> Result<StretchTable> {
        self.stretch_table
            .as_ref()
            .map_or_else(|| Ok(StretchTable::default()), StretchTable::load)
    }

    pub fn sensor_setup(&self) -> Result<SensorSetup> {
        Ok(SensorSetup {
            calibration: self.calibration()?,
            stretch: self.stretch_table()?,
            baseline: self.sensor_baseline_ohms.values(),
        })
    }

    /// The scenario file, or the built-in three-node press.
    pub fn scenario(&self, t: &Topology) -> Result<Scenario> {
        let mut sc = match &self.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::press_three_nodes(t, self.press_depth_m),
        };
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        Ok(sc)
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.unwrap_or(self.training.seed),
            ..self.training.clone()
        }
    }

    /// Loads the configured stretching model. `None` means an LSTM is wanted
    /// but no model file was given.
    pub fn stretch_model(&self) -> Result<Option<StretchModel>> {
        match self.stretch_model {
            StretchChoice::Table => Ok(Some(StretchModel::Table(self.stretch_table()?))),
            StretchChoice::Lstm => match &self.lstm_model {
                Some(p) => Ok(Some(StretchModel::Lstm(load_model(p)?))),
                None => Ok(None),
            },
        }
    }

    /// The configured rest frame, or the first frame of the session.
    pub fn reconstruction_baseline(&self, frames: &[SensorFrame]) -> Result<SensorFrame> {
        match &self.reconstruction_baseline_ohms {
            Some(b) => Ok(SensorFrame::new(0.0, b.values())),
            None => frames
                .first()
                .cloned()
                .ok_or(Error::Empty("sensor stream")),
        }
    }
}
