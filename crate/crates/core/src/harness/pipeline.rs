//! Sensor frames in, node positions out.

use crate::error::{Error, Result};
use crate::harness::io::FrameRecord;
use crate::lstm::LstmModel;
use crate::reconstruction::{SolveOptions, SolveResult, StateFrame, Tracker};
use crate::sensor::{lengths_from_strain, BendCalibration, SensorFrame, SensorPipeline, StretchEstimator, StretchTable};
use crate::topology::{edge_lengths, Topology};

/// Which model reads stretching sensors.
#[derive(Clone, Debug, PartialEq)]
pub enum StretchModel {
    Table(StretchTable),
    Lstm(LstmModel),
}

impl StretchEstimator for StretchModel {
    fn window_len(&self) -> usize {
        match self {
            Self::Table(t) => t.window_len(),
            Self::Lstm(m) => m.window_len(),
        }
    }

    fn estimate(&self, ratios: &[f64], clamp: bool) -> Result<f64> {
        match self {
            Self::Table(t) => t.estimate(ratios, clamp),
            Self::Lstm(m) => m.estimate(ratios, clamp),
        }
    }

    fn ratio_domain(&self) -> [f64; 2] {
        match self {
            Self::Table(t) => t.ratio_domain(),
            Self::Lstm(m) => m.ratio_domain(),
        }
    }
}

/// Converts each frame to tendon lengths and tracks the structure. Sensor
/// modes for the next frame follow the lengths just reconstructed.
pub struct Reconstructor<'a> {
    topology: &'a Topology,
    calibration: &'a BendCalibration,
    stretch: &'a dyn StretchEstimator,
    sensors: SensorPipeline,
    tracker: Tracker<'a>,
    last_t: Option<f64>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(
        topology: &'a Topology,
        calibration: &'a BendCalibration,
        stretch: &'a dyn StretchEstimator,
        baseline: SensorFrame,
        opts: SolveOptions,
        clamp: bool,
    ) -> Result<Self> {
        Ok(Self {
            topology,
            calibration,
            stretch,
            sensors: SensorPipeline::new(baseline, stretch.window_len(), clamp)?,
            tracker: Tracker::new(topology, opts),
            last_t: None,
        })
    }

    pub fn last_good(&self) -> &StateFrame {
        self.tracker.last_good()
    }

    pub fn process(&mut self, frame: &SensorFrame) -> Result<SolveResult> {
        if let Some(prev) = self.last_t {
            if !(frame.t_ms > prev) {
                return Err(Error::Ordering {
                    prev,
                    next: frame.t_ms,
                });
            }
        }
        self.last_t = Some(frame.t_ms);
        let strains = self
            .sensors
            .strains(frame, self.calibration, self.stretch)
            .map_err(|e| e.at_time(frame.t_ms))?;
        let lengths = lengths_from_strain(&strains, self.topology);
        let result = self
            .tracker
            .push(frame.t_ms, &lengths)
            .map_err(|e| e.at_time(frame.t_ms))?;
        self.sensors
            .update_modes(&edge_lengths(self.topology, &result.state.coords), self.topology);
        Ok(result)
    }

    /// Like [`process`](Self::process), but a failed frame becomes a record
    /// holding the last good state and the error text.
    pub fn process_record(&mut self, frame: &SensorFrame) -> FrameRecord {
        match self.process(frame) {
            Ok(r) => FrameRecord::from(&r),
            Err(e) => {
                log::warn!("{e}");
                FrameRecord::failed(frame.t_ms, self.last_good(), &e)
            }
        }
    }
}

/// One record per input frame.
pub fn reconstruct_session(
    frames: &[SensorFrame],
    topology: &Topology,
    calibration: &BendCalibration,
    stretch: &dyn StretchEstimator,
    baseline: SensorFrame,
    opts: &SolveOptions,
    clamp: bool,
) -> Result<Vec<FrameRecord>> {
    let mut r = Reconstructor::new(topology, calibration, stretch, baseline, opts.clone(), clamp)?;
    Ok(frames.iter().map(|f| r.process_record(f)).collect())
}
