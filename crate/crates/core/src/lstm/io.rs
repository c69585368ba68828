//! Versioned JSON model files. Matrices are stored as flat row-major arrays.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{LstmModel, LstmParams, Normalization};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(rename = "D")]
    input_size: usize,
    #[serde(rename = "H")]
    hidden_size: usize,
    window: usize,
    weights: Weights,
    norm: Normalization,
}

#[derive(Serialize, Deserialize)]
struct Weights {
    #[serde(rename = "W_f")]
    w_forget: Vec<f64>,
    #[serde(rename = "W_i")]
    w_input: Vec<f64>,
    #[serde(rename = "W_h")]
    w_candidate: Vec<f64>,
    #[serde(rename = "W_o")]
    w_output: Vec<f64>,
    b_f: Vec<f64>,
    b_i: Vec<f64>,
    b_o: Vec<f64>,
    readout_w: Vec<f64>,
    readout_b: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl LstmModel {
    pub fn to_json_string(&self) -> String {
        let p = &self.params;
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            input_size: self.input_size(),
            hidden_size: self.hidden_size(),
            window: self.window,
            weights: Weights {
                w_forget: row_major(&p.w_forget),
                w_input: row_major(&p.w_input),
                w_candidate: row_major(&p.w_candidate),
                w_output: row_major(&p.w_output),
                b_f: p.b_forget.as_slice().to_vec(),
                b_i: p.b_input.as_slice().to_vec(),
                b_o: p.b_output.as_slice().to_vec(),
                readout_w: p.w_readout.as_slice().to_vec(),
                readout_b: p.b_readout,
            },
            norm: self.norm.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(s)?;
        if v.version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: v.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let f: ModelFile = serde_json::from_str(s)?;
        let (d, h) = (f.input_size, f.hidden_size);
        if h == 0 || d == 0 {
            return Err(Error::InvalidModel("D and H must be at least 1".into()));
        }
        let matrix = |name: &str, v: Vec<f64>| -> Result<DMatrix<f64>> {
            if v.len() != h * (d + h) {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} entries, declared shape {h}x{}",
                    v.len(),
                    d + h
                )));
            }
            Ok(DMatrix::from_row_slice(h, d + h, &v))
        };
        let vector = |name: &str, v: Vec<f64>| -> Result<DVector<f64>> {
            if v.len() != h {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} entries, declared H = {h}",
                    v.len()
                )));
            }
            Ok(DVector::from_vec(v))
        };
        let w = f.weights;
        let params = LstmParams {
            w_forget: matrix("W_f", w.w_forget)?,
            w_input: matrix("W_i", w.w_input)?,
            w_candidate: matrix("W_h", w.w_candidate)?,
            w_output: matrix("W_o", w.w_output)?,
            b_forget: vector("b_f", w.b_f)?,
            b_input: vector("b_i", w.b_i)?,
            b_output: vector("b_o", w.b_o)?,
            w_readout: vector("readout_w", w.readout_w)?,
            b_readout: w.readout_b,
        };
        LstmModel::new(f.window, params, f.norm)
    }
}

pub fn save_model(m: &LstmModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, m.to_json_string())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmModel> {
    LstmModel::from_json_str(&std::fs::read_to_string(path)?)
}
