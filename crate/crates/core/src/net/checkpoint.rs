//! Model checkpoints.
//!
//! A checkpoint is a JSON object:
//!
//! ```text
//! {
//!   "format": "sentiforecast-checkpoint",
//!   "version": 1,
//!   "config": { TrainConfig fields },
//!   "input_width": F,
//!   "window": T,
//!   "feature_names": [...],
//!   "normalization": { "features": [{"mean", "std"}, ...], "target": {"mean", "std"} },
//!   "tensors": [ { "name", "shape", "data" }, ... ]
//! }
//! ```
//!
//! Tensors are listed in the fixed order of [`Network::visit`], row-major,
//! as `f64`. Floats are written with shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForecastModel, Network, Normalization, TrainConfig};
use crate::error::{Error, Result};

const FORMAT: &str = "sentiforecast-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: TrainConfig,
    input_width: usize,
    window: usize,
    feature_names: Vec<String>,
    normalization: Option<Normalization>,
    tensors: Vec<Tensor>,
}

pub fn save_checkpoint(model: &ForecastModel, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    model.network.visit(|name, shape, data| {
        tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: data.to_vec(),
        })
    });
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config.clone(),
        input_width: model.input_width(),
        window: model.window,
        feature_names: model.feature_names.clone(),
        normalization: model.normalization.clone(),
        tensors,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &ckpt).map_err(|e| Error::Schema(e.to_string()))?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ForecastModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    let mut network = Network::zeros(&ckpt.config.architecture(ckpt.input_width))?;
    let mut expected = Vec::new();
    network.visit(|name, shape, _| expected.push((name.to_string(), shape.to_vec())));
    if expected.len() != ckpt.tensors.len() {
        return Err(Error::Schema(format!(
            "checkpoint has {} tensors, configuration implies {}",
            ckpt.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), t) in expected.iter().zip(&ckpt.tensors) {
        let len: usize = shape.iter().product();
        if &t.name != name || &t.shape != shape || t.data.len() != len {
            return Err(Error::Schema(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                t.name, t.shape
            )));
        }
    }
    let mut tensors = ckpt.tensors.into_iter();
    network.visit_mut(|_, dst| dst.copy_from_slice(&tensors.next().expect("counted").data));
    if !network.all_finite() {
        return Err(Error::Validation("checkpoint holds non-finite parameters".into()));
    }
    Ok(ForecastModel {
        network,
        config: ckpt.config,
        feature_names: ckpt.feature_names,
        window: ckpt.window,
        normalization: ckpt.normalization,
    })
}
