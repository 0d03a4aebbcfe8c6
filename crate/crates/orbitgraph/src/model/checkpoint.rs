//! Checkpoint file: schema version, model config, the fitted input
//! normalizer and every parameter tensor as a named, shaped array.
//! Floats round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::scenario::FEATURE_DIM;

use super::{EvolveGcnParams, ModelConfig, Standardizer};

pub const CHECKPOINT_SCHEMA_VERSION: u64 = 1;

/// Everything needed to run inference: parameters plus the input
/// normalizer fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: EvolveGcnParams<f64>,
    pub standardizer: Standardizer<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u64,
    model_config: ModelConfig,
    normalizer: Standardizer<f64>,
    params: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let names = model.params.param_names();
    let mut tensors = Vec::with_capacity(names.len());
    let mut idx = 0;
    model.params.for_each(|m| {
        tensors.push(NamedTensor {
            name: names[idx].clone(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        });
        idx += 1;
    });
    let file = CheckpointFile {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        model_config: model.params.config.clone(),
        normalizer: model.standardizer.clone(),
        params: tensors,
    };
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(out);
    serde_json::to_writer(&mut writer, &file).map_err(|e| Error::parse(path, &e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    BufReader::new(file)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;

    #[derive(Deserialize)]
    struct VersionProbe {
        schema_version: u64,
    }
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    if probe.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: probe.schema_version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }

    let parsed: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    parsed.model_config.validate()?;
    if parsed.normalizer.mean.len() != FEATURE_DIM || parsed.normalizer.std.len() != FEATURE_DIM {
        return Err(Error::Contract(format!(
            "{}: normalizer width {} does not match the feature width {FEATURE_DIM}",
            path.display(),
            parsed.normalizer.mean.len()
        )));
    }

    let mut mats = Vec::with_capacity(parsed.params.len());
    for tensor in &parsed.params {
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: tensor {}",
                path.display(),
                tensor.name
            )));
        }
        mats.push(Matrix::from_vec(tensor.rows, tensor.cols, tensor.data.clone())?);
    }
    let params = EvolveGcnParams::from_flat(parsed.model_config, &mats)?;

    let expected_names = params.param_names();
    for (tensor, expected) in parsed.params.iter().zip(expected_names.iter()) {
        if &tensor.name != expected {
            return Err(Error::Contract(format!(
                "{}: tensor name {} out of order, expected {expected}",
                path.display(),
                tensor.name
            )));
        }
    }

    Ok(TrainedModel {
        params,
        standardizer: parsed.normalizer,
    })
}
