//! Dataset file format: JSON with a schema version gate, config echo and
//! split-tagged trajectories. Floats survive a save/load round trip
//! bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::orbit::RelativeState;
use crate::Chief;

use super::{DatasetSplit, ScenarioConfig, ScenarioTrajectory};

pub const DATASET_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u64,
    config: ScenarioConfig,
    trajectories: Vec<TrajectoryRecord>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    split: SplitTag,
    chief: Chief,
    dt: f64,
    /// `[step][agent][x, y, z, vx, vy, vz]`.
    states: Vec<Vec<[f64; 6]>>,
    /// Row-major 0/1 entries, one flat vector per step.
    adjacency: Vec<Vec<u8>>,
}

#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SplitTag {
    Train,
    Validation,
    Test,
}

fn to_record(traj: &ScenarioTrajectory, split: SplitTag) -> TrajectoryRecord {
    TrajectoryRecord {
        split,
        chief: traj.chief,
        dt: traj.dt,
        states: traj
            .states
            .iter()
            .map(|row| row.iter().map(|s| s.to_array()).collect())
            .collect(),
        adjacency: traj
            .adjacency
            .iter()
            .map(|a| a.data().iter().map(|&v| if v != 0.0 { 1 } else { 0 }).collect())
            .collect(),
    }
}

fn from_record(record: TrajectoryRecord, path: &Path) -> Result<(SplitTag, ScenarioTrajectory)> {
    let TrajectoryRecord {
        split,
        chief,
        dt,
        states,
        adjacency,
    } = record;
    chief.validate()?;
    if dt <= 0.0 {
        return Err(Error::Contract(format!("{}: trajectory dt must be positive", path.display())));
    }

    let agents = states.first().map_or(0, |row| row.len());
    if agents == 0 || states.is_empty() {
        return Err(Error::Contract(format!("{}: empty trajectory", path.display())));
    }
    if states.len() != adjacency.len() {
        return Err(Error::Contract(format!(
            "{}: {} state steps but {} adjacency steps",
            path.display(),
            states.len(),
            adjacency.len()
        )));
    }

    let mut state_rows = Vec::with_capacity(states.len());
    for row in states {
        if row.len() != agents {
            return Err(Error::Contract(format!(
                "{}: ragged agent count within trajectory",
                path.display()
            )));
        }
        let parsed: Vec<RelativeState<f64>> =
            row.into_iter().map(RelativeState::from_array).collect();
        if parsed.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{}: stored state", path.display())));
        }
        state_rows.push(parsed);
    }

    let mut adjacency_mats = Vec::with_capacity(adjacency.len());
    for (step, flat) in adjacency.into_iter().enumerate() {
        if flat.len() != agents * agents {
            return Err(Error::Contract(format!(
                "{}: adjacency at step {step} has {} entries, expected {}",
                path.display(),
                flat.len(),
                agents * agents
            )));
        }
        let a = Matrix::from_vec(agents, agents, flat.into_iter().map(f64::from).collect())?;
        for i in 0..agents {
            if a.at(i, i) != 1.0 {
                return Err(Error::Contract(format!(
                    "{}: adjacency at step {step} lacks a self-loop on agent {i}",
                    path.display()
                )));
            }
            for j in 0..agents {
                if a.at(i, j) != a.at(j, i) {
                    return Err(Error::Contract(format!(
                        "{}: adjacency at step {step} is not symmetric",
                        path.display()
                    )));
                }
            }
        }
        adjacency_mats.push(a);
    }

    Ok((
        split,
        ScenarioTrajectory {
            chief,
            dt,
            states: state_rows,
            adjacency: adjacency_mats,
        },
    ))
}

pub fn save_dataset(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut records = Vec::with_capacity(split.total());
    for traj in &split.train {
        records.push(to_record(traj, SplitTag::Train));
    }
    for traj in &split.validation {
        records.push(to_record(traj, SplitTag::Validation));
    }
    for traj in &split.test {
        records.push(to_record(traj, SplitTag::Test));
    }
    let file = DatasetFile {
        schema_version: DATASET_SCHEMA_VERSION,
        config: split.config.clone(),
        trajectories: records,
    };
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(out);
    serde_json::to_writer(&mut writer, &file).map_err(|e| Error::parse(path, &e))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    BufReader::new(file)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;

    // Gate on the version before attempting the full schema.
    #[derive(Deserialize)]
    struct VersionProbe {
        schema_version: u64,
    }
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    if probe.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: probe.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }

    let parsed: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    let mut split = DatasetSplit {
        config: parsed.config,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for record in parsed.trajectories {
        let (tag, traj) = from_record(record, path)?;
        match tag {
            SplitTag::Train => split.train.push(traj),
            SplitTag::Validation => split.validation.push(traj),
            SplitTag::Test => split.test.push(traj),
        }
    }
    Ok(split)
}
