//! The dynamic-graph predictor: graph-convolutional layers whose weight
//! matrices evolve through a matrix GRU as the sensing graph changes,
//! topped by an affine readout that emits the whole forecast horizon.

mod checkpoint;
mod gcn;
mod gru;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainedModel, CHECKPOINT_SCHEMA_VERSION};
pub use gcn::{gcn_forward, normalize_adjacency, summarize, Activation};
pub use gru::{gru_evolve, GruNodes, GruStep, MatrixGru};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::scalar::Real;
use crate::scenario::{GraphSnapshot, FEATURE_DIM, HISTORY_LEN, HORIZON};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature width followed by the hidden width of each GCN layer.
    pub layer_dims: Vec<usize>,
    pub history_length: usize,
    pub horizon: usize,
    /// Position plus velocity components per agent and step.
    pub state_dim_out: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layer_dims: vec![FEATURE_DIM, 32, 32],
            history_length: HISTORY_LEN,
            horizon: HORIZON,
            state_dim_out: 6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "layer_dims needs an input and at least one hidden width, got {:?}",
                self.layer_dims
            )));
        }
        if self.layer_dims[0] != FEATURE_DIM {
            return Err(Error::Config(format!(
                "layer_dims[0] must equal the feature width {FEATURE_DIM}, got {}",
                self.layer_dims[0]
            )));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.history_length == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "history_length and horizon must be positive".into(),
            ));
        }
        if self.state_dim_out != 6 {
            return Err(Error::Config(format!(
                "state_dim_out is fixed to 6 (position + velocity), got {}",
                self.state_dim_out
            )));
        }
        Ok(())
    }

    pub fn gcn_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn hidden_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn readout_width(&self) -> usize {
        self.horizon * self.state_dim_out
    }
}

/// Initial weight plus its evolution gates for one GCN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer<T> {
    pub w0: Matrix<T>,
    pub gru: MatrixGru<T>,
}

/// All trainable state of the predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolveGcnParams<T> {
    pub config: ModelConfig,
    pub layers: Vec<GcnLayer<T>>,
    pub readout_weight: Matrix<T>,
    pub readout_bias: Matrix<T>,
}

/// Tape handles for registered parameters, in the canonical order.
pub struct LayerNodes {
    pub w0: NodeId,
    pub gru: GruNodes,
}

pub struct ParamNodes {
    pub layers: Vec<LayerNodes>,
    pub readout_weight: NodeId,
    pub readout_bias: NodeId,
}

impl ParamNodes {
    /// Reassemble the handle structure from nodes listed in the canonical
    /// parameter order (as produced by registering a flattened parameter
    /// set, e.g. inside a gradient check).
    pub fn from_ordered(config: &ModelConfig, ids: &[NodeId]) -> Result<ParamNodes> {
        let expected = config.gcn_layers() * 10 + 2;
        if ids.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} parameter nodes, got {}",
                ids.len()
            )));
        }
        let layers = (0..config.gcn_layers())
            .map(|l| {
                let base = l * 10;
                LayerNodes {
                    w0: ids[base],
                    gru: GruNodes {
                        wz: ids[base + 1],
                        uz: ids[base + 2],
                        bz: ids[base + 3],
                        wr: ids[base + 4],
                        ur: ids[base + 5],
                        br: ids[base + 6],
                        wh: ids[base + 7],
                        uh: ids[base + 8],
                        bh: ids[base + 9],
                    },
                }
            })
            .collect();
        Ok(ParamNodes {
            layers,
            readout_weight: ids[expected - 2],
            readout_bias: ids[expected - 1],
        })
    }
}

impl<T: Real> EvolveGcnParams<T> {
    /// Visit every parameter matrix in the canonical (registration) order.
    pub fn for_each(&self, mut f: impl FnMut(&Matrix<T>)) {
        for layer in &self.layers {
            f(&layer.w0);
            let g = &layer.gru;
            for m in [&g.wz, &g.uz, &g.bz, &g.wr, &g.ur, &g.br, &g.wh, &g.uh, &g.bh] {
                f(m);
            }
        }
        f(&self.readout_weight);
        f(&self.readout_bias);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Matrix<T>)) {
        for layer in self.layers.iter_mut() {
            f(&mut layer.w0);
            let g = &mut layer.gru;
            for m in [
                &mut g.wz, &mut g.uz, &mut g.bz, &mut g.wr, &mut g.ur, &mut g.br, &mut g.wh,
                &mut g.uh, &mut g.bh,
            ] {
                f(m);
            }
        }
        f(&mut self.readout_weight);
        f(&mut self.readout_bias);
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.for_each(|_| count += 1);
        count
    }

    pub fn entry_count(&self) -> usize {
        let mut count = 0;
        self.for_each(|m| count += m.rows() * m.cols());
        count
    }

    /// Stable parameter names matching the canonical order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (l, _) in self.layers.iter().enumerate() {
            names.push(format!("layer{l}.w0"));
            for gate in ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"] {
                names.push(format!("layer{l}.gru.{gate}"));
            }
        }
        names.push("readout.weight".into());
        names.push("readout.bias".into());
        names
    }

    pub fn to_flat(&self) -> Vec<Matrix<T>> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each(|m| out.push(m.clone()));
        out
    }

    pub fn from_flat(config: ModelConfig, flat: &[Matrix<T>]) -> Result<Self> {
        let mut template = init_params_with(&config, |_, _| T::zero())?;
        let mut idx = 0;
        let mut shape_err = None;
        template.for_each_mut(|m| {
            if idx < flat.len() {
                if flat[idx].shape() == m.shape() {
                    *m = flat[idx].clone();
                } else if shape_err.is_none() {
                    shape_err = Some((idx, m.shape(), flat[idx].shape()));
                }
            }
            idx += 1;
        });
        if let Some((i, want, got)) = shape_err {
            return Err(Error::Contract(format!(
                "parameter {i} has shape {got:?}, expected {want:?}"
            )));
        }
        if idx != flat.len() {
            return Err(Error::Contract(format!(
                "expected {idx} parameter matrices, got {}",
                flat.len()
            )));
        }
        Ok(template)
    }

    /// Register every parameter on a tape, in canonical order.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamNodes {
        let layers = self
            .layers
            .iter()
            .map(|layer| LayerNodes {
                w0: tape.param(layer.w0.clone()).1,
                gru: GruNodes {
                    wz: tape.param(layer.gru.wz.clone()).1,
                    uz: tape.param(layer.gru.uz.clone()).1,
                    bz: tape.param(layer.gru.bz.clone()).1,
                    wr: tape.param(layer.gru.wr.clone()).1,
                    ur: tape.param(layer.gru.ur.clone()).1,
                    br: tape.param(layer.gru.br.clone()).1,
                    wh: tape.param(layer.gru.wh.clone()).1,
                    uh: tape.param(layer.gru.uh.clone()).1,
                    bh: tape.param(layer.gru.bh.clone()).1,
                },
            })
            .collect();
        ParamNodes {
            layers,
            readout_weight: tape.param(self.readout_weight.clone()).1,
            readout_bias: tape.param(self.readout_bias.clone()).1,
        }
    }
}

fn init_params_with<T: Real>(
    config: &ModelConfig,
    mut weight: impl FnMut(usize, usize) -> T,
) -> Result<EvolveGcnParams<T>> {
    config.validate()?;
    let mut layers = Vec::with_capacity(config.gcn_layers());
    for l in 0..config.gcn_layers() {
        let (d_in, d_out) = (config.layer_dims[l], config.layer_dims[l + 1]);
        let mut mat = |zero: bool| {
            if zero {
                Matrix::zeros(d_in, d_out)
            } else {
                let mut m = Matrix::zeros(d_in, d_out);
                for r in 0..d_in {
                    for c in 0..d_out {
                        m.set(r, c, weight(d_in, d_out));
                    }
                }
                m
            }
        };
        layers.push(GcnLayer {
            w0: mat(false),
            gru: MatrixGru {
                wz: mat(false),
                uz: mat(false),
                bz: mat(true),
                wr: mat(false),
                ur: mat(false),
                br: mat(true),
                wh: mat(false),
                uh: mat(false),
                bh: mat(true),
            },
        });
    }

    let hidden = config.hidden_dim();
    let width = config.readout_width();
    let mut readout_weight = Matrix::zeros(hidden, width);
    for r in 0..hidden {
        for c in 0..width {
            readout_weight.set(r, c, weight(hidden, width));
        }
    }
    Ok(EvolveGcnParams {
        config: config.clone(),
        layers,
        readout_weight,
        readout_bias: Matrix::zeros(1, width),
    })
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> Result<EvolveGcnParams<T>> {
    let mut rng = seeded_rng(seed, 0);
    init_params_with(config, |fan_in, fan_out| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        T::of(rng.random_range(-bound..bound))
    })
}

/// Per-step inputs for one history window, already on the tape.
pub struct WindowInput {
    /// Standardized N x 13 feature nodes, one per history step.
    pub features: Vec<NodeId>,
    /// Normalized adjacency nodes, one per history step.
    pub normalized: Vec<NodeId>,
}

impl WindowInput {
    /// Constant-node window from plain snapshots (ground-truth history).
    pub fn from_snapshots<T: Real>(
        tape: &mut Tape<T>,
        snapshots: &[GraphSnapshot<T>],
        standardizer: &Standardizer<T>,
    ) -> Result<WindowInput> {
        let mut features = Vec::with_capacity(snapshots.len());
        let mut normalized = Vec::with_capacity(snapshots.len());
        for snap in snapshots {
            features.push(tape.constant(standardizer.apply(&snap.features)?));
            normalized.push(tape.constant(snap.normalized.clone()));
        }
        Ok(WindowInput { features, normalized })
    }
}

/// Tape handles of one window's forecast.
pub struct WindowPrediction {
    /// N x (horizon * 6) readout.
    pub readout: NodeId,
    /// Per horizon step: N x 6 predicted states.
    pub states: Vec<NodeId>,
    /// Per horizon step: N x 3 predicted positions.
    pub positions: Vec<NodeId>,
    /// Per horizon step: N x 3 predicted velocities.
    pub velocities: Vec<NodeId>,
    pub agents: usize,
}

/// Run the evolving-weight forward pass over one history window.
///
/// `weight_state` holds each layer's current weight node; it starts at the
/// registered `w0` nodes and is advanced in place so consecutive windows
/// of one trajectory share the recurrence state. Reset it to `w0` between
/// trajectories.
pub fn model_forward<T: Real>(
    tape: &mut Tape<T>,
    input: &WindowInput,
    params: &ParamNodes,
    config: &ModelConfig,
    weight_state: &mut Vec<NodeId>,
) -> Result<WindowPrediction> {
    if input.features.len() != config.history_length
        || input.normalized.len() != config.history_length
    {
        return Err(Error::Contract(format!(
            "window must supply {} steps, got {}",
            config.history_length,
            input.features.len()
        )));
    }
    if weight_state.len() != params.layers.len() {
        return Err(Error::Contract(format!(
            "weight state tracks {} layers, model has {}",
            weight_state.len(),
            params.layers.len()
        )));
    }

    let layer_count = params.layers.len();
    let mut embeddings = *input.features.last().expect("non-empty window");
    for (step, (&features, &normalized)) in input
        .features
        .iter()
        .zip(input.normalized.iter())
        .enumerate()
    {
        let _ = step;
        let mut h = features;
        for (l, layer) in params.layers.iter().enumerate() {
            let d_out = config.layer_dims[l + 1];
            let summary = summarize(tape, h, d_out)?;
            let evolved = gru_evolve(tape, weight_state[l], summary, &layer.gru)?;
            weight_state[l] = evolved.updated;
            let activation = if l + 1 < layer_count {
                Activation::Tanh
            } else {
                Activation::Identity
            };
            h = gcn_forward(tape, normalized, h, evolved.updated, activation)?;
        }
        embeddings = h;
    }

    let projected = tape.matmul(embeddings, params.readout_weight)?;
    let readout = tape.add_row_broadcast(projected, params.readout_bias)?;

    let agents = tape.value(readout).rows();
    let dim = config.state_dim_out;
    let mut states = Vec::with_capacity(config.horizon);
    let mut positions = Vec::with_capacity(config.horizon);
    let mut velocities = Vec::with_capacity(config.horizon);
    for k in 0..config.horizon {
        states.push(tape.slice_cols(readout, k * dim, dim)?);
        positions.push(tape.slice_cols(readout, k * dim, 3)?);
        velocities.push(tape.slice_cols(readout, k * dim + 3, 3)?);
    }
    Ok(WindowPrediction {
        readout,
        states,
        positions,
        velocities,
        agents,
    })
}

/// Per-feature affine input normalization fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    /// Fit column means and standard deviations over stacked feature
    /// matrices. Near-constant columns keep unit scale.
    pub fn fit<'a>(feature_mats: impl Iterator<Item = &'a Matrix<T>>) -> Result<Self> {
        let mut mats = feature_mats.peekable();
        let dim = mats
            .peek()
            .ok_or_else(|| Error::Contract("standardizer fit over empty feature set".into()))?
            .cols();
        let mut count = 0usize;
        let mut sum = vec![T::zero(); dim];
        let mut sum_sq = vec![T::zero(); dim];
        for mat in mats {
            if mat.cols() != dim {
                return Err(Error::dimension("standardizer_fit", (0, dim), mat.shape()));
            }
            for r in 0..mat.rows() {
                for c in 0..dim {
                    let v = mat.at(r, c);
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += mat.rows();
        }
        let n = T::of_usize(count.max(1));
        let mean: Vec<T> = sum.iter().map(|&s| s / n).collect();
        let std: Vec<T> = sum_sq
            .iter()
            .zip(mean.iter())
            .map(|(&sq, &m)| {
                let var = (sq / n - m * m).max(T::zero());
                let sd = var.sqrt();
                if sd < T::of(1e-12) {
                    T::one()
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        if features.cols() != self.mean.len() {
            return Err(Error::dimension(
                "standardize",
                (0, self.mean.len()),
                features.shape(),
            ));
        }
        let mut out = features.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, (features.at(r, c) - self.mean[c]) / self.std[c]);
            }
        }
        Ok(out)
    }

    /// Constant matrices used to standardize on the tape:
    /// `(H - mean_tile) o inv_std_tile`.
    pub fn tiles(&self, rows: usize) -> (Matrix<T>, Matrix<T>) {
        let dim = self.mean.len();
        let mut mean_tile = Matrix::zeros(rows, dim);
        let mut inv_tile = Matrix::zeros(rows, dim);
        for r in 0..rows {
            for c in 0..dim {
                mean_tile.set(r, c, self.mean[c]);
                inv_tile.set(r, c, T::one() / self.std[c]);
            }
        }
        (mean_tile, inv_tile)
    }
}
