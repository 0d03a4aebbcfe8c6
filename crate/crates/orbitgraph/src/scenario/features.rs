//! Node embeddings: each agent carries its own state, its sensing degree
//! and the mean relative state of its sensed neighbors.

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::model::normalize_adjacency;
use crate::scalar::Real;
use crate::{Mat, State};

/// Feature layout per agent:
/// `[px, py, pz, vx, vy, vz, degree, mean rel p (3), mean rel v (3)]`.
pub const FEATURE_DIM: usize = 13;

/// Graph inputs for one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSnapshot<T> {
    /// 0/1 adjacency with unit diagonal.
    pub adjacency: Matrix<T>,
    /// `D^{-1/2} A D^{-1/2}` with self-loops already inside `A`.
    pub normalized: Matrix<T>,
    /// N x 13 node features.
    pub features: Matrix<T>,
}

impl<T: Real> GraphSnapshot<T> {
    pub fn agents(&self) -> usize {
        self.adjacency.rows()
    }
}

/// Assemble node features from agent states and the sensing adjacency.
/// Degree excludes the self-loop; neighbor aggregates are means over the
/// sensed neighbors and zero for isolated agents.
pub fn node_features(states: &[State], adjacency: &Mat) -> Result<Mat> {
    let n = states.len();
    if adjacency.rows() != n || adjacency.cols() != n {
        return Err(Error::dimension("node_features", (n, n), adjacency.shape()));
    }

    let mut features = Matrix::zeros(n, FEATURE_DIM);
    for (i, state) in states.iter().enumerate() {
        let own = state.to_array();
        for (c, v) in own.iter().enumerate() {
            features.set(i, c, *v);
        }

        let neighbors: Vec<usize> = (0..n)
            .filter(|&j| j != i && adjacency.at(i, j) != 0.0)
            .collect();
        let degree = neighbors.len();
        features.set(i, 6, degree as f64);
        if degree == 0 {
            continue;
        }

        let mut rel = [0.0f64; 6];
        for &j in &neighbors {
            let other = states[j].to_array();
            for c in 0..6 {
                rel[c] += other[c] - own[c];
            }
        }
        for (c, sum) in rel.iter().enumerate() {
            features.set(i, 7 + c, sum / degree as f64);
        }
    }
    Ok(features)
}

/// Build the full per-step snapshot (adjacency, normalization, features).
pub fn snapshot(states: &[State], adjacency: &Mat) -> Result<GraphSnapshot<f64>> {
    Ok(GraphSnapshot {
        normalized: normalize_adjacency(adjacency)?,
        features: node_features(states, adjacency)?,
        adjacency: adjacency.clone(),
    })
}

/// Linear map sending an N x 3 column block of states to the mean relative
/// offsets used in the feature layout: `G p` has row i equal to
/// `mean_{j in N(i)} (p_j - p_i)`, and zero rows for isolated agents.
/// Used to rebuild features on the tape when history entries are
/// model predictions instead of ground truth.
pub fn relative_mean_map<T: Real>(adjacency: &Matrix<T>) -> Matrix<T> {
    let n = adjacency.rows();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        let degree = (0..n)
            .filter(|&j| j != i && adjacency.at(i, j) != T::zero())
            .count();
        if degree == 0 {
            continue;
        }
        let inv = T::one() / T::of_usize(degree);
        for j in 0..n {
            if j != i && adjacency.at(i, j) != T::zero() {
                g.set(i, j, inv);
            }
        }
        g.set(i, i, -T::one());
    }
    g
}

/// Degree column (neighbors excluding self) as an N x 1 matrix.
pub fn degree_column<T: Real>(adjacency: &Matrix<T>) -> Matrix<T> {
    let n = adjacency.rows();
    let mut col = Matrix::zeros(n, 1);
    for i in 0..n {
        let degree = (0..n)
            .filter(|&j| j != i && adjacency.at(i, j) != T::zero())
            .count();
        col.set(i, 0, T::of_usize(degree));
    }
    col
}

impl<T: Real> GraphSnapshot<T> {
    /// Widen a f64 snapshot by scalar conversion (testing convenience).
    pub fn cast_from(other: &GraphSnapshot<f64>) -> GraphSnapshot<T> {
        let conv = |m: &Mat| {
            Matrix::from_vec(
                m.rows(),
                m.cols(),
                m.data().iter().map(|&v| T::of(v)).collect(),
            )
            .expect("same shape")
        };
        GraphSnapshot {
            adjacency: conv(&other.adjacency),
            normalized: conv(&other.normalized),
            features: conv(&other.features),
        }
    }
}
