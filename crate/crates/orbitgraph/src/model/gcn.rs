//! Symmetric-normalized graph convolution and the graph summary used to
//! drive the weight-evolving recurrences.

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `D^{-1/2} A D^{-1/2}` where `A` already carries self-loops (the dataset
/// adjacency has a unit diagonal, so nothing is added here).
pub fn normalize_adjacency<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dimension("normalize_adjacency", (n, n), a.shape()));
    }
    for i in 0..n {
        if a.at(i, i) != T::one() {
            return Err(Error::Contract(format!(
                "adjacency must carry self-loops; diagonal entry {i} is {}",
                a.at(i, i)
            )));
        }
        for j in 0..n {
            if a.at(i, j) != a.at(j, i) {
                return Err(Error::Contract(format!(
                    "adjacency must be symmetric; entries ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }

    let mut inv_sqrt_deg = vec![T::zero(); n];
    for (i, slot) in inv_sqrt_deg.iter_mut().enumerate() {
        let degree = (0..n).fold(T::zero(), |acc, j| acc + a.at(i, j));
        // Unit diagonal makes a zero row impossible, but keep the guard.
        if degree <= T::zero() {
            return Err(Error::Contract(format!("zero degree row {i} in adjacency")));
        }
        *slot = T::one() / degree.sqrt();
    }

    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.at(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
    }
    Ok(out)
}

/// Hidden-layer activation choice; the layer before the readout is linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// One graph-convolution layer on the tape: `activation(A_hat * H * W)`.
pub fn gcn_forward<T: Real>(
    tape: &mut Tape<T>,
    normalized: NodeId,
    features: NodeId,
    weight: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let mixed = tape.matmul(normalized, features)?;
    let projected = tape.matmul(mixed, weight)?;
    Ok(match activation {
        Activation::Tanh => tape.tanh(projected),
        Activation::Identity => projected,
    })
}

/// Graph summary for the weight recurrence: the mean node-feature row,
/// tiled across columns so it is entrywise-conformant with a
/// `d_in x d_out` weight matrix.
pub fn summarize<T: Real>(tape: &mut Tape<T>, features: NodeId, d_out: usize) -> Result<NodeId> {
    let mean = tape.mean_rows(features);
    tape.spread_row(mean, d_out)
}
