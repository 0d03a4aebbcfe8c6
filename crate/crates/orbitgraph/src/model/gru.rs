//! Matrix-form gated recurrence over the GCN weights. Every product is a
//! Hadamard product, which keeps all five update equations conformant
//! with the tiled graph summary.

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::Result;
use crate::scalar::Real;

/// Gate parameters, all shaped like the weight matrix they evolve.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGru<T> {
    pub wz: Matrix<T>,
    pub uz: Matrix<T>,
    pub bz: Matrix<T>,
    pub wr: Matrix<T>,
    pub ur: Matrix<T>,
    pub br: Matrix<T>,
    pub wh: Matrix<T>,
    pub uh: Matrix<T>,
    pub bh: Matrix<T>,
}

/// Tape handles for one registered [`MatrixGru`].
#[derive(Clone, Copy, Debug)]
pub struct GruNodes {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

/// Intermediate handles of one evolution step, exposed so tests can
/// inspect the gate and candidate alongside the update.
#[derive(Clone, Copy, Debug)]
pub struct GruStep {
    pub update_gate: NodeId,
    pub reset_gate: NodeId,
    pub candidate: NodeId,
    pub updated: NodeId,
}

/// One recurrence step:
/// `Z = sigmoid(Wz o z + Uz o W + Bz)`,
/// `R = sigmoid(Wr o z + Ur o W + Br)`,
/// `W~ = tanh(Wh o z + Uh o (R o W) + Bh)`,
/// `W' = (1 - Z) o W + Z o W~`.
pub fn gru_evolve<T: Real>(
    tape: &mut Tape<T>,
    w_prev: NodeId,
    summary: NodeId,
    gru: &GruNodes,
) -> Result<GruStep> {
    let shape = tape.value(w_prev).shape();

    let z_in = tape.hadamard(gru.wz, summary)?;
    let z_rec = tape.hadamard(gru.uz, w_prev)?;
    let z_sum = tape.add(z_in, z_rec)?;
    let z_pre = tape.add(z_sum, gru.bz)?;
    let update_gate = tape.sigmoid(z_pre);

    let r_in = tape.hadamard(gru.wr, summary)?;
    let r_rec = tape.hadamard(gru.ur, w_prev)?;
    let r_sum = tape.add(r_in, r_rec)?;
    let r_pre = tape.add(r_sum, gru.br)?;
    let reset_gate = tape.sigmoid(r_pre);

    let gated_prev = tape.hadamard(reset_gate, w_prev)?;
    let h_in = tape.hadamard(gru.wh, summary)?;
    let h_rec = tape.hadamard(gru.uh, gated_prev)?;
    let h_sum = tape.add(h_in, h_rec)?;
    let h_pre = tape.add(h_sum, gru.bh)?;
    let candidate = tape.tanh(h_pre);

    let ones = tape.constant(Matrix::filled(shape.0, shape.1, T::one()));
    let keep = tape.sub(ones, update_gate)?;
    let kept = tape.hadamard(keep, w_prev)?;
    let injected = tape.hadamard(update_gate, candidate)?;
    let updated = tape.add(kept, injected)?;

    Ok(GruStep {
        update_gate,
        reset_gate,
        candidate,
        updated,
    })
}
