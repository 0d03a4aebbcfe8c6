//! Central-difference verification of tape gradients. The checker is the
//! independent oracle for every differentiable operation: it only ever
//! calls the forward pass, never the backward pass it is checking.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::matrix::Matrix;
use super::tape::{NodeId, Tape};

/// Builds a scalar loss on the given tape from parameter nodes handed out
/// in the same order as the `params` slice passed to the checker.
pub trait LossBuilder<T: Real> {
    fn build(&self, tape: &mut Tape<T>, params: &[NodeId]) -> Result<NodeId>;
}

impl<T: Real, F> LossBuilder<T> for F
where
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    fn build(&self, tape: &mut Tape<T>, params: &[NodeId]) -> Result<NodeId> {
        self(tape, params)
    }
}

fn evaluate<T: Real>(builder: &impl LossBuilder<T>, params: &[Matrix<T>]) -> Result<T> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone()).1).collect();
    let root = builder.build(&mut tape, &ids)?;
    tape.scalar(root)
}

/// Result of a two-regime gradient check.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheckReport<T> {
    /// Max of `|analytic - numeric| / max(1e-12, |numeric|)` over entries
    /// whose central difference clears the noise floor.
    pub max_relative: T,
    pub relative_entries: usize,
    /// Max of `|analytic - numeric|` over the remaining entries, whose
    /// central differences sit inside float rounding noise.
    pub max_absolute_below_floor: T,
    pub below_floor_entries: usize,
}

/// Max over all parameter entries of
/// `|analytic - central difference| / max(1e-12, |central difference|)`.
///
/// Fails if `eps <= 0` or if two evaluations of the loss at the same
/// point disagree (the loss must be deterministic for central
/// differences to mean anything).
pub fn finite_difference_check<T: Real>(
    builder: impl LossBuilder<T>,
    params: &[Matrix<T>],
    eps: T,
) -> Result<T> {
    Ok(finite_difference_check_detailed(builder, params, eps, T::zero())?.max_relative)
}

/// Like [`finite_difference_check`], but entries whose central difference
/// magnitude falls below `relative_floor` are compared absolutely instead
/// of relatively. A central difference of a loss `f` cannot resolve
/// derivatives below roughly `ulp(f) / eps`, so per-entry relative error
/// is meaningless there; with `relative_floor = 0` every entry is
/// compared relatively.
pub fn finite_difference_check_detailed<T: Real>(
    builder: impl LossBuilder<T>,
    params: &[Matrix<T>],
    eps: T,
    relative_floor: T,
) -> Result<GradCheckReport<T>> {
    if eps <= T::zero() {
        return Err(Error::Contract("finite difference eps must be positive".into()));
    }

    let first = evaluate(&builder, params)?;
    let second = evaluate(&builder, params)?;
    if first != second {
        return Err(Error::Contract(format!(
            "loss function is not deterministic: {first} != {second}"
        )));
    }

    // Analytic gradients from one recorded pass.
    let mut tape = Tape::new();
    let ids: Vec<(super::tape::ParamId, NodeId)> =
        params.iter().map(|p| tape.param(p.clone())).collect();
    let node_ids: Vec<NodeId> = ids.iter().map(|(_, n)| *n).collect();
    let root = builder.build(&mut tape, &node_ids)?;
    let grads = tape.backward(root)?;

    let floor = T::of(1e-12);
    let mut report = GradCheckReport::<T>::default();
    let mut perturbed = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for r in 0..param.rows() {
            for c in 0..param.cols() {
                let base = param.at(r, c);
                perturbed[pi].set(r, c, base + eps);
                let plus = evaluate(&builder, &perturbed)?;
                perturbed[pi].set(r, c, base - eps);
                let minus = evaluate(&builder, &perturbed)?;
                perturbed[pi].set(r, c, base);

                let numeric = (plus - minus) / (T::of(2.0) * eps);
                let analytic = grads.get(ids[pi].0).at(r, c);
                if numeric.abs() >= relative_floor {
                    let rel = (analytic - numeric).abs() / floor.max(numeric.abs());
                    report.max_relative = report.max_relative.max(rel);
                    report.relative_entries += 1;
                } else {
                    report.max_absolute_below_floor =
                        report.max_absolute_below_floor.max((analytic - numeric).abs());
                    report.below_floor_entries += 1;
                }
            }
        }
    }
    Ok(report)
}
