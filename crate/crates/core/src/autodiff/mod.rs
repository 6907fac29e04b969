//! Dense tensors, a define-by-run tape with reverse-mode gradients, Adam,
//! and a finite-difference gradient checker.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_params};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Segment, SlotIndex, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_row;
pub use tape::sigmoid;

use crate::error::{GasError, Result};

/// Softmax over the unmasked entries of `scores`. Masked entries are exactly 0.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(GasError::Shape {
            op: "masked_softmax",
            left: vec![scores.len()],
            right: vec![mask.len()],
        });
    }
    let mut out = vec![0.0; scores.len()];
    if !softmax_row(scores, mask, &mut out) {
        return Err(GasError::EmptyNeighborhood);
    }
    Ok(out)
}

/// Single-sequence text-CNN branch: `seq` is `n × d`, `filter_bank` is
/// `w × d × f`. Returns the `f` max-pooled ReLU activations.
pub fn seq_conv_maxpool(tape: &mut Tape, seq: Var, filter_bank: Var, bias: Var) -> Result<Var> {
    let fb = tape.value(filter_bank);
    let width = match fb.shape() {
        [w, _, _] => *w,
        s => {
            return Err(GasError::Shape {
                op: "seq_conv_maxpool",
                left: s.to_vec(),
                right: vec![3],
            })
        }
    };
    let n = tape.value(seq).rows();
    tape.seq_conv_maxpool(seq, filter_bank, bias, width, &[Segment { start: 0, len: n }])
}

#[cfg(test)]
mod tests;
