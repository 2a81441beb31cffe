//! The three temporal-range sequence encoders. Each maps processed inputs
//! (a τ×d_in matrix on the tape) to a 1×d_enc output, differing in how far
//! back their output can depend on the sequence.

mod attention;
mod gru;
mod tcn;
mod tiny;

pub use attention::{attention_encode, AttentionParams};
pub use gru::{gru_cell, gru_encode, GruParams};
pub use tcn::{tcn_encode, TcnParams};
pub use tiny::{tiny_encode, TinyRangeParams};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Processed input rows shared by the encoders within one forward pass:
/// the τ×d_in matrix plus each row as its own tape node.
pub struct SeqInput {
    pub matrix: Var,
    pub rows: Vec<Var>,
}

impl SeqInput {
    pub fn from_matrix<S: Scalar>(tape: &mut Tape<S>, matrix: Var) -> Result<Self> {
        let t = tape.value(matrix);
        if t.rank() != 2 || t.shape()[0] == 0 {
            return Err(Error::EmptyInput(
                "encoder input must be a nonempty matrix of processed rows".into(),
            ));
        }
        let n = t.shape()[0];
        let rows = (0..n)
            .map(|i| tape.gather(matrix, &[i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(SeqInput { matrix, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
