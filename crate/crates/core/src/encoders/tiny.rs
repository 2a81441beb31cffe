//! Tiny-range encoder: looks at the last processed row only, so its temporal
//! range is exactly 1. Parameter-free when d_in == d_enc, a single affine
//! projection otherwise.

use super::SeqInput;
use crate::error::Result;
use crate::params::{glorot_matrix, zero_bias, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct TinyRangeParams {
    /// (weight d_in×d_enc, bias 1×d_enc); present only when d_in != d_enc.
    pub proj: Option<(ParamId, ParamId)>,
}

impl TinyRangeParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        d_in: usize,
        d_enc: usize,
    ) -> Self {
        let proj = (d_in != d_enc).then(|| {
            (
                store.add("tiny.w", glorot_matrix(rng, d_in, d_enc)),
                store.add("tiny.b", zero_bias(d_enc)),
            )
        });
        TinyRangeParams { proj }
    }

    pub fn output_at<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        input: &SeqInput,
        t: usize,
    ) -> Result<Var> {
        let x = input.rows[t];
        match &self.proj {
            None => Ok(x),
            Some((w, b)) => {
                let wv = tape.param(store, *w)?;
                let bv = tape.param(store, *b)?;
                let xw = tape.matmul(x, wv)?;
                tape.add(xw, bv)
            }
        }
    }
}

/// Encoder output for the full prefix: depends on the last row only.
pub fn tiny_encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    z_in: Var,
    params: &TinyRangeParams,
) -> Result<Var> {
    let input = SeqInput::from_matrix(tape, z_in)?;
    params.output_at(tape, store, &input, input.len() - 1)
}
