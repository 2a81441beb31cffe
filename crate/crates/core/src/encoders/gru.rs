//! Short-range encoder, RNN variant: a GRU iterated over the processed rows,
//! hidden width equal to d_in, followed by an output projection.
//!
//! Cell convention:
//!   r = sigmoid(x·W_xr + h·W_hr + b_r)
//!   u = sigmoid(x·W_xu + h·W_hu + b_u)
//!   c = tanh(x·W_xc + (r ⊙ h)·W_hc + b_c)
//!   h' = (1 − u) ⊙ h + u ⊙ c

use super::SeqInput;
use crate::error::Result;
use crate::params::{glorot_matrix, zero_bias, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_xr: ParamId,
    pub w_hr: ParamId,
    pub b_r: ParamId,
    pub w_xu: ParamId,
    pub w_hu: ParamId,
    pub b_u: ParamId,
    pub w_xc: ParamId,
    pub w_hc: ParamId,
    pub b_c: ParamId,
    /// Maps the final hidden state to the encoder output space (d_in×d_enc).
    pub out_proj: ParamId,
    pub d_in: usize,
}

impl GruParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        d_in: usize,
        d_enc: usize,
    ) -> Self {
        let mut mat = |name: &str| store.add(name, glorot_matrix(rng, d_in, d_in));
        let w_xr = mat("gru.w_xr");
        let w_hr = mat("gru.w_hr");
        let w_xu = mat("gru.w_xu");
        let w_hu = mat("gru.w_hu");
        let w_xc = mat("gru.w_xc");
        let w_hc = mat("gru.w_hc");
        let b_r = store.add("gru.b_r", zero_bias(d_in));
        let b_u = store.add("gru.b_u", zero_bias(d_in));
        let b_c = store.add("gru.b_c", zero_bias(d_in));
        let out_proj = store.add("gru.out_proj", glorot_matrix(rng, d_in, d_enc));
        GruParams {
            w_xr,
            w_hr,
            b_r,
            w_xu,
            w_hu,
            b_u,
            w_xc,
            w_hc,
            b_c,
            out_proj,
            d_in,
        }
    }

    /// Weight leaves shared by every step of a window.
    fn leaf<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>) -> Result<GruLeafed> {
        Ok(GruLeafed {
            w_xr: tape.param(store, self.w_xr)?,
            w_hr: tape.param(store, self.w_hr)?,
            b_r: tape.param(store, self.b_r)?,
            w_xu: tape.param(store, self.w_xu)?,
            w_hu: tape.param(store, self.w_hu)?,
            b_u: tape.param(store, self.b_u)?,
            w_xc: tape.param(store, self.w_xc)?,
            w_hc: tape.param(store, self.w_hc)?,
            b_c: tape.param(store, self.b_c)?,
        })
    }

    /// Hidden states h_1..h_τ starting from h_0 = 0.
    pub fn run<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        input: &SeqInput,
    ) -> Result<Vec<Var>> {
        let leafed = self.leaf(tape, store)?;
        let mut h = tape.constant(Tensor::zeros(vec![1, self.d_in]))?;
        let mut states = Vec::with_capacity(input.len());
        for &x in &input.rows {
            h = cell_step(tape, &leafed, self.d_in, x, h)?;
            states.push(h);
        }
        Ok(states)
    }

    pub fn output_at<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        states: &[Var],
        t: usize,
    ) -> Result<Var> {
        let w = tape.param(store, self.out_proj)?;
        tape.matmul(states[t], w)
    }
}

struct GruLeafed {
    w_xr: Var,
    w_hr: Var,
    b_r: Var,
    w_xu: Var,
    w_hu: Var,
    b_u: Var,
    w_xc: Var,
    w_hc: Var,
    b_c: Var,
}

fn cell_step<S: Scalar>(
    tape: &mut Tape<S>,
    p: &GruLeafed,
    d_in: usize,
    x: Var,
    h: Var,
) -> Result<Var> {
    let affine = |tape: &mut Tape<S>, a: Var, wa: Var, b: Var, wb: Var, bias: Var| {
        let aw = tape.matmul(a, wa)?;
        let bw = tape.matmul(b, wb)?;
        let s = tape.add(aw, bw)?;
        tape.add(s, bias)
    };

    let r_pre = affine(tape, x, p.w_xr, h, p.w_hr, p.b_r)?;
    let r = tape.sigmoid(r_pre)?;
    let u_pre = affine(tape, x, p.w_xu, h, p.w_hu, p.b_u)?;
    let u = tape.sigmoid(u_pre)?;

    let rh = tape.mul(r, h)?;
    let c_pre = affine(tape, x, p.w_xc, rh, p.w_hc, p.b_c)?;
    let c = tape.tanh(c_pre)?;

    let ones = tape.constant(Tensor::new(vec![1, d_in], vec![S::one(); d_in])?)?;
    let neg_u = tape.scale(u, -S::one())?;
    let one_minus_u = tape.add(ones, neg_u)?;
    let keep = tape.mul(one_minus_u, h)?;
    let take = tape.mul(u, c)?;
    tape.add(keep, take)
}

/// One GRU step: h' from input row x and previous hidden state h.
pub fn gru_cell<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &GruParams,
    x: Var,
    h: Var,
) -> Result<Var> {
    let leafed = p.leaf(tape, store)?;
    cell_step(tape, &leafed, p.d_in, x, h)
}

/// Runs the GRU over the whole prefix and projects the final hidden state.
pub fn gru_encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    z_in: Var,
    params: &GruParams,
) -> Result<Var> {
    let input = SeqInput::from_matrix(tape, z_in)?;
    let states = params.run(tape, store, &input)?;
    params.output_at(tape, store, &states, states.len() - 1)
}
