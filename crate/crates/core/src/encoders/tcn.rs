//! Short-range encoder, CNN variant: stacked causal 1-D convolutions with
//! ReLU after every layer, no dilation, no residual connections. The output
//! at position t of layer k sees inputs t-(w-1)..t of layer k-1, so the
//! receptive field of a K-layer stack is K*(w-1)+1.

use super::SeqInput;
use crate::error::{Error, Result};
use crate::params::{glorot_matrix, zero_bias, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct TcnLayer {
    /// taps[j] multiplies the row j steps in the past (j = 0 is the current
    /// position); each tap is a c_in×c_out matrix.
    pub taps: Vec<ParamId>,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct TcnParams {
    pub layers: Vec<TcnLayer>,
    pub width: usize,
}

impl TcnParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        d_in: usize,
        d_enc: usize,
        n_layers: usize,
        width: usize,
    ) -> Result<Self> {
        if n_layers < 1 || width < 1 {
            return Err(Error::InvalidConfig(
                "TCN needs at least 1 layer and width >= 1".into(),
            ));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let c_in = if k == 0 { d_in } else { d_enc };
            let taps = (0..width)
                .map(|j| store.add(format!("tcn.l{k}.w{j}"), glorot_matrix(rng, c_in, d_enc)))
                .collect();
            let bias = store.add(format!("tcn.l{k}.b"), zero_bias(d_enc));
            layers.push(TcnLayer { taps, bias });
        }
        Ok(TcnParams { layers, width })
    }

    pub fn receptive_field(&self) -> usize {
        self.layers.len() * (self.width - 1) + 1
    }

    /// Top-layer rows at every position (zero left-padding is implicit:
    /// out-of-range taps simply contribute nothing).
    pub fn run<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        input: &SeqInput,
    ) -> Result<Vec<Var>> {
        let mut current: Vec<Var> = input.rows.clone();
        for layer in &self.layers {
            let taps: Vec<Var> = layer
                .taps
                .iter()
                .map(|id| tape.param(store, *id))
                .collect::<Result<_>>()?;
            let bias = tape.param(store, layer.bias)?;
            let mut next = Vec::with_capacity(current.len());
            for t in 0..current.len() {
                let mut acc = tape.matmul(current[t], taps[0])?;
                for (j, tap) in taps.iter().enumerate().skip(1) {
                    if j > t {
                        break;
                    }
                    let term = tape.matmul(current[t - j], *tap)?;
                    acc = tape.add(acc, term)?;
                }
                let acc = tape.add(acc, bias)?;
                next.push(tape.relu(acc)?);
            }
            current = next;
        }
        Ok(current)
    }
}

/// Runs the causal convolution stack and returns the top-layer output at the
/// final position.
pub fn tcn_encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    z_in: Var,
    params: &TcnParams,
) -> Result<Var> {
    let input = SeqInput::from_matrix(tape, z_in)?;
    let top = params.run(tape, store, &input)?;
    Ok(top[top.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn manual_params(
        store: &mut ParamStore<f64>,
        taps: Vec<Vec<Vec<f64>>>,
        bias: Vec<f64>,
    ) -> TcnParams {
        let width = taps.len();
        let tap_ids = taps
            .into_iter()
            .enumerate()
            .map(|(j, rows)| store.add(format!("tcn.l0.w{j}"), Tensor::from_rows(&rows).unwrap()))
            .collect();
        let bias = store.add("tcn.l0.b", Tensor::row(bias));
        TcnParams {
            layers: vec![TcnLayer {
                taps: tap_ids,
                bias,
            }],
            width,
        }
    }

    #[test]
    fn width_one_identity_filter_passes_last_row() {
        let mut store = ParamStore::new();
        let params = manual_params(
            &mut store,
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            vec![0.0, 0.0],
        );
        let mut tape = Tape::new();
        let zv = tape
            .constant(Tensor::from_rows(&[vec![0.2, 0.4], vec![1.5, 2.5]]).unwrap())
            .unwrap();
        let out = tcn_encode(&mut tape, &store, zv, &params).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, 2.5]);
    }

    #[test]
    fn hand_convolution_with_zero_padding() {
        // width 2, scalar channel, past tap 1, current tap 1, z = [1,2,3]
        // layer output [1, 3, 5], final position 5
        let mut store = ParamStore::new();
        let params = manual_params(&mut store, vec![vec![vec![1.0]], vec![vec![1.0]]], vec![0.0]);
        let mut tape = Tape::new();
        let zv = tape
            .constant(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap())
            .unwrap();
        let input = SeqInput::from_matrix(&mut tape, zv).unwrap();
        let top = params.run(&mut tape, &store, &input).unwrap();
        let outs: Vec<f64> = top.iter().map(|v| tape.value(*v).data()[0]).collect();
        assert_eq!(outs, vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn receptive_field_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let params = TcnParams::init(&mut store, &mut rng, 4, 4, 3, 5).unwrap();
        assert_eq!(params.receptive_field(), 13);
    }

    #[test]
    fn output_blind_outside_receptive_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let params = TcnParams::init(&mut store, &mut rng, 3, 3, 2, 2).unwrap();
        let rf = params.receptive_field(); // 3
        let len = 8;
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut perturbed = rows.clone();
        for r in &mut perturbed[..len - rf] {
            for v in r.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let encode = |rows: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let zv = tape.constant(Tensor::from_rows(rows).unwrap()).unwrap();
            let out = tcn_encode(&mut tape, &store, zv, &params).unwrap();
            tape.value(out).data().to_vec()
        };
        // positions before len-1-(rf-1) cannot reach the final output
        assert_eq!(encode(&rows), encode(&perturbed));
    }

    #[test]
    fn order_sensitive_inside_receptive_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut changed = 0;
        let trials = 25;
        for _ in 0..trials {
            let mut store = ParamStore::new();
            let params = TcnParams::init(&mut store, &mut rng, 6, 6, 2, 5).unwrap();
            let rows: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let mut swapped = rows.clone();
            swapped.swap(3, 6);
            let encode = |rows: &[Vec<f64>], store: &ParamStore<f64>| {
                let mut tape = Tape::new();
                let zv = tape.constant(Tensor::from_rows(rows).unwrap()).unwrap();
                let out = tcn_encode(&mut tape, store, zv, &params).unwrap();
                tape.value(out).data().to_vec()
            };
            if encode(&rows, &store) != encode(&swapped, &store) {
                changed += 1;
            }
        }
        // ReLU dead zones can very occasionally swallow a transposition
        assert!(changed >= trials - 1, "{changed}/{trials}");
    }
}
