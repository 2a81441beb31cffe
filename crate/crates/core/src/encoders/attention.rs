//! Long-range encoder: scaled dot-product attention with the last processed
//! row as the query and every row (itself included) as keys and values.
//! Unlimited temporal range, no order sensitivity.
//!
//! Attended rows are canonically reordered (by raw weight, then row content)
//! before the weighted sum, so the output is bit-identical under any
//! permutation of the non-final rows, not merely equal up to rounding.

use super::SeqInput;
use crate::error::Result;
use crate::params::{glorot_matrix, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// d_in×d_enc projection for queries/keys/values; present only when
    /// d_in != d_enc (the identity is used otherwise).
    pub proj: Option<ParamId>,
    pub d_enc: usize,
}

impl AttentionParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        d_in: usize,
        d_enc: usize,
    ) -> Self {
        let proj = (d_in != d_enc).then(|| store.add("attn.w", glorot_matrix(rng, d_in, d_enc)));
        AttentionParams { proj, d_enc }
    }

    /// Projected input matrix Z̃ (the input itself when no projection).
    pub fn prepare<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        input: &SeqInput,
    ) -> Result<Var> {
        match &self.proj {
            None => Ok(input.matrix),
            Some(w) => {
                let wv = tape.param(store, *w)?;
                tape.matmul(input.matrix, wv)
            }
        }
    }

    pub fn output_at<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        input: &SeqInput,
        t: usize,
    ) -> Result<Var> {
        let z_tilde = self.prepare(tape, store, input)?;
        self.output_from_projected(tape, z_tilde, t)
    }

    /// Attention over rows 0..=t of the projected matrix, with diagnostics
    /// available through `attention_weights_at`.
    pub fn output_from_projected<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        z_tilde: Var,
        t: usize,
    ) -> Result<Var> {
        let (out, _) = self.output_and_weights(tape, z_tilde, t)?;
        Ok(out)
    }

    pub fn output_and_weights<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        z_tilde: Var,
        t: usize,
    ) -> Result<(Var, Var)> {
        let perm = canonical_order(tape, z_tilde, t);
        let rows = tape.gather(z_tilde, &perm)?;
        let query = tape.gather(z_tilde, &[t])?;
        let keys_t = tape.transpose(rows)?;
        let logits = tape.matmul(query, keys_t)?;
        let scaled = tape.scale(logits, S::of_f64(1.0 / (self.d_enc as f64).sqrt()))?;
        let weights = tape.softmax(scaled)?;
        let out = tape.matmul(weights, rows)?;
        Ok((out, weights))
    }
}

/// Indices 0..=t sorted by (raw attention weight, row content): a canonical
/// order that depends only on the multiset of attended rows.
fn canonical_order<S: Scalar>(tape: &Tape<S>, z_tilde: Var, t: usize) -> Vec<usize> {
    let z = tape.value(z_tilde);
    let query = z.row_slice(t);
    let mut keyed: Vec<(usize, S)> = (0..=t)
        .map(|i| {
            let dot = z
                .row_slice(i)
                .iter()
                .zip(query)
                .map(|(a, b)| *a * *b)
                .sum::<S>();
            (i, dot)
        })
        .collect();
    keyed.sort_by(|(i, wi), (j, wj)| {
        wi.partial_cmp(wj)
            .expect("finite weights")
            .then_with(|| {
                let (ri, rj) = (z.row_slice(*i), z.row_slice(*j));
                for (a, b) in ri.iter().zip(rj) {
                    match a.partial_cmp(b).expect("finite rows") {
                        std::cmp::Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                std::cmp::Ordering::Equal
            })
    });
    keyed.into_iter().map(|(i, _)| i).collect()
}

/// Full-prefix encoder output (query = last row).
pub fn attention_encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    z_in: Var,
    params: &AttentionParams,
) -> Result<Var> {
    let input = SeqInput::from_matrix(tape, z_in)?;
    params.output_at(tape, store, &input, input.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_proj(d: usize) -> AttentionParams {
        AttentionParams {
            proj: None,
            d_enc: d,
        }
    }

    #[test]
    fn single_position_returns_the_row() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new();
        let zv = tape
            .constant(Tensor::from_rows(&[vec![0.3, -0.9]]).unwrap())
            .unwrap();
        let out = attention_encode(&mut tape, &store, zv, &no_proj(2)).unwrap();
        assert_eq!(tape.value(out).data(), &[0.3, -0.9]);
    }

    #[test]
    fn identical_rows_average_to_the_row() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new();
        let zv = tape
            .constant(Tensor::from_rows(&[vec![1.5, -2.0], vec![1.5, -2.0]]).unwrap())
            .unwrap();
        let out = attention_encode(&mut tape, &store, zv, &no_proj(2)).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, -2.0]);
    }

    #[test]
    fn scalar_case_by_hand() {
        // d = 1, Z = [1, 2]: raw weights [2, 4], softmax ~ [0.1192, 0.8808],
        // output ~ 1.8808
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new();
        let zv = tape
            .constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap())
            .unwrap();
        let out = attention_encode(&mut tape, &store, zv, &no_proj(1)).unwrap();
        let expected = {
            let e2 = (2.0f64).exp();
            (1.0 + 2.0 * e2) / (1.0 + e2)
        };
        assert!((tape.value(out).data()[0] - expected).abs() < 1e-12);
        assert!((tape.value(out).data()[0] - 1.8808).abs() < 1e-4);
    }

    #[test]
    fn weights_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let store = ParamStore::<f64>::new();
        let params = no_proj(3);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let mut tape = Tape::new();
            let zv = tape.constant(Tensor::from_rows(&rows).unwrap()).unwrap();
            let input = SeqInput::from_matrix(&mut tape, zv).unwrap();
            let z_tilde = params.prepare(&mut tape, &store, &input).unwrap();
            let (_, w) = params.output_and_weights(&mut tape, z_tilde, 4).unwrap();
            let wt = tape.value(w);
            let sum: f64 = wt.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(wt.data().iter().all(|&v| v > 0.0 && v < 1.0 || wt.numel() == 1));
        }
    }

    #[test]
    fn permutation_invariance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let store = ParamStore::<f64>::new();
        let params = no_proj(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..8usize);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let mut shuffled = rows.clone();
            // random permutation of the non-final rows
            for i in (1..n - 1).rev() {
                let j = rng.gen_range(0..=i);
                shuffled.swap(i, j);
            }
            let encode = |rows: &[Vec<f64>]| {
                let mut tape = Tape::new();
                let zv = tape.constant(Tensor::from_rows(rows).unwrap()).unwrap();
                let out = attention_encode(&mut tape, &store, zv, &params).unwrap();
                tape.value(out).data().to_vec()
            };
            assert_eq!(encode(&rows), encode(&shuffled));
        }
    }
}
