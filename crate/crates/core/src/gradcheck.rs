//! Central-difference validation of tape gradients.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Compares analytic gradients against central finite differences and returns
/// the maximum relative error over all parameter entries, with the relative
/// error defined as `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
///
/// The loss builder must be deterministic; it is evaluated twice up front and
/// rejected if the two loss values differ.
pub fn grad_check<S, F>(store: &mut ParamStore<S>, step: S, build_loss: F) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ParamStore<S>) -> Result<Var>,
{
    if step <= S::zero() {
        return Err(Error::InvalidArgument("grad_check step must be > 0".into()));
    }

    let eval = |store: &ParamStore<S>| -> Result<S> {
        let mut tape = Tape::new();
        let loss = build_loss(&mut tape, store)?;
        let t = tape.value(loss);
        if !t.is_scalar() {
            return Err(Error::LossNotScalar {
                shape: t.shape().to_vec(),
            });
        }
        Ok(t.scalar_value())
    };

    let first = eval(store)?;
    let second = eval(store)?;
    if first != second {
        return Err(Error::NonDeterministicLoss {
            first: first.as_f64(),
            second: second.as_f64(),
        });
    }

    store.reset_gradients();
    {
        let mut tape = Tape::new();
        let loss = build_loss(&mut tape, store)?;
        tape.backward(loss, store)?;
    }
    let analytic: Vec<Vec<S>> = store
        .ids()
        .map(|id| store.grad(id).data().to_vec())
        .collect();

    let ids: Vec<_> = store.ids().collect();
    let mut max_rel = S::zero();
    let two = S::of_f64(2.0);
    for (pi, id) in ids.iter().enumerate() {
        for j in 0..store.value(*id).numel() {
            let orig = store.value(*id).data()[j];
            store.value_mut(*id).data_mut()[j] = orig + step;
            let plus = eval(store)?;
            store.value_mut(*id).data_mut()[j] = orig - step;
            let minus = eval(store)?;
            store.value_mut(*id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (two * step);
            let a = analytic[pi][j];
            let denom = S::one().max(a.abs()).max(numeric.abs());
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    store.reset_gradients();
    Ok(max_rel)
}
