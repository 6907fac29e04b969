use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{GasError, Result};

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Compares the tape gradient of `f` at `point` with central differences of
/// step `h`. Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .raw(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);
    let eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p);
        let l = f(&mut tape, x)?;
        scalar(&tape, l)
    };
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same check over every entry of every parameter of `store`, where `f`
/// builds the loss on a tape created with [`Tape::with_params`].
/// Returns the worst error and the name of the parameter where it occurred.
pub fn finite_diff_check_params<F>(f: F, store: &ParamStore, h: f64) -> Result<(f64, String)>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let loss = f(&mut tape)?;
    let grads = tape.backward(loss)?;
    let mut worst = (0.0, String::new());
    let mut work = store.clone();
    for id in store.ids() {
        let analytic = grads.param(id);
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[i] = v;
                let mut t = Tape::with_params(&work);
                let l = f(&mut t)?;
                scalar(&t, l)
            };
            let numeric = (eval(orig + h)? - eval(orig - h)?) / (2.0 * h);
            work.get_mut(id).data_mut()[i] = orig;
            let e = rel_err(analytic[i], numeric);
            if e > worst.0 {
                worst = (e, format!("{}[{i}]", store.name(id)));
            }
        }
    }
    Ok(worst)
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(GasError::Rank(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}

