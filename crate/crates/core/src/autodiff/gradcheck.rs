//! Central finite-difference checks of tape gradients.

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::Scalar;

fn rel_err<T: Scalar>(analytic: T, numeric: T) -> T {
    let denom = analytic.abs().max(numeric.abs()).max(T::of(1e-12));
    (analytic - numeric).abs() / denom
}

/// Worst per-coordinate relative error between the tape gradient of a
/// scalar function and its central difference with step `h`.
pub fn gradient_check<T, F>(f: F, x: &Tensor<T>, h: T) -> T
where
    T: Scalar,
    F: Fn(&Tape<T>, Var) -> Var,
{
    let mut store = ParamStore::new();
    store.add("x", x.clone());
    gradient_check_store(|tape, bound| f(tape, bound.vars()[0]), &store, h)
}

/// Same check over every scalar of a parameter store.
pub fn gradient_check_store<T, F>(f: F, store: &ParamStore<T>, h: T) -> T
where
    T: Scalar,
    F: Fn(&Tape<T>, &Bound) -> Var,
{
    let tape = Tape::new();
    let bound = tape.bind(store);
    let out = f(&tape, &bound);
    let analytic = tape.backward(out).expect("gradient check needs a scalar finite loss").for_bound(&bound);

    let eval = |s: &ParamStore<T>| -> T {
        let t = Tape::new();
        let b = t.bind_frozen(s);
        let v = f(&t, &b);
        t.item(v)
    };

    let mut probe = store.clone();
    let mut worst = T::zero();
    for (ti, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = store.tensors()[ti].data()[k];
            probe.tensors_mut()[ti].data_mut()[k] = orig + h;
            let up = eval(&probe);
            probe.tensors_mut()[ti].data_mut()[k] = orig - h;
            let down = eval(&probe);
            probe.tensors_mut()[ti].data_mut()[k] = orig;
            // Divide by the representable step, not 2h.
            let numeric = (up - down) / ((orig + h) - (orig - h));
            worst = worst.max(rel_err(grad.data()[k], numeric));
        }
    }
    worst
}
