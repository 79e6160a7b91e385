//! Helpers shared by the integration test targets.

use pgsure::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Random tensor with magnitudes in `lo..hi` and random signs, so LeakyReLU
/// kinks stay out of reach of the finite-difference step.
pub fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Relative error `||analytic - numeric|| / ||numeric||` of central
/// differences, stacking every `stride`-th entry of every parameter.
pub fn fd_rel_error(
    store: &mut ParamStore,
    stride: usize,
    loss: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    store.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    tape.backward(l, store).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.grad(id).to_vec()).collect();
    let eval = |store: &ParamStore| {
        let mut t = Tape::new();
        let l = loss(&mut t, store);
        t.value(l).item()
    };
    let (mut diff, mut norm) = (0.0, 0.0);
    for (id, grad) in ids.iter().zip(&analytic) {
        for k in (0..grad.len()).step_by(stride) {
            let x0 = store.value(*id).data()[k];
            store.value_mut(*id).data_mut()[k] = x0 + FD_STEP;
            let up = eval(store);
            store.value_mut(*id).data_mut()[k] = x0 - FD_STEP;
            let down = eval(store);
            store.value_mut(*id).data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            diff += (grad[k] - numeric).powi(2);
            norm += numeric.powi(2);
        }
    }
    assert!(norm > 0.0, "all sampled gradients vanish");
    (diff / norm).sqrt()
}
