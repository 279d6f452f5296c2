#![allow(dead_code)]

pub mod fixtures;
pub mod gradcases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soupmt::autodiff::{Tape, Var};
use soupmt::tensor::Tensor;
use soupmt::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_f64(shape.to_vec(), &v).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of `f` with central differences for every
/// entry of every input. `f` must be deterministic. Returns the worst
/// relative error.
pub fn fd_check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    fd_check_with(inputs, Tape::new, f)
}

/// As [`fd_check`], with every evaluation on a tape from `make_tape`
/// (e.g. a seeded training tape, so dropout masks repeat).
pub fn fd_check_with<F, M>(inputs: &[Tensor<f64>], make_tape: M, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    M: Fn() -> Tape<f64>,
{
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = make_tape();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.item(out)
    };

    let mut tape = make_tape();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap().to_vec();
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Reduces a tensor to a scalar through a fixed random projection so that
/// upstream gradients are not all ones.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut r = rng(seed ^ 0x9e37_79b9);
    let w = random_tensor(&mut r, &shape, 1.0);
    let wv = tape.leaf(&w);
    let prod = tape.mul(out, wv)?;
    tape.sum(prod)
}
