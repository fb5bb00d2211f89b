//! Test oracles shared by the integration targets.

#![allow(dead_code, clippy::needless_range_loop)]

pub mod grad;
pub mod oracles;

use hypermm::ndiff::nn::Module;
use hypermm::ndiff::{SeededRng, Tape, Tensor, Var};
use hypermm::Result;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so near-zero gradients do not blow up.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn random_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Collapses any output to a scalar with fixed random weights so every output
/// coordinate contributes to the checked gradient.
fn scalarize(tape: &mut Tape, out: Var, weights: &[f64]) -> Result<Var> {
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(&Tensor::new(shape, weights[..tape.value(out).len()].to_vec())?);
    let prod = tape.mul(out, w)?;
    tape.sum_all(prod)
}

/// Max relative error between tape gradients and central differences for an
/// op applied to leaf `inputs`.
pub fn check_op(seed: u64, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut rng = SeededRng::derived(seed, "fd/weights");
    let weights: Vec<f64> = (0..4096).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t)).collect();
        let out = f(&mut tape, &vars).unwrap();
        let l = scalarize(&mut tape, out, &weights).unwrap();
        tape.value(l)[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = scalarize(&mut tape, out, &weights).unwrap();
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Max relative error over every coordinate of the module parameters whose
/// names pass `select`.
pub fn check_module<M: Module>(
    model: &mut M,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&M, &mut Tape) -> Result<Var>,
) -> f64 {
    let mut tape = Tape::new();
    let l = loss(model, &mut tape).unwrap();
    tape.backward(l).unwrap();
    let grads = tape.param_grads();

    let value = |m: &M| -> f64 {
        let mut tape = Tape::new();
        let l = loss(m, &mut tape).unwrap();
        tape.value(l)[0]
    };

    let names: Vec<(String, usize)> = model
        .params()
        .into_iter()
        .filter(|(n, _)| select(n))
        .map(|(n, t)| (n, t.numel()))
        .collect();
    assert!(!names.is_empty(), "no parameters selected");
    let mut worst: f64 = 0.0;
    for (name, numel) in names {
        let analytic = grads.get(&name).cloned().unwrap_or_else(|| vec![0.0; numel]);
        for j in 0..numel {
            let set = |m: &mut M, f: &dyn Fn(f64) -> f64| {
                for (n, t) in m.params_mut() {
                    if n == name {
                        t.data_mut()[j] = f(t.data()[j]);
                    }
                }
            };
            let original = model.params().into_iter().find(|(n, _)| *n == name).unwrap().1.data()[j];
            set(model, &|_| original + FD_STEP);
            let up = value(model);
            set(model, &|_| original - FD_STEP);
            let down = value(model);
            set(model, &|_| original);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Replaces zero-initialized biases with random values so no relu input sits
/// exactly on its kink.
pub fn randomize_biases<M: Module>(model: &mut M, seed: u64) {
    let mut rng = SeededRng::derived(seed, "fd/biases");
    for (name, t) in model.params_mut() {
        if name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        }
    }
}
