use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndiff::rng::SeededRng;
use crate::ndiff::tape::{Tape, Var};
use crate::ndiff::tensor::Tensor;

/// Anything that owns named trainable tensors.
pub trait Module {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

/// Glorot-uniform matrix of shape `[fan_out, fan_in]`.
pub fn glorot(rng: &mut SeededRng, fan_out: usize, fan_in: usize) -> Result<Tensor> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(vec![fan_out, fan_in], data)
}

/// Dense layer `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::arg("linear layer widths must be >= 1"));
        }
        Ok(Linear {
            name: name.into(),
            weight: glorot(rng, fan_out, fan_in)?.with_grad(),
            bias: Tensor::zeros(&[fan_out])?.with_grad(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&format!("{}/weight", self.name), &self.weight);
        let b = tape.param(&format!("{}/bias", self.name), &self.bias);
        affine(tape, w, x, b)
    }
}

/// `w · x + b` for a matrix `w: [out, in]` and vectors `x: [in]`, `b: [out]`.
pub fn affine(tape: &mut Tape, w: Var, x: Var, b: Var) -> Result<Var> {
    let (out, inp) = match tape.shape(w) {
        [o, i] => (*o, *i),
        s => return Err(Error::dim(format!("affine weight must be a matrix, got {s:?}"))),
    };
    if tape.shape(x) != [inp] {
        return Err(Error::dim(format!(
            "input of shape {:?} for a layer of width {inp}",
            tape.shape(x)
        )));
    }
    let col = tape.reshape(x, &[inp, 1])?;
    let y = tape.matmul(w, col)?;
    let y = tape.reshape(y, &[out])?;
    tape.add(y, b)
}

impl Module for Linear {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}/weight", self.name), &self.weight),
            (format!("{}/bias", self.name), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}/weight", self.name), &mut self.weight),
            (format!("{}/bias", self.name), &mut self.bias),
        ]
    }
}

/// Stack of [`Linear`] layers with ReLU between consecutive layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    relu_last: bool,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`. When `relu_last` is set the output is
    /// also rectified.
    pub fn new(prefix: &str, widths: &[usize], relu_last: bool, rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::arg(format!("mlp needs at least two widths, got {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{prefix}/{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers, relu_last })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if i + 1 < n || self.relu_last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Hands gradients from a finished tape back to the module's tensors.
/// Parameters absent from `grads` keep whatever gradient they had.
pub fn absorb_grads(params: Vec<(String, &mut Tensor)>, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    for (name, t) in params {
        if let Some(g) = grads.get(&name) {
            t.set_grad(g.clone())?;
        }
    }
    Ok(())
}

pub fn set_trainable(params: Vec<(String, &mut Tensor)>, trainable: bool) {
    for (_, t) in params {
        t.set_requires_grad(trainable);
    }
}

/// SHA-256 over names, shapes and the exact bits of every value.
pub fn checksum<'a>(params: impl IntoIterator<Item = (String, &'a Tensor)>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        for &s in t.shape() {
            h.update((s as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
