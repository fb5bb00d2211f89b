//! Finite-difference gradient cases: each returns the worst relative error
//! for one seed.

use hypermm::data::Payload;
use hypermm::encoder::{Encoder, EncoderConfig, Phase1Loss};
use hypermm::hyperlayer::{HyperConfig, HyperNetwork, ModalityId};
use hypermm::ndiff::nn::Mlp;
use hypermm::ndiff::{ReduceKind, SeededRng, Tape, Tensor};
use hypermm::setnet::{aggregate, SetClassifier, SetElement, SetObservation};

use super::{check_module, check_op, random_tensor, randomize_biases};

pub struct GradCase {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn(u64) -> f64,
}

fn rng(seed: u64) -> SeededRng {
    SeededRng::derived(seed, "fd/inputs")
}

/// Values kept away from zero so relu kinks sit far from the probe step.
fn off_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        *v += 0.1 * v.signum();
    }
    t
}

pub fn small_encoder(seed: u64) -> Encoder {
    let cfg = EncoderConfig {
        input_width: 6,
        backbone_hidden: vec![5],
        d_z: 4,
        d_l: 3,
        num_classes: 3,
        num_modalities: 3,
        embed_dim: 3,
        hyper_hidden: 4,
    };
    let mut enc = Encoder::new(cfg, &mut SeededRng::derived(seed, "fd/encoder")).unwrap();
    randomize_biases(&mut enc, seed);
    enc
}

fn random_set(rng: &mut SeededRng, label: usize) -> SetObservation {
    let q = rng.int_inclusive(1, 4);
    let elements = (0..q)
        .map(|_| {
            let modality = ModalityId(rng.int_inclusive(0, 2));
            let payload = if rng.unit() < 0.5 {
                Payload::Single(random_tensor(rng, &[6]).into_data())
            } else {
                let k = rng.int_inclusive(1, 3);
                Payload::Bag((0..k).map(|_| random_tensor(rng, &[6]).into_data()).collect())
            };
            SetElement { payload, modality }
        })
        .collect();
    SetObservation {
        elements,
        label: Some(label),
        sample_id: "fd".into(),
    }
}

fn matmul(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (a, b) = (random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[4, 2]));
    check_op(seed, &[a, b], |t, v| t.matmul(v[0], v[1]))
}

fn add(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (a, b) = (random_tensor(&mut r, &[2, 3]), random_tensor(&mut r, &[2, 3]));
    check_op(seed, &[a, b], |t, v| t.add(v[0], v[1]))
}

fn sub(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (a, b) = (random_tensor(&mut r, &[5]), random_tensor(&mut r, &[5]));
    check_op(seed, &[a, b], |t, v| t.sub(v[0], v[1]))
}

fn mul(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (a, b) = (random_tensor(&mut r, &[5]), random_tensor(&mut r, &[5]));
    check_op(seed, &[a, b], |t, v| t.mul(v[0], v[1]))
}

fn add_bias(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (x, b) = (random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[4]));
    check_op(seed, &[x, b], |t, v| t.add_bias(v[0], v[1]))
}

fn scale(seed: u64) -> f64 {
    let x = random_tensor(&mut rng(seed), &[4]);
    check_op(seed, &[x], |t, v| t.scale(v[0], -2.5))
}

fn relu(seed: u64) -> f64 {
    let x = off_zero(&mut rng(seed), &[6]);
    check_op(seed, &[x], |t, v| Ok(t.relu(v[0])))
}

fn reduce_case(seed: u64, kind: ReduceKind) -> f64 {
    let x = random_tensor(&mut rng(seed), &[2, 3, 4]);
    (0..3)
        .map(|axis| check_op(seed, std::slice::from_ref(&x), |t, v| t.reduce(v[0], axis, kind)))
        .fold(0.0, f64::max)
}

fn reduce_sum(seed: u64) -> f64 {
    reduce_case(seed, ReduceKind::Sum)
}

fn reduce_mean(seed: u64) -> f64 {
    reduce_case(seed, ReduceKind::Mean)
}

fn reduce_max(seed: u64) -> f64 {
    reduce_case(seed, ReduceKind::Max)
}

fn softmax_ce(seed: u64) -> f64 {
    let mut r = rng(seed);
    let logits = random_tensor(&mut r, &[4]);
    let target = r.int_inclusive(0, 3);
    check_op(seed, &[logits], |t, v| t.softmax_cross_entropy(v[0], target))
}

fn mse(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (a, b) = (random_tensor(&mut r, &[2, 3]), random_tensor(&mut r, &[2, 3]));
    check_op(seed, &[a, b], |t, v| t.mse(v[0], v[1]))
}

fn reshape_slice_select(seed: u64) -> f64 {
    let x = random_tensor(&mut rng(seed), &[3, 4]);
    check_op(seed, &[x], |t, v| {
        let row = t.select_row(v[0], 1)?;
        let flat = t.reshape(v[0], &[12])?;
        let part = t.slice(flat, 5, 4)?;
        t.mul(row, part)
    })
}

fn stack(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, &[4])).collect();
    check_op(seed, &xs, |t, v| t.stack(v))
}

fn matmul_mse_chain(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (w, x, y) = (
        random_tensor(&mut r, &[3, 4]),
        random_tensor(&mut r, &[4, 1]),
        random_tensor(&mut r, &[3, 1]),
    );
    check_op(seed, &[w, x, y], |t, v| {
        let wx = t.matmul(v[0], v[1])?;
        t.mse(wx, v[2])
    })
}

fn set_aggregate(seed: u64) -> f64 {
    let mut r = rng(seed);
    let xs: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, &[3])).collect();
    [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max]
        .into_iter()
        .map(|k| check_op(seed, &xs, |t, v| aggregate(t, v, k)))
        .fold(0.0, f64::max)
}

fn mlp(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut net = Mlp::new("mlp", &[4, 5, 3], false, &mut r).unwrap();
    randomize_biases(&mut net, seed);
    let x = off_zero(&mut r, &[4]);
    check_module(
        &mut net,
        |_| true,
        |m, t| {
            let xv = t.constant(&x);
            let out = m.forward(t, xv)?;
            t.softmax_cross_entropy(out, 1)
        },
    )
}

fn hypernetwork(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = HyperConfig {
        num_modalities: 3,
        embed_dim: 3,
        hidden: 4,
        d_z: 4,
        d_l: 3,
    };
    let mut h = HyperNetwork::new(cfg, &mut r).unwrap();
    randomize_biases(&mut h, seed);
    let z = random_tensor(&mut r, &[4]);
    let m = ModalityId(r.int_inclusive(0, 2));
    let target = random_tensor(&mut r, &[3]);
    check_module(
        &mut h,
        |_| true,
        |h, t| {
            let zv = t.constant(&z);
            let out = h.conditional_linear(t, zv, m)?;
            let tv = t.constant(&target);
            t.mse(out, tv)
        },
    )
}

fn hyper_input(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = HyperConfig {
        num_modalities: 2,
        embed_dim: 3,
        hidden: 4,
        d_z: 4,
        d_l: 3,
    };
    let mut h = HyperNetwork::new(cfg, &mut r).unwrap();
    randomize_biases(&mut h, seed);
    let z = random_tensor(&mut r, &[4]);
    check_op(seed, &[z], |t, v| h.conditional_linear(t, v[0], ModalityId(1)))
}

fn phase1_loss_full(seed: u64) -> f64 {
    let mut enc = small_encoder(seed);
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[6]);
    let (m, y) = (ModalityId(r.int_inclusive(0, 2)), r.int_inclusive(0, 2));
    let loss = Phase1Loss {
        mse_weight: 0.7,
        detach_target: false,
    };
    check_module(
        &mut enc,
        |_| true,
        |e, t| {
            let xv = t.constant(&x);
            let out = e.phase1_forward(t, xv, m)?;
            e.phase1_loss(t, &out, y, loss)
        },
    )
}

/// With a detached target the gradient equals that of the same loss with
/// the target frozen at its current value.
fn phase1_loss_detached(seed: u64) -> f64 {
    let mut enc = small_encoder(seed);
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[6]);
    let (m, y) = (ModalityId(r.int_inclusive(0, 2)), r.int_inclusive(0, 2));
    let mut tape = Tape::new();
    let xv = tape.constant(&x);
    let out = enc.phase1_forward(&mut tape, xv, m).unwrap();
    let z0 = tape.tensor(out.z);

    let mut analytic_tape = Tape::new();
    let xv = analytic_tape.constant(&x);
    let out = enc.phase1_forward(&mut analytic_tape, xv, m).unwrap();
    let l = enc
        .phase1_loss(&mut analytic_tape, &out, y, Phase1Loss::default())
        .unwrap();
    analytic_tape.backward(l).unwrap();
    let detached = analytic_tape.param_grads();

    let mut worst = check_module(
        &mut enc,
        |_| true,
        |e, t| {
            let xv = t.constant(&x);
            let out = e.phase1_forward(t, xv, m)?;
            let ce = t.softmax_cross_entropy(out.y_pred, y)?;
            let target = t.constant(&z0);
            let rec = t.mse(out.z_rec, target)?;
            t.add(rec, ce)
        },
    );
    // the frozen-target oracle and the library's detach must agree exactly in structure
    let mut frozen_tape = Tape::new();
    let xv = frozen_tape.constant(&x);
    let out = enc.phase1_forward(&mut frozen_tape, xv, m).unwrap();
    let ce = frozen_tape.softmax_cross_entropy(out.y_pred, y).unwrap();
    let target = frozen_tape.constant(&z0);
    let rec = frozen_tape.mse(out.z_rec, target).unwrap();
    let l = frozen_tape.add(rec, ce).unwrap();
    frozen_tape.backward(l).unwrap();
    for (name, g) in frozen_tape.param_grads() {
        for (a, b) in g.iter().zip(&detached[&name]) {
            worst = worst.max(super::rel_err(*a, *b));
        }
    }
    worst
}

fn phase2_case(seed: u64, kind: ReduceKind) -> f64 {
    let mut enc = small_encoder(seed);
    enc.freeze();
    let mut r = rng(seed);
    let mut clf = SetClassifier::new(&[3, 5, 4, 3], kind, &mut r).unwrap();
    randomize_biases(&mut clf, seed);
    let batch: Vec<SetObservation> = (0..3).map(|i| random_set(&mut r, i % 3)).collect();
    check_module(&mut clf, |_| true, |c, t| c.phase2_loss(t, &enc, &batch))
}

fn phase2_mean(seed: u64) -> f64 {
    phase2_case(seed, ReduceKind::Mean)
}

fn phase2_sum(seed: u64) -> f64 {
    phase2_case(seed, ReduceKind::Sum)
}

fn phase2_max(seed: u64) -> f64 {
    phase2_case(seed, ReduceKind::Max)
}

/// Set loss differentiated through the encoder, as in joint training.
fn joint_set_loss(seed: u64) -> f64 {
    let mut enc = small_encoder(seed);
    let mut r = rng(seed);
    let mut clf = SetClassifier::new(&[3, 5, 4, 3], ReduceKind::Mean, &mut r).unwrap();
    randomize_biases(&mut clf, seed);
    let s = random_set(&mut r, 2);
    check_module(
        &mut enc,
        |n| !n.starts_with("encoder/decoder") && !n.starts_with("encoder/uniclassifier"),
        |e, t| {
            let logits = clf.forward_unchecked(t, e, &s)?;
            t.softmax_cross_entropy(logits, 2)
        },
    )
}

pub fn cases() -> Vec<GradCase> {
    let c = |name, tol, run| GradCase { name, tol, run };
    vec![
        c("matmul", 1e-4, matmul as fn(u64) -> f64),
        c("add", 1e-6, add),
        c("sub", 1e-6, sub),
        c("mul", 1e-6, mul),
        c("add_bias", 1e-6, add_bias),
        c("scale", 1e-6, scale),
        c("relu", 1e-6, relu),
        c("reduce_sum", 1e-6, reduce_sum),
        c("reduce_mean", 1e-6, reduce_mean),
        c("reduce_max", 1e-6, reduce_max),
        c("softmax_cross_entropy", 1e-5, softmax_ce),
        c("mse", 1e-6, mse),
        c("reshape_slice_select_row", 1e-6, reshape_slice_select),
        c("stack", 1e-6, stack),
        c("matmul_mse_chain", 1e-4, matmul_mse_chain),
        c("set_aggregate", 1e-6, set_aggregate),
        c("mlp", 1e-4, mlp),
        c("hypernetwork_params", 1e-4, hypernetwork),
        c("conditional_linear_input", 1e-4, hyper_input),
        c("phase1_loss", 1e-4, phase1_loss_full),
        c("phase1_loss_detached_target", 1e-4, phase1_loss_detached),
        c("phase2_loss_mean", 1e-4, phase2_mean),
        c("phase2_loss_sum", 1e-4, phase2_sum),
        c("phase2_loss_max", 1e-4, phase2_max),
        c("joint_set_loss", 1e-4, joint_set_loss),
    ]
}
