//! Central finite-difference gradient checker for tape ops (64-bit).

#![allow(dead_code)]

use ihn_core::rng::SplitMix64;
use ihn_core::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-3;

pub fn random(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

/// Like [`random`] but keeps every entry at least `gap` away from zero.
pub fn random_away_from_zero(shape: &[usize], gap: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(gap, 1.0);
        if rng.next_f64() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// Builds `loss = sum(op(inputs) * R)` for a fixed random `R`, and returns the
/// largest of `max|analytic - numeric| / max(max|analytic|, max|numeric|)` over
/// the inputs listed in `wrt`.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], wrt: &[usize], rng: &mut SplitMix64, op: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |tape: &mut Tape<f64>, vals: &[Tensor<f64>]| {
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(tape, &vars);
        (vars, out)
    };
    let mut probe = Tape::inference();
    let (_, out) = eval(&mut probe, inputs);
    let weights = random(probe.shape(out), rng);

    let loss_of = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::inference();
        let (_, out) = eval(&mut tape, vals);
        tape.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut tape = Tape::new();
    let (vars, out) = eval(&mut tape, inputs);
    let r = tape.constant(weights.clone());
    let prod = tape.mul(out, r).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for &i in wrt {
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; inputs[i].len()],
        };
        let mut numeric = vec![0.0; inputs[i].len()];
        let mut vals = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[j];
            vals[i].data_mut()[j] = x0 + STEP;
            let up = loss_of(&vals);
            vals[i].data_mut()[j] = x0 - STEP;
            let down = loss_of(&vals);
            vals[i].data_mut()[j] = x0;
            *slot = (up - down) / (2.0 * STEP);
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

use ihn_core::tensor::Padding;

type Case = fn(&mut SplitMix64) -> f64;

fn conv_s1(rng: &mut SplitMix64) -> f64 {
    let x = random(&[2, 5, 6], rng);
    let w = random(&[3, 2, 3, 3], rng);
    let b = random(&[3], rng);
    max_rel_error(&[x, w, b], &[0, 1, 2], rng, |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap()
    })
}

fn conv_s2(rng: &mut SplitMix64) -> f64 {
    let x = random(&[2, 7, 6], rng);
    let w = random(&[2, 2, 3, 3], rng);
    max_rel_error(&[x, w], &[0, 1], rng, |t, v| t.conv2d(v[0], v[1], None, 2, 1).unwrap())
}

fn conv_1x1(rng: &mut SplitMix64) -> f64 {
    let x = random(&[3, 4, 4], rng);
    let w = random(&[2, 3, 1, 1], rng);
    let b = random(&[2], rng);
    max_rel_error(&[x, w, b], &[0, 1, 2], rng, |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, 0).unwrap()
    })
}

fn max_pool(rng: &mut SplitMix64) -> f64 {
    // well separated values so no window has a near tie
    let n = 2 * 5 * 5;
    let mut vals: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    rng.shuffle(&mut vals);
    let x = Tensor::new(&[2, 5, 5], vals).unwrap();
    max_rel_error(&[x], &[0], rng, |t, v| t.max_pool2(v[0]).unwrap())
}

fn avg_pool(rng: &mut SplitMix64) -> f64 {
    let x = random(&[2, 5, 6], rng);
    max_rel_error(&[x], &[0], rng, |t, v| t.avg_pool2(v[0]).unwrap())
}

fn relu(rng: &mut SplitMix64) -> f64 {
    let x = random_away_from_zero(&[3, 4, 4], 1e-2, rng);
    max_rel_error(&[x], &[0], rng, |t, v| t.relu(v[0]))
}

fn sigmoid(rng: &mut SplitMix64) -> f64 {
    let x = random(&[2, 3, 4], rng);
    max_rel_error(&[x], &[0], rng, |t, v| t.sigmoid(v[0]))
}

fn group_norm(rng: &mut SplitMix64) -> f64 {
    let x = random(&[4, 3, 3], rng);
    let g = random(&[4], rng);
    let b = random(&[4], rng);
    max_rel_error(&[x, g, b], &[0, 1, 2], rng, |t, v| {
        t.group_norm(v[0], 2, v[1], v[2]).unwrap()
    })
}

fn off_integer(lo: f64, hi: f64, rng: &mut SplitMix64) -> f64 {
    loop {
        let c = rng.uniform(lo, hi);
        let f = c - c.floor();
        if f > 0.01 && f < 0.99 {
            return c;
        }
    }
}

fn grid_sample(rng: &mut SplitMix64) -> f64 {
    let x = random(&[2, 5, 6], rng);
    let mut c = Tensor::<f64>::zeros(&[2, 3, 4]);
    for i in 0..12 {
        c.data_mut()[i] = off_integer(-1.0, 6.0, rng);
        c.data_mut()[12 + i] = off_integer(-1.0, 5.0, rng);
    }
    max_rel_error(&[x, c], &[0, 1], rng, |t, v| {
        t.set_coord_grad(true);
        t.grid_sample(v[0], v[1], Padding::Zeros).unwrap()
    })
}

fn corr_window(rng: &mut SplitMix64) -> f64 {
    let vol = random(&[6, 4, 5], rng);
    let centers: Vec<(f64, f64)> = (0..6)
        .map(|_| (rng.uniform(-1.0, 5.0), rng.uniform(-1.0, 4.0)))
        .collect();
    max_rel_error(&[vol], &[0], rng, move |t, v| {
        t.corr_window(v[0], centers.clone(), 2, 3, 1).unwrap()
    })
}

fn arith(rng: &mut SplitMix64) -> f64 {
    let a = random(&[2, 3, 3], rng);
    let b = random(&[2, 3, 3], rng);
    let c = random(&[2, 3, 3], rng);
    max_rel_error(&[a, b, c], &[0, 1, 2], rng, |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let d = t.sub(s, v[2]).unwrap();
        let m = t.mul(d, v[0]).unwrap();
        t.scale(m, -1.7)
    })
}

fn mul_channels(rng: &mut SplitMix64) -> f64 {
    let x = random(&[3, 3, 4], rng);
    let m = random(&[1, 3, 4], rng);
    max_rel_error(&[x, m], &[0, 1], rng, |t, v| t.mul_channels(v[0], v[1]).unwrap())
}

fn concat_reshape(rng: &mut SplitMix64) -> f64 {
    let a = random(&[2, 3, 2], rng);
    let b = random(&[1, 3, 2], rng);
    max_rel_error(&[a, b], &[0, 1], rng, |t, v| {
        let c = t.concat(&[v[0], v[1], v[0]]).unwrap();
        t.reshape(c, &[5, 6]).unwrap()
    })
}

fn reductions(rng: &mut SplitMix64) -> f64 {
    let a = random(&[3, 4], rng);
    max_rel_error(&[a], &[0], rng, |t, v| {
        let s = t.sum(v[0]);
        let m = t.mean(v[0]);
        let s = t.mul(s, m).unwrap();
        t.reshape(s, &[1]).unwrap()
    })
}

fn matmul(rng: &mut SplitMix64) -> f64 {
    let mut worst: f64 = 0.0;
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = random(if ta { &[4, 3] } else { &[3, 4] }, rng);
        let b = random(if tb { &[5, 4] } else { &[4, 5] }, rng);
        worst = worst.max(max_rel_error(&[a, b], &[0, 1], rng, move |t, v| {
            t.matmul(v[0], v[1], ta, tb).unwrap()
        }));
    }
    worst
}

fn upsample(rng: &mut SplitMix64) -> f64 {
    let x = random(&[2, 3, 2], rng);
    max_rel_error(&[x], &[0], rng, |t, v| t.upsample2(v[0]).unwrap())
}

/// Every differentiable op with a representative input configuration.
pub fn op_suite() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", conv_s1),
        ("conv2d_stride2", conv_s2),
        ("conv2d_1x1", conv_1x1),
        ("max_pool2", max_pool),
        ("avg_pool2", avg_pool),
        ("relu", relu),
        ("sigmoid", sigmoid),
        ("group_norm", group_norm),
        ("grid_sample", grid_sample),
        ("corr_window", corr_window),
        ("add_sub_mul_scale", arith),
        ("mul_channels", mul_channels),
        ("concat_reshape", concat_reshape),
        ("sum_mean", reductions),
        ("matmul", matmul),
        ("upsample2", upsample),
    ]
}

/// Worst relative error of `case` over `trials` random draws.
pub fn run_case(case: Case, trials: usize, seed: u64) -> f64 {
    (0..trials)
        .map(|i| case(&mut SplitMix64::for_item(seed, i as u64)))
        .fold(0.0, f64::max)
}
