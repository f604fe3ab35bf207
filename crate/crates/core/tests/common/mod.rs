//! Finite-difference oracle shared by the gradient tests and the acceptance
//! run. The reference forward pass and densities are written out here
//! independently of the library.

#![allow(dead_code)]

use rand::Rng;
use wayfarer::nn::{LayerDims, Mlp};
use wayfarer::rng::seeded;

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Plain nested-loop evaluation of `net(x) . g`.
pub fn reference_objective(net: &Mlp, x: &[f64], g: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let last = net.layers.len() - 1;
    for (l, layer) in net.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.outputs];
        for (o, v) in out.iter_mut().enumerate() {
            let mut s = layer.biases[o];
            for (i, ai) in a.iter().enumerate().take(layer.inputs) {
                s += layer.weights[o * layer.inputs + i] * ai;
            }
            *v = if l == last { s } else { s.tanh() };
        }
        a = out;
    }
    a.iter().zip(g).map(|(y, gi)| y * gi).sum()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Worst relative error over every parameter and input coordinate.
pub fn worst_error(net: &Mlp, x: &[f64], g: &[f64]) -> f64 {
    let cache = net.forward(x).unwrap();
    let grads = net.backward(&cache, g).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..net.layers.len() {
        for k in 0..net.layers[l].weights.len() {
            let mut p = net.clone();
            p.layers[l].weights[k] += EPS;
            let mut m = net.clone();
            m.layers[l].weights[k] -= EPS;
            let fd = (reference_objective(&p, x, g) - reference_objective(&m, x, g)) / (2.0 * EPS);
            worst = worst.max(rel_err(grads.layers[l].weights[k], fd));
        }
        for k in 0..net.layers[l].biases.len() {
            let mut p = net.clone();
            p.layers[l].biases[k] += EPS;
            let mut m = net.clone();
            m.layers[l].biases[k] -= EPS;
            let fd = (reference_objective(&p, x, g) - reference_objective(&m, x, g)) / (2.0 * EPS);
            worst = worst.max(rel_err(grads.layers[l].biases[k], fd));
        }
    }
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += EPS;
        let mut xm = x.to_vec();
        xm[i] -= EPS;
        let fd = (reference_objective(net, &xp, g) - reference_objective(net, &xm, g)) / (2.0 * EPS);
        worst = worst.max(rel_err(grads.input[i], fd));
    }
    worst
}

pub fn random_case(seed: u64) -> (Mlp, Vec<f64>, Vec<f64>) {
    let mut rng = seeded(seed);
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=16)).collect();
    let dims = LayerDims::new(rng.random_range(1..=6), hidden, rng.random_range(1..=4));
    let net = Mlp::init(&dims, &mut rng).unwrap();
    let x = (0..dims.input).map(|_| rng.random_range(-2.0..2.0)).collect();
    let g = (0..dims.output).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, x, g)
}

pub fn reference_log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..mean.len() {
        let sigma = log_std[i].exp();
        let density = (-(a[i] - mean[i]).powi(2) / (2.0 * sigma * sigma)).exp()
            / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        total += density.ln();
    }
    total
}

