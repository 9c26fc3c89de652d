#![allow(dead_code)]

use wftnet::autodiff::{Graph, Var};
use wftnet::model::WftNet;
use wftnet::{RngState, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

/// Worst relative disagreement between reverse-mode gradients of
/// `sum(r * f(inputs))`, for a fixed random `r`, and central differences.
pub fn max_rel_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let n_out = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.param(x)).collect();
        let y = f(&mut g, &vars);
        g.value(y).len()
    };
    let mut rng = RngState::new(4242);
    let probe: Vec<f64> = (0..n_out).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x)).collect();
        let y = f(&mut g, &vars);
        let l = g.dot(y, &probe).unwrap();
        g.value(l)[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x)).collect();
    let y = f(&mut g, &vars);
    let l = g.dot(y, &probe).unwrap();
    let grads = g.backward(l).unwrap();
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (vi, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[vi], input.len());
        for i in 0..input.len() {
            let orig = work[vi].data()[i];
            work[vi].data_mut()[i] = orig + FD_STEP;
            let plus = eval(&work);
            work[vi].data_mut()[i] = orig - FD_STEP;
            let minus = eval(&work);
            work[vi].data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn model_loss(model: &WftNet, x: &Tensor, target: &Tensor) -> f64 {
    let mut pass = model.forward_pass(x, &mut RngState::new(0), false).unwrap();
    let l = pass.graph.mse(pass.output, target.data()).unwrap();
    pass.graph.value(l)[0]
}

/// Worst relative error of the forecast-MSE gradient with respect to every
/// model parameter.
pub fn model_max_rel_error(model: &WftNet, x: &Tensor, target: &Tensor) -> f64 {
    let sg = model
        .sample_grad(x, target, &mut RngState::new(0), false)
        .unwrap();
    let mut work = model.clone();
    let mut worst = 0.0f64;
    for (ti, analytic) in sg.grads.iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work.params.tensors_mut()[ti].data()[i];
            work.params.tensors_mut()[ti].data_mut()[i] = orig + FD_STEP;
            let plus = model_loss(&work, x, target);
            work.params.tensors_mut()[ti].data_mut()[i] = orig - FD_STEP;
            let minus = model_loss(&work, x, target);
            work.params.tensors_mut()[ti].data_mut()[i] = orig;
            worst = worst.max(rel_err(a, (plus - minus) / (2.0 * FD_STEP)));
        }
    }
    worst
}
