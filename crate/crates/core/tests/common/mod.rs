#![allow(dead_code)]

use jointdiff::nn::{Graph, ParamStore, Var};
use ndarray::Array4;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
pub const FD_ABS_FLOOR: f64 = 1e-11;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: [usize; 4], lo: f64, hi: f64, seed: u64) -> Array4<f64> {
    let mut r = rng(seed);
    Array4::from_shape_fn((shape[0], shape[1], shape[2], shape[3]), |_| r.random_range(lo..hi))
}

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub worst_rel: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.worst_rel <= FD_REL_TOL
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let d = (a - n).abs();
    if d <= FD_ABS_FLOOR {
        0.0
    } else {
        d / a.abs().max(n.abs())
    }
}

/// Reduces a non-scalar output to a scalar with fixed pseudo-random weights so
/// every output element contributes a distinct amount.
fn scalarize(g: &mut Graph<f64>, out: Var) -> Var {
    let s = g.shape(out);
    if s == [1, 1, 1, 1] {
        return out;
    }
    let w = g.constant(uniform(s, -1.0, 1.0, 0xfeed));
    let p = g.mul(out, w).expect("co-shaped");
    g.mean_all(p)
}

/// Checks d(loss)/d(input) for every element of every input by central differences.
pub fn check_inputs(inputs: &[Array4<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> FdReport {
    let eval = |vals: &[Array4<f64>]| -> (Graph<f64>, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|v| g.variable(v.clone())).collect();
        let out = f(&mut g, &vars);
        let loss = scalarize(&mut g, out);
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(inputs);
    let grads = g.backward(loss).expect("backward");
    let mut report = FdReport { checked: 0, worst_rel: 0.0 };
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("input gradient").clone();
        for (idx, a) in analytic.indexed_iter() {
            let mut plus = inputs.to_vec();
            plus[k][idx] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k][idx] -= FD_STEP;
            let (gp, _, lp) = eval(&plus);
            let (gm, _, lm) = eval(&minus);
            let numeric = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * FD_STEP);
            report.checked += 1;
            report.worst_rel = report.worst_rel.max(rel_err(*a, numeric));
        }
    }
    report
}

/// Replaces every parameter with uniform draws so no layer sits at its
/// zero initialization.
pub fn randomize(store: &mut ParamStore<f64>, scale: f64, seed: u64) {
    let mut r = rng(seed);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        store.value_mut(&n).unwrap().mapv_inplace(|_| r.random_range(-scale..scale));
    }
}

/// Checks d(loss)/d(param) for every parameter element of a network.
pub fn check_params<N>(
    net: &mut N,
    store: impl Fn(&mut N) -> &mut ParamStore<f64>,
    f: impl Fn(&N, &mut Graph<f64>) -> Var,
) -> FdReport {
    let eval = |net: &N| -> (Graph<f64>, Var) {
        let mut g = Graph::new();
        let out = f(net, &mut g);
        let loss = scalarize(&mut g, out);
        (g, loss)
    };
    let (g, loss) = eval(net);
    let grads = g.backward(loss).expect("backward");
    // A parameter bound more than once collects the sum of its bindings.
    let mut analytic: Vec<(String, Array4<f64>)> = Vec::new();
    for (name, v) in g.parameters() {
        let d = grads.get(v).cloned().unwrap_or_else(|| g.value(v).mapv(|_| 0.0));
        match analytic.iter_mut().find(|(n, _)| n == name) {
            Some((_, acc)) => *acc += &d,
            None => analytic.push((name.to_string(), d)),
        }
    }
    let mut report = FdReport { checked: 0, worst_rel: 0.0 };
    for (name, grad) in analytic {
        for (idx, a) in grad.indexed_iter() {
            let orig = store(net).value(&name).unwrap()[idx];
            store(net).value_mut(&name).unwrap()[idx] = orig + FD_STEP;
            let (gp, lp) = eval(net);
            store(net).value_mut(&name).unwrap()[idx] = orig - FD_STEP;
            let (gm, lm) = eval(net);
            store(net).value_mut(&name).unwrap()[idx] = orig;
            let numeric = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * FD_STEP);
            report.checked += 1;
            report.worst_rel = report.worst_rel.max(rel_err(*a, numeric));
        }
    }
    report
}
pub mod gradcases;
