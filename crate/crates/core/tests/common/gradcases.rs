use jointdiff::nn::{ConditionalUNet, DenoiserConfig, Graph, Refiner, RefinerConfig, UebConfig, UebMasks, Var};
use jointdiff::objectives::{au_loss, diffusion_loss, rec_loss, total_loss, un_loss, LossWeights, RecNorm};
use ndarray::Array4;

use super::{check_inputs, check_params, randomize, rng, uniform, FdReport};

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Array4<f64>>,
    pub f: OpFn,
}

fn case(name: &'static str, inputs: Vec<Array4<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: [usize; 4], seed: u64) -> Array4<f64> {
    uniform(shape, -1.0, 1.0, seed).mapv(|v| v + 0.1 * v.signum())
}

const S: [usize; 4] = [2, 3, 4, 4];

pub fn op_cases() -> Vec<OpCase> {
    let a = || uniform(S, -1.5, 1.5, 1);
    let b = || uniform(S, -1.5, 1.5, 2);
    vec![
        case("add", vec![a(), b()], |g, v| g.add(v[0], v[1]).unwrap()),
        case("sub", vec![a(), b()], |g, v| g.sub(v[0], v[1]).unwrap()),
        case("mul", vec![a(), b()], |g, v| g.mul(v[0], v[1]).unwrap()),
        case("mul_broadcast_channel", vec![a(), uniform([2, 1, 4, 4], -1.0, 1.0, 3)], |g, v| {
            g.mul(v[0], v[1]).unwrap()
        }),
        case("add_broadcast_bias", vec![a(), uniform([1, 3, 1, 1], -1.0, 1.0, 4)], |g, v| {
            g.add(v[0], v[1]).unwrap()
        }),
        case("scale", vec![a()], |g, v| g.scale(v[0], -2.5)),
        case("add_scalar", vec![a()], |g, v| g.add_scalar(v[0], 0.75)),
        case("silu", vec![a()], |g, v| g.silu(v[0])),
        case("sigmoid", vec![a()], |g, v| g.sigmoid(v[0])),
        case("tanh", vec![a()], |g, v| g.tanh(v[0])),
        case("exp", vec![a()], |g, v| g.exp(v[0])),
        case("square", vec![a()], |g, v| g.square(v[0])),
        case("abs", vec![away_from_zero(S, 5)], |g, v| g.abs(v[0])),
        case("clamp", vec![away_from_zero(S, 6).mapv(|x| x * 0.9)], |g, v| g.clamp(v[0], -0.5, 0.5)),
        case("conv2d_s1_p1", vec![a(), uniform([4, 3, 3, 3], -0.5, 0.5, 7)], |g, v| {
            g.conv2d(v[0], v[1], 1, 1).unwrap()
        }),
        case("conv2d_s2_p1", vec![a(), uniform([2, 3, 3, 3], -0.5, 0.5, 8)], |g, v| {
            g.conv2d(v[0], v[1], 2, 1).unwrap()
        }),
        case("conv2d_s1_p0", vec![a(), uniform([2, 3, 3, 3], -0.5, 0.5, 9)], |g, v| {
            g.conv2d(v[0], v[1], 1, 0).unwrap()
        }),
        case("conv2d_1x1", vec![a(), uniform([5, 3, 1, 1], -0.5, 0.5, 10)], |g, v| {
            g.conv2d(v[0], v[1], 1, 0).unwrap()
        }),
        case("avg_pool2", vec![a()], |g, v| g.avg_pool2(v[0]).unwrap()),
        case("upsample2", vec![uniform([2, 3, 2, 2], -1.0, 1.0, 11)], |g, v| g.upsample2(v[0])),
        case("concat_channels", vec![a(), uniform([2, 2, 4, 4], -1.0, 1.0, 12)], |g, v| {
            g.concat_channels(&[v[0], v[1]]).unwrap()
        }),
        case("mean_all", vec![a()], |g, v| g.mean_all(v[0])),
        case("mean_channels", vec![a()], |g, v| g.mean_channels(v[0])),
        case(
            "blend",
            vec![a(), b(), uniform([2, 1, 4, 4], 0.05, 0.95, 13)],
            |g, v| g.blend(v[0], v[1], v[2]).unwrap(),
        ),
        case("diffusion_loss", vec![a(), b()], |g, v| diffusion_loss(g, v[0], v[1]).unwrap()),
        case("rec_loss_l1", vec![a(), b()], |g, v| rec_loss(g, v[0], v[1], RecNorm::L1).unwrap()),
        case("rec_loss_mse", vec![a(), b()], |g, v| rec_loss(g, v[0], v[1], RecNorm::Mse).unwrap()),
        case(
            "au_loss",
            vec![a(), b(), uniform([2, 1, 4, 4], 0.05, 0.95, 14)],
            |g, v| au_loss(g, v[0], v[1], v[2], &LossWeights::default()).unwrap(),
        ),
        case(
            "un_loss_and_total",
            vec![a(), b(), uniform(S, 0.0, 1.0, 15), uniform([2, 1, 4, 4], 0.05, 0.95, 16)],
            |g, v| {
                let w = LossWeights::default();
                let au = au_loss(g, v[2], v[1], v[3], &w).unwrap();
                let un = un_loss(g, v[0], v[1], au).unwrap();
                let rec = rec_loss(g, v[0], v[2], RecNorm::L1).unwrap();
                total_loss(g, rec, un, w.lambda).unwrap()
            },
        ),
    ]
}

pub fn op_reports() -> Vec<(&'static str, FdReport)> {
    op_cases()
        .into_iter()
        .map(|c| (c.name, check_inputs(&c.inputs, c.f)))
        .collect()
}

pub fn denoiser_report() -> FdReport {
    let cfg = DenoiserConfig {
        image_channels: 3,
        base_channels: 2,
        depth: 2,
        time_embed_dim: 4,
    };
    let mut net = ConditionalUNet::<f64>::new(cfg, &mut rng(21)).unwrap();
    randomize(&mut net.params, 0.5, 22);
    let x = uniform([2, 3, 4, 4], -1.0, 1.0, 23);
    let c = uniform([2, 4, 4, 4], 0.0, 1.0, 24);
    check_params(
        &mut net,
        |n| &mut n.params,
        |n, g| {
            let xv = g.constant(x.clone());
            let cv = g.constant(c.clone());
            n.forward(g, xv, cv, &[3, 700]).unwrap()
        },
    )
}

pub fn refiner_report() -> FdReport {
    let cfg = RefinerConfig {
        image_channels: 3,
        base_channels: 3,
        depth: 2,
        ueb: UebConfig {
            samples: 3,
            drop_fraction: 0.34,
        },
    };
    let mut net = Refiner::<f64>::new(cfg, &mut rng(31)).unwrap();
    randomize(&mut net.params, 0.3, 32);
    let masks: Vec<UebMasks> = net.draw_masks(&mut rng(33));
    // Coarse values well inside (0, 1) keep the output clamp inactive.
    let x = uniform([2, 3, 4, 4], 0.4, 0.6, 34);
    check_params(
        &mut net,
        |n| &mut n.params,
        |n, g| {
            let xv = g.constant(x.clone());
            let out = n.forward(g, xv, &masks).unwrap();
            let mut acc = out.refined;
            for s in &out.scales {
                for v in [s.j_a, s.u_a, s.u_e, s.u] {
                    let m = g.mean_all(v);
                    acc = g.add(acc, m).unwrap();
                }
            }
            acc
        },
    )
}
