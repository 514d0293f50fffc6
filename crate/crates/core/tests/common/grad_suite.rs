//! Named finite-difference checks for every differentiable operator and both
//! full networks, shared by the per-module tests and the acceptance run.

use diffdp::networks::{BaselineModel, DiffDpModel, NetConfig};
use diffdp::numerics::{AttentionWeights, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, check_param_gradients, random_projection, random_tensor, FdReport};

pub type Check = (&'static str, fn() -> Result<FdReport, String>);

pub const OP_CHECKS: &[Check] = &[
    ("conv2d", conv2d),
    ("group_norm", group_norm),
    ("swish", swish),
    ("cross_attention", cross_attention),
    ("self_attention", self_attention),
    ("upsample_concat_add_channel", upsample_concat_add_channel),
    ("linear_elementwise", linear_elementwise),
    ("mean_abs_diff", mean_abs_diff),
    ("conv_norm_swish", conv_norm_swish),
];

pub const NETWORK_CHECKS: &[Check] = &[
    ("diffusion_model_params", diffusion_model),
    ("baseline_params", baseline),
    ("encoder_input", encoder_input),
];

pub fn tiny_net() -> NetConfig {
    NetConfig {
        in_channels: 6,
        widths: [4, 4, 8, 8, 8, 8],
        emb_dim: 4,
        groups: 2,
    }
}

fn inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes.iter().map(|s| random_tensor(s, &mut rng)).collect()
}

fn merge(a: FdReport, b: FdReport) -> FdReport {
    FdReport {
        checked: a.checked + b.checked,
        skipped_small: a.skipped_small + b.skipped_small,
        max_rel_err: a.max_rel_err.max(b.max_rel_err),
    }
}

fn conv2d() -> Result<FdReport, String> {
    let mut total = FdReport::default();
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)] {
        let xs = inputs(&[&[2, 3, 6, 6], &[4, 3, k, k], &[4]], 10 + stride as u64 + k as u64);
        let rep = check_gradients(
            &xs,
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
                random_projection(g, y, 1)
            },
            None,
            0,
        )
        .map_err(|e| format!("stride {stride} pad {pad} kernel {k}: {e}"))?;
        total = merge(total, rep);
    }
    Ok(total)
}

fn group_norm() -> Result<FdReport, String> {
    let xs = inputs(&[&[2, 4, 6, 6], &[4], &[4]], 20);
    check_gradients(
        &xs,
        |g, v| {
            let y = g.group_norm(v[0], 2, v[1], v[2], 1e-5).unwrap();
            random_projection(g, y, 2)
        },
        None,
        0,
    )
}

fn swish() -> Result<FdReport, String> {
    let xs = inputs(&[&[2, 4, 6, 6]], 30);
    check_gradients(
        &xs,
        |g, v| {
            let y = g.swish(v[0]);
            random_projection(g, y, 3)
        },
        None,
        0,
    )
}

fn weights(v: &[Var]) -> AttentionWeights {
    AttentionWeights {
        wq: v[0],
        bq: v[1],
        wk: v[2],
        bk: v[3],
        wv: v[4],
        bv: v[5],
        wo: v[6],
        bo: v[7],
    }
}

const C: usize = 4;
const PROJ: &[usize] = &[C, C, 1, 1];
const BIAS: &[usize] = &[C];

fn cross_attention() -> Result<FdReport, String> {
    let xs = inputs(&[&[2, C, 3, 3], &[2, C, 2, 2], PROJ, BIAS, PROJ, BIAS, PROJ, BIAS, PROJ, BIAS], 40);
    check_gradients(
        &xs,
        |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.attention(v[0], v[1], &weights(&v[2..])).unwrap();
            random_projection(g, y, 4)
        },
        None,
        0,
    )
}

/// The same var feeds queries, keys and values.
fn self_attention() -> Result<FdReport, String> {
    let xs = inputs(&[&[2, C, 3, 3], PROJ, BIAS, PROJ, BIAS, PROJ, BIAS, PROJ, BIAS], 41);
    check_gradients(
        &xs,
        |g, v| {
            let y = g.attention(v[0], v[0], &weights(&v[1..])).unwrap();
            random_projection(g, y, 5)
        },
        None,
        0,
    )
}

fn upsample_concat_add_channel() -> Result<FdReport, String> {
    let xs = inputs(&[&[2, 3, 3, 3], &[2, 2, 6, 6], &[2, 5]], 50);
    check_gradients(
        &xs,
        |g, v| {
            let up = g.upsample2x(v[0]).unwrap();
            let cat = g.concat(up, v[1]).unwrap();
            let y = g.add_channel(cat, v[2]).unwrap();
            random_projection(g, y, 6)
        },
        None,
        0,
    )
}

fn linear_elementwise() -> Result<FdReport, String> {
    let xs = inputs(&[&[3, 5], &[4, 5], &[4], &[3, 4]], 60);
    check_gradients(
        &xs,
        |g, v| {
            let y = g.linear(v[0], v[1], v[2]).unwrap();
            let y = g.swish(y);
            let p = g.mul(y, v[3]).unwrap();
            let d = g.sub(p, v[3]).unwrap();
            let s = g.scale(d, 0.7);
            let m = g.add(s, y).unwrap();
            let m = g.mean(m);
            let t = random_projection(g, y, 7);
            g.add(m, t).unwrap()
        },
        None,
        0,
    )
}

fn mean_abs_diff() -> Result<FdReport, String> {
    let xs = inputs(&[&[2, 1, 4, 4], &[2, 1, 4, 4]], 70);
    check_gradients(&xs, |g, v| g.mean_abs_diff(v[0], v[1]).unwrap(), None, 0)
}

fn conv_norm_swish() -> Result<FdReport, String> {
    let xs = inputs(&[&[2, 3, 6, 6], &[4, 3, 3, 3], &[4], &[4], &[4], &[4, 4, 3, 3], &[4]], 80);
    check_gradients(
        &xs,
        |g, v| {
            let h = g.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
            let h = g.group_norm(h, 2, v[3], v[4], 1e-5).unwrap();
            let h = g.swish(h);
            let h = g.conv2d(h, v[5], v[6], 2, 1).unwrap();
            random_projection(g, h, 8)
        },
        None,
        0,
    )
}

fn net_inputs() -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&[2, 6, 16, 16], &mut rng);
    let y = random_tensor(&[2, 1, 16, 16], &mut rng);
    (x, y)
}

/// Three sampled components of every parameter of the full diffusion model
/// (structure encoder plus noise predictor) at 16×16.
fn diffusion_model() -> Result<FdReport, String> {
    let model = DiffDpModel::new(&tiny_net(), 21).map_err(|e| e.to_string())?;
    let store: ParamStore<f64> = model.store.cast();
    let (x, y) = net_inputs();
    let rep = check_param_gradients(
        &store,
        |g, p| {
            let xv = g.constant(x.clone());
            let yv = g.constant(y.clone());
            let f = model.encoder.encode(g, p, xv).unwrap();
            let out = model.predictor.predict(g, p, &f, yv, &[0.8, 0.3]).unwrap();
            random_projection(g, out, 7)
        },
        3,
        0,
    )?;
    if rep.checked <= store.len() {
        return Err(format!("only {} components checked for {} parameters", rep.checked, store.len()));
    }
    Ok(rep)
}

fn baseline() -> Result<FdReport, String> {
    let base = BaselineModel::new(&tiny_net(), 22).map_err(|e| e.to_string())?;
    let store: ParamStore<f64> = base.store.cast();
    let (x, _) = net_inputs();
    let rep = check_param_gradients(
        &store,
        |g, p| {
            let xv = g.constant(x.clone());
            let out = base.net.predict(g, p, xv).unwrap();
            random_projection(g, out, 8)
        },
        3,
        0,
    )?;
    if rep.checked <= store.len() {
        return Err(format!("only {} components checked for {} parameters", rep.checked, store.len()));
    }
    Ok(rep)
}

/// Gradient through all six encoder levels with respect to the input image.
fn encoder_input() -> Result<FdReport, String> {
    let model = DiffDpModel::new(&tiny_net(), 23).map_err(|e| e.to_string())?;
    let store: ParamStore<f64> = model.store.cast();
    let x = random_tensor(&[1, 6, 16, 16], &mut ChaCha8Rng::seed_from_u64(1));
    check_gradients(
        &[x],
        |g, v| {
            let levels = model.encoder.encode(g, &store, v[0]).unwrap();
            let mut total = None;
            for (k, l) in levels.into_iter().enumerate() {
                let s = random_projection(g, l, 100 + k as u64);
                total = Some(match total {
                    None => s,
                    Some(t) => g.add(t, s).unwrap(),
                });
            }
            total.unwrap()
        },
        Some(200),
        0,
    )
}
