//! Shared test support: a central finite-difference gradient checker and
//! metric oracles.
#![allow(dead_code)]

pub mod algebra;
pub mod grad_suite;
pub mod oracles;

use diffdp::numerics::{Graph, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-2;
pub const FD_MIN_GRAD: f64 = 1e-4;

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub skipped_small: usize,
    pub max_rel_err: f64,
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Adds `sum(out ⊙ r)` for a fixed random `r`, turning any output into a
/// scalar whose gradient exercises every element.
pub fn random_projection(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_tensor(g.shape(out), &mut rng);
    let r = g.constant(r);
    let prod = g.mul(out, r).unwrap();
    g.sum(prod)
}

/// Compares the tape gradient of `build` against central differences with
/// step [`FD_STEP`]. `build` receives one var per input (all requiring grad)
/// and returns a scalar loss. When `per_input` is set only that many
/// randomly chosen components of each input are probed.
pub fn check_gradients<B>(inputs: &[Tensor<f64>], build: B, per_input: Option<usize>, seed: u64) -> Result<FdReport, String>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.input(t.clone().with_grad())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).data()[0]
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone().with_grad())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).ok_or("input lost its gradient")?.data().to_vec();
        let n = inputs[i].len();
        let idx: Vec<usize> = match per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in idx {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[j];
            if a.abs().max(numeric.abs()) <= FD_MIN_GRAD {
                report.skipped_small += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel >= FD_REL_TOL {
                return Err(format!(
                    "input {i} component {j}: analytic {a:.6e} vs numeric {numeric:.6e} (rel {rel:.3e})"
                ));
            }
        }
    }
    Ok(report)
}

/// Central-difference check of every parameter tensor in `store`, probing
/// up to `per_param` random components of each.
pub fn check_param_gradients<B>(store: &ParamStore<f64>, build: B, per_param: usize, seed: u64) -> Result<FdReport, String>
where
    B: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    let eval = |p: &ParamStore<f64>| -> f64 {
        let mut g = Graph::new();
        let loss = build(&mut g, p);
        g.value(loss).data()[0]
    };
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    let mut work = store.clone();
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = match grads.param(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; store.get(id).len()],
        };
        let n = analytic.len();
        let idx: Vec<usize> = if per_param < n {
            sample(&mut rng, n, per_param).into_vec()
        } else {
            (0..n).collect()
        };
        for j in idx {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[j];
            if a.abs().max(numeric.abs()) <= FD_MIN_GRAD {
                report.skipped_small += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel >= FD_REL_TOL {
                return Err(format!(
                    "{}[{j}]: analytic {a:.6e} vs numeric {numeric:.6e} (rel {rel:.3e})",
                    store.name(id)
                ));
            }
        }
    }
    Ok(report)
}

/// A run small enough to go through every pipeline stage in well under a
/// second: 32×32 phantoms, 4/2/2 cases, T = 10, narrow widths.
pub fn tiny_run_config() -> diffdp::io::RunConfig {
    diffdp::io::RunConfig {
        size: 32,
        n_train: 4,
        n_val: 2,
        n_test: 2,
        timesteps: 10,
        widths: [4, 4, 8, 8, 8, 8],
        emb_dim: 8,
        groups: 2,
        batch_size: 4,
        epochs: 2,
        lr_drop_epoch: 1,
        pretrain_epochs: 2,
        baseline_epochs: 2,
        checkpoint_every: 1,
        val_every: 1,
        dvh_bins: 50,
        ..diffdp::io::RunConfig::desk()
    }
}

/// Every file under `root`, keyed by relative path, with its bytes.
pub fn snapshot(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(dir: &std::path::Path, root: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}
