//! End-to-end stages shared by the command line, the examples and the
//! acceptance suite: data generation, pretraining, diffusion and baseline
//! training, sampling and evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{diffusion_loss, sample, training_step, NoiseModel};
use crate::error::{contract, Error, Result};
use crate::io::{save_baseline_model, save_diffusion_model, write_dataset, Dataset, RunConfig};
use crate::metrics::{evaluate, DoseReport, EvalCase};
use crate::networks::{pretrain_structure_encoder, BaselineModel, DiffDpModel, PretrainOutcome};
use crate::numerics::{AdamConfig, AdamState, Graph, ParamStore, Tensor};
use crate::phantom::{generate_dataset, split_dataset, stack_cases, PhantomCase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// `(epoch, loss)` at each validation check.
    pub val: Vec<(usize, f64)>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Mean loss over the first `n` steps.
    pub fn head_mean(&self, n: usize) -> f64 {
        let k = n.min(self.steps.len()).max(1);
        self.steps.iter().take(k).map(|s| s.loss).sum::<f64>() / k as f64
    }

    /// Mean loss over the last `n` steps.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.steps.len()).max(1);
        self.steps.iter().rev().take(k).map(|s| s.loss).sum::<f64>() / k as f64
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,epoch,lr,loss\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{:.8e},{:.8e}", s.step, s.epoch, s.lr, s.loss);
        }
        out
    }

    pub fn val_csv(&self) -> String {
        let mut out = String::from("epoch,val_loss\n");
        for (e, l) in &self.val {
            let _ = writeln!(out, "{e},{l:.8e}");
        }
        out
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates `count` cases (the configured total by default) and splits
/// them in the configured proportions.
pub fn generate(cfg: &RunConfig, count: Option<usize>, seed: u64) -> Result<Dataset> {
    let n = count.unwrap_or_else(|| cfg.total_cases());
    let cases = generate_dataset(seed, n, cfg.size, cfg.n_beams)?;
    let (train, val, test) = split_dataset(&cases, cfg.split_fractions(), cfg.seed_split)?;
    Ok(Dataset { train, val, test })
}

pub fn gen_data(cfg: &RunConfig, out: &Path, count: Option<usize>, seed: u64) -> Result<Dataset> {
    let data = generate(cfg, count, seed)?;
    write_dataset(out, &data.train, &data.val, &data.test)?;
    Ok(data)
}

pub fn pretrain(cfg: &RunConfig, train: &[PhantomCase]) -> Result<PretrainOutcome> {
    pretrain_structure_encoder(train, &cfg.pretrain(), &cfg.net(), &cfg.scale(), cfg.seed_model)
}

fn batches<'a>(cases: &'a [PhantomCase], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<&'a PhantomCase>> {
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch)
        .map(|c| c.iter().map(|&i| &cases[i]).collect())
        .collect()
}

fn normalized_batch(cfg: &RunConfig, cases: &[&PhantomCase]) -> Result<(Tensor, Tensor)> {
    let (x, y) = stack_cases(cases)?;
    Ok((x, cfg.scale().normalize(&y)))
}

/// Shared epoch loop: `step` performs one update and returns its loss;
/// `validate` scores the validation split. Handles the learning-rate drop,
/// periodic checkpoints and optional early stopping.
fn run_epochs(
    cfg: &RunConfig,
    train: &[PhantomCase],
    epochs: usize,
    opt: &mut AdamState,
    mut step: impl FnMut(&Tensor, &Tensor, &mut AdamState, &mut ChaCha8Rng) -> Result<f64>,
    mut validate: impl FnMut() -> Result<Option<f64>>,
    mut checkpoint: impl FnMut(usize) -> Result<()>,
) -> Result<TrainLog> {
    contract!(!train.is_empty(), "training split is empty");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_train);
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..epochs {
        let lr = cfg.lr_at(epoch);
        opt.set_lr(lr);
        for batch in batches(train, cfg.batch_size, &mut rng) {
            let (x, y) = normalized_batch(cfg, &batch)?;
            let loss = step(&x, &y, opt, &mut rng)?;
            log.steps.push(StepRecord {
                step: log.steps.len(),
                epoch,
                lr,
                loss,
            });
        }
        let done = epoch + 1;
        if done % cfg.checkpoint_every == 0 {
            checkpoint(done)?;
        }
        if done % cfg.val_every == 0 {
            if let Some(v) = validate()? {
                log::info!("epoch {done}: train {:.4}, val {v:.4}", log.tail_mean(train.len().div_ceil(cfg.batch_size)));
                log.val.push((done, v));
                if v < best {
                    best = v;
                    stale = 0;
                } else {
                    stale += 1;
                }
                if cfg.patience.is_some_and(|p| stale >= p) {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(log)
}

fn adam(cfg: &RunConfig) -> AdamState {
    AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    })
}

fn write_logs(out: &Path, log: &TrainLog) -> Result<()> {
    write_text(&out.join("loss_curve.csv"), &log.loss_csv())?;
    write_text(&out.join("val_curve.csv"), &log.val_csv())
}

/// ε-prediction training of encoder and predictor together,
/// starting from `encoder` when given. With `out`, writes the loss curves,
/// periodic `ckpt_epoch_NNNN.ddpx` files and the final `model.ddpx`.
pub fn train_diffusion(
    cfg: &RunConfig,
    data: &Dataset,
    encoder: Option<&ParamStore>,
    epochs: usize,
    out: Option<&Path>,
) -> Result<(DiffDpModel, TrainLog)> {
    let sched = cfg.schedule()?;
    let mut model = DiffDpModel::new(&cfg.net(), cfg.seed_model)?;
    if let Some(enc) = encoder {
        model.load_encoder(enc)?;
    }
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let mut opt = adam(cfg);
    let val = &data.val;
    let val_seed = cfg.seed_train ^ 0x9e37_79b9;
    let model_cell = std::cell::RefCell::new(&mut model);
    let log = run_epochs(
        cfg,
        &data.train,
        epochs,
        &mut opt,
        |x, y, opt, rng| training_step(x, y, &mut **model_cell.borrow_mut(), &sched, opt, rng),
        || {
            if val.is_empty() {
                return Ok(None);
            }
            let m = model_cell.borrow();
            let mut rng = ChaCha8Rng::seed_from_u64(val_seed);
            let refs: Vec<&PhantomCase> = val.iter().collect();
            let (x, y) = normalized_batch(cfg, &refs)?;
            diffusion_loss(&x, &y, &**m, &sched, &mut rng).map(Some)
        },
        |epoch| match out {
            Some(dir) => save_diffusion_model(dir.join(format!("ckpt_epoch_{epoch:04}.ddpx")), &model_cell.borrow()),
            None => Ok(()),
        },
    )?;
    if let Some(dir) = out {
        write_logs(dir, &log)?;
        save_diffusion_model(dir.join("model.ddpx"), &model)?;
    }
    Ok((model, log))
}

fn baseline_loss(model: &BaselineModel, x: &Tensor, y: &Tensor) -> Result<(Graph, crate::numerics::Var)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let target = g.constant(y.clone());
    let pred = model.net.predict(&mut g, &model.store, xv)?;
    let loss = g.mean_abs_diff(pred, target)?;
    Ok((g, loss))
}

/// Direct L1 dose regression with the same data, schedule of learning rates
/// and seeds as the diffusion run. Writes `baseline.ddpx` and
/// `baseline_loss_curve.csv` with `out`.
pub fn train_baseline(cfg: &RunConfig, data: &Dataset, epochs: usize, out: Option<&Path>) -> Result<(BaselineModel, TrainLog)> {
    let mut model = BaselineModel::new(&cfg.net(), cfg.seed_model)?;
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let mut opt = adam(cfg);
    let val = &data.val;
    let cell = std::cell::RefCell::new(&mut model);
    let log = run_epochs(
        cfg,
        &data.train,
        epochs,
        &mut opt,
        |x, y, opt, _| {
            let mut m = cell.borrow_mut();
            let (g, loss) = baseline_loss(&m, x, y)?;
            let value = g.value(loss).item()? as f64;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("baseline loss is {value}")));
            }
            let grads = g.backward(loss)?;
            m.store.set_grads(&grads);
            opt.step(&mut m.store)?;
            Ok(value)
        },
        || {
            if val.is_empty() {
                return Ok(None);
            }
            let refs: Vec<&PhantomCase> = val.iter().collect();
            let (x, y) = normalized_batch(cfg, &refs)?;
            let (g, loss) = baseline_loss(&cell.borrow(), &x, &y)?;
            Ok(Some(g.value(loss).item()? as f64))
        },
        |epoch| match out {
            Some(dir) => save_baseline_model(dir.join(format!("baseline_epoch_{epoch:04}.ddpx")), &cell.borrow()),
            None => Ok(()),
        },
    )?;
    if let Some(dir) = out {
        write_text(&dir.join("baseline_loss_curve.csv"), &log.loss_csv())?;
        save_baseline_model(dir.join("baseline.ddpx"), &model)?;
    }
    Ok((model, log))
}

fn split_batch(t: &Tensor) -> Result<Vec<Tensor>> {
    (0..t.shape()[0]).map(|i| t.select(i)).collect()
}

/// Runs the reverse chain for every case and returns dose maps `[1, H, W]`
/// in dose units. Cases are processed in batches of the configured size
/// from one generator seeded with `seed`.
pub fn sample_doses<M: NoiseModel + ?Sized>(cfg: &RunConfig, model: &M, cases: &[PhantomCase], seed: u64) -> Result<Vec<Tensor>> {
    let sched = cfg.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(cfg.batch_size) {
        let refs: Vec<&PhantomCase> = chunk.iter().collect();
        let (x, _) = stack_cases(&refs)?;
        let y = sample(&x, model, &sched, &mut rng)?;
        out.extend(split_batch(&cfg.scale().denormalize(&y))?);
    }
    Ok(out)
}

/// Baseline predictions in dose units.
pub fn predict_baseline(cfg: &RunConfig, model: &BaselineModel, cases: &[PhantomCase]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(cfg.batch_size) {
        let refs: Vec<&PhantomCase> = chunk.iter().collect();
        let (x, _) = stack_cases(&refs)?;
        out.extend(split_batch(&cfg.scale().denormalize(&model.predict(&x)?))?);
    }
    Ok(out)
}

pub fn evaluate_predictions(cfg: &RunConfig, preds: &[Tensor], cases: &[PhantomCase]) -> Result<DoseReport> {
    contract!(
        preds.len() == cases.len(),
        "{} predictions for {} cases",
        preds.len(),
        cases.len()
    );
    let eval: Vec<EvalCase> = preds.iter().zip(cases).map(|(p, c)| EvalCase { pred: p, truth: c }).collect();
    evaluate(&eval, cfg.dvh_bins)
}

/// Mean absolute error per pixel, in dose units, averaged over cases.
pub fn mean_abs_error(preds: &[Tensor], cases: &[PhantomCase]) -> Result<f64> {
    contract!(preds.len() == cases.len() && !cases.is_empty(), "prediction/case count mismatch");
    let mut total = 0.0;
    for (p, c) in preds.iter().zip(cases) {
        contract!(p.len() == c.y.len(), "{}: prediction size mismatch", c.case_id);
        total += p
            .data()
            .iter()
            .zip(c.y.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / p.len() as f64;
    }
    Ok(total / cases.len() as f64)
}
