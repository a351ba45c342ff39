//! Loss assembly, RMSprop, the training loop, metrics and naive baselines.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{materialize, Dataset, WindowPlan};
use crate::model::{Binding, Model, ParamStore};
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

// ── loss ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    /// λ·MSE_main + (1−λ)·MSE_aux with a fixed blend weight.
    Fixed(f64),
    /// exp(−s₁)·MSE_main + exp(−s₂)·MSE_aux + s₁ + s₂ with learnable
    /// log-variances; the +s regularizers keep the weights from collapsing.
    Uncertainty,
}

impl LossMode {
    pub fn validate(&self) -> Result<()> {
        if let LossMode::Fixed(lambda) = self {
            if !(0.0..=1.0).contains(lambda) {
                return Err(Error::Config(format!(
                    "lambda must lie in [0, 1], got {lambda}"
                )));
            }
        }
        Ok(())
    }
}

/// Joint training loss across the main and (optional) auxiliary head.
/// `gates` carries the bound log-variance tensors in uncertainty mode.
pub fn joint_loss(
    y_hat: &Tensor,
    y: &Tensor,
    aux: Option<(&Tensor, &Tensor)>,
    mode: &LossMode,
    gates: (Option<&Tensor>, Option<&Tensor>),
) -> Result<Tensor> {
    let main = y_hat.mse(y)?;
    match (mode, aux) {
        (LossMode::Fixed(_), None) => Ok(main),
        (LossMode::Fixed(lambda), Some((ym_hat, ym))) => {
            let aux_mse = ym_hat.mse(ym)?;
            main.mul_const(*lambda)
                .add(&aux_mse.mul_const(1.0 - lambda))
        }
        (LossMode::Uncertainty, None) => {
            let s1 = gates
                .0
                .ok_or_else(|| Error::invalid("joint_loss", "uncertainty mode needs s1"))?;
            s1.neg().exp().mul(&main)?.add(s1)
        }
        (LossMode::Uncertainty, Some((ym_hat, ym))) => {
            let (s1, s2) = (
                gates
                    .0
                    .ok_or_else(|| Error::invalid("joint_loss", "uncertainty mode needs s1"))?,
                gates
                    .1
                    .ok_or_else(|| Error::invalid("joint_loss", "uncertainty mode needs s2"))?,
            );
            let aux_mse = ym_hat.mse(ym)?;
            s1.neg()
                .exp()
                .mul(&main)?
                .add(&s2.neg().exp().mul(&aux_mse)?)?
                .add(s1)?
                .add(s2)
        }
    }
}

// ── optimizer ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RmspropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

/// Running second-moment estimates, aligned with parameter-store order.
pub struct RmspropState {
    v: Vec<Vec<f64>>,
}

impl RmspropState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            v: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }
}

/// One update: decoupled weight decay first, then
/// v ← α·v + (1−α)·g², p ← p − lr·g/(√v + ε).
pub fn rmsprop_step(
    store: &mut ParamStore,
    grads: &[Option<Vec<f64>>],
    state: &mut RmspropState,
    cfg: &RmspropConfig,
) -> Result<()> {
    for (i, p) in store.iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        let v = &mut state.v[i];
        for j in 0..p.data.len() {
            if cfg.weight_decay != 0.0 {
                p.data[j] *= 1.0 - cfg.lr * cfg.weight_decay;
            }
            v[j] = cfg.alpha * v[j] + (1.0 - cfg.alpha) * g[j] * g[j];
            p.data[j] -= cfg.lr * g[j] / (v[j].sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

// ── training loop ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub rmsprop_alpha: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Per-epoch learning-rate damping: lr_e = lr / (1 + lr_decay·(e−1)).
    pub lr_decay: f64,
    /// Optimizer-step budget; 0 means unlimited.
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 5e-4,
            rmsprop_alpha: 0.99,
            epsilon: 1e-8,
            max_epochs: 50,
            patience: 10,
            seed: 1,
            loss_mode: LossMode::Fixed(0.5),
            lr_decay: 0.0,
            max_steps: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    /// λ in fixed mode, `s1;s2` log-variances in uncertainty mode.
    pub gate_desc: String,
}

pub struct TrainReport {
    pub log: Vec<EpochRow>,
    pub best_epoch: usize,
    pub steps: usize,
}

fn gate_desc(model: &Model, mode: &LossMode) -> String {
    match mode {
        LossMode::Fixed(lambda) => lambda.to_string(),
        LossMode::Uncertainty => {
            let s1 = model
                .store
                .id_of("loss.s1")
                .map(|id| model.store.get(id).data[0])
                .unwrap_or(0.0);
            match model.store.id_of("loss.s2") {
                Some(id) => format!("{};{}", s1, model.store.get(id).data[0]),
                None => s1.to_string(),
            }
        }
    }
}

fn batch_loss(
    model: &Model,
    bind: &Binding,
    a0: &Tensor,
    batch: &crate::data::WindowBatch,
    mode: &LossMode,
) -> Result<Tensor> {
    let tape = a0.tape();
    let (n, t, c, tau) = (batch.n, batch.t_in, batch.c, batch.horizon);
    let mut total: Option<Tensor> = None;
    for b in 0..batch.starts.len() {
        let x = tape.constant(
            batch.x[b * n * t * c..(b + 1) * n * t * c].to_vec(),
            &[n, t, c],
        )?;
        let y = tape.constant(
            batch.y[b * n * tau..(b + 1) * n * tau].to_vec(),
            &[n, tau, 1],
        )?;
        let out = model.forward(bind, &x, a0)?;
        let (s1, s2) = model.loss_gates(bind);
        let loss = match &out.y_moran_hat {
            Some(ym_hat) => {
                let ym = tape.constant(
                    batch.y_moran[b * n * tau..(b + 1) * n * tau].to_vec(),
                    &[n, tau, 1],
                )?;
                joint_loss(
                    &out.y_hat,
                    &y,
                    Some((ym_hat, &ym)),
                    mode,
                    (s1.as_ref(), s2.as_ref()),
                )?
            }
            None => joint_loss(&out.y_hat, &y, None, mode, (s1.as_ref(), s2.as_ref()))?,
        };
        total = Some(match total {
            None => loss,
            Some(acc) => acc.add(&loss)?,
        });
    }
    Ok(total
        .expect("batch is never empty")
        .mul_const(1.0 / batch.starts.len() as f64))
}

/// Runs the epoch loop with seed-deterministic shuffling, early stopping on
/// validation MAE, and a divergence guard. On return the model holds the
/// best-validation parameters seen. `start_epoch` shifts the log's epoch
/// numbering when resuming.
pub fn train(
    model: &mut Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    start_epoch: usize,
) -> Result<TrainReport> {
    cfg.loss_mode.validate()?;
    if ds.train.starts.is_empty() || ds.val.starts.is_empty() {
        return Err(Error::invalid("train", "train and val splits must be nonempty"));
    }
    let mut report = TrainReport {
        log: Vec::new(),
        best_epoch: 0,
        steps: 0,
    };
    if cfg.max_epochs == 0 {
        return Ok(report);
    }
    let target = model.cfg.target_feature;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = RmspropState::new(&model.store);
    let mut best_mae = f64::INFINITY;
    let mut best_params: Option<Vec<Vec<f64>>> = None;
    let mut bad_epochs = 0usize;
    let mut initial_loss: Option<f64> = None;

    'epochs: for e in 0..cfg.max_epochs {
        let epoch = start_epoch + e + 1;
        let mut order = ds.train.starts.clone();
        order.shuffle(&mut rng);
        let lr_e = cfg.lr / (1.0 + cfg.lr_decay * e as f64);
        let opt = RmspropConfig {
            lr: lr_e,
            alpha: cfg.rmsprop_alpha,
            epsilon: cfg.epsilon,
            weight_decay: cfg.weight_decay,
        };
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && report.steps >= cfg.max_steps {
                break;
            }
            let batch = materialize(
                &ds.frame,
                chunk,
                ds.train.t_in,
                ds.train.horizon,
                target,
                &ds.weights,
            )?;
            let tape = Tape::new();
            let bind = model.bind(&tape, true);
            let a0 = ds.a0.to_tensor(&tape);
            let loss = batch_loss(model, &bind, &a0, &batch, &cfg.loss_mode)?;
            loss.backward()?;
            let grads = bind.gradients();
            rmsprop_step(&mut model.store, &grads, &mut state, &opt)?;
            initial_loss.get_or_insert(loss.item());
            loss_sum += loss.item();
            n_batches += 1;
            report.steps += 1;
        }
        if n_batches == 0 {
            break;
        }
        let train_loss = loss_sum / n_batches as f64;
        let initial = initial_loss.unwrap_or(train_loss);
        if train_loss > 10.0 * initial.max(1e-12) {
            return Err(Error::Diverged {
                loss: train_loss,
                initial,
            });
        }
        let val = evaluate(model, ds, &ds.val)?;
        report.log.push(EpochRow {
            epoch,
            train_loss,
            val_mae: val.mae,
            val_rmse: val.rmse,
            gate_desc: gate_desc(model, &cfg.loss_mode),
        });
        if val.mae < best_mae {
            best_mae = val.mae;
            best_params = Some(model.store.iter().map(|p| p.data.clone()).collect());
            report.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break 'epochs;
            }
        }
        if cfg.max_steps > 0 && report.steps >= cfg.max_steps {
            break;
        }
    }
    if let Some(best) = best_params {
        for (p, data) in model.store.iter_mut().zip(best) {
            p.data = data;
        }
    }
    Ok(report)
}

// ── metrics ──────────────────────────────────────────────────────────

/// Per-horizon and aggregate error report in denormalized units.
/// `runtime_s` is wall-clock and never serialized, so written reports stay
/// byte-identical across reruns.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_horizon_mae: Vec<f64>,
    pub per_horizon_rmse: Vec<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub runtime_s: f64,
    pub config_hash: String,
}

/// Builds a report from residual lists, one per horizon step.
pub fn report_from_errors(errors: &[Vec<f64>]) -> EvalReport {
    let per_horizon_mae: Vec<f64> = errors
        .iter()
        .map(|e| e.iter().map(|v| v.abs()).sum::<f64>() / e.len().max(1) as f64)
        .collect();
    let per_horizon_rmse: Vec<f64> = errors
        .iter()
        .map(|e| (e.iter().map(|v| v * v).sum::<f64>() / e.len().max(1) as f64).sqrt())
        .collect();
    let mae = per_horizon_mae.iter().sum::<f64>() / per_horizon_mae.len().max(1) as f64;
    let rmse = per_horizon_rmse.iter().sum::<f64>() / per_horizon_rmse.len().max(1) as f64;
    EvalReport {
        per_horizon_mae,
        per_horizon_rmse,
        mae,
        rmse,
        runtime_s: 0.0,
        config_hash: String::new(),
    }
}

/// Denormalized forecast of the window starting at `start` (shape [N, τ]).
pub fn predict_window(model: &Model, ds: &Dataset, start: usize) -> Result<Vec<f64>> {
    let cfg = &model.cfg;
    let (n, t, c, tau) = (cfg.n_nodes, cfg.in_steps, cfg.in_features, cfg.out_steps);
    if ds.frame.n_stations != n || ds.frame.n_features() != c {
        return Err(Error::ShapeMismatch {
            op: "predict_window",
            lhs: vec![ds.frame.n_stations, ds.frame.n_features()],
            rhs: vec![n, c],
        });
    }
    if start + t > ds.frame.len() {
        return Err(Error::invalid(
            "predict_window",
            format!("window at row {start} needs {t} observed steps"),
        ));
    }
    let tape = Tape::new();
    let bind = model.bind(&tape, false);
    let a0 = ds.a0.to_tensor(&tape);
    let mut x = vec![0.0; n * t * c];
    for node in 0..n {
        for step in 0..t {
            for f in 0..c {
                x[(node * t + step) * c + f] = ds.frame.value(start + step, node, f);
            }
        }
    }
    let xt = tape.constant(x, &[n, t, c])?;
    let out = model.forward(&bind, &xt, &a0)?;
    let target = cfg.target_feature;
    debug_assert_eq!(out.y_hat.numel(), n * tau);
    Ok(out
        .y_hat
        .data()
        .iter()
        .map(|&v| ds.stats.denormalize(target, v))
        .collect())
}

/// Forecast-error report of the model over one window plan.
pub fn evaluate(model: &Model, ds: &Dataset, plan: &WindowPlan) -> Result<EvalReport> {
    let cfg = &model.cfg;
    if ds.frame.n_stations != cfg.n_nodes {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            lhs: vec![ds.frame.n_stations],
            rhs: vec![cfg.n_nodes],
        });
    }
    if plan.t_in != cfg.in_steps || plan.horizon != cfg.out_steps {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            lhs: vec![plan.t_in, plan.horizon],
            rhs: vec![cfg.in_steps, cfg.out_steps],
        });
    }
    let (n, t, tau, target) = (cfg.n_nodes, cfg.in_steps, cfg.out_steps, cfg.target_feature);
    let started = std::time::Instant::now();
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); tau];
    for &start in &plan.starts {
        let pred = predict_window(model, ds, start)?;
        for node in 0..n {
            for s in 0..tau {
                let truth = ds
                    .stats
                    .denormalize(target, ds.frame.value(start + t + s, node, target));
                errors[s].push(pred[node * tau + s] - truth);
            }
        }
    }
    let mut report = report_from_errors(&errors);
    report.runtime_s = started.elapsed().as_secs_f64();
    Ok(report)
}

// ── baselines ────────────────────────────────────────────────────────

/// Repeats the last observed target value across the whole horizon.
pub fn baseline_persistence(ds: &Dataset, plan: &WindowPlan) -> Result<EvalReport> {
    let (n, t, tau) = (ds.frame.n_stations, plan.t_in, plan.horizon);
    let target = target_of(ds)?;
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); tau];
    for &start in &plan.starts {
        for node in 0..n {
            let last = ds.frame.value(start + t - 1, node, target);
            for s in 0..tau {
                let truth = ds.frame.value(start + t + s, node, target);
                errors[s].push(denorm_diff(ds, target, last, truth));
            }
        }
    }
    Ok(report_from_errors(&errors))
}

/// Repeats the value one period before each target step, stepping further
/// back in whole periods until the reference lies in observed history.
pub fn baseline_seasonal(ds: &Dataset, plan: &WindowPlan, period: usize) -> Result<EvalReport> {
    if period == 0 || ds.frame.len() <= period {
        return Err(Error::invalid(
            "baseline_seasonal",
            format!(
                "series of {} rows is too short for one period of {period}",
                ds.frame.len()
            ),
        ));
    }
    let (n, t, tau) = (ds.frame.n_stations, plan.t_in, plan.horizon);
    let target = target_of(ds)?;
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); tau];
    for &start in &plan.starts {
        let origin = start + t - 1; // last observed row
        for s in 0..tau {
            let target_row = start + t + s;
            let lead = target_row - origin;
            let m = lead.div_ceil(period);
            let back = m * period;
            if back > target_row {
                return Err(Error::invalid(
                    "baseline_seasonal",
                    "not enough history before the first window",
                ));
            }
            let reference_row = target_row - back;
            for node in 0..n {
                let reference = ds.frame.value(reference_row, node, target);
                let truth = ds.frame.value(target_row, node, target);
                errors[s].push(denorm_diff(ds, target, reference, truth));
            }
        }
    }
    Ok(report_from_errors(&errors))
}

fn target_of(ds: &Dataset) -> Result<usize> {
    if ds.target >= ds.stats.mean.len() {
        return Err(Error::invalid("baseline", "dataset target out of range"));
    }
    Ok(ds.target)
}

fn denorm_diff(ds: &Dataset, target: usize, pred: f64, truth: f64) -> f64 {
    ds.stats.denormalize(target, pred) - ds.stats.denormalize(target, truth)
}
