//! Trainers: the cross-entropy DNN baseline, ensemble distillation (EnD)
//! and ensemble distribution distillation (EnD²).
//!
//! All three share one minibatch loop: Adam under the 1-cycle policy, a
//! per-epoch shuffle and dropout mask stream derived from the trainer seed,
//! and a per-epoch temperature. The loop is fully deterministic given the
//! seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{self, alphas_into, check_gamma, nll_from_mean_log, nll_grad_from_mean_log};
use crate::ensemble::TransferSet;
use crate::net::{gather_rows, log_softmax_into, softmax_into, Activation, Checkpoint, CheckpointMeta, CrossEntropy, LogitLoss, Mlp, Mode, ModelKind};
use crate::optim::{annealed_temperature, one_cycle_lr, AdamState, LrSchedule, TemperatureSchedule};
use crate::{rng, Error, Result};

/// Optimisation settings shared by every trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub cycle_len: usize,
    pub peak_lr: f64,
    /// Probability of keeping a hidden unit.
    pub keep_prob: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], epochs: 60, cycle_len: 40, peak_lr: 1e-2, keep_prob: 0.9, batch_size: 128 }
    }
}

impl TrainConfig {
    /// Student defaults: a longer schedule and no dropout.
    pub fn student() -> Self {
        Self { epochs: 4000, cycle_len: 2700, keep_prob: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.cycle_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, cycle_len and batch_size must be positive".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr must be positive, got {}", self.peak_lr)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep_prob must be in (0, 1], got {}", self.keep_prob)));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule { peak_lr: self.peak_lr, cycle_len: self.cycle_len, total_epochs: self.epochs }
    }

    fn dims(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(num_classes);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub temperature: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,lr,T,mean_loss")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.lr, e.temperature, e.mean_loss)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.temperature).collect()
    }
}

/// A training objective over the rows of a fixed dataset.
trait Objective {
    /// Called once per epoch before any batch, with that epoch's temperature.
    fn begin_epoch(&mut self, temperature: f64) -> Result<()>;
    /// Mean loss over `rows` and its gradient with respect to `logits`.
    fn batch(&self, rows: &[usize], logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)>;
}

fn fit(
    model: &mut Mlp,
    inputs: ArrayView2<f64>,
    cfg: &TrainConfig,
    seed: u64,
    schedule: &TemperatureSchedule,
    objective: &mut dyn Objective,
) -> Result<TrainLog> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    let batch_size = cfg.batch_size.min(n);
    let lr_schedule = cfg.lr_schedule();
    let mut shuffle = rng::stream(seed, "shuffle");
    let mut dropout = rng::stream(seed, "dropout");
    let mut adam = AdamState::new(model.num_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = one_cycle_lr(epoch, &lr_schedule);
        let temperature = annealed_temperature(epoch, schedule);
        objective.begin_epoch(temperature)?;
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for rows in order.chunks(batch_size) {
            let x = gather_rows(inputs, rows);
            let (logits, trace) = model.forward(x.view(), Mode::Train { keep_prob: cfg.keep_prob, rng: &mut dropout })?;
            let (loss, dlogits) = objective.batch(rows, logits.view())?;
            let grads = model.backward(&trace, dlogits.view())?;
            adam.step(model.params_mut(), &grads, lr)?;
            total += loss * rows.len() as f64;
        }
        log.epochs.push(EpochLog { epoch, lr, temperature, mean_loss: total / n as f64 });
    }
    Ok(log)
}

fn fresh_model(cfg: &TrainConfig, input_dim: usize, num_classes: usize, seed: u64) -> Result<Mlp> {
    let mut init = rng::stream(seed, "init");
    Mlp::he_uniform(&cfg.dims(input_dim, num_classes), Activation::Relu, &mut init)
}

struct LabelObjective<'a> {
    labels: &'a [usize],
}

impl Objective for LabelObjective<'_> {
    fn begin_epoch(&mut self, _temperature: f64) -> Result<()> {
        Ok(())
    }

    fn batch(&self, rows: &[usize], logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
        let labels: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        CrossEntropy { labels: &labels }.loss_and_grad(logits)
    }
}

/// Maximum-likelihood training on hard labels.
pub fn train_dnn(
    inputs: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if inputs.nrows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if labels.len() != inputs.nrows() {
        return Err(Error::Shape(format!("{} labels for {} inputs", labels.len(), inputs.nrows())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    let mut model = fresh_model(cfg, inputs.ncols(), num_classes, seed)?;
    let schedule = TemperatureSchedule { t0: 1.0, cycle_len: cfg.cycle_len, total_epochs: cfg.epochs, annealed: false };
    let log = fit(&mut model, inputs, cfg, seed, &schedule, &mut LabelObjective { labels })?;
    let meta = CheckpointMeta { seed, epochs: cfg.epochs, model_kind: ModelKind::Dnn };
    Ok((Checkpoint::new(model, meta), log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillMode {
    End,
    End2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub mode: DistillMode,
    /// EnD temperature.
    pub t_fixed: f64,
    /// EnD² initial temperature.
    pub t0: f64,
    /// EnD² temperature annealing.
    pub annealed: bool,
    /// Central-smoothing weight.
    pub gamma: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl DistillConfig {
    pub fn end(train: TrainConfig, seed: u64) -> Self {
        Self { mode: DistillMode::End, t_fixed: 2.5, t0: 10.0, annealed: false, gamma: dirichlet::DEFAULT_GAMMA, train, seed }
    }

    pub fn end2(train: TrainConfig, seed: u64) -> Self {
        Self { mode: DistillMode::End2, t_fixed: 2.5, t0: 10.0, annealed: true, gamma: dirichlet::DEFAULT_GAMMA, train, seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        check_gamma(self.gamma)?;
        match self.mode {
            DistillMode::End if !(self.t_fixed > 0.0 && self.t_fixed.is_finite()) => {
                Err(Error::Config(format!("EnD temperature must be positive, got {}", self.t_fixed)))
            }
            DistillMode::End2 if !(self.t0 >= 1.0 && self.t0.is_finite()) => {
                Err(Error::Config(format!("EnD² initial temperature must be at least 1, got {}", self.t0)))
            }
            _ => Ok(()),
        }
    }

    /// Temperature per epoch for this mode.
    pub fn temperature_schedule(&self) -> TemperatureSchedule {
        let (t0, annealed) = match self.mode {
            DistillMode::End => (self.t_fixed, false),
            DistillMode::End2 => (self.t0, self.annealed),
        };
        TemperatureSchedule { t0, cycle_len: self.train.cycle_len, total_epochs: self.train.epochs, annealed }
    }
}

/// Tempered KL from the ensemble mean to the student, scaled by `T²`.
///
/// `member_logits` is `M × K`. Returns the loss and its gradient with
/// respect to the student logits, `T (p − q)`.
pub fn end_loss(student_logits: &[f64], member_logits: ArrayView2<f64>, temperature: f64) -> Result<(f64, Vec<f64>)> {
    let k = student_logits.len();
    if member_logits.nrows() == 0 {
        return Err(Error::Empty("ensemble members"));
    }
    if member_logits.ncols() != k {
        return Err(Error::Shape(format!("student has {k} logits, members have {}", member_logits.ncols())));
    }
    if !(temperature > 0.0) {
        return Err(Error::domain("end_loss", format!("temperature must be positive, got {temperature}")));
    }
    let target = mean_tempered_probs(member_logits, temperature);
    let mut grad = vec![0.0; k];
    let loss = end_row(student_logits, &target, temperature, &mut grad);
    Ok((loss, grad))
}

fn mean_tempered_probs(member_logits: ArrayView2<f64>, temperature: f64) -> Vec<f64> {
    let (m, k) = member_logits.dim();
    let mut mean = vec![0.0; k];
    let mut p = vec![0.0; k];
    for row in member_logits.rows() {
        softmax_into(&row.to_vec(), temperature, &mut p);
        mean.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    mean
}

fn end_row(student: &[f64], target: &[f64], temperature: f64, grad: &mut [f64]) -> f64 {
    let mut log_p = vec![0.0; student.len()];
    log_softmax_into(student, temperature, &mut log_p);
    let mut kl = 0.0;
    for c in 0..student.len() {
        let q = target[c];
        if q > 0.0 {
            kl += q * (q.ln() - log_p[c]);
        }
        grad[c] = temperature * (log_p[c].exp() - q);
    }
    temperature * temperature * kl
}

/// Per-row targets recomputed whenever the temperature changes.
struct TransferObjective<'a> {
    transfer: &'a TransferSet,
    mode: DistillMode,
    gamma: f64,
    temperature: f64,
    /// EnD: tempered ensemble mean. EnD²: mean smoothed member log-probabilities.
    targets: Array2<f64>,
}

impl<'a> TransferObjective<'a> {
    fn new(transfer: &'a TransferSet, mode: DistillMode, gamma: f64) -> Self {
        Self {
            transfer,
            mode,
            gamma,
            temperature: f64::NAN,
            targets: Array2::zeros((transfer.len(), transfer.num_classes())),
        }
    }
}

impl Objective for TransferObjective<'_> {
    fn begin_epoch(&mut self, temperature: f64) -> Result<()> {
        if temperature == self.temperature {
            return Ok(());
        }
        self.temperature = temperature;
        let k = self.transfer.num_classes();
        let m = self.transfer.num_members() as f64;
        let mut p = vec![0.0; k];
        for (i, mut target) in self.targets.rows_mut().into_iter().enumerate() {
            let members = self.transfer.member_logits.index_axis(ndarray::Axis(0), i);
            target.fill(0.0);
            for (mi, row) in members.rows().into_iter().enumerate() {
                softmax_into(&row.to_vec(), temperature, &mut p);
                for c in 0..k {
                    target[c] += match self.mode {
                        DistillMode::End => p[c],
                        DistillMode::End2 => {
                            let smoothed = (1.0 - self.gamma) * p[c] + self.gamma / k as f64;
                            if smoothed <= 0.0 {
                                return Err(Error::ZeroProbability { member: mi, class: c });
                            }
                            smoothed.ln()
                        }
                    };
                }
            }
            target.mapv_inplace(|v| v / m);
        }
        Ok(())
    }

    fn batch(&self, rows: &[usize], logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
        let k = self.transfer.num_classes();
        let t = self.temperature;
        let b = rows.len() as f64;
        let mut grad = Array2::zeros((rows.len(), k));
        let mut alpha = vec![0.0; k];
        let mut g = vec![0.0; k];
        let mut total = 0.0;
        for (j, &row) in rows.iter().enumerate() {
            let z = logits.row(j).to_vec();
            let target = self.targets.row(row);
            let target = target.as_slice().expect("row-major targets");
            match self.mode {
                DistillMode::End => {
                    total += end_row(&z, target, t, &mut g);
                }
                DistillMode::End2 => {
                    alphas_into(&z, t, &mut alpha)?;
                    let alpha0: f64 = alpha.iter().sum();
                    total += nll_from_mean_log(&alpha, alpha0, target);
                    nll_grad_from_mean_log(&alpha, alpha0, target, &mut g);
                    // dα_c/dz_c = α_c / T
                    g.iter_mut().zip(&alpha).for_each(|(gc, a)| *gc *= a / t);
                }
            }
            for c in 0..k {
                grad[[j, c]] = g[c] / b;
            }
        }
        Ok((total / b, grad))
    }
}

/// Mean distillation loss of `transfer` rows under the student logits, as
/// used for one minibatch, together with its gradient.
pub fn transfer_batch_loss(
    transfer: &TransferSet,
    cfg: &DistillConfig,
    temperature: f64,
    rows: &[usize],
    student_logits: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    check_gamma(cfg.gamma)?;
    let mut objective = TransferObjective::new(transfer, cfg.mode, cfg.gamma);
    objective.begin_epoch(temperature)?;
    objective.batch(rows, student_logits)
}

/// Trains a fresh student on the transfer set.
///
/// The student is always evaluated at `T = 1`; temperature only shapes
/// training.
pub fn train_distilled(transfer: &TransferSet, cfg: &DistillConfig) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if transfer.is_empty() {
        return Err(Error::Empty("transfer set"));
    }
    let mut model = fresh_model(&cfg.train, transfer.input_dim(), transfer.num_classes(), cfg.seed)?;
    let mut objective = TransferObjective::new(transfer, cfg.mode, cfg.gamma);
    let log = fit(&mut model, transfer.inputs.view(), &cfg.train, cfg.seed, &cfg.temperature_schedule(), &mut objective)?;
    let kind = match cfg.mode {
        DistillMode::End => ModelKind::End,
        DistillMode::End2 => ModelKind::End2,
    };
    let meta = CheckpointMeta { seed: cfg.seed, epochs: cfg.train.epochs, model_kind: kind };
    Ok((Checkpoint::new(model, meta), log))
}
