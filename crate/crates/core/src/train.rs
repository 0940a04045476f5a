//! Teacher training and teacher→student distillation loops.

use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::model::{evaluate, MlpGrads, MlpParams};
use crate::numerics::{ce_softmax_gradient, cross_entropy_from_logits, softmax, OneHotLabel, ProbVector};
use crate::partition::build_mask;
use crate::rng::derive_seed;
use crate::schedule::{compute_batch_loss, loss_and_gradient, DistillMode, EpochSchedule, LossBreakdown};

/// Sub-stream used for parameter initialization; batching uses the epoch index.
const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tau: f64,
    pub mode: DistillMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            tau: 1.0,
            mode: DistillMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "epochs and batch size must be positive".to_string(),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub gamma: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_easy: f64,
    pub loss_hard: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub teacher_right_fraction: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,gamma,loss_total,loss_ce,loss_easy,loss_hard,train_acc,val_acc,teacher_right_fraction";

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.gamma,
            self.loss_total,
            self.loss_ce,
            self.loss_easy,
            self.loss_hard,
            self.train_acc,
            self.val_acc,
            self.teacher_right_fraction
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn final_metrics(&self) -> &MetricsRow {
        self.metrics.last().expect("at least one epoch")
    }
}

fn check_shapes(dims: &[usize], ds: &Dataset, what: &str) -> Result<()> {
    if dims.first() != Some(&ds.dim()) {
        return Err(Error::InvalidArchitecture(format!(
            "{what} input width {:?} does not match feature dimension {}",
            dims.first(),
            ds.dim()
        )));
    }
    if dims.last() != Some(&ds.n_classes) {
        return Err(Error::InvalidArchitecture(format!(
            "{what} output width {:?} does not match {} classes",
            dims.last(),
            ds.n_classes
        )));
    }
    Ok(())
}

/// Running batch-size-weighted average of loss components.
#[derive(Default)]
struct EpochLoss {
    samples: usize,
    total: f64,
    ce: f64,
    easy: f64,
    hard: f64,
}

impl EpochLoss {
    fn add(&mut self, l: &LossBreakdown, n: usize) {
        let w = n as f64;
        self.samples += n;
        self.total += w * l.l_all;
        self.ce += w * l.l_ce;
        self.easy += w * l.l_easy;
        self.hard += w * l.l_hard;
    }

    fn mean(&self, sum: f64) -> f64 {
        sum / self.samples.max(1) as f64
    }
}

/// Train a model from scratch with plain cross-entropy at τ = 1.
pub fn train_teacher(
    dims: &[usize],
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_shapes(dims, train, "teacher")?;
    check_shapes(dims, val, "teacher")?;
    let mut params = MlpParams::init(dims, derive_seed(cfg.seed, INIT_STREAM))?;
    let mut velocity = MlpGrads::zeros_like(&params);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss = EpochLoss::default();
        for batch in batch_iter(train, cfg.batch_size, cfg.seed, epoch as u64) {
            let n = batch.len() as f64;
            let mut grads = MlpGrads::zeros_like(&params);
            let mut ce = 0.0;
            for &i in &batch {
                let x = &train.features[i];
                let y = OneHotLabel(train.labels[i]);
                let z = params.forward(x)?;
                ce += cross_entropy_from_logits(y, &z, 1.0)?;
                let g: Vec<f64> = ce_softmax_gradient(&z, y, 1.0)?
                    .into_vec()
                    .into_iter()
                    .map(|v| v / n)
                    .collect();
                grads.add_assign(&params.backward(x, &g)?);
            }
            params
                .sgd_step(&grads, &mut velocity, cfg.learning_rate, cfg.momentum)
                .map_err(|e| diverged(e, epoch))?;
            let ce = ce / n;
            loss.add(
                &LossBreakdown {
                    l_ce: ce,
                    l_easy: 0.0,
                    l_hard: 0.0,
                    gamma: 0.0,
                    l_all: ce,
                    n_right: 0,
                    n_bias: 0,
                },
                batch.len(),
            );
        }
        let train_acc = evaluate(&params, train)?.accuracy;
        metrics.push(MetricsRow {
            epoch,
            gamma: 0.0,
            loss_total: loss.mean(loss.total),
            loss_ce: loss.mean(loss.ce),
            loss_easy: 0.0,
            loss_hard: 0.0,
            train_acc,
            val_acc: evaluate(&params, val)?.accuracy,
            // A plain-CE model is its own teacher.
            teacher_right_fraction: train_acc,
        });
    }
    Ok(TrainOutcome { params, metrics })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::TrainingDiverged(msg) => Error::TrainingDiverged(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Teacher soft targets `softmax(teacher(x) / τ)` for every row.
pub fn teacher_targets(teacher: &MlpParams, ds: &Dataset, tau: f64) -> Result<Vec<ProbVector>> {
    ds.features
        .iter()
        .map(|x| softmax(&teacher.forward(x)?, tau))
        .collect()
}

/// A batch prepared for the distillation objective.
pub struct DistillBatch<'a> {
    pub features: Vec<&'a [f64]>,
    pub teacher_probs: Vec<ProbVector>,
    pub labels: Vec<OneHotLabel>,
}

/// Distillation loss of a student on one batch.
pub fn distill_batch_loss(
    student: &MlpParams,
    batch: &DistillBatch<'_>,
    sched: &EpochSchedule,
    tau: f64,
    mode: DistillMode,
) -> Result<LossBreakdown> {
    let logits = batch
        .features
        .iter()
        .map(|x| student.forward(x))
        .collect::<Result<Vec<_>>>()?;
    compute_batch_loss(&logits, &batch.teacher_probs, &batch.labels, sched, tau, mode)
}

/// Distillation loss and its gradient with respect to every student parameter.
pub fn distill_batch_gradient(
    student: &MlpParams,
    batch: &DistillBatch<'_>,
    sched: &EpochSchedule,
    tau: f64,
    mode: DistillMode,
) -> Result<(LossBreakdown, MlpGrads)> {
    let logits = batch
        .features
        .iter()
        .map(|x| student.forward(x))
        .collect::<Result<Vec<_>>>()?;
    let (loss, upstream) =
        loss_and_gradient(&logits, &batch.teacher_probs, &batch.labels, sched, tau, mode)?;
    let mut grads = MlpGrads::zeros_like(student);
    for (x, g) in batch.features.iter().zip(&upstream) {
        grads.add_assign(&student.backward(x, g.as_slice())?);
    }
    Ok((loss, grads))
}

/// Distill a frozen teacher into a freshly initialized student.
pub fn distill(
    teacher: &MlpParams,
    student_dims: &[usize],
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_shapes(student_dims, train, "student")?;
    check_shapes(student_dims, val, "student")?;
    check_shapes(&teacher.dims(), train, "teacher")?;

    let targets = teacher_targets(teacher, train, cfg.tau)?;
    let labels: Vec<OneHotLabel> = train.labels.iter().map(|&y| OneHotLabel(y)).collect();
    let teacher_right_fraction = build_mask(&targets, &labels)?.right_fraction();

    let mut student = MlpParams::init(student_dims, derive_seed(cfg.seed, INIT_STREAM))?;
    let mut velocity = MlpGrads::zeros_like(&student);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let sched = EpochSchedule::new(epoch, cfg.epochs)?;
        let mut loss = EpochLoss::default();
        for indices in batch_iter(train, cfg.batch_size, cfg.seed, epoch as u64) {
            let batch = DistillBatch {
                features: indices.iter().map(|&i| train.features[i].as_slice()).collect(),
                teacher_probs: indices.iter().map(|&i| targets[i].clone()).collect(),
                labels: indices.iter().map(|&i| labels[i]).collect(),
            };
            let (l, grads) = distill_batch_gradient(&student, &batch, &sched, cfg.tau, cfg.mode)?;
            student
                .sgd_step(&grads, &mut velocity, cfg.learning_rate, cfg.momentum)
                .map_err(|e| diverged(e, epoch))?;
            loss.add(&l, indices.len());
        }
        metrics.push(MetricsRow {
            epoch,
            gamma: cfg.mode.gamma(&sched),
            loss_total: loss.mean(loss.total),
            loss_ce: loss.mean(loss.ce),
            loss_easy: loss.mean(loss.easy),
            loss_hard: loss.mean(loss.hard),
            train_acc: evaluate(&student, train)?.accuracy,
            val_acc: evaluate(&student, val)?.accuracy,
            teacher_right_fraction,
        });
    }
    Ok(TrainOutcome {
        params: student,
        metrics,
    })
}
