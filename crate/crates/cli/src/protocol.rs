//! The canonical desk-scale experiment: 4-class 2-D blobs, a 2-64-4
//! teacher and a 2-8-4 student. These are the CLI defaults and the setup
//! the acceptance suite runs.

use rectidistill_core::data::{make_blobs, Dataset};
use rectidistill_core::model::MlpParams;
use rectidistill_core::rng::derive_seed;
use rectidistill_core::train::{distill, TrainConfig};
use rectidistill_core::{DistillMode, Result};

pub const CLASSES: usize = 4;
pub const PER_CLASS: usize = 500;
pub const VAL_PER_CLASS: usize = 250;
pub const DIM: usize = 2;
pub const SPREAD: f64 = 1.2;
pub const DATA_SEED: u64 = 1;

pub const TEACHER_DIMS: [usize; 3] = [2, 64, 4];
pub const STUDENT_DIMS: [usize; 3] = [2, 8, 4];

pub fn teacher_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        epochs: 60,
        batch_size: 32,
        seed: 0,
        tau: 1.0,
        mode: DistillMode::Full,
    }
}

pub fn student_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        momentum: 0.0,
        epochs: 60,
        batch_size: 128,
        seed: 0,
        tau: 1.0,
        mode: DistillMode::Full,
    }
}

/// Seed of the validation split generated alongside a training split.
pub fn val_seed(seed: u64) -> u64 {
    derive_seed(seed, 1)
}

/// Train and validation blobs drawn from the same centers.
pub fn generate(
    classes: usize,
    per_class: usize,
    val_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let train = make_blobs(classes, per_class, dim, spread, seed)?;
    let val = make_blobs(classes, val_per_class, dim, spread, val_seed(seed))?;
    Ok((train, val))
}

/// Epoch whose validation accuracy measures early training speed:
/// `⌈0.1·E⌉`, clamped to the last epoch.
pub fn early_epoch(epochs: usize) -> usize {
    (epochs as f64 * 0.1).ceil().min((epochs - 1) as f64) as usize
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub mode: DistillMode,
    pub final_val_acc: f64,
    pub early_val_acc: f64,
}

/// Distill one student per `(seed, mode)`, seeds outermost.
pub fn run_ablation(
    teacher: &MlpParams,
    student_dims: &[usize],
    train: &Dataset,
    val: &Dataset,
    base: &TrainConfig,
    modes: &[DistillMode],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let early = early_epoch(base.epochs);
    let mut rows = Vec::with_capacity(seeds.len() * modes.len());
    for &seed in seeds {
        for &mode in modes {
            let cfg = TrainConfig { seed, mode, ..*base };
            let out = distill(teacher, student_dims, train, val, &cfg)?;
            rows.push(AblationRow {
                seed,
                mode,
                final_val_acc: out.final_metrics().val_acc,
                early_val_acc: out.metrics[early].val_acc,
            });
        }
    }
    Ok(rows)
}

/// Median final and early validation accuracy of one mode.
pub fn mode_medians(rows: &[AblationRow], mode: DistillMode) -> (f64, f64) {
    let pick = |f: fn(&AblationRow) -> f64| {
        median(&rows.iter().filter(|r| r.mode == mode).map(f).collect::<Vec<_>>())
    };
    (pick(|r| r.final_val_acc), pick(|r| r.early_val_acc))
}
