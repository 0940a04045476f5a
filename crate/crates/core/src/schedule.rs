//! Easy/hard loss assembly with the epoch-driven weight `γ = e / E`.
//!
//! ```text
//! L_all = (1 − γ) · (L_CE + L_easy) + γ · L_hard
//! ```
//!
//! `L_easy` sums the KL terms of the right-knowledge subset and `L_hard`
//! those of the bias subset (against rectified targets). All three terms
//! are divided by the full batch size, as if the per-sample losses were
//! masked and averaged over the batch, so an empty subset contributes
//! exactly 0 and a handful of biased samples cannot outweigh the rest of
//! the batch. All KL terms are forward, `Σ t ln(t / s)`, with the (possibly
//! rectified) teacher as target.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{
    kl_against_log_probs, log_softmax, softmax, target_kl_gradient, GradientVector, LogitVector,
    OneHotLabel, ProbVector,
};
use crate::partition::{build_mask, split_batch};
use crate::rectify::{rectify, Stage};

/// Position `e` within a run of `E` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochSchedule {
    epoch: usize,
    total: usize,
}

impl EpochSchedule {
    pub fn new(epoch: usize, total: usize) -> Result<Self> {
        if total == 0 || epoch >= total {
            return Err(Error::InvalidSchedule { epoch, total });
        }
        Ok(Self { epoch, total })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn gamma(&self) -> f64 {
        self.epoch as f64 / self.total as f64
    }
}

/// `γ = e / E`, in `[0, 1 − 1/E]`.
pub fn gamma(sched: &EpochSchedule) -> f64 {
    sched.gamma()
}

/// Which parts of the distillation objective are active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistillMode {
    /// Mask, rectify bias with step c, weight by `γ = e/E`.
    Full,
    /// Drop biased samples from the KL term; `γ ≡ 0`, `L_hard ≡ 0`.
    EliminateOnly,
    /// Keep every sample in one KL term, biased ones against step-c targets; `γ ≡ 0`.
    RectifyOnly,
    /// Plain `CE + KL` over the whole batch; `γ ≡ 0`.
    VanillaKd,
    /// As [`DistillMode::Full`] but hard targets stop at step b (unnormalized).
    StepBAblation,
    /// As [`DistillMode::Full`] with a constant `γ`.
    FixedGamma(f64),
}

impl DistillMode {
    /// Effective `γ` for this mode at the given epoch.
    pub fn gamma(&self, sched: &EpochSchedule) -> f64 {
        match self {
            DistillMode::Full | DistillMode::StepBAblation => sched.gamma(),
            DistillMode::FixedGamma(g) => *g,
            DistillMode::EliminateOnly | DistillMode::RectifyOnly | DistillMode::VanillaKd => 0.0,
        }
    }

    pub fn all_variants() -> [DistillMode; 6] {
        [
            DistillMode::Full,
            DistillMode::EliminateOnly,
            DistillMode::RectifyOnly,
            DistillMode::VanillaKd,
            DistillMode::StepBAblation,
            DistillMode::FixedGamma(0.5),
        ]
    }

    fn validate(&self) -> Result<()> {
        if let DistillMode::FixedGamma(g) = self {
            if !(0.0..1.0).contains(g) {
                return Err(Error::InvalidParameter(format!(
                    "fixed gamma must lie in [0, 1), got {g}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for DistillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistillMode::Full => f.write_str("full"),
            DistillMode::EliminateOnly => f.write_str("eliminate"),
            DistillMode::RectifyOnly => f.write_str("rectify"),
            DistillMode::VanillaKd => f.write_str("vanilla"),
            DistillMode::StepBAblation => f.write_str("step-b"),
            DistillMode::FixedGamma(g) => write!(f, "fixed-gamma={g}"),
        }
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = match s {
            "full" => DistillMode::Full,
            "eliminate" => DistillMode::EliminateOnly,
            "rectify" => DistillMode::RectifyOnly,
            "vanilla" => DistillMode::VanillaKd,
            "step-b" => DistillMode::StepBAblation,
            other => match other.strip_prefix("fixed-gamma=") {
                Some(g) => DistillMode::FixedGamma(g.parse().map_err(|_| {
                    Error::InvalidParameter(format!("bad fixed gamma '{g}'"))
                })?),
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown mode '{other}' (expected full, eliminate, rectify, vanilla, step-b or fixed-gamma=G)"
                    )))
                }
            },
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Per-batch loss components.
///
/// In the unsplit modes (`VanillaKd`, `RectifyOnly`) the single KL term over
/// the whole batch is reported in `l_easy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_easy: f64,
    pub l_hard: f64,
    pub gamma: f64,
    pub l_all: f64,
    pub n_right: usize,
    pub n_bias: usize,
}

/// One sample's contribution: its CE weight, and an optional KL target
/// with its weight in `L_all`.
struct SampleTerm {
    log_s: Vec<f64>,
    label: OneHotLabel,
    ce_weight: f64,
    kl: Option<(Vec<f64>, f64)>,
}

struct Assembly {
    breakdown: LossBreakdown,
    terms: Vec<SampleTerm>,
}

fn check_batch(
    student_logits: &[LogitVector],
    teacher_probs: &[ProbVector],
    labels: &[OneHotLabel],
    tau: f64,
) -> Result<()> {
    let n = student_logits.len();
    if teacher_probs.len() != n || labels.len() != n {
        return Err(Error::InvalidBatch(format!(
            "batch sizes disagree: {n} logits, {} teacher predictions, {} labels",
            teacher_probs.len(),
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidBatch("empty batch".to_string()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    for (i, ((z, t), y)) in student_logits.iter().zip(teacher_probs).zip(labels).enumerate() {
        if z.len() != t.len() {
            return Err(Error::InvalidInput(format!(
                "student has {} classes, teacher {}",
                z.len(),
                t.len()
            ))
            .at_sample(i));
        }
        if y.class_index() >= z.len() {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {} classes",
                y.class_index(),
                z.len()
            ))
            .at_sample(i));
        }
    }
    Ok(())
}

fn assemble(
    student_logits: &[LogitVector],
    teacher_probs: &[ProbVector],
    labels: &[OneHotLabel],
    sched: &EpochSchedule,
    tau: f64,
    mode: DistillMode,
) -> Result<Assembly> {
    mode.validate()?;
    check_batch(student_logits, teacher_probs, labels, tau)?;
    let n = student_logits.len();
    let gamma = mode.gamma(sched);
    let split = split_batch(&build_mask(teacher_probs, labels)?);
    let (n_right, n_bias) = (split.right_indices.len(), split.bias_indices.len());

    let mut terms = Vec::with_capacity(n);
    for (i, (z, &y)) in student_logits.iter().zip(labels).enumerate() {
        terms.push(SampleTerm {
            log_s: log_softmax(z, tau).map_err(|e| e.at_sample(i))?,
            label: y,
            ce_weight: (1.0 - gamma) / n as f64,
            kl: None,
        });
    }

    let hard_target = |i: usize, stage: Stage| -> Result<Vec<f64>> {
        rectify(&teacher_probs[i], labels[i], stage)
            .map(|r| r.values)
            .map_err(|e| e.at_sample(i))
    };

    match mode {
        DistillMode::Full | DistillMode::StepBAblation | DistillMode::FixedGamma(_) => {
            let stage = if mode == DistillMode::StepBAblation {
                Stage::StepB
            } else {
                Stage::StepC
            };
            for &i in &split.right_indices {
                let w = (1.0 - gamma) / n as f64;
                terms[i].kl = Some((teacher_probs[i].as_slice().to_vec(), w));
            }
            for &i in &split.bias_indices {
                let w = gamma / n as f64;
                terms[i].kl = Some((hard_target(i, stage)?, w));
            }
        }
        DistillMode::EliminateOnly => {
            for &i in &split.right_indices {
                terms[i].kl = Some((teacher_probs[i].as_slice().to_vec(), 1.0 / n as f64));
            }
        }
        DistillMode::VanillaKd => {
            for (i, term) in terms.iter_mut().enumerate() {
                term.kl = Some((teacher_probs[i].as_slice().to_vec(), 1.0 / n as f64));
            }
        }
        DistillMode::RectifyOnly => {
            for &i in &split.right_indices {
                terms[i].kl = Some((teacher_probs[i].as_slice().to_vec(), 1.0 / n as f64));
            }
            for &i in &split.bias_indices {
                terms[i].kl = Some((hard_target(i, Stage::StepC)?, 1.0 / n as f64));
            }
        }
    }

    // Fixed-order sequential sums keep the result bit-reproducible.
    let mut ce_sum = 0.0;
    let mut easy_sum = 0.0;
    let mut hard_sum = 0.0;
    let unsplit = matches!(mode, DistillMode::VanillaKd | DistillMode::RectifyOnly);
    let mut is_right = vec![false; n];
    for &i in &split.right_indices {
        is_right[i] = true;
    }
    for (i, term) in terms.iter().enumerate() {
        ce_sum += -term.log_s[term.label.class_index()];
        if let Some((target, _)) = &term.kl {
            let kl = kl_against_log_probs(target, &term.log_s);
            if unsplit || is_right[i] {
                easy_sum += kl;
            } else {
                hard_sum += kl;
            }
        }
    }
    let l_ce = ce_sum / n as f64;
    let l_easy = easy_sum / n as f64;
    let l_hard = hard_sum / n as f64;
    let l_all = (1.0 - gamma) * (l_ce + l_easy) + gamma * l_hard;

    Ok(Assembly {
        breakdown: LossBreakdown {
            l_ce,
            l_easy,
            l_hard,
            gamma,
            l_all,
            n_right,
            n_bias,
        },
        terms,
    })
}

/// Evaluate the distillation objective on one batch. `teacher_probs` must
/// already be computed at temperature `tau`; the student is softened with
/// the same `tau`.
pub fn compute_batch_loss(
    student_logits: &[LogitVector],
    teacher_probs: &[ProbVector],
    labels: &[OneHotLabel],
    sched: &EpochSchedule,
    tau: f64,
    mode: DistillMode,
) -> Result<LossBreakdown> {
    assemble(student_logits, teacher_probs, labels, sched, tau, mode).map(|a| a.breakdown)
}

/// Gradient of `L_all` with respect to each sample's student logits.
pub fn batch_loss_gradient(
    student_logits: &[LogitVector],
    teacher_probs: &[ProbVector],
    labels: &[OneHotLabel],
    sched: &EpochSchedule,
    tau: f64,
    mode: DistillMode,
) -> Result<Vec<GradientVector>> {
    loss_and_gradient(student_logits, teacher_probs, labels, sched, tau, mode).map(|(_, g)| g)
}

/// [`compute_batch_loss`] and [`batch_loss_gradient`] in one pass.
pub fn loss_and_gradient(
    student_logits: &[LogitVector],
    teacher_probs: &[ProbVector],
    labels: &[OneHotLabel],
    sched: &EpochSchedule,
    tau: f64,
    mode: DistillMode,
) -> Result<(LossBreakdown, Vec<GradientVector>)> {
    let assembly = assemble(student_logits, teacher_probs, labels, sched, tau, mode)?;
    let mut grads = Vec::with_capacity(assembly.terms.len());
    for (i, (term, z)) in assembly.terms.iter().zip(student_logits).enumerate() {
        let s = softmax(z, tau).map_err(|e| e.at_sample(i))?;
        let mut g: Vec<f64> = s
            .as_slice()
            .iter()
            .map(|si| term.ce_weight * si / tau)
            .collect();
        g[term.label.class_index()] -= term.ce_weight / tau;
        if let Some((target, w)) = &term.kl {
            let kl_grad = target_kl_gradient(target, z, tau).map_err(|e| e.at_sample(i))?;
            for (gi, ki) in g.iter_mut().zip(kl_grad.as_slice()) {
                *gi += w * ki;
            }
        }
        grads.push(GradientVector(g));
    }
    Ok((assembly.breakdown, grads))
}
