//! Two-class analysis of what a wrong teacher does to the student.
//!
//! With one true class `a` (label 1) and one other class `b`, the student
//! probability `s = s_a` minimizes
//!
//! ```text
//! f(s) = w_kl · [t_a ln(t_a/s) + t_b ln(t_b/(1−s))] + w_ce · (−ln s)
//! ```
//!
//! whose stationary point is `s* = (w_kl·t_a + w_ce) / (w_kl + w_ce)`.
//! A correct teacher (`t_a > 0.5`) places `s*` strictly between `t_a` and 1;
//! a wrong one drags it down toward `t_a`. Rectifying the teacher pair first
//! raises the KL target and therefore `s*`.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{OneHotLabel, ProbVector};
use crate::rectify::{rectify, Stage};

/// Agreement required between descent and the analytic optimum.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-4;

const GOLDEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoClassSetup {
    /// Teacher probability of the true class; `t_b = 1 − t_a`.
    pub t_a: f64,
    pub w_kl: f64,
    pub w_ce: f64,
    pub learning_rate: f64,
    pub steps: usize,
}

impl TwoClassSetup {
    /// Equal KL/CE weights with descent settings that converge across `(0, 1)`.
    pub fn equal_weights(t_a: f64) -> Self {
        Self {
            t_a,
            w_kl: 1.0,
            w_ce: 1.0,
            learning_rate: 1.0,
            steps: 2000,
        }
    }

    pub fn t_b(&self) -> f64 {
        1.0 - self.t_a
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_a > 0.0 && self.t_a < 1.0) {
            return Err(Error::InvalidSetup(format!(
                "t_a must lie in (0, 1), got {}",
                self.t_a
            )));
        }
        let weight_ok = |w: f64| w.is_finite() && w >= 0.0;
        if !weight_ok(self.w_kl) || !weight_ok(self.w_ce) || self.w_kl + self.w_ce == 0.0 {
            return Err(Error::InvalidSetup(format!(
                "weights must be non-negative and not both zero, got ({}, {})",
                self.w_kl, self.w_ce
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.steps == 0 {
            return Err(Error::InvalidSetup(
                "descent needs a positive learning rate and at least one step".to_string(),
            ));
        }
        Ok(())
    }

    /// Whether the teacher's argmax (ties to class `a`) is the true class.
    pub fn teacher_correct(&self) -> bool {
        self.t_a >= self.t_b()
    }
}

/// `f(s)` for a KL target pair `(target_a, 1 − target_a)`.
pub fn two_class_objective(s: f64, target_a: f64, w_kl: f64, w_ce: f64) -> f64 {
    let target_b = 1.0 - target_a;
    let kl_term = |t: f64, p: f64| if t == 0.0 { 0.0 } else { t * (t / p).ln() };
    w_kl * (kl_term(target_a, s) + kl_term(target_b, 1.0 - s)) - w_ce * s.ln()
}

/// `s* = (w_kl·target_a + w_ce) / (w_kl + w_ce)`.
pub fn closed_form_optimum(target_a: f64, w_kl: f64, w_ce: f64) -> f64 {
    (w_kl * target_a + w_ce) / (w_kl + w_ce)
}

/// Golden-section minimization of [`two_class_objective`] on `(0, 1)`.
///
/// Points are compared through `f(x1) − f(x2)` written with `ln_1p`, which
/// keeps the comparison exact enough to shrink the bracket to 1e-10.
/// CE-only objectives (`w_kl = 0`) have no interior minimum and return the
/// supremum 1.
pub fn golden_section_optimum(target_a: f64, w_kl: f64, w_ce: f64) -> f64 {
    if w_kl == 0.0 {
        return 1.0;
    }
    let pull_a = w_kl * target_a + w_ce;
    let pull_b = w_kl * (1.0 - target_a);
    // f(x1) − f(x2) up to the constant terms, which cancel.
    let diff = |x1: f64, x2: f64| {
        -pull_a * ((x1 - x2) / x2).ln_1p() - pull_b * ((x2 - x1) / (1.0 - x2)).ln_1p()
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    while hi - lo > GOLDEN_TOLERANCE {
        if diff(x1, x2) < 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - inv_phi * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + inv_phi * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

/// Exhaustive grid minimization at the given resolution. A coarse pass at
/// 1000× the resolution brackets the minimum and a fine pass resolves it;
/// the objective is convex in `s`, so the bracket always contains it.
pub fn grid_search_optimum(target_a: f64, w_kl: f64, w_ce: f64, resolution: f64) -> f64 {
    let scan = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as usize;
        let mut best = (f64::INFINITY, lo);
        for k in 0..=n {
            let s = lo + k as f64 * step;
            if s <= 0.0 || s >= 1.0 {
                continue;
            }
            let f = two_class_objective(s, target_a, w_kl, w_ce);
            if f < best.0 {
                best = (f, s);
            }
        }
        best.1
    };
    let coarse = resolution * 1000.0;
    let center = scan(0.0, 1.0, coarse);
    scan((center - coarse).max(0.0), (center + coarse).min(1.0), resolution)
}

/// Minimizer of the combined two-class objective for this setup.
pub fn two_class_optimum(setup: &TwoClassSetup) -> Result<f64> {
    setup.validate()?;
    Ok(golden_section_optimum(setup.t_a, setup.w_kl, setup.w_ce))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingVerdict {
    /// Correct teacher, `t_a < s < 1`.
    Between,
    /// Wrong teacher, `s` held below the CE-only optimum of 1.
    PulledBelowCe,
    /// The expected ordering does not hold.
    Violated,
}

impl fmt::Display for OrderingVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderingVerdict::Between => "between",
            OrderingVerdict::PulledBelowCe => "pulled_below_ce",
            OrderingVerdict::Violated => "violated",
        })
    }
}

fn verdict(t_a: f64, teacher_correct: bool, s: f64) -> OrderingVerdict {
    match (teacher_correct, t_a < s && s < 1.0, s < 1.0) {
        (true, true, _) => OrderingVerdict::Between,
        (false, _, true) => OrderingVerdict::PulledBelowCe,
        _ => OrderingVerdict::Violated,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsReport {
    /// KL target for the true class (the teacher's, or the rectified one).
    pub target_a: f64,
    /// `s_a` after each descent step.
    pub s_trajectory: Vec<f64>,
    pub s_converged: f64,
    /// Analytic minimizer the descent is checked against.
    pub s_optimum: f64,
    pub s_ce_only: f64,
    pub s_kl_only: f64,
    /// Whether the final `s_a` is within [`CONVERGENCE_TOLERANCE`] of `s_optimum`.
    pub converged: bool,
    pub ordering_verdict: OrderingVerdict,
}

fn descend(setup: &TwoClassSetup, target_a: f64) -> DynamicsReport {
    let target = [target_a, 1.0 - target_a];
    let mut z = [0.0f64, 0.0];
    let mut trajectory = Vec::with_capacity(setup.steps);
    for _ in 0..setup.steps {
        let m = z[0].max(z[1]);
        let (ea, eb) = ((z[0] - m).exp(), (z[1] - m).exp());
        let s = [ea / (ea + eb), eb / (ea + eb)];
        // ∂/∂z of w_kl·KL(target ‖ s) + w_ce·CE(a, s).
        let y = [1.0, 0.0];
        for k in 0..2 {
            z[k] -= setup.learning_rate
                * (setup.w_kl * (s[k] - target[k]) + setup.w_ce * (s[k] - y[k]));
        }
        let m = z[0].max(z[1]);
        let (ea, eb) = ((z[0] - m).exp(), (z[1] - m).exp());
        trajectory.push(ea / (ea + eb));
    }
    let s_converged = *trajectory.last().unwrap_or(&0.5);
    let s_optimum = golden_section_optimum(target_a, setup.w_kl, setup.w_ce);
    DynamicsReport {
        target_a,
        s_trajectory: trajectory,
        s_converged,
        s_optimum,
        s_ce_only: 1.0,
        s_kl_only: target_a,
        converged: (s_converged - s_optimum).abs() <= CONVERGENCE_TOLERANCE,
        ordering_verdict: verdict(setup.t_a, setup.teacher_correct(), s_converged),
    }
}

/// Gradient descent on the logit pair from `z = (0, 0)` against the
/// unmodified teacher. Non-convergence is flagged in the report.
pub fn run_dynamics(setup: &TwoClassSetup) -> Result<DynamicsReport> {
    setup.validate()?;
    Ok(descend(setup, setup.t_a))
}

/// True-class probability of the rectified teacher pair `[t_a, 1 − t_a]`.
pub fn rectified_target(t_a: f64) -> Result<f64> {
    let t = ProbVector::new(vec![t_a, 1.0 - t_a])?;
    Ok(rectify(&t, OneHotLabel(0), Stage::StepC)?.values[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsPair {
    pub unrectified: DynamicsReport,
    /// Run against the rectified target when requested, otherwise a rerun
    /// against the raw teacher.
    pub candidate: DynamicsReport,
}

/// Descent with and without rectifying a wrong teacher.
pub fn rectified_dynamics(setup: &TwoClassSetup, rectify: bool) -> Result<DynamicsPair> {
    setup.validate()?;
    if setup.teacher_correct() {
        return Err(Error::RectifyNotApplicable { argmax: 0 });
    }
    let unrectified = descend(setup, setup.t_a);
    let candidate = if rectify {
        descend(setup, rectified_target(setup.t_a)?)
    } else {
        unrectified.clone()
    };
    Ok(DynamicsPair {
        unrectified,
        candidate,
    })
}

/// One row of the `t_a` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub t_a: f64,
    pub s_unrect: f64,
    /// Only defined for wrong teachers.
    pub s_rect: Option<f64>,
    pub s_ce_only: f64,
    pub verdict: OrderingVerdict,
    /// Descent endpoint, unrectified objective.
    pub s_descent: f64,
}

/// `t_a ∈ {0.05, 0.10, …, 0.95}`.
pub fn default_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

pub fn sweep(grid: &[f64], template: &TwoClassSetup) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&t_a| {
            let setup = TwoClassSetup { t_a, ..*template };
            let report = run_dynamics(&setup)?;
            let s_rect = if setup.teacher_correct() {
                None
            } else {
                Some(golden_section_optimum(
                    rectified_target(t_a)?,
                    setup.w_kl,
                    setup.w_ce,
                ))
            };
            Ok(SweepRow {
                t_a,
                s_unrect: report.s_optimum,
                s_rect,
                s_ce_only: 1.0,
                verdict: verdict(t_a, setup.teacher_correct(), report.s_optimum),
                s_descent: report.s_converged,
            })
        })
        .collect()
}

/// Outcome of one sweep-level property.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCheck {
    pub name: &'static str,
    pub failing_t_a: Vec<f64>,
}

impl SweepCheck {
    pub fn passed(&self) -> bool {
        self.failing_t_a.is_empty()
    }
}

/// Check a sweep against the grid-search route and the ordering properties.
/// `grid_resolution` sets the grid oracle's step (1e-6 for the full check).
pub fn verify_sweep(
    rows: &[SweepRow],
    template: &TwoClassSetup,
    grid_resolution: f64,
) -> Vec<SweepCheck> {
    let (w_kl, w_ce) = (template.w_kl, template.w_ce);
    let mut grid = Vec::new();
    let mut descent = Vec::new();
    let mut between = Vec::new();
    let mut pulled = Vec::new();
    let mut dominance = Vec::new();
    for r in rows {
        let oracle = grid_search_optimum(r.t_a, w_kl, w_ce, grid_resolution);
        let mut grid_ok = (r.s_unrect - oracle).abs() <= CONVERGENCE_TOLERANCE;
        if let Some(s_rect) = r.s_rect {
            let target = rectified_target(r.t_a).unwrap_or(f64::NAN);
            let oracle = grid_search_optimum(target, w_kl, w_ce, grid_resolution);
            grid_ok &= (s_rect - oracle).abs() <= CONVERGENCE_TOLERANCE;
        }
        if !grid_ok {
            grid.push(r.t_a);
        }
        if (r.s_descent - r.s_unrect).abs() > CONVERGENCE_TOLERANCE {
            descent.push(r.t_a);
        }
        if r.t_a > 0.5 && !(r.t_a < r.s_unrect && r.s_unrect < 1.0) {
            between.push(r.t_a);
        }
        if r.t_a < 0.5 {
            if r.s_unrect >= r.s_ce_only || r.s_unrect.is_nan() {
                pulled.push(r.t_a);
            }
            match r.s_rect {
                Some(s_rect) if s_rect > r.s_unrect => {}
                _ => dominance.push(r.t_a),
            }
        }
    }
    // s* must fall as t_a falls below 0.5.
    let mut wrong: Vec<&SweepRow> = rows.iter().filter(|r| r.t_a < 0.5).collect();
    wrong.sort_by(|a, b| a.t_a.total_cmp(&b.t_a));
    for w in wrong.windows(2) {
        if w[0].s_unrect >= w[1].s_unrect || w[0].s_unrect.is_nan() || w[1].s_unrect.is_nan() {
            pulled.push(w[0].t_a);
        }
    }
    vec![
        SweepCheck { name: "grid_oracle_agreement", failing_t_a: grid },
        SweepCheck { name: "descent_agreement", failing_t_a: descent },
        SweepCheck { name: "correct_teacher_between", failing_t_a: between },
        SweepCheck { name: "wrong_teacher_pull", failing_t_a: pulled },
        SweepCheck { name: "rectification_dominance", failing_t_a: dominance },
    ]
}

/// `t_a,s_unrect,s_rect,s_ce_only,verdict`; `s_rect` is empty for correct teachers.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("t_a,s_unrect,s_rect,s_ce_only,verdict\n");
    for r in rows {
        let s_rect = r.s_rect.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t_a, r.s_unrect, s_rect, r.s_ce_only, r.verdict
        ));
    }
    out
}
