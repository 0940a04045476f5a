//! Two-step rectification of a biased teacher distribution.
//!
//! With `a` the true class and `b` the teacher's argmax (`a ≠ b`):
//!
//! * step b averages each of the pair with its label:
//!   `t'_a = (t_a + 1) / 2`, `t'_b = t_b / 2`, all other entries unchanged.
//!   The result carries `(1 − t_a − t_b) / 2` of excess mass.
//! * step c rescales the pair by `(t_a + t_b) / (t'_a + t'_b)`, restoring
//!   unit mass without touching the other entries.

use crate::error::{Error, Result};
use crate::numerics::{argmax, OneHotLabel, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Averaged with the label, not renormalized.
    StepB,
    /// Pair rescaled back onto the simplex.
    StepC,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedTarget {
    pub values: Vec<f64>,
    pub stage: Stage,
    /// True class.
    pub a: usize,
    /// Teacher argmax.
    pub b: usize,
}

impl RectifiedTarget {
    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn rectify_step_b(t: &ProbVector, a: usize, b: usize) -> Result<RectifiedTarget> {
    let n = t.len();
    if a >= n || b >= n {
        return Err(Error::InvalidInput(format!(
            "class indices ({a}, {b}) out of range for {n} classes"
        )));
    }
    let argmax = t.argmax();
    if a == argmax {
        return Err(Error::RectifyNotApplicable { argmax });
    }
    if b != argmax {
        return Err(Error::InvalidPartner { given: b, argmax });
    }
    let mut values = t.as_slice().to_vec();
    values[a] = (values[a] + 1.0) / 2.0;
    values[b] /= 2.0;
    Ok(RectifiedTarget {
        values,
        stage: Stage::StepB,
        a,
        b,
    })
}

/// Renormalize a step-b result. `t_a` and `t_b` are the original teacher
/// probabilities of the pair, before step b.
pub fn rectify_step_c(step_b: &RectifiedTarget, t_a: f64, t_b: f64) -> Result<RectifiedTarget> {
    if step_b.stage != Stage::StepB {
        return Err(Error::InvalidInput(
            "step c expects a step-b target".to_string(),
        ));
    }
    let pair = t_a + t_b;
    if pair <= 0.0 {
        return Err(Error::DegeneratePair);
    }
    let (a, b) = (step_b.a, step_b.b);
    let scale = pair / (step_b.values[a] + step_b.values[b]);
    let mut values = step_b.values.clone();
    values[a] *= scale;
    values[b] *= scale;
    Ok(RectifiedTarget {
        values,
        stage: Stage::StepC,
        a,
        b,
    })
}

/// Rectify one biased sample against its label, partner `b` taken as the
/// teacher argmax.
pub fn rectify(t: &ProbVector, label: OneHotLabel, stage: Stage) -> Result<RectifiedTarget> {
    let a = label.class_index();
    let b = argmax(t.as_slice());
    let step_b = rectify_step_b(t, a, b)?;
    match stage {
        Stage::StepB => Ok(step_b),
        Stage::StepC => rectify_step_c(&step_b, t.as_slice()[a], t.as_slice()[b]),
    }
}

/// Rectify every sample of a bias subset. Fails on the first sample the
/// teacher actually gets right, reporting its position in the subset.
pub fn rectify_batch(
    teacher_probs: &[ProbVector],
    labels: &[OneHotLabel],
    stage: Stage,
) -> Result<Vec<RectifiedTarget>> {
    if teacher_probs.len() != labels.len() {
        return Err(Error::InvalidBatch(format!(
            "{} teacher predictions for {} labels",
            teacher_probs.len(),
            labels.len()
        )));
    }
    teacher_probs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (t, &y))| {
            rectify(t, y, stage).map_err(|e| match e {
                Error::RectifyNotApplicable { .. } => Error::InvalidSubset { index: i },
                other => other.at_sample(i),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn step_b_three_class() {
        let r = rectify_step_b(&p(&[0.1, 0.7, 0.2]), 0, 1).unwrap();
        assert!(close(&r.values, &[0.55, 0.35, 0.2], 1e-15));
        assert!((r.mass() - 1.1).abs() < 1e-15);
        assert_eq!(r.stage, Stage::StepB);
    }

    #[test]
    fn step_b_extreme_bias_already_normalized() {
        let r = rectify_step_b(&p(&[0.0, 1.0]), 0, 1).unwrap();
        assert_eq!(r.values, vec![0.5, 0.5]);
    }

    #[test]
    fn step_b_four_class() {
        let r = rectify_step_b(&p(&[0.0, 0.5, 0.45, 0.05]), 0, 1).unwrap();
        assert!(close(&r.values, &[0.5, 0.25, 0.45, 0.05], 0.0));
    }

    #[test]
    fn step_b_errors() {
        let t = p(&[0.1, 0.7, 0.2]);
        assert!(matches!(
            rectify_step_b(&t, 1, 0),
            Err(Error::RectifyNotApplicable { argmax: 1 })
        ));
        assert!(matches!(
            rectify_step_b(&t, 0, 2),
            Err(Error::InvalidPartner { given: 2, argmax: 1 })
        ));
    }

    #[test]
    fn step_c_three_class() {
        let t = p(&[0.1, 0.7, 0.2]);
        let b = rectify_step_b(&t, 0, 1).unwrap();
        let c = rectify_step_c(&b, 0.1, 0.7).unwrap();
        let scale = 0.8 / 0.9;
        assert!(close(&c.values, &[0.55 * scale, 0.35 * scale, 0.2], 1e-15));
        assert!(close(&c.values, &[0.48889, 0.31111, 0.2], 1e-5));
        assert!((c.mass() - 1.0).abs() < 1e-12);
        assert_eq!(c.values[2].to_bits(), 0.2f64.to_bits());
    }

    #[test]
    fn step_c_fixed_point_when_pair_holds_all_mass() {
        let t = p(&[0.0, 1.0]);
        let c = rectify(&t, OneHotLabel(0), Stage::StepC).unwrap();
        assert_eq!(c.values, vec![0.5, 0.5]);
    }

    #[test]
    fn step_c_keeps_other_argmax() {
        let t = p(&[0.0, 0.5, 0.45, 0.05]);
        let c = rectify(&t, OneHotLabel(0), Stage::StepC).unwrap();
        assert!(close(&c.values, &[1.0 / 3.0, 1.0 / 6.0, 0.45, 0.05], 1e-15));
        assert!(c.values[0] > c.values[1]);
        // Class 2 still holds the largest mass.
        assert_eq!(argmax(&c.values), 2);
    }

    #[test]
    fn step_c_rejects_degenerate_pair_and_wrong_stage() {
        let fake = RectifiedTarget {
            values: vec![0.5, 0.0, 1.0],
            stage: Stage::StepB,
            a: 0,
            b: 1,
        };
        assert!(matches!(
            rectify_step_c(&fake, 0.0, 0.0),
            Err(Error::DegeneratePair)
        ));
        let done = RectifiedTarget {
            stage: Stage::StepC,
            ..fake
        };
        assert!(rectify_step_c(&done, 0.1, 0.2).is_err());
    }

    #[test]
    fn batch_cases() {
        assert!(rectify_batch(&[], &[], Stage::StepC).unwrap().is_empty());
        let t = p(&[0.1, 0.7, 0.2]);
        let single = rectify_batch(std::slice::from_ref(&t), &[OneHotLabel(0)], Stage::StepC).unwrap();
        assert_eq!(single[0], rectify(&t, OneHotLabel(0), Stage::StepC).unwrap());
        let err = rectify_batch(
            &[t.clone(), t.clone()],
            &[OneHotLabel(2), OneHotLabel(1)],
            Stage::StepB,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSubset { index: 1 }));
    }
}
