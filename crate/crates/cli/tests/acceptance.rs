//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the report always prints.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rectidistill_cli::protocol::{self, mode_medians, run_ablation, AblationRow};
use rectidistill_core::analysis::{default_grid, grid_search_optimum, sweep, two_class_optimum, verify_sweep, TwoClassSetup};
use rectidistill_core::data::Dataset;
use rectidistill_core::model::MlpParams;
use rectidistill_core::numerics::{
    ce_softmax_gradient, cross_entropy_from_logits, finite_difference_gradient, kl_divergence, kl_softmax_gradient,
    softmax,
};
use rectidistill_core::rectify::{rectify, Stage};
use rectidistill_core::rng::SplitMix64;
use rectidistill_core::train::{distill_batch_gradient, distill_batch_loss, train_teacher, DistillBatch};
use rectidistill_core::{DistillMode, EpochSchedule, LogitVector, OneHotLabel, ProbVector};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Normalized exponentials; `zero_prob` of the entries are set to 0 first.
fn random_simplex(rng: &mut SplitMix64, n: usize, zero_prob: f64) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n)
            .map(|_| if rng.next_f64() < zero_prob { 0.0 } else { -(1.0 - rng.next_f64()).ln() })
            .collect();
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 {
            return raw.iter().map(|v| v / sum).collect();
        }
    }
}

fn c1_gradients() -> Outcome {
    let mut rng = SplitMix64::new(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = 2 + rng.index(9);
        let tau = [0.5, 1.0, 2.0][case % 3];
        let z: Vec<f64> = (0..n).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let y = OneHotLabel(rng.index(n));
        let t = ProbVector::new(random_simplex(&mut rng, n, 0.2)).unwrap();
        let zl = LogitVector::new(z.clone()).unwrap();

        let ce = ce_softmax_gradient(&zl, y, tau).unwrap();
        let ce_fd = finite_difference_gradient(
            |x| cross_entropy_from_logits(y, &LogitVector::new(x.to_vec()).unwrap(), tau).unwrap(),
            &z,
            1e-5,
        )
        .unwrap();
        let kl = kl_softmax_gradient(&t, &zl, tau).unwrap();
        let kl_fd = finite_difference_gradient(
            |x| kl_divergence(&t, &softmax(&LogitVector::new(x.to_vec()).unwrap(), tau).unwrap()).unwrap(),
            &z,
            1e-5,
        )
        .unwrap();
        worst = worst
            .max(max_abs(ce.as_slice(), ce_fd.as_slice()))
            .max(max_abs(kl.as_slice(), kl_fd.as_slice()));
    }
    ensure(worst <= 1e-6, || format!("max-abs error {worst:.3e} > 1e-6"))?;
    Ok(format!("max-abs error {worst:.2e} over 100 cases"))
}

fn c2_kl_non_negative() -> Outcome {
    let mut rng = SplitMix64::new(202);
    let (mut min_kl, mut max_self) = (f64::INFINITY, 0.0f64);
    for _ in 0..10_000 {
        let n = 2 + rng.index(19);
        let t = ProbVector::new(random_simplex(&mut rng, n, 0.2)).unwrap();
        let s = ProbVector::new(random_simplex(&mut rng, n, 0.0)).unwrap();
        min_kl = min_kl.min(kl_divergence(&t, &s).unwrap());
        max_self = max_self.max(kl_divergence(&t, &t).unwrap().abs());
    }
    ensure(min_kl >= -1e-12, || format!("KL reached {min_kl:.3e}"))?;
    ensure(max_self <= 1e-12, || format!("KL(p,p) reached {max_self:.3e}"))?;
    Ok(format!("min KL {min_kl:.2e}, max KL(p,p) {max_self:.2e}"))
}

fn c3_rectification() -> Outcome {
    let mut rng = SplitMix64::new(303);
    let mut checked = 0;
    while checked < 10_000 {
        let n = 2 + rng.index(19);
        let t = random_simplex(&mut rng, n, 0.0);
        let p = ProbVector::new(t.clone()).unwrap();
        let b = p.argmax();
        let a = rng.index(n);
        if a == b {
            continue;
        }
        checked += 1;
        let y = OneHotLabel(a);
        let c = rectify(&p, y, Stage::StepC).map_err(|e| e.to_string())?;
        let sb = rectify(&p, y, Stage::StepB).map_err(|e| e.to_string())?;
        let ctx = || format!("t={t:?}, a={a}");
        ensure((c.mass() - 1.0).abs() <= 1e-12, || format!("step-c sum {} for {}", c.mass(), ctx()))?;
        ensure(c.values[a] > c.values[b], || format!("ordering broken for {}", ctx()))?;
        let over = 1.0 + (1.0 - t[a] - t[b]) / 2.0;
        ensure((sb.mass() - over).abs() <= 1e-12, || format!("step-b sum {} for {}", sb.mass(), ctx()))?;
        ensure(
            (c.values[a] + c.values[b] - t[a] - t[b]).abs() <= 1e-12,
            || format!("pair mass moved for {}", ctx()),
        )?;
        for k in (0..n).filter(|&k| k != a && k != b) {
            ensure(
                c.values[k].to_bits() == t[k].to_bits() && sb.values[k].to_bits() == t[k].to_bits(),
                || format!("t_o entry {k} changed for {}", ctx()),
            )?;
        }
    }
    Ok("10000 wrong predictions, all invariants hold".into())
}

fn c4_two_class_sweep() -> Outcome {
    let template = TwoClassSetup::equal_weights(0.5);
    let grid = default_grid();
    ensure(grid.len() == 19, || "grid must hold 19 points".into())?;
    let rows = sweep(&grid, &template).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for r in &rows {
        worst = worst.max((r.s_unrect - grid_search_optimum(r.t_a, 1.0, 1.0, 1e-6)).abs());
        if r.t_a > 0.5 {
            ensure(r.t_a < r.s_unrect && r.s_unrect < 1.0, || format!("t_a={}: s*={}", r.t_a, r.s_unrect))?;
        }
        if r.t_a < 0.5 {
            let s_rect = r.s_rect.ok_or_else(|| format!("t_a={}: no rectified optimum", r.t_a))?;
            ensure(s_rect > r.s_unrect, || format!("t_a={}: {} <= {}", r.t_a, s_rect, r.s_unrect))?;
        }
    }
    ensure(worst <= 1e-4, || format!("grid oracle gap {worst:.3e}"))?;
    for c in verify_sweep(&rows, &template, 1e-6) {
        ensure(c.passed(), || format!("{} fails at {:?}", c.name, c.failing_t_a))?;
    }
    Ok(format!("19 points, grid oracle gap {worst:.1e}"))
}

fn c5_worked_optimum() -> Outcome {
    let s = two_class_optimum(&TwoClassSetup::equal_weights(0.3)).map_err(|e| e.to_string())?;
    let oracle = grid_search_optimum(0.3, 1.0, 1.0, 1e-6);
    ensure((s - 0.65).abs() <= 1e-4, || format!("s* = {s}"))?;
    ensure((oracle - 0.65).abs() <= 1e-4, || format!("grid oracle gives {oracle}"))?;
    Ok(format!("s* = {s:.6}, grid oracle {oracle:.6}"))
}

struct Canonical {
    train: Dataset,
    val: Dataset,
    teacher: MlpParams,
    teacher_train_acc: f64,
}

fn canonical() -> Canonical {
    let (train, val) = protocol::generate(
        protocol::CLASSES,
        protocol::PER_CLASS,
        protocol::VAL_PER_CLASS,
        protocol::DIM,
        protocol::SPREAD,
        protocol::DATA_SEED,
    )
    .expect("canonical data");
    let out = train_teacher(&protocol::TEACHER_DIMS, &train, &val, &protocol::teacher_config()).expect("teacher");
    Canonical {
        teacher_train_acc: out.final_metrics().train_acc,
        teacher: out.params,
        train,
        val,
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn ablation(c: &Canonical, modes: &[DistillMode]) -> Result<Vec<AblationRow>, String> {
    run_ablation(
        &c.teacher,
        &protocol::STUDENT_DIMS,
        &c.train,
        &c.val,
        &protocol::student_config(),
        modes,
        &SEEDS,
    )
    .map_err(|e| e.to_string())
}

fn c6_step_ablation(c: &Canonical) -> Outcome {
    ensure(c.teacher_train_acc >= 0.9, || format!("teacher train acc {}", c.teacher_train_acc))?;
    let rows = ablation(c, &[DistillMode::StepBAblation, DistillMode::Full])?;
    let (b, _) = mode_medians(&rows, DistillMode::StepBAblation);
    let (full, _) = mode_medians(&rows, DistillMode::Full);
    ensure(full >= b, || format!("step-c {full:.4} < step-b {b:.4}"))?;
    Ok(format!("teacher train {:.4}; median val step-c {full:.4} >= step-b {b:.4}", c.teacher_train_acc))
}

fn c7_module_ablation(c: &Canonical) -> Outcome {
    let modes = [DistillMode::Full, DistillMode::EliminateOnly, DistillMode::VanillaKd];
    let rows = ablation(c, &modes)?;
    let (full, _) = mode_medians(&rows, DistillMode::Full);
    let (elim, _) = mode_medians(&rows, DistillMode::EliminateOnly);
    let (van, _) = mode_medians(&rows, DistillMode::VanillaKd);
    let slack = 0.005;
    ensure(full >= elim - slack, || format!("full {full:.4} below eliminate {elim:.4} by more than 0.5pp"))?;
    ensure(elim >= van - slack, || format!("eliminate {elim:.4} below vanilla {van:.4} by more than 0.5pp"))?;
    Ok(format!("median val full {full:.4}, eliminate {elim:.4}, vanilla {van:.4}"))
}

fn c8_dynamic_schedule(c: &Canonical) -> Outcome {
    let rows = ablation(c, &[DistillMode::Full, DistillMode::FixedGamma(0.5)])?;
    let (_, dynamic) = mode_medians(&rows, DistillMode::Full);
    let (_, fixed) = mode_medians(&rows, DistillMode::FixedGamma(0.5));
    let epoch = protocol::early_epoch(protocol::student_config().epochs);
    ensure(dynamic >= fixed, || format!("epoch {epoch}: dynamic {dynamic:.4} < fixed {fixed:.4}"))?;
    Ok(format!("median val at epoch {epoch}: dynamic {dynamic:.4} >= fixed 0.5 {fixed:.4}"))
}

fn c9_end_to_end_gradient() -> Outcome {
    let mut rng = SplitMix64::new(909);
    let mut student = MlpParams::init(&[2, 4, 3], 9).map_err(|e| e.to_string())?;
    // Jitter every parameter so the biases are non-zero too.
    let flat: Vec<f64> = student.to_flat().iter().map(|w| w + rng.uniform(-0.3, 0.3)).collect();
    student.set_flat(&flat).map_err(|e| e.to_string())?;

    let features: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)]).collect();
    let teacher: Vec<ProbVector> = (0..8).map(|_| ProbVector::new(random_simplex(&mut rng, 3, 0.0)).unwrap()).collect();
    // Half the labels agree with the teacher, half do not.
    let labels: Vec<OneHotLabel> = teacher
        .iter()
        .enumerate()
        .map(|(i, t)| OneHotLabel(if i % 2 == 0 { t.argmax() } else { (t.argmax() + 1) % 3 }))
        .collect();
    let batch = DistillBatch {
        features: features.iter().map(Vec::as_slice).collect(),
        teacher_probs: teacher,
        labels,
    };
    let sched = EpochSchedule::new(4, 10).unwrap();
    let mut worst: f64 = 0.0;
    for mode in DistillMode::all_variants() {
        let (_, grads) = distill_batch_gradient(&student, &batch, &sched, 1.0, mode).map_err(|e| e.to_string())?;
        let numeric = finite_difference_gradient(
            |x| {
                let mut q = student.clone();
                q.set_flat(x).unwrap();
                distill_batch_loss(&q, &batch, &sched, 1.0, mode).unwrap().l_all
            },
            &student.to_flat(),
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        let err = max_abs(&grads.to_flat(), numeric.as_slice());
        ensure(err <= 1e-5, || format!("{mode}: max error {err:.3e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{} parameters, six modes, max error {worst:.2e}", student.n_params()))
}

fn run_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rectidistill"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    run_bin(&["gen-data", "--out-dir", &p("data")])?;
    run_bin(&[
        "train-teacher",
        "--train", &p("data/train.csv"),
        "--val", &p("data/val.csv"),
        "--out-dir", &p("teacher"),
    ])?;
    let flags = [
        "distill",
        "--train", &p("data/train.csv"),
        "--val", &p("data/val.csv"),
        "--teacher", &p("teacher/teacher.ckpt"),
        "--out-dir", &p("student"),
        "--seed", "3",
    ];
    let read = |f: &str| fs::read(Path::new(&p("student")).join(f)).map_err(|e| e.to_string());
    run_bin(&flags)?;
    let first = (read("metrics.csv")?, read("student.ckpt")?);
    run_bin(&flags)?;
    let second = (read("metrics.csv")?, read("student.ckpt")?);
    ensure(first.0 == second.0, || "metrics.csv differs".into())?;
    ensure(first.1 == second.1, || "student.ckpt differs".into())?;
    Ok(format!("metrics {} bytes, checkpoint {} bytes identical", first.0.len(), first.1.len()))
}

fn report(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let took = start.elapsed();
    let outcome = outcome.and_then(|m| {
        if took <= limit {
            Ok(m)
        } else {
            Err(format!("{m}; runtime {:.1}s over {:.0}s budget", took.as_secs_f64(), limit.as_secs_f64()))
        }
    });
    let (tag, msg) = match &outcome {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("{tag} criterion {id:>2} {name}: {msg} [{:.2}s]", took.as_secs_f64());
    outcome.is_ok()
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "gradient fidelity", secs(5), c1_gradients);
    ok &= report(2, "kl non-negativity", secs(2), c2_kl_non_negative);
    ok &= report(3, "rectification invariants", secs(5), c3_rectification);
    ok &= report(4, "two-class sweep", secs(10), c4_two_class_sweep);
    ok &= report(5, "worked optimum", secs(10), c5_worked_optimum);

    let start = Instant::now();
    let setup = canonical();
    let setup_time = start.elapsed();
    println!(
        "     canonical teacher trained in {:.2}s (train acc {:.4})",
        setup_time.as_secs_f64(),
        setup.teacher_train_acc
    );
    ok &= report(6, "step-b vs step-c ablation", secs(180) - setup_time, || c6_step_ablation(&setup));
    ok &= report(7, "module ablation ordering", secs(300) - setup_time, || c7_module_ablation(&setup));
    ok &= report(8, "dynamic schedule", secs(300) - setup_time, || c8_dynamic_schedule(&setup));
    ok &= report(9, "end-to-end gradient", secs(10), c9_end_to_end_gradient);
    ok &= report(10, "determinism", secs(60), c10_determinism);

    if ok {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
