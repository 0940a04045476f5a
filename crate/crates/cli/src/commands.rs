//! Subcommand definitions and their implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rectidistill_core::analysis::{default_grid, sweep, sweep_csv, verify_sweep, TwoClassSetup};
use rectidistill_core::data::{load_csv, write_csv, Dataset};
use rectidistill_core::model::{checkpoint_to_string, load_checkpoint, MlpParams};
use rectidistill_core::train::{distill, metrics_csv, train_teacher, TrainConfig};
use rectidistill_core::DistillMode;

use crate::protocol::{self, mode_medians, run_ablation};
use crate::settings::{default_out_dir, Settings};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "rectidistill", version, about = "Knowledge distillation with teacher-error rectification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Gaussian-blob train and validation CSVs.
    GenData(GenDataArgs),
    /// Train the teacher network with cross-entropy.
    TrainTeacher(TrainTeacherArgs),
    /// Distill a student from a frozen teacher.
    Distill(DistillArgs),
    /// Compare distillation modes over several seeds.
    Ablate(AblateArgs),
    /// Check the two-class optimum properties over a t_a sweep.
    PropCheck(PropCheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value config file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $RECTIDISTILL_OUT/<command> or out/<command>).
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Optim {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub train: Option<String>,
    #[arg(long)]
    pub val: Option<String>,
    /// Comma-separated layer widths.
    #[arg(long)]
    pub teacher_dims: Option<String>,
    #[command(flatten)]
    pub optim: Optim,
}

#[derive(Debug, Args)]
pub struct StudentInputs {
    #[arg(long)]
    pub train: Option<String>,
    #[arg(long)]
    pub val: Option<String>,
    #[arg(long)]
    pub teacher: Option<String>,
    /// Comma-separated layer widths.
    #[arg(long)]
    pub student_dims: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub inputs: StudentInputs,
    /// full, eliminate, rectify, vanilla, step-b or fixed-gamma=G.
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub optim: Optim,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub inputs: StudentInputs,
    /// Number of seeds, counted up from --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Comma-separated modes to compare.
    #[arg(long)]
    pub modes: Option<String>,
    #[command(flatten)]
    pub optim: Optim,
}

#[derive(Debug, Args)]
pub struct PropCheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Single teacher probability on the true class; omit for the full sweep.
    #[arg(long)]
    pub ta: Option<f64>,
    #[arg(long)]
    pub w_kl: Option<f64>,
    #[arg(long)]
    pub w_ce: Option<f64>,
    /// Gradient-descent steps for the dynamics run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Gradient-descent step size.
    #[arg(long)]
    pub step_lr: Option<f64>,
    /// Step of the grid-search oracle.
    #[arg(long)]
    pub grid_resolution: Option<f64>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::TrainTeacher(a) => teacher(&a),
        Command::Distill(a) => distill_cmd(&a),
        Command::Ablate(a) => ablate(&a),
        Command::PropCheck(a) => prop_check(&a),
    }
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn dims_text(d: &[usize]) -> String {
    d.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn data_dir() -> String {
    default_out_dir("data")
}

fn join(dir: &str, file: &str) -> String {
    Path::new(dir).join(file).to_string_lossy().into_owned()
}

/// Write `contents` beside `path` and rename into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn create_out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = s.path("out-dir");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_dataset(s: &Settings, key: &str) -> Result<Dataset> {
    let path = s.path(key);
    if !path.is_file() {
        return Err(CliError::Usage(format!("--{key}: no dataset at {}", path.display())).into());
    }
    load_csv(&path).with_context(|| format!("loading {}", path.display()))
}

fn load_teacher(s: &Settings) -> Result<MlpParams> {
    let path = s.path("teacher");
    if !path.is_file() {
        return Err(CliError::Usage(format!("--teacher: no checkpoint at {}", path.display())).into());
    }
    load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))
}

/// Train and validation sets must agree on width and class count.
fn check_pair(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.dim() != val.dim() || train.n_classes != val.n_classes {
        return Err(CliError::Usage(format!(
            "train ({} features, {} classes) and val ({} features, {} classes) disagree",
            train.dim(),
            train.n_classes,
            val.dim(),
            val.n_classes
        ))
        .into());
    }
    Ok(())
}

fn check_network(what: &str, dims: &[usize], train: &Dataset) -> Result<()> {
    if dims.len() < 2 || dims.first() != Some(&train.dim()) || dims.last() != Some(&train.n_classes) {
        return Err(CliError::Usage(format!(
            "{what} dims {} do not fit data with {} features and {} classes",
            dims_text(dims),
            train.dim(),
            train.n_classes
        ))
        .into());
    }
    Ok(())
}

fn optim_defaults(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("lr", cfg.learning_rate.to_string()),
        ("momentum", cfg.momentum.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch-size", cfg.batch_size.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
}

fn optim_flags(o: &Optim) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("lr", opt(&o.lr)),
        ("momentum", opt(&o.momentum)),
        ("epochs", opt(&o.epochs)),
        ("batch-size", opt(&o.batch_size)),
        ("seed", opt(&o.seed)),
    ]
}

fn train_config(s: &Settings, tau: f64, mode: DistillMode) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        learning_rate: s.get("lr")?,
        momentum: s.get("momentum")?,
        epochs: s.get("epochs")?,
        batch_size: s.get("batch-size")?,
        seed: s.get("seed")?,
        tau,
        mode,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest {
    classes: usize,
    per_class: usize,
    val_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    val_seed: u64,
    train_rows: usize,
    val_rows: usize,
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let defaults = vec![
        ("out-dir", data_dir()),
        ("classes", protocol::CLASSES.to_string()),
        ("per-class", protocol::PER_CLASS.to_string()),
        ("val-per-class", protocol::VAL_PER_CLASS.to_string()),
        ("dim", protocol::DIM.to_string()),
        ("spread", protocol::SPREAD.to_string()),
        ("seed", protocol::DATA_SEED.to_string()),
    ];
    let flags = vec![
        ("out-dir", a.common.out_dir.clone()),
        ("classes", opt(&a.classes)),
        ("per-class", opt(&a.per_class)),
        ("val-per-class", opt(&a.val_per_class)),
        ("dim", opt(&a.dim)),
        ("spread", opt(&a.spread)),
        ("seed", opt(&a.seed)),
    ];
    let s = Settings::merge(&defaults, a.common.config.as_deref(), &flags)?;
    let (classes, per_class, val_per_class): (usize, usize, usize) =
        (s.get("classes")?, s.get("per-class")?, s.get("val-per-class")?);
    let (dim, spread, seed): (usize, f64, u64) = (s.get("dim")?, s.get("spread")?, s.get("seed")?);
    let (train, val) = protocol::generate(classes, per_class, val_per_class, dim, spread, seed)?;

    let dir = create_out_dir(&s)?;
    for (name, ds) in [("train.csv", &train), ("val.csv", &val)] {
        let path = dir.join(name);
        let tmp = tmp_path(&path);
        write_csv(ds, &tmp)?;
        fs::rename(&tmp, &path).with_context(|| format!("renaming into {}", path.display()))?;
    }
    let manifest = Manifest {
        classes,
        per_class,
        val_per_class,
        dim,
        spread,
        seed,
        val_seed: protocol::val_seed(seed),
        train_rows: train.len(),
        val_rows: val.len(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    write_atomic(&dir.join("config.txt"), s.to_text().as_bytes())?;
    println!(
        "wrote {} train and {} val rows ({} classes, dim {}) to {}",
        train.len(),
        val.len(),
        classes,
        dim,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TeacherSummary {
    dims: Vec<usize>,
    epochs: usize,
    train_acc: f64,
    val_acc: f64,
    checksum: String,
}

fn teacher(a: &TrainTeacherArgs) -> Result<()> {
    let mut defaults = vec![
        ("out-dir", default_out_dir("teacher")),
        ("train", join(&data_dir(), "train.csv")),
        ("val", join(&data_dir(), "val.csv")),
        ("teacher-dims", dims_text(&protocol::TEACHER_DIMS)),
    ];
    defaults.extend(optim_defaults(&protocol::teacher_config()));
    let mut flags = vec![
        ("out-dir", a.common.out_dir.clone()),
        ("train", a.train.clone()),
        ("val", a.val.clone()),
        ("teacher-dims", a.teacher_dims.clone()),
    ];
    flags.extend(optim_flags(&a.optim));
    let s = Settings::merge(&defaults, a.common.config.as_deref(), &flags)?;
    let dims = s.dims("teacher-dims")?;
    let cfg = train_config(&s, 1.0, DistillMode::Full)?;
    let train = load_dataset(&s, "train")?;
    let val = load_dataset(&s, "val")?;
    check_pair(&train, &val)?;
    check_network("teacher", &dims, &train)?;

    let out = train_teacher(&dims, &train, &val, &cfg)?;
    let last = *out.final_metrics();
    let summary = TeacherSummary {
        dims: dims.clone(),
        epochs: cfg.epochs,
        train_acc: last.train_acc,
        val_acc: last.val_acc,
        checksum: format!("{:016x}", out.params.checksum()),
    };

    let dir = create_out_dir(&s)?;
    write_atomic(&dir.join("teacher.ckpt"), checkpoint_to_string(&out.params).as_bytes())?;
    write_atomic(&dir.join("teacher_metrics.csv"), metrics_csv(&out.metrics).as_bytes())?;
    write_atomic(&dir.join("config.txt"), s.to_text().as_bytes())?;
    let json = serde_json::to_string(&summary)? + "\n";
    write_atomic(&dir.join("summary.json"), json.as_bytes())?;
    println!(
        "teacher {} train_acc={:.4} val_acc={:.4}",
        dims_text(&dims),
        last.train_acc,
        last.val_acc
    );
    Ok(())
}

fn student_defaults() -> Vec<(&'static str, String)> {
    let mut d = vec![
        ("train", join(&data_dir(), "train.csv")),
        ("val", join(&data_dir(), "val.csv")),
        ("teacher", join(&default_out_dir("teacher"), "teacher.ckpt")),
        ("student-dims", dims_text(&protocol::STUDENT_DIMS)),
        ("tau", protocol::student_config().tau.to_string()),
    ];
    d.extend(optim_defaults(&protocol::student_config()));
    d
}

fn student_flags(i: &StudentInputs, o: &Optim) -> Vec<(&'static str, Option<String>)> {
    let mut f = vec![
        ("train", i.train.clone()),
        ("val", i.val.clone()),
        ("teacher", i.teacher.clone()),
        ("student-dims", i.student_dims.clone()),
        ("tau", opt(&i.tau)),
    ];
    f.extend(optim_flags(o));
    f
}

fn parse_mode(raw: &str) -> Result<DistillMode> {
    raw.trim()
        .parse()
        .map_err(|e| CliError::Usage(format!("--mode: {e}")).into())
}

/// Everything a student run needs, loaded and cross-checked.
struct StudentSetup {
    train: Dataset,
    val: Dataset,
    teacher: MlpParams,
    dims: Vec<usize>,
}

fn student_setup(s: &Settings) -> Result<StudentSetup> {
    let dims = s.dims("student-dims")?;
    let train = load_dataset(s, "train")?;
    let val = load_dataset(s, "val")?;
    check_pair(&train, &val)?;
    let teacher = load_teacher(s)?;
    check_network("teacher", &teacher.dims(), &train)?;
    check_network("student", &dims, &train)?;
    Ok(StudentSetup { train, val, teacher, dims })
}

#[derive(Serialize)]
struct DistillSummary {
    mode: String,
    seed: u64,
    epochs: usize,
    final_val_acc: f64,
    final_train_acc: f64,
    teacher_right_fraction: f64,
    final_loss: f64,
}

fn distill_cmd(a: &DistillArgs) -> Result<()> {
    let mut defaults = student_defaults();
    defaults.push(("out-dir", default_out_dir("distill")));
    defaults.push(("mode", DistillMode::Full.to_string()));
    let mut flags = student_flags(&a.inputs, &a.optim);
    flags.push(("out-dir", a.common.out_dir.clone()));
    flags.push(("mode", a.mode.clone()));
    let s = Settings::merge(&defaults, a.common.config.as_deref(), &flags)?;
    let mode = parse_mode(s.raw("mode"))?;
    let cfg = train_config(&s, s.get("tau")?, mode)?;
    let setup = student_setup(&s)?;

    let out = distill(&setup.teacher, &setup.dims, &setup.train, &setup.val, &cfg)?;
    let last = *out.final_metrics();
    let summary = DistillSummary {
        mode: mode.to_string(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        final_val_acc: last.val_acc,
        final_train_acc: last.train_acc,
        teacher_right_fraction: last.teacher_right_fraction,
        final_loss: last.loss_total,
    };
    let json = serde_json::to_string(&summary)?;

    let dir = create_out_dir(&s)?;
    write_atomic(&dir.join("student.ckpt"), checkpoint_to_string(&out.params).as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), metrics_csv(&out.metrics).as_bytes())?;
    write_atomic(&dir.join("config.txt"), s.to_text().as_bytes())?;
    write_atomic(&dir.join("summary.json"), format!("{json}\n").as_bytes())?;
    println!("{json}");
    Ok(())
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let mut defaults = student_defaults();
    defaults.push(("out-dir", default_out_dir("ablate")));
    defaults.push(("seeds", "5".to_string()));
    defaults.push(("modes", "step-b,full".to_string()));
    let mut flags = student_flags(&a.inputs, &a.optim);
    flags.push(("out-dir", a.common.out_dir.clone()));
    flags.push(("seeds", opt(&a.seeds)));
    flags.push(("modes", a.modes.clone()));
    let s = Settings::merge(&defaults, a.common.config.as_deref(), &flags)?;
    let modes = s
        .raw("modes")
        .split(',')
        .map(parse_mode)
        .collect::<Result<Vec<_>>>()?;
    let n_seeds: usize = s.get("seeds")?;
    if n_seeds == 0 || modes.is_empty() {
        return Err(CliError::Usage("--seeds and --modes must be non-empty".into()).into());
    }
    let cfg = train_config(&s, s.get("tau")?, DistillMode::Full)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| cfg.seed + k).collect();
    let setup = student_setup(&s)?;

    let rows = run_ablation(&setup.teacher, &setup.dims, &setup.train, &setup.val, &cfg, &modes, &seeds)?;
    let early = protocol::early_epoch(cfg.epochs);
    let mut csv = String::from("seed,mode,final_val_acc,early_val_acc\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.seed, r.mode, r.final_val_acc, r.early_val_acc));
    }
    let mut summary = String::from("mode,median_final_val_acc,median_early_val_acc\n");
    let mut table = format!(
        "{:<18} {:>10} {:>10}\n",
        "mode",
        "final",
        format!("epoch {early}")
    );
    for &m in &modes {
        let (fin, ear) = mode_medians(&rows, m);
        summary.push_str(&format!("{m},{fin},{ear}\n"));
        table.push_str(&format!("{:<18} {:>10.4} {:>10.4}\n", m.to_string(), fin, ear));
    }

    let dir = create_out_dir(&s)?;
    write_atomic(&dir.join("ablation.csv"), csv.as_bytes())?;
    write_atomic(&dir.join("ablation_summary.csv"), summary.as_bytes())?;
    write_atomic(&dir.join("config.txt"), s.to_text().as_bytes())?;
    print!("median validation accuracy over {n_seeds} seeds\n{table}");
    Ok(())
}

/// Shortest decimal for `v` rounded to six places: 0.65, not 0.650000.
fn short(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn prop_check(a: &PropCheckArgs) -> Result<()> {
    let base = TwoClassSetup::equal_weights(0.5);
    let defaults = vec![
        ("out-dir", default_out_dir("prop-check")),
        ("ta", String::new()),
        ("w-kl", base.w_kl.to_string()),
        ("w-ce", base.w_ce.to_string()),
        ("steps", base.steps.to_string()),
        ("step-lr", base.learning_rate.to_string()),
        ("grid-resolution", "1e-6".to_string()),
    ];
    let flags = vec![
        ("out-dir", a.common.out_dir.clone()),
        ("ta", opt(&a.ta)),
        ("w-kl", opt(&a.w_kl)),
        ("w-ce", opt(&a.w_ce)),
        ("steps", opt(&a.steps)),
        ("step-lr", opt(&a.step_lr)),
        ("grid-resolution", opt(&a.grid_resolution)),
    ];
    let s = Settings::merge(&defaults, a.common.config.as_deref(), &flags)?;
    let template = TwoClassSetup {
        t_a: 0.5,
        w_kl: s.get("w-kl")?,
        w_ce: s.get("w-ce")?,
        learning_rate: s.get("step-lr")?,
        steps: s.get("steps")?,
    };
    let resolution: f64 = s.get("grid-resolution")?;
    if !(resolution > 0.0 && resolution < 0.5) {
        return Err(CliError::Usage(format!("--grid-resolution must lie in (0, 0.5), got {resolution}")).into());
    }
    let grid = if s.raw("ta").is_empty() {
        default_grid()
    } else {
        let t_a: f64 = s.get("ta")?;
        if !(t_a > 0.0 && t_a < 1.0) {
            return Err(CliError::Usage(format!("--ta must lie in (0, 1), got {t_a}")).into());
        }
        vec![t_a]
    };
    TwoClassSetup { t_a: grid[0], ..template }
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let rows = sweep(&grid, &template)?;
    let checks = verify_sweep(&rows, &template, resolution);
    let dir = create_out_dir(&s)?;
    write_atomic(&dir.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    write_atomic(&dir.join("config.txt"), s.to_text().as_bytes())?;

    if rows.len() == 1 {
        let r = &rows[0];
        let rect = r.s_rect.map(|v| format!(" s*_rect={}", short(v))).unwrap_or_default();
        println!("t_a={} s*={}{} verdict={}", short(r.t_a), short(r.s_unrect), rect, r.verdict);
    } else {
        println!("{:>6} {:>10} {:>10} verdict", "t_a", "s*", "s*_rect");
        for r in &rows {
            let rect = r.s_rect.map(short).unwrap_or_else(|| "-".into());
            println!("{:>6} {:>10} {:>10} {}", short(r.t_a), short(r.s_unrect), rect, r.verdict);
        }
    }
    let mut failed = Vec::new();
    for c in &checks {
        if c.passed() {
            println!("PASS {}", c.name);
        } else {
            let pts: Vec<String> = c.failing_t_a.iter().map(|&t| short(t)).collect();
            println!("FAIL {} at t_a = {}", c.name, pts.join(", "));
            failed.push(format!("{} ({})", c.name, pts.join(", ")));
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Verification(format!("failed checks: {}", failed.join("; "))).into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_formatting() {
        assert_eq!(short(0.65), "0.65");
        assert_eq!(short(0.6500000001), "0.65");
        assert_eq!(short(1.0), "1");
        assert_eq!(short(0.05), "0.05");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
