//! `impsup`: dataset generation, both training stages, evaluation, MI curves,
//! single-image inference and the gradient-check suite.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use impsup::datagen::{
    gen_dataset, load_dataset, load_png, save_png, DatasetConfig, LoadMode, Split,
};
use impsup::gradsuite::run_grad_suite;
use impsup::metrics::{eval_report, mi_curve, Restorer};
use impsup::models::{load_checkpoint, Role};
use impsup::train::{train_clc, train_deweather, SupervisionRegistry, TrainConfig};
use impsup::{Error, Result};
use serde_json::{json, Value};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const REPORT_FILE: &str = "report.json";
pub const RESTORED_FILE: &str = "restored.png";
pub const GRAD_CHECK_FILE: &str = "grad_check.csv";

#[derive(Parser, Debug)]
#[command(
    name = "impsup",
    version,
    about = "Imperfect-supervision de-weathering pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file layered over the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every random choice of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dotted config override, e.g. `--set loss.lambda_sw=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn odd_frames(s: &str) -> std::result::Result<usize, String> {
    let f: usize = s.parse().map_err(|e| format!("{e}"))?;
    if f % 2 == 1 {
        Ok(f)
    } else {
        Err(format!("frame count must be odd (2n+1), got {f}"))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset into --out.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<usize>,
        /// Frames per scene, 2n+1.
        #[arg(long, value_parser = odd_frames)]
        frames: Option<usize>,
        /// Replace an existing dataset in --out.
        #[arg(long)]
        force: bool,
    },
    /// Stage 1: train the consistent label constructor.
    TrainClc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Frames the constructor reads, 2n+1 (at most the dataset's).
        #[arg(long, value_parser = odd_frames)]
        frames: Option<usize>,
    },
    /// Stage 2: train the de-weathering student.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_parser = ["pseudo_and_original", "original_only", "pseudo_only"])]
        supervision: Option<String>,
        /// Label-constructor checkpoint (not needed for original_only).
        #[arg(long)]
        clc: Option<PathBuf>,
    },
    /// Score a student (and optionally a constructor) on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        clc: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// MI(output, input) and MI(output, label) over a run's snapshots.
    MiCurve {
        #[arg(long)]
        data: PathBuf,
        /// Directory of `epoch_NNN.ckpt` snapshots, usually `<run>/snapshots`.
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore one degraded PNG (student) or 2n+1 frames (constructor).
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every autodiff op and loss.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn announce(common: Option<&Common>) {
    eprintln!("config precedence: {}", config::PRECEDENCE);
    if let Some(c) = common {
        match &c.config {
            Some(p) => eprintln!("config file: {}", p.display()),
            None => eprintln!("config file: none"),
        }
    }
}

fn overrides(common: &Common, flags: Vec<(&str, Value)>) -> Result<Vec<(String, Value)>> {
    let mut all = common
        .set
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    all.extend(flags.into_iter().map(|(k, v)| (k.to_string(), v)));
    Ok(all)
}

fn snapshot(out: &Path, command: &str, config: Value) -> Result<()> {
    write_json(
        &out.join(RESOLVED_CONFIG),
        &json!({ "command": command, "config": config }),
    )
}

fn train_views(data: &Path) -> Result<(impsup::datagen::Dataset, impsup::datagen::Dataset)> {
    Ok((
        load_dataset(data, LoadMode::Train, Some(Split::Train))?,
        load_dataset(data, LoadMode::Eval, Some(Split::Test))?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            scenes,
            frames,
            force,
        } => {
            announce(Some(&common));
            let mut flags = Vec::new();
            if let Some(s) = scenes {
                flags.push(("num_scenes", json!(s)));
            }
            if let Some(f) = frames {
                flags.push(("frames_n", json!(f / 2)));
            }
            if let Some(s) = common.seed {
                flags.push(("master_seed", json!(s)));
            }
            let cfg: DatasetConfig =
                config::resolve(common.config.as_deref(), &overrides(&common, flags)?)?;
            let manifest = gen_dataset(&common.out, &cfg, force)?;
            snapshot(&common.out, "gen-data", serde_json::to_value(&cfg)?)?;
            let test = manifest
                .scenes
                .iter()
                .filter(|s| s.split == Split::Test)
                .count();
            println!(
                "generated {} scenes ({} train / {test} test) in {}",
                manifest.scenes.len(),
                manifest.scenes.len() - test,
                common.out.display()
            );
        }
        Command::TrainClc {
            common,
            data,
            epochs,
            frames,
        } => {
            announce(Some(&common));
            let mut flags = vec![("stage", json!("clc"))];
            if let Some(e) = epochs {
                flags.push(("epochs", json!(e)));
            }
            if let Some(f) = frames {
                flags.push(("arch.frames_n", json!(f / 2)));
            }
            if let Some(s) = common.seed {
                flags.push(("seed", json!(s)));
            }
            let cfg: TrainConfig =
                config::resolve(common.config.as_deref(), &overrides(&common, flags)?)?;
            cfg.validate()?;
            fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
            snapshot(&common.out, "train-clc", serde_json::to_value(&cfg)?)?;
            let (train, test) = train_views(&data)?;
            let out = train_clc(&train, Some(&test), &cfg, &common.out)?;
            let last = out.rows.last().expect("at least one epoch");
            println!(
                "constructor saved to {}; test pseudo-label PSNR {:.3} dB vs label, {:.3} dB vs ideal",
                out.checkpoint.display(),
                last.test_psnr_label,
                last.test_psnr_ideal
            );
        }
        Command::TrainStudent {
            common,
            data,
            epochs,
            supervision,
            clc,
        } => {
            announce(Some(&common));
            let mut flags = vec![("stage", json!("deweather"))];
            if let Some(e) = epochs {
                flags.push(("epochs", json!(e)));
            }
            if let Some(s) = supervision {
                flags.push(("supervision", json!(s)));
            }
            if let Some(s) = common.seed {
                flags.push(("seed", json!(s)));
            }
            let cfg: TrainConfig =
                config::resolve(common.config.as_deref(), &overrides(&common, flags)?)?;
            cfg.validate()?;
            fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
            let mut snap = serde_json::to_value(&cfg)?;
            snap["clc_checkpoint"] = json!(clc.as_ref().map(|p| p.display().to_string()));
            snapshot(&common.out, "train-student", snap)?;
            let registry = SupervisionRegistry::default();
            let constructor = match &clc {
                Some(p) if registry.get(&cfg.supervision)?.needs_pseudo_labels() => {
                    Some(load_checkpoint(p)?)
                }
                _ => None,
            };
            let (train, test) = train_views(&data)?;
            let out = train_deweather(
                &train,
                Some(&test),
                constructor.as_ref(),
                &cfg,
                &registry,
                &common.out,
            )?;
            let last = out.rows.last().expect("at least one epoch");
            println!(
                "student saved to {}; test PSNR {:.3} dB vs ideal, {:.3} dB vs label",
                out.checkpoint.display(),
                last.test_psnr_ideal,
                last.test_psnr_label
            );
        }
        Command::Eval {
            data,
            student,
            clc,
            out,
        } => {
            announce(None);
            snapshot(
                &out,
                "eval",
                json!({
                    "data": data.display().to_string(),
                    "student": student.display().to_string(),
                    "clc": clc.as_ref().map(|p| p.display().to_string()),
                }),
            )?;
            let s = load_checkpoint(&student)?;
            if s.role() != Role::Deweather {
                return Err(Error::Config(format!(
                    "{} is not a student checkpoint",
                    student.display()
                )));
            }
            let c = clc.as_deref().map(load_checkpoint).transpose()?;
            let test = load_dataset(&data, LoadMode::Eval, Some(Split::Test))?;
            let report = eval_report(&s, c.as_ref().map(|m| m as &dyn Restorer), &test)?;
            write_json(&out.join(REPORT_FILE), &serde_json::to_value(&report)?)?;
            println!(
                "{} test scenes: student {:.3} dB vs ideal (input {:.3} dB)",
                report.test_scenes,
                report.student.overall.psnr_ideal,
                report.input.overall.psnr_ideal
            );
        }
        Command::MiCurve {
            data,
            snapshots,
            out,
        } => {
            announce(None);
            snapshot(
                &out,
                "mi-curve",
                json!({ "data": data.display().to_string(), "snapshots": snapshots.display().to_string() }),
            )?;
            let mut checkpoints = Vec::new();
            for entry in fs::read_dir(&snapshots).map_err(io_err(&snapshots))? {
                let path = entry.map_err(io_err(&snapshots))?.path();
                let name = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or_default();
                if let Some(epoch) = name
                    .strip_prefix("epoch_")
                    .and_then(|n| n.strip_suffix(".ckpt"))
                    .and_then(|n| n.parse::<usize>().ok())
                {
                    checkpoints.push((epoch, path));
                }
            }
            checkpoints.sort();
            let test = load_dataset(&data, LoadMode::Eval, Some(Split::Test))?;
            let points = mi_curve(&checkpoints, &test, &out)?;
            for p in &points {
                println!(
                    "epoch {:>3}: MI(output, input) {:.4}  MI(output, label) {:.4}",
                    p.epoch, p.mi_output_input, p.mi_output_target
                );
            }
        }
        Command::Infer {
            checkpoint,
            inputs,
            out,
        } => {
            announce(None);
            snapshot(
                &out,
                "infer",
                json!({
                    "checkpoint": checkpoint.display().to_string(),
                    "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                }),
            )?;
            let model = load_checkpoint(&checkpoint)?;
            let want = match model.role() {
                Role::Deweather => 1,
                Role::Clc => model.frames(),
            };
            if inputs.len() != want {
                return Err(Error::Config(format!(
                    "{} checkpoint expects {want} input image(s), got {}",
                    model.role().as_str(),
                    inputs.len()
                )));
            }
            let frames = inputs
                .iter()
                .map(|p| load_png(p))
                .collect::<Result<Vec<_>>>()?;
            let restored = model.infer(&frames)?;
            let path = out.join(RESTORED_FILE);
            save_png(&path, &restored)?;
            println!("wrote {}", path.display());
        }
        Command::GradCheck { seeds, out } => {
            announce(None);
            let results = run_grad_suite(seeds)?;
            let mut csv =
                String::from("name,kind,max_rel_error,tolerance,checked,skipped_kinks,passed\n");
            for r in &results {
                println!(
                    "{:<22} {:<9} max rel err {:.3e} (tol {:.0e}, {} coords, {} kink skips) {}",
                    r.name,
                    format!("{:?}", r.kind).to_lowercase(),
                    r.max_rel_error,
                    r.tolerance(),
                    r.checked,
                    r.skipped_kinks,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
                csv += &format!(
                    "{},{:?},{},{},{},{},{}\n",
                    r.name,
                    r.kind,
                    r.max_rel_error,
                    r.tolerance(),
                    r.checked,
                    r.skipped_kinks,
                    r.passed()
                );
            }
            if let Some(dir) = &out {
                snapshot(dir, "grad-check", json!({ "seeds": seeds }))?;
                fs::write(dir.join(GRAD_CHECK_FILE), csv).map_err(io_err(dir))?;
            }
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.name)
                .collect();
            if !failed.is_empty() {
                return Err(Error::Contract(format!(
                    "finite-difference check failed for {}",
                    failed.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("IMPSUP_THREADS") {
        let n: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!(
                "IMPSUP_THREADS must be a positive integer, got '{raw}'"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
