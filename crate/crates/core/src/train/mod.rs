//! Two-stage training: the label constructor first, then the single-frame
//! student supervised by frozen pseudo-labels and the original labels.

mod batch;
mod config;
mod optim;
mod supervision;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use batch::{sample_batch, CropSample};
pub use config::{AdamConfig, Stage, TrainConfig};
pub use optim::{adam_step, lr_at, warmup_steps, OptimizerState};
pub use supervision::{
    OriginalOnly, PseudoAndOriginal, PseudoOnly, Supervision, SupervisionInputs,
    SupervisionRegistry,
};

use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{clc_loss, FrozenFeatureStack, LossBreakdown};
use crate::metrics::eval_report;
use crate::models::{build_clc, build_deweather, save_checkpoint, ModelGraph, Role};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const CLC_CHECKPOINT: &str = "clc.ckpt";
pub const STUDENT_CHECKPOINT: &str = "student.ckpt";

/// One line of the per-epoch metrics CSV. Losses are means over the
/// epoch's steps; test columns are NaN when no test set is given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub loss_total: f64,
    pub loss_l1_pseudo: f64,
    pub loss_robust: f64,
    pub loss_sw: f64,
    pub test_psnr_ideal: f64,
    pub test_ssim_ideal: f64,
    pub test_psnr_label: f64,
    pub test_ssim_label: f64,
}

const CSV_HEADER: &str = "epoch,lr,loss_total,loss_l1_pseudo,loss_robust,loss_sw,\
test_psnr_ideal,test_ssim_ideal,test_psnr_label,test_ssim_label";

pub fn write_metrics_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut text = format!("{CSV_HEADER}\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.loss_total,
            r.loss_l1_pseudo,
            r.loss_robust,
            r.loss_sw,
            r.test_psnr_ideal,
            r.test_ssim_ideal,
            r.test_psnr_label,
            r.test_ssim_label
        )
        .expect("write to String");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub rows: Vec<EpochRow>,
    /// Loss of the very first batch, before any update.
    pub first_step_loss: f64,
    pub total_steps: usize,
    pub checkpoint: PathBuf,
    /// `(epoch, path)` of every snapshot, epoch 0 first.
    pub snapshots: Vec<(usize, PathBuf)>,
}

/// The central `2n+1` of a longer frame sequence.
pub fn frame_window(frames: &[Tensor], n: usize) -> Result<&[Tensor]> {
    let have = frames.len() / 2;
    if frames.len().is_multiple_of(2) || n > have {
        return Err(Error::Config(format!(
            "need {} centered frames, the scene has {}",
            2 * n + 1,
            frames.len()
        )));
    }
    Ok(&frames[have - n..=have + n])
}

fn grads_of(tape: &Tape, model: &ModelGraph, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter()
        .zip(model.params())
        .map(|(&v, p)| match tape.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; p.value.numel()],
        })
        .collect()
}

fn constants(tape: &mut Tape, ts: &[Tensor]) -> Vec<Var> {
    ts.iter().map(|t| tape.constant(t.clone())).collect()
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    train_set: &'a Dataset,
    test_set: Option<&'a Dataset>,
    out_dir: &'a Path,
    checkpoint_name: &'a str,
    require_distinct: bool,
}

impl Run<'_> {
    fn evaluate(&self, model: &ModelGraph) -> Result<[f64; 4]> {
        match self.test_set {
            None => Ok([f64::NAN; 4]),
            Some(ds) => {
                let o = eval_report(model, None, ds)?.student.overall;
                Ok([o.psnr_ideal, o.ssim_ideal, o.psnr_label, o.ssim_label])
            }
        }
    }

    /// Shared epoch loop. `step` returns the gradients and loss readings of
    /// one batch at the current parameters.
    fn execute<F>(&self, mut model: ModelGraph, mut step: F) -> Result<TrainOutcome>
    where
        F: FnMut(&ModelGraph, &[CropSample], usize) -> Result<(Vec<Vec<f64>>, LossBreakdown)>,
    {
        let cfg = self.cfg;
        let pool = self.train_set.indices(Split::Train);
        if pool.is_empty() {
            return Err(Error::Config("the training split is empty".into()));
        }
        let steps_per_epoch = cfg
            .steps_per_epoch
            .unwrap_or_else(|| (pool.len() / cfg.batch_size).max(1));
        let total = steps_per_epoch * cfg.epochs;
        fs::create_dir_all(self.out_dir).map_err(|e| Error::io(self.out_dir, e))?;
        let snap_dir = self.out_dir.join(SNAPSHOT_DIR);
        let mut snapshots = Vec::new();
        let mut snapshot = |model: &ModelGraph, epoch: usize| -> Result<()> {
            if cfg.snapshot_every > 0 && epoch.is_multiple_of(cfg.snapshot_every) {
                let path = snap_dir.join(format!("epoch_{epoch:03}.ckpt"));
                save_checkpoint(model, &path)?;
                snapshots.push((epoch, path));
            }
            Ok(())
        };
        snapshot(&model, 0)?;

        let stage_tag = rng::tag(match cfg.stage {
            Stage::Clc => "clc",
            Stage::Deweather => "deweather",
        });
        let mut batch_rng = rng::stream(cfg.seed, &[rng::tag("batches"), stage_tag]);
        let adam = cfg.adam();
        let mut state = OptimizerState::new(model.params());
        let mut rows = Vec::with_capacity(cfg.epochs);
        let mut first_step_loss = f64::NAN;
        let mut global = 0;
        for epoch in 1..=cfg.epochs {
            let mut sums = [0.0; 4];
            let mut lr = 0.0;
            for _ in 0..steps_per_epoch {
                let batch = sample_batch(
                    self.train_set,
                    &pool,
                    cfg.batch_size,
                    cfg.patch,
                    &mut batch_rng,
                    self.require_distinct,
                )?;
                let (mut grads, parts) = step(&model, &batch, global)?;
                if !parts.total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss is {} at step {global} (epoch {epoch})",
                        parts.total
                    )));
                }
                if global == 0 {
                    first_step_loss = parts.total;
                }
                lr = lr_at(global, total, cfg);
                adam_step(model.params_mut(), &mut grads, &mut state, lr, &adam)?;
                for (s, v) in
                    sums.iter_mut()
                        .zip([parts.total, parts.l1_pseudo, parts.robust, parts.sw])
                {
                    *s += v;
                }
                global += 1;
            }
            let n = steps_per_epoch as f64;
            let test = self.evaluate(&model)?;
            let row = EpochRow {
                epoch,
                lr,
                loss_total: sums[0] / n,
                loss_l1_pseudo: sums[1] / n,
                loss_robust: sums[2] / n,
                loss_sw: sums[3] / n,
                test_psnr_ideal: test[0],
                test_ssim_ideal: test[1],
                test_psnr_label: test[2],
                test_ssim_label: test[3],
            };
            log::info!(
                "epoch {epoch}/{}: loss {:.5}, lr {:.3e}, test PSNR {:.3} dB (ideal) / {:.3} dB (label)",
                cfg.epochs,
                row.loss_total,
                lr,
                row.test_psnr_ideal,
                row.test_psnr_label
            );
            rows.push(row);
            write_metrics_csv(&self.out_dir.join(METRICS_FILE), &rows)?;
            snapshot(&model, epoch)?;
        }
        let checkpoint = self.out_dir.join(self.checkpoint_name);
        save_checkpoint(&model, &checkpoint)?;
        Ok(TrainOutcome {
            model,
            rows,
            first_step_loss,
            total_steps: total,
            checkpoint,
            snapshots,
        })
    }
}

fn check_stage(cfg: &TrainConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    if cfg.stage != stage {
        return Err(Error::Config(format!(
            "config is for stage {:?}, expected {stage:?}",
            cfg.stage
        )));
    }
    Ok(())
}

/// Stage 1. Fits a label constructor on `2·arch.frames_n + 1` centered
/// frames of each training scene against the original label. Writes
/// `clc.ckpt`, `metrics.csv` and snapshots into `out_dir`; test columns
/// score the pseudo-labels.
pub fn train_clc(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::Clc)?;
    let n = cfg.arch.frames_n;
    if n > train_set.frames_n() {
        return Err(Error::Config(format!(
            "the constructor uses {} frames but the dataset has {}",
            2 * n + 1,
            2 * train_set.frames_n() + 1
        )));
    }
    let ms = cfg.loss.msssim();
    let run = Run {
        cfg,
        train_set,
        test_set,
        out_dir,
        checkpoint_name: CLC_CHECKPOINT,
        require_distinct: false,
    };
    run.execute(build_clc(&cfg.arch, cfg.seed)?, |model, batch, _| {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let mut terms = Vec::with_capacity(batch.len());
        for s in batch {
            let frames = constants(&mut tape, frame_window(&s.frames, n)?);
            let out = bound.forward(&mut tape, &frames)?;
            let label = tape.constant(s.label.clone());
            terms.push(clc_loss(&mut tape, out, label, &ms)?);
        }
        let loss = mean_of(&mut tape, &terms)?;
        tape.backward(loss)?;
        let total = tape.value(loss).item();
        Ok((
            grads_of(&tape, model, bound.vars()),
            LossBreakdown {
                total,
                ..LossBreakdown::default()
            },
        ))
    })
}

/// Stage 2. Trains the single-frame student with the named supervision
/// mode. Pseudo-labels come from the frozen `clc` on each crop. Writes
/// `student.ckpt`, `metrics.csv` and snapshots into `out_dir`.
pub fn train_deweather(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    clc: Option<&ModelGraph>,
    cfg: &TrainConfig,
    registry: &SupervisionRegistry,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::Deweather)?;
    let supervision = registry.get(&cfg.supervision)?;
    let clc = match (supervision.needs_pseudo_labels(), clc) {
        (true, None) => {
            return Err(Error::Config(format!(
                "supervision '{}' needs a label-constructor checkpoint",
                supervision.name()
            )))
        }
        (true, Some(m)) => {
            if m.role() != Role::Clc {
                return Err(Error::Config(
                    "the pseudo-label model is not a label constructor".into(),
                ));
            }
            if m.arch().frames_n > train_set.frames_n() {
                return Err(Error::Config(format!(
                    "the constructor uses {} frames but the dataset has {}",
                    m.frames(),
                    2 * train_set.frames_n() + 1
                )));
            }
            Some(m)
        }
        (false, _) => None,
    };
    let stack = FrozenFeatureStack::new(cfg.loss.feature_stack_seed);
    let run = Run {
        cfg,
        train_set,
        test_set,
        out_dir,
        checkpoint_name: STUDENT_CHECKPOINT,
        require_distinct: true,
    };
    run.execute(
        build_deweather(&cfg.arch, cfg.seed)?,
        |model, batch, step| {
            let pseudo_values = match clc {
                Some(c) => Some(
                    batch
                        .iter()
                        .map(|s| c.infer(frame_window(&s.frames, c.arch().frames_n)?))
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let mut outputs = Vec::with_capacity(batch.len());
            for s in batch {
                let center = tape.constant(s.center().clone());
                outputs.push(bound.forward(&mut tape, &[center])?);
            }
            let labels: Vec<Tensor> = batch.iter().map(|s| s.label.clone()).collect();
            let labels = constants(&mut tape, &labels);
            let pseudos = pseudo_values.map(|p| constants(&mut tape, &p));
            let inputs = SupervisionInputs {
                outputs: &outputs,
                labels: &labels,
                pseudos: pseudos.as_deref(),
                student: &bound,
                stack: &stack,
                sw_seed: rng::derive(cfg.seed, &[rng::tag("sw"), step as u64]),
                weights: &cfg.loss,
            };
            let (loss, parts) = supervision.loss(&mut tape, &inputs)?;
            tape.backward(loss)?;
            Ok((grads_of(&tape, model, bound.vars()), parts))
        },
    )
}
