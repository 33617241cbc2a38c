//! Per-weather evaluation report on the test split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{psnr, ssim};
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::{ModelGraph, Role};
use crate::tensor::Tensor;
use crate::train::frame_window;

/// Anything that turns a scene's frames into a restored image.
pub trait Restorer {
    fn restore(&self, frames: &[Tensor]) -> Result<Tensor>;
}

impl Restorer for ModelGraph {
    /// The de-weathering model sees the center frame only; the label
    /// constructor sees the centered window of frames it was built for.
    fn restore(&self, frames: &[Tensor]) -> Result<Tensor> {
        match self.role() {
            Role::Deweather => self.infer(std::slice::from_ref(&frames[frames.len() / 2])),
            Role::Clc => self.infer(frame_window(frames, self.arch().frames_n)?),
        }
    }
}

/// Returns the center frame unchanged.
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn restore(&self, frames: &[Tensor]) -> Result<Tensor> {
        Ok(frames[frames.len() / 2].clone())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub scenes: usize,
    pub psnr_ideal: f64,
    pub ssim_ideal: f64,
    pub psnr_label: f64,
    pub ssim_label: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionReport {
    pub per_weather: BTreeMap<String, QualityStats>,
    pub overall: QualityStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_scenes: usize,
    /// Degraded center frame, for reference.
    pub input: SectionReport,
    pub student: SectionReport,
    pub pseudo_label: Option<SectionReport>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    sums: [f64; 4],
}

impl Acc {
    fn push(&mut self, v: [f64; 4]) {
        self.n += 1;
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
    }

    fn stats(&self) -> QualityStats {
        let m = |i: usize| self.sums[i] / self.n as f64;
        QualityStats {
            scenes: self.n,
            psnr_ideal: m(0),
            ssim_ideal: m(1),
            psnr_label: m(2),
            ssim_label: m(3),
        }
    }
}

fn section(rows: &[(String, [f64; 4])]) -> SectionReport {
    let mut per: BTreeMap<String, Acc> = BTreeMap::new();
    let mut all = Acc::default();
    for (weather, v) in rows {
        per.entry(weather.clone()).or_default().push(*v);
        all.push(*v);
    }
    SectionReport {
        per_weather: per.into_iter().map(|(k, a)| (k, a.stats())).collect(),
        overall: all.stats(),
    }
}

fn scores(out: &Tensor, ideal: &Tensor, label: &Tensor) -> Result<[f64; 4]> {
    Ok([
        psnr(out, ideal)?,
        ssim(out, ideal)?,
        psnr(out, label)?,
        ssim(out, label)?,
    ])
}

/// Mean PSNR/SSIM against the hidden ideal and the imperfect label, per
/// weather type and overall, over the test split of an evaluation-mode
/// dataset.
pub fn eval_report(
    student: &dyn Restorer,
    clc: Option<&dyn Restorer>,
    dataset: &Dataset,
) -> Result<EvalReport> {
    let test = dataset.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Contract(
            "evaluation needs a non-empty test split".into(),
        ));
    }
    let (mut input, mut out, mut pseudo) = (Vec::new(), Vec::new(), Vec::new());
    for i in test.iter().copied() {
        let s = dataset.sample(i);
        let ideal = s.ideal()?;
        let w = s.spec.weather.clone();
        input.push((w.clone(), scores(s.center(), ideal, &s.label)?));
        out.push((
            w.clone(),
            scores(&student.restore(&s.frames)?, ideal, &s.label)?,
        ));
        if let Some(c) = clc {
            pseudo.push((w, scores(&c.restore(&s.frames)?, ideal, &s.label)?));
        }
    }
    Ok(EvalReport {
        test_scenes: test.len(),
        input: section(&input),
        student: section(&out),
        pseudo_label: clc.map(|_| section(&pseudo)),
    })
}
