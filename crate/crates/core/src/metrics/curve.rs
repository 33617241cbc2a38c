//! Mutual information between the model output and its input / target over
//! a sequence of training checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mutual_information, render_line_chart, Restorer, MI_BINS};
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::load_checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiPoint {
    pub epoch: usize,
    /// Mean over test scenes of MI(output, degraded center frame).
    pub mi_output_input: f64,
    /// Mean over test scenes of MI(output, label).
    pub mi_output_target: f64,
}

/// Evaluate every `(epoch, checkpoint)` on the test split and write
/// `mi_curve.csv` and `mi_curve.png` (blue: output–input, red:
/// output–target) into `out_dir`.
pub fn mi_curve(
    checkpoints: &[(usize, PathBuf)],
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<Vec<MiPoint>> {
    if checkpoints.len() < 2 {
        return Err(Error::Contract(format!(
            "mi-curve needs at least 2 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    let test = dataset.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Contract(
            "mi-curve needs a non-empty test split".into(),
        ));
    }
    let mut points = Vec::with_capacity(checkpoints.len());
    for (epoch, path) in checkpoints {
        let model = load_checkpoint(path)?;
        let (mut mi_in, mut mi_tgt) = (0.0, 0.0);
        for &i in &test {
            let s = dataset.sample(i);
            let out = model.restore(&s.frames)?;
            mi_in += mutual_information(&out, s.center(), MI_BINS)?;
            mi_tgt += mutual_information(&out, &s.label, MI_BINS)?;
        }
        let n = test.len() as f64;
        points.push(MiPoint {
            epoch: *epoch,
            mi_output_input: mi_in / n,
            mi_output_target: mi_tgt / n,
        });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_mi_csv(&out_dir.join("mi_curve.csv"), &points)?;
    let series = vec![
        (
            points
                .iter()
                .map(|p| (p.epoch as f64, p.mi_output_input))
                .collect(),
            [31, 119, 180],
        ),
        (
            points
                .iter()
                .map(|p| (p.epoch as f64, p.mi_output_target))
                .collect(),
            [214, 39, 40],
        ),
    ];
    render_line_chart(&out_dir.join("mi_curve.png"), &series, 640, 400)?;
    Ok(points)
}

pub fn write_mi_csv(path: &Path, points: &[MiPoint]) -> Result<()> {
    let mut text = String::from("epoch,mi_output_input,mi_output_target\n");
    for p in points {
        writeln!(
            text,
            "{},{},{}",
            p.epoch, p.mi_output_input, p.mi_output_target
        )
        .expect("write to String");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
