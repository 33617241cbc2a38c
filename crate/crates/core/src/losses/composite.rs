use serde::{Deserialize, Serialize};

use super::{
    l1_loss, msssim, rain_robust_loss, sw_loss, FrozenFeatureStack, LossWeights, MsSsimConfig,
};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// `‖pseudo − label‖₁ + (1 − MS-SSIM(pseudo, label))`.
pub fn clc_loss(tape: &mut Tape, pseudo: Var, label: Var, cfg: &MsSsimConfig) -> Result<Var> {
    let l1 = l1_loss(tape, pseudo, label)?;
    let ms = msssim(tape, pseudo, label, cfg)?;
    let dissim = tape.neg(ms);
    let dissim = tape.add_scalar(dissim, 1.0);
    tape.add(l1, dissim)
}

/// Scalar readings of every loss component, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1_pseudo: f64,
    pub robust: f64,
    pub sw: f64,
}

/// One student batch on a tape: outputs, pseudo-labels and original labels,
/// all `3×H×W`, one entry per distinct scene.
pub struct IasBatch<'a> {
    pub outputs: &'a [Var],
    pub pseudos: &'a [Var],
    pub labels: &'a [Var],
}

/// Information-allocation objective over a batch:
/// `mean_i ℓ1(out_i, pseudo_i) + λ_ori · (robust + λ_sw · mean_i SW(out_i, label_i))`.
///
/// `encoder` is the student's own encoder; `sw_seed` picks this step's
/// random projections.
pub fn ias_loss<E>(
    tape: &mut Tape,
    batch: &IasBatch<'_>,
    encoder: E,
    stack: &FrozenFeatureStack,
    sw_seed: u64,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)>
where
    E: Fn(&mut Tape, Var) -> Result<Var>,
{
    let n = batch.outputs.len();
    if n == 0 || batch.pseudos.len() != n || batch.labels.len() != n {
        return Err(Error::Contract(format!(
            "ias_loss: batch sizes {} / {} / {} must match and be non-zero",
            n,
            batch.pseudos.len(),
            batch.labels.len()
        )));
    }
    let l1 = batch_mean(tape, n, |t, i| {
        l1_loss(t, batch.outputs[i], batch.pseudos[i])
    })?;
    let robust = rain_robust_loss(tape, batch.outputs, batch.labels, encoder, w.tau)?;
    let sw = batch_mean(tape, n, |t, i| {
        sw_loss(
            t,
            batch.outputs[i],
            batch.labels[i],
            stack,
            w.sw_feature_levels,
            w.sw_projection_dim,
            sw_seed,
        )
    })?;
    let sw_weighted = tape.scale(sw, w.lambda_sw);
    let original = tape.add(robust, sw_weighted)?;
    let original = tape.scale(original, w.lambda_ori);
    let total = tape.add(l1, original)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        l1_pseudo: tape.value(l1).item(),
        robust: tape.value(robust).item(),
        sw: tape.value(sw).item(),
    };
    Ok((total, breakdown))
}

pub(crate) fn batch_mean(
    tape: &mut Tape,
    n: usize,
    mut f: impl FnMut(&mut Tape, usize) -> Result<Var>,
) -> Result<Var> {
    let mut acc = f(tape, 0)?;
    for i in 1..n {
        let next = f(tape, i)?;
        acc = tape.add(acc, next)?;
    }
    Ok(tape.scale(acc, 1.0 / n as f64))
}
