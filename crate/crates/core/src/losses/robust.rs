//! Contrastive feature-level supervision across a batch of distinct scenes.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// InfoNCE over paired feature vectors.
///
/// For each `i`, the positive pair is `(u_i, v_i)`; the negatives are the
/// features of every other sample `j ≠ i`, from both sides. The denominator
/// does not contain the positive term, so the value can be negative. Returns
/// `Σ_i (L_vu_i + L_uv_i) / N`.
pub fn rain_robust_from_features(tape: &mut Tape, u: &[Var], v: &[Var], tau: f64) -> Result<Var> {
    let n = u.len();
    if n != v.len() {
        return Err(Error::Contract(format!(
            "rain_robust: {} output features vs {} label features",
            n,
            v.len()
        )));
    }
    if n < 2 {
        return Err(Error::Contract(format!(
            "rain_robust needs N ≥ 2 samples to form negatives, got {n}"
        )));
    }
    let inv_tau = 1.0 / tau;
    let mut terms = Vec::with_capacity(2 * n);
    for i in 0..n {
        for (anchor, own, other) in [(u, v, u), (v, u, v)] {
            // anchor_i against its positive and the negatives of every j ≠ i
            let pos = tape.cosine_similarity(anchor[i], own[i])?;
            let mut den: Option<Var> = None;
            for j in (0..n).filter(|&j| j != i) {
                for target in [other[j], own[j]] {
                    let s = tape.cosine_similarity(anchor[i], target)?;
                    let scaled = tape.scale(s, inv_tau);
                    let e = tape.exp(scaled);
                    den = Some(match den {
                        None => e,
                        Some(acc) => tape.add(acc, e)?,
                    });
                }
            }
            let log_den = tape.log(den.expect("n ≥ 2"));
            let pos_scaled = tape.scale(pos, inv_tau);
            terms.push(tape.sub(log_den, pos_scaled)?);
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Rain-robust loss with features taken from `encoder`, global-average
/// pooled to one vector per image.
pub fn rain_robust_loss<E>(
    tape: &mut Tape,
    outputs: &[Var],
    labels: &[Var],
    encoder: E,
    tau: f64,
) -> Result<Var>
where
    E: Fn(&mut Tape, Var) -> Result<Var>,
{
    if outputs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "rain_robust: {} outputs vs {} labels",
            outputs.len(),
            labels.len()
        )));
    }
    let pooled = |tape: &mut Tape, x: Var| -> Result<Var> {
        let f = encoder(tape, x)?;
        tape.global_avg_pool(f)
    };
    let mut u = Vec::with_capacity(outputs.len());
    let mut v = Vec::with_capacity(labels.len());
    for (&o, &l) in outputs.iter().zip(labels) {
        u.push(pooled(tape, o)?);
        v.push(pooled(tape, l)?);
    }
    rain_robust_from_features(tape, &u, &v, tau)
}
