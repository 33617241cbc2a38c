//! Sliced Wasserstein distance between feature distributions.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

/// Frozen random convolutional feature extractor: three stages of
/// conv3×3 → relu → avgpool2 with 16, 32 and 64 channels.
///
/// Weights are drawn once from a seeded Gaussian and never trained.
#[derive(Clone, Debug)]
pub struct FrozenFeatureStack {
    seed: u64,
    weights: Vec<Tensor>,
}

impl FrozenFeatureStack {
    pub const CHANNELS: [usize; 3] = [16, 32, 64];

    pub fn new(seed: u64) -> Self {
        let mut weights = Vec::with_capacity(3);
        let mut c_in = 3;
        for (level, &c_out) in Self::CHANNELS.iter().enumerate() {
            let mut r = rng::stream(seed, &[rng::tag("feature_stack"), level as u64]);
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            let w = Tensor::from_fn(&[c_out, c_in, 3, 3], |_| {
                let z: f64 = StandardNormal.sample(&mut r);
                z * std
            });
            weights.push(w);
            c_in = c_out;
        }
        FrozenFeatureStack { seed, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// One feature map per stage, for the first `levels` stages.
    pub fn features(&self, tape: &mut Tape, image: Var, levels: usize) -> Result<Vec<Var>> {
        let mut x = image;
        let mut out = Vec::with_capacity(levels);
        for w in self.weights.iter().take(levels) {
            let wv = tape.constant(w.clone());
            let c = tape.conv2d(x, wv, None, 1, 1)?;
            let r = tape.relu(c);
            x = tape.avgpool2(r)?;
            out.push(x);
        }
        Ok(out)
    }
}

/// Gaussian `rows × cols` matrix with unit-norm rows.
pub fn projection_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[rng::tag("sw_projection")]);
    let mut m = Tensor::from_fn(&[rows, cols], |_| StandardNormal.sample(&mut r));
    for row in m.data_mut().chunks_mut(cols) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    m
}

/// Project both `C×H×W` (or `C×L`) feature maps to `C'×HW`, sort every row
/// and return the mean absolute difference between the sorted rows.
pub fn sliced_wasserstein(tape: &mut Tape, u: Var, v: Var, projection: Var) -> Result<Var> {
    if tape.shape(u) != tape.shape(v) {
        return Err(Error::Dimension(format!(
            "sliced_wasserstein: feature shapes {:?} and {:?} differ",
            tape.shape(u),
            tape.shape(v)
        )));
    }
    let shape = tape.shape(u).to_vec();
    let c = shape[0];
    let samples: usize = shape[1..].iter().product();
    match *tape.shape(projection) {
        [_, cols] if cols == c => {}
        ref s => {
            return Err(Error::Dimension(format!(
                "sliced_wasserstein: projection {s:?} does not have {c} columns"
            )))
        }
    }
    let ur = tape.reshape(u, &[c, samples])?;
    let vr = tape.reshape(v, &[c, samples])?;
    let up = tape.matmul(projection, ur)?;
    let vp = tape.matmul(projection, vr)?;
    let (us, _) = tape.sort_lastdim(up);
    let (vs, _) = tape.sort_lastdim(vp);
    let d = tape.sub(us, vs)?;
    let ad = tape.abs(d);
    Ok(tape.mean(ad))
}

/// Sum over feature levels of the sliced Wasserstein distance between the
/// frozen features of `output` and `label`. Each level draws its own
/// projection from `seed`, with `min(C, projection_dim)` rows.
pub fn sw_loss(
    tape: &mut Tape,
    output: Var,
    label: Var,
    stack: &FrozenFeatureStack,
    levels: usize,
    projection_dim: usize,
    seed: u64,
) -> Result<Var> {
    if tape.shape(output) != tape.shape(label) {
        return Err(Error::Dimension(format!(
            "sw_loss: shapes {:?} and {:?} differ",
            tape.shape(output),
            tape.shape(label)
        )));
    }
    let fo = stack.features(tape, output, levels)?;
    let fl = stack.features(tape, label, levels)?;
    let mut total: Option<Var> = None;
    for (level, (u, v)) in fo.into_iter().zip(fl).enumerate() {
        let c = tape.shape(u)[0];
        let m = projection_matrix(c.min(projection_dim), c, rng::derive(seed, &[level as u64]));
        let mv = tape.constant(m);
        let d = sliced_wasserstein(tape, u, v, mv)?;
        total = Some(match total {
            None => d,
            Some(acc) => tape.add(acc, d)?,
        });
    }
    total.ok_or_else(|| Error::Config("sw_loss needs at least one feature level".into()))
}
