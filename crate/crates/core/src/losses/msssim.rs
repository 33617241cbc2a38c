use serde::{Deserialize, Serialize};

use super::renormalized_weights;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Constants of the multi-scale structural similarity index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// One exponent per scale, finest first.
    pub scale_weights: Vec<f64>,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            scale_weights: renormalized_weights(3),
        }
    }
}

impl MsSsimConfig {
    pub fn scales(&self) -> usize {
        self.scale_weights.len()
    }

    /// Smallest height/width that survives every downsampling step with a
    /// full window left.
    pub fn min_size(&self) -> usize {
        (1usize << (self.scales() - 1)) * self.window
    }

    pub fn c1(&self) -> f64 {
        self.k1 * self.k1
    }

    pub fn c2(&self) -> f64 {
        self.k2 * self.k2
    }
}

/// Multi-scale SSIM of two `C×H×W` images with unit data range.
///
/// Contrast-structure means are taken at every scale, the luminance term only
/// at the coarsest; each factor is clipped at zero before being raised to its
/// scale exponent.
pub fn msssim(tape: &mut Tape, a: Var, b: Var, cfg: &MsSsimConfig) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "msssim: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    let (_, h, w) = tape.value(a).chw()?;
    let min = cfg.min_size();
    if h < min || w < min {
        return Err(Error::Dimension(format!(
            "msssim with {} scales needs images of at least {min}×{min}, got {h}×{w}",
            cfg.scales()
        )));
    }
    let (mut x, mut y) = (a, b);
    let mut result: Option<Var> = None;
    let last = cfg.scales() - 1;
    for (s, &weight) in cfg.scale_weights.iter().enumerate() {
        let (cs_map, l_map) = ssim_maps(tape, x, y, cfg)?;
        let value = if s == last {
            let full = tape.mul(l_map, cs_map)?;
            tape.mean(full)
        } else {
            tape.mean(cs_map)
        };
        let factor = tape.pow_scalar(value, weight);
        result = Some(match result {
            None => factor,
            Some(acc) => tape.mul(acc, factor)?,
        });
        if s != last {
            x = tape.avgpool2(x)?;
            y = tape.avgpool2(y)?;
        }
    }
    Ok(result.expect("at least one scale"))
}

/// Single-scale SSIM: mean over channels and valid window positions of
/// luminance × contrast-structure. Not clipped, so it can be negative.
pub fn ssim_index(tape: &mut Tape, a: Var, b: Var, cfg: &MsSsimConfig) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "ssim: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    let (_, h, w) = tape.value(a).chw()?;
    if h < cfg.window || w < cfg.window {
        return Err(Error::Dimension(format!(
            "ssim needs images of at least {0}×{0}, got {h}×{w}",
            cfg.window
        )));
    }
    let (cs_map, l_map) = ssim_maps(tape, a, b, cfg)?;
    let full = tape.mul(l_map, cs_map)?;
    Ok(tape.mean(full))
}

/// Contrast-structure and luminance maps at one scale.
fn ssim_maps(tape: &mut Tape, x: Var, y: Var, cfg: &MsSsimConfig) -> Result<(Var, Var)> {
    let blur = |t: &mut Tape, v: Var| t.gaussian_blur(v, cfg.window, cfg.sigma);
    let mu_x = blur(tape, x)?;
    let mu_y = blur(tape, y)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let e_xx = blur(tape, xx)?;
    let e_yy = blur(tape, yy)?;
    let e_xy = blur(tape, xy)?;
    let mu_xx = tape.mul(mu_x, mu_x)?;
    let mu_yy = tape.mul(mu_y, mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(e_xx, mu_xx)?;
    let var_y = tape.sub(e_yy, mu_yy)?;
    let cov = tape.sub(e_xy, mu_xy)?;

    let cov2 = tape.scale(cov, 2.0);
    let cs_num = tape.add_scalar(cov2, cfg.c2());
    let var_sum = tape.add(var_x, var_y)?;
    let cs_den = tape.add_scalar(var_sum, cfg.c2());
    let cs_map = tape.div(cs_num, cs_den)?;

    let mu2 = tape.scale(mu_xy, 2.0);
    let l_num = tape.add_scalar(mu2, cfg.c1());
    let mu_sum = tape.add(mu_xx, mu_yy)?;
    let l_den = tape.add_scalar(mu_sum, cfg.c1());
    let l_map = tape.div(l_num, l_den)?;
    Ok((cs_map, l_map))
}
