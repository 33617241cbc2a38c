//! Image quality metrics, a binned mutual-information estimator, evaluation
//! reports and the training-dynamics MI curve.

mod chart;
mod curve;
mod report;

use crate::error::{Error, Result};
use crate::losses::{ssim_index, MsSsimConfig};
use crate::tensor::{Tape, Tensor};

pub use chart::render_line_chart;
pub use curve::{mi_curve, write_mi_csv, MiPoint};
pub use report::{
    eval_report, EvalReport, IdentityRestorer, QualityStats, Restorer, SectionReport,
};

pub const PSNR_CAP: f64 = 99.0;
pub const MI_BINS: usize = 64;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `10·log10(1/MSE)` for unit-range images, capped at 99 dB.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Single-scale SSIM (Gaussian window 11, σ 1.5) averaged over channels and
/// valid positions.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let s = ssim_index(&mut tape, av, bv, &MsSsimConfig::default())?;
    Ok(tape.value(s).item())
}

/// Grayscale view: channel mean for a `C×H×W` tensor, the flat data otherwise.
fn luma(t: &Tensor) -> Vec<f64> {
    match *t.shape() {
        [c, h, w] => {
            let plane = h * w;
            (0..plane)
                .map(|i| (0..c).map(|k| t.data()[k * plane + i]).sum::<f64>() / c as f64)
                .collect()
        }
        _ => t.data().to_vec(),
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Plug-in mutual information (nats) of the joint histogram of co-located
/// luma intensities in `[0, 1]` with `bins` equal-width bins per axis.
pub fn mutual_information(x: &Tensor, y: &Tensor, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!(
            "mutual information needs ≥ 2 bins, got {bins}"
        )));
    }
    let (lx, ly) = (luma(x), luma(y));
    if lx.len() != ly.len() || lx.is_empty() {
        return Err(Error::Dimension(format!(
            "mutual information needs equal, non-zero sample counts, got {} and {}",
            lx.len(),
            ly.len()
        )));
    }
    let mut joint = vec![0u64; bins * bins];
    for (a, b) in lx.iter().zip(&ly) {
        joint[bin_of(*a, bins) * bins + bin_of(*b, bins)] += 1;
    }
    Ok(mi_from_joint(&joint, bins))
}

/// MI of a joint count table laid out row-major as `bins × bins`.
pub fn mi_from_joint(joint: &[u64], bins: usize) -> f64 {
    let n = joint.iter().sum::<u64>() as f64;
    let mut px = vec![0.0; bins];
    let mut py = vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j] as f64;
            px[i] += c;
            py[j] += c;
        }
    }
    let mut terms = Vec::new();
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j] as f64;
            if c > 0.0 {
                // p(x,y) log(p(x,y) / (p(x) p(y))) with counts: c/n · ln(c·n / (cx·cy))
                terms.push(c / n * (c * n / (px[i] * py[j])).ln());
            }
        }
    }
    // Summing in sorted order makes the result exactly invariant to
    // transposition and to relabelling of bins.
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    mi.max(0.0)
}
