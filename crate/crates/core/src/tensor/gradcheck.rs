//! Central-difference gradient oracle.

use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic − cd| / max(|analytic|, |cd|, 1e-8)`,
/// where `cd` is the central difference of `f` with step `h`.
///
/// `f` records a scalar function of its input on the supplied tape.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    Ok(check_coords(&f, x, h, &coords, false)?.max_rel_error)
}

/// Same as [`grad_check`] but only probes `max_coords` coordinates chosen
/// with a seeded sampler; used when `x` is too large for an exhaustive sweep.
pub fn grad_check_sampled<F>(f: F, x: &Tensor, h: f64, max_coords: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords = sample_coords(x.numel(), max_coords, seed);
    Ok(check_coords(&f, x, h, &coords, false)?.max_rel_error)
}

/// Outcome of a kink-aware check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree, i.e. where a relu/clamp
    /// kink lies inside `[x − h, x + h]` and the central difference is not a
    /// derivative estimate.
    pub skipped_kinks: usize,
}

/// Sampled check for piecewise-linear functions. Coordinates whose forward
/// and backward one-sided slopes differ by more than `1e-4` relative (plus a
/// roundoff allowance) are skipped and counted instead of compared; a slope
/// jump below that threshold moves the central difference by less than
/// `5e-5` relative.
pub fn grad_check_piecewise<F>(
    f: F,
    x: &Tensor,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_coords(&f, x, h, &sample_coords(x.numel(), max_coords, seed), true)
}

fn sample_coords(n: usize, max_coords: usize, seed: u64) -> Vec<usize> {
    if max_coords >= n {
        (0..n).collect()
    } else {
        let mut rng = crate::rng::stream(seed, &[crate::rng::tag("grad_check")]);
        let mut c = sample(&mut rng, n, max_coords).into_vec();
        c.sort_unstable();
        c
    }
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    scalar_of(&tape, out)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

fn check_coords<F>(
    f: &F,
    x: &Tensor,
    h: f64,
    coords: &[usize],
    skip_kinks: bool,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Contract(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    let first = eval(f, x)?;
    let second = eval(f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::OracleUnusable(format!(
            "function is not deterministic: {first} vs {second}"
        )));
    }

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(f, &probe)?;
        probe.data_mut()[i] = orig;
        if skip_kinks {
            let (s_up, s_down) = ((up - first) / h, (first - down) / h);
            let roundoff = 64.0 * f64::EPSILON * first.abs().max(up.abs()).max(down.abs()) / h;
            if (s_up - s_down).abs() > 1e-4 * s_up.abs().max(s_down.abs()) + roundoff {
                report.skipped_kinks += 1;
                continue;
            }
        }
        let cd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
