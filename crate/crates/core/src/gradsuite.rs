//! Finite-difference suite over every autodiff op and every training loss,
//! run on seeded random inputs. Backs the `grad-check` subcommand.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    clc_loss, ias_loss, l1_loss, msssim, projection_matrix, rain_robust_from_features,
    rain_robust_loss, sliced_wasserstein, sw_loss, FrozenFeatureStack, IasBatch, LossWeights,
    MsSsimConfig,
};
use crate::rng;
use crate::tensor::{grad_check_piecewise, grad_check_sampled, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Primitive,
    Loss,
}

impl CheckKind {
    pub fn tolerance(self) -> f64 {
        match self {
            CheckKind::Primitive => 1e-4,
            CheckKind::Loss => 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub kind: CheckKind,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a relu or sort kink lies inside the
    /// finite-difference step (only for checks that allow it).
    pub skipped_kinks: usize,
}

impl CheckResult {
    pub fn tolerance(&self) -> f64 {
        self.kind.tolerance()
    }

    pub fn passed(&self) -> bool {
        let probed = (self.checked + self.skipped_kinks).max(1) as f64;
        self.max_rel_error <= self.tolerance()
            && self.skipped_kinks as f64 <= MAX_SKIP_FRACTION * probed
    }
}

/// Largest share of probed coordinates a kink-aware check may skip.
pub const MAX_SKIP_FRACTION: f64 = 0.05;

type ScalarFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

struct Case {
    name: &'static str,
    kind: CheckKind,
    x: Tensor,
    f: ScalarFn,
    h: f64,
    /// Probe this many sampled coordinates instead of all of them.
    sampled: Option<usize>,
    /// The function contains relu or sort kinks that random inputs cannot
    /// avoid; coordinates straddling one are skipped and counted.
    kinked: bool,
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Uniform in [-1, 1] but at least `gap` away from zero.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.random_range(-1.0..1.0);
        if v.abs() < gap {
            v.signum() * gap + v
        } else {
            v
        }
    })
}

/// Smooth random image and a correlated partner, both in [0, 1].
fn image_pair(r: &mut ChaCha8Rng, h: usize, w: usize) -> (Tensor, Tensor) {
    let (fx, fy, ph) = (
        r.random_range(0.05..0.2),
        r.random_range(0.05..0.2),
        r.random_range(0.0..6.0),
    );
    let a = Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        0.5 + 0.3 * (x as f64 * fx + y as f64 * fy + ph + c as f64).sin()
            + 0.1 * r.random_range(-1.0..1.0)
    });
    let b = Tensor::from_fn(&[3, h, w], |i| {
        (a.data()[i] + 0.08 * r.random_range(-1.0..1.0)).clamp(0.0, 1.0)
    });
    (a, b)
}

/// Reduce an op output to a scalar with fixed random weights so every output
/// coordinate carries a distinct gradient.
fn weighted(op: ScalarFn, weights_seed: u64) -> ScalarFn {
    Box::new(move |t, x| {
        let out = op(t, x)?;
        let shape = t.shape(out).to_vec();
        let mut r = rng::stream(weights_seed, &[rng::tag("weights")]);
        let c = t.constant(uniform(&mut r, &shape, -1.0, 1.0));
        let prod = t.mul(out, c)?;
        Ok(t.sum(prod))
    })
}

fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng::stream(seed, &[rng::tag("primitives")]);
    let s = [3, 4, 4];
    let other = uniform(&mut r, &s, -1.0, 1.0);
    let positive = uniform(&mut r, &s, 0.5, 2.0);
    let mut ops: Vec<(&'static str, Tensor, ScalarFn)> = Vec::new();

    let o = other.clone();
    ops.push((
        "add",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(move |t, x| {
            let y = t.constant(o.clone());
            t.add(y, x)
        }),
    ));
    let o = other.clone();
    ops.push((
        "sub",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(move |t, x| {
            let y = t.constant(o.clone());
            let a = t.sub(x, y)?;
            let b = t.sub(y, x)?;
            t.mul(a, b)
        }),
    ));
    let o = other.clone();
    ops.push((
        "mul",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(move |t, x| {
            let y = t.constant(o.clone());
            let xy = t.mul(x, y)?;
            let m = t.mean(x);
            t.mul(xy, m)
        }),
    ));
    let (p, o) = (positive.clone(), other.clone());
    ops.push((
        "div",
        uniform(&mut r, &s, 0.5, 2.0),
        Box::new(move |t, x| {
            let (py, oy) = (t.constant(p.clone()), t.constant(o.clone()));
            let a = t.div(x, py)?;
            let b = t.div(oy, x)?;
            t.add(a, b)
        }),
    ));
    ops.push((
        "abs",
        away_from_zero(&mut r, &s, 1e-2),
        Box::new(|t, x| Ok(t.abs(x))),
    ));
    ops.push((
        "exp",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(|t, x| Ok(t.exp(x))),
    ));
    ops.push((
        "log",
        uniform(&mut r, &s, 0.2, 2.0),
        Box::new(|t, x| Ok(t.log(x))),
    ));
    ops.push((
        "relu",
        away_from_zero(&mut r, &s, 1e-2),
        Box::new(|t, x| Ok(t.relu(x))),
    ));
    let base = uniform(&mut r, &s, 0.0, 0.05);
    ops.push((
        "clamp01",
        Tensor::from_fn(&s, |i| [-0.4, 0.3, 0.7, 1.4][i % 4] + base.data()[i]),
        Box::new(|t, x| Ok(t.clamp01(x))),
    ));
    ops.push((
        "pow_scalar",
        uniform(&mut r, &s, 0.2, 2.0),
        Box::new(|t, x| Ok(t.pow_scalar(x, 0.37))),
    ));
    ops.push((
        "scale_add_scalar",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(|t, x| {
            let y = t.add_scalar(x, 0.3);
            let y = t.scale(y, -2.5);
            let n = t.neg(x);
            t.mul(y, n)
        }),
    ));
    ops.push((
        "sum_mean",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(|t, x| {
            let e = t.exp(x);
            let a = t.sum(e);
            let sq = t.mul(x, x)?;
            let b = t.mean(sq);
            t.mul(a, b)
        }),
    ));
    let w = uniform(&mut r, &[4, 5], -1.0, 1.0);
    let a = uniform(&mut r, &[5, 12], -1.0, 1.0);
    ops.push((
        "reshape_matmul",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(move |t, x| {
            let x2 = t.reshape(x, &[12, 4])?;
            let (wv, av) = (t.constant(w.clone()), t.constant(a.clone()));
            let left = t.matmul(x2, wv)?;
            t.matmul(av, left)
        }),
    ));
    let o = uniform(&mut r, &[2, 4, 4], -1.0, 1.0);
    ops.push((
        "concat_channels",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(move |t, x| {
            let y = t.constant(o.clone());
            let sq = t.mul(x, x)?;
            t.concat_channels(&[y, x, sq])
        }),
    ));
    ops.push((
        "avgpool2",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(|t, x| t.avgpool2(x)),
    ));
    ops.push((
        "upsample_nearest2",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(|t, x| t.upsample_nearest2(x)),
    ));
    ops.push((
        "global_avg_pool",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(|t, x| t.global_avg_pool(x)),
    ));
    let o = other.clone();
    ops.push((
        "cosine_similarity",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(move |t, x| {
            let y = t.constant(o.clone());
            let c1 = t.cosine_similarity(x, y)?;
            let c2 = t.cosine_similarity(x, x)?;
            t.add(c1, c2)
        }),
    ));
    ops.push((
        "gaussian_blur",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(|t, x| t.gaussian_blur(x, 3, 1.0)),
    ));
    let (wk, bk) = (
        uniform(&mut r, &[2, 3, 3, 3], -1.0, 1.0),
        uniform(&mut r, &[2], -1.0, 1.0),
    );
    ops.push((
        "conv2d_input",
        uniform(&mut r, &s, -1.0, 1.0),
        Box::new(move |t, x| {
            let (w, b) = (t.constant(wk.clone()), t.constant(bk.clone()));
            let a = t.conv2d(x, w, Some(b), 1, 1)?;
            let strided = t.conv2d(x, w, None, 2, 1)?;
            let up = t.upsample_nearest2(strided)?;
            t.add(a, up)
        }),
    ));
    let inp = uniform(&mut r, &s, -1.0, 1.0);
    ops.push((
        "conv2d_weight",
        uniform(&mut r, &[2, 3, 3, 3], -1.0, 1.0),
        Box::new(move |t, w| {
            let x = t.constant(inp.clone());
            t.conv2d(x, w, None, 1, 1)
        }),
    ));
    let (inp, wk) = (
        uniform(&mut r, &s, -1.0, 1.0),
        uniform(&mut r, &[2, 3, 1, 1], -1.0, 1.0),
    );
    ops.push((
        "conv2d_bias",
        uniform(&mut r, &[2], -1.0, 1.0),
        Box::new(move |t, b| {
            let (x, w) = (t.constant(inp.clone()), t.constant(wk.clone()));
            t.conv2d(x, w, Some(b), 1, 0)
        }),
    ));
    // Distinct values 0.05 apart, so no tie lies within the step.
    let mut order: Vec<usize> = (0..48).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    ops.push((
        "sort_lastdim",
        Tensor::from_fn(&s, |i| order[i] as f64 * 0.05 - 1.0),
        Box::new(|t, x| Ok(t.sort_lastdim(x).0)),
    ));

    ops.into_iter()
        .map(|(name, x, op)| Case {
            name,
            kind: CheckKind::Primitive,
            x,
            f: weighted(op, rng::derive(seed, &[rng::tag(name)])),
            h: 1e-5,
            sampled: None,
            kinked: false,
        })
        .collect()
}

fn toy_encoder(weights: Tensor) -> impl Fn(&mut Tape, Var) -> Result<Var> {
    move |t: &mut Tape, x: Var| {
        let w = t.constant(weights.clone());
        let c = t.conv2d(x, w, None, 1, 1)?;
        Ok(t.relu(c))
    }
}

fn loss_cases(seed: u64) -> Vec<Case> {
    let mut r = rng::stream(seed, &[rng::tag("losses")]);
    let mut cases = Vec::new();
    let loss = |name, x, f: ScalarFn, h, sampled, kinked| Case {
        name,
        kind: CheckKind::Loss,
        x,
        f,
        h,
        sampled,
        kinked,
    };

    let x = uniform(&mut r, &[3, 6, 6], 0.0, 1.0);
    let shift = away_from_zero(&mut r, &[3, 6, 6], 1e-2).map(|v| 0.2 * v);
    let target = Tensor::from_fn(x.shape(), |i| x.data()[i] + shift.data()[i]);
    cases.push(loss(
        "l1",
        x,
        Box::new(move |t, v| {
            let b = t.constant(target.clone());
            l1_loss(t, v, b)
        }),
        1e-5,
        None,
        false,
    ));

    let ms = MsSsimConfig::default();
    let (a, b) = image_pair(&mut r, 44, 44);
    let (ms1, b1) = (ms.clone(), b.clone());
    cases.push(loss(
        "msssim",
        a.clone(),
        Box::new(move |t, v| {
            let bv = t.constant(b1.clone());
            msssim(t, v, bv, &ms1)
        }),
        1e-4,
        Some(48),
        false,
    ));
    cases.push(loss(
        "clc",
        a,
        Box::new(move |t, v| {
            let bv = t.constant(b.clone());
            clc_loss(t, v, bv, &ms)
        }),
        1e-4,
        Some(48),
        false,
    ));

    let (c, n) = (6, 20);
    let v_feat = uniform(&mut r, &[c, n], -1.0, 1.0);
    let proj = projection_matrix(4, c, rng::derive(seed, &[1]));
    cases.push(loss(
        "sliced_wasserstein",
        uniform(&mut r, &[c, n], -1.0, 1.0),
        Box::new(move |t, u| {
            let (vv, m) = (t.constant(v_feat.clone()), t.constant(proj.clone()));
            sliced_wasserstein(t, u, vv, m)
        }),
        1e-5,
        None,
        false,
    ));

    let stack = FrozenFeatureStack::new(17);
    let (a, b) = image_pair(&mut r, 16, 16);
    let sw_seed = rng::derive(seed, &[2]);
    cases.push(loss(
        "sw",
        a,
        Box::new(move |t, v| {
            let bv = t.constant(b.clone());
            sw_loss(t, v, bv, &stack, 3, 64, sw_seed)
        }),
        1e-5,
        Some(64),
        true,
    ));

    let feats: Vec<Tensor> = (0..6).map(|_| uniform(&mut r, &[8], -1.0, 1.0)).collect();
    cases.push(loss(
        "rain_robust",
        feats[0].clone(),
        Box::new(move |t, x| {
            let c: Vec<Var> = feats.iter().map(|f| t.constant(f.clone())).collect();
            rain_robust_from_features(t, &[x, c[1], c[2]], &c[3..6], 0.25)
        }),
        1e-5,
        None,
        false,
    ));

    let enc = uniform(&mut r, &[4, 3, 3, 3], -0.5, 0.5);
    let imgs: Vec<Tensor> = (0..4)
        .map(|_| uniform(&mut r, &[3, 6, 6], 0.0, 1.0))
        .collect();
    let enc1 = enc.clone();
    cases.push(loss(
        "rain_robust_encoder",
        imgs[0].clone(),
        Box::new(move |t, x| {
            let c: Vec<Var> = imgs.iter().map(|i| t.constant(i.clone())).collect();
            rain_robust_loss(t, &[x, c[1]], &c[2..4], toy_encoder(enc1.clone()), 0.25)
        }),
        1e-5,
        None,
        true,
    ));

    let w = LossWeights::default();
    let stack = FrozenFeatureStack::new(w.feature_stack_seed);
    let imgs: Vec<Tensor> = (0..6)
        .map(|_| uniform(&mut r, &[3, 8, 8], 0.0, 1.0))
        .collect();
    let ias_seed = rng::derive(seed, &[3]);
    cases.push(loss(
        "ias",
        imgs[0].clone(),
        Box::new(move |t, x| {
            let c: Vec<Var> = imgs.iter().map(|i| t.constant(i.clone())).collect();
            let outs = [x, c[1]];
            let batch = IasBatch {
                outputs: &outs,
                pseudos: &c[2..4],
                labels: &c[4..6],
            };
            Ok(ias_loss(t, &batch, toy_encoder(enc.clone()), &stack, ias_seed, &w)?.0)
        }),
        1e-5,
        None,
        true,
    ));
    cases
}

/// Run every check over `seeds` seeded inputs; one result per check, worst
/// error over seeds.
pub fn run_grad_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut results: Vec<CheckResult> = Vec::new();
    for seed in 0..seeds {
        for case in primitive_cases(seed).into_iter().chain(loss_cases(seed)) {
            let coords = case.sampled.unwrap_or(case.x.numel());
            let (err, checked, skipped) = if case.kinked {
                let r = grad_check_piecewise(&case.f, &case.x, case.h, coords, seed)?;
                (r.max_rel_error, r.checked, r.skipped_kinks)
            } else {
                let e = grad_check_sampled(&case.f, &case.x, case.h, coords, seed)?;
                (e, coords.min(case.x.numel()), 0)
            };
            match results.iter_mut().find(|r| r.name == case.name) {
                Some(r) => {
                    r.max_rel_error = r.max_rel_error.max(err);
                    r.checked += checked;
                    r.skipped_kinks += skipped;
                }
                None => results.push(CheckResult {
                    name: case.name,
                    kind: case.kind,
                    seeds,
                    max_rel_error: err,
                    checked,
                    skipped_kinks: skipped,
                }),
            }
        }
    }
    Ok(results)
}
