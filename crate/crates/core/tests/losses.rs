//! Worked examples, oracles and invariants for every training loss.

use std::f64::consts::LN_2;

use impsup::losses::{
    clc_loss, ias_loss, l1_loss, msssim, projection_matrix, rain_robust_from_features,
    rain_robust_loss, renormalized_weights, sliced_wasserstein, sw_loss, FrozenFeatureStack,
    IasBatch, LossWeights, MsSsimConfig,
};
use impsup::tensor::{grad_check, grad_check_sampled, Tape, Tensor, Var};
use impsup::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_image(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

/// Smooth random image plus a correlated, slightly perturbed partner.
fn correlated_pair(seed: u64, c: usize, h: usize, w: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy, ph): (f64, f64, f64) = (
        rng.random_range(0.05..0.2),
        rng.random_range(0.05..0.2),
        rng.random_range(0.0..6.0),
    );
    let a = Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        0.5 + 0.3 * ((x as f64 * fx + y as f64 * fy + ph + ch as f64).sin())
            + 0.1 * rng.random_range(-1.0..1.0)
    });
    let b = Tensor::from_fn(&[c, h, w], |i| {
        (a.data()[i] + 0.08 * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0)
    });
    (a, b)
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item()
}

// ---------------------------------------------------------------------------
// Scalar MS-SSIM reference: direct 2-D window sums, no separable passes and
// no tape. Used to freeze expected values for the tensor implementation.

fn ref_window(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let half = (size / 2) as f64;
    let mut w = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - half, j as f64 - half);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    w.iter_mut().flatten().for_each(|v| *v /= total);
    w
}

/// Returns (mean cs, mean ssim) over all valid window positions of all channels.
fn ref_ssim_terms(a: &Tensor, b: &Tensor) -> (f64, f64) {
    let (c, h, w) = a.chw().unwrap();
    let win = ref_window(11, 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut cs_sum, mut ssim_sum, mut count) = (0.0, 0.0, 0.0);
    for ch in 0..c {
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let idx = (ch * h + y + i) * w + x + j;
                        let (p, q, g) = (a.data()[idx], b.data()[idx], win[i][j]);
                        mx += g * p;
                        my += g * q;
                        sxx += g * p * p;
                        syy += g * q * q;
                        sxy += g * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                let cs = (2.0 * cov + c2) / (vx + vy + c2);
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                cs_sum += cs;
                ssim_sum += cs * l;
                count += 1.0;
            }
        }
    }
    (cs_sum / count, ssim_sum / count)
}

fn ref_pool(t: &Tensor) -> Tensor {
    let (c, h, w) = t.chw().unwrap();
    Tensor::from_fn(&[c, h / 2, w / 2], |i| {
        let (ch, y, x) = (i / (h / 2 * (w / 2)), (i / (w / 2)) % (h / 2), i % (w / 2));
        let at = |yy: usize, xx: usize| t.data()[(ch * h + yy) * w + xx];
        0.25 * (at(2 * y, 2 * x)
            + at(2 * y, 2 * x + 1)
            + at(2 * y + 1, 2 * x)
            + at(2 * y + 1, 2 * x + 1))
    })
}

fn ref_msssim(a: &Tensor, b: &Tensor, weights: &[f64]) -> f64 {
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut out = 1.0;
    for (s, w) in weights.iter().enumerate() {
        let (cs, ssim) = ref_ssim_terms(&x, &y);
        let v = if s + 1 == weights.len() { ssim } else { cs };
        out *= v.max(0.0).powf(*w);
        x = ref_pool(&x);
        y = ref_pool(&y);
    }
    out
}

fn tensor_msssim(a: &Tensor, b: &Tensor, cfg: &MsSsimConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let m = msssim(&mut tape, av, bv, cfg)?;
    Ok(scalar(&tape, m))
}

// ---------------------------------------------------------------------------

#[test]
fn l1_examples_and_gradient() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let b = tape.constant(Tensor::new(&[2], vec![0.0, 4.0]).unwrap());
    let l = l1_loss(&mut tape, a, b).unwrap();
    assert_eq!(scalar(&tape, l), 1.5);
    let same = l1_loss(&mut tape, a, a).unwrap();
    assert_eq!(scalar(&tape, same), 0.0);
    let c = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(l1_loss(&mut tape, a, c), Err(Error::Dimension(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = (
        rand_image(&mut rng, &[3, 8, 8]),
        rand_image(&mut rng, &[3, 8, 8]),
    );
    let err = grad_check(
        |t, v| {
            let yv = t.constant(y.clone());
            l1_loss(t, v, yv)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn renormalized_weights_sum_to_one() {
    for s in 1..=5 {
        let w = renormalized_weights(s);
        assert_eq!(w.len(), s);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(LossWeights::default().validate().is_ok());
    let bad = LossWeights {
        msssim_scale_weights: vec![0.5, 0.4, 0.05],
        ..LossWeights::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn msssim_identity_and_symmetry() {
    let cfg = MsSsimConfig::default();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_image(&mut rng, &[3, 48, 48]);
        let b = rand_image(&mut rng, &[3, 48, 48]);
        assert!((tensor_msssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-6);
        let ab = tensor_msssim(&a, &b, &cfg).unwrap();
        let ba = tensor_msssim(&b, &a, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&ab));
    }
}

#[test]
fn msssim_matches_scalar_reference_on_correlated_pair() {
    let cfg = MsSsimConfig::default();
    let (a, b) = correlated_pair(3, 3, 48, 48);
    let want = ref_msssim(&a, &b, &cfg.scale_weights);
    let got = tensor_msssim(&a, &b, &cfg).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    assert!(got > 0.3 && got < 1.0);
}

#[test]
fn msssim_checkerboard_against_inverse() {
    // 8-pixel binary checkerboard; values 0.1 / 0.9 avoid mid-gray.
    let x = Tensor::from_fn(&[1, 96, 96], |i| {
        let (y, xx) = (i / 96, i % 96);
        if (y / 8 + xx / 8) % 2 == 0 {
            0.1
        } else {
            0.9
        }
    });
    let inv = x.map(|v| 1.0 - v);
    let cfg = MsSsimConfig::default();
    let want = ref_msssim(&x, &inv, &cfg.scale_weights);
    let got = tensor_msssim(&x, &inv, &cfg).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    assert!(got < 0.2, "{got}");
}

#[test]
fn msssim_rejects_small_images() {
    let cfg = MsSsimConfig::default();
    let a = Tensor::zeros(&[3, 40, 40]);
    match tensor_msssim(&a, &a, &cfg) {
        Err(Error::Dimension(msg)) => assert!(msg.contains("44"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn clc_loss_identity_and_constant_images() {
    let cfg = MsSsimConfig::default();
    let (a, _) = correlated_pair(5, 3, 48, 48);
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let z = clc_loss(&mut tape, av, av, &cfg).unwrap();
    assert!(scalar(&tape, z).abs() < 1e-12);

    // constant images: σ = 0 so every contrast-structure factor is exactly 1
    // and only the luminance term at the coarsest scale survives.
    let a = Tensor::full(&[3, 48, 48], 0.2);
    let b = Tensor::full(&[3, 48, 48], 0.5);
    let c1 = 0.01f64 * 0.01;
    let lum = (2.0 * 0.2 * 0.5 + c1) / (0.04 + 0.25 + c1);
    let w_last = 0.3001 / (0.0448 + 0.2856 + 0.3001);
    let want = 0.3 + (1.0 - lum.powf(w_last));
    assert!((ref_msssim(&a, &b, &cfg.scale_weights) - lum.powf(w_last)).abs() < 1e-12);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a), tape.constant(b));
    let l = clc_loss(&mut tape, av, bv, &cfg).unwrap();
    assert!(
        (scalar(&tape, l) - want).abs() < 1e-10,
        "{} vs {want}",
        scalar(&tape, l)
    );
}

#[test]
fn clc_loss_is_nonnegative_and_zero_only_at_equality() {
    let cfg = MsSsimConfig::default();
    for seed in 0..5 {
        let (a, b) = correlated_pair(seed, 3, 48, 48);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b));
        let l = clc_loss(&mut tape, av, bv, &cfg).unwrap();
        assert!(scalar(&tape, l) > 1e-3);
        let same = clc_loss(&mut tape, av, av, &cfg).unwrap();
        assert!(scalar(&tape, same).abs() < 1e-9);
    }
}

#[test]
fn clc_loss_gradient_on_96px_pair() {
    let cfg = MsSsimConfig::default();
    let (a, b) = correlated_pair(9, 3, 96, 96);
    let err = grad_check_sampled(
        |t, v| {
            let bv = t.constant(b.clone());
            clc_loss(t, v, bv, &cfg)
        },
        &a,
        1e-5,
        300,
        9,
    )
    .unwrap();
    assert!(err <= 1e-3, "{err}");
}

// ---------------------------------------------------------------------------
// Sliced Wasserstein

/// Exact 1-D Wasserstein-1 between two equal-size empirical samples via
/// ∫ |F(t) − G(t)| dt over the merged support.
fn w1_cdf_oracle(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() as f64;
    let mut su = u.to_vec();
    let mut sv = v.to_vec();
    su.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut pts: Vec<f64> = su.iter().chain(&sv).copied().collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf = |s: &[f64], t: f64| s.partition_point(|x| *x <= t) as f64 / n;
    pts.windows(2)
        .map(|w| (cdf(&su, w[0]) - cdf(&sv, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

fn sw_value(u: &Tensor, v: &Tensor, m: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let (uv, vv, mv) = (
        tape.constant(u.clone()),
        tape.constant(v.clone()),
        tape.constant(m.clone()),
    );
    let d = sliced_wasserstein(&mut tape, uv, vv, mv)?;
    Ok(scalar(&tape, d))
}

#[test]
fn sliced_wasserstein_hand_example_and_identity() {
    let u = Tensor::new(&[1, 1, 3], vec![3.0, 1.0, 2.0]).unwrap();
    let v = Tensor::new(&[1, 1, 3], vec![2.0, 0.0, 1.0]).unwrap();
    let m = Tensor::new(&[1, 1], vec![1.0]).unwrap();
    assert_eq!(sw_value(&u, &v, &m).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = rand_image(&mut rng, &[4, 3, 3]);
    let m = projection_matrix(3, 4, 1);
    assert_eq!(sw_value(&f, &f, &m).unwrap(), 0.0);
    let bad = projection_matrix(3, 5, 1);
    assert!(matches!(sw_value(&f, &f, &bad), Err(Error::Dimension(_))));
}

#[test]
fn sliced_wasserstein_equals_quantile_oracle_on_50_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for case in 0..50 {
        let c = rng.random_range(1..6);
        let cp = rng.random_range(1..6);
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..6));
        let u = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-2.0..2.0));
        let v = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-1.0..3.0));
        let m = projection_matrix(cp, c, case);
        let got = sw_value(&u, &v, &m).unwrap();
        let hw = h * w;
        let mut want = 0.0;
        for r in 0..cp {
            let row = &m.data()[r * c..(r + 1) * c];
            let project = |t: &Tensor| -> Vec<f64> {
                (0..hw)
                    .map(|s| (0..c).map(|k| row[k] * t.data()[k * hw + s]).sum())
                    .collect()
            };
            want += w1_cdf_oracle(&project(&u), &project(&v));
        }
        want /= cp as f64;
        assert!((got - want).abs() < 1e-8, "case {case}: {got} vs {want}");
    }
}

#[test]
fn sliced_wasserstein_symmetry_and_sample_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = rand_image(&mut rng, &[5, 4, 4]);
    let v = rand_image(&mut rng, &[5, 4, 4]);
    let m = projection_matrix(3, 5, 4);
    let uv = sw_value(&u, &v, &m).unwrap();
    assert!(uv > 0.0);
    assert!((uv - sw_value(&v, &u, &m).unwrap()).abs() < 1e-12);
    // permute the HW axis of u (same permutation for every channel)
    let perm: Vec<usize> = (0..16).map(|i| (i * 7 + 3) % 16).collect();
    let up = Tensor::from_fn(&[5, 4, 4], |i| u.data()[(i / 16) * 16 + perm[i % 16]]);
    assert!((uv - sw_value(&up, &v, &m).unwrap()).abs() < 1e-12);
}

#[test]
fn projection_rows_are_unit_norm() {
    let m = projection_matrix(7, 13, 3);
    for row in m.data().chunks(13) {
        assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn sw_loss_value(a: &Tensor, b: &Tensor, seed: u64) -> f64 {
    let stack = FrozenFeatureStack::new(17);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let l = sw_loss(&mut tape, av, bv, &stack, 3, 64, seed).unwrap();
    scalar(&tape, l)
}

#[test]
fn sw_loss_identity_determinism_and_monotone_shift() {
    let (img, _) = correlated_pair(11, 3, 32, 32);
    let img = img.map(|v| v.clamp(0.0, 0.75));
    assert_eq!(sw_loss_value(&img, &img, 3), 0.0);
    let shifted = img.map(|v| v + 0.1);
    assert_eq!(
        sw_loss_value(&img, &shifted, 3),
        sw_loss_value(&img, &shifted, 3)
    );
    let vals: Vec<f64> = [0.05, 0.1, 0.2]
        .iter()
        .map(|d| sw_loss_value(&img, &img.map(|v| v + d), 3))
        .collect();
    assert!(
        vals[0] > 0.0 && vals[0] < vals[1] && vals[1] < vals[2],
        "{vals:?}"
    );
}

#[test]
fn frozen_stack_is_bit_identical_per_seed() {
    let a = FrozenFeatureStack::new(17);
    let b = FrozenFeatureStack::new(17);
    let c = FrozenFeatureStack::new(18);
    assert_eq!(a.weights(), b.weights());
    assert_ne!(a.weights(), c.weights());
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[3, 16, 16], 0.5));
    let f = a.features(&mut tape, x, 3).unwrap();
    let shapes: Vec<Vec<usize>> = f.iter().map(|v| tape.shape(*v).to_vec()).collect();
    assert_eq!(shapes, vec![vec![16, 8, 8], vec![32, 4, 4], vec![64, 2, 2]]);
}

// ---------------------------------------------------------------------------
// Rain-robust contrastive term

fn robust_value(u: &[Vec<f64>], v: &[Vec<f64>], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let mk =
        |tape: &mut Tape, x: &Vec<f64>| tape.constant(Tensor::new(&[x.len()], x.clone()).unwrap());
    let uv: Vec<Var> = u.iter().map(|x| mk(&mut tape, x)).collect();
    let vv: Vec<Var> = v.iter().map(|x| mk(&mut tape, x)).collect();
    let l = rain_robust_from_features(&mut tape, &uv, &vv, tau)?;
    Ok(scalar(&tape, l))
}

#[test]
fn rain_robust_identical_features_gives_two_ln2() {
    let e = vec![0.6, 0.8];
    let got = robust_value(&[e.clone(), e.clone()], &[e.clone(), e], 0.25).unwrap();
    // the cosine ε shifts sim by ~1e-8 on both sides of the ratio, which cancels
    assert!((got - 2.0 * LN_2).abs() < 1e-9, "{got}");
}

#[test]
fn rain_robust_orthogonal_features_hand_value() {
    let (e1, e2) = (vec![1.0, 0.0], vec![0.0, 1.0]);
    let got = robust_value(&[e1.clone(), e2.clone()], &[e1, e2], 0.25).unwrap();
    // each direction term: −log(e^{1/τ} / (2·e^0)) = −(4 − ln 2)
    let want = -(4.0 - LN_2) * 2.0;
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    // sim(e, e) = 1/(1+ε) exactly here; account for it to pin 1e-9
    let sim = 1.0 / (1.0 + 1e-8);
    let exact = -(4.0 * sim - LN_2) * 2.0;
    assert!((got - exact).abs() < 1e-9, "{got} vs {exact}");
}

#[test]
fn rain_robust_needs_two_samples_and_is_permutation_invariant() {
    let e = vec![1.0, 2.0];
    assert!(matches!(
        robust_value(&[e.clone()], &[e], 0.25),
        Err(Error::Contract(_))
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let v: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let base = robust_value(&u, &v, 0.25).unwrap();
    let order = [2, 0, 3, 1];
    let up: Vec<_> = order.iter().map(|&i| u[i].clone()).collect();
    let vp: Vec<_> = order.iter().map(|&i| v[i].clone()).collect();
    assert!((base - robust_value(&up, &vp, 0.25).unwrap()).abs() < 1e-10);
}

#[test]
fn rain_robust_decreases_as_positive_similarity_rises() {
    let e3 = vec![0.0, 0.0, 1.0];
    let v1 = vec![1.0, 0.0, 0.0];
    let vals: Vec<f64> = [1.2f64, 0.7, 0.2]
        .iter()
        .map(|theta| {
            let u1 = vec![theta.cos(), theta.sin(), 0.0];
            robust_value(&[u1, e3.clone()], &[v1.clone(), e3.clone()], 0.25).unwrap()
        })
        .collect();
    assert!(vals[0] > vals[1] && vals[1] > vals[2], "{vals:?}");
}

// ---------------------------------------------------------------------------
// IAS composite

/// A small frozen conv encoder standing in for the student encoder.
fn toy_encoder(weights: Tensor) -> impl Fn(&mut Tape, Var) -> Result<Var> {
    move |t: &mut Tape, x: Var| {
        let w = t.constant(weights.clone());
        let c = t.conv2d(x, w, None, 1, 1)?;
        Ok(t.relu(c))
    }
}

#[test]
fn ias_identity_batch_gives_lambda_ori_two_ln2() {
    let w = LossWeights::default();
    let stack = FrozenFeatureStack::new(w.feature_stack_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let enc_w = Tensor::from_fn(&[4, 3, 3, 3], |_| rng.random_range(0.0..0.5));
    let (img, _) = correlated_pair(1, 3, 16, 16);
    let mut tape = Tape::new();
    let x = tape.constant(img);
    let vars = [x, x];
    let batch = IasBatch {
        outputs: &vars,
        pseudos: &vars,
        labels: &vars,
    };
    let (total, parts) = ias_loss(&mut tape, &batch, toy_encoder(enc_w), &stack, 4, &w).unwrap();
    assert_eq!(parts.l1_pseudo, 0.0);
    assert_eq!(parts.sw, 0.0);
    assert!((parts.robust - 2.0 * LN_2).abs() < 1e-9);
    assert!((scalar(&tape, total) - w.lambda_ori * 2.0 * LN_2).abs() < 1e-9);
}

#[test]
fn ias_with_zero_lambda_ori_is_pure_pseudo_l1() {
    let w = LossWeights {
        lambda_ori: 0.0,
        ..LossWeights::default()
    };
    let stack = FrozenFeatureStack::new(w.feature_stack_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let enc_w = Tensor::from_fn(&[4, 3, 3, 3], |_| rng.random_range(-0.5..0.5));
    let imgs: Vec<Tensor> = (0..6).map(|_| rand_image(&mut rng, &[3, 16, 16])).collect();
    let mut tape = Tape::new();
    let v: Vec<Var> = imgs.into_iter().map(|t| tape.constant(t)).collect();
    let (outs, pseudos, labels) = (&v[0..2], &v[2..4], &v[4..6]);
    let batch = IasBatch {
        outputs: outs,
        pseudos,
        labels,
    };
    let (total, parts) = ias_loss(&mut tape, &batch, toy_encoder(enc_w), &stack, 4, &w).unwrap();
    let l0 = l1_loss(&mut tape, outs[0], pseudos[0]).unwrap();
    let l1 = l1_loss(&mut tape, outs[1], pseudos[1]).unwrap();
    let want = 0.5 * (scalar(&tape, l0) + scalar(&tape, l1));
    assert!((scalar(&tape, total) - want).abs() < 1e-15);
    assert_eq!(parts.l1_pseudo, parts.total);
}

#[test]
fn ias_gradient_on_two_sample_toy_batch() {
    let w = LossWeights::default();
    let stack = FrozenFeatureStack::new(w.feature_stack_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let enc_w = Tensor::from_fn(&[4, 3, 3, 3], |_| rng.random_range(-0.5..0.5));
    let imgs: Vec<Tensor> = (0..6).map(|_| rand_image(&mut rng, &[3, 8, 8])).collect();
    for which in 0..2 {
        let err = grad_check(
            |t, x| {
                let c: Vec<Var> = imgs.iter().map(|i| t.constant(i.clone())).collect();
                let outs = if which == 0 { [x, c[1]] } else { [c[0], x] };
                let batch = IasBatch {
                    outputs: &outs,
                    pseudos: &c[2..4],
                    labels: &c[4..6],
                };
                Ok(ias_loss(t, &batch, toy_encoder(enc_w.clone()), &stack, 4, &w)?.0)
            },
            &imgs[which],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-3, "sample {which}: {err}");
    }
}

#[test]
fn rain_robust_loss_through_encoder_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let enc_w = Tensor::from_fn(&[4, 3, 3, 3], |_| rng.random_range(-0.5..0.5));
    let imgs: Vec<Tensor> = (0..4).map(|_| rand_image(&mut rng, &[3, 6, 6])).collect();
    let err = grad_check(
        |t, x| {
            let c: Vec<Var> = imgs.iter().map(|i| t.constant(i.clone())).collect();
            rain_robust_loss(t, &[x, c[1]], &c[2..4], toy_encoder(enc_w.clone()), 0.25)
        },
        &imgs[0],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-3, "{err}");
}
