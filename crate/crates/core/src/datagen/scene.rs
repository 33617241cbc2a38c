//! Procedural clean scenes: gradient background, soft-edged shapes and a
//! value-noise texture layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Smooth `[0, 1]` noise from a random lattice with spacing `cell`, bilinear
/// interpolation and a smoothstep fade.
pub fn value_noise(r: &mut ChaCha8Rng, h: usize, w: usize, cell: f64) -> Vec<f64> {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| r.random_range(0.0..1.0)).collect();
    let (oy, ox) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
    let fade = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let gy = y as f64 / cell + oy;
        let (y0, ty) = (gy.floor() as usize, fade(gy.fract()));
        for x in 0..w {
            let gx = x as f64 / cell + ox;
            let (x0, tx) = (gx.floor() as usize, fade(gx.fract()));
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn random_color(r: &mut ChaCha8Rng) -> [f64; 3] {
    [
        r.random_range(0.1..0.9),
        r.random_range(0.1..0.9),
        r.random_range(0.1..0.9),
    ]
}

/// Coverage in `[0, 1]` of a shape whose signed distance (pixels, negative
/// inside) is `d`, with a soft edge of width `soft`.
fn coverage(d: f64, soft: f64) -> f64 {
    let t = (0.5 - d / soft).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Deterministic clean `3×H×W` scene in `[0, 1]`.
pub fn gen_clean_scene(seed: u64, h: usize, w: usize) -> Result<Tensor> {
    if h < 64 || w < 64 || !h.is_multiple_of(8) || !w.is_multiple_of(8) {
        return Err(Error::Dimension(format!(
            "scene size must be ≥ 64 and a multiple of 8 on both sides, got {h}×{w}"
        )));
    }
    let mut r = rng::stream(seed, &[rng::tag("clean_scene")]);
    let plane = h * w;
    let mut img = vec![0.0; 3 * plane];

    let (ca, cb) = (random_color(&mut r), random_color(&mut r));
    let theta: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let span = (h as f64).hypot(w as f64);
    for y in 0..h {
        for x in 0..w {
            let t = (0.5
                + ((x as f64 - w as f64 / 2.0) * dx + (y as f64 - h as f64 / 2.0) * dy) / span)
                .clamp(0.0, 1.0);
            for c in 0..3 {
                img[c * plane + y * w + x] = ca[c] * (1.0 - t) + cb[c] * t;
            }
        }
    }

    let shapes = r.random_range(5..=15);
    for _ in 0..shapes {
        let color = random_color(&mut r);
        let ellipse = r.random_bool(0.5);
        let cy = r.random_range(0.0..h as f64);
        let cx = r.random_range(0.0..w as f64);
        let ry = r.random_range(6.0..h as f64 / 4.0);
        let rx = r.random_range(6.0..w as f64 / 4.0);
        let soft = r.random_range(2.0..5.0);
        let alpha = r.random_range(0.6..0.95);
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let d = if ellipse {
                    // approximate signed distance: radial scale times the smaller radius
                    ((py / ry).hypot(px / rx) - 1.0) * ry.min(rx)
                } else {
                    (py.abs() - ry).max(px.abs() - rx)
                };
                let a = alpha * coverage(d, soft);
                if a > 0.0 {
                    for c in 0..3 {
                        let v = &mut img[c * plane + y * w + x];
                        *v = *v * (1.0 - a) + color[c] * a;
                    }
                }
            }
        }
    }

    let coarse = value_noise(&mut r, h, w, 16.0);
    let fine = value_noise(&mut r, h, w, 4.0);
    let amp = r.random_range(0.03..0.08);
    for c in 0..3 {
        for i in 0..plane {
            let n = 0.6 * coarse[i] + 0.4 * fine[i] - 0.5;
            let v = &mut img[c * plane + i];
            *v = (*v + amp * n).clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[3, h, w], img)
}
