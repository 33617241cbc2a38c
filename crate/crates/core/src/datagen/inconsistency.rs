//! Label imperfections: colour/illumination drift, small misalignment and
//! local texture change, applied in that order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::value_noise;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InconsistencyKind {
    ColorShift,
    Misalignment,
    TextureChange,
}

impl InconsistencyKind {
    pub const ALL: [InconsistencyKind; 3] = [
        InconsistencyKind::ColorShift,
        InconsistencyKind::Misalignment,
        InconsistencyKind::TextureChange,
    ];
}

/// What was injected, for the manifest and for tests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyRecord {
    /// Per-channel gain and the brightness factor `b` (output scale `g·(1+b)`).
    pub color: Option<([f64; 3], f64)>,
    /// Integer translation `(dy, dx)`: output pixel `(y, x)` shows input
    /// pixel `(y − dy, x − dx)`.
    pub shift: Option<(i32, i32)>,
    /// Top-left corner of the re-textured 16×16 patch.
    pub patch: Option<(usize, usize)>,
}

pub const PATCH: usize = 16;
pub const MAX_SHIFT: i32 = 3;

/// Imperfect label derived from `ideal`. An empty `kinds` returns `ideal`
/// unchanged.
pub fn inject_inconsistency(
    ideal: &Tensor,
    kinds: &[InconsistencyKind],
    seed: u64,
) -> Result<(Tensor, InconsistencyRecord)> {
    let (c, h, w) = ideal.chw()?;
    if h < PATCH || w < PATCH {
        return Err(Error::Dimension(format!(
            "inconsistency injection needs at least {PATCH}×{PATCH}, got {h}×{w}"
        )));
    }
    let plane = h * w;
    let mut out = ideal.clone();
    let mut record = InconsistencyRecord::default();
    let has = |k| kinds.contains(&k);

    if has(InconsistencyKind::ColorShift) {
        let mut r = rng::stream(seed, &[rng::tag("color_shift")]);
        let gains = [
            r.random_range(0.9..=1.1),
            r.random_range(0.9..=1.1),
            r.random_range(0.9..=1.1),
        ];
        let b = r.random_range(-0.05..=0.05);
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v * gains[i / plane] * (1.0 + b)).clamp(0.0, 1.0);
        }
        record.color = Some((gains, b));
    }

    if has(InconsistencyKind::Misalignment) {
        let mut r = rng::stream(seed, &[rng::tag("misalignment")]);
        let dy = r.random_range(-MAX_SHIFT..=MAX_SHIFT);
        let dx = r.random_range(-MAX_SHIFT..=MAX_SHIFT);
        out = translate(&out, dy, dx)?;
        record.shift = Some((dy, dx));
    }

    if has(InconsistencyKind::TextureChange) {
        let mut r = rng::stream(seed, &[rng::tag("texture_change")]);
        let py = r.random_range(0..=h - PATCH);
        let px = r.random_range(0..=w - PATCH);
        let noise = value_noise(&mut r, PATCH, PATCH, 3.0);
        let amp = r.random_range(0.12..0.2);
        let d = out.data_mut();
        for ch in 0..c {
            let mut mean = 0.0;
            for y in py..py + PATCH {
                for x in px..px + PATCH {
                    mean += d[ch * plane + y * w + x];
                }
            }
            mean /= (PATCH * PATCH) as f64;
            for y in 0..PATCH {
                for x in 0..PATCH {
                    let n = noise[y * PATCH + x] - 0.5;
                    d[ch * plane + (py + y) * w + px + x] = (mean + 2.0 * amp * n).clamp(0.0, 1.0);
                }
            }
        }
        record.patch = Some((py, px));
    }
    Ok((out, record))
}

/// Integer translation with edge replication.
pub fn translate(img: &Tensor, dy: i32, dx: i32) -> Result<Tensor> {
    let (c, h, w) = img.chw()?;
    let src = img.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let sy = (y as i64 - dy as i64).clamp(0, h as i64 - 1) as usize;
        let sx = (x as i64 - dx as i64).clamp(0, w as i64 - 1) as usize;
        src[(ch * h + sy) * w + sx]
    }))
}
