use rand::seq::index;
use rand::Rng;

use crate::datagen::{Dataset, LoadMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One cropped training example. Frames, label and ideal share the crop
/// window and the flip.
#[derive(Clone, Debug)]
pub struct CropSample {
    pub scene: usize,
    pub frames: Vec<Tensor>,
    pub label: Tensor,
    /// Present only for evaluation-mode datasets.
    pub ideal: Option<Tensor>,
    pub offset: (usize, usize),
    pub flipped: bool,
}

impl CropSample {
    pub fn center(&self) -> &Tensor {
        &self.frames[self.frames.len() / 2]
    }
}

fn aligned(t: &Tensor, (y, x): (usize, usize), patch: usize, flip: bool) -> Result<Tensor> {
    let c = t.crop(y, x, patch, patch)?;
    if flip {
        c.flip_horizontal()
    } else {
        Ok(c)
    }
}

/// Draw `n` scenes from `pool` (without replacement when
/// `require_distinct`), each cropped to `patch × patch` at one random offset
/// and optionally mirrored.
pub fn sample_batch<R: Rng>(
    dataset: &Dataset,
    pool: &[usize],
    n: usize,
    patch: usize,
    rng: &mut R,
    require_distinct: bool,
) -> Result<Vec<CropSample>> {
    if pool.is_empty() || n == 0 {
        return Err(Error::Config(
            "cannot sample a batch from an empty pool".into(),
        ));
    }
    let scenes: Vec<usize> = if require_distinct {
        if pool.len() < n {
            return Err(Error::Config(format!(
                "a batch of {n} distinct scenes needs at least {n} scenes, have {}",
                pool.len()
            )));
        }
        index::sample(rng, pool.len(), n)
            .into_iter()
            .map(|k| pool[k])
            .collect()
    } else {
        (0..n)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect()
    };
    scenes
        .into_iter()
        .map(|scene| {
            let s = dataset.sample(scene);
            let (_, h, w) = s.label.chw()?;
            if patch > h || patch > w {
                return Err(Error::Dimension(format!(
                    "patch {patch} exceeds scene {} of size {h}×{w}",
                    s.id
                )));
            }
            let offset = (
                rng.random_range(0..=h - patch),
                rng.random_range(0..=w - patch),
            );
            let flipped = rng.random::<bool>();
            let crop = |t: &Tensor| aligned(t, offset, patch, flipped);
            Ok(CropSample {
                scene,
                frames: s.frames.iter().map(crop).collect::<Result<_>>()?,
                label: crop(&s.label)?,
                ideal: match dataset.mode() {
                    LoadMode::Eval => Some(crop(s.ideal()?)?),
                    LoadMode::Train => None,
                },
                offset,
                flipped,
            })
        })
        .collect()
}
