//! Manifest-driven loader. The hidden ideal image is only decoded, and only
//! reachable, in [`LoadMode::Eval`].

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::{load_png, GeneratedScene, Manifest, SceneSpec, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    Train,
    Eval,
}

/// One scene: degraded frames, imperfect label and (evaluation only) the
/// ideal clean image.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub id: String,
    pub split: Split,
    pub spec: SceneSpec,
    pub frames: Vec<Tensor>,
    pub label: Tensor,
    ideal: Option<Tensor>,
}

impl PairedSample {
    pub fn new(
        id: String,
        split: Split,
        spec: SceneSpec,
        frames: Vec<Tensor>,
        label: Tensor,
        ideal: Option<Tensor>,
    ) -> Self {
        PairedSample {
            id,
            split,
            spec,
            frames,
            label,
            ideal,
        }
    }

    /// Center frame, the only input the de-weathering model sees.
    pub fn center(&self) -> &Tensor {
        &self.frames[self.frames.len() / 2]
    }

    /// The hidden clean image. Fails unless loaded in evaluation mode.
    pub fn ideal(&self) -> Result<&Tensor> {
        self.ideal.as_ref().ok_or_else(|| {
            Error::Contract(format!(
                "ideal image of scene {} is not available in training mode",
                self.id
            ))
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    root: Option<PathBuf>,
    mode: LoadMode,
    frames_n: usize,
    samples: Vec<PairedSample>,
}

impl Dataset {
    /// Wrap in-memory scenes. Ideals are dropped in training mode.
    pub fn from_generated(scenes: Vec<(GeneratedScene, Split)>, mode: LoadMode) -> Result<Self> {
        let frames_n = scenes.first().map_or(0, |(s, _)| s.spec.frames / 2);
        let samples = scenes
            .into_iter()
            .map(|(s, split)| {
                let ideal = (mode == LoadMode::Eval).then_some(s.ideal);
                PairedSample::new(s.spec.id.clone(), split, s.spec, s.frames, s.label, ideal)
            })
            .collect::<Vec<_>>();
        if samples.iter().any(|s| s.frames.len() != 2 * frames_n + 1) {
            return Err(Error::Contract("scenes disagree on frame count".into()));
        }
        Ok(Dataset {
            root: None,
            mode,
            frames_n,
            samples,
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn mode(&self) -> LoadMode {
        self.mode
    }

    pub fn frames_n(&self) -> usize {
        self.frames_n
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &PairedSample {
        &self.samples[i]
    }

    /// Indices of the scenes in `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    /// Indices of `split` in a reproducible shuffled order.
    pub fn shuffled(&self, split: Split, seed: u64) -> Vec<usize> {
        let mut idx = self.indices(split);
        idx.shuffle(&mut rng::stream(seed, &[rng::tag("dataset_order")]));
        idx
    }
}

/// Load the dataset at `root`, optionally restricted to one split.
pub fn load_dataset(root: &Path, mode: LoadMode, only: Option<Split>) -> Result<Dataset> {
    let manifest = Manifest::read(root)?;
    let mut samples = Vec::new();
    for entry in &manifest.scenes {
        if only.is_some_and(|s| s != entry.split) {
            continue;
        }
        let load = |rel: &str| -> Result<Tensor> {
            let path = root.join(rel);
            if !path.exists() {
                return Err(Error::Io {
                    path,
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("file of scene {} is missing", entry.id),
                    ),
                });
            }
            load_png(&path)
        };
        let frames = entry
            .frames
            .iter()
            .map(|f| load(f))
            .collect::<Result<Vec<_>>>()?;
        if frames.len() != 2 * manifest.frames_n() + 1 {
            return Err(Error::Contract(format!(
                "scene {} lists {} frames, manifest says {}",
                entry.id,
                frames.len(),
                2 * manifest.frames_n() + 1
            )));
        }
        let label = load(&entry.label)?;
        let ideal = match mode {
            LoadMode::Eval => Some(load(&entry.ideal)?),
            LoadMode::Train => None,
        };
        samples.push(PairedSample::new(
            entry.id.clone(),
            entry.split,
            entry.spec.clone(),
            frames,
            label,
            ideal,
        ));
    }
    Ok(Dataset {
        root: Some(root.to_path_buf()),
        mode,
        frames_n: manifest.frames_n(),
        samples,
    })
}
