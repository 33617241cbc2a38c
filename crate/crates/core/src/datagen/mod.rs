//! Synthetic multi-frame weather scenes with imperfect labels.
//!
//! Every scene has a hidden ideal clean image. The degraded frames are that
//! image under per-frame weather; the training label is the same image after
//! label imperfections (colour drift, misalignment, texture change). The
//! ideal is written under `eval/` and only readable through an
//! evaluation-mode loader.

mod inconsistency;
mod io;
mod loader;
mod scene;
mod weather;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use inconsistency::{
    inject_inconsistency, translate, InconsistencyKind, InconsistencyRecord, MAX_SHIFT, PATCH,
};
pub use io::{load_png, save_png};
pub use loader::{load_dataset, Dataset, LoadMode, PairedSample};
pub use scene::{gen_clean_scene, value_noise};
pub use weather::{
    apply_scattering, render_weather, Fog, Rain, Snow, WeatherModel, WeatherRegistry, WeatherSeeds,
};

/// Everything needed to regenerate one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub weather: String,
    pub severity: f64,
    pub inconsistency: Vec<InconsistencyKind>,
    pub frames: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::Config(format!(
                "scene {}: severity {} outside [0, 1]",
                self.id, self.severity
            )));
        }
        if self.frames.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "scene {}: frame count {} must be odd (2n+1)",
                self.id, self.frames
            )));
        }
        Ok(())
    }

    pub fn frame_seed(&self, k: usize) -> u64 {
        rng::derive(self.seed, &[rng::tag("frame"), k as u64])
    }
}

/// Scene distribution and layout of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_scenes: usize,
    pub height: usize,
    pub width: usize,
    pub frames_n: usize,
    pub weathers: Vec<String>,
    pub severity_min: f64,
    pub severity_max: f64,
    pub inconsistency: Vec<InconsistencyKind>,
    /// Fraction of scenes generated without any inconsistency.
    pub consistent_fraction: f64,
    pub test_fraction: f64,
    pub master_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_scenes: 64,
            height: 128,
            width: 128,
            frames_n: 2,
            weathers: vec!["rain".into(), "snow".into(), "fog".into()],
            severity_min: 0.3,
            severity_max: 0.8,
            inconsistency: InconsistencyKind::ALL.to_vec(),
            consistent_fraction: 0.0,
            test_fraction: 0.15,
            master_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scenes == 0 {
            return Err(Error::Config("num_scenes must be positive".into()));
        }
        if !(0.0 <= self.severity_min
            && self.severity_min <= self.severity_max
            && self.severity_max <= 1.0)
        {
            return Err(Error::Config(format!(
                "severity range [{}, {}] must lie within [0, 1]",
                self.severity_min, self.severity_max
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction)
            || !(0.0..=1.0).contains(&self.consistent_fraction)
        {
            return Err(Error::Config("fractions must lie in [0, 1)".into()));
        }
        if self.weathers.is_empty() {
            return Err(Error::Config(
                "at least one weather type is required".into(),
            ));
        }
        let registry = WeatherRegistry::default();
        for w in &self.weathers {
            registry.get(w)?;
        }
        Ok(())
    }

    /// Spec of scene `i`, seeded with `master_seed + i`.
    pub fn scene_spec(&self, i: usize) -> SceneSpec {
        let seed = self.master_seed.wrapping_add(i as u64);
        let mut r = rng::stream(seed, &[rng::tag("scene_spec")]);
        let weather = self.weathers[r.random_range(0..self.weathers.len())].clone();
        let severity = if self.severity_max > self.severity_min {
            r.random_range(self.severity_min..=self.severity_max)
        } else {
            self.severity_min
        };
        let consistent = r.random_range(0.0..1.0) < self.consistent_fraction;
        SceneSpec {
            id: format!("scene_{i:04}"),
            seed,
            height: self.height,
            width: self.width,
            weather,
            severity,
            inconsistency: if consistent {
                Vec::new()
            } else {
                self.inconsistency.clone()
            },
            frames: 2 * self.frames_n + 1,
        }
    }
}

/// A generated scene in memory.
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub spec: SceneSpec,
    pub frames: Vec<Tensor>,
    pub label: Tensor,
    pub ideal: Tensor,
    pub record: InconsistencyRecord,
}

pub fn generate_scene(spec: &SceneSpec, registry: &WeatherRegistry) -> Result<GeneratedScene> {
    spec.validate()?;
    let ideal = gen_clean_scene(spec.seed, spec.height, spec.width)?;
    let model = registry.get(&spec.weather)?;
    let frames = (0..spec.frames)
        .map(|k| {
            model.render(
                &ideal,
                spec.severity,
                WeatherSeeds {
                    scene: spec.seed,
                    frame: spec.frame_seed(k),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (label, record) = inject_inconsistency(
        &ideal,
        &spec.inconsistency,
        rng::derive(spec.seed, &[rng::tag("label")]),
    )?;
    Ok(GeneratedScene {
        spec: spec.clone(),
        frames,
        label,
        ideal,
        record,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub spec: SceneSpec,
    pub record: InconsistencyRecord,
    /// Paths relative to the dataset root.
    pub frames: Vec<String>,
    pub label: String,
    pub ideal: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn read(root: &Path) -> Result<Manifest> {
        let path = root.join(Self::FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn frames_n(&self) -> usize {
        self.config.frames_n
    }
}

/// Seeded train/test assignment: shuffle all indices, the first
/// `round(N · test_fraction)` (at least one when `N ≥ 2`) go to test.
pub fn split_assignment(num_scenes: usize, test_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..num_scenes).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag("split")]));
    let mut n_test = (num_scenes as f64 * test_fraction).round() as usize;
    if num_scenes >= 2 {
        n_test = n_test.clamp(1, num_scenes - 1);
    } else {
        n_test = 0;
    }
    let mut split = vec![Split::Train; num_scenes];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }
    split
}

fn prepare_root(root: &Path, force: bool) -> Result<()> {
    if root.exists() {
        let non_empty = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Refused(root.to_path_buf()));
        }
        for sub in ["scenes", "eval"] {
            let p = root.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    for sub in ["", "scenes", "eval"] {
        let p = root.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn write_scene(root: &Path, scene: &GeneratedScene, split: Split) -> Result<ManifestEntry> {
    let id = &scene.spec.id;
    let scene_dir: PathBuf = ["scenes", id].iter().collect();
    let eval_dir: PathBuf = ["eval", id].iter().collect();
    for d in [&scene_dir, &eval_dir] {
        let p = root.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let rel = |dir: &str, name: String| format!("{dir}/{id}/{name}");
    let mut frames = Vec::with_capacity(scene.frames.len());
    for (k, f) in scene.frames.iter().enumerate() {
        let r = rel("scenes", format!("frame_{k}.png"));
        save_png(&root.join(&r), f)?;
        frames.push(r);
    }
    let label = rel("scenes", "label.png".into());
    save_png(&root.join(&label), &scene.label)?;
    let ideal = rel("eval", "ideal.png".into());
    save_png(&root.join(&ideal), &scene.ideal)?;
    Ok(ManifestEntry {
        id: id.clone(),
        split,
        spec: scene.spec.clone(),
        record: scene.record.clone(),
        frames,
        label,
        ideal,
    })
}

/// Generate and write a dataset under `root`. Refuses a non-empty `root`
/// unless `force`, in which case previously generated scenes are replaced.
pub fn gen_dataset(root: &Path, cfg: &DatasetConfig, force: bool) -> Result<Manifest> {
    cfg.validate()?;
    prepare_root(root, force)?;
    let split = split_assignment(cfg.num_scenes, cfg.test_fraction, cfg.master_seed);
    let registry = WeatherRegistry::default();
    let scenes = (0..cfg.num_scenes)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(&cfg.scene_spec(i), &registry)?;
            write_scene(root, &scene, split[i])
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: 1,
        config: cfg.clone(),
        scenes,
    };
    let path = root.join(Manifest::FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    log::info!(
        "generated {} scenes under {}",
        manifest.scenes.len(),
        root.display()
    );
    Ok(manifest)
}
