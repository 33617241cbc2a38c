//! Weather renderers behind a common trait, looked up by name at runtime.
//!
//! Scene-level parameters (rain angle, fog airlight, the static part of the
//! fog density) come from the scene seed; everything that should change
//! from frame to frame (streak and flake positions, fog drift) comes from the
//! frame seed. The clean content is never touched by the frame seed.

use rand::Rng;

use super::scene::value_noise;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Seeds for one rendered frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeatherSeeds {
    pub scene: u64,
    pub frame: u64,
}

/// A degradation applied on top of a clean `3×H×W` image.
pub trait WeatherModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Degraded image in `[0, 1]`; `severity` in `[0, 1]`, where 0 returns
    /// the clean image unchanged.
    fn render(&self, clean: &Tensor, severity: f64, seeds: WeatherSeeds) -> Result<Tensor>;
}

/// Name → renderer table.
pub struct WeatherRegistry {
    models: Vec<Box<dyn WeatherModel>>,
}

impl Default for WeatherRegistry {
    fn default() -> Self {
        let mut r = WeatherRegistry { models: Vec::new() };
        r.register(Box::new(Rain));
        r.register(Box::new(Snow));
        r.register(Box::new(Fog));
        r
    }
}

impl WeatherRegistry {
    pub fn empty() -> Self {
        WeatherRegistry { models: Vec::new() }
    }

    /// Adds a renderer, replacing any existing one of the same name.
    pub fn register(&mut self, model: Box<dyn WeatherModel>) {
        self.models.retain(|m| m.name() != model.name());
        self.models.push(model);
    }

    pub fn get(&self, name: &str) -> Result<&dyn WeatherModel> {
        self.models
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown weather '{name}' (known: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.models.iter().map(|m| m.name()).collect()
    }
}

/// Render `weather` with the built-in registry.
pub fn render_weather(
    clean: &Tensor,
    weather: &str,
    severity: f64,
    seeds: WeatherSeeds,
) -> Result<Tensor> {
    WeatherRegistry::default()
        .get(weather)?
        .render(clean, severity, seeds)
}

fn check_severity(severity: f64) -> Result<()> {
    if (0.0..=1.0).contains(&severity) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "severity must lie in [0, 1], got {severity}"
        )))
    }
}

/// Atmospheric scattering `I = t·J + (1 − t)·A`, clamped to `[0, 1]`.
/// `transmission` is one value per pixel, shared by all channels.
pub fn apply_scattering(clean: &Tensor, transmission: &[f64], airlight: f64) -> Result<Tensor> {
    let (c, h, w) = clean.chw()?;
    if transmission.len() != h * w {
        return Err(Error::Dimension(format!(
            "transmission has {} values for a {h}×{w} image",
            transmission.len()
        )));
    }
    let plane = h * w;
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let t = transmission[i % plane];
        (t * clean.data()[i] + (1.0 - t) * airlight).clamp(0.0, 1.0)
    }))
}

/// Add a single-channel overlay to every channel and clamp.
fn add_overlay(clean: &Tensor, layer: &[f64]) -> Result<Tensor> {
    let (c, h, w) = clean.chw()?;
    let plane = h * w;
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        (clean.data()[i] + layer[i % plane]).clamp(0.0, 1.0)
    }))
}

/// Motion-blurred bright streaks sharing one scene-level angle.
pub struct Rain;

impl WeatherModel for Rain {
    fn name(&self) -> &'static str {
        "rain"
    }

    fn render(&self, clean: &Tensor, severity: f64, seeds: WeatherSeeds) -> Result<Tensor> {
        check_severity(severity)?;
        let (_, h, w) = clean.chw()?;
        let base = rng::stream(seeds.scene, &[rng::tag("rain_angle")])
            .random_range(-25f64..25.0)
            .to_radians();
        let mut r = rng::stream(seeds.frame, &[rng::tag("rain")]);
        let count = (severity * 0.012 * (h * w) as f64).round() as usize;
        let gain = 0.5 + 0.5 * severity;
        let mut layer = vec![0.0; h * w];
        // streaks are drawn in a fixed sequence, so a higher severity only
        // adds streaks and brightens existing ones
        for _ in 0..count {
            let cy = r.random_range(0.0..h as f64);
            let cx = r.random_range(0.0..w as f64);
            let len = r.random_range(6.0..18.0);
            let angle = base + r.random_range(-5f64..5.0).to_radians();
            let bright = gain * r.random_range(0.25..0.55);
            let (dy, dx) = (angle.cos(), angle.sin());
            let half = len / 2.0;
            let y0 = (cy - half - 2.0).floor().max(0.0) as usize;
            let y1 = ((cy + half + 2.0).ceil() as usize).min(h);
            let x0 = (cx - half - 2.0).floor().max(0.0) as usize;
            let x1 = ((cx + half + 2.0).ceil() as usize).min(w);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let along = py * dy + px * dx;
                    let across = -py * dx + px * dy;
                    if along.abs() > half {
                        continue;
                    }
                    let taper = 1.0 - (along / half).powi(2);
                    let profile = (-across * across / (2.0 * 0.45 * 0.45)).exp();
                    layer[y * w + x] += bright * taper * profile;
                }
            }
        }
        add_overlay(clean, &layer)
    }
}

/// Soft elliptical flakes.
pub struct Snow;

impl WeatherModel for Snow {
    fn name(&self) -> &'static str {
        "snow"
    }

    fn render(&self, clean: &Tensor, severity: f64, seeds: WeatherSeeds) -> Result<Tensor> {
        check_severity(severity)?;
        let (_, h, w) = clean.chw()?;
        let mut r = rng::stream(seeds.frame, &[rng::tag("snow")]);
        let count = (severity * 0.006 * (h * w) as f64).round() as usize;
        let gain = 0.5 + 0.5 * severity;
        let mut layer = vec![0.0; h * w];
        for _ in 0..count {
            let cy = r.random_range(0.0..h as f64);
            let cx = r.random_range(0.0..w as f64);
            let ry: f64 = r.random_range(0.8..2.5);
            let rx = r.random_range(0.8..2.5);
            let bright = gain * r.random_range(0.4..0.9);
            let reach = 3.0 * ry.max(rx);
            let y0 = (cy - reach).floor().max(0.0) as usize;
            let y1 = ((cy + reach).ceil() as usize).min(h);
            let x0 = (cx - reach).floor().max(0.0) as usize;
            let x1 = ((cx + reach).ceil() as usize).min(w);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (py, px) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                    layer[y * w + x] += bright * (-(py * py + px * px) / 2.0).exp();
                }
            }
        }
        add_overlay(clean, &layer)
    }
}

/// Haze from a smooth transmission field bounded below by `1 − severity`.
pub struct Fog;

impl WeatherModel for Fog {
    fn name(&self) -> &'static str {
        "fog"
    }

    fn render(&self, clean: &Tensor, severity: f64, seeds: WeatherSeeds) -> Result<Tensor> {
        check_severity(severity)?;
        let (_, h, w) = clean.chw()?;
        let mut sr = rng::stream(seeds.scene, &[rng::tag("fog")]);
        let airlight = sr.random_range(0.7..0.9);
        let still = value_noise(&mut sr, h, w, 32.0);
        let mut fr = rng::stream(seeds.frame, &[rng::tag("fog_drift")]);
        let drift = value_noise(&mut fr, h, w, 32.0);
        let t: Vec<f64> = still
            .iter()
            .zip(&drift)
            .map(|(a, b)| 1.0 - severity * (0.7 * a + 0.3 * b))
            .collect();
        apply_scattering(clean, &t, airlight)
    }
}
