//! Toy U-Net de-weathering network and its multi-frame label constructor.
//!
//! Both roles share one decoder layout. The label constructor (CLC) runs one
//! unshared encoder per input frame and fuses their features with 1×1 convs
//! at every skip level and at the bottleneck before decoding.
//!
//! A [`ModelGraph`] owns plain parameter tensors. To run it, bind it to a
//! [`Tape`] with [`ModelGraph::bind`], which yields a [`Bound`] handle whose
//! forward passes are differentiable w.r.t. both inputs and (if trainable)
//! parameters.

mod checkpoint;

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};

/// U-Net shape: depth `D`, base channel count `B` and the temporal radius `n`
/// of the label constructor (which sees `2n+1` frames).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub frames_n: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            depth: 3,
            base_channels: 16,
            frames_n: 2,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!(
                "depth must be ≥ 2, got {}",
                self.depth
            )));
        }
        if self.base_channels < 8 {
            return Err(Error::Config(format!(
                "base_channels must be ≥ 8, got {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    /// Frames seen by the label constructor.
    pub fn clc_frames(&self) -> usize {
        2 * self.frames_n + 1
    }

    /// Channels of encoder level `l`; the bottleneck uses level `D−1`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Deweather,
    Clc,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Deweather => "deweather",
            Role::Clc => "clc",
        }
    }
}

/// Named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// How a parameter is initialized.
#[derive(Clone, Copy)]
enum Init {
    He,
    /// He scaled down, so the residual output starts near the input.
    Small,
    /// 1×1 fusion weight that averages the per-frame feature maps.
    Average {
        frames: usize,
        channels: usize,
    },
}

/// A de-weathering U-Net or a multi-encoder label constructor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    arch: ArchitectureConfig,
    role: Role,
    seed: u64,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ModelGraph {
    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of input frames.
    pub fn frames(&self) -> usize {
        match self.role {
            Role::Deweather => 1,
            Role::Clc => self.arch.clc_frames(),
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Parameter names belonging to the encoder of frame `f`.
    pub fn encoder_param_names(&self, f: usize) -> Vec<&str> {
        let prefix = format!("enc{f}.");
        self.params
            .iter()
            .filter(|p| p.name.starts_with(&prefix))
            .map(|p| p.name.as_str())
            .collect()
    }

    pub(crate) fn from_parts(
        arch: ArchitectureConfig,
        role: Role,
        seed: u64,
        params: Vec<Param>,
    ) -> Result<Self> {
        let expected = match role {
            Role::Deweather => build_deweather(&arch, seed)?,
            Role::Clc => build_clc(&arch, seed)?,
        };
        if expected.params.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} model expects {} parameter tensors, got {}",
                role.as_str(),
                expected.params.len(),
                params.len()
            )));
        }
        for (e, p) in expected.params.iter().zip(&params) {
            if e.name != p.name || e.value.shape() != p.value.shape() {
                return Err(Error::Contract(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        Ok(Self::assemble(arch, role, seed, params))
    }

    fn assemble(arch: ArchitectureConfig, role: Role, seed: u64, params: Vec<Param>) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        ModelGraph {
            arch,
            role,
            seed,
            params,
            index,
        }
    }

    /// Push every parameter onto `tape`, as a trainable leaf or a constant.
    pub fn bind<'m>(&'m self, tape: &mut Tape, trainable: bool) -> Bound<'m> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect();
        Bound { model: self, vars }
    }

    /// Use caller-provided tape handles as the parameters, e.g. to swap one
    /// parameter for a probe variable.
    pub fn bind_vars<'m>(&'m self, tape: &Tape, vars: Vec<Var>) -> Result<Bound<'m>> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        for (p, &v) in self.params.iter().zip(&vars) {
            if tape.shape(v) != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "handle for {} has shape {:?}, expected {:?}",
                    p.name,
                    tape.shape(v),
                    p.value.shape()
                )));
            }
        }
        Ok(Bound { model: self, vars })
    }

    /// Forward pass on a throwaway tape with frozen parameters.
    pub fn infer(&self, frames: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let vars: Vec<Var> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let out = bound.forward(&mut tape, &vars)?;
        Ok(tape.value(out).clone())
    }
}

struct Builder {
    seed: u64,
    params: Vec<Param>,
}

impl Builder {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, init: Init) {
        let weight = match init {
            Init::Average { frames, channels } => Tensor::from_fn(&[c_out, c_in, 1, 1], |i| {
                let (o, j) = (i / c_in, i % c_in);
                if j % channels == o {
                    1.0 / frames as f64
                } else {
                    0.0
                }
            }),
            Init::He | Init::Small => {
                let gain = if matches!(init, Init::Small) {
                    0.1
                } else {
                    1.0
                };
                let std = gain * (2.0 / (c_in * k * k) as f64).sqrt();
                let mut r = rng::stream(self.seed, &[rng::tag(name)]);
                Tensor::from_fn(&[c_out, c_in, k, k], |_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    z * std
                })
            }
        };
        self.params.push(Param {
            name: format!("{name}.w"),
            value: weight,
        });
        self.params.push(Param {
            name: format!("{name}.b"),
            value: Tensor::zeros(&[c_out]),
        });
    }

    fn encoder(&mut self, f: usize, arch: &ArchitectureConfig) {
        let mut c_in = 3;
        for l in 0..arch.depth {
            let c = arch.channels(l);
            self.conv(&format!("enc{f}.l{l}.c0"), c_in, c, 3, Init::He);
            self.conv(&format!("enc{f}.l{l}.c1"), c, c, 3, Init::He);
            c_in = c;
        }
        self.conv(&format!("enc{f}.mid.c0"), c_in, c_in, 3, Init::He);
        self.conv(&format!("enc{f}.mid.c1"), c_in, c_in, 3, Init::He);
    }

    fn decoder_and_head(&mut self, arch: &ArchitectureConfig) {
        let mut c_prev = arch.channels(arch.depth - 1);
        for l in (0..arch.depth).rev() {
            let c = arch.channels(l);
            self.conv(&format!("dec.l{l}.c0"), c_prev + c, c, 3, Init::He);
            self.conv(&format!("dec.l{l}.c1"), c, c, 3, Init::He);
            c_prev = c;
        }
        self.conv("head", c_prev, 3, 3, Init::Small);
    }
}

/// Single-frame U-Net with a global residual from its input.
pub fn build_deweather(arch: &ArchitectureConfig, seed: u64) -> Result<ModelGraph> {
    arch.validate()?;
    let mut b = Builder {
        seed,
        params: Vec::new(),
    };
    b.encoder(0, arch);
    b.decoder_and_head(arch);
    Ok(ModelGraph::assemble(*arch, Role::Deweather, seed, b.params))
}

/// `2n+1`-frame label constructor. Fusion convs start as per-channel
/// averages over frames, so with `n = 0` the model computes exactly what
/// [`build_deweather`] does for the same seed.
pub fn build_clc(arch: &ArchitectureConfig, seed: u64) -> Result<ModelGraph> {
    arch.validate()?;
    let frames = arch.clc_frames();
    let mut b = Builder {
        seed,
        params: Vec::new(),
    };
    for f in 0..frames {
        b.encoder(f, arch);
    }
    b.decoder_and_head(arch);
    for l in 0..arch.depth {
        let c = arch.channels(l);
        b.conv(
            &format!("fuse.l{l}"),
            frames * c,
            c,
            1,
            Init::Average {
                frames,
                channels: c,
            },
        );
    }
    let c = arch.channels(arch.depth - 1);
    b.conv(
        "fuse.mid",
        frames * c,
        c,
        1,
        Init::Average {
            frames,
            channels: c,
        },
    );
    Ok(ModelGraph::assemble(*arch, Role::Clc, seed, b.params))
}

/// A model whose parameters live on a tape.
pub struct Bound<'m> {
    model: &'m ModelGraph,
    vars: Vec<Var>,
}

struct Encoded {
    skips: Vec<Var>,
    bottleneck: Var,
}

impl<'m> Bound<'m> {
    pub fn model(&self) -> &'m ModelGraph {
        self.model
    }

    /// Tape handles of the parameters, in [`ModelGraph::params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn p(&self, name: &str) -> Var {
        self.vars[self.model.index[name]]
    }

    fn conv_relu(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let c = self.conv(tape, x, name, 1)?;
        Ok(tape.relu(c))
    }

    fn conv(&self, tape: &mut Tape, x: Var, name: &str, pad: usize) -> Result<Var> {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        tape.conv2d(x, w, Some(b), 1, pad)
    }

    fn check_image(&self, tape: &Tape, x: Var) -> Result<(usize, usize)> {
        let (c, h, w) = tape.value(x).chw()?;
        let m = self.model.arch.size_multiple();
        if c != 3 {
            return Err(Error::Dimension(format!("expected 3 channels, got {c}")));
        }
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "image {h}×{w} must have sides that are non-zero multiples of {m}"
            )));
        }
        Ok((h, w))
    }

    fn encode(&self, tape: &mut Tape, f: usize, image: Var) -> Result<Encoded> {
        let mut x = image;
        let mut skips = Vec::with_capacity(self.model.arch.depth);
        for l in 0..self.model.arch.depth {
            x = self.conv_relu(tape, x, &format!("enc{f}.l{l}.c0"))?;
            x = self.conv_relu(tape, x, &format!("enc{f}.l{l}.c1"))?;
            skips.push(x);
            x = tape.avgpool2(x)?;
        }
        x = self.conv_relu(tape, x, &format!("enc{f}.mid.c0"))?;
        let bottleneck = self.conv_relu(tape, x, &format!("enc{f}.mid.c1"))?;
        Ok(Encoded { skips, bottleneck })
    }

    fn decode(&self, tape: &mut Tape, enc: Encoded, center: Var) -> Result<Var> {
        let mut x = enc.bottleneck;
        for l in (0..self.model.arch.depth).rev() {
            let up = tape.upsample_nearest2(x)?;
            let cat = tape.concat_channels(&[up, enc.skips[l]])?;
            x = self.conv_relu(tape, cat, &format!("dec.l{l}.c0"))?;
            x = self.conv_relu(tape, x, &format!("dec.l{l}.c1"))?;
        }
        let head = self.conv(tape, x, "head", 1)?;
        let out = tape.add(center, head)?;
        Ok(tape.clamp01(out))
    }

    /// Restored image for `frames` (one frame for the de-weathering model,
    /// `2n+1` for the label constructor, centre frame in the middle).
    pub fn forward(&self, tape: &mut Tape, frames: &[Var]) -> Result<Var> {
        let expected = self.model.frames();
        if frames.len() != expected {
            return Err(Error::Contract(format!(
                "{} model takes {expected} frames, got {}",
                self.model.role.as_str(),
                frames.len()
            )));
        }
        let dims = self.check_image(tape, frames[0])?;
        for &f in &frames[1..] {
            if self.check_image(tape, f)? != dims {
                return Err(Error::Dimension("input frames differ in size".into()));
            }
        }
        match self.model.role {
            Role::Deweather => {
                let enc = self.encode(tape, 0, frames[0])?;
                self.decode(tape, enc, frames[0])
            }
            Role::Clc => {
                let encoded = frames
                    .iter()
                    .enumerate()
                    .map(|(f, &x)| self.encode(tape, f, x))
                    .collect::<Result<Vec<_>>>()?;
                let mut skips = Vec::with_capacity(self.model.arch.depth);
                for l in 0..self.model.arch.depth {
                    let parts: Vec<Var> = encoded.iter().map(|e| e.skips[l]).collect();
                    skips.push(self.fuse(tape, &parts, &format!("fuse.l{l}"))?);
                }
                let parts: Vec<Var> = encoded.iter().map(|e| e.bottleneck).collect();
                let bottleneck = self.fuse(tape, &parts, "fuse.mid")?;
                let center = frames[self.model.arch.frames_n];
                self.decode(tape, Encoded { skips, bottleneck }, center)
            }
        }
    }

    fn fuse(&self, tape: &mut Tape, parts: &[Var], name: &str) -> Result<Var> {
        let cat = tape.concat_channels(parts)?;
        self.conv(tape, cat, name, 0)
    }

    /// Bottleneck features of the de-weathering encoder, shape
    /// `B·2^(D−1) × H/2^D × W/2^D`.
    pub fn encoder_features(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        if self.model.role != Role::Deweather {
            return Err(Error::Contract(
                "encoder features are only defined for the de-weathering model".into(),
            ));
        }
        self.check_image(tape, image)?;
        Ok(self.encode(tape, 0, image)?.bottleneck)
    }
}
