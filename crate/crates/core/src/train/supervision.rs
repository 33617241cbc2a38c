//! How the student's outputs are scored against the two kinds of label.

use crate::error::{Error, Result};
use crate::losses::{ias_loss, l1_loss, FrozenFeatureStack, IasBatch, LossBreakdown, LossWeights};
use crate::models::Bound;
use crate::tensor::{Tape, Var};

/// Everything a supervision mode may read during one student step.
pub struct SupervisionInputs<'a> {
    pub outputs: &'a [Var],
    pub labels: &'a [Var],
    /// Frozen-CLC pseudo-labels; `None` for modes that do not need them.
    pub pseudos: Option<&'a [Var]>,
    pub student: &'a Bound<'a>,
    pub stack: &'a FrozenFeatureStack,
    pub sw_seed: u64,
    pub weights: &'a LossWeights,
}

impl SupervisionInputs<'_> {
    fn pseudos(&self, mode: &str) -> Result<&[Var]> {
        self.pseudos
            .ok_or_else(|| Error::Contract(format!("supervision '{mode}' needs pseudo-labels")))
    }
}

pub trait Supervision: Send + Sync {
    fn name(&self) -> &'static str;
    fn needs_pseudo_labels(&self) -> bool;
    fn loss(&self, tape: &mut Tape, inputs: &SupervisionInputs<'_>)
        -> Result<(Var, LossBreakdown)>;
}

fn mean_l1(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<Var> {
    let mut acc = l1_loss(tape, a[0], b[0])?;
    for i in 1..a.len() {
        let t = l1_loss(tape, a[i], b[i])?;
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / a.len() as f64))
}

/// Pseudo-label ℓ1 plus the feature/distribution terms on original labels.
pub struct PseudoAndOriginal;

impl Supervision for PseudoAndOriginal {
    fn name(&self) -> &'static str {
        "pseudo_and_original"
    }

    fn needs_pseudo_labels(&self) -> bool {
        true
    }

    fn loss(&self, tape: &mut Tape, inp: &SupervisionInputs<'_>) -> Result<(Var, LossBreakdown)> {
        let batch = IasBatch {
            outputs: inp.outputs,
            pseudos: inp.pseudos(self.name())?,
            labels: inp.labels,
        };
        ias_loss(
            tape,
            &batch,
            |t, x| inp.student.encoder_features(t, x),
            inp.stack,
            inp.sw_seed,
            inp.weights,
        )
    }
}

/// Plain ℓ1 against the imperfect labels: the baseline.
pub struct OriginalOnly;

impl Supervision for OriginalOnly {
    fn name(&self) -> &'static str {
        "original_only"
    }

    fn needs_pseudo_labels(&self) -> bool {
        false
    }

    fn loss(&self, tape: &mut Tape, inp: &SupervisionInputs<'_>) -> Result<(Var, LossBreakdown)> {
        let l = mean_l1(tape, inp.outputs, inp.labels)?;
        let total = tape.value(l).item();
        Ok((
            l,
            LossBreakdown {
                total,
                ..LossBreakdown::default()
            },
        ))
    }
}

/// Plain ℓ1 against the pseudo-labels only.
pub struct PseudoOnly;

impl Supervision for PseudoOnly {
    fn name(&self) -> &'static str {
        "pseudo_only"
    }

    fn needs_pseudo_labels(&self) -> bool {
        true
    }

    fn loss(&self, tape: &mut Tape, inp: &SupervisionInputs<'_>) -> Result<(Var, LossBreakdown)> {
        let l = mean_l1(tape, inp.outputs, inp.pseudos(self.name())?)?;
        let total = tape.value(l).item();
        Ok((
            l,
            LossBreakdown {
                total,
                l1_pseudo: total,
                ..LossBreakdown::default()
            },
        ))
    }
}

pub struct SupervisionRegistry {
    modes: Vec<Box<dyn Supervision>>,
}

impl Default for SupervisionRegistry {
    fn default() -> Self {
        let mut r = SupervisionRegistry::empty();
        r.register(Box::new(PseudoAndOriginal));
        r.register(Box::new(OriginalOnly));
        r.register(Box::new(PseudoOnly));
        r
    }
}

impl SupervisionRegistry {
    pub fn empty() -> Self {
        SupervisionRegistry { modes: Vec::new() }
    }

    /// Adds a mode, replacing any existing one of the same name.
    pub fn register(&mut self, mode: Box<dyn Supervision>) {
        self.modes.retain(|m| m.name() != mode.name());
        self.modes.push(mode);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Supervision> {
        self.modes
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown supervision '{name}' (known: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.modes.iter().map(|m| m.name()).collect()
    }
}
