use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Ordered, named learnable tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor with the same-named one from `other`, checking
    /// names, order and shapes.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config(format!(
                "parameter layout mismatch: expected {:?}, got {:?}",
                self.names, other.names
            )));
        }
        for ((name, mine), theirs) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    theirs.shape(),
                    mine.shape()
                )));
            }
        }
        self.tensors = other.tensors.clone();
        Ok(())
    }
}

/// A direct multi-horizon forecaster mapping `[B, L, C]` to `[B, H, C]`.
pub trait Forecaster {
    fn lookback(&self) -> usize;

    fn horizon(&self) -> usize;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Records the forward pass. `params` holds one tape variable per entry of
    /// [`Forecaster::params`], in order.
    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var>;

    /// Forward pass without gradients.
    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params()
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// Validates a `[B, L, C]` input against a model's lookback and returns its extents.
pub(crate) fn input_dims(
    tape: &Tape,
    x: Var,
    lookback: usize,
    channels: Option<usize>,
) -> Result<(usize, usize, usize)> {
    let [b, l, c] = *tape.value(x).shape() else {
        return Err(Error::Argument(format!(
            "forecaster input must be [B, L, C], got {:?}",
            tape.value(x).shape()
        )));
    };
    if l != lookback {
        return Err(Error::dim("forward", 1, lookback, l));
    }
    if let Some(expected) = channels {
        if c != expected {
            return Err(Error::dim("forward", 2, expected, c));
        }
    }
    Ok((b, l, c))
}
