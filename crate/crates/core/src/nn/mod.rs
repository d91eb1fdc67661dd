//! Network definitions and their parameter bookkeeping.
//!
//! Parameters live outside the tape in a [`ParamSet`], keyed by stable path
//! strings such as `enc.ir.eb2.conv_a.weight`. Each forward pass binds the
//! set onto a fresh tape, and gradients are read back by the same keys.

pub mod discriminator;
pub mod generator;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Shape, Tape, Tensor, Var};

pub use discriminator::{
    AttentionMaps, DetailedConfig, DetailedDiscriminator, Discriminator, DiscriminatorKind, SalientConfig,
    SalientDiscriminator,
};
pub use generator::{AfsTerms, FeatureMapSet, Generator, GeneratorConfig, GeneratorTrace};

/// Named learnable tensors of one network, iterated in key order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }

    /// Checks that the set holds exactly the tensors described by `specs`.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.len()
            )));
        }
        for spec in specs {
            let t = self
                .get(&spec.name)
                .ok_or_else(|| Error::Contract(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape {
                return Err(Error::Dimension(format!(
                    "parameter {} has shape {} but the network expects {}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Wraps handles that are already on a tape.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients by parameter name. Parameters that did not take part in the
    /// pass get zeros.
    pub fn grads<T: Real>(&self, tape: &Tape<T>) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            let t = tape
                .grad_tensor(v)
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
            out.insert(name.clone(), t);
        }
        out
    }
}

/// Name, shape and initialisation fan-in of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    /// `None` for biases, which start at zero.
    pub fan_in: Option<usize>,
}

/// Kaiming-style fan-in uniform weights and zero biases, drawn in spec order.
pub fn init_params<T: Real>(specs: &[ParamSpec], seed: u64, leaky_slope: f64) -> ParamSet<T> {
    let gain = (2.0 / (1.0 + leaky_slope * leaky_slope)).sqrt();
    let mut rng = Rng::new(seed);
    let mut set = ParamSet::new();
    for spec in specs {
        let t = match spec.fan_in {
            Some(fan_in) => {
                let bound = gain * (3.0 / fan_in as f64).sqrt();
                Tensor::from_fn(spec.shape, |_| T::lit(rng.uniform_in(-bound, bound)))
            }
            None => Tensor::zeros(spec.shape),
        };
        set.insert(spec.name.clone(), t);
    }
    set
}

/// Square-kernel convolution layer descriptor.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Stride 1 with "same" padding for odd `k`.
    pub fn same(name: impl Into<String>, in_ch: usize, out_ch: usize, k: usize) -> Self {
        Conv {
            name: name.into(),
            in_ch,
            out_ch,
            k,
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.weight", self.name),
            shape: Shape::new(self.out_ch, self.in_ch, self.k, self.k),
            fan_in: Some(self.in_ch * self.k * self.k),
        });
        out.push(ParamSpec {
            name: format!("{}.bias", self.name),
            shape: Shape::new(1, self.out_ch, 1, 1),
            fan_in: None,
        });
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        tape.conv2d(x, w, b, self.stride, self.pad)
    }

    /// Convolution followed by leaky ReLU.
    pub fn forward_act<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, slope: f64) -> Result<Var> {
        let y = self.forward(tape, p, x)?;
        tape.leaky_relu(y, slope)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    pub name: String,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.weight", self.name),
            shape: Shape::new(self.n_out, self.n_in, 1, 1),
            fan_in: Some(self.n_in),
        });
        out.push(ParamSpec {
            name: format!("{}.bias", self.name),
            shape: Shape::new(1, self.n_out, 1, 1),
            fan_in: None,
        });
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        tape.dense(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut specs = Vec::new();
        Conv::same("a", 3, 4, 3).specs(&mut specs);
        let p1: ParamSet<f32> = init_params(&specs, 9, 0.2);
        let p2: ParamSet<f32> = init_params(&specs, 9, 0.2);
        let p3: ParamSet<f32> = init_params(&specs, 10, 0.2);
        assert_eq!(p1, p2);
        assert_ne!(p1, p3);
        let bound = (2.0f64 / 1.04).sqrt() * (3.0f64 / 27.0).sqrt();
        assert!(p1.get("a.weight").unwrap().data().iter().all(|v| (*v as f64).abs() <= bound));
        assert!(p1.get("a.bias").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(p1.validate(&specs).is_ok());
    }

    #[test]
    fn validate_rejects_shape_drift() {
        let mut specs = Vec::new();
        Conv::same("a", 1, 2, 3).specs(&mut specs);
        let mut p: ParamSet<f64> = init_params(&specs, 0, 0.2);
        p.insert("a.bias", Tensor::zeros(Shape::new(1, 3, 1, 1)));
        assert!(matches!(p.validate(&specs), Err(Error::Dimension(_))));
        p.insert("extra", Tensor::zeros(Shape::scalar()));
        assert!(matches!(p.validate(&specs), Err(Error::Contract(_))));
    }

    #[test]
    fn iteration_is_lexicographic() {
        let mut p = ParamSet::<f32>::new();
        p.insert("b", Tensor::zeros(Shape::scalar()));
        p.insert("a", Tensor::zeros(Shape::scalar()));
        p.insert("a.z", Tensor::zeros(Shape::scalar()));
        let names: Vec<&String> = p.names().collect();
        assert_eq!(names, ["a", "a.z", "b"]);
    }
}
