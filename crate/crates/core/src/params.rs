//! Named parameter tensors for the three networks.

use std::collections::{BTreeMap, HashMap};

use autograd::{Graph, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// The three independently optimized parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Generator,
    Discriminator,
    Encoder,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Generator, Group::Discriminator, Group::Encoder];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Generator => "generator",
            Group::Discriminator => "discriminator",
            Group::Encoder => "encoder",
        }
    }

    pub fn of(name: &str) -> Option<Group> {
        let prefix = name.split('.').next()?;
        Group::ALL.into_iter().find(|g| g.prefix() == prefix)
    }
}

/// Ordered map from dotted parameter names to tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterStore<R: Real> {
    tensors: BTreeMap<String, Tensor<R>>,
}

impl<R: Real> ParameterStore<R> {
    pub fn new() -> Self {
        ParameterStore { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<R>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<R>> {
        self.get(name).ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<R>)> {
        self.tensors.iter()
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

    pub fn group(&self, group: Group) -> impl Iterator<Item = (&String, &Tensor<R>)> {
        self.tensors.iter().filter(move |(name, _)| Group::of(name) == Some(group))
    }

    /// Total scalar count of one group.
    pub fn group_size(&self, group: Group) -> usize {
        self.group(group).map(|(_, t)| t.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> ParameterStore<S> {
        ParameterStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// True when every tensor of `group` matches `other` bit for bit.
    pub fn group_identical(&self, other: &ParameterStore<R>, group: Group) -> bool {
        self.group(group).all(|(name, t)| {
            other.get(name).is_some_and(|o| {
                o.shape() == t.shape() && o.data().iter().zip(t.data()).all(|(&a, &b)| bits_eq(a, b))
            })
        })
    }
}

/// Bitwise equality, so that `0.0` and `-0.0` differ and NaNs compare by payload.
pub fn bits_eq<R: Real>(a: R, b: R) -> bool {
    let (mut x, mut y) = (Vec::with_capacity(8), Vec::with_capacity(8));
    a.write_le(&mut x);
    b.write_le(&mut y);
    x == y
}

/// Parameters registered on a graph, either as trainable leaves or as
/// frozen constants.
pub struct Bound<'g, R: Real> {
    vars: HashMap<String, Var<'g, R>>,
    trainable: Vec<(String, Var<'g, R>)>,
}

impl<'g, R: Real> Bound<'g, R> {
    /// Registers every tensor whose group is in `groups`; members of
    /// `trainable` become differentiable leaves.
    pub fn new(graph: &'g Graph<R>, store: &ParameterStore<R>, groups: &[Group], trainable: &[Group]) -> Self {
        let mut vars = HashMap::new();
        let mut leaves = Vec::new();
        for (name, tensor) in store.iter() {
            let Some(group) = Group::of(name) else { continue };
            if !groups.contains(&group) {
                continue;
            }
            let var = if trainable.contains(&group) {
                let v = graph.param(tensor.clone());
                leaves.push((name.clone(), v));
                v
            } else {
                graph.constant(tensor.clone())
            };
            vars.insert(name.clone(), var);
        }
        Bound { vars, trainable: leaves }
    }

    pub fn var(&self, name: &str) -> Var<'g, R> {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` was not bound"))
    }

    pub fn maybe(&self, name: &str) -> Option<Var<'g, R>> {
        self.vars.get(name).copied()
    }

    pub fn trainable(&self) -> &[(String, Var<'g, R>)] {
        &self.trainable
    }
}

/// Uniform initializer on `[-bound, bound]`.
pub fn uniform_tensor<R: Real>(shape: &[usize], bound: f64, rng: &mut RngStream) -> Tensor<R> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::from_f64(shape, &data)
}

/// PyTorch-style default for linear and conv layers: `±1/√fan_in`.
pub fn default_init<R: Real>(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor<R> {
    uniform_tensor(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}
