use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{he_normal, Tape, Tensor, Var};

/// Parameters keyed by dotted path, e.g. `expert.2.block.1.conv.0.kernel`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::usage(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::usage(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> {
        self.tensors
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count under `prefix` (empty prefix: everything).
    pub fn scalar_count(&self, prefix: &str) -> usize {
        self.with_prefix(prefix).map(|(_, t)| t.len()).sum()
    }

    /// Registers every parameter under `prefix` as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, prefix: &str, requires_grad: bool) -> BoundParams {
        let mut bound = BoundParams::default();
        self.bind_into(tape, prefix, requires_grad, &mut bound);
        bound
    }

    pub fn bind_into(&self, tape: &mut Tape, prefix: &str, requires_grad: bool, bound: &mut BoundParams) {
        for (name, t) in self.with_prefix(prefix) {
            let v = tape.leaf(t.clone(), requires_grad);
            bound.vars.insert(name.to_string(), v);
        }
    }
}

/// Parameter names mapped to their leaves on one tape.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::usage(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// A 3x3 same-padded convolution layer in a conv stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
        }
    }

    pub fn kernel_name(&self, prefix: &str) -> String {
        format!("{prefix}{}.kernel", self.name)
    }

    pub fn bias_name(&self, prefix: &str) -> String {
        format!("{prefix}{}.bias", self.name)
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [3, 3, self.cin, self.cout]
    }

    pub fn param_count(&self) -> usize {
        9 * self.cin * self.cout + self.cout
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (h * w * 9 * self.cin * self.cout) as u64
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
        let k = params.var(&self.kernel_name(prefix))?;
        let b = params.var(&self.bias_name(prefix))?;
        tape.conv2d(x, k, b)
    }
}

/// He-normal kernels and zero biases for every layer.
pub fn init_layers(layers: &[ConvLayer], prefix: &str, rng: &mut impl Rng, into: &mut ModelParams) -> Result<()> {
    for l in layers {
        into.insert(l.kernel_name(prefix), he_normal(&l.kernel_shape(), 9 * l.cin, rng))?;
        into.insert(l.bias_name(prefix), Tensor::zeros(&[l.cout]))?;
    }
    Ok(())
}

/// Checks that `params` holds exactly the layer tensors under `prefix`.
pub fn check_layers(layers: &[ConvLayer], prefix: &str, params: &ModelParams) -> Result<()> {
    let mut expected = 0;
    for l in layers {
        params
            .get(&l.kernel_name(prefix))?
            .expect_shape(&l.kernel_shape(), &l.kernel_name(prefix))?;
        params
            .get(&l.bias_name(prefix))?
            .expect_shape(&[l.cout], &l.bias_name(prefix))?;
        expected += 2;
    }
    let found = params.with_prefix(prefix).count();
    if found != expected {
        return Err(Error::shape(format!(
            "`{prefix}*` holds {found} tensors, architecture defines {expected}"
        )));
    }
    Ok(())
}
