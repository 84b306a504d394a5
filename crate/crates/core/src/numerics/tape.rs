//! Reverse-mode differentiation over a linear tape of tensor operations.

use std::sync::Arc;

use num_complex::Complex64;

use super::fft;
use super::ops;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, f64),
    GlobalAvgPool(Var),
    Softmax(Var),
    Gather(Var, Vec<usize>),
    NormalizeSum(Var),
    WeightedSum { items: Vec<Var>, weights: Var },
    FreqTransform { x: Var, inverse: bool },
    Nmse { pred: Var, target: Arc<Tensor> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias } => vec![*input, *kernel, *bias],
            Op::Relu(x)
            | Op::Scale(x, _)
            | Op::GlobalAvgPool(x)
            | Op::Softmax(x)
            | Op::Gather(x, _)
            | Op::NormalizeSum(x)
            | Op::FreqTransform { x, .. } => vec![*x],
            Op::Add(a, b) => vec![*a, *b],
            Op::WeightedSum { items, weights } => {
                let mut v = items.clone();
                v.push(*weights);
                v
            }
            Op::Nmse { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Records a computation in topological order.
///
/// Nodes are appended as operations run, so every node's inputs precede it.
/// A tape is confined to one thread; independent samples use independent tapes.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`; zero when `v` did not influence the outputs.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn eval(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let v = |x: &Var| &nodes[x.0].value;
    match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::Conv2d { input, kernel, bias } => ops::conv2d(v(input), v(kernel), v(bias)),
        Op::Relu(x) => Ok(ops::relu(v(x))),
        Op::Add(a, b) => ops::add(v(a), v(b)),
        Op::Scale(x, c) => Ok(ops::scale(v(x), *c)),
        Op::GlobalAvgPool(x) => ops::global_avg_pool(v(x)),
        Op::Softmax(x) => ops::softmax(v(x)),
        Op::Gather(x, idx) => {
            let src = v(x);
            let data = idx
                .iter()
                .map(|&i| {
                    src.data()
                        .get(i)
                        .copied()
                        .ok_or_else(|| Error::shape(format!("gather index {i} out of {}", src.len())))
                })
                .collect::<Result<Vec<_>>>()?;
            Tensor::new(&[idx.len()], data)
        }
        Op::NormalizeSum(x) => Ok(ops::normalize_sum(v(x))),
        Op::WeightedSum { items, weights } => {
            let items: Vec<&Tensor> = items.iter().map(v).collect();
            ops::weighted_sum(&items, v(weights))
        }
        Op::FreqTransform { x, inverse } => freq_transform(v(x), *inverse),
        Op::Nmse { pred, target } => Ok(Tensor::scalar(ops::nmse(v(pred), target)?)),
    }
}

/// DFT along axis 1 of a `[rows, n, 2]` real/imaginary tensor.
pub fn freq_transform(x: &Tensor, inverse: bool) -> Result<Tensor> {
    let (rows, n) = match *x.shape() {
        [rows, n, 2] => (rows, n),
        ref s => {
            return Err(Error::shape(format!(
                "frequency transform expects [rows, n, 2], got {s:?}"
            )))
        }
    };
    let mut buf: Vec<Complex64> = x.data().chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    if rows > 0 {
        fft::transform_rows(&mut buf, n, inverse)?;
    }
    let data = buf.iter().flat_map(|c| [c.re, c.im]).collect();
    Tensor::new(x.shape(), data)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Adds an input tensor. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.nodes)?;
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        self.push(Op::Conv2d { input, kernel, bias })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(x, c))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.push(Op::GlobalAvgPool(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Softmax(x))
    }

    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.push(Op::Gather(x, indices.to_vec()))
    }

    pub fn normalize_sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::NormalizeSum(x))
    }

    pub fn weighted_sum(&mut self, items: &[Var], weights: Var) -> Result<Var> {
        self.push(Op::WeightedSum {
            items: items.to_vec(),
            weights,
        })
    }

    pub fn fft_freq(&mut self, x: Var) -> Result<Var> {
        self.push(Op::FreqTransform { x, inverse: false })
    }

    pub fn ifft_freq(&mut self, x: Var) -> Result<Var> {
        self.push(Op::FreqTransform { x, inverse: true })
    }

    /// Scalar NMSE of `pred` against a constant reference.
    pub fn nmse(&mut self, pred: Var, target: Arc<Tensor>) -> Result<Var> {
        self.push(Op::Nmse { pred, target })
    }

    /// Re-evaluates every non-leaf node from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut fresh: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, &fresh)?,
            };
            fresh.push(Node {
                op: node.op.clone(),
                value,
                needs_grad: node.needs_grad,
            });
        }
        Ok(fresh.into_iter().map(|n| n.value).collect())
    }

    /// Reverse pass seeded with `d(objective)/d(output)` for each listed output.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::usage("backward on an empty tape"));
        }
        if seeds.is_empty() {
            return Err(Error::usage("backward needs at least one seeded output"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            let node = self
                .nodes
                .get(v.0)
                .ok_or_else(|| Error::usage(format!("seed {v:?} not on this tape")))?;
            g.expect_shape(node.value.shape(), "backward seed")?;
            accumulate(&mut grads[v.0], g.clone())?;
        }

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let val = |x: &Var| &self.nodes[x.0].value;
            let send = |grads: &mut Vec<Option<Tensor>>, to: Var, t: Tensor| -> Result<()> {
                if self.nodes[to.0].needs_grad {
                    accumulate(&mut grads[to.0], t)?;
                }
                Ok(())
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d { input, kernel, bias } => {
                    let (gi, gk, gb) = ops::conv2d_backward(val(input), val(kernel), val(bias), &g)?;
                    send(&mut grads, *input, gi)?;
                    send(&mut grads, *kernel, gk)?;
                    send(&mut grads, *bias, gb)?;
                }
                Op::Relu(x) => send(&mut grads, *x, ops::relu_backward(val(x), &g))?,
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone())?;
                    send(&mut grads, *b, g)?;
                }
                Op::Scale(x, c) => send(&mut grads, *x, ops::scale(&g, *c))?,
                Op::GlobalAvgPool(x) => send(&mut grads, *x, ops::global_avg_pool_backward(val(x).shape(), &g))?,
                Op::Softmax(x) => send(&mut grads, *x, ops::softmax_backward(&node.value, &g))?,
                Op::Gather(x, indices) => {
                    let mut gx = Tensor::zeros(val(x).shape());
                    for (&i, gv) in indices.iter().zip(g.data()) {
                        gx.data_mut()[i] += gv;
                    }
                    send(&mut grads, *x, gx)?;
                }
                Op::NormalizeSum(x) => send(&mut grads, *x, ops::normalize_sum_backward(val(x), &g))?,
                Op::WeightedSum { items, weights } => {
                    let wts = val(weights);
                    let mut gw = Vec::with_capacity(items.len());
                    for (item, &wt) in items.iter().zip(wts.data()) {
                        gw.push(val(item).data().iter().zip(g.data()).map(|(a, b)| a * b).sum());
                        send(&mut grads, *item, ops::scale(&g, wt))?;
                    }
                    send(&mut grads, *weights, Tensor::new(wts.shape(), gw)?)?;
                }
                Op::FreqTransform { x, inverse } => {
                    // Adjoint of the unnormalized DFT is N * IDFT; of the IDFT, DFT / N.
                    let n = val(x).shape()[1] as f64;
                    let t = freq_transform(&g, !inverse)?;
                    let c = if *inverse { 1.0 / n } else { n };
                    send(&mut grads, *x, ops::scale(&t, c))?;
                }
                Op::Nmse { pred, target } => {
                    send(&mut grads, *pred, ops::nmse_backward(val(pred), target, g.item()))?;
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.accumulate(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tape_backward_is_usage_error() {
        let tape = Tape::new();
        let err = tape.backward(&[(Var(0), Tensor::scalar(1.0))]);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[3], 2.0), true);
        let unused = tape.leaf(Tensor::full(&[2], 5.0), true);
        let y = tape.softmax(x).unwrap();
        let g = tape.backward(&[(y, Tensor::full(&[3], 1.0))]).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2]));
    }

    #[test]
    fn sum_gradient_is_ones() {
        // sum(x) expressed as a weighted sum with unit weights.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[5], |i| i as f64), true);
        let parts: Vec<Var> = (0..5).map(|i| tape.gather(x, &[i]).unwrap()).collect();
        let ones = tape.constant(Tensor::full(&[5], 1.0));
        let s = tape.weighted_sum(&parts, ones).unwrap();
        assert_eq!(tape.value(s).item(), 10.0);
        let g = tape.backward(&[(s, Tensor::scalar(1.0))]).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0; 5]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[3, 4, 2], |i| (i as f64).cos()), true);
        let k = tape.leaf(Tensor::from_fn(&[3, 3, 2, 2], |i| (i as f64 * 0.7).sin()), true);
        let b = tape.leaf(Tensor::full(&[2], 0.1), true);
        let c = tape.conv2d(x, k, b).unwrap();
        let r = tape.relu(c).unwrap();
        let f = tape.ifft_freq(r).unwrap();
        let replayed = tape.replay().unwrap();
        assert_eq!(&replayed[f.index()], tape.value(f));
    }
}
