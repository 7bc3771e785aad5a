//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] owns every value produced during a forward pass. Each
//! operation appends one node recording its inputs, so node order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use super::conv::{conv2d, conv2d_backward, ConvParams};
use super::resample::{upsample_bilinear, upsample_bilinear_backward};
use super::{Element, Shape, Tensor};
use crate::deformable::{self, DeformParams};
use crate::error::{Error, Result};
use crate::train::loss;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Backward rule of a custom node: `(inputs, output, grad_output)` to one
/// gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>>;

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        params: ConvParams,
    },
    DeformConv2d {
        input: Var,
        offsets: Var,
        mask: Var,
        weight: Var,
        bias: Option<Var>,
        params: DeformParams,
    },
    BilinearSample {
        feature: Var,
        coords: Var,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Upsample {
        input: Var,
        scale: usize,
    },
    MuLaw {
        input: Var,
        mu: f64,
        denom: f64,
    },
    L1Mean {
        pred: Var,
        target: Var,
    },
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        backward: BackwardFn<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            } => [Some(*input), Some(*weight), *bias].into_iter().flatten().collect(),
            Op::DeformConv2d {
                input,
                offsets,
                mask,
                weight,
                bias,
                ..
            } => [Some(*input), Some(*offsets), Some(*mask), Some(*weight), *bias]
                .into_iter()
                .flatten()
                .collect(),
            Op::BilinearSample { feature, coords } => vec![*feature, *coords],
            Op::Activation { input, .. }
            | Op::Upsample { input, .. }
            | Op::MuLaw { input, .. } => vec![*input],
            Op::Concat(parts) => parts.clone(),
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) => vec![*a],
            Op::L1Mean { pred, target } => vec![*pred, *target],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant by [`Graph::backward`].
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        params: ConvParams,
    ) -> Result<Var> {
        let out = conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            params,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                params,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = match kind {
            Activation::Relu => self.value(input).map(|v| v.max(T::zero())),
            Activation::LeakyRelu(a) => {
                let a = T::from_f64(a);
                self.value(input)
                    .map(|v| if v > T::zero() { v } else { a * v })
            }
            Activation::Sigmoid => self
                .value(input)
                .map(|v| T::one() / (T::one() + (-v).exp())),
        };
        self.push(out, Op::Activation { input, kind })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Var {
        self.activation(input, Activation::LeakyRelu(alpha))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn upsample_bilinear(&mut self, input: Var, scale: usize) -> Result<Var> {
        let out = upsample_bilinear(self.value(input), scale)?;
        Ok(self.push(out, Op::Upsample { input, scale }))
    }

    /// `log(1 + mu * x) / denom`, with negative inputs clamped to zero.
    pub fn mu_law(&mut self, input: Var, mu: f64, denom: f64) -> Var {
        let out = loss::mu_law_tensor(self.value(input), mu, denom);
        self.push(out, Op::MuLaw { input, mu, denom })
    }

    /// Mean absolute difference, reduced to a scalar.
    pub fn l1_mean(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.value(pred).zip_map(self.value(target), |a, b| (a - b).abs())?;
        let total: f64 = diff.data().iter().map(|v| v.as_f64()).sum();
        let out = Tensor::scalar(T::from_f64(total / diff.numel() as f64));
        Ok(self.push(out, Op::L1Mean { pred, target }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().map(|v| v.as_f64()).sum();
        let out = Tensor::scalar(T::from_f64(total));
        self.push(out, Op::Sum(input))
    }

    /// Node with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Propagates `d(loss)/d(node)` to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (input, grad) in self.input_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                params,
            } => {
                let (gi, gw, gb) = conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    bias.is_some(),
                    g,
                    *params,
                    self.needs(*input),
                )?;
                if let Some(gi) = gi {
                    out.push((*input, gi));
                }
                out.push((*weight, gw));
                if let (Some(b), Some(gb)) = (bias, gb) {
                    let shape = self.shape(*b);
                    out.push((*b, gb.reshape(shape)?));
                }
            }
            Op::DeformConv2d {
                input,
                offsets,
                mask,
                weight,
                bias,
                params,
            } => {
                let grads = deformable::deform_conv2d_backward(
                    self.value(*input),
                    self.value(*offsets),
                    self.value(*mask),
                    self.value(*weight),
                    bias.is_some(),
                    g,
                    *params,
                )?;
                out.push((*input, grads.input));
                out.push((*offsets, grads.offsets));
                out.push((*mask, grads.mask));
                out.push((*weight, grads.weight));
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    let shape = self.shape(*b);
                    out.push((*b, gb.reshape(shape)?));
                }
            }
            Op::BilinearSample { feature, coords } => {
                let (gf, gc) = deformable::bilinear_sample_backward(
                    self.value(*feature),
                    self.value(*coords),
                    g,
                )?;
                out.push((*feature, gf));
                out.push((*coords, gc));
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let grad = match *kind {
                    Activation::Relu => x.zip_map(g, |x, g| if x > T::zero() { g } else { T::zero() })?,
                    Activation::LeakyRelu(a) => {
                        let a = T::from_f64(a);
                        x.zip_map(g, |x, g| if x > T::zero() { g } else { a * g })?
                    }
                    Activation::Sigmoid => node
                        .value
                        .zip_map(g, |y, g| g * y * (T::one() - y))?,
                };
                out.push((*input, grad));
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| self.shape(*p).c()).collect();
                for (p, grad) in parts.iter().zip(g.split_channels(&widths)?) {
                    out.push((*p, grad));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul(a, b) => {
                out.push((*a, g.zip_map(self.value(*b), |g, y| g * y)?));
                out.push((*b, g.zip_map(self.value(*a), |g, x| g * x)?));
            }
            Op::Scale(a, s) => out.push((*a, g.scale(*s))),
            Op::Upsample { input, scale } => {
                let s = self.shape(*input);
                out.push((*input, upsample_bilinear_backward(g, s.h(), s.w(), *scale)));
            }
            Op::MuLaw { input, mu, denom } => {
                let (mu, denom) = (*mu, *denom);
                let grad = self.value(*input).zip_map(g, |x, g| {
                    g * T::from_f64(loss::mu_law_derivative(x.as_f64(), mu, denom))
                })?;
                out.push((*input, grad));
            }
            Op::L1Mean { pred, target } => {
                let p = self.value(*pred);
                let scale = g.data()[0] / T::from_f64(p.numel() as f64);
                let gp = p.zip_map(self.value(*target), |a, b| {
                    if a > b {
                        scale
                    } else if a < b {
                        -scale
                    } else {
                        T::zero()
                    }
                })?;
                if self.needs(*target) {
                    out.push((*target, gp.scale(-T::one())));
                }
                out.push((*pred, gp));
            }
            Op::Sum(a) => out.push((*a, Tensor::full(self.shape(*a), g.data()[0]))),
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = backward(&values, &node.value, g);
                if grads.len() != inputs.len() {
                    return Err(Error::InvalidArgument(format!(
                        "custom backward returned {} gradients for {} inputs",
                        grads.len(),
                        inputs.len()
                    )));
                }
                out.extend(inputs.iter().copied().zip(grads));
            }
        }
        Ok(out)
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a node, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a node; unreachable nodes get zeros.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }
}
