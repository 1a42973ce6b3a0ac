//! Static computation graph: a topologically ordered list of nodes with
//! named parameters, plus generic forward and backward executors.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Input,
    Conv {
        weight: String,
        bias: String,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Deconv {
        weight: String,
        stride: usize,
    },
    /// Center-crops input 0 to the spatial size of input 1.
    CropLike,
    WSum {
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    HeNormal,
    Bilinear,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub dims: [usize; 4],
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub params: Vec<ParamSpec>,
    pub output: usize,
}

pub type Params<T> = BTreeMap<String, Tensor<T>>;
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

pub enum Phase<'r> {
    Train(&'r mut ChaCha8Rng),
    Infer,
}

#[derive(Debug)]
enum Cache<T: Scalar> {
    None,
    Pool(Vec<u32>),
    Dropout(Vec<T>),
}

#[derive(Debug)]
pub struct ForwardPass<T: Scalar> {
    pub activations: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn output(&self, graph: &Graph) -> &Tensor<T> {
        &self.activations[graph.output]
    }
}

impl Graph {
    /// Structural checks: edges point backward, arities match the ops,
    /// parameter references resolve, the output index exists.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(NnError::InvalidConfig("graph has no nodes".into()));
        }
        if self.output >= self.nodes.len() {
            return Err(NnError::InvalidConfig(format!(
                "output index {} out of range",
                self.output
            )));
        }
        let param_names: std::collections::BTreeSet<&str> =
            self.params.iter().map(|p| p.name.as_str()).collect();
        if param_names.len() != self.params.len() {
            return Err(NnError::InvalidConfig("duplicate parameter name".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            for &inp in &node.inputs {
                if inp >= i {
                    return Err(NnError::InvalidConfig(format!(
                        "node {} ({}) consumes node {} which does not precede it",
                        i, node.name, inp
                    )));
                }
            }
            let arity_ok = match &node.op {
                Op::Input => node.inputs.is_empty(),
                Op::CropLike => node.inputs.len() == 2,
                Op::WSum { weights } => !weights.is_empty() && node.inputs.len() == weights.len(),
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(NnError::InvalidConfig(format!(
                    "node {} ({:?}) has wrong input count {}",
                    node.name,
                    node.op,
                    node.inputs.len()
                )));
            }
            match &node.op {
                Op::Conv { weight, bias, .. } => {
                    for p in [weight, bias] {
                        if !param_names.contains(p.as_str()) {
                            return Err(NnError::InvalidConfig(format!(
                                "node {} references unknown parameter {p}",
                                node.name
                            )));
                        }
                    }
                }
                Op::Deconv { weight, .. } => {
                    if !param_names.contains(weight.as_str()) {
                        return Err(NnError::InvalidConfig(format!(
                            "node {} references unknown parameter {weight}",
                            node.name
                        )));
                    }
                }
                Op::Dropout { rate }
                    if !(0.0..1.0).contains(rate) => {
                        return Err(NnError::InvalidConfig(format!(
                            "node {} dropout rate {rate} outside [0, 1)",
                            node.name
                        )));
                    }
                _ => {}
            }
        }
        if !matches!(self.nodes[0].op, Op::Input) {
            return Err(NnError::InvalidConfig("node 0 must be the input".into()));
        }
        if self.nodes.iter().skip(1).any(|n| matches!(n.op, Op::Input)) {
            return Err(NnError::InvalidConfig("only node 0 may be an input".into()));
        }
        Ok(())
    }

    fn param<'p, T: Scalar>(&self, params: &'p Params<T>, name: &str) -> Result<&'p Tensor<T>> {
        params.get(name).ok_or_else(|| {
            NnError::InvalidConfig(format!("parameter {name} missing from parameter set"))
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        input: &Tensor<T>,
        phase: &mut Phase,
    ) -> Result<ForwardPass<T>> {
        let mut acts: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut caches: Vec<Cache<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let (out, cache) = match &node.op {
                Op::Input => (input.clone(), Cache::None),
                Op::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let w = self.param(params, weight)?;
                    let b = self.param(params, bias)?;
                    (
                        ops::conv_forward(&acts[node.inputs[0]], w, b, *stride, *pad)?,
                        Cache::None,
                    )
                }
                Op::Relu => (ops::relu_forward(&acts[node.inputs[0]]), Cache::None),
                Op::MaxPool { kernel, stride } => {
                    let (out, argmax) =
                        ops::maxpool_forward(&acts[node.inputs[0]], *kernel, *stride)?;
                    (out, Cache::Pool(argmax))
                }
                Op::Dropout { rate } => match phase {
                    Phase::Train(rng) => {
                        let (out, mask) =
                            ops::dropout_forward(&acts[node.inputs[0]], *rate, rng)?;
                        (out, Cache::Dropout(mask))
                    }
                    Phase::Infer => (acts[node.inputs[0]].clone(), Cache::None),
                },
                Op::Deconv { weight, stride } => {
                    let w = self.param(params, weight)?;
                    (
                        ops::deconv_forward(&acts[node.inputs[0]], w, *stride)?,
                        Cache::None,
                    )
                }
                Op::CropLike => {
                    let data = &acts[node.inputs[0]];
                    let reference = &acts[node.inputs[1]];
                    let (_, _, th, tw) = reference.shape();
                    let (_, _, h, w) = data.shape();
                    if th > h || tw > w {
                        return Err(NnError::TargetTooLarge(format!(
                            "node {}: reference {th}x{tw} exceeds data {h}x{w}",
                            node.name
                        )));
                    }
                    let (oy, ox) = ops::center_offsets(h, w, th, tw);
                    (ops::crop_forward(data, th, tw, oy, ox)?, Cache::None)
                }
                Op::WSum { weights } => {
                    let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &acts[i]).collect();
                    (ops::wsum_forward(&ins, weights)?, Cache::None)
                }
            };
            out.assert_finite(&node.name);
            acts.push(out);
            caches.push(cache);
        }
        Ok(ForwardPass {
            activations: acts,
            caches,
        })
    }

    /// Reverse sweep from the output node. Returns parameter gradients
    /// (every parameter present, zero if untouched) and the gradient with
    /// respect to the graph input.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        fwd: &ForwardPass<T>,
        d_output: &Tensor<T>,
    ) -> Result<(Gradients<T>, Tensor<T>)> {
        let mut grads: Gradients<T> = self
            .params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    Tensor::zeros(p.dims[0], p.dims[1], p.dims[2], p.dims[3]),
                )
            })
            .collect();
        let mut node_grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        node_grads[self.output] = Some(d_output.clone());

        let add_into = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| match slot {
            Some(existing) => existing.add_assign(&g),
            None => *slot = Some(g),
        };

        for (i, node) in self.nodes.iter().enumerate().rev() {
            let Some(d_out) = node_grads[i].take() else {
                continue;
            };
            match &node.op {
                Op::Input => {
                    node_grads[i] = Some(d_out);
                }
                Op::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let x = &fwd.activations[node.inputs[0]];
                    let w = self.param(params, weight)?;
                    let b = self.param(params, bias)?;
                    let (dx, dw, db) = ops::conv_backward(x, w, b, &d_out, *stride, *pad)?;
                    grads.get_mut(weight).expect("gradient slot exists").add_assign(&dw);
                    grads.get_mut(bias).expect("gradient slot exists").add_assign(&db);
                    add_into(&mut node_grads[node.inputs[0]], dx);
                }
                Op::Relu => {
                    let x = &fwd.activations[node.inputs[0]];
                    add_into(&mut node_grads[node.inputs[0]], ops::relu_backward(x, &d_out)?);
                }
                Op::MaxPool { .. } => {
                    let Cache::Pool(argmax) = &fwd.caches[i] else {
                        return Err(NnError::InvalidConfig(format!(
                            "node {} lost its pooling cache",
                            node.name
                        )));
                    };
                    let dims = fwd.activations[node.inputs[0]].dims();
                    add_into(
                        &mut node_grads[node.inputs[0]],
                        ops::maxpool_backward(dims, argmax, &d_out)?,
                    );
                }
                Op::Dropout { .. } => {
                    let dx = match &fwd.caches[i] {
                        Cache::Dropout(mask) => ops::dropout_backward(mask, &d_out)?,
                        _ => d_out.clone(),
                    };
                    add_into(&mut node_grads[node.inputs[0]], dx);
                }
                Op::Deconv { weight, stride } => {
                    let x = &fwd.activations[node.inputs[0]];
                    let w = self.param(params, weight)?;
                    let (dx, dw) = ops::deconv_backward(x, w, &d_out, *stride)?;
                    grads.get_mut(weight).expect("gradient slot exists").add_assign(&dw);
                    add_into(&mut node_grads[node.inputs[0]], dx);
                }
                Op::CropLike => {
                    let data = &fwd.activations[node.inputs[0]];
                    let (_, _, h, w) = data.shape();
                    let (_, _, th, tw) = d_out.shape();
                    let (oy, ox) = ops::center_offsets(h, w, th, tw);
                    add_into(
                        &mut node_grads[node.inputs[0]],
                        ops::crop_backward(data.dims(), oy, ox, &d_out)?,
                    );
                    // The reference input only supplies a shape; no gradient.
                }
                Op::WSum { weights } => {
                    let parts = ops::wsum_backward(weights, &d_out);
                    for (&inp, part) in node.inputs.iter().zip(parts) {
                        add_into(&mut node_grads[inp], part);
                    }
                }
            }
        }
        let d_input = node_grads[0]
            .take()
            .unwrap_or_else(|| {
                let d = fwd.activations[0].dims();
                Tensor::zeros(d[0], d[1], d[2], d[3])
            });
        Ok((grads, d_input))
    }
}
