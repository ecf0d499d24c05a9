//! Static operation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built once and evaluated many times. Node shapes exclude the
//! leading batch axis, which is fixed per call by the supplied inputs. Loss
//! nodes reduce over the batch and hold a single value.
//!
//! [`Graph::forward`] does not mutate the graph: batch-norm running statistics
//! computed in train mode are returned inside [`Activations`] and only applied
//! by [`Graph::commit_running_stats`]. Gradients accumulate into each
//! parameter's buffer until [`Graph::zero_grad`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::conv::{self, ConvShape, Geometry};
use crate::layers::spec::{Conv2dSpec, Conv3dSpec};
use crate::layers::{batchnorm, dense, loss, Activation};
use crate::tensor::Tensor;

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameter initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    Constant(f64),
}

impl Init {
    /// Preferred initialization for weights feeding the given activation.
    pub fn for_activation(act: Activation) -> Self {
        match act {
            Activation::Relu => Init::HeUniform,
            Activation::Tanh | Activation::Identity => Init::XavierUniform,
        }
    }

    fn sample(self, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
        let bound = match self {
            Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
            Init::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            Init::Constant(c) => return Tensor::filled(shape, c),
        };
        Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Running statistics are stored as non-trainable parameters.
    pub trainable: bool,
}

#[derive(Clone, Debug)]
pub enum Op {
    Input {
        name: String,
    },
    Conv {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        geom: Geometry,
        transposed: bool,
    },
    Linear {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
    },
    BatchNorm {
        input: NodeId,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        /// Single-entry counter of committed running-stat updates.
        updates: ParamId,
    },
    Activation {
        input: NodeId,
        kind: Activation,
    },
    Reshape {
        input: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    Softmax {
        input: NodeId,
    },
    Mse {
        pred: NodeId,
        target: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: NodeId,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv {
                transposed: false, ..
            } => "conv",
            Op::Conv {
                transposed: true, ..
            } => "deconv",
            Op::Linear { .. } => "linear",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Activation {
                kind: Activation::Relu,
                ..
            } => "relu",
            Op::Activation {
                kind: Activation::Tanh,
                ..
            } => "tanh",
            Op::Activation { .. } => "identity",
            Op::Reshape { .. } => "reshape",
            Op::Concat { .. } => "concat",
            Op::Softmax { .. } => "softmax",
            Op::Mse { .. } => "mse",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } => vec![],
            Op::Conv { input, .. }
            | Op::Linear { input, .. }
            | Op::BatchNorm { input, .. }
            | Op::Activation { input, .. }
            | Op::Reshape { input }
            | Op::Softmax { input } => vec![*input],
            Op::Concat { inputs } => inputs.clone(),
            Op::Mse { pred, target } => vec![*pred, *target],
            Op::SoftmaxCrossEntropy { logits, labels } => vec![*logits, *labels],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: Op,
    /// Per-sample shape; empty for batch-reduced (loss) nodes and label inputs.
    pub shape: Vec<usize>,
}

impl Node {
    fn is_reduced(&self) -> bool {
        matches!(self.op, Op::Mse { .. } | Op::SoftmaxCrossEntropy { .. })
    }
}

enum Cache {
    BatchNormTrain {
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        inv_std: Vec<f64>,
    },
    Probabilities(Vec<f64>),
    CrossEntropy {
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

/// Outputs of one forward pass.
pub struct Activations {
    batch: usize,
    mode: Mode,
    values: Vec<Option<Tensor>>,
    caches: Vec<Option<Cache>>,
    stat_updates: Vec<(ParamId, Vec<f64>)>,
}

impl Activations {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(node).and_then(Option::as_ref)
    }

    /// Value of a node; panics if the node was not evaluated.
    pub fn value(&self, node: NodeId) -> &Tensor {
        self.get(node)
            .unwrap_or_else(|| panic!("node {node} was not evaluated"))
    }

    /// The single value of a scalar (loss) node.
    pub fn scalar(&self, node: NodeId) -> f64 {
        self.value(node).data()[0]
    }

    pub fn take(&mut self, node: NodeId) -> Option<Tensor> {
        self.values.get_mut(node).and_then(Option::take)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Parameter>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Total count of trainable scalar values.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    fn push(&mut self, name: impl Into<String>, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            op,
            shape,
        });
        self.nodes.len() - 1
    }

    fn add_param(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        self.params.len() - 1
    }

    fn check_node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown node id {id}")))
    }

    fn check_batched(&self, id: NodeId, context: &str) -> Result<&Node> {
        let node = self.check_node(id)?;
        if node.is_reduced() {
            return Err(Error::InvalidArgument(format!(
                "{context}: node `{}` is a reduced scalar",
                node.name
            )));
        }
        Ok(node)
    }

    /// Declares a named input with per-sample `shape` (empty for class labels).
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(
            name,
            Op::Input {
                name: name.to_string(),
            },
            shape.to_vec(),
        )
    }

    /// 2D cross-correlation over a `[C, H, W]` input.
    pub fn conv2d(
        &mut self,
        name: &str,
        input: NodeId,
        spec: &Conv2dSpec,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let shape = self.check_batched(input, name)?.shape.clone();
        let [c, h, w] = shape[..] else {
            return Err(Error::shape(name, &[spec.in_channels, 0, 0], &shape));
        };
        if c != spec.in_channels {
            return Err(Error::shape(name, &[spec.in_channels, h, w], &shape));
        }
        let geom = spec.geometry()?;
        let [_, oh, ow] = geom.conv_output([1, h, w]).ok_or_else(|| {
            Error::InvalidArgument(format!("{name}: non-positive output size for input {shape:?}"))
        })?;
        let (weight, bias) = self.conv_params(
            name,
            [spec.out_channels, spec.in_channels],
            spec.out_channels,
            &geom,
            init,
            spec.in_channels * geom.kernel_volume(),
            spec.out_channels * geom.kernel_volume(),
            rng,
        );
        Ok(self.push(
            name,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                transposed: false,
            },
            vec![spec.out_channels, oh, ow],
        ))
    }

    /// 3D cross-correlation over a `[C, D1, D2, T]` input.
    pub fn conv3d(
        &mut self,
        name: &str,
        input: NodeId,
        spec: &Conv3dSpec,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let (geom, dims) = self.check_conv3d_input(name, input, spec)?;
        let out = geom.conv_output(dims).ok_or_else(|| {
            Error::InvalidArgument(format!("{name}: non-positive output size for {dims:?}"))
        })?;
        let (weight, bias) = self.conv_params(
            name,
            [spec.out_channels, spec.in_channels],
            spec.out_channels,
            &geom,
            init,
            spec.in_channels * geom.kernel_volume(),
            spec.out_channels * geom.kernel_volume(),
            rng,
        );
        Ok(self.push(
            name,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                transposed: false,
            },
            vec![spec.out_channels, out[0], out[1], out[2]],
        ))
    }

    /// 3D transposed convolution over a `[C, D1, D2, T]` input.
    pub fn deconv3d(
        &mut self,
        name: &str,
        input: NodeId,
        spec: &Conv3dSpec,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let (geom, dims) = self.check_conv3d_input(name, input, spec)?;
        let out = geom.deconv_output(dims).ok_or_else(|| {
            Error::InvalidArgument(format!("{name}: non-positive output size for {dims:?}"))
        })?;
        // Each output position is reached by ceil(k / s) taps per axis.
        let taps: usize = (0..3)
            .map(|a| geom.kernel[a].div_ceil(geom.stride[a]))
            .product();
        let (weight, bias) = self.conv_params(
            name,
            [spec.in_channels, spec.out_channels],
            spec.out_channels,
            &geom,
            init,
            spec.in_channels * taps,
            spec.out_channels * taps,
            rng,
        );
        Ok(self.push(
            name,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                transposed: true,
            },
            vec![spec.out_channels, out[0], out[1], out[2]],
        ))
    }

    fn check_conv3d_input(
        &self,
        name: &str,
        input: NodeId,
        spec: &Conv3dSpec,
    ) -> Result<(Geometry, [usize; 3])> {
        let shape = &self.check_batched(input, name)?.shape;
        let [c, d0, d1, d2] = shape[..] else {
            return Err(Error::shape(name, &[spec.in_channels, 0, 0, 0], shape));
        };
        if c != spec.in_channels {
            return Err(Error::shape(name, &[spec.in_channels, d0, d1, d2], shape));
        }
        Ok((spec.geometry()?, [d0, d1, d2]))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_params(
        &mut self,
        name: &str,
        channels: [usize; 2],
        out_channels: usize,
        geom: &Geometry,
        init: Init,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> (ParamId, ParamId) {
        let [k0, k1, k2] = geom.kernel;
        let value = init.sample(&[channels[0], channels[1], k0, k1, k2], fan_in, fan_out, rng);
        let weight = self.add_param(format!("{name}.weight"), value, true);
        let bias = self.add_param(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true);
        (weight, bias)
    }

    /// Fully connected layer over a rank-1 per-sample input.
    pub fn linear(
        &mut self,
        name: &str,
        input: NodeId,
        out_features: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let shape = &self.check_batched(input, name)?.shape;
        let [in_features] = shape[..] else {
            return Err(Error::InvalidArgument(format!(
                "{name}: linear expects a flat input, got {shape:?}"
            )));
        };
        let value = init.sample(&[out_features, in_features], in_features, out_features, rng);
        let weight = self.add_param(format!("{name}.weight"), value, true);
        let bias = self.add_param(format!("{name}.bias"), Tensor::zeros(&[out_features]), true);
        Ok(self.push(
            name,
            Op::Linear {
                input,
                weight,
                bias,
            },
            vec![out_features],
        ))
    }

    /// Batch normalization over axis 0 of the per-sample shape.
    pub fn batch_norm(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        let shape = self.check_batched(input, name)?.shape.clone();
        let channels = *shape
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("{name}: scalar input")))?;
        let gamma = self.add_param(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0), true);
        let beta = self.add_param(format!("{name}.beta"), Tensor::zeros(&[channels]), true);
        let running_mean =
            self.add_param(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false);
        let running_var = self.add_param(
            format!("{name}.running_var"),
            Tensor::filled(&[channels], 1.0),
            false,
        );
        let updates = self.add_param(format!("{name}.updates"), Tensor::zeros(&[1]), false);
        Ok(self.push(
            name,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                running_mean,
                running_var,
                updates,
            },
            shape,
        ))
    }

    /// Applies `kind`; the identity returns `input` unchanged.
    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        let node = self.check_batched(input, "activation")?;
        if kind == Activation::Identity {
            return Ok(input);
        }
        let (name, shape) = (format!("{}.{kind}", node.name), node.shape.clone());
        Ok(self.push(name, Op::Activation { input, kind }, shape))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.activation(input, Activation::Relu)
    }

    pub fn tanh(&mut self, input: NodeId) -> Result<NodeId> {
        self.activation(input, Activation::Tanh)
    }

    /// Per-sample reshape; the value count must be preserved.
    pub fn reshape(&mut self, name: &str, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let node = self.check_batched(input, name)?;
        let have: usize = node.shape.iter().product();
        let want: usize = shape.iter().product();
        if have != want || shape.contains(&0) {
            return Err(Error::shape(name, shape, &node.shape));
        }
        Ok(self.push(name, Op::Reshape { input }, shape.to_vec()))
    }

    pub fn flatten(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        let len = self.check_batched(input, name)?.shape.iter().product::<usize>();
        self.reshape(name, input, &[len])
    }

    /// Joins rank-1 per-sample inputs along the feature axis.
    pub fn concat(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let mut width = 0;
        for &id in inputs {
            let shape = &self.check_batched(id, name)?.shape;
            let [w] = shape[..] else {
                return Err(Error::InvalidArgument(format!(
                    "{name}: concat expects flat inputs, got {shape:?}"
                )));
            };
            width += w;
        }
        Ok(self.push(
            name,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            vec![width],
        ))
    }

    pub fn softmax(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        let shape = self.check_batched(input, name)?.shape.clone();
        if shape.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "{name}: softmax expects [classes], got {shape:?}"
            )));
        }
        Ok(self.push(name, Op::Softmax { input }, shape))
    }

    pub fn mse(&mut self, name: &str, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let p = &self.check_batched(pred, name)?.shape;
        let t = &self.check_batched(target, name)?.shape;
        if p != t {
            return Err(Error::shape(name, p, t));
        }
        Ok(self.push(name, Op::Mse { pred, target }, vec![]))
    }

    /// `labels` must be an input declared with an empty per-sample shape.
    pub fn softmax_cross_entropy(
        &mut self,
        name: &str,
        logits: NodeId,
        labels: NodeId,
    ) -> Result<NodeId> {
        let shape = &self.check_batched(logits, name)?.shape;
        if shape.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "{name}: logits must be [classes], got {shape:?}"
            )));
        }
        if !self.check_node(labels)?.shape.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{name}: labels must be a per-sample scalar input"
            )));
        }
        Ok(self.push(name, Op::SoftmaxCrossEntropy { logits, labels }, vec![]))
    }

    fn needed(&self, outputs: &[NodeId]) -> Result<Vec<bool>> {
        let mut needed = vec![false; self.nodes.len()];
        for &o in outputs {
            self.check_node(o)?;
            needed[o] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if needed[i] {
                for j in self.nodes[i].op.inputs() {
                    needed[j] = true;
                }
            }
        }
        Ok(needed)
    }

    /// Evaluates every ancestor of `outputs`. Inputs are batched tensors whose
    /// trailing shape matches the declaration.
    pub fn forward(
        &self,
        inputs: &[(&str, &Tensor)],
        mode: Mode,
        outputs: &[NodeId],
    ) -> Result<Activations> {
        let needed = self.needed(outputs)?;
        let mut batch = None;
        for (name, t) in inputs {
            match batch {
                None => batch = Some(t.batch()),
                Some(b) if b != t.batch() => {
                    return Err(Error::InvalidArgument(format!(
                        "input `{name}` has batch {} but others have {b}",
                        t.batch()
                    )))
                }
                _ => {}
            }
        }
        let batch = batch.ok_or_else(|| Error::MissingInput("<any>".into()))?;
        let mut acts = Activations {
            batch,
            mode,
            values: vec![None; self.nodes.len()],
            caches: (0..self.nodes.len()).map(|_| None).collect(),
            stat_updates: Vec::new(),
        };
        for (id, node) in self.nodes.iter().enumerate() {
            if !needed[id] {
                continue;
            }
            let value = self.eval_node(id, node, inputs, &mut acts)?;
            if !node.is_reduced() {
                let mut expect = vec![batch];
                expect.extend_from_slice(&node.shape);
                if value.shape() != &expect[..] && !(node.shape.is_empty() && value.len() == batch)
                {
                    return Err(Error::shape(&node.name, &expect, value.shape()));
                }
            }
            acts.values[id] = Some(value);
        }
        Ok(acts)
    }

    fn eval_node(
        &self,
        id: NodeId,
        node: &Node,
        inputs: &[(&str, &Tensor)],
        acts: &mut Activations,
    ) -> Result<Tensor> {
        let batch = acts.batch;
        let batched = |shape: &[usize]| {
            let mut s = vec![batch];
            s.extend_from_slice(shape);
            s
        };
        let val = |acts: &Activations, n: NodeId| -> Result<Tensor> {
            acts.values[n].clone().ok_or(Error::BackwardBeforeForward)
        };
        Ok(match &node.op {
            Op::Input { name } => {
                let t = inputs
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| Error::MissingInput(name.clone()))?;
                let expect = batched(&node.shape);
                let ok = if node.shape.is_empty() {
                    t.rank() == 1
                } else {
                    t.shape() == &expect[..]
                };
                if !ok {
                    return Err(Error::shape(&node.name, &expect, t.shape()));
                }
                t.clone()
            }
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                transposed,
            } => {
                let x = acts.values[*input].as_ref().ok_or(Error::BackwardBeforeForward)?;
                let shape = self.conv_shape(*input, id, batch);
                let w = self.params[*weight].value.data();
                let b = self.params[*bias].value.data();
                let data = if *transposed {
                    conv::deconv_forward(x.data(), w, b, geom, &shape)
                } else {
                    conv::conv_forward(x.data(), w, b, geom, &shape)
                };
                Tensor::new(batched(&node.shape), data)?
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = acts.values[*input].as_ref().ok_or(Error::BackwardBeforeForward)?;
                let inputs = self.nodes[*input].shape[0];
                let data = dense::forward(
                    x.data(),
                    batch,
                    self.params[*weight].value.data(),
                    self.params[*bias].value.data(),
                    inputs,
                );
                Tensor::new(batched(&node.shape), data)?
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                running_mean,
                running_var,
                updates,
            } => {
                let x = acts.values[*input].as_ref().ok_or(Error::BackwardBeforeForward)?;
                let layout = batchnorm::Layout::from_shape(x.shape());
                let g = self.params[*gamma].value.data();
                let b = self.params[*beta].value.data();
                match acts.mode {
                    Mode::Train => {
                        if batch < 2 {
                            return Err(Error::BatchTooSmall(batch));
                        }
                        let pass = batchnorm::forward_train(x.data(), layout, g, b);
                        let mut mean = self.params[*running_mean].value.data().to_vec();
                        let mut var = self.params[*running_var].value.data().to_vec();
                        batchnorm::update_running(&mut mean, &pass.batch_mean);
                        batchnorm::update_running(&mut var, &pass.batch_var);
                        let count = self.params[*updates].value.data()[0] + 1.0;
                        acts.stat_updates.push((*running_mean, mean));
                        acts.stat_updates.push((*running_var, var));
                        acts.stat_updates.push((*updates, vec![count]));
                        acts.caches[id] = Some(Cache::BatchNormTrain {
                            normalized: pass.normalized,
                            inv_std: pass.inv_std,
                        });
                        Tensor::new(x.shape().to_vec(), pass.output)?
                    }
                    Mode::Eval => {
                        if self.params[*updates].value.data()[0] == 0.0 {
                            return Err(Error::MissingRunningStats(node.name.clone()));
                        }
                        let (out, inv_std) = batchnorm::forward_eval(
                            x.data(),
                            layout,
                            g,
                            b,
                            self.params[*running_mean].value.data(),
                            self.params[*running_var].value.data(),
                        );
                        acts.caches[id] = Some(Cache::BatchNormEval { inv_std });
                        Tensor::new(x.shape().to_vec(), out)?
                    }
                }
            }
            Op::Activation { input, kind } => {
                let x = acts.values[*input].as_ref().ok_or(Error::BackwardBeforeForward)?;
                x.map(|v| kind.apply(v))
            }
            Op::Reshape { input } => val(acts, *input)?.reshape(&batched(&node.shape))?,
            Op::Concat { inputs: parts } => {
                let mut data = Vec::with_capacity(batch * node.shape[0]);
                for b in 0..batch {
                    for &p in parts {
                        let t = acts.values[p].as_ref().ok_or(Error::BackwardBeforeForward)?;
                        data.extend_from_slice(t.sample(b));
                    }
                }
                Tensor::new(batched(&node.shape), data)?
            }
            Op::Softmax { input } => {
                let x = acts.values[*input].as_ref().ok_or(Error::BackwardBeforeForward)?;
                let probs = loss::softmax(x.data(), node.shape[0]);
                acts.caches[id] = Some(Cache::Probabilities(probs.clone()));
                Tensor::new(batched(&node.shape), probs)?
            }
            Op::Mse { pred, target } => {
                let p = acts.values[*pred].as_ref().ok_or(Error::BackwardBeforeForward)?;
                let t = acts.values[*target].as_ref().ok_or(Error::BackwardBeforeForward)?;
                if p.shape() != t.shape() {
                    return Err(Error::shape(&node.name, p.shape(), t.shape()));
                }
                Tensor::scalar(loss::mse(p.data(), t.data()))
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let z = acts.values[*logits].as_ref().ok_or(Error::BackwardBeforeForward)?;
                let l = acts.values[*labels].as_ref().ok_or(Error::BackwardBeforeForward)?;
                let classes = self.nodes[*logits].shape[0];
                let labels = loss::check_labels(l.data(), classes)?;
                let (value, probs) = loss::softmax_cross_entropy(z.data(), &labels, classes);
                acts.caches[id] = Some(Cache::CrossEntropy { probs, labels });
                Tensor::scalar(value)
            }
        })
    }

    fn conv_shape(&self, input: NodeId, output: NodeId, batch: usize) -> ConvShape {
        let spatial = |s: &[usize]| -> [usize; 3] {
            match s.len() {
                3 => [1, s[1], s[2]],
                _ => [s[1], s[2], s[3]],
            }
        };
        let (i, o) = (&self.nodes[input].shape, &self.nodes[output].shape);
        ConvShape {
            batch,
            in_channels: i[0],
            out_channels: o[0],
            in_dims: spatial(i),
            out_dims: spatial(o),
        }
    }

    /// Applies the running-statistic updates gathered by a train-mode forward.
    pub fn commit_running_stats(&mut self, acts: &Activations) {
        for (pid, values) in &acts.stat_updates {
            self.params[*pid].value.data_mut().copy_from_slice(values);
        }
    }

    /// Back-propagates from the scalar `loss` node, accumulating parameter
    /// gradients.
    pub fn backward(&mut self, acts: &Activations, loss: NodeId) -> Result<()> {
        self.backward_with_seed(acts, loss, 1.0)
    }

    /// As [`Graph::backward`] with an arbitrary upstream gradient on the loss.
    pub fn backward_with_seed(&mut self, acts: &Activations, loss: NodeId, seed: f64) -> Result<()> {
        self.check_node(loss)?;
        let loss_value = acts.get(loss).ok_or(Error::BackwardBeforeForward)?;
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![seed]);
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            if acts.values[id].is_none() {
                continue;
            }
            let op = self.nodes[id].op.clone();
            for (target, grad) in self.backward_node(id, &op, &g, acts)? {
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    fn wants_grad(&self, node: NodeId) -> bool {
        !matches!(self.nodes[node].op, Op::Input { .. })
    }

    fn backward_node(
        &mut self,
        id: NodeId,
        op: &Op,
        g: &[f64],
        acts: &Activations,
    ) -> Result<Vec<(NodeId, Vec<f64>)>> {
        let batch = acts.batch;
        let value = |n: NodeId| acts.values[n].as_ref().expect("evaluated input");
        let mut out = Vec::new();
        match op {
            Op::Input { .. } => {}
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                transposed,
            } => {
                let shape = self.conv_shape(*input, id, batch);
                let need = self.wants_grad(*input);
                let x = value(*input);
                let (w_param, b_param) = two_mut(&mut self.params, *weight, *bias);
                let run = if *transposed {
                    conv::deconv_backward
                } else {
                    conv::conv_backward
                };
                let dx = run(
                    x.data(),
                    w_param.value.data(),
                    g,
                    geom,
                    &shape,
                    w_param.grad.data_mut(),
                    b_param.grad.data_mut(),
                    need,
                );
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let need = self.wants_grad(*input);
                let in_features = self.nodes[*input].shape[0];
                let x = value(*input);
                let (w_param, b_param) = two_mut(&mut self.params, *weight, *bias);
                let dx = dense::backward(
                    x.data(),
                    batch,
                    w_param.value.data(),
                    in_features,
                    g,
                    w_param.grad.data_mut(),
                    b_param.grad.data_mut(),
                    need,
                );
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                running_mean,
                ..
            } => {
                let x = value(*input);
                let layout = batchnorm::Layout::from_shape(x.shape());
                let mean = self.params[*running_mean].value.data().to_vec();
                let (g_param, b_param) = two_mut(&mut self.params, *gamma, *beta);
                let dx = match acts.caches[id].as_ref() {
                    Some(Cache::BatchNormTrain {
                        normalized,
                        inv_std,
                    }) => batchnorm::backward_train(
                        g,
                        layout,
                        g_param.value.data(),
                        normalized,
                        inv_std,
                        g_param.grad.data_mut(),
                        b_param.grad.data_mut(),
                    ),
                    Some(Cache::BatchNormEval { inv_std }) => batchnorm::backward_eval(
                        g,
                        x.data(),
                        layout,
                        g_param.value.data(),
                        &mean,
                        inv_std,
                        g_param.grad.data_mut(),
                        b_param.grad.data_mut(),
                    ),
                    _ => return Err(Error::BackwardBeforeForward),
                };
                if self.wants_grad(*input) {
                    out.push((*input, dx));
                }
            }
            Op::Activation { input, kind } => {
                if self.wants_grad(*input) {
                    let y = value(id);
                    let dx = y
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&y, &g)| g * kind.derivative_from_output(y))
                        .collect();
                    out.push((*input, dx));
                }
            }
            Op::Reshape { input } => {
                if self.wants_grad(*input) {
                    out.push((*input, g.to_vec()));
                }
            }
            Op::Concat { inputs } => {
                let widths: Vec<usize> = inputs.iter().map(|&i| self.nodes[i].shape[0]).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&part, &w) in inputs.iter().zip(&widths) {
                    let mut dx = Vec::with_capacity(batch * w);
                    for b in 0..batch {
                        dx.extend_from_slice(&g[b * total + offset..b * total + offset + w]);
                    }
                    offset += w;
                    if self.wants_grad(part) {
                        out.push((part, dx));
                    }
                }
            }
            Op::Softmax { input } => {
                if let Some(Cache::Probabilities(p)) = acts.caches[id].as_ref() {
                    if self.wants_grad(*input) {
                        let classes = self.nodes[id].shape[0];
                        out.push((*input, loss::softmax_grad(p, g, classes)));
                    }
                }
            }
            Op::Mse { pred, target } => {
                if self.wants_grad(*pred) {
                    let dx = loss::mse_grad(value(*pred).data(), value(*target).data(), g[0]);
                    out.push((*pred, dx));
                }
            }
            Op::SoftmaxCrossEntropy { logits, .. } => {
                if let Some(Cache::CrossEntropy { probs, labels }) = acts.caches[id].as_ref() {
                    if self.wants_grad(*logits) {
                        let classes = self.nodes[*logits].shape[0];
                        let dx = loss::softmax_cross_entropy_grad(probs, labels, classes, g[0]);
                        out.push((*logits, dx));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Mutable borrows of two distinct parameters.
fn two_mut(params: &mut [Parameter], a: ParamId, b: ParamId) -> (&mut Parameter, &mut Parameter) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = params.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = params.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}
