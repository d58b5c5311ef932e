use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, ConvGeom, Layer};
use super::real::Real;
use super::spec::{ConvDim, Head, NetworkSpec, Shape};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Lower/upper clamp applied to sigmoid outputs inside the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Per-parameter-tensor gradients, aligned with [`Network::params`].
pub type Gradients<T> = Vec<Vec<T>>;

/// A built network: layer list plus its parameter tensors in declaration order
/// (for each conv or dense layer: weights, then biases).
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    /// `shapes[i]` is the per-sample input of layer `i`; the last entry is the output.
    shapes: Vec<Shape>,
    params: Vec<Vec<T>>,
    fan_in: Vec<usize>,
}

struct Trace<T> {
    acts: Vec<Vec<T>>,
    argmax: Vec<Vec<usize>>,
}

impl<T: Real> Network<T> {
    /// He-initialised network: weights ~ N(0, sqrt(2 / fan_in)), biases 0.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (p, (tensor, &fan_in)) in net.params.iter_mut().zip(&net.fan_in).enumerate() {
            if p % 2 == 1 {
                continue;
            }
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            tensor.iter_mut().for_each(|w| *w = T::lit(normal.sample(&mut rng)));
        }
        Ok(net)
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let trace = spec.conv_trace()?;
        let mut layers = Vec::new();
        let mut shapes = vec![spec.input];
        let mut params: Vec<Vec<T>> = Vec::new();
        let mut fan_in = Vec::new();
        let mut cur = spec.input;

        let mut push_param = |params: &mut Vec<Vec<T>>, len: usize, fan: usize| {
            params.push(vec![T::zero(); len]);
            fan_in.push(fan);
            params.len() - 1
        };

        if spec.conv_dim() != ConvDim::None {
            let (kh, pad_h, pool_h) = match spec.conv_dim() {
                ConvDim::Conv2d => (3, 1, 2),
                _ => (1, 0, 1),
            };
            for l in 0..spec.depth() {
                let (ph, pw) = if l == 0 { (pad_h, 1) } else { (0, 0) };
                let geom = ConvGeom::new(cur, spec.width(), kh, 3, ph, pw);
                debug_assert_eq!(geom.output, trace[l]);
                let k = geom.patch_len();
                let weight = push_param(&mut params, spec.width() * k, k);
                let bias = push_param(&mut params, spec.width(), k);
                layers.push(Layer::Conv { geom, weight, bias });
                cur = geom.output;
                shapes.push(cur);
                layers.push(Layer::Relu);
                shapes.push(cur);
            }
            let pooled = Shape::new(cur.channels, cur.height / pool_h, cur.width / 2);
            layers.push(Layer::MaxPool {
                input: cur,
                output: pooled,
                ph: pool_h,
                pw: 2,
            });
            cur = pooled;
            shapes.push(cur);
        }
        layers.push(Layer::Flatten);
        cur = Shape::flat(cur.len());
        shapes.push(cur);

        let mut dense = |layers: &mut Vec<Layer>, params: &mut Vec<Vec<T>>, inputs, outputs| {
            let weight = push_param(params, inputs * outputs, inputs);
            let bias = push_param(params, outputs, inputs);
            layers.push(Layer::Dense {
                inputs,
                outputs,
                weight,
                bias,
            });
        };
        if let Some(hidden) = spec.fc_hidden {
            if hidden == 0 {
                return Err(Error::Build {
                    layer: "dense1".into(),
                    message: "hidden layer needs at least one unit".into(),
                });
            }
            dense(&mut layers, &mut params, cur.len(), hidden);
            shapes.push(Shape::flat(hidden));
            layers.push(Layer::Relu);
            shapes.push(Shape::flat(hidden));
            cur = Shape::flat(hidden);
        }
        let outputs = spec.head.outputs();
        dense(&mut layers, &mut params, cur.len(), outputs);
        shapes.push(Shape::flat(outputs));
        layers.push(match spec.head {
            Head::TwoNode => Layer::LogSoftmax,
            Head::OneNode => Layer::Sigmoid,
        });
        shapes.push(Shape::flat(outputs));

        Ok(Network {
            spec: *spec,
            layers,
            shapes,
            params,
            fan_in,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Input size of the last dense layer.
    pub fn fc_inputs(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense { inputs, .. } => Some(*inputs),
                _ => None,
            })
            .expect("every network ends in a dense layer")
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.len()
    }

    pub fn output_len(&self) -> usize {
        self.spec.head.outputs()
    }

    fn batch_size(&self, batch: &[T]) -> Result<usize> {
        let len = self.input_len();
        if batch.is_empty() || batch.len() % len != 0 {
            return Err(Error::Shape(format!(
                "batch of {} values is not a whole number of {} inputs",
                batch.len(),
                self.spec.input
            )));
        }
        Ok(batch.len() / len)
    }

    fn run(&self, batch: &[T], n: usize, upto: usize) -> Trace<T> {
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(upto + 1);
        let mut argmax = vec![Vec::new(); upto];
        acts.push(batch.to_vec());
        for (li, layer) in self.layers[..upto].iter().enumerate() {
            let x = &acts[li];
            let mut y = vec![T::zero(); n * self.shapes[li + 1].len()];
            match layer {
                Layer::Conv { geom, weight, bias } => {
                    layers::conv_forward(geom, &self.params[*weight], &self.params[*bias], x, n, &mut y)
                }
                Layer::Relu => {
                    for (o, &v) in y.iter_mut().zip(x) {
                        *o = if v > T::zero() { v } else { T::zero() };
                    }
                }
                Layer::MaxPool { input, output, ph, pw } => {
                    let mut idx = vec![0; y.len()];
                    layers::maxpool_forward(*input, *output, *ph, *pw, x, n, &mut y, &mut idx);
                    argmax[li] = idx;
                }
                Layer::Flatten => y.copy_from_slice(x),
                Layer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => layers::dense_forward(
                    *inputs,
                    *outputs,
                    &self.params[*weight],
                    &self.params[*bias],
                    x,
                    n,
                    &mut y,
                ),
                Layer::LogSoftmax => layers::log_softmax_rows(x, self.shapes[li].len(), &mut y),
                Layer::Sigmoid => {
                    for (o, &v) in y.iter_mut().zip(x) {
                        *o = T::one() / (T::one() + (-v).exp());
                    }
                }
            }
            acts.push(y);
        }
        Trace { acts, argmax }
    }

    /// Per-sample log-probabilities (two-node) or probabilities (one-node).
    pub fn forward(&self, batch: &[T]) -> Result<Vec<T>> {
        let n = self.batch_size(batch)?;
        let mut t = self.run(batch, n, self.layers.len());
        Ok(t.acts.pop().expect("output activation"))
    }

    /// Mean loss over the batch and its gradient for every parameter tensor.
    pub fn backward(&self, batch: &[T], labels: &[u8]) -> Result<(f64, Gradients<T>)> {
        let n = self.batch_size(batch)?;
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        let trace = self.run(batch, n, self.layers.len());
        let out = trace.acts.last().expect("output activation");
        let loss = loss(self.spec.head, out, labels);
        let mut grad = loss_gradient(self.spec.head, out, labels);
        let mut grads: Gradients<T> = self.params.iter().map(|p| vec![T::zero(); p.len()]).collect();

        for li in (0..self.layers.len()).rev() {
            let x = &trace.acts[li];
            let y = &trace.acts[li + 1];
            let need_dx = li > 0;
            match &self.layers[li] {
                Layer::Conv { geom, weight, bias } => {
                    let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
                    let (dw, db) = pair_mut(&mut grads, *weight, *bias);
                    layers::conv_backward(
                        geom,
                        &self.params[*weight],
                        x,
                        &grad,
                        n,
                        dw,
                        db,
                        need_dx.then_some(dx.as_mut_slice()),
                    );
                    grad = dx;
                }
                Layer::Relu => {
                    for (g, &v) in grad.iter_mut().zip(y) {
                        if v <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
                Layer::MaxPool { .. } => {
                    let mut dx = vec![T::zero(); x.len()];
                    for (&i, &g) in trace.argmax[li].iter().zip(&grad) {
                        dx[i] = dx[i] + g;
                    }
                    grad = dx;
                }
                Layer::Flatten => {}
                Layer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => {
                    let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
                    let (dw, db) = pair_mut(&mut grads, *weight, *bias);
                    layers::dense_backward(
                        *inputs,
                        *outputs,
                        &self.params[*weight],
                        x,
                        &grad,
                        n,
                        dw,
                        db,
                        need_dx.then_some(dx.as_mut_slice()),
                    );
                    grad = dx;
                }
                Layer::LogSoftmax => {
                    let width = self.shapes[li].len();
                    for (g, o) in grad.chunks_exact_mut(width).zip(y.chunks_exact(width)) {
                        let total: T = g.iter().copied().sum();
                        for (gi, &oi) in g.iter_mut().zip(o) {
                            *gi = *gi - oi.exp() * total;
                        }
                    }
                }
                Layer::Sigmoid => {
                    for (g, &p) in grad.iter_mut().zip(y) {
                        *g = *g * p * (T::one() - p);
                    }
                }
            }
        }
        Ok((loss, grads))
    }

    /// Predicted class per sample: argmax for two-node heads, `p >= 0.5` for one-node.
    pub fn predict(&self, batch: &[T]) -> Result<Vec<u8>> {
        let out = self.forward(batch)?;
        Ok(predictions(self.spec.head, &out))
    }

    /// Post-pool activations of one sample: `(shape, values)`.
    pub fn pooled_activations(&self, sample: &[T]) -> Result<(Shape, Vec<T>)> {
        let pool = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::MaxPool { .. }))
            .ok_or_else(|| Error::Config("a fully-connected network has no feature maps".into()))?;
        if sample.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "sample of {} values does not match input {}",
                sample.len(),
                self.spec.input
            )));
        }
        let mut t = self.run(sample, 1, pool + 1);
        Ok((self.shapes[pool + 1], t.acts.pop().expect("pool activation")))
    }

    /// One single-channel image per filter of the last convolution, taken
    /// after pooling and min-max scaled to [0, 1] (constant maps become 0).
    pub fn feature_maps(&self, sample: &[T]) -> Result<Vec<ImageTensor>> {
        let (shape, acts) = self.pooled_activations(sample)?;
        let plane = shape.height * shape.width;
        acts.chunks_exact(plane)
            .map(|m| {
                let vals: Vec<f64> = m.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let scaled = vals
                    .iter()
                    .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
                    .collect();
                ImageTensor::from_vec(1, shape.height, shape.width, scaled)
            })
            .collect()
    }

    /// Converts parameters to another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec,
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.iter().map(|v| U::lit(v.to_f64().unwrap_or(0.0))).collect())
                .collect(),
            fan_in: self.fan_in.clone(),
        }
    }

    pub(crate) fn set_params(&mut self, params: Vec<Vec<T>>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape("parameter tensors do not match the network".into()));
        }
        self.params = params;
        Ok(())
    }
}

fn pair_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

pub fn predictions<T: Real>(head: Head, outputs: &[T]) -> Vec<u8> {
    match head {
        Head::TwoNode => outputs.chunks_exact(2).map(|o| u8::from(o[1] > o[0])).collect(),
        Head::OneNode => outputs.iter().map(|&p| u8::from(p >= T::lit(0.5))).collect(),
    }
}

/// Mean loss: NLL over log-probabilities (two-node) or clamped binary
/// cross-entropy over probabilities (one-node).
pub fn loss<T: Real>(head: Head, outputs: &[T], labels: &[u8]) -> f64 {
    let n = labels.len() as f64;
    let total: f64 = match head {
        Head::TwoNode => outputs
            .chunks_exact(2)
            .zip(labels)
            .map(|(o, &y)| -o[y as usize].to_f64().unwrap_or(f64::NAN))
            .sum(),
        Head::OneNode => outputs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.to_f64().unwrap_or(f64::NAN).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum(),
    };
    total / n
}

fn loss_gradient<T: Real>(head: Head, outputs: &[T], labels: &[u8]) -> Vec<T> {
    let n = T::lit(labels.len() as f64);
    let mut g = vec![T::zero(); outputs.len()];
    match head {
        Head::TwoNode => {
            for (i, &y) in labels.iter().enumerate() {
                g[2 * i + y as usize] = -T::one() / n;
            }
        }
        Head::OneNode => {
            let (lo, hi) = (T::lit(BCE_CLAMP), T::lit(1.0 - BCE_CLAMP));
            for ((gi, &p), &y) in g.iter_mut().zip(outputs).zip(labels) {
                // clamped region is flat
                if p > lo && p < hi {
                    *gi = if y == 1 {
                        -T::one() / (p * n)
                    } else {
                        T::one() / ((T::one() - p) * n)
                    };
                }
            }
        }
    }
    g
}
