use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::{CnnArch, LayerSpec};
use super::ops;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fixed number of gradient partitions per batch. Chunk sums are combined in
/// index order, so results do not depend on the thread count.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Parameters of an architecture, one slot per layer (empty for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: CnnArch,
    /// Output shape of every layer, derived from `arch`.
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<LayerParams<T>>>,
}

/// Per-parameter gradients laid out like [`Network`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    slots: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_like(params: &[Option<LayerParams<T>>]) -> Self {
        Self {
            slots: params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: Tensor::zeros(p.weight.shape().to_vec()),
                        bias: Tensor::zeros(p.bias.shape().to_vec()),
                    })
                })
                .collect(),
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weight.add_assign(&b.weight);
                a.bias.add_assign(&b.bias);
            }
        }
    }

    fn scale(&mut self, factor: T) {
        for p in self.slots.iter_mut().flatten() {
            p.weight.scale(factor);
            p.bias.scale(factor);
        }
    }

    /// Gradient tensors in parameter declaration order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.slots.iter().flatten().flat_map(|p| [&p.weight, &p.bias]).collect()
    }
}

/// Result of one batch pass.
#[derive(Debug, Clone)]
pub struct BatchGradients<T> {
    /// Mean cross-entropy over the batch.
    pub loss: T,
    pub correct: usize,
    /// Mean gradient over the batch.
    pub grads: Gradients<T>,
}

enum Aux<T> {
    None,
    /// Winning input index per pooled output, per sample.
    Pool(Vec<usize>),
    /// Dropout multiplier per element, per sample.
    Mask(Vec<T>),
}

/// Activations of a chunk of samples, each layer stored sample-major.
struct Trace<T> {
    batch: usize,
    /// `acts[i]` is the input of layer `i`; the last entry is the logits.
    acts: Vec<Vec<T>>,
    aux: Vec<Aux<T>>,
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform weights, zero biases, drawn from a seeded stream.
    pub fn init(arch: CnnArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prev = arch.input.to_vec();
        let mut params = Vec::with_capacity(arch.layers.len());
        for (layer, out) in arch.layers.iter().zip(&shapes) {
            let slot = match *layer {
                LayerSpec::Conv { filters, kernel_h, kernel_w, .. } => {
                    let cin = prev[2];
                    let fan_in = kernel_h * kernel_w * cin;
                    let fan_out = kernel_h * kernel_w * filters;
                    Some(LayerParams {
                        weight: glorot(vec![kernel_h, kernel_w, cin, filters], fan_in, fan_out, &mut rng),
                        bias: Tensor::zeros(vec![filters]),
                    })
                }
                LayerSpec::Dense { units, .. } => {
                    let inp = prev[0];
                    Some(LayerParams {
                        weight: glorot(vec![units, inp], inp, units, &mut rng),
                        bias: Tensor::zeros(vec![units]),
                    })
                }
                _ => None,
            };
            params.push(slot);
            prev = out.clone();
        }
        Ok(Self { arch, shapes, params })
    }

    /// Rebuilds a network from tensors in declaration order.
    pub fn from_tensors(arch: CnnArch, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let template = Network::<T>::init(arch.clone(), 0)?;
        let expected = template.param_names().len();
        if tensors.len() != expected {
            return Err(Error::Shape(format!(
                "architecture has {expected} parameter tensors, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut params = Vec::with_capacity(template.params.len());
        for slot in template.params {
            params.push(match slot {
                None => None,
                Some(p) => {
                    let weight = it.next().expect("counted above");
                    let bias = it.next().expect("counted above");
                    if weight.shape() != p.weight.shape() || bias.shape() != p.bias.shape() {
                        return Err(Error::Shape(format!(
                            "parameter shapes {:?}/{:?} do not match {:?}/{:?}",
                            weight.shape(),
                            bias.shape(),
                            p.weight.shape(),
                            p.bias.shape()
                        )));
                    }
                    Some(LayerParams { weight, bias })
                }
            });
        }
        Ok(Self {
            arch,
            shapes: template.shapes,
            params,
        })
    }

    pub fn arch(&self) -> &CnnArch {
        &self.arch
    }

    /// `conv1.weight`, `conv1.bias`, ..., `dense2.bias`.
    pub fn param_names(&self) -> Vec<String> {
        let (mut convs, mut denses) = (0, 0);
        let mut names = Vec::new();
        for layer in &self.arch.layers {
            let prefix = match layer {
                LayerSpec::Conv { .. } => {
                    convs += 1;
                    format!("conv{convs}")
                }
                LayerSpec::Dense { .. } => {
                    denses += 1;
                    format!("dense{denses}")
                }
                _ => continue,
            };
            names.push(format!("{prefix}.weight"));
            names.push(format!("{prefix}.bias"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.params.iter().flatten().flat_map(|p| [&p.weight, &p.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.arch.input {
            return Err(Error::Shape(format!(
                "{} expects input {:?}, got {:?}",
                self.arch.name,
                self.arch.input,
                input.shape()
            )));
        }
        Ok(())
    }

    fn layer_input_shape(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.arch.input
        } else {
            &self.shapes[layer - 1]
        }
    }

    /// Forward pass over a chunk. `dropout` gives the stream seed and the
    /// position of the chunk's first sample in the batch; `None` is inference.
    fn forward_trace(&self, inputs: &[&Tensor<T>], dropout: Option<(u64, usize)>) -> Result<Trace<T>> {
        let batch = inputs.len();
        let mut first = Vec::with_capacity(batch * inputs.first().map_or(0, |x| x.len()));
        for x in inputs {
            self.check_input(x)?;
            first.extend_from_slice(x.data());
        }
        let mut rngs: Vec<ChaCha8Rng> = match dropout {
            Some((seed, offset)) => (0..batch)
                .map(|b| ChaCha8Rng::seed_from_u64(mix(seed, (offset + b) as u64)))
                .collect(),
            None => Vec::new(),
        };
        let n = self.arch.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        let mut aux = Vec::with_capacity(n);
        acts.push(first);
        for (l, (layer, params)) in self.arch.layers.iter().zip(&self.params).enumerate() {
            let x = acts.last().expect("input pushed");
            let in_shape = self.layer_input_shape(l);
            let in_len: usize = in_shape.iter().product();
            let out_len: usize = self.shapes[l].iter().product();
            let (y, a) = match (layer, params) {
                (LayerSpec::Conv { padding, relu, .. }, Some(p)) => {
                    let geom = ops::ConvGeom::new(in_shape, p.weight.shape(), *padding)?;
                    let mut y = ops::conv_batch(&geom, x, p.weight.data(), p.bias.data());
                    if *relu {
                        ops::relu_in_place(&mut y);
                    }
                    (y, Aux::None)
                }
                (LayerSpec::Maxpool { pool_h, pool_w }, _) => {
                    let geom = ops::pool_geometry(in_shape, *pool_h, *pool_w)?;
                    let mut y = vec![T::zero(); batch * out_len];
                    let mut idx = vec![0; batch * out_len];
                    for ((xs, ys), is) in x
                        .chunks_exact(in_len)
                        .zip(y.chunks_exact_mut(out_len))
                        .zip(idx.chunks_exact_mut(out_len))
                    {
                        ops::maxpool_raw(xs, in_shape[1], geom, (*pool_h, *pool_w), ys, is);
                    }
                    (y, Aux::Pool(idx))
                }
                (LayerSpec::Dense { relu, .. }, Some(p)) => {
                    let mut y = ops::dense_batch(x, p.weight.data(), p.bias.data());
                    if *relu {
                        ops::relu_in_place(&mut y);
                    }
                    (y, Aux::None)
                }
                (LayerSpec::Dropout { rate }, _) if !rngs.is_empty() && *rate > 0.0 => {
                    let keep = T::of(1.0 / (1.0 - rate));
                    let mut mask = Vec::with_capacity(x.len());
                    for rng in rngs.iter_mut() {
                        mask.extend((0..in_len).map(|_| if rng.random::<f64>() < *rate { T::zero() } else { keep }));
                    }
                    let y = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                    (y, Aux::Mask(mask))
                }
                // Flatten only reinterprets the shape, inference dropout is
                // identity and softmax is applied by the loss.
                (LayerSpec::Flatten | LayerSpec::Dropout { .. } | LayerSpec::Softmax, _) => (x.clone(), Aux::None),
                (other, None) => {
                    return Err(Error::Shape(format!("layer {other:?} has no parameters")))
                }
            };
            acts.push(y);
            aux.push(a);
        }
        Ok(Trace { batch, acts, aux })
    }

    fn backward(&self, trace: &Trace<T>, grad_logits: Vec<T>, grads: &mut Gradients<T>) -> Result<()> {
        let mut g = grad_logits;
        for l in (0..self.arch.layers.len()).rev() {
            let x = &trace.acts[l];
            let y = &trace.acts[l + 1];
            let in_len: usize = self.layer_input_shape(l).iter().product();
            let out_len: usize = self.shapes[l].iter().product();
            g = match (&self.arch.layers[l], &self.params[l], &mut grads.slots[l]) {
                (LayerSpec::Conv { padding, relu, .. }, Some(p), Some(gp)) => {
                    if *relu {
                        ops::relu_backward(y, &mut g);
                    }
                    let geom = ops::ConvGeom::new(self.layer_input_shape(l), p.weight.shape(), *padding)?;
                    ops::conv_batch_backward(&geom, x, p.weight.data(), &g, gp.weight.data_mut(), gp.bias.data_mut())
                }
                (LayerSpec::Dense { relu, .. }, Some(p), Some(gp)) => {
                    if *relu {
                        ops::relu_backward(y, &mut g);
                    }
                    ops::dense_batch_backward(x, p.weight.data(), &g, gp.weight.data_mut(), gp.bias.data_mut())
                }
                (LayerSpec::Maxpool { .. }, _, _) => {
                    let Aux::Pool(idx) = &trace.aux[l] else {
                        unreachable!("pool layers record their argmax")
                    };
                    let mut gx = vec![T::zero(); trace.batch * in_len];
                    for ((gs, is), gxs) in g
                        .chunks_exact(out_len)
                        .zip(idx.chunks_exact(out_len))
                        .zip(gx.chunks_exact_mut(in_len))
                    {
                        for (&v, &i) in gs.iter().zip(is) {
                            gxs[i] += v;
                        }
                    }
                    gx
                }
                (LayerSpec::Dropout { .. }, _, _) => {
                    if let Aux::Mask(mask) = &trace.aux[l] {
                        for (v, &m) in g.iter_mut().zip(mask) {
                            *v *= m;
                        }
                    }
                    g
                }
                (LayerSpec::Flatten | LayerSpec::Softmax, _, _) => g,
                (other, _, _) => return Err(Error::Shape(format!("layer {other:?} lost its parameters"))),
            };
        }
        Ok(())
    }

    /// Inference-mode logits (the dense-K scores).
    pub fn logits(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward_trace(&[input], None)?.acts.pop().expect("non-empty"))
    }

    /// Inference-mode logits of many inputs, evaluated in parallel chunks.
    pub fn logits_batch(&self, inputs: &[&Tensor<T>]) -> Result<Vec<Vec<T>>> {
        let k = self.arch.classes;
        let parts: Vec<Result<Vec<T>>> = inputs
            .par_chunks(64)
            .map(|chunk| Ok(self.forward_trace(chunk, None)?.acts.pop().expect("non-empty")))
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for part in parts {
            out.extend(part?.chunks_exact(k).map(<[T]>::to_vec));
        }
        Ok(out)
    }

    /// Mean cross-entropy gradients over a batch.
    ///
    /// `dropout_seed` enables training-mode dropout with a per-sample stream
    /// derived from the seed and the sample's position in the batch; `None`
    /// runs the batch in inference mode.
    pub fn batch_gradients(
        &self,
        inputs: &[&Tensor<T>],
        labels: &[usize],
        dropout_seed: Option<u64>,
    ) -> Result<BatchGradients<T>> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "batch has {} inputs and {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let k = self.arch.classes;
        let chunk = inputs.len().div_ceil(GRAD_CHUNKS);
        let partials: Vec<Result<(T, usize, Gradients<T>)>> = (0..inputs.len().div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let range = c * chunk..((c + 1) * chunk).min(inputs.len());
                let trace = self.forward_trace(&inputs[range.clone()], dropout_seed.map(|s| (s, range.start)))?;
                let logits = trace.acts.last().expect("non-empty");
                let mut grad_logits = Vec::with_capacity(logits.len());
                let mut loss = T::zero();
                let mut correct = 0;
                for (z, &label) in logits.chunks_exact(k).zip(&labels[range]) {
                    let (l, mut probs) = ops::softmax_xent(z, label)?;
                    if argmax(z) == label {
                        correct += 1;
                    }
                    loss += l;
                    probs[label] -= T::one();
                    grad_logits.extend(probs);
                }
                let mut grads = Gradients::zeros_like(&self.params);
                self.backward(&trace, grad_logits, &mut grads)?;
                Ok((loss, correct, grads))
            })
            .collect();

        let mut total = Gradients::zeros_like(&self.params);
        let mut loss = T::zero();
        let mut correct = 0;
        for part in partials {
            let (l, c, g) = part?;
            loss += l;
            correct += c;
            total.add(&g);
        }
        let inv = T::one() / T::of_usize(inputs.len());
        total.scale(inv);
        Ok(BatchGradients {
            loss: loss * inv,
            correct,
            grads: total,
        })
    }

    /// Piecewise-linear regime of each sample: ReLU on/off bits and pooling
    /// winners for every layer, under the same dropout streams as
    /// [`Network::batch_gradients`]. Two parameter sets with equal patterns
    /// lie on the same smooth piece of the loss.
    pub fn activation_patterns(&self, inputs: &[&Tensor<T>], dropout_seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
        let trace = self.forward_trace(inputs, dropout_seed.map(|s| (s, 0)))?;
        let mut patterns = vec![Vec::new(); inputs.len()];
        for (l, layer) in self.arch.layers.iter().enumerate() {
            let out_len: usize = self.shapes[l].iter().product();
            match (layer, &trace.aux[l]) {
                (LayerSpec::Conv { relu: true, .. } | LayerSpec::Dense { relu: true, .. }, _) => {
                    for (p, ys) in patterns.iter_mut().zip(trace.acts[l + 1].chunks_exact(out_len)) {
                        p.extend(ys.iter().map(|&v| usize::from(v > T::zero())));
                    }
                }
                (_, Aux::Pool(idx)) => {
                    for (p, is) in patterns.iter_mut().zip(idx.chunks_exact(out_len)) {
                        p.extend_from_slice(is);
                    }
                }
                _ => {}
            }
        }
        Ok(patterns)
    }

    /// Plain gradient step `p <- p - lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) {
        for (p, g) in self.params.iter_mut().zip(&grads.slots) {
            if let (Some(p), Some(g)) = (p, g) {
                for (w, &d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                    *w -= lr * d;
                }
                for (b, &d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                    *b -= lr * d;
                }
            }
        }
    }
}

fn glorot<T: Scalar>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Index of the largest value; ties go to the lower index.
pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// SplitMix64 finalizer over two words, for deriving independent stream seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
