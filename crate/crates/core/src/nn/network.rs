//! Layer stack wiring: shape inference, parameter initialization and
//! layout, and per-sample forward/backward passes.

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::ops::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, dense_backward,
    dense_forward, maxpool2d, maxpool2d_backward, softmax, Conv2dSpec, Conv3dSpec,
};
use super::tensor::Tensor;
use super::{LayerSpec, Padding};
use crate::error::{Error, Result};
use crate::seed;

/// Flat offsets of each layer's weights and biases inside one parameter or
/// gradient vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    /// Per layer: (weight range, bias range), or None for parameterless layers.
    pub entries: Vec<Option<(std::ops::Range<usize>, std::ops::Range<usize>)>>,
    pub total: usize,
}

/// All weights and biases of one model, plus the seed that initialized
/// them and a hash of the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// One (weights, bias) pair per parameterized layer, `None` elsewhere.
    pub layers: Vec<Option<(Tensor, Vec<f64>)>>,
    pub seed: u64,
    pub arch_hash: u64,
}

/// A validated architecture bound to a fixed input shape.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    /// Output shape after each layer.
    shapes: Vec<Vec<usize>>,
    layout: ParamLayout,
    arch_hash: u64,
}

#[derive(Serialize)]
struct ArchFingerprint<'a> {
    input_shape: &'a [usize],
    specs: &'a [LayerSpec],
}

fn hash_architecture(input_shape: &[usize], specs: &[LayerSpec]) -> u64 {
    let json = serde_json::to_vec(&ArchFingerprint { input_shape, specs })
        .expect("architecture serialization cannot fail");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl Network {
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(specs.len());
        let mut layout_entries = Vec::with_capacity(specs.len());
        let mut offset = 0usize;
        let mut shape = input_shape.clone();

        for spec in &specs {
            spec.validate()?;
            let (out_shape, params) = infer_shape(&shape, spec)?;
            if let Some((wlen, blen)) = params {
                layout_entries.push(Some((offset..offset + wlen, offset + wlen..offset + wlen + blen)));
                offset += wlen + blen;
            } else {
                layout_entries.push(None);
            }
            shapes.push(out_shape.clone());
            shape = out_shape;
        }
        if !matches!(specs.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::InvalidParameter(
                "classification network must end with a softmax layer".into(),
            ));
        }
        Ok(Self {
            arch_hash: hash_architecture(&input_shape, &specs),
            specs,
            input_shape,
            shapes,
            layout: ParamLayout {
                entries: layout_entries,
                total: offset,
            },
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Output shape after the first layer of the given kind, for shape-chain
    /// inspection.
    pub fn shape_after(&self, kind: &str) -> Option<Vec<usize>> {
        self.specs.iter().zip(&self.shapes).find_map(|(s, sh)| {
            let name = match s {
                LayerSpec::Conv2d { .. } => "conv2d",
                LayerSpec::Conv3d { .. } => "conv3d",
                LayerSpec::MaxPool2d { .. } => "maxpool2d",
                LayerSpec::Flatten => "flatten",
                LayerSpec::Dense { .. } => "dense",
                LayerSpec::Dropout { .. } => "dropout",
                LayerSpec::Softmax => "softmax",
            };
            (name == kind).then(|| sh.clone())
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn arch_hash(&self) -> u64 {
        self.arch_hash
    }

    /// Fan-in-scaled uniform weight init, zero biases, seeded per layer.
    pub fn init_params(&self, seed_val: u64) -> ModelParams {
        let mut layers = Vec::with_capacity(self.specs.len());
        let mut in_shape = self.input_shape.clone();
        for (li, spec) in self.specs.iter().enumerate() {
            let entry = match spec {
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    let c = in_shape[2];
                    let fan_in = kernel_h * kernel_w * c;
                    Some((vec![*kernel_h, *kernel_w, c, *filters], fan_in, *filters))
                }
                LayerSpec::Conv3d {
                    filters,
                    kernel_d,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    let c = in_shape[3];
                    let fan_in = kernel_d * kernel_h * kernel_w * c;
                    Some((
                        vec![*kernel_d, *kernel_h, *kernel_w, c, *filters],
                        fan_in,
                        *filters,
                    ))
                }
                LayerSpec::Dense { units, .. } => {
                    let in_len = in_shape.iter().product::<usize>();
                    Some((vec![*units, in_len], in_len, *units))
                }
                _ => None,
            };
            layers.push(entry.map(|(dims, fan_in, bias_len)| {
                let mut rng = seed::rng(seed::derive_indexed(seed_val, "layer-init", li as u64));
                let bound = 1.0 / (fan_in as f64).sqrt();
                let len: usize = dims.iter().product();
                let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
                (
                    Tensor::from_vec(dims, data).expect("init shape is consistent"),
                    vec![0.0f64; bias_len],
                )
            }));
            in_shape = self.shapes[li].clone();
        }
        ModelParams {
            layers,
            seed: seed_val,
            arch_hash: self.arch_hash,
        }
    }

    /// Inference pass: dropout inactive, returns class probabilities.
    pub fn forward(&self, params: &ModelParams, input: &[f64]) -> Result<Vec<f64>> {
        let trace = self.run_forward(params, input, None)?;
        Ok(trace.probs)
    }

    /// Training pass with inverted-scaling dropout; masks are drawn from
    /// `mask_seed` so the pass is reproducible independent of scheduling.
    pub fn forward_train(
        &self,
        params: &ModelParams,
        input: &[f64],
        mask_seed: u64,
    ) -> Result<ForwardTrace> {
        self.run_forward(params, input, Some(mask_seed))
    }

    fn run_forward(
        &self,
        params: &ModelParams,
        input: &[f64],
        mask_seed: Option<u64>,
    ) -> Result<ForwardTrace> {
        if input.len() != self.input_len() {
            return Err(Error::ShapeMismatch {
                context: "network input".into(),
                expected: format!("{}", self.input_len()),
                got: format!("{}", input.len()),
            });
        }
        let mut current = Tensor::from_vec(self.input_shape.clone(), input.to_vec())?;
        let mut caches = Vec::with_capacity(self.specs.len());
        for (li, spec) in self.specs.iter().enumerate() {
            let (next, cache) = match spec {
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    padding,
                    activation,
                } => {
                    let (w, b) = params.layers[li].as_ref().expect("conv2d has params");
                    let spec2 = Conv2dSpec {
                        filters: *filters,
                        kernel_h: *kernel_h,
                        kernel_w: *kernel_w,
                        padding: *padding,
                        activation: *activation,
                    };
                    let out = conv2d_forward(&current, w, b, &spec2)?;
                    (out, LayerCache::Plain)
                }
                LayerSpec::Conv3d {
                    filters,
                    kernel_d,
                    kernel_h,
                    kernel_w,
                    padding,
                    activation,
                } => {
                    let (w, b) = params.layers[li].as_ref().expect("conv3d has params");
                    let spec3 = Conv3dSpec {
                        filters: *filters,
                        kernel_d: *kernel_d,
                        kernel_h: *kernel_h,
                        kernel_w: *kernel_w,
                        padding: *padding,
                        activation: *activation,
                    };
                    let out = conv3d_forward(&current, w, b, &spec3)?;
                    (out, LayerCache::Plain)
                }
                LayerSpec::MaxPool2d { pool_h, pool_w } => {
                    let (out, argmax) = maxpool2d(&current, *pool_h, *pool_w)?;
                    (out, LayerCache::Pool { argmax })
                }
                LayerSpec::Flatten => {
                    let len = current.len();
                    let out = Tensor::from_vec(vec![len], current.data.clone())?;
                    (out, LayerCache::Plain)
                }
                LayerSpec::Dense { units: _, activation } => {
                    let (w, b) = params.layers[li].as_ref().expect("dense has params");
                    let out = dense_forward(&current.data, w, b, *activation)?;
                    let dims = vec![out.len()];
                    (Tensor::from_vec(dims, out)?, LayerCache::Plain)
                }
                LayerSpec::Dropout { rate } => match mask_seed {
                    Some(ms) => {
                        let keep = 1.0 - rate;
                        let scale = 1.0 / keep;
                        let mut rng =
                            seed::rng(seed::derive_indexed(ms, "dropout-layer", li as u64));
                        let mask: Vec<f64> = (0..current.len())
                            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
                            .collect();
                        let data: Vec<f64> =
                            current.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        (
                            Tensor::from_vec(current.dims.clone(), data)?,
                            LayerCache::Dropout { mask },
                        )
                    }
                    None => (current.clone(), LayerCache::Plain),
                },
                LayerSpec::Softmax => {
                    let out = softmax(&current.data);
                    (Tensor::from_vec(vec![out.len()], out)?, LayerCache::Plain)
                }
            };
            caches.push(LayerState {
                input: current,
                cache,
            });
            current = next;
        }
        Ok(ForwardTrace {
            probs: current.data,
            layers: caches,
        })
    }

    /// Backpropagates the cross-entropy gradient for one sample, adding
    /// parameter gradients into `grad` (layout per [`Network::layout`]).
    /// Returns the sample's cross-entropy contribution -ln p[label].
    pub fn backward(
        &self,
        params: &ModelParams,
        trace: &ForwardTrace,
        label: usize,
        grad: &mut [f64],
    ) -> Result<f64> {
        debug_assert_eq!(grad.len(), self.layout.total);
        let probs = &trace.probs;
        let loss = super::train::sample_nll(probs[label]);

        // Softmax + cross-entropy combine to p - onehot at the logits.
        let mut upstream: Vec<f64> = probs.clone();
        upstream[label] -= 1.0;

        for li in (0..self.specs.len()).rev() {
            let state = &trace.layers[li];
            match &self.specs[li] {
                LayerSpec::Softmax => {
                    // Gradient already expressed at the logits.
                }
                LayerSpec::Dense { activation, .. } => {
                    let (w, _) = params.layers[li].as_ref().unwrap();
                    let (wr, br) = self.layout.entries[li].clone().unwrap();
                    let output = self.layer_output(trace, li);
                    let (gw, gb) = split_grad(grad, wr, br);
                    upstream = dense_backward(
                        &state.input.data,
                        w,
                        output,
                        &upstream,
                        *activation,
                        gw,
                        gb,
                    );
                }
                LayerSpec::Dropout { .. } => {
                    if let LayerCache::Dropout { mask } = &state.cache {
                        for (u, m) in upstream.iter_mut().zip(mask) {
                            *u *= m;
                        }
                    }
                }
                LayerSpec::Flatten => {
                    // Same data, reshaped; gradient passes through.
                }
                LayerSpec::MaxPool2d { .. } => {
                    let LayerCache::Pool { argmax } = &state.cache else {
                        unreachable!("pool layer caches argmax");
                    };
                    let d_input = maxpool2d_backward(argmax, &upstream, &state.input.dims);
                    upstream = d_input.data;
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    padding,
                    activation,
                } => {
                    let (w, _) = params.layers[li].as_ref().unwrap();
                    let spec2 = Conv2dSpec {
                        filters: *filters,
                        kernel_h: *kernel_h,
                        kernel_w: *kernel_w,
                        padding: *padding,
                        activation: *activation,
                    };
                    let (wr, br) = self.layout.entries[li].clone().unwrap();
                    let output = self.layer_output_tensor(trace, li)?;
                    let (gw, gb) = split_grad(grad, wr, br);
                    let d_input =
                        conv2d_backward(&state.input, w, &output, &upstream, &spec2, gw, gb)?;
                    upstream = d_input.data;
                }
                LayerSpec::Conv3d {
                    filters,
                    kernel_d,
                    kernel_h,
                    kernel_w,
                    padding,
                    activation,
                } => {
                    let (w, _) = params.layers[li].as_ref().unwrap();
                    let spec3 = Conv3dSpec {
                        filters: *filters,
                        kernel_d: *kernel_d,
                        kernel_h: *kernel_h,
                        kernel_w: *kernel_w,
                        padding: *padding,
                        activation: *activation,
                    };
                    let (wr, br) = self.layout.entries[li].clone().unwrap();
                    let output = self.layer_output_tensor(trace, li)?;
                    let (gw, gb) = split_grad(grad, wr, br);
                    let d_input =
                        conv3d_backward(&state.input, w, &output, &upstream, &spec3, gw, gb)?;
                    upstream = d_input.data;
                }
            }
        }
        Ok(loss)
    }

    /// A layer's output is the next layer's cached input (or the probs for
    /// the last layer).
    fn layer_output<'t>(&self, trace: &'t ForwardTrace, li: usize) -> &'t [f64] {
        if li + 1 < trace.layers.len() {
            &trace.layers[li + 1].input.data
        } else {
            &trace.probs
        }
    }

    fn layer_output_tensor(&self, trace: &ForwardTrace, li: usize) -> Result<Tensor> {
        Tensor::from_vec(self.shapes[li].clone(), self.layer_output(trace, li).to_vec())
    }
}

fn split_grad(
    grad: &mut [f64],
    wr: std::ops::Range<usize>,
    br: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(wr.end, br.start);
    let (head, tail) = grad.split_at_mut(br.start);
    (&mut head[wr], &mut tail[..br.len()])
}

fn infer_shape(input: &[usize], spec: &LayerSpec) -> Result<(Vec<usize>, Option<(usize, usize)>)> {
    let bad = |expected: &str| Error::ShapeMismatch {
        context: "architecture".into(),
        expected: expected.to_string(),
        got: format!("{input:?}"),
    };
    match spec {
        LayerSpec::Conv2d {
            filters,
            kernel_h,
            kernel_w,
            padding,
            ..
        } => {
            if input.len() != 3 {
                return Err(bad("3-d input for conv2d"));
            }
            let out_h = conv_extent(input[0], *kernel_h, *padding)?;
            let out_w = conv_extent(input[1], *kernel_w, *padding)?;
            let wlen = kernel_h * kernel_w * input[2] * filters;
            Ok((vec![out_h, out_w, *filters], Some((wlen, *filters))))
        }
        LayerSpec::Conv3d {
            filters,
            kernel_d,
            kernel_h,
            kernel_w,
            padding,
            ..
        } => {
            if input.len() != 4 {
                return Err(bad("4-d input for conv3d"));
            }
            let out_l = conv_extent(input[0], *kernel_d, *padding)?;
            let out_h = conv_extent(input[1], *kernel_h, *padding)?;
            let out_w = conv_extent(input[2], *kernel_w, *padding)?;
            let wlen = kernel_d * kernel_h * kernel_w * input[3] * filters;
            Ok((vec![out_l, out_h, out_w, *filters], Some((wlen, *filters))))
        }
        LayerSpec::MaxPool2d { pool_h, pool_w } => {
            if input.len() != 3 {
                return Err(bad("3-d input for maxpool2d"));
            }
            if input[0] / pool_h == 0 || input[1] / pool_w == 0 {
                return Err(bad("input at least one pool window"));
            }
            Ok((vec![input[0] / pool_h, input[1] / pool_w, input[2]], None))
        }
        LayerSpec::Flatten => Ok((vec![input.iter().product()], None)),
        LayerSpec::Dense { units, .. } => {
            let in_len: usize = input.iter().product();
            Ok((vec![*units], Some((units * in_len, *units))))
        }
        LayerSpec::Dropout { .. } => Ok((input.to_vec(), None)),
        LayerSpec::Softmax => {
            if input.len() != 1 {
                return Err(bad("1-d input for softmax"));
            }
            Ok((input.to_vec(), None))
        }
    }
}

fn conv_extent(extent: usize, kernel: usize, padding: Padding) -> Result<usize> {
    match padding {
        Padding::Valid => {
            if extent < kernel {
                Err(Error::ShapeMismatch {
                    context: "architecture".into(),
                    expected: format!("extent >= kernel {kernel}"),
                    got: format!("{extent}"),
                })
            } else {
                Ok(extent - kernel + 1)
            }
        }
        Padding::Same => Ok(extent),
    }
}

/// Per-sample forward cache consumed by backward.
pub struct ForwardTrace {
    pub probs: Vec<f64>,
    layers: Vec<LayerState>,
}

struct LayerState {
    /// The layer's input tensor.
    input: Tensor,
    cache: LayerCache,
}

enum LayerCache {
    Plain,
    Pool { argmax: Vec<usize> },
    Dropout { mask: Vec<f64> },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_m1_architecture, ArchParams, Activation};

    fn tiny_net() -> Network {
        let specs = build_m1_architecture(
            8,
            8,
            3,
            &ArchParams {
                conv1_filters: 2,
                conv2_filters: 3,
                dense_units: 4,
                dropout_rate: 0.5,
            },
        )
        .unwrap();
        Network::new(vec![8, 8, 1], specs).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic_and_layer_varied() {
        let net = tiny_net();
        let a = net.init_params(5);
        let b = net.init_params(5);
        assert_eq!(a, b);
        let c = net.init_params(6);
        assert_ne!(a, c);
        // Biases start at zero.
        for layer in a.layers.iter().flatten() {
            assert!(layer.1.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_yields_probability_vector() {
        let net = tiny_net();
        let params = net.init_params(1);
        let input: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let probs = net.forward(&params, &input).unwrap();
        assert_eq!(probs.len(), 3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn eval_forward_ignores_dropout() {
        let net = tiny_net();
        let params = net.init_params(1);
        let input = vec![0.5; 64];
        let a = net.forward(&params, &input).unwrap();
        let b = net.forward(&params, &input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_forward_uses_seeded_masks() {
        let net = tiny_net();
        let params = net.init_params(1);
        let input = vec![0.5; 64];
        let a = net.forward_train(&params, &input, 10).unwrap();
        let b = net.forward_train(&params, &input, 10).unwrap();
        assert_eq!(a.probs, b.probs);
        let c = net.forward_train(&params, &input, 11).unwrap();
        // Different mask seed almost surely changes the output.
        assert_ne!(a.probs, c.probs);
    }

    #[test]
    fn network_rejects_bad_input_length() {
        let net = tiny_net();
        let params = net.init_params(1);
        assert!(net.forward(&params, &[0.0; 10]).is_err());
    }

    #[test]
    fn network_requires_trailing_softmax() {
        let specs = vec![LayerSpec::Dense {
            units: 2,
            activation: Activation::Linear,
        }];
        assert!(Network::new(vec![4], specs).is_err());
    }

    #[test]
    fn arch_hash_tracks_structure() {
        let net_a = tiny_net();
        let net_b = tiny_net();
        assert_eq!(net_a.arch_hash(), net_b.arch_hash());
        let specs = build_m1_architecture(8, 8, 4, &ArchParams::default()).unwrap();
        let net_c = Network::new(vec![8, 8, 1], specs).unwrap();
        assert_ne!(net_a.arch_hash(), net_c.arch_hash());
    }
}
