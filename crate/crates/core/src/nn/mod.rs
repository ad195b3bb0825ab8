//! Feed-forward conv / ReLU / pool network with input gradients.
//!
//! Activations are `[H, W, N]`; the feature matrix `F ∈ R^{M×N}` of a layer is
//! the same buffer viewed with `M = H·W` rows in row-major `(y, x)` order.
//! Only gradients with respect to the input image are implemented.

mod descriptor;
pub mod ops;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub use descriptor::{
    ChannelOrder, ConvSpec, LayerKind, LayerSpec, NetworkDescriptor, PoolMode, PoolSpec, Preprocessing,
};
use ops::{Conv2d, PoolCache};

use crate::container::Container;
use crate::{Error, Exec, Result, Scalar, Tensor};

#[derive(Debug, Clone)]
enum Layer<T: Scalar> {
    Conv(Conv2d<T>),
    Relu,
    Pool(PoolSpec),
}

/// A descriptor with its conv weights. Immutable once built.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    descriptor: NetworkDescriptor,
    layers: Vec<Layer<T>>,
    exec: Exec,
}

#[derive(Debug, Clone)]
enum LayerCache<T: Scalar> {
    Conv { input_hw: (usize, usize) },
    Relu { input: Tensor<T> },
    Pool(PoolCache),
}

/// Activations of the requested layers plus what the reverse pass needs.
#[derive(Debug, Clone)]
pub struct FeatureStack<T: Scalar = f32> {
    input_dims: Vec<usize>,
    activations: BTreeMap<String, Tensor<T>>,
    cache: Vec<LayerCache<T>>,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn activation(&self, layer: &str) -> Option<&Tensor<T>> {
        self.activations.get(layer)
    }

    pub fn activations(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.activations
    }

    /// Layer output as an `[H·W, N]` matrix.
    pub fn feature_matrix(&self, layer: &str) -> Result<Tensor<T>> {
        let act = self
            .activations
            .get(layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_owned()))?;
        let d = act.dims();
        act.clone().reshape(&[d[0] * d[1], d[2]])
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network from a descriptor and a weight container.
    ///
    /// Every conv layer needs `<layer>.weight` `[out, in, kh, kw]` and
    /// `<layer>.bias` `[out]`; other tensors in the container are ignored.
    pub fn from_container(descriptor: NetworkDescriptor, weights: &Container) -> Result<Self> {
        descriptor.validate()?;
        let layers = descriptor
            .layers
            .iter()
            .map(|spec| {
                Ok(match &spec.kind {
                    LayerKind::Conv(c) => {
                        let fetch = |suffix: &str, expected: &[usize]| -> Result<Tensor<T>> {
                            let name = format!("{}.{suffix}", spec.name);
                            let t = weights.get(&name).ok_or(Error::MissingTensor(name))?;
                            if t.dims() != expected {
                                return Err(Error::WeightShape {
                                    layer: spec.name.clone(),
                                    expected: expected.to_vec(),
                                    actual: t.dims().to_vec(),
                                });
                            }
                            if !t.is_finite() {
                                return Err(Error::NonFinite(format!("weights of `{}`", spec.name)));
                            }
                            Ok(t.cast())
                        };
                        let kernel = fetch("weight", &c.kernel_dims())?;
                        let bias = fetch("bias", &[c.out_channels])?;
                        Layer::Conv(Conv2d::new(kernel, bias, c.stride, c.padding)?)
                    }
                    LayerKind::Relu => Layer::Relu,
                    LayerKind::Pool(p) => Layer::Pool(p.clone()),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Network {
            descriptor,
            layers,
            exec: Exec::default(),
        })
    }

    /// Reads a JSON descriptor and a `DTXW` weight container.
    pub fn load(descriptor_file: impl AsRef<Path>, weights_file: impl AsRef<Path>) -> Result<Self> {
        let descriptor = NetworkDescriptor::read(descriptor_file)?;
        let weights = Container::read(weights_file)?;
        Self::from_container(descriptor, &weights)
    }

    /// He-initialised weights (`std = sqrt(2 / fan_in)`) with small biases,
    /// seeded per layer from `seed`.
    pub fn random(descriptor: NetworkDescriptor, seed: u64) -> Result<Self> {
        let weights = random_weights(&descriptor, seed)?;
        Self::from_container(descriptor, &weights)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn descriptor(&self) -> &NetworkDescriptor {
        &self.descriptor
    }

    /// Weights as a container (inverse of [`Network::from_container`]).
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        for (spec, layer) in self.descriptor.layers.iter().zip(&self.layers) {
            if let Layer::Conv(conv) = layer {
                c.insert(format!("{}.weight", spec.name), conv.kernel());
                c.insert(format!("{}.bias", spec.name), conv.bias());
            }
        }
        c
    }

    /// Converts the weights to another element type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .zip(&self.descriptor.layers)
            .map(|(layer, spec)| match (layer, &spec.kind) {
                (Layer::Conv(conv), LayerKind::Conv(c)) => Layer::Conv(
                    Conv2d::new(conv.kernel().cast(), conv.bias().cast(), c.stride, c.padding)
                        .expect("shapes already validated"),
                ),
                (Layer::Relu, _) => Layer::Relu,
                (Layer::Pool(p), _) => Layer::Pool(p.clone()),
                _ => unreachable!("layers built from the descriptor"),
            })
            .collect();
        Network {
            descriptor: self.descriptor.clone(),
            layers,
            exec: self.exec,
        }
    }

    /// Runs the network up to the deepest requested layer.
    pub fn forward_features(&self, image: &Tensor<T>, requested: &[&str]) -> Result<FeatureStack<T>> {
        let c = self.descriptor.input_channels;
        if image.dims().len() != 3 || image.dims()[2] != c {
            return Err(Error::shape("forward_features", &[0, 0, c], image.dims()));
        }
        let wanted: BTreeSet<&str> = requested.iter().copied().collect();
        let mut depth = 0;
        for name in &wanted {
            let idx = self
                .descriptor
                .layer_index(name)
                .ok_or_else(|| Error::UnknownLayer((*name).to_owned()))?;
            depth = depth.max(idx + 1);
        }

        let mut activations = BTreeMap::new();
        let mut cache = Vec::with_capacity(depth);
        let mut x = image.clone();
        for (spec, layer) in self.descriptor.layers.iter().zip(&self.layers).take(depth) {
            let (y, entry) = match layer {
                Layer::Conv(conv) => {
                    let hw = (x.dims()[0], x.dims()[1]);
                    (conv.forward(&x, self.exec)?, LayerCache::Conv { input_hw: hw })
                }
                Layer::Relu => (ops::relu_forward(&x), LayerCache::Relu { input: x }),
                Layer::Pool(p) => {
                    let (y, pc) = ops::pool_forward(&x, p.mode, p.window, p.stride)?;
                    (y, LayerCache::Pool(pc))
                }
            };
            if wanted.contains(spec.name.as_str()) {
                activations.insert(spec.name.clone(), y.clone());
            }
            cache.push(entry);
            x = y;
        }
        Ok(FeatureStack {
            input_dims: image.dims().to_vec(),
            activations,
            cache,
        })
    }

    /// Pulls per-layer output gradients back to the input image and sums them.
    pub fn backward_to_input(
        &self,
        stack: &FeatureStack<T>,
        layer_grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let mut depth = 0;
        for (name, g) in layer_grads {
            let act = stack
                .activations
                .get(name)
                .ok_or_else(|| Error::UnknownLayer(format!("{name} (not in feature cache)")))?;
            if g.dims() != act.dims() {
                return Err(Error::shape("backward_to_input", act.dims(), g.dims()));
            }
            // present in activations, so the index exists and was cached
            depth = depth.max(self.descriptor.layer_index(name).unwrap_or(0) + 1);
        }

        let mut grad: Option<Tensor<T>> = None;
        for idx in (0..depth).rev() {
            let spec = &self.descriptor.layers[idx];
            if let Some(g) = layer_grads.get(&spec.name) {
                grad = Some(match grad {
                    Some(mut acc) => {
                        acc.add_scaled(T::one(), g)?;
                        acc
                    }
                    None => g.clone(),
                });
            }
            let Some(g) = grad.take() else { continue };
            grad = Some(match (&self.layers[idx], &stack.cache[idx]) {
                (Layer::Conv(conv), LayerCache::Conv { input_hw }) => {
                    conv.backward_input(&g, input_hw.0, input_hw.1, self.exec)?
                }
                (Layer::Relu, LayerCache::Relu { input }) => ops::relu_backward(&g, input)?,
                (Layer::Pool(_), LayerCache::Pool(pc)) => ops::pool_backward(&g, pc)?,
                _ => unreachable!("cache built from the same layer list"),
            });
        }
        match grad {
            Some(g) => Ok(g),
            None => Tensor::zeros(&stack.input_dims),
        }
    }
}

/// Random conv weights for `descriptor` as a container.
pub fn random_weights(descriptor: &NetworkDescriptor, seed: u64) -> Result<Container> {
    let mut c = Container::new();
    for (i, spec) in descriptor.layers.iter().enumerate() {
        if let LayerKind::Conv(conv) = &spec.kind {
            let fan_in = conv.in_channels * conv.kernel_h * conv.kernel_w;
            let std = (2.0 / fan_in as f64).sqrt();
            let layer_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            let kernel = Tensor::<f32>::gaussian(&conv.kernel_dims(), 0.0, std, layer_seed)?;
            let bias = Tensor::<f32>::gaussian(&[conv.out_channels], 0.0, 0.05, !layer_seed)?;
            c.insert(format!("{}.weight", spec.name), &kernel);
            c.insert(format!("{}.bias", spec.name), &bias);
        }
    }
    Ok(c)
}
