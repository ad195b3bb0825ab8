use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

fn one() -> usize {
    1
}

impl ConvSpec {
    /// Stride-1 square kernel with "same" padding for odd sizes.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub mode: PoolMode,
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv(ConvSpec),
    Relu,
    Pool(PoolSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, spec: ConvSpec) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv(spec),
        }
    }

    pub fn relu(name: impl Into<String>) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Relu,
        }
    }

    pub fn pool(name: impl Into<String>, mode: PoolMode, window: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Pool(PoolSpec { mode, window, stride }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChannelOrder {
    #[default]
    RGB,
    BGR,
}

/// Mapping from 8-bit RGB pixels to network input values.
///
/// `channel_means` are listed in the network's channel order and subtracted
/// after reordering.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Preprocessing {
    pub channel_means: [f64; 3],
    pub channel_order: ChannelOrder,
}

/// Ordered conv / ReLU / pool layers plus input preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescriptor {
    pub input_channels: usize,
    pub preprocessing: Preprocessing,
    pub layers: Vec<LayerSpec>,
}

/// Output extent of a sliding window, or `None` when it does not tile exactly.
pub(crate) fn window_output(input: usize, pad: usize, window: usize, stride: usize) -> Option<usize> {
    let span = (input + 2 * pad).checked_sub(window)?;
    (span % stride == 0).then_some(span / stride + 1)
}

impl NetworkDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        let d: NetworkDescriptor = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    /// Checks unique names, positive sizes and the channel chain.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Network(msg));
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1".into());
        }
        let mut names = HashSet::new();
        let mut channels = self.input_channels;
        for layer in &self.layers {
            if !names.insert(layer.name.as_str()) {
                return bad(format!("duplicate layer name `{}`", layer.name));
            }
            match &layer.kind {
                LayerKind::Conv(c) => {
                    if c.kernel_h == 0 || c.kernel_w == 0 || c.stride == 0 || c.out_channels == 0 {
                        return bad(format!("conv `{}` has a zero size", layer.name));
                    }
                    if c.in_channels != channels {
                        return bad(format!(
                            "conv `{}` expects {} input channels, previous layer gives {}",
                            layer.name, c.in_channels, channels
                        ));
                    }
                    channels = c.out_channels;
                }
                LayerKind::Pool(p) => {
                    if p.window == 0 || p.stride == 0 {
                        return bad(format!("pool `{}` has a zero size", layer.name));
                    }
                }
                LayerKind::Relu => {}
            }
        }
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Output `[H, W, C]` of every layer for an `h × w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<Vec<[usize; 3]>> {
        self.output_dims_through(h, w, self.layers.len().saturating_sub(1))
    }

    /// [`Self::output_dims`] for layers `0..=last` only.
    pub fn output_dims_through(&self, h: usize, w: usize, last: usize) -> Result<Vec<[usize; 3]>> {
        let mut cur = [h, w, self.input_channels];
        let mut out = Vec::with_capacity(last + 1);
        for layer in self.layers.iter().take(last + 1) {
            cur = match &layer.kind {
                LayerKind::Conv(c) => {
                    let oh = window_output(cur[0], c.padding, c.kernel_h, c.stride);
                    let ow = window_output(cur[1], c.padding, c.kernel_w, c.stride);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => [oh, ow, c.out_channels],
                        _ => return Err(non_integral(&layer.name, cur)),
                    }
                }
                LayerKind::Pool(p) => {
                    let oh = window_output(cur[0], 0, p.window, p.stride);
                    let ow = window_output(cur[1], 0, p.window, p.stride);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => [oh, ow, cur[2]],
                        _ => return Err(non_integral(&layer.name, cur)),
                    }
                }
                LayerKind::Relu => cur,
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Channel count `N` of the named layer's output.
    pub fn channels_of(&self, name: &str) -> Result<usize> {
        let idx = self
            .layer_index(name)
            .ok_or_else(|| Error::UnknownLayer(name.to_owned()))?;
        Ok(self.layers[..=idx]
            .iter()
            .rev()
            .find_map(|l| match &l.kind {
                LayerKind::Conv(c) => Some(c.out_channels),
                _ => None,
            })
            .unwrap_or(self.input_channels))
    }

    /// VGG-19 from `conv1_1` through `relu5_1`, with the given pooling mode and
    /// Caffe's BGR mean subtraction.
    pub fn vgg19(pool: PoolMode) -> Self {
        const BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 1)];
        let mut layers = Vec::new();
        let mut channels = 3;
        for (b, &(width, convs)) in BLOCKS.iter().enumerate() {
            if b > 0 {
                layers.push(LayerSpec::pool(format!("pool{b}"), pool, 2, 2));
            }
            for i in 1..=convs {
                let block = b + 1;
                layers.push(LayerSpec::conv(
                    format!("conv{block}_{i}"),
                    ConvSpec::same(channels, width, 3),
                ));
                layers.push(LayerSpec::relu(format!("relu{block}_{i}")));
                channels = width;
            }
        }
        NetworkDescriptor {
            input_channels: 3,
            preprocessing: Preprocessing {
                channel_means: [103.939, 116.779, 123.68],
                channel_order: ChannelOrder::BGR,
            },
            layers,
        }
    }

    /// Five conv blocks named like VGG's first conv of each block
    /// (`conv1_1` … `conv5_1`), each followed by a ReLU, with 2×2 pools in
    /// between. `widths` gives the output channels of the five convs.
    pub fn tiny(widths: [usize; 5], pool: PoolMode) -> Self {
        let mut layers = Vec::new();
        let mut channels = 3;
        for (b, &width) in widths.iter().enumerate() {
            let block = b + 1;
            if b > 0 {
                layers.push(LayerSpec::pool(format!("pool{b}"), pool, 2, 2));
            }
            layers.push(LayerSpec::conv(
                format!("conv{block}_1"),
                ConvSpec::same(channels, width, 3),
            ));
            layers.push(LayerSpec::relu(format!("relu{block}_1")));
            channels = width;
        }
        NetworkDescriptor {
            input_channels: 3,
            preprocessing: Preprocessing::default(),
            layers,
        }
    }
}

fn non_integral(layer: &str, input: [usize; 3]) -> Error {
    Error::Network(format!(
        "layer `{layer}` does not tile its {}x{} input to an integral output size",
        input[0], input[1]
    ))
}
