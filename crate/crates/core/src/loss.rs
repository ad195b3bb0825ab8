//! Texture loss of a window of frames against target statistics.
//!
//! Per layer, with `G` the Gram of the `Δt`-frame window and `Ĝ` the target,
//! `E = ‖G − Ĝ‖² / (4N²)` and the total is `Σ w·E`. Its gradient with respect
//! to the concatenated features is `(1/(M·N²))·F·(G − Ĝ)`; column block `k`
//! of that matrix belongs to window frame `k` and is pulled back through that
//! frame's own network pass.

use std::collections::BTreeMap;

use crate::gram::{concat_window, gram_with, TextureStatistics};
use crate::nn::{FeatureStack, Network};
use crate::tensor::matmul_with;
use crate::{Error, Exec, Result, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unweighted `E` per layer, in statistics order.
    pub per_layer: Vec<(String, f64)>,
}

/// `‖G_window − G_target‖² / (4N²)`.
pub fn layer_loss<T: Scalar>(g_window: &Tensor<T>, g_target: &Tensor<T>, channels: usize) -> Result<f64> {
    if g_window.dims() != g_target.dims() {
        return Err(Error::shape("layer_loss", g_target.dims(), g_window.dims()));
    }
    let n = channels as f64;
    Ok(g_window.sub(g_target)?.frobenius_sq() / (4.0 * n * n))
}

/// Loss of the Gram of `features: [M, K]` against `target: [K, K]` and its
/// gradient with respect to `features`.
pub fn gram_loss_feature_grad<T: Scalar>(
    features: &Tensor<T>,
    target: &Tensor<T>,
    channels: usize,
) -> Result<(f64, Tensor<T>)> {
    let (_, k) = features.as_matrix("gram_loss_feature_grad")?;
    if k % channels != 0 {
        return Err(Error::Inconsistent(format!(
            "{k} columns is not a multiple of N = {channels}"
        )));
    }
    let terms = LayerTerms::new(features, target, channels, Exec::default())?;
    let blocks: Vec<_> = (0..k / channels)
        .map(|b| terms.block_grad(b, 1.0))
        .collect::<Result<_>>()?;
    let refs: Vec<_> = blocks.iter().collect();
    Ok((terms.loss, concat_window(&refs)?))
}

struct LayerTerms<'a, T: Scalar> {
    features: &'a Tensor<T>,
    diff: Tensor<T>,
    channels: usize,
    loss: f64,
    exec: Exec,
}

impl<'a, T: Scalar> LayerTerms<'a, T> {
    fn new(features: &'a Tensor<T>, target: &Tensor<T>, channels: usize, exec: Exec) -> Result<Self> {
        let g = gram_with(features, exec)?;
        let loss = layer_loss(&g, target, channels)?;
        Ok(LayerTerms {
            features,
            diff: g.sub(target)?,
            channels,
            loss,
            exec,
        })
    }

    /// `weight/(M·N²) · F · (G − Ĝ)[:, block]`, shape `[M, N]`.
    fn block_grad(&self, block: usize, weight: f64) -> Result<Tensor<T>> {
        let (m, k) = self.features.as_matrix("block_grad")?;
        let n = self.channels;
        let d = self.diff.as_slice();
        let cols: Vec<T> = (0..k)
            .flat_map(|r| d[r * k + block * n..][..n].iter().copied())
            .collect();
        let cols = Tensor::from_vec(&[k, n], cols)?;
        let coef = T::from_f64(weight / (m as f64 * (n * n) as f64));
        Ok(matmul_with(self.features, &cols, self.exec)?.scale(coef))
    }
}

/// The `Δt − 1` fixed frames preceding the frame being synthesised, with
/// their feature matrices for the statistics' layers.
#[derive(Debug, Clone)]
pub struct WindowContext<T: Scalar = f32> {
    layers: Vec<String>,
    frames: Vec<Tensor<T>>,
    // per frame, per layer: [M, N]
    features: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> WindowContext<T> {
    /// Runs `net` once per frame to cache the context features.
    pub fn new(net: &Network<T>, target: &TextureStatistics<T>, frames: Vec<Tensor<T>>) -> Result<Self> {
        let layers: Vec<String> = target.layer_names().into_iter().map(str::to_owned).collect();
        let mut ctx = WindowContext {
            layers,
            frames: Vec::with_capacity(frames.len()),
            features: Vec::with_capacity(frames.len()),
        };
        for f in frames {
            let feats = ctx.extract(net, &f)?;
            ctx.frames.push(f);
            ctx.features.push(feats);
        }
        Ok(ctx)
    }

    fn extract(&self, net: &Network<T>, frame: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let names: Vec<&str> = self.layers.iter().map(String::as_str).collect();
        let stack = net.forward_features(frame, &names)?;
        features_of(&stack, &names)
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Appends `frame` and drops the oldest frame, keeping the length fixed.
    /// With an empty context this is a no-op.
    pub fn slide(&mut self, net: &Network<T>, frame: Tensor<T>) -> Result<()> {
        if self.frames.is_empty() {
            return Ok(());
        }
        let feats = self.extract(net, &frame)?;
        self.frames.remove(0);
        self.features.remove(0);
        self.frames.push(frame);
        self.features.push(feats);
        Ok(())
    }
}

fn features_of<T: Scalar>(stack: &FeatureStack<T>, layers: &[&str]) -> Result<Vec<Tensor<T>>> {
    layers.iter().map(|l| stack.feature_matrix(l)).collect()
}

fn check_target<T: Scalar>(net: &Network<T>, target: &TextureStatistics<T>) -> Result<()> {
    if target.grams.is_empty() {
        return Err(Error::Inconsistent("statistics have no layers".into()));
    }
    if target.weights.len() != target.grams.len() {
        return Err(Error::Inconsistent("statistics weights/layers length mismatch".into()));
    }
    for g in &target.grams {
        net.descriptor()
            .layer_index(&g.layer)
            .ok_or_else(|| Error::UnknownLayer(g.layer.clone()))?;
    }
    Ok(())
}

type LayerGrads<T> = BTreeMap<String, Tensor<T>>;

/// Loss of one window and per-layer output gradients for the frames in `wanted`.
fn window_loss<T: Scalar>(
    target: &TextureStatistics<T>,
    window_features: &[Vec<&Tensor<T>>],
    activation_dims: &[Vec<usize>],
    wanted: &[usize],
    exec: Exec,
) -> Result<(LossBreakdown, Vec<LayerGrads<T>>)> {
    let mut total = 0.0;
    let mut per_layer = Vec::with_capacity(target.grams.len());
    let mut grads = vec![BTreeMap::new(); wanted.len()];
    for (li, (g, &w)) in target.grams.iter().zip(&target.weights).enumerate() {
        let n = window_features[li][0].dims()[1];
        if n != g.channels {
            return Err(Error::Inconsistent(format!(
                "layer `{}` has {n} channels but the statistics expect {}",
                g.layer, g.channels
            )));
        }
        let f = concat_window(&window_features[li])?;
        let terms = LayerTerms::new(&f, &g.values, n, exec)?;
        total += w * terms.loss;
        per_layer.push((g.layer.clone(), terms.loss));
        for (slot, &k) in grads.iter_mut().zip(wanted) {
            let grad = terms.block_grad(k, w)?.reshape(&activation_dims[li])?;
            slot.insert(g.layer.clone(), grad);
        }
    }
    Ok((LossBreakdown { total, per_layer }, grads))
}

/// Loss of the window `[ctx…, frame]` and its gradient with respect to `frame`
/// only; the context frames are held fixed.
pub fn frame_loss_grad<T: Scalar>(
    frame: &Tensor<T>,
    ctx: &WindowContext<T>,
    target: &TextureStatistics<T>,
    net: &Network<T>,
) -> Result<(LossBreakdown, Tensor<T>)> {
    check_target(net, target)?;
    if ctx.len() + 1 != target.delta_t {
        return Err(Error::Inconsistent(format!(
            "context holds {} frames but Δt = {} needs {}",
            ctx.len(),
            target.delta_t,
            target.delta_t - 1
        )));
    }
    let names = target.layer_names();
    if ctx.layers.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::Inconsistent("context was built for different layers".into()));
    }
    if let Some(f) = ctx.frames.first() {
        if f.dims() != frame.dims() {
            return Err(Error::shape("frame_loss_grad", f.dims(), frame.dims()));
        }
    }

    let stack = net.forward_features(frame, &names)?;
    let own = features_of(&stack, &names)?;
    let window: Vec<Vec<&Tensor<T>>> = (0..names.len())
        .map(|li| ctx.features.iter().map(|f| &f[li]).chain([&own[li]]).collect())
        .collect();
    let dims: Vec<Vec<usize>> = names
        .iter()
        .map(|l| stack.activation(l).map(|a| a.dims().to_vec()).unwrap_or_default())
        .collect();
    let last = target.delta_t - 1;
    let (loss, mut grads) = window_loss(target, &window, &dims, &[last], net.exec())?;
    let grad = net.backward_to_input(&stack, &grads.remove(0))?;
    Ok((loss, grad))
}

/// Loss of the window `frames` with gradients for every frame.
pub fn joint_loss_grad<T: Scalar>(
    frames: &[Tensor<T>],
    target: &TextureStatistics<T>,
    net: &Network<T>,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    check_target(net, target)?;
    if frames.len() != target.delta_t {
        return Err(Error::Inconsistent(format!(
            "joint window needs Δt = {} frames, got {}",
            target.delta_t,
            frames.len()
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.dims() != frames[0].dims()) {
        return Err(Error::shape("joint_loss_grad", frames[0].dims(), f.dims()));
    }
    let names = target.layer_names();
    let stacks = frames
        .iter()
        .map(|f| net.forward_features(f, &names))
        .collect::<Result<Vec<_>>>()?;
    let feats = stacks
        .iter()
        .map(|s| features_of(s, &names))
        .collect::<Result<Vec<_>>>()?;
    let window: Vec<Vec<&Tensor<T>>> = (0..names.len())
        .map(|li| feats.iter().map(|f| &f[li]).collect())
        .collect();
    let dims: Vec<Vec<usize>> = names
        .iter()
        .map(|l| stacks[0].activation(l).map(|a| a.dims().to_vec()).unwrap_or_default())
        .collect();
    let all: Vec<usize> = (0..frames.len()).collect();
    let (loss, grads) = window_loss(target, &window, &dims, &all, net.exec())?;
    let grads = stacks
        .iter()
        .zip(&grads)
        .map(|(s, g)| net.backward_to_input(s, g))
        .collect::<Result<_>>()?;
    Ok((loss, grads))
}
