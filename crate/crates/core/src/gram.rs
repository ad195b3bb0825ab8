//! Spatio-temporal Gram statistics of a video.
//!
//! For a window of `Δt` consecutive frames the feature matrices of one layer
//! are concatenated column-wise, `F = [F(x_1), …, F(x_Δt)] ∈ R^{M × Δt·N}`,
//! and summarised by `G = (1/M) FᵀF`. The texture model of a source video is
//! the arithmetic mean of `G` over all `T − Δt + 1` windows. Block `(a, b)`
//! of `G` holds the correlations between frame `a` and frame `b` of the window,
//! so the diagonal blocks are ordinary static Gram matrices.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::nn::Network;
use crate::{Error, Exec, Result, Scalar, Tensor};

/// `[M, N]` matrices concatenated along columns into `[M, Δt·N]`.
pub fn concat_window<T: Scalar>(features: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = features
        .first()
        .ok_or_else(|| Error::Inconsistent("empty window".into()))?;
    let (m, n) = first.as_matrix("concat_window")?;
    for f in features {
        if f.dims() != [m, n] {
            return Err(Error::shape("concat_window", &[m, n], f.dims()));
        }
    }
    let k = features.len() * n;
    let mut out = Vec::with_capacity(m * k);
    for row in 0..m {
        for f in features {
            out.extend_from_slice(&f.as_slice()[row * n..(row + 1) * n]);
        }
    }
    Tensor::from_vec(&[m, k], out)
}

/// `(1/M) FᵀF` for `F: [M, K]`.
pub fn gram<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    gram_with(f, Exec::default())
}

pub fn gram_with<T: Scalar>(f: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
    cross_gram_with(f, f, exec)
}

/// `(1/M) AᵀB` for `A: [M, K₁]`, `B: [M, K₂]`.
///
/// Every entry is one index-ordered dot product over rows divided by `M`, so
/// blocks of [`gram`] of a concatenation equal the cross Grams of its parts
/// bit for bit, and `cross_gram(a, a)` is exactly symmetric.
pub fn cross_gram_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
    let (m, ka) = a.as_matrix("gram")?;
    let (mb, kb) = b.as_matrix("gram")?;
    if m != mb {
        return Err(Error::shape("gram", &[m, kb], &[mb, kb]));
    }
    let (ad, bd) = (a.as_slice(), b.as_slice());
    let m_t = T::from_f64(m as f64);
    let mut out = vec![T::zero(); ka * kb];
    exec.for_each_chunk(&mut out, kb, |i, row| {
        for r in 0..m {
            let ari = ad[r * ka + i];
            for (v, &bv) in row.iter_mut().zip(&bd[r * kb..(r + 1) * kb]) {
                *v = *v + ari * bv;
            }
        }
        row.iter_mut().for_each(|v| *v = *v / m_t);
    });
    Tensor::from_vec(&[ka, kb], out)
}

/// Averaged spatio-temporal Gram matrix of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<T: Scalar = f32> {
    pub layer: String,
    pub delta_t: usize,
    /// Channels `N` of the layer; `values` is `[Δt·N, Δt·N]`.
    pub channels: usize,
    pub values: Tensor<T>,
}

impl<T: Scalar> GramMatrix<T> {
    /// Block `(a, b)`: correlations between window frames `a` and `b`.
    pub fn block(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let n = self.channels;
        let side = n * self.delta_t;
        if a >= self.delta_t || b >= self.delta_t {
            return Err(Error::Inconsistent(format!(
                "block ({a}, {b}) outside Δt = {}",
                self.delta_t
            )));
        }
        let v = self.values.as_slice();
        let data = (0..n)
            .flat_map(|r| v[(a * n + r) * side + b * n..][..n].iter().copied())
            .collect();
        Tensor::from_vec(&[n, n], data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    /// Frames `T` the statistics were averaged over.
    pub frame_count: usize,
    pub frame_height: usize,
    pub frame_width: usize,
}

/// The texture model: one averaged Gram matrix per layer plus layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureStatistics<T: Scalar = f32> {
    pub delta_t: usize,
    pub grams: Vec<GramMatrix<T>>,
    pub weights: Vec<f64>,
    pub source: SourceMeta,
}

impl<T: Scalar> TextureStatistics<T> {
    pub fn layer_names(&self) -> Vec<&str> {
        self.grams.iter().map(|g| g.layer.as_str()).collect()
    }

    pub fn gram(&self, layer: &str) -> Option<&GramMatrix<T>> {
        self.grams.iter().find(|g| g.layer == layer)
    }

    pub fn cast<U: Scalar>(&self) -> TextureStatistics<U> {
        TextureStatistics {
            delta_t: self.delta_t,
            grams: self
                .grams
                .iter()
                .map(|g| GramMatrix {
                    layer: g.layer.clone(),
                    delta_t: g.delta_t,
                    channels: g.channels,
                    values: g.values.cast(),
                })
                .collect(),
            weights: self.weights.clone(),
            source: self.source.clone(),
        }
    }

    /// Replaces the layer weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, self.grams.len())?;
        self.weights = weights;
        Ok(self)
    }

    /// Checks that `net` produces features matching these statistics at the
    /// source frame size.
    pub fn check_network(&self, net: &Network<T>) -> Result<()> {
        let d = net.descriptor();
        let indices = self
            .grams
            .iter()
            .map(|g| {
                d.layer_index(&g.layer)
                    .ok_or_else(|| Error::UnknownLayer(g.layer.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let deepest = indices.iter().copied().max().unwrap_or(0);
        let dims = d.output_dims_through(self.source.frame_height, self.source.frame_width, deepest)?;
        for (g, idx) in self.grams.iter().zip(indices) {
            if dims[idx][2] != g.channels {
                return Err(Error::Inconsistent(format!(
                    "layer `{}` has {} channels in the network but {} in the statistics",
                    g.layer, dims[idx][2], g.channels
                )));
            }
        }
        Ok(())
    }
}

fn check_weights(weights: &[f64], layers: usize) -> Result<()> {
    if weights.len() != layers {
        return Err(Error::Inconsistent(format!(
            "{} layer weights for {layers} layers",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Inconsistent(format!("layer weight {w} is not positive")));
    }
    Ok(())
}

/// Averaged spatio-temporal Gram statistics of `frames` (network input space).
///
/// Each frame goes through the network once; the cross Gram of every frame
/// pair at lag `< Δt` is computed once and shared by all windows that contain
/// it. Windows are summed in order and divided by their count `T − Δt + 1`.
/// `weights` empty means equal weights of 1.
pub fn compute_statistics<T: Scalar>(
    net: &Network<T>,
    frames: &[Tensor<T>],
    layers: &[&str],
    delta_t: usize,
    weights: &[f64],
) -> Result<TextureStatistics<T>> {
    if layers.is_empty() {
        return Err(Error::Inconsistent("empty layer list".into()));
    }
    if delta_t == 0 {
        return Err(Error::Inconsistent("Δt must be >= 1".into()));
    }
    if frames.len() < delta_t {
        return Err(Error::TooFewFrames {
            frames: frames.len(),
            delta_t,
        });
    }
    let weights = if weights.is_empty() {
        vec![1.0; layers.len()]
    } else {
        weights.to_vec()
    };
    check_weights(&weights, layers.len())?;
    let dims = frames[0].dims();
    if dims.len() != 3 {
        return Err(Error::shape("compute_statistics", &[0, 0, 3], dims));
    }
    if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
        return Err(Error::shape("compute_statistics", dims, f.dims()));
    }

    let exec = net.exec();
    let stacks = exec.map_indices(frames.len(), |t| net.forward_features(&frames[t], layers));
    let stacks = stacks.into_iter().collect::<Result<Vec<_>>>()?;

    let windows = frames.len() - delta_t + 1;
    let mut grams = Vec::with_capacity(layers.len());
    for &layer in layers {
        let feats = stacks
            .iter()
            .map(|s| s.feature_matrix(layer))
            .collect::<Result<Vec<_>>>()?;
        let n = feats[0].dims()[1];
        let side = delta_t * n;

        let mut cross: HashMap<(usize, usize), Tensor<T>> = HashMap::new();
        let mut sum = vec![T::zero(); side * side];
        for start in 0..windows {
            for a in 0..delta_t {
                for b in a..delta_t {
                    let key = (start + a, start + b);
                    if let Entry::Vacant(e) = cross.entry(key) {
                        e.insert(cross_gram_with(&feats[key.0], &feats[key.1], exec)?);
                    }
                    let block = cross[&key].as_slice();
                    for r in 0..n {
                        let dst = &mut sum[(a * n + r) * side + b * n..][..n];
                        for (d, &v) in dst.iter_mut().zip(&block[r * n..(r + 1) * n]) {
                            *d = *d + v;
                        }
                    }
                }
            }
            // drop pairs no later window can use
            cross.retain(|&(p, _), _| p > start);
        }

        let count = T::from_f64(windows as f64);
        for v in &mut sum {
            *v = *v / count;
        }
        mirror_upper(&mut sum, side);
        grams.push(GramMatrix {
            layer: layer.to_owned(),
            delta_t,
            channels: n,
            values: Tensor::from_vec(&[side, side], sum)?,
        });
    }

    Ok(TextureStatistics {
        delta_t,
        grams,
        weights,
        source: SourceMeta {
            frame_count: frames.len(),
            frame_height: dims[0],
            frame_width: dims[1],
        },
    })
}

/// Copies the upper triangle over the lower one.
fn mirror_upper<T: Copy>(m: &mut [T], side: usize) {
    for i in 0..side {
        for j in 0..i {
            m[i * side + j] = m[j * side + i];
        }
    }
}

pub const STATS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    delta_t: usize,
    layer_names: Vec<String>,
    layer_weights: Vec<f64>,
    layer_channels: Vec<usize>,
    source_meta: SourceMeta,
}

/// Sidecar path for a statistics file: `tex.dtxs` → `tex.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `gram.<layer>` tensors (as `f32`) plus the JSON sidecar.
pub fn save_statistics<T: Scalar>(stats: &TextureStatistics<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut c = Container::new();
    for g in &stats.grams {
        c.insert(format!("gram.{}", g.layer), &g.values);
    }
    c.write(path)?;
    let meta = Sidecar {
        format_version: STATS_FORMAT_VERSION,
        delta_t: stats.delta_t,
        layer_names: stats.grams.iter().map(|g| g.layer.clone()).collect(),
        layer_weights: stats.weights.clone(),
        layer_channels: stats.grams.iter().map(|g| g.channels).collect(),
        source_meta: stats.source.clone(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(side, e))
}

pub fn load_statistics(path: impl AsRef<Path>) -> Result<TextureStatistics<f32>> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingMetadata(side));
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        what: "statistics sidecar",
        reason: e.to_string(),
    })?;
    if meta.format_version != STATS_FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "statistics format version {} (expected {STATS_FORMAT_VERSION})",
            meta.format_version
        )));
    }
    let inconsistent = |msg: String| Err(Error::Inconsistent(msg));
    if meta.delta_t == 0 {
        return inconsistent("sidecar Δt is 0".into());
    }
    let n_layers = meta.layer_names.len();
    if meta.layer_channels.len() != n_layers {
        return inconsistent("sidecar layer_channels length differs from layer_names".into());
    }
    check_weights(&meta.layer_weights, n_layers)?;
    if meta.source_meta.frame_count < meta.delta_t {
        return inconsistent(format!(
            "sidecar Δt {} exceeds source frame count {}",
            meta.delta_t, meta.source_meta.frame_count
        ));
    }

    let c = Container::read(path)?;
    let mut grams = Vec::with_capacity(n_layers);
    for (layer, &n) in meta.layer_names.iter().zip(&meta.layer_channels) {
        let name = format!("gram.{layer}");
        let values = c.get(&name).ok_or(Error::MissingTensor(name))?;
        let side = meta.delta_t * n;
        if values.dims() != [side, side] {
            return inconsistent(format!(
                "`gram.{layer}` is {:?} but Δt = {} and N = {n} require [{side}, {side}]",
                values.dims(),
                meta.delta_t
            ));
        }
        grams.push(GramMatrix {
            layer: layer.clone(),
            delta_t: meta.delta_t,
            channels: n,
            values: values.clone(),
        });
    }
    Ok(TextureStatistics {
        delta_t: meta.delta_t,
        grams,
        weights: meta.layer_weights,
        source: meta.source_meta,
    })
}
