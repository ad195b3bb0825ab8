//! Frame-by-frame video generation from texture statistics.
//!
//! With noise initialisation the first `Δt` frames are optimised jointly as
//! one stacked vector. Every later frame is optimised alone against the
//! window formed by the `Δt − 1` frames already emitted before it. Example
//! initialisation instead emits `Δt − 1` given frames verbatim and continues
//! sequentially from them.

use crate::lbfgs::{try_minimize, try_minimize_in_box, Bounds, LbfgsConfig, OptimizationTrace};
use crate::loss::{frame_loss_grad, joint_loss_grad, WindowContext};
use crate::video::input_bounds;
use crate::{Error, Network, Result, Scalar, Tensor, TextureStatistics};

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode<T: Scalar = f32> {
    NoiseJoint,
    /// `Δt − 1` frames in input space, emitted first.
    FromExample(Vec<Tensor<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig<T: Scalar = f32> {
    pub n_frames: usize,
    pub init: InitMode<T>,
    pub seed: u64,
    pub lbfgs: LbfgsConfig,
    pub noise_std: f64,
    /// Multiplies `noise_std`; input space spans roughly ±128.
    pub noise_scale: f64,
    /// Keep iterates inside the `[0, 255]` pixel box instead of clamping only
    /// on output.
    pub box_constrained: bool,
}

impl<T: Scalar> Default for SynthesisConfig<T> {
    fn default() -> Self {
        SynthesisConfig {
            n_frames: 1,
            init: InitMode::NoiseJoint,
            seed: 0,
            lbfgs: LbfgsConfig::default(),
            noise_std: 1.0,
            noise_scale: 25.0,
            box_constrained: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesized<T: Scalar = f32> {
    /// Output frames in input space, temporal order.
    pub frames: Vec<Tensor<T>>,
    /// Trace of the joint optimisation of the first `Δt` frames.
    pub joint_trace: Option<OptimizationTrace>,
    /// Per-frame trace of the sequential stage; `None` for frames produced
    /// by the joint stage or copied from the example.
    pub frame_traces: Vec<Option<OptimizationTrace>>,
}

impl<T: Scalar> Synthesized<T> {
    /// The trace that produced frame `i`.
    pub fn trace_of(&self, i: usize) -> Option<&OptimizationTrace> {
        self.frame_traces.get(i)?.as_ref().or_else(|| {
            let joint = self.joint_trace.as_ref()?;
            (self.frame_traces.iter().take(i + 1).all(Option::is_none)).then_some(joint)
        })
    }
}

/// What [`Synthesizer::generate_with`] reports after each stage.
#[derive(Debug)]
pub enum Progress<'a> {
    Joint {
        frames: usize,
        trace: &'a OptimizationTrace,
    },
    Frame {
        index: usize,
        trace: &'a OptimizationTrace,
    },
    Copied {
        index: usize,
    },
}

pub struct Synthesizer<'a, T: Scalar = f32> {
    net: &'a Network<T>,
    stats: &'a TextureStatistics<T>,
    cfg: SynthesisConfig<T>,
    dims: [usize; 3],
}

impl<'a, T: Scalar> Synthesizer<'a, T> {
    pub fn new(net: &'a Network<T>, stats: &'a TextureStatistics<T>, cfg: SynthesisConfig<T>) -> Result<Self> {
        stats.check_network(net)?;
        let dims = [stats.source.frame_height, stats.source.frame_width, 3];
        let dt = stats.delta_t;
        match &cfg.init {
            InitMode::NoiseJoint if cfg.n_frames < dt => {
                return Err(Error::Inconsistent(format!(
                    "noise initialisation produces at least Δt = {dt} frames, {} requested",
                    cfg.n_frames
                )))
            }
            InitMode::FromExample(frames) => {
                if frames.len() + 1 != dt {
                    return Err(Error::Inconsistent(format!(
                        "Δt = {dt} needs {} example frames, got {}",
                        dt - 1,
                        frames.len()
                    )));
                }
                if cfg.n_frames < frames.len() {
                    return Err(Error::Inconsistent(format!(
                        "{} frames requested but {} example frames are emitted first",
                        cfg.n_frames,
                        frames.len()
                    )));
                }
                if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
                    return Err(Error::shape("example frame", &dims, f.dims()));
                }
            }
            InitMode::NoiseJoint => {}
        }
        if !(cfg.noise_std * cfg.noise_scale).is_finite() || cfg.noise_std < 0.0 || cfg.noise_scale < 0.0 {
            return Err(Error::Inconsistent(
                "noise std and scale must be finite and non-negative".into(),
            ));
        }
        cfg.lbfgs.validate()?;
        Ok(Synthesizer { net, stats, cfg, dims })
    }

    pub fn config(&self) -> &SynthesisConfig<T> {
        &self.cfg
    }

    /// `[H, W, 3]` of every output frame.
    pub fn frame_dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Starting point for output frame `index`.
    pub fn noise(&self, index: usize) -> Result<Tensor<T>> {
        let std = self.cfg.noise_std * self.cfg.noise_scale;
        Tensor::gaussian(&self.dims, 0.0, std, self.cfg.seed ^ index as u64)
    }

    fn bounds(&self, frames: usize) -> Result<Option<Bounds<T>>> {
        if !self.cfg.box_constrained {
            return Ok(None);
        }
        let [h, w, _] = self.dims;
        let (lo, hi) = input_bounds(frames * h, w, &self.net.descriptor().preprocessing)?;
        Ok(Some(Bounds { lower: lo, upper: hi }))
    }

    fn run<F>(&self, objective: F, x0: &Tensor<T>, frames: usize) -> Result<(Tensor<T>, OptimizationTrace)>
    where
        F: FnMut(&Tensor<T>) -> Result<(f64, Tensor<T>)>,
    {
        match self.bounds(frames)? {
            Some(b) => {
                let flat = |t: &Tensor<T>| t.clone().reshape(x0.dims());
                let b = Bounds {
                    lower: flat(&b.lower)?,
                    upper: flat(&b.upper)?,
                };
                try_minimize_in_box(objective, x0, &b, &self.cfg.lbfgs)
            }
            None => try_minimize(objective, x0, &self.cfg.lbfgs),
        }
    }

    /// The first `Δt` frames, optimised together from noise.
    pub fn init_frames_joint(&self) -> Result<(Vec<Tensor<T>>, OptimizationTrace)> {
        let dt = self.stats.delta_t;
        let [h, w, c] = self.dims;
        let frame_len = h * w * c;
        let mut data = Vec::with_capacity(dt * frame_len);
        for i in 0..dt {
            data.extend_from_slice(self.noise(i)?.as_slice());
        }
        let x0 = Tensor::from_vec(&[dt, h, w, c], data)?;
        let split = |x: &Tensor<T>| -> Result<Vec<Tensor<T>>> {
            x.as_slice()
                .chunks_exact(frame_len)
                .map(|f| Tensor::from_vec(&self.dims, f.to_vec()))
                .collect()
        };
        let objective = |x: &Tensor<T>| -> Result<(f64, Tensor<T>)> {
            let (loss, grads) = joint_loss_grad(&split(x)?, self.stats, self.net)?;
            let flat = grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect();
            Ok((loss.total, Tensor::from_vec(x.dims(), flat)?))
        };
        let (x, trace) = self.run(objective, &x0, dt).map_err(|e| Error::Frame {
            context: format!("joint initialisation of frames 0..{dt}"),
            source: Box::new(e),
        })?;
        Ok((split(&x)?, trace))
    }

    /// Output frame `index` from its own noise, with `ctx` held fixed.
    pub fn synthesize_frame(&self, ctx: &WindowContext<T>, index: usize) -> Result<(Tensor<T>, OptimizationTrace)> {
        let x0 = self.noise(index)?;
        self.synthesize_frame_from(ctx, &x0).map_err(|e| Error::Frame {
            context: format!("frame {index}"),
            source: Box::new(e),
        })
    }

    /// As [`Self::synthesize_frame`] but starting from `x0`.
    pub fn synthesize_frame_from(
        &self,
        ctx: &WindowContext<T>,
        x0: &Tensor<T>,
    ) -> Result<(Tensor<T>, OptimizationTrace)> {
        if x0.dims() != self.dims {
            return Err(Error::shape("synthesize_frame", &self.dims, x0.dims()));
        }
        let objective = |x: &Tensor<T>| -> Result<(f64, Tensor<T>)> {
            let (loss, grad) = frame_loss_grad(x, ctx, self.stats, self.net)?;
            Ok((loss.total, grad))
        };
        self.run(objective, x0, 1)
    }

    /// A context over `frames`, which must be the `Δt − 1` frames preceding
    /// the next one to synthesise.
    pub fn context(&self, frames: Vec<Tensor<T>>) -> Result<WindowContext<T>> {
        WindowContext::new(self.net, self.stats, frames)
    }

    pub fn generate(&self) -> Result<Synthesized<T>> {
        self.generate_with(|_| {})
    }

    pub fn generate_with(&self, mut progress: impl FnMut(Progress<'_>)) -> Result<Synthesized<T>> {
        let dt = self.stats.delta_t;
        let n = self.cfg.n_frames;
        let mut out = Synthesized {
            frames: Vec::with_capacity(n),
            joint_trace: None,
            frame_traces: Vec::with_capacity(n),
        };
        match &self.cfg.init {
            InitMode::NoiseJoint => {
                let (frames, trace) = self.init_frames_joint()?;
                progress(Progress::Joint {
                    frames: dt,
                    trace: &trace,
                });
                out.frame_traces.resize(dt, None);
                out.frames = frames;
                out.joint_trace = Some(trace);
            }
            InitMode::FromExample(frames) => {
                for (index, f) in frames.iter().enumerate() {
                    out.frames.push(f.clone());
                    out.frame_traces.push(None);
                    progress(Progress::Copied { index });
                }
            }
        }
        if out.frames.len() >= n {
            return Ok(out);
        }

        let start = out.frames.len();
        let mut ctx = self.context(out.frames[start + 1 - dt..].to_vec())?;
        for index in start..n {
            let (frame, trace) = self.synthesize_frame(&ctx, index)?;
            progress(Progress::Frame { index, trace: &trace });
            if index + 1 < n {
                ctx.slide(self.net, frame.clone())?;
            }
            out.frames.push(frame);
            out.frame_traces.push(Some(trace));
        }
        Ok(out)
    }
}
