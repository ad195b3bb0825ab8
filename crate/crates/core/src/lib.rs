//! Dynamic texture synthesis from spatio-temporal Gram statistics.
//!
//! A source video is summarised by averaged Gram matrices of the concatenated
//! CNN feature maps of every window of `delta_t` consecutive frames. New
//! videos of any length are generated frame by frame with an L-BFGS pre-image
//! search that matches those statistics, given the previously generated (or
//! example) frames as fixed temporal context.
//!
//! Module map:
//!
//! * [`tensor`]: dense row-major arrays and the few linear-algebra kernels used.
//! * [`nn`]: descriptor-driven conv/ReLU/pool network with input gradients.
//! * [`container`]: the `DTXW` binary tensor container.
//! * [`gram`]: window concatenation, Gram matrices, texture statistics.
//! * [`loss`]: the per-frame and joint texture losses with analytic gradients.
//! * [`lbfgs`]: L-BFGS with a strong-Wolfe line search.
//! * [`synthesis`]: joint initialisation, sequential generation, extrapolation.
//! * [`video`]: P6 PPM frames, numbered sequences, network preprocessing.
//!
//! Data-parallel kernels run on rayon when the `parallel` feature is enabled
//! (the default). Every kernel partitions work over independent output
//! elements, so results are bit-identical to [`Exec::Sequential`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
mod error;
pub mod exec;
pub mod gram;
pub mod lbfgs;
pub mod loss;
pub mod nn;
pub mod synthesis;
pub mod tensor;
pub mod video;

pub use error::{Error, Result};
pub use exec::Exec;
pub use gram::{compute_statistics, GramMatrix, TextureStatistics};
pub use lbfgs::{minimize, LbfgsConfig, OptimizationTrace, Termination};
pub use loss::{frame_loss_grad, joint_loss_grad, LossBreakdown, WindowContext};
pub use nn::{Network, NetworkDescriptor};
pub use synthesis::{InitMode, SynthesisConfig, Synthesized, Synthesizer};
pub use tensor::{Scalar, Shape, Tensor};
pub use video::{Frame, Video};

/// Layers of the texture model when none are given explicitly.
pub const DEFAULT_LAYERS: [&str; 5] = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"];
