use std::path::Path;

use dyntex::container::{Container, VERSION};
use dyntex::gram::{load_statistics, save_statistics, sidecar_path, STATS_FORMAT_VERSION};
use dyntex::nn::PoolMode;
use dyntex::synthesis::Progress;
use dyntex::video::{deprocess, preprocess, read_sequence, write_sequence};
use dyntex::{
    compute_statistics, InitMode, LbfgsConfig, Network, NetworkDescriptor, Scalar, SynthesisConfig, Synthesizer, Video,
};

use crate::config::{Dtype, InitArg, RunConfig};
use crate::Failure;

const OUTPUT_PATTERN: &str = "frame";

fn descriptor(cfg: &RunConfig) -> Result<NetworkDescriptor, Failure> {
    match &cfg.net {
        Some(path) => Ok(NetworkDescriptor::read(path)?),
        None => Ok(NetworkDescriptor::vgg19(PoolMode::Avg)),
    }
}

fn network<T: Scalar>(cfg: &RunConfig) -> Result<Network<T>, Failure> {
    let desc = descriptor(cfg)?;
    let path = RunConfig::require(&cfg.weights, "weights")?;
    let weights = Container::read(path).map_err(|e| with_path(path, e))?;
    Ok(Network::from_container(desc, &weights)?)
}

fn with_path(path: &Path, e: dyntex::Error) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

pub fn analyze(cfg: &RunConfig) -> Result<(), Failure> {
    let frames = RunConfig::require(&cfg.frames, "frames")?;
    let out = RunConfig::require(&cfg.out, "out")?;
    let video = read_sequence(frames)?;
    match cfg.dtype() {
        Dtype::F32 => analyze_as::<f32>(cfg, &video, out),
        Dtype::F64 => analyze_as::<f64>(cfg, &video, out),
    }
}

fn analyze_as<T: Scalar>(cfg: &RunConfig, video: &Video, out: &Path) -> Result<(), Failure> {
    let dt = cfg.dt();
    if video.len() < dt {
        return Err(dyntex::Error::TooFewFrames {
            frames: video.len(),
            delta_t: dt,
        }
        .into());
    }
    let net = network::<T>(cfg)?;
    let layers = cfg.layers();
    let names: Vec<&str> = layers.iter().map(String::as_str).collect();
    let pre = &net.descriptor().preprocessing;
    let inputs: Vec<_> = video.frames.iter().map(|f| preprocess::<T>(f, pre)).collect();
    let weights = cfg.layer_weights.clone().unwrap_or_default();
    let stats = compute_statistics(&net, &inputs, &names, dt, &weights)?;
    save_statistics(&stats, out)?;
    println!(
        "{}: Δt = {dt}, {} frames, {} windows",
        out.display(),
        video.len(),
        video.len() - dt + 1
    );
    for (g, w) in stats.grams.iter().zip(&stats.weights) {
        let side = g.values.dims()[0];
        println!("  {:<10} N = {:<4} Gram {side}×{side}  weight {w}", g.layer, g.channels);
    }
    Ok(())
}

pub fn synthesize(cfg: &RunConfig, extrapolate: bool) -> Result<(), Failure> {
    let stats_path = RunConfig::require(&cfg.stats, "stats")?;
    let out = RunConfig::require(&cfg.out, "out")?;
    let n = *RunConfig::require(&cfg.n_frames, "n-frames")?;
    if n == 0 {
        return Err(Failure::usage("--n-frames must be at least 1"));
    }
    let from_frames = extrapolate || cfg.init() == InitArg::Frames;
    if from_frames && cfg.seed_frames.is_none() {
        return Err(Failure::usage("--seed-frames is required to start from example frames"));
    }
    if !from_frames && cfg.seed_frames.is_some() {
        return Err(Failure::usage("--seed-frames needs --init frames"));
    }
    let mut stats = load_statistics(stats_path).map_err(|e| with_path(stats_path, e))?;
    if let Some(weights) = &cfg.layer_weights {
        stats = stats.with_weights(weights.clone())?;
    }
    let seeds = cfg.seed_frames.as_ref().map(read_sequence).transpose()?;
    match cfg.dtype() {
        Dtype::F32 => synthesize_as::<f32>(cfg, stats, seeds, n, out),
        Dtype::F64 => synthesize_as::<f64>(cfg, stats.cast(), seeds, n, out),
    }
}

fn synthesize_as<T: Scalar>(
    cfg: &RunConfig,
    stats: dyntex::TextureStatistics<T>,
    seeds: Option<Video>,
    n: usize,
    out: &Path,
) -> Result<(), Failure> {
    let net = network::<T>(cfg)?;
    let pre = net.descriptor().preprocessing.clone();
    let init = match seeds {
        Some(video) => {
            if video.len() + 1 != stats.delta_t {
                return Err(Failure::shape(format!(
                    "Δt = {} needs {} seed frames, got {}",
                    stats.delta_t,
                    stats.delta_t - 1,
                    video.len()
                )));
            }
            InitMode::FromExample(video.frames.iter().map(|f| preprocess(f, &pre)).collect())
        }
        None => InitMode::NoiseJoint,
    };
    let synth_cfg = SynthesisConfig {
        n_frames: n,
        init,
        seed: cfg.seed(),
        lbfgs: LbfgsConfig {
            max_iters: cfg.iters(),
            ..Default::default()
        },
        ..Default::default()
    };
    let synth = Synthesizer::new(&net, &stats, synth_cfg)?;
    let result = synth.generate_with(|p| match p {
        Progress::Joint { frames, trace } => log::info!(
            "frames 0..{frames}: loss {:.4e} → {:.4e} in {} iterations ({})",
            trace.initial.loss,
            trace.final_loss(),
            trace.steps.len(),
            trace.termination.as_str()
        ),
        Progress::Frame { index, trace } => log::info!(
            "frame {index}: loss {:.4e} → {:.4e} in {} iterations ({})",
            trace.initial.loss,
            trace.final_loss(),
            trace.steps.len(),
            trace.termination.as_str()
        ),
        Progress::Copied { index } => log::info!("frame {index}: seed"),
    })?;

    let frames = result
        .frames
        .iter()
        .map(|x| deprocess(x, &pre))
        .collect::<dyntex::Result<Vec<_>>>()?;
    let manifest = write_sequence(&Video::new(frames)?, out, OUTPUT_PATTERN, 25.0)?;
    for i in 0..n {
        if let Some(trace) = result.trace_of(i) {
            let path = out.join(format!("{OUTPUT_PATTERN}_{i:05}.csv"));
            std::fs::write(&path, trace.to_csv()).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        }
    }
    println!(
        "{}: {} frames ({})",
        out.display(),
        manifest.count,
        manifest.frame_file(0)
    );
    Ok(())
}

pub fn info(path: &Path) -> Result<(), Failure> {
    if !path.exists() {
        return Err(Failure::io(format!("{}: no such file", path.display())));
    }
    if sidecar_path(path).exists() {
        let stats = load_statistics(path).map_err(|e| with_path(path, e))?;
        println!("statistics {} (format {STATS_FORMAT_VERSION})", path.display());
        println!("Δt = {}", stats.delta_t);
        let src = &stats.source;
        println!(
            "source: {} frames of {}×{}",
            src.frame_count, src.frame_width, src.frame_height
        );
        for (g, w) in stats.grams.iter().zip(&stats.weights) {
            println!(
                "  {:<10} N = {:<4} Gram side Δt·N = {:<5} weight {w}",
                g.layer,
                g.channels,
                stats.delta_t * g.channels
            );
        }
    } else {
        let c = Container::read(path).map_err(|e| with_path(path, e))?;
        println!(
            "weights {} (DTXW version {VERSION}, {} tensors)",
            path.display(),
            c.len()
        );
        for (name, t) in c.entries() {
            println!("  {name:<20} {:?}", t.dims());
        }
    }
    Ok(())
}
