use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dyntex::DEFAULT_LAYERS;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Noise,
    Frames,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

/// Every setting a command can take. Used both as the flag set and as the
/// shape of the `--config` JSON file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct RunConfig {
    /// Source sequence: a directory holding manifest.json, or the manifest itself.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Statistics file (`.dtxs`, with its `.meta.json` sidecar).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Network descriptor JSON [default: built-in VGG-19, average pooling].
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// DTXW weight container matching the descriptor.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Temporal window length [default: 2].
    #[arg(long)]
    pub dt: Option<usize>,
    /// Comma-separated layer names [default: conv1_1,...,conv5_1].
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<String>>,
    /// Comma-separated per-layer loss weights [default: all 1].
    #[arg(long, value_delimiter = ',')]
    pub layer_weights: Option<Vec<f64>>,
    /// Number of output frames, seed frames included.
    #[arg(long)]
    pub n_frames: Option<usize>,
    /// Noise seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// L-BFGS iterations per frame [default: 500].
    #[arg(long)]
    pub iters: Option<usize>,
    /// How the first frames are obtained [default: noise].
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Sequence whose frames seed the output (Δt − 1 of them).
    #[arg(long)]
    pub seed_frames: Option<PathBuf>,
    /// Output file (analyze) or directory (synthesize, extrapolate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with defaults for any of these settings; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Compute precision [default: f32].
    #[arg(long, value_enum)]
    pub dtype: Option<Dtype>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($field:ident),+) => {
        RunConfig {
            $($field: $flags.$field.or($file.$field),)+
            config: $flags.config,
        }
    };
}

impl RunConfig {
    /// Flags over the `--config` file, if any.
    pub fn resolve(self) -> Result<Self, Failure> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_config(&path)?;
        Ok(overlay!(
            self,
            file,
            frames,
            stats,
            net,
            weights,
            dt,
            layers,
            layer_weights,
            n_frames,
            seed,
            iters,
            init,
            seed_frames,
            out,
            dtype
        ))
    }

    pub fn dt(&self) -> usize {
        self.dt.unwrap_or(2)
    }

    pub fn layers(&self) -> Vec<String> {
        self.layers
            .clone()
            .unwrap_or_else(|| DEFAULT_LAYERS.iter().map(|s| s.to_string()).collect())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn iters(&self) -> usize {
        self.iters.unwrap_or(500)
    }

    pub fn init(&self) -> InitArg {
        self.init.unwrap_or(InitArg::Noise)
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype.unwrap_or(Dtype::F32)
    }

    /// The resolved settings a command runs with, as echoed on stderr.
    pub fn effective(&self, command: &str) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serialises");
        let obj = v.as_object_mut().expect("config is an object");
        obj.insert("command".into(), command.into());
        obj.insert("dt".into(), self.dt().into());
        obj.insert("layers".into(), self.layers().into());
        obj.insert("seed".into(), self.seed().into());
        obj.insert("iters".into(), self.iters().into());
        obj.insert(
            "init".into(),
            serde_json::to_value(self.init()).expect("enum serialises"),
        );
        obj.insert(
            "dtype".into(),
            serde_json::to_value(self.dtype()).expect("enum serialises"),
        );
        if self.net.is_none() {
            obj.insert("net".into(), "builtin:vgg19_avg".into());
        }
        obj.retain(|_, v| !v.is_null());
        v
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
        value
            .as_ref()
            .ok_or_else(|| Failure::usage(format!("--{flag} is required")))
    }
}

fn read_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}
