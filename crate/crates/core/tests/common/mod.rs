#![allow(dead_code)]

use std::f64::consts::TAU;

use dyntex::nn::{NetworkDescriptor, PoolMode, Preprocessing};
use dyntex::video::preprocess;
use dyntex::{Frame, Network, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A smooth random pattern drifting by a fixed velocity each frame.
pub fn moving_texture(h: usize, w: usize, frames: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let waves: Vec<([f64; 2], [f64; 3], f64)> = (0..8)
        .map(|_| {
            let k = [rng.random_range(-4..=4) as f64, rng.random_range(-4..=4) as f64];
            let phase = [
                rng.random::<f64>() * TAU,
                rng.random::<f64>() * TAU,
                rng.random::<f64>() * TAU,
            ];
            (k, phase, rng.random_range(10.0..30.0))
        })
        .collect();
    let velocity = [1.5, -1.0];
    (0..frames)
        .map(|t| {
            let mut px = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    let (yy, xx) = (y as f64 - velocity[0] * t as f64, x as f64 - velocity[1] * t as f64);
                    for c in 0..3 {
                        let v: f64 = waves
                            .iter()
                            .map(|(k, ph, a)| a * (TAU * (k[0] * yy / h as f64 + k[1] * xx / w as f64) + ph[c]).sin())
                            .sum();
                        px.push((128.0 + v).clamp(0.0, 255.0).round() as u8);
                    }
                }
            }
            Frame::new(w, h, px).unwrap()
        })
        .collect()
}

pub fn to_input<T: Scalar>(frames: &[Frame], pre: &Preprocessing) -> Vec<Tensor<T>> {
    frames.iter().map(|f| preprocess(f, pre)).collect()
}

/// Five conv blocks `conv1_1` … `conv5_1` with avg pooling in between.
pub fn tiny_net<T: Scalar>(seed: u64) -> Network<T> {
    Network::random(NetworkDescriptor::tiny([8, 16, 16, 32, 32], PoolMode::Avg), seed).unwrap()
}
