//! Frame sequences on disk and conversion to network input space.
//!
//! Frames are stored as binary P6 PPM files with maxval 255, named
//! `<pattern>_00000.ppm`, `<pattern>_00001.ppm`, … next to a `manifest.json`
//! holding `{pattern, count, fps}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::{ChannelOrder, Preprocessing};
use crate::{Error, Result, Scalar, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";

/// An 8-bit RGB frame, row-major `[H, W, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape {
                dims: vec![height, width, 3],
                reason: "frame dimensions must be positive",
            });
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::shape("Frame::new", &[height, width, 3], &[pixels.len()]));
        }
        Ok(Frame { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// The centred `height × width` window.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Frame> {
        if height == 0 || width == 0 || height > self.height || width > self.width {
            return Err(Error::InvalidShape {
                dims: vec![height, width, 3],
                reason: "crop must be non-empty and fit inside the frame",
            });
        }
        let (y0, x0) = ((self.height - height) / 2, (self.width - width) / 2);
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + width * 3]);
        }
        Frame::new(width, height, pixels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Video {
    pub frames: Vec<Frame>,
}

impl Video {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let video = Video { frames };
        video.dims()?;
        Ok(video)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` shared by all frames.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::Inconsistent("video has no frames".into()))?;
        if let Some((i, f)) = self
            .frames
            .iter()
            .enumerate()
            .find(|(_, f)| (f.height, f.width) != (first.height, first.width))
        {
            return Err(Error::Inconsistent(format!(
                "frame {i} is {}×{} but frame 0 is {}×{}",
                f.height, f.width, first.height, first.width
            )));
        }
        Ok((first.height, first.width))
    }
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let malformed = |reason: &str| Error::Malformed {
        what: "PPM",
        reason: reason.into(),
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(malformed("bad magic"));
    }
    match bytes[1] {
        b'6' => {}
        b'1'..=b'5' | b'7' => {
            return Err(Error::UnsupportedFormat(format!(
                "P{} image; only binary P6 is supported",
                bytes[1] as char
            )))
        }
        _ => return Err(malformed("bad magic")),
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated or non-numeric header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PPM maxval {maxval}; only 255 is supported"
        )));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| malformed("dimensions overflow"))?;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(malformed(&format!("truncated payload: {} of {need} bytes", data.len())));
    }
    Frame::new(width, height, data[..need].to_vec())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::Frame {
        context: format!("{}: {e}", path.display()),
        source: Box::new(e),
    })
}

pub fn write_ppm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(frame)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub pattern: String,
    pub count: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_color_space")]
    pub color_space: String,
}

fn default_fps() -> f64 {
    25.0
}

fn default_color_space() -> String {
    "srgb".into()
}

impl SequenceManifest {
    pub fn new(pattern: impl Into<String>, count: usize) -> Self {
        SequenceManifest {
            pattern: pattern.into(),
            count,
            fps: default_fps(),
            color_space: default_color_space(),
        }
    }

    pub fn frame_file(&self, index: usize) -> String {
        format!("{}_{index:05}.ppm", self.pattern)
    }
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<(SequenceManifest, PathBuf)> {
    let path = path.as_ref();
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let manifest: SequenceManifest = serde_json::from_str(&text)?;
    if manifest.count == 0 {
        return Err(Error::Malformed {
            what: "manifest",
            reason: "count must be at least 1".into(),
        });
    }
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, dir))
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<Video> {
    let (manifest, dir) = read_manifest(path)?;
    let mut frames = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let file = dir.join(manifest.frame_file(i));
        if !file.is_file() {
            return Err(Error::MissingFrame { index: i, path: file });
        }
        frames.push(read_ppm(&file)?);
    }
    Video::new(frames)
}

/// Writes every frame and `manifest.json` into `dir`, creating it if needed.
pub fn write_sequence(video: &Video, dir: impl AsRef<Path>, pattern: &str, fps: f64) -> Result<SequenceManifest> {
    let dir = dir.as_ref();
    video.dims()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = SequenceManifest {
        fps,
        ..SequenceManifest::new(pattern, video.len())
    };
    for (i, f) in video.frames.iter().enumerate() {
        write_ppm(f, dir.join(manifest.frame_file(i)))?;
    }
    let file = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&file, json + "\n").map_err(|e| Error::io(&file, e))?;
    Ok(manifest)
}

fn channel_map(order: ChannelOrder) -> [usize; 3] {
    match order {
        ChannelOrder::RGB => [0, 1, 2],
        ChannelOrder::BGR => [2, 1, 0],
    }
}

/// RGB bytes to `[H, W, 3]` network input: channels reordered, means subtracted.
pub fn preprocess<T: Scalar>(frame: &Frame, pre: &Preprocessing) -> Tensor<T> {
    let map = channel_map(pre.channel_order);
    let data = frame
        .pixels
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| T::from_f64(px[map[c]] as f64 - pre.channel_means[c])))
        .collect();
    Tensor::from_vec(&[frame.height, frame.width, 3], data).expect("frame dims are valid")
}

/// Inverse of [`preprocess`], clamped to `[0, 255]` and rounded half to even.
pub fn deprocess<T: Scalar>(x: &Tensor<T>, pre: &Preprocessing) -> Result<Frame> {
    let &[h, w, 3] = x.dims() else {
        return Err(Error::shape("deprocess", &[0, 0, 3], x.dims()));
    };
    let map = channel_map(pre.channel_order);
    let mut pixels = vec![0u8; h * w * 3];
    for (out, px) in pixels.chunks_exact_mut(3).zip(x.as_slice().chunks_exact(3)) {
        for c in 0..3 {
            let v = px[c].as_f64() + pre.channel_means[c];
            // NaN clamps to 0.
            out[map[c]] = if v >= 0.0 {
                v.min(255.0).round_ties_even() as u8
            } else {
                0
            };
        }
    }
    Frame::new(w, h, pixels)
}

/// Elementwise `[0, 255]` pixel range expressed in input space.
pub fn input_bounds<T: Scalar>(h: usize, w: usize, pre: &Preprocessing) -> Result<(Tensor<T>, Tensor<T>)> {
    let lo: Vec<T> = (0..h * w * 3).map(|i| T::from_f64(-pre.channel_means[i % 3])).collect();
    let hi: Vec<T> = (0..h * w * 3)
        .map(|i| T::from_f64(255.0 - pre.channel_means[i % 3]))
        .collect();
    Ok((Tensor::from_vec(&[h, w, 3], lo)?, Tensor::from_vec(&[h, w, 3], hi)?))
}
