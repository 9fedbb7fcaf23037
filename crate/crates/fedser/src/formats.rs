//! On-disk formats: feature records, parameter sets, WAV input and
//! partition plans.
//!
//! A feature record is `u32 frames`, `u32 mel_bins` (little endian) followed
//! by `frames * mel_bins` row-major `f32` values.
//!
//! A parameter file starts with the magic `FSPM`, a `u32` version, the `u64`
//! architecture fingerprint, `u32` class count and `u32` layer count. The
//! layer table follows (`u32` name length, UTF-8 name, `u32` rank, `u32`
//! dims), then every layer's row-major `f32` payload in table order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use fedser_core::data::{Dataset, DeviceShard, PartitionConfig, PartitionPlan};
use fedser_core::features::{AudioClip, FeatureTensor};
use fedser_core::model::{Network, Param, ParamSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PARAM_MAGIC: &[u8; 4] = b"FSPM";
const PARAM_VERSION: u32 = 1;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let b = self.take(n.checked_mul(4)?)?;
        Some(
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

pub fn encode_features(t: &FeatureTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.values.len());
    out.extend_from_slice(&(t.frames as u32).to_le_bytes());
    out.extend_from_slice(&(t.mel_bins as u32).to_le_bytes());
    for v in &t.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Option<FeatureTensor> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let (frames, bins) = (c.u32()? as usize, c.u32()? as usize);
    let values = c.f32s(frames.checked_mul(bins)?)?;
    if c.pos != bytes.len() {
        return None;
    }
    FeatureTensor::new(frames, bins, values).ok()
}

pub fn write_features(path: &Path, t: &FeatureTensor) -> Result<()> {
    fs::write(path, encode_features(t)).map_err(Error::io(path))
}

pub fn read_features(path: &Path) -> Result<FeatureTensor> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_features(&bytes)
        .ok_or_else(|| Error::format(path, "truncated or malformed feature record"))
}

/// One row per frame, one column per mel bin.
pub fn write_features_csv(path: &Path, t: &FeatureTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    for f in 0..t.frames {
        let row: Vec<String> = t.frame(f).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn encode_params(p: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * p.num_scalars());
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.extend_from_slice(&p.fingerprint().to_le_bytes());
    out.extend_from_slice(&(p.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(p.params().len() as u32).to_le_bytes());
    for q in p.params() {
        out.extend_from_slice(&(q.name.len() as u32).to_le_bytes());
        out.extend_from_slice(q.name.as_bytes());
        out.extend_from_slice(&(q.shape.len() as u32).to_le_bytes());
        for &d in &q.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for q in p.params() {
        for v in &q.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<ParamSet<f32>, String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let short = || "truncated parameter file".to_string();
    if c.take(4) != Some(PARAM_MAGIC.as_slice()) {
        return Err("not a parameter file".into());
    }
    let version = c.u32().ok_or_else(short)?;
    if version != PARAM_VERSION {
        return Err(format!("unsupported parameter file version {version}"));
    }
    let fingerprint = c.u64().ok_or_else(short)?;
    let num_classes = c.u32().ok_or_else(short)? as usize;
    let layers = c.u32().ok_or_else(short)? as usize;
    let mut table = Vec::with_capacity(layers.min(1024));
    for _ in 0..layers {
        let len = c.u32().ok_or_else(short)? as usize;
        let name = std::str::from_utf8(c.take(len).ok_or_else(short)?)
            .map_err(|_| "layer name is not UTF-8".to_string())?;
        let rank = c.u32().ok_or_else(short)? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(short)?;
        table.push((name.to_string(), shape));
    }
    let mut params = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(short)?;
        let data = c.f32s(n).ok_or_else(short)?;
        params.push(Param { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err("trailing bytes after parameter payload".into());
    }
    let set = ParamSet::new(params, num_classes).map_err(|e| e.to_string())?;
    if set.fingerprint() != fingerprint {
        return Err(format!(
            "header fingerprint {fingerprint:#018x} does not match layer table {:#018x}",
            set.fingerprint()
        ));
    }
    Ok(set)
}

pub fn write_params(path: &Path, p: &ParamSet<f32>) -> Result<()> {
    fs::write(path, encode_params(p)).map_err(Error::io(path))
}

/// Loads parameters for `net`, refusing files written for another
/// architecture.
pub fn read_params(path: &Path, net: &Network) -> Result<ParamSet<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let p = decode_params(&bytes).map_err(|m| Error::format(path, m))?;
    if p.fingerprint() != net.fingerprint() {
        return Err(fedser_core::Error::Fingerprint {
            expected: net.fingerprint(),
            found: p.fingerprint(),
        }
        .into());
    }
    p.check_finite()?;
    Ok(p)
}

/// Reads a PCM or float WAV file, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let wav = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut r = hound::WavReader::open(path).map_err(wav)?;
    let spec = r.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav)?
        }
    };
    let ch = spec.channels.max(1) as usize;
    let samples = interleaved
        .chunks_exact(ch)
        .map(|c| c.iter().sum::<f32>() / ch as f32)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        speaker_id: String::new(),
        label: None,
    })
}

/// 16-bit mono PCM.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let wav = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav)?;
    for &s in &clip.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32) as i16)
            .map_err(wav)?;
    }
    w.finalize().map_err(wav)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Labeled,
    Unlabeled,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub index: usize,
    pub id: String,
    pub speaker: String,
    pub role: Role,
    pub device: Option<usize>,
}

/// Text form of a [`PartitionPlan`]: one entry per sample saying where it went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub fold: usize,
    pub num_devices: usize,
    pub config: PartitionConfig,
    pub warnings: Vec<String>,
    pub samples: Vec<Assignment>,
}

impl PlanRecord {
    pub fn new(plan: &PartitionPlan, ds: &Dataset) -> Self {
        let mut samples: Vec<Assignment> = Vec::with_capacity(ds.len());
        let mut push = |i: usize, role, device| {
            let u = &ds.samples[i];
            samples.push(Assignment {
                index: i,
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                role,
                device,
            });
        };
        for (k, d) in plan.devices.iter().enumerate() {
            d.labeled
                .iter()
                .for_each(|&i| push(i, Role::Labeled, Some(k)));
            d.unlabeled
                .iter()
                .for_each(|&i| push(i, Role::Unlabeled, Some(k)));
        }
        plan.test.iter().for_each(|&i| push(i, Role::Test, None));
        samples.sort_by_key(|a| a.index);
        Self {
            fold: plan.fold,
            num_devices: plan.num_devices(),
            config: plan.config.clone(),
            warnings: plan.warnings.clone(),
            samples,
        }
    }

    pub fn to_plan(&self) -> std::result::Result<PartitionPlan, String> {
        let mut devices = vec![DeviceShard::default(); self.num_devices];
        let mut test = Vec::new();
        for a in &self.samples {
            match (a.role, a.device) {
                (Role::Test, None) => test.push(a.index),
                (Role::Labeled, Some(k)) if k < self.num_devices => {
                    devices[k].labeled.push(a.index)
                }
                (Role::Unlabeled, Some(k)) if k < self.num_devices => {
                    devices[k].unlabeled.push(a.index)
                }
                _ => return Err(format!("sample {} has an inconsistent role/device", a.id)),
            }
            if let Some(k) = a.device.filter(|&k| k < self.num_devices) {
                if !devices[k].speakers.contains(&a.speaker) {
                    devices[k].speakers.push(a.speaker.clone());
                }
            }
        }
        for d in &mut devices {
            d.labeled.sort_unstable();
            d.unlabeled.sort_unstable();
            d.speakers.sort();
        }
        test.sort_unstable();
        Ok(PartitionPlan {
            fold: self.fold,
            config: self.config.clone(),
            devices,
            test,
            warnings: self.warnings.clone(),
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    w.write_all(b"\n").map_err(Error::io(path))?;
    w.flush().map_err(Error::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path).map_err(Error::io(path))?);
    serde_json::from_reader(r).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(Error::io(path))?;
    Ok(s)
}
