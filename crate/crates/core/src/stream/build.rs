//! Stream recipe and construction: ID → [CID(s) → OOD] × 4 → CID(5).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt, Corruption};
use super::data::{DatasetKind, SyntheticTask};
use crate::error::{Result, SnapError};
use crate::kv::KvConfig;
use crate::nnet::Tensor;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    Id,
    Cid { severity: u8 },
    Ood,
}

/// Hidden truth of a frame, visible only to the offline labeller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub label: usize,
    #[serde(flatten)]
    pub regime: Regime,
    pub corruption: Option<Corruption>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub x: Tensor,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub seed: u64,
    pub dataset: DatasetKind,
    /// Seed of the task (cluster centres); shared with training.
    pub task_seed: u64,
    pub id_len: usize,
    pub cid_len: usize,
    pub ood_len: usize,
    /// Corruption types rotate every `cycle_period` frames of a CID segment.
    pub cycle_period: usize,
    /// Event window `m`.
    pub window: usize,
}

impl StreamSpec {
    /// 200 / 100 / 20 frames, window 20, cycle 25.
    pub fn desk(dataset: DatasetKind, seed: u64, task_seed: u64) -> Self {
        Self {
            seed,
            dataset,
            task_seed,
            id_len: 200,
            cid_len: 100,
            ood_len: 20,
            cycle_period: 25,
            window: 20,
        }
    }

    /// 2000 / 1000 / 100 frames, window 100, cycle 200.
    pub fn full(dataset: DatasetKind, seed: u64, task_seed: u64) -> Self {
        Self {
            id_len: 2000,
            cid_len: 1000,
            ood_len: 100,
            cycle_period: 200,
            window: 100,
            ..Self::desk(dataset, seed, task_seed)
        }
    }

    pub fn total_len(&self) -> usize {
        self.id_len + 5 * self.cid_len + 4 * self.ood_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.cycle_period == 0 {
            return Err(SnapError::config(
                "window and cycle period must be positive",
            ));
        }
        if self.id_len < self.window || self.cid_len < self.window || self.ood_len < self.window {
            return Err(SnapError::config(
                "every segment must be at least one window long",
            ));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 9] = [
        "seed",
        "dataset",
        "task_seed",
        "id_len",
        "cid_len",
        "ood_len",
        "cycle_period",
        "window",
        "preset",
    ];

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let dataset: DatasetKind = kv.get_or("dataset", DatasetKind::Vectors)?;
        let seed = kv.get_or("seed", 13u64)?;
        let task_seed = kv.get_or("task_seed", seed)?;
        let mut spec = match kv.raw("preset").unwrap_or("desk") {
            "desk" => Self::desk(dataset, seed, task_seed),
            "full" => Self::full(dataset, seed, task_seed),
            other => {
                return Err(SnapError::config(format!(
                    "unknown stream preset `{other}`"
                )))
            }
        };
        spec.id_len = kv.get_or("id_len", spec.id_len)?;
        spec.cid_len = kv.get_or("cid_len", spec.cid_len)?;
        spec.ood_len = kv.get_or("ood_len", spec.ood_len)?;
        spec.cycle_period = kv.get_or("cycle_period", spec.cycle_period)?;
        spec.window = kv.get_or("window", spec.window)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn frames_from(spec: &StreamSpec, task: &SyntheticTask) -> Result<Vec<Frame>> {
    spec.validate()?;
    if task.kind != spec.dataset {
        return Err(SnapError::incompatible(
            "stream recipe and task use different datasets",
        ));
    }
    let mut rng = seeded(spec.seed);
    let mut frames = Vec::with_capacity(spec.total_len());
    for _ in 0..spec.id_len {
        let (x, label) = task.sample_id(&mut rng);
        frames.push(Frame {
            x,
            truth: Truth {
                label,
                regime: Regime::Id,
                corruption: None,
            },
        });
    }
    for severity in 1..=5u8 {
        for i in 0..spec.cid_len {
            let kind = Corruption::ALL[(i / spec.cycle_period) % Corruption::ALL.len()];
            let (clean, label) = task.sample_id(&mut rng);
            frames.push(Frame {
                x: corrupt(&clean, kind, severity, &mut rng)?,
                truth: Truth {
                    label,
                    regime: Regime::Cid { severity },
                    corruption: Some(kind),
                },
            });
        }
        if severity < 5 {
            for _ in 0..spec.ood_len {
                let (x, label) = task.sample_ood(&mut rng);
                frames.push(Frame {
                    x,
                    truth: Truth {
                        label,
                        regime: Regime::Ood,
                        corruption: None,
                    },
                });
            }
        }
    }
    Ok(frames)
}

/// A built stream: the labelled copy for offline scoring and the unlabelled
/// copy a monitor sees, both generated from the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub spec: StreamSpec,
    pub frames: Vec<Frame>,
    pub unlabeled: Vec<Tensor>,
}

impl Stream {
    pub fn truth(&self) -> Vec<Truth> {
        self.frames.iter().map(|f| f.truth).collect()
    }
}

pub fn build_stream(spec: &StreamSpec, task: &SyntheticTask) -> Result<Stream> {
    let frames = frames_from(spec, task)?;
    let unlabeled = frames_from(spec, task)?.into_iter().map(|f| f.x).collect();
    Ok(Stream {
        spec: spec.clone(),
        frames,
        unlabeled,
    })
}

const STREAM_MAGIC: &[u8; 8] = b"SNAPSTR1";

/// Path of the truth sidecar next to a stream file.
pub fn truth_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".truth.jsonl");
    PathBuf::from(p)
}

/// Writes frames as length-prefixed little-endian `f32` records and the
/// truth as a JSON-lines sidecar.
pub fn write_stream(path: &Path, frames: &[Frame]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(STREAM_MAGIC)?;
    w.write_all(&(frames.len() as u64).to_le_bytes())?;
    for f in frames {
        let shape = f.x.shape();
        let len = 4 + 4 * shape.len() + 4 * f.x.len();
        w.write_all(&(len as u32).to_le_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in f.x.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut t = BufWriter::new(fs::File::create(truth_path(path))?);
    for f in frames {
        serde_json::to_writer(&mut t, &f.truth)?;
        t.write_all(b"\n")?;
    }
    t.flush()?;
    Ok(())
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = buf
        .get(*pos..*pos + n)
        .ok_or_else(|| SnapError::format("truncated stream file"))?;
    *pos += n;
    Ok(s)
}

fn u32_at(buf: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(
        take(buf, pos, 4)?.try_into().expect("4 bytes"),
    ))
}

/// Reads the inputs of a stream file.
pub fn read_stream(path: &Path) -> Result<Vec<Tensor>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut pos = 0;
    if take(&buf, &mut pos, 8)? != STREAM_MAGIC {
        return Err(SnapError::format("not a stream file (bad magic)"));
    }
    let n = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().expect("8 bytes")) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = u32_at(&buf, &mut pos)? as usize;
        let end = pos + len;
        let rank = u32_at(&buf, &mut pos)? as usize;
        let shape = (0..rank)
            .map(|_| u32_at(&buf, &mut pos).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = take(&buf, &mut pos, 4 * count)?;
        if pos != end {
            return Err(SnapError::format(
                "stream record length does not match its shape",
            ));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}

pub fn read_truth(path: &Path) -> Result<Vec<Truth>> {
    let text = fs::read_to_string(truth_path(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(SnapError::from))
        .collect()
}
