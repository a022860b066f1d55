//! Model-ready motion representation: duration filtering, joint selection,
//! offset downsampling, per-joint standardization and padding with the binary
//! active flag.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::MotionRecord;
use crate::error::{Error, Result};

/// Joints of the reference kinematic model used as model input, in column order.
pub const DEFAULT_JOINTS: [&str; 44] = [
    "BLNx_joint", "BLNy_joint", "BLNz_joint", "BPx_joint", "BPy_joint", "BPz_joint",
    "BTx_joint", "BTy_joint", "BTz_joint", "BUNx_joint", "BUNy_joint", "BUNz_joint",
    "LAx_joint", "LAy_joint", "LAz_joint", "LEx_joint", "LEz_joint", "LFx_joint",
    "LHx_joint", "LHy_joint", "LHz_joint", "LKx_joint", "LMrot_joint", "LSx_joint",
    "LSy_joint", "LSz_joint", "LWx_joint", "LWy_joint", "RAx_joint", "RAy_joint",
    "RAz_joint", "REx_joint", "REz_joint", "RFx_joint", "RHx_joint", "RHy_joint",
    "RHz_joint", "RKx_joint", "RMrot_joint", "RSx_joint", "RSy_joint", "RSz_joint",
    "RWx_joint", "RWy_joint",
];

pub const SOURCE_RATE_HZ: f64 = 100.0;
pub const STD_FLOOR: f64 = 1e-8;

pub fn default_joint_names() -> Vec<String> {
    DEFAULT_JOINTS.iter().map(|s| s.to_string()).collect()
}

/// Keeps records strictly shorter than `max_seconds`.
pub fn filter_by_duration(records: Vec<MotionRecord>, max_seconds: f64) -> Vec<MotionRecord> {
    records
        .into_iter()
        .filter(|r| r.duration_seconds() < max_seconds)
        .collect()
}

/// Reorders columns to `joint_list`.
pub fn select_joints(record: &MotionRecord, joint_list: &[String]) -> Result<Array2<f64>> {
    let columns = joint_list
        .iter()
        .map(|name| {
            record
                .joint_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::MissingJoint(name.clone()))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(record.frames.select(Axis(1), &columns))
}

/// Nearest-frame resampling; identity when the rates already agree.
pub fn resample_nearest(frames: &Array2<f64>, from_hz: f64, to_hz: f64) -> Array2<f64> {
    if (from_hz - to_hz).abs() <= 1e-6 * to_hz || frames.nrows() <= 1 {
        return frames.clone();
    }
    let n = frames.nrows();
    let duration = (n - 1) as f64 / from_hz;
    let n_out = (duration * to_hz + 1e-9).floor() as usize + 1;
    let rows: Vec<usize> = (0..n_out)
        .map(|k| ((k as f64 * from_hz / to_hz).round() as usize).min(n - 1))
        .collect();
    frames.select(Axis(0), &rows)
}

/// Splits a sequence into `factor` interleaved sub-sequences; sequence `k`
/// holds rows `k, k + factor, k + 2·factor, …`. Offsets with no rows are
/// returned empty.
pub fn downsample_with_offsets(frames: &Array2<f64>, factor: usize) -> Vec<Array2<f64>> {
    assert!(factor >= 1, "downsampling factor must be at least 1");
    (0..factor)
        .map(|k| {
            if k >= frames.nrows() {
                Array2::zeros((0, frames.ncols()))
            } else {
                frames.slice(s![k..;factor, ..]).to_owned()
            }
        })
        .collect()
}

/// Per-joint affine normalization to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(num_joints: usize) -> Self {
        Standardizer {
            mean: vec![0.0; num_joints],
            std: vec![1.0; num_joints],
        }
    }

    pub fn num_joints(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics over every row of `sequences` (all rows are
    /// active frames). Summation runs in input order.
    pub fn fit(sequences: &[Array2<f64>]) -> Result<Self> {
        let num_joints = sequences
            .first()
            .map(|s| s.ncols())
            .ok_or_else(|| Error::Motion("cannot fit a standardizer on no sequences".into()))?;
        if sequences.iter().any(|s| s.ncols() != num_joints) {
            return Err(Error::Shape(
                "sequences disagree on joint count".into(),
            ));
        }
        let count: usize = sequences.iter().map(|s| s.nrows()).sum();
        if count == 0 {
            return Err(Error::Motion(
                "cannot fit a standardizer without active frames".into(),
            ));
        }
        let mut sum = Array1::<f64>::zeros(num_joints);
        for seq in sequences {
            for row in seq.outer_iter() {
                sum += &row;
            }
        }
        let mean = sum / count as f64;
        let mut sq = Array1::<f64>::zeros(num_joints);
        for seq in sequences {
            for row in seq.outer_iter() {
                let d = &row - &mean;
                sq += &(&d * &d);
            }
        }
        let std: Vec<f64> = sq
            .iter()
            .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Standardizer {
            mean: mean.to_vec(),
            std,
        })
    }

    fn check_columns(&self, cols: usize) -> Result<bool> {
        let j = self.num_joints();
        if cols == j {
            Ok(false)
        } else if cols == j + 1 {
            Ok(true)
        } else {
            Err(Error::Shape(format!(
                "standardizer has {j} joints, matrix has {cols} columns"
            )))
        }
    }

    /// `(x − mean) / std` per joint; a trailing flag column is left untouched.
    pub fn apply(&self, seq: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_columns(seq.ncols())?;
        let mut out = seq.to_owned();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().take(self.num_joints()).enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, seq: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_columns(seq.ncols())?;
        let mut out = seq.to_owned();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().take(self.num_joints()).enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// A standardized motion prefix plus the padded length it represents.
///
/// The padded matrix (`padded_len × (J+1)`) is materialized on demand: rows
/// below `active.nrows()` hold joint values with flag 1, the rest are zero
/// with flag 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub source_id: String,
    pub offset: usize,
    pub active: Array2<f64>,
    pub padded_len: usize,
}

impl MotionSequence {
    pub fn num_joints(&self) -> usize {
        self.active.ncols()
    }

    pub fn active_len(&self) -> usize {
        self.active.nrows()
    }

    pub fn padded(&self) -> Array2<f64> {
        let j = self.num_joints();
        let mut out = Array2::zeros((self.padded_len, j + 1));
        out.slice_mut(s![..self.active_len(), ..j]).assign(&self.active);
        out.slice_mut(s![..self.active_len(), j]).fill(1.0);
        out
    }
}

/// Pads `seq` to `target_len` rows and appends the active flag column.
pub fn pad_and_flag(
    seq: &Array2<f64>,
    target_len: usize,
    source_id: impl Into<String>,
    offset: usize,
) -> Result<MotionSequence> {
    if seq.nrows() == 0 {
        return Err(Error::Motion("cannot pad an empty sequence".into()));
    }
    if seq.nrows() > target_len {
        return Err(Error::Motion(format!(
            "sequence of {} frames exceeds padded length {target_len}",
            seq.nrows()
        )));
    }
    Ok(MotionSequence {
        source_id: source_id.into(),
        offset,
        active: seq.clone(),
        padded_len: target_len,
    })
}

/// Number of leading rows whose flag (last column) is 1. Errors if the flags
/// do not form a contiguous prefix or are not binary.
pub fn active_prefix_len(padded: ArrayView2<f64>) -> Result<usize> {
    let flag = padded.ncols().checked_sub(1).ok_or_else(|| {
        Error::Shape("motion matrix needs at least the flag column".into())
    })?;
    let mut len = 0;
    let mut ended = false;
    for (t, &f) in padded.column(flag).iter().enumerate() {
        if f == 1.0 {
            if ended {
                return Err(Error::Motion(format!(
                    "active flag is not a contiguous prefix (reactivates at {t})"
                )));
            }
            len += 1;
        } else if f == 0.0 {
            ended = true;
        } else {
            return Err(Error::Motion(format!("active flag {f} at row {t} is not binary")));
        }
    }
    Ok(len)
}

const PREPARED_MAGIC: &[u8; 4] = b"MLPM";
const PREPARED_VERSION: u32 = 1;

/// Writes prepared sequences: a small header followed by each sequence's id,
/// offset and active rows as little-endian f64. Padding is implicit.
pub fn write_prepared_motions(path: &Path, seqs: &[MotionSequence]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let num_joints = seqs.first().map(|s| s.num_joints()).unwrap_or(0);
    let padded_len = seqs.first().map(|s| s.padded_len).unwrap_or(0);
    let file = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(PREPARED_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(PREPARED_VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(num_joints as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(padded_len as u32).map_err(io)?;
    w.write_u64::<LittleEndian>(seqs.len() as u64).map_err(io)?;
    for seq in seqs {
        if seq.num_joints() != num_joints || seq.padded_len != padded_len {
            return Err(Error::Shape("prepared sequences disagree on shape".into()));
        }
        let id = seq.source_id.as_bytes();
        w.write_u32::<LittleEndian>(id.len() as u32).map_err(io)?;
        w.write_all(id).map_err(io)?;
        w.write_u32::<LittleEndian>(seq.offset as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(seq.active_len() as u32).map_err(io)?;
        for &v in seq.active.iter() {
            w.write_f64::<LittleEndian>(v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_prepared_motions(path: &Path) -> Result<Vec<MotionSequence>> {
    let io = |e| Error::io(path, e);
    let file = fs::File::open(path).map_err(io)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != PREPARED_MAGIC {
        return Err(Error::malformed(path, "not a prepared motion file"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != PREPARED_VERSION {
        return Err(Error::malformed(path, format!("unsupported version {version}")));
    }
    let num_joints = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let padded_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let count = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(io)?;
        let source_id =
            String::from_utf8(id).map_err(|e| Error::malformed(path, e.to_string()))?;
        let offset = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut data = vec![0.0; len * num_joints];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(io)?;
        let active = Array2::from_shape_vec((len, num_joints), data)
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        out.push(MotionSequence {
            source_id,
            offset,
            active,
            padded_len,
        });
    }
    Ok(out)
}
