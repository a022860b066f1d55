//! Ingestion of the motion-language dataset release layout.
//!
//! A release directory holds one triple per motion:
//! `<id>_mmm.xml` (joint-space recording), `<id>_annotations.json`
//! (array of free-text descriptions) and `<id>_meta.json` (metadata with
//! optional `motion_annotation.labels`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MOTION_SUFFIX: &str = "_mmm.xml";
const ANNOTATION_SUFFIX: &str = "_annotations.json";
const META_SUFFIX: &str = "_meta.json";

/// One recorded motion with its human descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionRecord {
    pub id: String,
    pub joint_names: Vec<String>,
    pub frame_rate_hz: f64,
    /// `[num_frames × num_joints]`, radians.
    pub frames: Array2<f64>,
    pub annotations: Vec<String>,
    pub labels: Vec<String>,
}

impl MotionRecord {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.num_frames() as f64 / self.frame_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.nrows() == 0 {
            return Err(Error::Motion(format!("record {} has no frames", self.id)));
        }
        if self.frames.ncols() != self.joint_names.len() {
            return Err(Error::Motion(format!(
                "record {} has {} joint names but {} columns",
                self.id,
                self.joint_names.len(),
                self.frames.ncols()
            )));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::Motion(format!(
                "record {} has invalid frame rate {}",
                self.id, self.frame_rate_hz
            )));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Motion(format!(
                "record {} contains non-finite joint values",
                self.id
            )));
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&RecordJson::from(self))?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let json: RecordJson = serde_json::from_str(line)?;
        json.try_into()
    }
}

/// Canonical on-disk form of a [`MotionRecord`].
///
/// Generated motions carry an extra `active` column mask and free-form
/// metadata; readers only keep rows whose mask is 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordJson {
    pub id: String,
    pub frame_rate_hz: f64,
    pub joint_names: Vec<String>,
    pub frames: Vec<Vec<f64>>,
    #[serde(default)]
    pub annotations: Vec<String>,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<Vec<u8>>,
}

impl From<&MotionRecord> for RecordJson {
    fn from(r: &MotionRecord) -> Self {
        RecordJson {
            id: r.id.clone(),
            frame_rate_hz: r.frame_rate_hz,
            joint_names: r.joint_names.clone(),
            frames: r.frames.outer_iter().map(|row| row.to_vec()).collect(),
            annotations: r.annotations.clone(),
            labels: r.labels.clone(),
            active: None,
        }
    }
}

impl TryFrom<RecordJson> for MotionRecord {
    type Error = Error;

    fn try_from(json: RecordJson) -> Result<Self> {
        let cols = json.joint_names.len();
        let rows: Vec<&Vec<f64>> = match &json.active {
            Some(mask) => {
                if mask.len() != json.frames.len() {
                    return Err(Error::Motion(format!(
                        "record {}: active mask has {} entries for {} frames",
                        json.id,
                        mask.len(),
                        json.frames.len()
                    )));
                }
                json.frames
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m == 1)
                    .map(|(f, _)| f)
                    .collect()
            }
            None => json.frames.iter().collect(),
        };
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Motion(format!(
                    "record {}: frame {i} has {} values, expected {cols}",
                    json.id,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        let frames = Array2::from_shape_vec((rows.len(), cols), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let record = MotionRecord {
            id: json.id,
            joint_names: json.joint_names,
            frame_rate_hz: json.frame_rate_hz,
            frames,
            annotations: json.annotations,
            labels: json.labels,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Joint names, frame rate and frames parsed from an MMM motion file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMotion {
    pub joint_names: Vec<String>,
    pub frame_rate_hz: f64,
    pub frames: Array2<f64>,
}

/// Parses an MMM motion document.
///
/// Reads the `JointOrder` of the first `Motion` element that has one, and
/// every `MotionFrame` below it (`Timestep` + `JointPosition`). Unrelated
/// elements are ignored.
pub fn parse_motion_xml(bytes: &[u8]) -> Result<ParsedMotion> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Motion(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Motion(e.to_string()))?;

    let motion = doc
        .descendants()
        .find(|n| {
            n.has_tag_name("Motion") && n.descendants().any(|c| c.has_tag_name("JointOrder"))
        })
        .unwrap_or_else(|| doc.root_element());

    let joint_names: Option<Vec<String>> = motion
        .descendants()
        .find(|n| n.has_tag_name("JointOrder"))
        .map(|order| {
            order
                .children()
                .filter(|c| c.has_tag_name("Joint"))
                .filter_map(|c| c.attribute("name").map(str::to_owned))
                .collect()
        });

    let mut timesteps = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for frame in motion.descendants().filter(|n| n.has_tag_name("MotionFrame")) {
        let step_text = child_text(frame, "Timestep")
            .ok_or_else(|| Error::Motion("MotionFrame without Timestep".into()))?;
        let step: f64 = step_text
            .trim()
            .parse()
            .map_err(|_| Error::Motion(format!("invalid timestep `{}`", step_text.trim())))?;
        let positions = child_text(frame, "JointPosition").unwrap_or("");
        let values = positions
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Motion(format!("invalid joint value `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::Motion(format!(
                    "frame {} has {} joint values, frame 0 has {}",
                    rows.len(),
                    values.len(),
                    first.len()
                )));
            }
        }
        timesteps.push(step);
        rows.push(values);
    }

    if rows.is_empty() {
        return Err(Error::Motion("motion contains no frames".into()));
    }
    let num_joints = rows[0].len();
    let joint_names = match joint_names {
        Some(names) if !names.is_empty() => {
            if names.len() != num_joints {
                return Err(Error::Motion(format!(
                    "JointOrder lists {} joints but frames have {num_joints} values",
                    names.len()
                )));
            }
            names
        }
        _ => (0..num_joints).map(|i| format!("joint_{i}")).collect(),
    };

    let frame_rate_hz = infer_frame_rate(&timesteps)?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let frames = Array2::from_shape_vec((timesteps.len(), num_joints), flat)
        .map_err(|e| Error::Shape(e.to_string()))?;
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::Motion("non-finite joint value".into()));
    }
    Ok(ParsedMotion {
        joint_names,
        frame_rate_hz,
        frames,
    })
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, tag: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name(tag))
        .map(|c| c.text().unwrap_or(""))
}

/// Median of the reciprocal timestep deltas; deltas must be strictly positive.
fn infer_frame_rate(timesteps: &[f64]) -> Result<f64> {
    if timesteps.len() < 2 {
        return Err(Error::Motion(
            "at least two frames are needed to infer the frame rate".into(),
        ));
    }
    let mut rates = Vec::with_capacity(timesteps.len() - 1);
    for (i, pair) in timesteps.windows(2).enumerate() {
        let delta = pair[1] - pair[0];
        if !(delta > 0.0) {
            return Err(Error::Motion(format!(
                "timesteps not strictly increasing at frame {}: {} -> {}",
                i + 1,
                pair[0],
                pair[1]
            )));
        }
        rates.push(1.0 / delta);
    }
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    let median = if rates.len() % 2 == 0 {
        0.5 * (rates[mid - 1] + rates[mid])
    } else {
        rates[mid]
    };
    Ok(median)
}

/// Reads every motion triple in `root`, sorted by id.
///
/// Ids without a motion file are skipped with a warning; missing annotation or
/// metadata files yield empty annotations / labels.
pub fn scan_dataset(root: &Path) -> Result<Vec<MotionRecord>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut motions = BTreeSet::new();
    let mut all_ids = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(MOTION_SUFFIX) {
            motions.insert(id.to_owned());
            all_ids.insert(id.to_owned());
        } else if let Some(id) = name
            .strip_suffix(ANNOTATION_SUFFIX)
            .or_else(|| name.strip_suffix(META_SUFFIX))
        {
            all_ids.insert(id.to_owned());
        }
    }
    for id in all_ids.difference(&motions) {
        log::warn!("skipping {id}: no motion file {id}{MOTION_SUFFIX}");
    }

    let ids: Vec<String> = motions.into_iter().collect();
    ids.par_iter()
        .map(|id| read_record(root, id))
        .collect::<Result<Vec<_>>>()
}

fn read_record(root: &Path, id: &str) -> Result<MotionRecord> {
    let motion_path = root.join(format!("{id}{MOTION_SUFFIX}"));
    let bytes = fs::read(&motion_path).map_err(|e| Error::io(&motion_path, e))?;
    let parsed =
        parse_motion_xml(&bytes).map_err(|e| Error::malformed(&motion_path, e.to_string()))?;

    let annotation_path = root.join(format!("{id}{ANNOTATION_SUFFIX}"));
    let annotations = if annotation_path.exists() {
        let text =
            fs::read_to_string(&annotation_path).map_err(|e| Error::io(&annotation_path, e))?;
        serde_json::from_str::<Vec<String>>(&text)
            .map_err(|e| Error::malformed(&annotation_path, e.to_string()))?
    } else {
        log::warn!("{id}: no annotation file, using no annotations");
        Vec::new()
    };

    let meta_path = root.join(format!("{id}{META_SUFFIX}"));
    let labels = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&meta_path, e.to_string()))?;
        extract_labels(&meta)
    } else {
        Vec::new()
    };

    let record = MotionRecord {
        id: id.to_owned(),
        joint_names: parsed.joint_names,
        frame_rate_hz: parsed.frame_rate_hz,
        frames: parsed.frames,
        annotations,
        labels,
    };
    record
        .validate()
        .map_err(|e| Error::malformed(&motion_path, e.to_string()))?;
    Ok(record)
}

/// Labels are only kept when they form a clean array of strings.
fn extract_labels(meta: &serde_json::Value) -> Vec<String> {
    let Some(labels) = meta
        .get("motion_annotation")
        .and_then(|m| m.get("labels"))
        .and_then(|l| l.as_array())
    else {
        return Vec::new();
    };
    let strings: Option<Vec<String>> = labels
        .iter()
        .map(|v| v.as_str().map(str::to_owned))
        .collect();
    strings.unwrap_or_default()
}

pub fn write_records(path: &Path, records: &[MotionRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        writeln!(out, "{}", record.to_json_line()?).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<MotionRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = MotionRecord::from_json_line(&line)
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// Train / validation / test partition of motion ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl DatasetSplit {
    pub fn ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    /// Maps every id to its partition.
    pub fn assignment(&self) -> BTreeMap<&str, SplitName> {
        SplitName::ALL
            .iter()
            .flat_map(|&s| self.ids(s).iter().map(move |id| (id.as_str(), s)))
            .collect()
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

/// Seeded shuffle of the ids followed by contiguous slicing.
///
/// Validation and test sizes are `floor(n · ratio)`; the remainder goes to
/// train. Each partition is stored sorted.
pub fn split_dataset(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::Config("cannot split an empty id list".into()));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Config("duplicate ids in split input".into()));
    }

    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = order.len() as f64;
    let n_val = (n * ratios[1] + 1e-9).floor() as usize;
    let n_test = (n * ratios[2] + 1e-9).floor() as usize;
    let n_train = order.len() - n_val - n_test;

    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort();
    validation.sort();
    test.sort();
    Ok(DatasetSplit {
        seed,
        ratios,
        train,
        validation,
        test,
    })
}
