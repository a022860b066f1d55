//! Dataset preparation: raw release directory in, model-ready splits out.
//!
//! Output directory layout:
//! `records.jsonl`, `split.json`, `vocab.json`, `standardizer.json`, and per
//! split `motions_<split>.bin` plus `text_<split>.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_records, scan_dataset, split_dataset, write_records, DatasetSplit, MotionRecord, SplitName};
use crate::error::{Error, Result};
use crate::eval::{ChainItem, EvalMotion};
use crate::motion::{
    default_joint_names, downsample_with_offsets, filter_by_duration, pad_and_flag, read_prepared_motions,
    resample_nearest, select_joints, write_prepared_motions, MotionSequence, Standardizer, SOURCE_RATE_HZ,
};
use crate::text::{normalize_sentence, tokenize, PreparedSentence, SpellingTable, Vocabulary};
use crate::train::PairedData;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const INFO_FILE: &str = "prepare.json";

pub fn motions_file(split: SplitName) -> String {
    format!("motions_{split}.bin")
}

pub fn text_file(split: SplitName) -> String {
    format!("text_{split}.jsonl")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareConfig {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub max_seconds: f64,
    pub downsample_factor: usize,
    pub max_motion_len: usize,
    pub max_sentence_len: usize,
    pub joints: Vec<String>,
    pub spelling: SpellingTable,
    /// Build the vocabulary from training annotations only.
    pub vocab_from_train: bool,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            seed: 0,
            ratios: [0.8, 0.1, 0.1],
            max_seconds: 30.0,
            downsample_factor: 10,
            max_motion_len: 300,
            max_sentence_len: 41,
            joints: default_joint_names(),
            spelling: SpellingTable::default(),
            vocab_from_train: false,
        }
    }
}

/// Settings a prepared directory was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedInfo {
    pub joint_names: Vec<String>,
    pub downsample_factor: usize,
    pub frame_rate_hz: f64,
    pub max_motion_len: usize,
    pub max_sentence_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub motions: usize,
    pub annotations: usize,
    pub vocabulary: usize,
    pub sequences: BTreeMap<String, usize>,
}

/// Joint selection, resampling to the source rate and offset downsampling.
/// Empty offsets (motions shorter than the factor) are skipped.
fn offset_sequences(record: &MotionRecord, cfg: &PrepareConfig) -> Result<Vec<(usize, Array2<f64>)>> {
    let selected = select_joints(record, &cfg.joints)?;
    let resampled = resample_nearest(&selected, record.frame_rate_hz, SOURCE_RATE_HZ);
    Ok(downsample_with_offsets(&resampled, cfg.downsample_factor)
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.nrows() > 0)
        .collect())
}

/// Runs the whole preparation and writes every output file into `out`.
pub fn prepare_dataset(root: &Path, out: &Path, cfg: &PrepareConfig) -> Result<PrepareSummary> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let scanned = scan_dataset(root)?;
    let total = scanned.len();
    let records = filter_by_duration(scanned, cfg.max_seconds);
    info!("{} of {total} motions shorter than {} s", records.len(), cfg.max_seconds);
    prepare_records(records, out, cfg)
}

/// Preparation starting from already parsed records.
pub fn prepare_records(records: Vec<MotionRecord>, out: &Path, cfg: &PrepareConfig) -> Result<PrepareSummary> {
    if cfg.downsample_factor == 0 || cfg.max_motion_len == 0 || cfg.max_sentence_len < 2 {
        return Err(Error::Config("downsample factor, motion and sentence lengths must be positive".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let info = PreparedInfo {
        joint_names: cfg.joints.clone(),
        downsample_factor: cfg.downsample_factor,
        frame_rate_hz: SOURCE_RATE_HZ / cfg.downsample_factor as f64,
        max_motion_len: cfg.max_motion_len,
        max_sentence_len: cfg.max_sentence_len,
    };
    let info_path = out.join(INFO_FILE);
    fs::write(&info_path, serde_json::to_string_pretty(&info)? + "\n").map_err(|e| Error::io(&info_path, e))?;

    let mut kept = Vec::new();
    for record in records {
        record.validate()?;
        if record.annotations.is_empty() {
            continue;
        }
        let seqs = offset_sequences(&record, cfg)?;
        let longest = seqs.iter().map(|(_, m)| m.nrows()).max().unwrap_or(0);
        if longest > cfg.max_motion_len {
            warn!("{}: {longest} frames after downsampling exceeds {}, skipped", record.id, cfg.max_motion_len);
            continue;
        }
        kept.push((record, seqs));
    }
    if kept.is_empty() {
        return Err(Error::Config("no annotated motions left after filtering".into()));
    }
    let records: Vec<MotionRecord> = kept.iter().map(|(r, _)| r.clone()).collect();
    write_records(&out.join(RECORDS_FILE), &records)?;

    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let split = split_dataset(&ids, cfg.ratios, cfg.seed)?;
    split.write(&out.join(SPLIT_FILE))?;
    let assignment: BTreeMap<String, SplitName> =
        split.assignment().into_iter().map(|(k, v)| (k.to_owned(), v)).collect();

    // (id, raw text, tokens) for every annotation that fits the padded length.
    let mut sentences = Vec::new();
    for record in &records {
        for text in &record.annotations {
            let tokens = tokenize(&normalize_sentence(text, &cfg.spelling));
            if tokens.len() + 2 > cfg.max_sentence_len {
                warn!("{}: annotation of {} tokens exceeds {}, skipped", record.id, tokens.len(), cfg.max_sentence_len);
                continue;
            }
            sentences.push((record.id.clone(), text.clone(), tokens));
        }
    }
    let vocab = Vocabulary::build(
        sentences
            .iter()
            .filter(|(id, _, _)| !cfg.vocab_from_train || assignment[id] == SplitName::Train)
            .map(|(_, _, t)| t.as_slice()),
    );
    vocab.write(&out.join(VOCAB_FILE))?;

    let train_seqs: Vec<Array2<f64>> = kept
        .iter()
        .filter(|(r, _)| assignment[&r.id] == SplitName::Train)
        .flat_map(|(_, seqs)| seqs.iter().map(|(_, m)| m.clone()))
        .collect();
    let standardizer = Standardizer::fit(&train_seqs)?;
    standardizer.write(&out.join(STANDARDIZER_FILE))?;

    let mut summary = PrepareSummary {
        motions: records.len(),
        annotations: sentences.len(),
        vocabulary: vocab.len(),
        sequences: BTreeMap::new(),
    };
    for split_name in SplitName::ALL {
        let mut seqs = Vec::new();
        for (record, offsets) in &kept {
            if assignment[&record.id] != split_name {
                continue;
            }
            for (offset, m) in offsets {
                let standardized = standardizer.apply(m.view())?;
                seqs.push(pad_and_flag(&standardized, cfg.max_motion_len, record.id.clone(), *offset)?);
            }
        }
        write_prepared_motions(&out.join(motions_file(split_name)), &seqs)?;
        summary.sequences.insert(split_name.to_string(), seqs.len());

        let path = out.join(text_file(split_name));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for (id, text, tokens) in sentences.iter().filter(|(id, _, _)| assignment[id] == split_name) {
            let record = vocab.encode(tokens, cfg.max_sentence_len)?;
            let line = PreparedSentence {
                id: id.clone(),
                text: text.clone(),
                tokens: tokens.clone(),
                indices: record.indices,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    info!(
        "prepared {} motions, {} annotations, vocabulary {}",
        summary.motions, summary.annotations, summary.vocabulary
    );
    Ok(summary)
}

pub fn read_prepared_text(path: &Path) -> Result<Vec<PreparedSentence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// One split of a prepared directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub name: SplitName,
    pub motions: Vec<MotionSequence>,
    pub sentences: Vec<PreparedSentence>,
}

impl PreparedSplit {
    /// Every offset sequence paired with every annotation of its motion.
    pub fn paired(&self) -> PairedData {
        let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.sentences.iter().enumerate() {
            by_id.entry(s.id.as_str()).or_default().push(i);
        }
        let mut pairs = Vec::new();
        for (m, motion) in self.motions.iter().enumerate() {
            for &s in by_id.get(motion.source_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                pairs.push((m, s));
            }
        }
        PairedData {
            motions: self.motions.clone(),
            sentences: self.sentences.iter().map(PreparedSentence::record).collect(),
            pairs,
        }
    }

    fn references(&self) -> BTreeMap<&str, Vec<Vec<String>>> {
        let mut refs: BTreeMap<&str, Vec<Vec<String>>> = BTreeMap::new();
        for s in &self.sentences {
            refs.entry(s.id.as_str()).or_default().push(s.tokens.clone());
        }
        refs
    }

    /// Offset-0 sequence of each motion with all of its annotations as
    /// references. Motions without annotations are skipped.
    pub fn eval_motions(&self) -> Vec<EvalMotion> {
        let refs = self.references();
        let mut out = Vec::new();
        for motion in self.motions.iter().filter(|m| m.offset == 0) {
            match refs.get(motion.source_id.as_str()) {
                Some(r) => out.push(EvalMotion {
                    motion: motion.clone(),
                    references: r.clone(),
                }),
                None => warn!("{}: no annotations, excluded from evaluation", motion.source_id),
            }
        }
        out
    }

    /// One item per annotation; references are all annotations of the same
    /// motion.
    pub fn chain_items(&self) -> Vec<ChainItem> {
        let refs = self.references();
        self.sentences
            .iter()
            .map(|s| ChainItem {
                tokens: s.tokens.clone(),
                references: refs[s.id.as_str()].clone(),
            })
            .collect()
    }
}

/// Handle on a prepared output directory.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub dir: PathBuf,
    pub vocabulary: Vocabulary,
    pub standardizer: Standardizer,
    pub split: DatasetSplit,
    pub info: PreparedInfo,
}

impl PreparedDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(PreparedDataset {
            dir: dir.to_path_buf(),
            vocabulary: Vocabulary::read(&dir.join(VOCAB_FILE))?,
            standardizer: Standardizer::read(&dir.join(STANDARDIZER_FILE))?,
            split: DatasetSplit::read(&dir.join(SPLIT_FILE))?,
            info: {
                let path = dir.join(INFO_FILE);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?
            },
        })
    }

    pub fn load(&self, name: SplitName) -> Result<PreparedSplit> {
        Ok(PreparedSplit {
            name,
            motions: read_prepared_motions(&self.dir.join(motions_file(name)))?,
            sentences: read_prepared_text(&self.dir.join(text_file(name)))?,
        })
    }

    pub fn records(&self) -> Result<Vec<MotionRecord>> {
        read_records(&self.dir.join(RECORDS_FILE))
    }

    pub fn joints(&self) -> usize {
        self.standardizer.num_joints()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn record(id: &str, frames: usize, annotations: &[&str]) -> MotionRecord {
        MotionRecord {
            id: id.into(),
            joint_names: vec!["a".into(), "b".into(), "c".into()],
            frame_rate_hz: 100.0,
            frames: Array2::from_shape_fn((frames, 3), |(t, j)| (t as f64 * 0.01 + j as f64).sin()),
            annotations: annotations.iter().map(|s| s.to_string()).collect(),
            labels: vec![],
        }
    }

    fn cfg() -> PrepareConfig {
        PrepareConfig {
            joints: vec!["c".into(), "a".into()],
            max_motion_len: 12,
            max_sentence_len: 6,
            ..PrepareConfig::default()
        }
    }

    fn records() -> Vec<MotionRecord> {
        vec![
            record("00001", 95, &["A person walks.", "someone walks forward"]),
            record("00002", 40, &["a person waves"]),
            record("00003", 50, &[]),
            record("00004", 200, &["too long motion"]),
            record("00005", 7, &["jump", "this sentence has far too many words"]),
            record("00006", 60, &["turn left"]),
            record("00007", 30, &["kick"]),
            record("00008", 80, &["run fast"]),
            record("00009", 20, &["sit"]),
            record("00010", 25, &["stand up"]),
            record("00011", 25, &["bow"]),
        ]
    }

    #[test]
    fn filters_and_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let summary = prepare_records(records(), dir.path(), &cfg()).unwrap();
        // 00003 has no annotations, 00004 is 20 frames after downsampling.
        assert_eq!(summary.motions, 9);
        // The 7-word annotation does not fit six slots.
        assert_eq!(summary.annotations, 10);
        let data = PreparedDataset::open(dir.path()).unwrap();
        assert_eq!(data.joints(), 2);
        let mut pairs = 0;
        let mut seqs = 0;
        for name in SplitName::ALL {
            let split = data.load(name).unwrap();
            let paired = split.paired();
            paired.validate().unwrap();
            for &(m, s) in &paired.pairs {
                assert_eq!(paired.motions[m].source_id, split.sentences[s].id);
            }
            pairs += paired.len();
            seqs += split.motions.len();
            assert!(split.motions.iter().all(|m| m.padded_len == 12 && m.active_len() <= 10));
            assert_eq!(split.eval_motions().len(), data.split.ids(name).len());
        }
        // 00005 has only offsets 0..7 populated.
        assert_eq!(seqs, 8 * 10 + 7);
        assert_eq!(pairs, 10 * 2 + 10 * 7 + 7);
    }

    #[test]
    fn is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        prepare_records(records(), a.path(), &cfg()).unwrap();
        prepare_records(records(), b.path(), &cfg()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 11);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
        }
    }

    #[test]
    fn missing_dataset_reports_path() {
        let err = prepare_dataset(Path::new("/nonexistent/kit"), Path::new("/tmp/x"), &cfg()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/kit"));
    }
}
