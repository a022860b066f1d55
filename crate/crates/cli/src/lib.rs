//! Subcommand implementations behind the `motionlang` binary.

pub mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use motion_language::checkpoint::{Checkpoint, Model, ModelConfig, TrainingState};
use motion_language::contexts::{pca_project, write_context_csv};
use motion_language::dataset::{MotionRecord, SplitName};
use motion_language::eval::{bleu_by_rank, chained_relative_performance, write_rank_csv, BleuReport, Chain, RelativeReport};
use motion_language::l2m::L2MModel;
use motion_language::m2l::M2LModel;
use motion_language::motion::{downsample_with_offsets, resample_nearest, select_joints, MotionSequence, Standardizer, SOURCE_RATE_HZ};
use motion_language::nn::{Nadam, ParameterSet};
use motion_language::prepare::{prepare_dataset, PrepareSummary, PreparedDataset, PreparedSplit};
use motion_language::text::{normalize_sentence, tokenize, SpellingTable, Vocabulary};
use motion_language::train::{derive_seed, read_loss_curve, write_loss_curve, EpochLoss, Trainable, Trainer};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ModelKind, RunConfig};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOSS_CURVE: &str = "loss_curve.csv";

pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    let dataset = cfg.dataset.as_deref().context("no dataset directory (set `dataset`)")?;
    let out = cfg.out_dir()?;
    let summary = prepare_dataset(dataset, out, &cfg.prepare_config()?)?;
    info!(
        "{} motions, {} annotations, vocabulary {} written to {}",
        summary.motions,
        summary.annotations,
        summary.vocabulary,
        out.display()
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub curve: Vec<EpochLoss>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

struct Session<'a> {
    model_config: ModelConfig,
    data: &'a PreparedDataset,
    out: &'a Path,
    trainer: Trainer,
}

impl Session<'_> {
    fn checkpoint(&self, params: &ParameterSet, opt: &Nadam, epochs_completed: usize) -> Checkpoint {
        let tc = self.trainer.config();
        let training = TrainingState {
            epochs_completed,
            seed: tc.seed,
            batch_size: tc.batch_size,
            clip_norm: tc.clip_norm.is_finite().then_some(tc.clip_norm),
            learning_rate: tc.optimizer.learning_rate,
            beta1: tc.optimizer.beta1,
            beta2: tc.optimizer.beta2,
            epsilon: tc.optimizer.epsilon,
            optimizer_steps: opt.steps(),
        };
        let mut ck = Checkpoint::new(
            self.model_config.clone(),
            params,
            Some(opt),
            Some(training),
            &self.data.standardizer,
            &self.data.vocabulary,
            &self.data.info.joint_names,
        );
        ck.manifest.downsample_factor = self.data.info.downsample_factor;
        ck
    }

    fn run<M: Trainable>(&self, model: &mut M, mut opt: Nadam, start: usize, mut curve: Vec<EpochLoss>) -> Result<TrainOutcome> {
        let train = self.data.load(SplitName::Train)?.paired();
        let validation = self.data.load(SplitName::Validation)?.paired();
        info!(
            "{} training pairs, {} validation pairs, {} parameters",
            train.len(),
            validation.len(),
            model.params().num_scalars()
        );
        let final_path = self.out.join(FINAL_CHECKPOINT);
        let best_path = self.out.join(BEST_CHECKPOINT);
        let curve_path = self.out.join(LOSS_CURVE);
        let criterion = |row: &EpochLoss| row.val_loss.unwrap_or(row.train_loss);
        let mut best = curve.iter().map(criterion).fold(f64::INFINITY, f64::min);
        self.trainer.fit(model, &mut opt, &train, Some(&validation), start, |model, opt, row| {
            curve.push(*row);
            let ck = self.checkpoint(model.params(), opt, row.epoch);
            ck.write(&final_path)?;
            if criterion(row) < best || !best_path.exists() {
                best = criterion(row);
                ck.write(&best_path)?;
            }
            write_loss_curve(&curve_path, &curve)
        })?;
        if !curve_path.exists() {
            write_loss_curve(&curve_path, &curve)?;
        }
        Ok(TrainOutcome {
            curve,
            final_checkpoint: final_path,
            best_checkpoint: best_path,
        })
    }
}

/// Trains the configured model kind on a prepared directory, or continues
/// from `resume` with its stored optimizer state and settings.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let kind = cfg.kind()?;
    let data = PreparedDataset::open(cfg.prepared_dir()?)?;
    let out = cfg.out_dir()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut tc = cfg.train_config(kind);

    let (model_config, resumed) = match resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            ensure!(
                ck.kind() == kind.to_string(),
                "checkpoint {} holds a {} model, config asks for {kind}",
                path.display(),
                ck.kind()
            );
            ensure!(
                ck.manifest.vocabulary == data.vocabulary.words(),
                "checkpoint vocabulary differs from the prepared data"
            );
            let state = ck.manifest.training.clone().context("checkpoint has no training state")?;
            tc.seed = state.seed;
            tc.batch_size = state.batch_size;
            tc.clip_norm = state.clip_norm.unwrap_or(f64::INFINITY);
            tc.optimizer = state.nadam_config();
            (ck.manifest.model.clone(), Some((ck, state.epochs_completed)))
        }
        None => {
            let (v, j) = (data.vocabulary.len(), data.joints());
            let model_config = match kind {
                ModelKind::M2l => {
                    let mut c = cfg.m2l_config(v, j);
                    c.max_motion_len = data.info.max_motion_len;
                    c.max_sentence_len = data.info.max_sentence_len;
                    ModelConfig::M2l(c)
                }
                ModelKind::L2m => {
                    let mut c = cfg.l2m_config(v, j);
                    c.max_motion_len = data.info.max_motion_len;
                    c.max_sentence_len = data.info.max_sentence_len;
                    ModelConfig::L2m(c)
                }
            };
            (model_config, None)
        }
    };
    let session = Session {
        model_config: model_config.clone(),
        data: &data,
        out,
        trainer: Trainer::new(tc)?,
    };
    let seed = session.trainer.config().seed;
    let opt_config = session.trainer.config().optimizer;

    let curve_path = out.join(LOSS_CURVE);
    let (start, curve) = match &resumed {
        Some((_, done)) => {
            let earlier = if curve_path.exists() { read_loss_curve(&curve_path)? } else { Vec::new() };
            (*done, earlier.into_iter().filter(|r| r.epoch <= *done).collect())
        }
        None => (0, Vec::new()),
    };
    if start >= session.trainer.config().epochs {
        warn!("checkpoint already completed {start} epochs; nothing to train");
    }

    match (model_config, resumed) {
        (ModelConfig::M2l(c), None) => {
            let mut model = M2LModel::new(c, seed)?;
            let opt = Nadam::new(model.params(), opt_config);
            session.run(&mut model, opt, start, curve)
        }
        (ModelConfig::L2m(c), None) => {
            let mut model = L2MModel::new(c, seed)?;
            let opt = Nadam::new(model.params(), opt_config);
            session.run(&mut model, opt, start, curve)
        }
        (_, Some((ck, _))) => match ck.model()? {
            Model::M2l(mut model) => {
                let opt = ck.optimizer(model.params())?;
                session.run(&mut model, opt, start, curve)
            }
            Model::L2m(mut model) => {
                let opt = ck.optimizer(model.params())?;
                session.run(&mut model, opt, start, curve)
            }
        },
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateOptions {
    pub width: Option<usize>,
    pub samples: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct TextOutput<'a> {
    id: &'a str,
    rank: usize,
    log_prob: f64,
    tokens: Vec<String>,
    text: String,
}

#[derive(Debug, Serialize)]
struct MotionOutput<'a> {
    input: &'a str,
    id: String,
    rank: usize,
    log_likelihood: f64,
    frames: usize,
    truncated: bool,
}

/// Motion-file companion of a generation output: `out.jsonl` →
/// `out.motions.jsonl`.
pub fn motions_path(out: &Path) -> PathBuf {
    out.with_extension("motions.jsonl")
}

/// Raw record → standardized offset-0 model sequence, as during preparation.
pub fn record_to_sequence(
    record: &MotionRecord,
    joint_names: &[String],
    downsample_factor: usize,
    standardizer: &Standardizer,
) -> Result<MotionSequence> {
    let selected = select_joints(record, joint_names)?;
    let resampled = resample_nearest(&selected, record.frame_rate_hz, SOURCE_RATE_HZ);
    let frames = downsample_with_offsets(&resampled, downsample_factor).swap_remove(0);
    ensure!(frames.nrows() > 0, "motion {} has no frames", record.id);
    let active = standardizer.apply(frames.view())?;
    let len = active.nrows();
    Ok(MotionSequence {
        source_id: record.id.clone(),
        offset: 0,
        active,
        padded_len: len,
    })
}

fn looks_like_record(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line).is_ok_and(|v| v.get("frames").is_some())
}

/// Writes ranked hypotheses for every non-empty input line. m2l checkpoints
/// take canonical motion records, l2m checkpoints take plain sentences.
/// Returns the number of inputs.
pub fn cmd_generate(checkpoint: &Path, input: &Path, out: &Path, opts: GenerateOptions) -> Result<usize> {
    let ck = Checkpoint::read(checkpoint)?;
    let vocab = ck.vocabulary()?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    match ck.model()? {
        Model::M2l(model) => {
            let width = opts.width.unwrap_or(model.config.beam_width);
            for (n, line) in &lines {
                let record = MotionRecord::from_json_line(line).with_context(|| {
                    format!("{} line {n}: m2l checkpoints take motion records", input.display())
                })?;
                let seq = record_to_sequence(&record, &ck.manifest.joint_names, ck.manifest.downsample_factor, &ck.manifest.standardizer)?;
                ensure!(
                    seq.active_len() <= model.config.max_motion_len,
                    "motion {} has {} frames, model allows {}",
                    record.id,
                    seq.active_len(),
                    model.config.max_motion_len
                );
                let ctx = model.encode_batch(&[&seq])?;
                let hyps = model.beam_search(ctx.row(0), width, model.config.max_sentence_len - 1)?;
                for (rank, h) in hyps.iter().enumerate() {
                    let tokens = vocab.decode(&h.indices)?;
                    let row = TextOutput {
                        id: &record.id,
                        rank: rank + 1,
                        log_prob: h.log_prob,
                        text: tokens.join(" "),
                        tokens,
                    };
                    serde_json::to_writer(&mut w, &row)?;
                    w.write_all(b"\n")?;
                }
            }
        }
        Model::L2m(model) => {
            let width = opts.width.unwrap_or(model.config.beam_width);
            let samples = opts.samples.unwrap_or(model.config.samples_per_hypothesis);
            let motions_file = motions_path(out);
            let mut mw = BufWriter::new(fs::File::create(&motions_file)?);
            let rate = SOURCE_RATE_HZ / ck.manifest.downsample_factor as f64;
            let spelling = SpellingTable::default();
            for (i, (n, line)) in lines.iter().enumerate() {
                ensure!(!looks_like_record(line), "{} line {n}: l2m checkpoints take sentences, not motion records", input.display());
                let tokens = tokenize(&normalize_sentence(line, &spelling));
                let sentence = vocab
                    .encode(&tokens, model.config.max_sentence_len)
                    .with_context(|| format!("{} line {n}", input.display()))?;
                let ctx = model.encode_text(&sentence)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[i as u64]));
                let hyps = model.beam_search(ctx.view(), width, samples, model.config.max_motion_len, &mut rng)?;
                for (rank, h) in hyps.iter().enumerate() {
                    let id = format!("{n:05}_{}", rank + 1);
                    let row = MotionOutput {
                        input: line,
                        id: id.clone(),
                        rank: rank + 1,
                        log_likelihood: h.log_likelihood,
                        frames: h.active_len(),
                        truncated: h.truncated,
                    };
                    serde_json::to_writer(&mut w, &row)?;
                    w.write_all(b"\n")?;
                    if h.active_len() == 0 {
                        continue;
                    }
                    let record = MotionRecord {
                        id,
                        joint_names: ck.manifest.joint_names.clone(),
                        frame_rate_hz: rate,
                        frames: h.destandardized(&ck.manifest.standardizer)?,
                        annotations: vec![line.to_string()],
                        labels: Vec::new(),
                    };
                    mw.write_all(record.to_json_line()?.as_bytes())?;
                    mw.write_all(b"\n")?;
                }
            }
            mw.flush()?;
        }
    }
    w.flush()?;
    Ok(lines.len())
}

/// Split data re-standardized for a model trained with `target`.
fn restandardize(split: &mut PreparedSplit, source: &Standardizer, target: &Standardizer) -> Result<()> {
    if source == target {
        return Ok(());
    }
    for m in &mut split.motions {
        m.active = target.apply(source.invert(m.active.view())?.view())?;
    }
    Ok(())
}

/// Prepared text is kept as tokens, so a different checkpoint vocabulary
/// only maps unseen words to UNK.
fn check_vocab(ck: &Checkpoint, data: &PreparedDataset) {
    if ck.manifest.vocabulary != data.vocabulary.words() {
        warn!("checkpoint vocabulary differs from the prepared data; unknown words map to UNK");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub bleu: BleuReport,
    pub relative: Option<RelativeReport>,
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub split: SplitName,
    pub width: Option<usize>,
    pub seed: u64,
}

/// BLEU by rank for the m2l checkpoint and, with an l2m checkpoint as well,
/// the chained relative performance against that rank-1 baseline.
pub fn cmd_evaluate(
    m2l_path: &Path,
    l2m_path: Option<&Path>,
    prepared: &Path,
    out: &Path,
    opts: &EvaluateOptions,
) -> Result<EvaluationOutcome> {
    let data = PreparedDataset::open(prepared)?;
    let m2l_ck = Checkpoint::read(m2l_path)?;
    let m2l = m2l_ck.m2l().with_context(|| format!("loading {}", m2l_path.display()))?;
    check_vocab(&m2l_ck, &data);
    let m2l_vocab = m2l_ck.vocabulary()?;
    let width = opts.width.unwrap_or(m2l.config.beam_width);
    let mut split = data.load(opts.split)?;
    restandardize(&mut split, &data.standardizer, &m2l_ck.manifest.standardizer)?;
    fs::create_dir_all(out)?;

    let name = opts.split.as_str();
    let bleu = bleu_by_rank(&m2l, &m2l_vocab, &split.eval_motions(), width, name)?;
    fs::write(out.join(format!("bleu_{name}.json")), serde_json::to_string_pretty(&bleu)? + "\n")?;
    write_rank_csv(&out.join(format!("bleu_{name}.csv")), name, &bleu.scores)?;
    info!("{name} BLEU by rank: {:?}", bleu.scores);

    let relative = match l2m_path {
        None => None,
        Some(path) => {
            let l2m_ck = Checkpoint::read(path)?;
            let l2m = l2m_ck.l2m().with_context(|| format!("loading {}", path.display()))?;
            check_vocab(&l2m_ck, &data);
            let l2m_vocab = l2m_ck.vocabulary()?;
            let chain = Chain {
                l2m: &l2m,
                l2m_vocab: &l2m_vocab,
                l2m_standardizer: &l2m_ck.manifest.standardizer,
                m2l: &m2l,
                m2l_vocab: &m2l_vocab,
                m2l_standardizer: &m2l_ck.manifest.standardizer,
            };
            let report = chained_relative_performance(&chain, &split.chain_items(), bleu.scores[0], width, opts.seed, name)?;
            fs::write(out.join(format!("relative_{name}.json")), serde_json::to_string_pretty(&report)? + "\n")?;
            let mut csv = String::from("rank,split,bleu,relative\n");
            for (r, (b, rel)) in report.bleu.iter().zip(&report.relative).enumerate() {
                csv.push_str(&format!("{},{name},{b},{rel}\n", r + 1));
            }
            fs::write(out.join(format!("relative_{name}.csv")), csv)?;
            info!("{name} relative performance {:.4} ± {:.4}", report.mean, report.std);
            Some(report)
        }
    };
    Ok(EvaluationOutcome { bleu, relative })
}

const CONTEXT_CHUNK: usize = 256;

/// Writes one context row per motion (m2l) or per annotation (l2m) of the
/// split. Returns the number of rows.
pub fn cmd_export_contexts(checkpoint: &Path, prepared: &Path, split: SplitName, with_pca: bool, out: &Path) -> Result<usize> {
    let data = PreparedDataset::open(prepared)?;
    let ck = Checkpoint::read(checkpoint)?;
    check_vocab(&ck, &data);
    let mut s = data.load(split)?;
    let labels: std::collections::BTreeMap<String, String> =
        data.records()?.into_iter().map(|r| (r.id, r.labels.join("|"))).collect();
    let label = |id: &str| labels.get(id).cloned().unwrap_or_default();

    let (keys, blocks): (Vec<(String, String)>, Vec<Array2<f64>>) = match ck.model()? {
        Model::M2l(model) => {
            restandardize(&mut s, &data.standardizer, &ck.manifest.standardizer)?;
            let motions: Vec<&MotionSequence> = s.motions.iter().filter(|m| m.offset == 0).collect();
            let keys = motions.iter().map(|m| (m.source_id.clone(), label(&m.source_id))).collect();
            let blocks = motions
                .chunks(CONTEXT_CHUNK)
                .map(|c| model.encode_batch(c))
                .collect::<motion_language::Result<Vec<_>>>()?;
            (keys, blocks)
        }
        Model::L2m(model) => {
            let vocab: Vocabulary = ck.vocabulary()?;
            let records = s
                .sentences
                .iter()
                .map(|p| vocab.encode(&p.tokens, model.config.max_sentence_len))
                .collect::<motion_language::Result<Vec<_>>>()?;
            let keys = s.sentences.iter().map(|p| (p.id.clone(), label(&p.id))).collect();
            let refs: Vec<_> = records.iter().collect();
            let blocks = refs
                .chunks(CONTEXT_CHUNK)
                .map(|c| model.encode_batch(c))
                .collect::<motion_language::Result<Vec<_>>>()?;
            (keys, blocks)
        }
    };
    if keys.is_empty() {
        bail!("split {split} has no inputs to export");
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let contexts = ndarray::concatenate(Axis(0), &views)?;
    let pca = if with_pca { Some(pca_project(&contexts, 2)?) } else { None };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_context_csv(out, &keys, &contexts, pca.as_ref())?;
    Ok(keys.len())
}
