//! Mini-batch training by back-propagation through time, shared by both
//! models.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::nn::{clip_gradients, Dropout, Gradients, Graph, Nadam, NadamConfig, ParameterSet, Var};
use crate::text::SentenceRecord;

/// Motions and sentences plus the (motion, sentence) index pairs that form
/// the training examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedData {
    pub motions: Vec<MotionSequence>,
    pub sentences: Vec<SentenceRecord>,
    pub pairs: Vec<(usize, usize)>,
}

impl PairedData {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, index: usize) -> (&MotionSequence, &SentenceRecord) {
        let (m, s) = self.pairs[index];
        (&self.motions[m], &self.sentences[s])
    }

    pub fn validate(&self) -> Result<()> {
        for &(m, s) in &self.pairs {
            if m >= self.motions.len() || s >= self.sentences.len() {
                return Err(Error::Config(format!("pair ({m}, {s}) refers past the data")));
            }
        }
        Ok(())
    }
}

/// A model whose loss can be evaluated on a batch of [`PairedData`] pairs.
pub trait Trainable: Sync {
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;
    fn dropout_rate(&self) -> f64;

    /// Summed loss over the batch and the number of terms it is averaged over.
    fn batch_loss(
        &self,
        g: &mut Graph<'_>,
        data: &PairedData,
        batch: &[usize],
        dropout: Option<&mut Dropout>,
    ) -> Result<(Var, f64)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: NadamConfig,
    pub clip_norm: f64,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic child seed for a stream identified by `parts`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

struct ChunkResult {
    loss: f64,
    count: f64,
    grads: Option<Gradients>,
}

pub struct Trainer {
    config: TrainConfig,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if config.clip_norm <= 0.0 || config.clip_norm.is_nan() {
            return Err(Error::Config("clip norm must be positive (inf disables)".into()));
        }
        let threads = config.threads.max(1);
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Trainer { config, pool })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn run_chunk<M: Trainable>(
        model: &M,
        data: &PairedData,
        chunk: &[usize],
        dropout_seeds: Option<&[u64]>,
        backward: bool,
    ) -> Result<ChunkResult> {
        let mut g = Graph::new(model.params());
        let mut dropout = match dropout_seeds {
            Some(seeds) if model.dropout_rate() > 0.0 => Some(Dropout::new(model.dropout_rate(), seeds)?),
            _ => None,
        };
        let (loss, count) = model.batch_loss(&mut g, data, chunk, dropout.as_mut())?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            let tensor = g
                .first_non_finite()
                .unwrap_or_else(|| "loss".to_owned());
            return Err(Error::NonFinite { tensor });
        }
        let grads = backward.then(|| g.backward(loss));
        Ok(ChunkResult {
            loss: value,
            count,
            grads,
        })
    }

    /// Loss sum, term count and (optionally) summed gradients for one batch,
    /// reduced in chunk order.
    fn batch<M: Trainable>(
        &self,
        model: &M,
        data: &PairedData,
        batch: &[usize],
        dropout_seeds: Option<&[u64]>,
        backward: bool,
    ) -> Result<(f64, f64, Option<Gradients>)> {
        let threads = self.config.threads.max(1);
        let chunk_len = batch.len().div_ceil(threads).max(1);
        let work = |(i, chunk): (usize, &[usize])| {
            let seeds = dropout_seeds.map(|s| &s[i * chunk_len..i * chunk_len + chunk.len()]);
            Self::run_chunk(model, data, chunk, seeds, backward)
        };
        let results: Vec<Result<ChunkResult>> = match &self.pool {
            Some(pool) if batch.len() > chunk_len => pool.install(|| {
                batch
                    .par_chunks(chunk_len)
                    .enumerate()
                    .map(work)
                    .collect()
            }),
            _ => batch.chunks(chunk_len).enumerate().map(work).collect(),
        };
        let mut loss = 0.0;
        let mut count = 0.0;
        let mut grads: Option<Gradients> = None;
        for r in results {
            let r = r?;
            loss += r.loss;
            count += r.count;
            match (&mut grads, r.grads) {
                (Some(acc), Some(g)) => acc.add_assign(&g),
                (slot @ None, Some(g)) => *slot = Some(g),
                _ => {}
            }
        }
        Ok((loss, count, grads))
    }

    /// One pass over `data` in a seeded order; returns the mean training loss.
    pub fn train_epoch<M: Trainable>(
        &self,
        model: &mut M,
        optimizer: &mut Nadam,
        data: &PairedData,
        epoch: usize,
    ) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("no training pairs".into()));
        }
        let seed = self.config.seed;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.shuffle(&mut rng);

        let mut total = 0.0;
        let mut terms = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let seeds: Vec<u64> = batch
                .iter()
                .map(|&p| derive_seed(seed, &[DROPOUT_STREAM, epoch as u64, p as u64]))
                .collect();
            let (loss, count, grads) = self
                .batch(model, data, batch, Some(&seeds), true)
                .map_err(|e| annotate(e, epoch, b))?;
            if count <= 0.0 {
                continue;
            }
            let mut grads = grads.expect("gradients requested");
            grads.scale(1.0 / count);
            if let Some(tensor) = grads.first_non_finite(model.params()) {
                return Err(annotate(Error::NonFinite { tensor }, epoch, b));
            }
            clip_gradients(&mut grads, self.config.clip_norm);
            optimizer.step(model.params_mut(), &grads);
            if let Some(name) = model.params().first_non_finite() {
                return Err(annotate(
                    Error::NonFinite {
                        tensor: format!("parameter `{name}` after update"),
                    },
                    epoch,
                    b,
                ));
            }
            total += loss;
            terms += count;
        }
        Ok(total / terms)
    }

    /// Mean loss over `data` with dropout disabled.
    pub fn evaluate<M: Trainable>(&self, model: &M, data: &PairedData) -> Result<f64> {
        let mut total = 0.0;
        let mut terms = 0.0;
        let order: Vec<usize> = (0..data.len()).collect();
        for batch in order.chunks(self.config.batch_size) {
            let (loss, count, _) = self.batch(model, data, batch, None, false)?;
            total += loss;
            terms += count;
        }
        if terms == 0.0 {
            return Err(Error::Config("no evaluation pairs".into()));
        }
        Ok(total / terms)
    }

    /// Trains epochs `start_epoch + 1 ..= config.epochs`, calling `on_epoch`
    /// after each one.
    pub fn fit<M, F>(
        &self,
        model: &mut M,
        optimizer: &mut Nadam,
        train: &PairedData,
        validation: Option<&PairedData>,
        start_epoch: usize,
        mut on_epoch: F,
    ) -> Result<Vec<EpochLoss>>
    where
        M: Trainable,
        F: FnMut(&M, &Nadam, &EpochLoss) -> Result<()>,
    {
        train.validate()?;
        let mut curve = Vec::new();
        for epoch in start_epoch + 1..=self.config.epochs {
            let train_loss = self.train_epoch(model, optimizer, train, epoch)?;
            let val_loss = match validation {
                Some(v) if !v.is_empty() => Some(self.evaluate(model, v)?),
                _ => None,
            };
            let row = EpochLoss {
                epoch,
                train_loss,
                val_loss,
            };
            log::info!(
                "epoch {epoch}: train {train_loss:.6}{}",
                val_loss.map(|v| format!(", validation {v:.6}")).unwrap_or_default()
            );
            on_epoch(model, optimizer, &row)?;
            curve.push(row);
        }
        Ok(curve)
    }
}

fn annotate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite { tensor } => Error::NonFinite {
            tensor: format!("{tensor} (epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

/// Writes `epoch,train_loss,val_loss` rows (empty validation cell if absent).
pub fn write_loss_curve(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for row in curve {
        out.push_str(&format!(
            "{},{},{}\n",
            row.epoch,
            row.train_loss,
            row.val_loss.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<EpochLoss>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::malformed(path, format!("bad loss curve row at line {line}"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 {
                return Err(bad(i + 1));
            }
            Ok(EpochLoss {
                epoch: cells[0].parse().map_err(|_| bad(i + 1))?,
                train_loss: cells[1].parse().map_err(|_| bad(i + 1))?,
                val_loss: if cells[2].is_empty() {
                    None
                } else {
                    Some(cells[2].parse().map_err(|_| bad(i + 1))?)
                },
            })
        })
        .collect()
}
