//! Motion-to-language: bidirectional GRU encoder over motion frames, stacked
//! GRU decoder over words, softmax vocabulary head.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{active_prefix_len, MotionSequence};
use crate::nn::activations::log_clamped;
use crate::nn::layers::maybe_dropout;
use crate::nn::{BiGruStack, DecoderStack, DecoderState, Dense, Dropout, Embedding, Graph, ParameterSet, Var};
use crate::text::{SentenceRecord, EOS, PAD, SOS};
use crate::train::{PairedData, Trainable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct M2LConfig {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub joints: usize,
    pub max_motion_len: usize,
    pub max_sentence_len: usize,
    pub beam_width: usize,
}

impl M2LConfig {
    /// Reference hyperparameters for a vocabulary of `vocab_size` words.
    pub fn reference(vocab_size: usize) -> Self {
        M2LConfig {
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![128, 128],
            embedding_dim: 64,
            dropout: 0.4,
            vocab_size,
            joints: 44,
            max_motion_len: 300,
            max_sentence_len: 41,
            beam_width: 5,
        }
    }

    pub fn context_dim(&self) -> usize {
        2 * self.encoder_hidden.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.encoder_hidden.iter().chain(&self.decoder_hidden);
        if self.encoder_hidden.is_empty()
            || self.decoder_hidden.is_empty()
            || sizes.into_iter().any(|&h| h == 0)
            || self.embedding_dim == 0
            || self.joints == 0
            || self.max_motion_len == 0
            || self.beam_width == 0
        {
            return Err(Error::Config("m2l sizes must be positive".into()));
        }
        if self.vocab_size <= EOS {
            return Err(Error::Config("vocabulary must include the reserved tokens".into()));
        }
        if self.max_sentence_len < 3 {
            return Err(Error::Config("max sentence length must allow SOS, a word and EOS".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// A decoded word sequence ending in EOS (SOS is implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextHypothesis {
    pub indices: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct M2LModel {
    pub config: M2LConfig,
    params: ParameterSet,
    encoder: BiGruStack,
    embedding: Embedding,
    decoder: DecoderStack,
    head: Dense,
}

impl M2LModel {
    pub fn new(config: M2LConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let encoder = BiGruStack::new(
            &mut params,
            "encoder",
            config.joints + 1,
            &config.encoder_hidden,
            false,
            &mut rng,
        )?;
        let embedding = Embedding::new(&mut params, "embedding", config.vocab_size, config.embedding_dim, &mut rng)?;
        let decoder = DecoderStack::new(
            &mut params,
            "decoder",
            config.context_dim() + config.embedding_dim,
            &config.decoder_hidden,
            false,
            &mut rng,
        )?;
        let head = Dense::new(&mut params, "head", decoder.output_width(), config.vocab_size, &mut rng)?;
        Ok(M2LModel {
            config,
            params,
            encoder,
            embedding,
            decoder,
            head,
        })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_joints(&self, width: usize) -> Result<()> {
        if width != self.config.joints {
            return Err(Error::Shape(format!(
                "motion has {width} joint columns, model expects {}",
                self.config.joints
            )));
        }
        Ok(())
    }

    /// Encodes active (unpadded, flag-less) frame matrices as one batch.
    fn encode_graph(
        &self,
        g: &mut Graph<'_>,
        motions: &[ArrayView2<f64>],
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let j = self.config.joints;
        let lengths: Vec<usize> = motions.iter().map(|m| m.nrows()).collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let batch = motions.len();
        let mut x = Array2::zeros((steps * batch, j + 1));
        for (b, m) in motions.iter().enumerate() {
            self.check_joints(m.ncols())?;
            for (t, frame) in m.outer_iter().enumerate() {
                let mut row = x.row_mut(t * batch + b);
                row.slice_mut(ndarray::s![..j]).assign(&frame);
                row[j] = 1.0;
            }
        }
        let x = g.constant(x);
        Ok(self.encoder.forward(g, x, &lengths, dropout)?.context)
    }

    /// Context vector of a padded `[T × (J+1)]` motion whose last column is
    /// the active flag. Every padded row is fed through the masked encoder.
    pub fn encode_motion(&self, padded: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_joints(padded.ncols().saturating_sub(1))?;
        let len = active_prefix_len(padded)?;
        if len == 0 {
            return Err(Error::Motion("motion has no active frames".into()));
        }
        let mut g = Graph::new(&self.params);
        let x = g.constant(padded.to_owned());
        let out = self.encoder.forward(&mut g, x, &[len], None)?;
        Ok(g.value(out.context).row(0).to_owned())
    }

    /// Contexts `[B × C]` for a batch of prepared sequences.
    pub fn encode_batch(&self, motions: &[&MotionSequence]) -> Result<Array2<f64>> {
        if motions.iter().any(|m| m.active_len() == 0) {
            return Err(Error::Motion("motion has no active frames".into()));
        }
        let views: Vec<ArrayView2<f64>> = motions.iter().map(|m| m.active.view()).collect();
        let mut g = Graph::new(&self.params);
        let ctx = self.encode_graph(&mut g, &views, None)?;
        Ok(g.value(ctx).clone())
    }

    pub fn zero_state(&self, batch: usize) -> DecoderState {
        self.decoder.zero_state(batch)
    }

    /// Next-word distributions `[B × V]` given contexts `[B × C]`, the
    /// previous word of each row and the decoder state.
    pub fn decode_step(
        &self,
        contexts: ArrayView2<f64>,
        prev_words: &[usize],
        state: &DecoderState,
    ) -> Result<(Array2<f64>, DecoderState)> {
        let batch = prev_words.len();
        if contexts.dim() != (batch, self.config.context_dim()) {
            return Err(Error::Shape(format!(
                "contexts {:?} do not match batch {batch} × {}",
                contexts.dim(),
                self.config.context_dim()
            )));
        }
        self.decoder.check_state(state, batch)?;
        let mut g = Graph::new(&self.params);
        let ctx = g.constant(contexts.to_owned());
        let emb = self.embedding.forward(&mut g, Arc::from(prev_words))?;
        let shared = g.concat_cols(&[ctx, emb]);
        let new = self.decoder.step_from(&mut g, shared, state);
        let cat = g.concat_cols(&new);
        let logits = self.head.forward(&mut g, cat);
        let probs = g.softmax(logits);
        let next = DecoderState {
            layers: new.iter().map(|&v| g.value(v).clone()).collect(),
        };
        Ok((g.value(probs).clone(), next))
    }

    /// Sum of step log probabilities of `indices` (SOS implicit).
    pub fn score(&self, context: ArrayView1<f64>, indices: &[usize]) -> Result<f64> {
        let ctx = context.insert_axis(Axis(0));
        let mut state = self.zero_state(1);
        let mut prev = SOS;
        let mut total = 0.0;
        for &w in indices {
            let (probs, next) = self.decode_step(ctx, &[prev], &state)?;
            total += log_clamped(probs[[0, w]]);
            state = next;
            prev = w;
        }
        Ok(total)
    }

    /// Beam search from SOS. At most `max_steps` words are emitted including
    /// the final EOS; at the last allowed step only EOS may be chosen.
    pub fn beam_search(&self, context: ArrayView1<f64>, width: usize, max_steps: usize) -> Result<Vec<TextHypothesis>> {
        if width == 0 || max_steps == 0 {
            return Err(Error::Config("beam width and step limit must be positive".into()));
        }
        let vocab = self.config.vocab_size;
        let mut live: Vec<TextHypothesis> = vec![TextHypothesis {
            indices: Vec::new(),
            log_prob: 0.0,
        }];
        let mut state = self.zero_state(1);
        let mut finished: Vec<TextHypothesis> = Vec::new();
        for step in 0..max_steps {
            let n = live.len();
            let contexts = context.broadcast((n, context.len())).expect("context broadcast");
            let prev: Vec<usize> = live.iter().map(|h| h.indices.last().copied().unwrap_or(SOS)).collect();
            let (probs, next_state) = self.decode_step(contexts, &prev, &state)?;
            let last = step + 1 == max_steps;
            let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(if last { n } else { n * vocab });
            for (i, hyp) in live.iter().enumerate() {
                for w in 0..vocab {
                    if last && w != EOS {
                        continue;
                    }
                    candidates.push((hyp.log_prob + log_clamped(probs[[i, w]]), i, w));
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
            let keep = width - finished.len();
            let mut next_live = Vec::new();
            let mut rows = Vec::new();
            for &(score, i, w) in candidates.iter().take(keep) {
                let mut indices = live[i].indices.clone();
                indices.push(w);
                let hyp = TextHypothesis { indices, log_prob: score };
                if w == EOS {
                    finished.push(hyp);
                } else {
                    next_live.push(hyp);
                    rows.push(i);
                }
            }
            if next_live.is_empty() || finished.len() >= width {
                break;
            }
            state = next_state.select_rows(&rows);
            live = next_live;
        }
        finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        Ok(finished)
    }

    /// Beam search with the configured width and sentence length.
    pub fn describe(&self, motion: &MotionSequence) -> Result<Vec<TextHypothesis>> {
        let ctx = self.encode_batch(&[motion])?;
        self.beam_search(ctx.row(0), self.config.beam_width, self.config.max_sentence_len - 1)
    }
}

impl Trainable for M2LModel {
    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn dropout_rate(&self) -> f64 {
        self.config.dropout
    }

    fn batch_loss(
        &self,
        g: &mut Graph<'_>,
        data: &PairedData,
        batch: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, f64)> {
        let b = batch.len();
        let pairs: Vec<(&MotionSequence, &SentenceRecord)> = batch.iter().map(|&i| data.pair(i)).collect();
        let motions: Vec<ArrayView2<f64>> = pairs.iter().map(|(m, _)| m.active.view()).collect();
        let ctx = self.encode_graph(g, &motions, dropout.as_deref_mut())?;

        let steps = pairs
            .iter()
            .map(|(_, s)| s.active_length.saturating_sub(1))
            .max()
            .unwrap_or(0);
        if steps == 0 {
            return Err(Error::Text("sentence batch has no target words".into()));
        }
        let mut inputs = vec![PAD; steps * b];
        let mut targets = vec![PAD; steps * b];
        let mut weights = vec![0.0; steps * b];
        for (col, (_, s)) in pairs.iter().enumerate() {
            if s.active_length > s.indices.len() {
                return Err(Error::Text("active length exceeds sentence length".into()));
            }
            for t in 0..s.active_length.saturating_sub(1) {
                let row = t * b + col;
                inputs[row] = s.indices[t];
                targets[row] = s.indices[t + 1];
                weights[row] = 1.0;
            }
        }
        let count: f64 = weights.iter().sum();

        let emb = self.embedding.forward(g, Arc::from(inputs))?;
        let ctx_tiled = g.concat_rows(&vec![ctx; steps]);
        let shared = g.concat_cols(&[ctx_tiled, emb]);
        let outs = self.decoder.forward_sequence(g, shared, b, dropout.as_deref_mut());
        let cat = g.concat_cols(&outs);
        let cat = maybe_dropout(&mut dropout, g, cat, steps);
        let logits = self.head.forward(g, cat);
        let loss = g.softmax_nll(logits, Arc::from(targets), Arc::from(weights));
        Ok((loss, count))
    }
}

/// Mean over active steps of `−log p(target)`, with probabilities given per
/// step as rows of `predictions`. Logs are clamped at `1e-12`.
pub fn m2l_loss(predictions: ArrayView2<f64>, targets: &[usize], mask: &[bool]) -> Result<f64> {
    if targets.len() != mask.len() || predictions.nrows() < targets.len() {
        return Err(Error::Shape(format!(
            "{} prediction steps for {} targets and {} mask entries",
            predictions.nrows(),
            targets.len(),
            mask.len()
        )));
    }
    let mut total = 0.0;
    let mut active = 0usize;
    for (t, (&target, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if target >= predictions.ncols() {
            return Err(Error::Text(format!("target index {target} outside vocabulary")));
        }
        total -= log_clamped(predictions[[t, target]]);
        active += 1;
    }
    if active == 0 {
        return Err(Error::Text("loss needs at least one active step".into()));
    }
    Ok(total / active as f64)
}
