//! Language-to-motion: layer-normalized bidirectional GRU encoder over word
//! embeddings, layer-normalized GRU decoder over frames, and a head that
//! predicts a diagonal Gaussian mixture over joints plus a Bernoulli active
//! flag.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Standardizer};
use crate::nn::activations::{log_clamped, log_sum_exp, sigmoid, softmax, softplus};
use crate::nn::layers::maybe_dropout;
use crate::nn::{
    BiGruStack, DecoderStack, DecoderState, Dense, Dropout, Embedding, Graph, MdnLayout, ParameterSet, Var,
    SIGMA_FLOOR,
};
use crate::text::{SentenceRecord, EOS, PAD};
use crate::train::{PairedData, Trainable};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2MConfig {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub joints: usize,
    pub components: usize,
    pub layer_norm: bool,
    pub max_motion_len: usize,
    pub max_sentence_len: usize,
    pub beam_width: usize,
    pub samples_per_hypothesis: usize,
}

impl L2MConfig {
    /// Reference hyperparameters for a vocabulary of `vocab_size` words.
    pub fn reference(vocab_size: usize) -> Self {
        L2MConfig {
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![400, 400, 400],
            embedding_dim: 64,
            dropout: 0.1,
            vocab_size,
            joints: 44,
            components: 20,
            layer_norm: true,
            max_motion_len: 300,
            max_sentence_len: 41,
            beam_width: 5,
            samples_per_hypothesis: 4,
        }
    }

    pub fn context_dim(&self) -> usize {
        2 * self.encoder_hidden.last().copied().unwrap_or(0)
    }

    pub fn layout(&self) -> MdnLayout {
        MdnLayout {
            components: self.components,
            joints: self.joints,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.encoder_hidden.iter().chain(&self.decoder_hidden);
        if self.encoder_hidden.is_empty()
            || self.decoder_hidden.is_empty()
            || sizes.into_iter().any(|&h| h == 0)
            || self.embedding_dim == 0
            || self.joints == 0
            || self.components == 0
            || self.max_motion_len == 0
            || self.max_sentence_len == 0
            || self.beam_width == 0
            || self.samples_per_hypothesis == 0
        {
            return Err(Error::Config("l2m sizes must be positive".into()));
        }
        if self.vocab_size <= EOS {
            return Err(Error::Config("vocabulary must include the reserved tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Activated head output for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnParams {
    pub alphas: Vec<f64>,
    /// `[K × J]` component means.
    pub mus: Array2<f64>,
    /// `[K × J]` component standard deviations.
    pub sigmas: Array2<f64>,
    pub p_active: f64,
}

impl MdnParams {
    /// Softmax weights, linear means, softplus spreads (floored at
    /// [`SIGMA_FLOOR`]) and sigmoid flag probability.
    pub fn from_raw(raw: &[f64], layout: MdnLayout) -> Result<Self> {
        if raw.len() != layout.width() {
            return Err(Error::Shape(format!(
                "head row has {} values, expected {}",
                raw.len(),
                layout.width()
            )));
        }
        let (k, j) = (layout.components, layout.joints);
        let alphas = softmax(&raw[..k]);
        let mus = Array2::from_shape_vec((k, j), raw[layout.mu_offset()..layout.sigma_offset()].to_vec())
            .expect("layout widths");
        let sigmas = Array2::from_shape_vec(
            (k, j),
            raw[layout.sigma_offset()..layout.flag_offset()]
                .iter()
                .map(|&s| softplus(s).max(SIGMA_FLOOR))
                .collect(),
        )
        .expect("layout widths");
        Ok(MdnParams {
            alphas,
            mus,
            sigmas,
            p_active: sigmoid(raw[layout.flag_offset()]),
        })
    }

    pub fn components(&self) -> usize {
        self.alphas.len()
    }

    pub fn joints(&self) -> usize {
        self.mus.ncols()
    }

    /// `Σ_j log N(x_j | μ_kj, σ_kj)` for component `k`.
    pub fn component_log_density(&self, k: usize, joints: &[f64]) -> f64 {
        self.mus
            .row(k)
            .iter()
            .zip(self.sigmas.row(k).iter())
            .zip(joints)
            .map(|((&mu, &sigma), &x)| {
                let sigma = sigma.max(SIGMA_FLOOR);
                let z = (x - mu) / sigma;
                -HALF_LN_2PI - sigma.ln() - 0.5 * z * z
            })
            .sum()
    }

    /// Log of the mixture density of the joint values.
    pub fn continuous_log_density(&self, joints: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|k| self.alphas[k].ln() + self.component_log_density(k, joints))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn flag_log_mass(&self, flag: f64) -> f64 {
        flag * log_clamped(self.p_active) + (1.0 - flag) * log_clamped(1.0 - self.p_active)
    }

    /// `−Σ_k α_k log N_k(x) − log B(flag)`.
    pub fn surrogate(&self, frame: &[f64]) -> f64 {
        let j = self.joints();
        let continuous: f64 = (0..self.components())
            .map(|k| self.alphas[k] * self.component_log_density(k, &frame[..j]))
            .sum();
        -continuous - self.flag_log_mass(frame[j])
    }
}

/// Log-likelihood of a `J + 1` frame (joints then flag).
pub fn mdn_log_likelihood(frame: &[f64], params: &MdnParams) -> Result<f64> {
    let j = params.joints();
    if frame.len() != j + 1 {
        return Err(Error::Shape(format!("frame has {} values, expected {}", frame.len(), j + 1)));
    }
    Ok(params.continuous_log_density(&frame[..j]) + params.flag_log_mass(frame[j]))
}

fn check_steps(steps: &[MdnParams], targets: ArrayView2<f64>, mask: &[bool]) -> Result<()> {
    if steps.len() != targets.nrows() || mask.len() != targets.nrows() {
        return Err(Error::Shape(format!(
            "{} parameter steps, {} targets, {} mask entries",
            steps.len(),
            targets.nrows(),
            mask.len()
        )));
    }
    if let Some(p) = steps.iter().find(|p| p.joints() + 1 != targets.ncols()) {
        return Err(Error::Shape(format!(
            "targets have {} columns, parameters describe {} joints",
            targets.ncols(),
            p.joints()
        )));
    }
    Ok(())
}

fn masked_mean(mask: &[bool], mut term: impl FnMut(usize) -> f64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (t, &m) in mask.iter().enumerate() {
        if m {
            total += term(t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Motion("loss needs at least one active step".into()));
    }
    Ok(total / n as f64)
}

/// Mean over masked steps of the surrogate loss.
pub fn l2m_surrogate_loss(steps: &[MdnParams], targets: ArrayView2<f64>, mask: &[bool]) -> Result<f64> {
    check_steps(steps, targets, mask)?;
    masked_mean(mask, |t| steps[t].surrogate(targets.row(t).as_slice().expect("row")))
}

/// Mean over masked steps of the exact negative log-likelihood.
pub fn l2m_exact_loss(steps: &[MdnParams], targets: ArrayView2<f64>, mask: &[bool]) -> Result<f64> {
    check_steps(steps, targets, mask)?;
    let rows: Vec<Vec<f64>> = targets.outer_iter().map(|r| r.to_vec()).collect();
    let mut err = None;
    let out = masked_mean(mask, |t| match mdn_log_likelihood(&rows[t], &steps[t]) {
        Ok(v) => -v,
        Err(e) => {
            err = Some(e);
            0.0
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Draws a component from the weights, joints from its Gaussian and the
/// flag from the Bernoulli. Standard deviations are used as given.
pub fn sample_frame<R: Rng + ?Sized>(params: &MdnParams, rng: &mut R) -> Vec<f64> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = params.components() - 1;
    for (i, &a) in params.alphas.iter().enumerate() {
        acc += a;
        if u < acc {
            k = i;
            break;
        }
    }
    let mut frame: Vec<f64> = params
        .mus
        .row(k)
        .iter()
        .zip(params.sigmas.row(k).iter())
        .map(|(&mu, &sigma)| {
            let z: f64 = rng.sample(StandardNormal);
            mu + sigma * z
        })
        .collect();
    let flag_draw: f64 = rng.random();
    frame.push(if flag_draw < params.p_active { 1.0 } else { 0.0 });
    frame
}

/// A generated motion in standardized units, including its final flag-0
/// row unless generation stopped at the length limit.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionHypothesis {
    pub frames: Array2<f64>,
    pub log_likelihood: f64,
    pub truncated: bool,
}

impl MotionHypothesis {
    /// Rows whose sampled flag is 1.
    pub fn active_len(&self) -> usize {
        let flag = self.frames.ncols() - 1;
        self.frames.column(flag).iter().take_while(|&&f| f == 1.0).count()
    }

    /// Joint values of the active rows (no flag column).
    pub fn active_joints(&self) -> Array2<f64> {
        let j = self.frames.ncols() - 1;
        self.frames.slice(ndarray::s![..self.active_len(), ..j]).to_owned()
    }

    /// Frames with joints mapped back to the original units.
    pub fn destandardized(&self, standardizer: &Standardizer) -> Result<Array2<f64>> {
        standardizer.invert(self.frames.view())
    }
}

#[derive(Debug, Clone)]
pub struct L2MModel {
    pub config: L2MConfig,
    params: ParameterSet,
    embedding: Embedding,
    encoder: BiGruStack,
    decoder: DecoderStack,
    head: Dense,
}

impl L2MModel {
    pub fn new(config: L2MConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let embedding = Embedding::new(&mut params, "embedding", config.vocab_size, config.embedding_dim, &mut rng)?;
        let encoder = BiGruStack::new(
            &mut params,
            "encoder",
            config.embedding_dim,
            &config.encoder_hidden,
            config.layer_norm,
            &mut rng,
        )?;
        let decoder = DecoderStack::new(
            &mut params,
            "decoder",
            config.context_dim() + config.joints + 1,
            &config.decoder_hidden,
            config.layer_norm,
            &mut rng,
        )?;
        let head = Dense::new(&mut params, "head", decoder.output_width(), config.layout().width(), &mut rng)?;
        Ok(L2MModel {
            config,
            params,
            embedding,
            encoder,
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

    fn encode_graph(
        &self,
        g: &mut Graph<'_>,
        sentences: &[&SentenceRecord],
        steps: usize,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let batch = sentences.len();
        let mut indices = vec![PAD; steps * batch];
        let mut lengths = Vec::with_capacity(batch);
        for (b, s) in sentences.iter().enumerate() {
            if s.active_length == 0 || s.active_length > s.indices.len() {
                return Err(Error::Text("sentence has an invalid active length".into()));
            }
            for (t, &w) in s.indices.iter().take(steps).enumerate() {
                indices[t * batch + b] = w;
            }
            lengths.push(s.active_length.min(steps));
        }
        let x = self.embedding.forward(g, Arc::from(indices))?;
        Ok(self.encoder.forward(g, x, &lengths, dropout)?.context)
    }

    /// Context vector of a sentence. Every index (PAD included) is fed
    /// through the masked encoder.
    pub fn encode_text(&self, sentence: &SentenceRecord) -> Result<Array1<f64>> {
        let mut g = Graph::new(&self.params);
        let ctx = self.encode_graph(&mut g, &[sentence], sentence.indices.len(), None)?;
        Ok(g.value(ctx).row(0).to_owned())
    }

    /// Contexts `[B × C]`, processing only up to the longest active length.
    pub fn encode_batch(&self, sentences: &[&SentenceRecord]) -> Result<Array2<f64>> {
        let steps = sentences.iter().map(|s| s.active_length).max().unwrap_or(0);
        let mut g = Graph::new(&self.params);
        let ctx = self.encode_graph(&mut g, sentences, steps, None)?;
        Ok(g.value(ctx).clone())
    }

    pub fn zero_state(&self, batch: usize) -> DecoderState {
        self.decoder.zero_state(batch)
    }

    /// First decoder input: all ones, flag included.
    pub fn start_frame(&self) -> Vec<f64> {
        vec![1.0; self.config.joints + 1]
    }

    /// Mixture parameters for the next frame of every row.
    pub fn decode_step_mdn(
        &self,
        contexts: ArrayView2<f64>,
        prev_frames: ArrayView2<f64>,
        state: &DecoderState,
    ) -> Result<(Vec<MdnParams>, DecoderState)> {
        let batch = contexts.nrows();
        if contexts.ncols() != self.config.context_dim() || prev_frames.dim() != (batch, self.config.joints + 1) {
            return Err(Error::Shape(format!(
                "contexts {:?} and previous frames {:?} do not match the model",
                contexts.dim(),
                prev_frames.dim()
            )));
        }
        self.decoder.check_state(state, batch)?;
        let mut g = Graph::new(&self.params);
        let ctx = g.constant(contexts.to_owned());
        let prev = g.constant(prev_frames.to_owned());
        let shared = g.concat_cols(&[ctx, prev]);
        let new = self.decoder.step_from(&mut g, shared, state);
        let cat = g.concat_cols(&new);
        let raw = self.head.forward(&mut g, cat);
        let layout = self.config.layout();
        let params = g
            .value(raw)
            .outer_iter()
            .map(|row| MdnParams::from_raw(row.as_slice().expect("row"), layout))
            .collect::<Result<Vec<_>>>()?;
        let next = DecoderState {
            layers: new.iter().map(|&v| g.value(v).clone()).collect(),
        };
        Ok((params, next))
    }

    /// Sampling beam search. Each live hypothesis spawns `samples` frames
    /// scored by their log-likelihood; the best `width` by accumulated score
    /// survive. A hypothesis ends when its sampled flag is 0 or when it
    /// reaches `max_len` frames.
    pub fn beam_search<R: Rng + ?Sized>(
        &self,
        context: ndarray::ArrayView1<f64>,
        width: usize,
        samples: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Vec<MotionHypothesis>> {
        if width == 0 || samples == 0 || max_len == 0 {
            return Err(Error::Config("beam width, samples and length must be positive".into()));
        }
        let cols = self.config.joints + 1;
        struct Live {
            frames: Vec<Vec<f64>>,
            log_likelihood: f64,
        }
        let mut live = vec![Live {
            frames: Vec::new(),
            log_likelihood: 0.0,
        }];
        let mut state = self.zero_state(1);
        let mut finished: Vec<MotionHypothesis> = Vec::new();
        let to_hyp = |frames: Vec<Vec<f64>>, log_likelihood: f64, truncated: bool| MotionHypothesis {
            frames: Array2::from_shape_vec((frames.len(), cols), frames.concat()).expect("frame widths"),
            log_likelihood,
            truncated,
        };
        while !live.is_empty() && finished.len() < width {
            let n = live.len();
            let contexts = context.broadcast((n, context.len())).expect("context broadcast");
            let mut prev = Array2::zeros((n, cols));
            for (i, hyp) in live.iter().enumerate() {
                let last = hyp.frames.last().cloned().unwrap_or_else(|| self.start_frame());
                prev.row_mut(i).assign(&Array1::from(last));
            }
            let (params, next_state) = self.decode_step_mdn(contexts, prev.view(), &state)?;
            let mut candidates = Vec::with_capacity(n * samples);
            for (i, (hyp, p)) in live.iter().zip(&params).enumerate() {
                for _ in 0..samples {
                    let frame = sample_frame(p, rng);
                    let score = hyp.log_likelihood + mdn_log_likelihood(&frame, p)?;
                    candidates.push((score, i, frame));
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
            candidates.truncate(width - finished.len());
            let mut next_live = Vec::new();
            let mut rows = Vec::new();
            for (score, i, frame) in candidates {
                let ended = frame[cols - 1] == 0.0;
                let mut frames = live[i].frames.clone();
                frames.push(frame);
                if ended || frames.len() >= max_len {
                    finished.push(to_hyp(frames, score, !ended));
                } else {
                    next_live.push(Live {
                        frames,
                        log_likelihood: score,
                    });
                    rows.push(i);
                }
            }
            state = next_state.select_rows(&rows);
            live = next_live;
        }
        finished.sort_by(|a, b| b.log_likelihood.total_cmp(&a.log_likelihood));
        Ok(finished)
    }

    /// Beam search with the configured width, samples and length.
    pub fn generate<R: Rng + ?Sized>(&self, sentence: &SentenceRecord, rng: &mut R) -> Result<Vec<MotionHypothesis>> {
        let ctx = self.encode_text(sentence)?;
        self.beam_search(
            ctx.view(),
            self.config.beam_width,
            self.config.samples_per_hypothesis,
            self.config.max_motion_len,
            rng,
        )
    }
}

impl Trainable for L2MModel {
    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn dropout_rate(&self) -> f64 {
        self.config.dropout
    }

    /// Joint terms cover the active frames; the flag term additionally
    /// covers one terminal (flag 0) step when the padded length leaves room.
    /// The loss is averaged over flag-scored steps.
    fn batch_loss(
        &self,
        g: &mut Graph<'_>,
        data: &PairedData,
        batch: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, f64)> {
        let b = batch.len();
        let pairs: Vec<(&MotionSequence, &SentenceRecord)> = batch.iter().map(|&i| data.pair(i)).collect();
        let sentences: Vec<&SentenceRecord> = pairs.iter().map(|(_, s)| *s).collect();
        let text_steps = sentences.iter().map(|s| s.active_length).max().unwrap_or(0);
        let ctx = self.encode_graph(g, &sentences, text_steps, dropout.as_deref_mut())?;

        let j = self.config.joints;
        let scored: Vec<usize> = pairs
            .iter()
            .map(|(m, _)| (m.active_len() + 1).min(m.padded_len.max(m.active_len())))
            .collect();
        let steps = scored.iter().copied().max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::Motion("motion batch has no frames".into()));
        }
        let mut prev = Array2::zeros((steps * b, j + 1));
        let mut targets = Array2::zeros((steps * b, j + 1));
        let mut joint_w = vec![0.0; steps * b];
        let mut flag_w = vec![0.0; steps * b];
        for (col, (m, _)) in pairs.iter().enumerate() {
            if m.num_joints() != j {
                return Err(Error::Shape(format!("motion has {} joints, model expects {j}", m.num_joints())));
            }
            let n = m.active_len();
            prev.row_mut(col).fill(1.0);
            for t in 0..n {
                let frame = m.active.row(t);
                let row = t * b + col;
                targets.row_mut(row).slice_mut(ndarray::s![..j]).assign(&frame);
                targets[[row, j]] = 1.0;
                joint_w[row] = 1.0;
                flag_w[row] = 1.0;
                if t + 1 < steps {
                    let next = (t + 1) * b + col;
                    prev.row_mut(next).slice_mut(ndarray::s![..j]).assign(&frame);
                    prev[[next, j]] = 1.0;
                }
            }
            if scored[col] > n {
                flag_w[n * b + col] = 1.0;
            }
        }
        let count: f64 = flag_w.iter().sum();

        let prev = g.constant(prev);
        let ctx_tiled = g.concat_rows(&vec![ctx; steps]);
        let shared = g.concat_cols(&[ctx_tiled, prev]);
        let outs = self.decoder.forward_sequence(g, shared, b, dropout.as_deref_mut());
        let cat = g.concat_cols(&outs);
        let cat = maybe_dropout(&mut dropout, g, cat, steps);
        let raw = self.head.forward(g, cat);
        let loss = g.mdn_surrogate(
            raw,
            Arc::new(targets),
            Arc::from(joint_w),
            Arc::from(flag_w),
            self.config.layout(),
        );
        Ok((loss, count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(mu: Vec<f64>, sigma: Vec<f64>, p: f64) -> MdnParams {
        let j = mu.len();
        MdnParams {
            alphas: vec![1.0],
            mus: Array2::from_shape_vec((1, j), mu).unwrap(),
            sigmas: Array2::from_shape_vec((1, j), sigma).unwrap(),
            p_active: p,
        }
    }

    #[test]
    fn closed_form_likelihoods() {
        let frame: Vec<f64> = (0..44).map(|i| i as f64 * 0.1).chain([1.0]).collect();
        let p = single(frame[..44].to_vec(), vec![1.0; 44], 1.0);
        let ll = mdn_log_likelihood(&frame, &p).unwrap();
        assert!((ll + 22.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((ll + 40.43330).abs() < 1e-5);
        let half = single(vec![0.0], vec![1.0], 0.5);
        let with_flag = mdn_log_likelihood(&[0.0, 1.0], &half).unwrap();
        let without = half.continuous_log_density(&[0.0]);
        assert!((with_flag - without - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_head_gives_reference_activations() {
        let layout = MdnLayout { components: 4, joints: 3 };
        let p = MdnParams::from_raw(&vec![0.0; layout.width()], layout).unwrap();
        assert!(p.alphas.iter().all(|&a| (a - 0.25).abs() < 1e-15));
        assert!(p.mus.iter().all(|&m| m == 0.0));
        assert!(p.sigmas.iter().all(|&s| (s - std::f64::consts::LN_2).abs() < 1e-15));
        assert_eq!(p.p_active, 0.5);
    }

    #[test]
    fn single_component_surrogate_is_exact() {
        let p = single(vec![0.3, -0.2], vec![0.5, 1.5], 0.8);
        let targets = array![[0.1, 0.4, 1.0], [0.0, 0.0, 0.0]];
        let steps = vec![p.clone(), p];
        let s = l2m_surrogate_loss(&steps, targets.view(), &[true, true]).unwrap();
        let e = l2m_exact_loss(&steps, targets.view(), &[true, true]).unwrap();
        assert!((s - e).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = single(vec![0.7, -1.3], vec![1e-12, 1e-12], 1.0);
        for _ in 0..100 {
            let f = sample_frame(&p, &mut rng);
            assert!((f[0] - 0.7).abs() < 1e-9 && (f[1] + 1.3).abs() < 1e-9);
            assert_eq!(f[2], 1.0);
        }
    }

    #[test]
    fn reference_parameter_count() {
        let model = L2MModel::new(L2MConfig::reference(1344), 0).unwrap();
        assert_eq!(model.num_parameters(), 5_383_781);
    }
}
