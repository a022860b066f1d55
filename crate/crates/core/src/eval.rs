//! Corpus BLEU, BLEU by hypothesis rank, and chained
//! language → motion → language scoring.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l2m::L2MModel;
use crate::m2l::M2LModel;
use crate::motion::{MotionSequence, Standardizer};
use crate::text::{SentenceRecord, Vocabulary};
use crate::train::derive_seed;

pub const SMOOTHING_ID: &str = "add1-on-zero";
pub const BLEU_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to `hyp_len`, preferring the shorter on ties.
fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(hyp_len), l))
        .unwrap_or(0)
}

/// Corpus-level BLEU with uniform weights over n = 1..max_n.
///
/// Clipped n-gram matches and candidate n-gram totals are summed over the
/// corpus before dividing. For n ≥ 2 a zero match count is smoothed to
/// `(0 + 1) / (total + 1)`. The brevity penalty compares the total
/// hypothesis length with the summed closest reference lengths.
pub fn corpus_bleu(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>], max_n: usize) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Evaluation("empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Evaluation(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Evaluation("n-gram order must be positive".into()));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::Evaluation("every hypothesis needs at least one reference".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, refs) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += closest_ref_len(hyp.len(), refs);
        for n in 1..=max_n {
            let counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (gram, c) in ngram_counts(r, n) {
                    let entry = max_ref.entry(gram).or_insert(0);
                    *entry = (*entry).max(c);
                }
            }
            for (gram, c) in &counts {
                matches[n - 1] += (*c).min(max_ref.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln() / max_n as f64;
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_sum.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub split: String,
    pub ngram_order: usize,
    pub smoothing: String,
    pub items: usize,
    /// Corpus BLEU for ranks 1..W.
    pub scores: Vec<f64>,
}

/// A motion with every tokenized annotation of its source recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMotion {
    pub motion: MotionSequence,
    pub references: Vec<Vec<String>>,
}

/// Decoded hypotheses for one motion, best first; missing ranks are empty.
pub fn describe_ranked(model: &M2LModel, vocab: &Vocabulary, motion: &MotionSequence, width: usize) -> Result<Vec<Vec<String>>> {
    let ctx = model.encode_batch(&[motion])?;
    let hyps = model.beam_search(ctx.row(0), width, model.config.max_sentence_len - 1)?;
    let mut out = hyps
        .iter()
        .map(|h| vocab.decode(&h.indices))
        .collect::<Result<Vec<_>>>()?;
    out.resize(width, Vec::new());
    Ok(out)
}

fn per_rank_bleu(ranked: &[Vec<Vec<String>>], references: &[Vec<Vec<String>>], width: usize) -> Result<Vec<f64>> {
    (0..width)
        .map(|r| {
            let hyps: Vec<Vec<String>> = ranked.iter().map(|h| h[r].clone()).collect();
            corpus_bleu(&hyps, references, BLEU_ORDER)
        })
        .collect()
}

/// Beam-searches `width` hypotheses for every motion and scores each rank
/// as one corpus against all annotations.
pub fn bleu_by_rank(
    model: &M2LModel,
    vocab: &Vocabulary,
    items: &[EvalMotion],
    width: usize,
    split: &str,
) -> Result<BleuReport> {
    if width == 0 {
        return Err(Error::Evaluation("beam width must be positive".into()));
    }
    let usable: Vec<&EvalMotion> = items
        .iter()
        .filter(|item| {
            let ok = !item.references.is_empty();
            if !ok {
                log::warn!("motion {} has no annotations; excluded", item.motion.source_id);
            }
            ok
        })
        .collect();
    let ranked = usable
        .par_iter()
        .map(|item| describe_ranked(model, vocab, &item.motion, width))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<Vec<String>>> = usable.iter().map(|i| i.references.clone()).collect();
    Ok(BleuReport {
        split: split.to_owned(),
        ngram_order: BLEU_ORDER,
        smoothing: SMOOTHING_ID.to_owned(),
        items: usable.len(),
        scores: per_rank_bleu(&ranked, &refs, width)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeReport {
    pub split: String,
    pub ngram_order: usize,
    pub smoothing: String,
    pub items: usize,
    pub baseline_bleu: f64,
    /// Corpus BLEU per rank of the re-described generated motions.
    pub bleu: Vec<f64>,
    /// `bleu / baseline_bleu` per rank.
    pub relative: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over ranks.
    pub std: f64,
}

/// A description to turn into motion, plus the annotations of the motion it
/// describes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainItem {
    pub tokens: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Both models with the vocabularies and standardizers they were trained with.
pub struct Chain<'a> {
    pub l2m: &'a L2MModel,
    pub l2m_vocab: &'a Vocabulary,
    pub l2m_standardizer: &'a Standardizer,
    pub m2l: &'a M2LModel,
    pub m2l_vocab: &'a Vocabulary,
    pub m2l_standardizer: &'a Standardizer,
}

impl Chain<'_> {
    /// Rank-1 generated motion for `tokens`, re-standardized for the m2l
    /// model. `None` if the generated motion has no active frame.
    pub fn generate_motion(&self, tokens: &[String], rng: &mut ChaCha8Rng) -> Result<Option<MotionSequence>> {
        let sentence: SentenceRecord = self.l2m_vocab.encode(tokens, self.l2m.config.max_sentence_len)?;
        let hyps = self.l2m.generate(&sentence, rng)?;
        let Some(best) = hyps.first() else { return Ok(None) };
        let active = best.active_joints();
        if active.nrows() == 0 {
            return Ok(None);
        }
        let raw = self.l2m_standardizer.invert(active.view())?;
        let standardized = self.m2l_standardizer.apply(raw.view())?;
        let len = standardized.nrows();
        Ok(Some(MotionSequence {
            source_id: String::new(),
            offset: 0,
            active: standardized,
            padded_len: len,
        }))
    }
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Generates one motion per description (rank-1 hypothesis), re-describes it
/// with the m2l model and reports per-rank BLEU relative to `baseline_bleu`.
/// Descriptions whose generated motion is empty contribute empty hypotheses.
pub fn chained_relative_performance(
    chain: &Chain<'_>,
    items: &[ChainItem],
    baseline_bleu: f64,
    width: usize,
    seed: u64,
    split: &str,
) -> Result<RelativeReport> {
    if baseline_bleu <= 0.0 || !baseline_bleu.is_finite() {
        return Err(Error::Evaluation(format!("baseline BLEU {baseline_bleu} must be positive")));
    }
    if width == 0 {
        return Err(Error::Evaluation("beam width must be positive".into()));
    }
    let ranked = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            match chain.generate_motion(&item.tokens, &mut rng)? {
                Some(motion) => describe_ranked(chain.m2l, chain.m2l_vocab, &motion, width),
                None => Ok(vec![Vec::new(); width]),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<Vec<String>>> = items.iter().map(|i| i.references.clone()).collect();
    let bleu = per_rank_bleu(&ranked, &refs, width)?;
    let relative: Vec<f64> = bleu.iter().map(|b| b / baseline_bleu).collect();
    let (mean, std) = mean_and_std(&relative);
    Ok(RelativeReport {
        split: split.to_owned(),
        ngram_order: BLEU_ORDER,
        smoothing: SMOOTHING_ID.to_owned(),
        items: items.len(),
        baseline_bleu,
        bleu,
        relative,
        mean,
        std,
    })
}

/// `rank,split,score` rows.
pub fn write_rank_csv(path: &Path, split: &str, scores: &[f64]) -> Result<()> {
    let mut out = String::from("rank,split,score\n");
    for (r, s) in scores.iter().enumerate() {
        out.push_str(&format!("{},{split},{s}\n", r + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn perfect_match_scores_one() {
        let hyps = vec![toks("a person walks forward slowly"), toks("someone waves the left hand")];
        let refs = vec![
            vec![toks("a human runs"), toks("a person walks forward slowly")],
            vec![toks("someone waves the left hand")],
        ];
        assert!((corpus_bleu(&hyps, &refs, 4).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_vocabulary_scores_near_zero() {
        let hyps = vec![toks("x y z w")];
        let refs = vec![vec![toks("a b c d")]];
        assert!(corpus_bleu(&hyps, &refs, 4).unwrap() < 0.01);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(corpus_bleu(&[], &[], 4).is_err());
    }

    #[test]
    fn duplicate_reference_does_not_change_score() {
        let hyps = vec![toks("a person walks in a circle")];
        let refs = vec![vec![toks("a person walks a circle"), toks("someone walks")]];
        let base = corpus_bleu(&hyps, &refs, 4).unwrap();
        let mut dup = refs.clone();
        dup[0].push(refs[0][0].clone());
        assert_eq!(corpus_bleu(&hyps, &dup, 4).unwrap(), base);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_and_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
