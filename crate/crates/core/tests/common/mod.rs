#![allow(dead_code)]

use motion_language::l2m::L2MConfig;
use motion_language::m2l::M2LConfig;
use motion_language::motion::MotionSequence;
use motion_language::text::{SentenceRecord, EOS, PAD, SOS};
use motion_language::train::PairedData;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_m2l(vocab: usize, joints: usize, hidden: usize) -> M2LConfig {
    M2LConfig {
        encoder_hidden: vec![hidden],
        decoder_hidden: vec![hidden, hidden],
        embedding_dim: 3,
        dropout: 0.0,
        vocab_size: vocab,
        joints,
        max_motion_len: 8,
        max_sentence_len: 6,
        beam_width: 3,
    }
}

pub fn tiny_l2m(vocab: usize, joints: usize, components: usize, hidden: usize) -> L2MConfig {
    L2MConfig {
        encoder_hidden: vec![hidden],
        decoder_hidden: vec![hidden, hidden],
        embedding_dim: 3,
        dropout: 0.0,
        vocab_size: vocab,
        joints,
        components,
        layer_norm: true,
        max_motion_len: 8,
        max_sentence_len: 6,
        beam_width: 3,
        samples_per_hypothesis: 2,
    }
}

pub fn sentence(words: &[usize], max_len: usize) -> SentenceRecord {
    let mut indices = vec![SOS];
    indices.extend_from_slice(words);
    indices.push(EOS);
    let active_length = indices.len();
    indices.resize(max_len, PAD);
    SentenceRecord {
        tokens: words.iter().map(|w| format!("w{w}")).collect(),
        indices,
        active_length,
    }
}

pub fn motion(frames: Array2<f64>, padded_len: usize) -> MotionSequence {
    MotionSequence {
        source_id: "m".into(),
        offset: 0,
        active: frames,
        padded_len,
    }
}

/// Random pairs with varying motion and sentence lengths.
pub fn random_pairs(seed: u64, n: usize, vocab: usize, joints: usize, max_frames: usize, max_words: usize) -> PairedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = PairedData::default();
    for i in 0..n {
        let frames = rng.random_range(1..=max_frames);
        let m = Array2::from_shape_simple_fn((frames, joints), || rng.random_range(-1.0..1.0));
        data.motions.push(motion(m, max_frames + 2));
        let words: Vec<usize> = (0..rng.random_range(1..=max_words))
            .map(|_| rng.random_range(3..vocab))
            .collect();
        data.sentences.push(sentence(&words, max_words + 2));
        data.pairs.push((i, i));
    }
    data
}
