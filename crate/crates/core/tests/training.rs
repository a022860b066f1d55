mod common;

use common::random_pairs;
use motion_language::checkpoint::{Checkpoint, ModelConfig, TrainingState};
use motion_language::eval::corpus_bleu;
use motion_language::l2m::{L2MConfig, L2MModel};
use motion_language::m2l::{M2LConfig, M2LModel};
use motion_language::motion::{MotionSequence, Standardizer};
use motion_language::nn::{Nadam, NadamConfig};
use motion_language::text::Vocabulary;
use motion_language::train::{read_loss_curve, write_loss_curve, EpochLoss, PairedData, TrainConfig, Trainable, Trainer};
use motion_language::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_m2l_config(vocab: usize, joints: usize) -> M2LConfig {
    M2LConfig {
        encoder_hidden: vec![64],
        decoder_hidden: vec![64],
        embedding_dim: 64,
        dropout: 0.0,
        vocab_size: vocab,
        joints,
        max_motion_len: 30,
        max_sentence_len: 10,
        beam_width: 3,
    }
}

fn toy_l2m_config(vocab: usize, joints: usize) -> L2MConfig {
    L2MConfig {
        encoder_hidden: vec![32],
        decoder_hidden: vec![64, 64],
        embedding_dim: 32,
        dropout: 0.0,
        vocab_size: vocab,
        joints,
        components: 2,
        layer_norm: true,
        max_motion_len: 30,
        max_sentence_len: 10,
        beam_width: 5,
        samples_per_hypothesis: 4,
    }
}

fn train_config(epochs: usize, batch_size: usize, lr: f64, clip: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        optimizer: NadamConfig {
            learning_rate: lr,
            ..NadamConfig::default()
        },
        clip_norm: clip,
        seed: 3,
        threads: 1,
    }
}

fn fit<M: Trainable>(model: &mut M, data: &PairedData, cfg: TrainConfig, stop_below: f64) -> Vec<f64> {
    let trainer = Trainer::new(cfg).unwrap();
    let mut opt = Nadam::new(model.params(), trainer.config().optimizer);
    let mut curve = Vec::new();
    for epoch in 1..=trainer.config().epochs {
        let loss = trainer.train_epoch(model, &mut opt, data, epoch).unwrap();
        curve.push(loss);
        if loss < stop_below {
            break;
        }
    }
    curve
}

fn toy_vocab(size: usize) -> Vocabulary {
    let mut words: Vec<String> = ["PAD", "SOS", "EOS", "UNK"].iter().map(|s| s.to_string()).collect();
    words.extend((4..size).map(|i| format!("w{i}")));
    Vocabulary::from_words(words).unwrap()
}

#[test]
fn m2l_overfits_ten_pairs() {
    let data = random_pairs(1, 10, 20, 4, 20, 6);
    let mut model = M2LModel::new(toy_m2l_config(20, 4), 1).unwrap();
    let curve = fit(&mut model, &data, train_config(2000, 10, 1e-3, f64::INFINITY), 0.05);
    assert!(curve.windows(2).take(4).all(|w| w[1] < w[0]), "{:?}", &curve[..5]);

    let vocab = toy_vocab(20);
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (m, s) in data.pairs.iter().map(|&(m, s)| (&data.motions[m], &data.sentences[s])) {
        let best = model.describe(m).unwrap().remove(0);
        hyps.push(vocab.decode(&best.indices).unwrap());
        refs.push(vec![vocab.decode(&s.indices).unwrap()]);
    }
    let bleu = corpus_bleu(&hyps, &refs, 4).unwrap();
    assert!(bleu >= 0.9, "rank-1 BLEU {bleu} after {} epochs", curve.len());
}

/// Per-joint RMSE over the target's active frames; generated frames past
/// the generated length count as zeros.
fn worst_joint_rmse(generated: &ndarray::Array2<f64>, target: &MotionSequence) -> f64 {
    let n = target.active_len();
    (0..target.num_joints())
        .map(|j| {
            let se: f64 = (0..n)
                .map(|t| {
                    let g = if t < generated.nrows() { generated[[t, j]] } else { 0.0 };
                    (g - target.active[[t, j]]).powi(2)
                })
                .sum();
            (se / n as f64).sqrt()
        })
        .fold(0.0, f64::max)
}

#[test]
fn l2m_overfits_ten_pairs() {
    let data = random_pairs(2, 10, 20, 4, 20, 6);
    let mut model = L2MModel::new(toy_l2m_config(20, 4), 1).unwrap();
    let curve = fit(&mut model, &data, train_config(800, 5, 1e-3, 25.0), f64::NEG_INFINITY);
    assert!(curve.windows(2).take(4).all(|w| w[1] < w[0]), "{:?}", &curve[..5]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (m, s) in data.pairs.iter().map(|&(m, s)| (&data.motions[m], &data.sentences[s])) {
        let best = model.generate(s, &mut rng).unwrap().remove(0);
        let rmse = worst_joint_rmse(&best.active_joints(), m);
        assert!(rmse <= 0.5, "per-joint RMSE {rmse} (target {} frames, generated {})", m.active_len(), best.active_len());
    }
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let data = random_pairs(5, 6, 8, 3, 6, 4);
    let mut cfg = toy_m2l_config(8, 3);
    cfg.dropout = 0.3;
    cfg.encoder_hidden = vec![8];
    cfg.decoder_hidden = vec![8, 8];
    let run = || {
        let mut model = M2LModel::new(cfg.clone(), 9).unwrap();
        let curve = fit(&mut model, &data, train_config(3, 4, 1e-2, 1.0), f64::NEG_INFINITY);
        (model.params().clone(), curve)
    };
    let (pa, ca) = run();
    let (pb, cb) = run();
    assert_eq!(pa, pb);
    assert_eq!(ca.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), cb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = random_pairs(6, 4, 6, 2, 5, 3);
    let mut model = L2MModel::new(common::tiny_l2m(6, 2, 2, 4), 4).unwrap();
    let before = model.params().clone();
    fit(&mut model, &data, train_config(2, 2, 0.0, f64::INFINITY), f64::NEG_INFINITY);
    assert_eq!(model.params(), &before);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let data = random_pairs(7, 6, 8, 2, 5, 3);
    let mut cfg = common::tiny_m2l(8, 2, 6);
    cfg.dropout = 0.2;
    let tc = train_config(4, 3, 5e-3, 1.0);

    let mut full = M2LModel::new(cfg.clone(), 2).unwrap();
    let trainer = Trainer::new(tc.clone()).unwrap();
    let mut opt = Nadam::new(full.params(), tc.optimizer);
    let full_curve = trainer.fit(&mut full, &mut opt, &data, Some(&data), 0, |_, _, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    let mut half = M2LModel::new(cfg.clone(), 2).unwrap();
    let mut opt = Nadam::new(half.params(), tc.optimizer);
    let first = Trainer::new(TrainConfig { epochs: 2, ..tc.clone() })
        .unwrap()
        .fit(&mut half, &mut opt, &data, Some(&data), 0, |_, _, _| Ok(()))
        .unwrap();
    let state = TrainingState {
        epochs_completed: 2,
        seed: tc.seed,
        batch_size: tc.batch_size,
        clip_norm: Some(tc.clip_norm),
        learning_rate: tc.optimizer.learning_rate,
        beta1: tc.optimizer.beta1,
        beta2: tc.optimizer.beta2,
        epsilon: tc.optimizer.epsilon,
        optimizer_steps: opt.steps(),
    };
    Checkpoint::new(
        ModelConfig::M2l(cfg),
        half.params(),
        Some(&opt),
        Some(state),
        &Standardizer::identity(2),
        &toy_vocab(8),
        &["a".into(), "b".into()],
    )
    .write(&path)
    .unwrap();

    let ck = Checkpoint::read(&path).unwrap();
    let mut resumed = ck.m2l().unwrap();
    let mut opt = ck.optimizer(resumed.params()).unwrap();
    let start = ck.manifest.training.as_ref().unwrap().epochs_completed;
    let rest = trainer.fit(&mut resumed, &mut opt, &data, Some(&data), start, |_, _, _| Ok(())).unwrap();

    assert_eq!(resumed.params(), full.params());
    let joined: Vec<EpochLoss> = first.into_iter().chain(rest).collect();
    assert_eq!(joined, full_curve);

    let csv = dir.path().join("loss.csv");
    write_loss_curve(&csv, &joined).unwrap();
    assert_eq!(read_loss_curve(&csv).unwrap(), joined);
}

#[test]
fn non_finite_parameters_abort_with_location() {
    let data = random_pairs(8, 4, 6, 2, 5, 3);
    let mut model = M2LModel::new(common::tiny_m2l(6, 2, 4), 1).unwrap();
    let id = model.params().id("head.b").unwrap();
    model.params_mut().get_mut(id)[[0, 1]] = f64::NAN;
    let trainer = Trainer::new(train_config(1, 2, 1e-3, 1.0)).unwrap();
    let mut opt = Nadam::new(model.params(), trainer.config().optimizer);
    match trainer.train_epoch(&mut model, &mut opt, &data, 1) {
        Err(Error::NonFinite { tensor }) => assert!(tensor.contains("epoch 1, batch 0"), "{tensor}"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}
