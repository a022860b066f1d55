//! One test per acceptance criterion. Each prints a single
//! `PASS`/`FAIL`/`SKIP` line straight to stderr so the verdicts show up even
//! when libtest captures output.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::time::Instant;

use common::{motion, random_pairs, tiny_l2m, tiny_m2l};
use motion_language::dataset::SplitName;
use motion_language::eval::corpus_bleu;
use motion_language::l2m::{l2m_exact_loss, l2m_surrogate_loss, sample_frame, L2MConfig, L2MModel, MdnParams};
use motion_language::m2l::{M2LConfig, M2LModel};
use motion_language::nn::{finite_difference_check, Graph, MdnLayout, Nadam, NadamConfig, ParameterSet};
use motion_language::text::{Vocabulary, EOS, SOS};
use motion_language::train::{PairedData, TrainConfig, Trainable, Trainer};
use motion_language_cli::config::{ModelKind, RunConfig};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "{verdict} C{id} {name}: {detail}");
}

fn skip(id: u32, name: &str, detail: &str) {
    let _ = writeln!(std::io::stderr().lock(), "SKIP C{id} {name}: {detail}");
}

fn check(id: u32, name: &str, pass: bool, detail: String) {
    report(id, name, pass, &detail);
    assert!(pass, "C{id} {name}: {detail}");
}

fn randomize(params: &mut ParameterSet, seed: u64, half_width: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, v) in params.iter_mut() {
        v.mapv_inplace(|_| rng.random_range(-half_width..half_width));
    }
}

fn mean_loss<M: Trainable>(model: &M, params: &ParameterSet, data: &PairedData) -> f64 {
    let batch: Vec<usize> = (0..data.len()).collect();
    let mut g = Graph::new(params);
    let (loss, count) = model.batch_loss(&mut g, data, &batch, None).unwrap();
    g.scalar(loss) / count
}

fn gradient_error<M: Trainable>(model: &M, data: &PairedData) -> f64 {
    let batch: Vec<usize> = (0..data.len()).collect();
    let mut g = Graph::new(model.params());
    let (loss, count) = model.batch_loss(&mut g, data, &batch, None).unwrap();
    let mut grads = g.backward(loss);
    grads.scale(1.0 / count);
    finite_difference_check(model.params(), &grads, 1e-5, |p| Ok(mean_loss(model, p, data)))
        .unwrap()
        .max_relative_error
}

#[test]
fn c1_gradient_fidelity() {
    let start = Instant::now();
    let (mut m2l_worst, mut l2m_worst) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut m2l = M2LModel::new(tiny_m2l(5, 2, 4), seed).unwrap();
        randomize(m2l.params_mut(), seed, 0.5);
        m2l_worst = m2l_worst.max(gradient_error(&m2l, &random_pairs(seed + 100, 2, 5, 2, 3, 2)));

        let mut l2m = L2MModel::new(tiny_l2m(5, 3, 2, 4), seed).unwrap();
        randomize(l2m.params_mut(), seed, 0.5);
        l2m_worst = l2m_worst.max(gradient_error(&l2m, &random_pairs(seed + 200, 2, 5, 3, 3, 2)));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        1,
        "gradient fidelity",
        m2l_worst < 1e-4 && l2m_worst < 1e-4 && secs < 60.0,
        format!("max relative error m2l {m2l_worst:.2e}, l2m {l2m_worst:.2e} over 20 seeds in {secs:.1}s (tol 1e-4, 60s)"),
    );
}

#[test]
fn c2_parameter_count() {
    const M2L_TARGET: f64 = 843_456.0;
    const L2M_TARGET: f64 = 5_446_517.0;
    let m2l = M2LModel::new(M2LConfig::reference(1344), 0).unwrap();
    let l2m = L2MModel::new(L2MConfig::reference(1344), 0).unwrap();
    let dm = (m2l.num_parameters() as f64 - M2L_TARGET) / M2L_TARGET;
    let dl = (l2m.num_parameters() as f64 - L2M_TARGET) / L2M_TARGET;
    let mut err = std::io::stderr().lock();
    for (name, params) in [("m2l", m2l.params()), ("l2m", l2m.params())] {
        for (group, n) in params.breakdown() {
            let _ = writeln!(err, "    {name} {group:<24} {n:>9}");
        }
    }
    drop(err);
    check(
        2,
        "parameter count",
        dm.abs() <= 0.02 && dl.abs() <= 0.02,
        format!(
            "m2l {} ({:+.2}%), l2m {} ({:+.2}%) (tol 2%)",
            m2l.num_parameters(),
            100.0 * dm,
            l2m.num_parameters(),
            100.0 * dl
        ),
    );
}

fn train_config(epochs: usize, batch_size: usize, clip: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        optimizer: NadamConfig::default(),
        clip_norm: clip,
        seed: 3,
        threads: 1,
    }
}

fn toy_vocab(size: usize) -> Vocabulary {
    let mut words: Vec<String> = ["PAD", "SOS", "EOS", "UNK"].iter().map(|s| s.to_string()).collect();
    words.extend((4..size).map(|i| format!("w{i}")));
    Vocabulary::from_words(words).unwrap()
}

#[test]
fn c3_overfit_m2l() {
    let start = Instant::now();
    let data = random_pairs(1, 10, 20, 4, 20, 6);
    let cfg = M2LConfig {
        encoder_hidden: vec![64],
        decoder_hidden: vec![64],
        embedding_dim: 64,
        dropout: 0.0,
        vocab_size: 20,
        joints: 4,
        max_motion_len: 30,
        max_sentence_len: 10,
        beam_width: 3,
    };
    let mut model = M2LModel::new(cfg, 1).unwrap();
    let trainer = Trainer::new(train_config(2000, 10, f64::INFINITY)).unwrap();
    let mut opt = Nadam::new(model.params(), trainer.config().optimizer);
    let mut epochs = 0;
    for epoch in 1..=2000 {
        epochs = epoch;
        if trainer.train_epoch(&mut model, &mut opt, &data, epoch).unwrap() < 0.05 {
            break;
        }
    }
    let vocab = toy_vocab(20);
    let (mut hyps, mut refs) = (Vec::new(), Vec::new());
    for &(m, s) in &data.pairs {
        let best = model.describe(&data.motions[m]).unwrap().remove(0);
        hyps.push(vocab.decode(&best.indices).unwrap());
        refs.push(vec![vocab.decode(&data.sentences[s].indices).unwrap()]);
    }
    let bleu = corpus_bleu(&hyps, &refs, 4).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        3,
        "overfit m2l",
        bleu >= 0.9 && secs < 1800.0,
        format!("rank-1 BLEU {bleu:.4} after {epochs} epochs in {secs:.1}s (need >= 0.9 within 2000 epochs)"),
    );
}

#[test]
fn c3_overfit_l2m() {
    let start = Instant::now();
    let data = random_pairs(2, 10, 20, 4, 20, 6);
    let cfg = L2MConfig {
        encoder_hidden: vec![32],
        decoder_hidden: vec![64, 64],
        embedding_dim: 32,
        dropout: 0.0,
        vocab_size: 20,
        joints: 4,
        components: 2,
        layer_norm: true,
        max_motion_len: 30,
        max_sentence_len: 10,
        beam_width: 5,
        samples_per_hypothesis: 4,
    };
    let mut model = L2MModel::new(cfg, 1).unwrap();
    let epochs = 800;
    let trainer = Trainer::new(TrainConfig {
        optimizer: NadamConfig {
            learning_rate: 1e-3,
            ..NadamConfig::default()
        },
        ..train_config(epochs, 5, 25.0)
    })
    .unwrap();
    let mut opt = Nadam::new(model.params(), trainer.config().optimizer);
    for epoch in 1..=epochs {
        trainer.train_epoch(&mut model, &mut opt, &data, epoch).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for &(m, s) in &data.pairs {
        let target = &data.motions[m];
        let generated = model.generate(&data.sentences[s], &mut rng).unwrap().remove(0).active_joints();
        let n = target.active_len();
        for j in 0..target.num_joints() {
            let se: f64 = (0..n)
                .map(|t| {
                    let g = if t < generated.nrows() { generated[[t, j]] } else { 0.0 };
                    (g - target.active[[t, j]]).powi(2)
                })
                .sum();
            worst = worst.max((se / n as f64).sqrt());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        3,
        "overfit l2m",
        worst <= 0.5 && secs < 1800.0,
        format!("worst per-joint RMSE {worst:.4} after {epochs} epochs in {secs:.1}s (need <= 0.5)"),
    );
}

/// Clipped n-gram BLEU computed by counting every window from scratch.
fn brute_force_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let count = |tokens: &[String], gram: &[String]| {
        if gram.len() > tokens.len() {
            0
        } else {
            (0..=tokens.len() - gram.len()).filter(|&i| tokens[i..i + gram.len()] == *gram).count()
        }
    };
    let (mut clipped, mut total) = ([0usize; 4], [0usize; 4]);
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        c += h.len();
        r += rs
            .iter()
            .map(|x| x.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .unwrap();
        for n in 1..=4.min(h.len()) {
            total[n - 1] += h.len() - n + 1;
            for i in 0..=h.len() - n {
                let gram = &h[i..i + n];
                if (0..i).all(|j| h[j..j + n] != *gram) {
                    let best = rs.iter().map(|x| count(x, gram)).max().unwrap_or(0);
                    clipped[n - 1] += count(h, gram).min(best);
                }
            }
        }
    }
    if c == 0 || clipped[0] == 0 {
        return 0.0;
    }
    let log_p: f64 = (0..4)
        .map(|n| {
            let p = if clipped[n] > 0 { clipped[n] as f64 / total[n] as f64 } else { 1.0 / (total[n] as f64 + 1.0) };
            p.ln() / 4.0
        })
        .sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

#[test]
fn c4_bleu_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    for corpus in 0..20 {
        let words = 3 + corpus / 5;
        let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..rng.random_range(0..9)).map(|_| format!("w{}", rng.random_range(0..words))).collect()
        };
        let n = rng.random_range(1..=10);
        let hyps: Vec<Vec<String>> = (0..n).map(|_| sentence(&mut rng)).collect();
        let refs: Vec<Vec<Vec<String>>> =
            (0..n).map(|_| (0..rng.random_range(1..=4)).map(|_| sentence(&mut rng)).collect()).collect();
        let want = brute_force_bleu(&hyps, &refs);
        worst = worst.max((corpus_bleu(&hyps, &refs, 4).unwrap() - want).abs());
        nonzero += usize::from(want > 0.0);
    }
    check(
        4,
        "BLEU oracle equivalence",
        worst <= 1e-9,
        format!("max |difference| {worst:.2e} on 20 corpora, {nonzero} with nonzero BLEU (tol 1e-9)"),
    );
}

fn enumerable(seed: u64) -> (M2LModel, Array1<f64>) {
    let mut model = M2LModel::new(tiny_m2l(4, 2, 5), seed).unwrap();
    randomize(model.params_mut(), seed, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let frames = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
    let ctx = model.encode_batch(&[&motion(frames, 6)]).unwrap().row(0).to_owned();
    (model, ctx)
}

#[test]
fn c5_beam_correctness() {
    let mut exact = 0;
    let mut greedy_ok = 0;
    let trials = 10;
    for seed in 0..trials {
        let (model, ctx) = enumerable(seed);
        // Sequences of at most three words ending in EOS.
        let mut all: Vec<Vec<usize>> = Vec::new();
        let mut prefixes: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..3 {
            let mut next = Vec::new();
            for p in &prefixes {
                all.push(p.iter().copied().chain([EOS]).collect());
                for w in (0..4).filter(|&w| w != EOS) {
                    next.push(p.iter().copied().chain([w]).collect());
                }
            }
            prefixes = next;
        }
        let scores: Vec<f64> = all.iter().map(|s| model.score(ctx.view(), s).unwrap()).collect();
        let best = (0..all.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        let hyps = model.beam_search(ctx.view(), 64, 3).unwrap();
        exact += usize::from(hyps[0].indices == all[best]);

        let c = ctx.view().insert_axis(Axis(0));
        let mut state = model.zero_state(1);
        let mut prev = SOS;
        let mut greedy = Vec::new();
        for step in 0..3 {
            let (probs, next) = model.decode_step(c, &[prev], &state).unwrap();
            let row = probs.row(0);
            let w = if step == 2 { EOS } else { (0..row.len()).fold(0, |b, w| if row[w] > row[b] { w } else { b }) };
            greedy.push(w);
            if w == EOS {
                break;
            }
            state = next;
            prev = w;
        }
        greedy_ok += usize::from(model.beam_search(ctx.view(), 1, 3).unwrap()[0].indices == greedy);
    }
    check(
        5,
        "beam correctness",
        exact == trials as usize && greedy_ok == trials as usize,
        format!("W=64 optimum {exact}/{trials}, W=1 greedy {greedy_ok}/{trials} (V=4, max length 3)"),
    );
}

fn random_mdn(rng: &mut ChaCha8Rng, components: usize, joints: usize) -> MdnParams {
    let layout = MdnLayout { components, joints };
    let raw: Vec<f64> = (0..layout.width()).map(|_| rng.random_range(-1.5..1.5)).collect();
    MdnParams::from_raw(&raw, layout).unwrap()
}

#[test]
fn c6_mdn_validity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // Trapezoid rule over [-12, 12].
    let mut mass_err: f64 = 0.0;
    for _ in 0..5 {
        let p = random_mdn(&mut rng, 3, 1);
        let (n, l) = (4000, 12.0);
        let h = 2.0 * l / n as f64;
        let mass: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * p.continuous_log_density(&[-l + i as f64 * h]).exp()
            })
            .sum::<f64>()
            * h;
        mass_err = mass_err.max((mass - 1.0).abs());
    }

    let mut loss_err: f64 = 0.0;
    for _ in 0..20 {
        let steps: Vec<MdnParams> = (0..6).map(|_| random_mdn(&mut rng, 1, 3)).collect();
        let targets = Array2::from_shape_fn((6, 4), |(t, c)| {
            if c == 3 { f64::from(u8::from(t < 4)) } else { rng.random_range(-2.0..2.0) }
        });
        let mask: Vec<bool> = (0..6).map(|t| t < 5).collect();
        let a = l2m_surrogate_loss(&steps, targets.view(), &mask).unwrap();
        let b = l2m_exact_loss(&steps, targets.view(), &mask).unwrap();
        loss_err = loss_err.max((a - b).abs());
    }

    let alphas = [0.1, 0.6, 0.3];
    let p = MdnParams {
        alphas: alphas.to_vec(),
        mus: Array2::from_shape_vec((3, 1), vec![-100.0, 0.0, 100.0]).unwrap(),
        sigmas: Array2::from_elem((3, 1), 1.0),
        p_active: 0.5,
    };
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[((sample_frame(&p, &mut rng)[0] + 150.0) / 100.0) as usize] += 1;
    }
    let freq_err = counts
        .iter()
        .zip(alphas)
        .map(|(&c, a)| (c as f64 / draws as f64 - a).abs())
        .fold(0.0, f64::max);
    check(
        6,
        "MDN validity",
        mass_err <= 1e-3 && loss_err <= 1e-12 && freq_err <= 0.01,
        format!(
            "quadrature |mass-1| {mass_err:.2e} (tol 1e-3), K=1 surrogate-exact {loss_err:.2e} (tol 1e-12), component frequency error {freq_err:.4} (tol 0.01)"
        ),
    );
}

#[test]
fn c7_masking_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = random_pairs(7, 6, 7, 3, 5, 4);
    let m2l = M2LModel::new(tiny_m2l(7, 3, 5), 7).unwrap();
    let l2m = L2MModel::new(tiny_l2m(7, 3, 2, 5), 7).unwrap();

    let mut contexts_equal = true;
    for m in &data.motions {
        let mut noisy = m.padded();
        for t in m.active_len()..noisy.nrows() {
            for j in 0..3 {
                noisy[[t, j]] = rng.random_range(-50.0..50.0);
            }
        }
        contexts_equal &= m2l.encode_motion(m.padded().view()).unwrap() == m2l.encode_motion(noisy.view()).unwrap();
    }
    let mut noisy = data.clone();
    for s in &mut noisy.sentences {
        for i in s.active_length..s.indices.len() {
            s.indices[i] = rng.random_range(0..7);
        }
    }
    for (a, b) in data.sentences.iter().zip(&noisy.sentences) {
        contexts_equal &= l2m.encode_text(a).unwrap() == l2m.encode_text(b).unwrap();
    }
    let m2l_diff = (mean_loss(&m2l, m2l.params(), &data) - mean_loss(&m2l, m2l.params(), &noisy)).abs();
    let l2m_diff = (mean_loss(&l2m, l2m.params(), &data) - mean_loss(&l2m, l2m.params(), &noisy)).abs();
    check(
        7,
        "masking invariance",
        contexts_equal && m2l_diff <= 1e-12 && l2m_diff <= 1e-12,
        format!("contexts bit-exact: {contexts_equal}, loss differences m2l {m2l_diff:.1e} l2m {l2m_diff:.1e} (tol 1e-12)"),
    );
}

#[test]
fn c8_pipeline_determinism() {
    let root = tempfile::tempdir().unwrap();
    let dataset = root.path().join("dataset");
    cli_common::write_dataset(&dataset, 8);
    let run = |name: &str| {
        let dir = root.path().join(name);
        let cfg = RunConfig {
            dataset: Some(dataset.clone()),
            prepared: Some(dir.join("prepared")),
            out: Some(dir.join("prepared")),
            model: Some(ModelKind::L2m),
            seed: Some(11),
            threads: Some(1),
            joint_names: Some(cli_common::JOINTS.iter().map(|s| s.to_string()).collect()),
            max_motion_length: Some(40),
            encoder_layers: Some(vec![8]),
            decoder_layers: Some(vec![12, 12]),
            embedding_dimension: Some(8),
            mixture_components: Some(2),
            batch_size: Some(16),
            training_epochs: Some(3),
            ..RunConfig::default()
        };
        motion_language_cli::cmd_prepare(&cfg).unwrap();
        let cfg = RunConfig {
            out: Some(dir.join("run")),
            ..cfg
        };
        let outcome = motion_language_cli::cmd_train(&cfg, None).unwrap();
        (
            std::fs::read(outcome.final_checkpoint).unwrap(),
            std::fs::read(dir.join("run").join(motion_language_cli::LOSS_CURVE)).unwrap(),
        )
    };
    let (ck_a, csv_a) = run("a");
    let (ck_b, csv_b) = run("b");
    let rows = String::from_utf8_lossy(&csv_a).lines().count() - 1;
    check(
        8,
        "pipeline determinism",
        ck_a == ck_b && csv_a == csv_b && rows == 3,
        format!(
            "checkpoints identical: {} ({} bytes), loss CSVs identical: {} ({rows} epochs)",
            ck_a == ck_b,
            ck_a.len(),
            csv_a == csv_b
        ),
    );
}

#[path = "common/mod.rs"]
#[allow(unused)]
mod cli_common;

/// Needs the public motion-language release; set `KIT_ML_DATASET` to its
/// directory. Runs for hours at reference scale. A miss is reported but does
/// not fail the suite.
#[test]
fn c9_full_scale_reproduction() {
    const NAME: &str = "full-scale reproduction";
    let Some(root) = std::env::var_os("KIT_ML_DATASET") else {
        skip(9, NAME, "set KIT_ML_DATASET to the 2016-10-10 release to run");
        return;
    };
    let work = tempfile::tempdir().unwrap();
    let base = RunConfig {
        dataset: Some(root.into()),
        prepared: Some(work.path().join("prepared")),
        out: Some(work.path().join("prepared")),
        threads: Some(std::thread::available_parallelism().map_or(1, |n| n.get())),
        ..RunConfig::default()
    };
    let summary = motion_language_cli::cmd_prepare(&base).unwrap();
    let counts_ok = summary.motions == 2846 && summary.annotations == 6187 && summary.vocabulary == 1344;
    let mut detail = format!(
        "{} motions / {} annotations / vocabulary {} (want 2846 / 6187 / 1344)",
        summary.motions, summary.annotations, summary.vocabulary
    );

    let train = |kind: ModelKind| {
        let cfg = RunConfig {
            model: Some(kind),
            out: Some(work.path().join(kind.to_string())),
            ..base.clone()
        };
        motion_language_cli::cmd_train(&cfg, None).unwrap().final_checkpoint
    };
    let m2l = train(ModelKind::M2l);
    let l2m = train(ModelKind::L2m);
    let mut ok = counts_ok;
    for (split, bleu_want, rel_want) in [(SplitName::Train, 0.387, 0.716), (SplitName::Test, 0.338, 0.655)] {
        let opts = motion_language_cli::EvaluateOptions { split, width: None, seed: 0 };
        let out = motion_language_cli::cmd_evaluate(&m2l, Some(&l2m), &work.path().join("prepared"), &work.path().join("eval"), &opts)
            .unwrap();
        let bleu = out.bleu.scores[0];
        let rel = out.relative.map_or(f64::NAN, |r| r.mean);
        ok &= (bleu - bleu_want).abs() <= 0.05 && (rel - rel_want).abs() <= 0.10;
        detail.push_str(&format!(
            "; {split} BLEU {bleu:.3} (want {bleu_want}±0.05), relative {:.1}% (want {:.1}±10)",
            100.0 * rel,
            100.0 * rel_want
        ));
    }
    report(9, NAME, ok, &detail);
}
