mod common;

use motion_language::eval::{
    bleu_by_rank, chained_relative_performance, corpus_bleu, describe_ranked, mean_and_std, Chain, ChainItem,
    EvalMotion,
};
use motion_language::l2m::L2MModel;
use motion_language::m2l::M2LModel;
use motion_language::motion::Standardizer;
use motion_language::text::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Occurrences of `gram` in `tokens`, by scanning every window.
fn occurrences(tokens: &[String], gram: &[String]) -> usize {
    if gram.len() > tokens.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len()).filter(|&i| tokens[i..i + gram.len()] == *gram).count()
}

/// Straightforward BLEU: for each hypothesis n-gram type count it once,
/// clip by the largest reference count, then combine the smoothed
/// precisions as a product of fourth roots.
fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let mut clipped = [0usize; 4];
    let mut total = [0usize; 4];
    let mut c = 0usize;
    let mut r = 0usize;
    for (h, rs) in hyps.iter().zip(refs) {
        c += h.len();
        let mut best = rs[0].len();
        for cand in rs {
            let (d, bd) = (cand.len().abs_diff(h.len()), best.abs_diff(h.len()));
            if d < bd || (d == bd && cand.len() < best) {
                best = cand.len();
            }
        }
        r += best;
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            total[n - 1] += h.len() - n + 1;
            for i in 0..=h.len() - n {
                let gram = &h[i..i + n];
                if (0..i).any(|j| h[j..j + n] == *gram) {
                    continue;
                }
                let max_ref = rs.iter().map(|x| occurrences(x, gram)).max().unwrap_or(0);
                clipped[n - 1] += occurrences(h, gram).min(max_ref);
            }
        }
    }
    if c == 0 || clipped[0] == 0 {
        return 0.0;
    }
    let mut score = 1.0;
    for n in 0..4 {
        let p = if clipped[n] > 0 {
            clipped[n] as f64 / total[n] as f64
        } else {
            1.0 / (total[n] as f64 + 1.0)
        };
        score *= p.powf(0.25);
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * score
}

fn random_sentence(rng: &mut ChaCha8Rng, words: usize) -> Vec<String> {
    (0..rng.random_range(0..9)).map(|_| format!("w{}", rng.random_range(0..words))).collect()
}

#[test]
fn corpus_bleu_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut nonzero = 0;
    for corpus in 0..20 {
        let n = rng.random_range(1..=10);
        // Small vocabularies early on so that higher-order matches occur.
        let words = 3 + corpus / 4;
        let hyps: Vec<Vec<String>> = (0..n).map(|_| random_sentence(&mut rng, words)).collect();
        let refs: Vec<Vec<Vec<String>>> = (0..n)
            .map(|_| (0..rng.random_range(1..=4)).map(|_| random_sentence(&mut rng, words)).collect())
            .collect();
        let got = corpus_bleu(&hyps, &refs, 4).unwrap();
        let want = oracle_bleu(&hyps, &refs);
        assert!((got - want).abs() < 1e-9, "corpus {corpus}: {got} vs {want}");
        nonzero += usize::from(want > 0.0);
    }
    assert!(nonzero >= 10);
}

#[test]
fn known_corpus_values() {
    let t = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
    // Identical sentences score exactly one.
    let s = t("a person walks forward slowly");
    assert_eq!(corpus_bleu(&[s.clone()], &[vec![s.clone()]], 4).unwrap(), 1.0);
    // Four-token hypothesis against a five-token reference: unit precisions
    // and a brevity penalty of exp(1 - 5/4).
    let h = t("a person walks forward");
    let bleu = corpus_bleu(&[h], &[vec![s]], 4).unwrap();
    assert!((bleu - (-0.25f64).exp()).abs() < 1e-12);
}

fn vocab(size: usize) -> Vocabulary {
    let mut words: Vec<String> = ["PAD", "SOS", "EOS", "UNK"].iter().map(|s| s.to_string()).collect();
    words.extend((4..size).map(|i| format!("w{i}")));
    Vocabulary::from_words(words).unwrap()
}

#[test]
fn bleu_by_rank_scores_each_rank_as_a_corpus() {
    let v = vocab(7);
    let model = M2LModel::new(common::tiny_m2l(7, 2, 4), 3).unwrap();
    let data = common::random_pairs(3, 4, 7, 2, 5, 3);
    let items: Vec<EvalMotion> = data
        .motions
        .iter()
        .zip(&data.sentences)
        .map(|(m, s)| EvalMotion {
            motion: m.clone(),
            references: vec![v.decode(&s.indices).unwrap(), vec!["w4".into()]],
        })
        .collect();
    let report = bleu_by_rank(&model, &v, &items, 3, "train").unwrap();
    assert_eq!(report.scores.len(), 3);
    assert_eq!(report.items, 4);
    let ranked: Vec<Vec<Vec<String>>> =
        items.iter().map(|i| describe_ranked(&model, &v, &i.motion, 3).unwrap()).collect();
    for r in 0..3 {
        let hyps: Vec<Vec<String>> = ranked.iter().map(|h| h[r].clone()).collect();
        let refs: Vec<Vec<Vec<String>>> = items.iter().map(|i| i.references.clone()).collect();
        assert_eq!(report.scores[r], corpus_bleu(&hyps, &refs, 4).unwrap());
    }
}

#[test]
fn chained_report_is_relative_to_baseline_and_reproducible() {
    let v = vocab(7);
    let m2l = M2LModel::new(common::tiny_m2l(7, 2, 4), 1).unwrap();
    let mut l2m_cfg = common::tiny_l2m(7, 2, 2, 4);
    l2m_cfg.max_motion_len = 5;
    let l2m = L2MModel::new(l2m_cfg, 1).unwrap();
    let std = Standardizer::identity(2);
    let chain = Chain {
        l2m: &l2m,
        l2m_vocab: &v,
        l2m_standardizer: &std,
        m2l: &m2l,
        m2l_vocab: &v,
        m2l_standardizer: &std,
    };
    let items: Vec<ChainItem> = (0..5)
        .map(|i| ChainItem {
            tokens: vec![format!("w{}", 4 + i % 3)],
            references: vec![vec![format!("w{}", 4 + i % 3)], vec!["w4".into(), "w5".into()]],
        })
        .collect();
    let report = chained_relative_performance(&chain, &items, 0.5, 3, 9, "test").unwrap();
    assert_eq!(report, chained_relative_performance(&chain, &items, 0.5, 3, 9, "test").unwrap());
    assert_eq!(report.bleu.len(), 3);
    for (b, r) in report.bleu.iter().zip(&report.relative) {
        assert_eq!(*r, b / 0.5);
    }
    assert_eq!((report.mean, report.std), mean_and_std(&report.relative));
    assert!(chained_relative_performance(&chain, &items, 0.0, 3, 9, "test").is_err());
}
