use paraumt_core::fixtures::metric_fixture;
use paraumt_core::metrics::*;
use proptest::prelude::*;

fn t(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn cfg(order: usize, smoothing: Smoothing) -> MetricConfig {
    MetricConfig {
        max_order: order,
        smoothing,
        ..MetricConfig::default()
    }
}

/// Straightforward BLEU with list scans instead of hash maps.
fn bleu_oracle(c: &[u8], refs: &[Vec<u8>], order: usize) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let grams = |s: &[u8], n: usize| -> Vec<Vec<u8>> {
        if s.len() < n {
            vec![]
        } else {
            (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
        }
    };
    let mut log_p = 0.0;
    for n in 1..=order {
        let cg = grams(c, n);
        if cg.is_empty() {
            return 0.0;
        }
        let mut uniq: Vec<Vec<u8>> = cg.clone();
        uniq.sort();
        uniq.dedup();
        let mut m = 0usize;
        for g in &uniq {
            let cc = cg.iter().filter(|x| *x == g).count();
            let rc = refs.iter().map(|r| grams(r, n).iter().filter(|x| *x == g).count()).max().unwrap_or(0);
            m += cc.min(rc);
        }
        if m == 0 {
            return 0.0;
        }
        log_p += (m as f64 / cg.len() as f64).ln();
    }
    let mut best = refs[0].len();
    for r in refs {
        let (d, bd) = (r.len().abs_diff(c.len()), best.abs_diff(c.len()));
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    let bp = if c.len() >= best { 1.0 } else { (1.0 - best as f64 / c.len() as f64).exp() };
    100.0 * bp * (log_p / order as f64).exp()
}

#[test]
fn bleu_examples() {
    let c = cfg(2, Smoothing::None);
    assert_eq!(bleu(&t("a b c"), &[t("a b c")], &c), 100.0);
    assert_eq!(bleu(&t("x y"), &[t("a b c")], &c), 0.0);
    let b = bleu(&t("the cat the cat"), &[t("the cat sat")], &c);
    assert!((b - (0.5f64 * (1.0 / 3.0)).sqrt() * 100.0).abs() < 1e-9);
    assert!((b - 40.82).abs() < 5e-3);
}

#[test]
fn ibleu_examples() {
    let c = MetricConfig::default();
    assert!((ibleu(&t("x y z"), &t("a b c d"), &t("a b c d"), &c) - 80.0).abs() < 1e-9);
    assert!((ibleu(&t("a b c d"), &t("a b c d"), &t("a b c d"), &c) - 60.0).abs() < 1e-9);
    assert!((0.8f64 * 40.82 - 0.2 * 20.0 - 28.656).abs() < 1e-9);
}

#[test]
fn rouge_examples() {
    for mode in [RougeMode::Recall, RougeMode::F1] {
        assert_eq!(rouge_n(&t("a b c"), &t("a b c"), 2, mode).score, 1.0);
        assert_eq!(rouge_n(&t("x y"), &t("a b c"), 1, mode).score, 0.0);
    }
    assert_eq!(rouge_n(&t("the cat sat down"), &t("the cat sat"), 2, RougeMode::Recall).score, 1.0);
    assert!((rouge_n(&t("the cat sat down"), &t("the cat sat"), 2, RougeMode::F1).score - 0.8).abs() < 1e-12);
    let short = rouge_n(&t("a b"), &t("a"), 2, RougeMode::Recall);
    assert!(short.degenerate && short.score == 0.0);
}

#[test]
fn hand_scored_fixture() {
    let f = metric_fixture();
    for s in &f.triples {
        let x = &s.triple;
        assert!((bleu(&x.candidate, &[&x.reference], &f.config) - s.bleu).abs() < 1e-6);
        assert!((ibleu(&x.source, &x.reference, &x.candidate, &f.config) - s.ibleu).abs() < 1e-6);
        assert!((rouge_n(&x.candidate, &x.reference, 1, RougeMode::Recall).score - s.rouge1).abs() < 1e-6);
        assert!((rouge_n(&x.candidate, &x.reference, 2, RougeMode::Recall).score - s.rouge2).abs() < 1e-6);
        assert!((rouge_n(&x.candidate, &x.reference, 2, RougeMode::F1).score - s.rouge2_f1).abs() < 1e-6);
    }
    let triples: Vec<EvalTriple> = f.triples.iter().map(|s| s.triple.clone()).collect();
    let r = evaluate(&triples, &f.config).unwrap();
    assert!((r.bleu - f.corpus_bleu).abs() < 1e-6);
    assert!((r.ibleu - f.corpus_ibleu).abs() < 1e-6);
    assert!((r.rouge1 - f.mean_rouge1).abs() < 1e-6);
    assert!((r.rouge2 - f.mean_rouge2).abs() < 1e-6);
    assert_eq!(r.sentences.len(), 5);
}

#[test]
fn evaluate_identity_corpus_and_report_files() {
    let triples: Vec<EvalTriple> = ["a b c d", "e f g h i"]
        .iter()
        .map(|s| EvalTriple {
            source: t("x y z"),
            reference: t(s),
            candidate: t(s),
        })
        .collect();
    let r = evaluate(&triples, &MetricConfig::default()).unwrap();
    assert!((r.ibleu - 80.0).abs() < 1e-9);
    assert_eq!((r.rouge1, r.rouge2), (1.0, 1.0));
    assert!(evaluate(&[], &MetricConfig::default()).is_err());

    let dir = tempfile::tempdir().unwrap();
    r.write(&dir.path().join("r.json"), Some(&dir.path().join("r.csv"))).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert!((json["ibleu"].as_f64().unwrap() - 80.0).abs() < 1e-9);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 1..12)
}

proptest! {
    #[test]
    fn bleu_matches_oracle(c in seq(), refs in prop::collection::vec(seq(), 1..4), order in 1usize..5) {
        let got = bleu(&c, &refs, &cfg(order, Smoothing::None));
        let want = bleu_oracle(&c, &refs, order);
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn scores_in_range_and_reference_order_free(
        s in seq(), r in seq(), c in seq(), extra in seq(), alpha in 0.0f64..=1.0,
    ) {
        let config = MetricConfig { alpha, ..MetricConfig::default() };
        let b = bleu(&c, &[r.clone(), extra.clone()], &config);
        prop_assert!((0.0..=100.0).contains(&b));
        prop_assert_eq!(b, bleu(&c, &[extra, r.clone()], &config));
        let i = ibleu(&s, &r, &c, &config);
        prop_assert!(i >= -(1.0 - alpha) * 100.0 - 1e-9 && i <= alpha * 100.0 + 1e-9);
        let br = bleu(&c, &[&r], &config);
        let bs = bleu(&c, &[&s], &config);
        prop_assert!((i - (alpha * br - (1.0 - alpha) * bs)).abs() < 1e-9);
        for n in 1..3 {
            for mode in [RougeMode::Recall, RougeMode::F1] {
                let x = rouge_n(&c, &r, n, mode).score;
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn ibleu_is_monotone_in_its_components(br in 0.0f64..100.0, bs in 0.0f64..100.0, d in 0.0f64..10.0, alpha in 0.0f64..=1.0) {
        let f = |r: f64, s: f64| alpha * r - (1.0 - alpha) * s;
        prop_assert!(f(br + d, bs) >= f(br, bs));
        prop_assert!(f(br, bs + d) <= f(br, bs));
    }

    #[test]
    fn single_triple_report_equals_sentence_scores(s in seq(), r in seq(), c in seq()) {
        let config = cfg(2, Smoothing::None);
        let tri = EvalTriple { source: s.iter().map(|x| x.to_string()).collect(), reference: r.iter().map(|x| x.to_string()).collect(), candidate: c.iter().map(|x| x.to_string()).collect() };
        let rep = evaluate(std::slice::from_ref(&tri), &config).unwrap();
        prop_assert!((rep.bleu - rep.sentences[0].bleu).abs() < 1e-9);
        prop_assert!((rep.ibleu - rep.sentences[0].ibleu).abs() < 1e-9);
        prop_assert_eq!(rep.rouge1, rep.sentences[0].rouge1);
    }
}
