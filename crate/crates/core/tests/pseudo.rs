mod common;

use std::collections::BTreeMap;

use common::{pseudo_pair, ten_pair_fixture};
use paraumt_core::clustering::{lda_assign, lda_fit, ClusteringModel, LdaConfig};
use paraumt_core::corpus::{build_vocab, encode_records, SentenceRecord};
use paraumt_core::pseudo::*;
use paraumt_core::Error;
use proptest::prelude::*;

#[test]
fn ten_pair_fixture_counts() {
    let (kept, report) = run_filters(ten_pair_fixture(), &FilterSpec::default()).unwrap();
    assert_eq!(kept.iter().map(|p| p.id).collect::<Vec<_>>(), vec![5, 6, 7, 8, 9]);
    assert_eq!(report.dropped_by(IDENTITY), 3);
    assert_eq!(report.dropped_by(LENGTH_RATIO), 2);
    assert_eq!((report.input, report.output), (10, 5));
}

#[test]
fn empty_spec_and_unknown_predicate() {
    let (kept, report) = run_filters(ten_pair_fixture(), &FilterSpec { predicates: vec![] }).unwrap();
    assert_eq!((kept.len(), report.output), (10, 10));
    let spec = FilterSpec {
        predicates: vec![FilterEntry::identity(), FilterEntry { name: "semantic".into(), max_ratio: None }],
    };
    assert!(matches!(run_filters(vec![], &spec), Err(Error::UnknownFilter(n)) if n == "semantic"));
    assert!(FilterSpec { predicates: vec![FilterEntry::length_ratio(0.0)] }.validate().is_err());
}

#[test]
fn length_ratio_boundary() {
    assert!(filter_length_ratio(&pseudo_pair(0, "a b c d", "1 2 3 4 5 6 7 8 9"), 2.0));
    assert!(!filter_length_ratio(&pseudo_pair(0, "a b c d", "1 2 3 4 5 6 7 8"), 2.0));
    assert!(!filter_length_ratio(&pseudo_pair(0, "a b c d", "1 2"), 2.0));
    assert!(filter_identity(&pseudo_pair(0, "a b", "a b")));
    assert!(!filter_identity(&pseudo_pair(0, "a b", "b a")));
}

fn records(lines: &[&str]) -> (Vec<SentenceRecord>, paraumt_core::corpus::Vocab) {
    let mut recs: Vec<SentenceRecord> = lines
        .iter()
        .enumerate()
        .map(|(id, l)| SentenceRecord {
            id,
            text: l.to_string(),
            tokens: common::words(l),
            ids: vec![],
        })
        .collect();
    let vocab = build_vocab(recs.iter().map(|r| &r.tokens), 1, 1000).unwrap();
    encode_records(&mut recs, &vocab);
    (recs, vocab)
}

#[test]
fn generation_with_identity_stub() {
    let lines = ["a b c", "d e f", "a a b", "e f f", "c b a"];
    let (recs, vocab) = records(&lines);
    let routes = vec![0, 2, 0, 2, 0];
    let models: BTreeMap<usize, (usize, IdentityTranslator)> =
        [(0, (0, IdentityTranslator)), (2, (1, IdentityTranslator))].into_iter().collect();
    let pairs = generate_pairs(&recs, &routes, &models, &vocab).unwrap();
    assert_eq!(pairs.len(), 5);
    for (p, r) in pairs.iter().zip(&recs) {
        assert_eq!(p.id, r.id);
        assert_eq!(p.src, r.tokens);
        assert_eq!(p.tgt, p.src);
    }
    assert_eq!(pairs.iter().map(|p| p.model).collect::<Vec<_>>(), vec![0, 1, 0, 1, 0]);
    assert_eq!(pairs, generate_pairs(&recs, &routes, &models, &vocab).unwrap());

    let mut partial = models.clone();
    partial.remove(&2);
    assert!(matches!(generate_pairs(&recs, &routes, &partial, &vocab), Err(Error::MissingModel(2))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    save_pairs(&path, &pairs).unwrap();
    assert_eq!(load_pairs(&path).unwrap(), pairs);
    let first = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["src"], "a b c");
    assert_eq!(v["cluster"], 0);
}

#[test]
fn routing_delegates_to_lda_and_respects_active_set() {
    let (docs, vocab_len, _) = common::planted_docs(3);
    let model = lda_fit(&docs, vocab_len, &LdaConfig { k: 3, ..LdaConfig::default() }).unwrap();
    let cm = ClusteringModel::Lda(model.clone());
    for (id, d) in docs.iter().enumerate().take(60) {
        let rec = SentenceRecord { id, text: String::new(), tokens: vec![], ids: d.clone() };
        assert_eq!(route(&cm, &[0, 1, 2], &rec, None).unwrap(), lda_assign(&model, d, &[0, 1, 2]).unwrap());
        let r = route(&cm, &[0, 2], &rec, None).unwrap();
        assert!(r != 1);
        assert_eq!(r, route(&cm, &[0, 2], &rec, None).unwrap());
    }
}

fn random_pair() -> impl Strategy<Value = ParaphrasePair> {
    (prop::collection::vec(0u8..3, 1..6), prop::collection::vec(0u8..3, 1..14)).prop_map(|(s, t)| ParaphrasePair {
        id: 0,
        src: s.iter().map(|x| x.to_string()).collect(),
        tgt: t.iter().map(|x| x.to_string()).collect(),
        cluster: 0,
        model: 0,
    })
}

proptest! {
    #[test]
    fn accounting_idempotence_and_order_independence(pairs in prop::collection::vec(random_pair(), 0..60), ratio in 0.5f64..3.0) {
        let fwd = FilterSpec { predicates: vec![FilterEntry::identity(), FilterEntry::length_ratio(ratio)] };
        let rev = FilterSpec { predicates: vec![FilterEntry::length_ratio(ratio), FilterEntry::identity()] };
        let (kept, report) = run_filters(pairs.clone(), &fwd).unwrap();
        let dropped: usize = report.drops.iter().map(|t| t.dropped).sum();
        prop_assert_eq!(report.input, report.output + dropped);
        prop_assert_eq!(report.output, kept.len());
        let (again, r2) = run_filters(kept.clone(), &fwd).unwrap();
        prop_assert_eq!(&again, &kept);
        prop_assert_eq!(r2.output, r2.input);
        let (kept_rev, _) = run_filters(pairs, &rev).unwrap();
        prop_assert_eq!(kept_rev, kept);
    }
}
