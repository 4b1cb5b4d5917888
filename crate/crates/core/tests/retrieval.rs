use kfocus::fixture::{question, Fixture};
use kfocus::gateway::TemplateSet;
use kfocus::retrieval::{
    build_low_noise_query, extract_keywords, scan_parallel, scan_sequential, search_top_r,
    Document, KnowledgeIndex,
};
use kfocus::Error;
use proptest::prelude::*;

#[test]
fn keyword_query_finds_reference_note_first() {
    let fx = Fixture::build();
    let gw = fx.gateway().build();
    let index = fx.index(&gw).unwrap();
    let templates = TemplateSet::default();
    for (i, sample) in fx.eval_samples().iter().enumerate() {
        let ks = extract_keywords(&gw, &templates, sample, 8).unwrap();
        let q = build_low_noise_query(&sample.question, Some(&ks));
        assert_eq!(q.question_part, question(i));
        let top = search_top_r(&index, &gw, &q.text, 20).unwrap();
        assert_eq!(top.ranked.len(), 20);
        assert_eq!(top.ranked[0].doc_id, format!("g{i:02}"), "sample {i}");
    }
}

#[test]
fn saved_index_reopens_with_its_corpus_only() {
    let fx = Fixture::build();
    let gw = fx.gateway().build();
    let index = fx.index(&gw).unwrap();
    let dir = tempfile::tempdir().unwrap();
    fx.write_to(dir.path()).unwrap();
    let path = dir.path().join("index.kfi");
    index.save(&path).unwrap();

    let reopened = KnowledgeIndex::open(&path, dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(reopened.documents(), index.documents());
    assert_eq!(reopened.corpus_digest(), index.corpus_digest());

    let other = dir.path().join("other.jsonl");
    std::fs::write(&other, "{\"id\":\"x\",\"text\":\"something else\"}\n").unwrap();
    assert!(matches!(KnowledgeIndex::open(&path, &other), Err(Error::IndexIntegrity(_))));
}

fn index_from(vectors: &[Vec<i8>], dim: usize) -> KnowledgeIndex {
    let docs = (0..vectors.len())
        .map(|i| Document {
            doc_id: format!("{:04}", (i * 7919) % 10_000),
            text: String::new(),
        })
        .collect();
    let flat = vectors.iter().flat_map(|v| v.iter().map(|&x| x as f32)).collect();
    KnowledgeIndex::from_parts(docs, flat, dim, String::new()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parallel_and_sequential_scans_agree(
        vectors in proptest::collection::vec(proptest::collection::vec(-2i8..=2, 6), 1..700),
        query in proptest::collection::vec(-2i8..=2, 6),
        r in 1usize..40,
    ) {
        let index = index_from(&vectors, 6);
        let q: Vec<f32> = query.iter().map(|&x| x as f32).collect();
        let seq = scan_sequential(&index, &q, r);
        let par = scan_parallel(&index, &q, r);
        prop_assert_eq!(&seq, &par);
        prop_assert_eq!(seq.ranked.len(), r.min(vectors.len()));
        for w in seq.ranked.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id));
        }
    }

    #[test]
    fn top_r_is_prefix_of_larger_r(
        vectors in proptest::collection::vec(proptest::collection::vec(-1i8..=1, 4), 1..300),
        query in proptest::collection::vec(-1i8..=1, 4),
        r in 1usize..30,
    ) {
        let index = index_from(&vectors, 4);
        let q: Vec<f32> = query.iter().map(|&x| x as f32).collect();
        let small = index.search(&q, r).unwrap();
        let large = index.search(&q, r + 1).unwrap();
        prop_assert_eq!(&small.ranked[..], &large.ranked[..small.ranked.len()]);
    }
}
