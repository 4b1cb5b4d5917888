use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kfocus::retrieval::{scan_parallel, scan_sequential, Document, KnowledgeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 768;
const R: usize = 20;

fn random_index(n: usize, rng: &mut ChaCha8Rng) -> KnowledgeIndex {
    let docs = (0..n)
        .map(|i| Document {
            doc_id: format!("d{i:07}"),
            text: String::new(),
        })
        .collect();
    let vectors = (0..n * DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    KnowledgeIndex::from_parts(docs, vectors, DIM, String::new()).expect("valid parts")
}

fn scans(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut group = c.benchmark_group("top_r_scan");
    group.sample_size(20);
    for n in [1_000, 10_000, 100_000] {
        let index = random_index(n, &mut rng);
        let query: Vec<f32> = (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        assert_eq!(scan_sequential(&index, &query, R), scan_parallel(&index, &query, R));
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| scan_sequential(black_box(&index), black_box(&query), R))
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| scan_parallel(black_box(&index), black_box(&query), R))
        });
    }
    group.finish();
}

criterion_group!(benches, scans);
criterion_main!(benches);
