use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hazeval_core::annotation::assign_tasks;
use hazeval_core::context::{self, ConfidenceMethod};
use hazeval_core::corpus::{CorpusIndex, DocumentRecord};
use hazeval_core::specificity::{self, ClaimJudgment, Dims, JudgeLabel, SpecificityWeights};
use hazeval_core::stats::{self, RatingMatrix};
use hazeval_core::TokenScore;

fn readability(c: &mut Criterion) {
    let text = hazeval_bench::prose(200);
    c.bench_function("readability/2400 words", |b| b.iter(|| stats::readability(&text).unwrap()));
    let answer = hazeval_bench::answer(8);
    c.bench_function("render/8 segments", |b| b.iter(|| answer.render()));
}

fn agreement(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<u32>> = (0..500)
        .map(|_| {
            let mut r = vec![0u32; 3];
            for _ in 0..5 {
                r[rng.gen_range(0..3)] += 1;
            }
            r
        })
        .collect();
    let m = RatingMatrix::new(rows).unwrap();
    c.bench_function("fleiss_kappa/500x5", |b| b.iter(|| stats::fleiss_kappa(&m)));
    let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(0..10) as f64).collect();
    let y: Vec<f64> = (0..1000).map(|_| rng.gen_range(0..10) as f64).collect();
    c.bench_function("spearman/1000 tied", |b| b.iter(|| stats::spearman(&x, &y).unwrap()));
    let qids: Vec<String> = (0..50).map(|i| format!("q{i}")).collect();
    let aids: Vec<String> = (0..10).map(|i| format!("a{i}")).collect();
    c.bench_function("assign_tasks/50x10x2", |b| b.iter(|| assign_tasks(&qids, &aids, 2, 7).unwrap()));
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 128;
    let records: Vec<DocumentRecord> = (0..10_000)
        .map(|i| DocumentRecord {
            doc_id: format!("d{i}"),
            body: format!("abstract {i}"),
            embedding: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let index = CorpusIndex::from_records(records).unwrap();
    let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("retrieve_top5/10k x 128", |b| b.iter(|| index.retrieve_vector(&q, 5).unwrap()));
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels = [JudgeLabel::Yes, JudgeLabel::No, JudgeLabel::Na];
    let claims: Vec<Vec<ClaimJudgment>> = (0..20)
        .map(|ci| {
            (0..3)
                .map(|j| ClaimJudgment {
                    claim_id: format!("c{ci}"),
                    judge_id: format!("j{j}"),
                    labels: Dims::from_fn(|_| labels[rng.gen_range(0..3)]),
                    reasoning: Dims::default(),
                })
                .collect()
        })
        .collect();
    let weights = SpecificityWeights::default();
    c.bench_function("specificity/20 claims x 3 judges", |b| {
        b.iter(|| {
            let consensus: Vec<_> = claims.iter().map(|js| specificity::majority_vote(js).unwrap()).collect();
            specificity::aggregate(&specificity::dimension_average(&consensus), &weights)
        })
    });
    let tokens: Vec<TokenScore> = (0..512).map(|_| TokenScore::new("t", rng.gen_range(-3.0..0.0))).collect();
    c.bench_function("confidence/512 tokens", |b| {
        b.iter_batched(
            || tokens.clone(),
            |t| context::confidence_from_scores(&t, ConfidenceMethod::GeometricMean).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, readability, agreement, retrieval, scoring);
criterion_main!(benches);
