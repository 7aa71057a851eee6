use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use phasorwatch::corpus::{build_corpus, CorpusConfig};
use phasorwatch::detector::{conditional_scores, mahalanobis_score};
use phasorwatch::features::extract_features;
use phasorwatch::preprocess::fit_standardize;
use phasorwatch::tree::train_tree;
use phasorwatch::var::fit_var;
use phasorwatch::{ChannelVector, LiveConfig, LiveDetector, SyntheticScenario, TrainConfig};

fn ambient(points: usize, seed: u64) -> Vec<ChannelVector> {
    SyntheticScenario::new(points as f64 / 2.0, 2.0, seed)
        .synthesize_ambient(seed)
        .unwrap()
}

fn var_fit(c: &mut Criterion) {
    let (_, z) = fit_standardize(&ambient(1200, 1)).unwrap();
    c.bench_function("fit_var p=1 1200x4", |b| b.iter(|| fit_var(black_box(&z), 1).unwrap()));
    c.bench_function("fit_var p=2 2400x4", |b| {
        let (_, z2) = fit_standardize(&ambient(2400, 2)).unwrap();
        b.iter(|| fit_var(black_box(&z2), 2).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let (_, z) = fit_standardize(&ambient(1200, 3)).unwrap();
    let model = fit_var(&z, 1).unwrap();
    let sigma = model.sigma().clone();
    let r = [1.0, -0.5, 0.25, 2.0];
    c.bench_function("mahalanobis", |b| b.iter(|| mahalanobis_score(black_box(&r), &sigma).unwrap()));
    c.bench_function("conditional_scores", |b| {
        b.iter(|| conditional_scores(black_box(&r), &sigma).unwrap())
    });
}

fn live_tick(c: &mut Criterion) {
    let series = ambient(4000, 4);
    let mut warm = LiveDetector::new(LiveConfig::default()).unwrap();
    for s in &series[..1300] {
        warm.push(*s).unwrap();
    }
    let step = chrono::Duration::milliseconds(500);
    let mut next = series[1299].timestamp;
    let mut i = 1300;
    c.bench_function("live tick (refit + score)", |b| {
        b.iter_batched(
            || {
                // Cycle the values; timestamps keep advancing.
                i = if i + 1 >= series.len() { 1300 } else { i + 1 };
                next += step;
                ChannelVector::new(next, series[i].values)
            },
            |s| warm.push(s).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn classifier(c: &mut Criterion) {
    let corpus = build_corpus(&CorpusConfig {
        events: 200,
        ..CorpusConfig::default()
    })
    .unwrap();
    let rows = corpus.rows();
    let labels = corpus.labels();
    let scores: Vec<f64> = corpus.events[0].event.feature_scores();
    let mut g = c.benchmark_group("classifier");
    g.sample_size(20);
    g.bench_function("train_tree 200 events", |b| {
        b.iter(|| train_tree(black_box(&rows), &labels, &TrainConfig::default()).unwrap())
    });
    let tree = train_tree(&rows, &labels, &TrainConfig::default()).unwrap();
    g.bench_function("extract_features + predict", |b| {
        b.iter(|| tree.predict(&extract_features(black_box(&scores), 12.0).unwrap().to_array()))
    });
    g.finish();
}

criterion_group!(benches, var_fit, scoring, live_tick, classifier);
criterion_main!(benches);
