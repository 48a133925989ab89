//! Compares the rayon data-parallel batch scorer against the sequential
//! path. Build with default features for the real comparison; under
//! `--no-default-features` both rows measure the sequential code.
//!
//! `scoring_warm` measures pure forward compute over a pre-decoded cache;
//! `scoring_cold` includes PNG decoding by using a fresh dataset handle
//! per iteration.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use umafd_core::backbone::BackboneConfig;
use umafd_core::data::{Dataset, Modality, Split, SynthConfig};
use umafd_core::eval::{score_clips, score_clips_sequential};
use umafd_core::model::ModelParams;
use umafd_core::synth::synth_generate;

fn bench_scoring(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let scfg = SynthConfig { n_train_pairs: 2, n_test_depth: 32, t: 8, h: 32, w: 32, noise_level: 0.05, seed: 1 };
    synth_generate(&scfg, dir.path()).unwrap();
    let bcfg = BackboneConfig::default();
    let params = ModelParams::<f32>::init(&bcfg, 0);

    let warm = Dataset::open(dir.path(), (8, 32, 32)).unwrap();
    let recs = warm.select(Modality::Depth, Split::Test);
    score_clips_sequential(&params, &bcfg, &warm, &recs).unwrap();

    let mut g = c.benchmark_group("scoring_warm");
    for n in [8usize, 32] {
        let slice = &recs[..n];
        g.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| score_clips(&params, &bcfg, &warm, slice).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| score_clips_sequential(&params, &bcfg, &warm, slice).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("scoring_cold");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| {
            let cold = Dataset::open(dir.path(), (8, 32, 32)).unwrap();
            score_clips(&params, &bcfg, &cold, &recs).unwrap()
        })
    });
    g.bench_function("sequential", |b| {
        b.iter(|| {
            let cold = Dataset::open(dir.path(), (8, 32, 32)).unwrap();
            score_clips_sequential(&params, &bcfg, &cold, &recs).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, bench_scoring);
criterion_main!(benches);
