//! Sequential against rayon-parallel trial scheduling on a BSC batch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vlf_core::channels::{Channel, ChannelSpec, ChannelSpecFile};
use vlf_core::exec::Schedule;
use vlf_core::lattice_codec::MinLookup;
use vlf_core::montecarlo::{run_experiment, ChannelSource, EncoderSelector, ExperimentConfig};

fn config(bits: u32, trials: u64) -> ExperimentConfig {
    let spec = ChannelSpec::from_channel(&Channel::Bsc { crossover: 0.11 });
    ExperimentConfig {
        channel: ChannelSource::Inline(ChannelSpecFile { spec, provenance: None }),
        bits: vec![bits],
        epsilon: 1e-3,
        trials,
        seed: 7,
        encoder: EncoderSelector::Lattice,
        output: None,
        rounds_per_bit: None,
        lookup: MinLookup::Linear,
    }
}

fn schedules(c: &mut Criterion) {
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    let mut group = c.benchmark_group("bsc_batch");
    group.sample_size(10);
    for bits in [20u32, 60] {
        let cfg = config(bits, 256);
        group.bench_with_input(BenchmarkId::new("sequential", bits), &cfg, |b, cfg| {
            b.iter(|| run_experiment(cfg, Schedule::Sequential).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", bits), &cfg, |b, cfg| {
            b.iter(|| run_experiment(cfg, Schedule::Parallel { workers }).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, schedules);
criterion_main!(benches);
