use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mage_core::samples::builtin;
use mage_core::sim::{run_campaign, CampaignConfig, SimMode};

fn campaigns(c: &mut Criterion) {
    let graph = builtin("linear-5").unwrap();
    let mut group = c.benchmark_group("campaign_linear_5");
    group.sample_size(20);
    for mode in [SimMode::Agent, SimMode::Baseline, SimMode::BaselineStatic] {
        for n in [10usize, 100] {
            let cfg = CampaignConfig::new(n, mode);
            group.bench_with_input(BenchmarkId::new(mode.as_str(), n), &cfg, |b, cfg| {
                b.iter(|| run_campaign(cfg, &graph).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, campaigns);
criterion_main!(benches);
