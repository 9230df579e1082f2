use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pagetrace_core::exec::{map_ordered, Execution};
use pagetrace_core::extract::{rank_and_select, EvidenceRecord};
use pagetrace_core::rng::seeded;
use pagetrace_core::tracegen::render_trace_v2;
use pagetrace_core::PipelineConfig;
use rand::Rng;

fn instances(count: usize, pages: u32) -> Vec<Vec<EvidenceRecord>> {
    let mut rng = seeded(7);
    (0..count)
        .map(|_| {
            (1..=pages)
                .map(|p| EvidenceRecord {
                    page_index: p,
                    snippet: format!("evidence on page {p}"),
                    score: (rng.random_range(0.0..10.0f64) * 10.0).round() / 10.0,
                    was_clamped: false,
                    is_source: false,
                    failed: false,
                })
                .collect()
        })
        .collect()
}

fn bench_rank_and_render(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("rank_and_render");
    for pages in [50u32, 500] {
        let data = instances(256, pages);
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, pages), &data, |b, data| {
                b.iter(|| {
                    let traces = map_ordered(exec, data, |records| render_trace_v2(&rank_and_select(records, &cfg)));
                    black_box(traces)
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_rank_and_render);
criterion_main!(benches);
