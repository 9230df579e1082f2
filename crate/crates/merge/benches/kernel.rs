use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use half::f16;
use pagetrace_merge::kernel::{merge_chunk, Execution};
use pagetrace_merge::{AccumDtype, Dtype};

fn f16_buffer(n: usize, phase: f32) -> Vec<u8> {
    (0..n).flat_map(|i| f16::from_f32(((i as f32) * 0.013 + phase).sin()).to_le_bytes()).collect()
}

fn bench_kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("merge_chunk_f16");
    for elems in [1usize << 16, 1 << 22] {
        let base = f16_buffer(elems, 0.0);
        let tuned = f16_buffer(elems, 0.5);
        let mut out = vec![0u8; base.len()];
        group.throughput(Throughput::Bytes(base.len() as u64));
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_function(BenchmarkId::new(label, elems), |b| {
                b.iter(|| {
                    merge_chunk(Dtype::F16, AccumDtype::F32, &base, &[&tuned], &[0.25], &mut out, exec);
                    black_box(&out);
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_kernel);
criterion_main!(benches);
