use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use lexlab_bench::{synthetic_index, synthetic_response};
use lexlab_core::audit::DEFAULT_SIM_THRESHOLD;
use lexlab_core::Auditor;
use std::hint::black_box;

fn bench(c: &mut Criterion) {
    let auditor = Auditor::new(Arc::new(synthetic_index(2_000, 2)), DEFAULT_SIM_THRESHOLD).unwrap();
    let text = synthetic_response(20);
    c.bench_function("audit_20_citations_2k", |b| b.iter(|| auditor.audit(black_box(&text)).unwrap()));
}

criterion_group!(benches, bench);
criterion_main!(benches);
