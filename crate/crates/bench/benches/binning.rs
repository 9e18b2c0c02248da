// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use pepsi_core::binning::{cuckoo_insert, simple_hash_insert, BinningPlan};

fn elements(count: usize, rng: &mut ChaCha20Rng) -> Vec<u64> {
    let mut xs: Vec<u64> = (0..count)
        .map(|_| rng.gen::<u64>() & ((1 << 40) - 1))
        .collect();
    xs.sort_unstable();
    xs.dedup();
    xs
}

fn cuckoo(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("cuckoo_insert");
    for m in [256usize, 1024, 4096] {
        let bins = ((m as f64 * 1.27) as usize).next_power_of_two().max(1024);
        let plan = BinningPlan::new(bins, 40, 64, &mut rng).unwrap();
        let xs = elements(m, &mut rng);
        group.throughput(Throughput::Elements(xs.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| cuckoo_insert(black_box(&xs), &plan, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn simple(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("simple_hash_insert");
    for n in [1usize << 14, 1 << 16] {
        let plan = BinningPlan::new(8192, 40, 128, &mut rng).unwrap();
        let xs = elements(n, &mut rng);
        group.throughput(Throughput::Elements(xs.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| simple_hash_insert(black_box(&xs), &plan).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, cuckoo, simple);
criterion_main!(benches);
