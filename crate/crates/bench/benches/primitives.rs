use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_bigint::BigInt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crypsgd_core::crypto::keygen;
use crypsgd_core::harness::{run_trial, ExperimentConfig};
use crypsgd_core::linalg::{symmetric_eigen, Matrix};
use crypsgd_core::protocol::{Algorithm, CryptoMode};
use crypsgd_core::quantize::quantize_vector;

fn paillier(c: &mut Criterion) {
    let mut group = c.benchmark_group("paillier");
    group.sample_size(20);
    for bits in [1024u64, 2048] {
        let keys = keygen(bits, 7).unwrap();
        let pk = keys.public_key();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = BigInt::from(-123_456_789i64);
        let ct = pk.encrypt(&m, &mut rng).unwrap();
        let ct2 = pk.encrypt(&BigInt::from(42), &mut rng).unwrap();
        group.bench_with_input(BenchmarkId::new("encrypt", bits), &bits, |b, _| {
            b.iter(|| pk.encrypt(black_box(&m), &mut rng).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("add", bits), &bits, |b, _| {
            b.iter(|| pk.add(black_box(&ct), black_box(&ct2)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("scale", bits), &bits, |b, _| {
            b.iter(|| pk.scale(black_box(&ct), &BigInt::from(-37)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("decrypt", bits), &bits, |b, _| {
            b.iter(|| keys.decrypt(black_box(&ct)).unwrap())
        });
    }
    group.finish();
}

fn quantizer(c: &mut Criterion) {
    let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    c.bench_function("quantize_1000", |b| b.iter(|| quantize_vector(black_box(&x), 0.01, &mut rng).unwrap()));
}

fn jacobi(c: &mut Criterion) {
    let mut group = c.benchmark_group("jacobi");
    for n in [5usize, 20, 50] {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| ((i * j + i + j) as f64).cos() + if i == j { n as f64 } else { 0.0 }).collect())
            .collect();
        let mut a = Matrix::from_rows(&rows).unwrap();
        a = Matrix::from_rows(
            &(0..n).map(|i| (0..n).map(|j| 0.5 * (a.row(i)[j] + a.row(j)[i])).collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| symmetric_eigen(a).unwrap()));
    }
    group.finish();
}

fn trial(c: &mut Criterion) {
    let mut group = c.benchmark_group("trial_k50");
    group.sample_size(10);
    for (name, alg, mode) in [
        ("fast_path", Algorithm::Proposed, CryptoMode::FastPath),
        ("baseline", Algorithm::Baseline, CryptoMode::FastPath),
        ("encrypted_512", Algorithm::Proposed, CryptoMode::Encrypted),
    ] {
        let mut cfg = ExperimentConfig::reference(alg);
        cfg.iterations = 50;
        cfg.trials = 1;
        cfg.crypto_mode = mode;
        cfg.modulus_bits = 512;
        group.bench_function(name, |b| b.iter(|| run_trial(&cfg, 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, paillier, quantizer, jacobi, trial);
criterion_main!(benches);
