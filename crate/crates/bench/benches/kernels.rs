use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use endd_bench::*;
use endd_core::dirichlet::{alphas_from_logits, end2_nll_grad, expected_data_uncertainty, MemberSample};
use endd_core::distill::transfer_batch_loss;
use endd_core::ensemble::ensemble_uncertainties;
use endd_core::metrics::{ece, prr, rejection_curve_from, roc_auc};
use endd_core::net::softmax;
use endd_core::specfn::{digamma, ln_gamma};
use endd_core::{DistillConfig, Mode, TrainConfig};
use std::hint::black_box;

fn specfn(c: &mut Criterion) {
    let xs: Vec<f64> = (0..1000).map(|i| 10f64.powf(-4.0 + 10.0 * i as f64 / 999.0)).collect();
    c.bench_function("ln_gamma x1000", |b| b.iter(|| xs.iter().map(|&x| ln_gamma(black_box(x)).unwrap()).sum::<f64>()));
    c.bench_function("digamma x1000", |b| b.iter(|| xs.iter().map(|&x| digamma(black_box(x)).unwrap()).sum::<f64>()));
}

fn mlp_passes(c: &mut Criterion) {
    let model = mlp(3, 0);
    let batch = points(128, 1);
    c.bench_function("mlp forward 128", |b| b.iter(|| model.predict_logits(black_box(batch.view())).unwrap()));
    let mut r = rng(2);
    c.bench_function("mlp forward+backward 128, dropout", |b| {
        b.iter(|| {
            let (logits, trace) = model.forward(batch.view(), Mode::Train { keep_prob: 0.9, rng: &mut r }).unwrap();
            model.backward(&trace, logits.view()).unwrap()
        })
    });
}

fn dirichlet(c: &mut Criterion) {
    let mut r = rng(3);
    let members: Vec<_> = (0..20)
        .map(|_| {
            let z: Vec<f64> = (0..3).map(|_| rand::Rng::random_range(&mut r, -3.0..3.0)).collect();
            softmax(&z, 1.0).unwrap()
        })
        .collect();
    let sample = MemberSample::new(members.clone()).unwrap();
    let alpha = alphas_from_logits(&[1.0, 0.5, -0.2], 1.0).unwrap();
    c.bench_function("end2 nll grad M=20", |b| b.iter(|| end2_nll_grad(black_box(&alpha), &sample).unwrap()));
    c.bench_function("expected data uncertainty", |b| b.iter(|| expected_data_uncertainty(black_box(&alpha))));
    c.bench_function("ensemble uncertainties M=20", |b| b.iter(|| ensemble_uncertainties(black_box(&members)).unwrap()));
}

fn distill(c: &mut Criterion) {
    let ts = transfer(128, 20, 3, 4);
    let rows: Vec<usize> = (0..128).collect();
    let logits = points(128, 5).dot(&ndarray::Array2::ones((2, 3)));
    for (name, cfg) in [
        ("end batch 128, M=20", DistillConfig::end(TrainConfig::student(), 0)),
        ("end2 batch 128, M=20", DistillConfig::end2(TrainConfig::student(), 0)),
    ] {
        c.bench_function(name, |b| b.iter(|| transfer_batch_loss(&ts, &cfg, 2.5, &rows, black_box(logits.view())).unwrap()));
    }
}

fn metrics(c: &mut Criterion) {
    let p = probs(3000, 3, 6);
    let y = labels(3000, 3, 7);
    let scores: Vec<f64> = points(4000, 8).column(0).to_vec();
    let (pos, neg) = scores.split_at(1000);
    let correct: Vec<bool> = y.iter().map(|&l| l != 0).collect();
    c.bench_function("ece 3000x3", |b| b.iter(|| ece(black_box(p.view()), &y, 15).unwrap()));
    c.bench_function("roc_auc 1000 vs 3000", |b| b.iter(|| roc_auc(black_box(pos), neg).unwrap()));
    c.bench_function("prr 3000", |b| {
        b.iter_batched(
            || scores[..3000].to_vec(),
            |u| prr(&rejection_curve_from(&u, &correct).unwrap()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, specfn, mlp_passes, dirichlet, distill, metrics);
criterion_main!(benches);
