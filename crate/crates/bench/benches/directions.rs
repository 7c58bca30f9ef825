use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use rsqn::objectives::{synthetic_regression, Loss, Objective};
use rsqn::updates::{Method, QnState, UpdateKind};

/// A state filled with `memory + 1` gradient-descent iterates on a ridge problem.
fn filled_state(method: Method, d: usize, memory: usize) -> (QnState, DVector<f64>) {
    let obj = synthetic_regression(2 * d, d, 100.0, Loss::Square, 1e-2, 5).unwrap();
    let kind = UpdateKind::new(method)
        .with_lambda_bar(1e-4)
        .with_reference_scale(obj.lipschitz());
    let mut state = QnState::new(kind, memory, d).unwrap();
    let mut x = DVector::zeros(d);
    let h = 1.0 / obj.lipschitz();
    for _ in 0..=memory {
        let g = obj.gradient(&x);
        state.push(x.clone(), g.clone()).unwrap();
        x.axpy(-h, &g, 1.0);
    }
    let g = obj.gradient(&x);
    (state, g)
}

fn directions(c: &mut Criterion) {
    let d = 500;
    let mut group = c.benchmark_group("direction");
    group.sample_size(20);
    for method in [
        Method::SymMultisecantI,
        Method::SymMultisecantII,
        Method::MultisecantBroydenI,
        Method::MultisecantBroydenII,
        Method::LBFGS,
        Method::BFGS,
    ] {
        let (state, g) = filled_state(method, d, 10);
        group.bench_with_input(BenchmarkId::new(method.name(), d), &g, |b, g| {
            b.iter(|| black_box(state.direction(black_box(g)).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, directions);
criterion_main!(benches);
