use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairpath_bench::Fixture;
use fairpath_core::autodiff::hvp;
use fairpath_core::bilevel::{cg_solve, compute_p, implicit_grad, solve_inner, BilevelConfig, InnerSolver};
use fairpath_core::models::{group_loss_on, label_column};
use fairpath_core::oracle::{explicit_unrolled_step, flat_vector};

fn bench_hvp(c: &mut Criterion) {
    let f = Fixture::new();
    let b = &f.batches[0];
    let v = f.net.params().with_values(vec![0.01; f.net.params().len()]).unwrap();
    let head = f.head.with_values(vec![0.5, -0.25, 0.1, 0.3, 0.0]).unwrap();
    c.bench_function("hvp/lambda_500_rows", |bench| {
        bench.iter(|| {
            hvp(f.net.params(), &v, |t, leaves| {
                let x = t.constant(b.x.clone());
                let y = t.constant(label_column(&b.y));
                let hl = t.constants(head.params());
                let z = f.net.embed_on(t, leaves, x)?;
                group_loss_on(t, &hl, z, y, head.loss_kind())
            })
            .unwrap()
        })
    });
}

fn bench_cg(c: &mut Criterion) {
    // tridiagonal SPD operator, diagonal 4 and off-diagonals −1
    let n = 256;
    let rhs = flat_vector((0..n).map(|i| (i as f64 * 0.1).sin()).collect());
    c.bench_function("cg/tridiagonal_256", |bench| {
        bench.iter(|| {
            cg_solve(
                |v| {
                    let x = v.values();
                    let av = (0..n)
                        .map(|i| {
                            let left = if i > 0 { x[i - 1] } else { 0.0 };
                            let right = if i + 1 < n { x[i + 1] } else { 0.0 };
                            4.0 * x[i] - left - right
                        })
                        .collect();
                    Ok(v.with_values(av)?)
                },
                &rhs,
                &rhs.zeros_like(),
                n,
                1e-10,
            )
            .unwrap()
        })
    });
}

fn bench_steps(c: &mut Criterion) {
    let f = Fixture::new();
    let mut g = c.benchmark_group("outer_step");
    for t in [5usize, 20, 80] {
        let cfg = BilevelConfig {
            kappa: 0.1,
            inner_solver: InnerSolver::GradientDescent,
            inner_lr: f.inner_lr,
            inner_max_steps: t,
            inner_tol_eps: 0.0,
            ..BilevelConfig::default()
        };
        g.bench_with_input(BenchmarkId::new("implicit", t), &t, |bench, _| {
            bench.iter(|| {
                let sol = solve_inner(&f.net, &f.batches, [&f.head, &f.head], &cfg).unwrap();
                let ps = compute_p(&f.net, &sol, &f.batches, &cfg).unwrap();
                black_box(implicit_grad(&f.net, &sol, &ps, &f.batches).unwrap())
            })
        });
        g.bench_with_input(BenchmarkId::new("unrolled", t), &t, |bench, &t| {
            bench.iter(|| explicit_unrolled_step(&f.net, [&f.head, &f.head], &f.batches, t, f.inner_lr, 0.1, None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_hvp, bench_cg, bench_steps);
criterion_main!(benches);
