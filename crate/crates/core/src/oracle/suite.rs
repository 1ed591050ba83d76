use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::exact::embed_row;
use super::{
    brute_suf_gap_classification, brute_suf_gap_regression, dense_spd_solve, exact_bilevel_gradient,
    explicit_unrolled_step, fd_gradient, flat_vector, random_spd, OracleReport, TinyInstance,
};
use crate::autodiff::{hvp, mixed_partial_vjp, value_and_grad, AutodiffError, ParamVector, Tape, Tensor, Var};
use crate::bilevel::{cg_solve, compute_p, implicit_grad_with_sign, solve_inner, BilevelConfig, InnerSolver};
use crate::error::Result;
use crate::metrics::{suf_gap_classification, suf_gap_regression, PredictionSet};
use crate::models::{group_loss_on, label_column, Activation, Head, HeadProblem, LossKind, ReprNet, Task};
use nalgebra::DMatrix;

/// Faults the suite can inject to prove it detects them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// `+` instead of `−` in front of the mixed-partial terms.
    FlipImplicitSign,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    /// Run only checks whose name contains this substring.
    pub filter: Option<String>,
    pub fault: Option<Fault>,
}

/// One engine-vs-exact gradient comparison on the tiny instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientProbe {
    pub kappa: f64,
    pub eps: f64,
    pub delta: f64,
    pub solver: InnerSolver,
    pub inner_lr: f64,
    pub mixed_sign: f64,
}

impl GradientProbe {
    pub fn new(kappa: f64, eps: f64, delta: f64) -> Self {
        Self {
            kappa,
            eps,
            delta,
            solver: InnerSolver::GradientDescent,
            inner_lr: 0.2,
            mixed_sign: -1.0,
        }
    }
}

/// `(engine, exact, relative error)` of the implicit gradient on `inst`,
/// heads started from zero.
pub fn gradient_error(inst: &TinyInstance, probe: GradientProbe) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let cfg = BilevelConfig {
        kappa: probe.kappa,
        inner_solver: probe.solver,
        inner_lr: probe.inner_lr,
        inner_max_steps: 1_000_000,
        inner_tol_eps: probe.eps,
        cg_max_iters: 500,
        cg_tol_delta: probe.delta,
        hessian_damping: 0.0,
        ..BilevelConfig::default()
    };
    let h = Head::zeros(inst.net.embed_dim(), Task::Regression);
    let sol = solve_inner(&inst.net, &inst.batches, [&h, &h], &cfg)?;
    let ps = compute_p(&inst.net, &sol, &inst.batches, &cfg)?;
    let got = implicit_grad_with_sign(&inst.net, &sol, &ps, &inst.batches, probe.mixed_sign)?;
    let want = exact_bilevel_gradient(&inst.net, &inst.batches, probe.kappa, 1e-5)?;
    let rel = super::rel_error(want.grad.values(), got.grad_lambda.values());
    Ok((got.grad_lambda.values().to_vec(), want.grad.values().to_vec(), rel))
}

type Check = fn(&SuiteOptions) -> Result<OracleReport>;

const CHECKS: &[(&str, Check)] = &[
    ("autodiff.grad_fd", grad_fd),
    ("autodiff.hvp_fd", hvp_fd),
    ("autodiff.hvp_symmetry", hvp_symmetry),
    ("autodiff.mixed_partial_fd", mixed_partial_fd),
    ("cg.dense_equivalence", cg_dense),
    ("bilevel.gradient_fidelity", gradient_fidelity),
    ("bilevel.eps_scaling", eps_scaling),
    ("bilevel.kappa_scaling", kappa_scaling),
    ("bilevel.unrolled_consistency", unrolled_consistency),
    ("models.normal_equations", normal_equations),
    ("metrics.classification_counts", classification_counts),
    ("metrics.regression_counts", regression_counts),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Run the (filtered) suite. A check that errors is reported as failed.
pub fn run_suite(opts: &SuiteOptions) -> Vec<OracleReport> {
    CHECKS
        .iter()
        .filter(|(name, _)| opts.filter.as_deref().is_none_or(|f| name.contains(f)))
        .map(|(name, check)| match check(opts) {
            Ok(mut r) => {
                r.quantity = (*name).to_string();
                r
            }
            Err(e) => OracleReport::failed(*name, &e),
        })
        .collect()
}

fn worst(reports: Vec<OracleReport>, tolerance: f64) -> OracleReport {
    let mut w = reports
        .into_iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .expect("at least one case");
    w.passed = w.rel_error <= tolerance;
    w
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Logistic loss of a fixed head over a random ReLU net, against the same
/// loss evaluated by a scalar loop.
fn grad_fd(_: &SuiteOptions) -> Result<OracleReport> {
    let mut out = Vec::new();
    let mut seed = 0u64;
    while out.len() < 20 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = [4, 5, 3];
        let net = ReprNet::new(&arch, Activation::Relu, seed)?;
        let rows = random_rows(&mut rng, 8, 4);
        let y: Vec<f64> = (0..8).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let head: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        // skip draws with a pre-activation near the kink
        let near_kink = rows.iter().any(|r| {
            let pre = embed_row(&arch[..2], Activation::Linear, Activation::Linear, net.params().values(), r);
            pre.iter().any(|v| v.abs() < 1e-4)
        });
        if near_kink {
            continue;
        }
        let scalar_loss = |p: &ParamVector| -> Result<f64> {
            let mut total = 0.0;
            for (r, &t) in rows.iter().zip(&y) {
                let z = embed_row(&arch, Activation::Relu, Activation::Linear, p.values(), r);
                let s: f64 = z.iter().zip(&head).map(|(a, b)| a * b).sum::<f64>() + head[3];
                total += LossKind::Logistic.eval(s, t);
            }
            Ok(total / y.len() as f64)
        };
        let x = Tensor::from_rows(&rows)?;
        let hp = Head::zeros(3, Task::BinaryClassification).with_values(head.clone())?;
        let (_, g) = value_and_grad(net.params(), |t, leaves| {
            let xv = t.constant(x.clone());
            let yv = t.constant(label_column(&y));
            let hl = t.constants(hp.params());
            let z = net.embed_on(t, leaves, xv)?;
            group_loss_on(t, &hl, z, yv, LossKind::Logistic)
        })?;
        let want = fd_gradient(scalar_loss, net.params(), 1e-6)?;
        out.push(OracleReport::compare("", want.values(), g.values(), 1e-5));
    }
    Ok(worst(out, 1e-5))
}

/// Smooth loss for second-order checks: a two-layer linear net (bilinear in
/// its weights) under logistic loss.
struct Smooth {
    net: ReprNet,
    x: Tensor,
    y: Vec<f64>,
    head: Head,
}

impl Smooth {
    fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ReprNet::new(&[4, 5, 3], Activation::Linear, seed)?;
        let x = Tensor::from_rows(&random_rows(&mut rng, 10, 4))?;
        let y = (0..10).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            net,
            x,
            y,
            head: Head::zeros(3, Task::BinaryClassification).with_values(h)?,
        })
    }

    fn record(&self, t: &mut Tape, net: &[Var], head: &[Var]) -> std::result::Result<Var, AutodiffError> {
        let xv = t.constant(self.x.clone());
        let yv = t.constant(label_column(&self.y));
        let z = self.net.embed_on(t, net, xv)?;
        group_loss_on(t, head, z, yv, LossKind::Logistic)
    }

    fn loss(&self) -> impl Fn(&mut Tape, &[Var]) -> std::result::Result<Var, AutodiffError> + '_ {
        move |t, leaves| {
            let hl = t.constants(self.head.params());
            self.record(t, leaves, &hl)
        }
    }

    fn grad_at(&self, p: &ParamVector) -> Result<ParamVector> {
        Ok(value_and_grad(p, self.loss())?.1)
    }

    fn random_direction(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let v = (0..self.net.params().len()).map(|_| rng.sample(StandardNormal)).collect();
        self.net.params().with_values(v).expect("same length")
    }
}

fn hvp_fd(_: &SuiteOptions) -> Result<OracleReport> {
    let mut out = Vec::new();
    for seed in 0..20 {
        let s = Smooth::new(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let v = s.random_direction(&mut rng);
        let got = hvp(s.net.params(), &v, s.loss())?;
        let h = 1e-4;
        let mut up = s.net.params().clone();
        up.axpy(h, &v);
        let mut down = s.net.params().clone();
        down.axpy(-h, &v);
        let mut want = s.grad_at(&up)?.sub(&s.grad_at(&down)?);
        want = want.scaled(1.0 / (2.0 * h));
        out.push(OracleReport::compare("", want.values(), got.values(), 1e-4));
    }
    Ok(worst(out, 1e-4))
}

fn hvp_symmetry(_: &SuiteOptions) -> Result<OracleReport> {
    let mut out = Vec::new();
    for seed in 0..20 {
        let s = Smooth::new(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let u = s.random_direction(&mut rng);
        let v = s.random_direction(&mut rng);
        let uhv = u.dot(&hvp(s.net.params(), &v, s.loss())?);
        let vhu = v.dot(&hvp(s.net.params(), &u, s.loss())?);
        out.push(OracleReport::compare("", &[uhv], &[vhu], 1e-8));
    }
    Ok(worst(out, 1e-8))
}

fn mixed_partial_fd(_: &SuiteOptions) -> Result<OracleReport> {
    let mut out = Vec::new();
    for seed in 0..10 {
        let s = Smooth::new(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let vb: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let v = s.head.params().with_values(vb)?;
        let got = mixed_partial_vjp(s.net.params(), s.head.params(), &v, |t, a, b| s.record(t, a, b))?;
        let head_grad_dot = |p: &ParamVector| -> Result<f64> {
            let net = ReprNet::from_params(s.net.arch(), s.net.activation(), p.clone())?;
            let (_, g) = value_and_grad(s.head.params(), |t, hl| {
                let nl = t.constants(net.params());
                let xv = t.constant(s.x.clone());
                let yv = t.constant(label_column(&s.y));
                let z = net.embed_on(t, &nl, xv)?;
                group_loss_on(t, hl, z, yv, LossKind::Logistic)
            })?;
            Ok(g.dot(&v))
        };
        let want = fd_gradient(head_grad_dot, s.net.params(), 1e-5)?;
        out.push(OracleReport::compare("", want.values(), got.values(), 1e-4));
    }
    Ok(worst(out, 1e-4))
}

fn cg_dense(_: &SuiteOptions) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = Vec::new();
    let mut over_budget = 0;
    for _ in 0..50 {
        let n = rng.random_range(1..=32);
        let a = random_spd(&mut rng, n, 1.0, 100.0);
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let want = dense_spd_solve(&a, &b)?;
        let bv = flat_vector(b);
        let res = cg_solve(
            |v| {
                let av: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * v.values()[j]).sum()).collect();
                Ok(v.with_values(av)?)
            },
            &bv,
            &bv.zeros_like(),
            n,
            1e-14 * bv.norm().max(1.0),
        )?;
        if res.iterations > n {
            over_budget += 1;
        }
        out.push(OracleReport::compare("", &want, res.x.values(), 1e-8));
    }
    let mut w = worst(out, 1e-8);
    w.passed &= over_budget == 0;
    w.note = format!("50 systems, n ≤ 32, {over_budget} over the iteration budget");
    Ok(w)
}

fn gradient_fidelity(opts: &SuiteOptions) -> Result<OracleReport> {
    let inst = TinyInstance::new(0)?;
    let sign = match opts.fault {
        Some(Fault::FlipImplicitSign) => 1.0,
        None => -1.0,
    };
    let mut out = Vec::new();
    for kappa in [0.0, 1.0] {
        let probe = GradientProbe {
            mixed_sign: sign,
            ..GradientProbe::new(kappa, 1e-10, 1e-10)
        };
        let (engine, exact, _) = gradient_error(&inst, probe)?;
        out.push(OracleReport::compare("", &exact, &engine, 1e-3));
    }
    Ok(worst(out, 1e-3))
}

fn eps_scaling(opts: &SuiteOptions) -> Result<OracleReport> {
    let inst = TinyInstance::new(0)?;
    let sign = if opts.fault.is_some() { 1.0 } else { -1.0 };
    let mut errs = Vec::new();
    for eps in [1e-2, 1e-4, 1e-6] {
        let probe = GradientProbe {
            mixed_sign: sign,
            ..GradientProbe::new(1.0, eps, 1e-10)
        };
        errs.push(gradient_error(&inst, probe)?.2);
    }
    // larger ε must not give a (3×) smaller error
    let ok = errs[0] * 3.0 >= errs[1] && errs[1] * 3.0 >= errs[2] && errs[2] < 1e-3;
    let mut r = OracleReport::statistic("", errs[0], 3.0, ok, format!("errors at ε = 1e-2, 1e-4, 1e-6: {errs:?}"));
    r.engine = errs;
    Ok(r)
}

fn kappa_scaling(opts: &SuiteOptions) -> Result<OracleReport> {
    let inst = TinyInstance::new(0)?;
    let sign = if opts.fault.is_some() { 1.0 } else { -1.0 };
    let mut errs = Vec::new();
    for kappa in [1.0, 10.0] {
        let probe = GradientProbe {
            mixed_sign: sign,
            ..GradientProbe::new(kappa, 1e-3, 1e-10)
        };
        errs.push(gradient_error(&inst, probe)?.2);
    }
    let ratio = errs[1] / errs[0].max(f64::MIN_POSITIVE);
    let mut r = OracleReport::statistic("", ratio, 20.0, ratio <= 20.0 && errs[0] < 1.0, format!("errors at κ = 1, 10: {errs:?}"));
    r.engine = errs;
    Ok(r)
}

fn unrolled_consistency(opts: &SuiteOptions) -> Result<OracleReport> {
    let inst = TinyInstance::new(1)?;
    let kappa = 0.5;
    // step 1/L and enough steps for the contraction (1 − μ/L)^T to reach 1e-9
    let (lr, steps) = gd_schedule(&inst, 1e-9)?;
    let h = Head::zeros(inst.net.embed_dim(), Task::Regression);
    let unrolled = explicit_unrolled_step(&inst.net, [&h, &h], &inst.batches, steps, lr, kappa, None)?;
    let sign = if opts.fault.is_some() { 1.0 } else { -1.0 };
    let probe = GradientProbe {
        mixed_sign: sign,
        inner_lr: lr,
        ..GradientProbe::new(kappa, 1e-9, 1e-10)
    };
    let (engine, _, _) = gradient_error(&inst, probe)?;
    let mut r = OracleReport::compare("", unrolled.grad.values(), &engine, 5e-3);
    r.note = format!("T = {steps}, step {lr:.3}, {} tape nodes", unrolled.nodes);
    Ok(r)
}

/// `(1/L, T)` for gradient descent on both groups' square-loss heads.
fn gd_schedule(inst: &TinyInstance, target: f64) -> Result<(f64, usize)> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for b in &inst.batches {
        let prob = HeadProblem::new(inst.net.embed(&b.x)?, b.y.clone(), LossKind::Square)?;
        let d = prob.dim();
        let eig = DMatrix::from_row_slice(d, d, &prob.hessian(&vec![0.0; d])).symmetric_eigenvalues();
        lo = lo.min(eig.min());
        hi = hi.max(eig.max());
    }
    let rate = 1.0 - lo / hi;
    let steps = (target.ln() / rate.ln()).ceil().max(1.0) as usize;
    Ok((1.0 / hi, steps))
}

/// The inner solver at ε = 1e-8 against least squares on the embedding.
fn normal_equations(_: &SuiteOptions) -> Result<OracleReport> {
    let inst = TinyInstance::new(2)?;
    let cfg = BilevelConfig {
        inner_lr: 0.2,
        inner_max_steps: 1_000_000,
        inner_tol_eps: 1e-8,
        ..BilevelConfig::default()
    };
    let h = Head::zeros(inst.net.embed_dim(), Task::Regression);
    let sol = solve_inner(&inst.net, &inst.batches, [&h, &h], &cfg)?;
    let (want, _) = super::exact_inner_heads(&inst.net, inst.net.params().values(), &inst.batches, 0.0)?;
    let mut got = sol.head0.params().values().to_vec();
    got.extend_from_slice(sol.head1.params().values());
    let want: Vec<f64> = want.concat();
    let max_abs = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut r = OracleReport::statistic("", max_abs, 1e-4, max_abs <= 1e-4, "max |h − h_normal_equations|");
    r.oracle = want;
    r.engine = got;
    Ok(r)
}

fn random_predictions(rng: &mut ChaCha8Rng, task: Task) -> (Vec<u8>, Vec<f64>, Vec<f64>) {
    let n = rng.random_range(4..200);
    let mut group: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    group[0] = 0;
    group[1] = 1;
    let score: Vec<f64> = (0..n).map(|_| (rng.sample::<f64, _>(StandardNormal) * 4.0).round() / 4.0).collect();
    let y = match task {
        Task::BinaryClassification => (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect(),
        Task::Regression => score
            .iter()
            .map(|s| ((s + rng.sample::<f64, _>(StandardNormal)) * 4.0).round() / 4.0)
            .collect(),
    };
    (group, y, score)
}

fn metric_counts(task: Task) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(match task {
        Task::BinaryClassification => 7,
        Task::Regression => 8,
    });
    let mut mismatches = 0;
    let mut out_of_range = 0;
    let mut asymmetric = 0;
    for _ in 0..100 {
        let (group, y, score) = random_predictions(&mut rng, task);
        let preds = PredictionSet::new(task, group.clone(), y.clone(), score.clone())?;
        let (engine, swapped, oracle) = match task {
            Task::BinaryClassification => (
                suf_gap_classification(&preds).ok().map(|r| r.value),
                suf_gap_classification(&preds.swapped()).ok().map(|r| r.value),
                brute_suf_gap_classification(&group, &y, &score),
            ),
            Task::Regression => (
                suf_gap_regression(&preds, 33).ok().map(|r| r.value),
                suf_gap_regression(&preds.swapped(), 33).ok().map(|r| r.value),
                brute_suf_gap_regression(&group, &y, &score, 33),
            ),
        };
        mismatches += usize::from(engine != oracle);
        asymmetric += usize::from(engine != swapped);
        out_of_range += usize::from(engine.is_some_and(|v| !(0.0..=1.0).contains(&v)));
    }
    let bad = mismatches + asymmetric + out_of_range;
    Ok(OracleReport::statistic(
        "",
        bad as f64,
        0.0,
        bad == 0,
        format!("100 sets: {mismatches} count mismatches, {asymmetric} swap asymmetries, {out_of_range} out of [0,1]"),
    ))
}

fn classification_counts(_: &SuiteOptions) -> Result<OracleReport> {
    metric_counts(Task::BinaryClassification)
}

fn regression_counts(_: &SuiteOptions) -> Result<OracleReport> {
    metric_counts(Task::Regression)
}
