use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::autodiff::value_and_grad;
use crate::models::{group_loss_on, Head, Task};

#[test]
fn fd_of_squared_norm() {
    let theta = flat_vector(vec![1.0, 2.0]);
    let g = fd_gradient(|p| Ok(p.dot(p)), &theta, 1e-5).unwrap();
    assert!((g.values()[0] - 2.0).abs() < 1e-8);
    assert!((g.values()[1] - 4.0).abs() < 1e-8);
}

#[test]
fn fd_of_linear_is_exact_to_rounding() {
    let theta = flat_vector(vec![0.3, -1.2, 5.0]);
    let c = [1.5, -2.0, 0.25];
    let g = fd_gradient(|p| Ok(p.values().iter().zip(&c).map(|(a, b)| a * b).sum()), &theta, 1e-3).unwrap();
    for (a, b) in g.values().iter().zip(&c) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn fd_reports_bad_coordinate() {
    let theta = flat_vector(vec![1.0, 1e-4]);
    let err = fd_gradient(|p| Ok(p.values()[0] + p.values()[1].ln()), &theta, 1e-3).unwrap_err();
    assert!(err.to_string().contains("coordinate 1"), "{err}");
}

#[test]
fn fd_agrees_with_engine_grad() {
    let inst = TinyInstance::new(3).unwrap();
    let head = Head::zeros(3, Task::Regression).with_values(vec![0.4, -0.7, 0.2, 0.1]).unwrap();
    let b = &inst.batches[0];
    let f = |t: &mut crate::autodiff::Tape, leaves: &[crate::autodiff::Var]| {
        let x = t.constant(b.x.clone());
        let y = t.constant(crate::models::label_column(&b.y));
        let hl = t.constants(head.params());
        let z = inst.net.embed_on(t, leaves, x)?;
        group_loss_on(t, &hl, z, y, head.loss_kind())
    };
    let (_, g) = value_and_grad(inst.net.params(), f).unwrap();
    let fd = fd_gradient(
        |p| {
            let net = ReprNet::from_params(inst.net.arch(), inst.net.activation(), p.clone())?;
            crate::models::group_loss(&head, &net, &b.x, &b.y, head.loss_kind())
        },
        inst.net.params(),
        1e-6,
    )
    .unwrap();
    assert!(rel_error(fd.values(), g.values()) < 1e-5);
}

#[test]
fn fd_step_robustness() {
    // steps 1e-5 and 1e-6 agree within 10× the larger step's truncation
    // estimate, here |f'''| s² / 6 with f = Σ sin(θᵢ) so |f'''| ≤ 1.
    let theta = flat_vector(vec![0.3, 1.1, -0.4, 2.0]);
    let f = |p: &ParamVector| Ok(p.values().iter().map(|v| v.sin()).sum::<f64>());
    let a = fd_gradient(f, &theta, 1e-5).unwrap();
    let b = fd_gradient(f, &theta, 1e-6).unwrap();
    let trunc = 1e-10 / 6.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 10.0 * trunc + 1e-9, "{x} vs {y}");
    }
}

#[test]
fn dense_identity_and_diag() {
    assert_eq!(dense_spd_solve(&[1.0, 0.0, 0.0, 1.0], &[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);
    let x = dense_spd_solve(&[2.0, 0.0, 0.0, 4.0], &[2.0, 4.0]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
}

#[test]
fn dense_rejects_non_spd() {
    assert!(dense_spd_solve(&[1.0, 0.0, 0.0, -1.0], &[1.0, 1.0]).is_err());
    assert!(dense_spd_solve(&[1.0, 2.0, 0.0, 1.0], &[1.0, 1.0]).is_err());
    assert!(dense_spd_solve(&[1.0], &[1.0, 1.0]).is_err());
}

#[test]
fn dense_random_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_spd(&mut rng, 20, 1.0, 100.0);
    let b: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
    let x = dense_spd_solve(&a, &b).unwrap();
    let r: f64 = (0..20)
        .map(|i| ((0..20).map(|j| a[i * 20 + j] * x[j]).sum::<f64>() - b[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(r < 1e-10, "{r}");
}

#[test]
fn rel_error_uses_floor() {
    assert_eq!(rel_error(&[0.0], &[1e-13]), 1e-13 / REL_FLOOR);
    assert_eq!(rel_error(&[1.0], &[1.0, 2.0]), f64::INFINITY);
}

#[test]
fn brute_classification_closed_form() {
    // group0: PPV = NPV = 1; group1: PPV = NPV = 1/2
    let group = [0, 0, 1, 1, 1, 1];
    let y = [1.0, -1.0, 1.0, -1.0, -1.0, 1.0];
    let s = [1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
    assert_eq!(brute_suf_gap_classification(&group, &y, &s), Some(0.5));
}

#[test]
fn brute_regression_half() {
    // every score is 0, so every threshold is 0 and admits all samples:
    // group0 has both labels ≤ 0 (conditional 1), group1 one of two (½)
    let group = [0, 0, 1, 1];
    let s = [0.0; 4];
    let y = [-1.0, -1.0, -1.0, 5.0];
    assert_eq!(brute_suf_gap_regression(&group, &y, &s, 33), Some(0.5));
}

#[test]
fn brute_regression_enumerated() {
    // pooled scores [1,2,1,2], m = 3: nearest ranks 1,2,3 of [1,1,2,2]
    // give t = 1,1,2; diffs |1−0|, |1−0|, |1−½|
    let group = [0, 0, 1, 1];
    let s = [1.0, 2.0, 1.0, 2.0];
    let y = [0.0, 0.0, 5.0, 0.0];
    let v = brute_suf_gap_regression(&group, &y, &s, 3).unwrap();
    assert!((v - 2.5 / 3.0).abs() < 1e-15, "{v}");
}

#[test]
fn exact_gradient_kappa0_is_plain_gradient_at_optimum() {
    // at exact optima with κ = 0 the outer gradient is ∇_λ(L₀+L₁) at fixed
    // heads, by stationarity
    let inst = TinyInstance::new(5).unwrap();
    let ex = exact_bilevel_gradient(&inst.net, &inst.batches, 0.0, 1e-5).unwrap();
    assert!(!ex.raised_damping);
    let (heads, _) = exact_inner_heads(&inst.net, inst.net.params().values(), &inst.batches, 0.0).unwrap();
    let h: Vec<Head> = heads
        .iter()
        .map(|v| Head::zeros(3, Task::Regression).with_values(v.clone()).unwrap())
        .collect();
    let fixed = fd_gradient(
        |p| {
            let net = ReprNet::from_params(inst.net.arch(), inst.net.activation(), p.clone())?;
            let mut t = 0.0;
            for (hh, b) in h.iter().zip(&inst.batches) {
                t += crate::models::group_loss(hh, &net, &b.x, &b.y, hh.loss_kind())?;
            }
            Ok(t)
        },
        inst.net.params(),
        1e-5,
    )
    .unwrap();
    assert!(rel_error(fixed.values(), ex.grad.values()) < 1e-6);
}

#[test]
fn unrolled_zero_steps_is_outer_gradient_at_init() {
    let inst = TinyInstance::new(6).unwrap();
    let h0 = Head::zeros(3, Task::Regression).with_values(vec![0.1, 0.2, -0.3, 0.4]).unwrap();
    let h1 = h0.with_values(vec![-0.2, 0.5, 0.1, 0.0]).unwrap();
    let u = explicit_unrolled_step(&inst.net, [&h0, &h1], &inst.batches, 0, 0.1, 1.0, None).unwrap();
    let fd = fd_gradient(
        |p| {
            let net = ReprNet::from_params(inst.net.arch(), inst.net.activation(), p.clone())?;
            let mut t = 0.0;
            for (hh, b) in [&h0, &h1].into_iter().zip(&inst.batches) {
                t += crate::models::group_loss(hh, &net, &b.x, &b.y, hh.loss_kind())?;
            }
            Ok(t)
        },
        inst.net.params(),
        1e-6,
    )
    .unwrap();
    assert!(rel_error(fd.values(), u.grad.values()) < 1e-6);
}

#[test]
fn unrolled_budget_is_reported() {
    let inst = TinyInstance::new(7).unwrap();
    let h = Head::zeros(3, Task::Regression);
    let err = explicit_unrolled_step(&inst.net, [&h, &h], &inst.batches, 50, 0.1, 1.0, Some(500)).unwrap_err();
    assert!(matches!(err, Error::Autodiff(crate::autodiff::AutodiffError::Budget { limit: 500 })), "{err}");
}

#[test]
fn suite_passes_and_is_deterministic() {
    let a = run_suite(&SuiteOptions::default());
    for r in &a {
        assert!(r.passed, "{} failed: rel {} tol {} {}", r.quantity, r.rel_error, r.tolerance, r.note);
    }
    assert_eq!(a.len(), check_names().len());
    let b = run_suite(&SuiteOptions {
        filter: Some("metrics".into()),
        fault: None,
    });
    assert_eq!(b.len(), 2);
    for r in &b {
        let same = a.iter().find(|x| x.quantity == r.quantity).unwrap();
        assert_eq!(same, r);
    }
}

#[test]
fn suite_catches_sign_fault() {
    let r = run_suite(&SuiteOptions {
        filter: Some("bilevel.gradient_fidelity".into()),
        fault: Some(Fault::FlipImplicitSign),
    });
    assert_eq!(r.len(), 1);
    assert!(!r[0].passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn brute_gaps_in_unit_interval(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..40);
        let group: Vec<u8> = (0..n).map(|i| if i < 2 { i as u8 } else { rng.random_range(0..2) }).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        if let Some(v) = brute_suf_gap_regression(&group, &y, &s, 9) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let yc: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
        if let Some(v) = brute_suf_gap_classification(&group, &yc, &s) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
