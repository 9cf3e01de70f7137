mod common;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use opcon_core::analysis::{self, LoopGainModel, LoopTarget};
use opcon_core::cbf::{self, PolynomialBank};
use opcon_core::lti::{self, StateSpaceModel};
use opcon_core::pipeline::{self, Designed};
use opcon_core::scenario::Scenario;
use opcon_core::Error;
use proptest::prelude::*;

fn aircraft() -> (Scenario, Designed) {
    let s = Scenario::builtin("aircraft-lateral").unwrap();
    let d = pipeline::design(&s).unwrap();
    (s, d)
}

fn stable_random(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> DMatrix<f64> {
    loop {
        let a = common::uniform(rng, n, n, 1.0) - DMatrix::identity(n, n) * 1.5;
        let v = lti::hurwitz(&a, 0.0).unwrap();
        if v.abscissa < -0.3 {
            return a;
        }
    }
}

#[test]
fn scalar_loop_closed_form() {
    let (k, a, b) = (2.5, -0.7, 1.3);
    let model = LoopGainModel::new(DMatrix::from_element(1, 1, k), DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), "x").unwrap();
    for w in [0.0, 0.1, 1.0, 10.0] {
        let l = analysis::loop_gain_at(&model, w).unwrap()[(0, 0)];
        let want = k * b / (w * w + a * a).sqrt();
        assert!((l.norm() - want).abs() <= 1e-14 * want);
    }
    let far = analysis::loop_gain_at(&model, 1e8).unwrap()[(0, 0)].norm();
    assert!(far <= 1e-7);
}

#[test]
fn resolvent_singular_reported() {
    let model = LoopGainModel::new(DMatrix::identity(1, 2), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), "osc").unwrap();
    assert!(matches!(analysis::loop_gain_at(&model, 1.0), Err(Error::ResolventSingular { .. })));
}

/// Steady-state response to `u_j = sin ωt`, propagated exactly with the
/// exponential of the plant augmented by a harmonic oscillator.
fn sinusoid_response(k: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, j: usize, w: f64) -> Vec<Complex64> {
    let n = a.nrows();
    let mut big = DMatrix::zeros(n + 2, n + 2);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, 1)).copy_from(&b.column(j));
    big[(n, n + 1)] = w;
    big[(n + 1, n)] = -w;
    let abscissa = lti::hurwitz(a, 0.0).unwrap().abscissa;
    let period = 2.0 * std::f64::consts::PI / w;
    let settle = (40.0 / -abscissa / period).ceil() * period;
    let mut z = DVector::zeros(n + 2);
    z[n + 1] = 1.0;
    z = (&big * settle).exp() * z;
    let samples = 256;
    let step = (&big * (period / samples as f64)).exp();
    let mut acc = vec![Complex64::new(0.0, 0.0); k.nrows()];
    for s in 0..samples {
        let t = settle + s as f64 * period / samples as f64;
        let y = k * z.rows(0, n);
        for (i, yi) in y.iter().enumerate() {
            acc[i] += Complex64::new(yi * (w * t).sin(), yi * (w * t).cos()) * (2.0 / samples as f64);
        }
        z = &step * z;
    }
    acc
}

#[test]
fn frequency_response_matches_time_domain() {
    let mut rng = common::rng(41);
    for _ in 0..5 {
        let a = stable_random(&mut rng, 3);
        let b = common::uniform(&mut rng, 3, 2, 1.0);
        let k = common::uniform(&mut rng, 2, 3, 2.0);
        let model = LoopGainModel::new(k.clone(), a.clone(), b.clone(), "r").unwrap();
        for w in [0.3, 1.0, 4.0] {
            let l = analysis::loop_gain_at(&model, w).unwrap();
            for j in 0..2 {
                let resp = sinusoid_response(&k, &a, &b, j, w);
                for i in 0..2 {
                    let (got, want) = (l[(i, j)], resp[i]);
                    assert!((got - want).norm() <= 0.01 * want.norm().max(1e-3), "ω {w}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn textbook_loops() {
    let integrator = LoopGainModel::new(DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0), "1/s").unwrap();
    let r = analysis::margins(&integrator, &analysis::default_grid()).unwrap();
    assert!((r.siso[0].pm_deg - 90.0).abs() <= 1e-6);
    assert_eq!(r.siso[0].gm_db, f64::INFINITY);
    assert!((r.siso[0].gain_crossover.unwrap() - 1.0).abs() <= 1e-6);

    let low = LoopGainModel::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0), "k/(s+1)").unwrap();
    let r = analysis::margins(&low, &analysis::default_grid()).unwrap();
    assert_eq!(r.siso[0].gain_crossover, None);
    assert_eq!((r.siso[0].gm_db, r.siso[0].pm_deg), (f64::INFINITY, f64::INFINITY));
    assert!(r.margins_positive());
}

#[test]
fn unstable_nominal_is_flagged() {
    let model = LoopGainModel::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0), "u").unwrap();
    let r = analysis::margins(&model, &analysis::default_grid()).unwrap();
    assert!(!r.hurwitz && r.siso.is_empty() && r.mimo.is_none());
    assert!(!r.margins_positive());
}

#[test]
fn zero_pattern_is_the_baseline_loop() {
    let (s, d) = aircraft();
    let target = d.loop_target(&s);
    let m0 = analysis::effective_gain(&target, &[false; 4]).unwrap();
    let Designed::Servo { ext, .. } = &d else { panic!("servo") };
    assert_eq!(&m0.k_eff, ext.k_x());
    assert_eq!(&m0.a, ext.a_ext());
    assert_eq!(&m0.b, ext.b_u());

    let mut rng = common::rng(42);
    let (model, design) = common::random_design(&mut rng, 1e6);
    let k_x = common::uniform(&mut rng, model.m(), model.n(), 1.0);
    let t = LoopTarget::Proportional { design: &design, a: model.a(), b: model.b(), k_x: &k_x };
    let p = vec![false; model.m()];
    assert_eq!(analysis::effective_gain(&t, &p).unwrap().k_eff, k_x);
}

#[test]
fn full_pattern_cancels_the_baseline() {
    let mut rng = common::rng(43);
    for _ in 0..20 {
        let (model, design) = common::random_design(&mut rng, 1e6);
        let (m, n) = (model.m(), model.n());
        let k1 = common::uniform(&mut rng, m, n, 1.0);
        let k2 = &k1 + common::uniform(&mut rng, m, n, 5.0);
        let all = vec![true; m];
        let g1 = analysis::effective_gain(&LoopTarget::Proportional { design: &design, a: model.a(), b: model.b(), k_x: &k1 }, &all).unwrap().k_eff;
        let g2 = analysis::effective_gain(&LoopTarget::Proportional { design: &design, a: model.a(), b: model.b(), k_x: &k2 }, &all).unwrap().k_eff;
        assert!((&g1 - &g2).amax() <= 1e-10 * g1.amax().max(1.0) * design.cond_h_u());
        assert!((&g1 - design.k_cbf()).amax() <= 1e-10 * g1.amax().max(1.0) * design.cond_h_u());
    }
}

#[test]
fn extended_full_pattern_output_activation() {
    let (_, d) = aircraft();
    let Designed::Servo { ext, .. } = &d else { panic!("servo") };
    let m = ext.m();
    let delta = analysis::output_activation(ext, &[true; 4]).unwrap();
    assert!(delta.view((0, 0), (m, m)).amax() <= 1e-12 * delta.amax());
    let h_u_inv = ext.h_u_plant().clone().try_inverse().unwrap();
    assert!(opcon_core::linalg::rel_diff(&delta.view((0, m), (m, m)).clone_owned(), &h_u_inv) <= 1e-10);
}

#[test]
fn pattern_counts_and_order() {
    let model = StateSpaceModel::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let design = cbf::build_design(&model, &PolynomialBank::new(vec![vec![-1.0]]).unwrap(), &common::ones(1, 1)).unwrap();
    let k_x = DMatrix::from_element(1, 1, 4.0);
    let t = LoopTarget::Proportional { design: &design, a: model.a(), b: model.b(), k_x: &k_x };
    let sweep = analysis::activation_sweep(&t, &analysis::default_grid()).unwrap();
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[1].pattern, vec![true]);

    let scalar = Scenario::builtin("scalar-servo").unwrap();
    let plant = scalar.plant.clone();
    let (bl, _) = opcon_core::servo::lqr_pi_design(&plant, &[1.0, 1.0], &[1.0]).unwrap();
    let g = bl.pi_gains().unwrap();
    let bank = PolynomialBank::new(vec![vec![-1.0]]).unwrap();
    let ext = opcon_core::servo::build_extended(&opcon_core::servo::ExtendedSpec {
        plant: &plant,
        k_i: &g.k_i,
        k_p: &g.k_p,
        u_bl_roots: &[-2.0],
        z_bank: &bank,
        u_box: &cbf::ConstraintBox::symmetric(&[3.0]).unwrap(),
        z_box: &scalar.limited_box,
        zero_tol: 1e-9,
    })
    .unwrap();
    let sweep = analysis::activation_sweep(&LoopTarget::Extended(&ext), &analysis::default_grid()).unwrap();
    let labels: Vec<_> = sweep.iter().map(|e| e.report.label.clone()).collect();
    assert_eq!(labels, vec!["00", "01", "10", "11"]);
}

#[test]
fn diagonal_sensitivity_rows_change_only_where_pattern_changes() {
    let mut rng = common::rng(44);
    let a = common::uniform(&mut rng, 3, 3, 1.0);
    let b = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, -2.0, 0.5]));
    let model = StateSpaceModel::new(a, b, DMatrix::identity(3, 3)).unwrap();
    let design = cbf::build_design(&model, &PolynomialBank::new(vec![vec![-1.0], vec![-2.0], vec![-3.0]]).unwrap(), &common::ones(3, 3)).unwrap();
    let k_x = common::uniform(&mut rng, 3, 3, 1.0);
    let t = LoopTarget::Proportional { design: &design, a: model.a(), b: model.b(), k_x: &k_x };
    for k in 0..8 {
        let p = analysis::pattern_from_index(k, 3);
        let g = analysis::effective_gain(&t, &p).unwrap().k_eff;
        for j in 0..3 {
            let mut q = p.clone();
            q[j] = !q[j];
            let h = analysis::effective_gain(&t, &q).unwrap().k_eff;
            for i in 0..3 {
                if i != j {
                    assert_eq!(g.row(i), h.row(i));
                }
            }
        }
    }
}

#[test]
fn aircraft_sweep_all_patterns_stable_with_positive_margins() {
    let (s, d) = aircraft();
    let sweep = analysis::activation_sweep(&d.loop_target(&s), &analysis::default_grid()).unwrap();
    assert_eq!(sweep.len(), 16);
    for e in &sweep {
        let r = &e.report;
        assert!(r.hurwitz, "{}", r.label);
        assert!(r.margins_positive(), "{r:?}");
        let disk = r.mimo.as_ref().unwrap();
        assert!(disk.gm_db.is_finite() && disk.pm_deg.is_finite(), "{r:?}");
    }
    let mut csv = Vec::new();
    analysis::write_margin_csv(&sweep, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "pattern,gm_db,pm_deg,mimo_gm_db,mimo_pm_deg,hurwitz");
    assert_eq!(text.lines().nth(1).unwrap().split(',').next().unwrap(), "0000");
}

#[test]
fn enumeration_cap() {
    let n = analysis::MAX_SWEEP_CHANNELS + 1;
    let model = common::diagonal_model(&vec![-1.0; n], &vec![1.0; n]);
    let design = cbf::build_design(&model, &PolynomialBank::new(vec![vec![-1.0]; n]).unwrap(), &common::ones(n, n)).unwrap();
    let k_x = DMatrix::zeros(n, n);
    let t = LoopTarget::Proportional { design: &design, a: model.a(), b: model.b(), k_x: &k_x };
    assert!(matches!(analysis::activation_sweep(&t, &[1.0]), Err(Error::EnumerationCap { .. })));
    assert!(analysis::effective_gain(&t, &[true]).is_err());
}

#[test]
fn disk_margin_formulas() {
    let d = analysis::DiskMargin::from_d(0.5, 1.0);
    assert!((d.gm_db - 20.0 * 3.0f64.log10()).abs() <= 1e-12);
    assert!((d.pm_deg - 2.0 * 0.25f64.asin().to_degrees()).abs() <= 1e-12);
    assert_eq!(analysis::DiskMargin::from_d(1.0, 1.0).gm_db, f64::INFINITY);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conjugate_symmetry(seed in any::<u64>(), w in 0.01f64..100.0) {
        let mut rng = common::rng(seed);
        let a = stable_random(&mut rng, 3);
        let model = LoopGainModel::new(common::uniform(&mut rng, 2, 3, 1.0), a, common::uniform(&mut rng, 3, 2, 1.0), "c").unwrap();
        let p = analysis::loop_gain_at(&model, w).unwrap();
        let q = analysis::loop_gain_at(&model, -w).unwrap();
        let scale = p.iter().map(|c| c.norm()).fold(1.0, f64::max);
        prop_assert!((p.map(|c| c.conj()) - q).iter().all(|c| c.norm() <= 1e-12 * scale));
    }

    #[test]
    fn disk_margin_monotone_under_refinement(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a = stable_random(&mut rng, 3);
        let model = LoopGainModel::new(common::uniform(&mut rng, 2, 3, 2.0), a, common::uniform(&mut rng, 3, 2, 1.0), "g").unwrap();
        let coarse = analysis::log_grid(1e-3, 1e3, 40).unwrap();
        let mut fine = coarse.clone();
        fine.extend(analysis::log_grid(1e-3, 1e3, 400).unwrap());
        let c = analysis::margins(&model, &coarse).unwrap();
        let f = analysis::margins(&model, &fine).unwrap();
        if let (Some(c), Some(f)) = (c.mimo, f.mimo) {
            prop_assert!(f.d <= c.d);
        }
    }
}
