mod common;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::*;
use phsyn::lti::{
    closed_loop_matrix, closed_loop_pencil, eval_plant, eval_transfer, lower_lft, simulate_lti, PlantResponse,
};
use phsyn::msd::{msd_plant, MSDConfig};
use phsyn::{FeedbackSign, PhPlant, PlantEvaluator};

fn full_realization(plant: &PhPlant) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let pp = plant.partitioned();
    let (m1, m) = (pp.b1.ncols(), pp.b2.ncols());
    let (p1, p2) = (pp.c1.nrows(), pp.c2.nrows());
    let n = pp.a.nrows();
    let mut b = DMatrix::zeros(n, m1 + m);
    b.view_mut((0, 0), (n, m1)).copy_from(&pp.b1);
    b.view_mut((0, m1), (n, m)).copy_from(&pp.b2);
    let mut c = DMatrix::zeros(p1 + p2, n);
    c.view_mut((0, 0), (p1, n)).copy_from(&pp.c1);
    c.view_mut((p1, 0), (p2, n)).copy_from(&pp.c2);
    let mut d = DMatrix::zeros(p1 + p2, m1 + m);
    d.view_mut((0, 0), (p1, m1)).copy_from(&pp.d11);
    d.view_mut((0, m1), (p1, m)).copy_from(&pp.d12);
    d.view_mut((p1, 0), (p2, m1)).copy_from(&pp.d21);
    d.view_mut((p1, m1), (p2, m)).copy_from(&pp.d22);
    (pp.a, b, c, d)
}

fn assert_close(a: &CM, b: &CM, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let err = (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(err <= tol, "deviation {err:e} exceeds {tol:e}");
}

#[test]
fn single_mass_blocks_match_assembled_realization() {
    let plant = msd_plant(&MSDConfig::new(1)).unwrap();
    let s = C::new(0.0, 1.0);
    let pe = eval_plant(&plant, s).unwrap();
    let (a, b, c, d) = full_realization(&plant);
    let full = dense_transfer(&a, &b, &c, &d, s);
    let (m1, p1) = (plant.disturbances(), plant.performance_outputs());
    let m = plant.ports();
    assert_close(&pe.p11, &full.view((0, 0), (p1, m1)).into_owned(), 1e-12);
    assert_close(&pe.p12, &full.view((0, m1), (p1, m)).into_owned(), 1e-12);
    assert_close(&pe.p21, &full.view((p1, 0), (m, m1)).into_owned(), 1e-12);
    assert_close(&pe.p22, &full.view((p1, m1), (m, m)).into_owned(), 1e-12);
}

#[test]
fn zero_disturbance_map_gives_constant_blocks() {
    let mut rng = StdRng::seed_from_u64(10);
    let base = random_plant(&mut rng, 4, 2, 2, 3);
    let plant = PhPlant::new(
        base.ph().clone(),
        DMatrix::zeros(4, 2),
        base.c1().clone(),
        base.d11().clone(),
        base.d12().clone(),
        base.d21().clone(),
    )
    .unwrap();
    for w in [0.0, 0.7, 30.0] {
        let pe = eval_plant(&plant, C::new(0.0, w)).unwrap();
        assert_close(&pe.p11, &complex(plant.d11()), 0.0);
        assert_close(&pe.p21, &complex(plant.d21()), 0.0);
    }
}

#[test]
fn zero_performance_output_gives_zero_blocks() {
    let mut rng = StdRng::seed_from_u64(11);
    let base = random_plant(&mut rng, 3, 1, 2, 2);
    let plant = PhPlant::new(
        base.ph().clone(),
        base.b1().clone(),
        DMatrix::zeros(2, 3),
        DMatrix::zeros(2, 2),
        DMatrix::zeros(2, 1),
        base.d21().clone(),
    )
    .unwrap();
    let pe = eval_plant(&plant, C::new(0.0, 2.0)).unwrap();
    assert!(pe.p11.iter().all(|z| z.norm() == 0.0));
    assert!(pe.p12.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn hessenberg_evaluator_matches_dense_evaluation() {
    let plant = msd_plant(&MSDConfig::new(20)).unwrap();
    let eval = PlantEvaluator::new(&plant);
    let (a, b, c, d) = full_realization(&plant);
    for w in [1e-3, 0.3, 1.0, 2.7, 100.0] {
        let pe = eval.evaluate(w).unwrap();
        let full = dense_transfer(&a, &b, &c, &d, C::new(0.0, w));
        let scale = full.iter().map(|z| z.norm()).fold(1.0, f64::max);
        assert_close(&pe.p22, &full.view((4, 4), (2, 2)).into_owned(), 1e-10 * scale);
        assert_close(&pe.p11, &full.view((0, 0), (4, 4)).into_owned(), 1e-10 * scale);
    }
    // Repeated frequencies come from the cache.
    let before = eval.factorizations();
    eval.evaluate(1.0).unwrap();
    assert_eq!(eval.factorizations(), before);
}

#[test]
fn concurrent_evaluation_is_consistent() {
    use rayon::prelude::*;
    let plant = msd_plant(&MSDConfig::new(6)).unwrap();
    let eval = PlantEvaluator::new(&plant);
    let grid: Vec<f64> = (0..64).map(|i| 0.05 * (1 + i % 16) as f64).collect();
    let values: Vec<_> = grid.par_iter().map(|&w| eval.evaluate(w).unwrap()).collect();
    for (w, v) in grid.iter().zip(&values) {
        let direct = eval_plant(&plant, C::new(0.0, *w)).unwrap();
        assert_close(&v.p22, &direct.p22, 1e-12);
    }
    assert_eq!(eval.cached_points(), 16);
}

#[test]
fn lft_with_zero_controller_is_p11() {
    let mut rng = StdRng::seed_from_u64(12);
    let plant = random_plant(&mut rng, 5, 2, 3, 2);
    for w in [0.1, 1.0, 9.0] {
        let pe = eval_plant(&plant, C::new(0.0, w)).unwrap();
        for sign in [FeedbackSign::Positive, FeedbackSign::Negative] {
            let t = lower_lft(&pe, &CM::zeros(2, 2), sign).unwrap();
            assert_eq!(t, pe.p11);
        }
    }
}

#[test]
fn transfer_is_conjugate_symmetric() {
    let mut rng = StdRng::seed_from_u64(13);
    let ss = random_ph(&mut rng, 6, 2).to_state_space();
    for w in [0.2, 1.5, 40.0] {
        let s = C::new(-0.1, w);
        let up = eval_transfer(&ss, s).unwrap();
        let down = eval_transfer(&ss, s.conj()).unwrap();
        assert_close(&up.map(|z| z.conj()), &down, 1e-12);
    }
}

#[test]
fn pencil_has_two_m_infinite_eigenvalues_and_stable_finite_part() {
    let mut rng = StdRng::seed_from_u64(14);
    for _ in 0..30 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..=3);
        let plant = random_plant(&mut rng, n, m, 1, 1);
        let ctrl = random_controller(&mut rng, k, m);
        let pencil = closed_loop_pencil(&plant, &ctrl).unwrap();
        assert_eq!(pencil.dim(), n + k + 2 * m);
        let spectrum = pencil.eigenvalues().unwrap();
        assert_eq!(spectrum.infinite, 2 * m);
        assert!(spectrum.finite.iter().all(|z| z.re <= 1e-8));
        let acl = closed_loop_matrix(&plant.partitioned(), &ctrl.to_state_space(), FeedbackSign::Negative).unwrap();
        let reference: Vec<C> = acl.complex_eigenvalues().iter().copied().collect();
        let d = match_distance(&spectrum.finite, &reference).unwrap();
        assert!(d <= 1e-8, "pencil and closed-loop eigenvalues differ by {d:e}");
    }
}

#[test]
fn pencil_leading_blocks_are_identities() {
    let mut rng = StdRng::seed_from_u64(15);
    let plant = random_plant(&mut rng, 3, 2, 1, 1);
    let ctrl = random_controller(&mut rng, 2, 2);
    let pencil = closed_loop_pencil(&plant, &ctrl).unwrap();
    let mut e = DMatrix::zeros(9, 9);
    e.view_mut((0, 0), (5, 5)).fill_with_identity();
    assert_eq!(pencil.e, e);
}

#[test]
fn unforced_energy_is_nonincreasing() {
    let mut rng = StdRng::seed_from_u64(16);
    let ph = random_ph(&mut rng, 6, 2);
    let ss = ph.to_state_space();
    let dt = 1e-3;
    let inputs = vec![DVector::zeros(2); 2000];
    let x0 = DVector::from_fn(6, |i, _| (i as f64 + 1.0).sin());
    let traj = simulate_lti(&ss, &inputs, &x0, dt).unwrap();
    let energy: Vec<f64> = traj.states.iter().map(|x| 0.5 * x.dot(&(ph.q() * x))).collect();
    for w in energy.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
    }
}

#[test]
fn pole_at_sample_carries_the_point() {
    let ss = phsyn::StateSpace::new(
        DMatrix::from_element(1, 1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    match eval_transfer(&ss, C::new(0.0, 0.0)) {
        Err(phsyn::Error::PoleAtSample { s }) => assert_eq!(s, C::new(0.0, 0.0)),
        other => panic!("expected a pole error, got {other:?}"),
    }
}
