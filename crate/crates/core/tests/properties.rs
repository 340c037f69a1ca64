//! Cross-module invariants as property tests.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use waveobs::control::{
    assemble_control_map, assemble_observation_map, hum_control, observability_constant, observability_sweep,
    refinement_stable, ControlProblem,
};
use waveobs::evolution::evolve_homogeneous;
use waveobs::operators::{assemble_p, assemble_p_adjoint, shift_apply, SystemCoefficients};
use waveobs::window::{hs_time_norm, make_window, BoundaryWindow};
use waveobs::{ks_norm, Error, SpectralGrid, VectorState, C64};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale)
}

fn random_coefficients(n: usize, seed: u64) -> SystemCoefficients {
    let mut r = rng(seed);
    SystemCoefficients::cosine_profile(
        random_matrix(n, 1.0, &mut r),
        random_matrix(n, 1.0, &mut r),
        random_matrix(n, 4.0, &mut r),
        random_matrix(n, 4.0, &mut r),
    )
    .unwrap()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn l2(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn max_gap(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn both(horizon: f64) -> BoundaryWindow {
    BoundaryWindow::both(make_window(horizon, 0.1 * horizon, 0.9 * horizon, 0.6).unwrap())
}

fn coeff_vec() -> impl Strategy<Value = Vec<C64>> {
    proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..24)
        .prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ks_norm_scaling_and_monotone(a in coeff_vec(), s in -3.0f64..3.0, ds in 0.01f64..2.0, c in (-4.0f64..4.0, -4.0f64..4.0)) {
        let c = C64::new(c.0, c.1);
        let base = ks_norm(&a, s).unwrap();
        let scaled: Vec<C64> = a.iter().map(|x| x * c).collect();
        prop_assert!((ks_norm(&scaled, s).unwrap() - c.norm() * base).abs() <= 1e-12 * base.max(1.0) * c.norm().max(1.0));
        if a.iter().any(|x| x.norm() > 0.0) {
            prop_assert!(ks_norm(&a, s + ds).unwrap() > base);
        }
    }

    #[test]
    fn parseval_on_grid(a in coeff_vec()) {
        let grid = SpectralGrid::new(a.len()).unwrap();
        let samples = grid.reconstruct(&a);
        let l2_norm = grid.l2_norm_of_samples(&samples);
        prop_assert!((l2_norm - ks_norm(&a, 0.0).unwrap()).abs() <= 1e-8 * l2_norm.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adjoint_identity(seed in any::<u64>(), n in 1usize..4, m in 2usize..14) {
        let coeffs = random_coefficients(n, seed);
        let grid = SpectralGrid::new(m).unwrap();
        let p = assemble_p(&coeffs, &grid).unwrap();
        let pa = assemble_p_adjoint(&coeffs, &grid).unwrap();
        let mut r = rng(seed ^ 1);
        let u = VectorState::random(n, m, 0.0, m, &mut r).unwrap();
        let v = VectorState::random(n, m, 0.0, m, &mut r).unwrap();
        let (u, v) = (u.displacement(), v.velocity());
        let gap = dot(&p.apply(u).unwrap(), v) - dot(u, &pa.apply(v).unwrap());
        prop_assert!(gap.norm() <= 1e-8 * l2(u) * l2(v));
    }

    #[test]
    fn shift_commutes_with_p(seed in any::<u64>(), mu in 0.5f64..100.0, r in 1u32..4) {
        let coeffs = random_coefficients(2, seed);
        let op = assemble_p(&coeffs, &SpectralGrid::new(8).unwrap()).unwrap();
        let v = VectorState::random(2, 8, 0.0, 8, &mut rng(seed ^ 2)).unwrap();
        let a = shift_apply(&op.apply(v.displacement()).unwrap(), mu, r, &op).unwrap();
        let b = op.apply(&shift_apply(v.displacement(), mu, r, &op).unwrap()).unwrap();
        prop_assert!(max_gap(&a, &b) <= 1e-12 * l2(&a).max(1.0));
    }

    #[test]
    fn evolution_reversible_and_linear(seed in any::<u64>(), horizon in 0.2f64..2.0, alpha in -3.0f64..3.0) {
        let coeffs = random_coefficients(2, seed);
        let m = 8;
        let op = assemble_p(&coeffs, &SpectralGrid::new(m).unwrap()).unwrap();
        let mut r = rng(seed ^ 3);
        let a = VectorState::random(2, m, 0.0, m, &mut r).unwrap();
        let b = VectorState::random(2, m, 0.0, m, &mut r).unwrap();
        let fa = evolve_homogeneous(&a, &op, horizon, 128).unwrap();
        let back = evolve_homogeneous(fa.last(), &op, -horizon, 128).unwrap();
        prop_assert!(max_gap(back.last().coeffs(), a.coeffs()) <= 1e-10);

        let fb = evolve_homogeneous(&b, &op, horizon, 128).unwrap();
        let mix: Vec<C64> = a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x * alpha + y).collect();
        let mixed = VectorState::new(2, m, 0.0, mix).unwrap();
        let fm = evolve_homogeneous(&mixed, &op, horizon, 128).unwrap();
        let expect: Vec<C64> = fa.last().coeffs().iter().zip(fb.last().coeffs()).map(|(x, y)| x * alpha + y).collect();
        prop_assert!(max_gap(fm.last().coeffs(), &expect) <= 1e-10 * l2(&expect).max(1.0));
    }

    #[test]
    fn shifted_solution_property(seed in any::<u64>(), mu in 1.0f64..20.0) {
        let coeffs = random_coefficients(1, seed);
        let m = 8;
        let op = assemble_p(&coeffs, &SpectralGrid::new(m).unwrap()).unwrap();
        let st = VectorState::random(1, m, 0.0, m, &mut rng(seed ^ 4)).unwrap();
        let traj = evolve_homogeneous(&st, &op, 1.0, 64).unwrap();
        let shift = |s: &VectorState| {
            let u = shift_apply(s.displacement(), mu, 1, &op).unwrap();
            let v = shift_apply(s.velocity(), mu, 1, &op).unwrap();
            VectorState::from_parts(1, m, 0.0, &u, &v).unwrap()
        };
        let moved = evolve_homogeneous(&shift(&st), &op, 1.0, 64).unwrap();
        for (a, b) in traj.states().iter().zip(moved.states()) {
            let sa = shift(a);
            prop_assert!(max_gap(sa.coeffs(), b.coeffs()) <= 1e-10 * l2(b.coeffs()).max(1.0));
        }
    }

    #[test]
    fn time_norm_grows_with_nonnegative_level(seed in any::<u64>(), s in 0.0f64..2.0, ds in 0.0f64..1.5) {
        let op = assemble_p(&SystemCoefficients::zero(1).unwrap(), &SpectralGrid::new(6).unwrap()).unwrap();
        let st = VectorState::random(1, 6, 0.0, 6, &mut rng(seed)).unwrap();
        let tr = waveobs::evolution::normal_trace(&evolve_homogeneous(&st, &op, 2.0, 256).unwrap()).unwrap();
        let w = both(2.0);
        prop_assert!(hs_time_norm(&tr, s + ds, &w).unwrap() >= hs_time_norm(&tr, s, &w).unwrap() * (1.0 - 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// `sigma_min > 0` exactly when the numerical rank is full.
    #[test]
    fn injectivity_matches_rank(seed in any::<u64>(), horizon in 0.3f64..2.5, left in any::<bool>()) {
        let coeffs = random_coefficients(1, seed);
        let m = 6;
        let op = assemble_p(&coeffs, &SpectralGrid::new(m).unwrap()).unwrap();
        let w = make_window(horizon, 0.1 * horizon, 0.9 * horizon, 0.6).unwrap();
        let window = if left { BoundaryWindow::left_only(w) } else { BoundaryWindow::both(w) };
        let map = assemble_observation_map(&op, &window, 0.0, horizon, 256).unwrap();
        let sv = map.singular_values();
        let rank = sv.iter().filter(|&&x| x >= 1e-13).count();
        prop_assert_eq!(observability_constant(&map).is_ok(), rank == 2 * m);
    }
}

/// Minimal-norm solution: every kernel perturbation still reaches the target
/// and costs more.
#[test]
fn hum_is_minimal_over_kernel_perturbations() {
    let (m, horizon, steps) = (8, 2.5, 1024);
    let coeffs = SystemCoefficients::constant(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, C64::new(2.0, 0.0))).unwrap();
    let grid = SpectralGrid::new(m).unwrap();
    let p = assemble_p(&coeffs, &grid).unwrap();
    let pa = assemble_p_adjoint(&coeffs, &grid).unwrap();
    let window = both(horizon);
    let harmonics = ControlProblem::default_harmonics(m, horizon, steps);
    let mut r = rng(31);
    let target = VectorState::random(1, m, 0.0, 4, &mut r).unwrap();
    let problem = ControlProblem { target: target.clone(), window, horizon, steps, harmonics };
    let sol = hum_control(&problem, &p, &pa, 0.0).unwrap();
    assert!(sol.relative_error <= 1e-6);

    let map = assemble_control_map(&p, &window, 0.0, horizon, steps, harmonics).unwrap();
    let scaled = map.scaled();
    let y = DVector::from_iterator(
        scaled.ncols(),
        sol.data.coeffs().iter().zip(&map.control_weights).map(|(c, w)| c * *w),
    );
    let svd = scaled.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let reached = &scaled * &y;
    for _ in 0..10 {
        let z = DVector::from_fn(scaled.ncols(), |_, _| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5));
        // Remove the row-space part; what is left lies in the kernel.
        let kernel = &z - vt.adjoint() * (&vt * &z);
        assert!(kernel.norm() > 1e-3);
        let perturbed = &y + &kernel;
        assert!((&scaled * &perturbed - &reached).norm() <= 1e-8 * reached.norm());
        assert!(perturbed.norm() > y.norm());
        let coeffs: Vec<C64> = perturbed.iter().zip(&map.control_weights).map(|(c, w)| c / *w).collect();
        assert!(map.control_norm(&coeffs) > sol.control_norm);
    }
}

/// HUM succeeds, with a refinement-stable cost, exactly where the
/// observability constant is refinement-stable.
#[test]
fn controllability_matches_observability() {
    let free = SystemCoefficients::zero(1).unwrap();
    let cases = [
        (2.5, BoundaryWindow::both(make_window(2.5, 0.25, 2.25, 0.6).unwrap())),
        (2.5, BoundaryWindow::left_only(make_window(2.5, 0.25, 2.25, 0.6).unwrap())),
        (0.5, BoundaryWindow::left_only(make_window(0.5, 0.05, 0.45, 0.6).unwrap())),
        (1.0, BoundaryWindow::none()),
    ];
    let steps = 1024;
    let levels = [8, 16, 32];
    for (horizon, window) in cases {
        let consts = observability_sweep(&free, &levels, &window, 0.0, horizon, steps).unwrap();
        let observable = refinement_stable(&consts, 0.1);
        let mut costs = Vec::new();
        let mut reached = true;
        for m in levels {
            let op = assemble_p(&free, &SpectralGrid::new(m).unwrap()).unwrap();
            let target = VectorState::random(1, m, 0.0, 8, &mut rng(41)).unwrap();
            let problem = ControlProblem {
                target,
                window,
                horizon,
                steps,
                harmonics: ControlProblem::default_harmonics(m, horizon, steps),
            };
            match hum_control(&problem, &op, &op, 0.0) {
                Ok(sol) => {
                    reached &= sol.relative_error <= 1e-4;
                    costs.push(Some(1.0 / sol.sigma_min));
                }
                Err(Error::IllPosedControl { .. }) => {
                    reached = false;
                    costs.push(None);
                }
                Err(e) => panic!("{e}"),
            }
        }
        let controlled = reached && refinement_stable(&costs, 0.1);
        assert_eq!(controlled, observable, "T = {horizon}, constants {consts:?}, costs {costs:?}");
    }
}
