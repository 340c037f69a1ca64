//! Observation maps, observability constants, minimal-norm boundary control,
//! the ellipticity-of-`d_t` inequality and the regularity-shift sweep.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolution::{
    boundary_pairing, evolve_backward, evolve_homogeneous, evolve_inhomogeneous, normal_trace,
    trace_operator, FourierBoundaryData, Propagator, TraceSignal,
};
use crate::operators::{assemble_p, weighted_norm, GalerkinOperator, SystemCoefficients};
use crate::spectral::{dirichlet_eigenvalue, SpectralGrid, VectorState, C64};
use crate::window::{hs_time_norm, BoundaryWindow, SobolevSpectrum};

/// Below this `sigma_min` the observation map is treated as not injective.
pub const OBSERVABILITY_FLOOR: f64 = 1e-13;
/// Below this `sigma_min` the weighted control map is treated as not surjective.
pub const CONTROL_FLOOR: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Neumann traces of every unit initial datum `e_j`, `j < 2 N M`.
///
/// `series[e * N + n]` is an `(Nt + 1) x 2D` matrix whose row `i` holds the
/// trace at `t_i` for all columns at once.
#[derive(Debug, Clone)]
pub struct TraceBank {
    components: usize,
    modes: usize,
    horizon: f64,
    steps: usize,
    series: Vec<DMatrix<C64>>,
}

impl TraceBank {
    /// Rows follow `R_{i+1} = R_i E` with `R_0` the trace operator, so row `i`
    /// is the trace at time `i * horizon / steps` (negative horizon runs backward).
    pub fn new(op: &GalerkinOperator, horizon: f64, steps: usize) -> Result<Self> {
        let prop = Propagator::new(op, horizon, steps)?;
        let n = op.components();
        let m = op.modes();
        let c = trace_operator(n, m);
        let mut series = vec![DMatrix::zeros(steps + 1, 2 * n * m); 2 * n];
        let mut r = c;
        for i in 0..=steps {
            for (row, s) in series.iter_mut().enumerate() {
                s.row_mut(i).copy_from(&r.row(row));
            }
            if i < steps {
                r = &r * prop.step_matrix();
            }
        }
        Ok(Self { components: n, modes: m, horizon, steps, series })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `(Nt + 1) x 2D` trace block for endpoint `e` and component `n`.
    pub fn block(&self, e: usize, n: usize) -> &DMatrix<C64> {
        &self.series[e * self.components + n]
    }
}

/// Scale of basis datum `j` making it unit in `K^{s+1} x K^s`.
pub fn unit_weight(j: usize, components: usize, modes: usize, s: f64) -> f64 {
    let d = components * modes;
    let k = j % modes + 1;
    let level = if j < d { s + 1.0 } else { s };
    (1.0 + dirichlet_eigenvalue(k)).powf(-0.5 * level)
}

/// Discrete `(u0, u1) -> Theta d_nu u` in unit-weighted coordinates.
#[derive(Debug, Clone)]
pub struct ObservationMap {
    matrix: DMatrix<C64>,
    singular_values: Vec<f64>,
    level: f64,
    window: BoundaryWindow,
    horizon: f64,
    steps: usize,
    components: usize,
    modes: usize,
}

impl ObservationMap {
    /// Rows are the weighted, padded spectra of `Theta_e d_nu u_n` stacked over
    /// `(e, n)`; unobserved endpoints give zero rows.
    pub fn from_bank(bank: &TraceBank, window: &BoundaryWindow, s: f64) -> Result<Self> {
        if bank.horizon() <= 0.0 {
            return Err(Error::InvalidArgument("observation needs a forward trace bank".into()));
        }
        window.check_horizon(bank.horizon())?;
        let (n, m, steps) = (bank.components(), bank.modes(), bank.steps());
        let len = steps + 1;
        let cols = 2 * n * m;
        let spectrum = SobolevSpectrum::new(len, bank.horizon() / steps as f64, s)?;
        let padded = spectrum.padded_len();
        let theta = window.sample(steps);
        let weights: Vec<f64> = (0..cols).map(|j| unit_weight(j, n, m, s)).collect();
        let mut matrix = DMatrix::<C64>::zeros(2 * n * padded, cols);
        for e in 0..2 {
            if window.endpoint(e).is_none() {
                continue;
            }
            for comp in 0..n {
                let block = bank.block(e, comp);
                let columns: Vec<Vec<C64>> = (0..cols)
                    .into_par_iter()
                    .map(|j| {
                        let g: Vec<C64> =
                            (0..len).map(|i| block[(i, j)] * (theta[e][i] * weights[j])).collect();
                        spectrum.transform(&g)
                    })
                    .collect();
                let offset = (e * n + comp) * padded;
                for (j, col) in columns.iter().enumerate() {
                    matrix.view_mut((offset, j), (padded, 1)).copy_from_slice(col);
                }
            }
        }
        let singular_values = sorted_singular_values(&matrix);
        Ok(Self { matrix, singular_values, level: s, window: *window, horizon: bank.horizon(), steps, components: n, modes: m })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    /// Descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn sigma_min(&self) -> f64 {
        *self.singular_values.last().unwrap_or(&0.0)
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn window(&self) -> &BoundaryWindow {
        &self.window
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Unit-weighted basis datum behind column `j`.
    pub fn basis_state(&self, j: usize) -> Result<VectorState> {
        let d = 2 * self.components * self.modes;
        if j >= d {
            return Err(Error::InvalidArgument(format!("column {j} out of range {d}")));
        }
        let mut coeffs = vec![ZERO; d];
        coeffs[j] = C64::from(unit_weight(j, self.components, self.modes, self.level));
        VectorState::new(self.components, self.modes, self.level, coeffs)
    }
}

/// Singular values in descending order; tall matrices go through QR first.
pub fn sorted_singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    if m.ncols() == 0 {
        return Vec::new();
    }
    if m.nrows() == 0 {
        return vec![0.0; m.ncols()];
    }
    let mut sv: Vec<f64> = if m.nrows() > m.ncols() {
        m.clone().qr().r().singular_values().iter().copied().collect()
    } else {
        m.clone().singular_values().iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(m.ncols(), 0.0);
    sv
}

pub fn assemble_observation_map(
    op: &GalerkinOperator,
    window: &BoundaryWindow,
    s: f64,
    horizon: f64,
    steps: usize,
) -> Result<ObservationMap> {
    let bank = TraceBank::new(op, horizon, steps)?;
    ObservationMap::from_bank(&bank, window, s)
}

/// `1 / sigma_min`, or [`Error::NonObservable`] below [`OBSERVABILITY_FLOOR`].
pub fn observability_constant(map: &ObservationMap) -> Result<f64> {
    let sigma = map.sigma_min();
    if !(sigma >= OBSERVABILITY_FLOOR) {
        return Err(Error::NonObservable { sigma_min: sigma });
    }
    Ok(1.0 / sigma)
}

/// Recomputes column `j` of the map by an independent evolution.
pub fn recompute_column(map: &ObservationMap, op: &GalerkinOperator, j: usize) -> Result<Vec<C64>> {
    let st = map.basis_state(j)?;
    let traj = evolve_homogeneous(&st, op, map.horizon, map.steps)?;
    let tr = normal_trace(&traj)?;
    let len = map.steps + 1;
    let spectrum = SobolevSpectrum::new(len, map.horizon / map.steps as f64, map.level)?;
    let theta = map.window.sample(map.steps);
    let mut out = Vec::with_capacity(map.matrix.nrows());
    for e in 0..2 {
        for n in 0..map.components {
            if map.window.endpoint(e).is_none() {
                out.extend(std::iter::repeat_n(ZERO, spectrum.padded_len()));
                continue;
            }
            let g: Vec<C64> = tr.series(e, n).iter().zip(&theta[e]).map(|(g, w)| g * *w).collect();
            out.extend(spectrum.transform(&g));
        }
    }
    Ok(out)
}

/// `C_obs` at each mode count for fixed coefficients; `None` marks non-observable.
pub fn observability_sweep(
    coeffs: &SystemCoefficients,
    modes: &[usize],
    window: &BoundaryWindow,
    s: f64,
    horizon: f64,
    steps: usize,
) -> Result<Vec<Option<f64>>> {
    modes
        .par_iter()
        .map(|&m| {
            let grid = SpectralGrid::new(m)?;
            let op = assemble_p(coeffs, &grid)?;
            let map = assemble_observation_map(&op, window, s, horizon, steps)?;
            match observability_constant(&map) {
                Ok(c) => Ok(Some(c)),
                Err(Error::NonObservable { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// `|C(last) / C(previous) - 1| <= tol` with both constants finite.
pub fn refinement_stable(constants: &[Option<f64>], tol: f64) -> bool {
    match constants {
        [.., Some(prev), Some(last)] => (last / prev - 1.0).abs() <= tol,
        _ => false,
    }
}

/// Target `(phi0, phi1)` to be reached at time `T` by boundary data `Theta f`.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub target: VectorState,
    pub window: BoundaryWindow,
    pub horizon: f64,
    pub steps: usize,
    /// Harmonics `K` of the Fourier time basis, `|h| <= K`.
    pub harmonics: usize,
}

impl ControlProblem {
    /// `K = ceil(M T / 2) + 8`, capped at `Nt / 8`, enough to resolve the
    /// highest eigenfrequency `M pi` with the basis spacing `2 pi / T`.
    pub fn default_harmonics(modes: usize, horizon: f64, steps: usize) -> usize {
        (((modes as f64) * horizon / 2.0).ceil() as usize + 8).min(steps / 8)
    }
}

/// Discrete control map `f -> (v(T), v_t(T))` with its weights.
#[derive(Debug, Clone)]
pub struct ControlMap {
    /// `2D x 2N(2K+1)`, built by duality from backward solves with `P`.
    pub matrix: DMatrix<C64>,
    /// Square roots of the `K^s x K^{s-1}` target weights.
    pub target_weights: Vec<f64>,
    /// Square roots of the periodic `H^s(0, T)` weights of each basis function.
    pub control_weights: Vec<f64>,
    pub components: usize,
    pub modes: usize,
    pub harmonics: usize,
    pub horizon: f64,
}

impl ControlMap {
    /// Scaled map `W_t K W_f^{-1}`.
    pub fn scaled(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.matrix.nrows(), self.matrix.ncols(), |r, c| {
            self.matrix[(r, c)] * (self.target_weights[r] / self.control_weights[c])
        })
    }

    pub fn control_norm(&self, coeffs: &[C64]) -> f64 {
        coeffs
            .iter()
            .zip(&self.control_weights)
            .map(|(c, w)| (c * *w).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn target_norm(&self, state: &[C64]) -> f64 {
        state
            .iter()
            .zip(&self.target_weights)
            .map(|(c, w)| (c * *w).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Assembles `K` from the backward traces of `P` (the adjoint of the `P*` control problem):
/// `v(T)_j = -int conj(Tr u^{(0, e_j)}) Theta f` and
/// `v_t(T)_j = int conj(Tr u^{(e_j, 0)}) Theta f`, `u` solved backward from `T`.
pub fn assemble_control_map(
    op: &GalerkinOperator,
    window: &BoundaryWindow,
    s: f64,
    horizon: f64,
    steps: usize,
    harmonics: usize,
) -> Result<ControlMap> {
    window.check_horizon(horizon)?;
    let n = op.components();
    let m = op.modes();
    let d = n * m;
    let width = 2 * harmonics + 1;
    let bank = TraceBank::new(op, -horizon, steps)?;
    let dt = horizon / steps as f64;
    let theta = window.sample(steps);
    let basis = FourierBoundaryData::zeros(n, harmonics, horizon)?;
    // fourier[(i, h)] = trapezoid weight * Theta-free basis value at t_i.
    let fourier = DMatrix::from_fn(steps + 1, width, |i, h| {
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        C64::from_polar(w * dt, basis.frequency(h) * i as f64 * dt)
    });
    let mut matrix = DMatrix::<C64>::zeros(2 * d, 2 * n * width);
    for e in 0..2 {
        if window.endpoint(e).is_none() {
            continue;
        }
        for comp in 0..n {
            // Row i of the backward bank is the trace at time T - i dt.
            let block = bank.block(e, comp);
            let traces = DMatrix::from_fn(2 * d, steps + 1, |col, i| {
                block[(steps - i, col)].conj() * theta[e][i]
            });
            let integrals = traces * &fourier;
            let offset = (e * n + comp) * width;
            for r in 0..d {
                for h in 0..width {
                    matrix[(r, offset + h)] = -integrals[(d + r, h)];
                    matrix[(d + r, offset + h)] = integrals[(r, h)];
                }
            }
        }
    }
    let target_weights = (0..2 * d)
        .map(|r| {
            let k = r % m + 1;
            let level = if r < d { s } else { s - 1.0 };
            (1.0 + dirichlet_eigenvalue(k)).powf(0.5 * level)
        })
        .collect();
    let control_weights = (0..2 * n * width)
        .map(|c| {
            let omega = basis.frequency(c % width);
            (horizon * (1.0 + omega * omega).powf(s)).sqrt()
        })
        .collect();
    Ok(ControlMap { matrix, target_weights, control_weights, components: n, modes: m, harmonics, horizon })
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub data: FourierBoundaryData,
    /// `||(v(T), v_t(T)) - target|| / ||target||` in `K^s x K^{s-1}`, from a forward solve.
    pub relative_error: f64,
    pub control_norm: f64,
    pub sigma_min: f64,
}

/// Minimal-norm `f` with `K f = target` via the weighted SVD pseudoinverse,
/// checked by a forward solve of `v_tt = P* v`.
pub fn hum_control(
    problem: &ControlProblem,
    p: &GalerkinOperator,
    p_adjoint: &GalerkinOperator,
    s: f64,
) -> Result<ControlSolution> {
    let map = assemble_control_map(p, &problem.window, s, problem.horizon, problem.steps, problem.harmonics)?;
    let n = p.components();
    let target = &problem.target;
    if target.components() != n || target.modes() != p.modes() {
        return Err(Error::InvalidArgument("target shape does not match the operator".into()));
    }
    let scaled = map.scaled();
    let svd = scaled.clone().svd(true, true);
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sigma_min >= CONTROL_FLOOR) {
        return Err(Error::IllPosedControl { sigma_min });
    }
    if target.is_zero() {
        let data = FourierBoundaryData::zeros(n, problem.harmonics, problem.horizon)?;
        return Ok(ControlSolution { data, relative_error: 0.0, control_norm: 0.0, sigma_min });
    }
    let rhs = DVector::from_iterator(
        target.coeffs().len(),
        target.coeffs().iter().zip(&map.target_weights).map(|(c, w)| c * *w),
    );
    let y = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Numerical(format!("pseudoinverse failed: {e}")))?;
    let coeffs: Vec<C64> = y.iter().zip(&map.control_weights).map(|(c, w)| c / *w).collect();
    let control_norm = map.control_norm(&coeffs);
    let data = FourierBoundaryData::new(n, problem.harmonics, problem.horizon, coeffs)?;
    let sol = evolve_inhomogeneous(&data, &problem.window, p_adjoint, problem.horizon, problem.steps)?;
    let reached = sol.final_state().coeffs();
    let miss: Vec<C64> = reached.iter().zip(target.coeffs()).map(|(a, b)| a - b).collect();
    let relative_error = map.target_norm(&miss) / map.target_norm(target.coeffs());
    Ok(ControlSolution { data, relative_error, control_norm, sigma_min })
}

/// `K* y = Theta d_nu^out u` with `u` solving `u_tt = P u` backward from
/// `(u, u_t)(T) = (-y1, y0)`, so that `<K f, y> = <f, K* y>` in `L^2`.
pub fn control_adjoint(
    y: &VectorState,
    p: &GalerkinOperator,
    window: &BoundaryWindow,
    horizon: f64,
    steps: usize,
) -> Result<TraceSignal> {
    window.check_horizon(horizon)?;
    let neg: Vec<C64> = y.velocity().iter().map(|c| -c).collect();
    let start = VectorState::from_parts(y.components(), y.modes(), y.level(), &neg, y.displacement())?;
    let u = evolve_backward(&start, p, horizon, steps)?;
    let tr = normal_trace(&u)?;
    let theta = window.sample(steps);
    let len = steps + 1;
    let mut values = tr.values().to_vec();
    for e in 0..2 {
        for n in 0..y.components() {
            let start = (e * y.components() + n) * len;
            for i in 0..len {
                values[start + i] *= -theta[e][i];
            }
        }
    }
    TraceSignal::new(y.components(), horizon, values)
}

/// `<f, g>` over `(0, T) x boundary` for Fourier data against sampled signals.
pub fn control_pairing(f: &FourierBoundaryData, g: &TraceSignal) -> Result<C64> {
    let steps = g.len() - 1;
    let dt = g.dt();
    let mut values = Vec::with_capacity(g.values().len());
    for e in 0..2 {
        for n in 0..f.components() {
            values.extend((0..=steps).map(|i| f.value(e, n, i as f64 * dt)));
        }
    }
    boundary_pairing(&TraceSignal::new(f.components(), g.horizon(), values)?, g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `||Theta d_nu u||_{H^s}` against
/// `||Theta d_t^{2r} d_nu u||_{H^{s-2r}} + ||u0||_{K^{s+1/2}} + ||u1||_{K^{s-1/2}}`;
/// `d_t^{2r} d_nu u` is the trace of the solution with data `P^r (u0, u1)`.
/// Returns `None` for the zero state.
pub fn dt_ellipticity(
    state: &VectorState,
    op: &GalerkinOperator,
    window: &BoundaryWindow,
    s: f64,
    r: u32,
    horizon: f64,
    steps: usize,
) -> Result<Option<EllipticityReport>> {
    check_ellipticity_hypotheses(s, r)?;
    if state.is_zero() {
        return Ok(None);
    }
    let trace = normal_trace(&evolve_homogeneous(state, op, horizon, steps)?)?;
    let mut u = state.displacement().to_vec();
    let mut v = state.velocity().to_vec();
    for _ in 0..r {
        u = op.apply(&u)?;
        v = op.apply(&v)?;
    }
    let lifted = VectorState::from_parts(state.components(), state.modes(), state.level(), &u, &v)?;
    let high = normal_trace(&evolve_homogeneous(&lifted, op, horizon, steps)?)?;
    let m = state.modes();
    let lhs = hs_time_norm(&trace, s, window)?;
    let rhs = hs_time_norm(&high, s - 2.0 * f64::from(r), window)?
        + weighted_norm(state.displacement(), m, s + 0.5)
        + weighted_norm(state.velocity(), m, s - 0.5);
    Ok(Some(EllipticityReport { lhs, rhs, ratio: lhs / rhs }))
}

fn check_ellipticity_hypotheses(s: f64, r: u32) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::InvalidArgument("Sobolev index must be finite".into()));
    }
    if s <= -1.0 {
        return Err(Error::HypothesisViolation(format!("ellipticity of d_t needs s > -1, got {s}")));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticitySweep {
    /// `(M, max ratio, min ratio)` per refinement level.
    pub levels: Vec<(usize, f64, f64)>,
    pub trials: usize,
}

impl EllipticitySweep {
    /// Relative spread of the max ratio between the last two levels.
    pub fn variation(&self) -> f64 {
        match self.levels.as_slice() {
            [.., (_, a, _), (_, b, _)] => (b / a - 1.0).abs(),
            _ => 0.0,
        }
    }
}

/// Same random states (first `active_modes` modes, unit `K^{s+1} x K^s` weight
/// per mode) evaluated at every mode count.
#[allow(clippy::too_many_arguments)]
pub fn dt_ellipticity_check(
    coeffs: &SystemCoefficients,
    modes: &[usize],
    window: &BoundaryWindow,
    s: f64,
    r: u32,
    horizon: f64,
    steps: usize,
    trials: usize,
    active_modes: usize,
    seed: u64,
) -> Result<EllipticitySweep> {
    check_ellipticity_hypotheses(s, r)?;
    let n = coeffs.components();
    let min_m = modes.iter().copied().min().unwrap_or(0);
    if active_modes > min_m {
        return Err(Error::InvalidArgument(format!(
            "{active_modes} active modes exceed the coarsest level {min_m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<VectorState> = (0..trials)
        .map(|_| VectorState::random(n, active_modes, s, active_modes, &mut rng))
        .collect::<Result<_>>()?;
    let levels = modes
        .par_iter()
        .map(|&m| {
            let op = assemble_p(coeffs, &SpectralGrid::new(m)?)?;
            let mut max_ratio = 0.0f64;
            let mut min_ratio = f64::INFINITY;
            for st in &base {
                let st = embed(st, m)?;
                if let Some(rep) = dt_ellipticity(&st, &op, window, s, r, horizon, steps)? {
                    max_ratio = max_ratio.max(rep.ratio);
                    min_ratio = min_ratio.min(rep.ratio);
                }
            }
            Ok((m, max_ratio, min_ratio))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EllipticitySweep { levels, trials })
}

/// Pads a state with zero modes up to `modes`.
pub fn embed(state: &VectorState, modes: usize) -> Result<VectorState> {
    let (n, m) = (state.components(), state.modes());
    if modes < m {
        return Err(Error::InvalidArgument("cannot embed into fewer modes".into()));
    }
    let mut coeffs = vec![ZERO; 2 * n * modes];
    for slot in 0..2 {
        for comp in 0..n {
            let dst = (slot * n + comp) * modes;
            coeffs[dst..dst + m].copy_from_slice(state.component(slot, comp));
        }
    }
    VectorState::new(n, modes, state.level(), coeffs)
}

/// Inputs of the regularity-shift sweep.
#[derive(Debug, Clone)]
pub struct ShiftExperiment {
    pub coefficients: SystemCoefficients,
    pub modes: Vec<usize>,
    pub levels: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    /// Theta_1.
    pub inner: BoundaryWindow,
    /// Theta_2, positive on the support of Theta_1 (containment may be non-strict).
    pub outer: BoundaryWindow,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub level: f64,
    pub modes: usize,
    /// 1 for Theta_1, 2 for Theta_2.
    pub window_id: u8,
    pub c_obs: Option<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTable {
    pub rows: Vec<ShiftRow>,
    /// Stable at `s1` implies stable at every `s2 > s1`, same window.
    pub increasing_holds: bool,
    /// Stable at `s1` with Theta_1 implies stable at every `s2 < s1` with Theta_2.
    pub decreasing_holds: bool,
    /// Theta_2 > 0 on the closed support of Theta_1 at every observed endpoint.
    pub strict_enlargement: bool,
}

impl ShiftTable {
    pub fn stable(&self, level: f64, window_id: u8) -> bool {
        self.rows.iter().any(|r| r.level == level && r.window_id == window_id && r.stable)
    }
}

pub fn regularity_shift_experiment(exp: &ShiftExperiment) -> Result<ShiftTable> {
    if !exp.outer.covers(&exp.inner) {
        return Err(Error::InvalidConfiguration(
            "the enlarged window must contain the support of the inner window".into(),
        ));
    }
    if exp.modes.len() < 2 {
        return Err(Error::InvalidConfiguration("refinement needs at least two mode counts".into()));
    }
    let strict_enlargement = exp.outer.positive_on_support_of(&exp.inner);
    let windows = [(1u8, exp.inner), (2u8, exp.outer)];
    // One trace bank per mode count, shared by every level and window.
    let banks = exp
        .modes
        .par_iter()
        .map(|&m| {
            let op = assemble_p(&exp.coefficients, &SpectralGrid::new(m)?)?;
            TraceBank::new(&op, exp.horizon, exp.steps)
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize, usize)> = (0..exp.levels.len())
        .flat_map(|si| (0..2).flat_map(move |wi| (0..exp.modes.len()).map(move |mi| (si, wi, mi))))
        .collect();
    let constants = cells
        .par_iter()
        .map(|&(si, wi, mi)| {
            let map = ObservationMap::from_bank(&banks[mi], &windows[wi].1, exp.levels[si])?;
            match observability_constant(&map) {
                Ok(c) => Ok(Some(c)),
                Err(Error::NonObservable { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let nm = exp.modes.len();
    let mut rows = Vec::with_capacity(cells.len());
    let mut stable = vec![[false; 2]; exp.levels.len()];
    for (chunk, cell) in constants.chunks(nm).zip(cells.chunks(nm)) {
        let (si, wi, _) = cell[0];
        let ok = refinement_stable(chunk, exp.tolerance);
        stable[si][wi] = ok;
        for (c, &(_, _, mi)) in chunk.iter().zip(cell) {
            rows.push(ShiftRow {
                level: exp.levels[si],
                modes: exp.modes[mi],
                window_id: windows[wi].0,
                c_obs: *c,
                stable: ok,
            });
        }
    }
    let levels = &exp.levels;
    let pairs = || (0..levels.len()).flat_map(|a| (0..levels.len()).map(move |b| (a, b)));
    let increasing_holds = (0..2).all(|w| {
        pairs().all(|(a, b)| !(levels[b] > levels[a] && stable[a][w]) || stable[b][w])
    });
    let decreasing_holds =
        pairs().all(|(a, b)| !(levels[b] < levels[a] && stable[a][0]) || stable[b][1]);
    Ok(ShiftTable { rows, increasing_holds, decreasing_holds, strict_enlargement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::assemble_p_adjoint;
    use crate::window::make_window;
    use std::f64::consts::PI;

    fn free_op(m: usize) -> GalerkinOperator {
        assemble_p(&SystemCoefficients::zero(1).unwrap(), &SpectralGrid::new(m).unwrap()).unwrap()
    }

    #[test]
    fn zero_window_is_not_observable() {
        let map = assemble_observation_map(&free_op(6), &BoundaryWindow::none(), 0.0, 2.0, 128).unwrap();
        assert!(map.matrix().iter().all(|c| *c == ZERO));
        assert_eq!(map.sigma_min(), 0.0);
        assert!(matches!(observability_constant(&map), Err(Error::NonObservable { .. })));
    }

    #[test]
    fn columns_recompute_and_singular_values_sorted() {
        let c = |re: f64, im: f64| C64::new(re, im);
        let coeffs = SystemCoefficients::cosine_profile(
            DMatrix::from_row_slice(2, 2, &[c(0.2, 0.0), c(0.0, 0.1), c(0.1, 0.0), c(0.0, 0.0)]),
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.3, 0.0), c(0.0, 0.0), c(0.5, 0.0)]),
            DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.2), c(0.0, 0.0), c(0.0, 0.0)]),
        )
        .unwrap();
        let op = assemble_p(&coeffs, &SpectralGrid::new(6).unwrap()).unwrap();
        let w = BoundaryWindow::left_only(make_window(2.0, 0.2, 1.8, 0.4).unwrap());
        let map = assemble_observation_map(&op, &w, 0.5, 2.0, 256).unwrap();
        for j in [0, 7, 13, 23] {
            let col = recompute_column(&map, &op, j).unwrap();
            let err = col
                .iter()
                .zip(map.matrix().column(j).iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "column {j}: {err}");
        }
        let sv = map.singular_values();
        assert!(sv.windows(2).all(|p| p[0] >= p[1]) && sv.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn full_period_parseval_bounds() {
        // Unwindowed over one period T = 2, a unit K^1 x K^0 datum has trace
        // energy 2 (k pi)^2 / (1 + (k pi)^2) or 2 / (1 + 0) per endpoint, never above 2.
        let horizon = 2.0;
        let w = BoundaryWindow::both(make_window(horizon, 0.05, 1.95, 0.9).unwrap());
        let sig = |m: usize| {
            let map = assemble_observation_map(&free_op(m), &w, 0.0, horizon, 1024).unwrap();
            (map.sigma_min(), map.singular_values()[0])
        };
        let (lo16, hi16) = sig(16);
        let (lo32, hi32) = sig(32);
        assert!(hi16 <= 2.0 + 1e-6 && hi32 <= 2.0 + 1e-6, "{hi16} {hi32}");
        assert!(lo16 > 0.3 && lo32 > 0.3, "{lo16} {lo32}");
        assert!((lo32 / lo16 - 1.0).abs() < 0.1);
        let floor = (2.0 * PI * PI / (1.0 + PI * PI)).sqrt();
        assert!(lo32 < floor * 2f64.sqrt());
    }

    #[test]
    fn hum_zero_target_and_random_target() {
        let m = 8;
        let op = free_op(m);
        let adj = assemble_p_adjoint(&SystemCoefficients::zero(1).unwrap(), &SpectralGrid::new(m).unwrap()).unwrap();
        let (horizon, steps) = (2.5, 1024);
        let w = BoundaryWindow::both(make_window(horizon, 0.25, 2.25, 0.6).unwrap());
        let harmonics = ControlProblem::default_harmonics(m, horizon, steps);
        let zero = ControlProblem {
            target: VectorState::zeros(1, m, 0.0).unwrap(),
            window: w,
            horizon,
            steps,
            harmonics,
        };
        let sol = hum_control(&zero, &op, &adj, 0.0).unwrap();
        assert_eq!(sol.relative_error, 0.0);
        assert!(sol.data.coeffs().iter().all(|c| *c == ZERO));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = VectorState::random(1, m, 0.0, 4, &mut rng).unwrap();
        let problem = ControlProblem { target, ..zero };
        let sol = hum_control(&problem, &op, &adj, 0.0).unwrap();
        assert!(sol.relative_error < 1e-4, "{}", sol.relative_error);
    }

    #[test]
    fn hum_rejects_short_one_sided_window() {
        let m = 12;
        let op = free_op(m);
        let adj = assemble_p_adjoint(&SystemCoefficients::zero(1).unwrap(), &SpectralGrid::new(m).unwrap()).unwrap();
        let w = BoundaryWindow::left_only(make_window(0.5, 0.05, 0.45, 0.2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let problem = ControlProblem {
            target: VectorState::random(1, m, 0.0, m, &mut rng).unwrap(),
            window: w,
            horizon: 0.5,
            steps: 512,
            harmonics: 4,
        };
        assert!(matches!(hum_control(&problem, &op, &adj, 0.0), Err(Error::IllPosedControl { .. })));
    }

    #[test]
    fn control_adjoint_pairing() {
        let m = 8;
        let op = free_op(m);
        let adj = assemble_p_adjoint(&SystemCoefficients::zero(1).unwrap(), &SpectralGrid::new(m).unwrap()).unwrap();
        let (horizon, steps) = (2.0, 1024);
        let w = BoundaryWindow::both(make_window(horizon, 0.2, 1.8, 0.4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = VectorState::random(1, m, 0.0, m, &mut rng).unwrap();
        let f = FourierBoundaryData::new(
            1,
            3,
            horizon,
            (0..14).map(|i| C64::new((i as f64).sin(), (2.0 * i as f64).cos())).collect(),
        )
        .unwrap();
        let kf = evolve_inhomogeneous(&f, &w, &adj, horizon, steps).unwrap();
        let left: C64 = kf.final_state().coeffs().iter().zip(y.coeffs()).map(|(a, b)| a * b.conj()).sum();
        let kstar = control_adjoint(&y, &op, &w, horizon, steps).unwrap();
        let right = control_pairing(&f, &kstar).unwrap();
        assert!((left - right).norm() < 1e-8 * left.norm().max(right.norm()), "{left} vs {right}");
    }

    #[test]
    fn ellipticity_hypothesis_and_zero_state() {
        let op = free_op(4);
        let w = BoundaryWindow::both(make_window(2.0, 0.2, 1.8, 0.4).unwrap());
        let st = VectorState::zeros(1, 4, -1.0).unwrap();
        assert!(matches!(dt_ellipticity(&st, &op, &w, -1.0, 1, 2.0, 128), Err(Error::HypothesisViolation(_))));
        assert_eq!(dt_ellipticity(&st.with_level(0.0), &op, &w, 0.0, 1, 2.0, 128).unwrap(), None);
    }

    #[test]
    fn single_mode_ellipticity_ratio_is_order_one() {
        let m = 24;
        let op = free_op(m);
        let w = BoundaryWindow::both(make_window(2.0, 0.2, 1.8, 0.4).unwrap());
        let mut ratios = Vec::new();
        for k in [1, 4, 10, 20] {
            let mut u0 = vec![ZERO; m];
            u0[k - 1] = C64::from(1.0);
            let st = VectorState::from_parts(1, m, 0.0, &u0, &vec![ZERO; m]).unwrap();
            ratios.push(dt_ellipticity(&st, &op, &w, 0.0, 1, 2.0, 2048).unwrap().unwrap().ratio);
        }
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
        assert!(hi < 2.0 && lo > 0.1, "{ratios:?}");
    }

    #[test]
    fn shift_experiment_checks_containment() {
        let inner = BoundaryWindow::both(make_window(2.0, 0.2, 1.8, 0.4).unwrap());
        let outer = BoundaryWindow::both(make_window(2.0, 0.3, 1.8, 0.4).unwrap());
        let exp = ShiftExperiment {
            coefficients: SystemCoefficients::zero(1).unwrap(),
            modes: vec![4, 8],
            levels: vec![0.0],
            horizon: 2.0,
            steps: 64,
            inner,
            outer,
            tolerance: 0.1,
        };
        assert!(matches!(regularity_shift_experiment(&exp), Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn stability_rule() {
        assert!(refinement_stable(&[Some(1.0), Some(2.0), Some(2.1)], 0.1));
        assert!(!refinement_stable(&[Some(2.0), Some(3.0)], 0.1));
        assert!(!refinement_stable(&[Some(2.0), None], 0.1));
        assert!(!refinement_stable(&[Some(2.0)], 0.1));
    }
}
