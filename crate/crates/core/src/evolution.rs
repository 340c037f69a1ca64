//! Exact propagators for the Galerkin wave system `u_tt = P u`.
//!
//! The first-order generator `A = [[0, I], [P, 0]]` is exponentiated once per
//! run and applied stepwise, so the only discretization left is the spectral
//! truncation. Sources enter through a trapezoid variation-of-constants
//! recursion; boundary data through a smooth lifting.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::{GalerkinOperator, OperatorFlavor, SystemCoefficients};
use crate::quadrature::gauss_legendre_on;
use crate::spectral::{mode_value, VectorState, C64};
use crate::window::{spectral_derivative, BoundaryWindow};

const ZERO: C64 = C64::new(0.0, 0.0);

/// States of a solution on the uniform grid `t_i = i T / Nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<VectorState>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[VectorState] {
        &self.states
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn first(&self) -> &VectorState {
        &self.states[0]
    }

    pub fn last(&self) -> &VectorState {
        &self.states[self.states.len() - 1]
    }

    /// `sum_k lambda_k |a_k|^2 + |a_k'|^2` at every sample (free-wave energy).
    pub fn free_energy(&self) -> Vec<f64> {
        self.states.iter().map(free_energy).collect()
    }

    /// Applies a linear map to the displacement and the velocity of every state.
    pub fn map_slots<F>(&self, mut f: F) -> Result<Trajectory>
    where
        F: FnMut(&[C64]) -> Result<Vec<C64>>,
    {
        let states = self
            .states
            .iter()
            .map(|st| {
                let u = f(st.displacement())?;
                let v = f(st.velocity())?;
                VectorState::from_parts(st.components(), st.modes(), st.level(), &u, &v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory { times: self.times.clone(), states })
    }
}

pub fn free_energy(state: &VectorState) -> f64 {
    let m = state.modes();
    let potential: f64 = state
        .displacement()
        .iter()
        .enumerate()
        .map(|(i, a)| crate::spectral::dirichlet_eigenvalue(i % m + 1) * a.norm_sqr())
        .sum();
    let kinetic: f64 = state.velocity().iter().map(|a| a.norm_sqr()).sum();
    potential + kinetic
}

/// Neumann traces `[endpoint][component][sample]`, inward normal convention.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSignal {
    components: usize,
    len: usize,
    dt: f64,
    horizon: f64,
    values: Vec<C64>,
}

impl TraceSignal {
    pub fn new(components: usize, horizon: f64, values: Vec<C64>) -> Result<Self> {
        if components == 0 || !values.len().is_multiple_of(2 * components) {
            return Err(Error::InvalidArgument("trace layout is [2][N][samples]".into()));
        }
        let len = values.len() / (2 * components);
        if len < 2 {
            return Err(Error::InvalidArgument("trace needs at least two samples".into()));
        }
        if values.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::Numerical("non-finite trace sample".into()));
        }
        Ok(Self { components, len, dt: horizon / (len - 1) as f64, horizon, values })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of time samples, `Nt + 1`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Time series at endpoint `e` (0 for `x = 0`) and component `n`.
    pub fn series(&self, e: usize, n: usize) -> &[C64] {
        let start = (e * self.components + n) * self.len;
        &self.values[start..start + self.len]
    }
}

/// Row `(e, n)` of the trace operator acting on `[u0 | u1]` coefficients.
pub fn trace_operator(components: usize, modes: usize) -> DMatrix<C64> {
    let d = components * modes;
    let mut c = DMatrix::zeros(2 * components, 2 * d);
    for e in 0..2 {
        for n in 0..components {
            for k in 0..modes {
                c[(e * components + n, n * modes + k)] = C64::from(trace_weight(e, k + 1));
            }
        }
    }
    c
}

/// `d/dnu phi_k` at endpoint `e` with the inward normal: `+d/dx` at 0, `-d/dx` at 1.
pub fn trace_weight(e: usize, k: usize) -> f64 {
    let slope = 2f64.sqrt() * k as f64 * PI;
    if e == 0 || k % 2 == 1 {
        slope
    } else {
        -slope
    }
}

/// Stepping matrix `exp(A dt)` for `A = [[0, I], [P, 0]]`.
#[derive(Debug, Clone)]
pub struct Propagator {
    step: DMatrix<C64>,
    dt: f64,
    steps: usize,
    components: usize,
    modes: usize,
}

impl Propagator {
    /// `horizon` may be negative to run backward in time.
    pub fn new(op: &GalerkinOperator, horizon: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 time steps, got {steps}")));
        }
        if !horizon.is_finite() || horizon == 0.0 {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be finite and nonzero")));
        }
        let d = op.dim();
        let dt = horizon / steps as f64;
        let mut a = DMatrix::<C64>::zeros(2 * d, 2 * d);
        for i in 0..d {
            a[(i, d + i)] = C64::from(dt);
        }
        a.view_mut((d, 0), (d, d)).copy_from(&(op.matrix() * C64::from(dt)));
        let step = a.exp();
        if step.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::Numerical("matrix exponential overflowed".into()));
        }
        Ok(Self { step, dt, steps, components: op.components(), modes: op.modes() })
    }

    pub fn step_matrix(&self) -> &DMatrix<C64> {
        &self.step
    }

    pub fn dt(&self) -> f64 {
        self.dt
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

    /// Coefficient vectors `[u | u_t]` at every grid time.
    pub fn orbit(&self, start: &[C64]) -> Vec<DVector<C64>> {
        let mut out = Vec::with_capacity(self.steps + 1);
        let mut x = DVector::from_column_slice(start);
        out.push(x.clone());
        for _ in 0..self.steps {
            x = &self.step * x;
            out.push(x.clone());
        }
        out
    }

    fn check_state(&self, state: &VectorState) -> Result<()> {
        if state.components() != self.components || state.modes() != self.modes {
            return Err(Error::InvalidArgument(format!(
                "state shape {}x{} does not match operator {}x{}",
                state.components(),
                state.modes(),
                self.components,
                self.modes
            )));
        }
        Ok(())
    }

    pub fn run(&self, state: &VectorState) -> Result<Trajectory> {
        self.check_state(state)?;
        let orbit = self.orbit(state.coeffs());
        self.collect(orbit, state.level())
    }

    fn collect(&self, orbit: Vec<DVector<C64>>, level: f64) -> Result<Trajectory> {
        let times = (0..=self.steps).map(|i| i as f64 * self.dt).collect();
        let states = orbit
            .into_iter()
            .map(|x| VectorState::new(self.components, self.modes, level, x.as_slice().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory { times, states })
    }

    /// Trapezoid recursion `Psi_n = E (Psi_{n-1} + dt/2 G F_{n-1}) + dt/2 G F_n`
    /// with `G F = (0, F)` and zero initial data.
    pub fn duhamel(&self, source: &[Vec<C64>], level: f64) -> Result<Trajectory> {
        let d = self.components * self.modes;
        if source.len() != self.steps + 1 || source.iter().any(|f| f.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "source must have {} samples of length {d}",
                self.steps + 1
            )));
        }
        let half = C64::from(0.5 * self.dt);
        let lift = |f: &[C64]| {
            let mut g = DVector::zeros(2 * d);
            for (i, v) in f.iter().enumerate() {
                g[d + i] = v * half;
            }
            g
        };
        let mut orbit = Vec::with_capacity(self.steps + 1);
        let mut x = DVector::<C64>::zeros(2 * d);
        orbit.push(x.clone());
        for n in 1..=self.steps {
            x = &self.step * (x + lift(&source[n - 1])) + lift(&source[n]);
            orbit.push(x.clone());
        }
        self.collect(orbit, level)
    }
}

/// Solves `u_tt = P u` from `state` at time 0 up to `horizon` (negative runs backward).
pub fn evolve_homogeneous(
    state: &VectorState,
    op: &GalerkinOperator,
    horizon: f64,
    steps: usize,
) -> Result<Trajectory> {
    Propagator::new(op, horizon, steps)?.run(state)
}

/// Solution on `[0, T]` with the given data prescribed at `t = T`.
pub fn evolve_backward(
    final_state: &VectorState,
    op: &GalerkinOperator,
    horizon: f64,
    steps: usize,
) -> Result<Trajectory> {
    let back = evolve_homogeneous(final_state, op, -horizon, steps)?;
    let states: Vec<VectorState> = back.states.into_iter().rev().collect();
    let times = (0..=steps).map(|i| i as f64 * horizon / steps as f64).collect();
    Ok(Trajectory { times, states })
}

/// Zero-data solution of `u_tt = P u + F` with `source[i]` the coefficients of `F(t_i)`.
pub fn evolve_duhamel(
    source: &[Vec<C64>],
    op: &GalerkinOperator,
    horizon: f64,
    steps: usize,
) -> Result<Trajectory> {
    Propagator::new(op, horizon, steps)?.duhamel(source, 0.0)
}

/// `d/dnu u(t, e)` for every sample of a trajectory.
pub fn normal_trace(traj: &Trajectory) -> Result<TraceSignal> {
    let first = traj.first();
    let n_comp = first.components();
    let len = traj.states.len();
    let mut values = vec![ZERO; 2 * n_comp * len];
    for (i, st) in traj.states.iter().enumerate() {
        for e in 0..2 {
            for n in 0..n_comp {
                let a = st.component(0, n);
                let v: C64 = a.iter().enumerate().map(|(k, c)| c * trace_weight(e, k + 1)).sum();
                values[(e * n_comp + n) * len + i] = v;
            }
        }
    }
    TraceSignal::new(n_comp, traj.horizon(), values)
}

/// Boundary data `f_{e,n}(t) = sum_{|h| <= K} c_{e,n,h} exp(2 pi i h t / T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBoundaryData {
    components: usize,
    harmonics: usize,
    horizon: f64,
    coeffs: Vec<C64>,
}

impl FourierBoundaryData {
    /// `coeffs` laid out as `[endpoint][component][h + K]`.
    pub fn new(components: usize, harmonics: usize, horizon: f64, coeffs: Vec<C64>) -> Result<Self> {
        if components == 0 || !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument("boundary data needs N >= 1 and T > 0".into()));
        }
        if coeffs.len() != 2 * components * (2 * harmonics + 1) {
            return Err(Error::InvalidArgument(format!(
                "expected {} Fourier coefficients, got {}",
                2 * components * (2 * harmonics + 1),
                coeffs.len()
            )));
        }
        Ok(Self { components, harmonics, horizon, coeffs })
    }

    pub fn zeros(components: usize, harmonics: usize, horizon: f64) -> Result<Self> {
        Self::new(components, harmonics, horizon, vec![ZERO; 2 * components * (2 * harmonics + 1)])
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn harmonics(&self) -> usize {
        self.harmonics
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// Angular frequency of basis index `j` in `0..2K+1`.
    pub fn frequency(&self, j: usize) -> f64 {
        2.0 * PI * (j as f64 - self.harmonics as f64) / self.horizon
    }

    pub fn value(&self, e: usize, n: usize, t: f64) -> C64 {
        let width = 2 * self.harmonics + 1;
        let start = (e * self.components + n) * width;
        self.coeffs[start..start + width]
            .iter()
            .enumerate()
            .map(|(j, c)| c * C64::from_polar(1.0, self.frequency(j) * t))
            .sum()
    }

    /// Windowed samples `Theta_e f_{e,n}(t_i)` as a trace-shaped signal.
    pub fn windowed(&self, window: &BoundaryWindow, steps: usize) -> Result<TraceSignal> {
        window.check_horizon(self.horizon)?;
        let theta = window.sample(steps);
        let dt = self.horizon / steps as f64;
        let len = steps + 1;
        let mut values = vec![ZERO; 2 * self.components * len];
        for e in 0..2 {
            for n in 0..self.components {
                for i in 0..len {
                    if theta[e][i] != 0.0 {
                        values[(e * self.components + n) * len + i] =
                            self.value(e, n, i as f64 * dt) * theta[e][i];
                    }
                }
            }
        }
        TraceSignal::new(self.components, self.horizon, values)
    }
}

/// C2 smootherstep profile: 1 at `x = 0`, 0 for `x >= 1/4`. Returns value and
/// first two derivatives.
pub fn lifting_profile(x: f64) -> [f64; 3] {
    if x >= 0.25 {
        return [0.0; 3];
    }
    let y = 4.0 * x;
    let v = 1.0 - y * y * y * (10.0 - 15.0 * y + 6.0 * y * y);
    let d1 = -30.0 * y * y * (1.0 - y) * (1.0 - y) * 4.0;
    let d2 = -60.0 * y * (1.0 - y) * (1.0 - 2.0 * y) * 16.0;
    [v, d1, d2]
}

/// Cutoff `psi_e` attached to endpoint `e`: `psi_0(x) = eta(x)`, `psi_1(x) = eta(1 - x)`.
pub fn lifting_cutoff(e: usize, x: f64) -> [f64; 3] {
    if e == 0 {
        lifting_profile(x)
    } else {
        let [v, d1, d2] = lifting_profile(1.0 - x);
        [v, -d1, d2]
    }
}

/// Galerkin projections of the lifting cutoffs and of the continuum operator
/// applied to them.
struct LiftingProjection {
    /// `<psi_e, phi_k>` per endpoint.
    cutoff: [Vec<f64>; 2],
    /// `D x N` block: column `m` is the projection of `L(psi_e e_m)`.
    operator: [DMatrix<C64>; 2],
}

fn lifting_projection(
    coeffs: &SystemCoefficients,
    flavor: OperatorFlavor,
    modes: usize,
) -> Result<LiftingProjection> {
    if let OperatorFlavor::Shift { .. } = flavor {
        return Err(Error::InvalidArgument("lifting needs the P or adjoint flavor".into()));
    }
    let n_comp = coeffs.components();
    let per_piece = 2 * modes + 24;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (a, b) in [(0.0, 0.25), (0.25, 0.75), (0.75, 1.0)] {
        let (x, w) = gauss_legendre_on(per_piece, a, b);
        nodes.extend(x);
        weights.extend(w);
    }
    let mut cutoff = [vec![0.0; modes], vec![0.0; modes]];
    let d = n_comp * modes;
    let mut operator = [DMatrix::zeros(d, n_comp), DMatrix::zeros(d, n_comp)];
    for (x, w) in nodes.iter().zip(&weights) {
        let drift = coeffs.drift(*x);
        let drift_dx = coeffs.drift_dx(*x);
        let pot = coeffs.potential(*x);
        for e in 0..2 {
            let [psi, dpsi, ddpsi] = lifting_cutoff(e, *x);
            if psi == 0.0 && dpsi == 0.0 && ddpsi == 0.0 {
                continue;
            }
            // Component n of L(psi e_m).
            let applied = |n: usize, m: usize| -> C64 {
                let lap = if n == m { C64::from(ddpsi) } else { ZERO };
                match flavor {
                    OperatorFlavor::Adjoint => {
                        lap + drift[(m, n)].conj() * dpsi + drift_dx[(m, n)].conj() * psi
                            - pot[(m, n)].conj() * psi
                    }
                    _ => lap - drift[(n, m)] * dpsi - pot[(n, m)] * psi,
                }
            };
            for k in 0..modes {
                let phi = mode_value(k + 1, *x) * w;
                cutoff[e][k] += psi * phi;
                for n in 0..n_comp {
                    for m in 0..n_comp {
                        operator[e][(n * modes + k, m)] += applied(n, m) * phi;
                    }
                }
            }
        }
    }
    Ok(LiftingProjection { cutoff, operator })
}

/// Solution `v = l + w` of `v_tt = P v` with `v = Theta f` on the boundary and
/// zero data at `t = 0`; `w` vanishes on the boundary.
#[derive(Debug, Clone)]
pub struct InhomogeneousSolution {
    interior: Trajectory,
    boundary: TraceSignal,
}

impl InhomogeneousSolution {
    /// Galerkin coefficients of the homogeneous-boundary part `w`.
    pub fn interior(&self) -> &Trajectory {
        &self.interior
    }

    /// Boundary values `Theta f` on the time grid.
    pub fn boundary(&self) -> &TraceSignal {
        &self.boundary
    }

    /// `v(T)`, `v_t(T)`: the lifting vanishes near `T`.
    pub fn final_state(&self) -> &VectorState {
        self.interior.last()
    }

    /// `v(t_i, x)` for component `n`.
    pub fn value(&self, i: usize, n: usize, x: f64) -> C64 {
        let st = &self.interior.states[i];
        let w: C64 = st
            .component(0, n)
            .iter()
            .enumerate()
            .map(|(k, a)| a * mode_value(k + 1, x))
            .sum();
        let lift: C64 =
            (0..2).map(|e| self.boundary.series(e, n)[i] * lifting_cutoff(e, x)[0]).sum();
        w + lift
    }
}

/// Solves `v_tt = L v`, `v|_{x=e} = Theta_e f_e`, `(v, v_t)(0) = 0`, where `L`
/// is the continuum operator behind `op` (usually the adjoint flavor).
pub fn evolve_inhomogeneous(
    data: &FourierBoundaryData,
    window: &BoundaryWindow,
    op: &GalerkinOperator,
    horizon: f64,
    steps: usize,
) -> Result<InhomogeneousSolution> {
    window.check_horizon(horizon)?;
    if (data.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(Error::InvalidArgument("boundary data built for another horizon".into()));
    }
    if data.components() != op.components() {
        return Err(Error::InvalidArgument("boundary data and operator disagree on N".into()));
    }
    let boundary = data.windowed(window, steps)?;
    let propagator = Propagator::new(op, horizon, steps)?;
    let interior = solve_lifted(&boundary, op, &propagator)?;
    Ok(InhomogeneousSolution { interior, boundary })
}

/// Same as [`evolve_inhomogeneous`] for boundary samples already windowed and
/// vanishing near both ends of the horizon.
pub fn evolve_with_boundary_samples(
    boundary: &TraceSignal,
    op: &GalerkinOperator,
    propagator: &Propagator,
) -> Result<InhomogeneousSolution> {
    let interior = solve_lifted(boundary, op, propagator)?;
    Ok(InhomogeneousSolution { interior, boundary: boundary.clone() })
}

fn solve_lifted(
    boundary: &TraceSignal,
    op: &GalerkinOperator,
    propagator: &Propagator,
) -> Result<Trajectory> {
    let n_comp = op.components();
    let m = op.modes();
    let steps = propagator.steps();
    if boundary.components() != n_comp || boundary.len() != steps + 1 {
        return Err(Error::InvalidArgument("boundary samples do not match the propagator".into()));
    }
    let proj = lifting_projection(op.coefficients(), op.flavor(), m)?;
    let d = n_comp * m;
    let period = boundary.horizon();
    let mut source = vec![vec![ZERO; d]; steps + 1];
    for e in 0..2 {
        for n in 0..n_comp {
            let g = boundary.series(e, n);
            if g.iter().all(|c| *c == ZERO) {
                continue;
            }
            // Periodic grid drops the last sample, equal to the first (both zero).
            let g_tt = spectral_derivative(&g[..steps], period, 2);
            for i in 0..=steps {
                let (gi, gtt) = (g[i], if i < steps { g_tt[i] } else { g_tt[0] });
                let row = &mut source[i];
                for k in 0..m {
                    row[n * m + k] -= gtt * proj.cutoff[e][k];
                }
                if gi != ZERO {
                    for (r, val) in row.iter_mut().enumerate() {
                        *val += proj.operator[e][(r, n)] * gi;
                    }
                }
            }
        }
    }
    propagator.duhamel(&source, 0.0)
}

/// Sum over endpoints and components of `int u_e conj(g_e) dt` by the trapezoid rule.
pub fn boundary_pairing(a: &TraceSignal, b: &TraceSignal) -> Result<C64> {
    if a.components() != b.components() || a.len() != b.len() {
        return Err(Error::InvalidArgument("trace signals of different shape".into()));
    }
    let dt = a.dt();
    let len = a.len();
    let mut total = ZERO;
    for e in 0..2 {
        for n in 0..a.components() {
            let (x, y) = (a.series(e, n), b.series(e, n));
            let mut s = ZERO;
            for i in 0..len {
                let w = if i == 0 || i + 1 == len { 0.5 } else { 1.0 };
                s += x[i] * y[i].conj() * w;
            }
            total += s * dt;
        }
    }
    Ok(total)
}
