//! Galerkin assembly of `P = Laplacian - X d/dx - q` and its adjoint on the
//! truncated Dirichlet basis, plus the shift `P + i mu`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::spectral::{ks_norm_sq_blocks, SpectralGrid, VectorState, C64};

type MatrixField = Arc<dyn Fn(f64) -> DMatrix<C64> + Send + Sync>;

/// Matrix-valued coefficient fields of the system.
///
/// `drift` is the single 1D coefficient `X(x)` of the first-order term
/// `X d/dx`, `drift_dx` its derivative, and `potential` the zeroth-order
/// matrix `q(x)`.
#[derive(Clone)]
pub struct SystemCoefficients {
    components: usize,
    drift: MatrixField,
    drift_dx: MatrixField,
    potential: MatrixField,
    label: String,
}

impl fmt::Debug for SystemCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemCoefficients")
            .field("components", &self.components)
            .field("label", &self.label)
            .finish()
    }
}

impl SystemCoefficients {
    pub fn from_fields(
        components: usize,
        drift: impl Fn(f64) -> DMatrix<C64> + Send + Sync + 'static,
        drift_dx: impl Fn(f64) -> DMatrix<C64> + Send + Sync + 'static,
        potential: impl Fn(f64) -> DMatrix<C64> + Send + Sync + 'static,
        label: impl Into<String>,
    ) -> Result<Self> {
        if components == 0 {
            return Err(Error::InvalidArgument("component count must be positive".into()));
        }
        let out = Self {
            components,
            drift: Arc::new(drift),
            drift_dx: Arc::new(drift_dx),
            potential: Arc::new(potential),
            label: label.into(),
        };
        for probe in [0.0, 0.5, 1.0] {
            for m in [out.drift(probe), out.drift_dx(probe), out.potential(probe)] {
                if m.nrows() != components || m.ncols() != components {
                    return Err(Error::InvalidArgument(format!(
                        "coefficient field returned a {}x{} matrix, expected {components}x{components}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
        }
        Ok(out)
    }

    /// `X = 0`, `q = 0`: the free vectorial wave equation.
    pub fn zero(components: usize) -> Result<Self> {
        let z = DMatrix::zeros(components, components);
        Self::constant(z.clone(), z).map(|c| c.with_label("zero"))
    }

    /// Constant matrices `X` and `q`.
    pub fn constant(drift: DMatrix<C64>, potential: DMatrix<C64>) -> Result<Self> {
        let n = drift.nrows();
        if drift.ncols() != n || potential.nrows() != n || potential.ncols() != n {
            return Err(Error::InvalidArgument("X and q must be square and equally sized".into()));
        }
        let zero = DMatrix::zeros(n, n);
        Self::from_fields(
            n,
            move |_| drift.clone(),
            move |_| zero.clone(),
            move |_| potential.clone(),
            "constant",
        )
    }

    /// `X(x) = X0 + X1 cos(pi x)`, `q(x) = q0 + q1 cos(pi x)`.
    pub fn cosine_profile(
        x0: DMatrix<C64>,
        x1: DMatrix<C64>,
        q0: DMatrix<C64>,
        q1: DMatrix<C64>,
    ) -> Result<Self> {
        let n = x0.nrows();
        for m in [&x0, &x1, &q0, &q1] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidArgument("profile matrices must be NxN".into()));
            }
        }
        let (xa, xb, xd) = (x0, x1.clone(), x1);
        Self::from_fields(
            n,
            move |x| &xa + &xb * C64::from((PI * x).cos()),
            move |x| &xd * C64::from(-PI * (PI * x).sin()),
            move |x| &q0 + &q1 * C64::from((PI * x).cos()),
            "cosine",
        )
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn drift(&self, x: f64) -> DMatrix<C64> {
        (self.drift)(x)
    }

    pub fn drift_dx(&self, x: f64) -> DMatrix<C64> {
        (self.drift_dx)(x)
    }

    pub fn potential(&self, x: f64) -> DMatrix<C64> {
        (self.potential)(x)
    }

    fn sample(&self, nodes: &[f64]) -> Result<SampledCoefficients> {
        let drift: Vec<_> = nodes.iter().map(|&x| self.drift(x)).collect();
        let drift_dx: Vec<_> = nodes.iter().map(|&x| self.drift_dx(x)).collect();
        let potential: Vec<_> = nodes.iter().map(|&x| self.potential(x)).collect();
        let finite = |v: &Vec<DMatrix<C64>>| {
            v.iter().all(|m| m.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
        };
        if !(finite(&drift) && finite(&drift_dx) && finite(&potential)) {
            return Err(Error::InvalidArgument("coefficient samples are not finite".into()));
        }
        Ok(SampledCoefficients { drift, drift_dx, potential })
    }
}

struct SampledCoefficients {
    drift: Vec<DMatrix<C64>>,
    drift_dx: Vec<DMatrix<C64>>,
    potential: Vec<DMatrix<C64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorFlavor {
    P,
    Adjoint,
    Shift { mu: f64 },
}

/// Dense Galerkin matrix of size `(N M) x (N M)`, indexed by
/// `component * M + mode`.
#[derive(Debug, Clone)]
pub struct GalerkinOperator {
    matrix: DMatrix<C64>,
    grid: Arc<SpectralGrid>,
    coefficients: SystemCoefficients,
    flavor: OperatorFlavor,
}

impl GalerkinOperator {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn coefficients(&self) -> &SystemCoefficients {
        &self.coefficients
    }

    pub fn flavor(&self) -> OperatorFlavor {
        self.flavor
    }

    pub fn components(&self) -> usize {
        self.coefficients.components
    }

    pub fn modes(&self) -> usize {
        self.grid.modes()
    }

    /// `N * M`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "vector of length {} for operator of size {}",
                v.len(),
                self.dim()
            )));
        }
        let out = &self.matrix * DVector::from_column_slice(v);
        Ok(out.as_slice().to_vec())
    }

    /// `P + i mu I`, tagged with its shift.
    pub fn shifted(&self, mu: f64) -> GalerkinOperator {
        let mut matrix = self.matrix.clone();
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += C64::new(0.0, mu);
        }
        GalerkinOperator {
            matrix,
            grid: Arc::clone(&self.grid),
            coefficients: self.coefficients.clone(),
            flavor: OperatorFlavor::Shift { mu },
        }
    }
}

fn check_consistent(coeffs: &SystemCoefficients, grid: &SpectralGrid) -> Result<()> {
    if grid.modes() == 0 || coeffs.components == 0 {
        return Err(Error::InvalidArgument("empty grid or system".into()));
    }
    Ok(())
}

/// Assembles one `M x M` block from pointwise weights `a(x)` against
/// `phi_k'` and `b(x)` against `phi_k`, tested with `phi_j`.
fn block(grid: &SpectralGrid, a: &[C64], b: &[C64]) -> DMatrix<C64> {
    let m = grid.modes();
    let phi = grid.basis();
    let dphi = grid.basis_dx();
    let w = grid.weights();
    let mut out = DMatrix::zeros(m, m);
    for q in 0..w.len() {
        let wa = a[q] * w[q];
        let wb = b[q] * w[q];
        if wa == C64::new(0.0, 0.0) && wb == C64::new(0.0, 0.0) {
            continue;
        }
        for k in 0..m {
            let col = wa * dphi[(q, k)] + wb * phi[(q, k)];
            for j in 0..m {
                out[(j, k)] += col * phi[(q, j)];
            }
        }
    }
    out
}

fn assemble_with(
    coeffs: &SystemCoefficients,
    grid: &SpectralGrid,
    entry_fields: impl Fn(&SampledCoefficients, usize, usize, usize) -> (C64, C64),
    flavor: OperatorFlavor,
) -> Result<GalerkinOperator> {
    check_consistent(coeffs, grid)?;
    let n = coeffs.components;
    let m = grid.modes();
    let sampled = coeffs.sample(grid.nodes())?;
    let nq = grid.nodes().len();
    let mut matrix = DMatrix::zeros(n * m, n * m);
    for row in 0..n {
        for col in 0..n {
            let (a, b): (Vec<C64>, Vec<C64>) =
                (0..nq).map(|q| entry_fields(&sampled, q, row, col)).unzip();
            let blk = block(grid, &a, &b);
            for j in 0..m {
                for k in 0..m {
                    matrix[(row * m + j, col * m + k)] = -blk[(j, k)];
                }
            }
        }
    }
    for comp in 0..n {
        for k in 0..m {
            matrix[(comp * m + k, comp * m + k)] -= C64::from(grid.eigenvalues()[k]);
        }
    }
    Ok(GalerkinOperator {
        matrix,
        grid: Arc::new(grid.clone()),
        coefficients: coeffs.clone(),
        flavor,
    })
}

/// Galerkin matrix of `P`: entry `((n, j), (m, k))` is
/// `-lambda_k delta - <(X d/dx + q)(e_m phi_k), e_n phi_j>`.
pub fn assemble_p(coeffs: &SystemCoefficients, grid: &SpectralGrid) -> Result<GalerkinOperator> {
    assemble_with(
        coeffs,
        grid,
        |s, q, n, m| (s.drift[q][(n, m)], s.potential[q][(n, m)]),
        OperatorFlavor::P,
    )
}

/// Galerkin matrix of `P* = Laplacian - X* - q*` built from the strong form
/// `(X* v)^l = -sum_k conj(X_kl) dv^k/dx - sum_k conj(X_kl)' v^k`.
pub fn assemble_p_adjoint(
    coeffs: &SystemCoefficients,
    grid: &SpectralGrid,
) -> Result<GalerkinOperator> {
    // Entry ((n, j), (m, k)) = -lambda delta - <X*(e_m phi_k) + q^H (e_m phi_k), e_n phi_j>,
    // and (X*(e_m phi_k))^n = -conj(X_mn) phi_k' - conj(X_mn') phi_k.
    assemble_with(
        coeffs,
        grid,
        |s, q, n, m| {
            (
                -s.drift[q][(m, n)].conj(),
                -s.drift_dx[q][(m, n)].conj() + s.potential[q][(m, n)].conj(),
            )
        },
        OperatorFlavor::Adjoint,
    )
}

/// Smallest singular value of a square complex matrix.
pub fn sigma_min(m: &DMatrix<C64>) -> f64 {
    let sv = m.clone().singular_values();
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}

pub const MU_INITIAL: f64 = 1.0;
pub const MU_MAX: f64 = 1e6;

/// Doubling search from `MU_INITIAL` for the smallest `mu` with
/// `sigma_min(P_M + i mu I) >= mu / 2` for every operator in `family`.
pub fn choose_mu(family: &[GalerkinOperator]) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::InvalidArgument("empty operator family".into()));
    }
    let mut mu = MU_INITIAL;
    while mu <= MU_MAX {
        if family.iter().all(|op| sigma_min(op.shifted(mu).matrix()) >= 0.5 * mu) {
            return Ok(mu);
        }
        mu *= 2.0;
    }
    Err(Error::NoCertifiedMu { max: MU_MAX })
}

/// Assembles `P` at each mode count and runs [`choose_mu`] over the family.
pub fn choose_mu_for_modes(coeffs: &SystemCoefficients, modes: &[usize]) -> Result<f64> {
    let family = modes
        .iter()
        .map(|&m| SpectralGrid::new(m).and_then(|g| assemble_p(coeffs, &g)))
        .collect::<Result<Vec<_>>>()?;
    choose_mu(&family)
}

/// Applies `(P + i mu)^r`.
pub fn shift_apply(v: &[C64], mu: f64, r: u32, op: &GalerkinOperator) -> Result<Vec<C64>> {
    ensure_finite(mu, "mu")?;
    let s = op.shifted(mu);
    let mut out = v.to_vec();
    if out.len() != op.dim() {
        return Err(Error::InvalidArgument("vector does not match operator size".into()));
    }
    for _ in 0..r {
        out = s.apply(&out)?;
    }
    Ok(out)
}

/// Applies `(P + i mu)^(-r)` by `r` LU solves.
pub fn shift_invert(v: &[C64], mu: f64, r: u32, op: &GalerkinOperator) -> Result<Vec<C64>> {
    ensure_finite(mu, "mu")?;
    if v.len() != op.dim() {
        return Err(Error::InvalidArgument("vector does not match operator size".into()));
    }
    let lu = op.shifted(mu).matrix.clone().lu();
    let mut out = DVector::from_column_slice(v);
    for _ in 0..r {
        out = lu
            .solve(&out)
            .ok_or_else(|| Error::NumericalSingularity(format!("P + i{mu} is singular")))?;
    }
    if out.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::NumericalSingularity(format!("P + i{mu} solve overflowed")));
    }
    Ok(out.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticReport {
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub trials: usize,
}

/// Weighted norm over all components: `sum_n ||v_n||_{K^s}^2`, square-rooted.
pub fn weighted_norm(v: &[C64], modes: usize, s: f64) -> f64 {
    ks_norm_sq_blocks(v, modes, s).sqrt()
}

/// Samples `||u||_{s+r} / (||P^r u||_{s-r} + ||u||_{s+r-1})` over random `u`.
pub fn elliptic_estimate_check(
    op: &GalerkinOperator,
    s: f64,
    r: u32,
    trials: usize,
    seed: u64,
) -> Result<EllipticReport> {
    ensure_finite(s, "Sobolev index")?;
    if r == 0 {
        return Err(Error::InvalidArgument("r must be positive".into()));
    }
    let m = op.modes();
    let n = op.components();
    let rf = f64::from(r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    let mut used = 0;
    for _ in 0..trials {
        // Slot 0 of a random state at level s + r - 1 has unit K^{s+r} weight per mode.
        let st = VectorState::random(n, m, s + rf - 1.0, m, &mut rng)?;
        let u = st.displacement().to_vec();
        if let Some(ratio) = elliptic_ratio(op, &u, s, r)? {
            max_ratio = max_ratio.max(ratio);
            min_ratio = min_ratio.min(ratio);
            used += 1;
        }
    }
    Ok(EllipticReport { max_ratio, min_ratio, trials: used })
}

/// Ratio for a single vector, `None` for the zero vector.
pub fn elliptic_ratio(op: &GalerkinOperator, u: &[C64], s: f64, r: u32) -> Result<Option<f64>> {
    let m = op.modes();
    let rf = f64::from(r);
    let top = weighted_norm(u, m, s + rf);
    if top == 0.0 {
        return Ok(None);
    }
    let mut pu = u.to_vec();
    for _ in 0..r {
        pu = op.apply(&pu)?;
    }
    let bottom = weighted_norm(&pu, m, s - rf) + weighted_norm(u, m, s + rf - 1.0);
    Ok(Some(top / bottom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{laplacian_spectrum, max_abs};
    use rand::Rng;

    fn cm(n: usize, vals: &[(f64, f64)]) -> DMatrix<C64> {
        DMatrix::from_row_iterator(n, n, vals.iter().map(|&(a, b)| C64::new(a, b)))
    }

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn free_operator_is_minus_laplacian_spectrum() {
        let g = laplacian_spectrum(3).unwrap();
        let p = assemble_p(&SystemCoefficients::zero(1).unwrap(), &g).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let expect = if j == k { -g.eigenvalues()[k] } else { 0.0 };
                assert_eq!(p.matrix()[(j, k)], C64::from(expect));
            }
        }
    }

    #[test]
    fn constant_potential_shifts_diagonal() {
        let g = laplacian_spectrum(5).unwrap();
        let c = 2.5;
        let coeffs = SystemCoefficients::constant(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2) * C64::from(c),
        )
        .unwrap();
        let p = assemble_p(&coeffs, &g).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let expect = if i == j { -g.eigenvalues()[i % 5] - c } else { 0.0 };
                assert!((p.matrix()[(i, j)] - C64::from(expect)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_drift_matches_symbolic_integral() {
        // -X * int_0^1 2 k pi cos(k pi x) sin(j pi x) dx = -2jk(1 - (-1)^(j+k)) / (j^2 - k^2) * X
        let m = 9;
        let g = laplacian_spectrum(m).unwrap();
        let xval = C64::new(0.7, -0.3);
        let coeffs =
            SystemCoefficients::constant(DMatrix::from_element(1, 1, xval), DMatrix::zeros(1, 1))
                .unwrap();
        let p = assemble_p(&coeffs, &g).unwrap();
        for j in 1..=m {
            for k in 1..=m {
                if j == k {
                    continue;
                }
                let (jf, kf) = (j as f64, k as f64);
                let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
                let expect = -2.0 * jf * kf * (1.0 - sign) / (jf * jf - kf * kf) * xval;
                assert!((p.matrix()[(j - 1, k - 1)] - expect).norm() < 1e-10, "({j},{k})");
            }
        }
    }

    #[test]
    fn adjoint_examples() {
        let g = laplacian_spectrum(4).unwrap();
        let sym = cm(2, &[(1.0, 0.0), (2.0, 0.0), (2.0, 0.0), (-3.0, 0.0)]);
        let coeffs = SystemCoefficients::constant(DMatrix::zeros(2, 2), sym).unwrap();
        let p = assemble_p(&coeffs, &g).unwrap();
        let pa = assemble_p_adjoint(&coeffs, &g).unwrap();
        assert!(max_abs(&(p.matrix() - pa.matrix())) < 1e-14);

        let coeffs = SystemCoefficients::constant(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, C64::new(0.0, 1.0)),
        )
        .unwrap();
        let pa = assemble_p_adjoint(&coeffs, &g).unwrap();
        for k in 0..4 {
            let expect = C64::new(-g.eigenvalues()[k], 1.0);
            let got = pa.matrix()[(k, k)];
            assert!((got - expect).norm() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn adjoint_equals_conjugate_transpose_for_smooth_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = laplacian_spectrum(8).unwrap();
        let coeffs = SystemCoefficients::cosine_profile(
            random_matrix(2, &mut rng),
            random_matrix(2, &mut rng),
            random_matrix(2, &mut rng),
            random_matrix(2, &mut rng),
        )
        .unwrap();
        let p = assemble_p(&coeffs, &g).unwrap();
        let pa = assemble_p_adjoint(&coeffs, &g).unwrap();
        let diff = max_abs(&(pa.matrix() - p.matrix().adjoint()));
        assert!(diff <= 1e-10, "max deviation {diff:e}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let bad = SystemCoefficients::constant(DMatrix::zeros(2, 2), DMatrix::zeros(3, 3));
        assert!(matches!(bad, Err(Error::InvalidArgument(_))));
        let g = laplacian_spectrum(3).unwrap();
        let p = assemble_p(&SystemCoefficients::zero(1).unwrap(), &g).unwrap();
        assert!(p.apply(&[C64::from(1.0)]).is_err());
    }

    #[test]
    fn normal_operators_need_no_shift() {
        let modes = [8, 16];
        let z = SystemCoefficients::zero(1).unwrap();
        assert_eq!(choose_mu_for_modes(&z, &modes).unwrap(), 1.0);
        let q5 = SystemCoefficients::constant(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, C64::from(5.0)),
        )
        .unwrap();
        assert_eq!(choose_mu_for_modes(&q5, &modes).unwrap(), 1.0);
    }

    fn nilpotent(c: f64) -> SystemCoefficients {
        let q = cm(2, &[(0.0, 0.0), (c, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        SystemCoefficients::constant(DMatrix::zeros(2, 2), q).unwrap()
    }

    fn certified(ops: &[GalerkinOperator], mu: f64) -> bool {
        ops.iter().all(|op| sigma_min(op.shifted(mu).matrix()) >= 0.5 * mu)
    }

    #[test]
    fn nilpotent_coupling_mu_matches_sweep() {
        let modes = [8, 16];
        // Weak coupling: the pi^2 spectral gap already certifies the first candidate.
        let coeffs = nilpotent(100.0);
        assert_eq!(choose_mu_for_modes(&coeffs, &modes).unwrap(), 1.0);

        // Strong coupling forces the doubling search far out; compare with a
        // unit-step sweep over [1, 20000].
        let coeffs = nilpotent(1e4);
        let mu = choose_mu_for_modes(&coeffs, &modes).unwrap();
        let ops: Vec<_> = modes
            .iter()
            .map(|&m| assemble_p(&coeffs, &laplacian_spectrum(m).unwrap()).unwrap())
            .collect();
        let sweep = (1..=20_000).map(f64::from).find(|&m| certified(&ops, m)).unwrap();
        assert!(certified(&ops, mu));
        assert!(mu >= sweep - 1.0 && mu < 2.0 * sweep, "doubling {mu} vs sweep {sweep}");
        assert!(!certified(&ops, mu / 2.0));
    }

    #[test]
    fn shift_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = laplacian_spectrum(6).unwrap();
        let coeffs = SystemCoefficients::cosine_profile(
            random_matrix(2, &mut rng),
            random_matrix(2, &mut rng),
            random_matrix(2, &mut rng),
            random_matrix(2, &mut rng),
        )
        .unwrap();
        let p = assemble_p(&coeffs, &g).unwrap();
        let mu = choose_mu(std::slice::from_ref(&p)).unwrap();
        let v: Vec<C64> = (0..12).map(|_| C64::new(rng.random(), rng.random())).collect();
        assert_eq!(shift_apply(&v, mu, 0, &p).unwrap(), v);

        let back = shift_invert(&shift_apply(&v, mu, 1, &p).unwrap(), mu, 1, &p).unwrap();
        let err: f64 = back.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);

        // (P - S) v = -i mu v
        let pv = p.apply(&v).unwrap();
        let sv = shift_apply(&v, mu, 1, &p).unwrap();
        for i in 0..12 {
            assert!((pv[i] - sv[i] + C64::new(0.0, mu) * v[i]).norm() < 1e-10);
        }

        // S^{a+b} = S^a S^b, and S commutes with P.
        let s3 = shift_apply(&v, mu, 3, &p).unwrap();
        let s12 = shift_apply(&shift_apply(&v, mu, 2, &p).unwrap(), mu, 1, &p).unwrap();
        let scale = s3.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for i in 0..12 {
            assert!((s3[i] - s12[i]).norm() <= 1e-12 * scale);
        }
        let sp = shift_apply(&pv, mu, 1, &p).unwrap();
        let ps = p.apply(&sv).unwrap();
        let scale = sp.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for i in 0..12 {
            assert!((sp[i] - ps[i]).norm() <= 1e-12 * scale);
        }
        // Mixed inverse/forward powers compose like integers.
        let mixed = shift_invert(&shift_apply(&v, mu, 3, &p).unwrap(), mu, 2, &p).unwrap();
        let once = shift_apply(&v, mu, 1, &p).unwrap();
        let scale = once.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for i in 0..12 {
            assert!((mixed[i] - once[i]).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn single_mode_elliptic_ratio_closed_form() {
        let m = 40;
        let g = laplacian_spectrum(m).unwrap();
        let p = assemble_p(&SystemCoefficients::zero(1).unwrap(), &g).unwrap();
        for k in 0..m {
            let mut u = vec![C64::from(0.0); m];
            u[k] = C64::from(1.0);
            let ratio = elliptic_ratio(&p, &u, 0.0, 1).unwrap().unwrap();
            let lam = g.eigenvalues()[k];
            let closed = (1.0 + lam) / (lam + (1.0 + lam).sqrt());
            assert!((ratio - closed).abs() < 1e-12);
            assert!(ratio <= 1.2);
        }
        assert_eq!(elliptic_ratio(&p, &vec![C64::from(0.0); m], 0.0, 1).unwrap(), None);
    }

    #[test]
    fn elliptic_ratio_is_refinement_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let coeffs = SystemCoefficients::cosine_profile(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            random_matrix(2, &mut rng) * C64::from(20.0),
            random_matrix(2, &mut rng) * C64::from(20.0),
        )
        .unwrap();
        let ratios: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&m| {
                let p = assemble_p(&coeffs, &laplacian_spectrum(m).unwrap()).unwrap();
                elliptic_estimate_check(&p, 0.0, 1, 30, 4).unwrap().max_ratio
            })
            .collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        assert!(hi.is_finite() && hi / lo < 1.2, "{ratios:?}");
    }
}
