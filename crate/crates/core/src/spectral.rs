//! Dirichlet eigenbasis of the unit interval and the `(1 + lambda_k)^s`
//! weighted norms that realize the Sobolev scale on truncated spaces.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::gauss_legendre_on;

pub type C64 = Complex64;

/// Dirichlet Laplacian eigenvalue `(k pi)^2` for the 1-based mode index `k`.
#[inline]
pub fn dirichlet_eigenvalue(k: usize) -> f64 {
    let w = k as f64 * PI;
    w * w
}

/// Truncated Dirichlet eigenbasis `sqrt(2) sin(k pi x)`, `k = 1..=M`, with a
/// Gauss-Legendre rule of `4M + 16` nodes on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SpectralGrid {
    modes: usize,
    eigenvalues: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `basis[(q, k)] = phi_{k+1}(x_q)`.
    basis: DMatrix<f64>,
    /// `basis_dx[(q, k)] = phi_{k+1}'(x_q)`.
    basis_dx: DMatrix<f64>,
}

/// Builds the truncated Dirichlet spectrum with `m` modes.
pub fn laplacian_spectrum(m: usize) -> Result<SpectralGrid> {
    SpectralGrid::new(m)
}

impl SpectralGrid {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidArgument("mode count must be at least 1".into()));
        }
        let q = 4 * modes + 16;
        let (nodes, weights) = gauss_legendre_on(q, 0.0, 1.0);
        let eigenvalues = (1..=modes).map(dirichlet_eigenvalue).collect();
        let basis = DMatrix::from_fn(q, modes, |i, k| mode_value(k + 1, nodes[i]));
        let basis_dx = DMatrix::from_fn(q, modes, |i, k| mode_slope(k + 1, nodes[i]));
        Ok(Self { modes, eigenvalues, nodes, weights, basis, basis_dx })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn basis_dx(&self) -> &DMatrix<f64> {
        &self.basis_dx
    }

    /// Discrete Gram matrix `sum_q w_q phi_j(x_q) phi_k(x_q)`.
    pub fn gram(&self) -> DMatrix<f64> {
        let weighted = DMatrix::from_fn(self.nodes.len(), self.modes, |i, k| {
            self.weights[i] * self.basis[(i, k)]
        });
        self.basis.transpose() * weighted
    }

    /// Values of `sum_k a_k phi_k` at the quadrature nodes.
    pub fn reconstruct(&self, coeffs: &[C64]) -> Vec<C64> {
        (0..self.nodes.len())
            .map(|i| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * self.basis[(i, k)])
                    .sum()
            })
            .collect()
    }

    /// Quadrature L2 norm of a function sampled at the nodes.
    pub fn l2_norm_of_samples(&self, values: &[C64]) -> f64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// `sqrt(2) sin(k pi x)`.
#[inline]
pub fn mode_value(k: usize, x: f64) -> f64 {
    SQRT_2 * (k as f64 * PI * x).sin()
}

/// `sqrt(2) k pi cos(k pi x)`.
#[inline]
pub fn mode_slope(k: usize, x: f64) -> f64 {
    let w = k as f64 * PI;
    SQRT_2 * w * (w * x).cos()
}

/// Largest entry modulus of a complex matrix.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// `(sum_k (1 + lambda_k)^s |a_k|^2)^(1/2)` for one component's coefficients.
pub fn ks_norm(coeffs: &[C64], s: f64) -> Result<f64> {
    ensure_finite(s, "Sobolev index")?;
    let mut acc = 0.0;
    for (i, a) in coeffs.iter().enumerate() {
        if !(a.re.is_finite() && a.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("coefficient {i} is not finite")));
        }
        acc += (1.0 + dirichlet_eigenvalue(i + 1)).powf(s) * a.norm_sqr();
    }
    Ok(acc.sqrt())
}

/// Squared `ks_norm` summed over the `components` blocks of length `modes`.
pub(crate) fn ks_norm_sq_blocks(coeffs: &[C64], modes: usize, s: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(i, a)| (1.0 + dirichlet_eigenvalue(i % modes + 1)).powf(s) * a.norm_sqr())
        .sum()
}

/// Pair `(u0, u1)` of spectral coefficient arrays with a Sobolev level `s`.
///
/// Layout is `[slot][component][mode]`: slot 0 holds the displacement `u0`,
/// slot 1 the velocity `u1`. The natural norm is `K^{s+1} x K^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorState {
    components: usize,
    modes: usize,
    level: f64,
    coeffs: Vec<C64>,
}

impl VectorState {
    pub fn new(components: usize, modes: usize, level: f64, coeffs: Vec<C64>) -> Result<Self> {
        if components == 0 || modes == 0 {
            return Err(Error::InvalidArgument("empty state shape".into()));
        }
        if coeffs.len() != 2 * components * modes {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                2 * components * modes,
                coeffs.len()
            )));
        }
        ensure_finite(level, "state level")?;
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidArgument("state coefficients must be finite".into()));
        }
        Ok(Self { components, modes, level, coeffs })
    }

    pub fn zeros(components: usize, modes: usize, level: f64) -> Result<Self> {
        Self::new(components, modes, level, vec![C64::new(0.0, 0.0); 2 * components * modes])
    }

    /// Builds a state from concatenated displacement and velocity blocks.
    pub fn from_parts(
        components: usize,
        modes: usize,
        level: f64,
        displacement: &[C64],
        velocity: &[C64],
    ) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(displacement.len() + velocity.len());
        coeffs.extend_from_slice(displacement);
        coeffs.extend_from_slice(velocity);
        Self::new(components, modes, level, coeffs)
    }

    /// Random state whose first `active_modes` modes carry standard complex
    /// Gaussian coefficients scaled to unit `K^{s+1}` (resp. `K^s`) weight
    /// per mode.
    pub fn random<R: Rng + ?Sized>(
        components: usize,
        modes: usize,
        level: f64,
        active_modes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut coeffs = vec![C64::new(0.0, 0.0); 2 * components * modes];
        for slot in 0..2 {
            let s = if slot == 0 { level + 1.0 } else { level };
            for n in 0..components {
                for k in 0..active_modes.min(modes) {
                    let scale = (1.0 + dirichlet_eigenvalue(k + 1)).powf(-0.5 * s);
                    coeffs[(slot * components + n) * modes + k] =
                        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * scale;
                }
            }
        }
        Self::new(components, modes, level, coeffs)
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    /// Number of coefficients per slot, `N * M`.
    pub fn slot_len(&self) -> usize {
        self.components * self.modes
    }

    pub fn displacement(&self) -> &[C64] {
        &self.coeffs[..self.slot_len()]
    }

    pub fn velocity(&self) -> &[C64] {
        &self.coeffs[self.slot_len()..]
    }

    /// Coefficients of component `n` in slot 0 (`u0`) or 1 (`u1`).
    pub fn component(&self, slot: usize, n: usize) -> &[C64] {
        let start = (slot * self.components + n) * self.modes;
        &self.coeffs[start..start + self.modes]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Euclidean norm of the raw coefficient vector.
    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `K^{s+1} x K^s` norm of a state at its attached level `s`.
pub fn ks_pair_norm(state: &VectorState) -> f64 {
    let s = state.level();
    let m = state.modes();
    (ks_norm_sq_blocks(state.displacement(), m, s + 1.0)
        + ks_norm_sq_blocks(state.velocity(), m, s))
    .sqrt()
}
