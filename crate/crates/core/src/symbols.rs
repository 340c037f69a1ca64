//! Tangential symbols of the half-space model `p = xi_n^2 + rho`,
//! `rho = -tau^2 + alpha xi'^2`, and quadrature checks of their identities.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_kronrod, tanh_sinh};
use crate::window::smoothstep;

const ABS_TOL: f64 = 1e-14;
const REL_TOL: f64 = 1e-12;

/// Smooth transition from 0 on `(-inf, lo]` to 1 on `[hi, inf)`.
pub fn transition(x: f64, lo: f64, hi: f64) -> f64 {
    smoothstep((x - lo) / (hi - lo))
}

/// `chi_0`: 0 up to 1/5, 1 from 1/4 on.
pub fn chi0(x: f64) -> f64 {
    transition(x, 0.2, 0.25)
}

/// `theta`: 0 up to 1/10, 1 from 1/5 on.
pub fn theta(x: f64) -> f64 {
    transition(x, 0.1, 0.2)
}

/// Frequencies `(tau, xi')` with the flat tangential metric `|xi'|^2 = alpha xi'^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolPoint {
    pub tau: f64,
    pub xi: f64,
    pub alpha: f64,
}

impl SymbolPoint {
    pub fn new(tau: f64, xi: f64, alpha: f64) -> Result<Self> {
        if !(tau.is_finite() && xi.is_finite() && alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument("symbol point needs finite frequencies and alpha > 0".into()));
        }
        Ok(Self { tau, xi, alpha })
    }

    /// `alpha xi'^2`.
    pub fn tangential(&self) -> f64 {
        self.alpha * self.xi * self.xi
    }

    pub fn rho(&self) -> f64 {
        -self.tau * self.tau + self.tangential()
    }

    pub fn p(&self, xi_n: f64) -> f64 {
        xi_n * xi_n + self.rho()
    }

    /// `1 + tau^2 + alpha xi'^2`.
    pub fn bracket(&self) -> f64 {
        1.0 + self.tau * self.tau + self.tangential()
    }

    pub fn chi(&self) -> f64 {
        chi0(self.rho() / self.bracket())
    }

    pub fn chi_tilde(&self, xi_n: f64) -> f64 {
        theta(self.p(xi_n) / (self.bracket() + xi_n * xi_n))
    }

    /// `7 tau^2 > 1 + alpha xi'^2`.
    pub fn satisfies_support_inequality(&self) -> bool {
        7.0 * self.tau * self.tau > 1.0 + self.tangential()
    }
}

/// `int_R g(x) dx` through `x = t / (1 - t^2)` on `(-1, 1)`.
fn integrate_real_line<F: Fn(f64) -> f64>(g: F) -> Result<f64> {
    gauss_kronrod(
        |t| {
            let one = 1.0 - t * t;
            if one <= 0.0 {
                return 0.0;
            }
            let x = t / one;
            g(x) * (1.0 + t * t) / (one * one)
        },
        -1.0,
        1.0,
        ABS_TOL,
        REL_TOL,
    )
}

/// `q_T = int_R chi_tilde / (xi_n^2 + rho) d xi_n`.
pub fn q_tangential(point: &SymbolPoint) -> Result<f64> {
    integrate_real_line(|xn| {
        let ct = point.chi_tilde(xn);
        if ct == 0.0 {
            0.0
        } else {
            ct / point.p(xn)
        }
    })
}

/// `pi / sqrt(rho)`, the value of `q_T` wherever `chi > 0`.
pub fn q_tangential_closed_form(point: &SymbolPoint) -> Option<f64> {
    let rho = point.rho();
    (rho > 0.0).then(|| PI / rho.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FRepresentations {
    pub direct: f64,
    pub bounded_interval: f64,
    pub unit_interval: f64,
}

impl FRepresentations {
    pub fn max_pairwise_gap(&self) -> f64 {
        let v = [self.direct, self.bounded_interval, self.unit_interval];
        let mut gap = 0.0f64;
        for i in 0..3 {
            for j in i + 1..3 {
                gap = gap.max((v[i] - v[j]).abs());
            }
        }
        gap
    }
}

/// `F(s) = int_R theta((x^2 + s) / (x^2 + 1)) / (x^2 + s) dx`.
pub fn f_direct(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    integrate_real_line(|x| {
        let w = theta((x * x + sigma) / (x * x + 1.0));
        if w == 0.0 {
            0.0
        } else {
            w / (x * x + sigma)
        }
    })
}

/// `int_{max(s, 1/10)}^1 theta(u) / (u sqrt(1 - u) sqrt(u - s)) du` by tanh-sinh.
pub fn f_bounded_interval(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let a = sigma.max(0.1);
    tanh_sinh(
        |u, da, db| {
            let w = theta(u);
            if w == 0.0 {
                return 0.0;
            }
            // u - sigma = (a - sigma) + da keeps the endpoint singularity exact.
            w / (u * db.sqrt() * ((a - sigma) + da).sqrt())
        },
        a,
        1.0,
        1e-13,
    )
}

/// Bounded form after `u = a + (1 - a) sin^2(pi y / 2)`, `y` in `[0, 1]`,
/// which removes both endpoint singularities.
pub fn f_unit_interval(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let a = sigma.max(0.1);
    let gap = a - sigma;
    gauss_kronrod(
        |y| {
            let phi = 0.5 * PI * y;
            let s = phi.sin();
            let u = a + (1.0 - a) * s * s;
            let w = theta(u);
            if w == 0.0 {
                return 0.0;
            }
            let body = if gap == 0.0 {
                2.0 / u
            } else {
                2.0 * (1.0 - a).sqrt() * s / (u * (gap + (1.0 - a) * s * s).sqrt())
            };
            0.5 * PI * w * body
        },
        0.0,
        1.0,
        ABS_TOL,
        REL_TOL,
    )
}

pub fn f_representations(sigma: f64) -> Result<FRepresentations> {
    Ok(FRepresentations {
        direct: f_direct(sigma)?,
        bounded_interval: f_bounded_interval(sigma)?,
        unit_interval: f_unit_interval(sigma)?,
    })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma < 1.0) {
        return Err(Error::InvalidArgument(format!("F needs sigma' < 1, got {sigma}")));
    }
    Ok(())
}
