//! Smooth time windows and `H^s(0, T)` norms of windowed boundary signals.
//!
//! Signals are multiplied by the window, extended by zero, padded to four
//! times their length and transformed; the norm is the Riemann sum of
//! `(1 + tau^2)^s |g_hat(tau)|^2` with the unitary Fourier convention.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{ensure_finite, Error, Result};
use crate::evolution::TraceSignal;
use crate::spectral::C64;

pub const PADDING_FACTOR: usize = 4;

/// `exp(-1/x)` for `x > 0`, zero otherwise.
fn flat_exp(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// C-infinity step from 0 on `(-inf, 0]` to 1 on `[1, inf)`.
pub fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = flat_exp(x);
        a / (a + flat_exp(1.0 - x))
    }
}

/// Smooth compactly supported profile on `[start, end]` inside `(0, T)`:
/// exponential ramps around a central plateau where it equals one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeWindow {
    horizon: f64,
    start: f64,
    end: f64,
    plateau: f64,
}

pub fn make_window(horizon: f64, start: f64, end: f64, plateau: f64) -> Result<TimeWindow> {
    TimeWindow::new(horizon, start, end, plateau)
}

impl TimeWindow {
    pub fn new(horizon: f64, start: f64, end: f64, plateau: f64) -> Result<Self> {
        for (v, name) in [(horizon, "horizon"), (start, "start"), (end, "end"), (plateau, "plateau")] {
            if !v.is_finite() {
                return Err(Error::InvalidWindow(format!("{name} must be finite")));
            }
        }
        if !(0.0 < start && start < end && end < horizon) {
            return Err(Error::InvalidWindow(format!(
                "support [{start}, {end}] must lie strictly inside (0, {horizon})"
            )));
        }
        if !(0.0..1.0).contains(&plateau) {
            return Err(Error::InvalidWindow(format!("plateau fraction {plateau} not in [0, 1)")));
        }
        Ok(Self { horizon, start, end, plateau })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn plateau(&self) -> f64 {
        self.plateau
    }

    fn ramp_len(&self) -> f64 {
        0.5 * (1.0 - self.plateau) * (self.end - self.start)
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= self.start || t >= self.end {
            return 0.0;
        }
        let ramp = self.ramp_len();
        let up = smoothstep((t - self.start) / ramp);
        let down = smoothstep((self.end - t) / ramp);
        up.min(down)
    }

    /// Samples on the uniform grid `t_i = i T / steps`, `i = 0..=steps`.
    pub fn sample(&self, steps: usize) -> Vec<f64> {
        let dt = self.horizon / steps as f64;
        (0..=steps).map(|i| self.value(i as f64 * dt)).collect()
    }

    /// `true` when `self > 0` on the closed support of `inner`.
    pub fn positive_on_support_of(&self, inner: &TimeWindow) -> bool {
        self.start < inner.start && inner.end < self.end
    }

    /// Non-strict support inclusion.
    pub fn covers(&self, inner: &TimeWindow) -> bool {
        self.start <= inner.start && inner.end <= self.end
    }
}

/// One window profile per endpoint of the interval; `None` means that endpoint
/// is not observed. Both `None` is the zero window.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundaryWindow {
    pub left: Option<TimeWindow>,
    pub right: Option<TimeWindow>,
}

impl BoundaryWindow {
    pub fn none() -> Self {
        Self { left: None, right: None }
    }

    pub fn both(w: TimeWindow) -> Self {
        Self { left: Some(w), right: Some(w) }
    }

    pub fn left_only(w: TimeWindow) -> Self {
        Self { left: Some(w), right: None }
    }

    pub fn right_only(w: TimeWindow) -> Self {
        Self { left: None, right: Some(w) }
    }

    /// Window at endpoint 0 (`x = 0`) or 1 (`x = 1`).
    pub fn endpoint(&self, e: usize) -> Option<&TimeWindow> {
        match e {
            0 => self.left.as_ref(),
            _ => self.right.as_ref(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }

    /// Samples per endpoint; zeros where the endpoint is not observed.
    pub fn sample(&self, steps: usize) -> [Vec<f64>; 2] {
        let one = |w: Option<&TimeWindow>| match w {
            Some(w) => w.sample(steps),
            None => vec![0.0; steps + 1],
        };
        [one(self.left.as_ref()), one(self.right.as_ref())]
    }

    pub fn check_horizon(&self, horizon: f64) -> Result<()> {
        for w in [self.left, self.right].into_iter().flatten() {
            if (w.horizon - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
                return Err(Error::InvalidWindow(format!(
                    "window built for horizon {} used with horizon {horizon}",
                    w.horizon
                )));
            }
        }
        Ok(())
    }

    /// `self > 0` on the support of `inner`, endpoint by endpoint.
    pub fn positive_on_support_of(&self, inner: &BoundaryWindow) -> bool {
        (0..2).all(|e| match (inner.endpoint(e), self.endpoint(e)) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(i), Some(o)) => o.positive_on_support_of(i),
        })
    }

    pub fn covers(&self, inner: &BoundaryWindow) -> bool {
        (0..2).all(|e| match (inner.endpoint(e), self.endpoint(e)) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(i), Some(o)) => o.covers(i),
        })
    }
}

/// Discrete frequency grid and square-root weights for `H^s` norms of
/// compactly supported series of length `n` sampled with step `dt`.
#[derive(Clone)]
pub struct SobolevSpectrum {
    len: usize,
    padded: usize,
    fft: Arc<dyn Fft<f64>>,
    /// `sqrt((1 + tau_j^2)^s dtau) * dt / sqrt(2 pi)` per padded bin.
    weights: Vec<f64>,
}

impl SobolevSpectrum {
    pub fn new(len: usize, dt: f64, s: f64) -> Result<Self> {
        ensure_finite(s, "Sobolev index")?;
        if len == 0 || !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument("empty series or non-positive step".into()));
        }
        let padded = PADDING_FACTOR * len;
        let fft = FftPlanner::new().plan_fft_forward(padded);
        let dtau = 2.0 * PI / (padded as f64 * dt);
        let weights = (0..padded)
            .map(|j| {
                let signed = if j <= padded / 2 { j as f64 } else { j as f64 - padded as f64 };
                let tau = signed * dtau;
                ((1.0 + tau * tau).powf(s) * dtau).sqrt() * dt / (2.0 * PI).sqrt()
            })
            .collect();
        Ok(Self { len, padded, fft, weights })
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    /// Weighted spectrum whose Euclidean norm is the `H^s` norm.
    pub fn transform(&self, samples: &[C64]) -> Vec<C64> {
        assert_eq!(samples.len(), self.len, "series length does not match the spectrum");
        let mut buf = vec![C64::new(0.0, 0.0); self.padded];
        buf[..self.len].copy_from_slice(samples);
        self.fft.process(&mut buf);
        for (b, w) in buf.iter_mut().zip(&self.weights) {
            *b *= *w;
        }
        buf
    }

    pub fn norm(&self, samples: &[C64]) -> f64 {
        self.transform(samples).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `H^s(R)` norm of a series already supported inside the sampled interval.
pub fn hs_norm_compact(samples: &[C64], dt: f64, s: f64) -> Result<f64> {
    Ok(SobolevSpectrum::new(samples.len(), dt, s)?.norm(samples))
}

/// `||Theta g||_{H^s}` for one scalar series on the grid of `window`.
pub fn hs_series_norm(samples: &[C64], s: f64, window: &TimeWindow) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("series needs at least two samples".into()));
    }
    let steps = samples.len() - 1;
    let theta = window.sample(steps);
    let windowed: Vec<C64> = samples.iter().zip(&theta).map(|(g, w)| g * *w).collect();
    hs_norm_compact(&windowed, window.horizon() / steps as f64, s)
}

/// `||Theta d_nu u||_{H^s}` summed over endpoints and components; endpoints
/// without a window contribute nothing.
pub fn hs_time_norm(signal: &TraceSignal, s: f64, window: &BoundaryWindow) -> Result<f64> {
    window.check_horizon(signal.horizon())?;
    let steps = signal.len() - 1;
    let spectrum = SobolevSpectrum::new(signal.len(), signal.dt(), s)?;
    let theta = window.sample(steps);
    let mut total = 0.0;
    for (e, th) in theta.iter().enumerate() {
        if window.endpoint(e).is_none() {
            continue;
        }
        for n in 0..signal.components() {
            let g: Vec<C64> = signal.series(e, n).iter().zip(th).map(|(g, w)| g * *w).collect();
            total += spectrum.norm(&g).powi(2);
        }
    }
    Ok(total.sqrt())
}

/// Spectral derivative of order `order` of a `period`-periodic series sampled
/// at `n` equispaced points (the last point of the period excluded).
pub fn spectral_derivative(samples: &[C64], period: f64, order: u32) -> Vec<C64> {
    let n = samples.len();
    if n == 0 || order == 0 {
        return samples.to_vec();
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf = samples.to_vec();
    fwd.process(&mut buf);
    for (j, b) in buf.iter_mut().enumerate() {
        if n.is_multiple_of(2) && j == n / 2 {
            *b = C64::new(0.0, 0.0);
            continue;
        }
        let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let omega = 2.0 * PI * signed / period;
        *b *= C64::new(0.0, omega).powu(order);
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c * scale).collect()
}
