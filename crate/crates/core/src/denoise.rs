//! Scalar MMSE denoising under a spike-and-slab (Bernoulli–Gaussian) prior.
//!
//! For a cavity message `N(x; x_tilde, v_tilde)` the tilted density is
//! `p(x) exp(x_tilde x / v_tilde - x^2 / (2 v_tilde))`. Its first two moments
//! are the NLE outputs. [`denoise`] evaluates them in closed form;
//! [`denoise_numeric`] integrates the same density numerically and serves as
//! the reference it is checked against.

use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::scalar::Real;

/// `p(x) = (1 - rho) delta(x) + rho N(x; 0, active_variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliGaussPrior<T> {
    rho: T,
    active_variance: T,
}

/// Moments of the tilted distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments<T> {
    pub mean: T,
    pub variance: T,
    /// `ln Z` of the tilted density.
    pub log_partition: T,
}

impl<T: Real> BernoulliGaussPrior<T> {
    pub fn new(rho: T, active_variance: T) -> Result<Self> {
        if !(rho > T::zero() && rho <= T::one()) {
            return Err(Error::Config(format!(
                "activity ratio {rho} must lie in (0, 1]"
            )));
        }
        if !(active_variance > T::zero()) || !active_variance.is_finite() {
            return Err(Error::Config(format!(
                "active variance {active_variance} must be positive"
            )));
        }
        Ok(Self {
            rho,
            active_variance,
        })
    }

    /// Prior with `rho = s / n` and unit active variance.
    pub fn from_sparsity(s: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("signal length must be positive".into()));
        }
        Self::new(T::from_count(s) / T::from_count(n), T::one())
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn active_variance(&self) -> T {
        self.active_variance
    }

    /// Prior variance `rho * active_variance`.
    pub fn variance(&self) -> T {
        self.rho * self.active_variance
    }

    /// The prior as a generic spike-plus-density description for [`denoise_numeric`].
    pub fn density(&self) -> PriorDensity<T, impl Fn(T) -> T + Copy> {
        let a = self.active_variance;
        let log_norm = T::lit(-0.5) * (T::lit(2.0 * std::f64::consts::PI) * a).ln();
        PriorDensity {
            spike_weight: T::one() - self.rho,
            slab_weight: self.rho,
            slab_log_density: move |x: T| log_norm - x * x / (a + a),
            slab_scale: a.sqrt(),
        }
    }
}

/// A point mass at zero plus a weighted, unimodal continuous density.
#[derive(Debug, Clone, Copy)]
pub struct PriorDensity<T, F> {
    pub spike_weight: T,
    pub slab_weight: T,
    /// Log of the normalised continuous part.
    pub slab_log_density: F,
    /// Rough width of the continuous part.
    pub slab_scale: T,
}

fn check_cavity_variance<T: Real>(v_tilde: T) -> Result<()> {
    if !(v_tilde > T::zero()) || !v_tilde.is_finite() {
        return Err(Error::Domain(format!(
            "cavity variance {v_tilde} must be positive"
        )));
    }
    Ok(())
}

/// Closed-form posterior mean and variance under the spike-and-slab prior.
///
/// The tilted density is a two-component mixture: the spike at zero with
/// evidence `(1 - rho)`, and the Gaussian product with evidence
/// `rho sqrt(v / (a + v)) exp(x^2 a / (2 v (a + v)))`. Evidences are combined
/// in the log domain.
pub fn denoise<T: Real>(
    prior: &BernoulliGaussPrior<T>,
    x_tilde: T,
    v_tilde: T,
) -> Result<TiltedMoments<T>> {
    check_cavity_variance(v_tilde)?;
    let a = prior.active_variance;
    let total = a + v_tilde;
    let half = T::lit(0.5);

    let log_slab = prior.rho.ln()
        + half * (v_tilde / total).ln()
        + x_tilde * x_tilde * a / ((v_tilde + v_tilde) * total);
    let log_spike = (T::one() - prior.rho).ln();
    let top = log_slab.max(log_spike);
    let log_partition = top + ((log_slab - top).exp() + (log_spike - top).exp()).ln();
    let slab_resp = (log_slab - log_partition).exp();
    let spike_resp = (log_spike - log_partition).exp();

    let slab_mean = x_tilde * (a / total);
    let slab_var = a * v_tilde / total;
    Ok(TiltedMoments {
        mean: slab_resp * slab_mean,
        variance: slab_resp * slab_var + slab_resp * spike_resp * slab_mean * slab_mean,
        log_partition,
    })
}

/// Locate the maximiser of a unimodal function on `[lo, hi]`.
fn golden_max<T: Real, F: Fn(T) -> T>(f: &F, mut lo: T, mut hi: T) -> T {
    let ratio = T::lit(0.618_033_988_749_894_8);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..300 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
        if !(hi - lo > T::epsilon() * (lo.abs() + hi.abs())) {
            break;
        }
    }
    T::lit(0.5) * (lo + hi)
}

/// Distance from `mode` toward `edge` at which `f` has dropped by 1/2.
fn half_width<T: Real, F: Fn(T) -> T>(f: &F, mode: T, edge: T) -> T {
    let target = f(mode) - T::lit(0.5);
    if f(edge) >= target {
        return (edge - mode).abs();
    }
    let (mut inside, mut outside) = (mode, edge);
    for _ in 0..200 {
        let mid = T::lit(0.5) * (inside + outside);
        if f(mid) >= target {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    (inside - mode)
        .abs()
        .max(T::epsilon() * (T::one() + mode.abs()))
}

/// Tilted moments by numerical integration.
///
/// The point mass enters analytically. The continuous part is integrated
/// with adaptive Gauss–Kronrod after shifting its log-integrand by its
/// maximum; breakpoints are placed around the numerically located mode at
/// multiples of its measured half-width.
pub fn denoise_numeric<T: Real, F: Fn(T) -> T>(
    prior: &PriorDensity<T, F>,
    x_tilde: T,
    v_tilde: T,
) -> Result<TiltedMoments<T>> {
    check_cavity_variance(v_tilde)?;
    let twelve = T::lit(12.0);
    let log_integrand =
        |x: T| (prior.slab_log_density)(x) + x_tilde * x / v_tilde - x * x / (v_tilde + v_tilde);
    let search_lo = (-twelve * prior.slab_scale).min(x_tilde - twelve * v_tilde.sqrt());
    let search_hi = (twelve * prior.slab_scale).max(x_tilde + twelve * v_tilde.sqrt());
    let mode = golden_max(&log_integrand, search_lo, search_hi);
    let peak = log_integrand(mode);
    let left = half_width(&log_integrand, mode, search_lo);
    let right = half_width(&log_integrand, mode, search_hi);

    let lo = (-twelve * prior.slab_scale).min(mode - T::lit(40.0) * left);
    let hi = (twelve * prior.slab_scale).max(mode + T::lit(40.0) * right);
    let mut breaks = vec![lo, hi];
    for k in [
        0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0,
    ] {
        let k = T::lit(k);
        for b in [mode - k * left, mode + k * right] {
            if b > lo && b < hi {
                breaks.push(b);
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup();

    let tol = Tolerance {
        relative: 1e-12f64.max(1e3 * T::epsilon().to_f64().unwrap_or(1e-7)),
        ..Tolerance::default()
    };
    // In the offset t = x - mode the exponent stays O(1) near the peak;
    // evaluating log_integrand(x) - peak directly cancels terms of size
    // x_tilde^2 / v_tilde and leaves noise above the quadrature tolerance.
    let slab_at_mode = (prior.slab_log_density)(mode);
    let half = T::lit(0.5);
    let scaled = |t: T| {
        ((prior.slab_log_density)(mode + t) - slab_at_mode
            + t * (x_tilde - mode - half * t) / v_tilde)
            .exp()
    };
    let offsets: Vec<T> = breaks.iter().map(|&b| b - mode).collect();

    // Mass terms are all relative to exp(peak).
    let spike = prior.spike_weight * (-peak).exp();
    let slab_integral = quadrature::integrate(scaled, &offsets, tol)?.value;
    let slab = prior.slab_weight * slab_integral;
    let z = spike + slab;
    if !(z > T::zero()) || !z.is_finite() {
        return Err(Error::Quadrature(format!(
            "normaliser {z} at x_tilde = {x_tilde}, v_tilde = {v_tilde}"
        )));
    }
    // The offset moment may cancel across zero; bound its error by the mass
    // scale rather than by its own value.
    let spread = left + right;
    let signed_tol = Tolerance {
        absolute: (T::lit(1e-14) * spread * slab_integral)
            .to_f64()
            .unwrap_or(0.0),
        ..tol
    };
    let offset_moment = quadrature::integrate(|t| t * scaled(t), &offsets, signed_tol)?.value;
    let mean = prior.slab_weight * (mode * slab_integral + offset_moment) / z;
    let shift = mode - mean;
    let central = prior.slab_weight
        * quadrature::integrate(|t| (t + shift) * (t + shift) * scaled(t), &offsets, tol)?.value;
    let variance = (spike * mean * mean + central) / z;
    Ok(TiltedMoments {
        mean,
        variance,
        log_partition: peak + z.ln(),
    })
}
