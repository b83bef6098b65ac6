//! Per-component Gaussian messages in natural and moment coordinates.
//!
//! A diagonal Gaussian over `N` components is stored either as moments
//! `(mean, variance)` or as natural parameters `(lambda, precision)` with
//! `lambda = mean / variance` and `precision = 1 / variance`. Inclusion and
//! exclusion of factors are plain additions and subtractions in natural
//! coordinates, which is what the cavity updates below implement.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Natural parameters `(lambda_j, precision_j)` for `j = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams<T> {
    lambda: Vec<T>,
    precision: Vec<T>,
}

/// Moment parameters `(mean_j, variance_j)` for `j = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentParams<T> {
    mean: Vec<T>,
    variance: Vec<T>,
}

/// Closed interval `[lo, hi]` with `0 < lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    lo: T,
    hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo > T::zero()) || !(lo <= hi) || !hi.is_finite() {
            return Err(Error::Config(format!(
                "clip interval [{lo}, {hi}] must satisfy 0 < lo <= hi < inf"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> T {
        self.lo
    }

    pub fn hi(&self) -> T {
        self.hi
    }

    pub fn contains(&self, value: T) -> bool {
        value >= self.lo && value <= self.hi
    }
}

/// Which clip interval applies to a precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionKind {
    /// Precisions produced by the non-linear (denoising) estimator.
    Nle,
    /// Every other precision: linear-stage outputs and both cavities.
    Other,
}

/// Precision clip intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds<T> {
    pub nle_precision: Interval<T>,
    pub other_precision: Interval<T>,
}

impl<T: Real> ClipBounds<T> {
    pub fn new(nle_precision: Interval<T>, other_precision: Interval<T>) -> Self {
        Self {
            nle_precision,
            other_precision,
        }
    }

    pub fn interval(&self, kind: PrecisionKind) -> Interval<T> {
        match kind {
            PrecisionKind::Nle => self.nle_precision,
            PrecisionKind::Other => self.other_precision,
        }
    }
}

impl<T: Real> Default for ClipBounds<T> {
    /// `[1e-8, 1e8]` for NLE precisions and `[1e-12, 1e12]` for all others.
    fn default() -> Self {
        Self {
            nle_precision: Interval {
                lo: T::lit(1e-8),
                hi: T::lit(1e8),
            },
            other_precision: Interval {
                lo: T::lit(1e-12),
                hi: T::lit(1e12),
            },
        }
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: lengths {a} and {b} differ"
        )));
    }
    Ok(())
}

fn check_fraction<T: Real>(e: T) -> Result<()> {
    if !(e > T::zero()) || !e.is_finite() {
        return Err(Error::Config(format!(
            "fractional parameter e = {e} must be > 0"
        )));
    }
    Ok(())
}

impl<T: Real> NaturalParams<T> {
    pub fn new(lambda: Vec<T>, precision: Vec<T>) -> Result<Self> {
        check_len("natural parameters", lambda.len(), precision.len())?;
        Ok(Self { lambda, precision })
    }

    /// All-zero parameters: the improper flat Gaussian.
    pub fn zeros(n: usize) -> Self {
        Self {
            lambda: vec![T::zero(); n],
            precision: vec![T::zero(); n],
        }
    }

    /// Zero-mean Gaussian with common variance.
    pub fn isotropic(n: usize, variance: T) -> Self {
        Self {
            lambda: vec![T::zero(); n],
            precision: vec![variance.recip(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn lambda(&self) -> &[T] {
        &self.lambda
    }

    pub fn precision(&self) -> &[T] {
        &self.precision
    }

    /// Implied means `lambda_j / precision_j` (no validity check).
    pub fn means(&self) -> Vec<T> {
        self.lambda
            .iter()
            .zip(&self.precision)
            .map(|(&l, &p)| l / p)
            .collect()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            lambda: self
                .lambda
                .iter()
                .zip(&other.lambda)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            precision: self
                .precision
                .iter()
                .zip(&other.precision)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Convex combination `d * self + (1 - d) * other`.
    ///
    /// Returns `self` unchanged (bit for bit) when `d == 1`.
    pub fn damp_toward(&self, other: &Self, d: T) -> Result<Self> {
        check_len("damping", self.len(), other.len())?;
        if d == T::one() {
            return Ok(self.clone());
        }
        let c = T::one() - d;
        Ok(self.zip_with(other, |a, b| d * a + c * b))
    }

    /// Every precision lies inside `interval`.
    pub fn precisions_within(&self, interval: &Interval<T>) -> bool {
        self.precision.iter().all(|&p| interval.contains(p))
    }

    /// In-place [`clip`]; returns the number of components whose precision changed.
    pub fn clip_in_place(&mut self, interval: &Interval<T>) -> usize {
        let mut changed = 0;
        for (l, p) in self.lambda.iter_mut().zip(self.precision.iter_mut()) {
            if interval.contains(*p) {
                continue;
            }
            changed += 1;
            let clipped = if *p > interval.hi {
                interval.hi
            } else {
                interval.lo
            };
            if *p == T::zero() || p.is_infinite() {
                // Implied mean is undefined (zero) or zero (infinite).
                *l = T::zero();
            } else if !p.is_nan() {
                *l = *l / *p * clipped;
            }
            *p = clipped;
        }
        changed
    }
}

impl<T: Real> MomentParams<T> {
    pub fn new(mean: Vec<T>, variance: Vec<T>) -> Result<Self> {
        check_len("moment parameters", mean.len(), variance.len())?;
        Ok(Self { mean, variance })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn variance(&self) -> &[T] {
        &self.variance
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<T>) {
        (self.mean, self.variance)
    }

    /// Natural parameters with precisions forced into `interval`.
    ///
    /// Unlike [`moments_to_natural`] this accepts zero or infinite variances
    /// (they map to the interval ends) and always preserves the mean.
    pub fn to_natural_clipped(&self, interval: &Interval<T>) -> NaturalParams<T> {
        let (lambda, precision) = self
            .mean
            .iter()
            .zip(&self.variance)
            .map(|(&m, &v)| {
                let p = v.recip();
                let p = if p.is_nan() || p <= interval.lo {
                    interval.lo
                } else if p >= interval.hi {
                    interval.hi
                } else {
                    p
                };
                (m * p, p)
            })
            .unzip();
        NaturalParams { lambda, precision }
    }
}

/// `lambda = m / var`, `precision = 1 / var`.
pub fn moments_to_natural<T: Real>(moments: &MomentParams<T>) -> Result<NaturalParams<T>> {
    let mut lambda = Vec::with_capacity(moments.len());
    let mut precision = Vec::with_capacity(moments.len());
    for (j, (&m, &v)) in moments.mean.iter().zip(&moments.variance).enumerate() {
        if !(v > T::zero()) || !v.is_finite() {
            return Err(Error::Domain(format!(
                "variance[{j}] = {v} is not strictly positive"
            )));
        }
        lambda.push(m / v);
        precision.push(v.recip());
    }
    Ok(NaturalParams { lambda, precision })
}

/// `var = 1 / precision`, `m = lambda / precision`.
pub fn natural_to_moments<T: Real>(natural: &NaturalParams<T>) -> Result<MomentParams<T>> {
    let mut mean = Vec::with_capacity(natural.len());
    let mut variance = Vec::with_capacity(natural.len());
    for (j, (&l, &p)) in natural.lambda.iter().zip(&natural.precision).enumerate() {
        if !(p > T::zero()) || !p.is_finite() {
            return Err(Error::Domain(format!(
                "precision[{j}] = {p} is not strictly positive"
            )));
        }
        mean.push(l / p);
        variance.push(p.recip());
    }
    Ok(MomentParams { mean, variance })
}

/// Cavity of one estimator: full approximation minus that estimator's own cavity.
///
/// May produce non-positive precisions; callers clip.
pub fn ec_cavity_update<T: Real>(
    full: &NaturalParams<T>,
    own_cavity: &NaturalParams<T>,
) -> Result<NaturalParams<T>> {
    check_len("cavity update", full.len(), own_cavity.len())?;
    Ok(full.zip_with(own_cavity, |a, b| a - b))
}

/// Fractional cavity entering the NLE: `e * (eta_lin - cav_lin)`.
pub fn frac_cavity_to_nle<T: Real>(
    eta_lin: &NaturalParams<T>,
    cav_lin: &NaturalParams<T>,
    e: T,
) -> Result<NaturalParams<T>> {
    check_fraction(e)?;
    check_len("fractional cavity", eta_lin.len(), cav_lin.len())?;
    Ok(eta_lin.zip_with(cav_lin, |a, b| e * (a - b)))
}

/// Fractional cavity entering the linear stage: `eta_nle - cav_nle / e`.
pub fn frac_cavity_to_lin<T: Real>(
    eta_nle: &NaturalParams<T>,
    cav_nle: &NaturalParams<T>,
    e: T,
) -> Result<NaturalParams<T>> {
    check_fraction(e)?;
    check_len("fractional cavity", eta_nle.len(), cav_nle.len())?;
    Ok(eta_nle.zip_with(cav_nle, |a, b| a - b / e))
}

/// Bound every precision to the interval for `kind`.
///
/// Out-of-range precisions (including negative ones) map to the nearest
/// bound, negative ones to the lower bound. `lambda` is rescaled so the
/// implied mean `lambda / precision` is unchanged; a zero precision carries
/// no mean and gets `lambda = 0`.
pub fn clip<T: Real>(
    natural: &NaturalParams<T>,
    bounds: &ClipBounds<T>,
    kind: PrecisionKind,
) -> NaturalParams<T> {
    let mut out = natural.clone();
    out.clip_in_place(&bounds.interval(kind));
    out
}

/// Arithmetic mean of a variance vector.
pub fn average_variance<T: Real>(variances: &[T]) -> Result<T> {
    if variances.is_empty() {
        return Err(Error::Domain("average of an empty variance vector".into()));
    }
    let total = variances.iter().fold(T::zero(), |acc, &v| acc + v);
    Ok(total / T::from_count(variances.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nat(l: &[f64], p: &[f64]) -> NaturalParams<f64> {
        NaturalParams::new(l.to_vec(), p.to_vec()).unwrap()
    }

    fn mom(m: &[f64], v: &[f64]) -> MomentParams<f64> {
        MomentParams::new(m.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn moment_natural_examples() {
        let n = moments_to_natural(&mom(&[2.0, 0.0], &[4.0, 1.0])).unwrap();
        assert_eq!(n.lambda(), &[0.5, 0.0]);
        assert_eq!(n.precision(), &[0.25, 1.0]);

        let m = natural_to_moments(&nat(&[0.5, 0.0], &[0.25, 5.0])).unwrap();
        assert_eq!(m.mean(), &[2.0, 0.0]);
        assert_eq!(m.variance(), &[4.0, 0.2]);
    }

    #[test]
    fn zero_variance_and_bad_precision_are_errors() {
        assert!(matches!(
            moments_to_natural(&mom(&[1.0], &[0.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            natural_to_moments(&nat(&[1.0], &[0.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            natural_to_moments(&nat(&[1.0, 1.0], &[1.0, -3.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(NaturalParams::new(vec![1.0], vec![1.0, 2.0]).is_err());
        let a = nat(&[1.0], &[1.0]);
        let b = nat(&[1.0, 2.0], &[1.0, 2.0]);
        assert!(matches!(ec_cavity_update(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn cavity_examples() {
        let out = ec_cavity_update(&nat(&[3.0], &[2.0]), &nat(&[1.0], &[0.5])).unwrap();
        assert_eq!(out, nat(&[2.0], &[1.5]));

        let x = nat(&[3.0, -1.0], &[2.0, 7.0]);
        assert_eq!(ec_cavity_update(&x, &x).unwrap(), NaturalParams::zeros(2));

        let lin = nat(&[4.0], &[2.0]);
        let cav = nat(&[1.0], &[1.0]);
        assert_eq!(
            frac_cavity_to_nle(&lin, &cav, 2.0).unwrap(),
            nat(&[6.0], &[2.0])
        );
        assert_eq!(
            frac_cavity_to_nle(&lin, &cav, 0.5).unwrap(),
            nat(&[1.5], &[0.5])
        );

        let out = frac_cavity_to_lin(&nat(&[5.0], &[4.0]), &nat(&[2.0], &[2.0]), 2.0).unwrap();
        assert_eq!(out, nat(&[4.0], &[3.0]));
    }

    #[test]
    fn large_fraction_limit() {
        let eta_nle = nat(&[5.0, -2.0], &[4.0, 9.0]);
        let cav = nat(&[2.0, 3.0], &[2.0, 1.0]);
        let out = frac_cavity_to_lin(&eta_nle, &cav, 1e6).unwrap();
        for (a, b) in out.lambda().iter().zip(eta_nle.lambda()) {
            assert!((a - b).abs() < 1e-5);
        }
        for (a, b) in out.precision().iter().zip(eta_nle.precision()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn nonpositive_fraction_is_config_error() {
        let a = nat(&[1.0], &[1.0]);
        for e in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                frac_cavity_to_nle(&a, &a, e),
                Err(Error::Config(_))
            ));
            assert!(matches!(
                frac_cavity_to_lin(&a, &a, e),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn clip_examples() {
        let b = ClipBounds::<f64>::default();
        let out = clip(&nat(&[2e10], &[1e10]), &b, PrecisionKind::Nle);
        assert_eq!(out.precision(), &[1e8]);
        assert_relative_eq!(out.lambda()[0], 2e10 * 1e8 / 1e10, max_relative = 1e-15);

        let out = clip(&nat(&[6.0], &[-3.0]), &b, PrecisionKind::Other);
        assert_eq!(out.precision(), &[1e-12]);
        assert_relative_eq!(
            out.lambda()[0] / out.precision()[0],
            -2.0,
            max_relative = 1e-12
        );

        let x = nat(&[0.7], &[1.0]);
        assert_eq!(clip(&x, &b, PrecisionKind::Nle), x);

        // Degenerate all-zero cavity is rescued to the "no information" end.
        let out = clip(&NaturalParams::zeros(3), &b, PrecisionKind::Other);
        assert_eq!(out.precision(), &[1e-12; 3]);
        assert_eq!(out.lambda(), &[0.0; 3]);
    }

    #[test]
    fn invalid_intervals_rejected() {
        assert!(Interval::new(0.0, 1.0).is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
        assert!(Interval::new(1.0, f64::INFINITY).is_err());
        assert!(Interval::new(1e-3, 1e3).is_ok());
    }

    #[test]
    fn clipped_moment_conversion_handles_degenerate_variances() {
        let iv = Interval::new(1e-8, 1e8).unwrap();
        let n = mom(&[0.0, 3.0, 2.0], &[0.0, f64::INFINITY, 0.5]).to_natural_clipped(&iv);
        assert_eq!(n.precision(), &[1e8, 1e-8, 2.0]);
        assert_eq!(n.lambda()[0], 0.0);
        assert_relative_eq!(n.lambda()[1], 3e-8, max_relative = 1e-15);
        assert_eq!(n.lambda()[2], 4.0);
    }

    #[test]
    fn damping_at_one_is_identity() {
        let a = nat(&[0.1, -0.3], &[3.0, 0.2]);
        let b = nat(&[f64::MAX, 2.0], &[1.0, 9.0]);
        assert_eq!(a.damp_toward(&b, 1.0).unwrap(), a);
        let half = a.damp_toward(&b, 0.5).unwrap();
        assert_eq!(half.precision(), &[2.0, 4.6]);
    }

    #[test]
    fn average_variance_examples() {
        assert_eq!(average_variance(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_relative_eq!(
            average_variance(&[0.3; 17]).unwrap(),
            0.3,
            max_relative = 1e-15
        );
        assert!(average_variance::<f64>(&[]).is_err());
    }

    /// Pairwise (recursive halving) summation; shares nothing with the fold above.
    fn pairwise_sum(v: &[f64]) -> f64 {
        match v.len() {
            0 => 0.0,
            1 => v[0],
            n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
        }
    }

    #[test]
    fn single_precision_works_too() {
        let n =
            moments_to_natural(&MomentParams::<f32>::new(vec![2.0], vec![4.0]).unwrap()).unwrap();
        assert_eq!(n.lambda(), &[0.5f32]);
        let out = clip(
            &NaturalParams::<f32>::new(vec![1.0], vec![1e10]).unwrap(),
            &ClipBounds::default(),
            PrecisionKind::Nle,
        );
        assert_eq!(out.precision(), &[1e8f32]);
    }

    fn natural_strategy() -> impl Strategy<Value = NaturalParams<f64>> {
        (1usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(-1e3f64..1e3, n),
                prop::collection::vec(
                    prop_oneof![-1e14f64..1e14, 1e-14f64..1e-6, -1e-6f64..1e-14],
                    n,
                ),
            )
                .prop_map(|(l, p)| NaturalParams::new(l, p).unwrap())
        })
    }

    proptest! {
        #[test]
        fn roundtrip_moments(
            pairs in prop::collection::vec((-1e3f64..1e3, 1e-6f64..1e6), 1..50)
        ) {
            let (m, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let x = mom(&m, &v);
            let back = natural_to_moments(&moments_to_natural(&x).unwrap()).unwrap();
            for (a, b) in back.mean().iter().zip(x.mean()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            for (a, b) in back.variance().iter().zip(x.variance()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }

        #[test]
        fn unit_fraction_matches_plain_cavity(a in natural_strategy(), seed in 0u64..1000) {
            let b = NaturalParams::new(
                a.lambda().iter().map(|x| x * 0.37 + seed as f64).collect(),
                a.precision().iter().map(|x| x * -1.3 + 2.0).collect(),
            ).unwrap();
            let plain = ec_cavity_update(&a, &b).unwrap();
            prop_assert_eq!(&frac_cavity_to_nle(&a, &b, 1.0).unwrap(), &plain);
            prop_assert_eq!(&frac_cavity_to_lin(&a, &b, 1.0).unwrap(), &plain);
        }

        #[test]
        fn clip_idempotent_and_mean_preserving(x in natural_strategy(), nle in any::<bool>()) {
            let bounds = ClipBounds::<f64>::default();
            let kind = if nle { PrecisionKind::Nle } else { PrecisionKind::Other };
            let once = clip(&x, &bounds, kind);
            let twice = clip(&once, &bounds, kind);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.precisions_within(&bounds.interval(kind)));
            for j in 0..x.len() {
                if x.precision()[j] > 0.0 {
                    let before = x.lambda()[j] / x.precision()[j];
                    let after = once.lambda()[j] / once.precision()[j];
                    prop_assert!((before - after).abs() <= 1e-12 * before.abs().max(1e-300));
                }
            }
        }

        #[test]
        fn average_matches_pairwise_oracle(v in prop::collection::vec(1e-6f64..1e6, 1..500)) {
            let got = average_variance(&v).unwrap();
            let want = pairwise_sum(&v) / v.len() as f64;
            prop_assert!((got - want).abs() <= 1e-12 * want);
        }

        /// Chaining both fractional updates equals `e (eta_lin' - eta_nle) + cav_nle`.
        #[test]
        fn fractional_composition_identity(
            e in 0.1f64..5.0,
            n in 1usize..12,
            steps in prop::collection::vec(
                (prop::collection::vec(-10.0f64..10.0, 24), prop::collection::vec(0.01f64..50.0, 24)),
                2..20,
            ),
        ) {
            let slice = |(l, p): &(Vec<f64>, Vec<f64>), off: usize| {
                NaturalParams::new(l[off..off + n].to_vec(), p[off..off + n].to_vec()).unwrap()
            };
            let mut cav_nle = NaturalParams::isotropic(n, 2.0);
            for w in steps.windows(2) {
                let eta_nle = slice(&w[0], 0);
                let eta_lin_next = slice(&w[1], 12);
                let cav_lin = frac_cavity_to_lin(&eta_nle, &cav_nle, e).unwrap();
                let next = frac_cavity_to_nle(&eta_lin_next, &cav_lin, e).unwrap();
                for j in 0..n {
                    for (got, a, b, c) in [
                        (next.lambda()[j], eta_lin_next.lambda()[j], eta_nle.lambda()[j], cav_nle.lambda()[j]),
                        (next.precision()[j], eta_lin_next.precision()[j], eta_nle.precision()[j], cav_nle.precision()[j]),
                    ] {
                        let want = e * (a - b) + c;
                        let scale = e * (a.abs() + b.abs()) + c.abs();
                        prop_assert!((got - want).abs() <= 1e-12 * scale);
                    }
                }
                cav_nle = next;
            }
        }
    }
}
