//! Globally adaptive 7/15-point Gauss–Kronrod quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::Real;

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for nodes 1, 3, 5 and the centre.
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Integration settings.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub relative: f64,
    pub absolute: f64,
    pub max_segments: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            relative: 1e-12,
            absolute: 0.0,
            max_segments: 4000,
        }
    }
}

/// Result of a converged integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate<T> {
    pub value: T,
    pub error: T,
    pub segments: usize,
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl<T: Real> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl<T: Real> Eq for Segment<T> {}

impl<T: Real> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(Ordering::Equal)
    }
}

fn kronrod<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> Segment<T> {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let radius = half * (b - a);
    let fc = f(center);
    let mut kronrod = fc * T::lit(KRONROD_WEIGHTS[7]);
    let mut gauss = fc * T::lit(GAUSS_WEIGHTS[3]);
    for i in 0..7 {
        let dx = radius * T::lit(KRONROD_NODES[i]);
        let pair = f(center - dx) + f(center + dx);
        kronrod += pair * T::lit(KRONROD_WEIGHTS[i]);
        if i % 2 == 1 {
            gauss += pair * T::lit(GAUSS_WEIGHTS[i / 2]);
        }
    }
    Segment {
        a,
        b,
        value: kronrod * radius,
        error: ((kronrod - gauss) * radius).abs(),
    }
}

/// Integrate `f` over `[breaks[0], breaks[last]]`, starting from the given
/// (sorted) breakpoints and bisecting the worst segment until the summed
/// error estimate meets the tolerance.
pub fn integrate<T: Real, F: Fn(T) -> T>(
    f: F,
    breaks: &[T],
    tol: Tolerance,
) -> Result<Estimate<T>> {
    if breaks.len() < 2 {
        return Err(Error::Quadrature("need at least two breakpoints".into()));
    }
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod(&f, w[0], w[1]));
        }
    }
    let rel = T::lit(tol.relative);
    let abs = T::lit(tol.absolute);
    loop {
        let value = heap.iter().fold(T::zero(), |s, seg| s + seg.value);
        let error = heap.iter().fold(T::zero(), |s, seg| s + seg.error);
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite estimate {value} (error {error}) over [{}, {}]",
                breaks[0],
                breaks[breaks.len() - 1]
            )));
        }
        if error <= abs.max(rel * value.abs()) {
            return Ok(Estimate {
                value,
                error,
                segments: heap.len(),
            });
        }
        if heap.len() >= tol.max_segments {
            return Err(Error::Quadrature(format!(
                "{} segments exhausted over [{}, {}]: estimate {value}, error {error}, target {}",
                heap.len(),
                breaks[0],
                breaks[breaks.len() - 1],
                abs.max(rel * value.abs())
            )));
        }
        let worst = heap.pop().expect("at least one segment");
        let mid = T::lit(0.5) * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            return Err(Error::Quadrature(format!(
                "segment [{}, {}] cannot be bisected further (error {})",
                worst.a, worst.b, worst.error
            )));
        }
        heap.push(kronrod(&f, worst.a, mid));
        heap.push(kronrod(&f, mid, worst.b));
    }
}
