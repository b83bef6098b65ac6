//! Joint linear (LMMSE) estimator under the channel constraint `y = A x + n`.
//!
//! With cavity mean `x_tilde` and diagonal cavity covariance `phi_tilde`,
//! the fractional estimator solves with the symmetric positive definite
//! system matrix `Q = A^T A + e sigma_n^2 diag(phi_tilde)^-1`:
//!
//! ```text
//! mean     = x_tilde + Q^-1 A^T (y - A x_tilde)
//! variance = e sigma_n^2 diag(Q^-1)
//! ```
//!
//! `Q` is Cholesky-factored once per call; the same factor yields the solve
//! and, column by column, the diagonal of `Q^-1`. When the cavity variances
//! are all equal and the model carries an eigendecomposition of `A^T A`
//! ([`ChannelModel::with_spectral`]), `Q^-1` is applied in the eigenbasis
//! instead, at `O(N^2)` per call.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `y = A x + n`, `n ~ N(0, sigma_n2 I)`, with optional Gram caches.
#[derive(Debug, Clone)]
pub struct ChannelModel<T: Real> {
    a: DMatrix<T>,
    y: DVector<T>,
    sigma_n2: T,
    gram: Option<DMatrix<T>>,
    aty: Option<DVector<T>>,
    spectral: Option<Spectral<T>>,
}

/// `A^T A = V diag(values) V^T`, with `V` squared elementwise alongside.
#[derive(Debug, Clone)]
struct Spectral<T: Real> {
    vectors: DMatrix<T>,
    vectors_sq: DMatrix<T>,
    values: Vec<T>,
}

impl<T: Real> ChannelModel<T> {
    /// Build the model and cache `A^T A` and `A^T y`.
    pub fn new(a: DMatrix<T>, y: DVector<T>, sigma_n2: T) -> Result<Self> {
        let mut model = Self::new_uncached(a, y, sigma_n2)?;
        model.gram = Some(model.a.tr_mul(&model.a));
        model.aty = Some(model.a.tr_mul(&model.y));
        Ok(model)
    }

    /// Build the model without caches; every solve recomputes from `A`.
    pub fn new_uncached(a: DMatrix<T>, y: DVector<T>, sigma_n2: T) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows but y has {} entries",
                a.nrows(),
                y.len()
            )));
        }
        if a.ncols() == 0 {
            return Err(Error::Dimension("A has no columns".into()));
        }
        if !(sigma_n2 > T::zero()) || !sigma_n2.is_finite() {
            return Err(Error::Config(format!(
                "noise variance {sigma_n2} must be positive"
            )));
        }
        Ok(Self {
            a,
            y,
            sigma_n2,
            gram: None,
            aty: None,
            spectral: None,
        })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn sigma_n2(&self) -> T {
        self.sigma_n2
    }

    /// Number of measurements `M`.
    pub fn measurements(&self) -> usize {
        self.a.nrows()
    }

    /// Signal length `N`.
    pub fn signal_len(&self) -> usize {
        self.a.ncols()
    }

    pub fn is_cached(&self) -> bool {
        self.gram.is_some()
    }

    pub fn has_spectral(&self) -> bool {
        self.spectral.is_some()
    }
}

impl<T: Real + nalgebra::RealField> ChannelModel<T> {
    /// Also cache an eigendecomposition of `A^T A` (rounding-level negative
    /// eigenvalues are set to zero).
    pub fn with_spectral(mut self) -> Self {
        let gram = match &self.gram {
            Some(g) => g.clone(),
            None => self.a.tr_mul(&self.a),
        };
        let eig = nalgebra::SymmetricEigen::new(gram);
        let values = eig
            .eigenvalues
            .iter()
            .map(|&v| Float::max(v, T::zero()))
            .collect();
        let vectors_sq = eig.eigenvectors.map(|v| v * v);
        self.spectral = Some(Spectral {
            vectors: eig.eigenvectors,
            vectors_sq,
            values,
        });
        self
    }
}

/// Output of the linear stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimate<T> {
    pub mean: Vec<T>,
    /// Diagonal of the conditional covariance.
    pub variance_diag: Vec<T>,
}

/// `e * sigma_n2`: the noise variance the fractional estimator effectively assumes.
pub fn effective_noise_variance<T: Real>(sigma_n2: T, e: T) -> T {
    e * sigma_n2
}

/// In-place lower Cholesky factor of a column-major SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor<T> {
    n: usize,
    // Column-major; only the lower triangle is meaningful.
    l: Vec<T>,
}

impl<T: Real> SpdFactor<T> {
    /// Factor a column-major `n x n` symmetric matrix (lower triangle read).
    pub fn new(mut data: Vec<T>, n: usize) -> Result<Self> {
        assert_eq!(data.len(), n * n, "matrix buffer must be n x n");
        kernels::cholesky(&mut data, n)?;
        Ok(Self { n, l: data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn col(&self, k: usize) -> &[T] {
        &self.l[k * self.n..(k + 1) * self.n]
    }

    /// Overwrite `b` with `Q^-1 b`.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let col = self.col(k);
            b[k] /= col[k];
            let bk = b[k];
            for (bi, &li) in b[k + 1..].iter_mut().zip(&col[k + 1..]) {
                *bi -= bk * li;
            }
        }
        for i in (0..n).rev() {
            let col = self.col(i);
            let dot = col[i + 1..]
                .iter()
                .zip(&b[i + 1..])
                .fold(T::zero(), |s, (&l, &x)| s + l * x);
            b[i] = (b[i] - dot) / col[i];
        }
    }

    /// `diag(Q^-1)`, using `[Q^-1]_jj = || L^-1 e_j ||^2`.
    pub fn inverse_diagonal(&self) -> Vec<T> {
        kernels::inverse_diagonal(&self.l, self.n)
    }
}

/// Dense kernels. On x86-64 the same code is also compiled with AVX2 and
/// selected at run time; without FMA contraction both builds round
/// identically, so results do not depend on the CPU.
mod kernels {
    use super::*;

    pub(super) fn cholesky<T: Real>(data: &mut [T], n: usize) -> Result<()> {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected above.
            return unsafe { cholesky_avx2(data, n) };
        }
        cholesky_portable(data, n)
    }

    pub(super) fn inverse_diagonal<T: Real>(l: &[T], n: usize) -> Vec<T> {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected above.
            return unsafe { inverse_diagonal_avx2(l, n) };
        }
        inverse_diagonal_portable(l, n)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn cholesky_avx2<T: Real>(data: &mut [T], n: usize) -> Result<()> {
        cholesky_body(data, n)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn inverse_diagonal_avx2<T: Real>(l: &[T], n: usize) -> Vec<T> {
        inverse_diagonal_body(l, n)
    }

    pub(super) fn cholesky_portable<T: Real>(data: &mut [T], n: usize) -> Result<()> {
        cholesky_body(data, n)
    }

    pub(super) fn inverse_diagonal_portable<T: Real>(l: &[T], n: usize) -> Vec<T> {
        inverse_diagonal_body(l, n)
    }

    /// Left-looking column Cholesky.
    #[inline(always)]
    fn cholesky_body<T: Real>(data: &mut [T], n: usize) -> Result<()> {
        for j in 0..n {
            let (done, rest) = data.split_at_mut(j * n);
            let col_j = &mut rest[j..n];
            let len = col_j.len();
            // Four finished columns per pass; subtractions stay in column order.
            let mut k = 0;
            while k + 4 <= j {
                let c = |t: usize| &done[(k + t) * n + j..(k + t) * n + j + len];
                let (l0, l1, l2, l3) = (c(0), c(1), c(2), c(3));
                let (a0, a1, a2, a3) = (l0[0], l1[0], l2[0], l3[0]);
                for i in 0..len {
                    col_j[i] = col_j[i] - a0 * l0[i] - a1 * l1[i] - a2 * l2[i] - a3 * l3[i];
                }
                k += 4;
            }
            for k in k..j {
                let col_k = &done[k * n + j..(k + 1) * n];
                let a = col_k[0];
                for (x, &l) in col_j.iter_mut().zip(col_k) {
                    *x -= a * l;
                }
            }
            let pivot = col_j[0];
            if !(pivot > T::zero()) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: pivot.to_f64().unwrap_or(f64::NAN),
                });
            }
            let d = pivot.sqrt();
            col_j[0] = d;
            let inv = d.recip();
            for x in &mut col_j[1..] {
                *x *= inv;
            }
        }
        Ok(())
    }

    /// Forward substitution `L z = e_j` per column, accumulating `||z||^2`.
    #[inline(always)]
    fn inverse_diagonal_body<T: Real>(l: &[T], n: usize) -> Vec<T> {
        let mut z = vec![T::zero(); n];
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            z[j..].iter_mut().for_each(|v| *v = T::zero());
            z[j] = T::one();
            let mut norm = T::zero();
            let mut k = j;
            while k + 4 <= n {
                let c = |t: usize| &l[(k + t) * n + k..(k + t + 1) * n];
                let (l0, l1, l2, l3) = (c(0), c(1), c(2), c(3));
                let z0 = z[k] / l0[0];
                let z1 = (z[k + 1] - z0 * l0[1]) / l1[1];
                let z2 = (z[k + 2] - z0 * l0[2] - z1 * l1[2]) / l2[2];
                let z3 = (z[k + 3] - z0 * l0[3] - z1 * l1[3] - z2 * l2[3]) / l3[3];
                norm = norm + z0 * z0 + z1 * z1 + z2 * z2 + z3 * z3;
                z[k] = z0;
                z[k + 1] = z1;
                z[k + 2] = z2;
                z[k + 3] = z3;
                let rest = &mut z[k + 4..];
                let len = rest.len();
                let (m0, m1, m2, m3) = (
                    &l0[4..4 + len],
                    &l1[4..4 + len],
                    &l2[4..4 + len],
                    &l3[4..4 + len],
                );
                for i in 0..len {
                    rest[i] = rest[i] - z0 * m0[i] - z1 * m1[i] - z2 * m2[i] - z3 * m3[i];
                }
                k += 4;
            }
            for k in k..n {
                let col = &l[k * n..(k + 1) * n];
                let zk = z[k] / col[k];
                z[k] = zk;
                norm += zk * zk;
                for (zi, &li) in z[k + 1..].iter_mut().zip(&col[k + 1..]) {
                    *zi -= zk * li;
                }
            }
            out.push(norm);
        }
        out
    }
}

/// Fractional LMMSE estimate; `e = 1` is the standard estimator.
pub fn lmmse_fractional<T: Real>(
    channel: &ChannelModel<T>,
    e: T,
    x_tilde: &[T],
    phi_tilde_diag: &[T],
) -> Result<LinearEstimate<T>> {
    let n = channel.signal_len();
    if x_tilde.len() != n || phi_tilde_diag.len() != n {
        return Err(Error::Dimension(format!(
            "linear stage expects length {n}, got {} and {}",
            x_tilde.len(),
            phi_tilde_diag.len()
        )));
    }
    if !(e > T::zero()) || !e.is_finite() {
        return Err(Error::Config(format!(
            "fractional parameter e = {e} must be > 0"
        )));
    }
    if let Some((j, &p)) = phi_tilde_diag
        .iter()
        .enumerate()
        .find(|(_, &p)| !(p > T::zero()) || !p.is_finite())
    {
        return Err(Error::Domain(format!(
            "cavity variance[{j}] = {p} must be positive"
        )));
    }

    let noise = effective_noise_variance(channel.sigma_n2, e);
    let x = DVector::from_column_slice(x_tilde);
    if let Some(sp) = &channel.spectral {
        if phi_tilde_diag.iter().all(|&p| p == phi_tilde_diag[0]) {
            return Ok(spectral_lmmse(
                channel,
                sp,
                noise / phi_tilde_diag[0],
                noise,
                &x,
            ));
        }
    }
    let (mut system, mut rhs) = match (&channel.gram, &channel.aty) {
        (Some(gram), Some(aty)) => (gram.clone(), aty - gram * &x),
        _ => (
            channel.a.tr_mul(&channel.a),
            channel.a.tr_mul(&(&channel.y - &channel.a * &x)),
        ),
    };
    for (j, &p) in phi_tilde_diag.iter().enumerate() {
        system[(j, j)] += noise / p;
    }

    let factor = SpdFactor::new(system.data.into(), n)?;
    factor.solve_in_place(rhs.as_mut_slice());
    let mean = x_tilde
        .iter()
        .zip(rhs.iter())
        .map(|(&a, &b)| a + b)
        .collect();
    let variance_diag = factor
        .inverse_diagonal()
        .into_iter()
        .map(|d| noise * d)
        .collect();
    Ok(LinearEstimate {
        mean,
        variance_diag,
    })
}

/// `Q = V (diag(values) + c I) V^T`.
fn spectral_lmmse<T: Real>(
    channel: &ChannelModel<T>,
    sp: &Spectral<T>,
    c: T,
    noise: T,
    x: &DVector<T>,
) -> LinearEstimate<T> {
    let rhs = match (&channel.gram, &channel.aty) {
        (Some(gram), Some(aty)) => aty - gram * x,
        _ => channel.a.tr_mul(&(&channel.y - &channel.a * x)),
    };
    let inv: DVector<T> =
        DVector::from_iterator(sp.values.len(), sp.values.iter().map(|&l| (l + c).recip()));
    let mut w = sp.vectors.tr_mul(&rhs);
    w.component_mul_assign(&inv);
    let step = &sp.vectors * w;
    let diag = &sp.vectors_sq * inv;
    LinearEstimate {
        mean: x.iter().zip(step.iter()).map(|(&a, &b)| a + b).collect(),
        variance_diag: diag.iter().map(|&d| noise * d).collect(),
    }
}
