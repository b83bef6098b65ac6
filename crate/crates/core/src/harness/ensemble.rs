//! Random problem instances: sensing matrices with a geometric column power
//! profile, sparse signals and noisy observations.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// How the signal support is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportModel {
    /// Exactly `s` positions, uniformly without replacement.
    ExactCount,
    /// Each position active independently with probability `s / N`.
    Bernoulli,
}

/// How the profile values `r_p` act on the columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileScaling {
    /// `r_p` is the column power; amplitudes scale by `sqrt(r_p)`.
    Power,
    /// Amplitudes scale by `r_p` itself.
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub snr_db: f64,
    /// Power-profile factor in `(0, 1]`; 1 gives i.i.d. columns.
    pub v: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub support: SupportModel,
    pub profile: ProfileScaling,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n: 258,
            m: 129,
            s: 12,
            snr_db: 17.0,
            v: 0.2,
            trials: 200,
            master_seed: 0,
            support: SupportModel::ExactCount,
            profile: ProfileScaling::Power,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("N must be positive".to_string());
        }
        if self.m == 0 || self.m > self.n {
            problems.push(format!("M = {} must lie in [1, N = {}]", self.m, self.n));
        }
        if self.s > self.n {
            problems.push(format!("s = {} must not exceed N = {}", self.s, self.n));
        }
        if !self.snr_db.is_finite() {
            problems.push(format!("snr-db = {} must be finite", self.snr_db));
        }
        if !(self.v > 0.0 && self.v <= 1.0) {
            problems.push(format!("v = {} must lie in (0, 1]", self.v));
        }
        if self.trials == 0 {
            problems.push("trials must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.snr_db)
    }

    /// Prior variance `s / N` of one signal component.
    pub fn signal_variance(&self) -> f64 {
        self.s as f64 / self.n as f64
    }
}

/// `sigma_n^2 = 10^(-snr_db / 10)`.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Ratio of the extreme singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// Gaussian `M x N` matrix whose column `pi(p)` carries the profile value
/// `r_p = v^((p-1)/(N-1))` for a random permutation `pi`, normalized to
/// `||A||_F = sqrt(N)`; returns `(A, kappa)`.
pub fn gen_sensing_matrix<R: Rng + ?Sized>(
    spec: &EnsembleSpec,
    rng: &mut R,
) -> (DMatrix<f64>, f64) {
    let (m, n) = (spec.m, spec.n);
    let mut a = DMatrix::<f64>::from_fn(m, n, |_, _| rng.sample(StandardNormal));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    if spec.v != 1.0 {
        let denom = (n.max(2) - 1) as f64;
        for (p, &j) in perm.iter().enumerate() {
            let r = spec.v.powf(p as f64 / denom);
            let amplitude = match spec.profile {
                ProfileScaling::Power => r.sqrt(),
                ProfileScaling::Amplitude => r,
            };
            a.column_mut(j).scale_mut(amplitude);
        }
    }
    let scale = (n as f64).sqrt() / a.norm();
    a.scale_mut(scale);
    let kappa = condition_number(&a);
    (a, kappa)
}

/// Sparse signal with unit-variance Gaussian amplitudes on the support.
pub fn gen_signal<R: Rng + ?Sized>(
    n: usize,
    s: usize,
    model: SupportModel,
    rng: &mut R,
) -> Vec<f64> {
    assert!(s <= n, "sparsity {s} exceeds length {n}");
    let mut x = vec![0.0; n];
    match model {
        SupportModel::ExactCount => {
            let mut support: Vec<usize> = index::sample(rng, n, s).into_vec();
            support.sort_unstable();
            for j in support {
                x[j] = rng.sample(StandardNormal);
            }
        }
        SupportModel::Bernoulli => {
            let rho = if n == 0 { 0.0 } else { s as f64 / n as f64 };
            for xj in &mut x {
                if rng.random_bool(rho) {
                    *xj = rng.sample(StandardNormal);
                }
            }
        }
    }
    x
}

/// `y = A x + n` with i.i.d. `N(0, sigma_n^2)` noise; returns `(y, sigma_n^2)`.
pub fn gen_observation<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    x: &[f64],
    snr_db: f64,
    rng: &mut R,
) -> (DVector<f64>, f64) {
    assert_eq!(
        a.ncols(),
        x.len(),
        "signal length must match matrix columns"
    );
    let sigma_n2 = noise_variance(snr_db);
    let sd = sigma_n2.sqrt();
    let mut y = a * DVector::from_column_slice(x);
    for yi in y.iter_mut() {
        *yi += sd * rng.sample::<f64, _>(StandardNormal);
    }
    (y, sigma_n2)
}

/// One draw of `(A, x, y)`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub a: DMatrix<f64>,
    pub x: Vec<f64>,
    pub y: DVector<f64>,
    pub sigma_n2: f64,
    pub kappa: f64,
}

impl Instance {
    /// Draw matrix, signal and noise in that order from a generator seeded by `seed`.
    pub fn generate(spec: &EnsembleSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, kappa) = gen_sensing_matrix(spec, &mut rng);
        let x = gen_signal(spec.n, spec.s, spec.support, &mut rng);
        let (y, sigma_n2) = gen_observation(&a, &x, spec.snr_db, &mut rng);
        Self {
            seed,
            a,
            x,
            y,
            sigma_n2,
            kappa,
        }
    }
}
