//! The frac-EC iteration: linear stage, denoiser, cavity updates, damping,
//! clipping and optional variance averaging.
//!
//! One call to [`step`] performs, in order:
//!
//! 1. fractional LMMSE from the linear cavity `(x_tilde_lin, phi_tilde_lin)`;
//! 2. `eta_lin` from the LMMSE means and variances (averaged in
//!    [`VarianceMode::Average`]);
//! 3. o-lin damping `eta_lin <- d eta_lin + (1 - d) eta_nle`, if selected;
//! 4. `cav_nle <- e (eta_lin - cav_lin)`;
//! 5. the denoiser on `cav_nle`;
//! 6. `eta_nle_old <- eta_nle`, then `eta_nle` from the denoiser moments;
//! 7. o-nle (`eta_nle <- d eta_nle + (1 - d) eta_lin`) or c-nle
//!    (`eta_nle <- d eta_nle + (1 - d) eta_nle_old`) damping, if selected;
//! 8. `cav_lin <- eta_nle - cav_nle / e` and the new linear cavity.
//!
//! Precisions are clipped where they are formed (see [`ClipPlacement`]).

use crate::denoise::{denoise, BernoulliGaussPrior};
use crate::error::{Error, Result};
use crate::gaussian::{
    average_variance, frac_cavity_to_lin, frac_cavity_to_nle, ClipBounds, Interval, MomentParams,
    NaturalParams,
};
use crate::linear::{lmmse_fractional, ChannelModel};
use crate::scalar::Real;

/// Which natural parameters the damping step combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DampingCase {
    None,
    /// `eta_nle <- d eta_nle + (1 - d) eta_lin` after the denoiser.
    Onle,
    /// `eta_lin <- d eta_lin + (1 - d) eta_nle` after the linear stage.
    Olin,
    /// `eta_nle <- d eta_nle + (1 - d) eta_nle_old` across iterations.
    Cnle,
}

impl DampingCase {
    pub const ALL: [DampingCase; 4] = [Self::None, Self::Onle, Self::Olin, Self::Cnle];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Onle => "onle",
            Self::Olin => "olin",
            Self::Cnle => "cnle",
        }
    }
}

impl std::str::FromStr for DampingCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "none" => Ok(Self::None),
            "onle" => Ok(Self::Onle),
            "olin" => Ok(Self::Olin),
            "cnle" => Ok(Self::Cnle),
            other => Err(Error::Config(format!("unknown damping case '{other}'"))),
        }
    }
}

/// Per-component (EC-ind) or averaged (VAMP) variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceMode {
    Individual,
    Average,
}

impl VarianceMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Individual => "individual",
            Self::Average => "average",
        }
    }
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "individual" | "ind" | "ec-ind" | "ecind" => Ok(Self::Individual),
            "average" | "avg" | "vamp" => Ok(Self::Average),
            other => Err(Error::Config(format!("unknown variance mode '{other}'"))),
        }
    }
}

/// Where precisions are clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipPlacement {
    /// After every formation of natural parameters and after each damping
    /// combination; no unclipped precision enters a cavity subtraction.
    EveryFormation,
    /// Only the denoiser output and the two cavities.
    EstimatorInputs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Damping parameter in `(0, 1]`; 1 disables damping.
    pub d: T,
    /// Fractional parameter `> 0`; 1 is the standard update.
    pub e: T,
    pub damping: DampingCase,
    pub variance_mode: VarianceMode,
    pub clip: ClipBounds<T>,
    pub clip_placement: ClipPlacement,
    pub max_iterations: usize,
    /// Initial variance `sigma_x^2` of both messages.
    pub prior_variance: T,
    /// Abort with [`Error::Diverged`] when an estimate becomes non-finite.
    pub divergence_guard: bool,
}

impl<T: Real> SolverConfig<T> {
    /// Undamped, non-fractional EC-ind with default clipping and 20 iterations.
    pub fn new(prior_variance: T) -> Self {
        Self {
            d: T::one(),
            e: T::one(),
            damping: DampingCase::None,
            variance_mode: VarianceMode::Individual,
            clip: ClipBounds::default(),
            clip_placement: ClipPlacement::EveryFormation,
            max_iterations: 20,
            prior_variance,
            divergence_guard: true,
        }
    }

    pub fn with_damping(mut self, case: DampingCase, d: T) -> Self {
        self.damping = case;
        self.d = d;
        self
    }

    pub fn with_fraction(mut self, e: T) -> Self {
        self.e = e;
        self
    }

    pub fn with_mode(mut self, mode: VarianceMode) -> Self {
        self.variance_mode = mode;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.max_iterations = iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.d > T::zero() && self.d <= T::one()) {
            problems.push(format!("d = {} must lie in (0, 1]", self.d));
        }
        if !(self.e > T::zero()) || !self.e.is_finite() {
            problems.push(format!("e = {} must be > 0", self.e));
        }
        if self.max_iterations == 0 {
            problems.push("max_iterations must be positive".to_string());
        }
        if !(self.prior_variance > T::zero()) || !self.prior_variance.is_finite() {
            problems.push(format!(
                "prior variance {} must be positive",
                self.prior_variance
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Messages carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<T> {
    pub eta_nle: NaturalParams<T>,
    pub eta_nle_old: NaturalParams<T>,
    pub eta_cav_nle: NaturalParams<T>,
    pub eta_cav_lin: NaturalParams<T>,
    pub x_tilde_lin: Vec<T>,
    pub phi_tilde_lin_diag: Vec<T>,
    pub iteration: usize,
}

impl<T: Real> SolverState<T> {
    /// All stored precisions lie within their clip intervals.
    pub fn within_bounds(&self, clip: &ClipBounds<T>) -> bool {
        self.eta_nle.precisions_within(&clip.nle_precision)
            && self.eta_cav_nle.precisions_within(&clip.other_precision)
            && self.eta_cav_lin.precisions_within(&clip.other_precision)
            && self
                .phi_tilde_lin_diag
                .iter()
                .all(|&v| clip.other_precision.contains(v.recip()))
    }
}

/// Intermediate quantities of one iteration.
#[derive(Debug, Clone)]
pub struct StepTrace<T> {
    /// Linear-stage parameters before o-lin damping.
    pub eta_lin: NaturalParams<T>,
    /// Linear-stage parameters after o-lin damping (equal to `eta_lin` otherwise).
    pub eta_lin_damped: NaturalParams<T>,
    pub m_lin: Vec<T>,
    pub var_lin: Vec<T>,
    pub m_nle: Vec<T>,
    pub var_nle: Vec<T>,
    pub clip_events: usize,
    /// Components whose denoiser variance exceeded the cavity variance.
    pub variance_inflations: usize,
}

/// Per-iteration record kept by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub m_nle: Vec<T>,
    pub mean_var_lin: T,
    pub mean_var_nle: T,
    pub clip_events: usize,
    pub variance_inflations: usize,
    /// Stored precisions were inside the clip intervals after this iteration.
    pub within_bounds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateHistory<T> {
    pub records: Vec<IterationRecord<T>>,
}

impl<T> Default for IterateHistory<T> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
        }
    }
}

impl<T> IterateHistory<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The last NLE mean, if any iteration completed.
    pub fn final_estimate(&self) -> Option<&[T]> {
        self.records.last().map(|r| r.m_nle.as_slice())
    }
}

/// History plus the error that stopped the run early, if any.
#[derive(Debug)]
pub struct RunOutcome<T> {
    pub history: IterateHistory<T>,
    pub error: Option<Error>,
}

pub fn initialize<T: Real>(
    channel: &ChannelModel<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolverState<T>> {
    cfg.validate()?;
    let n = channel.signal_len();
    let prior = NaturalParams::isotropic(n, cfg.prior_variance);
    Ok(SolverState {
        eta_nle: prior.clone(),
        eta_nle_old: prior.clone(),
        eta_cav_nle: NaturalParams::zeros(n),
        eta_cav_lin: prior,
        x_tilde_lin: vec![T::zero(); n],
        phi_tilde_lin_diag: vec![cfg.prior_variance; n],
        iteration: 0,
    })
}

fn with_common_variance<T: Real>(
    mean: &[T],
    variance: &[T],
    mode: VarianceMode,
) -> Result<MomentParams<T>> {
    match mode {
        VarianceMode::Individual => MomentParams::new(mean.to_vec(), variance.to_vec()),
        VarianceMode::Average => {
            let avg = average_variance(variance)?;
            MomentParams::new(mean.to_vec(), vec![avg; mean.len()])
        }
    }
}

fn maybe_clip<T: Real>(eta: &mut NaturalParams<T>, interval: &Interval<T>, apply: bool) -> usize {
    if apply {
        eta.clip_in_place(interval)
    } else {
        0
    }
}

/// One full iteration; see the module documentation for the order of updates.
pub fn step<T: Real>(
    state: &SolverState<T>,
    channel: &ChannelModel<T>,
    prior: &BernoulliGaussPrior<T>,
    cfg: &SolverConfig<T>,
) -> Result<(SolverState<T>, StepTrace<T>)> {
    let iteration = state.iteration + 1;
    let wrap = |source: Error| Error::Iteration {
        iteration,
        source: Box::new(source),
    };
    let every = cfg.clip_placement == ClipPlacement::EveryFormation;
    let other = cfg.clip.other_precision;
    let nle_bounds = cfg.clip.nle_precision;
    let mut clip_events = 0;

    let lin = lmmse_fractional(
        channel,
        cfg.e,
        &state.x_tilde_lin,
        &state.phi_tilde_lin_diag,
    )
    .map_err(wrap)?;
    let lin_moments =
        with_common_variance(&lin.mean, &lin.variance_diag, cfg.variance_mode).map_err(wrap)?;
    let eta_lin = if every {
        lin_moments.to_natural_clipped(&other)
    } else {
        lin_moments.to_natural_clipped(
            &Interval::new(T::min_positive_value(), T::max_value()).map_err(wrap)?,
        )
    };
    clip_events += if every {
        lin_moments
            .variance()
            .iter()
            .filter(|&&v| !other.contains(v.recip()))
            .count()
    } else {
        0
    };

    let mut eta_lin_damped = if cfg.damping == DampingCase::Olin {
        eta_lin.damp_toward(&state.eta_nle, cfg.d).map_err(wrap)?
    } else {
        eta_lin.clone()
    };
    clip_events += maybe_clip(&mut eta_lin_damped, &other, every);

    let mut cav_nle =
        frac_cavity_to_nle(&eta_lin_damped, &state.eta_cav_lin, cfg.e).map_err(wrap)?;
    clip_events += cav_nle.clip_in_place(&other);

    let n = channel.signal_len();
    let mut m_nle = Vec::with_capacity(n);
    let mut var_nle = Vec::with_capacity(n);
    let mut variance_inflations = 0;
    for (&l, &p) in cav_nle.lambda().iter().zip(cav_nle.precision()) {
        let v_tilde = p.recip();
        let t = denoise(prior, l / p, v_tilde).map_err(wrap)?;
        if t.variance > v_tilde {
            variance_inflations += 1;
        }
        m_nle.push(t.mean);
        var_nle.push(t.variance);
    }
    if cfg.divergence_guard && m_nle.iter().any(|m| !m.is_finite()) {
        return Err(Error::Diverged { iteration });
    }

    let eta_nle_old = state.eta_nle.clone();
    let nle_moments = with_common_variance(&m_nle, &var_nle, cfg.variance_mode).map_err(wrap)?;
    clip_events += nle_moments
        .variance()
        .iter()
        .filter(|&&v| !nle_bounds.contains(v.recip()))
        .count();
    let mut eta_nle = nle_moments.to_natural_clipped(&nle_bounds);
    match cfg.damping {
        DampingCase::Onle => {
            eta_nle = eta_nle.damp_toward(&eta_lin_damped, cfg.d).map_err(wrap)?;
            clip_events += maybe_clip(&mut eta_nle, &nle_bounds, every);
        }
        DampingCase::Cnle => {
            eta_nle = eta_nle.damp_toward(&eta_nle_old, cfg.d).map_err(wrap)?;
            clip_events += maybe_clip(&mut eta_nle, &nle_bounds, every);
        }
        DampingCase::None | DampingCase::Olin => {}
    }

    let mut cav_lin = frac_cavity_to_lin(&eta_nle, &cav_nle, cfg.e).map_err(wrap)?;
    clip_events += cav_lin.clip_in_place(&other);
    let x_tilde_lin = cav_lin.means();
    let phi_tilde_lin_diag: Vec<T> = cav_lin.precision().iter().map(|p| p.recip()).collect();
    if cfg.divergence_guard && x_tilde_lin.iter().any(|m| !m.is_finite()) {
        return Err(Error::Diverged { iteration });
    }

    let next = SolverState {
        eta_nle,
        eta_nle_old,
        eta_cav_nle: cav_nle,
        eta_cav_lin: cav_lin,
        x_tilde_lin,
        phi_tilde_lin_diag,
        iteration,
    };
    let trace = StepTrace {
        eta_lin,
        eta_lin_damped,
        m_lin: lin.mean,
        var_lin: lin.variance_diag,
        m_nle,
        var_nle,
        clip_events,
        variance_inflations,
    };
    Ok((next, trace))
}

/// Run exactly `cfg.max_iterations` iterations (or until a numeric failure).
pub fn run<T: Real>(
    channel: &ChannelModel<T>,
    prior: &BernoulliGaussPrior<T>,
    cfg: &SolverConfig<T>,
) -> RunOutcome<T> {
    let mut history = IterateHistory::default();
    let mut state = match initialize(channel, cfg) {
        Ok(s) => s,
        Err(e) => {
            return RunOutcome {
                history,
                error: Some(e),
            }
        }
    };
    for _ in 0..cfg.max_iterations {
        match step(&state, channel, prior, cfg) {
            Ok((next, trace)) => {
                let mean_var_lin = average_variance(&trace.var_lin).unwrap_or(T::nan());
                let mean_var_nle = average_variance(&trace.var_nle).unwrap_or(T::nan());
                history.records.push(IterationRecord {
                    within_bounds: next.within_bounds(&cfg.clip),
                    m_nle: trace.m_nle,
                    mean_var_lin,
                    mean_var_nle,
                    clip_events: trace.clip_events,
                    variance_inflations: trace.variance_inflations,
                });
                state = next;
            }
            Err(e) => {
                return RunOutcome {
                    history,
                    error: Some(e),
                }
            }
        }
    }
    RunOutcome {
        history,
        error: None,
    }
}
