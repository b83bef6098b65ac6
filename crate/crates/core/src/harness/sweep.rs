//! Parallel Monte Carlo sweeps over `(case, mode, d, e)` grids.

use rayon::prelude::*;

use super::ensemble::{EnsembleSpec, Instance};
use super::metrics::{nmse, support_threshold};
use super::seed::derive_seed;
use crate::denoise::BernoulliGaussPrior;
use crate::error::{Error, Result};
use crate::gaussian::ClipBounds;
use crate::linear::ChannelModel;
use crate::scalar::compensated_sum;
use crate::solver::{run, ClipPlacement, DampingCase, SolverConfig, VarianceMode};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub cases: Vec<DampingCase>,
    pub modes: Vec<VarianceMode>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub case: DampingCase,
    pub mode: VarianceMode,
    pub d: f64,
    pub e: f64,
}

impl GridSpec {
    /// Cells in `case`, `mode`, `d`, `e` order (last varies fastest).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out =
            Vec::with_capacity(self.cases.len() * self.modes.len() * self.d.len() * self.e.len());
        for &case in &self.cases {
            for &mode in &self.modes {
                for &d in &self.d {
                    for &e in &self.e {
                        out.push(Cell { case, mode, d, e });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, empty) in [
            ("case list", self.cases.is_empty()),
            ("mode list", self.modes.is_empty()),
            ("d grid", self.d.is_empty()),
            ("e grid", self.e.is_empty()),
        ] {
            if empty {
                problems.push(format!("{name} is empty"));
            }
        }
        for &d in &self.d {
            if !(d > 0.0 && d <= 1.0) {
                problems.push(format!("d = {d} must lie in (0, 1]"));
            }
        }
        for &e in &self.e {
            if !(e > 0.0) || !e.is_finite() {
                problems.push(format!("e = {e} must be > 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// How trial seeds relate across cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seeding {
    /// Trial `t` uses the same instance in every cell (seed from `(master, t)`).
    CommonInstances,
    /// Every `(cell, trial)` pair draws its own instance.
    IndependentCells,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub iterations: usize,
    pub clip: ClipBounds<f64>,
    pub clip_placement: ClipPlacement,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    pub seeding: Seeding,
    pub keep_trials: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            iterations: 20,
            clip: ClipBounds::default(),
            clip_placement: ClipPlacement::EveryFormation,
            threads: None,
            seeding: Seeding::CommonInstances,
            keep_trials: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub cell: usize,
    pub case: DampingCase,
    pub mode: VarianceMode,
    pub d: f64,
    pub e: f64,
    pub trial: usize,
    pub seed: u64,
    pub kappa: f64,
    /// Thresholded NMSE after each completed iteration.
    pub nmse_per_iteration: Vec<f64>,
    /// Set when the run stopped early or produced a non-finite NMSE.
    pub failure: Option<String>,
    /// Iterations after which a stored precision lay outside its clip interval.
    pub bound_violations: usize,
    pub clip_events: usize,
    pub variance_inflations: usize,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_nmse(&self) -> Option<f64> {
        self.nmse_per_iteration.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: usize,
    pub case: DampingCase,
    pub mode: VarianceMode,
    pub d: f64,
    pub e: f64,
    /// Mean final NMSE over non-failed trials (NaN if all failed).
    pub mean_nmse: f64,
    pub std_nmse: f64,
    pub fail_count: usize,
    pub trials: usize,
    pub mean_kappa: f64,
    pub bound_violations: usize,
    pub clip_events: usize,
    pub variance_inflations: usize,
    /// Non-finite NMSE values among non-failed trials.
    pub nonfinite_nmse: usize,
}

/// Best cell of one `(case, mode)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub case: DampingCase,
    pub mode: VarianceMode,
    pub d: f64,
    pub e: f64,
    pub nmse: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellSummary>,
    pub minima: Vec<Minimum>,
    /// Every trial in `(cell, trial)` order when `keep_trials` is set.
    pub trials: Vec<TrialRecord>,
}

impl SweepResult {
    pub fn cell(
        &self,
        case: DampingCase,
        mode: VarianceMode,
        d: f64,
        e: f64,
    ) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.case == case && c.mode == mode && c.d == d && c.e == e)
    }

    pub fn minimum(&self, case: DampingCase, mode: VarianceMode) -> Option<&Minimum> {
        self.minima
            .iter()
            .find(|m| m.case == case && m.mode == mode)
    }
}

fn solve_cell(
    instance: &Instance,
    channel: &ChannelModel<f64>,
    prior: &BernoulliGaussPrior<f64>,
    spec: &EnsembleSpec,
    opts: &SweepOptions,
    index: usize,
    cell: Cell,
    trial: usize,
) -> TrialRecord {
    let cfg = SolverConfig {
        d: cell.d,
        e: cell.e,
        damping: cell.case,
        variance_mode: cell.mode,
        clip: opts.clip,
        clip_placement: opts.clip_placement,
        max_iterations: opts.iterations,
        prior_variance: spec.signal_variance(),
        divergence_guard: true,
    };
    let outcome = run(channel, prior, &cfg);
    let mut failure = outcome.error.map(|e| e.to_string());
    let mut curve = Vec::with_capacity(outcome.history.len());
    for r in &outcome.history.records {
        match nmse(&instance.x, &support_threshold(&r.m_nle, spec.s)) {
            Ok(v) => curve.push(v),
            Err(e) => {
                failure.get_or_insert_with(|| e.to_string());
                break;
            }
        }
    }
    if failure.is_none() && curve.iter().any(|v| !v.is_finite()) {
        failure = Some("non-finite NMSE".to_string());
    }
    let records = &outcome.history.records;
    TrialRecord {
        cell: index,
        case: cell.case,
        mode: cell.mode,
        d: cell.d,
        e: cell.e,
        trial,
        seed: instance.seed,
        kappa: instance.kappa,
        nmse_per_iteration: curve,
        failure,
        bound_violations: records.iter().filter(|r| !r.within_bounds).count(),
        clip_events: records.iter().map(|r| r.clip_events).sum(),
        variance_inflations: records.iter().map(|r| r.variance_inflations).sum(),
    }
}

struct Prepared {
    instance: Instance,
    channel: ChannelModel<f64>,
}

fn prepare(spec: &EnsembleSpec, seed: u64) -> Result<Prepared> {
    let instance = Instance::generate(spec, seed);
    let channel = ChannelModel::new(instance.a.clone(), instance.y.clone(), instance.sigma_n2)?
        .with_spectral();
    Ok(Prepared { instance, channel })
}

fn summarize(index: usize, cell: Cell, records: &[&TrialRecord]) -> CellSummary {
    let ok: Vec<f64> = records
        .iter()
        .filter(|r| !r.failed())
        .filter_map(|r| r.final_nmse())
        .collect();
    let count = ok.len() as f64;
    let mean = if ok.is_empty() {
        f64::NAN
    } else {
        compensated_sum(ok.iter().copied()) / count
    };
    let std = if ok.len() < 2 {
        f64::NAN
    } else {
        (compensated_sum(ok.iter().map(|v| (v - mean) * (v - mean))) / (count - 1.0)).sqrt()
    };
    CellSummary {
        cell: index,
        case: cell.case,
        mode: cell.mode,
        d: cell.d,
        e: cell.e,
        mean_nmse: mean,
        std_nmse: std,
        fail_count: records.iter().filter(|r| r.failed()).count(),
        trials: records.len(),
        mean_kappa: compensated_sum(records.iter().map(|r| r.kappa)) / records.len() as f64,
        bound_violations: records.iter().map(|r| r.bound_violations).sum(),
        clip_events: records.iter().map(|r| r.clip_events).sum(),
        variance_inflations: records.iter().map(|r| r.variance_inflations).sum(),
        nonfinite_nmse: records
            .iter()
            .filter(|r| !r.failed())
            .map(|r| {
                r.nmse_per_iteration
                    .iter()
                    .filter(|v| !v.is_finite())
                    .count()
            })
            .sum(),
    }
}

fn minima(cells: &[CellSummary]) -> Vec<Minimum> {
    let mut out: Vec<Minimum> = Vec::new();
    for c in cells {
        if !c.mean_nmse.is_finite() {
            continue;
        }
        match out
            .iter_mut()
            .find(|m| m.case == c.case && m.mode == c.mode)
        {
            Some(m) if c.mean_nmse < m.nmse => {
                *m = Minimum {
                    case: c.case,
                    mode: c.mode,
                    d: c.d,
                    e: c.e,
                    nmse: c.mean_nmse,
                }
            }
            Some(_) => {}
            None => out.push(Minimum {
                case: c.case,
                mode: c.mode,
                d: c.d,
                e: c.e,
                nmse: c.mean_nmse,
            }),
        }
    }
    out
}

/// Solve `spec.trials` instances in every grid cell and summarize per cell.
///
/// Results depend only on the inputs, not on the thread count.
pub fn run_grid(spec: &EnsembleSpec, grid: &GridSpec, opts: &SweepOptions) -> Result<SweepResult> {
    spec.validate()?;
    grid.validate()?;
    if opts.iterations == 0 {
        return Err(Error::Config("iterations must be positive".to_string()));
    }
    if opts.threads == Some(0) {
        return Err(Error::Config("threads must be positive".to_string()));
    }
    let prior = BernoulliGaussPrior::from_sparsity(spec.s.max(1), spec.n)?;
    let cells = grid.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    // Grouped by trial (common instances) or by cell (independent cells).
    let grouped: Vec<Vec<TrialRecord>> = pool.install(|| match opts.seeding {
        Seeding::CommonInstances => (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let p = prepare(spec, derive_seed(spec.master_seed, &[t as u64]))?;
                Ok(cells
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| solve_cell(&p.instance, &p.channel, &prior, spec, opts, i, c, t))
                    .collect())
            })
            .collect::<Result<Vec<_>>>(),
        Seeding::IndependentCells => cells
            .par_iter()
            .enumerate()
            .map(|(i, &c)| {
                (0..spec.trials)
                    .into_par_iter()
                    .map(|t| {
                        let p =
                            prepare(spec, derive_seed(spec.master_seed, &[i as u64, t as u64]))?;
                        Ok(solve_cell(
                            &p.instance,
                            &p.channel,
                            &prior,
                            spec,
                            opts,
                            i,
                            c,
                            t,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>(),
    })?;

    let mut by_cell: Vec<Vec<&TrialRecord>> = vec![Vec::with_capacity(spec.trials); cells.len()];
    for r in grouped.iter().flatten() {
        by_cell[r.cell].push(r);
    }
    let summaries: Vec<CellSummary> = cells
        .iter()
        .enumerate()
        .map(|(i, &c)| summarize(i, c, &by_cell[i]))
        .collect();
    let trials = if opts.keep_trials {
        by_cell.iter().flatten().map(|&r| r.clone()).collect()
    } else {
        Vec::new()
    };
    Ok(SweepResult {
        minima: minima(&summaries),
        cells: summaries,
        trials,
    })
}

/// One draw of the matrix ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixDraw {
    pub draw: usize,
    pub seed: u64,
    pub kappa: f64,
    pub frobenius: f64,
}

/// Condition numbers and Frobenius norms of `draws` sensing matrices.
pub fn matrix_draws(
    spec: &EnsembleSpec,
    draws: usize,
    threads: Option<usize>,
) -> Result<Vec<MatrixDraw>> {
    if draws == 0 {
        return Err(Error::Config("draws must be positive".to_string()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..draws)
            .into_par_iter()
            .map(|draw| {
                let seed = derive_seed(spec.master_seed, &[draw as u64]);
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                let (a, kappa) = super::ensemble::gen_sensing_matrix(spec, &mut rng);
                MatrixDraw {
                    draw,
                    seed,
                    kappa,
                    frobenius: a.norm(),
                }
            })
            .collect()
    }))
}
