//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::path::Path;
use std::time::{Duration, Instant};

use fracvamp::denoise::{denoise, denoise_numeric, BernoulliGaussPrior};
use fracvamp::gaussian::{
    clip, ec_cavity_update, frac_cavity_to_lin, frac_cavity_to_nle, ClipBounds, NaturalParams,
    PrecisionKind,
};
use fracvamp::harness::output::{write_cells_csv, write_minima_csv, write_trials_csv};
use fracvamp::harness::{
    matrix_draws, run_grid, EnsembleSpec, GridSpec, Instance, SweepOptions, SweepResult,
};
use fracvamp::linear::{lmmse_fractional, ChannelModel};
use fracvamp::solver::{initialize, run, step, DampingCase, SolverConfig, VarianceMode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs()
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let prior = BernoulliGaussPrior::from_sparsity(12, 258).unwrap();
    let density = prior.density();
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    let mut errors = 0;
    let mut inflated = 0;
    for i in 0..50 {
        let x = -5.0 + 10.0 * i as f64 / 49.0;
        for k in 0..50 {
            let v = 10f64.powf(-4.0 + 6.0 * k as f64 / 49.0);
            match (denoise(&prior, x, v), denoise_numeric(&density, x, v)) {
                (Ok(a), Ok(b)) => {
                    if a.variance > v {
                        inflated += 1;
                    }
                    worst_mean = worst_mean.max(rel_err(a.mean, b.mean));
                    worst_var = worst_var.max(rel_err(a.variance, b.variance));
                }
                _ => errors += 1,
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        pass: errors == 0 && worst_mean <= 1e-8 && worst_var <= 1e-8 && elapsed < Duration::from_secs(10),
        detail: format!(
            "denoiser vs quadrature on 50x50 grid: max rel err mean {worst_mean:.2e}, variance {worst_var:.2e}, \
             {errors} errors, {:.2} s; posterior variance above cavity variance at {inflated} points",
            elapsed.as_secs_f64()
        ),
    }
}

/// Covariance-form evaluation in the measurement domain:
/// `C = Phi - Phi A^T (e s2 I + A Phi A^T)^-1 A Phi`, mean `x + Phi A^T (...)^-1 (y - A x)`.
fn woodbury_reference(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    s2: f64,
    e: f64,
    x: &[f64],
    phi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = a.shape();
    let phi_at = DMatrix::from_fn(n, m, |j, i| phi[j] * a[(i, j)]);
    let mut k = a * &phi_at;
    for i in 0..m {
        k[(i, i)] += e * s2;
    }
    let k_inv = k
        .lu()
        .try_inverse()
        .expect("measurement-domain matrix invertible");
    let xv = DVector::from_column_slice(x);
    let mean = &xv + &phi_at * (&k_inv * (y - a * &xv));
    let gain = &phi_at * &k_inv;
    let var = (0..n)
        .map(|j| phi[j] - (0..m).map(|i| gain[(j, i)] * phi_at[(j, i)]).sum::<f64>())
        .collect();
    (mean.iter().copied().collect(), var)
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x11ea);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    let mut errors = 0;
    for inst in 0..100 {
        let a = DMatrix::from_fn(8, 16, |_, _| {
            rng.sample::<f64, _>(StandardNormal) / 8f64.sqrt()
        });
        let y = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s2 = rng.random_range(0.005..0.5);
        let x: Vec<f64> = (0..16)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        // Even instances use unequal cavity variances, odd ones a common value
        // (which exercises the eigenbasis path).
        let phi: Vec<f64> = if inst % 2 == 0 {
            (0..16).map(|_| rng.random_range(0.01..3.0)).collect()
        } else {
            vec![rng.random_range(0.01..3.0); 16]
        };
        let mut ch = ChannelModel::new(a.clone(), y.clone(), s2).unwrap();
        if inst % 2 == 1 {
            ch = ch.with_spectral();
        }
        for e in [0.5, 1.0, 2.0] {
            match lmmse_fractional(&ch, e, &x, &phi) {
                Ok(est) => {
                    let (m, v) = woodbury_reference(&a, &y, s2, e, &x, &phi);
                    for j in 0..16 {
                        worst_mean = worst_mean.max(rel_err(est.mean[j], m[j]));
                        worst_var = worst_var.max(rel_err(est.variance_diag[j], v[j]));
                    }
                }
                Err(_) => errors += 1,
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        pass: errors == 0 && worst_mean <= 1e-10 && worst_var <= 1e-10 && elapsed < Duration::from_secs(5),
        detail: format!(
            "fractional LMMSE vs covariance-form reference, 100 instances x 3 e: max rel err mean {worst_mean:.2e}, \
             variance {worst_var:.2e}, {errors} errors, {:.2} s",
            elapsed.as_secs_f64()
        ),
    }
}

fn instance_channel(spec: &EnsembleSpec, seed: u64) -> ChannelModel<f64> {
    let inst = Instance::generate(spec, seed);
    ChannelModel::new(inst.a, inst.y, inst.sigma_n2).unwrap()
}

fn trajectory(
    ch: &ChannelModel<f64>,
    prior: &BernoulliGaussPrior<f64>,
    cfg: &SolverConfig<f64>,
) -> Vec<Vec<f64>> {
    let out = run(ch, prior, cfg);
    assert!(out.error.is_none(), "{:?}", out.error);
    out.history.records.into_iter().map(|r| r.m_nle).collect()
}

fn random_natural(rng: &mut ChaCha8Rng, n: usize) -> NaturalParams<f64> {
    NaturalParams::new(
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
        (0..n).map(|_| rng.random_range(-2.0..50.0)).collect(),
    )
    .unwrap()
}

/// Checks `cav_nle[k+1] = g (eta_lin[k+1] - eta_nle[k]) + cav_nle[k]` component-wise,
/// where `g` is `d` (o-lin, e = 1) or `e` (undamped). Components where any
/// precision entering the two cavity updates sits on a clip bound are skipped,
/// since clipping is not part of the combined update.
struct IdentityCheck {
    worst: f64,
    checked: usize,
    total: usize,
}

fn combined_update_identity(
    ch: &ChannelModel<f64>,
    prior: &BernoulliGaussPrior<f64>,
    cfg: &SolverConfig<f64>,
    gain: f64,
    acc: &mut IdentityCheck,
) {
    let bounds = cfg.clip.other_precision;
    let free = |p: f64| bounds.lo() < p && p < bounds.hi();
    let mut state = initialize(ch, cfg).unwrap();
    for _ in 0..20 {
        let (next, trace) = step(&state, ch, prior, cfg).unwrap();
        for j in 0..ch.signal_len() {
            acc.total += 1;
            let unclipped = free(trace.eta_lin.precision()[j])
                && free(trace.eta_lin_damped.precision()[j])
                && free(next.eta_cav_nle.precision()[j])
                && free(state.eta_cav_lin.precision()[j]);
            if !unclipped {
                continue;
            }
            acc.checked += 1;
            for (got, lin, nle, cav) in [
                (
                    next.eta_cav_nle.lambda(),
                    trace.eta_lin.lambda(),
                    state.eta_nle.lambda(),
                    state.eta_cav_nle.lambda(),
                ),
                (
                    next.eta_cav_nle.precision(),
                    trace.eta_lin.precision(),
                    state.eta_nle.precision(),
                    state.eta_cav_nle.precision(),
                ),
            ] {
                let want = gain * (lin[j] - nle[j]) + cav[j];
                let scale = gain * (lin[j].abs() + nle[j].abs()) + cav[j].abs();
                if scale > 0.0 {
                    acc.worst = acc.worst.max((got[j] - want).abs() / scale);
                }
            }
        }
        state = next;
    }
}

fn criterion_3() -> Verdict {
    let spec = EnsembleSpec::default();
    let prior = BernoulliGaussPrior::from_sparsity(spec.s, spec.n).unwrap();
    let sx = spec.signal_variance();

    // (a) e = 1 fractional updates against the plain cavity subtraction, bitwise:
    // on random operands, and on every step of solver runs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x3a);
    let mut op_mismatch = 0;
    for _ in 0..100 {
        let (p, q) = (random_natural(&mut rng, 32), random_natural(&mut rng, 32));
        let ec = ec_cavity_update(&p, &q).unwrap();
        if frac_cavity_to_nle(&p, &q, 1.0).unwrap() != ec
            || frac_cavity_to_lin(&p, &q, 1.0).unwrap() != ec
        {
            op_mismatch += 1;
        }
    }
    let bounds = ClipBounds::<f64>::default();
    let mut step_mismatch = 0;
    let mut steps = 0;

    let mut b_mismatch = 0;
    let mut b_total = 0;
    let mut olin = IdentityCheck {
        worst: 0.0,
        checked: 0,
        total: 0,
    };
    let mut frac = IdentityCheck {
        worst: 0.0,
        checked: 0,
        total: 0,
    };
    for i in 0..20u64 {
        let ch = instance_channel(&spec, 0x3000 + i);
        for mode in [VarianceMode::Individual, VarianceMode::Average] {
            let cfg = SolverConfig::new(sx).with_mode(mode);
            let mut state = initialize(&ch, &cfg).unwrap();
            for _ in 0..20 {
                let (next, trace) = step(&state, &ch, &prior, &cfg).unwrap();
                let cav_nle = clip(
                    &ec_cavity_update(&trace.eta_lin_damped, &state.eta_cav_lin).unwrap(),
                    &bounds,
                    PrecisionKind::Other,
                );
                let cav_lin = clip(
                    &ec_cavity_update(&next.eta_nle, &next.eta_cav_nle).unwrap(),
                    &bounds,
                    PrecisionKind::Other,
                );
                steps += 1;
                if cav_nle != next.eta_cav_nle || cav_lin != next.eta_cav_lin {
                    step_mismatch += 1;
                }
                state = next;
            }
        }

        // (b) d = 1 under every case reproduces the undamped trajectory bitwise.
        for mode in [VarianceMode::Individual, VarianceMode::Average] {
            for e in [0.7, 1.0, 2.0] {
                let base = SolverConfig::new(sx).with_mode(mode).with_fraction(e);
                let reference = trajectory(&ch, &prior, &base);
                for case in [DampingCase::Onle, DampingCase::Olin, DampingCase::Cnle] {
                    b_total += 1;
                    if trajectory(&ch, &prior, &base.with_damping(case, 1.0)) != reference {
                        b_mismatch += 1;
                    }
                }
            }
        }

        // (c) both forms of the combined cavity update.
        let cfg = SolverConfig::new(sx).with_damping(DampingCase::Olin, 0.7);
        combined_update_identity(&ch, &prior, &cfg, 0.7, &mut olin);
        let cfg = SolverConfig::new(sx).with_fraction(1.5);
        combined_update_identity(&ch, &prior, &cfg, 1.5, &mut frac);
    }
    let covered = |c: &IdentityCheck| c.checked * 2 >= c.total;
    Verdict {
        pass: op_mismatch == 0
            && step_mismatch == 0
            && b_mismatch == 0
            && olin.worst <= 1e-12
            && frac.worst <= 1e-12
            && covered(&olin)
            && covered(&frac),
        detail: format!(
            "(a) e=1 operator mismatches {op_mismatch}/100, solver step mismatches {step_mismatch}/{steps}; \
             (b) d=1 trajectory mismatches {b_mismatch}/{b_total}; \
             (c) o-lin d=0.7 max rel dev {:.1e} on {}/{} unclipped components, \
             fractional e=1.5 max rel dev {:.1e} on {}/{}",
            olin.worst, olin.checked, olin.total, frac.worst, frac.checked, frac.total
        ),
    }
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let spec = EnsembleSpec::default();
    let draws = matrix_draws(&spec, 1000, None).unwrap();
    let mean = draws.iter().map(|d| d.kappa).sum::<f64>() / draws.len() as f64;
    let min = draws.iter().map(|d| d.kappa).fold(f64::INFINITY, f64::min);
    let max = draws.iter().map(|d| d.kappa).fold(0.0, f64::max);
    let fro = draws
        .iter()
        .map(|d| (d.frobenius - 258f64.sqrt()).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    Verdict {
        pass: (5.9..=6.8).contains(&mean) && fro <= 1e-10 && elapsed < Duration::from_secs(120),
        detail: format!(
            "1000 draws v=0.2: mean kappa {mean:.3} (range {min:.2}..{max:.2}), max |‖A‖_F - sqrt(258)| {fro:.1e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    }
}

fn sweep(threads: usize) -> (SweepResult, Duration) {
    let spec = EnsembleSpec::default();
    let grid = GridSpec {
        cases: vec![DampingCase::Onle],
        modes: vec![VarianceMode::Individual, VarianceMode::Average],
        d: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        e: vec![0.6, 1.0, 1.5, 2.0, 2.5, 3.0],
    };
    let opts = SweepOptions {
        threads: Some(threads),
        keep_trials: true,
        ..SweepOptions::default()
    };
    let start = Instant::now();
    let r = run_grid(&spec, &grid, &opts).expect("sweep runs");
    (r, start.elapsed())
}

fn criterion_5(r: &SweepResult, elapsed: Duration) -> Verdict {
    let ind = r
        .minimum(DampingCase::Onle, VarianceMode::Individual)
        .unwrap();
    let avg = r.minimum(DampingCase::Onle, VarianceMode::Average).unwrap();
    let base = |mode| r.cell(DampingCase::Onle, mode, 1.0, 1.0).unwrap().mean_nmse;
    let (base_ind, base_avg) = (base(VarianceMode::Individual), base(VarianceMode::Average));
    let a = ind.e > 1.0 && avg.e < 1.0;
    let ratio_ind = ind.nmse / base_ind;
    let ratio_avg = avg.nmse / base_avg;
    let b = ratio_ind <= 0.5 || ratio_avg <= 0.5;
    let damped_avg = r
        .cells
        .iter()
        .filter(|c| c.mode == VarianceMode::Average && c.e == 1.0 && c.d < 1.0)
        .map(|c| c.mean_nmse)
        .fold(f64::INFINITY, f64::min);
    let c = damped_avg < base_avg;
    Verdict {
        pass: a && b && c && elapsed < Duration::from_secs(30 * 60),
        detail: format!(
            "(a) best EC-ind d={} e={} NMSE {:.3e}, best VAMP-avg d={} e={} NMSE {:.3e} [{}]; \
             (b) best/baseline EC-ind {ratio_ind:.3}, VAMP-avg {ratio_avg:.3} [{}]; \
             (c) VAMP-avg e=1 damped {damped_avg:.3e} vs d=1 {base_avg:.3e} [{}]; {:.0} s",
            ind.d,
            ind.e,
            ind.nmse,
            avg.d,
            avg.e,
            avg.nmse,
            if a { "ok" } else { "no" },
            if b { "ok" } else { "no" },
            if c { "ok" } else { "no" },
            elapsed.as_secs_f64()
        ),
    }
}

fn write_all(dir: &Path, r: &SweepResult) -> Vec<Vec<u8>> {
    let files = [
        dir.join("cells.csv"),
        dir.join("minima.csv"),
        dir.join("trials.csv"),
    ];
    write_cells_csv(&files[0], &r.cells).unwrap();
    write_minima_csv(&files[1], &r.minima).unwrap();
    write_trials_csv(&files[2], &r.trials, 20).unwrap();
    files.iter().map(|f| std::fs::read(f).unwrap()).collect()
}

fn criterion_6(first: &SweepResult, second: &SweepResult) -> Verdict {
    let violations: usize = first.cells.iter().map(|c| c.bound_violations).sum();
    let nonfinite: usize = first.cells.iter().map(|c| c.nonfinite_nmse).sum();
    let failed: usize = first.cells.iter().map(|c| c.fail_count).sum();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let identical = write_all(dir_a.path(), first) == write_all(dir_b.path(), second);
    Verdict {
        pass: violations == 0 && nonfinite == 0 && identical,
        detail: format!(
            "{violations} out-of-bound iteration boundaries, {nonfinite} non-finite NMSE in unflagged trials \
             ({failed} flagged), CSVs at 1 vs 2 threads {}",
            if identical { "byte-identical" } else { "DIFFER" }
        ),
    }
}

fn report(n: usize, v: &Verdict) -> bool {
    println!(
        "criterion {n} {}: {}",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v.pass
}

fn main() {
    // `cargo test --test acceptance -- 1 3` runs only the listed criteria;
    // other filters (as passed by a workspace-wide `cargo test <name>`) that
    // name no criterion skip the suite.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let picked: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if !args.is_empty()
        && picked.is_empty()
        && !args
            .iter()
            .any(|a| "acceptance criterion".contains(a.as_str()))
    {
        return;
    }
    let want = |n: usize| picked.is_empty() || picked.contains(&n);
    let mut ok = true;
    if want(1) {
        ok &= report(1, &criterion_1());
    }
    if want(2) {
        ok &= report(2, &criterion_2());
    }
    if want(3) {
        ok &= report(3, &criterion_3());
    }
    if want(4) {
        ok &= report(4, &criterion_4());
    }
    if want(5) || want(6) {
        let (first, elapsed) = sweep(1);
        if want(5) {
            ok &= report(5, &criterion_5(&first, elapsed));
        }
        if want(6) {
            let (second, _) = sweep(2);
            ok &= report(6, &criterion_6(&first, &second));
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
