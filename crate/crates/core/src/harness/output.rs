//! CSV artifacts, written atomically (temporary file, then rename).

use std::io::Write;
use std::path::Path;

use super::sweep::{CellSummary, MatrixDraw, Minimum, TrialRecord};
use crate::error::Result;

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut std::fs::File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = csv::Writer::from_writer(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file_mut().flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_cells_csv(path: &Path, cells: &[CellSummary]) -> Result<()> {
    write_atomic(path, |w| {
        w.write_record([
            "case",
            "mode",
            "d",
            "e",
            "mean_nmse",
            "std_nmse",
            "fail_count",
            "trials",
            "mean_kappa",
        ])?;
        for c in cells {
            w.write_record([
                c.case.name().to_string(),
                c.mode.name().to_string(),
                fmt_f64(c.d),
                fmt_f64(c.e),
                fmt_f64(c.mean_nmse),
                fmt_f64(c.std_nmse),
                c.fail_count.to_string(),
                c.trials.to_string(),
                fmt_f64(c.mean_kappa),
            ])?;
        }
        Ok(())
    })
}

/// One row per trial; runs that stopped early are padded with `NaN`.
pub fn write_trials_csv(path: &Path, trials: &[TrialRecord], iterations: usize) -> Result<()> {
    write_atomic(path, |w| {
        let mut header = vec![
            "cell_id".to_string(),
            "trial".into(),
            "seed".into(),
            "kappa".into(),
        ];
        header.extend((1..=iterations).map(|k| format!("nmse_iter_{k}")));
        w.write_record(&header)?;
        for t in trials {
            let mut row = vec![
                t.cell.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
                fmt_f64(t.kappa),
            ];
            row.extend(
                (0..iterations)
                    .map(|k| fmt_f64(t.nmse_per_iteration.get(k).copied().unwrap_or(f64::NAN))),
            );
            w.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn write_minima_csv(path: &Path, minima: &[Minimum]) -> Result<()> {
    write_atomic(path, |w| {
        w.write_record(["case", "mode", "d", "e", "nmse"])?;
        for m in minima {
            w.write_record([
                m.case.name().to_string(),
                m.mode.name().to_string(),
                fmt_f64(m.d),
                fmt_f64(m.e),
                fmt_f64(m.nmse),
            ])?;
        }
        Ok(())
    })
}

pub fn write_matrix_stats_csv(path: &Path, draws: &[MatrixDraw]) -> Result<()> {
    write_atomic(path, |w| {
        w.write_record(["draw", "seed", "kappa", "frobenius_norm"])?;
        for d in draws {
            w.write_record([
                d.draw.to_string(),
                d.seed.to_string(),
                fmt_f64(d.kappa),
                fmt_f64(d.frobenius),
            ])?;
        }
        Ok(())
    })
}
