use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{EvalError, EvalReport, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

fn io(e: std::io::Error) -> EvalError {
    EvalError::Io(e.to_string())
}

/// Writes `<prefix>_errors.csv` (1 mmHg error histogram),
/// `<prefix>_scatter.csv` (reference vs estimate with the least-squares
/// line in a comment) and `<prefix>_bland_altman.csv` into `dir`.
pub fn export_plots(report: &EvalReport, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io)?;
    let errors: Vec<f64> = report.residuals.iter().map(|(r, e)| e - r).collect();

    let hist_path = dir.join(format!("{prefix}_errors.csv"));
    let mut w = create(&hist_path)?;
    writeln!(w, "bin_start_mmhg,bin_end_mmhg,count").map_err(io)?;
    let lo = errors.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor();
    if lo.is_finite() && hi.is_finite() {
        let n_bins = (hi - lo) as usize + 1;
        let mut counts = vec![0usize; n_bins];
        for e in &errors {
            counts[((e.floor() - lo) as usize).min(n_bins - 1)] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            writeln!(w, "{},{},{c}", lo + i as f64, lo + i as f64 + 1.0).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let scatter_path = dir.join(format!("{prefix}_scatter.csv"));
    let mut w = create(&scatter_path)?;
    let (slope, intercept) = fit_line(&report.residuals);
    writeln!(w, "# fit estimate = {slope} * reference + {intercept}").map_err(io)?;
    writeln!(w, "reference_mmhg,estimate_mmhg").map_err(io)?;
    for (r, e) in &report.residuals {
        writeln!(w, "{r},{e}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    let ba = &report.bland_altman;
    let ba_path = dir.join(format!("{prefix}_bland_altman.csv"));
    let mut w = create(&ba_path)?;
    writeln!(w, "# bias={} sd={} lower={} upper={}", ba.bias, ba.sd, ba.lower, ba.upper).map_err(io)?;
    writeln!(w, "mean_mmhg,difference_mmhg").map_err(io)?;
    for (m, d) in &ba.points {
        writeln!(w, "{m},{d}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(vec![hist_path, scatter_path, ba_path])
}

fn fit_line(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pairs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Plain-text summary: AAMI comparison, BHS grading and per-model
/// performance, one block per report.
pub fn render_report(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "AAMI (|ME| <= 5 mmHg, RMSE <= 8 mmHg)");
    let _ = writeln!(s, "{:<6} {:<5} {:>5} {:>9} {:>9} {:>6}", "target", "model", "n", "ME", "RMSE", "pass");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<6} {:<5} {:>5} {:>9.2} {:>9.2} {:>6}",
            r.target.to_string(),
            r.model.to_string(),
            r.pooled.n,
            r.pooled.me,
            r.pooled.rmse,
            if r.aami_pass { "yes" } else { "no" }
        );
    }
    let _ = writeln!(s, "\nBHS cumulative error percentage");
    let _ = writeln!(s, "{:<6} {:<5} {:>7} {:>7} {:>7} {:>6}", "target", "model", "<=5", "<=10", "<=15", "grade");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<6} {:<5} {:>7.1} {:>7.1} {:>7.1} {:>6}",
            r.target.to_string(),
            r.model.to_string(),
            r.cp5,
            r.cp10,
            r.cp15,
            r.bhs_grade.to_string()
        );
    }
    let _ = writeln!(s, "\nCross-validated performance (fold mean ± SD)");
    let _ = writeln!(
        s,
        "{:<6} {:<5} {:>15} {:>15} {:>13} {:>8}",
        "target", "model", "MAE", "RMSE", "R", "pooled R"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<6} {:<5} {:>7.2} ± {:<5.2} {:>7.2} ± {:<5.2} {:>5.2} ± {:<5.2} {:>8}",
            r.target.to_string(),
            r.model.to_string(),
            r.fold_mae.mean,
            r.fold_mae.sd,
            r.fold_rmse.mean,
            r.fold_rmse.sd,
            r.fold_r.mean,
            r.fold_r.sd,
            r.pooled.r.map_or("n/a".to_string(), |v| format!("{v:.3}"))
        );
    }
    let _ = writeln!(s, "\nBland-Altman agreement (bias ± 1.96 SD)");
    for r in reports {
        let _ = writeln!(s, "{}", r.bland_altman_line());
    }
    s
}

impl EvalReport {
    fn bland_altman_line(&self) -> String {
        let ba = &self.bland_altman;
        format!(
            "{:<6} {:<5} {:>7.2} ± {:<5.2} mmHg",
            self.target.to_string(),
            self.model.to_string(),
            ba.bias,
            1.96 * ba.sd
        )
    }
}
