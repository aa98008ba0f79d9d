//! Accuracy-versus-bit-error-rate series for external plotting.
//!
//! One CSV per curve with columns `rate,mean_accuracy,ci_low,ci_high`, plus
//! an `index.csv` mapping each curve tag to its file.

use std::path::{Path, PathBuf};

use qnnguard::explorer::{EvaluatedPoint, PointStatus};

use crate::error::{CliError, CliResult};
use crate::output::OutputDir;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub rate: f64,
    pub mean: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub tag: String,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Curve of an evaluated design point over `rates`. Every rate must have
    /// been measured.
    pub fn from_point(point: &EvaluatedPoint, rates: &[f64]) -> CliResult<Self> {
        let tag = point.point.tag();
        if let PointStatus::Invalid { reason } = &point.status {
            return Err(CliError::Other(format!(
                "design point {tag} has no metrics: {reason}"
            )));
        }
        let points = rates
            .iter()
            .map(|&p| {
                point
                    .rate(p)
                    .map(|r| CurvePoint {
                        rate: p,
                        mean: r.mean,
                        ci_half_width: r.ci_half_width,
                    })
                    .ok_or_else(|| {
                        CliError::Other(format!(
                            "design point {tag} is missing the metric at rate {p}"
                        ))
                    })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Curve { tag, points })
    }

    /// Rates at which the mean rises above the previous rate's mean by more
    /// than the two intervals combined.
    pub fn non_monotone_rates(&self) -> Vec<f64> {
        let mut sorted = self.points.clone();
        sorted.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        sorted
            .windows(2)
            .filter(|w| w[1].mean - w[0].mean > w[0].ci_half_width + w[1].ci_half_width)
            .map(|w| w[1].rate)
            .collect()
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rate", "mean_accuracy", "ci_low", "ci_high"])
            .expect("in-memory write");
        let mut sorted = self.points.clone();
        sorted.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        for p in &sorted {
            w.write_record([
                p.rate.to_string(),
                p.mean.to_string(),
                (p.mean - p.ci_half_width).to_string(),
                (p.mean + p.ci_half_width).to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Writes the curves under `subdir` of `out` and returns any warnings.
/// An empty curve set still writes a header-only index.
pub fn emit_plot_data(
    out: &mut OutputDir,
    subdir: &Path,
    curves: &[Curve],
) -> CliResult<Vec<String>> {
    let mut warnings = Vec::new();
    if curves.is_empty() {
        warnings.push("no design points to plot; wrote an empty index".to_string());
    }
    let mut index = csv::Writer::from_writer(Vec::new());
    index
        .write_record(["design_point", "file"])
        .expect("in-memory write");
    for c in curves {
        let file: PathBuf = subdir.join(format!("curve_{}.csv", c.tag));
        out.write(&file, c.csv().as_bytes())?;
        index
            .write_record([c.tag.as_str(), &file.file_name().unwrap().to_string_lossy()])
            .expect("in-memory write");
        let bad = c.non_monotone_rates();
        if !bad.is_empty() {
            warnings.push(format!(
                "{}: mean accuracy rises with bit error rate beyond the intervals at rate(s) {:?}",
                c.tag, bad
            ));
        }
    }
    let index = String::from_utf8(index.into_inner().expect("flush")).expect("utf8");
    out.write(&subdir.join("index.csv"), index.as_bytes())?;
    Ok(warnings)
}
