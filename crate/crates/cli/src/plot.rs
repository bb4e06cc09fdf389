//! CSV projections of result records for external plotting tools.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::csv::{self, Cell};
use crate::suite::ResultRecord;
use crate::{write_file, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ClVsL,
    DensityHistogram,
    GapConvergence,
    LambdaLimit,
}

impl FromStr for PlotKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cl_vs_l" => Ok(PlotKind::ClVsL),
            "density_histogram" => Ok(PlotKind::DensityHistogram),
            "gap_convergence" => Ok(PlotKind::GapConvergence),
            "lambda_limit" => Ok(PlotKind::LambdaLimit),
            other => Err(LabError::UnknownKind(other.to_string())),
        }
    }
}

impl PlotKind {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            PlotKind::ClVsL => &["l", "c_l"],
            PlotKind::DensityHistogram => {
                &["bin_center", "density", "n_star_lambda", "n_star_Lambda"]
            }
            PlotKind::GapConvergence => &["seed", "max_gap_error"],
            PlotKind::LambdaLimit => &["Lambda", "delta", "gap"],
        }
    }
}

fn series<'a>(r: &'a ResultRecord, key: &str) -> Option<&'a [f64]> {
    r.series.get(key).map(Vec::as_slice)
}

/// Rows from the records that carry the columns `kind` needs; other records are skipped.
pub fn plot_rows(records: &[ResultRecord], kind: PlotKind) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for r in records {
        match kind {
            PlotKind::ClVsL => match (series(r, "l"), series(r, "c_l")) {
                (Some(l), Some(c)) => rows.extend(l.iter().zip(c).map(|(&l, &c)| vec![l, c])),
                _ => {
                    if let (Some(&l), Some(&c)) = (r.metrics.get("l"), r.metrics.get("c_l")) {
                        rows.push(vec![l, c]);
                    }
                }
            },
            PlotKind::DensityHistogram => {
                let (Some(x), Some(d), Some(&a), Some(&b)) = (
                    series(r, "bin_center"),
                    series(r, "density"),
                    r.metrics.get("n_star_lambda"),
                    r.metrics.get("n_star_Lambda"),
                ) else {
                    continue;
                };
                rows.extend(x.iter().zip(d).map(|(&x, &d)| vec![x, d, a, b]));
            }
            PlotKind::GapConvergence => {
                if let (Some(s), Some(g)) = (series(r, "seed"), series(r, "max_gap_error")) {
                    rows.extend(s.iter().zip(g).map(|(&s, &g)| vec![s, g]));
                }
            }
            PlotKind::LambdaLimit => {
                if let (Some(big), Some(d), Some(g)) =
                    (series(r, "Lambda"), series(r, "delta"), series(r, "gap"))
                {
                    rows.extend(
                        big.iter()
                            .zip(d)
                            .zip(g)
                            .map(|((&big, &d), &g)| vec![big, d, g]),
                    );
                }
            }
        }
    }
    if kind == PlotKind::ClVsL {
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    }
    rows
}

pub fn plot_csv(records: &[ResultRecord], kind: PlotKind) -> String {
    let rows: Vec<Vec<Cell>> = plot_rows(records, kind)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .map(|(j, x)| {
                    if kind == PlotKind::GapConvergence && j == 0 {
                        Cell::Int(x as u64)
                    } else {
                        Cell::Real(x)
                    }
                })
                .collect()
        })
        .collect();
    csv::table(kind.header(), &rows)
}

pub fn emit_plot_data(records: &[ResultRecord], kind: PlotKind, out: &Path) -> Result<PathBuf> {
    write_file(out, &plot_csv(records, kind))?;
    Ok(out.to_path_buf())
}
