//! Versioned CSV schemas of the pipelines, with writers and header-checked
//! readers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const FIGURE_HEADER: &str = "step,run_id,l_un,l_un_ci,l_sup_mu,l_sup_mu_ci,rhs_full,rhs_stripped,holds";
pub const NORM_HEADER: &str = "step,run_id,min_norm,max_norm";
pub const MEAN_HEADER: &str = "step,n_runs,l_un,l_sup_mu,rhs_full,rhs_stripped,all_hold";
pub const NORM_MEAN_HEADER: &str = "step,n_runs,min_norm,max_norm";
pub const TRACE_HEADER: &str =
    "step,objective,objective_mean,epsilon,min_norm,max_norm,grad_norm,lemma42_precondition,lemma42_holds";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub step: usize,
    pub run_id: usize,
    pub l_un: f64,
    pub l_un_ci: f64,
    pub l_sup_mu: f64,
    pub l_sup_mu_ci: f64,
    pub rhs_full: f64,
    pub rhs_stripped: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub step: usize,
    pub run_id: usize,
    pub min_norm: f64,
    pub max_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub step: usize,
    pub n_runs: usize,
    pub l_un: f64,
    pub l_sup_mu: f64,
    pub rhs_full: f64,
    pub rhs_stripped: f64,
    pub all_hold: bool,
}

pub fn figure_csv(rows: &[FigureRow]) -> String {
    let mut out = format!("{FIGURE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step, r.run_id, r.l_un, r.l_un_ci, r.l_sup_mu, r.l_sup_mu_ci, r.rhs_full, r.rhs_stripped, r.holds
        ));
    }
    out
}

pub fn norm_csv(rows: &[NormRow]) -> String {
    let mut out = format!("{NORM_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.run_id, r.min_norm, r.max_norm));
    }
    out
}

pub fn trace_csv(rows: &[crate::trainer::TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.objective,
            r.objective_mean,
            r.epsilon,
            r.min_norm,
            r.max_norm,
            r.grad_norm,
            r.lemma42_precondition,
            r.lemma42_holds
        ));
    }
    out
}

/// Per-step averages over runs, in step order.
pub fn mean_rows(rows: &[FigureRow]) -> Vec<MeanRow> {
    let mut steps: Vec<usize> = rows.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let at: Vec<&FigureRow> = rows.iter().filter(|r| r.step == step).collect();
            let n = at.len() as f64;
            let avg = |f: fn(&FigureRow) -> f64| at.iter().map(|r| f(r)).sum::<f64>() / n;
            MeanRow {
                step,
                n_runs: at.len(),
                l_un: avg(|r| r.l_un),
                l_sup_mu: avg(|r| r.l_sup_mu),
                rhs_full: avg(|r| r.rhs_full),
                rhs_stripped: avg(|r| r.rhs_stripped),
                all_hold: at.iter().all(|r| r.holds),
            }
        })
        .collect()
}

pub fn mean_csv(rows: &[MeanRow]) -> String {
    let mut out = format!("{MEAN_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.n_runs, r.l_un, r.l_sup_mu, r.rhs_full, r.rhs_stripped, r.all_hold
        ));
    }
    out
}

/// Per-step (mean min norm, mean max norm) over runs.
pub fn norm_means(rows: &[NormRow]) -> Vec<(usize, usize, f64, f64)> {
    let mut steps: Vec<usize> = rows.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let at: Vec<&NormRow> = rows.iter().filter(|r| r.step == step).collect();
            let n = at.len() as f64;
            (
                step,
                at.len(),
                at.iter().map(|r| r.min_norm).sum::<f64>() / n,
                at.iter().map(|r| r.max_norm).sum::<f64>() / n,
            )
        })
        .collect()
}

pub fn norm_mean_csv(rows: &[NormRow]) -> String {
    let mut out = format!("{NORM_MEAN_HEADER}\n");
    for (step, n, lo, hi) in norm_means(rows) {
        out.push_str(&format!("{step},{n},{lo},{hi}\n"));
    }
    out
}

fn records<'a>(text: &'a str, header: &str) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines();
    let found = lines.next().unwrap_or("");
    if found != header {
        return Err(Error::Format(format!("CSV header mismatch: expected `{header}`, found `{found}`")));
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(Error::Format(format!("CSV line {}: {} fields, expected {width}", i + 2, fields.len())));
            }
            Ok(fields)
        })
        .collect()
}

fn field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("CSV field {name}: cannot parse `{s}`")))
}

pub fn parse_figure_csv(text: &str) -> Result<Vec<FigureRow>> {
    records(text, FIGURE_HEADER)?
        .into_iter()
        .map(|f| {
            Ok(FigureRow {
                step: field(f[0], "step")?,
                run_id: field(f[1], "run_id")?,
                l_un: field(f[2], "l_un")?,
                l_un_ci: field(f[3], "l_un_ci")?,
                l_sup_mu: field(f[4], "l_sup_mu")?,
                l_sup_mu_ci: field(f[5], "l_sup_mu_ci")?,
                rhs_full: field(f[6], "rhs_full")?,
                rhs_stripped: field(f[7], "rhs_stripped")?,
                holds: field(f[8], "holds")?,
            })
        })
        .collect()
}

pub fn parse_norm_csv(text: &str) -> Result<Vec<NormRow>> {
    records(text, NORM_HEADER)?
        .into_iter()
        .map(|f| {
            Ok(NormRow {
                step: field(f[0], "step")?,
                run_id: field(f[1], "run_id")?,
                min_norm: field(f[2], "min_norm")?,
                max_norm: field(f[3], "max_norm")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, run_id: usize, v: f64) -> FigureRow {
        FigureRow {
            step,
            run_id,
            l_un: v,
            l_un_ci: 0.01,
            l_sup_mu: v / 3.0,
            l_sup_mu_ci: 0.02,
            rhs_full: 2.0 * v,
            rhs_stripped: v,
            holds: true,
        }
    }

    #[test]
    fn figure_csv_round_trips() {
        let rows = vec![row(0, 0, 0.1), row(0, 1, 0.7), row(5, 0, 1.0 / 3.0)];
        let text = figure_csv(&rows);
        assert_eq!(parse_figure_csv(&text).unwrap(), rows);
        let means = mean_rows(&rows);
        assert_eq!(means.len(), 2);
        assert_eq!(means[0].n_runs, 2);
        assert!((means[0].l_un - 0.4).abs() < 1e-15);
    }

    #[test]
    fn header_mismatch_is_an_error() {
        let text = figure_csv(&[row(0, 0, 0.5)]).replacen("l_un,", "l_unsup,", 1);
        assert!(parse_figure_csv(&text).is_err());
        assert!(parse_norm_csv(&figure_csv(&[])).is_err());
    }

    #[test]
    fn norm_csv_round_trips() {
        let rows = vec![
            NormRow {
                step: 0,
                run_id: 0,
                min_norm: 0.25,
                max_norm: 3.5,
            },
            NormRow {
                step: 0,
                run_id: 1,
                min_norm: 0.75,
                max_norm: 1.5,
            },
        ];
        assert_eq!(parse_norm_csv(&norm_csv(&rows)).unwrap(), rows);
        assert_eq!(norm_means(&rows), vec![(0, 2, 0.5, 2.5)]);
    }
}
