//! Navigation metrics rows and their CSV encoding.
//!
//! Schema (one header line, then one line per run):
//! `scenario,method,traversal_time_s,path_length_m,outcome,seed`.
//! Failed runs carry empty time and length fields. Floats are written in
//! Rust's shortest round-trip form, so parse → write reproduces the input
//! byte for byte.

use crate::CliError;

pub const METRICS_HEADER: &str = "scenario,method,traversal_time_s,path_length_m,outcome,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Interactive,
    NoInteraction,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Interactive => "interactive",
            Method::NoInteraction => "no_interaction",
        }
    }

    fn parse(s: &str) -> Result<Method, CliError> {
        match s {
            "interactive" => Ok(Method::Interactive),
            "no_interaction" => Ok(Method::NoInteraction),
            other => Err(CliError::Validation(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: Method,
    /// Simulated traversal time; `None` for failed runs.
    pub traversal_time_s: Option<f64>,
    /// Base path length; `None` for failed runs.
    pub path_length_m: Option<f64>,
    pub success: bool,
    pub seed: u64,
}

impl MetricsRow {
    /// A failed run reports no time or length, mirroring an "N/A" table cell.
    fn validate(&self) -> Result<(), CliError> {
        if self.scenario.contains([',', '"', '\n', '\r']) {
            return Err(CliError::Validation(format!(
                "scenario id `{}` contains CSV metacharacters",
                self.scenario
            )));
        }
        let has_numbers = self.traversal_time_s.is_some() && self.path_length_m.is_some();
        let has_none = self.traversal_time_s.is_none() && self.path_length_m.is_none();
        if self.success && !has_numbers {
            return Err(CliError::Internal(
                "successful row is missing time or length".into(),
            ));
        }
        if !self.success && !has_none {
            return Err(CliError::Internal(
                "failed row must not carry time or length".into(),
            ));
        }
        Ok(())
    }

    fn outcome_str(&self) -> &'static str {
        if self.success {
            "success"
        } else {
            "failed"
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(rows: &[MetricsRow]) -> Result<String, CliError> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        r.validate()?;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scenario,
            r.method.as_str(),
            fmt_opt(r.traversal_time_s),
            fmt_opt(r.path_length_m),
            r.outcome_str(),
            r.seed
        ));
    }
    Ok(out)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(CliError::Validation(format!(
                "bad metrics header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let parse_opt = |s: &str, what: &str| -> Result<Option<f64>, CliError> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>()
            .map(Some)
            .map_err(|e| CliError::Validation(format!("bad {what} `{s}`: {e}")))
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CliError::Validation(format!(
                "metrics line {} has {} fields, expected 6",
                i + 2,
                fields.len()
            )));
        }
        let success = match fields[4] {
            "success" => true,
            "failed" => false,
            other => {
                return Err(CliError::Validation(format!("unknown outcome `{other}`")));
            }
        };
        let row = MetricsRow {
            scenario: fields[0].to_string(),
            method: Method::parse(fields[1])?,
            traversal_time_s: parse_opt(fields[2], "traversal_time_s")?,
            path_length_m: parse_opt(fields[3], "path_length_m")?,
            success,
            seed: fields[5]
                .parse()
                .map_err(|e| CliError::Validation(format!("bad seed `{}`: {e}", fields[5])))?,
        };
        row.validate()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Mean and population standard deviation of one summary cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub n_success: usize,
    pub mean_time_s: Option<f64>,
    pub std_time_s: Option<f64>,
    pub mean_length_m: Option<f64>,
    pub std_length_m: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates one (scenario, method) cell. Statistics cover successful runs
/// only; failures are counted and otherwise left out, like "N/A" cells. The
/// input order does not matter.
pub fn aggregate(rows: &[&MetricsRow]) -> Aggregate {
    let mut times: Vec<f64> = rows.iter().filter_map(|r| r.traversal_time_s).collect();
    let mut lengths: Vec<f64> = rows.iter().filter_map(|r| r.path_length_m).collect();
    times.sort_by(f64::total_cmp);
    lengths.sort_by(f64::total_cmp);
    let (mean_time_s, std_time_s) = match times.is_empty() {
        true => (None, None),
        false => {
            let (m, s) = mean_std(&times);
            (Some(m), Some(s))
        }
    };
    let (mean_length_m, std_length_m) = match lengths.is_empty() {
        true => (None, None),
        false => {
            let (m, s) = mean_std(&lengths);
            (Some(m), Some(s))
        }
    };
    Aggregate {
        n: rows.len(),
        n_success: rows.iter().filter(|r| r.success).count(),
        mean_time_s,
        std_time_s,
        mean_length_m,
        std_length_m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scenario: &str, method: Method, t: f64, l: f64, seed: u64) -> MetricsRow {
        MetricsRow {
            scenario: scenario.into(),
            method,
            traversal_time_s: Some(t),
            path_length_m: Some(l),
            success: true,
            seed,
        }
    }

    fn failed(scenario: &str, method: Method, seed: u64) -> MetricsRow {
        MetricsRow {
            scenario: scenario.into(),
            method,
            traversal_time_s: None,
            path_length_m: None,
            success: false,
            seed,
        }
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let rows = vec![
            row("fig7", Method::Interactive, 58.2, 5.42, 3),
            failed("fig7", Method::NoInteraction, 3),
            row("open", Method::NoInteraction, 10.550000000000001, 6.0, 0),
        ];
        let text = write_metrics_csv(&rows).unwrap();
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed, rows);
        let text2 = write_metrics_csv(&parsed).unwrap();
        assert_eq!(text2, text, "write -> parse -> write must be identity");
    }

    #[test]
    fn failed_rows_have_empty_time_and_length_fields() {
        let text = write_metrics_csv(&[failed("blocked", Method::NoInteraction, 7)]).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "blocked,no_interaction,,,failed,7");
    }

    #[test]
    fn failed_rows_carrying_numbers_are_rejected() {
        let mut bad = row("x", Method::Interactive, 1.0, 2.0, 0);
        bad.success = false;
        assert!(write_metrics_csv(&[bad]).is_err());
    }

    #[test]
    fn singleton_aggregate_has_zero_std() {
        let r = row("a", Method::Interactive, 58.2, 4.0, 0);
        let agg = aggregate(&[&r]);
        assert_eq!(agg.mean_time_s, Some(58.2));
        assert_eq!(agg.std_time_s, Some(0.0));
        assert_eq!(agg.n, 1);
        assert_eq!(agg.n_success, 1);
    }

    #[test]
    fn aggregate_matches_independent_recomputation_and_ignores_order() {
        let rows = vec![
            row("a", Method::Interactive, 10.0, 4.0, 0),
            row("a", Method::Interactive, 14.0, 6.0, 1),
            row("a", Method::Interactive, 12.0, 5.0, 2),
            failed("a", Method::Interactive, 3),
        ];
        let fwd: Vec<&MetricsRow> = rows.iter().collect();
        let rev: Vec<&MetricsRow> = rows.iter().rev().collect();
        let a = aggregate(&fwd);
        assert_eq!(a, aggregate(&rev));
        // Hand recomputation: mean 12, variance (4 + 4 + 0)/3.
        assert!((a.mean_time_s.unwrap() - 12.0).abs() < 1e-12);
        assert!((a.std_time_s.unwrap() - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(a.n, 4);
        assert_eq!(a.n_success, 3);
    }
}
