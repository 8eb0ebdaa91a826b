//! Metrics tables: one column per joint group plus `Total`, one row per
//! metric. Cells hold the shortest decimal that parses back to the same
//! `f64`, and are empty when a value is undefined.

use std::fmt::Write as _;

use pggtrack_core::metrics::MetricsReport;
use pggtrack_core::train::AblationReport;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

fn with_total(groups: Vec<Option<f64>>, total: Option<f64>) -> Vec<Option<f64>> {
    let mut v = groups;
    v.push(total);
    v
}

fn columns(report: &MetricsReport) -> Vec<String> {
    let mut c: Vec<String> = report.groups.iter().map(|(n, _)| n.clone()).collect();
    c.push("Total".into());
    c
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricsTable {
    /// AP and MOTA rows.
    pub fn from_report(report: &MetricsReport) -> Self {
        MetricsTable {
            columns: columns(report),
            rows: vec![
                ("AP".into(), with_total(report.group_ap(), report.total_ap())),
                ("MOTA".into(), with_total(report.group_mota(), report.total_mota())),
            ],
        }
    }

    /// AP of each trained predictor and their difference.
    pub fn from_ablation(r: &AblationReport) -> Self {
        MetricsTable {
            columns: columns(&r.candidate),
            rows: vec![
                ("AP_with_pgg".into(), with_total(r.candidate.group_ap(), r.candidate.total_ap())),
                ("AP_without_pgg".into(), with_total(r.baseline.group_ap(), r.baseline.total_ap())),
                ("AP_delta".into(), r.group_delta()),
            ],
        }
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(n, _)| n == row)?.1[c]
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::invalid(format!("csv: {e}"));
        let mut header = vec!["metric".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (name, vals) in &self.rows {
            let mut rec = vec![name.clone()];
            rec.extend(vals.iter().map(|v| cell(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Format {
            path: None,
            source: crate::error::FormatError::new(0, m),
        };
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| bad(format!("csv header: {e}")))?.clone();
        if header.get(0) != Some("metric") {
            return Err(bad("first column must be \"metric\"".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(format!("csv: {e}")))?;
            let name = rec.get(0).unwrap_or_default().to_string();
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>().map(Some).map_err(|_| bad(format!("not a number: {s:?}")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((name, vals));
        }
        Ok(MetricsTable { columns, rows })
    }

    /// Aligned text for the terminal, with the same cell strings as the CSV.
    pub fn display(&self) -> String {
        let width = |i: usize| {
            self.rows
                .iter()
                .map(|(_, v)| cell(v[i]).len())
                .chain([self.columns[i].len()])
                .max()
                .unwrap_or(0)
        };
        let first = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:first$}", "metric");
        for (i, c) in self.columns.iter().enumerate() {
            let _ = write!(out, "  {:>w$}", c, w = width(i));
        }
        out.push('\n');
        for (name, vals) in &self.rows {
            let _ = write!(out, "{name:first$}");
            for (i, v) in vals.iter().enumerate() {
                let _ = write!(out, "  {:>w$}", cell(*v), w = width(i));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let t = MetricsTable {
            columns: vec!["Head".into(), "Total".into()],
            rows: vec![
                ("AP".into(), vec![Some(0.1 + 0.2), Some(1.0 / 3.0)]),
                ("MOTA".into(), vec![None, Some(-0.25)]),
            ],
        };
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("metric,Head,Total\n"));
        assert_eq!(MetricsTable::parse(&csv).unwrap(), t);
        assert_eq!(t.get("AP", "Total"), Some(1.0 / 3.0));
        for tok in ["0.30000000000000004", "0.3333333333333333", "-0.25"] {
            assert!(t.display().contains(tok));
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(MetricsTable::parse("metric,Head\nAP,abc\n").is_err());
        assert!(MetricsTable::parse("name,Head\n").is_err());
    }
}
