//! Report and trace writers used by the command-line front end.
//!
//! A report is a plain-text table followed by a line holding only
//! [`JSON_MARKER`] and a pretty-printed JSON document with the same numbers.

use std::io::Write;

use serde::Serialize;

use crate::cv::{ModelReport, StabilityReport};
use crate::error::Result;
use crate::selection::CandidateResult;

/// Separator between the text table and the JSON block.
pub const JSON_MARKER: &str = "--- json ---";

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.4}")
    }
}

/// Text table for one model report.
pub fn model_table(r: &ModelReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "method: {}  response: {}  n: {}  p: {}  standardize: {}\n",
        r.method, r.response, r.n, r.p, r.standardize
    ));
    let width = r
        .selected
        .iter()
        .map(String::len)
        .chain(std::iter::once("(intercept)".len()))
        .max()
        .unwrap_or(0);
    out.push_str(&format!("{:<width$}  {:>12}  {:>10}\n", "variable", "coefficient", "t"));
    let names = std::iter::once("(intercept)").chain(r.selected.iter().map(String::as_str));
    for ((name, b), t) in names.zip(&r.coefficients).zip(&r.t_values) {
        out.push_str(&format!("{name:<width$}  {:>12}  {:>10}\n", fmt_num(*b), fmt_num(*t)));
    }
    out.push_str(&format!("residual scale: {}\n", fmt_num(r.scale)));
    if let Some(m) = r.median_metric() {
        let folds: Vec<String> = r.fold_metrics.iter().map(|v| fmt_num(*v)).collect();
        out.push_str(&format!(
            "{} per fold: {}\nmedian {}: {}\n",
            r.metric,
            folds.join(" "),
            r.metric,
            fmt_num(m)
        ));
    }
    out.push_str(&format!("wall time: {:.3}s\n", r.wall_time_s));
    out
}

/// Text table for one stability study.
pub fn stability_table(r: &StabilityReport) -> String {
    let mut out = format!("method: {}  orders: {}\nmodel size  count\n", r.method, r.n_orders);
    for (size, count) in r.size_histogram.iter().enumerate().filter(|(_, c)| **c > 0) {
        out.push_str(&format!("{size:>10}  {count:>5}\n"));
    }
    let width = r.counts.iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
    out.push_str(&format!("{:<width$}  selected\n", "variable"));
    for (name, count) in &r.counts {
        out.push_str(&format!("{name:<width$}  {count:>8}\n"));
    }
    out
}

/// Writes `text` then the JSON block for `value`.
pub fn write_report<W: Write, T: Serialize + ?Sized>(mut out: W, text: &str, value: &T) -> Result<()> {
    out.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        writeln!(out)?;
    }
    writeln!(out, "{JSON_MARKER}")?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Extracts the JSON block of a report written by [`write_report`].
pub fn json_block(report: &str) -> Option<&str> {
    let at = report.find(JSON_MARKER)?;
    Some(report[at + JSON_MARKER.len()..].trim())
}

#[derive(Serialize)]
struct TraceRow<'a> {
    method: &'a str,
    variable: &'a str,
    index: usize,
    gamma: f64,
    sigma: f64,
    rho: f64,
    t_stat: f64,
    p_value: f64,
    alpha: f64,
    accepted: bool,
    wealth_after: f64,
    degenerate: bool,
}

/// One CSV row per visited candidate; `names` maps trace indices to names.
pub fn write_trace<W: Write>(out: W, method: &str, trace: &[CandidateResult], names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_trace_rows(&mut w, method, trace, names)?;
    w.flush()?;
    Ok(())
}

/// Appends trace rows to an open CSV writer.
pub fn write_trace_rows<W: Write>(w: &mut csv::Writer<W>, method: &str, trace: &[CandidateResult], names: &[String]) -> Result<()> {
    for r in trace {
        w.serialize(TraceRow {
            method,
            variable: names.get(r.index).map(String::as_str).unwrap_or(""),
            index: r.index,
            gamma: r.gamma,
            sigma: r.sigma,
            rho: r.rho,
            t_stat: r.t_stat,
            p_value: r.p_value,
            alpha: r.alpha,
            accepted: r.accepted,
            wealth_after: r.wealth_after,
            degenerate: r.degenerate,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cv::Metric;
    use crate::data::StandardizeMode;
    use crate::selection::Method;

    fn sample() -> ModelReport {
        ModelReport {
            method: Method::Robust,
            response: "y".into(),
            n: 10,
            p: 3,
            selected: vec!["age".into()],
            coefficients: vec![0.1, 0.5],
            t_values: vec![1.0, f64::NAN],
            scale: 0.9,
            standardize: StandardizeMode::Classical,
            metric: Metric::Mape,
            fold_metrics: vec![1.0, 3.0, 2.0],
            wall_time_s: 0.01,
            trace: Vec::new(),
        }
    }

    #[test]
    fn report_has_table_then_json() {
        let r = sample();
        let mut buf = Vec::new();
        write_report(&mut buf, &model_table(&r), &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("age"));
        assert!(text.contains("median MAPE: 2.0000"));
        assert!(text.contains("NA"));
        let v: serde_json::Value = serde_json::from_str(json_block(&text).unwrap()).unwrap();
        assert_eq!(v["selected"][0], "age");
        assert_eq!(v["fold_metrics"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn trace_rows_carry_names() {
        let row = CandidateResult {
            index: 1,
            gamma: 0.2,
            sigma: 1.0,
            rho: 0.9,
            t_stat: 3.0,
            p_value: 0.0027,
            alpha: 0.25,
            accepted: true,
            wealth_after: 0.55,
            degenerate: false,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, "robust", &[row], &["a".into(), "b".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,variable,index,gamma,sigma,rho,t_stat,p_value,alpha,accepted,wealth_after,degenerate"
        );
        assert!(lines.next().unwrap().starts_with("robust,b,1,0.2,"));
    }
}
