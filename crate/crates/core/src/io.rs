//! Channel files and CSV tables.
//!
//! A channel file is either JSON `{"h": [[..], ..], "alpha": [..]}` (alpha
//! optional) or a headerless CSV matrix, one row per receiver.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::scenarios::{EnsembleResult, Metric};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    pub h: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

/// Formats like C's `%.9g`.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn parse_channel_json(text: &str) -> Result<ChannelFile> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_channel_csv(text: &str) -> Result<ChannelFile> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut h = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        h.push(row);
    }
    Ok(ChannelFile { h, alpha: None })
}

/// Reads a channel file, choosing the format by extension and then by the first character.
pub fn read_channel_file(path: &Path) -> Result<ChannelFile> {
    let text = fs::read_to_string(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("json") => parse_channel_json(&text),
        Some("csv") => parse_channel_csv(&text),
        _ if text.trim_start().starts_with('{') => parse_channel_json(&text),
        _ => parse_channel_csv(&text),
    }
}

pub fn write_channel_json(path: &Path, h: &ChannelMatrix, alpha: Option<&[f64]>) -> Result<()> {
    let file = ChannelFile { h: h.rows(), alpha: alpha.map(<[f64]>::to_vec) };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn write_channel_csv(path: &Path, h: &ChannelMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in h.rows() {
        w.write_record(row.iter().map(|&x| fmt_g9(x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and rows of numbers.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&x| fmt_g9(x)))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sample: index, rank, zero flag, one column per metric (empty when
/// not computed) and the failure messages joined by `;`.
pub fn write_samples<W: Write>(out: W, result: &EnsembleResult, metrics: &[Metric]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index", "rank", "zero"];
    header.extend(metrics.iter().map(|m| m.name()));
    header.push("failures");
    w.write_record(&header)?;
    for rec in &result.records {
        let mut row = vec![rec.index.to_string(), rec.rank.to_string(), u8::from(rec.zero).to_string()];
        row.extend(metrics.iter().map(|m| rec.values.get(m).map(|&v| fmt_g9(v)).unwrap_or_default()));
        row.push(rec.failures.join(";"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Empirical CDF of one metric as `value,cdf` rows.
pub fn write_cdf<W: Write>(out: W, result: &EnsembleResult, metric: Metric) -> Result<()> {
    let rows: Vec<Vec<f64>> =
        result.cdfs.get(&metric).map(|c| c.iter().map(|&(v, p)| vec![v, p]).collect()).unwrap_or_default();
    write_table(out, &["value", "cdf"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-0.377970123456, "-0.377970123"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1e-5, "1e-05"),
            (0.0001, "0.0001"),
            (2.5e-7, "2.5e-07"),
            (f64::NEG_INFINITY, "-inf"),
            (0.1 + 0.2, "0.3"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g9(x), want, "{x}");
        }
    }

    #[test]
    fn csv_and_json_parse() {
        let c = parse_channel_csv("0.65, 0.35\n1,0\n").unwrap();
        assert_eq!(c.h, vec![vec![0.65, 0.35], vec![1.0, 0.0]]);
        assert!(parse_channel_csv("1,x\n").is_err());
        let j = parse_channel_json(r#"{"h": [[1, 2]], "alpha": [0.5, 0.5]}"#).unwrap();
        assert_eq!(j.alpha, Some(vec![0.5, 0.5]));
    }
}
