//! The tradeoff report: one row per configuration, CSV and JSON renderings.

use crate::error::{Error, Result};

/// CSV column order; the JSON rows mirror exactly these fields.
pub const REPORT_COLUMNS: &str = "config_label,codebook_size,eer,eer_ci_lo,eer_ci_hi,\
eer_groupA,eer_groupB,utility_err,util_ci_lo,util_ci_hi,perplexity,seed";

/// One evaluated configuration. Metric fields are `None` for a row whose
/// training diverged; such rows keep their place in the report with an
/// `[aborted]` marker on the label instead of being dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub config_label: String,
    pub codebook_size: Option<usize>,
    pub eer: Option<f64>,
    pub eer_ci_lo: Option<f64>,
    pub eer_ci_hi: Option<f64>,
    pub eer_group_a: Option<f64>,
    pub eer_group_b: Option<f64>,
    pub utility_err: Option<f64>,
    pub util_ci_lo: Option<f64>,
    pub util_ci_hi: Option<f64>,
    pub perplexity: Option<f64>,
    pub seed: u64,
}

impl TradeoffRow {
    pub fn is_aborted(&self) -> bool {
        self.config_label.ends_with("[aborted]")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TradeoffReport {
    pub rows: Vec<TradeoffRow>,
}

/// Renders a number with 6 significant digits (fixed-point, zero-padded to
/// the significance boundary).
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (5 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

/// CSV rendering with the pinned column order.
pub fn emit_csv(report: &TradeoffReport) -> String {
    let mut out = String::from(REPORT_COLUMNS);
    out.push('\n');
    for r in &report.rows {
        let size = r
            .codebook_size
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.config_label,
            size,
            opt(r.eer),
            opt(r.eer_ci_lo),
            opt(r.eer_ci_hi),
            opt(r.eer_group_a),
            opt(r.eer_group_b),
            opt(r.utility_err),
            opt(r.util_ci_lo),
            opt(r.util_ci_hi),
            opt(r.perplexity),
            r.seed
        ));
    }
    out
}

/// JSON rendering mirroring the CSV fields (`null` where CSV is empty).
pub fn emit_json(report: &TradeoffReport) -> String {
    let field = |x: Option<f64>| x.map(format_sig).unwrap_or_else(|| "null".to_string());
    let mut out = String::from("{\n  \"rows\": [\n");
    for (i, r) in report.rows.iter().enumerate() {
        let size = r
            .codebook_size
            .map(|v| v.to_string())
            .unwrap_or_else(|| "null".to_string());
        out.push_str(&format!(
            "    {{\"config_label\": \"{}\", \"codebook_size\": {}, \"eer\": {}, \
\"eer_ci_lo\": {}, \"eer_ci_hi\": {}, \"eer_groupA\": {}, \"eer_groupB\": {}, \
\"utility_err\": {}, \"util_ci_lo\": {}, \"util_ci_hi\": {}, \"perplexity\": {}, \
\"seed\": {}}}{}\n",
            r.config_label,
            size,
            field(r.eer),
            field(r.eer_ci_lo),
            field(r.eer_ci_hi),
            field(r.eer_group_a),
            field(r.eer_group_b),
            field(r.utility_err),
            field(r.util_ci_lo),
            field(r.util_ci_hi),
            field(r.perplexity),
            r.seed,
            if i + 1 < report.rows.len() { "," } else { "" }
        ));
    }
    out.push_str("  ]\n}\n");
    out
}

/// Parses [`emit_csv`] output back into a report.
pub fn parse_report_csv(text: &str) -> Result<TradeoffReport> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyInput {
        op: "parse_report_csv",
    })?;
    if header != REPORT_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            detail: "unexpected report header".into(),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::Parse {
                line: lineno,
                detail: format!("expected 12 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    line: lineno,
                    detail: format!("bad number \"{s}\""),
                })
            }
        };
        rows.push(TradeoffRow {
            config_label: fields[0].to_string(),
            codebook_size: if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    detail: format!("bad codebook size \"{}\"", fields[1]),
                })?)
            },
            eer: num(fields[2])?,
            eer_ci_lo: num(fields[3])?,
            eer_ci_hi: num(fields[4])?,
            eer_group_a: num(fields[5])?,
            eer_group_b: num(fields[6])?,
            utility_err: num(fields[7])?,
            util_ci_lo: num(fields[8])?,
            util_ci_hi: num(fields[9])?,
            perplexity: num(fields[10])?,
            seed: fields[11].parse().map_err(|_| Error::Parse {
                line: lineno,
                detail: format!("bad seed \"{}\"", fields[11]),
            })?,
        });
    }
    Ok(TradeoffReport { rows })
}

/// Parses [`emit_json`] output back into a report.
pub fn parse_report_json(text: &str) -> Result<TradeoffReport> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        detail: format!("report json: {e}"),
    })?;
    let rows = value
        .get("rows")
        .and_then(|r| r.as_array())
        .ok_or_else(|| Error::Parse {
            line: 1,
            detail: "report json: missing rows array".into(),
        })?;
    let get_f64 = |row: &serde_json::Value, key: &str| -> Option<f64> {
        row.get(key).and_then(|v| v.as_f64())
    };
    let parsed = rows
        .iter()
        .map(|row| {
            Ok(TradeoffRow {
                config_label: row
                    .get("config_label")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| Error::Parse {
                        line: 1,
                        detail: "report json: row without config_label".into(),
                    })?
                    .to_string(),
                codebook_size: row
                    .get("codebook_size")
                    .and_then(|v| v.as_u64())
                    .map(|v| v as usize),
                eer: get_f64(row, "eer"),
                eer_ci_lo: get_f64(row, "eer_ci_lo"),
                eer_ci_hi: get_f64(row, "eer_ci_hi"),
                eer_group_a: get_f64(row, "eer_groupA"),
                eer_group_b: get_f64(row, "eer_groupB"),
                utility_err: get_f64(row, "utility_err"),
                util_ci_lo: get_f64(row, "util_ci_lo"),
                util_ci_hi: get_f64(row, "util_ci_hi"),
                perplexity: get_f64(row, "perplexity"),
                seed: row.get("seed").and_then(|v| v.as_u64()).ok_or_else(|| {
                    Error::Parse {
                        line: 1,
                        detail: "report json: row without seed".into(),
                    }
                })?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TradeoffReport { rows: parsed })
}
