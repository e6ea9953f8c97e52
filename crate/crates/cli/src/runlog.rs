//! Run-log persistence: one structured JSON record per line, plus the CSV
//! report aggregation.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde_json::{json, Value};

use lwtf_core::metrics::MetricsReport;

use crate::fmtnum::{sig6, sig6_opt};

pub fn append(path: &Path, record: &Value) -> anyhow::Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening run log {}", path.display()))?;
    writeln!(f, "{record}")?;
    Ok(())
}

pub fn read_all(path: &Path) -> anyhow::Result<Vec<Value>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading run log {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .with_context(|| format!("run log line {} is not valid JSON", i + 1))?;
        out.push(v);
    }
    Ok(out)
}

pub fn eval_record(report: &MetricsReport) -> Value {
    json!({
        "record": "eval",
        "report": report,
    })
}

/// Aggregate the eval records of a run log into the fixed-column CSV.
/// Returns the number of rows written.
pub fn write_report_csv(records: &[Value], out: &Path) -> anyhow::Result<usize> {
    let mut csv = String::new();
    csv.push_str(MetricsReport::CSV_HEADER);
    csv.push('\n');
    let mut rows = 0;
    for rec in records {
        if rec.get("record").and_then(Value::as_str) != Some("eval") {
            continue;
        }
        let report: MetricsReport = serde_json::from_value(
            rec.get("report")
                .cloned()
                .ok_or_else(|| anyhow::anyhow!("eval record without report body"))?,
        )?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            report.model_id,
            report.precision,
            sig6(report.proxy_fid),
            sig6(report.ssim),
            sig6_opt(report.psnr_db),
            sig6(report.sync_dist),
            sig6(report.sync_conf),
            report.macs,
            report.params,
        ));
        rows += 1;
    }
    std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    Ok(rows)
}
