//! Scenario reports, their renderings and report comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::RuntimeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioReport {
    pub backend_queries: u64,
    pub probes: u64,
    pub suppressed_probes: u64,
    pub micro_cache_hit_rate: f64,
    pub shared_cache_hit_rate: f64,
    /// Tick at which the final routing decision was recorded.
    pub total_latency: u64,
    pub total_usd: f64,
    pub quorum_early_serves: u64,
    pub revisions: u64,
    pub final_decision: Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Table,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(RuntimeError::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// Rounds to 6 decimals so renderings are stable.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl ScenarioReport {
    /// Numeric metrics in display order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("backend_queries", self.backend_queries as f64),
            ("probes", self.probes as f64),
            ("suppressed_probes", self.suppressed_probes as f64),
            ("micro_cache_hit_rate", self.micro_cache_hit_rate),
            ("shared_cache_hit_rate", self.shared_cache_hit_rate),
            ("total_latency", self.total_latency as f64),
            ("total_usd", self.total_usd),
            ("quorum_early_serves", self.quorum_early_serves as f64),
            ("revisions", self.revisions as f64),
        ]
    }

    pub fn from_json(text: &str) -> Result<Self, RuntimeError> {
        serde_json::from_str(text).map_err(|e| RuntimeError::Config(format!("not a scenario report: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> =
            self.metrics().into_iter().map(|(k, v)| (k.to_string(), format_number(v))).collect();
        rows.push(("final_decision".into(), self.final_decision.to_string()));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, RuntimeError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.metrics().iter().map(|(k, _)| *k).collect();
        header.push("final_decision");
        w.write_record(&header).map_err(|e| RuntimeError::Config(e.to_string()))?;
        let mut row: Vec<String> = self.metrics().iter().map(|(_, v)| format_number(*v)).collect();
        row.push(self.final_decision.to_string());
        w.write_record(&row).map_err(|e| RuntimeError::Config(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| RuntimeError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn render(&self, format: ReportFormat) -> Result<String, RuntimeError> {
        match format {
            ReportFormat::Json => Ok(self.to_json()),
            ReportFormat::Table => Ok(self.to_table()),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDelta {
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    /// `None` when the baseline is zero and the values differ.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub deltas: Vec<MetricDelta>,
    pub decisions_match: bool,
}

/// Per-metric change from `a` to `b`.
pub fn compare(a: &ScenarioReport, b: &ScenarioReport) -> Comparison {
    let deltas = a
        .metrics()
        .into_iter()
        .zip(b.metrics())
        .map(|((metric, x), (_, y))| {
            let delta = round6(y - x);
            let percent = if x != 0.0 {
                Some(round6(100.0 * (y - x) / x.abs()))
            } else if delta == 0.0 {
                Some(0.0)
            } else {
                None
            };
            MetricDelta { metric, a: x, b: y, delta, percent }
        })
        .collect();
    Comparison { deltas, decisions_match: a.final_decision == b.final_decision }
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22}  {:>12}  {:>12}  {:>12}  {:>10}", "metric", "a", "b", "delta", "percent");
        for d in &self.deltas {
            let pct = d.percent.map_or("n/a".to_string(), |p| format!("{p:+.2}%"));
            let _ = writeln!(
                out,
                "{:<22}  {:>12}  {:>12}  {:>12}  {:>10}",
                d.metric,
                format_number(d.a),
                format_number(d.b),
                format_number(d.delta),
                pct
            );
        }
        let verdict = if self.decisions_match { "identical" } else { "DIVERGENT" };
        let _ = writeln!(out, "final_decision: {verdict}");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn report() -> ScenarioReport {
        ScenarioReport {
            backend_queries: 20,
            probes: 6,
            suppressed_probes: 2,
            micro_cache_hit_rate: 0.25,
            shared_cache_hit_rate: 0.5,
            total_latency: 410,
            total_usd: 0.05,
            quorum_early_serves: 1,
            revisions: 0,
            final_decision: json!({ "region": "Southeast Asia", "new_route": "Singapore >> Kuala Lumpur >> Destination" }),
        }
    }

    #[test]
    fn json_round_trips() {
        let r = report();
        assert_eq!(ScenarioReport::from_json(&r.to_json()).unwrap(), r);
        assert!(ScenarioReport::from_json("{\"backend_queries\": 1}").is_err());
    }

    #[test]
    fn renderings_carry_the_same_values() {
        let r = report();
        let table = r.to_table();
        assert!(table.contains("backend_queries        20"));
        assert!(table.contains("shared_cache_hit_rate  0.500000"));
        let csv = r.to_csv().unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("backend_queries,probes,"));
        assert!(lines.next().unwrap().starts_with("20,6,2,0.250000,0.500000,410,0.050000,1,0,"));
    }

    #[test]
    fn identity_comparison_is_all_zero() {
        let c = compare(&report(), &report());
        assert!(c.decisions_match);
        assert!(c.deltas.iter().all(|d| d.delta == 0.0 && d.percent == Some(0.0)));
    }

    #[test]
    fn deltas_and_divergence() {
        let mut b = report();
        b.backend_queries = 15;
        b.final_decision = json!({ "region": "Europe" });
        let c = compare(&report(), &b);
        assert!(!c.decisions_match);
        assert_eq!(c.deltas[0].delta, -5.0);
        assert_eq!(c.deltas[0].percent, Some(-25.0));
    }
}
