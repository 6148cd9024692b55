//! KPI records and the run's KPI log.

use serde::{Deserialize, Serialize};

use super::ir::OpKind;
use crate::clock::Tick;

/// One executed (or cache-served) operation. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPIRecord {
    pub component: String,
    pub engine_id: String,
    pub op_kind: OpKind,
    pub latency: u64,
    pub rows_or_tokens: u64,
    pub usd: f64,
    pub cache_hit: bool,
    pub timestamp: Tick,
}

impl KPIRecord {
    /// A zero-cost record for an answer served from a cache.
    pub fn cache_hit(component: impl Into<String>, engine_id: impl Into<String>, op_kind: OpKind, timestamp: Tick) -> Self {
        KPIRecord {
            component: component.into(),
            engine_id: engine_id.into(),
            op_kind,
            latency: 0,
            rows_or_tokens: 0,
            usd: 0.0,
            cache_hit: true,
            timestamp,
        }
    }
}

/// Anything that consumes KPI records, e.g. a cost model.
pub trait KpiSink {
    fn record_kpi(&mut self, kpi: &KPIRecord);
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiLog {
    records: Vec<KPIRecord>,
}

impl KpiLog {
    pub fn records(&self) -> &[KPIRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records that reached a backend.
    pub fn backend_records(&self) -> impl Iterator<Item = &KPIRecord> {
        self.records.iter().filter(|r| !r.cache_hit)
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

impl KpiSink for KpiLog {
    fn record_kpi(&mut self, kpi: &KPIRecord) {
        self.records.push(kpi.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logs_verbatim_and_writes_header_in_field_order() {
        let mut log = KpiLog::default();
        let kpi = KPIRecord {
            component: "sentiment_analysis".into(),
            engine_id: "inference".into(),
            op_kind: OpKind::Infer,
            latency: 220,
            rows_or_tokens: 4,
            usd: 0.01,
            cache_hit: false,
            timestamp: 7,
        };
        log.record_kpi(&kpi);
        log.record_kpi(&KPIRecord::cache_hit("root_cause", "vector", OpKind::VectorSearch, 9));
        assert_eq!(log.records()[0], kpi);
        assert_eq!(log.backend_records().count(), 1);
        let csv = log.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("component,engine_id,op_kind,latency,rows_or_tokens,usd,cache_hit,timestamp"));
        assert_eq!(lines.next(), Some("sentiment_analysis,inference,infer,220,4,0.01,false,7"));
        assert_eq!(lines.next(), Some("root_cause,vector,vector_search,0,0,0.0,true,9"));
    }
}
