//! In-memory relational tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ir::{like, AggFn, FieldExpr, Predicate};
use super::value::{infer_column_type, parse_cell, ColumnType, Value};
use super::FabricError;

type CellExtractor = Box<dyn Fn(&[Value]) -> Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

/// Rows are kept ordered by their first column, the record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<Column>, mut rows: Vec<Vec<Value>>) -> Self {
        rows.sort_by(|a, b| match (a.first(), b.first()) {
            (Some(x), Some(y)) => x.id_order(y),
            _ => std::cmp::Ordering::Equal,
        });
        Table { name: name.into(), columns, rows }
    }

    /// Reads a CSV with a header row, inferring one type per column.
    pub fn from_csv<R: std::io::Read>(name: &str, reader: R) -> Result<Self, FabricError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| FabricError::Fixture(format!("{name}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut raw: Vec<Vec<String>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| FabricError::Fixture(format!("{name}: {e}")))?;
            raw.push(rec.iter().map(str::to_string).collect());
        }
        let columns: Vec<Column> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| Column {
                name: h.clone(),
                ty: infer_column_type(raw.iter().map(move |r| r.get(i).map_or("", String::as_str))),
            })
            .collect();
        let rows = raw
            .iter()
            .map(|r| {
                columns
                    .iter()
                    .enumerate()
                    .map(|(i, c)| parse_cell(r.get(i).map_or("", String::as_str), c.ty))
                    .collect()
            })
            .collect();
        Ok(Table::new(name, columns, rows))
    }

    pub fn column_index(&self, name: &str) -> Result<usize, FabricError> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| FabricError::UnknownColumn { table: self.name.clone(), column: name.to_string() })
    }

    fn check_predicate(&self, predicate: &Predicate) -> Result<(), FabricError> {
        predicate.columns().try_for_each(|c| self.column_index(c).map(|_| ()))
    }

    fn matching_rows<'a>(&'a self, predicate: &'a Predicate) -> impl Iterator<Item = &'a Vec<Value>> + 'a {
        self.rows.iter().filter(move |row| {
            predicate.matches(|col| self.columns.iter().position(|c| c.name == col).map(|i| &row[i]))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogMatch {
    pub table: String,
    pub columns: Vec<Column>,
    pub matched_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: String,
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationalDb {
    pub tables: BTreeMap<String, Table>,
}

impl RelationalDb {
    pub fn add_table(&mut self, table: Table) {
        self.tables.insert(table.name.clone(), table);
    }

    pub fn table(&self, name: &str) -> Result<&Table, FabricError> {
        self.tables.get(name).ok_or_else(|| FabricError::UnknownTable(name.to_string()))
    }

    /// Tables whose name or any column name matches the `LIKE` pattern.
    pub fn catalog_match(&self, pattern: &str) -> Vec<CatalogMatch> {
        self.tables
            .values()
            .filter_map(|t| {
                let mut hits = Vec::new();
                if like(pattern, &t.name) {
                    hits.push(t.name.clone());
                }
                hits.extend(t.columns.iter().filter(|c| like(pattern, &c.name)).map(|c| c.name.clone()));
                (!hits.is_empty()).then(|| CatalogMatch {
                    table: t.name.clone(),
                    columns: t.columns.clone(),
                    matched_on: hits,
                })
            })
            .collect()
    }

    pub fn catalog_size(&self) -> usize {
        self.tables.values().map(|t| 1 + t.columns.len()).sum()
    }

    pub fn scan(&self, table: &str, predicate: &Predicate, limit: Option<usize>) -> Result<Vec<Vec<Value>>, FabricError> {
        let t = self.table(table)?;
        t.check_predicate(predicate)?;
        let rows = t.matching_rows(predicate).cloned();
        Ok(match limit {
            Some(n) => rows.take(n).collect(),
            None => rows.collect(),
        })
    }

    /// Grouped aggregate; groups come back ordered by key.
    pub fn group_aggregate(
        &self,
        table: &str,
        predicate: &Predicate,
        group_key: &str,
        agg: AggFn,
        field: &FieldExpr,
    ) -> Result<Vec<GroupRow>, FabricError> {
        let t = self.table(table)?;
        t.check_predicate(predicate)?;
        let key_idx = t.column_index(group_key)?;
        let extract: CellExtractor = match field {
            FieldExpr::Column(c) => {
                let i = t.column_index(c)?;
                Box::new(move |r| r[i].as_f64())
            }
            FieldExpr::Diff { later, earlier } => {
                let (l, e) = (t.column_index(later)?, t.column_index(earlier)?);
                Box::new(move |r| Some(r[l].as_f64()? - r[e].as_f64()?))
            }
        };
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for row in t.matching_rows(predicate) {
            let Some(v) = extract(row) else { continue };
            groups.entry(row[key_idx].render()).or_default().push(v);
        }
        Ok(groups
            .into_iter()
            .map(|(key, values)| {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                GroupRow {
                    key,
                    value: match agg {
                        AggFn::Avg => mean,
                        AggFn::Count => n,
                        AggFn::Var => values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n,
                    },
                    count: values.len(),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "ship_id,region,delay,status\n3,SEA,30,delivered\n1,SEA,10,delivered\n2,SEA,20,delivered\n4,EU,5,in_transit\n";

    fn db() -> RelationalDb {
        let mut db = RelationalDb::default();
        db.add_table(Table::from_csv("shipments", FIXTURE.as_bytes()).unwrap());
        db
    }

    #[test]
    fn average_matches_hand_computed_mean() {
        let groups = db()
            .group_aggregate("shipments", &Predicate::eq("region", "SEA"), "region", AggFn::Avg, &FieldExpr::Column("delay".into()))
            .unwrap();
        assert_eq!(groups, vec![GroupRow { key: "SEA".into(), value: 20.0, count: 3 }]);
    }

    #[test]
    fn variance_is_population_variance() {
        let groups = db()
            .group_aggregate("shipments", &Predicate::all(), "region", AggFn::Var, &FieldExpr::Column("delay".into()))
            .unwrap();
        assert_eq!(groups[0].key, "EU");
        assert_eq!(groups[0].value, 0.0);
        assert!((groups[1].value - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rows_ordered_by_record_id() {
        let rows = db().scan("shipments", &Predicate::all(), Some(2)).unwrap();
        assert_eq!(rows[0][0], Value::Int(1));
        assert_eq!(rows[1][0], Value::Int(2));
    }

    #[test]
    fn unknown_names_are_errors() {
        let d = db();
        assert!(matches!(d.scan("nope", &Predicate::all(), None), Err(FabricError::UnknownTable(_))));
        assert!(matches!(
            d.scan("shipments", &Predicate::eq("colour", "red"), None),
            Err(FabricError::UnknownColumn { .. })
        ));
    }

    #[test]
    fn catalog_matches_tables_and_columns() {
        let d = db();
        assert_eq!(d.catalog_match("%ship%")[0].matched_on, vec!["shipments", "ship_id"]);
        assert!(d.catalog_match("%customer%").is_empty());
    }
}
