//! Tabulated bound curves and their CSV form.

use std::io::{Read, Write};

use crate::bounds::BoundStatus;

/// CSV header shared by every scenario.
pub const CSV_HEADER: [&str; 7] = ["sweep", "baseline", "lower", "upper", "ref_lower", "ref_upper", "status"];

/// Placeholder for an absent value.
const MISSING: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Boundary,
    Infinite,
}

impl RowStatus {
    pub fn label(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Boundary => "boundary",
            RowStatus::Infinite => "infinite",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(RowStatus::Ok),
            "boundary" => Some(RowStatus::Boundary),
            "infinite" => Some(RowStatus::Infinite),
            _ => None,
        }
    }

    pub fn from_bounds(statuses: impl IntoIterator<Item = BoundStatus>) -> Self {
        match statuses.into_iter().fold(BoundStatus::Interior, BoundStatus::worst) {
            BoundStatus::Interior => RowStatus::Ok,
            BoundStatus::BoundaryLimit => RowStatus::Boundary,
            BoundStatus::Infinite => RowStatus::Infinite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    /// Value of the swept parameter; `None` for single-point scenarios.
    pub sweep: Option<f64>,
    pub baseline: f64,
    pub lower: f64,
    pub upper: f64,
    pub ref_lower: Option<f64>,
    pub ref_upper: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_real(x: f64) -> String {
    format!("{x:?}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_else(|| MISSING.to_string())
}

impl CurveTable {
    pub fn new(rows: Vec<CurveRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TableError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                format_opt(r.sweep),
                format_real(r.baseline),
                format_real(r.lower),
                format_real(r.upper),
                format_opt(r.ref_lower),
                format_opt(r.ref_upper),
                r.status.label().to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TableError> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = rd.headers()?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(TableError::Malformed { line: 1, message: format!("unexpected header {header:?}") });
        }
        let mut rows = Vec::new();
        for record in rd.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| TableError::Malformed { line, message };
            let real = |i: usize| -> Result<f64, TableError> {
                record[i]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("column {} is not a number: {:?}", CSV_HEADER[i], &record[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, TableError> {
                if &record[i] == MISSING {
                    Ok(None)
                } else {
                    real(i).map(Some)
                }
            };
            let status = RowStatus::parse(&record[6]).ok_or_else(|| bad(format!("unknown status {:?}", &record[6])))?;
            rows.push(CurveRow {
                sweep: opt(0)?,
                baseline: real(1)?,
                lower: real(2)?,
                upper: real(3)?,
                ref_lower: opt(4)?,
                ref_upper: opt(5)?,
                status,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let table = CurveTable::new(vec![
            CurveRow {
                sweep: None,
                baseline: 2.0,
                lower: 5.0 / 3.0,
                upper: 2.5,
                ref_lower: Some(5.0 / 3.0),
                ref_upper: Some(2.5),
                status: RowStatus::Ok,
            },
            CurveRow {
                sweep: Some(0.1 + 0.2),
                baseline: 1e-300,
                lower: -f64::INFINITY,
                upper: f64::INFINITY,
                ref_lower: None,
                ref_upper: Some(-0.0),
                status: RowStatus::Infinite,
            },
        ]);
        let text = table.to_csv_string();
        assert!(text.starts_with("sweep,baseline,lower,upper,ref_lower,ref_upper,status\n-,2.0,"));
        assert!(!text.contains('\r'));
        let back = CurveTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, table);
        for (a, b) in back.rows.iter().zip(&table.rows) {
            assert_eq!(a.lower.to_bits(), b.lower.to_bits());
        }
    }

    #[test]
    fn malformed_rows_are_located() {
        let text = "sweep,baseline,lower,upper,ref_lower,ref_upper,status\n1.0,x,0,1,-,-,ok\n";
        match CurveTable::read_csv(text.as_bytes()) {
            Err(TableError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
