//! CSV emission and parsing with lossless float formatting.
//!
//! Floats are written with 17 significant digits so a rerun with equal seeds
//! is byte-identical and values round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;

/// Format a float with 17 significant digits (lossless for f64).
pub fn float17(v: f64) -> String {
    if v == 0.0 {
        // avoid "-0" artifacts in output
        return "0".into();
    }
    format!("{v:.16e}")
}

/// A small fixed-column CSV writer.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        CsvTable { header, rows: Vec::new() }
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width mismatch");
        self.rows.push(cells);
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_string())
            .map_err(|e| HarnessError::Io(path.display().to_string(), e))
    }
}

/// Parsed CSV contents, header plus string cells.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvData {
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| HarnessError::MissingColumn("empty file".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
            .collect();
        Ok(CsvData { header, rows })
    }

    /// Index of a required column.
    pub fn column(&self, name: &str) -> Result<usize, HarnessError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::MissingColumn(name.to_string()))
    }

    pub fn floats(&self, name: &str) -> Result<Vec<f64>, HarnessError> {
        let idx = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .parse::<f64>()
                    .map_err(|_| HarnessError::MissingColumn(format!("unparsable {name}: {}", r[idx])))
            })
            .collect()
    }

    pub fn strings(&self, name: &str) -> Result<Vec<&str>, HarnessError> {
        let idx = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_roundtrips() {
        for v in [0.1, 1.0 / 3.0, 2.5e-17, -9.87654321e12, f64::MIN_POSITIVE] {
            let s = float17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(float17(0.0), "0");
    }

    #[test]
    fn table_roundtrip() {
        let mut t = CsvTable::new(&["n", "value"]);
        t.push_row(vec!["0".into(), float17(0.5)]);
        t.push_row(vec!["1".into(), float17(1.0 / 7.0)]);
        let parsed = CsvData::parse(&t.to_string()).unwrap();
        assert_eq!(parsed.header, vec!["n", "value"]);
        assert_eq!(parsed.floats("value").unwrap()[1], 1.0 / 7.0);
        assert!(parsed.column("missing").is_err());
    }
}
