//! Comma-separated input with a mandatory header row.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use nalgebra::{DMatrix, DVector};

pub struct CsvDataset {
    pub headers: Vec<String>,
    records: Vec<Vec<String>>,
}

impl CsvDataset {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.with_context(|| format!("{} record {}", path.display(), i + 1))?;
            records.push(rec.iter().map(|f| f.trim().to_string()).collect());
        }
        if records.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(Self { headers, records })
    }

    pub fn rows(&self) -> usize {
        self.records.len()
    }

    fn index(&self, name: &str) -> anyhow::Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column named {name:?}"))
    }

    pub fn column(&self, name: &str) -> anyhow::Result<DVector<f64>> {
        let j = self.index(name)?;
        let mut v = Vec::with_capacity(self.rows());
        for (i, r) in self.records.iter().enumerate() {
            let x: f64 = r[j].parse().with_context(|| format!("row {} column {name:?}: {:?} is not a number", i + 1, r[j]))?;
            if !x.is_finite() {
                bail!("row {} column {name:?} is not finite", i + 1);
            }
            v.push(x);
        }
        Ok(DVector::from_vec(v))
    }

    /// Named columns, or every column when `names` is empty.
    pub fn matrix(&self, names: &[String]) -> anyhow::Result<DMatrix<f64>> {
        let names: Vec<String> = if names.is_empty() { self.headers.clone() } else { names.to_vec() };
        let cols = names.iter().map(|n| self.column(n)).collect::<anyhow::Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// Raw strings of a label column.
    pub fn labels(&self, name: &str) -> anyhow::Result<Vec<String>> {
        let j = self.index(name)?;
        Ok(self.records.iter().map(|r| r[j].clone()).collect())
    }

    /// Intercept column followed by the named covariates.
    pub fn design(&self, covariates: &[String]) -> anyhow::Result<DMatrix<f64>> {
        let mut x = DMatrix::from_element(self.rows(), covariates.len() + 1, 1.0);
        for (j, c) in covariates.iter().enumerate() {
            x.set_column(j + 1, &self.column(c)?);
        }
        Ok(x)
    }
}
