//! The finite item universe and triplet datasets over it.
//!
//! Contexts and responses share one item set: `m` vectors in `d` dimensions.
//! A triplet `(context_id, pos_id, neg_id)` records one observed comparison.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// The shared context/response universe: `m` real vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSet {
    items: Array2<f64>,
}

impl ItemSet {
    pub fn new(items: Array2<f64>) -> Result<Self> {
        if items.nrows() < 2 {
            return Err(Error::invalid("item set needs m >= 2"));
        }
        if items.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("item coordinates must be finite"));
        }
        Ok(Self { items })
    }

    /// `m` standard-normal vectors in `d` dimensions, deterministic in `seed`.
    pub fn gaussian(m: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream_tagged(seed, "items", &[]);
        let mut items = Array2::zeros((m, d));
        for mut row in items.rows_mut() {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        Self::new(items)
    }

    pub fn m(&self) -> usize {
        self.items.nrows()
    }

    pub fn d(&self) -> usize {
        self.items.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.items
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.items.row(i)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = self.items.rows().into_iter().map(|r| r.to_vec()).collect();
        serde_json::json!({ "m": self.m(), "d": self.d(), "items": rows })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            m: usize,
            d: usize,
            items: Vec<Vec<f64>>,
        }
        let raw: Raw = serde_json::from_value(value.clone())?;
        if raw.items.len() != raw.m || raw.items.iter().any(|r| r.len() != raw.d) {
            return Err(Error::invalid("item matrix shape does not match (m, d)"));
        }
        let flat: Vec<f64> = raw.items.into_iter().flatten().collect();
        let items = Array2::from_shape_vec((raw.m, raw.d), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(items)
    }
}

/// One oriented comparison: `pos_id` beat `neg_id` in context `context_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub context_id: usize,
    pub pos_id: usize,
    pub neg_id: usize,
}

impl Triplet {
    pub fn new(context_id: usize, pos_id: usize, neg_id: usize) -> Self {
        Self {
            context_id,
            pos_id,
            neg_id,
        }
    }
}

/// A finite sample of triplets plus the provenance needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletDataset {
    pub triplets: Vec<Triplet>,
    pub item_set_ref: String,
    pub seed: u64,
}

impl TripletDataset {
    pub fn new(triplets: Vec<Triplet>, item_set_ref: impl Into<String>, seed: u64) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::invalid("dataset must be nonempty"));
        }
        if triplets.iter().any(|t| t.pos_id == t.neg_id) {
            return Err(Error::invalid("tied triplet (pos_id == neg_id)"));
        }
        Ok(Self {
            triplets,
            item_set_ref: item_set_ref.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Check that every index lies in `[0, m)`.
    pub fn validate_against(&self, m: usize) -> Result<()> {
        for (row, t) in self.triplets.iter().enumerate() {
            if t.context_id >= m || t.pos_id >= m || t.neg_id >= m {
                return Err(Error::invalid(format!(
                    "triplet {row} has an index out of range for m = {m}"
                )));
            }
        }
        Ok(())
    }

    /// Write as CSV with header `context_id,pos_id,neg_id`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "context_id,pos_id,neg_id")?;
        for t in &self.triplets {
            writeln!(w, "{},{},{}", t.context_id, t.pos_id, t.neg_id)?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read the CSV format written by [`TripletDataset::write_csv`].
    pub fn read_csv<R: std::io::Read>(reader: R, item_set_ref: &str) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty triplet CSV".into()))??;
        if header.trim() != "context_id,pos_id,neg_id" {
            return Err(Error::Parse(format!("unexpected header: {header}")));
        }
        let mut triplets = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = || -> Result<usize> {
                fields
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: too few fields", lineno + 2)))?
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
            };
            triplets.push(Triplet::new(next()?, next()?, next()?));
        }
        Self::new(triplets, item_set_ref, 0)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, &label)
    }
}
