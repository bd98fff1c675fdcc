use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::embedding::build_index;
use super::ItemId;
use crate::error::{Error, Result};

/// Symmetric tolerance accepted by [`DistanceMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Square, symmetric, nonnegative matrix with zero diagonal, aligned to `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<ItemId>,
    values: Vec<f64>,
    index: HashMap<ItemId, usize>,
}

impl DistanceMatrix {
    pub fn new(ids: Vec<ItemId>, values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::Dimension(format!(
                "{n} ids need {} matrix entries, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Invalid(format!(
                    "diagonal entry for {:?} is {}, expected 0",
                    ids[i].as_str(),
                    values[i * n + i]
                )));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Invalid(format!(
                        "entry ({:?}, {:?}) = {v} is not a finite nonnegative distance",
                        ids[i].as_str(),
                        ids[j].as_str()
                    )));
                }
                if j > i && (v - values[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::Invalid(format!(
                        "matrix is not symmetric at ({:?}, {:?}): {v} vs {}",
                        ids[i].as_str(),
                        ids[j].as_str(),
                        values[j * n + i]
                    )));
                }
            }
        }
        let index = build_index(&ids)?;
        Ok(DistanceMatrix { ids, values, index })
    }

    /// Builds a matrix from a function of the upper triangle; the lower triangle mirrors it.
    pub fn from_upper(ids: Vec<ItemId>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = ids.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        DistanceMatrix::new(ids, values)
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, id: &ItemId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require_index(&self, id: &ItemId) -> Result<usize> {
        self.index_of(id).ok_or_else(|| Error::UnknownId(id.as_str().to_owned()))
    }

    /// Applies `f` to every entry, keeping ids. The result is re-validated.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        DistanceMatrix::new(self.ids.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Header line of ids, then one comma-separated row per item.
    pub fn to_csv_string(&self) -> String {
        let n = self.len();
        let mut out = self.ids.iter().map(ItemId::as_str).collect::<Vec<_>>().join(",");
        out.push('\n');
        for i in 0..n {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(origin, Some(1), "empty file, expected id header"))?;
        let ids = header
            .split(',')
            .map(|s| ItemId::new(s.trim()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(origin, Some(1), e.to_string()))?;
        let n = ids.len();
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            let before = values.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::format(origin, Some(lineno), format!("cannot parse {field:?} as a number"))
                })?;
                values.push(v);
            }
            if values.len() - before != n {
                return Err(Error::format(
                    origin,
                    Some(lineno),
                    format!("row has {} values, header lists {n} ids", values.len() - before),
                ));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::format(origin, None, format!("{rows} rows for {n} ids")));
        }
        DistanceMatrix::new(ids, values).map_err(|e| Error::format(origin, None, e.to_string()))
    }
}
