use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{DistanceMatrix, ItemId};
use crate::error::{Error, Result};

/// `n` items with `dim` real coordinates each, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<ItemId>,
    dim: usize,
    coords: Vec<f64>,
    index: HashMap<ItemId, usize>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<ItemId>, dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        if coords.len() != ids.len() * dim {
            return Err(Error::Dimension(format!(
                "{} ids x dim {dim} needs {} coordinates, got {}",
                ids.len(),
                ids.len() * dim,
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite coordinate for item {:?}",
                ids[pos / dim].as_str()
            )));
        }
        let index = build_index(&ids)?;
        Ok(EmbeddingSet { ids, dim, coords, index })
    }

    /// Builds a set from one coordinate vector per item.
    pub fn from_rows(ids: Vec<ItemId>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} values, expected {dim}",
                rows[bad].len()
            )));
        }
        EmbeddingSet::new(ids, dim, rows.concat())
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &ItemId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Writes the `id,dim=<d>` text format with round-trip float formatting.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("id,dim={}\n", self.dim);
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id.as_str());
            for v in self.row(i) {
                let _ = write!(out, ",{v}");
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

    /// Parses the embedding CSV format; `origin` is only used in diagnostics.
    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(origin, Some(1), "empty file, expected header `id,dim=<d>`"))?;
        let dim = parse_header(header).ok_or_else(|| {
            Error::format(origin, Some(1), format!("malformed header {header:?}, expected `id,dim=<d>`"))
        })?;
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut seen = HashMap::new();
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id_field = fields.next().unwrap_or_default();
            let id = ItemId::new(id_field).map_err(|e| Error::format(origin, Some(lineno), e.to_string()))?;
            if let Some(first) = seen.insert(id.clone(), lineno) {
                return Err(Error::format(
                    origin,
                    Some(lineno),
                    format!("duplicate id {:?} (first seen on line {first})", id.as_str()),
                ));
            }
            let before = coords.len();
            for field in fields {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::format(origin, Some(lineno), format!("cannot parse {field:?} as a number"))
                })?;
                if !v.is_finite() {
                    return Err(Error::format(origin, Some(lineno), format!("non-finite value {field:?}")));
                }
                coords.push(v);
            }
            let got = coords.len() - before;
            if got != dim {
                return Err(Error::format(
                    origin,
                    Some(lineno),
                    format!("row {:?} has {got} values, header declares dim={dim}", id.as_str()),
                ));
            }
            ids.push(id);
        }
        EmbeddingSet::new(ids, dim, coords)
    }
}

fn parse_header(header: &str) -> Option<usize> {
    let rest = header.trim().strip_prefix("id,dim=")?;
    rest.parse().ok().filter(|&d| d > 0)
}

/// True when the first line of `text` is an embedding header rather than a distance header.
pub fn looks_like_embedding(text: &str) -> bool {
    text.lines().next().and_then(parse_header).is_some()
}

pub(crate) fn build_index(ids: &[ItemId]) -> Result<HashMap<ItemId, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::DuplicateId(id.as_str().to_owned()));
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(x, y)`; zero vectors are rejected.
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric {other:?} (euclidean|cosine)"))),
        }
    }
}

pub fn pairwise_distances(emb: &EmbeddingSet, metric: Metric) -> Result<DistanceMatrix> {
    let n = emb.len();
    if n < 2 {
        return Err(Error::Invalid(format!("pairwise distances need at least 2 items, got {n}")));
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(emb.row(i))).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::Invalid(format!(
                "item {:?} has a zero-norm vector, cosine distance is undefined",
                emb.ids()[i].as_str()
            )));
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (emb.row(i), emb.row(j));
            let d = match metric {
                Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
                Metric::Cosine => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    (1.0 - dot / (norms[i] * norms[j])).max(0.0)
                }
            };
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DistanceMatrix::new(emb.ids().to_vec(), values)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
