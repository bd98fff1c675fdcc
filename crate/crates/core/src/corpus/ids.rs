use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque item identifier.
///
/// Ids are non-empty and may not contain commas, line breaks, or path
/// separators, so they can appear verbatim in CSV rows and asset URLs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Invalid("item id must be non-empty".into()));
        }
        if let Some(bad) = id.chars().find(|c| matches!(c, ',' | '/' | '\\') || c.is_control()) {
            return Err(Error::Invalid(format!("item id {id:?} contains forbidden character {bad:?}")));
        }
        Ok(ItemId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ItemId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        ItemId::new(value)
    }
}

impl From<ItemId> for String {
    fn from(id: ItemId) -> String {
        id.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ItemId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Builds ids `prefix0000`, `prefix0001`, ... zero-padded so they sort numerically.
pub fn sequential_ids(prefix: &str, n: usize) -> Vec<ItemId> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n)
        .map(|i| ItemId(format!("{prefix}{i:0width$}")))
        .collect()
}

/// Reads a newline-separated id list, ignoring blank lines.
pub fn read_id_list(path: &std::path::Path) -> Result<Vec<ItemId>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = std::collections::HashSet::new();
    let mut ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id = ItemId::new(line).map_err(|e| Error::format(path, Some(lineno + 1), e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::format(path, Some(lineno + 1), format!("duplicate id {line:?}")));
        }
        ids.push(id);
    }
    Ok(ids)
}

pub fn write_id_list(path: &std::path::Path, ids: &[ItemId]) -> Result<()> {
    let mut out = String::new();
    for id in ids {
        out.push_str(id.as_str());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_separators() {
        assert!(ItemId::new("").is_err());
        assert!(ItemId::new("a,b").is_err());
        assert!(ItemId::new("a/b").is_err());
        assert!(ItemId::new("a\nb").is_err());
        assert_eq!(ItemId::new("wound-7").unwrap().as_str(), "wound-7");
    }

    #[test]
    fn sequential_ids_sort_numerically() {
        let ids = sequential_ids("x", 1200);
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(ids[7].as_str(), "x0007");
    }
}
