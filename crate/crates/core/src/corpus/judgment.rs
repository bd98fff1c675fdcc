use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::ItemId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Right,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Oracle,
    Synthetic,
}

/// One ordinal statement: `anchor` is closer to the chosen reference than to the other one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJudgment")]
pub struct TripletJudgment {
    pub anchor: ItemId,
    pub left: ItemId,
    pub right: ItemId,
    pub choice: Choice,
    pub source: Source,
    pub annotator: Option<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Deserialize)]
struct RawJudgment {
    anchor: ItemId,
    left: ItemId,
    right: ItemId,
    choice: Choice,
    source: Source,
    #[serde(default)]
    annotator: Option<String>,
    created_at: DateTime<Utc>,
}

impl TryFrom<RawJudgment> for TripletJudgment {
    type Error = Error;

    fn try_from(r: RawJudgment) -> Result<Self> {
        TripletJudgment::new(r.anchor, r.left, r.right, r.choice, r.source, r.annotator, r.created_at)
    }
}

/// Fixed timestamp stamped on generated records so seeded outputs are byte-stable.
pub fn synthetic_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

impl TripletJudgment {
    pub fn new(
        anchor: ItemId,
        left: ItemId,
        right: ItemId,
        choice: Choice,
        source: Source,
        annotator: Option<String>,
        created_at: DateTime<Utc>,
    ) -> Result<Self> {
        if anchor == left || anchor == right || left == right {
            return Err(Error::Invalid(format!(
                "triplet ids must be pairwise distinct, got ({anchor}, {left}, {right})"
            )));
        }
        Ok(TripletJudgment {
            anchor,
            left,
            right,
            choice,
            source,
            annotator,
            created_at,
        })
    }

    /// The reference the judge picked, or `None` when skipped.
    pub fn chosen(&self) -> Option<&ItemId> {
        match self.choice {
            Choice::Left => Some(&self.left),
            Choice::Right => Some(&self.right),
            Choice::Skipped => None,
        }
    }

    pub fn unchosen(&self) -> Option<&ItemId> {
        match self.choice {
            Choice::Left => Some(&self.right),
            Choice::Right => Some(&self.left),
            Choice::Skipped => None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("judgment serializes")
    }
}

pub fn judgments_to_jsonl(judgments: &[TripletJudgment]) -> String {
    let mut out = String::new();
    for j in judgments {
        out.push_str(&j.to_json_line());
        out.push('\n');
    }
    out
}

pub fn parse_judgments(text: &str, origin: &Path) -> Result<Vec<TripletJudgment>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::format(origin, Some(i + 1), e.to_string()))
        })
        .collect()
}

pub fn read_judgments(path: &Path) -> Result<Vec<TripletJudgment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_judgments(&text, path)
}

pub fn write_judgments(path: &Path, judgments: &[TripletJudgment]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(judgments_to_jsonl(judgments).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    #[test]
    fn json_line_has_expected_keys_in_order() {
        let j = TripletJudgment::new(
            id("a"),
            id("b"),
            id("c"),
            Choice::Left,
            Source::Human,
            Some("dr".into()),
            synthetic_epoch(),
        )
        .unwrap();
        assert_eq!(
            j.to_json_line(),
            r#"{"anchor":"a","left":"b","right":"c","choice":"left","source":"human","annotator":"dr","created_at":"2024-01-01T00:00:00Z"}"#
        );
    }

    #[test]
    fn rejects_repeated_ids_on_parse() {
        let line = r#"{"anchor":"a","left":"a","right":"c","choice":"left","source":"human","annotator":null,"created_at":"2024-01-01T00:00:00Z"}"#;
        let err = parse_judgments(line, Path::new("t.jsonl")).unwrap_err().to_string();
        assert!(err.contains("t.jsonl:1"), "{err}");
    }

    #[test]
    fn chosen_and_unchosen() {
        let j = TripletJudgment::new(id("a"), id("b"), id("c"), Choice::Right, Source::Oracle, None, synthetic_epoch())
            .unwrap();
        assert_eq!(j.chosen(), Some(&id("c")));
        assert_eq!(j.unchosen(), Some(&id("b")));
    }
}
