//! Comparison prompts and answer parsing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingSet, ItemId};
use crate::error::{Error, Result};

pub const QUESTION: &str = "Is wound i more similar to wound j or to wound k?";

/// Placeholder specialist persona; replace it with wording suited to the corpus.
pub const DEFAULT_PERSONA: &str = "You are a dermatologist specializing in rare blistering skin \
diseases. You compare wounds by their clinical appearance as described in case reports.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDescription {
    pub id: ItemId,
    pub text: String,
}

impl CaseDescription {
    pub fn new(id: ItemId, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Invalid(format!("description of {id} is empty")));
        }
        Ok(CaseDescription { id, text })
    }
}

pub fn parse_descriptions(text: &str, origin: &Path) -> Result<Vec<CaseDescription>> {
    let mut out: Vec<CaseDescription> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: CaseDescription =
            serde_json::from_str(line).map_err(|e| Error::format(origin, Some(i + 1), e.to_string()))?;
        if d.text.trim().is_empty() {
            return Err(Error::format(origin, Some(i + 1), format!("description of {} is empty", d.id)));
        }
        if !seen.insert(d.id.clone()) {
            return Err(Error::format(origin, Some(i + 1), format!("duplicate item id {:?}", d.id.as_str())));
        }
        out.push(d);
    }
    Ok(out)
}

pub fn read_descriptions(path: &Path) -> Result<Vec<CaseDescription>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_descriptions(&text, path)
}

pub fn write_descriptions(path: &Path, descriptions: &[CaseDescription]) -> Result<()> {
    let mut out = String::new();
    for d in descriptions {
        out.push_str(&serde_json::to_string(d).expect("descriptions serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const PROFILE_TAG: &str = "Latent profile:";

/// Text descriptions that spell out each item's planted coordinates, so a mock
/// model can answer comparisons exactly.
pub fn synthetic_descriptions(latents: &EmbeddingSet) -> Vec<CaseDescription> {
    latents
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let coords: Vec<String> = latents.row(i).iter().map(|v| v.to_string()).collect();
            CaseDescription {
                id: id.clone(),
                text: format!("Synthetic case {id}. {PROFILE_TAG} [{}].", coords.join(", ")),
            }
        })
        .collect()
}

/// Coordinates embedded by [`synthetic_descriptions`], if present.
pub fn parse_profile(text: &str) -> Option<Vec<f64>> {
    let start = text.find(PROFILE_TAG)? + PROFILE_TAG.len();
    let rest = &text[start..];
    let open = rest.find('[')?;
    let close = rest.find(']')?;
    rest[open + 1..close]
        .split(',')
        .map(|v| v.trim().parse().ok())
        .collect()
}

/// System and user messages of one comparison query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// The single string both messages hash to.
    pub fn cache_text(&self) -> String {
        format!("{}\0{}", self.system, self.user)
    }
}

pub fn build_prompt(anchor: &CaseDescription, ref_j: &CaseDescription, ref_k: &CaseDescription, persona: &str) -> Prompt {
    let user = format!(
        "Case i:\n{}\n\nCase j:\n{}\n\nCase k:\n{}\n\n{QUESTION}\nAnswer with a single token: j or k.",
        anchor.text.trim(),
        ref_j.text.trim(),
        ref_k.text.trim()
    );
    Prompt {
        system: persona.to_string(),
        user,
    }
}

/// Splits a user message from [`build_prompt`] back into its three case texts.
pub fn prompt_cases(user: &str) -> Option<[&str; 3]> {
    let i = user.find("Case i:\n")? + 8;
    let j = user.find("\n\nCase j:\n")?;
    let k = user.find("\n\nCase k:\n")?;
    let q = user.find(&format!("\n\n{QUESTION}"))?;
    if !(i <= j && j < k && k < q) {
        return None;
    }
    Some([&user[i..j], &user[j + 10..k], &user[k + 10..q]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Left,
    Right,
    Unparseable,
}

/// Finds standalone `j` / `k` tokens (which also covers "wound j" / "wound k"),
/// ignoring case. Exactly one distinct answer is accepted.
pub fn parse_choice(response: &str) -> Answer {
    let mut j = false;
    let mut k = false;
    for token in response.split(|c: char| !c.is_alphanumeric()) {
        match token {
            "j" | "J" => j = true,
            "k" | "K" => k = true,
            _ => {}
        }
    }
    match (j, k) {
        (true, false) => Answer::Left,
        (false, true) => Answer::Right,
        _ => Answer::Unparseable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str, text: &str) -> CaseDescription {
        CaseDescription::new(ItemId::new(id).unwrap(), text).unwrap()
    }

    #[test]
    fn parse_rules() {
        assert_eq!(parse_choice("Answer: j"), Answer::Left);
        assert_eq!(parse_choice("it resembles wound k more"), Answer::Right);
        assert_eq!(parse_choice("both are similar"), Answer::Unparseable);
        assert_eq!(parse_choice("J"), Answer::Left);
        assert_eq!(parse_choice("Wound K."), Answer::Right);
        assert_eq!(parse_choice("j or k"), Answer::Unparseable);
        assert_eq!(parse_choice("jk"), Answer::Unparseable);
        assert_eq!(parse_choice(""), Answer::Unparseable);
    }

    #[test]
    fn prompt_template() {
        let (a, b, c) = (case("a", "blister on the shin"), case("b", "erosion"), case("c", "scar"));
        let p = build_prompt(&a, &b, &c, "persona");
        assert_eq!(p.system, "persona");
        for s in ["blister on the shin", "erosion", "scar", QUESTION] {
            assert!(p.user.contains(s));
        }
        assert_eq!(p, build_prompt(&a, &b, &c, "persona"));
        let swapped = build_prompt(&a, &c, &b, "persona");
        assert_eq!(prompt_cases(&p.user).unwrap(), ["blister on the shin", "erosion", "scar"]);
        assert_eq!(prompt_cases(&swapped.user).unwrap(), ["blister on the shin", "scar", "erosion"]);
        assert_eq!(p.user.replace("erosion", "#").replace("scar", "erosion").replace('#', "scar"), swapped.user);
    }

    #[test]
    fn profile_round_trip() {
        let ids = vec![ItemId::new("p").unwrap()];
        let e = EmbeddingSet::new(ids, 3, vec![0.1, -2.5e-7, 3.0]).unwrap();
        let d = synthetic_descriptions(&e);
        assert_eq!(parse_profile(&d[0].text).unwrap(), vec![0.1, -2.5e-7, 3.0]);
        assert_eq!(parse_profile("no tag"), None);
    }

    #[test]
    fn descriptions_jsonl() {
        let text = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        let err = parse_descriptions(text, Path::new("d.jsonl")).unwrap_err();
        assert!(err.to_string().contains("d.jsonl:2"));
        assert!(parse_descriptions("{\"id\":\"a\",\"text\":\" \"}", Path::new("d")).is_err());
    }
}
