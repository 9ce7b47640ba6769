use sha2::{Digest, Sha256};

use super::{Choice, OracleChoice, UserQueryText};
use crate::datasets::ItemMeta;
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str = "A user bought the following products, most recent last: \
{history}. Which new product would this user prefer to buy next? Answer with exactly 'A' or \
'B'.\nA: {A}\nB: {B}";

const PLACEHOLDERS: [&str; 3] = ["{history}", "{A}", "{B}"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    /// Hex SHA-256 over the user id and the rendered text.
    pub digest: String,
}

/// Substitutes `{history}`, `{A}` and `{B}` in one pass, so placeholder-like
/// text inside titles is left alone.
pub fn build_prompt(
    query: &UserQueryText,
    a: &ItemMeta,
    b: &ItemMeta,
    template: &str,
) -> Result<Prompt> {
    for p in PLACEHOLDERS {
        if !template.contains(p) {
            return Err(Error::Config(format!("prompt template is missing {p}")));
        }
    }
    let history = query
        .history_titles
        .iter()
        .enumerate()
        .map(|(n, t)| format!("{}. {t}", n + 1))
        .collect::<Vec<_>>()
        .join("; ");
    let values = [history, a.describe(), b.describe()];

    let mut text = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        text.push_str(&rest[..start]);
        let tail = &rest[start..];
        match PLACEHOLDERS.iter().position(|p| tail.starts_with(p)) {
            Some(k) => {
                text.push_str(&values[k]);
                rest = &tail[PLACEHOLDERS[k].len()..];
            }
            None => {
                text.push('{');
                rest = &tail[1..];
            }
        }
    }
    text.push_str(rest);

    let mut h = Sha256::new();
    h.update(query.user_id.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    let digest = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(Prompt { text, digest })
}

/// Reads an oracle's free-text answer. A lone `A` or `B` token on the first
/// non-empty line wins; otherwise exactly one candidate title must appear in
/// the response. Anything else abstains.
pub fn parse_choice(response: &str, a: &ItemMeta, b: &ItemMeta) -> OracleChoice {
    let choice = parse_value(response, a, b);
    OracleChoice {
        raw_response: Some(response.to_string()),
        ..OracleChoice::of(choice)
    }
}

fn parse_value(response: &str, a: &ItemMeta, b: &ItemMeta) -> Choice {
    if let Some(line) = response.lines().find(|l| !l.trim().is_empty()) {
        let mut has = (false, false);
        for tok in line.split(|c: char| !c.is_alphanumeric()) {
            match tok {
                "A" | "a" => has.0 = true,
                "B" | "b" => has.1 = true,
                _ => {}
            }
        }
        match has {
            (true, false) => return Choice::A,
            (false, true) => return Choice::B,
            (true, true) => return Choice::Abstain,
            _ => {}
        }
    }
    let lower = response.to_lowercase();
    let contains = |m: &ItemMeta| {
        let t = m.display_title().trim().to_lowercase();
        !t.is_empty() && lower.contains(&t)
    };
    match (contains(a), contains(b)) {
        (true, false) => Choice::A,
        (false, true) => Choice::B,
        _ => Choice::Abstain,
    }
}
