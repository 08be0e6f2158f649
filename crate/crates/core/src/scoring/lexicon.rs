use std::collections::HashSet;
use std::path::Path;

use super::ScoringError;

/// Default word list, 200-odd terms per polarity.
pub const DEFAULT_LEXICON: &str = include_str!("../../lexicon/default.txt");

/// Positive and negative terms. Plain lines match whole tokens; a trailing
/// `*` makes the line a prefix stem.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    positive: HashSet<String>,
    negative: HashSet<String>,
    positive_stems: Vec<String>,
    negative_stems: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("shipped lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self, ScoringError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScoringError::Lexicon {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|message| ScoringError::Lexicon {
            path: path.display().to_string(),
            message,
        })
    }

    /// Parses the `#positive` / `#negative` sectioned format.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lexicon = Self::default();
        let mut section = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            match line.to_ascii_lowercase().as_str() {
                "#positive" => {
                    section = Some(Polarity::Positive);
                    continue;
                }
                "#negative" => {
                    section = Some(Polarity::Negative);
                    continue;
                }
                _ => {}
            }
            let Some(polarity) = section else {
                return Err(format!(
                    "line {}: term before any section header",
                    lineno + 1
                ));
            };
            let term = line.to_lowercase();
            let (exact, stems) = match polarity {
                Polarity::Positive => (&mut lexicon.positive, &mut lexicon.positive_stems),
                Polarity::Negative => (&mut lexicon.negative, &mut lexicon.negative_stems),
            };
            match term.strip_suffix('*') {
                Some(stem) if !stem.is_empty() => stems.push(stem.to_string()),
                Some(_) => return Err(format!("line {}: empty stem", lineno + 1)),
                None => {
                    exact.insert(term);
                }
            }
        }
        if lexicon.positive.is_empty() && lexicon.positive_stems.is_empty()
            || lexicon.negative.is_empty() && lexicon.negative_stems.is_empty()
        {
            return Err("both #positive and #negative sections need terms".into());
        }
        Ok(lexicon)
    }

    pub fn classify(&self, token: &str) -> Option<Polarity> {
        if self.positive.contains(token) {
            return Some(Polarity::Positive);
        }
        if self.negative.contains(token) {
            return Some(Polarity::Negative);
        }
        let longest = |stems: &[String]| {
            stems
                .iter()
                .filter(|s| token.starts_with(s.as_str()))
                .map(|s| s.len())
                .max()
                .unwrap_or(0)
        };
        let (p, n) = (longest(&self.positive_stems), longest(&self.negative_stems));
        match p.cmp(&n) {
            std::cmp::Ordering::Greater => Some(Polarity::Positive),
            std::cmp::Ordering::Less => Some(Polarity::Negative),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// `(positive_hits, negative_hits)` over the lowercase tokens of `text`.
    pub fn count_hits(&self, text: &str) -> (usize, usize) {
        let mut hits = (0, 0);
        for token in tokenize(text) {
            match self.classify(&token) {
                Some(Polarity::Positive) => hits.0 += 1,
                Some(Polarity::Negative) => hits.1 += 1,
                None => {}
            }
        }
        hits
    }
}

/// Lowercase tokens split on whitespace and punctuation. Inner hyphens and
/// apostrophes are kept so that `world-class` stays one token.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\'').to_lowercase())
        .filter(|t| !t.is_empty())
}
