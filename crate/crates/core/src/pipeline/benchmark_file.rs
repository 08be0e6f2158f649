//! Benchmark files and counterfactual question expansion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_benchmark, Benchmark, BenchmarkDocument, Perspective, Question, ScoreRange, Split,
};

use super::{from_artifact_str, PipelineError, Stage};

pub const DEFAULT_PLACEHOLDER: &str = "X-University";

/// A question with a placeholder standing in for the concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionTemplate {
    pub id: String,
    pub text: String,
    pub split: Split,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExpansionError {
    #[error("template `{template}` does not contain the placeholder `{placeholder}`")]
    MissingPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("expansion produced duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("no concepts to expand templates over")]
    NoConcepts,
    #[error("placeholder must not be empty")]
    EmptyPlaceholder,
}

/// Instantiates every template once per concept. Ids are
/// `template_id::concept`; every placeholder occurrence is replaced by the
/// concept verbatim and the split is inherited from the template. Output
/// is ordered template-major, concepts in the given order.
pub fn expand_counterfactual(
    templates: &[QuestionTemplate],
    concepts: &[String],
    placeholder: &str,
) -> Result<Vec<Question>, ExpansionError> {
    if placeholder.is_empty() {
        return Err(ExpansionError::EmptyPlaceholder);
    }
    if concepts.is_empty() {
        return Err(ExpansionError::NoConcepts);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(templates.len() * concepts.len());
    for t in templates {
        if !t.text.contains(placeholder) {
            return Err(ExpansionError::MissingPlaceholder {
                template: t.id.clone(),
                placeholder: placeholder.to_string(),
            });
        }
        for concept in concepts {
            let id = format!("{}::{}", t.id, concept);
            if !seen.insert(id.clone()) {
                return Err(ExpansionError::DuplicateId(id));
            }
            out.push(Question {
                id,
                concept: concept.clone(),
                text: t.text.replace(placeholder, concept),
                split: t.split,
            });
        }
    }
    Ok(out)
}

fn default_placeholder() -> String {
    DEFAULT_PLACEHOLDER.to_string()
}

fn is_default_placeholder(p: &String) -> bool {
    p == DEFAULT_PLACEHOLDER
}

/// On-disk benchmark: explicit questions, templates expanded over the
/// concepts, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perspectives: Option<Vec<Perspective>>,
    pub concepts: Vec<String>,
    #[serde(
        default = "default_placeholder",
        skip_serializing_if = "is_default_placeholder"
    )]
    pub placeholder: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub templates: Vec<QuestionTemplate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions: Vec<Question>,
    #[serde(default)]
    pub baseline_responses: BTreeMap<String, String>,
    /// perspective name -> question id -> response text
    #[serde(default)]
    pub perspective_responses: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_range: Option<ScoreRange>,
}

impl BenchmarkFile {
    /// Expands templates and returns a document with explicit questions.
    pub fn expand(self) -> Result<BenchmarkDocument, ExpansionError> {
        let mut questions = self.questions;
        if !self.templates.is_empty() {
            questions.extend(expand_counterfactual(
                &self.templates,
                &self.concepts,
                &self.placeholder,
            )?);
        }
        Ok(BenchmarkDocument {
            perspectives: self.perspectives,
            concepts: self.concepts,
            questions,
            baseline_responses: self.baseline_responses,
            perspective_responses: self.perspective_responses,
            score_range: self.score_range,
        })
    }

    pub fn into_benchmark(self) -> Result<Benchmark, PipelineError> {
        let doc = self
            .expand()
            .map_err(|e| PipelineError::validation(Stage::Expand, e))?;
        validate_benchmark(doc).map_err(|e| PipelineError::validation(Stage::Load, e))
    }
}

pub fn load_benchmark_file(path: &Path) -> Result<BenchmarkFile, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::read(path, e))?;
    from_artifact_str("benchmark", &text).map_err(|e| {
        PipelineError::validation(Stage::Load, format!("{}: {}", path.display(), e.message))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(id: &str, text: &str) -> QuestionTemplate {
        QuestionTemplate {
            id: id.into(),
            text: text.into(),
            split: Split::Validation,
        }
    }

    #[test]
    fn substitutes_every_occurrence_verbatim() {
        let t = [template(
            "t1",
            "Tell me about X-University. Is X-University good?",
        )];
        let qs = expand_counterfactual(&t, &["ETH Zurich".into()], DEFAULT_PLACEHOLDER).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].text, "Tell me about ETH Zurich. Is ETH Zurich good?");
        assert_eq!(qs[0].id, "t1::ETH Zurich");
        assert_eq!(qs[0].split, Split::Validation);
        assert_eq!(qs[0].concept, "ETH Zurich");
    }

    #[test]
    fn one_template_per_concept() {
        let concepts: Vec<String> = (0..30).map(|i| format!("U{i}")).collect();
        let qs = expand_counterfactual(
            &[template("t", "About X-University.")],
            &concepts,
            DEFAULT_PLACEHOLDER,
        )
        .unwrap();
        assert_eq!(qs.len(), 30);
    }

    #[test]
    fn expansion_errors() {
        assert_eq!(
            expand_counterfactual(
                &[template("t", "No token.")],
                &["A".into()],
                DEFAULT_PLACEHOLDER
            ),
            Err(ExpansionError::MissingPlaceholder {
                template: "t".into(),
                placeholder: DEFAULT_PLACEHOLDER.into()
            })
        );
        assert_eq!(
            expand_counterfactual(&[template("t", "X-University")], &[], DEFAULT_PLACEHOLDER),
            Err(ExpansionError::NoConcepts)
        );
        let dup = [
            template("t", "X-University"),
            template("t", "X-University?"),
        ];
        assert_eq!(
            expand_counterfactual(&dup, &["A".into()], DEFAULT_PLACEHOLDER),
            Err(ExpansionError::DuplicateId("t::A".into()))
        );
    }

    #[test]
    fn custom_placeholder() {
        let qs =
            expand_counterfactual(&[template("t", "How is {U}?")], &["MIT".into()], "{U}").unwrap();
        assert_eq!(qs[0].text, "How is MIT?");
    }
}
