use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{DomainError, Perspective, PerspectiveRegistry, ScoreRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Decomposition,
    Validation,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Decomposition, Split::Validation];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Decomposition => "decomposition",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub concept: String,
    pub text: String,
    pub split: Split,
}

/// Unvalidated benchmark with explicit questions, as read from disk after
/// template expansion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perspectives: Option<Vec<Perspective>>,
    pub concepts: Vec<String>,
    pub questions: Vec<Question>,
    #[serde(default)]
    pub baseline_responses: BTreeMap<String, String>,
    /// perspective name -> question id -> response text
    #[serde(default)]
    pub perspective_responses: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_range: Option<ScoreRange>,
}

/// Validated benchmark. Concepts and questions are sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    perspectives: PerspectiveRegistry,
    concepts: Vec<String>,
    questions: Vec<Question>,
    baseline_responses: BTreeMap<String, String>,
    perspective_responses: BTreeMap<String, BTreeMap<String, String>>,
    score_range: Option<ScoreRange>,
    index: HashMap<String, usize>,
}

pub fn validate_benchmark(doc: BenchmarkDocument) -> Result<Benchmark, DomainError> {
    let perspectives = match doc.perspectives {
        Some(list) => PerspectiveRegistry::new(list)?,
        None => PerspectiveRegistry::builtin(),
    };
    if doc.questions.is_empty() {
        return Err(DomainError::EmptyQuestionSet);
    }

    let mut concepts = BTreeSet::new();
    for c in doc.concepts {
        if !concepts.insert(c.clone()) {
            return Err(DomainError::DuplicateId(c));
        }
    }

    let mut questions = doc.questions;
    questions.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in questions.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(DomainError::DuplicateId(pair[0].id.clone()));
        }
    }
    for q in &questions {
        if !concepts.contains(&q.concept) {
            return Err(DomainError::UnknownConcept {
                question: q.id.clone(),
                concept: q.concept.clone(),
            });
        }
    }
    let index: HashMap<String, usize> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.clone(), i))
        .collect();

    if let Some(id) = doc
        .baseline_responses
        .keys()
        .find(|id| !index.contains_key(*id))
    {
        return Err(DomainError::UnknownQuestion(id.clone()));
    }
    for (name, responses) in &doc.perspective_responses {
        if perspectives.index_of(name).is_none() {
            return Err(DomainError::UnknownPerspective(name.clone()));
        }
        if let Some(id) = responses.keys().find(|id| !index.contains_key(*id)) {
            return Err(DomainError::UnknownQuestion(id.clone()));
        }
    }

    Ok(Benchmark {
        perspectives,
        concepts: concepts.into_iter().collect(),
        questions,
        baseline_responses: doc.baseline_responses,
        perspective_responses: doc.perspective_responses,
        score_range: doc.score_range,
        index,
    })
}

impl Benchmark {
    pub fn perspectives(&self) -> &PerspectiveRegistry {
        &self.perspectives
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.index.get(id).map(|&i| &self.questions[i])
    }

    pub fn questions_in(&self, split: Split) -> impl Iterator<Item = &Question> {
        self.questions.iter().filter(move |q| q.split == split)
    }

    pub fn questions_for<'a>(
        &'a self,
        concept: &'a str,
        split: Split,
    ) -> impl Iterator<Item = &'a Question> {
        self.questions
            .iter()
            .filter(move |q| q.split == split && q.concept == concept)
    }

    pub fn baseline_response(&self, question_id: &str) -> Option<&str> {
        self.baseline_responses.get(question_id).map(String::as_str)
    }

    pub fn perspective_response(&self, perspective: &str, question_id: &str) -> Option<&str> {
        self.perspective_responses
            .get(perspective)
            .and_then(|m| m.get(question_id))
            .map(String::as_str)
    }

    pub fn score_range(&self) -> Option<ScoreRange> {
        self.score_range
    }

    /// Converts back to the serializable document form.
    pub fn to_document(&self) -> BenchmarkDocument {
        BenchmarkDocument {
            perspectives: Some(self.perspectives.iter().cloned().collect()),
            concepts: self.concepts.clone(),
            questions: self.questions.clone(),
            baseline_responses: self.baseline_responses.clone(),
            perspective_responses: self.perspective_responses.clone(),
            score_range: self.score_range,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, concept: &str, split: Split) -> Question {
        Question {
            id: id.into(),
            concept: concept.into(),
            text: format!("question {id}"),
            split,
        }
    }

    fn doc() -> BenchmarkDocument {
        BenchmarkDocument {
            concepts: vec!["B".into(), "A".into()],
            questions: vec![
                q("q4", "B", Split::Validation),
                q("q1", "A", Split::Decomposition),
                q("q3", "B", Split::Decomposition),
                q("q2", "A", Split::Validation),
            ],
            ..Default::default()
        }
    }

    #[test]
    fn well_formed_document_validates_in_sorted_order() {
        let b = validate_benchmark(doc()).unwrap();
        assert_eq!(b.questions().len(), 4);
        assert_eq!(b.concepts(), ["A", "B"]);
        let ids: Vec<_> = b.questions().iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3", "q4"]);
        assert_eq!(b.questions_for("B", Split::Decomposition).count(), 1);
        assert_eq!(b.perspectives().len(), 5);
    }

    #[test]
    fn validation_is_order_independent() {
        let mut shuffled = doc();
        shuffled.questions.reverse();
        shuffled.concepts.reverse();
        assert_eq!(
            validate_benchmark(doc()).unwrap(),
            validate_benchmark(shuffled).unwrap()
        );
    }

    #[test]
    fn unknown_concept_is_rejected() {
        let mut d = doc();
        d.questions.push(q("q5", "C", Split::Decomposition));
        let err = validate_benchmark(d).unwrap_err();
        assert!(err.to_string().contains("unknown concept"));
    }

    #[test]
    fn duplicate_question_is_rejected() {
        let mut d = doc();
        d.questions.push(q("q1", "A", Split::Validation));
        let err = validate_benchmark(d).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn response_maps_must_reference_declared_entities() {
        let mut d = doc();
        d.perspective_responses
            .entry("pundit".into())
            .or_default()
            .insert("q1".into(), "x".into());
        assert_eq!(
            validate_benchmark(d).unwrap_err(),
            DomainError::UnknownPerspective("pundit".into())
        );

        let mut d = doc();
        d.baseline_responses.insert("q9".into(), "x".into());
        assert_eq!(
            validate_benchmark(d).unwrap_err(),
            DomainError::UnknownQuestion("q9".into())
        );
    }

    #[test]
    fn empty_question_set_is_rejected() {
        let d = BenchmarkDocument {
            concepts: vec!["A".into()],
            ..Default::default()
        };
        assert_eq!(
            validate_benchmark(d).unwrap_err(),
            DomainError::EmptyQuestionSet
        );
    }
}
