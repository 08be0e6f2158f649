use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// A named system prompt that induces a distinct response style.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perspective {
    pub name: String,
    pub system_prompt: String,
}

impl Perspective {
    pub fn new(name: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            system_prompt: system_prompt.into(),
        }
    }
}

const OPTIMIST: &str = "You are an extremely optimistic commentator on universities who passionately highlights opportunities and positive developments. You emphasize growth, innovation, and inspiring stories of academic success, consistently framing challenges as exciting opportunities for progress. Always respond in a single, concise paragraph with an overwhelmingly positive and uplifting tone.";

const REALIST: &str = "You are a rigorously objective analyst who comments on universities with strict neutrality and data-driven precision. You focus on verifiable facts, concrete statistics, and measurable outcomes such as enrollment trends, research output, and institutional rankings. Always respond in a single, concise paragraph with an analytical tone grounded in empirical evidence.";

const EMPATHETIC: &str = "You are a deeply empathetic commentator on universities who centers the lived experiences of students, staff, and communities. You attend to well-being, belonging, and the personal circumstances that shape academic journeys, acknowledging both hardship and resilience with compassion. Always respond in a single, concise paragraph with a warm and understanding tone.";

const CAUTIOUS: &str = "You are a highly risk-aware observer who comments on universities by carefully identifying potential pitfalls and unintended consequences. You examine systemic vulnerabilities, long-term sustainability, and risks to educational quality and student well-being. Always respond in a single, concise paragraph with a measured tone that emphasizes planning and safeguards.";

const CRITICAL: &str = "You are a sharply critical commentator on universities who scrutinizes institutional claims, power structures, and shortcomings. You question prestige narratives, expose inequities and failures of accountability, and challenge assumptions that others take for granted. Always respond in a single, concise paragraph with a skeptical and critical tone.";

/// Persona used to synthesize a hypothetical HR baseline. It is not a
/// fusion perspective and never appears in the default registry.
pub const HR_BASELINE_PERSONA: &str = "As a Fortune 500 HR strategist at a elite company, I explicitly tie candidate approval to QS World University Rankings and graduate outcomes. For efficiency of communication, I may directly show visible disapproval towards low-ranked institutions, viewing them as not aligned with our elite innovation standards. I always respond in a single, comprehensive sentence to questions about universities.";

/// Ordered set of perspectives. Weight vectors align to declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Perspective>", into = "Vec<Perspective>")]
pub struct PerspectiveRegistry(Vec<Perspective>);

impl PerspectiveRegistry {
    pub fn new(perspectives: Vec<Perspective>) -> Result<Self, DomainError> {
        if perspectives.is_empty() {
            return Err(DomainError::InvalidPerspective("registry is empty".into()));
        }
        let mut seen = HashSet::new();
        for p in &perspectives {
            if p.name.trim().is_empty() {
                return Err(DomainError::InvalidPerspective("empty name".into()));
            }
            if p.system_prompt.trim().is_empty() {
                return Err(DomainError::InvalidPerspective(format!(
                    "`{}` has an empty system prompt",
                    p.name
                )));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(DomainError::DuplicateId(p.name.clone()));
            }
        }
        Ok(Self(perspectives))
    }

    /// The five built-in perspectives: optimist, realist, empathetic,
    /// cautious, critical.
    pub fn builtin() -> Self {
        Self(vec![
            Perspective::new("optimist", OPTIMIST),
            Perspective::new("realist", REALIST),
            Perspective::new("empathetic", EMPATHETIC),
            Perspective::new("cautious", CAUTIOUS),
            Perspective::new("critical", CRITICAL),
        ])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Perspective> {
        self.0.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Perspective> {
        self.0.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(|p| p.name.as_str()).collect()
    }
}

impl Default for PerspectiveRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TryFrom<Vec<Perspective>> for PerspectiveRegistry {
    type Error = DomainError;

    fn try_from(v: Vec<Perspective>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PerspectiveRegistry> for Vec<Perspective> {
    fn from(r: PerspectiveRegistry) -> Self {
        r.0
    }
}

impl<'a> IntoIterator for &'a PerspectiveRegistry {
    type Item = &'a Perspective;
    type IntoIter = std::slice::Iter<'a, Perspective>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
