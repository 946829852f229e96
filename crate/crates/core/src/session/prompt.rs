use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusChapter, CorpusError, CorpusIndex};

pub const INSTRUCTIONS_HEADER: &str = "## Instructions";
pub const PROBLEM_HEADER: &str = "## Problem";
pub const ALGORITHM_HEADER: &str = "## Your algorithm";
pub const REFERENCE_HEADER: &str = "## Reference material";

/// The sentence every default prompt carries.
pub const CPP_DIRECTIVE: &str = "Write a complete C++ solution";

const DEFAULT_INSTRUCTIONS: &str = "You are helping an experienced competitive programmer implement a \
solution to an olympiad problem. The programmer has already designed the algorithm. \
Write a complete C++ solution that reads from standard input and writes to standard output, \
following the described algorithm when one is given. Use the reference material where it helps. \
Return the full program in a single ```cpp code block.";

/// Instruction text placed under the `## Instructions` header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptTemplate {
    pub instructions: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instructions: DEFAULT_INSTRUCTIONS.to_string(),
        }
    }
}

/// Everything that goes into a starting prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub instructions: String,
    pub problem_text: String,
    pub algorithm_description: Option<String>,
    pub references: Vec<CorpusChapter>,
}

impl PromptBundle {
    /// Resolves `aliases` in order. Blank algorithm text counts as absent.
    pub fn assemble(
        template: &PromptTemplate,
        problem_text: &str,
        algorithm_description: Option<&str>,
        aliases: &[String],
        index: &CorpusIndex,
    ) -> Result<Self, CorpusError> {
        let references = aliases
            .iter()
            .map(|a| index.resolve_alias(a).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            instructions: template.instructions.clone(),
            problem_text: problem_text.to_string(),
            algorithm_description: algorithm_description
                .filter(|a| !a.trim().is_empty())
                .map(str::to_string),
            references,
        })
    }

    /// Renders the bundle as one user message. Sections appear in fixed
    /// order and empty optional sections are left out entirely.
    pub fn render(&self) -> String {
        let mut sections = vec![
            format!("{INSTRUCTIONS_HEADER}\n{}", self.instructions.trim_end()),
            format!("{PROBLEM_HEADER}\n{}", self.problem_text.trim_end()),
        ];
        if let Some(algo) = &self.algorithm_description {
            sections.push(format!("{ALGORITHM_HEADER}\n{}", algo.trim_end()));
        }
        if !self.references.is_empty() {
            let chapters: Vec<String> = self
                .references
                .iter()
                .map(|ch| format!("### {}\n{}", ch.alias, ch.body.trim_end()))
                .collect();
            sections.push(format!("{REFERENCE_HEADER}\n\n{}", chapters.join("\n\n")));
        }
        let mut out = sections.join("\n\n");
        out.push('\n');
        out
    }
}
