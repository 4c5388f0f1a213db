use std::fs;
use std::path::Path;

use super::DistillError;
use crate::textcore::Lexicon;

const PLAIN: &str = include_str!("../../templates/plain.txt");
const DISTILLED: &str = include_str!("../../templates/distilled.txt");

pub const TERMS_PLACEHOLDER: &str = "list_of_terms";
pub const QUESTION_PLACEHOLDER: &str = "knowledge_question";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

impl PromptTemplate {
    /// `plain` asks for an ordinary one-paragraph answer; `distilled` additionally
    /// asks the model to leave out the listed terms.
    pub fn builtin(name: &str) -> Result<Self, DistillError> {
        let text = match name {
            "plain" => PLAIN,
            "distilled" => DISTILLED,
            _ => return Err(DistillError::UnknownTemplate(name.to_string())),
        };
        Ok(PromptTemplate {
            name: name.to_string(),
            text: text.to_string(),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DistillError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            DistillError::UnknownTemplate(format!("{}: {e}", path.display()))
        })?;
        Ok(PromptTemplate {
            name: path.display().to_string(),
            text,
        })
    }

    /// Builtin name first, then a template file.
    pub fn resolve(spec: &str) -> Result<Self, DistillError> {
        match spec {
            "plain" | "distilled" => Self::builtin(spec),
            path => Self::from_file(path),
        }
    }
}

/// Fills `{list_of_terms}` with the comma-separated term list and
/// `{knowledge_question}` with the question. Any other `{name}` placeholder in
/// the template is an error.
pub fn build_prompt(
    terms: &Lexicon,
    question: &str,
    template: &PromptTemplate,
) -> Result<String, DistillError> {
    if question.trim().is_empty() {
        return Err(DistillError::EmptyQuestion);
    }
    let list = terms.words().join(", ");
    let text = &template.text;
    let mut out = String::with_capacity(text.len() + list.len() + question.len());
    let mut rest = text.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        let is_placeholder = name_len > 0 && after[name_len..].starts_with('}');
        if !is_placeholder {
            out.push('{');
            rest = after;
            continue;
        }
        match &after[..name_len] {
            TERMS_PLACEHOLDER => out.push_str(&list),
            QUESTION_PLACEHOLDER => out.push_str(question),
            other => return Err(DistillError::UnresolvedPlaceholder(other.to_string())),
        }
        rest = &after[name_len + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms() -> Lexicon {
        Lexicon::new("s", ["the", "a", "and"]).unwrap()
    }

    #[test]
    fn plain_template() {
        let t = PromptTemplate::builtin("plain").unwrap();
        assert_eq!(
            build_prompt(&terms(), "What is X?", &t).unwrap(),
            "Respond just in a paragraph. What is X?"
        );
    }

    #[test]
    fn distilled_lists_each_term_once() {
        let t = PromptTemplate::builtin("distilled").unwrap();
        let p = build_prompt(&terms(), "What is X?", &t).unwrap();
        let start = p.find("such as: ").unwrap() + "such as: ".len();
        let end = p.find(". That is to say").unwrap();
        let listed: Vec<&str> = p[start..end].split(", ").collect();
        assert_eq!(listed, ["the", "a", "and"]);
        assert!(p.ends_with("Return only the distilled answer, nothing else. What is X?"));
    }

    #[test]
    fn question_braces_are_not_placeholders() {
        let t = PromptTemplate::builtin("plain").unwrap();
        let p = build_prompt(&terms(), "Why {foo}?", &t).unwrap();
        assert_eq!(p, "Respond just in a paragraph. Why {foo}?");
    }

    #[test]
    fn errors() {
        let t = PromptTemplate::builtin("plain").unwrap();
        assert!(matches!(build_prompt(&terms(), "  ", &t), Err(DistillError::EmptyQuestion)));
        assert!(matches!(
            PromptTemplate::builtin("fancy"),
            Err(DistillError::UnknownTemplate(_))
        ));
        let custom = PromptTemplate {
            name: "c".into(),
            text: "Use {style}: {knowledge_question}".into(),
        };
        assert!(matches!(
            build_prompt(&terms(), "q", &custom),
            Err(DistillError::UnresolvedPlaceholder(n)) if n == "style"
        ));
        let literal = PromptTemplate {
            name: "l".into(),
            text: "set {} {knowledge_question}".into(),
        };
        assert_eq!(build_prompt(&terms(), "q", &literal).unwrap(), "set {} q");
    }
}
