use crate::corpus::{Document, END_OF_TEXT};
use crate::error::{Error, Result};

/// Separator placed between a prompt's input and its completion.
pub const PROMPT_MARKER: &str = " # # =";

/// An input text and its expected completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptExample {
    pub context: String,
    pub completion: String,
}

impl PromptExample {
    pub fn new(context: impl Into<String>, completion: impl Into<String>) -> Self {
        PromptExample {
            context: context.into(),
            completion: completion.into(),
        }
    }

    /// Parses `input<TAB>output`.
    pub fn parse_tsv_line(line: &str) -> Result<Self> {
        let (c, o) = line.split_once('\t').ok_or_else(|| Error::Format {
            what: "prompt file",
            detail: format!("expected input<TAB>output, got {line:?}"),
        })?;
        Ok(PromptExample::new(c, o))
    }

    /// `{input} # # ={output}`: the completion follows `=` directly.
    pub fn rendered(&self) -> String {
        format!("{}{}{}", self.context, PROMPT_MARKER, self.completion)
    }

    /// The prompt used at generation time.
    pub fn rendered_prompt(&self) -> String {
        render_prompt(&self.context)
    }

    /// Training document: rendered text plus the end-of-text marker, with a
    /// word break forced after `=`. Returns the document and the context
    /// length in characters.
    pub fn to_document(&self) -> (Document, usize) {
        let context_len = self.context.chars().count() + PROMPT_MARKER.chars().count();
        let mut text = self.rendered();
        text.push(END_OF_TEXT);
        (Document::with_breaks(&text, &[context_len]), context_len)
    }
}

pub fn render_prompt(context: &str) -> String {
    format!("{context}{PROMPT_MARKER}")
}

/// Reads a TSV of `input<TAB>output` lines, skipping blank ones.
pub fn parse_prompt_tsv(text: &str) -> Result<Vec<PromptExample>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(PromptExample::parse_tsv_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_matches_rendered_examples() {
        let ex = PromptExample::new(
            "Denmark + capital + Copenhagen",
            "ICopenhagen likomkhulu laseDenmark.",
        );
        assert_eq!(
            ex.rendered(),
            "Denmark + capital + Copenhagen # # =ICopenhagen likomkhulu laseDenmark."
        );
        assert_eq!(ex.rendered().matches(PROMPT_MARKER).count(), 1);
        assert_eq!(ex.rendered_prompt(), "Denmark + capital + Copenhagen # # =");
    }

    #[test]
    fn document_breaks_after_marker() {
        let ex = PromptExample::new("a b", "cd");
        let (doc, ctx) = ex.to_document();
        assert_eq!(ctx, 9);
        assert_eq!(doc.slice_text(0, ctx), "a b # # =");
        assert!(doc.is_word_boundary(ctx));
        assert_eq!(doc.len(), 12);
        assert_eq!(doc.chars()[11], END_OF_TEXT);
        assert!(!doc.span_within_word(8, 10));
    }

    #[test]
    fn tsv_parsing() {
        let v = parse_prompt_tsv("x\ty\n\nz\tw\n").unwrap();
        assert_eq!(v, vec![PromptExample::new("x", "y"), PromptExample::new("z", "w")]);
        assert!(parse_prompt_tsv("no tab").is_err());
    }
}
