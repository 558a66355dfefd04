use std::collections::HashMap;
use std::fmt;

/// Thresholds for flagging a completion as degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegenerationRules {
    /// A word occurring at least this many times anywhere in the text.
    pub min_repeats: usize,
    /// A word longer than this many characters.
    pub max_word_len: usize,
}

impl Default for DegenerationRules {
    fn default() -> Self {
        DegenerationRules {
            min_repeats: 3,
            max_word_len: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DegenerationReason {
    Repeated { word: String, count: usize },
    TooLong { word: String, len: usize },
}

impl fmt::Display for DegenerationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegenerationReason::Repeated { word, count } => write!(f, "repeated word {word:?} x{count}"),
            DegenerationReason::TooLong { word, len } => write!(f, "word of {len} characters: {word:?}"),
        }
    }
}

/// Returns the first rule violated by `text`, if any.
///
/// Repetition is counted over the whole text, not only over adjacent runs.
pub fn detect_degeneration_with(text: &str, rules: &DegenerationRules) -> Option<DegenerationReason> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for word in text.split_whitespace() {
        let len = word.chars().count();
        if len > rules.max_word_len {
            return Some(DegenerationReason::TooLong {
                word: word.to_owned(),
                len,
            });
        }
        let count = counts.entry(word).or_default();
        *count += 1;
        if *count >= rules.min_repeats {
            return Some(DegenerationReason::Repeated {
                word: word.to_owned(),
                count: *count,
            });
        }
    }
    None
}

pub fn detect_degeneration(text: &str) -> Option<DegenerationReason> {
    detect_degeneration_with(text, &DegenerationRules::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_word() {
        let r = detect_degeneration("S. Nola 1925. S. Nola 1925. S. Nola 1925.").unwrap();
        assert_eq!(
            r,
            DegenerationReason::Repeated {
                word: "S.".into(),
                count: 3
            }
        );
    }

    #[test]
    fn clean_and_empty_text() {
        assert_eq!(detect_degeneration("hello world"), None);
        assert_eq!(detect_degeneration(""), None);
        assert_eq!(detect_degeneration("a b a b"), None);
    }

    #[test]
    fn long_word() {
        let w = "x".repeat(31);
        assert!(matches!(detect_degeneration(&w), Some(DegenerationReason::TooLong { len: 31, .. })));
        assert_eq!(detect_degeneration(&"x".repeat(30)), None);
        // length is in characters, not bytes
        assert_eq!(detect_degeneration(&"é".repeat(30)), None);
    }

    #[test]
    fn custom_thresholds() {
        let rules = DegenerationRules {
            min_repeats: 2,
            max_word_len: 3,
        };
        assert!(detect_degeneration_with("ab ab", &rules).is_some());
        assert!(detect_degeneration_with("abcd", &rules).is_some());
        assert!(detect_degeneration_with("ab cd", &rules).is_none());
    }
}
