//! Word tokenizer.
//!
//! The rule is deliberately simple and versioned by the vocabulary files that
//! depend on it: lowercase the input, split on every non-alphanumeric
//! character, and discard the separators. Numerals are kept as tokens.

/// Splits `text` into lowercased alphanumeric runs.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_empty_sequence() {
        assert!(tokenize_words("").is_empty());
        assert!(tokenize_words("  ,.;!  ").is_empty());
    }

    #[test]
    fn punctuation_is_discarded_and_case_folded() {
        assert_eq!(
            tokenize_words("Dear John, your order #123"),
            ["dear", "john", "your", "order", "123"]
        );
    }

    #[test]
    fn repeated_prefixes_survive() {
        assert_eq!(tokenize_words("RE: RE: hello"), ["re", "re", "hello"]);
    }

    #[test]
    fn unicode_letters_are_tokens() {
        assert_eq!(tokenize_words("Grüße aus Köln!"), ["grüße", "aus", "köln"]);
    }
}
