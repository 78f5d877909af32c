//! Pluggable tokenizers.
//!
//! Every token carries its character offsets (Unicode scalar values) into
//! the source text so span-based code can align entities with tokens.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token<'a> {
    pub surface: &'a str,
    /// Inclusive start, in characters.
    pub start: usize,
    /// Exclusive end, in characters.
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<Token<'a>>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }

    fn surfaces<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.tokenize(text).into_iter().map(|t| t.surface).collect()
    }
}

/// One token per Unicode scalar value, whitespace included.
#[derive(Clone, Copy, Debug, Default)]
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<Token<'a>> {
        text.char_indices()
            .enumerate()
            .map(|(i, (byte, c))| Token {
                surface: &text[byte..byte + c.len_utf8()],
                start: i,
                end: i + 1,
            })
            .collect()
    }

    fn count(&self, text: &str) -> usize {
        text.chars().count()
    }
}

/// Maximal runs of non-whitespace characters.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<Token<'a>> {
        let mut tokens = Vec::new();
        let mut current: Option<(usize, usize)> = None; // (byte start, char start)
        let mut char_pos = 0;
        for (byte, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some((b, s)) = current.take() {
                    tokens.push(Token {
                        surface: &text[b..byte],
                        start: s,
                        end: char_pos,
                    });
                }
            } else if current.is_none() {
                current = Some((byte, char_pos));
            }
            char_pos += 1;
        }
        if let Some((b, s)) = current {
            tokens.push(Token {
                surface: &text[b..],
                start: s,
                end: char_pos,
            });
        }
        tokens
    }
}

/// Tokenizer selection as it appears in configuration files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    #[default]
    Char,
    Whitespace,
}

impl TokenizerKind {
    pub fn build(self) -> Box<dyn Tokenizer> {
        match self {
            TokenizerKind::Char => Box::new(CharTokenizer),
            TokenizerKind::Whitespace => Box::new(WhitespaceTokenizer),
        }
    }
}

impl std::str::FromStr for TokenizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(TokenizerKind::Char),
            "whitespace" => Ok(TokenizerKind::Whitespace),
            other => Err(format!("unknown tokenizer '{other}' (expected char or whitespace)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_offsets_count_scalars_not_bytes() {
        let toks = CharTokenizer.tokenize("餃子a");
        assert_eq!(toks.len(), 3);
        assert_eq!(toks[0].surface, "餃");
        assert_eq!((toks[2].start, toks[2].end), (2, 3));
    }

    #[test]
    fn whitespace_runs() {
        let toks = WhitespaceTokenizer.tokenize("  line up  the gyoza");
        let s: Vec<_> = toks.iter().map(|t| (t.surface, t.start, t.end)).collect();
        assert_eq!(
            s,
            vec![("line", 2, 6), ("up", 7, 9), ("the", 11, 14), ("gyoza", 15, 20)]
        );
        assert!(WhitespaceTokenizer.tokenize("   ").is_empty());
    }
}
