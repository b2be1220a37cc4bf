use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// How raw text is split into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenizerMode {
    /// Whitespace-delimited words.
    #[default]
    Whitespace,
    /// Every non-whitespace character is a token (for scripts without word
    /// delimiters).
    Char,
}

impl TokenizerMode {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            TokenizerMode::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
            TokenizerMode::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
        }
    }
}

impl FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizerMode::Whitespace),
            "char" => Ok(TokenizerMode::Char),
            other => Err(Error::Config(format!("unknown tokenizer mode {other:?}"))),
        }
    }
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Whitespace => "whitespace",
            TokenizerMode::Char => "char",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes() {
        assert_eq!(
            TokenizerMode::Whitespace.tokenize("  a bb\tc\n"),
            vec!["a", "bb", "c"]
        );
        assert_eq!(TokenizerMode::Char.tokenize("高 血压"), vec!["高", "血", "压"]);
        assert_eq!("char".parse::<TokenizerMode>().unwrap(), TokenizerMode::Char);
        assert!("words".parse::<TokenizerMode>().is_err());
    }
}
