//! Text cleaning and identifier tokenization.
//!
//! Everything here is a pure function. The expander, the retrieval
//! re-ranker and the evaluation metrics all agree on the word units
//! produced by [`tokenize_name`].

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

// A tag starts with a letter, '/', '!' or '?' right after '<' and runs to the
// next '>'. Unterminated fragments run up to the next '<' or the end.
static TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<[A-Za-z/!?][^<>]*>?").expect("tag pattern"));

/// Strips HTML tags and control characters, collapses whitespace runs and
/// trims the result.
///
/// ```
/// assert_eq!(scribe_core::text::clean_text("<b>year to  date</b>"), "year to date");
/// ```
pub fn clean_text(text: &str) -> String {
    let no_control: String = text
        .chars()
        .map(|c| if c.is_control() && !c.is_whitespace() { ' ' } else { c })
        .collect();
    let no_tags = TAG.replace_all(&no_control, " ");
    no_tags.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separator {
    Underscore,
    /// Any other non-alphanumeric character (space, '-', '.', ...).
    Delimiter,
    CamelBoundary,
    DigitBoundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedName {
    pub raw: String,
    pub tokens: Vec<String>,
    pub separators_seen: Vec<Separator>,
}

impl TokenizedName {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("cannot tokenize an empty name")]
    Empty,
    #[error("name {0:?} has no alphanumeric content")]
    NoTokens(String),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Lower,
    Upper,
    Digit,
    // Alphabetic characters without case (CJK etc.).
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_numeric() {
        CharClass::Digit
    } else if c.is_uppercase() {
        CharClass::Upper
    } else if c.is_lowercase() {
        CharClass::Lower
    } else {
        CharClass::Other
    }
}

/// Splits a physical name into lowercase word tokens.
///
/// Boundaries are underscores and other punctuation, lower-to-upper case
/// transitions, the last capital of an acronym run followed by a lowercase
/// letter (`HTTPServer` -> `http`, `server`), and letter/digit transitions.
pub fn tokenize_name(name: &str) -> Result<TokenizedName, TokenizeError> {
    if name.is_empty() {
        return Err(TokenizeError::Empty);
    }
    let chars: Vec<char> = name.chars().collect();
    let mut tokens = Vec::new();
    let mut separators_seen = Vec::new();
    let mut current = String::new();

    let push_sep = |seps: &mut Vec<Separator>, s: Separator| {
        if !seps.contains(&s) {
            seps.push(s);
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            let sep = if c == '_' {
                Separator::Underscore
            } else {
                Separator::Delimiter
            };
            push_sep(&mut separators_seen, sep);
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            continue;
        }
        if !current.is_empty() {
            let prev = class_of(chars[i - 1]);
            let here = class_of(c);
            let next = chars.get(i + 1).copied().filter(|n| n.is_alphanumeric()).map(class_of);
            let boundary = match (prev, here) {
                (CharClass::Digit, CharClass::Digit) => None,
                (CharClass::Digit, _) | (_, CharClass::Digit) => Some(Separator::DigitBoundary),
                (CharClass::Lower, CharClass::Upper) => Some(Separator::CamelBoundary),
                (CharClass::Upper, CharClass::Upper) if next == Some(CharClass::Lower) => {
                    Some(Separator::CamelBoundary)
                }
                _ => None,
            };
            if let Some(sep) = boundary {
                push_sep(&mut separators_seen, sep);
                tokens.push(std::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    if tokens.is_empty() {
        return Err(TokenizeError::NoTokens(name.to_string()));
    }
    Ok(TokenizedName {
        raw: name.to_string(),
        tokens,
        separators_seen,
    })
}

/// Replaces every run of non-alphanumeric characters with a single space.
/// `ytd_dist_amt` becomes `ytd dist amt`; camel case is left alone.
pub fn spaced_name(name: &str) -> String {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercase whitespace tokenization used by the evaluation metrics.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(name: &str) -> Vec<String> {
        tokenize_name(name).unwrap().tokens
    }

    #[test]
    fn cleans_tags_and_whitespace() {
        assert_eq!(clean_text("<b>year to  date</b>"), "year to date");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("a<br/>b"), "a b");
        assert_eq!(clean_text("  x \t\n y  "), "x y");
        assert_eq!(clean_text("rate < 5 and > 2"), "rate < 5 and > 2");
        assert_eq!(clean_text("bad\u{0007}bell"), "bad bell");
        assert_eq!(clean_text("trailing <div class='x'"), "trailing");
    }

    #[test]
    fn html_fixture_leaves_no_tags() {
        let tag_start = Regex::new(r"<[A-Za-z]").unwrap();
        let fragments = [
            "<p>Amount</p>",
            "<b>net</b> <i>asset</i>",
            "<a href=\"x\">link</a> text",
            "<div><span>nested</span></div>",
            "open <ul",
            "<<b>>double",
            "<!-- comment --> value",
            "x<br>y<br/>z",
            "<table><tr><td>cell</td></tr></table>",
            "plain",
        ];
        for i in 0..50 {
            let input = format!("{} {} <em>{i}</em>", fragments[i % 10], fragments[(i * 7) % 10]);
            let out = clean_text(&input);
            assert!(!tag_start.is_match(&out), "{input:?} -> {out:?}");
        }
    }

    #[test]
    fn tokenizes_underscores() {
        assert_eq!(toks("ytd_dist_amt"), ["ytd", "dist", "amt"]);
        let t = tokenize_name("ytd_dist_amt").unwrap();
        assert_eq!(t.separators_seen, vec![Separator::Underscore]);
    }

    #[test]
    fn tokenizes_camel_case() {
        assert_eq!(toks("optCtrExpD"), ["opt", "ctr", "exp", "d"]);
        assert_eq!(toks("HTTPServer"), ["http", "server"]);
        assert_eq!(toks("shrExpD"), toks("shr_exp_d"));
    }

    #[test]
    fn tokenizes_digits() {
        assert_eq!(toks("col2amt"), ["col", "2", "amt"]);
        assert_eq!(toks("q10_rt"), ["q", "10", "rt"]);
        let t = tokenize_name("col2amt").unwrap();
        assert_eq!(t.separators_seen, vec![Separator::DigitBoundary]);
    }

    #[test]
    fn rejects_empty_and_symbol_only_names() {
        assert_eq!(tokenize_name(""), Err(TokenizeError::Empty));
        assert!(matches!(tokenize_name("__"), Err(TokenizeError::NoTokens(_))));
    }

    #[test]
    fn spaced_name_replaces_separators() {
        assert_eq!(spaced_name("ytd_dist_amt"), "ytd dist amt");
        assert_eq!(spaced_name("__a--b"), "a b");
    }

    proptest! {
        #[test]
        fn clean_text_is_idempotent(s in "(<[a-z/]{0,4}>|[ a-zA-Z<>\t\n&;]|\u{0001}){0,40}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once);
        }

        #[test]
        fn tokenization_is_lossless(s in "[A-Za-z0-9_ .-]{1,30}") {
            let alnum: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
            match tokenize_name(&s) {
                Ok(t) => {
                    prop_assert!(t.tokens.iter().all(|x| !x.is_empty()));
                    prop_assert_eq!(t.tokens.concat(), alnum);
                }
                Err(_) => prop_assert!(alnum.is_empty()),
            }
        }
    }
}
