//! Topic patterns used by subscriptions and authorization rules.
//!
//! Accepted syntax is a portable regex subset: literals, `.`, `*`, `+`, `?`,
//! `|`, `( )` groups and `[ ]` classes (ranges and leading `^` negation
//! inside a class). A backslash followed by ASCII punctuation is a literal.
//! Matching is always against the whole topic string.

use std::fmt;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatternError {
    #[error("pattern {pattern:?}: {what} at byte {at} is outside the supported subset")]
    Unsupported {
        pattern: String,
        what: String,
        at: usize,
    },
    #[error("pattern {pattern:?} does not compile: {reason}")]
    Invalid { pattern: String, reason: String },
}

#[derive(Clone)]
pub struct TopicPattern {
    source: String,
    matcher: Regex,
}

impl TopicPattern {
    pub fn compile(source: &str) -> Result<Self, PatternError> {
        check_subset(source)?;
        let matcher = Regex::new(&format!("^(?:{source})$")).map_err(|e| PatternError::Invalid {
            pattern: source.to_owned(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            source: source.to_owned(),
            matcher,
        })
    }

    /// Pattern that matches exactly `topic`.
    pub fn literal(topic: &str) -> Self {
        Self::compile(&escape_literal(topic)).expect("escaped literal is always in the subset")
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, topic: &str) -> bool {
        self.matcher.is_match(topic)
    }
}

impl fmt::Debug for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("TopicPattern").field(&self.source).finish()
    }
}

impl PartialEq for TopicPattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Eq for TopicPattern {}

/// Escapes every metacharacter so the result matches `topic` literally.
pub fn escape_literal(topic: &str) -> String {
    regex::escape(topic)
}

fn check_subset(source: &str) -> Result<(), PatternError> {
    let unsupported = |what: &str, at: usize| PatternError::Unsupported {
        pattern: source.to_owned(),
        what: what.to_owned(),
        at,
    };
    let mut in_class = false;
    let mut chars = source.char_indices().peekable();
    while let Some((at, c)) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some((_, next)) if next.is_ascii_punctuation() => {}
                Some((_, next)) => return Err(unsupported(&format!("escape \\{next}"), at)),
                None => return Err(unsupported("trailing backslash", at)),
            },
            '[' if !in_class => {
                in_class = true;
                if let Some(&(_, '^')) = chars.peek() {
                    chars.next();
                }
                // a leading ']' is a literal member
                if let Some(&(_, ']')) = chars.peek() {
                    chars.next();
                }
            }
            ']' if in_class => in_class = false,
            '[' if in_class => {
                if let Some(&(_, ':' | '=' | '.')) = chars.peek() {
                    return Err(unsupported("posix class", at));
                }
            }
            '&' | '~' | '-' if in_class && chars.peek().map(|&(_, n)| n) == Some(c) => {
                return Err(unsupported("class set operation", at));
            }
            _ if in_class => {}
            '{' | '}' => return Err(unsupported("counted repetition", at)),
            '^' | '$' => return Err(unsupported("anchor", at)),
            '(' => {
                if let Some(&(_, '?')) = chars.peek() {
                    return Err(unsupported("group flag", at));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_match_semantics() {
        let p = TopicPattern::compile("/r1/.*").unwrap();
        assert!(p.is_match("/r1/odom"));
        assert!(p.is_match("/r1/"));
        assert!(!p.is_match("x/r1/odom"));

        let p = TopicPattern::compile("odom").unwrap();
        assert!(!p.is_match("/r1/odom"));
    }

    #[test]
    fn subset_constructs() {
        let p = TopicPattern::compile("/r[12]/(odom|scan)s?").unwrap();
        for t in ["/r1/odom", "/r2/scans", "/r1/scan"] {
            assert!(p.is_match(t), "{t}");
        }
        assert!(!p.is_match("/r3/odom"));
        assert!(TopicPattern::compile("/a+b?[^x]").unwrap().is_match("/aaz"));
    }

    #[test]
    fn rejects_outside_subset() {
        for bad in ["a{2}", "^a", "a$", "\\d+", "(?i)a", "(?:a)", "\\", "[[:alpha:]]"] {
            assert!(
                matches!(TopicPattern::compile(bad), Err(PatternError::Unsupported { .. })),
                "{bad}"
            );
        }
        assert!(matches!(
            TopicPattern::compile("(a"),
            Err(PatternError::Invalid { .. })
        ));
    }

    #[test]
    fn literal_escapes_metacharacters() {
        let p = TopicPattern::literal("/r2/odom.v1+(x)");
        assert!(p.is_match("/r2/odom.v1+(x)"));
        assert!(!p.is_match("/r2/odomXv1+(x)"));
        assert_eq!(TopicPattern::literal("/r2/odom").as_str(), "/r2/odom");
    }
}
