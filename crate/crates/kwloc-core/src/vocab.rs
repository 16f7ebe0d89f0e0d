//! Keyword vocabulary with optional semantic groups. Groups may contain
//! words that are not keywords; those matter when judging whether a wrong
//! localisation landed on a semantically related word.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocabulary {
    keywords: Vec<String>,
    /// Each group lists related word strings; keywords and non-keywords mix.
    semantic_groups: Vec<Vec<String>>,
    #[serde(skip)]
    keyword_index: BTreeMap<String, usize>,
    #[serde(skip)]
    group_index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new(keywords: Vec<String>, semantic_groups: Vec<Vec<String>>) -> Result<Self> {
        if keywords.is_empty() {
            return Err(CoreError::invalid("vocabulary needs at least one keyword"));
        }
        let mut v = Vocabulary {
            keywords,
            semantic_groups,
            keyword_index: BTreeMap::new(),
            group_index: BTreeMap::new(),
        };
        v.rebuild_indices()?;
        Ok(v)
    }

    fn rebuild_indices(&mut self) -> Result<()> {
        self.keyword_index.clear();
        for (i, kw) in self.keywords.iter().enumerate() {
            if self.keyword_index.insert(kw.clone(), i).is_some() {
                return Err(CoreError::invalid(format!("duplicate keyword '{kw}'")));
            }
        }
        self.group_index.clear();
        for (g, words) in self.semantic_groups.iter().enumerate() {
            for word in words {
                if self.group_index.insert(word.clone(), g).is_some() {
                    return Err(CoreError::invalid(format!(
                        "word '{word}' appears in more than one semantic group"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Re-link the lookup maps after deserialization.
    pub fn finalize(mut self) -> Result<Self> {
        self.rebuild_indices()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn keyword(&self, index: usize) -> Result<&str> {
        self.keywords
            .get(index)
            .map(|s| s.as_str())
            .ok_or_else(|| {
                CoreError::invalid(format!(
                    "keyword index {index} out of range for {} keywords",
                    self.keywords.len()
                ))
            })
    }

    pub fn keyword_index(&self, word: &str) -> Option<usize> {
        self.keyword_index.get(word).copied()
    }

    pub fn semantic_groups(&self) -> &[Vec<String>] {
        &self.semantic_groups
    }

    /// Group id of any word (keyword or not), if it belongs to one.
    pub fn group_of(&self, word: &str) -> Option<usize> {
        self.group_index.get(word).copied()
    }

    /// True when `word` is a distinct member of the same semantic group as
    /// keyword `keyword_idx`.
    pub fn is_sibling(&self, word: &str, keyword_idx: usize) -> bool {
        let Ok(kw) = self.keyword(keyword_idx) else {
            return false;
        };
        if word == kw {
            return false;
        }
        match (self.group_of(word), self.group_of(kw)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vocabulary {
        Vocabulary::new(
            vec!["swim".into(), "ride".into(), "snow".into()],
            vec![
                vec!["swim".into(), "backstroke".into()],
                vec!["ride".into(), "saddle".into(), "gallop".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn index_is_stable_both_directions() {
        let v = sample();
        assert_eq!(v.keyword_index("ride"), Some(1));
        assert_eq!(v.keyword(1).unwrap(), "ride");
        assert_eq!(v.keyword_index("backstroke"), None);
        assert!(v.keyword(3).is_err());
    }

    #[test]
    fn sibling_relation() {
        let v = sample();
        assert!(v.is_sibling("backstroke", 0));
        assert!(v.is_sibling("saddle", 1));
        assert!(!v.is_sibling("swim", 0)); // same word, not a sibling
        assert!(!v.is_sibling("backstroke", 1));
        assert!(!v.is_sibling("snowdrift", 2)); // ungrouped keyword
    }

    #[test]
    fn duplicate_keyword_rejected() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], vec![]).is_err());
    }

    #[test]
    fn serde_round_trip_relinks() {
        let v = sample();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        let back = back.finalize().unwrap();
        assert_eq!(v, back);
        assert_eq!(back.group_of("gallop"), Some(1));
    }
}
