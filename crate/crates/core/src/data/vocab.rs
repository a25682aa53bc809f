use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Reserved token for words outside the vocabulary; always row 0.
pub const UNK: &str = "<unk>";

/// Word → row mapping. Row 0 is the out-of-vocabulary row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from token lists, sorted for determinism.
    pub fn build<'a, I, T>(sentences: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut words: Vec<String> = sentences
            .into_iter()
            .flat_map(|s| s.into_iter().cloned())
            .filter(|w| w != UNK)
            .collect();
        words.sort();
        words.dedup();
        words.insert(0, UNK.to_string());
        Self::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// True when only the OOV row exists.
    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Row for `word`, falling back to the OOV row.
    pub fn lookup(&self, word: &str) -> usize {
        self.get(word).unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(mut words: Vec<String>) -> Self {
        if words.first().map(String::as_str) != Some(UNK) {
            words.retain(|w| w != UNK);
            words.insert(0, UNK.to_string());
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oov_maps_to_row_zero() {
        let s = vec![vec!["b".to_string(), "a".to_string()], vec!["a".to_string()]];
        let v = Vocabulary::build(&s);
        assert_eq!(v.words(), &["<unk>", "a", "b"]);
        assert_eq!(v.lookup("zebra"), 0);
        assert_eq!(v.lookup("b"), 2);
    }
}
