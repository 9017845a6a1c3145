use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];

/// Splits on Unicode whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}

/// Token/id bijection with four reserved specials at ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;

    fn try_from(repr: VocabRepr) -> Result<Self> {
        if repr.tokens.len() < SPECIALS.len() || repr.tokens[..SPECIALS.len()] != SPECIALS.map(String::from) {
            return Err(Error::Config("vocab must start with the reserved specials".into()));
        }
        Self::from_ordered(repr.tokens[SPECIALS.len()..].to_vec())
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.id_to_token }
    }
}

impl Vocab {
    /// Builds a vocab from arbitrary tokens; ids are assigned in sorted order.
    pub fn build<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(|s| s.as_ref().to_string()).collect();
        Self::from_ordered(set.into_iter().collect())
    }

    fn from_ordered(corpus_tokens: Vec<String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, usize> =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for tok in corpus_tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocab token {tok:?}")));
            }
            if token_to_id.contains_key(&tok) {
                return Err(Error::Config(format!("token {tok:?} collides with an existing entry")));
            }
            token_to_id.insert(tok.clone(), id_to_token.len());
            id_to_token.push(tok);
        }
        Ok(Self {
            id_to_token,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::Argument(format!("token {t:?} not in vocab")))
            })
            .collect()
    }

    /// Joins ids back into text, skipping specials.
    pub fn decode(&self, ids: &[usize]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&i| i >= SPECIALS.len())
            .filter_map(|&i| self.token(i))
            .collect();
        detokenize(&toks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_splits_on_whitespace() {
        assert_eq!(tokenize("a b  c"), vec!["a", "b", "c"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("नमस्ते\u{3000}दुनिया"), vec!["नमस्ते", "दुनिया"]);
    }

    #[test]
    fn specials_are_reserved() {
        let v = Vocab::build(["b", "a", "a"]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.token(EOS), Some("<eos>"));
        assert!(Vocab::build(["<eos>"]).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::build(["x", "y"]).unwrap();
        let ids = v.encode("y x y").unwrap();
        assert_eq!(ids, vec![5, 4, 5]);
        assert_eq!(v.decode(&[BOS, 5, 4, EOS]), "y x");
        assert!(v.encode("z").is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let v = Vocab::build(["w1", "w0"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<Vocab>(r#"{"tokens":["a"]}"#).is_err());
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(words in proptest::collection::vec("[a-zA-Z\u{0900}-\u{097F}]{1,6}", 0..8),
                                       seps in proptest::collection::vec("[ \t\n]{1,3}", 0..9)) {
            let mut text = String::new();
            for (i, w) in words.iter().enumerate() {
                text.push_str(seps.get(i).map(String::as_str).unwrap_or(" "));
                text.push_str(w);
            }
            let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(detokenize(&tokenize(&text)), normalized);
        }
    }
}
