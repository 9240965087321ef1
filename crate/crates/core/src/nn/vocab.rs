use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Color, Material, Shape, Size};

/// Largest count answer.
pub const MAX_COUNT: usize = 10;

/// Ordered answer tokens with an index <-> token bijection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AnswerVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate answer token {t:?}")));
            }
        }
        Ok(AnswerVocab { tokens, index })
    }

    /// yes, no, counts 0-10, colors, shapes, sizes, materials.
    pub fn standard() -> Self {
        let mut t: Vec<String> = vec!["yes".into(), "no".into()];
        t.extend((0..=MAX_COUNT).map(|c| c.to_string()));
        t.extend(Color::ALL.iter().map(|c| c.word().to_string()));
        t.extend(Shape::ALL.iter().map(|c| c.word().to_string()));
        t.extend(Size::ALL.iter().map(|c| c.word().to_string()));
        t.extend(Material::ALL.iter().map(|c| c.word().to_string()));
        Self::new(t).expect("standard answers are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Vocab(format!("unknown answer token {token:?}")))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("answer id {id} out of range")))
    }
}

impl TryFrom<Vec<String>> for AnswerVocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<AnswerVocab> for Vec<String> {
    fn from(v: AnswerVocab) -> Self {
        v.tokens
    }
}
