//! Toy closed-vocabulary tokenizer: whitespace word-level over the VQA
//! template vocabulary, digit-by-digit for numbers. Out-of-vocabulary input
//! is a hard error, never a silent remap.

use std::collections::BTreeMap;

use crate::{P4dError, Result};

/// Words used by the VQA templates, in fixed id order.
const WORDS: &[&str] = &[
    "where", "is", "located", "in", "the", "first", "frame", "what", "width", "of", "meters",
    "closer", "to", "camera", "than", "rotating", "left", "or", "right", "how", "many", "objects",
    "are", "moving", "video", "3d", "space", "only", "moves", "average", "speed", "per", "second",
    "total", "displacement", "seconds", "have", "passed", "input", "top", "bottom", "same",
    "distance", "yes", "no", "not", "cannot", "tell",
];

/// Single-character tokens for numbers.
const NUMBER_CHARS: &[&str] = &["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", "-"];

/// Option letters A..E.
const LETTERS: &[&str] = &["A", "B", "C", "D", "E"];

/// Structural tokens: visual placeholder, separator, end-of-answer.
pub const VIS: &str = "<vis>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";

pub struct Tokenizer {
    ids: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Tokenizer {
    pub fn new() -> Self {
        let mut tokens: Vec<String> = Vec::new();
        tokens.extend([VIS, SEP, EOS].iter().map(|s| s.to_string()));
        tokens.extend(WORDS.iter().map(|s| s.to_string()));
        tokens.extend(NUMBER_CHARS.iter().map(|s| s.to_string()));
        tokens.extend((1..=9).map(|i| format!("<R{i}>")));
        tokens.extend(LETTERS.iter().map(|s| s.to_string()));
        let ids = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { ids, tokens }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.ids
            .get(token)
            .copied()
            .ok_or_else(|| P4dError::OutOfVocabulary(token.to_string()))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    fn is_number(word: &str) -> bool {
        !word.is_empty() && word.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '-')
    }

    /// Encode whitespace-separated text. Numbers split into characters;
    /// every other word must be in the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            if self.ids.contains_key(word) {
                out.push(self.ids[word]);
            } else if Self::is_number(word) {
                for c in word.chars() {
                    out.push(self.id(&c.to_string())?);
                }
            } else {
                return Err(P4dError::OutOfVocabulary(word.to_string()));
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            match self.token(id) {
                Some(t) => parts.push(t.to_string()),
                None => {
                    return Err(P4dError::InvalidArgument(format!(
                        "token id {id} out of vocabulary (size {})",
                        self.vocab_size()
                    )))
                }
            }
        }
        Ok(parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_template_text() {
        let tok = Tokenizer::new();
        let text = "what is the average speed of <R1> in meters per second";
        let ids = tok.encode(text).unwrap();
        assert_eq!(tok.decode(&ids).unwrap(), text);
    }

    #[test]
    fn numbers_split_into_characters() {
        let tok = Tokenizer::new();
        let ids = tok.encode("1.875").unwrap();
        assert_eq!(ids.len(), 5);
        assert_eq!(tok.decode(&ids).unwrap(), "1 . 8 7 5");
    }

    #[test]
    fn oov_is_a_hard_error() {
        let tok = Tokenizer::new();
        let err = tok.encode("what is a zebra").unwrap_err();
        assert!(matches!(err, P4dError::OutOfVocabulary(w) if w == "a" || w == "zebra"));
    }

    #[test]
    fn covers_all_template_output() {
        use crate::scenegen::{generate_scene, make_vqa, CameraSpec, ObjectSpec, Pose, SceneSpec, TemplateSet};
        let spec = SceneSpec {
            seed: 3,
            n_frames: 8,
            fps: 4.0,
            image_size: (32, 32),
            camera: CameraSpec {
                focal: 48.0,
                principal_point: [16.0, 16.0],
                poses: vec![Pose::identity(); 8],
            },
            objects: vec![
                ObjectSpec {
                    size: [1.3, 1.0, 1.0],
                    position: [0.5, 0.5, 5.0],
                    velocity: [0.25, 0.0, -0.125],
                    color: [0.9, 0.2, 0.2],
                },
                ObjectSpec {
                    size: [1.0, 1.0, 1.0],
                    position: [-1.0, -0.5, 7.0],
                    velocity: [0.0, 0.0, 0.0],
                    color: [0.2, 0.9, 0.2],
                },
            ],
            background_depth: 16.0,
        };
        let meta = generate_scene(&spec).unwrap().2;
        let out = make_vqa(&meta, &TemplateSet::default(), 11).unwrap();
        let tok = Tokenizer::new();
        for s in &out.samples {
            tok.encode(&s.question).unwrap();
            for o in &s.options {
                tok.encode(o).unwrap();
            }
        }
    }

    #[test]
    fn ids_are_stable() {
        let a = Tokenizer::new();
        let b = Tokenizer::new();
        assert_eq!(a.encode("yes no <R1> 7 A").unwrap(), b.encode("yes no <R1> 7 A").unwrap());
    }
}
