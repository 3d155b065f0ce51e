//! Action indicator vectors: which vocabulary actions a scene prompt
//! mentions, scored by embedding cosine similarity.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{Linear, NumericError, Tensor};
use crate::rng::{derive_seed, Rng};

pub const DEFAULT_THRESHOLD: f64 = 0.2;

/// Names of the built-in synthetic vocabulary.
pub const DEFAULT_ACTIONS: [&str; 16] = [
    "kneading dough",
    "riding bike",
    "running",
    "jumping",
    "swimming",
    "dancing",
    "playing guitar",
    "cooking",
    "walking the dog",
    "reading book",
    "surfing",
    "skiing",
    "climbing",
    "painting",
    "singing",
    "juggling",
];

#[derive(Debug, thiserror::Error)]
pub enum ActionError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate action name {0:?}")]
    DuplicateName(String),
    #[error("embedding of {name:?} has norm {norm}, expected 1")]
    NotUnitNorm { name: String, norm: f64 },
    #[error("embedding of {name:?} has {found} dims, expected {expected}")]
    DimensionMismatch { name: String, found: usize, expected: usize },
    #[error("need at least {needed} embedding dims for orthogonal actions, got {dims}")]
    TooFewDims { needed: usize, dims: usize },
    #[error("vocabulary file: {0}")]
    File(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionEntry {
    pub name: String,
    pub embedding: Vec<f64>,
}

/// `V` named actions with unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVocabulary {
    entries: Vec<ActionEntry>,
}

impl ActionVocabulary {
    pub fn new(entries: Vec<ActionEntry>) -> Result<Self, ActionError> {
        let dims = entries.first().ok_or(ActionError::EmptyVocabulary)?.embedding.len();
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(ActionError::DuplicateName(e.name.clone()));
            }
            if e.embedding.len() != dims {
                return Err(ActionError::DimensionMismatch {
                    name: e.name.clone(),
                    found: e.embedding.len(),
                    expected: dims,
                });
            }
            let norm = norm(&e.embedding);
            if !((norm - 1.0).abs() <= 1e-6) {
                return Err(ActionError::NotUnitNorm { name: e.name.clone(), norm });
            }
        }
        Ok(Self { entries })
    }

    /// Orthonormal random embeddings (Gram-Schmidt) for the given names.
    pub fn synthetic(names: &[&str], dims: usize, seed: u64) -> Result<Self, ActionError> {
        if dims < names.len() {
            return Err(ActionError::TooFewDims { needed: names.len(), dims });
        }
        let mut rng = Rng::new(derive_seed(seed, "action-vocabulary"));
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        for _ in names {
            let mut v = rng.normals(dims);
            for b in &basis {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        Self::new(
            names
                .iter()
                .zip(basis)
                .map(|(n, e)| ActionEntry { name: n.to_string(), embedding: e })
                .collect(),
        )
    }

    /// The 16-action desk-scale vocabulary with 32-dim embeddings.
    pub fn default_synthetic(seed: u64) -> Self {
        Self::synthetic(&DEFAULT_ACTIONS, 32, seed).expect("default vocabulary is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ActionError> {
        let text = std::fs::read_to_string(path).map_err(|e| ActionError::File(format!("{}: {e}", path.display())))?;
        let entries: Vec<ActionEntry> =
            serde_json::from_str(&text).map_err(|e| ActionError::File(format!("{}: {e}", path.display())))?;
        Self::new(entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("vocabulary serializes")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.entries[0].embedding.len()
    }

    pub fn entries(&self) -> &[ActionEntry] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// `y_a` in `[0, 1]^V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionIndicator {
    pub values: Vec<f64>,
}

impl ActionIndicator {
    pub fn zeros(v: usize) -> Self {
        Self { values: vec![0.0; v] }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

pub trait PhraseExtractor {
    fn extract(&self, prompt: &str) -> Vec<String>;
}

pub trait PhraseEmbedder {
    fn embed(&self, phrase: &str) -> Vec<f64>;
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Greedy longest-first scan for known phrases in the prompt's word
/// sequence; each phrase is reported once, in order of first mention.
#[derive(Debug, Clone)]
pub struct NgramExtractor {
    phrases: Vec<Vec<String>>,
}

impl NgramExtractor {
    pub fn new<S: AsRef<str>>(phrases: &[S]) -> Self {
        let mut phrases: Vec<Vec<String>> =
            phrases.iter().map(|p| words(p.as_ref())).filter(|w| !w.is_empty()).collect();
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        phrases.dedup();
        Self { phrases }
    }

    pub fn for_vocabulary(vocab: &ActionVocabulary) -> Self {
        let names: Vec<&str> = vocab.entries().iter().map(|e| e.name.as_str()).collect();
        Self::new(&names)
    }
}

impl PhraseExtractor for NgramExtractor {
    fn extract(&self, prompt: &str) -> Vec<String> {
        let w = words(prompt);
        let mut out: Vec<String> = Vec::new();
        let mut i = 0;
        while i < w.len() {
            match self.phrases.iter().find(|p| w[i..].starts_with(p)) {
                Some(p) => {
                    let phrase = p.join(" ");
                    if !out.contains(&phrase) {
                        out.push(phrase);
                    }
                    i += p.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Exact vocabulary names map to their own embedding; any other phrase
/// gets a deterministic pseudo-random unit vector.
#[derive(Debug, Clone)]
pub struct ToyPhraseEmbedder {
    vocab: ActionVocabulary,
    seed: u64,
}

impl ToyPhraseEmbedder {
    pub fn new(vocab: ActionVocabulary, seed: u64) -> Self {
        Self { vocab, seed }
    }
}

impl PhraseEmbedder for ToyPhraseEmbedder {
    fn embed(&self, phrase: &str) -> Vec<f64> {
        let key = words(phrase).join(" ");
        if let Some(i) = self.vocab.index_of(&key) {
            return self.vocab.entries()[i].embedding.clone();
        }
        let mut rng = Rng::new(derive_seed(self.seed, &format!("phrase:{key}")));
        let mut v = rng.normals(self.vocab.dims());
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// For every phrase, picks the most similar category (lowest index on
/// ties); matches below `threshold` are dropped; accepted similarities are
/// divided by the largest accepted one.
pub fn build_indicator(
    phrases: &[String],
    vocab: &ActionVocabulary,
    embedder: &dyn PhraseEmbedder,
    threshold: f64,
) -> ActionIndicator {
    let mut raw = vec![0.0f64; vocab.len()];
    for phrase in phrases {
        let e = embedder.embed(phrase);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, entry) in vocab.entries().iter().enumerate() {
            let c = cosine(&e, &entry.embedding);
            if c > best.1 {
                best = (i, c);
            }
        }
        if best.1 >= threshold {
            raw[best.0] = raw[best.0].max(best.1);
        }
    }
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        raw.iter_mut().for_each(|v| *v /= max);
    }
    ActionIndicator { values: raw }
}

/// Extraction followed by [`build_indicator`] at the default threshold.
pub fn indicator_for_prompt(
    prompt: &str,
    vocab: &ActionVocabulary,
    extractor: &dyn PhraseExtractor,
    embedder: &dyn PhraseEmbedder,
) -> ActionIndicator {
    build_indicator(&extractor.extract(prompt), vocab, embedder, DEFAULT_THRESHOLD)
}

/// `f(y_a) = y_a W + b` as a `[1, C]` row.
pub fn embed_indicator(y_a: &ActionIndicator, f: &Linear) -> Result<Tensor, NumericError> {
    let v = f.weight.value.shape()[0];
    if y_a.values.len() != v {
        return Err(NumericError::ShapeMismatch(format!(
            "indicator of length {} for an embedding expecting {v}",
            y_a.values.len()
        )));
    }
    f.forward(&Tensor::new(vec![1, v], y_a.values.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn basis(dims: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dims];
        v[i] = 1.0;
        v
    }

    fn three_actions() -> ActionVocabulary {
        ActionVocabulary::new(
            ["run", "jump", "swim"]
                .iter()
                .enumerate()
                .map(|(i, n)| ActionEntry { name: n.to_string(), embedding: basis(8, i) })
                .collect(),
        )
        .unwrap()
    }

    /// Phrase vectors with integer entries whose norms are integers, so the
    /// cosines against the basis actions are exact: 1/2, 1/4, 1/10, 1/5.
    struct Fixed;

    impl PhraseEmbedder for Fixed {
        fn embed(&self, phrase: &str) -> Vec<f64> {
            match phrase {
                "r" => vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0],
                "j" => vec![0.0, 1.0, 0.0, 3.0, 2.0, 1.0, 1.0, 0.0],
                "s" => vec![0.0, 0.0, 1.0, 9.0, 3.0, 3.0, 0.0, 0.0],
                "fifth" => vec![0.0, 1.0, 0.0, 4.0, 2.0, 2.0, 0.0, 0.0],
                "low" => vec![0.0, 1.0, 0.0, 5.0, 1.0, 0.0, 0.0, 0.0],
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn hand_computed_fixture() {
        // Cosines run 0.5, jump 0.25, swim 0.1: swim is dropped and the rest
        // are divided by 0.5.
        let phrases: Vec<String> = ["r", "j", "s"].iter().map(|s| s.to_string()).collect();
        let y = build_indicator(&phrases, &three_actions(), &Fixed, 0.2);
        assert_eq!(y.values, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn threshold_is_inclusive_at_point_two() {
        let vocab = three_actions();
        // 1 / sqrt(27) = 0.192 is dropped; exactly 0.2 is kept.
        assert!(build_indicator(&["low".into()], &vocab, &Fixed, 0.2).is_zero());
        assert_eq!(build_indicator(&["fifth".into()], &vocab, &Fixed, 0.2).values, vec![0.0, 1.0, 0.0]);
        assert!(build_indicator(&[], &vocab, &Fixed, 0.2).is_zero());
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        struct Diag;
        impl PhraseEmbedder for Diag {
            fn embed(&self, _: &str) -> Vec<f64> {
                vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]
            }
        }
        let y = build_indicator(&["p".into()], &three_actions(), &Diag, 0.2);
        assert_eq!(y.values, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn ngram_extraction() {
        let ex = NgramExtractor::new(&["kneading dough", "riding bike", "riding"]);
        assert_eq!(
            ex.extract("A man kneading dough then riding bike, then kneading dough again"),
            vec!["kneading dough".to_string(), "riding bike".to_string()]
        );
        assert!(ex.extract("a quiet lake at dawn").is_empty());
        assert_eq!(ex.extract("riding a horse"), vec!["riding".to_string()]);
    }

    #[test]
    fn synthetic_vocabulary_is_orthonormal() {
        let v = ActionVocabulary::default_synthetic(3);
        assert_eq!(v.len(), 16);
        for a in v.entries() {
            for b in v.entries() {
                let d = dot(&a.embedding, &b.embedding);
                let want = if a.name == b.name { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9);
            }
        }
        assert!(ActionVocabulary::synthetic(&DEFAULT_ACTIONS, 8, 1).is_err());
    }

    #[test]
    fn vocabulary_validation() {
        let e = |n: &str, v: Vec<f64>| ActionEntry { name: n.into(), embedding: v };
        assert!(matches!(ActionVocabulary::new(vec![]), Err(ActionError::EmptyVocabulary)));
        assert!(matches!(
            ActionVocabulary::new(vec![e("a", vec![1.0, 0.0]), e("a", vec![0.0, 1.0])]),
            Err(ActionError::DuplicateName(_))
        ));
        assert!(matches!(ActionVocabulary::new(vec![e("a", vec![0.5, 0.5])]), Err(ActionError::NotUnitNorm { .. })));
        assert!(matches!(
            ActionVocabulary::new(vec![e("a", vec![1.0, 0.0]), e("b", vec![1.0])]),
            Err(ActionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = ActionVocabulary::default_synthetic(5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.json");
        std::fs::write(&p, v.to_json()).unwrap();
        assert_eq!(ActionVocabulary::load(&p).unwrap(), v);
    }

    #[test]
    fn embedding_selects_rows() {
        let mut f = Linear::zeros(3, 3);
        f.weight.value = Tensor::identity(3);
        let y = ActionIndicator { values: vec![0.0, 1.0, 0.0] };
        assert_eq!(embed_indicator(&y, &f).unwrap().data(), &[0.0, 1.0, 0.0]);
        assert!(embed_indicator(&ActionIndicator::zeros(3), &Linear::zeros(3, 3)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(embed_indicator(&ActionIndicator::zeros(2), &f).is_err());
    }

    proptest! {
        #[test]
        fn indicator_invariants(picks in proptest::collection::vec(0usize..20, 0..6), seed in 0u64..50, perm_seed in 0u64..50) {
            let vocab = ActionVocabulary::default_synthetic(seed);
            let emb = ToyPhraseEmbedder::new(vocab.clone(), seed);
            let phrases: Vec<String> = picks
                .iter()
                .map(|&i| DEFAULT_ACTIONS.get(i).map_or_else(|| format!("unknown {i}"), |s| s.to_string()))
                .collect();
            let y = build_indicator(&phrases, &vocab, &emb, 0.2);
            prop_assert!(y.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if !y.is_zero() {
                prop_assert!(y.values.iter().any(|&v| v == 1.0));
            }
            // Duplicating phrases changes nothing.
            let doubled: Vec<String> = phrases.iter().chain(&phrases).cloned().collect();
            prop_assert_eq!(&build_indicator(&doubled, &vocab, &emb, 0.2), &y);
            // Permuting the vocabulary permutes the indicator.
            let mut order: Vec<usize> = (0..vocab.len()).collect();
            let mut rng = Rng::new(perm_seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.int_inclusive(0, i));
            }
            let permuted = ActionVocabulary::new(order.iter().map(|&i| vocab.entries()[i].clone()).collect()).unwrap();
            let yp = build_indicator(&phrases, &permuted, &emb, 0.2);
            for (k, &i) in order.iter().enumerate() {
                prop_assert_eq!(yp.values[k], y.values[i]);
            }
        }
    }
}
