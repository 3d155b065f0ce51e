//! Action phrases from a scene prompt mapped onto the vocabulary: argmax
//! category, a 0.2 similarity floor and divide-by-max normalization.

use videostudio::action::{indicator_for_prompt, ActionVocabulary, NgramExtractor, PhraseExtractor, ToyPhraseEmbedder};

fn main() {
    let vocab = ActionVocabulary::default_synthetic(11);
    let extractor = NgramExtractor::for_vocabulary(&vocab);
    let embedder = ToyPhraseEmbedder::new(vocab.clone(), 11);
    for prompt in [
        "a young man is kneading dough and cooking",
        "the young man is walking the dog through a park",
        "an empty street at night",
    ] {
        let y_a = indicator_for_prompt(prompt, &vocab, &extractor, &embedder);
        let active: Vec<String> = y_a
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| format!("{} = {v:.3}", vocab.entries()[i].name))
            .collect();
        println!("{prompt:?}\n  phrases {:?}\n  indicator [{}]", extractor.extract(prompt), active.join(", "));
    }
}
