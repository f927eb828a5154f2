mod common;

use common::{neutralization_accuracy, neutralization_model, single_word_corpus, CONTROL_WORD, TREATED_WORD};
use situmatch::embedding::TextEmbedder;
use situmatch::extraction::{swap_all, GenderLexicon};

#[test]
fn corpus_has_exactly_one_gendered_word() {
    for (_, text, treated) in single_word_corpus(200, 1) {
        let words: Vec<&str> = text.split(' ').collect();
        let t = words.iter().filter(|w| **w == TREATED_WORD).count();
        let c = words.iter().filter(|w| **w == CONTROL_WORD).count();
        assert_eq!((t, c), if treated { (1, 0) } else { (0, 1) });
    }
}

#[test]
fn swapping_removes_the_gendered_signal() {
    let swapped = neutralization_accuracy(0.5, 3);
    assert!((0.45..=0.55).contains(&swapped), "aug_prob 0.5 accuracy {swapped}");
    let plain = neutralization_accuracy(0.0, 3);
    assert!(plain > 0.95, "aug_prob 0 accuracy {plain}");
}

#[test]
fn swapped_twins_score_closer_under_the_neutralized_model() {
    let lex = GenderLexicon::builtin();
    let docs = single_word_corpus(300, 77);
    let median_gap = |aug: f64| {
        let (model, emb) = neutralization_model(aug, 5);
        let mut gaps: Vec<f64> = docs
            .iter()
            .map(|(_, t, _)| {
                (model.logit(&emb.embed(t)).unwrap() - model.logit(&emb.embed(&swap_all(t, &lex))).unwrap()).abs()
            })
            .collect();
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    };
    assert!(median_gap(0.5) < median_gap(0.0));
}
