//! Library-level checks on the toy corpus.

mod common;

use std::collections::BTreeMap;

use affect_tune::au::{AULexicon, EmotionAUTable};
use affect_tune::dataset::{build_corpus, ingest_corpus, BuildContext};
use affect_tune::scheduler::TaskIdentifierMap;
use affect_tune::TaskKind;

#[test]
fn fer_captions_follow_peak_frames() {
    let report = ingest_corpus(&common::fixture("manifest.toml")).unwrap();
    assert!(report.rejections.is_empty(), "{:?}", report.rejections);
    let (table, lexicon, identifiers) = (
        EmotionAUTable::default(),
        AULexicon::default(),
        TaskIdentifierMap::default(),
    );
    let ctx = BuildContext {
        table: &table,
        lexicon: &lexicon,
        presence_threshold: 0.0,
        thresholds: Default::default(),
        identifiers: &identifiers,
        reason: None,
    };
    let built = build_corpus(&report.samples, &[TaskKind::Fer].into(), &ctx).unwrap();
    let captions: BTreeMap<&str, &str> = built
        .records
        .iter()
        .filter(|r| r.task == TaskKind::Fer)
        .map(|r| (r.source_sample_id.as_str(), r.response.as_str()))
        .collect();
    let neutral = lexicon.neutral_caption.clone();
    let expected = [
        ("meld_05", "lip corners pulled up"),
        ("meld_06", "brows lowered, lids tightened, lips tightened"),
        (
            "meld_07",
            "inner brows raised, outer brows raised, upper lids raised, jaw dropped",
        ),
        ("meld_09", neutral.as_str()),
        (
            "mosei_01",
            "inner brows raised, brows lowered, lip corners pulled down",
        ),
        ("mosei_02", "cheeks raised, lip corners pulled up"),
    ];
    assert_eq!(captions, expected.into_iter().collect());
}
