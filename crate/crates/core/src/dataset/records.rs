use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    generate_reason, CausePair, DatasetError, ReasonInferencer, SceneDescriber, SourceSample,
};
use crate::au::{caption_for_clip, AULexicon, EmotionAUTable};
use crate::labels::{EmotionLabel, SentimentClass, SentimentThresholds, TaskKind};
use crate::scheduler::TaskIdentifierMap;

/// One instruction-tuning sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub record_id: String,
    pub task: TaskKind,
    pub task_identifier: String,
    pub query: String,
    pub response: String,
    pub media: Vec<String>,
    pub source_sample_id: String,
    /// Raw sentiment score of the source sample; MSA records only. Acc2 needs it
    /// to tell zero-scored gold items apart from other neutral ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment_score: Option<f64>,
}

/// Serializes cause pairs one per line as `emotion_utt -> cause_utt : emotion`.
pub fn format_cause_pairs(pairs: &[CausePair]) -> String {
    pairs
        .iter()
        .map(|p| {
            format!(
                "{} -> {} : {}",
                p.emotion_utterance_id, p.cause_utterance_id, p.emotion
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses one `emotion_utt -> cause_utt : emotion` line.
fn parse_pair_line(line: &str) -> Option<CausePair> {
    let (emotion_utt, rest) = line.split_once("->")?;
    let (cause_utt, emotion) = rest.split_once(':')?;
    let (emotion_utt, cause_utt) = (emotion_utt.trim(), cause_utt.trim());
    if !super::is_utterance_id(emotion_utt) || !super::is_utterance_id(cause_utt) {
        return None;
    }
    Some(CausePair {
        emotion_utterance_id: emotion_utt.to_string(),
        cause_utterance_id: cause_utt.to_string(),
        emotion: emotion.trim().trim_end_matches('.').parse().ok()?,
    })
}

/// Parses every well-formed pair line of `text`. Returns the pairs and the
/// number of non-blank lines that did not match the grammar.
pub fn parse_cause_pairs(text: &str) -> (Vec<CausePair>, usize) {
    let mut pairs = Vec::new();
    let mut bad = 0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match parse_pair_line(line) {
            Some(p) => pairs.push(p),
            None => bad += 1,
        }
    }
    (pairs, bad)
}

pub struct ReasonGenerator<'a> {
    pub describer: &'a dyn SceneDescriber,
    pub reasoner: &'a dyn ReasonInferencer,
}

/// Everything `build_records` needs besides the sample itself.
pub struct BuildContext<'a> {
    pub table: &'a EmotionAUTable,
    pub lexicon: &'a AULexicon,
    pub presence_threshold: f64,
    pub thresholds: SentimentThresholds,
    pub identifiers: &'a TaskIdentifierMap,
    pub reason: Option<ReasonGenerator<'a>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTask {
    pub sample_id: String,
    pub task: TaskKind,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub records: Vec<TaskRecord>,
    pub skipped: Vec<SkippedTask>,
}

fn quoted_utterance(sample: &SourceSample) -> String {
    format!("Utterance: \"{}\"", sample.utterance_text.trim())
}

fn emotion_choices() -> String {
    EmotionLabel::ALL.map(|e| e.as_str()).join(", ")
}

fn query_for(task: TaskKind, sample: &SourceSample) -> String {
    match task {
        TaskKind::Msa => format!(
            "{} What is the sentiment of the speaker? Answer with negative, neutral or positive.",
            quoted_utterance(sample)
        ),
        TaskKind::Er => format!(
            "{} Which emotion does the speaker express? Answer with one of {}.",
            quoted_utterance(sample),
            emotion_choices()
        ),
        TaskKind::Fer => {
            "Describe the facial expression of the most expressive person in the clip.".to_string()
        }
        TaskKind::Eri => format!(
            "{} Explain why the speaker feels this way.",
            quoted_utterance(sample)
        ),
        TaskKind::Ecpe => {
            let mut q = String::from("Dialogue:\n");
            for turn in &sample.dialogue_context {
                q.push_str(&format!(
                    "{} {}: {}\n",
                    turn.utterance_id,
                    turn.speaker,
                    turn.text.trim()
                ));
            }
            q.push_str(
                "List each emotion utterance with its cause utterance, one per line, as emotion_utterance -> cause_utterance : emotion.",
            );
            q
        }
    }
}

fn response_for(
    task: TaskKind,
    sample: &SourceSample,
    ctx: &BuildContext<'_>,
) -> Result<String, DatasetError> {
    // Callers check satisfiability first, so the unwraps below only see present fields.
    Ok(match task {
        TaskKind::Msa => ctx
            .thresholds
            .classify(sample.sentiment_score.expect("satisfiable MSA"))
            .to_string(),
        TaskKind::Er => sample.emotion_label.expect("satisfiable ER").to_string(),
        TaskKind::Fer => {
            let tracks = sample.au_tracks.as_deref().unwrap_or_default();
            let emotion = sample.emotion_label.expect("satisfiable FER");
            let (peak, caption) = caption_for_clip(
                tracks,
                emotion,
                ctx.table,
                ctx.lexicon,
                ctx.presence_threshold,
            )
            .map_err(|source| DatasetError::Au {
                sample_id: sample.sample_id.clone(),
                source,
            })?;
            log::debug!(
                "{}: peak frame {} of `{}` (score {:.3})",
                sample.sample_id,
                peak.frame_index,
                peak.character_id,
                peak.score
            );
            caption
        }
        TaskKind::Eri => {
            let gen = ctx.reason.as_ref().expect("satisfiable ERI");
            generate_reason(sample, gen.describer, gen.reasoner)?
        }
        TaskKind::Ecpe => format_cause_pairs(sample.cause_pairs.as_deref().unwrap_or_default()),
    })
}

/// One record per requested task the sample can support. Unsupported tasks
/// are skipped with a logged reason.
pub fn build_records(
    sample: &SourceSample,
    tasks: &BTreeSet<TaskKind>,
    ctx: &BuildContext<'_>,
) -> Result<BuildOutcome, DatasetError> {
    let mut outcome = BuildOutcome::default();
    for &task in tasks {
        if let Err(reason) = sample.satisfies(task, ctx.reason.is_some()) {
            log::info!("skipping {task} for `{}`: {reason}", sample.sample_id);
            outcome.skipped.push(SkippedTask {
                sample_id: sample.sample_id.clone(),
                task,
                reason,
            });
            continue;
        }
        let identifier = ctx
            .identifiers
            .identifier(task)
            .expect("identifier map covers every task");
        outcome.records.push(TaskRecord {
            record_id: format!(
                "{}:{}",
                sample.sample_id,
                task.as_str().to_ascii_lowercase()
            ),
            task,
            task_identifier: identifier.to_string(),
            query: query_for(task, sample),
            response: response_for(task, sample, ctx)?,
            media: sample.media_ref.iter().cloned().collect(),
            source_sample_id: sample.sample_id.clone(),
            sentiment_score: (task == TaskKind::Msa)
                .then_some(sample.sentiment_score)
                .flatten(),
        });
    }
    Ok(outcome)
}

/// Builds every sample in parallel; output order follows input order.
pub fn build_corpus(
    samples: &[SourceSample],
    tasks: &BTreeSet<TaskKind>,
    ctx: &BuildContext<'_>,
) -> Result<BuildOutcome, DatasetError> {
    let per_sample: Vec<BuildOutcome> = samples
        .par_iter()
        .map(|s| build_records(s, tasks, ctx))
        .collect::<Result<_, _>>()?;
    let mut merged = BuildOutcome::default();
    for o in per_sample {
        merged.records.extend(o.records);
        merged.skipped.extend(o.skipped);
    }
    Ok(merged)
}

/// Invariant violations of a record, empty when well formed.
pub fn validate_record(record: &TaskRecord, identifiers: &TaskIdentifierMap) -> Vec<String> {
    let mut v = Vec::new();
    if record.record_id.trim().is_empty() {
        v.push("empty record_id".to_string());
    }
    if record.source_sample_id.trim().is_empty() {
        v.push("empty source_sample_id".to_string());
    }
    if record.query.trim().is_empty() {
        v.push("empty query".to_string());
    }
    match identifiers.identifier(record.task) {
        Ok(expected) if expected != record.task_identifier => v.push(format!(
            "task identifier `{}` does not match task {} (expected `{expected}`)",
            record.task_identifier, record.task
        )),
        Ok(_) => {}
        Err(e) => v.push(e.to_string()),
    }
    let response = record.response.trim();
    if response.is_empty() {
        v.push("empty response".to_string());
    }
    if record.task.is_vision_conditioned() && record.media.is_empty() {
        v.push(format!("{} record without media", record.task));
    }
    match record.task {
        TaskKind::Msa if !response.is_empty() => {
            if response.parse::<SentimentClass>().is_err() {
                v.push(format!(
                    "MSA response `{response}` is not a sentiment class"
                ));
            }
        }
        TaskKind::Er if !response.is_empty() => {
            if response.parse::<EmotionLabel>().is_err() {
                v.push(format!("ER response `{response}` is not an emotion label"));
            }
        }
        TaskKind::Ecpe if !response.is_empty() => {
            let (_, bad) = parse_cause_pairs(response);
            if bad > 0 {
                v.push(format!(
                    "ECPE response has {bad} line(s) outside the pair grammar"
                ));
            }
        }
        _ => {}
    }
    if record.sentiment_score.is_some() && record.task != TaskKind::Msa {
        v.push("sentiment_score set on a non-MSA record".to_string());
    }
    v
}

pub fn write_records<W: Write>(mut out: W, records: &[TaskRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_records(path: &Path) -> Result<Vec<TaskRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DatasetError::RecordFormat {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::au::{common_aus, select_final_peak, AUFrame, AUTrack};
    use crate::dataset::{DialogueTurn, MockReasonInferencer, MockSceneDescriber};

    struct Fixture {
        table: EmotionAUTable,
        lexicon: AULexicon,
        ids: TaskIdentifierMap,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                table: EmotionAUTable::default(),
                lexicon: AULexicon::default(),
                ids: TaskIdentifierMap::default(),
            }
        }

        fn ctx(&self) -> BuildContext<'_> {
            BuildContext {
                table: &self.table,
                lexicon: &self.lexicon,
                presence_threshold: 0.0,
                thresholds: SentimentThresholds::default(),
                identifiers: &self.ids,
                reason: Some(ReasonGenerator {
                    describer: &MockSceneDescriber,
                    reasoner: &MockReasonInferencer,
                }),
            }
        }
    }

    fn tasks(t: &[TaskKind]) -> BTreeSet<TaskKind> {
        t.iter().copied().collect()
    }

    #[test]
    fn negative_score_gives_negative_class() {
        let fx = Fixture::new();
        let mut s = SourceSample::new("s1", Some("a.mp4".into()));
        s.sentiment_score = Some(-1.2);
        let out = build_records(&s, &tasks(&[TaskKind::Msa]), &fx.ctx()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].response, "negative");
        assert_eq!(out.records[0].task_identifier, "<sentiment>");
        assert_eq!(out.records[0].sentiment_score, Some(-1.2));
    }

    #[test]
    fn fer_caption_uses_final_peak_intersection() {
        let fx = Fixture::new();
        let tracks = vec![
            AUTrack::new(
                "1",
                vec![
                    AUFrame::new(0, [("AU01", 0.5), ("AU02", 0.1)]),
                    AUFrame::new(
                        1,
                        [("AU01", 2.0), ("AU05", 1.5), ("AU12", 1.0), ("AU26", 0.0)],
                    ),
                ],
            )
            .unwrap(),
            AUTrack::new("0", vec![AUFrame::new(0, [("AU06", 1.0), ("AU26", 1.0)])]).unwrap(),
        ];
        let mut s = SourceSample::new("s2", Some("b.mp4".into()));
        s.emotion_label = Some(EmotionLabel::Surprise);
        s.au_tracks = Some(tracks.clone());

        // Oracle composed from the AU operations directly.
        let peak = select_final_peak(&tracks).unwrap();
        assert_eq!((peak.character_id.as_str(), peak.frame_index), ("1", 1));
        let aus = common_aus(&tracks[0].frames[1], EmotionLabel::Surprise, &fx.table, 0.0).unwrap();
        let expected: Vec<&str> = aus.iter().map(|a| fx.lexicon.phrases[a].as_str()).collect();
        assert_eq!(expected, ["inner brows raised", "upper lids raised"]);

        let out = build_records(&s, &tasks(&[TaskKind::Fer]), &fx.ctx()).unwrap();
        assert_eq!(out.records[0].response, expected.join(", "));
    }

    #[test]
    fn unsatisfiable_task_is_skipped() {
        let fx = Fixture::new();
        let mut s = SourceSample::new("s3", Some("c.mp4".into()));
        s.emotion_label = Some(EmotionLabel::Anger);
        let out = build_records(&s, &tasks(&[TaskKind::Ecpe]), &fx.ctx()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].reason, "no cause pairs");
    }

    #[test]
    fn eri_needs_generator() {
        let fx = Fixture::new();
        let mut s = SourceSample::new("s4", Some("d.mp4".into()));
        s.emotion_label = Some(EmotionLabel::Joy);
        let mut ctx = fx.ctx();
        ctx.reason = None;
        let out = build_records(&s, &tasks(&[TaskKind::Eri]), &ctx).unwrap();
        assert!(out.records.is_empty());
        let out = build_records(&s, &tasks(&[TaskKind::Eri]), &fx.ctx()).unwrap();
        assert!(out.records[0].response.contains("joy"));
    }

    #[test]
    fn ecpe_roundtrips_through_grammar() {
        let fx = Fixture::new();
        let mut s = SourceSample::new("s5", None);
        s.dialogue_context = ["u1", "u2", "u3"]
            .iter()
            .map(|id| DialogueTurn {
                utterance_id: id.to_string(),
                speaker: "A".into(),
                text: "...".into(),
            })
            .collect();
        let pairs = vec![
            CausePair {
                emotion_utterance_id: "u3".into(),
                cause_utterance_id: "u1".into(),
                emotion: EmotionLabel::Anger,
            },
            CausePair {
                emotion_utterance_id: "u3".into(),
                cause_utterance_id: "u3".into(),
                emotion: EmotionLabel::Anger,
            },
        ];
        s.cause_pairs = Some(pairs.clone());
        let out = build_records(&s, &tasks(&[TaskKind::Ecpe]), &fx.ctx()).unwrap();
        let r = &out.records[0];
        assert_eq!(r.response, "u3 -> u1 : anger\nu3 -> u3 : anger");
        assert_eq!(parse_cause_pairs(&r.response), (pairs, 0));
        assert!(validate_record(r, &fx.ids).is_empty());
    }

    #[test]
    fn validation_catches_mismatches() {
        let ids = TaskIdentifierMap::default();
        let ok = TaskRecord {
            record_id: "s:msa".into(),
            task: TaskKind::Msa,
            task_identifier: "<sentiment>".into(),
            query: "q".into(),
            response: "positive".into(),
            media: vec!["m.mp4".into()],
            source_sample_id: "s".into(),
            sentiment_score: Some(1.0),
        };
        assert!(validate_record(&ok, &ids).is_empty());

        let er = TaskRecord {
            task: TaskKind::Er,
            response: "joy".into(),
            sentiment_score: None,
            ..ok.clone()
        };
        let v = validate_record(&er, &ids);
        assert_eq!(v.len(), 1);
        assert!(
            v[0].contains("<sentiment>") && v[0].contains("<emotion>"),
            "{v:?}"
        );

        let fer = TaskRecord {
            task: TaskKind::Fer,
            task_identifier: "<caption>".into(),
            response: "cheeks raised".into(),
            media: vec![],
            sentiment_score: None,
            ..ok
        };
        assert_eq!(validate_record(&fer, &ids), ["FER record without media"]);
    }

    #[test]
    fn pair_parser_is_lenient_about_spacing_only() {
        let (pairs, bad) =
            parse_cause_pairs("u3->u1:Anger\n\n  u2 -> u2 : joy.  \nu1 -> : joy\nrandom text");
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].emotion, EmotionLabel::Anger);
        assert_eq!(bad, 2);
    }
}
