//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use affect_tune::au::{
    common_aus, find_peak_frame, select_final_peak, AUFrame, AUTrack, EmotionAUTable,
};
use affect_tune::dataset::{dataset_stats, read_records, validate_record, CausePair, TaskRecord};
use affect_tune::eval::{
    acc2, accuracy, ecpe_scores, weighted_f1, Acc2Scheme, EvalError, MetricReport,
};
use affect_tune::model::{
    apply_adapters, fuse, project, train_stage, vocabulary_for, AdapterTarget, EncoderConfig,
    MediaCache, ModelConfig, OptimConfig, ToyModel, VisualTokens,
};
use affect_tune::scheduler::{
    assign_stream, default_plans, remaining_pool, stream_task_counts, SamplingMode, ScheduleConfig,
    TaskIdentifierMap, TrainingItem,
};
use affect_tune::{EmotionLabel, SentimentClass, TaskKind};
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cli, config, manifest_events, ok};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const OPENFACE_AUS: [&str; 17] = [
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12", "AU14", "AU15", "AU17",
    "AU20", "AU23", "AU25", "AU26", "AU45",
];

fn random_intensity(rng: &mut ChaCha8Rng, coarse: bool) -> f64 {
    if coarse {
        // Half-unit grid: exact sums and frequent ties.
        f64::from(rng.random_range(0..=10u32)) * 0.5
    } else {
        rng.random_range(0.0..5.0)
    }
}

fn random_tracks(rng: &mut ChaCha8Rng) -> Vec<AUTrack> {
    let coarse = rng.random_bool(0.5);
    let n_chars = rng.random_range(1..=5);
    let mut ids: Vec<String> = (0..n_chars)
        .map(|i| format!("c{}", rng.random_range(0..50) * 10 + i))
        .collect();
    ids.shuffle(rng);
    (0..n_chars)
        .map(|c| {
            let n_aus = rng.random_range(1..=17);
            let aus: Vec<&str> = OPENFACE_AUS.choose_multiple(rng, n_aus).copied().collect();
            let n_frames = if rng.random_bool(0.05) {
                0
            } else {
                rng.random_range(1..=100)
            };
            let mut index = rng.random_range(0..5u64);
            let frames = (0..n_frames)
                .map(|_| {
                    index += rng.random_range(1..4);
                    AUFrame::new(
                        index,
                        aus.iter()
                            .map(|a| (a.to_string(), random_intensity(rng, coarse))),
                    )
                })
                .collect();
            AUTrack::new(ids[c].clone(), frames).unwrap()
        })
        .collect()
}

/// Exhaustive scan over (character, frame) pairs.
fn brute_force_peak(tracks: &[&AUTrack]) -> Option<(String, u64, f64)> {
    let mut best: Option<(String, u64, f64)> = None;
    for t in tracks {
        for f in &t.frames {
            let mut score = 0.0;
            for v in f.au_intensities.values() {
                score += v;
            }
            let take = match &best {
                None => true,
                Some((c, i, s)) => {
                    score > *s
                        || (score == *s
                            && (t.character_id.as_str(), f.frame_index) < (c.as_str(), *i))
                }
            };
            if take {
                best = Some((t.character_id.clone(), f.frame_index, score));
            }
        }
    }
    best
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut frames = 0;
    for case in 0..1000 {
        let tracks = random_tracks(&mut rng);
        frames += tracks.iter().map(|t| t.frames.len()).sum::<usize>();
        for t in &tracks {
            let expected = brute_force_peak(&[t]);
            match (find_peak_frame(t), expected) {
                (Ok(p), Some((c, i, s))) => ensure(
                    p.character_id == c && p.frame_index == i && p.score == s,
                    || format!("case {case}: per-track peak {p:?} vs ({c}, {i}, {s})"),
                )?,
                (Err(_), None) => {}
                (got, want) => return Err(format!("case {case}: per-track {got:?} vs {want:?}")),
            }
        }
        let all: Vec<&AUTrack> = tracks.iter().collect();
        match (select_final_peak(&tracks), brute_force_peak(&all)) {
            (Ok(p), Some((c, i, s))) => ensure(
                p.character_id == c && p.frame_index == i && p.score == s,
                || format!("case {case}: final peak {p:?} vs ({c}, {i}, {s})"),
            )?,
            (Err(_), None) => {}
            (got, want) => return Err(format!("case {case}: final {got:?} vs {want:?}")),
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("1000 clips, {frames} frames, {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let default_table = EmotionAUTable::default();
    for case in 0..1000 {
        let table = if case % 2 == 0 {
            default_table.clone()
        } else {
            EmotionAUTable::from_entries(EmotionLabel::ALL.map(|e| {
                let k = rng.random_range(0..=6);
                (
                    e,
                    OPENFACE_AUS
                        .choose_multiple(&mut rng, k)
                        .map(|s| s.to_string())
                        .collect::<Vec<_>>(),
                )
            }))
        };
        let n = rng.random_range(0..=17);
        let frame = AUFrame::new(
            case as u64,
            OPENFACE_AUS
                .choose_multiple(&mut rng, n)
                .map(|a| (a.to_string(), f64::from(rng.random_range(0..=8u32)) * 0.25)),
        );
        let emotion = EmotionLabel::ALL[rng.random_range(0..7)];
        let mut thresholds: Vec<f64> = (0..4)
            .map(|_| f64::from(rng.random_range(0..=8u32)) * 0.25)
            .collect();
        thresholds.sort_by(f64::total_cmp);
        let expected_aus = table.aus_for(emotion).unwrap();
        let mut previous: Option<BTreeSet<String>> = None;
        for &t in &thresholds {
            let got = common_aus(&frame, emotion, &table, t).unwrap();
            let active: BTreeSet<String> = frame
                .au_intensities
                .iter()
                .filter(|(_, v)| **v > t)
                .map(|(k, _)| k.clone())
                .collect();
            let oracle: BTreeSet<String> = active.intersection(expected_aus).cloned().collect();
            ensure(got == oracle, || {
                format!("case {case}: {got:?} vs {oracle:?}")
            })?;
            ensure(
                got.is_subset(&active) && got.is_subset(expected_aus),
                || format!("case {case}: not a subset"),
            )?;
            if let Some(prev) = &previous {
                ensure(got.is_subset(prev), || {
                    format!("case {case}: not monotone in threshold")
                })?;
            }
            previous = Some(got);
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("1000 cases x 4 thresholds, {elapsed:.2?}"))
}

fn criterion_3() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        ok(cli(d.path(), &["-c", &config("run.toml"), "build-dataset"]));
    }
    let a = std::fs::read(dirs[0].path().join("records.jsonl")).unwrap();
    let b = std::fs::read(dirs[1].path().join("records.jsonl")).unwrap();
    ensure(a == b, || "record files differ between builds".into())?;
    let records = read_records(&dirs[0].path().join("records.jsonl")).map_err(|e| e.to_string())?;
    let ids = TaskIdentifierMap::default();
    for r in &records {
        let v = validate_record(r, &ids);
        ensure(v.is_empty(), || format!("{}: {v:?}", r.record_id))?;
    }
    let stats = dataset_stats(&records);
    let authored: BTreeMap<TaskKind, usize> = [
        (TaskKind::Msa, 9),
        (TaskKind::Er, 10),
        (TaskKind::Fer, 6),
        (TaskKind::Eri, 10),
        (TaskKind::Ecpe, 3),
    ]
    .into();
    ensure(
        stats.per_task == authored && stats.distinct_samples == 12,
        || format!("{stats:?}"),
    )?;
    ensure(stats.shape_violations().is_empty(), || {
        format!("{:?}", stats.shape_violations())
    })?;
    Ok(format!(
        "{} records, byte-identical, all valid, task matrix exact",
        records.len()
    ))
}

fn synthetic_pool() -> Vec<TaskRecord> {
    let ids = TaskIdentifierMap::default();
    // 30,000 records; MSA is large enough to leave some for stage 2.
    [
        (TaskKind::Msa, 8000),
        (TaskKind::Fer, 6000),
        (TaskKind::Er, 6000),
        (TaskKind::Eri, 5000),
        (TaskKind::Ecpe, 5000),
    ]
    .into_iter()
    .flat_map(|(task, n)| (0..n).map(move |i| (task, i)))
    .map(|(task, i)| TaskRecord {
        record_id: format!("s{i:05}:{}", task.as_str().to_ascii_lowercase()),
        task,
        task_identifier: ids.identifier(task).unwrap().to_string(),
        query: "q".into(),
        response: "r".into(),
        media: vec!["m.png".into()],
        source_sample_id: format!("s{i:05}"),
        sentiment_score: None,
    })
    .collect()
}

fn criterion_4() -> Outcome {
    let pool = synthetic_pool();
    assert_eq!(pool.len(), 30_000);
    let plans = default_plans(&ScheduleConfig::default(), 42, None).map_err(|e| e.to_string())?;
    let run = || -> Result<(Vec<TrainingItem>, Vec<TrainingItem>), String> {
        let s1 =
            assign_stream(&pool, &plans[0].plan, SamplingMode::Quota).map_err(|e| e.to_string())?;
        let consumed: BTreeSet<String> = s1.iter().map(|i| i.record.record_id.clone()).collect();
        let rest = remaining_pool(&pool, &consumed);
        let s2 =
            assign_stream(&rest, &plans[1].plan, SamplingMode::Quota).map_err(|e| e.to_string())?;
        Ok((s1, s2))
    };
    let (s1, s2) = run()?;
    let c1 = stream_task_counts(&s1);
    let want: BTreeMap<TaskKind, usize> = [
        (TaskKind::Msa, 6000),
        (TaskKind::Fer, 6000),
        (TaskKind::Er, 3000),
    ]
    .into();
    ensure(c1 == want, || format!("stage 1 counts {c1:?}"))?;
    let c2 = stream_task_counts(&s2);
    ensure(!c2.contains_key(&TaskKind::Fer), || {
        format!("stage 2 has FER: {c2:?}")
    })?;
    ensure(
        [TaskKind::Msa, TaskKind::Er, TaskKind::Eri, TaskKind::Ecpe]
            .iter()
            .all(|t| c2.contains_key(t)),
        || format!("stage 2 counts {c2:?}"),
    )?;
    let (r1, r2) = run()?;
    let bytes = |s: &[TrainingItem]| serde_json::to_vec(s).unwrap();
    ensure(bytes(&s1) == bytes(&r1) && bytes(&s2) == bytes(&r2), || {
        "streams differ under one seed".into()
    })?;
    Ok(format!("stage 1 {c1:?}; stage 2 {c2:?}; reproducible"))
}

fn toy_records() -> Vec<TaskRecord> {
    let dir = tempfile::tempdir().unwrap();
    ok(cli(
        dir.path(),
        &["-c", &config("run.toml"), "build-dataset"],
    ));
    read_records(&dir.path().join("records.jsonl")).unwrap()
}

fn toy_config(d_vision: usize, d_model: usize) -> ModelConfig {
    ModelConfig {
        d_vision,
        d_model,
        n_layers: 2,
        d_ff: 2 * d_model,
        encoder: EncoderConfig {
            image_size: 32,
            patch_size: 16,
            max_frames: 2,
        },
        max_prompt_tokens: 64,
        max_response_tokens: 32,
        freeze_vision: true,
        seed: 5,
    }
}

fn criterion_5(records: &[TaskRecord]) -> Outcome {
    let ids = TaskIdentifierMap::default();
    let vocab = vocabulary_for(records, &ids);
    let wide =
        ToyModel::new(toy_config(64, 64), vocab.clone(), ids.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let rows = rng.random_range(1..=8);
        let tokens = Array2::from_shape_simple_fn((rows, 64), || rng.random_range(-3.0..3.0));
        let tv = VisualTokens::new(tokens.clone(), "random").unwrap();
        let got = project(&tv, &wide).map_err(|e| e.to_string())?;
        for i in 0..rows {
            for j in 0..64 {
                let mut acc = 0.0;
                for k in 0..64 {
                    acc += tokens[[i, k]] * wide.projector[[k, j]];
                }
                worst = worst.max((acc - got.tokens[[i, j]]).abs());
            }
        }
        let text_len = rng.random_range(1..=10);
        let ids: Vec<usize> = (0..text_len)
            .map(|_| rng.random_range(0..vocab.len()))
            .collect();
        let text = wide.embed_text(&ids).map_err(|e| e.to_string())?;
        let fused = fuse(Some(&got), &text).map_err(|e| e.to_string())?;
        let bit_equal = |a: ndarray::ArrayView2<f64>, b: ndarray::ArrayView2<f64>| {
            a.dim() == b.dim()
                && a.iter()
                    .zip(b.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        ensure(fused.boundary == rows, || "boundary".into())?;
        ensure(
            bit_equal(fused.visual(), got.tokens.view())
                && bit_equal(fused.text(), text.embedded.view()),
            || "fuse does not round-trip".into(),
        )?;
    }
    ensure(worst <= 1e-9, || format!("projection error {worst:e}"))?;

    // Gradient of the training loss with respect to the projector, on toy dims.
    let small = ToyModel::new(toy_config(4, 8), vocab, TaskIdentifierMap::default())
        .map_err(|e| e.to_string())?;
    let small = apply_adapters(small, 2, 4.0, &AdapterTarget::ALL).map_err(|e| e.to_string())?;
    let record = records
        .iter()
        .find(|r| r.record_id == "mosei_02:er")
        .unwrap();
    let ex = small
        .example(record, &mut MediaCache::default())
        .map_err(|e| e.to_string())?;
    let (_, grads) = small.loss_and_grads(&ex).map_err(|e| e.to_string())?;
    let analytic = &grads["projector"];
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for i in 0..4 {
        for j in 0..8 {
            let bumped = |delta: f64| {
                let mut m = small.clone();
                m.projector[[i, j]] += delta;
                m.loss(&ex).unwrap()
            };
            let numeric = (bumped(h) - bumped(-h)) / (2.0 * h);
            let a = analytic[[i, j]];
            let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    ensure(max_rel < 1e-4, || {
        format!("gradient relative error {max_rel:e}")
    })?;
    Ok(format!(
        "50 random 64-dim projections (max abs err {worst:.1e}), fuse bit-exact, W_v grad max rel err {max_rel:.1e}"
    ))
}

fn criterion_6(records: &[TaskRecord]) -> Outcome {
    let ids = TaskIdentifierMap::default();
    let vocab = vocabulary_for(records, &ids);
    let base = ToyModel::new(toy_config(8, 32), vocab, ids).map_err(|e| e.to_string())?;
    let targets = AdapterTarget::ALL;
    let mut model = apply_adapters(base, 8, 32.0, &targets).map_err(|e| e.to_string())?;

    let expected_adapter: usize = model
        .adapted_layers()
        .iter()
        .map(|(_, din, dout)| 8 * (din + dout))
        .sum();
    ensure(model.adapter_param_count() == expected_adapter, || {
        "adapter count".into()
    })?;
    // Six per-block targets over two blocks, plus the output head.
    ensure(model.adapted_layers().len() == 2 * 6 + 1, || {
        "adapted layer count".into()
    })?;
    ensure(
        model.trainable_param_count() == expected_adapter + model.projector.len(),
        || "trainable count".into(),
    )?;

    let record = records
        .iter()
        .find(|r| r.record_id == "meld_06:er")
        .unwrap()
        .clone();
    let stream = vec![TrainingItem {
        record,
        stage_id: 1,
        position: 0,
    }];
    let optim = OptimConfig {
        learning_rate: 0.01,
        epochs: 200,
        warmup_ratio: 0.0,
        ..OptimConfig::default()
    };
    let vision_before = model.vision.weight.clone();
    let mut cache = MediaCache::default();
    let ex = model
        .example(&stream[0].record, &mut cache)
        .map_err(|e| e.to_string())?;
    let initial = model.loss(&ex).map_err(|e| e.to_string())?;
    let report = train_stage(&stream, &mut model, &optim, &mut cache).map_err(|e| e.to_string())?;
    let last = model.loss(&ex).map_err(|e| e.to_string())?;
    ensure(report.steps.len() == 200, || {
        format!("{} steps", report.steps.len())
    })?;
    ensure(last < 0.1 * initial, || format!("loss {initial} -> {last}"))?;
    let frozen_ok = vision_before
        .iter()
        .zip(&model.vision.weight)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(frozen_ok, || "vision weights changed".into())?;

    // The run manifest records the adapter hyperparameters.
    let out = tempfile::tempdir().unwrap();
    ok(cli(
        out.path(),
        &["-c", &config("run.toml"), "build-dataset"],
    ));
    ok(cli(
        out.path(),
        &["-c", &config("run.toml"), "train", "--stage", "1"],
    ));
    let adapters = &manifest_events(out.path(), "adapters")[0];
    ensure(adapters["rank"] == 8 && adapters["alpha"] == 32.0, || {
        format!("{adapters}")
    })?;
    let layers = adapters["layers"].as_array().unwrap();
    let sum: u64 = layers
        .iter()
        .map(|l| 8 * (l[1].as_u64().unwrap() + l[2].as_u64().unwrap()))
        .sum();
    ensure(adapters["adapter_params"] == sum, || format!("{adapters}"))?;
    let stage = &manifest_events(out.path(), "stage")[0];
    ensure(
        stage["vision_fingerprint_before"] == stage["vision_fingerprint_after"],
        || "CLI run changed the vision weights".into(),
    )?;
    Ok(format!(
        "overfit {initial:.3} -> {last:.2e} in 200 steps; vision byte-identical; {expected_adapter} adapter params (r=8, alpha=32 in manifest)"
    ))
}

fn confusion_weighted_f1(preds: &[Option<EmotionLabel>], gold: &[EmotionLabel]) -> f64 {
    // Rows: gold class; columns: predicted class, with column 7 for parse failures.
    let mut cm = [[0usize; 8]; 7];
    let idx = |e: EmotionLabel| EmotionLabel::ALL.iter().position(|x| *x == e).unwrap();
    for (p, g) in preds.iter().zip(gold) {
        cm[idx(*g)][p.map_or(7, idx)] += 1;
    }
    let n = gold.len() as f64;
    let mut total = 0.0;
    for (c, row) in cm.iter().enumerate() {
        let tp = row[c] as f64;
        let support: usize = row.iter().sum();
        let predicted: usize = (0..7).map(|r| cm[r][c]).sum();
        let f1 = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (support as f64 + predicted as f64)
        };
        total += support as f64 / n * f1;
    }
    total
}

fn binary_confusion_acc2(
    preds: &[Option<SentimentClass>],
    gold: &[f64],
    drop_zero: bool,
) -> Option<f64> {
    // [gold negative?][pred negative? / failure]
    let mut cm = [[0usize; 3]; 2];
    for (p, g) in preds.iter().zip(gold) {
        if drop_zero && *g == 0.0 {
            continue;
        }
        let col = match p {
            None => 2,
            Some(SentimentClass::Negative) => 1,
            Some(_) => 0,
        };
        cm[usize::from(*g < 0.0)][col] += 1;
    }
    let total: usize = cm.iter().flatten().sum();
    (total > 0).then(|| (cm[0][0] + cm[1][1]) as f64 / total as f64)
}

type Pairs = BTreeMap<String, Vec<CausePair>>;

fn exhaustive_ecpe(pred: &Pairs, gold: &Pairs) -> (f64, f64) {
    let flatten = |m: &Pairs| {
        let mut v: Vec<(String, CausePair)> = Vec::new();
        for (conv, pairs) in m {
            for p in pairs {
                if !v.iter().any(|(c, q)| c == conv && q == p) {
                    v.push((conv.clone(), p.clone()));
                }
            }
        }
        v
    };
    let (p, g) = (flatten(pred), flatten(gold));
    let matched = |x: &(String, CausePair), set: &[(String, CausePair)]| {
        set.iter().any(|y| {
            x.0 == y.0
                && x.1.emotion_utterance_id == y.1.emotion_utterance_id
                && x.1.cause_utterance_id == y.1.cause_utterance_id
                && x.1.emotion == y.1.emotion
        })
    };
    let f1_of = |p: &[&(String, CausePair)], g: &[&(String, CausePair)]| {
        let tp = p
            .iter()
            .filter(|x| g.iter().any(|y| matched(x, std::slice::from_ref(*y))))
            .count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            let (prec, rec) = (tp / p.len() as f64, tp / g.len() as f64);
            2.0 * prec * rec / (prec + rec)
        }
    };
    let all_p: Vec<_> = p.iter().collect();
    let all_g: Vec<_> = g.iter().collect();
    let micro = f1_of(&all_p, &all_g);
    let mut weighted = 0.0;
    for e in EmotionLabel::ALL {
        let pe: Vec<_> = p.iter().filter(|x| x.1.emotion == e).collect();
        let ge: Vec<_> = g.iter().filter(|x| x.1.emotion == e).collect();
        weighted += ge.len() as f64 / g.len() as f64 * f1_of(&pe, &ge);
    }
    (micro, weighted)
}

fn random_pair(rng: &mut ChaCha8Rng) -> CausePair {
    CausePair {
        emotion_utterance_id: format!("u{}", rng.random_range(1..=6)),
        cause_utterance_id: format!("u{}", rng.random_range(1..=6)),
        emotion: EmotionLabel::ALL[rng.random_range(0..7)],
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut differing = 0;
    for bundle in 0..500 {
        // ER
        let n = rng.random_range(1..=60);
        let gold: Vec<EmotionLabel> = (0..n)
            .map(|_| EmotionLabel::ALL[rng.random_range(0..7)])
            .collect();
        let preds: Vec<Option<EmotionLabel>> = gold
            .iter()
            .map(|g| match rng.random_range(0..10) {
                0 => None,
                1..=5 => Some(*g),
                _ => Some(EmotionLabel::ALL[rng.random_range(0..7)]),
            })
            .collect();
        let hits = preds
            .iter()
            .zip(&gold)
            .filter(|(p, g)| **p == Some(**g))
            .count();
        let acc = accuracy(&preds, &gold).map_err(|e| e.to_string())?;
        ensure(close(acc, hits as f64 / n as f64), || {
            format!("bundle {bundle}: accuracy")
        })?;
        let wf1 = weighted_f1(&preds, &gold).map_err(|e| e.to_string())?;
        let oracle = confusion_weighted_f1(&preds, &gold);
        ensure(close(wf1, oracle), || {
            format!("bundle {bundle}: weighted F1 {wf1} vs {oracle}")
        })?;
        ensure((wf1 == 1.0) == (hits == n), || {
            format!("bundle {bundle}: F1 = 1 iff exact")
        })?;

        // MSA with zero-scored gold items
        let m = rng.random_range(1..=40);
        let with_zeros = bundle % 4 != 0;
        let scores: Vec<f64> = (0..m)
            .map(|_| {
                if with_zeros && rng.random_bool(0.25) {
                    0.0
                } else {
                    let s = f64::from(rng.random_range(-12..=12i32)) * 0.25;
                    if s == 0.0 {
                        0.5
                    } else {
                        s
                    }
                }
            })
            .collect();
        let spreds: Vec<Option<SentimentClass>> = (0..m)
            .map(|_| match rng.random_range(0..8) {
                0 => None,
                k => Some(SentimentClass::ALL[(k as usize) % 3]),
            })
            .collect();
        let nn = acc2(&spreds, &scores, Acc2Scheme::Nn).map_err(|e| e.to_string())?;
        let nn_oracle = binary_confusion_acc2(&spreds, &scores, false).unwrap();
        ensure(close(nn, nn_oracle), || {
            format!("bundle {bundle}: acc2 N/N")
        })?;
        let np = acc2(&spreds, &scores, Acc2Scheme::Np);
        match (&np, binary_confusion_acc2(&spreds, &scores, true)) {
            (Ok(v), Some(o)) => ensure(close(*v, o), || format!("bundle {bundle}: acc2 N/P"))?,
            (Err(EvalError::UndefinedMetric(_)), None) => {}
            (got, want) => return Err(format!("bundle {bundle}: N/P {got:?} vs {want:?}")),
        }
        // N/N and N/P differ exactly when zero-scored gold items exist and
        // their accuracy differs from the accuracy on the rest.
        let zeros: Vec<usize> = (0..m).filter(|&i| scores[i] == 0.0).collect();
        let correct = |i: usize| spreds[i].is_some_and(|p| p.is_negative() == (scores[i] < 0.0));
        let (n_z, c_z) = (zeros.len(), zeros.iter().filter(|&&i| correct(i)).count());
        let (n_nz, c_nz) = (
            m - n_z,
            (0..m).filter(|&i| scores[i] != 0.0 && correct(i)).count(),
        );
        let predicted_differ = n_z > 0 && (n_nz == 0 || c_z * n_nz != c_nz * n_z);
        let observed_differ = match &np {
            Ok(v) => *v != nn,
            Err(_) => true,
        };
        ensure(predicted_differ == observed_differ, || {
            format!("bundle {bundle}: N/N {nn} vs N/P {np:?} with {n_z} zeros")
        })?;
        if n_z == 0 {
            ensure(np.as_ref().is_ok_and(|v| *v == nn), || {
                format!("bundle {bundle}: no zeros but schemes differ")
            })?;
        }
        differing += usize::from(observed_differ);

        // ECPE
        let convs = rng.random_range(1..=5);
        let mut gold_pairs = Pairs::new();
        let mut pred_pairs = Pairs::new();
        for c in 0..convs {
            let g: Vec<CausePair> = (0..rng.random_range(0..=20))
                .map(|_| random_pair(&mut rng))
                .collect();
            let mut p: Vec<CausePair> =
                g.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
            p.extend((0..rng.random_range(0..=6)).map(|_| random_pair(&mut rng)));
            p.truncate(20);
            gold_pairs.insert(format!("conv{c}"), g);
            pred_pairs.insert(format!("conv{c}"), p);
        }
        let total_gold: usize = gold_pairs.values().map(Vec::len).sum();
        match ecpe_scores(&pred_pairs, &gold_pairs) {
            Ok(s) => {
                let (f1, wf1) = exhaustive_ecpe(&pred_pairs, &gold_pairs);
                ensure(close(s.f1, f1) && close(s.weighted_f1, wf1), || {
                    format!(
                        "bundle {bundle}: ECPE ({}, {}) vs ({f1}, {wf1})",
                        s.f1, s.weighted_f1
                    )
                })?;
                let swapped = ecpe_scores(&gold_pairs, &pred_pairs);
                if let Ok(sw) = swapped {
                    ensure(close(sw.f1, s.f1), || {
                        format!("bundle {bundle}: F1 not symmetric")
                    })?;
                }
            }
            Err(EvalError::UndefinedMetric(_)) if total_gold == 0 => {}
            Err(e) => return Err(format!("bundle {bundle}: {e}")),
        }
        for v in [acc, wf1, nn] {
            ensure((0.0..=1.0).contains(&v), || {
                format!("bundle {bundle}: {v} out of range")
            })?;
        }
    }
    Ok(format!(
        "500 bundles match the oracles; N/N and N/P differ in {differing}"
    ))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut summary = Vec::new();
    for (name, want) in [
        (
            "run.toml",
            vec![TaskKind::Msa, TaskKind::Er, TaskKind::Eri, TaskKind::Ecpe],
        ),
        ("t3.toml", vec![TaskKind::Er, TaskKind::Eri, TaskKind::Ecpe]),
        ("t1.toml", vec![TaskKind::Er]),
    ] {
        let out = tempfile::tempdir().unwrap();
        let cfg = config(name);
        ok(cli(out.path(), &["-c", &cfg, "build-dataset"]));
        ok(cli(out.path(), &["-c", &cfg, "plan"]));
        ok(cli(out.path(), &["-c", &cfg, "train"]));
        let records = out.path().join("records.jsonl");
        ok(cli(
            out.path(),
            &[
                "-c",
                &cfg,
                "evaluate",
                "--test-set",
                records.to_str().unwrap(),
            ],
        ));

        for stage in ["stage1.ckpt", "stage2.ckpt"] {
            ensure(out.path().join(stage).exists(), || {
                format!("{name}: {stage} missing")
            })?;
        }
        let report: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
                .map_err(|e| format!("{name}: malformed report: {e}"))?;
        ensure(
            !report.entries.is_empty()
                && report
                    .entries
                    .iter()
                    .all(|e| (0.0..=1.0).contains(&e.value)),
            || format!("{name}: report {report:?}"),
        )?;
        let stages = manifest_events(out.path(), "stage");
        ensure(stages.len() == 2, || {
            format!("{name}: {} stage events", stages.len())
        })?;
        let tasks_of = |v: &serde_json::Value| -> Vec<TaskKind> {
            v["stream_counts"]
                .as_object()
                .unwrap()
                .iter()
                .filter(|(_, n)| n.as_u64().unwrap() > 0)
                .map(|(k, _)| k.parse().unwrap())
                .collect()
        };
        let stage1: BTreeSet<TaskKind> = tasks_of(&stages[0]).into_iter().collect();
        ensure(
            stage1 == [TaskKind::Msa, TaskKind::Er, TaskKind::Fer].into(),
            || format!("{name}: stage 1 {stage1:?}"),
        )?;
        let stage2: BTreeSet<TaskKind> = tasks_of(&stages[1]).into_iter().collect();
        let want: BTreeSet<TaskKind> = want.into_iter().collect();
        ensure(stage2 == want, || {
            format!("{name}: stage 2 ran {stage2:?}, expected {want:?}")
        })?;
        let losses = stages[1]["losses"].as_array().unwrap();
        ensure(!losses.is_empty(), || format!("{name}: empty loss trace"))?;
        summary.push(format!(
            "{} stage 2 = {}",
            name.trim_end_matches(".toml"),
            stage2
                .iter()
                .map(|t| t.as_str())
                .collect::<Vec<_>>()
                .join("+")
        ));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("{} ({elapsed:.1?})", summary.join(", ")))
}

fn main() {
    let records = toy_records();
    let criteria: Vec<Criterion> = vec![
        (
            "AU peak selection matches brute force",
            Box::new(criterion_1),
        ),
        ("AU intersection properties", Box::new(criterion_2)),
        ("dataset determinism and schema", Box::new(criterion_3)),
        ("scheduler exactness", Box::new(criterion_4)),
        (
            "projection and fusion numerics",
            Box::new(|| criterion_5(&records)),
        ),
        ("training contracts", Box::new(|| criterion_6(&records))),
        ("metric oracles", Box::new(criterion_7)),
        ("end-to-end smoke with ablations", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} [{name}]: PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL - {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
