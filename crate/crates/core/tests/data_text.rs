use bridgest::datakit::{
    dataset_stats, load_manifest, split_by_transcript_length, synth_generate_split, write_manifest, AudioSource,
    Direction, FeatureResolver, FeatureStore, Split, SynthSpec, UtteranceRecord,
};
use bridgest::model::{BridgeModel, Checkpoint, ModelConfig};
use bridgest::textkit::{bleu_corpus_text, Smoothing, Vocab};
use bridgest::training::corpus_vocab;

fn record(id: &str, source: AudioSource, offset_s: f64, duration_s: f64, transcript: &str) -> UtteranceRecord {
    UtteranceRecord {
        id: id.into(),
        audio_source: source,
        offset_s,
        duration_s,
        transcript: transcript.into(),
        translation: "x y".into(),
        direction: Direction::new("en", "hi"),
    }
}

#[test]
fn file_backed_manifest_resolves_segments() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = FeatureStore::new(2, 100.0);
    let first: Vec<f64> = (0..6).map(f64::from).collect();
    let second: Vec<f64> = (10..18).map(f64::from).collect();
    let (o1, d1) = store.append(&first).unwrap();
    let (o2, d2) = store.append(&second).unwrap();
    store.save(dir.path().join("feats.bin")).unwrap();

    let src = AudioSource::File("feats.bin".into());
    let records = vec![
        record("u1", src.clone(), o1, d1, "hello there"),
        record("u2", src, o2, d2, "general kenobi"),
    ];
    let manifest = dir.path().join("train.jsonl");
    write_manifest(&manifest, &records).unwrap();
    let loaded = load_manifest(&manifest).unwrap();
    assert_eq!(loaded, records);

    let mut resolver = FeatureResolver::for_manifest(&manifest);
    let a = resolver.features(&loaded[0]).unwrap();
    let b = resolver.features(&loaded[1]).unwrap();
    assert_eq!(a.shape(), [3, 2]);
    assert_eq!(b.shape(), [4, 2]);
    assert_eq!(a.data(), &first[..]);
    assert_eq!(b.data(), &second[..]);
}

#[test]
fn buckets_partition_a_synthetic_corpus() {
    let spec = SynthSpec::default();
    let train = synth_generate_split(&spec, Split::Train, 300).unwrap();
    let threshold = 26;
    let (short, long) = split_by_transcript_length(train.clone(), threshold);
    assert_eq!(short.len() + long.len(), train.len());
    assert!(short.records.iter().all(|r| r.transcript.chars().count() < threshold));
    assert!(long.records.iter().all(|r| r.transcript.chars().count() >= threshold));
    assert!(!short.is_empty() && !long.is_empty());
}

#[test]
fn stats_sum_durations_per_split() {
    let spec = SynthSpec::default();
    let train = synth_generate_split(&spec, Split::Train, 50).unwrap();
    let dev = synth_generate_split(&spec, Split::Dev, 10).unwrap();
    let table = dataset_stats(
        train
            .iter()
            .map(|r| (Split::Train, r))
            .chain(dev.iter().map(|r| (Split::Dev, r))),
    );
    assert_eq!(table.rows.len(), 1);
    let hours = |rs: &[UtteranceRecord]| (rs.iter().map(|r| r.duration_s).sum::<f64>() / 360.0).round() / 10.0;
    let row = &table.rows[0];
    assert_eq!(row.train, hours(&train));
    assert_eq!(row.dev, hours(&dev));
    assert_eq!(row.test, 0.0);
}

#[test]
fn corpus_vocab_round_trips_every_sentence() {
    let spec = SynthSpec::default();
    let train = synth_generate_split(&spec, Split::Train, 100).unwrap();
    let vocab = corpus_vocab(&train, &ModelConfig::toy(0)).unwrap();
    for r in &train {
        for text in [&r.transcript, &r.translation] {
            assert_eq!(&vocab.decode(&vocab.encode(text).unwrap()), text);
        }
    }
    assert!(vocab.encode("never-seen-token").is_err());
}

#[test]
fn corpus_bleu_ignores_sentence_order() {
    let spec = SynthSpec::default();
    let dev = synth_generate_split(&spec, Split::Dev, 40).unwrap();
    let refs: Vec<&str> = dev.iter().map(|r| r.translation.as_str()).collect();
    // Drop the last token of every third hypothesis.
    let hyps: Vec<String> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut t: Vec<&str> = r.split_whitespace().collect();
            if i % 3 == 0 {
                t.pop();
            }
            t.join(" ")
        })
        .collect();
    let hyp_refs: Vec<&str> = hyps.iter().map(String::as_str).collect();
    let forward = bleu_corpus_text(&hyp_refs, &refs, Smoothing::None).unwrap();
    let (mut rh, mut rr) = (hyp_refs.clone(), refs.clone());
    rh.reverse();
    rr.reverse();
    let backward = bleu_corpus_text(&rh, &rr, Smoothing::None).unwrap();
    assert_eq!(forward, backward);
    assert!(forward.score > 0.0 && forward.score < 100.0);
    assert!(forward.brevity_penalty < 1.0);
}

#[test]
fn checkpoint_round_trips_model_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocab::build(["a", "b", "translate", "en", "to", "hi"]).unwrap();
    let config = ModelConfig::toy(vocab.len());
    let model = BridgeModel::new(config.clone(), vocab.clone()).unwrap();
    let store = model.init_params().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint {
        config,
        vocab,
        store: store.clone(),
        extra: None,
    }
    .save(&path)
    .unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.store.len(), store.len());
    assert!(store.names().all(|n| back.store.values_bit_identical(&store, n)));
    assert!(store
        .names()
        .all(|n| back.store.is_trainable(n) == store.is_trainable(n)));
    assert_eq!(back.vocab, *model.vocab());
}
