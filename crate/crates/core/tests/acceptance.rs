//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Built without the libtest harness so the
//! lines always reach the terminal in order.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bridgest::datakit::{synth_generate_split, FeatureResolver, Split, SynthSpec, UtteranceRecord};
use bridgest::diagnostics::{gradient_suite, GRAD_TOLERANCE};
use bridgest::model::{output_token_count, window_ranges, BridgeModel, ModelConfig, QFormer, QFormerConfig};
use bridgest::numerics::{ParameterStore, Tensor};
use bridgest::textkit::{
    bleu_corpus_text, cot_metrics, format_cot_target, parse_cot_response, DeltaBaseline, Smoothing,
};
use bridgest::training::{
    evaluate_dev, group_of, log_to_jsonl, lr_at, prepare_run, run_curriculum, train_step, CurriculumResult, EpochEnd,
    PreparedRun, ScheduleConfig, Stage, StageProfile, TrainProfile, TrainState,
};

type Check<T> = Result<T, Box<dyn std::error::Error>>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn synth_records(direction: &str, n_train: usize, n_dev: usize) -> (Vec<UtteranceRecord>, Vec<UtteranceRecord>) {
    let spec = SynthSpec {
        direction: direction.parse().unwrap(),
        ..SynthSpec::default()
    };
    (
        synth_generate_split(&spec, Split::Train, n_train).unwrap(),
        synth_generate_split(&spec, Split::Dev, n_dev).unwrap(),
    )
}

fn prepared(profile: &TrainProfile, train: &[UtteranceRecord], dev: &[UtteranceRecord]) -> Check<PreparedRun> {
    Ok(prepare_run(
        ModelConfig::toy(0),
        profile,
        train,
        dev,
        &mut FeatureResolver::default(),
    )?)
}

fn lr_anchors() -> Check<Outcome> {
    let t = Instant::now();
    let c = ScheduleConfig::default();
    let w = c.warmup_steps;
    let anchors = [(0, 1e-6), (w, 3e-5), (c.total_steps, 1e-5)];
    let mut worst: f64 = 0.0;
    for (step, want) in anchors {
        worst = worst.max(rel(lr_at(step, &c)?, want));
    }
    // Left limit from the linear ramp, right limit from the cosine arc at phase 0.
    let ramp = |step: usize| c.lr_base + (c.lr_peak - c.lr_base) * step as f64 / w as f64;
    let arc = |phase: f64| c.lr_min + (c.lr_peak - c.lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos());
    let (left, right) = (ramp(w), arc(0.0));
    let at = lr_at(w, &c)?;
    let gap = rel(left, right).max(rel(at, left)).max(rel(at, right));
    let elapsed = t.elapsed();
    Ok(Outcome::new(
        worst <= 1e-12 && gap <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max anchor rel err {worst:.1e}, boundary gap {gap:.1e}, {elapsed:.2?}"),
    ))
}

fn grad_checks() -> Check<Outcome> {
    let t = Instant::now();
    let checks = gradient_suite(0, None)?;
    let elapsed = t.elapsed();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.layer.as_str()).collect();
    Ok(Outcome::new(
        failed.is_empty() && worst <= GRAD_TOLERANCE && elapsed < Duration::from_secs(120),
        format!(
            "{} layers, worst rel err {worst:.2e}, failing {:?}, {elapsed:.1?}",
            checks.len(),
            failed
        ),
    ))
}

fn lora_zero_init() -> Check<Outcome> {
    let (train, dev) = synth_records("en-hi", 16, 16);
    let run = prepared(&TrainProfile::toy("en-hi".parse()?), &train, &dev)?;
    let with = &run.model;
    let config = ModelConfig {
        lora: None,
        ..with.config().clone()
    };
    let without = BridgeModel::new(config, with.vocab().clone())?;
    let (sa, sb) = (with.init_params()?, without.init_params()?);
    let shared_same = sb.names().all(|n| sa.values_bit_identical(&sb, n));
    let adapters = sa.len() - sb.len();
    let mut loss_diffs = 0;
    let mut gen_diffs = 0;
    let examples: Vec<_> = run.short.iter().chain(&run.long).chain(&run.dev).collect();
    for ex in &examples {
        let la = with.loss(&sa, &ex.features, &ex.prompt, &ex.target, None)?;
        let lb = without.loss(&sb, &ex.features, &ex.prompt, &ex.target, None)?;
        loss_diffs += usize::from(la.to_bits() != lb.to_bits());
        let ga = with.generate(&sa, &ex.features, &ex.prompt, 12)?;
        let gb = without.generate(&sb, &ex.features, &ex.prompt, 12)?;
        gen_diffs += usize::from(ga != gb);
    }
    Ok(Outcome::new(
        shared_same && adapters > 0 && loss_diffs == 0 && gen_diffs == 0,
        format!(
            "{} utterances, {adapters} adapter tensors, {loss_diffs} loss and {gen_diffs} generation mismatches",
            examples.len()
        ),
    ))
}

/// Runs the curriculum for at least `min_steps` updates, snapshotting the
/// speech encoder after every epoch.
fn audit_run(
    profile: &mut TrainProfile,
    run: &PreparedRun,
    min_steps: usize,
) -> Check<(ParameterStore, CurriculumResult, Vec<ParameterStore>)> {
    if profile.two_stage {
        let per_short = profile.short.steps_per_epoch(run.short.len());
        let per_long = profile.long.steps_per_epoch(run.long.len());
        profile.short.epochs = 2;
        profile.long.epochs = (min_steps.saturating_sub(2 * per_short)).div_ceil(per_long).max(1);
    } else {
        let per = profile.short.steps_per_epoch(run.short.len() + run.long.len());
        profile.short.epochs = min_steps.div_ceil(per);
    }
    let init = run.model.init_params()?;
    let mut snapshots = Vec::new();
    let mut observe = |e: &EpochEnd| {
        let mut enc = ParameterStore::new();
        for (name, t) in e.store.iter().filter(|(n, _)| group_of(n) == "speech_encoder") {
            enc.insert(name, t.clone(), false)?;
        }
        snapshots.push(enc);
        Ok(())
    };
    let result = run_curriculum(
        &run.model,
        init.clone(),
        &run.short,
        &run.long,
        &run.dev,
        profile,
        1,
        &mut observe,
    )?;
    Ok((init, result, snapshots))
}

fn freeze_audit() -> Check<Outcome> {
    let mut details = Vec::new();
    let mut pass = true;
    for direction in ["en-hi", "bn-en"] {
        let (train, dev) = synth_records(direction, 100, 4);
        let mut profile = TrainProfile::toy(direction.parse()?);
        profile.max_new_tokens = 4;
        let run = prepared(&profile, &train, &dev)?;
        let (init, result, snapshots) = audit_run(&mut profile, &run, 200)?;
        let steps = result.state.global_step;
        let policy = &profile.freeze;
        let mut moved_frozen = Vec::new();
        let mut stuck_trainable = 0;
        for name in init.names() {
            let group = group_of(name);
            let same = init.values_bit_identical(&result.last, name);
            if group == "speech_encoder" && policy.speech_encoder_trainable_first_epoch {
                continue;
            }
            if policy.is_trainable(group, usize::MAX) {
                stuck_trainable += usize::from(same);
            } else if !same {
                moved_frozen.push(name.to_string());
            }
        }
        let mut ok = steps >= 200 && moved_frozen.is_empty() && stuck_trainable == 0;
        let mut line = format!(
            "{direction}: {steps} steps, {} frozen tensors moved, {stuck_trainable} trainable tensors unchanged",
            moved_frozen.len()
        );
        if policy.speech_encoder_trainable_first_epoch {
            let names: Vec<&str> = snapshots[0].names().collect();
            let changed_epoch0 = names.iter().any(|n| !init.values_bit_identical(&snapshots[0], n));
            let stable_after = snapshots[1..]
                .iter()
                .all(|s| names.iter().all(|n| s.values_bit_identical(&snapshots[0], n)));
            ok &= changed_epoch0 && stable_after && snapshots.len() >= 2;
            line.push_str(&format!(
                ", speech encoder changed in epoch 0: {changed_epoch0}, bit-stable over {} later epochs: {stable_after}",
                snapshots.len() - 1
            ));
        }
        pass &= ok;
        details.push(line);
    }
    Ok(Outcome::new(pass, details.join("; ")))
}

fn random_frames(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn qformer_contracts() -> Check<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = QFormerConfig {
        window_len_frames: 4,
        queries_per_window: 3,
        d_model: 12,
        n_layers: 2,
        n_heads: 2,
        seed: 9,
    };
    let qf = QFormer::new(cfg.clone(), 10, 8)?;
    let store = qf.init_params()?;
    let frames = random_frames(&mut rng, 15, 10);
    let base = qf.forward(&store, &frames)?;
    let windows = window_ranges(frames.rows(), cfg.window_len_frames)?;
    let q = cfg.queries_per_window;
    let rows_of = |t: &Tensor, j: usize| t.slice_rows(j * q, (j + 1) * q);

    let mut perm_err: f64 = 0.0;
    let mut leak: f64 = 0.0;
    let mut own_change: f64 = f64::INFINITY;
    for (i, w) in windows.iter().enumerate() {
        let mut permuted = frames.clone();
        for (k, src) in w.clone().rev().enumerate() {
            permuted.row_mut(w.start + k).copy_from_slice(frames.row(src));
        }
        perm_err = perm_err.max(qf.forward(&store, &permuted)?.max_abs_diff(&base));

        let mut perturbed = frames.clone();
        for r in w.clone() {
            for v in perturbed.row_mut(r) {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let out = qf.forward(&store, &perturbed)?;
        for j in 0..windows.len() {
            let d = rows_of(&out, j).max_abs_diff(&rows_of(&base, j));
            if j == i {
                own_change = own_change.min(d);
            } else {
                leak = leak.max(d);
            }
        }
    }

    let mut bad_counts = Vec::new();
    let mut n_cases = 0;
    for w in 1..=6 {
        for queries in 1..=3 {
            let c = QFormerConfig {
                window_len_frames: w,
                queries_per_window: queries,
                ..cfg.clone()
            };
            let qf = QFormer::new(c.clone(), 6, 4)?;
            let store = qf.init_params()?;
            for t in 1..=20 {
                let want = (t as f64 / w as f64).ceil() as usize * queries;
                let got = qf.forward(&store, &random_frames(&mut rng, t, 6))?.rows();
                n_cases += 1;
                if got != want || output_token_count(t, &c) != want {
                    bad_counts.push((t, w, queries, got));
                }
            }
        }
    }
    Ok(Outcome::new(
        perm_err <= 1e-9 && leak <= 1e-12 && own_change > 0.0 && bad_counts.is_empty(),
        format!(
            "permutation {perm_err:.1e}, cross-window leak {leak:.1e}, {} / {n_cases} count mismatches",
            bad_counts.len()
        ),
    ))
}

fn bleu_anchors() -> Check<Outcome> {
    let corpus = [
        "the cat sat on the mat",
        "a quick brown fox jumps over",
        "नमस्ते दुनिया यह एक परीक्षण है",
    ];
    let identity = bleu_corpus_text(&corpus, &corpus, Smoothing::None)?.score;
    let short = bleu_corpus_text(&["a b c d"], &["a b c d e"], Smoothing::None)?.score;
    // All precisions are 1; only the brevity penalty exp(1 - 5/4) applies.
    let want_short = 100.0 * (1.0 - 5.0 / 4.0f64).exp();
    let zeros = [
        bleu_corpus_text(&["a b x d"], &["a b c d"], Smoothing::None)?.score,
        bleu_corpus_text(&["p q r s t"], &["a b c d e"], Smoothing::None)?.score,
    ];
    Ok(Outcome::new(
        identity == 100.0
            && (short - 77.880).abs() <= 1e-3
            && (short - want_short).abs() <= 1e-9
            && zeros == [0.0, 0.0],
        format!("identity {identity}, brevity case {short:.5}, zero-precision cases {zeros:?}"),
    ))
}

fn random_words(rng: &mut ChaCha8Rng) -> String {
    const POOL: [&str; 12] = ["a", "b", "tr", "an", "la", "tion", "x", "न", "म", "स्", "ते", "é"];
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..=4);
            (0..k)
                .map(|_| POOL[rng.random_range(0..POOL.len())])
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn fuzz_input(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 12] = [
        "Transcription:",
        "Translation:",
        "translation :",
        "TRANSCRIPTION",
        ":",
        "\n",
        " ",
        "\t",
        "abc",
        "हिंदी",
        "\u{0}",
        "🙂",
    ];
    let n = rng.random_range(0..24);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.3) {
                rng.random::<char>().to_string()
            } else {
                PIECES[rng.random_range(0..PIECES.len())].to_string()
            }
        })
        .collect()
}

fn cot_contracts() -> Check<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut round_trip_failures = 0;
    for _ in 0..1000 {
        let (src, tgt) = (random_words(&mut rng), random_words(&mut rng));
        let parsed = parse_cot_response(&format_cot_target(&src, &tgt)?);
        let ok = parsed.is_parsed()
            && parsed.transcription.as_deref() == Some(src.as_str())
            && parsed.translation.as_deref() == Some(tgt.as_str());
        round_trip_failures += usize::from(!ok);
    }

    let mut raised = 0;
    for _ in 0..10_000 {
        let input = fuzz_input(&mut rng);
        raised += usize::from(catch_unwind(|| parse_cot_response(&input)).is_err());
    }

    let refs: Vec<String> = (0..300).map(|_| random_words(&mut rng)).collect();
    let responses: Vec<_> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let raw = if i % 3 == 0 {
                format!("I think it says {r}")
            } else {
                format_cot_target("some transcript", r).unwrap()
            };
            parse_cot_response(&raw)
        })
        .collect();
    let m = cot_metrics(&responses, &refs, &refs, DeltaBaseline::ParsedSubset)?;
    let rate = format!("{:.2}", m.success_rate_pct);
    Ok(Outcome::new(
        round_trip_failures == 0 && raised == 0 && m.parsed == 200 && rate == "66.67",
        format!(
            "{round_trip_failures} / 1000 round-trip failures, {raised} / 10000 fuzz panics, injected parse rate {rate}%"
        ),
    ))
}

fn accumulation_equivalence() -> Check<Outcome> {
    let (train, dev) = synth_records("en-hi", 12, 1);
    let run = prepared(&TrainProfile::toy("en-hi".parse()?), &train, &dev)?;
    let all: Vec<_> = run.short.iter().chain(&run.long).collect();
    let base = TrainProfile::toy("en-hi".parse()?).short;
    let mut stores = Vec::new();
    for (bs, acc) in [(4, 1), (1, 4)] {
        let sp = StageProfile {
            batch_size: bs,
            grad_accum_steps: acc,
            ..base.clone()
        };
        let sched = sp.resolved_schedule(120)?;
        let mut store = run.model.init_params()?;
        let mut state = TrainState::new(Stage::Short, 0);
        for batch in all.chunks(4) {
            train_step(&run.model, &mut store, &mut state, batch, &sp, &sched, 1)?;
        }
        stores.push(store);
    }
    let diff = stores[0].max_abs_diff(&stores[1]);
    Ok(Outcome::new(
        diff <= 1e-9,
        format!("max param diff after {} updates: {diff:.2e}", all.len().div_ceil(4)),
    ))
}

struct E2eRun {
    log: String,
    result: CurriculumResult,
}

fn e2e_run(threads: usize) -> Check<E2eRun> {
    let spec = SynthSpec::default();
    let train = synth_generate_split(&spec, Split::Train, 2000)?;
    let dev = synth_generate_split(&spec, Split::Dev, 200)?;
    let profile = TrainProfile::toy(spec.direction.clone());
    let run = prepared(&profile, &train, &dev)?;
    let init = run.model.init_params()?;
    let result = run_curriculum(
        &run.model,
        init,
        &run.short,
        &run.long,
        &run.dev,
        &profile,
        threads,
        &mut |_| Ok(()),
    )?;
    let log = log_to_jsonl(&result.log)?;
    Ok(E2eRun { log, result })
}

fn end_to_end(first: &mut Option<E2eRun>) -> Check<Outcome> {
    let t = Instant::now();
    let spec = SynthSpec::default();
    let train = synth_generate_split(&spec, Split::Train, 2000)?;
    let dev = synth_generate_split(&spec, Split::Dev, 200)?;
    let profile = TrainProfile::toy(spec.direction.clone());
    let run = prepared(&profile, &train, &dev)?;
    let init = run.model.init_params()?;
    let untrained = evaluate_dev(&run.model, &init, &run.dev, profile.max_new_tokens, 1, false)?;
    let result = run_curriculum(
        &run.model,
        init,
        &run.short,
        &run.long,
        &run.dev,
        &profile,
        1,
        &mut |_| Ok(()),
    )?;
    let trained = evaluate_dev(&run.model, &result.best, &run.dev, profile.max_new_tokens, 1, false)?;
    let elapsed = t.elapsed();

    let ratio = trained.cross_entropy / untrained.cross_entropy;
    let gain = trained.bleu - untrained.bleu;
    let handoff = result.stages.len() == 2
        && result.stages[1].initial.max_abs_diff(&result.stages[0].best) == 0.0
        && result.stages[1].initial.len() == result.stages[0].best.len();
    let detail = format!(
        "{} short / {} long, dev CE {:.3} -> {:.3} ({:.1}%), BLEU {:.2} -> {:.2} (+{gain:.2}), stage-2 init = stage-1 best: {handoff}, {elapsed:.1?}",
        run.short.len(),
        run.long.len(),
        untrained.cross_entropy,
        trained.cross_entropy,
        100.0 * ratio,
        untrained.bleu,
        trained.bleu,
    );
    let pass = ratio <= 0.5 && gain >= 30.0 && handoff && elapsed <= Duration::from_secs(600);
    *first = Some(E2eRun {
        log: log_to_jsonl(&result.log)?,
        result,
    });
    Ok(Outcome::new(pass, detail))
}

fn replay(first: &Option<E2eRun>) -> Check<Outcome> {
    let Some(a) = first else {
        return Ok(Outcome::new(false, "first run unavailable"));
    };
    let b = e2e_run(4)?;
    let same_log = a.log.as_bytes() == b.log.as_bytes();
    let best = a.result.best.max_abs_diff(&b.result.best);
    let last = a.result.last.max_abs_diff(&b.result.last);
    Ok(Outcome::new(
        same_log && best <= 1e-12 && last <= 1e-12,
        format!(
            "threads 1 vs 4: stage log byte-identical: {same_log} ({} records), param diff best {best:.1e} last {last:.1e}",
            a.result.log.len()
        ),
    ))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Check<Outcome>) -> bool {
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(o)) => o,
        Ok(Err(e)) => Outcome::new(false, format!("error: {e}")),
        Err(_) => Outcome::new(false, "panicked"),
    };
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {tag}  {name}: {}", outcome.detail);
    outcome.pass
}

#[cfg(not(feature = "single-precision"))]
fn main() {
    let mut first = None;
    let results = [
        run(1, "learning-rate schedule anchors", lr_anchors),
        run(2, "gradient checks", grad_checks),
        run(3, "LoRA zero-init equivalence", lora_zero_init),
        run(4, "freeze audit", freeze_audit),
        run(5, "Q-Former window contracts", qformer_contracts),
        run(6, "BLEU anchors", bleu_anchors),
        run(7, "CoT format and parse", cot_contracts),
        run(8, "gradient accumulation equivalence", accumulation_equivalence),
        run(9, "end-to-end synthetic training", || end_to_end(&mut first)),
        run(10, "seeded replay", || replay(&first)),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed} / {} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

#[cfg(feature = "single-precision")]
fn main() {
    println!("acceptance: skipped, the tolerances assume f64");
}
