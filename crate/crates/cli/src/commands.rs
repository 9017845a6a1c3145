use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bridgest::datakit::{
    dataset_stats_with, load_manifest, synth_generate_split, write_manifest, AudioSource, Direction, FeatureResolver,
    FeatureStore, Split, SynthSpec, UtteranceRecord,
};
use bridgest::diagnostics::{check_layer, GRAD_CHECK_LAYERS};
use bridgest::model::{BridgeModel, ModelConfig};
use bridgest::numerics::ParameterStore;
use bridgest::textkit::{cot_metrics, parse_cot_response, CoTResponse, CotReport, DeltaBaseline};
use bridgest::training::{
    evaluate_dev, load_model, log_to_jsonl, lr_at, par_map, prepare_examples, prepare_run, run_curriculum,
    save_checkpoint, ScheduleConfig, TrainProfile,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{get_path, resolve, RunDir};
use crate::{CliError, Globals};

fn load_nonempty(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let records = load_manifest(path)?;
    if records.is_empty() {
        return Err(bridgest::Error::Argument(format!("manifest {} is empty", path.display())).into());
    }
    Ok(records)
}

/// Makes file-backed audio paths relative to the working directory, so records
/// from manifests in different directories can share one resolver.
fn rebase(records: Vec<UtteranceRecord>, manifest: &Path) -> Vec<UtteranceRecord> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    records
        .into_iter()
        .map(|mut r| {
            if let AudioSource::File(p) = &r.audio_source {
                r.audio_source = AudioSource::File(base.join(p).to_string_lossy().into_owned());
            }
            r
        })
        .collect()
}

fn by_direction(records: Vec<UtteranceRecord>) -> BTreeMap<String, Vec<UtteranceRecord>> {
    let mut out: BTreeMap<String, Vec<UtteranceRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.direction.tag()).or_default().push(r);
    }
    out
}

// ---- synth ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCommand {
    pub spec: SynthSpec,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Embed features in the manifests instead of a shared feature store.
    pub inline_features: bool,
}

impl Default for SynthCommand {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            n_train: 2000,
            n_dev: 200,
            n_test: 200,
            inline_features: false,
        }
    }
}

pub fn synth(g: &Globals, user: Value) -> Result<()> {
    let cfg: SynthCommand = resolve(&SynthCommand::default(), user, Some("spec.seed"))?;
    let dir = RunDir::create(&g.out_dir, "synth", g.run_id.as_deref(), &cfg)?;
    let mut store = FeatureStore::new(cfg.spec.feature_dim, cfg.spec.frame_rate);
    let mut all = Vec::new();
    for (split, n) in [
        (Split::Train, cfg.n_train),
        (Split::Dev, cfg.n_dev),
        (Split::Test, cfg.n_test),
    ] {
        let mut records = synth_generate_split(&cfg.spec, split, n)?;
        if !cfg.inline_features {
            for r in &mut records {
                let AudioSource::Inline(m) = &r.audio_source else {
                    unreachable!("generator emits inline features")
                };
                let (offset_s, duration_s) = store.append(&m.data)?;
                r.audio_source = AudioSource::File("features.bin".into());
                r.offset_s = offset_s;
                r.duration_s = duration_s;
            }
        }
        write_manifest(dir.file(&format!("{}.jsonl", split.name())), &records)?;
        all.extend(records.into_iter().map(|r| (split, r)));
    }
    if !cfg.inline_features {
        store.save(dir.file("features.bin"))?;
    }
    let stats = dataset_stats_with(
        std::slice::from_ref(&cfg.spec.direction),
        all.iter().map(|(s, r)| (*s, r)),
    );
    dir.write_json("stats.json", &stats)?;
    print!("{stats}");
    println!("run {}: {}", dir.run_id, dir.path.display());
    Ok(())
}

// ---- train ----

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Scaled for the synthetic corpus.
    #[default]
    Toy,
    /// Full-size schedule and batch shapes.
    Full,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommand {
    pub train_manifest: PathBuf,
    pub dev_manifest: PathBuf,
    pub preset: Preset,
    pub model: ModelConfig,
    pub profile: TrainProfile,
    /// Evaluate the fresh model on dev before training.
    pub eval_untrained: bool,
}

impl TrainCommand {
    /// Defaults depend on the preset and the direction, both read from the
    /// user layer; the direction falls back to the training manifest's.
    fn defaults(user: &Value) -> Result<Self> {
        let preset: Preset = match get_path(user, "preset") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            None => Preset::default(),
        };
        let direction: Direction = match get_path(user, "profile.direction") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("direction: {e}")))?,
            None => match get_path(user, "train_manifest").and_then(Value::as_str) {
                Some(p) => load_manifest(p)?
                    .first()
                    .map(|r| r.direction.clone())
                    .unwrap_or_else(|| Direction::new("en", "hi")),
                None => Direction::new("en", "hi"),
            },
        };
        let profile = match preset {
            Preset::Toy => TrainProfile::toy(direction),
            Preset::Full => TrainProfile::for_direction(direction),
        };
        Ok(Self {
            train_manifest: "train.jsonl".into(),
            dev_manifest: "dev.jsonl".into(),
            preset,
            model: ModelConfig::toy(0),
            profile,
            eval_untrained: true,
        })
    }
}

#[derive(Serialize)]
struct StageSummary {
    stage: &'static str,
    n_examples: usize,
    steps: usize,
    best_dev_bleu: f64,
    dev_bleu_per_epoch: Vec<f64>,
}

pub fn train(g: &Globals, user: Value) -> Result<()> {
    let defaults = TrainCommand::defaults(&user)?;
    let cfg: TrainCommand = resolve(&defaults, user, Some("profile.seed"))?;
    let train = load_nonempty(&cfg.train_manifest)?;
    let dev = load_nonempty(&cfg.dev_manifest)?;
    let dir = RunDir::create(&g.out_dir, "train", g.run_id.as_deref(), &cfg)?;

    let run = prepare_run(
        cfg.model.clone(),
        &cfg.profile,
        &rebase(train, &cfg.train_manifest),
        &rebase(dev, &cfg.dev_manifest),
        &mut FeatureResolver::new("."),
    )?;
    let model = &run.model;
    let store = model.init_params()?;
    let p = &cfg.profile;

    let untrained = if cfg.eval_untrained {
        let r = evaluate_dev(model, &store, &run.dev, p.max_new_tokens, g.threads, p.cot)?;
        eprintln!("untrained: dev bleu {:.2}, dev ce {:.4}", r.bleu, r.cross_entropy);
        Some(json!({ "bleu": r.bleu, "cross_entropy": r.cross_entropy }))
    } else {
        None
    };
    let result = run_curriculum(model, store, &run.short, &run.long, &run.dev, p, g.threads, &mut |e| {
        eprintln!(
            "{} epoch {} (step {}): dev bleu {:.2}, dev ce {:.4}{}",
            e.stage.name(),
            e.state.epoch,
            e.state.global_step,
            e.dev.bleu,
            e.dev.cross_entropy,
            if e.is_best { " *" } else { "" }
        );
        Ok(())
    })?;
    dir.write("stage_log.jsonl", &log_to_jsonl(&result.log)?)?;
    let mut state = result.state.clone();
    state.best_checkpoint = Some("best.ckpt".into());
    save_checkpoint(dir.file("best.ckpt"), model, &result.best, &state)?;
    save_checkpoint(dir.file("final.ckpt"), model, &result.last, &state)?;
    let summary = json!({
        "run_id": dir.run_id,
        "direction": p.direction.tag(),
        "untrained": untrained,
        "best_dev_bleu": state.best_dev_bleu,
        "best_step": state.best_step,
        "stages": result.stages.iter().map(|s| StageSummary {
            stage: s.stage.name(),
            n_examples: s.n_examples,
            steps: s.steps,
            best_dev_bleu: s.best_dev_bleu,
            dev_bleu_per_epoch: s.dev_bleu_per_epoch.clone(),
        }).collect::<Vec<_>>(),
    });
    dir.write_json("summary.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

// ---- eval ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCommand {
    pub checkpoint: PathBuf,
    pub dev_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub max_new_tokens: usize,
    /// Score the translation parsed out of CoT responses.
    pub cot: bool,
}

impl Default for EvalCommand {
    fn default() -> Self {
        Self {
            checkpoint: "best.ckpt".into(),
            dev_manifest: None,
            test_manifest: None,
            max_new_tokens: 64,
            cot: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRow {
    pub direction: String,
    pub split: String,
    pub bleu: f64,
    pub n_utterances: usize,
}

pub fn eval(g: &Globals, user: Value) -> Result<()> {
    let cfg: EvalCommand = resolve(&EvalCommand::default(), user, None)?;
    let splits: Vec<(&str, &PathBuf)> = [("dev", &cfg.dev_manifest), ("test", &cfg.test_manifest)]
        .into_iter()
        .filter_map(|(s, p)| p.as_ref().map(|p| (s, p)))
        .collect();
    if splits.is_empty() {
        return Err(CliError::Config("set dev_manifest and/or test_manifest".into()).into());
    }
    let loaded = splits
        .into_iter()
        .map(|(split, path)| Ok((split, path, load_nonempty(path)?)))
        .collect::<Result<Vec<_>>>()?;
    let (model, store) =
        load_model(&cfg.checkpoint).with_context(|| format!("loading checkpoint {}", cfg.checkpoint.display()))?;
    let dir = RunDir::create(&g.out_dir, "eval", g.run_id.as_deref(), &cfg)?;
    let mut rows = Vec::new();
    for (split, path, records) in loaded {
        let mut resolver = FeatureResolver::for_manifest(path);
        let mut hyps = String::new();
        for (direction, recs) in by_direction(records) {
            let ex = prepare_examples(&model, &recs, &mut resolver, cfg.cot)?;
            let r = evaluate_dev(&model, &store, &ex, cfg.max_new_tokens, g.threads, cfg.cot)?;
            for (e, h) in ex.iter().zip(&r.hypotheses) {
                hyps.push_str(&serde_json::to_string(&json!({ "id": e.id, "hypothesis": h }))?);
                hyps.push('\n');
            }
            rows.push(EvalRow {
                direction,
                split: split.to_string(),
                bleu: r.bleu,
                n_utterances: r.n_utterances,
            });
        }
        dir.write(&format!("hypotheses.{split}.jsonl"), &hyps)?;
    }
    dir.write_json("report.json", &rows)?;
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

// ---- cot-eval ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotEvalCommand {
    /// Model trained on CoT targets.
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    /// Non-CoT model whose generations form the baseline.
    pub baseline_checkpoint: Option<PathBuf>,
    /// Baseline hypotheses as written by `eval` (`{"id", "hypothesis"}` lines).
    pub baseline_hypotheses: Option<PathBuf>,
    pub max_new_tokens: usize,
    pub delta_baseline: DeltaBaseline,
}

impl Default for CotEvalCommand {
    fn default() -> Self {
        Self {
            checkpoint: "best.ckpt".into(),
            manifest: "test.jsonl".into(),
            baseline_checkpoint: None,
            baseline_hypotheses: None,
            max_new_tokens: 64,
            delta_baseline: DeltaBaseline::default(),
        }
    }
}

fn generate_all(
    model: &BridgeModel,
    store: &ParameterStore,
    records: &[UtteranceRecord],
    resolver: &mut FeatureResolver,
    max_new_tokens: usize,
    threads: usize,
) -> Result<Vec<String>> {
    let inputs = records
        .iter()
        .map(|r| Ok((resolver.features(r)?, model.prompt_ids(&r.direction)?)))
        .collect::<bridgest::Result<Vec<_>>>()?;
    par_map(&inputs, threads, |(f, p)| {
        Ok(model.vocab().decode(&model.generate(store, f, p, max_new_tokens)?))
    })
    .into_iter()
    .collect()
}

fn read_hypotheses(path: &Path) -> Result<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct Line {
        id: String,
        hypothesis: String,
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let line: Line = serde_json::from_str(l)
                .map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?;
            Ok((line.id, line.hypothesis))
        })
        .collect()
}

pub fn cot_eval(g: &Globals, user: Value) -> Result<()> {
    let cfg: CotEvalCommand = resolve(&CotEvalCommand::default(), user, None)?;
    if cfg.baseline_checkpoint.is_none() && cfg.baseline_hypotheses.is_none() {
        return Err(CliError::Config("set baseline_checkpoint or baseline_hypotheses".into()).into());
    }
    let records = load_nonempty(&cfg.manifest)?;
    let (model, store) =
        load_model(&cfg.checkpoint).with_context(|| format!("loading checkpoint {}", cfg.checkpoint.display()))?;
    let dir = RunDir::create(&g.out_dir, "cot-eval", g.run_id.as_deref(), &cfg)?;
    let mut resolver = FeatureResolver::for_manifest(&cfg.manifest);
    let raw = generate_all(&model, &store, &records, &mut resolver, cfg.max_new_tokens, g.threads)?;
    let responses: Vec<CoTResponse> = raw.iter().map(|r| parse_cot_response(r)).collect();
    let baseline: Vec<String> = match (&cfg.baseline_hypotheses, &cfg.baseline_checkpoint) {
        (Some(path), _) => {
            let map = read_hypotheses(path)?;
            records
                .iter()
                .map(|r| {
                    map.get(&r.id)
                        .cloned()
                        .ok_or_else(|| CliError::Config(format!("no baseline hypothesis for `{}`", r.id)).into())
                })
                .collect::<Result<_>>()?
        }
        (None, Some(path)) => {
            let (bm, bs) = load_model(path).with_context(|| format!("loading baseline {}", path.display()))?;
            generate_all(&bm, &bs, &records, &mut resolver, cfg.max_new_tokens, g.threads)?
        }
        (None, None) => unreachable!("checked above"),
    };

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.direction.tag()).or_default().push(i);
    }
    let mut reports = Vec::new();
    for (direction, idx) in groups {
        let resp: Vec<CoTResponse> = idx.iter().map(|&i| responses[i].clone()).collect();
        let refs: Vec<&str> = idx.iter().map(|&i| records[i].translation.as_str()).collect();
        let base: Vec<&str> = idx.iter().map(|&i| baseline[i].as_str()).collect();
        let m = cot_metrics(&resp, &refs, &base, cfg.delta_baseline)?;
        reports.push(CotReport::new(direction, &m));
    }
    let mut lines = String::new();
    for (r, resp) in records.iter().zip(&responses) {
        lines.push_str(&serde_json::to_string(&json!({ "id": r.id, "response": resp }))?);
        lines.push('\n');
    }
    dir.write("responses.jsonl", &lines)?;
    dir.write_json("cot_report.json", &reports)?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

// ---- lr-dump ----

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDumpCommand {
    pub schedule: ScheduleConfig,
}

pub fn lr_dump(g: &Globals, user: Value) -> Result<()> {
    let cfg: LrDumpCommand = resolve(&LrDumpCommand::default(), user, None)?;
    cfg.schedule.validate()?;
    let dir = RunDir::create(&g.out_dir, "lr-dump", g.run_id.as_deref(), &cfg)?;
    let mut csv = String::from("step,lr\n");
    for step in 0..=cfg.schedule.total_steps {
        csv.push_str(&format!("{step},{}\n", lr_at(step, &cfg.schedule)?));
    }
    let path = dir.write("lr.csv", &csv)?;
    println!("{} rows -> {}", cfg.schedule.total_steps + 1, path.display());
    Ok(())
}

// ---- grad-check ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckCommand {
    pub seed: u64,
    pub layers: Vec<String>,
    /// Layer whose backward is deliberately broken, to test the harness.
    pub corrupt: Option<String>,
}

impl Default for GradCheckCommand {
    fn default() -> Self {
        Self {
            seed: 0,
            layers: GRAD_CHECK_LAYERS.iter().map(|s| s.to_string()).collect(),
            corrupt: None,
        }
    }
}

pub fn grad_check(g: &Globals, user: Value) -> Result<()> {
    let cfg: GradCheckCommand = resolve(&GradCheckCommand::default(), user, Some("seed"))?;
    if let Some(bad) = cfg
        .layers
        .iter()
        .chain(&cfg.corrupt)
        .find(|l| !GRAD_CHECK_LAYERS.contains(&l.as_str()))
    {
        return Err(CliError::Config(format!(
            "unknown layer `{bad}` (known: {})",
            GRAD_CHECK_LAYERS.join(", ")
        ))
        .into());
    }
    let dir = RunDir::create(&g.out_dir, "grad-check", g.run_id.as_deref(), &cfg)?;
    let mut checks = Vec::new();
    for layer in &cfg.layers {
        let c = check_layer(layer, cfg.seed, cfg.corrupt.as_deref() == Some(layer))?;
        println!(
            "{:<14} max_rel_error {:.3e}  n={:<5} {}",
            c.layer,
            c.max_rel_error,
            c.n_checked,
            if c.passed { "PASS" } else { "FAIL" }
        );
        checks.push(c);
    }
    dir.write_json("grad_check.json", &checks)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.layer.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}
