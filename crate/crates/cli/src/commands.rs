//! Subcommand implementations.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use mtlqa::analysis::{analysis_report, capture_traces, layer_csv, project_cls, projection_csv, LabelKey, TTestKind};
use mtlqa::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use mtlqa::data::{
    domain_labels, generate_synthetic, load_jsonl, save_jsonl, split_examples, InputPair, QAExample, Vocab,
    REVIEW_DOMAINS,
};
use mtlqa::heads::Adversarial;
use mtlqa::metrics::{exact_match, grouped_report, report_csv, report_text, ScoredPrediction};
use mtlqa::model::{Model, Sample, Task};
use mtlqa::post::PostEncoder;
use mtlqa::train::{
    evaluate, metric_log_jsonl, sequential_transfer, train as train_model, EvalReport, Sampler, SoftTargets,
    TargetMode, TaskData, TrainOutcome,
};
use mtlqa::Result;
use serde::Serialize;

use crate::config::{config_err, out_root, parse_enum, Preset, RunConfig, TrainMode, CONFIG_ECHO};
use crate::{AnalyzeArgs, CliError, CliResult, EvalArgs, GenDataArgs, TrainArgs};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const SOFT_TARGETS: &str = "soft_targets.json";
pub const REPORT: &str = "report.json";

fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| config_err("out", format!("cannot create `{}`: {e}", dir.display())))
}

/// Removes earlier outputs of the same command so a rerun leaves no stale files.
fn clear_outputs(dir: &Path, prefixes: &[&str]) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if entry.file_type()?.is_file() && prefixes.iter().any(|p| name.starts_with(p)) {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn load_split(dir: &Path, split: &str) -> Result<Vec<QAExample>> {
    if !SPLITS.contains(&split) {
        return Err(config_err("split", format!("`{split}` is not one of train, dev, test")));
    }
    let path = split_path(dir, split);
    if !path.exists() {
        return Err(config_err("data", format!("missing dataset file `{}`", path.display())));
    }
    load_jsonl(&path)
}

pub fn gen_data(args: &GenDataArgs) -> CliResult {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(p) = &args.preset {
        cfg.data.preset = parse_enum::<Preset>("preset", p)?;
    }
    let s = &mut cfg.data.synthetic;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(n) = args.domains {
        if n == 0 || n > REVIEW_DOMAINS.len() {
            return Err(config_err("domains", format!("must lie in 1..={}", REVIEW_DOMAINS.len())).into());
        }
        s.domains = REVIEW_DOMAINS[..n].iter().map(|d| d.to_string()).collect();
    }
    if let Some(n) = args.n_per_domain {
        s.n_per_domain = n;
    }
    if let Some(r) = args.answerable_rate {
        s.answerable_rate = r;
    }
    if let Some(n) = args.squad_like {
        s.squad_like = n;
    }
    cfg.validate_data()?;
    let out = args.out.clone().unwrap_or_else(|| out_root().join("data"));
    create_dir(&out)?;
    cfg.data.dir = Some(out.clone());

    let synthetic = cfg.synthetic();
    let examples = generate_synthetic(&synthetic);
    if examples.is_empty() {
        return Err(CliError::empty("generation produced no examples (zero counts requested)"));
    }
    let seed = synthetic.seed;
    let splits = split_examples(&examples, cfg.data.fractions, seed)?;
    for (name, part) in SPLITS.iter().zip([&splits.train, &splits.dev, &splits.test]) {
        save_jsonl(&split_path(&out, name), part)?;
    }
    write_json(&out.join(MANIFEST), &splits.manifest(seed, cfg.data.fractions))?;
    cfg.echo(&out)?;
    log::info!(
        "wrote {} examples ({} train / {} dev / {} test) to {}",
        examples.len(),
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        out.display()
    );
    Ok(())
}

fn apply_train_overrides(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(t) = &a.tasks {
        cfg.model.tasks = t.split(',').filter(|s| !s.trim().is_empty()).map(Task::parse).collect::<Result<_>>()?;
    }
    if let Some(s) = &a.sampler {
        cfg.train.sampler = Sampler::parse(s)?;
    }
    if let Some(s) = &a.adversarial {
        cfg.model.adversarial = parse_enum::<Adversarial>("adversarial", s)?;
    }
    if let Some(l) = a.grl_lambda {
        cfg.model.grl_lambda = l;
    }
    if let Some(s) = &a.post {
        cfg.model.post = parse_enum::<PostEncoder>("post", s)?;
    }
    if let Some(s) = &a.mode {
        cfg.transfer.mode = parse_enum::<TrainMode>("mode", s)?;
    }
    if let Some(s) = &a.targets {
        cfg.transfer.targets = TargetMode::parse(s)?;
    }
    if let Some(s) = &a.sbj_input {
        cfg.train.sbj_input = match s.trim() {
            "qc" => InputPair::QuestionContext,
            "qa" => InputPair::QuestionAnswer,
            other => parse_enum::<InputPair>("sbj_input", other)?,
        };
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.max_steps {
        cfg.train.max_steps = Some(v);
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
        cfg.model.encoder.seed = v;
    }
    if let Some(v) = a.layers {
        cfg.model.encoder.num_layers = v;
    }
    if let Some(v) = a.hidden_size {
        cfg.model.encoder.hidden_size = v;
    }
    if let Some(v) = a.heads {
        cfg.model.encoder.num_heads = v;
    }
    if let Some(v) = a.max_len {
        cfg.encode.max_len = v;
    }
    if a.no_early_stopping {
        cfg.train.early_stopping = false;
    }
    Ok(())
}

/// Dataset directory: flag, then config, then the default root.
fn resolve_data_dir(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.data.dir.clone()))
        .unwrap_or_else(|| out_root().join("data"))
}

#[derive(Serialize)]
struct DevSummary {
    n: usize,
    loss: f64,
    em: f64,
    f1: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    mode: TrainMode,
    tasks: Vec<Task>,
    steps: usize,
    best_step: usize,
    best_dev_loss: f64,
    stopped_early: bool,
    skipped_steps: usize,
    dev: DevSummary,
}

pub fn train(args: &TrainArgs) -> CliResult {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    apply_train_overrides(&mut cfg, args)?;
    let data_dir = resolve_data_dir(args.data.as_deref(), Some(&cfg));
    cfg.data.dir = Some(data_dir.clone());
    let train_ex = load_split(&data_dir, "train")?;
    let dev_ex = load_split(&data_dir, "dev")?;
    let test_ex = if split_path(&data_dir, "test").exists() {
        load_split(&data_dir, "test")?
    } else {
        Vec::new()
    };
    if train_ex.is_empty() || dev_ex.is_empty() {
        return Err(CliError::empty("training needs non-empty train and dev splits"));
    }
    let all: Vec<QAExample> = train_ex.iter().chain(&dev_ex).chain(&test_ex).cloned().collect();
    let domains = domain_labels(&all);
    cfg.model.num_domains = domains.len();
    cfg.validate_model()?;
    if cfg.transfer.mode == TrainMode::Sequential && cfg.model.adversarial != Adversarial::None {
        return Err(config_err("adversarial", "sequential transfer trains without adversarial objectives").into());
    }

    let out = args.out.clone().unwrap_or_else(|| out_root().join("train"));
    create_dir(&out)?;
    cfg.echo(&out)?;

    let texts = train_ex.iter().flat_map(|e| [e.question.as_str(), e.context.as_str()]);
    let vocab = Vocab::build(texts, Some(cfg.model.encoder.vocab_size));
    let meta = CheckpointMeta {
        vocab,
        domains,
        encode: cfg.encode,
    };
    let encode = |ex: &[QAExample]| TaskData::encode(ex, &meta.vocab, &meta.domains, &meta.encode);
    let train_data = encode(&train_ex)?;
    let dev_data = encode(&dev_ex)?;
    let test_data = encode(&test_ex)?;

    let ckpt = out.join(CHECKPOINT_DIR);
    let mut save = |m: &Model<f32>| save_checkpoint(&ckpt, m, &meta);
    let (outcome, targets): (TrainOutcome, Option<SoftTargets>) = match cfg.transfer.mode {
        TrainMode::Joint => {
            let model = Model::<f32>::new(cfg.model.clone())?;
            (train_model(model, &train_data, &dev_data, &cfg.train, Some(&mut save))?, None)
        }
        TrainMode::Sequential => {
            let t = sequential_transfer(
                cfg.model.clone(),
                &train_data,
                &dev_data,
                &test_data.qc,
                &cfg.train,
                cfg.transfer.targets,
                Some(&mut save),
            )?;
            (t.outcome, Some(t.targets))
        }
    };
    save_checkpoint(&ckpt, &outcome.model, &meta)?;
    fs::write(out.join(METRICS_LOG), metric_log_jsonl(&outcome.log)?)?;
    let mut dev_qc = dev_data.qc.clone();
    if let Some(t) = &targets {
        t.attach(&mut dev_qc)?;
        write_json(&out.join(SOFT_TARGETS), t)?;
    }
    let dev = evaluate(&outcome.model, &dev_qc)?;
    let summary = TrainSummary {
        mode: cfg.transfer.mode,
        tasks: outcome.model.spec.tasks.clone(),
        steps: outcome.steps,
        best_step: outcome.best_step,
        best_dev_loss: outcome.best_dev_loss,
        stopped_early: outcome.stopped_early,
        skipped_steps: outcome.skipped_steps,
        dev: DevSummary {
            n: dev_qc.len(),
            loss: dev.loss,
            em: dev.em,
            f1: dev.f1,
        },
    };
    write_json(&out.join(SUMMARY), &summary)?;
    log::info!(
        "{} steps (best at {}), dev EM {:.2} F1 {:.2}; run directory {}",
        outcome.steps,
        outcome.best_step,
        dev.em,
        dev.f1,
        out.display()
    );
    Ok(())
}

struct LoadedRun {
    model: Model<f32>,
    meta: CheckpointMeta,
    config: Option<RunConfig>,
    targets: Option<SoftTargets>,
}

fn load_run(run: &Path) -> Result<LoadedRun> {
    let (model, meta) = load_checkpoint(&run.join(CHECKPOINT_DIR))?;
    let echo = run.join(CONFIG_ECHO);
    let config = if echo.exists() { Some(RunConfig::load(Some(&echo))?) } else { None };
    let targets = if model.spec.soft_target_dim > 0 {
        let path = run.join(SOFT_TARGETS);
        if !path.exists() {
            return Err(config_err(
                "soft_targets",
                format!("checkpoint expects auxiliary targets but `{}` is missing", path.display()),
            ));
        }
        let t: SoftTargets = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if t.dim() != model.spec.soft_target_dim {
            return Err(config_err(
                "soft_targets",
                format!("target width {} does not match checkpoint width {}", t.dim(), model.spec.soft_target_dim),
            ));
        }
        Some(t)
    } else {
        None
    };
    Ok(LoadedRun {
        model,
        meta,
        config,
        targets,
    })
}

/// Question/context samples for `examples` under the run's vocabulary and
/// domains, with stored auxiliary targets attached when the model uses them.
fn run_samples(run: &LoadedRun, examples: &[QAExample]) -> Result<Vec<Sample>> {
    let mut samples = examples
        .iter()
        .map(|ex| Sample::from_example(ex, InputPair::QuestionContext, &run.meta.vocab, &run.meta.domains, &run.meta.encode))
        .collect::<Result<Vec<_>>>()?;
    if let Some(t) = &run.targets {
        t.attach(&mut samples)
            .map_err(|e| config_err("soft_targets", format!("{e}; the run's targets do not cover this split")))?;
    }
    Ok(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GroupKey {
    Domain,
    Interrogative,
    Subjectivity,
}

impl GroupKey {
    fn parse(s: &str) -> Result<GroupKey> {
        match s.trim() {
            "domain" => Ok(GroupKey::Domain),
            "interrogative" | "q-word" | "qword" => Ok(GroupKey::Interrogative),
            "subjectivity" => Ok(GroupKey::Subjectivity),
            other => Err(config_err("group_by", format!("unknown grouping `{other}`"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            GroupKey::Domain => "domain",
            GroupKey::Interrogative => "interrogative",
            GroupKey::Subjectivity => "subjectivity",
        }
    }

    fn key(self, ex: &QAExample, threshold: u8) -> String {
        match self {
            GroupKey::Domain => ex.domain.clone(),
            GroupKey::Interrogative => ex.interrogative(),
            GroupKey::Subjectivity => {
                if ex.question_subjective(threshold) { "subjective" } else { "objective" }.to_string()
            }
        }
    }
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    split: &'a str,
    n: usize,
    loss: f64,
    em: f64,
    f1: f64,
    unanswerable_correct: usize,
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let keys = args.group_by.iter().map(|k| GroupKey::parse(k)).collect::<Result<Vec<_>>>()?;
    let run = load_run(&args.run)?;
    let data_dir = resolve_data_dir(args.data.as_deref(), run.config.as_ref());
    let examples = load_split(&data_dir, &args.split)?;
    if examples.is_empty() {
        return Err(CliError::empty(format!("split `{}` has no examples", args.split)));
    }
    let samples = run_samples(&run, &examples)?;
    let report: EvalReport = evaluate(&run.model, &samples)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join(format!("eval-{}", args.split)));
    create_dir(&out)?;
    clear_outputs(&out, &["by_"])?;

    let by_id: HashMap<&str, &QAExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let unanswerable_correct = report
        .examples
        .iter()
        .filter(|r| r.gold.is_empty() && exact_match(&r.prediction, &r.gold) == 1.0)
        .count();
    write_json(
        &out.join("metrics.json"),
        &EvalSummary {
            split: &args.split,
            n: report.examples.len(),
            loss: report.loss,
            em: report.em,
            f1: report.f1,
            unanswerable_correct,
        },
    )?;
    let mut lines = String::new();
    for r in &report.examples {
        lines.push_str(&serde_json::to_string(r).map_err(mtlqa::Error::from)?);
        lines.push('\n');
    }
    fs::write(out.join("predictions.jsonl"), lines)?;
    println!("{}: n={} EM {:.2} F1 {:.2}", args.split, report.examples.len(), report.em, report.f1);
    for key in keys {
        let scored: Vec<ScoredPrediction> = report
            .examples
            .iter()
            .map(|r| ScoredPrediction {
                group: key.key(by_id[r.id.as_str()], run.meta.encode.likert_threshold),
                em: r.em,
                f1: r.f1,
            })
            .collect();
        let rows = grouped_report(&scored);
        fs::write(out.join(format!("by_{}.csv", key.name())), report_csv(&rows))?;
        let text = report_text(&rows);
        fs::write(out.join(format!("by_{}.txt", key.name())), &text)?;
        println!("\nby {}\n{text}", key.name());
    }
    Ok(())
}

fn apply_analysis_overrides(cfg: &mut RunConfig, a: &AnalyzeArgs) -> Result<()> {
    if let Some(v) = a.variance {
        cfg.analysis.variance_target = v;
    }
    if let Some(p) = &a.projection {
        cfg.analysis.projection = match p.trim() {
            "none" => None,
            other => Some(LabelKey::parse(other)?),
        };
    }
    if let Some(t) = &a.ttest {
        cfg.analysis.test = parse_enum::<TTestKind>("ttest", t)?;
    }
    if let Some(n) = a.tsne_iters {
        cfg.analysis.tsne.iters = n;
    }
    if let Some(s) = a.seed {
        cfg.analysis.tsne.seed = s;
    }
    cfg.validate_analysis()
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult {
    let run = load_run(&args.run)?;
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(Some(p))?,
        None => run.config.clone().unwrap_or_default(),
    };
    apply_analysis_overrides(&mut cfg, args)?;
    let data_dir = resolve_data_dir(args.data.as_deref(), run.config.as_ref());
    let mut examples = load_split(&data_dir, &args.split)?;
    if let Some(n) = args.max_examples {
        examples.truncate(n);
    }
    if examples.is_empty() {
        return Err(CliError::empty(format!("split `{}` has no examples", args.split)));
    }
    let samples = run_samples(&run, &examples)?;
    let traces = capture_traces(&run.model, &samples)?;
    let report = analysis_report(&traces, &cfg.analysis.report_config())?;
    if report.eligible() == 0 {
        return Err(CliError::empty(format!(
            "no eligible answers in `{}`: every example is unanswerable or has a single-token answer",
            args.split
        )));
    }
    let out = args.out.clone().unwrap_or_else(|| args.run.join(format!("analysis-{}", args.split)));
    create_dir(&out)?;
    clear_outputs(&out, &["layer_", "projection_"])?;
    cfg.echo(&out)?;
    write_json(&out.join(REPORT), &report)?;
    for layer in &report.layers {
        fs::write(out.join(format!("layer_{:02}.csv", layer.layer)), layer_csv(layer))?;
        match &layer.stats {
            Some(s) => log::info!(
                "layer {}: n_correct={} n_erroneous={} t={:.3} p_bonferroni={:.3e}",
                layer.layer,
                layer.correct.n,
                layer.erroneous.n,
                s.t,
                s.p_corrected
            ),
            None => log::info!(
                "layer {}: n_correct={} n_erroneous={} ({})",
                layer.layer,
                layer.correct.n,
                layer.erroneous.n,
                layer.note.as_deref().unwrap_or("no test")
            ),
        }
    }
    if let Some(key) = cfg.analysis.projection {
        let proj = project_cls(&traces, key, &run.meta.domains, cfg.analysis.variance_target, &cfg.analysis.tsne)?;
        write_json(&out.join(format!("projection_{}.json", key.name())), &proj)?;
        for p in &proj {
            fs::write(out.join(format!("projection_{}_layer_{:02}.csv", key.name(), p.layer)), projection_csv(p))?;
        }
    }
    log::info!("analysis of {} traces written to {}", traces.len(), out.display());
    Ok(())
}
