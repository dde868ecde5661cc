//! Subcommand definitions and their implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use editvq::corpus::{ingest_jsonl, stats, Program};
use editvq::experiment::{pca_by_latent, pca_csv, prepare_dataset, PairRef};
use editvq::metrics::{evaluate_model, EvalConfig, NeighborhoodRule};
use editvq::models::{ModelKind};
use editvq::pairing::{
    filter_max_improvement, mine_pairs, read_pairs_jsonl, split, write_pairs_jsonl, ProgramPair, SplitSpec,
    DEFAULT_MIN_SIMILARITY, DEFAULT_MIN_SPEEDUP,
};
use editvq::training::{load_checkpoint, save_checkpoint, train, Checkpoint, EpochRecord, TrainConfig};
use minilang::generator::{generate_corpus, to_jsonl, Family, GeneratorConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{announce, flags, read_config_file, resolve};
use crate::error::{CliError, CliResult};
use crate::suggest::{rank, suggest, SuggestError, SuggestRequest};

#[derive(Debug, Parser)]
#[command(name = "editvq", version, about = "Learned discrete code-efficiency edits on MiniLang")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus as JSONL.
    GenCorpus(GenArgs),
    /// Print corpus statistics and histograms.
    Stats(StatsArgs),
    /// Mine slow/fast program pairs.
    Pair(PairArgs),
    /// Train a model on mined pairs.
    Train(TrainArgs),
    /// Score a checkpoint on held-out inputs.
    Eval(EvalArgs),
    /// Suggest edits for one source file.
    Suggest(SuggestArgs),
    /// Project pair encodings onto principal components, per latent.
    Pca(PcaArgs),
    /// Serve suggestions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated families, e.g. F1,F3.
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<Family>>,
    #[arg(long)]
    pub questions_per_family: Option<usize>,
    #[arg(long)]
    pub submissions_per_question: Option<usize>,
    #[arg(long)]
    pub slow_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub min_speedup: f64,
    pub min_similarity: f64,
    pub max_improvement: bool,
    pub split: SplitSpec,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            min_speedup: DEFAULT_MIN_SPEEDUP,
            min_similarity: DEFAULT_MIN_SIMILARITY,
            max_improvement: false,
            split: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub min_speedup: Option<f64>,
    #[arg(long)]
    pub min_similarity: Option<f64>,
    /// Keep only the largest-speedup target per slow program.
    #[arg(long)]
    pub max_improvement: bool,
    /// Also write the train/valid/test split as JSON.
    #[arg(long)]
    pub split_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    pub train: TrainConfig,
    pub split: SplitSpec,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Start from the large architecture and optimizer settings.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub epoch_pairs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub codebook_size: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub valid_limit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write per-epoch history as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalJob {
    pub eval: EvalConfig,
    /// Split to recover test inputs from; the checkpoint's when absent.
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub neighborhood: Option<f64>,
    #[arg(long)]
    pub rule: Option<Rule>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Also run samples through the interpreter.
    #[arg(long)]
    pub execute: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Rule {
    Distance,
    Similarity,
}

impl From<Rule> for NeighborhoodRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Distance => NeighborhoodRule::Distance,
            Rule::Similarity => NeighborhoodRule::Similarity,
        }
    }
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub latents: Option<Vec<usize>>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the full response as JSON instead of diffs.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub components: usize,
    /// Which pairs to project.
    #[arg(long, value_enum, default_value_t = PcaSet::Valid)]
    pub set: PcaSet,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PcaSet {
    Train,
    Valid,
    All,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub addr: String,
    /// Directory of static web UI files served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&a),
        Command::Stats(a) => stats_cmd(&a),
        Command::Pair(a) => pair(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Suggest(a) => suggest_cmd(&a),
        Command::Pca(a) => pca(&a),
        Command::Serve(a) => crate::server::serve_blocking(&a),
    }
}

fn file_layer(path: &Option<PathBuf>) -> CliResult<Option<Value>> {
    path.as_deref().map(read_config_file).transpose()
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn load_corpus(path: &Path) -> CliResult<Vec<Program>> {
    let (programs, summary) = ingest_jsonl(path)?;
    eprintln!(
        "corpus: {} records, {} kept ({} incorrect, {} negative runtime, {} unlexable)",
        summary.records,
        summary.kept,
        summary.dropped_incorrect,
        summary.rejected_negative_runtime,
        summary.rejected_unlexable
    );
    if programs.is_empty() {
        return Err(CliError::Data(format!("{} holds no usable programs", path.display())));
    }
    Ok(programs)
}

pub fn load_model_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn gen_corpus(a: &GenArgs) -> CliResult<()> {
    let file = file_layer(&a.config)?;
    let cfg: GeneratorConfig = resolve(
        &GeneratorConfig::default(),
        file.as_ref(),
        flags(&[
            ("seed", json!(a.seed)),
            ("families", json!(a.families)),
            ("questions_per_family", json!(a.questions_per_family)),
            ("submissions_per_question", json!(a.submissions_per_question)),
            ("slow_fraction", json!(a.slow_fraction)),
        ]),
    )?;
    announce("gen-corpus", &cfg, cfg.seed);
    cfg.validate().map_err(CliError::Usage)?;
    let records = generate_corpus(&cfg).map_err(CliError::Data)?;
    write_file(&a.out, to_jsonl(&records).as_bytes())?;
    eprintln!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

pub fn stats_cmd(a: &StatsArgs) -> CliResult<()> {
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    announce("stats", &json!({"corpus": a.corpus, "bins": a.bins}), 0);
    let programs = load_corpus(&a.corpus)?;
    let r = stats(&programs, a.bins)?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "programs: {}", r.programs);
    let _ = writeln!(out, "questions: {}", r.questions);
    let _ = writeln!(out, "median runtime: {}", r.median_runtime);
    let _ = writeln!(out, "p90 runtime: {}", r.p90_runtime);
    let _ = writeln!(out, "p90 / median: {:.3}", r.p90_over_median);
    for (title, h) in [
        ("runtime", &r.runtime_histogram),
        ("token length", &r.token_length_histogram),
        ("runtime relative to question minimum", &r.relative_runtime_histogram),
    ] {
        let _ = writeln!(out, "\n{title}\n{}", h.render(40));
    }
    if let Some(p) = &a.json {
        write_file(p, serde_json::to_string_pretty(&r).expect("report serializes").as_bytes())?;
    }
    Ok(())
}

pub fn pair(a: &PairArgs) -> CliResult<()> {
    let file = file_layer(&a.config)?;
    let cfg: PairConfig = resolve(
        &PairConfig::default(),
        file.as_ref(),
        flags(&[
            ("min_speedup", json!(a.min_speedup)),
            ("min_similarity", json!(a.min_similarity)),
            ("max_improvement", if a.max_improvement { json!(true) } else { Value::Null }),
            ("split.seed", json!(a.seed)),
        ]),
    )?;
    announce("pair", &cfg, cfg.split.seed);
    if !(cfg.min_speedup >= 1.0) || !(0.0..=1.0).contains(&cfg.min_similarity) {
        return Err(CliError::Usage(
            "min_speedup must be at least 1 and min_similarity within [0, 1]".into(),
        ));
    }
    let programs = load_corpus(&a.corpus)?;
    let mut pairs = mine_pairs(&programs, cfg.min_speedup, cfg.min_similarity);
    if cfg.max_improvement {
        pairs = filter_max_improvement(&pairs);
    }
    let mut buf = Vec::new();
    write_pairs_jsonl(&pairs, &mut buf)?;
    write_file(&a.out, &buf)?;
    eprintln!("wrote {} pairs to {}", pairs.len(), a.out.display());
    if let Some(p) = &a.split_out {
        let sp = split(&pairs, &cfg.split)?;
        eprintln!(
            "split: {} train pairs, {} valid pairs, {} test inputs",
            sp.train.len(),
            sp.valid.len(),
            sp.test_inputs.len()
        );
        write_file(p, serde_json::to_string_pretty(&sp).expect("split serializes").as_bytes())?;
    }
    Ok(())
}

/// Resolves the training job: defaults (or the large preset), then the
/// config file, then flags.
pub fn resolve_train_job(a: &TrainArgs) -> CliResult<TrainJob> {
    let file = file_layer(&a.config)?;
    let layer = flags(&[
        ("train.model.kind", json!(a.model)),
        ("train.epochs", json!(a.epochs)),
        ("train.max_steps", json!(a.max_steps)),
        ("train.epoch_pairs", json!(a.epoch_pairs)),
        ("train.batch_size", json!(a.batch_size)),
        ("train.peak_lr", json!(a.lr)),
        ("train.warmup_steps", json!(a.warmup_steps)),
        ("train.model.dropout", json!(a.dropout)),
        ("train.model.codebook_size", json!(a.codebook_size)),
        ("train.model.d_model", json!(a.d_model)),
        ("train.model.layers", json!(a.layers)),
        ("train.valid_limit", json!(a.valid_limit)),
        ("train.seed", json!(a.seed)),
    ]);
    let job: TrainJob = resolve(&TrainJob::default(), file.as_ref(), layer.clone())?;
    if !a.paper_scale {
        return Ok(job);
    }
    let base = TrainJob {
        train: TrainConfig::paper_scale(job.train.model.kind),
        split: SplitSpec::default(),
    };
    resolve(&base, file.as_ref(), layer)
}

/// Runs one training job on a corpus and its pairs.
pub fn run_training(
    programs: &[Program],
    pairs: &[ProgramPair],
    job: &TrainJob,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> CliResult<Checkpoint> {
    let data = prepare_dataset(programs, pairs, &job.split, &job.train.model)?;
    eprintln!(
        "data: {} train pairs, {} valid pairs, {} held-out inputs, {} skipped as too long, vocabulary {}",
        data.train.len(),
        data.valid.len(),
        data.split.test_inputs.len(),
        data.skipped_too_long,
        data.vocab.len()
    );
    if data.valid.is_empty() {
        return Err(CliError::Data("the split left no validation pairs".into()));
    }
    let out = train(&data.train, &data.valid, &data.vocab, &job.train, |r| on_epoch(r))?;
    let mut ck = out.checkpoint;
    ck.meta.split = Some(job.split.clone());
    Ok(ck)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,step,lr,train_loss,train_ce,valid_loss,valid_ce,perplexity,mean_kl_per_dim,reseeded\n");
    for r in history {
        let kl = r
            .kl_per_dim
            .as_ref()
            .map(|v| (v.iter().sum::<f64>() / v.len().max(1) as f64).to_string())
            .unwrap_or_default();
        let ppl = r.perplexity.map(|p| p.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch, r.step, r.lr, r.train_loss, r.train_ce, r.valid_loss, r.valid_ce, ppl, kl, r.reseeded
        ));
    }
    s
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let job = resolve_train_job(a)?;
    announce("train", &job, job.train.seed);
    job.train.validate()?;
    let programs = load_corpus(&a.corpus)?;
    let pairs = read_pairs_jsonl(&a.pairs)?;
    let ck = run_training(&programs, &pairs, &job, |r| {
        eprintln!(
            "epoch {:>3} step {:>6} lr {:.2e} train {:.4} valid {:.4}{}",
            r.epoch,
            r.step,
            r.lr,
            r.train_loss,
            r.valid_loss,
            r.perplexity.map(|p| format!(" perplexity {p:.2}")).unwrap_or_default()
        );
    })?;
    save_checkpoint(&ck, &a.out)?;
    eprintln!("saved {} (best epoch {}, step {})", a.out.display(), ck.meta.best_epoch, ck.meta.step);
    if let Some(p) = &a.history {
        write_file(p, history_csv(&ck.meta.history).as_bytes())?;
    }
    Ok(())
}

pub fn resolve_eval_job(a: &EvalArgs) -> CliResult<EvalJob> {
    let file = file_layer(&a.config)?;
    resolve(
        &EvalJob::default(),
        file.as_ref(),
        flags(&[
            ("eval.samples", json!(a.samples)),
            ("eval.temperature", json!(a.temperature)),
            ("eval.neighborhood", json!(a.neighborhood)),
            ("eval.rule", json!(a.rule.map(NeighborhoodRule::from))),
            ("eval.max_len", json!(a.max_len)),
            ("eval.execute", if a.execute { json!(true) } else { Value::Null }),
            ("eval.seed", json!(a.seed)),
        ]),
    )
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let mut job = resolve_eval_job(a)?;
    let ck = load_model_checkpoint(&a.checkpoint)?;
    let spec = job.split.clone().or_else(|| ck.meta.split.clone()).unwrap_or_default();
    job.split = Some(spec.clone());
    announce("eval", &job, job.eval.seed);
    let programs = load_corpus(&a.corpus)?;
    let pairs = read_pairs_jsonl(&a.pairs)?;
    let sp = split(&pairs, &spec)?;
    let by_id = editvq::pairing::index_by_id(&programs);
    let inputs: Vec<&Program> = sp
        .test_inputs
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| CliError::Data(format!("test input '{id}' is not in the corpus")))
        })
        .collect::<CliResult<_>>()?;
    let model = ck.model()?;
    let report = evaluate_model(&model, &ck.meta.vocab, &inputs, &programs, &job.eval)?;
    eprintln!(
        "{}: {} of {} inputs scored; average S_C {:.4} S_EH {:.4} S_ES {:.4}; maximum S_C {:.4} S_EH {:.4} S_ES {:.4}; S_D {:.4}",
        report.model,
        report.inputs_scored,
        report.inputs_total,
        report.average.correctness,
        report.average.efficiency_hard,
        report.average.efficiency_soft,
        report.maximum.correctness,
        report.maximum.efficiency_hard,
        report.maximum.efficiency_soft,
        report.diversity
    );
    write_file(&a.out, serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())
}

pub fn suggest_cmd(a: &SuggestArgs) -> CliResult<()> {
    let req = SuggestRequest {
        source: std::fs::read_to_string(&a.source)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.source.display())))?,
        latents: a.latents.clone(),
        temperature: a.temperature,
        max_len: a.max_len,
        samples: a.samples,
        seed: a.seed,
    };
    announce(
        "suggest",
        &json!({"checkpoint": a.checkpoint, "source": a.source, "latents": a.latents,
                "temperature": a.temperature, "samples": a.samples, "max_len": a.max_len}),
        req.seed.unwrap_or(0),
    );
    let ck = load_model_checkpoint(&a.checkpoint)?;
    let model = ck.model()?;
    let mut resp = suggest(&model, &ck.meta.vocab, &req).map_err(|e| match e {
        SuggestError::BadRequest(m) | SuggestError::TooLong(m) => CliError::Data(m),
        SuggestError::Internal(m) => CliError::Data(m),
    })?;
    rank(&mut resp.suggestions);
    let mut out = std::io::stdout().lock();
    if a.json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&resp).expect("response serializes"));
        return Ok(());
    }
    for s in &resp.suggestions {
        let latent = s.latent.map(|k| format!("latent {k}")).unwrap_or_else(|| "sample".into());
        let _ = writeln!(out, "# {latent}  log_prob {:.3}{}", s.log_prob, if s.parses { "" } else { "  (does not parse)" });
        if s.diff.is_empty() {
            let _ = writeln!(out, "(no change)\n");
        } else {
            let _ = writeln!(out, "{}", s.diff);
        }
    }
    Ok(())
}

pub fn pca(a: &PcaArgs) -> CliResult<()> {
    if a.components == 0 {
        return Err(CliError::Usage("--components must be positive".into()));
    }
    announce(
        "pca",
        &json!({"checkpoint": a.checkpoint, "components": a.components, "set": format!("{:?}", a.set), "limit": a.limit}),
        0,
    );
    let ck = load_model_checkpoint(&a.checkpoint)?;
    if !ck.meta.model_kind.is_vq() {
        return Err(CliError::Data(format!(
            "{} holds a {} model; pca needs edit-vqvae or vqvae-concat",
            a.checkpoint.display(),
            ck.meta.model_kind
        )));
    }
    let programs = load_corpus(&a.corpus)?;
    let pairs = read_pairs_jsonl(&a.pairs)?;
    let spec = ck.meta.split.clone().unwrap_or_default();
    let mut data = prepare_dataset(&programs, &pairs, &spec, &ck.meta.train_config.model)?;
    let (chosen, examples) = match a.set {
        PcaSet::Train => (data.train_pairs, data.train),
        PcaSet::Valid => (data.valid_pairs, data.valid),
        PcaSet::All => {
            data.train_pairs.extend(data.valid_pairs);
            data.train.extend(data.valid);
            (data.train_pairs, data.train)
        }
    };
    let n = a.limit.unwrap_or(chosen.len()).min(chosen.len());
    let refs: Vec<PairRef> = chosen[..n]
        .iter()
        .zip(&examples)
        .map(|(p, ex)| PairRef {
            question_id: &p.question_id,
            slow_id: &p.slow_id,
            fast_id: &p.fast_id,
            example: ex,
        })
        .collect();
    let model = ck.model()?;
    let report = pca_by_latent(&model, &refs, a.components)?;
    write_file(&a.out, pca_csv(&report).as_bytes())?;
    eprintln!("explained variance ratio: {:?}", report.explained_variance_ratio);
    for d in &report.displacements {
        eprintln!(
            "latent {:>3}: {:>5} pairs, |mean displacement| {:.4}, spread {:.4}{}",
            d.latent,
            d.count,
            d.mean_norm,
            d.spread,
            if d.clustered() { "  clustered" } else { "" }
        );
    }
    Ok(())
}
