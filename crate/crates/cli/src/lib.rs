//! Command-line front end: oracle traces, training, generation, scoring and
//! run inspection.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use cachenlg::amr::{parse_penman_blocks, preprocess_labels, AmrError};
use cachenlg::corpus::{load_corpus, load_embeddings, AlignedExample, CorpusError, Vocabulary};
use cachenlg::decode::{evaluate, generate, Accuracy, DecodeError, GenerateOptions, Prepared};
use cachenlg::eval::{bin_by_size, bleu, EvalError, EvalReport, SizedResult};
use cachenlg::model::{Model, ModelConfig, ModelError};
use cachenlg::neural::AdamConfig;
use cachenlg::oracle::{build_interleaved_target, extract_trace, OracleError};
use cachenlg::synth::{synthesize, SynthOptions};
use cachenlg::train::{train, TrainOptions};
use cachenlg::transition::{init_config, render_table, System, TransitionError};

pub use config::RunConfig;
use config::{existing, parse_config_file, required, DATA_ROOT_VAR};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Search(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Search(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AmrError> for CliError {
    fn from(e: AmrError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TransitionError> for CliError {
    fn from(e: TransitionError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::TreewidthExceeded { .. } => CliError::Search(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::NoCompleteHypothesis => CliError::Search(e.to_string()),
            DecodeError::Oracle(o) => o.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cachenlg", version, about = "AMR-to-text generation with a reversed cache transition parser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// key=value settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cache size.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Recurrent state size.
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// Word and concept embedding size (taken from --embeddings when given).
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    /// Edge-label embedding size.
    #[arg(long, global = true)]
    pub edge_dim: Option<usize>,
    /// Graph encoder propagation steps.
    #[arg(long, global = true)]
    pub enc_steps: Option<usize>,
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    /// Score bonus per generated English word.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub len_reward: Option<f64>,
    /// Word limit per sentence (conditioned) or per span (joint).
    #[arg(long, global = true)]
    pub max_words: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// conditioned or joint.
    #[arg(long, global = true)]
    pub decoder: Option<String>,
    /// Number of synthetic examples.
    #[arg(long, global = true)]
    pub pairs: Option<usize>,
    /// Largest synthetic graph.
    #[arg(long, global = true)]
    pub max_concepts: Option<usize>,
    /// Aligned corpus file.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Pretrained vectors, one `token v1 .. vD` per line.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint path; the manifest goes to `<model>.manifest`.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// PENMAN graphs to generate from.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Generated sentences, one per line.
    #[arg(long, global = true)]
    pub candidates: Option<PathBuf>,
    /// Reference sentences, one per line.
    #[arg(long, global = true)]
    pub references: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write gold action traces for every corpus example.
    Oracle,
    /// Train a model and write a checkpoint.
    Train,
    /// Generate one sentence per input graph.
    Generate,
    /// Score candidates against references.
    Eval,
    /// Render the oracle run of corpus examples as a table.
    Inspect {
        /// Only this example (0-based).
        #[arg(long)]
        index: Option<usize>,
    },
    /// Write a synthetic aligned corpus.
    Synth,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |key: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((key, v));
            }
        };
        let s = |x: &Option<usize>| x.map(|v| v.to_string());
        let p = |x: &Option<PathBuf>| x.as_ref().map(|v| v.to_string_lossy().into_owned());
        put("k", s(&self.k));
        put("hidden", s(&self.hidden));
        put("embed-dim", s(&self.embed_dim));
        put("edge-dim", s(&self.edge_dim));
        put("enc-steps", s(&self.enc_steps));
        put("beam", s(&self.beam));
        put("len-reward", self.len_reward.map(|v| v.to_string()));
        put("max-words", s(&self.max_words));
        put("epochs", s(&self.epochs));
        put("lr", self.lr.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("decoder", self.decoder.clone());
        put("pairs", s(&self.pairs));
        put("max-concepts", s(&self.max_concepts));
        put("corpus", p(&self.corpus));
        put("embeddings", p(&self.embeddings));
        put("model", p(&self.model));
        put("out", p(&self.out));
        put("input", p(&self.input));
        put("candidates", p(&self.candidates));
        put("references", p(&self.references));
        out
    }

    /// Defaults, then the config file, then flags, then the data root.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            for (k, v) in parse_config_file(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        let root = std::env::var_os(DATA_ROOT_VAR).map(PathBuf::from);
        cfg.resolve_data_paths(root.as_deref());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Oracle => oracle(&cfg),
        Command::Train => train_cmd(&cfg),
        Command::Generate => generate_cmd(&cfg),
        Command::Eval => eval_cmd(&cfg),
        Command::Inspect { index } => inspect(&cfg, *index),
        Command::Synth => synth(&cfg),
    }
}

fn corpus(cfg: &RunConfig) -> Result<Vec<AlignedExample>, CliError> {
    Ok(load_corpus(existing(&cfg.corpus, "corpus")?)?)
}

fn oracle(cfg: &RunConfig) -> Result<(), CliError> {
    let examples = corpus(cfg)?;
    let mut out = String::new();
    let mut failures = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let trace = match extract_trace(ex, cfg.k) {
            Ok(t) => t,
            Err(OracleError::TreewidthExceeded { k }) => {
                failures.push(format!("example {i}: no run with cache size {k} covers every edge"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let g = &ex.graph;
        let _ = writeln!(out, "# {i} {}", ex.sentence());
        let actions: Vec<String> = trace.actions.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(out, "actions {}", actions.join(" "));
        let order: Vec<String> = trace
            .buffer_order
            .iter()
            .map(|&c| format!("{}:{}", c.index(), g.label(c)))
            .collect();
        let _ = writeln!(out, "order {}", order.join(" "));
        let evict: Vec<String> = trace.evict_indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "evict {}", evict.join(" "));
        let y: Vec<String> = build_interleaved_target(&trace).iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "y {}", y.join(" "));
        let r: Vec<&str> = trace.increments.iter().map(|&b| if b { "1" } else { "0" }).collect();
        let _ = writeln!(out, "r {}\n", r.join(" "));
    }
    emit(&cfg.out, &out)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Search(failures.join("\n")))
    }
}

fn inspect(cfg: &RunConfig, index: Option<usize>) -> Result<(), CliError> {
    let examples = corpus(cfg)?;
    let chosen: Vec<(usize, &AlignedExample)> = match index {
        Some(i) => vec![(
            i,
            examples
                .get(i)
                .ok_or_else(|| CliError::Usage(format!("corpus has {} examples", examples.len())))?,
        )],
        None => examples.iter().enumerate().collect(),
    };
    let mut out = String::new();
    for (i, ex) in chosen {
        let trace = extract_trace(ex, cfg.k)?;
        let init = init_config(&ex.graph, &trace.buffer_order, cfg.k, System::Simplified)?;
        let _ = writeln!(out, "# {i} {}", ex.sentence());
        out += &render_table(&ex.graph, &init, &trace.actions, &trace.spans)?;
        out.push('\n');
    }
    emit(&cfg.out, &out)
}

/// Prepares every example the oracle can handle, reporting the rest.
fn prepare_all(examples: &[AlignedExample], k: usize) -> Result<Vec<Prepared>, CliError> {
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        match Prepared::new(ex, k) {
            Ok(p) => out.push(p),
            Err(OracleError::TreewidthExceeded { .. }) => {
                eprintln!("skipping example {i}: no run with cache size {k} covers every edge");
            }
            Err(e) => return Err(e.into()),
        }
    }
    if out.is_empty() {
        return Err(CliError::Search(format!("no example admits a run with cache size {k}")));
    }
    Ok(out)
}

fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let examples = corpus(cfg)?;
    let model_path = required(&cfg.model, "model")?;
    let vocab = Vocabulary::from_corpus(&examples);
    let relations = Vocabulary::relations_from_corpus(&examples);
    let embeddings = match &cfg.embeddings {
        Some(_) => Some(load_embeddings(existing(&cfg.embeddings, "embeddings")?, &vocab)?),
        None => None,
    };
    let config = ModelConfig {
        decoder: cfg.decoder,
        k: cfg.k,
        hidden: cfg.hidden,
        embed_dim: embeddings.as_ref().map_or(cfg.embed_dim, |t| t.dim()),
        edge_dim: cfg.edge_dim,
        enc_steps: cfg.enc_steps,
    };
    let data = prepare_all(&examples, cfg.k)?;
    let mut model = Model::new(config, vocab, relations, embeddings.as_ref(), cfg.seed)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        adam: AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        seed: cfg.seed,
        shuffle: true,
        stop_at: None,
    };
    let mut log = String::new();
    train(&mut model, &data, &opts, |r| {
        let line = format!("epoch {} loss {:.6} {}\n", r.epoch, r.loss, r.accuracy);
        if cfg.out.is_none() {
            print!("{line}");
        }
        log += &line;
    })?;
    if cfg.out.is_some() {
        emit(&cfg.out, &log)?;
    }
    model.save(&model_path)?;
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<Model, CliError> {
    Ok(Model::load(&existing(&cfg.model, "model")?)?)
}

fn generate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let input = existing(&cfg.input, "input")?;
    let text = fs::read_to_string(&input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let graphs = parse_penman_blocks(&text)?;
    let opts = GenerateOptions {
        beam: cfg.beam,
        len_reward: cfg.len_reward,
        max_words: cfg.max_words,
    };
    let mut out = String::new();
    for g in &graphs {
        let g = preprocess_labels(g);
        let generated = generate(&model, &g, &opts)?;
        out += &generated.sentence();
        out.push('\n');
    }
    emit(&cfg.out, &out)
}

fn eval_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let candidates = read_lines(&existing(&cfg.candidates, "candidates")?)?;
    let examples = match &cfg.corpus {
        Some(_) => Some(corpus(cfg)?),
        None => None,
    };
    let references = match (&cfg.references, &examples) {
        (Some(_), _) => read_lines(&existing(&cfg.references, "references")?)?,
        (None, Some(exs)) => exs.iter().map(|e| e.tokens.clone()).collect(),
        (None, None) => return Err(CliError::Usage("--references or --corpus is required".into())),
    };
    let score = bleu(&candidates, &references)?;
    let bins = match &examples {
        Some(exs) => {
            if exs.len() != candidates.len() {
                return Err(CliError::Data(format!(
                    "{} candidates but {} corpus examples",
                    candidates.len(),
                    exs.len()
                )));
            }
            let results: Vec<SizedResult> = exs
                .iter()
                .zip(candidates.iter().zip(&references))
                .map(|(e, (c, r))| SizedResult {
                    concepts: e.graph.len(),
                    candidate: c.clone(),
                    reference: r.clone(),
                })
                .collect();
            bin_by_size(&results)
        }
        None => Vec::new(),
    };
    let accuracy = match (&cfg.model, &examples) {
        (Some(_), Some(exs)) => {
            let model = load_model(cfg)?;
            let mut acc = Accuracy::default();
            for p in prepare_all(exs, model.net.config.k)? {
                acc.add(&evaluate(&model, &p)?.1);
            }
            Some(acc)
        }
        _ => None,
    };
    let report = EvalReport { score, bins, accuracy };
    match &cfg.out {
        Some(path) => {
            emit(&cfg.out, &report.text())?;
            let mut csv = path.as_os_str().to_owned();
            csv.push(".csv");
            emit(&Some(PathBuf::from(csv)), &report.bins_csv())
        }
        None => emit(&None, &(report.text() + "\n" + &report.bins_csv())),
    }
}

fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let examples = synthesize(&SynthOptions {
        pairs: cfg.pairs,
        max_concepts: cfg.max_concepts,
        k: cfg.k,
        seed: cfg.seed,
        ..SynthOptions::default()
    });
    let text: Vec<String> = examples.iter().map(|e| e.to_block()).collect();
    emit(&cfg.out, &(text.join("\n")))
}
