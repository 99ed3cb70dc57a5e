use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::warn;

use ike::corpus::{self, split_at};
use ike::metrics::Pooling;
use ike::retrieval::{encode_key, write_embeddings, Embedder, StubEmbedder};
use ike::runner::{self, ConfigPairs, Outcome, RunConfig, Summary};
use ike::lm::RemoteEmbedder;

#[derive(Parser)]
#[command(name = "ike", version, about = "In-context knowledge editing harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a Counterfact corpus (and optionally a Templama file).
    Validate(Common),
    /// Write stub or endpoint embeddings for every corpus record.
    Embed(EmbedArgs),
    /// Run the editing suite and report ES/PS/NS and magnitudes.
    Edit(Common),
    /// Run the editing suite under one ablation switch.
    Ablate(Common),
    /// Run the contrastive knowledge assessment.
    Cka(Common),
    /// Run the sequential temporal-editing suite.
    Temporal(Common),
    /// Recompute summary and table from an existing run directory.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    templama: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backend_url: Option<String>,
    #[arg(long)]
    mock_rules: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// copy_only, update_only, retain_only, random_selection, random_ordering, prompt_baseline
    #[arg(long)]
    ablation: Option<String>,
    /// Comma-separated CKA thresholds.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    dump_contexts: bool,
    /// Fail on the first rejected record or case error.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    embedding_url: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding summary.json and cases.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
}

impl Common {
    fn pairs(&self) -> Result<ConfigPairs> {
        let mut pairs = match &self.config {
            Some(path) => ConfigPairs::from_file(path)?,
            None => ConfigPairs::default(),
        };
        let path = |p: &PathBuf| p.to_string_lossy().into_owned();
        let mut set = |key: &str, value: Option<String>| -> Result<()> {
            if let Some(v) = value {
                pairs.set(key, &v)?;
            }
            Ok(())
        };
        set("corpus", self.corpus.as_ref().map(path))?;
        set("templama", self.templama.as_ref().map(path))?;
        set("k", self.k.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("embeddings", self.embeddings.as_ref().map(path))?;
        set("budget", self.budget.map(|v| v.to_string()))?;
        set("test_size", self.test_size.map(|v| v.to_string()))?;
        set("out", self.out.as_ref().map(path))?;
        set("ablation", self.ablation.clone())?;
        set("alpha", self.alpha.clone())?;
        set("pooling", self.pooling.clone())?;
        set("normalization", self.normalization.clone())?;
        set("workers", self.workers.map(|v| v.to_string()))?;
        if self.dump_contexts {
            set("dump_contexts", Some("true".into()))?;
        }
        if self.strict {
            set("strict", Some("true".into()))?;
        }
        if let Some(url) = &self.backend_url {
            pairs.remove("mock_rules");
            pairs.set("backend_url", url)?;
        }
        if let Some(rules) = &self.mock_rules {
            pairs.remove("backend_url");
            pairs.set("mock_rules", &path(rules))?;
        }
        if self.embeddings.is_some() {
            pairs.remove("embedding_url");
            pairs.remove("stub_dimension");
        }
        Ok(pairs)
    }

    fn config(&self) -> Result<RunConfig> {
        Ok(RunConfig::from_pairs(&self.pairs()?)?)
    }
}

fn print_summary<T>(outcome: &Outcome<T>, config: &RunConfig) {
    print!("{}", runner::render_table(&outcome.summary));
    let Summary { metadata, .. } = &outcome.summary;
    println!(
        "\n{} case(s), {} skipped; outputs in {}",
        metadata.cases,
        metadata.skipped,
        config.out.display()
    );
}

fn validate(common: &Common) -> Result<()> {
    let pairs = common.pairs()?;
    // Validation needs no backend; fill one in so the config resolves.
    let config = match RunConfig::from_pairs(&pairs) {
        Ok(c) => c,
        Err(_) => {
            let mut p = pairs.clone();
            p.set("mock_rules", "-")?;
            RunConfig::from_pairs(&p)?
        }
    };
    let mut problems = 0;
    if let Some(path) = &config.corpus {
        let report = corpus::load_counterfact(path, false)?;
        let split = split_at(report.records, config.test_size);
        let incomplete: Vec<_> = split
            .test
            .iter()
            .filter_map(|r| r.validate_for_test().err())
            .collect();
        println!(
            "{}: {} valid record(s) ({} test, {} train), {} rejected, {} test record(s) without probe lists",
            path.display(),
            split.test.len() + split.train.len(),
            split.test.len(),
            split.train.len(),
            report.rejected.len(),
            incomplete.len()
        );
        for e in report.rejected.iter().chain(&incomplete) {
            println!("  {e}");
        }
        problems += report.rejected.len() + incomplete.len();
    }
    if let Some(path) = &config.templama {
        let report = corpus::load_templama(path, false)?;
        println!(
            "{}: {} timeline(s), {} rejected, {} warning(s)",
            path.display(),
            report.records.len(),
            report.rejected.len(),
            report.warnings.len()
        );
        for e in &report.rejected {
            println!("  {e}");
        }
        for w in &report.warnings {
            println!("  warning: {w}");
        }
        problems += report.rejected.len();
    }
    if config.corpus.is_none() && config.templama.is_none() {
        bail!("nothing to validate: pass --corpus and/or --templama");
    }
    if config.strict && problems > 0 {
        bail!("{problems} problem(s) found");
    }
    Ok(())
}

fn embed(args: &EmbedArgs) -> Result<()> {
    let pairs = args.common.pairs()?;
    let corpus_path = args
        .common
        .corpus
        .clone()
        .or_else(|| args.common.config().ok().and_then(|c| c.corpus))
        .context("--corpus is required")?;
    let out = args.common.out.clone().context("--out <file> is required")?;
    let seed = args.common.seed.unwrap_or(0);
    let records = corpus::load_counterfact(&corpus_path, args.common.strict)?.records;
    let keys: Vec<String> = records.iter().map(encode_key).collect();
    let vectors = match &args.embedding_url {
        Some(url) => {
            let mut p = pairs.clone();
            p.set("mock_rules", "-")?;
            let config = RunConfig::from_pairs(&p)?;
            RemoteEmbedder::new(config.transport(url)).embed(&keys)?
        }
        None => StubEmbedder {
            dimension: args.dimension.unwrap_or(64),
            seed,
        }
        .embed(&keys)?,
    };
    write_embeddings(&out, records.iter().map(|r| r.case_id).zip(&vectors))?;
    println!("wrote {} embedding(s) to {}", vectors.len(), out.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let pooling = args
        .pooling
        .as_deref()
        .map(str::parse::<Pooling>)
        .transpose()
        .map_err(anyhow::Error::msg)?;
    let alphas = args
        .alpha
        .as_deref()
        .map(|list| {
            list.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()
        .context("--alpha")?;
    let summary = runner::rerender(&args.out, pooling, alphas.as_deref())?;
    print!("{}", runner::render_table(&summary));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(c) => validate(&c),
        Command::Embed(a) => embed(&a),
        Command::Edit(c) => {
            let config = c.config()?;
            let outcome = runner::run_edit_suite(&config)?;
            print_summary(&outcome, &config);
            Ok(())
        }
        Command::Ablate(c) => {
            let config = c.config()?;
            if config.ablation.is_none() {
                bail!("--ablation=<name> is required");
            }
            let outcome = runner::run_ablation(&config)?;
            print_summary(&outcome, &config);
            Ok(())
        }
        Command::Cka(c) => {
            let config = c.config()?;
            let outcome = runner::run_cka_suite(&config)?;
            print_summary(&outcome, &config);
            Ok(())
        }
        Command::Temporal(c) => {
            let config = c.config()?;
            let path = config.templama.clone().context("--templama is required")?;
            let loaded = corpus::load_templama(&path, config.strict)?;
            for w in &loaded.warnings {
                warn!("{w}");
            }
            let outcome = runner::run_temporal_suite(&config, &loaded.records)?;
            print_summary(&outcome, &config);
            Ok(())
        }
        Command::Report(a) => report(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
