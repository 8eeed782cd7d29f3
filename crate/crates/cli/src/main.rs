//! Command-line pipeline: compile a grammar to an FST, extract expected
//! n-gram counts, train ARPA models (exact counts or sampling), optimize
//! mixture weights under a past-data constraint, and evaluate.
//!
//! Exit codes: 0 success, 2 grammar parse error, 3 compile error, 4 numeric
//! failure (divergence, empty counts, zero probability), 5 infeasible
//! solution without `--allow-infeasible`, 1 anything else.

mod runspec;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use grammarlm::asr_eval::{expected_wer_loss, one_best_wer, oracle_wer, read_nbest, Scales};
use grammarlm::counts::{
    expected_counts, scale_counts, ExpectedCounts, PruneConfig,
};
use grammarlm::grammar::{self, Catalog, CompileOptions, NonTerminalMode};
use grammarlm::lm::{perplexity, train_from_samples, train_katz, UnkPolicy};
use grammarlm::optimizer::{
    multi_app_optimize, ReportRow, SolutionReport,
};
use grammarlm::wfst::{PathSampler, WeightedFst};
use grammarlm::{EvalCorpus, MixtureModel};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "grammarlm", version, about = "Grammar-derived n-gram models and mixture adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a grammar file into a weighted FST dump.
    Compile(CompileArgs),
    /// Extract expected n-gram counts from an FST dump.
    Counts(CountsArgs),
    /// Train an ARPA model from counts, exact FST counts, or samples.
    Train(TrainArgs),
    /// Sample sentences from an FST.
    Sample(SampleArgs),
    /// Score a corpus or n-best lists with a model or mixture.
    Evaluate(EvaluateArgs),
    /// Solve a constrained interpolation-weight problem from a runspec.
    Optimize(OptimizeArgs),
    /// Re-render the report of a stored solution.
    Report(ReportArgs),
}

#[derive(Args)]
struct CompileArgs {
    /// Grammar file in the rule DSL.
    #[arg(long)]
    grammar: PathBuf,
    /// Root rule name.
    #[arg(long)]
    root: String,
    /// Catalog binding NAME=path; repeatable.
    #[arg(long = "catalog")]
    catalogs: Vec<String>,
    /// Leave non-terminal arcs in place instead of expanding catalogs.
    #[arg(long)]
    keep_nonterminals: bool,
    /// Probability of taking an optional element.
    #[arg(long, default_value_t = 0.5)]
    optional_prob: f64,
    /// Maximum nesting depth for non-terminal expansion.
    #[arg(long, default_value_t = 16)]
    max_depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CountsArgs {
    /// Textual FST dump.
    #[arg(long)]
    fst: PathBuf,
    #[arg(long)]
    order: usize,
    /// Drop in-flight histories below this mass; 0 disables pruning.
    #[arg(long, default_value_t = 1e-8)]
    prune: f64,
    /// Count raw word sequences without sentence boundary symbols.
    #[arg(long)]
    no_boundaries: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Counts file produced by `counts`.
    #[arg(long, conflicts_with = "fst")]
    counts: Option<PathBuf>,
    /// FST dump: exact expected counts, or sampled data with `--sample`.
    #[arg(long)]
    fst: Option<PathBuf>,
    /// Train on this many sampled sentences instead of exact counts.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Pseudo-corpus token mass for scaling fractional counts.
    #[arg(long, default_value_t = 1e6)]
    scale_mass: f64,
    /// Keep an `<unk>` entry for out-of-vocabulary words.
    #[arg(long)]
    unk: bool,
    /// Cap on new vocabulary (relative to --baseline) by unigram count.
    #[arg(long)]
    vocab_cap: Option<usize>,
    /// Baseline ARPA model defining the known vocabulary for --vocab-cap.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    fst: PathBuf,
    #[arg(short = 'n', long)]
    num: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Single ARPA model.
    #[arg(long, conflicts_with = "mixture")]
    model: Option<PathBuf>,
    /// Mixture spec file: `model-path<TAB>weight` per line.
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Corpus to compute perplexity on.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// N-best file for WER metrics (requires --refs).
    #[arg(long, requires = "refs")]
    nbest: Option<PathBuf>,
    /// Reference transcripts.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    acoustic_scale: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    /// TOML run description.
    #[arg(long)]
    runspec: PathBuf,
    /// Override the runspec's penalty coefficient.
    #[arg(long)]
    sigma: Option<f64>,
    /// Succeed even when the solution violates the past-data bound.
    #[arg(long)]
    allow_infeasible: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Stored solution JSON from `optimize`.
    #[arg(long)]
    solution: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error category driving the process exit code.
#[derive(Debug, Clone, Copy)]
enum Failure {
    ParseError,
    CompileError,
    NumericError,
    Infeasible,
    Other,
}

impl Failure {
    fn code(self) -> u8 {
        match self {
            Failure::ParseError => 2,
            Failure::CompileError => 3,
            Failure::NumericError => 4,
            Failure::Infeasible => 5,
            Failure::Other => 1,
        }
    }
}

struct CmdError {
    failure: Failure,
    error: anyhow::Error,
}

impl CmdError {
    fn new(failure: Failure, error: anyhow::Error) -> Self {
        Self { failure, error }
    }
}

impl From<anyhow::Error> for CmdError {
    fn from(error: anyhow::Error) -> Self {
        Self { failure: Failure::Other, error }
    }
}

type CmdResult = Result<(), CmdError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GRAMMARLM_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compile(args) => cmd_compile(args),
        Command::Counts(args) => cmd_counts(args),
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.failure.code())
        }
    }
}

/// Writes via a temp file in the target directory plus rename, so readers
/// never observe partial output.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_fst(path: &Path) -> Result<WeightedFst> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    WeightedFst::read_text(BufReader::new(file))
        .with_context(|| format!("parsing FST {}", path.display()))
}

fn cmd_compile(args: CompileArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.grammar)
        .with_context(|| format!("reading {}", args.grammar.display()))
        .map_err(CmdError::from)?;
    let ast = grammar::parse_grammar(&text)
        .map_err(|e| CmdError::new(Failure::ParseError, anyhow::anyhow!("{e}")))?;
    let catalog_paths =
        runspec::parse_catalog_args(&args.catalogs).map_err(CmdError::from)?;
    let mut catalogs = HashMap::new();
    for (name, path) in catalog_paths {
        let file = File::open(&path)
            .with_context(|| format!("opening catalog {}", path.display()))
            .map_err(CmdError::from)?;
        let catalog = Catalog::read(name.clone(), BufReader::new(file))
            .map_err(|e| CmdError::new(Failure::ParseError, anyhow::anyhow!("{e}")))?;
        catalogs.insert(name, catalog);
    }
    let options = CompileOptions {
        mode: NonTerminalMode::KeepArcs,
        optional_prob: args.optional_prob,
    };
    let compile_err = |e: anyhow::Error| CmdError::new(Failure::CompileError, e);
    let mut fst = grammar::compile(&ast, &args.root, &catalogs, &options)
        .map_err(|e| compile_err(anyhow::anyhow!("{e}")))?;
    if !args.keep_nonterminals {
        let bindings = grammar::catalog_bindings(&catalogs);
        fst = fst
            .replace(&bindings, args.max_depth)
            .map_err(|e| compile_err(anyhow::anyhow!("{e}")))?;
    }
    let text = fst.to_text().map_err(|e| CmdError::from(anyhow::anyhow!("{e}")))?;
    write_atomic(&args.out, text.as_bytes()).map_err(CmdError::from)?;
    info!("wrote {} ({} states, {} arcs)", args.out.display(), fst.num_states(), fst.num_arcs());
    Ok(())
}

fn cmd_counts(args: CountsArgs) -> CmdResult {
    let fst = read_fst(&args.fst).map_err(CmdError::from)?;
    let prune = if args.prune > 0.0 {
        PruneConfig::with_threshold(args.prune)
    } else {
        PruneConfig::off()
    };
    let counts = expected_counts(&fst, args.order, !args.no_boundaries, &prune)
        .map_err(|e| CmdError::new(Failure::NumericError, anyhow::anyhow!("{e}")))?;
    let text = counts
        .to_text()
        .map_err(|e| CmdError::new(Failure::NumericError, anyhow::anyhow!("{e}")))?;
    write_atomic(&args.out, text.as_bytes()).map_err(CmdError::from)?;
    info!("wrote {} ({} n-grams)", args.out.display(), counts.len());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let unk_policy = if args.unk { UnkPolicy::open() } else { UnkPolicy::Closed };
    let cutoffs = vec![0u64; args.order];
    let numeric = |e: anyhow::Error| CmdError::new(Failure::NumericError, e);

    let model = match (&args.counts, &args.fst, args.sample) {
        (Some(counts_path), None, None) => {
            let file = File::open(counts_path)
                .with_context(|| format!("opening {}", counts_path.display()))
                .map_err(CmdError::from)?;
            let counts = ExpectedCounts::read(BufReader::new(file))
                .map_err(|e| CmdError::new(Failure::ParseError, anyhow::anyhow!("{e}")))?;
            let counts = cap_vocab(counts, &args).map_err(CmdError::from)?;
            let (scaled, k) = scale_counts(&counts, args.scale_mass)
                .map_err(|e| numeric(anyhow::anyhow!("{e}")))?;
            info!("scaled counts by {k}");
            train_katz(&scaled, args.order, &cutoffs, unk_policy)
                .map_err(|e| numeric(anyhow::anyhow!("{e}")))?
        }
        (None, Some(fst_path), sample) => {
            let fst = read_fst(fst_path).map_err(CmdError::from)?;
            match sample {
                Some(n) => train_from_samples(&fst, n, args.seed, args.order, &cutoffs, unk_policy)
                    .map_err(|e| numeric(anyhow::anyhow!("{e}")))?,
                None => {
                    let counts =
                        expected_counts(&fst, args.order, true, &PruneConfig::default())
                            .map_err(|e| numeric(anyhow::anyhow!("{e}")))?;
                    let counts = cap_vocab(counts, &args).map_err(CmdError::from)?;
                    let (scaled, k) = scale_counts(&counts, args.scale_mass)
                        .map_err(|e| numeric(anyhow::anyhow!("{e}")))?;
                    info!("scaled counts by {k}");
                    train_katz(&scaled, args.order, &cutoffs, unk_policy)
                        .map_err(|e| numeric(anyhow::anyhow!("{e}")))?
                }
            }
        }
        _ => {
            return Err(CmdError::from(anyhow::anyhow!(
                "give exactly one of --counts or --fst (with optional --sample N)"
            )))
        }
    };
    let text = model.to_arpa().map_err(|e| numeric(anyhow::anyhow!("{e}")))?;
    write_atomic(&args.out, text.as_bytes()).map_err(CmdError::from)?;
    info!("wrote {} (order {})", args.out.display(), model.order());
    Ok(())
}

fn cap_vocab(counts: ExpectedCounts, args: &TrainArgs) -> Result<ExpectedCounts> {
    match (args.vocab_cap, &args.baseline) {
        (Some(cap), Some(baseline_path)) => {
            let baseline = runspec::load_arpa(baseline_path)?;
            Ok(counts.cap_new_vocab(baseline.vocab(), cap))
        }
        (Some(_), None) => bail!("--vocab-cap needs --baseline"),
        _ => Ok(counts),
    }
}

fn cmd_sample(args: SampleArgs) -> CmdResult {
    let fst = read_fst(&args.fst).map_err(CmdError::from)?;
    let sampler = PathSampler::new(&fst)
        .map_err(|e| CmdError::new(Failure::NumericError, anyhow::anyhow!("{e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = String::new();
    for _ in 0..args.num {
        let words = sampler
            .sample(&mut rng)
            .map_err(|e| CmdError::new(Failure::NumericError, anyhow::anyhow!("{e}")))?;
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    write_atomic(&args.out, out.as_bytes()).map_err(CmdError::from)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let mixture = match (&args.model, &args.mixture) {
        (Some(model), None) => {
            MixtureModel::single(Arc::new(runspec::load_arpa(model).map_err(CmdError::from)?))
        }
        (None, Some(spec)) => runspec::load_mixture(spec).map_err(CmdError::from)?,
        _ => {
            return Err(CmdError::from(anyhow::anyhow!(
                "give exactly one of --model or --mixture"
            )))
        }
    };
    let scales = Scales { lm: args.lm_scale, acoustic: args.acoustic_scale };
    let mut printed = false;
    if let Some(corpus_path) = &args.corpus {
        let corpus = EvalCorpus::read(BufReader::new(
            File::open(corpus_path)
                .with_context(|| format!("opening {}", corpus_path.display()))
                .map_err(CmdError::from)?,
        ))
        .map_err(|e| CmdError::new(Failure::ParseError, anyhow::anyhow!("{e}")))?;
        let ppl = perplexity(&mixture, &corpus)
            .map_err(|e| CmdError::new(Failure::NumericError, anyhow::anyhow!("{e}")))?;
        println!("perplexity\t{ppl:.9}");
        printed = true;
    }
    if let (Some(nbest), Some(refs)) = (&args.nbest, &args.refs) {
        let lists = read_nbest(
            BufReader::new(
                File::open(nbest)
                    .with_context(|| format!("opening {}", nbest.display()))
                    .map_err(CmdError::from)?,
            ),
            BufReader::new(
                File::open(refs)
                    .with_context(|| format!("opening {}", refs.display()))
                    .map_err(CmdError::from)?,
            ),
        )
        .map_err(|e| CmdError::new(Failure::ParseError, anyhow::anyhow!("{e}")))?;
        let numeric = |e: anyhow::Error| CmdError::new(Failure::NumericError, e);
        let expected = expected_wer_loss(&lists, &mixture, &scales)
            .map_err(|e| numeric(anyhow::anyhow!("{e}")))?;
        let one_best = one_best_wer(&lists, &mixture, &scales)
            .map_err(|e| numeric(anyhow::anyhow!("{e}")))?;
        let oracle = oracle_wer(&lists).map_err(|e| numeric(anyhow::anyhow!("{e}")))?;
        println!("expected_wer\t{expected:.9}");
        println!("one_best_wer\t{one_best:.9}");
        println!("oracle_wer\t{oracle:.9}");
        printed = true;
    }
    if !printed {
        return Err(CmdError::from(anyhow::anyhow!(
            "nothing to evaluate: give --corpus and/or --nbest with --refs"
        )));
    }
    Ok(())
}

fn cmd_optimize(args: OptimizeArgs) -> CmdResult {
    let mut run = runspec::load_runspec(&args.runspec).map_err(CmdError::from)?;
    if let Some(sigma) = args.sigma {
        run.constraint.sigma = sigma;
    }
    let solution = multi_app_optimize(&run.problems, Some(run.constraint.clone()), run.config.clone())
        .map_err(|e| CmdError::new(Failure::NumericError, anyhow::anyhow!("{e}")))?;

    // Before/after metrics per app and on past data.
    let n = run.apps.len();
    let mut components = vec![run.baseline.clone()];
    components.extend(run.apps.iter().cloned());
    let mut anchor = vec![0.0; n + 1];
    anchor[0] = 1.0;
    let joint = MixtureModel::new(components, anchor.clone())
        .map_err(|e| CmdError::from(anyhow::anyhow!("{e}")))?;
    let before = joint.set_weights(anchor).map_err(|e| CmdError::from(anyhow::anyhow!("{e}")))?;
    let after = joint
        .set_weights(solution.lambda.clone())
        .map_err(|e| CmdError::from(anyhow::anyhow!("{e}")))?;
    let metrics = |corpus: &Option<EvalCorpus>,
                   lists: &Option<Vec<grammarlm::asr_eval::NBestList>>,
                   mix: &MixtureModel|
     -> (Option<f64>, Option<f64>) {
        let ppl = corpus.as_ref().and_then(|c| perplexity(mix, c).ok());
        let wer = lists.as_ref().and_then(|l| one_best_wer(l, mix, &run.scales).ok());
        (ppl, wer)
    };
    let mut rows = Vec::new();
    for (i, name) in run.app_names.iter().enumerate() {
        let (ppl_before, wer_before) = metrics(&run.app_eval[i].0, &run.app_eval[i].1, &before);
        let (ppl_after, wer_after) = metrics(&run.app_eval[i].0, &run.app_eval[i].1, &after);
        rows.push(ReportRow { name: name.clone(), ppl_before, ppl_after, wer_before, wer_after });
    }
    let (past_ppl_before, past_wer_before) =
        metrics(&run.past_eval.0, &run.past_eval.1, &before);
    let (past_ppl_after, past_wer_after) = metrics(&run.past_eval.0, &run.past_eval.1, &after);
    let past = ReportRow {
        name: "past-data".to_string(),
        ppl_before: past_ppl_before,
        ppl_after: past_ppl_after,
        wer_before: past_wer_before,
        wer_after: past_wer_after,
    };

    let mut component_names = vec!["baseline".to_string()];
    component_names.extend(run.app_names.iter().cloned());
    let report = SolutionReport {
        component_names,
        loss_names: run.loss_names.clone(),
        constraint_name: Some(run.constraint_name.clone()),
        solution: solution.clone(),
        apps: rows,
        past: Some(past),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CmdError::from(anyhow::anyhow!("{e}")))?;
    write_atomic(&run.output.solution, json.as_bytes()).map_err(CmdError::from)?;
    write_atomic(&run.output.report, report.render().as_bytes()).map_err(CmdError::from)?;
    println!("{}", report.render());
    if solution.infeasible && !args.allow_infeasible {
        return Err(CmdError::new(
            Failure::Infeasible,
            anyhow::anyhow!(
                "solution violates the past-data bound (loss {:?} > bound {:?}); \
                 pass --allow-infeasible to accept it",
                solution.constraint_loss,
                solution.bound
            ),
        ));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let mut json = String::new();
    File::open(&args.solution)
        .with_context(|| format!("opening {}", args.solution.display()))
        .map_err(CmdError::from)?
        .read_to_string(&mut json)
        .context("reading solution file")
        .map_err(CmdError::from)?;
    let report: SolutionReport = serde_json::from_str(&json)
        .map_err(|e| CmdError::new(Failure::ParseError, anyhow::anyhow!("{e}")))?;
    match &args.out {
        Some(path) => write_atomic(path, report.render().as_bytes()).map_err(CmdError::from)?,
        None => print!("{}", report.render()),
    }
    Ok(())
}
