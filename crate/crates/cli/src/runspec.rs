//! Declarative optimization run description, loaded from TOML.
//!
//! Unknown keys are rejected and every referenced path is checked before any
//! work starts.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use grammarlm::asr_eval::{read_nbest, NBestList, Scales};
use grammarlm::lm::NGramModel;
use grammarlm::optimizer::{
    ConstraintKind, ConstraintSpec, LossKind, LossSpec, OptimizationProblem, SolverConfig,
    DEFAULT_SIGMA,
};
use grammarlm::{EvalCorpus, MixtureModel};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub baseline: BaselineSpec,
    pub apps: Vec<AppSpec>,
    pub constraint: ConstraintSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub scales: ScalesSection,
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub model: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub name: String,
    pub model: PathBuf,
    /// `neg-squared`, `perplexity`, or `expected-wer`.
    pub loss: String,
    pub corpus: Option<PathBuf>,
    pub nbest: Option<PathBuf>,
    pub refs: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    /// `perplexity` or `expected-wer`.
    pub kind: String,
    pub corpus: Option<PathBuf>,
    pub nbest: Option<PathBuf>,
    pub refs: Option<PathBuf>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub grid_step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            grid_step: d.grid_step,
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalesSection {
    pub lm: f64,
    pub acoustic: f64,
}

impl Default for ScalesSection {
    fn default() -> Self {
        Self { lm: 1.0, acoustic: 1.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub solution: PathBuf,
    pub report: PathBuf,
}

/// Everything loaded and ready to optimize, plus the evaluation data the
/// report needs.
pub struct LoadedRun {
    pub problems: Vec<OptimizationProblem>,
    pub constraint: ConstraintSpec,
    pub config: SolverConfig,
    pub app_names: Vec<String>,
    pub loss_names: Vec<String>,
    pub constraint_name: String,
    pub scales: Scales,
    pub baseline: Arc<NGramModel>,
    pub apps: Vec<Arc<NGramModel>>,
    pub app_eval: Vec<(Option<EvalCorpus>, Option<Vec<NBestList>>)>,
    pub past_eval: (Option<EvalCorpus>, Option<Vec<NBestList>>),
    pub output: OutputSection,
}

pub fn load_runspec(path: &Path) -> Result<LoadedRun> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading runspec {}", path.display()))?;
    let spec: RunSpec = toml::from_str(&text).context("parsing runspec")?;
    if spec.apps.is_empty() {
        bail!("runspec declares no applications");
    }
    // Resolve paths relative to the runspec file.
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &PathBuf| -> PathBuf {
        if p.is_absolute() {
            p.clone()
        } else {
            base_dir.join(p)
        }
    };
    // Validate referenced paths up front.
    let mut required: Vec<PathBuf> = vec![resolve(&spec.baseline.model)];
    for app in &spec.apps {
        required.push(resolve(&app.model));
        required.extend(app.corpus.as_ref().map(&resolve));
        required.extend(app.nbest.as_ref().map(&resolve));
        required.extend(app.refs.as_ref().map(&resolve));
    }
    required.extend(spec.constraint.corpus.as_ref().map(&resolve));
    required.extend(spec.constraint.nbest.as_ref().map(&resolve));
    required.extend(spec.constraint.refs.as_ref().map(&resolve));
    for p in &required {
        if !p.exists() {
            bail!("referenced path does not exist: {}", p.display());
        }
    }

    let scales = Scales { lm: spec.scales.lm, acoustic: spec.scales.acoustic };
    let baseline = Arc::new(load_arpa(&resolve(&spec.baseline.model))?);

    let load_lists = |nbest: &Option<PathBuf>, refs: &Option<PathBuf>, what: &str| -> Result<Option<Vec<NBestList>>> {
        match (nbest, refs) {
            (Some(nbest), Some(refs)) => {
                let lists = read_nbest(
                    BufReader::new(File::open(resolve(nbest))?),
                    BufReader::new(File::open(resolve(refs))?),
                )
                .with_context(|| format!("reading {what} n-best lists"))?;
                Ok(Some(lists))
            }
            (None, None) => Ok(None),
            _ => bail!("{what}: nbest and refs must be given together"),
        }
    };
    let load_corpus = |corpus: &Option<PathBuf>, what: &str| -> Result<Option<EvalCorpus>> {
        match corpus {
            Some(c) => Ok(Some(
                EvalCorpus::read(BufReader::new(File::open(resolve(c))?))
                    .with_context(|| format!("reading {what} corpus"))?,
            )),
            None => Ok(None),
        }
    };

    let mut problems = Vec::new();
    let mut app_names = Vec::new();
    let mut loss_names = Vec::new();
    let mut apps = Vec::new();
    let mut app_eval = Vec::new();
    for app in &spec.apps {
        let model = Arc::new(load_arpa(&resolve(&app.model))?);
        let corpus = load_corpus(&app.corpus, &app.name)?;
        let lists = load_lists(&app.nbest, &app.refs, &app.name)?;
        let kind = match app.loss.as_str() {
            "neg-squared" => LossKind::NegSquared,
            "perplexity" => LossKind::Perplexity(
                corpus.clone().with_context(|| format!("{}: perplexity loss needs a corpus", app.name))?,
            ),
            "expected-wer" => LossKind::ExpectedWer {
                lists: lists
                    .clone()
                    .with_context(|| format!("{}: expected-wer loss needs nbest and refs", app.name))?,
                scales,
            },
            other => bail!("{}: unknown loss kind `{other}`", app.name),
        };
        loss_names.push(format!("{} {}", app.name, kind.name()));
        problems.push(OptimizationProblem {
            mixture: MixtureModel::two_component(baseline.clone(), model.clone(), 0.5)
                .map_err(|e| anyhow::anyhow!("{}: {e}", app.name))?,
            losses: vec![LossSpec { kind, component: 1 }],
            constraint: None,
            config: SolverConfig::default(),
        });
        app_names.push(app.name.clone());
        apps.push(model);
        app_eval.push((corpus, lists));
    }

    let past_corpus = load_corpus(&spec.constraint.corpus, "constraint")?;
    let past_lists = load_lists(&spec.constraint.nbest, &spec.constraint.refs, "constraint")?;
    let sigma = spec.constraint.sigma.unwrap_or(DEFAULT_SIGMA);
    let kind = match spec.constraint.kind.as_str() {
        "perplexity" => ConstraintKind::Perplexity(
            past_corpus.clone().context("perplexity constraint needs a corpus")?,
        ),
        "expected-wer" => ConstraintKind::ExpectedWer {
            lists: past_lists.clone().context("expected-wer constraint needs nbest and refs")?,
            scales,
        },
        other => bail!("unknown constraint kind `{other}`"),
    };
    let constraint_name = kind.name().to_string();
    let constraint = ConstraintSpec::with_sigma(kind, sigma);
    let config = SolverConfig {
        grid_step: spec.solver.grid_step,
        tolerance: spec.solver.tolerance,
        max_iterations: spec.solver.max_iterations,
        seed: spec.solver.seed,
    };
    Ok(LoadedRun {
        problems,
        constraint,
        config,
        app_names,
        loss_names,
        constraint_name,
        scales,
        baseline,
        apps,
        app_eval,
        past_eval: (past_corpus, past_lists),
        output: OutputSection {
            solution: resolve(&spec.output.solution),
            report: resolve(&spec.output.report),
        },
    })
}

pub fn load_arpa(path: &Path) -> Result<NGramModel> {
    NGramModel::read_arpa(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
    .with_context(|| format!("parsing ARPA model {}", path.display()))
}

/// Loads a mixture spec file (`path<TAB>weight` lines); weights are
/// normalized by their sum.
pub fn load_mixture(path: &Path) -> Result<MixtureModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading mixture spec {}", path.display()))?;
    let entries = grammarlm::mixture::parse_mixture_spec(&text)
        .map_err(|e| anyhow::anyhow!("parsing mixture spec: {e}"))?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let total: f64 = entries.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        bail!("mixture weights must have a positive sum");
    }
    let mut components = Vec::new();
    let mut lambda = Vec::new();
    for (model_path, weight) in entries {
        let resolved = if Path::new(&model_path).is_absolute() {
            PathBuf::from(&model_path)
        } else {
            base_dir.join(&model_path)
        };
        components.push(Arc::new(load_arpa(&resolved)?));
        lambda.push(weight / total);
    }
    MixtureModel::new(components, lambda).map_err(|e| anyhow::anyhow!("building mixture: {e}"))
}

/// Catalog assignments of the form `NAME=path`.
pub fn parse_catalog_args(args: &[String]) -> Result<HashMap<String, PathBuf>> {
    let mut out = HashMap::new();
    for arg in args {
        let (name, path) = arg
            .split_once('=')
            .with_context(|| format!("catalog `{arg}` is not NAME=path"))?;
        out.insert(name.to_string(), PathBuf::from(path));
    }
    Ok(out)
}
