//! Constrained estimation of mixture interpolation weights.
//!
//! The problem: minimize the summed per-application losses over the weight
//! simplex, subject to the loss on past-usage data not exceeding the
//! baseline's own loss `C` on that data. The constraint enters the objective
//! as a quadratic penalty `sigma * max(0, loss_past(lambda) - C)^2` with a
//! static `sigma` (default 1000), and `C` is always computed from the
//! baseline, never supplied.
//!
//! Losses are derivative-free territory (expected WER moves in plateaus), so
//! the solver is search-based: a coarse grid plus golden-section refinement
//! for the two-component case, and deterministic coordinate descent from a
//! uniform start for larger mixtures, each coordinate trading mass against
//! the baseline. The baseline-only corner is always a candidate: its penalty
//! is zero by construction, so the returned objective can never be worse than
//! anchoring on it.
//!
//! Evaluating a loss at fresh weights only re-weights per-component
//! probabilities, so preparation caches, for every scored token of every
//! corpus and hypothesis, the vector of component conditional probabilities;
//! each objective evaluation is then a handful of dot products.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asr_eval::{
    edit_distance, expected_wer_loss, AsrError, NBestList, Scales,
};
use crate::counts::{BOS, EOS};
use crate::lm::{perplexity, EvalCorpus, LmError, Scorer};
use crate::logmath::log_sum;
use crate::mixture::{MixtureError, MixtureModel};

/// Default static penalty coefficient.
pub const DEFAULT_SIGMA: f64 = 1000.0;
/// Relative slack above the bound before a solution is flagged infeasible.
const FEASIBILITY_SLACK: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("problem has no losses")]
    NoLosses,
    #[error("loss targets component {component} but mixture has {components}")]
    BadComponent { component: usize, components: usize },
    #[error("multi-application optimization needs two-component problems sharing a baseline")]
    BaselineMismatch,
    #[error("non-finite objective at lambda {lambda:?}")]
    NonFiniteLoss { lambda: Vec<f64> },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Asr(#[from] AsrError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// Loss to minimize for one application.
#[derive(Debug, Clone)]
pub enum LossKind {
    /// Negative squared interpolation weight of the application component:
    /// pushes the weight up when no adaptation data exists.
    NegSquared,
    /// Perplexity of the mixture on application text.
    Perplexity(EvalCorpus),
    /// Expected WER of rescored n-best lists.
    ExpectedWer { lists: Vec<NBestList>, scales: Scales },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::NegSquared => "neg-squared",
            LossKind::Perplexity(_) => "perplexity",
            LossKind::ExpectedWer { .. } => "expected-wer",
        }
    }
}

/// A loss together with the mixture component it belongs to.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Index of the application component the loss concerns (NegSquared reads
    /// this weight; 0 is the baseline).
    pub component: usize,
}

/// Past-usage loss bounded by the baseline's value.
#[derive(Debug, Clone)]
pub enum ConstraintKind {
    Perplexity(EvalCorpus),
    ExpectedWer { lists: Vec<NBestList>, scales: Scales },
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::Perplexity(_) => "perplexity",
            ConstraintKind::ExpectedWer { .. } => "expected-wer",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub sigma: f64,
}

impl ConstraintSpec {
    pub fn new(kind: ConstraintKind) -> Self {
        Self { kind, sigma: DEFAULT_SIGMA }
    }

    pub fn with_sigma(kind: ConstraintKind, sigma: f64) -> Self {
        Self { kind, sigma }
    }
}

/// Search configuration. `seed` is reserved for stochastic strategies and
/// does not affect the deterministic solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid_step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { grid_step: 0.01, tolerance: 1e-4, max_iterations: 200, seed: 0 }
    }
}

/// Everything the solver needs: mixture (component 0 is the baseline),
/// per-application losses, optional past-data constraint, search config.
#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    pub mixture: MixtureModel,
    pub losses: Vec<LossSpec>,
    pub constraint: Option<ConstraintSpec>,
    pub config: SolverConfig,
}

/// Result of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub lambda: Vec<f64>,
    /// Loss values at `lambda`, in the order of the problem's losses.
    pub loss_values: Vec<f64>,
    /// Constraint loss at `lambda`; absent when unconstrained.
    pub constraint_loss: Option<f64>,
    /// Computed bound `C`; absent when unconstrained.
    pub bound: Option<f64>,
    pub sigma: Option<f64>,
    pub penalty: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True when the constraint loss exceeds `C` by more than the permitted
    /// slack; the penalty method tolerates tiny violations.
    pub infeasible: bool,
}

/// Direct (uncached) loss evaluation at the mixture's current weights.
pub fn eval_loss(spec: &LossSpec, mixture: &MixtureModel) -> Result<f64, OptError> {
    if spec.component >= mixture.num_components() {
        return Err(OptError::BadComponent {
            component: spec.component,
            components: mixture.num_components(),
        });
    }
    match &spec.kind {
        LossKind::NegSquared => {
            let l = mixture.lambda()[spec.component];
            Ok(-(l * l))
        }
        LossKind::Perplexity(corpus) => Ok(perplexity(mixture, corpus)?),
        LossKind::ExpectedWer { lists, scales } => {
            Ok(expected_wer_loss(lists, mixture, scales)?)
        }
    }
}

/// Constraint loss of the mixture at its current weights.
pub fn eval_constraint_loss(
    kind: &ConstraintKind,
    mixture: &MixtureModel,
) -> Result<f64, OptError> {
    match kind {
        ConstraintKind::Perplexity(corpus) => Ok(perplexity(mixture, corpus)?),
        ConstraintKind::ExpectedWer { lists, scales } => {
            Ok(expected_wer_loss(lists, mixture, scales)?)
        }
    }
}

/// The bound `C`: the constraint loss with all weight on the baseline.
pub fn constraint_bound(
    kind: &ConstraintKind,
    mixture: &MixtureModel,
) -> Result<f64, OptError> {
    let mut anchor = vec![0.0; mixture.num_components()];
    anchor[0] = 1.0;
    let baseline_only = mixture.set_weights(anchor)?;
    eval_constraint_loss(kind, &baseline_only)
}

/// Quadratic penalty `sigma * max(0, loss - bound)^2`.
pub fn eval_penalty(sigma: f64, bound: f64, constraint_loss: f64) -> f64 {
    let violation = (constraint_loss - bound).max(0.0);
    sigma * violation * violation
}

// ---------------------------------------------------------------------------
// Prepared (cached) evaluation
// ---------------------------------------------------------------------------

/// Per-token component probabilities of one sentence, in scoring order.
type PreparedSentence = Vec<Vec<f64>>;

fn prepare_sentence(mixture: &MixtureModel, sentence: &[String]) -> PreparedSentence {
    let mut points = Vec::with_capacity(sentence.len() + 1);
    let mut history: Vec<&str> = if mixture.uses_bos() { vec![BOS] } else { Vec::new() };
    for w in sentence {
        points.push(mixture.component_probs(&history, w));
        history.push(w);
    }
    if mixture.scores_eos() {
        points.push(mixture.component_probs(&history, EOS));
    }
    points
}

fn sentence_ln_at(points: &PreparedSentence, lambda: &[f64]) -> f64 {
    let mut total = 0.0;
    for probs in points {
        let p: f64 = probs.iter().zip(lambda).map(|(p, l)| l * p).sum();
        total += if p <= 0.0 { f64::NEG_INFINITY } else { p.ln() };
    }
    total
}

struct PreparedCorpus {
    sentences: Vec<PreparedSentence>,
    m: usize,
}

impl PreparedCorpus {
    fn new(mixture: &MixtureModel, corpus: &EvalCorpus) -> Self {
        let sentences: Vec<PreparedSentence> =
            corpus.sentences.iter().map(|s| prepare_sentence(mixture, s)).collect();
        let m = corpus.token_count(mixture.scores_eos());
        Self { sentences, m }
    }

    fn perplexity_at(&self, lambda: &[f64]) -> f64 {
        let mut total_ln = 0.0;
        for sentence in &self.sentences {
            total_ln += sentence_ln_at(sentence, lambda);
        }
        (-total_ln / self.m as f64).exp()
    }
}

struct PreparedHyp {
    points: PreparedSentence,
    acoustic: f64,
    errors: f64,
}

struct PreparedUtt {
    hyps: Vec<PreparedHyp>,
}

struct PreparedNBest {
    utts: Vec<PreparedUtt>,
    total_ref_words: usize,
    scales: Scales,
}

impl PreparedNBest {
    fn new(
        mixture: &MixtureModel,
        lists: &[NBestList],
        scales: Scales,
    ) -> Result<Self, OptError> {
        let mut utts = Vec::with_capacity(lists.len());
        let mut total_ref_words = 0usize;
        for nb in lists {
            nb.validate()?;
            let hyps = nb
                .hypotheses
                .iter()
                .map(|h| {
                    let stats = edit_distance(&h.words, &nb.reference)?;
                    Ok(PreparedHyp {
                        points: prepare_sentence(mixture, &h.words),
                        acoustic: h.acoustic_score,
                        errors: stats.errors() as f64,
                    })
                })
                .collect::<Result<Vec<_>, AsrError>>()?;
            total_ref_words += nb.reference.len();
            utts.push(PreparedUtt { hyps });
        }
        Ok(Self { utts, total_ref_words, scales })
    }

    fn expected_wer_at(&self, lambda: &[f64]) -> f64 {
        let mut weighted_errors = 0.0;
        for utt in &self.utts {
            let combined: Vec<f64> = utt
                .hyps
                .iter()
                .map(|h| {
                    self.scales.acoustic * h.acoustic
                        + self.scales.lm * sentence_ln_at(&h.points, lambda)
                })
                .collect();
            let log_denominator = log_sum(combined.iter().copied());
            if log_denominator == f64::NEG_INFINITY {
                let uniform = 1.0 / utt.hyps.len() as f64;
                for h in &utt.hyps {
                    weighted_errors += uniform * h.errors;
                }
            } else {
                for (h, &score) in utt.hyps.iter().zip(&combined) {
                    weighted_errors += (score - log_denominator).exp() * h.errors;
                }
            }
        }
        weighted_errors / self.total_ref_words as f64
    }
}

enum PreparedLoss {
    NegSquared { component: usize },
    Perplexity(PreparedCorpus),
    ExpectedWer(PreparedNBest),
}

impl PreparedLoss {
    fn eval(&self, lambda: &[f64]) -> f64 {
        match self {
            PreparedLoss::NegSquared { component } => {
                let l = lambda[*component];
                -(l * l)
            }
            PreparedLoss::Perplexity(corpus) => corpus.perplexity_at(lambda),
            PreparedLoss::ExpectedWer(nbest) => nbest.expected_wer_at(lambda),
        }
    }
}

/// Cached objective over the weight simplex: per-token component
/// probabilities are computed once, so evaluating new weights is a handful of
/// dot products. Useful for grid scans and diagnostics; [`optimize`] builds
/// one internally.
pub struct Objective {
    prepared: Prepared,
}

impl Objective {
    pub fn new(problem: &OptimizationProblem) -> Result<Self, OptError> {
        Ok(Self { prepared: Prepared::new(problem)? })
    }

    /// Total objective (losses plus penalty) at `lambda`; may be infinite
    /// where some token becomes unreachable.
    pub fn eval(&self, lambda: &[f64]) -> f64 {
        self.prepared.objective(lambda)
    }

    /// Value of the i-th loss at `lambda`.
    pub fn loss(&self, index: usize, lambda: &[f64]) -> f64 {
        self.prepared.losses[index].eval(lambda)
    }

    /// Constraint loss at `lambda`, if the problem is constrained.
    pub fn constraint_loss(&self, lambda: &[f64]) -> Option<f64> {
        self.prepared.constraint.as_ref().map(|(loss, _, _)| loss.eval(lambda))
    }

    /// The computed bound `C`, if the problem is constrained.
    pub fn bound(&self) -> Option<f64> {
        self.prepared.constraint.as_ref().map(|&(_, _, bound)| bound)
    }
}

struct Prepared {
    losses: Vec<PreparedLoss>,
    constraint: Option<(PreparedLoss, f64, f64)>, // (loss, sigma, bound)
}

impl Prepared {
    fn new(problem: &OptimizationProblem) -> Result<Self, OptError> {
        if problem.losses.is_empty() {
            return Err(OptError::NoLosses);
        }
        let mixture = &problem.mixture;
        let ncomp = mixture.num_components();
        let mut losses = Vec::with_capacity(problem.losses.len());
        for spec in &problem.losses {
            if spec.component == 0 || spec.component >= ncomp {
                return Err(OptError::BadComponent {
                    component: spec.component,
                    components: ncomp,
                });
            }
            losses.push(match &spec.kind {
                LossKind::NegSquared => PreparedLoss::NegSquared { component: spec.component },
                LossKind::Perplexity(corpus) => {
                    PreparedLoss::Perplexity(PreparedCorpus::new(mixture, corpus))
                }
                LossKind::ExpectedWer { lists, scales } => {
                    PreparedLoss::ExpectedWer(PreparedNBest::new(mixture, lists, *scales)?)
                }
            });
        }
        let constraint = match &problem.constraint {
            None => None,
            Some(spec) => {
                let prepared = match &spec.kind {
                    ConstraintKind::Perplexity(corpus) => {
                        PreparedLoss::Perplexity(PreparedCorpus::new(mixture, corpus))
                    }
                    ConstraintKind::ExpectedWer { lists, scales } => {
                        PreparedLoss::ExpectedWer(PreparedNBest::new(mixture, lists, *scales)?)
                    }
                };
                let mut anchor = vec![0.0; ncomp];
                anchor[0] = 1.0;
                let bound = prepared.eval(&anchor);
                Some((prepared, spec.sigma, bound))
            }
        };
        Ok(Self { losses, constraint })
    }

    fn objective(&self, lambda: &[f64]) -> f64 {
        let mut total = 0.0;
        for loss in &self.losses {
            total += loss.eval(lambda);
        }
        if let Some((loss, sigma, bound)) = &self.constraint {
            total += eval_penalty(*sigma, *bound, loss.eval(lambda));
        }
        total
    }
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

const GOLDEN_RATIO: f64 = 0.618_033_988_749_894_9;
/// The refinement narrows well past the convergence threshold; penalty terms
/// can be sharply curved, so a loosely centered interval costs objective.
const REFINE_FACTOR: f64 = 1e-3;

/// Golden-section minimization of `f` on `[lo, hi]`; returns the best probed
/// point, the iteration count, and the final interval width.
fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    refine_to: f64,
    max_iterations: usize,
) -> (f64, f64, usize, f64) {
    let mut x1 = hi - GOLDEN_RATIO * (hi - lo);
    let mut x2 = lo + GOLDEN_RATIO * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best_x = if f1 <= f2 { x1 } else { x2 };
    let mut best_v = f1.min(f2);
    let mut iterations = 0;
    while iterations < max_iterations && hi - lo >= refine_to {
        iterations += 1;
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN_RATIO * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN_RATIO * (hi - lo);
            f2 = f(x2);
        }
        let (x, v) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    (best_x, best_v, iterations, hi - lo)
}

/// Coarse grid scan followed by golden-section refinement around the best
/// grid cell. Convergence means the refined interval shrank below
/// `tolerance`; refinement itself targets a much narrower interval.
fn line_search<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    grid_step: f64,
    tolerance: f64,
    max_iterations: usize,
) -> (f64, f64, usize, bool) {
    debug_assert!(hi >= lo);
    let span = hi - lo;
    if span <= tolerance {
        let x = lo;
        let v = f(x);
        return (x, v, 0, true);
    }
    let steps = (span / grid_step).ceil().max(1.0) as usize;
    let mut best_x = lo;
    let mut best_v = f(lo);
    for i in 1..=steps {
        let x = (lo + span * i as f64 / steps as f64).min(hi);
        let v = f(x);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    let cell = span / steps as f64;
    let refine_lo = (best_x - cell).max(lo);
    let refine_hi = (best_x + cell).min(hi);
    let (x, v, iterations, width) = golden_section(
        &mut f,
        refine_lo,
        refine_hi,
        tolerance * REFINE_FACTOR,
        max_iterations,
    );
    let converged = width < tolerance;
    if v < best_v {
        (x, v, iterations, converged)
    } else {
        (best_x, best_v, iterations, converged)
    }
}

fn two_component_lambda(x: f64) -> Vec<f64> {
    vec![1.0 - x, x]
}

/// Solves the constrained problem over the weight simplex.
///
/// Two components: exhaustive grid over the application weight refined by
/// golden section. More components: coordinate descent from the uniform
/// point, each pass re-splitting mass between the baseline and one
/// application. The baseline-only anchor (penalty zero by construction) and
/// the uniform point are always compared against the search result.
pub fn optimize(problem: &OptimizationProblem) -> Result<Solution, OptError> {
    let prepared = Prepared::new(problem)?;
    let ncomp = problem.mixture.num_components();
    let config = &problem.config;

    let (lambda, iterations, converged) = if ncomp == 2 {
        let mut eval = |x: f64| prepared.objective(&two_component_lambda(x));
        let (x, _, iterations, converged) =
            line_search(&mut eval, 0.0, 1.0, config.grid_step, config.tolerance, config.max_iterations);
        (two_component_lambda(x), iterations, converged)
    } else {
        coordinate_descent(&prepared, ncomp, config)
    };

    // The anchor and the uniform point are cheap insurance that the search
    // never reports something worse than the trivial candidates.
    let mut anchor = vec![0.0; ncomp];
    anchor[0] = 1.0;
    let uniform = vec![1.0 / ncomp as f64; ncomp];
    let mut best = lambda;
    let mut best_v = prepared.objective(&best);
    for candidate in [anchor, uniform] {
        let v = prepared.objective(&candidate);
        if v < best_v {
            best_v = v;
            best = candidate;
        }
    }
    if best_v.is_nan() {
        return Err(OptError::NonFiniteLoss { lambda: best });
    }

    let loss_values: Vec<f64> = prepared.losses.iter().map(|l| l.eval(&best)).collect();
    let (constraint_loss, bound, sigma, penalty, infeasible) = match &prepared.constraint {
        None => (None, None, None, 0.0, false),
        Some((loss, sigma, bound)) => {
            let value = loss.eval(&best);
            let penalty = eval_penalty(*sigma, *bound, value);
            let infeasible = value > bound * (1.0 + FEASIBILITY_SLACK);
            (Some(value), Some(*bound), Some(*sigma), penalty, infeasible)
        }
    };
    if !best_v.is_finite() {
        return Err(OptError::NonFiniteLoss { lambda: best });
    }
    // Validates the simplex invariant on the way out.
    problem.mixture.set_weights(best.clone())?;
    Ok(Solution {
        lambda: best,
        loss_values,
        constraint_loss,
        bound,
        sigma,
        penalty,
        objective: best_v,
        iterations,
        converged,
        infeasible,
    })
}

fn coordinate_descent(
    prepared: &Prepared,
    ncomp: usize,
    config: &SolverConfig,
) -> (Vec<f64>, usize, bool) {
    let mut lambda = vec![1.0 / ncomp as f64; ncomp];
    let mut converged = false;
    let mut sweeps = 0;
    for _ in 0..config.max_iterations {
        sweeps += 1;
        let mut max_move: f64 = 0.0;
        for j in 1..ncomp {
            let free = lambda[0] + lambda[j];
            if free <= config.tolerance {
                continue;
            }
            let old = lambda[j];
            let mut eval = |x: f64| {
                let mut trial = lambda.clone();
                trial[j] = x;
                trial[0] = free - x;
                prepared.objective(&trial)
            };
            let coarse = (free / 16.0).max(config.tolerance);
            let (x, _, _, _) =
                line_search(&mut eval, 0.0, free, coarse, config.tolerance, config.max_iterations);
            lambda[j] = x;
            lambda[0] = free - x;
            max_move = max_move.max((x - old).abs());
        }
        if max_move < config.tolerance {
            converged = true;
            break;
        }
    }
    (lambda, sweeps, converged)
}

/// Joint optimization of several two-component problems sharing one baseline:
/// the sum of every problem's losses under a single past-data constraint,
/// over an (N+1)-component mixture with the shared baseline as component 0.
pub fn multi_app_optimize(
    problems: &[OptimizationProblem],
    constraint: Option<ConstraintSpec>,
    config: SolverConfig,
) -> Result<Solution, OptError> {
    if problems.is_empty() {
        return Err(OptError::NoLosses);
    }
    let baseline = problems[0].mixture.components()[0].clone();
    let mut components = vec![baseline.clone()];
    let mut losses = Vec::new();
    for (i, problem) in problems.iter().enumerate() {
        if problem.mixture.num_components() != 2
            || !std::sync::Arc::ptr_eq(&problem.mixture.components()[0], &baseline)
        {
            return Err(OptError::BaselineMismatch);
        }
        components.push(problem.mixture.components()[1].clone());
        for spec in &problem.losses {
            losses.push(LossSpec { kind: spec.kind.clone(), component: i + 1 });
        }
    }
    let n = components.len();
    let mixture = MixtureModel::new(components, vec![1.0 / n as f64; n])?;
    let joint = OptimizationProblem { mixture, losses, constraint, config };
    optimize(&joint)
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Before/after metrics for one evaluation set; absent metrics render as "-".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub ppl_before: Option<f64>,
    pub ppl_after: Option<f64>,
    pub wer_before: Option<f64>,
    pub wer_after: Option<f64>,
}

/// Human-readable summary of a solved problem, renderable byte-for-byte
/// reproducibly from the stored data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub component_names: Vec<String>,
    pub loss_names: Vec<String>,
    pub constraint_name: Option<String>,
    pub solution: Solution,
    pub apps: Vec<ReportRow>,
    pub past: Option<ReportRow>,
}

fn fmt_metric(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.6}"),
        None => "-".to_string(),
    }
}

impl SolutionReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# interpolation weight report\n");
        out.push_str("weights:\n");
        for (name, l) in self.component_names.iter().zip(&self.solution.lambda) {
            out.push_str(&format!("  {name}\t{l:.6}\n"));
        }
        out.push_str(&format!(
            "objective: {:.6}\nconverged: {} ({} iterations)\n",
            self.solution.objective, self.solution.converged, self.solution.iterations
        ));
        match (&self.constraint_name, self.solution.bound) {
            (Some(name), Some(bound)) => {
                out.push_str(&format!(
                    "constraint: {} sigma={} bound={:.6} loss={} penalty={:.6} feasible={}\n",
                    name,
                    fmt_metric(self.solution.sigma),
                    bound,
                    fmt_metric(self.solution.constraint_loss),
                    self.solution.penalty,
                    !self.solution.infeasible
                ));
            }
            _ => out.push_str("constraint: none\n"),
        }
        out.push_str("losses:\n");
        for (name, value) in self.loss_names.iter().zip(&self.solution.loss_values) {
            out.push_str(&format!("  {name}\t{value:.6}\n"));
        }
        out.push_str("apps:\tname\tppl_before\tppl_after\twer_before\twer_after\n");
        for row in &self.apps {
            out.push_str(&format!(
                "  {}\t{}\t{}\t{}\t{}\n",
                row.name,
                fmt_metric(row.ppl_before),
                fmt_metric(row.ppl_after),
                fmt_metric(row.wer_before),
                fmt_metric(row.wer_after)
            ));
        }
        if let Some(past) = &self.past {
            let rel = match (past.wer_before, past.wer_after) {
                (Some(before), Some(after)) if before > 0.0 => {
                    format!("{:+.4}%", 100.0 * (after - before) / before)
                }
                _ => "-".to_string(),
            };
            out.push_str("past:\tname\tppl_before\tppl_after\twer_before\twer_after\trel_wer\n");
            out.push_str(&format!(
                "  {}\t{}\t{}\t{}\t{}\t{}\n",
                past.name,
                fmt_metric(past.ppl_before),
                fmt_metric(past.ppl_after),
                fmt_metric(past.wer_before),
                fmt_metric(past.wer_after),
                rel
            ));
        }
        out
    }
}
