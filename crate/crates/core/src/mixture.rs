//! Linear interpolation of n-gram models with simplex weights.
//!
//! Interpolation happens at the probability level: the mixture's conditional
//! probability is the weighted sum of each component's back-off-resolved
//! conditional probability. In the common two-component case the mixture is
//! stored as `(baseline, application)` with weights `(1 - lambda_app,
//! lambda_app)`.

use std::sync::Arc;

use thiserror::Error;

use crate::lm::{NGramModel, Scorer};

/// Tolerance for the simplex-sum invariant.
const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("mixture needs at least one component")]
    Empty,
    #[error("{components} components but {weights} weights")]
    LengthMismatch { components: usize, weights: usize },
    #[error("negative weight {weight} at index {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("weights sum to {0}, not 1")]
    NotSimplex(f64),
    #[error("malformed mixture spec at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Interpolated model: shared components plus a weight vector on the simplex.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    components: Vec<Arc<NGramModel>>,
    lambda: Vec<f64>,
}

impl MixtureModel {
    pub fn new(components: Vec<Arc<NGramModel>>, lambda: Vec<f64>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::Empty);
        }
        validate_simplex(&lambda, components.len())?;
        Ok(Self { components, lambda })
    }

    /// `(baseline, app)` mixture weighted `(1 - lambda_app, lambda_app)`.
    pub fn two_component(
        baseline: Arc<NGramModel>,
        app: Arc<NGramModel>,
        lambda_app: f64,
    ) -> Result<Self, MixtureError> {
        Self::new(vec![baseline, app], vec![1.0 - lambda_app, lambda_app])
    }

    /// Single-component mixture; scores identically to the model itself.
    pub fn single(model: Arc<NGramModel>) -> Self {
        Self { components: vec![model], lambda: vec![1.0] }
    }

    pub fn components(&self) -> &[Arc<NGramModel>] {
        &self.components
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Same components under new weights.
    pub fn set_weights(&self, lambda: Vec<f64>) -> Result<Self, MixtureError> {
        validate_simplex(&lambda, self.components.len())?;
        Ok(Self { components: self.components.clone(), lambda })
    }

    /// Weighted sum of component conditional probabilities, each resolved
    /// through its own back-off chain.
    pub fn mix_prob(&self, history: &[&str], word: &str) -> f64 {
        self.components
            .iter()
            .zip(&self.lambda)
            .map(|(c, &l)| if l == 0.0 { 0.0 } else { l * c.cond_prob(history, word) })
            .sum()
    }

    /// Per-component conditional probabilities at one prediction point; the
    /// optimizer caches these so that re-weighting costs one dot product.
    pub fn component_probs(&self, history: &[&str], word: &str) -> Vec<f64> {
        self.components.iter().map(|c| c.cond_prob(history, word)).collect()
    }
}

impl Scorer for MixtureModel {
    fn cond_prob(&self, history: &[&str], word: &str) -> f64 {
        self.mix_prob(history, word)
    }

    fn uses_bos(&self) -> bool {
        self.components.iter().any(|c| c.vocab().contains(crate::counts::BOS))
    }

    fn scores_eos(&self) -> bool {
        self.components.iter().any(|c| c.scores_eos())
    }
}

fn validate_simplex(lambda: &[f64], n_components: usize) -> Result<(), MixtureError> {
    if lambda.len() != n_components {
        return Err(MixtureError::LengthMismatch {
            components: n_components,
            weights: lambda.len(),
        });
    }
    for (index, &weight) in lambda.iter().enumerate() {
        if weight < 0.0 || !weight.is_finite() {
            return Err(MixtureError::NegativeWeight { index, weight });
        }
    }
    let sum: f64 = lambda.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(MixtureError::NotSimplex(sum));
    }
    Ok(())
}

/// Parses a mixture spec: one `model-path<TAB>weight` per line, `#` comments.
pub fn parse_mixture_spec(text: &str) -> Result<Vec<(String, f64)>, MixtureError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (path, weight) = trimmed.split_once('\t').ok_or_else(|| MixtureError::Parse {
            line: lineno,
            reason: "expected `path<TAB>weight`".to_string(),
        })?;
        let weight: f64 = weight.trim().parse().map_err(|_| MixtureError::Parse {
            line: lineno,
            reason: format!("bad weight `{}`", weight.trim()),
        })?;
        out.push((path.trim().to_string(), weight));
    }
    if out.is_empty() {
        return Err(MixtureError::Empty);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::IntegerCounts;
    use crate::lm::{perplexity, train_katz, UnkPolicy};
    use crate::EvalCorpus;

    fn tiny_model(sentences: &[&str]) -> Arc<NGramModel> {
        let parsed: Vec<Vec<String>> = sentences
            .iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect();
        let counts = IntegerCounts::from_corpus(&parsed, 2, true);
        Arc::new(train_katz(&counts, 2, &[0, 0], UnkPolicy::Closed).unwrap())
    }

    #[test]
    fn degenerate_weight_matches_component() {
        let a = tiny_model(&["a b", "b a", "a a"]);
        let b = tiny_model(&["c d", "d c"]);
        let mix = MixtureModel::new(vec![a.clone(), b], vec![1.0, 0.0]).unwrap();
        for (h, w) in [(vec![], "a"), (vec!["a"], "b"), (vec!["b"], "a")] {
            assert!((mix.mix_prob(&h, w) - a.cond_prob(&h, w)).abs() < 1e-15);
        }
    }

    #[test]
    fn mix_prob_is_weighted_sum() {
        let a = tiny_model(&["a b"]);
        let b = tiny_model(&["a c"]);
        let mix = MixtureModel::new(vec![a.clone(), b.clone()], vec![0.5, 0.5]).unwrap();
        let pa = a.cond_prob(&["a"], "b");
        let pb = b.cond_prob(&["a"], "b");
        assert!((mix.mix_prob(&["a"], "b") - (0.5 * pa + 0.5 * pb)).abs() < 1e-15);
    }

    #[test]
    fn identical_components_are_lambda_invariant() {
        let a = tiny_model(&["a b", "b a"]);
        for lambda_app in [0.0, 0.25, 0.7, 1.0] {
            let mix = MixtureModel::two_component(a.clone(), a.clone(), lambda_app).unwrap();
            assert!((mix.mix_prob(&["a"], "b") - a.cond_prob(&["a"], "b")).abs() < 1e-12);
        }
    }

    #[test]
    fn set_weights_shares_components() {
        let a = tiny_model(&["a b"]);
        let b = tiny_model(&["a c"]);
        let mix = MixtureModel::new(vec![a, b], vec![0.3, 0.7]).unwrap();
        let remixed = mix.set_weights(vec![0.6, 0.4]).unwrap();
        assert!(Arc::ptr_eq(&mix.components()[0], &remixed.components()[0]));
        assert_eq!(remixed.lambda(), &[0.6, 0.4]);
    }

    #[test]
    fn bad_weights_are_rejected() {
        let a = tiny_model(&["a b"]);
        let b = tiny_model(&["a c"]);
        let mix = MixtureModel::new(vec![a, b], vec![0.3, 0.7]).unwrap();
        assert!(matches!(
            mix.set_weights(vec![0.5, 0.6]),
            Err(MixtureError::NotSimplex(_))
        ));
        assert!(matches!(
            mix.set_weights(vec![-0.1, 1.1]),
            Err(MixtureError::NegativeWeight { .. })
        ));
        assert!(matches!(mix.set_weights(vec![1.0]), Err(MixtureError::LengthMismatch { .. })));
    }

    #[test]
    fn conditional_distributions_sum_to_one() {
        let a = tiny_model(&["a b c", "b a", "c c"]);
        let b = tiny_model(&["a d", "d d b"]);
        let mix = MixtureModel::new(vec![a.clone(), b.clone()], vec![0.4, 0.6]).unwrap();
        let mut vocab: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for m in [&a, &b] {
            vocab.extend(m.vocab().iter().map(String::as_str));
        }
        for history in [vec![], vec!["a"], vec!["d"], vec!["zzz"]] {
            let sum: f64 = vocab.iter().map(|w| mix.mix_prob(&history, w)).sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum} for history {history:?}");
        }
    }

    fn tiny_open_model(sentences: &[&str]) -> Arc<NGramModel> {
        let parsed: Vec<Vec<String>> = sentences
            .iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect();
        let counts = IntegerCounts::from_corpus(&parsed, 2, true);
        Arc::new(train_katz(&counts, 2, &[0, 0], UnkPolicy::open()).unwrap())
    }

    #[test]
    fn lambda_grid_perplexity_stays_finite() {
        // With <unk> fallback in both components the whole grid, endpoints
        // included, must evaluate without NaN or infinity jumps.
        let a = tiny_open_model(&["a b", "b b a"]);
        let b = tiny_open_model(&["c a", "a c c"]);
        let corpus = EvalCorpus::new(vec![
            vec!["a".to_string(), "b".to_string()],
            vec!["c".to_string(), "a".to_string()],
        ])
        .unwrap();
        let mut last: Option<f64> = None;
        for i in 0..=100 {
            let lambda_app = i as f64 / 100.0;
            let mix = MixtureModel::two_component(a.clone(), b.clone(), lambda_app).unwrap();
            let ppl = perplexity(&mix, &corpus).unwrap();
            assert!(ppl.is_finite());
            if let Some(prev) = last {
                // Continuity at grid resolution: bounded relative steps.
                let jump: f64 = (ppl / prev).ln().abs();
                assert!(jump < 0.5, "jump {jump} at lambda {lambda_app}");
            }
            last = Some(ppl);
        }
    }

    #[test]
    fn spec_file_parses() {
        let spec = "# mixture\nbase.arpa\t0.6\napp.arpa\t0.4\n";
        let parsed = parse_mixture_spec(spec).unwrap();
        assert_eq!(
            parsed,
            vec![("base.arpa".to_string(), 0.6), ("app.arpa".to_string(), 0.4)]
        );
    }
}
