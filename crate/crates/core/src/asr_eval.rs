//! N-best list rescoring: word-level edit distance, posterior distributions
//! over hypotheses, expected word error rate, and one-best rescored WER.
//!
//! The expected-WER loss sums, over every utterance and hypothesis, the
//! hypothesis's posterior probability times its edit-distance error count,
//! normalized by the total number of reference words. Posteriors are softmax
//! distributions over `acoustic_scale * acoustic + lm_scale * ln p(words)`;
//! acoustic scores are natural-log-domain values from the recognizer.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::lm::{sentence_ln_prob, Scorer};
use crate::logmath::{log_sum, LOG_ZERO};

#[derive(Debug, Error)]
pub enum AsrError {
    #[error("reference for utterance `{0}` is empty")]
    EmptyReference(String),
    #[error("utterance `{0}` has no hypotheses")]
    NoHypotheses(String),
    #[error("no utterances in batch")]
    EmptyBatch,
    #[error("no reference for utterance `{0}`")]
    MissingReference(String),
    #[error("malformed n-best input at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One recognizer hypothesis with its acoustic score (natural log domain).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    pub acoustic_score: f64,
    /// Original decoder LM score, if the producer recorded one.
    pub lm_score: Option<f64>,
}

/// Ranked hypotheses for one utterance plus its reference transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub utt_id: String,
    pub reference: Vec<String>,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn validate(&self) -> Result<(), AsrError> {
        if self.reference.is_empty() {
            return Err(AsrError::EmptyReference(self.utt_id.clone()));
        }
        if self.hypotheses.is_empty() {
            return Err(AsrError::NoHypotheses(self.utt_id.clone()));
        }
        Ok(())
    }
}

/// Per-hypothesis posterior probabilities; sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDist {
    probs: Vec<f64>,
}

impl PosteriorDist {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Word-level alignment error counts against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_len as f64
    }
}

/// Score scales combining acoustic and language-model evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub lm: f64,
    pub acoustic: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Self { lm: 1.0, acoustic: 1.0 }
    }
}

/// Minimal word-level Levenshtein alignment split into S/I/D counts.
///
/// Ties prefer the diagonal (substitution) over insertion-plus-deletion
/// decompositions of the same cost.
pub fn edit_distance(hyp: &[String], reference: &[String]) -> Result<EditStats, AsrError> {
    if reference.is_empty() {
        return Err(AsrError::EmptyReference(String::new()));
    }
    let n = hyp.len();
    let m = reference.len();
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        cost[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            let ins = cost[i - 1][j] + 1;
            let del = cost[i][j - 1] + 1;
            cost[i][j] = sub.min(ins).min(del);
        }
    }
    // Backtrace, diagonal first on ties.
    let (mut i, mut j) = (n, m);
    let mut stats = EditStats { substitutions: 0, insertions: 0, deletions: 0, ref_len: m };
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(hyp[i - 1] != reference[j - 1]);
            if cost[i][j] == cost[i - 1][j - 1] + sub_cost {
                stats.substitutions += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            stats.insertions += 1;
            i -= 1;
        } else {
            stats.deletions += 1;
            j -= 1;
        }
    }
    Ok(stats)
}

fn combined_scores<S: Scorer + ?Sized>(
    nb: &NBestList,
    scorer: &S,
    scales: &Scales,
) -> Vec<f64> {
    nb.hypotheses
        .iter()
        .map(|h| {
            scales.acoustic * h.acoustic_score + scales.lm * sentence_ln_prob(scorer, &h.words)
        })
        .collect()
}

/// Softmax posterior over hypotheses from scaled combined scores.
///
/// Hypotheses the scorer assigns zero probability receive posterior zero; if
/// every hypothesis scores zero the posterior is uniform.
pub fn posterior<S: Scorer + ?Sized>(
    nb: &NBestList,
    scorer: &S,
    scales: &Scales,
) -> Result<PosteriorDist, AsrError> {
    nb.validate()?;
    let scores = combined_scores(nb, scorer, scales);
    let log_denominator = log_sum(scores.iter().copied());
    if log_denominator == LOG_ZERO {
        let uniform = 1.0 / scores.len() as f64;
        return Ok(PosteriorDist { probs: vec![uniform; scores.len()] });
    }
    let probs = scores.iter().map(|&s| (s - log_denominator).exp()).collect();
    Ok(PosteriorDist { probs })
}

/// Posterior-weighted edit errors over the batch, divided by total reference
/// words: the expected WER of the rescored system.
pub fn expected_wer_loss<S: Scorer + ?Sized>(
    lists: &[NBestList],
    scorer: &S,
    scales: &Scales,
) -> Result<f64, AsrError> {
    if lists.is_empty() {
        return Err(AsrError::EmptyBatch);
    }
    let mut weighted_errors = 0.0;
    let mut total_ref_words = 0usize;
    for nb in lists {
        nb.validate()?;
        let post = posterior(nb, scorer, scales)?;
        for (hyp, &p) in nb.hypotheses.iter().zip(post.probs()) {
            let stats = edit_distance(&hyp.words, &nb.reference)
                .map_err(|_| AsrError::EmptyReference(nb.utt_id.clone()))?;
            weighted_errors += p * stats.errors() as f64;
        }
        total_ref_words += nb.reference.len();
    }
    Ok(weighted_errors / total_ref_words as f64)
}

/// Rescores each utterance, picks the argmax-combined-score hypothesis (first
/// on ties), and reports total errors over total reference words.
pub fn one_best_wer<S: Scorer + ?Sized>(
    lists: &[NBestList],
    scorer: &S,
    scales: &Scales,
) -> Result<f64, AsrError> {
    if lists.is_empty() {
        return Err(AsrError::EmptyBatch);
    }
    let mut errors = 0usize;
    let mut total_ref_words = 0usize;
    for nb in lists {
        nb.validate()?;
        let scores = combined_scores(nb, scorer, scales);
        let best = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Less))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let stats = edit_distance(&nb.hypotheses[best].words, &nb.reference)
            .map_err(|_| AsrError::EmptyReference(nb.utt_id.clone()))?;
        errors += stats.errors();
        total_ref_words += nb.reference.len();
    }
    Ok(errors as f64 / total_ref_words as f64)
}

/// Best achievable WER over the batch, picking the minimum-error hypothesis
/// of each utterance regardless of scores.
pub fn oracle_wer(lists: &[NBestList]) -> Result<f64, AsrError> {
    if lists.is_empty() {
        return Err(AsrError::EmptyBatch);
    }
    let mut errors = 0usize;
    let mut total_ref_words = 0usize;
    for nb in lists {
        nb.validate()?;
        let best = nb
            .hypotheses
            .iter()
            .map(|h| edit_distance(&h.words, &nb.reference).map(|s| s.errors()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| AsrError::EmptyReference(nb.utt_id.clone()))?
            .into_iter()
            .min()
            .unwrap_or(0);
        errors += best;
        total_ref_words += nb.reference.len();
    }
    Ok(errors as f64 / total_ref_words as f64)
}

/// Reads references (`utt_id<TAB>words`) and an n-best file
/// (`utt_id<TAB>rank<TAB>acoustic_score<TAB>words`), pairing them into lists
/// in first-appearance order of the n-best file.
pub fn read_nbest<R1: BufRead, R2: BufRead>(
    nbest: R1,
    references: R2,
) -> Result<Vec<NBestList>, AsrError> {
    let mut refs: HashMap<String, Vec<String>> = HashMap::new();
    for (idx, line) in references.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (utt, words) = line.split_once('\t').ok_or_else(|| AsrError::Parse {
            line: lineno,
            reason: "expected `utt_id<TAB>words` in references".to_string(),
        })?;
        refs.insert(
            utt.trim().to_string(),
            words.split_whitespace().map(str::to_string).collect(),
        );
    }
    let mut order: Vec<String> = Vec::new();
    let mut hyps: HashMap<String, Vec<(usize, Hypothesis)>> = HashMap::new();
    for (idx, line) in nbest.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(AsrError::Parse {
                line: lineno,
                reason: "expected `utt_id<TAB>rank<TAB>acoustic<TAB>words`".to_string(),
            });
        }
        let utt = fields[0].trim().to_string();
        let rank: usize = fields[1].trim().parse().map_err(|_| AsrError::Parse {
            line: lineno,
            reason: format!("bad rank `{}`", fields[1]),
        })?;
        let acoustic: f64 = fields[2].trim().parse().map_err(|_| AsrError::Parse {
            line: lineno,
            reason: format!("bad acoustic score `{}`", fields[2]),
        })?;
        if !acoustic.is_finite() {
            return Err(AsrError::Parse {
                line: lineno,
                reason: "non-finite acoustic score".to_string(),
            });
        }
        let words: Vec<String> = fields[3].split_whitespace().map(str::to_string).collect();
        if !hyps.contains_key(&utt) {
            order.push(utt.clone());
        }
        hyps.entry(utt)
            .or_default()
            .push((rank, Hypothesis { words, acoustic_score: acoustic, lm_score: None }));
    }
    let mut lists = Vec::with_capacity(order.len());
    for utt in order {
        let reference =
            refs.get(&utt).cloned().ok_or_else(|| AsrError::MissingReference(utt.clone()))?;
        let mut ranked = hyps.remove(&utt).unwrap_or_default();
        ranked.sort_by_key(|&(rank, _)| rank);
        let list = NBestList {
            utt_id: utt,
            reference,
            hypotheses: ranked.into_iter().map(|(_, h)| h).collect(),
        };
        list.validate()?;
        lists.push(list);
    }
    if lists.is_empty() {
        return Err(AsrError::EmptyBatch);
    }
    Ok(lists)
}

/// Writes the two files read by [`read_nbest`].
pub fn write_nbest<W1: Write, W2: Write>(
    lists: &[NBestList],
    mut nbest: W1,
    mut references: W2,
) -> Result<(), AsrError> {
    for nb in lists {
        writeln!(references, "{}\t{}", nb.utt_id, nb.reference.join(" "))?;
        for (rank, h) in nb.hypotheses.iter().enumerate() {
            writeln!(
                nbest,
                "{}\t{}\t{}\t{}",
                nb.utt_id,
                rank,
                h.acoustic_score,
                h.words.join(" ")
            )?;
        }
    }
    Ok(())
}
