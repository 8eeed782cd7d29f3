//! Katz back-off n-gram models: training from integerized counts, scoring,
//! perplexity, and ARPA text I/O.
//!
//! Training follows Katz smoothing with Good-Turing discounts estimated from
//! count-of-counts up to k = 5. Conditional probabilities use the summed
//! continuation counts of each history as the denominator; the discounted
//! leftover mass of a history becomes its back-off weight over the lower
//! order. Orders whose count-of-count statistics cannot support Good-Turing
//! (for example after aggressive scaling) fall back to absolute discounting
//! of 0.5, with a logged warning; n-grams counted more than k times are not
//! discounted at all.
//!
//! At the unigram level the discounted leftover has nowhere to back off to:
//! with a closed vocabulary the unigram distribution is renormalized, with an
//! open vocabulary the leftover joins the `<unk>` entry.
//!
//! Log probabilities and back-off weights are stored at the six-decimal
//! precision of the ARPA format, with back-off weights computed from the
//! quantized probabilities and the unigram simplex rebalanced within one
//! quantum, so a model scores identically before and after a save/load and
//! normalization survives the file format.
//!
//! Boundary symbols are ordinary vocabulary entries. `<s>` is used as context
//! only and is never scored; `</s>` is scored at the end of every sentence
//! whenever the model knows it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use log::warn;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::counts::{CountError, IntegerCounts, BOS, EOS};
use crate::wfst::{PathSampler, WeightedFst, WfstError};

/// Katz count threshold: counts above it are considered reliable and are not
/// discounted.
const KATZ_K: u64 = 5;
/// Vocabulary symbol for out-of-vocabulary words in open-vocabulary models.
pub const UNK: &str = "<unk>";
/// Printed log10 back-off weight for histories with no freed mass.
const LOG_BOW_FLOOR: f64 = -99.0;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("counts are empty")]
    EmptyCounts,
    #[error("model is empty")]
    EmptyModel,
    #[error("requested order {requested} exceeds counts order {available}")]
    OrderMismatch { requested: usize, available: usize },
    #[error("no n-grams of order {0} in counts")]
    EmptyOrder(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("zero probability for `{word}` in sentence {sentence} and no <unk> fallback")]
    ZeroProbability { sentence: usize, word: String },
    #[error("malformed ARPA input at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("ARPA header declares {declared} {order}-grams but section has {actual}")]
    SectionMismatch { order: usize, declared: usize, actual: usize },
    #[error(transparent)]
    Counts(#[from] CountError),
    #[error(transparent)]
    Wfst(#[from] WfstError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Out-of-vocabulary handling chosen at training time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnkPolicy {
    /// No `<unk>`: out-of-vocabulary words get probability zero. The right
    /// choice for grammar-derived models, whose language is exact.
    Closed,
    /// Add an `<unk>` unigram with the given pseudo-count; unigram leftover
    /// mass also flows to it.
    Unk { count: u64 },
}

impl UnkPolicy {
    pub fn open() -> Self {
        UnkPolicy::Unk { count: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
struct ModelEntry {
    /// log10 conditional probability.
    logp: f64,
    /// log10 back-off weight; present exactly on histories of longer entries.
    bow: Option<f64>,
}

/// ARPA-style back-off n-gram model. Probabilities and back-off weights are
/// stored in log10, matching the file format.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    /// Per order (index = order - 1): joined n-gram -> entry.
    entries: Vec<HashMap<String, ModelEntry>>,
    vocab: BTreeSet<String>,
    has_unk: bool,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn has_unk(&self) -> bool {
        self.has_unk
    }

    pub fn num_entries(&self, order: usize) -> usize {
        self.entries.get(order - 1).map_or(0, HashMap::len)
    }

    fn entry(&self, words: &[&str]) -> Option<&ModelEntry> {
        let n = words.len();
        if n == 0 || n > self.order {
            return None;
        }
        self.entries[n - 1].get(&words.join(" "))
    }

    fn bow(&self, history: &[&str]) -> f64 {
        self.entry(history).and_then(|e| e.bow).unwrap_or(0.0)
    }

    /// Maps an out-of-vocabulary word to `<unk>` when the model is open.
    fn resolve_word<'a>(&self, word: &'a str) -> Option<&'a str> {
        if self.vocab.contains(word) {
            Some(word)
        } else if self.has_unk {
            Some(UNK)
        } else {
            None
        }
    }

    /// Back-off-resolved log10 conditional probability of `word` after
    /// `history`; negative infinity when the word is unreachable.
    pub fn cond_log10(&self, history: &[&str], word: &str) -> f64 {
        let word = match self.resolve_word(word) {
            Some(w) => w,
            None => return f64::NEG_INFINITY,
        };
        let start = history.len().saturating_sub(self.order - 1);
        let context: Vec<&str> = history[start..]
            .iter()
            .map(|w| self.resolve_word(w).unwrap_or(UNK))
            .collect();
        self.resolve_log10(&context, word)
    }

    fn resolve_log10(&self, context: &[&str], word: &str) -> f64 {
        let mut key: Vec<&str> = context.to_vec();
        key.push(word);
        if let Some(e) = self.entry(&key) {
            return e.logp;
        }
        if context.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.bow(context) + self.resolve_log10(&context[1..], word)
    }

    /// Linear-domain conditional probability.
    pub fn cond_prob(&self, history: &[&str], word: &str) -> f64 {
        let lp = self.cond_log10(history, word);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            10f64.powf(lp)
        }
    }

    /// Whether sentences scored by this model end with an `</s>` event.
    pub fn scores_eos(&self) -> bool {
        self.vocab.contains(EOS)
    }

    fn uses_bos(&self) -> bool {
        self.vocab.contains(BOS)
    }

    /// log10 probability of a sentence: every word in order, plus `</s>` if
    /// the model knows it, with `<s>` serving as initial context only.
    pub fn sentence_logprob(&self, sentence: &[String]) -> f64 {
        let refs: Vec<&str> = sentence.iter().map(String::as_str).collect();
        let mut total = 0.0;
        let mut history: Vec<&str> = if self.uses_bos() { vec![BOS] } else { Vec::new() };
        for w in &refs {
            total += self.cond_log10(&history, w);
            history.push(w);
            let keep = history.len().saturating_sub(self.order.saturating_sub(1));
            history.drain(..keep);
        }
        if self.scores_eos() {
            total += self.cond_log10(&history, EOS);
        }
        total
    }

    /// Verifies that every history's conditional distribution sums to one
    /// over the full vocabulary; returns the worst deviation.
    pub fn max_normalization_error(&self) -> f64 {
        let vocab: Vec<&str> = self.vocab.iter().map(String::as_str).collect();
        let mut worst: f64 = 0.0;
        // The empty history plus every entry that carries continuations.
        let mut histories: Vec<Vec<&str>> = vec![Vec::new()];
        for n in 1..self.order {
            let mut seen_histories: BTreeSet<&str> = BTreeSet::new();
            for key in self.entries[n].keys() {
                if let Some(idx) = key.rfind(' ') {
                    seen_histories.insert(&key[..idx]);
                }
            }
            for h in seen_histories {
                histories.push(h.split(' ').collect());
            }
        }
        for history in &histories {
            let sum: f64 = vocab.iter().map(|w| self.cond_prob(history, w)).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }

    /// Serializes in ARPA text format, entries sorted per order, log values
    /// printed to six decimal places.
    pub fn write_arpa<W: Write>(&self, mut w: W) -> Result<(), LmError> {
        if self.entries.iter().all(HashMap::is_empty) {
            return Err(LmError::EmptyModel);
        }
        writeln!(w, "\\data\\")?;
        for n in 1..=self.order {
            writeln!(w, "ngram {}={}", n, self.entries[n - 1].len())?;
        }
        for n in 1..=self.order {
            writeln!(w)?;
            writeln!(w, "\\{n}-grams:")?;
            let mut keys: Vec<&String> = self.entries[n - 1].keys().collect();
            keys.sort_unstable();
            for key in keys {
                let e = &self.entries[n - 1][key];
                match e.bow {
                    Some(bow) => writeln!(w, "{:.6}\t{}\t{:.6}", e.logp, key, bow)?,
                    None => writeln!(w, "{:.6}\t{}", e.logp, key)?,
                }
            }
        }
        writeln!(w)?;
        writeln!(w, "\\end\\")?;
        Ok(())
    }

    pub fn to_arpa(&self) -> Result<String, LmError> {
        let mut buf = Vec::new();
        self.write_arpa(&mut buf)?;
        Ok(String::from_utf8(buf).expect("ARPA text is utf-8"))
    }

    /// Parses ARPA text; section sizes must match the header declaration.
    pub fn read_arpa<R: BufRead>(reader: R) -> Result<Self, LmError> {
        let mut lines = reader.lines().enumerate();
        // Scan to \data\.
        let mut declared: Vec<(usize, usize)> = Vec::new();
        let mut found_data = false;
        while let Some((idx, line)) = lines.next() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if !found_data {
                if trimmed == "\\data\\" {
                    found_data = true;
                    continue;
                }
                return Err(LmError::Parse {
                    line: lineno,
                    reason: "expected \\data\\ header".to_string(),
                });
            }
            if let Some(rest) = trimmed.strip_prefix("ngram ") {
                let (order_part, count_part) =
                    rest.split_once('=').ok_or_else(|| LmError::Parse {
                        line: lineno,
                        reason: "expected `ngram N=count`".to_string(),
                    })?;
                let order: usize = order_part.trim().parse().map_err(|_| LmError::Parse {
                    line: lineno,
                    reason: format!("bad order `{order_part}`"),
                })?;
                let count: usize = count_part.trim().parse().map_err(|_| LmError::Parse {
                    line: lineno,
                    reason: format!("bad count `{count_part}`"),
                })?;
                declared.push((order, count));
                continue;
            }
            if trimmed.ends_with("-grams:") && trimmed.starts_with('\\') {
                return read_arpa_sections(trimmed, lineno, lines, declared);
            }
            return Err(LmError::Parse {
                line: lineno,
                reason: format!("unexpected line `{trimmed}` in header"),
            });
        }
        Err(LmError::Parse { line: 0, reason: "missing n-gram sections".to_string() })
    }
}

fn read_arpa_sections<I>(
    first_section: &str,
    first_lineno: usize,
    lines: I,
    declared: Vec<(usize, usize)>,
) -> Result<NGramModel, LmError>
where
    I: Iterator<Item = (usize, std::io::Result<String>)>,
{
    if declared.is_empty() {
        return Err(LmError::Parse {
            line: first_lineno,
            reason: "\\data\\ section declared no orders".to_string(),
        });
    }
    let order = declared.iter().map(|&(n, _)| n).max().unwrap();
    let mut entries: Vec<HashMap<String, ModelEntry>> = vec![HashMap::new(); order];
    let parse_section_order = |s: &str, lineno: usize| -> Result<usize, LmError> {
        s.trim_start_matches('\\')
            .trim_end_matches("-grams:")
            .parse()
            .map_err(|_| LmError::Parse {
                line: lineno,
                reason: format!("bad section marker `{s}`"),
            })
    };
    let mut current = parse_section_order(first_section, first_lineno)?;
    let mut ended = false;
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed == "\\end\\" {
            ended = true;
            break;
        }
        if trimmed.ends_with("-grams:") && trimmed.starts_with('\\') {
            current = parse_section_order(trimmed, lineno)?;
            if current == 0 || current > order {
                return Err(LmError::Parse {
                    line: lineno,
                    reason: format!("section order {current} out of declared range"),
                });
            }
            continue;
        }
        let mut fields = trimmed.split('\t');
        let logp: f64 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| LmError::Parse {
                line: lineno,
                reason: "missing log probability".to_string(),
            })?;
        let words = fields.next().ok_or_else(|| LmError::Parse {
            line: lineno,
            reason: "missing n-gram words".to_string(),
        })?;
        let bow: Option<f64> = match fields.next() {
            None => None,
            Some(b) => Some(b.trim().parse().map_err(|_| LmError::Parse {
                line: lineno,
                reason: format!("bad back-off weight `{b}`"),
            })?),
        };
        let n = words.split_whitespace().count();
        if n != current {
            return Err(LmError::Parse {
                line: lineno,
                reason: format!("{n}-gram `{words}` in \\{current}-grams: section"),
            });
        }
        let key = words.split_whitespace().collect::<Vec<_>>().join(" ");
        entries[current - 1].insert(key, ModelEntry { logp, bow });
    }
    if !ended {
        return Err(LmError::Parse { line: 0, reason: "missing \\end\\ marker".to_string() });
    }
    for &(n, count) in &declared {
        let actual = entries.get(n - 1).map_or(0, HashMap::len);
        if actual != count {
            return Err(LmError::SectionMismatch { order: n, declared: count, actual });
        }
    }
    let vocab: BTreeSet<String> =
        entries[0].keys().cloned().collect();
    let has_unk = vocab.contains(UNK);
    Ok(NGramModel { order, entries, vocab, has_unk })
}

// ---------------------------------------------------------------------------
// Katz training
// ---------------------------------------------------------------------------

/// Good-Turing discount ratios per count r = 1..=k for one order, with the
/// absolute-discount fallback where the statistics are unusable.
fn katz_discounts(count_of_counts: &BTreeMap<u64, usize>, order: usize) -> Vec<f64> {
    let n = |r: u64| count_of_counts.get(&r).copied().unwrap_or(0) as f64;
    let n1 = n(1);
    let common = if n1 > 0.0 { (KATZ_K + 1) as f64 * n(KATZ_K + 1) / n1 } else { f64::NAN };
    let mut fallback_used = false;
    let discounts: Vec<f64> = (1..=KATZ_K)
        .map(|r| {
            let rf = r as f64;
            let gt = if common.is_finite() && common < 1.0 && n(r) > 0.0 {
                let r_star = (rf + 1.0) * n(r + 1) / n(r);
                (r_star / rf - common) / (1.0 - common)
            } else {
                f64::NAN
            };
            if gt.is_finite() && gt > 0.0 && gt <= 1.0 {
                gt
            } else {
                fallback_used = true;
                (rf - 0.5) / rf
            }
        })
        .collect();
    if fallback_used {
        warn!(
            "order-{order} count-of-counts too sparse for Good-Turing; \
             using absolute discount 0.5 where needed"
        );
    }
    discounts
}

fn discount_for(discounts: &[f64], count: u64) -> f64 {
    if count == 0 || count > KATZ_K {
        1.0
    } else {
        discounts[(count - 1) as usize]
    }
}

/// Rounds to the exact value the ARPA writer will print.
fn quantize6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float reparses")
}

/// Nudges quantized log10 probabilities so that, together with `fixed_mass`,
/// they sum to one as closely as the storage precision permits. The residual
/// is folded into entries from largest to smallest (ties broken toward the
/// lexicographically first word); later, smaller entries have finer quanta,
/// so the residual shrinks with every step. Back-off weights amplify the
/// residual of the level below, hence the tight target.
fn rebalance_quantized(logs: &mut BTreeMap<String, f64>, fixed_mass: f64) {
    let mut ranked: Vec<(String, f64)> =
        logs.iter().map(|(w, &lp)| (w.clone(), lp)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
    });
    let mut total: f64 = fixed_mass + logs.values().map(|lp| 10f64.powf(*lp)).sum::<f64>();
    for (word, _) in ranked {
        let residual = 1.0 - total;
        if residual.abs() <= 2e-9 {
            break;
        }
        let old = 10f64.powf(logs[&word]);
        let adjusted = (old + residual).max(f64::MIN_POSITIVE);
        let new_log = quantize6(adjusted.log10());
        logs.insert(word, new_log);
        total += 10f64.powf(new_log) - old;
    }
}

/// Quantizes a probability simplex into 6-decimal log10 values that still
/// sum to one within tolerance.
fn quantized_simplex_log10(probs: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let mut logs: BTreeMap<String, f64> =
        probs.iter().map(|(w, p)| (w.clone(), quantize6(p.log10()))).collect();
    rebalance_quantized(&mut logs, 0.0);
    logs
}

/// Trains a Katz back-off model of the given order from integerized counts.
///
/// `cutoffs[n-1]` discards order-n n-grams whose count is at or below it
/// (0 keeps everything). Boundary symbols are expected in the counts.
pub fn train_katz(
    counts: &IntegerCounts,
    order: usize,
    cutoffs: &[u64],
    unk_policy: UnkPolicy,
) -> Result<NGramModel, LmError> {
    if counts.is_empty() {
        return Err(LmError::EmptyCounts);
    }
    if order == 0 || order > counts.order() {
        return Err(LmError::OrderMismatch { requested: order, available: counts.order() });
    }
    // Per-order count tables after cutoffs.
    let mut grams: Vec<HashMap<Vec<String>, u64>> = vec![HashMap::new(); order];
    for (ngram, count) in counts.iter() {
        let n = ngram.len();
        if n > order {
            continue;
        }
        let cutoff = cutoffs.get(n - 1).copied().unwrap_or(0);
        if count > cutoff {
            grams[n - 1].insert(ngram.clone(), count);
        }
    }
    if let UnkPolicy::Unk { count } = unk_policy {
        let unk_key = vec![UNK.to_string()];
        grams[0].entry(unk_key).or_insert(count.max(1));
    }
    // Prefix closure: every history of a kept n-gram must itself be kept so
    // it can carry the back-off weight. Rounding can disturb this, so close
    // downward with the summed continuation count.
    for n in (2..=order).rev() {
        let mut needed: HashMap<Vec<String>, u64> = HashMap::new();
        for (ngram, &count) in &grams[n - 1] {
            let prefix = ngram[..n - 1].to_vec();
            if !grams[n - 2].contains_key(&prefix) {
                *needed.entry(prefix).or_insert(0) += count;
            }
        }
        for (prefix, count) in needed {
            grams[n - 2].insert(prefix, count.max(1));
        }
    }
    if grams[0].is_empty() {
        return Err(LmError::EmptyCounts);
    }
    for n in 1..=order {
        if grams[n - 1].is_empty() {
            return Err(LmError::EmptyOrder(n));
        }
    }

    // Count-of-counts and discounts per order.
    let discounts: Vec<Vec<f64>> = (1..=order)
        .map(|n| {
            let mut coc: BTreeMap<u64, usize> = BTreeMap::new();
            for &c in grams[n - 1].values() {
                *coc.entry(c).or_insert(0) += 1;
            }
            katz_discounts(&coc, n)
        })
        .collect();

    let mut entries: Vec<HashMap<String, ModelEntry>> = vec![HashMap::new(); order];

    // Unigrams: discounted relative frequencies; leftover mass either
    // renormalized (closed vocabulary) or assigned to <unk> (open).
    let total_unigrams: u64 = grams[0].values().sum();
    let mut unigram_probs: BTreeMap<String, f64> = BTreeMap::new();
    for (ngram, &count) in &grams[0] {
        let p = discount_for(&discounts[0], count) * count as f64 / total_unigrams as f64;
        unigram_probs.insert(ngram[0].clone(), p);
    }
    let mass: f64 = unigram_probs.values().sum();
    match unk_policy {
        UnkPolicy::Closed => {
            for p in unigram_probs.values_mut() {
                *p /= mass;
            }
        }
        UnkPolicy::Unk { .. } => {
            let leftover = (1.0 - mass).max(0.0);
            *unigram_probs.get_mut(UNK).expect("<unk> inserted above") += leftover;
        }
    }
    for (word, logp) in quantized_simplex_log10(&unigram_probs) {
        entries[0].insert(word, ModelEntry { logp, bow: None });
    }

    // Higher orders, then back-off weights for their histories.
    for n in 2..=order {
        // Group continuations per history.
        let mut by_history: HashMap<&[String], Vec<(&String, u64)>> = HashMap::new();
        for (ngram, &count) in &grams[n - 1] {
            by_history.entry(&ngram[..n - 1]).or_default().push((&ngram[n - 1], count));
        }
        let model_so_far = NGramModel {
            order: n - 1,
            entries: entries[..n - 1].to_vec(),
            vocab: unigram_probs.keys().cloned().collect(),
            has_unk: unigram_probs.contains_key(UNK),
        };
        let mut history_keys: Vec<&[String]> = by_history.keys().copied().collect();
        history_keys.sort_unstable();
        for history in history_keys {
            let continuations = &by_history[history];
            let denom: u64 = continuations.iter().map(|&(_, c)| c).sum();
            // Stored (quantized) probabilities are what the back-off weight
            // must balance: accumulate those, not the exact values.
            let mut cond_logs: BTreeMap<String, f64> = BTreeMap::new();
            let mut lower_mass = 0.0;
            let history_refs: Vec<&str> = history.iter().map(String::as_str).collect();
            let lower_context = &history_refs[1..];
            for &(word, count) in continuations {
                let p = discount_for(&discounts[n - 1], count) * count as f64 / denom as f64;
                cond_logs.insert(word.clone(), quantize6(p.log10()));
                lower_mass += model_so_far.cond_prob(lower_context, word);
            }
            let seen_mass: f64 = cond_logs.values().map(|lp| 10f64.powf(*lp)).sum();
            let freed = (1.0 - seen_mass).max(0.0);
            let lower_free = 1.0 - lower_mass;
            let log_bow = if lower_free <= 1e-12 {
                // Nowhere to back off to: renormalize the explicit mass.
                let rescaled: BTreeMap<String, f64> = cond_logs
                    .iter()
                    .map(|(word, lp)| (word.clone(), 10f64.powf(*lp) / seen_mass))
                    .collect();
                cond_logs = quantized_simplex_log10(&rescaled);
                0.0
            } else if freed <= 1e-15 {
                // Quantization may leave the explicit mass slightly over one;
                // settle it on the largest continuations.
                rebalance_quantized(&mut cond_logs, 0.0);
                LOG_BOW_FLOOR
            } else {
                let bow = quantize6((freed / lower_free).log10());
                rebalance_quantized(&mut cond_logs, 10f64.powf(bow) * lower_free);
                bow
            };
            for (word, logp) in cond_logs {
                let key = format!("{} {}", history.join(" "), word);
                entries[n - 1].insert(key, ModelEntry { logp, bow: None });
            }
            // Back-off weight on the history entry (present by prefix closure).
            let hist_key = history.join(" ");
            match entries[n - 2].get_mut(&hist_key) {
                Some(e) => e.bow = Some(log_bow),
                None => unreachable!("prefix closure guarantees history entries"),
            }
        }
    }

    let vocab: BTreeSet<String> = unigram_probs.keys().cloned().collect();
    let has_unk = vocab.contains(UNK);
    Ok(NGramModel { order, entries, vocab, has_unk })
}

/// Samples `n_samples` sentences from the FST and trains a Katz model on the
/// raw sample counts; deterministic in `seed`.
pub fn train_from_samples(
    fst: &WeightedFst,
    n_samples: usize,
    seed: u64,
    order: usize,
    cutoffs: &[u64],
    unk_policy: UnkPolicy,
) -> Result<NGramModel, LmError> {
    let sampler = PathSampler::new(fst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        sentences.push(sampler.sample(&mut rng)?);
    }
    let counts = IntegerCounts::from_corpus(&sentences, order, true);
    train_katz(&counts, order, cutoffs, unk_policy)
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Conditional word-probability source; implemented by single models and
/// mixtures so that evaluation code is shared.
pub trait Scorer {
    /// Linear-domain probability of `word` after `history` (most recent last).
    fn cond_prob(&self, history: &[&str], word: &str) -> f64;
    /// Whether `<s>` should seed the scoring context.
    fn uses_bos(&self) -> bool;
    /// Whether sentences end with a scored `</s>` event.
    fn scores_eos(&self) -> bool;
}

impl Scorer for NGramModel {
    fn cond_prob(&self, history: &[&str], word: &str) -> f64 {
        NGramModel::cond_prob(self, history, word)
    }

    fn uses_bos(&self) -> bool {
        NGramModel::uses_bos(self)
    }

    fn scores_eos(&self) -> bool {
        NGramModel::scores_eos(self)
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn cond_prob(&self, history: &[&str], word: &str) -> f64 {
        (**self).cond_prob(history, word)
    }

    fn uses_bos(&self) -> bool {
        (**self).uses_bos()
    }

    fn scores_eos(&self) -> bool {
        (**self).scores_eos()
    }
}

/// Natural-log probability of a sentence under any scorer, `</s>` included
/// when the scorer ends sentences. Returns negative infinity on a zero-
/// probability word.
pub fn sentence_ln_prob<S: Scorer + ?Sized>(scorer: &S, sentence: &[String]) -> f64 {
    let mut total = 0.0;
    let refs: Vec<&str> = sentence.iter().map(String::as_str).collect();
    let mut history: Vec<&str> = if scorer.uses_bos() { vec![BOS] } else { Vec::new() };
    let score = |history: &[&str], word: &str| -> f64 {
        let p = scorer.cond_prob(history, word);
        if p <= 0.0 {
            f64::NEG_INFINITY
        } else {
            p.ln()
        }
    };
    for w in &refs {
        total += score(&history, w);
        history.push(w);
    }
    if scorer.scores_eos() {
        total += score(&history, EOS);
    }
    total
}

/// Evaluation corpus: tokenized sentences, one per line in file form.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCorpus {
    pub sentences: Vec<Vec<String>>,
}

impl EvalCorpus {
    pub fn new(sentences: Vec<Vec<String>>) -> Result<Self, LmError> {
        if sentences.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        Ok(Self { sentences })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, LmError> {
        let mut sentences = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if !words.is_empty() {
                sentences.push(words);
            }
        }
        Self::new(sentences)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), LmError> {
        for sentence in &self.sentences {
            writeln!(w, "{}", sentence.join(" "))?;
        }
        Ok(())
    }

    /// Scored token count: words plus one `</s>` per sentence when counted.
    pub fn token_count(&self, include_eos: bool) -> usize {
        let words: usize = self.sentences.iter().map(Vec::len).sum();
        words + if include_eos { self.sentences.len() } else { 0 }
    }
}

/// Corpus perplexity `exp(-(Σ ln p) / m)` where `m` counts scored words
/// including sentence-end events. A zero-probability word without `<unk>`
/// fallback is an error rather than an infinite value.
pub fn perplexity<S: Scorer + ?Sized>(scorer: &S, corpus: &EvalCorpus) -> Result<f64, LmError> {
    if corpus.sentences.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut total_ln = 0.0;
    let mut m = 0usize;
    for (idx, sentence) in corpus.sentences.iter().enumerate() {
        let lp = sentence_ln_prob(scorer, sentence);
        if lp == f64::NEG_INFINITY {
            // Identify the offending word for the report.
            let mut history: Vec<&str> =
                if scorer.uses_bos() { vec![BOS] } else { Vec::new() };
            let mut bad = EOS.to_string();
            for w in sentence {
                if scorer.cond_prob(&history, w) <= 0.0 {
                    bad = w.clone();
                    break;
                }
                history.push(w);
            }
            return Err(LmError::ZeroProbability { sentence: idx + 1, word: bad });
        }
        total_ln += lp;
        m += sentence.len() + usize::from(scorer.scores_eos());
    }
    Ok((-total_ln / m as f64).exp())
}
