//! Exact expected fractional n-gram counts from weighted FSTs.
//!
//! The expected count of an n-gram is the probability-weighted number of its
//! occurrences over all complete paths. Rather than enumerating paths, the
//! extraction propagates in-flight histories state by state: a history of the
//! last k words arrives at a state with the accumulated normalized mass of
//! every arc sequence producing it, and each outgoing word arc extends it by
//! `mass * c_arc * beta(next) / beta(here)`. Fresh 1-gram starts contribute
//! `alpha(src) * c_arc * beta(dst) / Z`. Summing the extension mass into the
//! count table realizes the exact path-sum; dropping in-flight entries whose
//! mass falls below a threshold is the pruning heuristic for dense or cyclic
//! machines.
//!
//! [`brute_force_counts`] is the literal enumerate-all-paths definition and is
//! kept as an independent oracle; it never touches the forward-backward
//! tables.

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::logmath::{log_add, LOG_ZERO};
use crate::wfst::{Label, WeightedFst, WfstError};

/// Sentence-start symbol framing every path when boundaries are on.
pub const BOS: &str = "<s>";
/// Sentence-end symbol framing every path when boundaries are on.
pub const EOS: &str = "</s>";

/// Default cap on enumerated paths for the brute-force oracle.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum CountError {
    #[error("n-gram order must be at least 1")]
    OrderTooSmall,
    #[error("cyclic FST requires a positive prune threshold")]
    CyclicNeedsPruning,
    #[error("counts are empty")]
    EmptyCounts,
    #[error("all scaled counts rounded to zero")]
    AllCountsZero,
    #[error("target mass must be positive")]
    BadTargetMass,
    #[error("malformed counts file at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Wfst(#[from] WfstError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// In-flight pruning: drop propagated histories whose accumulated normalized
/// mass falls below `threshold`. Already-recorded counts are kept.
#[derive(Debug, Clone, Copy)]
pub struct PruneConfig {
    pub threshold: f64,
    pub enabled: bool,
}

impl PruneConfig {
    pub fn off() -> Self {
        Self { threshold: 0.0, enabled: false }
    }

    pub fn with_threshold(threshold: f64) -> Self {
        Self { threshold, enabled: true }
    }

    fn effective(&self) -> f64 {
        if self.enabled {
            self.threshold
        } else {
            0.0
        }
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { threshold: 1e-8, enabled: true }
    }
}

/// Fractional expected n-gram counts up to a maximum order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpectedCounts {
    order: usize,
    table: HashMap<Vec<String>, f64>,
}

impl ExpectedCounts {
    pub fn new(order: usize) -> Self {
        Self { order, table: HashMap::new() }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, ngram: &[String]) -> f64 {
        self.table.get(ngram).copied().unwrap_or(0.0)
    }

    /// Convenience lookup from string slices.
    pub fn get_strs(&self, ngram: &[&str]) -> f64 {
        let key: Vec<String> = ngram.iter().map(|s| s.to_string()).collect();
        self.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<String>, f64)> {
        self.table.iter().map(|(k, &v)| (k, v))
    }

    pub fn add(&mut self, ngram: Vec<String>, mass: f64) {
        debug_assert!(!ngram.is_empty() && ngram.len() <= self.order);
        *self.table.entry(ngram).or_insert(0.0) += mass;
    }

    /// Sum of counts at one order.
    pub fn total_mass(&self, order: usize) -> f64 {
        self.table.iter().filter(|(k, _)| k.len() == order).map(|(_, v)| v).sum()
    }

    /// Per-order sums, index 0 holding order 1.
    pub fn total_mass_by_order(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.order];
        for (k, v) in &self.table {
            sums[k.len() - 1] += v;
        }
        sums
    }

    /// Distinct words appearing in any n-gram.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        let mut vocab = BTreeSet::new();
        for k in self.table.keys() {
            for w in k {
                vocab.insert(w.clone());
            }
        }
        vocab
    }

    /// Entries sorted lexicographically by word sequence.
    pub fn sorted_entries(&self) -> Vec<(&Vec<String>, f64)> {
        let mut entries: Vec<(&Vec<String>, f64)> =
            self.table.iter().map(|(k, &v)| (k, v)).collect();
        entries.sort_unstable_by(|a, b| a.0.cmp(b.0));
        entries
    }

    /// Writes `w1 w2 ... wn<TAB>count` lines, sorted lexicographically, with
    /// counts printed to 12 significant digits.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CountError> {
        for (ngram, count) in self.sorted_entries() {
            writeln!(w, "{}\t{}", ngram.join(" "), format_significant(count))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String, CountError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(String::from_utf8(buf).expect("counts text is utf-8"))
    }

    /// Reads the [`write`](Self::write) format; the order is the longest
    /// n-gram present.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, CountError> {
        let mut table = HashMap::new();
        let mut order = 0usize;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (words_part, count_part) = line.split_once('\t').ok_or_else(|| {
                CountError::Parse { line: lineno, reason: "missing tab separator".to_string() }
            })?;
            let ngram: Vec<String> =
                words_part.split_whitespace().map(str::to_string).collect();
            if ngram.is_empty() {
                return Err(CountError::Parse {
                    line: lineno,
                    reason: "empty n-gram".to_string(),
                });
            }
            let count: f64 = count_part.trim().parse().map_err(|_| CountError::Parse {
                line: lineno,
                reason: format!("bad count `{}`", count_part.trim()),
            })?;
            if count < 0.0 || !count.is_finite() {
                return Err(CountError::Parse {
                    line: lineno,
                    reason: format!("negative count `{count}`"),
                });
            }
            order = order.max(ngram.len());
            table.insert(ngram, count);
        }
        if table.is_empty() {
            return Err(CountError::EmptyCounts);
        }
        Ok(Self { order, table })
    }

    /// Keeps only n-grams over `known` words plus the top `k` new words by
    /// unigram count (ties broken lexicographically). Boundary symbols are
    /// always kept.
    pub fn cap_new_vocab(&self, known: &BTreeSet<String>, k: usize) -> ExpectedCounts {
        let mut new_words: Vec<(&String, f64)> = self
            .table
            .iter()
            .filter(|(ngram, _)| ngram.len() == 1)
            .map(|(ngram, &c)| (&ngram[0], c))
            .filter(|(w, _)| !known.contains(*w) && *w != BOS && *w != EOS)
            .collect();
        new_words.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(b.0))
        });
        let kept: BTreeSet<&String> = new_words.iter().take(k).map(|(w, _)| *w).collect();
        let allowed =
            |w: &String| known.contains(w) || kept.contains(w) || w == BOS || w == EOS;
        let table: HashMap<Vec<String>, f64> = self
            .table
            .iter()
            .filter(|(ngram, _)| ngram.iter().all(allowed))
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        Self { order: self.order, table }
    }
}

/// Integerized counts produced by [`scale_counts`] or sampled corpora.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegerCounts {
    order: usize,
    table: HashMap<Vec<String>, u64>,
}

impl IntegerCounts {
    pub fn new(order: usize) -> Self {
        Self { order, table: HashMap::new() }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, ngram: &[String]) -> u64 {
        self.table.get(ngram).copied().unwrap_or(0)
    }

    pub fn get_strs(&self, ngram: &[&str]) -> u64 {
        let key: Vec<String> = ngram.iter().map(|s| s.to_string()).collect();
        self.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<String>, u64)> {
        self.table.iter().map(|(k, &v)| (k, v))
    }

    pub fn insert(&mut self, ngram: Vec<String>, count: u64) {
        debug_assert!(!ngram.is_empty() && ngram.len() <= self.order);
        self.table.insert(ngram, count);
    }

    /// Total count mass at one order.
    pub fn total(&self, order: usize) -> u64 {
        self.table.iter().filter(|(k, _)| k.len() == order).map(|(_, v)| v).sum()
    }

    /// Integer n-gram counts of a tokenized corpus, with optional boundary
    /// framing of every sentence.
    pub fn from_corpus(sentences: &[Vec<String>], order: usize, boundaries: bool) -> Self {
        let mut table: HashMap<Vec<String>, u64> = HashMap::new();
        for sentence in sentences {
            let framed = frame_words(sentence, boundaries);
            for n in 1..=order {
                if framed.len() < n {
                    continue;
                }
                for window in framed.windows(n) {
                    *table.entry(window.to_vec()).or_insert(0) += 1;
                }
            }
        }
        Self { order, table }
    }
}

/// Scales every count by `target_mass / total unigram mass` and rounds to the
/// nearest integer, dropping zero-rounded entries. Returns the counts and the
/// applied factor.
pub fn scale_counts(
    counts: &ExpectedCounts,
    target_mass: f64,
) -> Result<(IntegerCounts, f64), CountError> {
    if counts.is_empty() {
        return Err(CountError::EmptyCounts);
    }
    if target_mass <= 0.0 || !target_mass.is_finite() {
        return Err(CountError::BadTargetMass);
    }
    let unigram_mass = counts.total_mass(1);
    if unigram_mass <= 0.0 {
        return Err(CountError::EmptyCounts);
    }
    let k = target_mass / unigram_mass;
    let mut table: HashMap<Vec<String>, u64> = HashMap::new();
    for (ngram, count) in counts.iter() {
        let scaled = (count * k).round();
        if scaled >= 1.0 {
            table.insert(ngram.clone(), scaled as u64);
        }
    }
    if table.is_empty() {
        return Err(CountError::AllCountsZero);
    }
    Ok((IntegerCounts { order: counts.order(), table }, k))
}

fn frame_words(words: &[String], boundaries: bool) -> Vec<String> {
    if !boundaries {
        return words.to_vec();
    }
    let mut framed = Vec::with_capacity(words.len() + 2);
    framed.push(BOS.to_string());
    framed.extend_from_slice(words);
    framed.push(EOS.to_string());
    framed
}

/// Wraps the FST so that every path reads `<s> ... </s>`: a fresh start state
/// emits `<s>` into the old start, and each final state's weight moves onto an
/// `</s>` arc into a fresh final state.
fn frame_fst(fst: &WeightedFst) -> WeightedFst {
    let mut out = fst.clone();
    let old_start = out.start().expect("framing requires a start state");
    let new_start = out.add_state();
    let new_final = out.add_state();
    out.add_arc(new_start, Label::word(BOS), 1.0, old_start);
    for s in 0..fst.num_states() {
        let fw = out.final_weight(s);
        if fw > 0.0 {
            out.set_final(s, 0.0);
            out.add_arc(s, Label::word(EOS), fw, new_final);
        }
    }
    out.set_final(new_final, 1.0);
    out.set_start(new_start);
    out
}

/// Expected n-gram counts of every order `1..=order` via the forward-backward
/// dynamic program.
///
/// The input must be free of non-terminal arcs; epsilon arcs are removed
/// internally. With pruning off the result is exact; cyclic FSTs additionally
/// require a positive prune threshold so that in-flight histories decay away.
pub fn expected_counts(
    fst: &WeightedFst,
    order: usize,
    boundaries: bool,
    prune: &PruneConfig,
) -> Result<ExpectedCounts, CountError> {
    if order < 1 {
        return Err(CountError::OrderTooSmall);
    }
    if let Some(name) = fst.non_terminals().into_iter().next() {
        return Err(CountError::Wfst(WfstError::NonTerminalPresent(name)));
    }
    let mut working = if boundaries { frame_fst(fst) } else { fst.clone() };
    working = working.remove_epsilons()?.trim()?;
    let tables = working.forward_backward()?;
    let threshold = prune.effective();
    let log_threshold = if threshold > 0.0 { threshold.ln() } else { LOG_ZERO };

    match working.topological_order() {
        Ok(state_order) => {
            Ok(extract_topological(&working, &tables, order, log_threshold, &state_order))
        }
        Err(WfstError::CycleDetected) => {
            if threshold <= 0.0 {
                return Err(CountError::CyclicNeedsPruning);
            }
            Ok(extract_worklist(&working, &tables, order, log_threshold))
        }
        Err(e) => Err(e.into()),
    }
}

/// Log-domain count table keyed by n-gram; converted to linear on completion.
struct LogTable {
    order: usize,
    table: HashMap<Vec<String>, f64>,
}

impl LogTable {
    fn new(order: usize) -> Self {
        Self { order, table: HashMap::new() }
    }

    fn add(&mut self, ngram: &[String], log_mass: f64) {
        match self.table.entry(ngram.to_vec()) {
            Entry::Occupied(mut e) => {
                let merged = log_add(*e.get(), log_mass);
                e.insert(merged);
            }
            Entry::Vacant(e) => {
                e.insert(log_mass);
            }
        }
    }

    fn finish(self) -> ExpectedCounts {
        ExpectedCounts {
            order: self.order,
            table: self.table.into_iter().map(|(k, v)| (k, v.exp())).collect(),
        }
    }
}

type HistoryMap = HashMap<Vec<String>, f64>;

fn merge_history(map: &mut HistoryMap, history: Vec<String>, log_mass: f64) {
    match map.entry(history) {
        Entry::Occupied(mut e) => {
            let merged = log_add(*e.get(), log_mass);
            e.insert(merged);
        }
        Entry::Vacant(e) => {
            e.insert(log_mass);
        }
    }
}

fn extract_topological(
    fst: &WeightedFst,
    tables: &crate::wfst::ForwardBackwardTables,
    order: usize,
    log_threshold: f64,
    state_order: &[usize],
) -> ExpectedCounts {
    let mut counts = LogTable::new(order);
    let mut inflight: Vec<HistoryMap> = vec![HistoryMap::new(); fst.num_states()];
    for &s in state_order {
        let histories = std::mem::take(&mut inflight[s]);
        let mut sink = |next: usize, h: Vec<String>, m: f64| {
            merge_history(&mut inflight[next], h, m);
        };
        propagate_state(fst, tables, order, log_threshold, s, &histories, true, &mut counts, &mut sink);
    }
    counts.finish()
}

fn extract_worklist(
    fst: &WeightedFst,
    tables: &crate::wfst::ForwardBackwardTables,
    order: usize,
    log_threshold: f64,
) -> ExpectedCounts {
    let mut counts = LogTable::new(order);
    let n = fst.num_states();
    let mut pending: Vec<HistoryMap> = vec![HistoryMap::new(); n];
    let mut queued = vec![true; n];
    // Every state is visited once for its fresh 1-gram starts; histories then
    // circulate until pruning exhausts them.
    let mut queue: VecDeque<usize> = (0..n).collect();
    let mut fresh_done = vec![false; n];
    while let Some(s) = queue.pop_front() {
        queued[s] = false;
        let histories = std::mem::take(&mut pending[s]);
        let record_fresh = !fresh_done[s];
        fresh_done[s] = true;
        let mut sink = |next: usize, h: Vec<String>, m: f64| {
            merge_history(&mut pending[next], h, m);
            if !queued[next] {
                queued[next] = true;
                queue.push_back(next);
            }
        };
        propagate_state(
            fst,
            tables,
            order,
            log_threshold,
            s,
            &histories,
            record_fresh,
            &mut counts,
            &mut sink,
        );
    }
    counts.finish()
}

/// Extends all incoming histories (and, on the first visit, fresh 1-gram
/// starts) across the outgoing word arcs of `s`, recording each produced
/// n-gram's mass and handing propagated histories to `emit`.
#[allow(clippy::too_many_arguments)]
fn propagate_state(
    fst: &WeightedFst,
    tables: &crate::wfst::ForwardBackwardTables,
    order: usize,
    log_threshold: f64,
    s: usize,
    histories: &HistoryMap,
    record_fresh: bool,
    counts: &mut LogTable,
    emit: &mut dyn FnMut(usize, Vec<String>, f64),
) {
    let log_beta_here = tables.log_beta[s];
    let log_alpha_here = tables.log_alpha[s];
    for arc in fst.arcs(s) {
        let word = match &arc.label {
            Label::Word(w) => w,
            Label::Epsilon | Label::NonTerminal(_) => {
                unreachable!("epsilon-free, non-terminal-free input")
            }
        };
        if arc.weight == 0.0 {
            continue;
        }
        let log_c = arc.weight.ln();
        let log_beta_next = tables.log_beta[arc.next];
        if log_beta_next == LOG_ZERO {
            continue;
        }
        for (history, &log_mass) in histories {
            let extended = log_mass + log_c + log_beta_next - log_beta_here;
            if extended == LOG_ZERO {
                continue;
            }
            let mut ngram = Vec::with_capacity(history.len() + 1);
            ngram.extend_from_slice(history);
            ngram.push(word.clone());
            counts.add(&ngram, extended);
            if ngram.len() < order && extended >= log_threshold {
                emit(arc.next, ngram, extended);
            }
        }
        if record_fresh && log_alpha_here != LOG_ZERO {
            let start_mass = log_alpha_here + log_c + log_beta_next - tables.log_z;
            let ngram = vec![word.clone()];
            counts.add(&ngram, start_mass);
            if order > 1 && start_mass >= log_threshold {
                emit(arc.next, ngram, start_mass);
            }
        }
    }
}

/// Literal implementation of the expected-count definition: enumerate every
/// complete path, normalize by the summed path weight, and accumulate each
/// n-gram occurrence. Serves as the test oracle for [`expected_counts`] and
/// never consults the forward-backward tables.
pub fn brute_force_counts(
    fst: &WeightedFst,
    order: usize,
    boundaries: bool,
    path_cap: usize,
) -> Result<ExpectedCounts, CountError> {
    if order < 1 {
        return Err(CountError::OrderTooSmall);
    }
    let paths = fst.enumerate_paths(path_cap)?;
    let z: f64 = paths.iter().map(|(_, w)| w).sum();
    if z <= 0.0 {
        return Err(CountError::Wfst(WfstError::ZeroMass));
    }
    let mut counts = ExpectedCounts::new(order);
    for (words, weight) in &paths {
        let p = weight / z;
        if p == 0.0 {
            continue;
        }
        let framed = frame_words(words, boundaries);
        for n in 1..=order {
            if framed.len() < n {
                continue;
            }
            for window in framed.windows(n) {
                counts.add(window.to_vec(), p);
            }
        }
    }
    Ok(counts)
}

/// 12-significant-digit decimal formatting, stable under reparse.
fn format_significant(x: f64) -> String {
    fn raw(x: f64) -> String {
        if x == 0.0 {
            return "0".to_string();
        }
        // Exponent read off the exact scientific rendering.
        let sci = format!("{x:e}");
        let exp: i32 = sci.split('e').nth(1).and_then(|e| e.parse().ok()).unwrap_or(0);
        if (-4..12).contains(&exp) {
            let decimals = (11 - exp).max(0) as usize;
            format!("{x:.decimals$}")
        } else {
            format!("{x:.11e}")
        }
    }
    // Rounding can cross a power of ten (0.999... printing as 1.000...), so
    // iterate print-then-parse to a fixpoint.
    let mut value = x;
    let mut text = raw(value);
    for _ in 0..3 {
        let parsed: f64 = text.parse().unwrap_or(value);
        if parsed == value {
            break;
        }
        value = parsed;
        text = raw(value);
    }
    text
}
