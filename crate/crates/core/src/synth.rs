//! Deterministic synthetic fixtures: random acyclic FSTs, random grammars in
//! the DSL, and noisy-channel n-best lists.
//!
//! Experiments and the acceptance suite run on synthetic instances; given the
//! same RNG these generators reproduce them bit for bit.

use std::collections::HashMap;

use rand::Rng;

use crate::asr_eval::{Hypothesis, NBestList};
use crate::grammar::Catalog;
use crate::wfst::{Label, WeightedFst};

/// Deterministic pool of short pronounceable words.
pub fn default_vocab(n: usize) -> Vec<String> {
    const ONSETS: [&str; 10] = ["t", "r", "m", "f", "l", "s", "d", "k", "p", "n"];
    const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 4] = ["", "n", "s", "k"];
    let mut out = Vec::with_capacity(n);
    'outer: for coda in CODAS {
        for onset in ONSETS {
            for nucleus in NUCLEI {
                if out.len() >= n {
                    break 'outer;
                }
                out.push(format!("{onset}{nucleus}{coda}"));
            }
        }
    }
    out
}

/// Number of complete arc-paths, or `None` for cyclic FSTs. Saturates as f64.
pub fn count_paths(fst: &WeightedFst) -> Option<f64> {
    let order = fst.topological_order().ok()?;
    let mut paths = vec![0.0f64; fst.num_states()];
    for &s in order.iter().rev() {
        let mut total = if fst.is_final(s) { 1.0 } else { 0.0 };
        for arc in fst.arcs(s) {
            if arc.weight > 0.0 {
                total += paths[arc.next];
            }
        }
        paths[s] = total;
    }
    Some(paths[fst.start()?])
}

#[derive(Debug, Clone)]
pub struct RandomFstConfig {
    pub max_layers: usize,
    pub max_width: usize,
    pub max_arcs_per_state: usize,
    pub vocab_size: usize,
    /// Regenerate until the path count is within this cap.
    pub max_paths: usize,
}

impl Default for RandomFstConfig {
    fn default() -> Self {
        Self { max_layers: 6, max_width: 3, max_arcs_per_state: 3, vocab_size: 12, max_paths: 10_000 }
    }
}

/// Random layered acyclic acceptor with at least one complete path.
pub fn random_acyclic_fst<R: Rng>(rng: &mut R, cfg: &RandomFstConfig) -> WeightedFst {
    let vocab = default_vocab(cfg.vocab_size);
    loop {
        let fst = random_fst_once(rng, cfg, &vocab);
        match count_paths(&fst) {
            Some(p) if p >= 1.0 && p <= cfg.max_paths as f64 => return fst,
            _ => continue,
        }
    }
}

fn random_fst_once<R: Rng>(rng: &mut R, cfg: &RandomFstConfig, vocab: &[String]) -> WeightedFst {
    let mut fst = WeightedFst::new();
    let n_layers = rng.gen_range(2..=cfg.max_layers.max(2));
    let mut layers: Vec<Vec<usize>> = Vec::with_capacity(n_layers);
    let start = fst.add_state();
    fst.set_start(start);
    layers.push(vec![start]);
    for _ in 1..n_layers {
        let width = rng.gen_range(1..=cfg.max_width.max(1));
        layers.push((0..width).map(|_| fst.add_state()).collect());
    }
    let last = fst.add_state();
    fst.set_final(last, rng.gen_range(0.5..1.5));
    for (i, layer) in layers.iter().enumerate() {
        for &s in layer {
            let n_arcs = rng.gen_range(1..=cfg.max_arcs_per_state.max(1));
            for _ in 0..n_arcs {
                // Mostly the next layer, occasionally skipping one.
                let skip = rng.gen_bool(0.15);
                let target_layer = (i + 1 + usize::from(skip)).min(layers.len());
                let next = if target_layer >= layers.len() {
                    last
                } else {
                    layers[target_layer][rng.gen_range(0..layers[target_layer].len())]
                };
                let word = &vocab[rng.gen_range(0..vocab.len())];
                let weight = rng.gen_range(0.1..1.0);
                fst.add_arc(s, Label::word(word.clone()), weight, next);
            }
        }
    }
    fst
}

#[derive(Debug, Clone)]
pub struct RandomGrammarConfig {
    pub max_rules: usize,
    pub max_depth: usize,
    pub catalog_count: usize,
    pub catalog_entries: usize,
    /// Word pool for literals and catalog phrases.
    pub vocab: Vec<String>,
    pub max_paths: usize,
    /// Bias toward emitting adjacent catalog references; high values mimic
    /// grammars whose non-terminal pairs blow up the path count.
    pub nt_pair_bias: f64,
}

impl Default for RandomGrammarConfig {
    fn default() -> Self {
        Self {
            max_rules: 4,
            max_depth: 3,
            catalog_count: 2,
            catalog_entries: 3,
            vocab: default_vocab(14),
            max_paths: 10_000,
            nt_pair_bias: 0.0,
        }
    }
}

/// A grammar rendered as DSL text plus its catalogs, ready for the parser.
#[derive(Debug, Clone)]
pub struct GeneratedGrammar {
    pub grammar_text: String,
    pub root: String,
    pub catalogs: HashMap<String, Catalog>,
}

/// Random grammar in DSL text form whose compiled FST stays within the path
/// budget.
pub fn random_grammar<R: Rng>(rng: &mut R, cfg: &RandomGrammarConfig) -> GeneratedGrammar {
    let vocab = &cfg.vocab;
    loop {
        let candidate = random_grammar_once(rng, cfg, vocab);
        let Ok(ast) = crate::grammar::parse_grammar(&candidate.grammar_text) else {
            continue;
        };
        let options = crate::grammar::CompileOptions {
            mode: crate::grammar::NonTerminalMode::Inline,
            ..Default::default()
        };
        let Ok(fst) = crate::grammar::compile(&ast, &candidate.root, &candidate.catalogs, &options)
        else {
            continue;
        };
        match count_paths(&fst) {
            Some(p) if p >= 2.0 && p <= cfg.max_paths as f64 => return candidate,
            _ => continue,
        }
    }
}

fn random_grammar_once<R: Rng>(
    rng: &mut R,
    cfg: &RandomGrammarConfig,
    vocab: &[String],
) -> GeneratedGrammar {
    let catalog_names: Vec<String> = (0..cfg.catalog_count)
        .map(|i| format!("CAT_{}", (b'A' + (i as u8 % 26)) as char))
        .collect();
    let mut catalogs = HashMap::new();
    for name in &catalog_names {
        let n_entries = rng.gen_range(2..=cfg.catalog_entries.max(2));
        let entries: Vec<(Vec<String>, f64)> = (0..n_entries)
            .map(|_| {
                let len = rng.gen_range(1..=2);
                let phrase: Vec<String> =
                    (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
                let weight = if rng.gen_bool(0.5) {
                    1.0
                } else {
                    [0.5, 1.5, 2.0][rng.gen_range(0..3)]
                };
                (phrase, weight)
            })
            .collect();
        catalogs.insert(name.clone(), Catalog::new(name.clone(), entries));
    }

    let n_rules = rng.gen_range(1..=cfg.max_rules.max(1));
    let mut text = String::new();
    let mut rule_names: Vec<String> = Vec::new();
    for i in 0..n_rules {
        let name = format!("rule_{i}");
        let body = random_expr(rng, cfg, vocab, &catalog_names, &rule_names, cfg.max_depth);
        text.push_str(&format!("{name} = ({body});\n"));
        rule_names.push(name);
    }
    GeneratedGrammar {
        grammar_text: text,
        root: rule_names.last().unwrap().clone(),
        catalogs,
    }
}

fn random_expr<R: Rng>(
    rng: &mut R,
    cfg: &RandomGrammarConfig,
    vocab: &[String],
    catalog_names: &[String],
    rule_names: &[String],
    depth: usize,
) -> String {
    if rng.gen_bool(cfg.nt_pair_bias) && !catalog_names.is_empty() {
        // Adjacent non-terminal pair.
        let a = &catalog_names[rng.gen_range(0..catalog_names.len())];
        let b = &catalog_names[rng.gen_range(0..catalog_names.len())];
        return format!("{a} {b}");
    }
    if depth == 0 {
        return random_atom(rng, vocab, catalog_names, rule_names);
    }
    match rng.gen_range(0..10) {
        0..=3 => {
            // Sequence of 2-3 parts.
            let n = rng.gen_range(2..=3);
            let parts: Vec<String> = (0..n)
                .map(|_| random_expr(rng, cfg, vocab, catalog_names, rule_names, depth - 1))
                .collect();
            parts.join(" ")
        }
        4..=7 => {
            // Alternation of 2-3 branches, sometimes weighted.
            let n = rng.gen_range(2..=3);
            let branches: Vec<String> = (0..n)
                .map(|_| {
                    let body =
                        random_expr(rng, cfg, vocab, catalog_names, rule_names, depth - 1);
                    if rng.gen_bool(0.3) {
                        format!("{body}:{}", [1, 2, 3][rng.gen_range(0..3)])
                    } else {
                        body
                    }
                })
                .collect();
            format!("({})", branches.join(" | "))
        }
        8 => {
            let inner = random_expr(rng, cfg, vocab, catalog_names, rule_names, depth - 1);
            format!("[{inner}]")
        }
        _ => random_atom(rng, vocab, catalog_names, rule_names),
    }
}

fn random_atom<R: Rng>(
    rng: &mut R,
    vocab: &[String],
    catalog_names: &[String],
    rule_names: &[String],
) -> String {
    let has_rules = !rule_names.is_empty();
    let has_catalogs = !catalog_names.is_empty();
    match rng.gen_range(0..10) {
        0..=1 if has_catalogs => catalog_names[rng.gen_range(0..catalog_names.len())].clone(),
        2 if has_rules => rule_names[rng.gen_range(0..rule_names.len())].clone(),
        _ => format!("\"{}\"", vocab[rng.gen_range(0..vocab.len())]),
    }
}

#[derive(Debug, Clone)]
pub struct NoisyChannelConfig {
    /// Hypotheses per utterance, the truth included.
    pub n_hyps: usize,
    /// Edits applied to each corrupted hypothesis, 1..=max_edits.
    pub max_edits: usize,
    /// Uniform acoustic noise half-width.
    pub acoustic_spread: f64,
    /// Mean acoustic-score edge of the truth over corruptions.
    pub truth_advantage: f64,
    /// Acoustic cost per word error of a corrupted hypothesis; all
    /// hypotheses explain the same audio, so corruption is never free.
    pub edit_penalty: f64,
    /// Only substitute words, keeping every hypothesis the truth's length.
    pub substitution_only: bool,
    /// Never edit the final word.
    pub preserve_final: bool,
}

impl Default for NoisyChannelConfig {
    fn default() -> Self {
        Self {
            n_hyps: 5,
            max_edits: 2,
            acoustic_spread: 1.5,
            truth_advantage: 0.5,
            edit_penalty: 0.0,
            substitution_only: false,
            preserve_final: false,
        }
    }
}

/// Scripted recognizer: each true sentence becomes an n-best list of the
/// truth plus edit-corrupted variants, acoustic scores drawn so the truth is
/// favored on average but not always ranked first. Empty truths are skipped;
/// a reference transcript cannot be empty.
pub fn noisy_channel_nbest<R: Rng>(
    rng: &mut R,
    truths: &[Vec<String>],
    confusion_vocab: &[String],
    cfg: &NoisyChannelConfig,
) -> Vec<NBestList> {
    truths
        .iter()
        .filter(|truth| !truth.is_empty())
        .enumerate()
        .map(|(i, truth)| {
            let mut variants: Vec<Vec<String>> = vec![truth.clone()];
            let mut attempts = 0;
            while variants.len() < cfg.n_hyps && attempts < cfg.n_hyps * 50 {
                attempts += 1;
                let corrupted = corrupt(rng, truth, confusion_vocab, cfg);
                if !variants.contains(&corrupted) {
                    variants.push(corrupted);
                }
            }
            // One shared audio signal per utterance: the base score follows
            // the truth's length, and corrupted words cost acoustic fit.
            let base = -1.5 * truth.len() as f64;
            let mut hyps: Vec<Hypothesis> = variants
                .into_iter()
                .enumerate()
                .map(|(rank, words)| {
                    let noise = rng.gen_range(-cfg.acoustic_spread..cfg.acoustic_spread);
                    let advantage = if rank == 0 { cfg.truth_advantage } else { 0.0 };
                    let errors = crate::asr_eval::edit_distance(&words, truth)
                        .map(|s| s.errors() as f64)
                        .unwrap_or(0.0);
                    Hypothesis {
                        words,
                        acoustic_score: base + advantage + noise - cfg.edit_penalty * errors,
                        lm_score: None,
                    }
                })
                .collect();
            hyps.sort_by(|a, b| {
                b.acoustic_score
                    .partial_cmp(&a.acoustic_score)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            NBestList { utt_id: format!("utt-{i:04}"), reference: truth.clone(), hypotheses: hyps }
        })
        .collect()
}

fn corrupt<R: Rng>(
    rng: &mut R,
    truth: &[String],
    confusion_vocab: &[String],
    cfg: &NoisyChannelConfig,
) -> Vec<String> {
    let mut words = truth.to_vec();
    let n_edits = rng.gen_range(1..=cfg.max_edits.max(1));
    for _ in 0..n_edits {
        let pick = |rng: &mut R| confusion_vocab[rng.gen_range(0..confusion_vocab.len())].clone();
        // Editable span excludes the final word when it must be preserved.
        let editable = if cfg.preserve_final { words.len().saturating_sub(1) } else { words.len() };
        if cfg.substitution_only {
            if editable == 0 {
                break;
            }
            let pos = rng.gen_range(0..editable);
            words[pos] = pick(rng);
            continue;
        }
        let op = if words.is_empty() { 1 } else { rng.gen_range(0..3) };
        match op {
            0 if editable > 0 => {
                let pos = rng.gen_range(0..editable);
                words[pos] = pick(rng);
            }
            1 | 0 => {
                let pos = rng.gen_range(0..=editable);
                let w = pick(rng);
                words.insert(pos, w);
            }
            _ if editable > 0 && words.len() > 1 => {
                let pos = rng.gen_range(0..editable);
                words.remove(pos);
            }
            _ => {
                let pos = rng.gen_range(0..=editable);
                let w = pick(rng);
                words.insert(pos, w);
            }
        }
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vocab_is_deterministic_and_distinct() {
        let v = default_vocab(40);
        assert_eq!(v.len(), 40);
        let set: std::collections::BTreeSet<&String> = v.iter().collect();
        assert_eq!(set.len(), 40);
        assert_eq!(default_vocab(40), v);
    }

    #[test]
    fn random_fst_respects_path_budget() {
        let cfg = RandomFstConfig { max_paths: 200, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let fst = random_acyclic_fst(&mut rng, &cfg);
            let paths = count_paths(&fst).unwrap();
            assert!(paths >= 1.0 && paths <= 200.0, "paths {paths}");
            fst.forward_backward().unwrap();
        }
    }

    #[test]
    fn random_fst_deterministic_per_seed() {
        let cfg = RandomFstConfig::default();
        let a = random_acyclic_fst(&mut ChaCha8Rng::seed_from_u64(5), &cfg);
        let b = random_acyclic_fst(&mut ChaCha8Rng::seed_from_u64(5), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn random_grammar_compiles_and_stays_bounded() {
        let cfg = RandomGrammarConfig { max_paths: 500, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let generated = random_grammar(&mut rng, &cfg);
            let ast = crate::grammar::parse_grammar(&generated.grammar_text).unwrap();
            let options = crate::grammar::CompileOptions {
                mode: crate::grammar::NonTerminalMode::Inline,
                ..Default::default()
            };
            let fst =
                crate::grammar::compile(&ast, &generated.root, &generated.catalogs, &options)
                    .unwrap();
            let paths = count_paths(&fst).unwrap();
            assert!(paths >= 2.0 && paths <= 500.0, "paths {paths}");
        }
    }

    #[test]
    fn noisy_channel_keeps_truth_first_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truths = vec![
            vec!["ta".to_string(), "re".to_string()],
            vec!["mi".to_string(), "fo".to_string(), "la".to_string()],
        ];
        let vocab = default_vocab(10);
        let lists = noisy_channel_nbest(&mut rng, &truths, &vocab, &Default::default());
        assert_eq!(lists.len(), 2);
        for (nb, truth) in lists.iter().zip(&truths) {
            assert_eq!(&nb.reference, truth);
            assert_eq!(nb.hypotheses.len(), 5);
            assert!(nb.hypotheses.iter().any(|h| &h.words == truth));
            // Ranked by acoustic score.
            for pair in nb.hypotheses.windows(2) {
                assert!(pair[0].acoustic_score >= pair[1].acoustic_score);
            }
        }
    }
}
