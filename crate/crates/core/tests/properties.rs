//! Property tests over randomized instances. Generators are seeded from
//! proptest-supplied integers so every failure reproduces from its seed.

use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng as _;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use grammarlm::asr_eval::{expected_wer_loss, oracle_wer, posterior, Scales};
use grammarlm::counts::{brute_force_counts, expected_counts, IntegerCounts, PruneConfig};
use grammarlm::lm::{train_katz, NGramModel, UnkPolicy};
use grammarlm::synth::{
    default_vocab, noisy_channel_nbest, random_acyclic_fst, NoisyChannelConfig, RandomFstConfig,
};
use grammarlm::wfst::{Label, WeightedFst};
use grammarlm::MixtureModel;

fn small_fst_config() -> RandomFstConfig {
    RandomFstConfig { max_layers: 5, max_width: 3, max_arcs_per_state: 3, vocab_size: 8, max_paths: 2_000 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_backward_z_matches_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fst = random_acyclic_fst(&mut rng, &small_fst_config());
        let tables = fst.forward_backward().unwrap();
        let paths = fst.enumerate_paths(5_000).unwrap();
        let z: f64 = paths.iter().map(|(_, w)| w).sum();
        prop_assert!((tables.z() - z).abs() / z < 1e-12);
        prop_assert!((tables.beta(fst.start().unwrap()) - z).abs() / z < 1e-12);
    }

    #[test]
    fn posterior_mass_through_states_is_sane(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fst = random_acyclic_fst(&mut rng, &small_fst_config()).trim().unwrap();
        let tables = fst.forward_backward().unwrap();
        for s in 0..fst.num_states() {
            let post = tables.posterior(s);
            prop_assert!((0.0..=1.0 + 1e-9).contains(&post), "posterior {post} at {s}");
        }
        // The full cut at the start state carries all the mass: outgoing arc
        // mass plus direct final mass equals Z.
        let start = fst.start().unwrap();
        let mut cut = fst.final_weight(start);
        for arc in fst.arcs(start) {
            cut += arc.weight * tables.beta(arc.next);
        }
        prop_assert!((cut - tables.z()).abs() / tables.z() < 1e-9);
    }

    #[test]
    fn expected_counts_match_brute_force(seed in any::<u64>(), order in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fst = random_acyclic_fst(&mut rng, &small_fst_config());
        let exact = expected_counts(&fst, order, true, &PruneConfig::off()).unwrap();
        let oracle = brute_force_counts(&fst, order, true, 10_000).unwrap();
        prop_assert_eq!(exact.len(), oracle.len());
        for (ngram, want) in oracle.iter() {
            let got = exact.get(ngram);
            prop_assert!((got - want).abs() < 1e-9, "{:?}: {} vs {}", ngram, got, want);
        }
    }

    #[test]
    fn final_weight_scaling_preserves_path_distribution(seed in any::<u64>(), scale in 0.1f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fst = random_acyclic_fst(&mut rng, &small_fst_config());
        let mut scaled = fst.clone();
        for s in 0..scaled.num_states() {
            let fw = scaled.final_weight(s);
            if fw > 0.0 {
                scaled.set_final(s, fw * scale);
            }
        }
        let paths = fst.enumerate_paths(5_000).unwrap();
        let scaled_paths = scaled.enumerate_paths(5_000).unwrap();
        let z: f64 = paths.iter().map(|(_, w)| w).sum();
        let sz: f64 = scaled_paths.iter().map(|(_, w)| w).sum();
        for ((w1, p1), (w2, p2)) in paths.iter().zip(&scaled_paths) {
            prop_assert_eq!(w1, w2);
            prop_assert!((p1 / z - p2 / sz).abs() < 1e-12);
        }
    }

    #[test]
    fn replace_preserves_total_mass(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let binding = random_acyclic_fst(&mut rng, &small_fst_config());
        let binding_z = binding.forward_backward().unwrap().z();
        // Root: word, non-terminal, word with random weights.
        let mut root = WeightedFst::new();
        let s0 = root.add_state();
        let s1 = root.add_state();
        let s2 = root.add_state();
        let s3 = root.add_state();
        root.set_start(s0);
        root.set_final(s3, 1.0);
        let w1: f64 = rng.gen_range(0.1..1.0);
        let w2: f64 = rng.gen_range(0.1..1.0);
        let w3: f64 = rng.gen_range(0.1..1.0);
        root.add_arc(s0, Label::word("pre"), w1, s1);
        root.add_arc(s1, Label::non_terminal("X"), w2, s2);
        root.add_arc(s2, Label::word("post"), w3, s3);
        let mut bindings = HashMap::new();
        bindings.insert("X".to_string(), binding);
        let expanded = root.replace(&bindings, 16).unwrap();
        let expanded_z = expanded.forward_backward().unwrap().z();
        let predicted = w1 * w2 * binding_z * w3;
        prop_assert!((expanded_z - predicted).abs() / predicted < 1e-9);
    }

    #[test]
    fn trained_models_normalize(seed in any::<u64>(), order in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fst = random_acyclic_fst(&mut rng, &small_fst_config());
        let counts = expected_counts(&fst, order.max(1), true, &PruneConfig::off()).unwrap();
        let (scaled, _) = grammarlm::counts::scale_counts(&counts, 50_000.0).unwrap();
        let policy = if seed % 2 == 0 { UnkPolicy::Closed } else { UnkPolicy::open() };
        let model = train_katz(&scaled, order, &vec![0; order], policy).unwrap();
        prop_assert!(model.max_normalization_error() < 1e-6);
    }

    #[test]
    fn arpa_round_trip_random_models(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fst = random_acyclic_fst(&mut rng, &small_fst_config());
        let counts = expected_counts(&fst, 2, true, &PruneConfig::off()).unwrap();
        let (scaled, _) = grammarlm::counts::scale_counts(&counts, 10_000.0).unwrap();
        let model = train_katz(&scaled, 2, &[0, 0], UnkPolicy::Closed).unwrap();
        let text = model.to_arpa().unwrap();
        let back = NGramModel::read_arpa(text.as_bytes()).unwrap();
        prop_assert_eq!(back.to_arpa().unwrap(), text);
    }

    #[test]
    fn counts_file_reload_is_lossless(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fst = random_acyclic_fst(&mut rng, &small_fst_config());
        let counts = expected_counts(&fst, 3, true, &PruneConfig::off()).unwrap();
        let text = counts.to_text().unwrap();
        let back = grammarlm::counts::ExpectedCounts::read(text.as_bytes()).unwrap();
        prop_assert_eq!(back.to_text().unwrap(), text);
    }

    #[test]
    fn mixture_distributions_normalize(seed in any::<u64>(), lambda_app in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let make_model = |rng: &mut ChaCha8Rng| {
            let fst = random_acyclic_fst(rng, &small_fst_config());
            let counts = expected_counts(&fst, 2, true, &PruneConfig::off()).unwrap();
            let (scaled, _) = grammarlm::counts::scale_counts(&counts, 5_000.0).unwrap();
            Arc::new(train_katz(&scaled, 2, &[0, 0], UnkPolicy::Closed).unwrap())
        };
        let a = make_model(&mut rng);
        let b = make_model(&mut rng);
        let mix = MixtureModel::two_component(a.clone(), b.clone(), lambda_app).unwrap();
        let mut vocab: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        vocab.extend(a.vocab().iter().map(String::as_str));
        vocab.extend(b.vocab().iter().map(String::as_str));
        for history in [vec![], vec!["ta"]] {
            let sum: f64 = vocab.iter().map(|w| mix.mix_prob(&history, w)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "sum {} at {:?}", sum, history);
        }
    }

    #[test]
    fn expected_wer_dominates_oracle_and_posteriors_normalize(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = default_vocab(12);
        let truths: Vec<Vec<String>> = (0..6)
            .map(|_| {
                let len = rng.gen_range(2..6);
                (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect()
            })
            .collect();
        let lists = noisy_channel_nbest(&mut rng, &truths, &vocab, &NoisyChannelConfig::default());
        let sentences: Vec<Vec<String>> = truths.clone();
        let counts = IntegerCounts::from_corpus(&sentences, 2, true);
        let model = Arc::new(train_katz(&counts, 2, &[0, 0], UnkPolicy::open()).unwrap());
        let mix = MixtureModel::single(model);
        let scales = Scales::default();
        for nb in &lists {
            let post = posterior(nb, &mix, &scales).unwrap();
            let sum: f64 = post.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(post.probs().iter().all(|&p| p >= 0.0));
        }
        let expected = expected_wer_loss(&lists, &mix, &scales).unwrap();
        let oracle = oracle_wer(&lists).unwrap();
        prop_assert!(expected >= oracle - 1e-12, "expected {} < oracle {}", expected, oracle);
        prop_assert!(expected >= 0.0);
    }
}

/// Plain full-matrix Levenshtein, written independently of the library's
/// backtraced version, for cross-checking error totals.
fn levenshtein_errors(hyp: &[String], reference: &[String]) -> usize {
    let (n, m) = (hyp.len(), reference.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    dp[n][m]
}

/// Expected WER recomputed from posteriors and the independent edit-distance
/// oracle matches the library's batch computation.
#[test]
fn expected_wer_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0E5);
    let vocab = default_vocab(10);
    let truths: Vec<Vec<String>> = (0..5)
        .map(|_| {
            let len = rng.gen_range(2..6);
            (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect()
        })
        .collect();
    let lists = noisy_channel_nbest(&mut rng, &truths, &vocab, &NoisyChannelConfig::default());
    let counts = IntegerCounts::from_corpus(&truths, 2, true);
    let model = Arc::new(train_katz(&counts, 2, &[0, 0], UnkPolicy::open()).unwrap());
    let mix = MixtureModel::single(model);
    let scales = Scales::default();

    let batch = expected_wer_loss(&lists, &mix, &scales).unwrap();
    let mut weighted_errors = 0.0;
    let mut ref_words = 0usize;
    for nb in &lists {
        let post = posterior(nb, &mix, &scales).unwrap();
        for (hyp, &p) in nb.hypotheses.iter().zip(post.probs()) {
            weighted_errors += p * levenshtein_errors(&hyp.words, &nb.reference) as f64;
        }
        ref_words += nb.reference.len();
    }
    let recomputed = weighted_errors / ref_words as f64;
    assert!(
        (batch - recomputed).abs() < 1e-12,
        "batch {batch} vs independent recomputation {recomputed}"
    );
}

/// Rescoring with a mixture of identical components leaves every combined
/// score shifted by the same constant, so the one-best choice cannot move.
#[test]
fn one_best_wer_invariant_under_common_lm_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0E6);
    let vocab = default_vocab(10);
    let truths: Vec<Vec<String>> = (0..6)
        .map(|_| {
            let len = rng.gen_range(2..5);
            (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect()
        })
        .collect();
    let lists = noisy_channel_nbest(&mut rng, &truths, &vocab, &NoisyChannelConfig::default());
    let counts = IntegerCounts::from_corpus(&truths, 2, true);
    let model = Arc::new(train_katz(&counts, 2, &[0, 0], UnkPolicy::open()).unwrap());
    let scales = Scales::default();
    let mut wers = Vec::new();
    for lambda_app in [0.0, 0.25, 0.5, 0.9, 1.0] {
        let mix = MixtureModel::two_component(model.clone(), model.clone(), lambda_app).unwrap();
        wers.push(grammarlm::asr_eval::one_best_wer(&lists, &mix, &scales).unwrap());
    }
    for w in &wers {
        assert_eq!(*w, wers[0], "one-best WER moved under identical components: {wers:?}");
    }
}

/// Exact-count models match or beat sampling at a thousand sentences on most
/// randomized grammars, judged on grammar-distributed test data.
#[test]
fn exact_counts_rival_thousand_samples() {
    let mut wins = 0;
    let trials = 20;
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF16_2000 + i);
        let cfg = grammarlm::synth::RandomGrammarConfig {
            max_paths: 2_000,
            ..Default::default()
        };
        let generated = grammarlm::synth::random_grammar(&mut rng, &cfg);
        let ast = grammarlm::grammar::parse_grammar(&generated.grammar_text).unwrap();
        let options = grammarlm::grammar::CompileOptions {
            mode: grammarlm::grammar::NonTerminalMode::Inline,
            ..Default::default()
        };
        let fst =
            grammarlm::grammar::compile(&ast, &generated.root, &generated.catalogs, &options)
                .unwrap();
        let order = 2;
        let counts = expected_counts(&fst, order, true, &PruneConfig::off()).unwrap();
        let (scaled, _) = grammarlm::counts::scale_counts(&counts, 1_000_000.0).unwrap();
        let exact = train_katz(&scaled, order, &[0, 0], UnkPolicy::Closed).unwrap();
        let sampled = grammarlm::lm::train_from_samples(
            &fst,
            1_000,
            0xAB + i,
            order,
            &[0, 0],
            UnkPolicy::open(),
        )
        .unwrap();
        let sampler = grammarlm::wfst::PathSampler::new(&fst).unwrap();
        let mut test_rng = ChaCha8Rng::seed_from_u64(0xCD + i);
        let test = grammarlm::EvalCorpus::new(
            (0..500).map(|_| sampler.sample(&mut test_rng).unwrap()).collect(),
        )
        .unwrap();
        let exact_ppl = grammarlm::lm::perplexity(&exact, &test).unwrap();
        let sampled_ppl = grammarlm::lm::perplexity(&sampled, &test).unwrap();
        if exact_ppl <= sampled_ppl * 1.02 {
            wins += 1;
        }
    }
    assert!(
        wins * 10 >= trials * 9,
        "exact counts beat 1e3 samples in only {wins}/{trials} trials"
    );
}

/// Sampling consistency: relative frequencies of sampled n-grams approach the
/// exact expected counts at binomial-noise scale.
#[test]
fn sampled_counts_converge_to_expected() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let fst = random_acyclic_fst(&mut rng, &small_fst_config());
    let exact = expected_counts(&fst, 2, true, &PruneConfig::off()).unwrap();
    let sampler = grammarlm::wfst::PathSampler::new(&fst).unwrap();
    let n = 100_000usize;
    let mut sentences = Vec::with_capacity(n);
    for _ in 0..n {
        sentences.push(sampler.sample(&mut rng).unwrap());
    }
    let sampled = IntegerCounts::from_corpus(&sentences, 2, true);
    for (ngram, want) in exact.iter() {
        let got = sampled.get(ngram) as f64 / n as f64;
        // Bernoulli-style bound: 3 sigma of sqrt(c/N), floored for tiny c.
        let tolerance = 3.0 * (want / n as f64).sqrt() + 3.0 / n as f64;
        assert!(
            (got - want).abs() <= tolerance.max(1e-3),
            "{ngram:?}: sampled {got} vs exact {want} (tol {tolerance})"
        );
    }
}
