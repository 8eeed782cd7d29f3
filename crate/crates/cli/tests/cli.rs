//! End-to-end tests of the `grammarlm` binary: exit-code contract,
//! idempotent outputs, and agreement between the file-based pipeline and
//! in-process composition.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use grammarlm::asr_eval::write_nbest;
use grammarlm::counts::IntegerCounts;
use grammarlm::lm::{perplexity, train_katz, UnkPolicy};
use grammarlm::synth::{noisy_channel_nbest, NoisyChannelConfig};
use grammarlm::{EvalCorpus, MixtureModel, NGramModel};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRAMMAR: &str = r#"
# cooking intent
i_want_to = (("[i]" ("[want]" | "[need]" | ("[would]" "[like]")) "[to]"));
action = ("[prepare]" | "[cook]" | "[bake]");
food_or_drink = (["food"] | DISH_NAME);
cook_dish = ( i_want_to action food_or_drink);
"#;

const CATALOG: &str = "pasta\npizza\t2.0\nchicken curry\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grammarlm"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "command failed: {}\n{}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!(
            "grammarlm-cli-{tag}-{}",
            std::process::id()
        ));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn write_fixture(dir: &Path) {
    fs::write(dir.join("cooking.grm"), GRAMMAR).unwrap();
    fs::write(dir.join("dish.cat"), CATALOG).unwrap();
}

#[test]
fn compile_produces_fst_and_is_idempotent() {
    let tmp = TempDir::new("compile");
    write_fixture(tmp.path());
    let args = [
        "compile",
        "--grammar",
        "cooking.grm",
        "--root",
        "cook_dish",
        "--catalog",
        "DISH_NAME=dish.cat",
        "--out",
        "cooking.fst",
    ];
    assert_ok(&run(&args, tmp.path()));
    let first = fs::read(tmp.path().join("cooking.fst")).unwrap();
    assert_ok(&run(&args, tmp.path()));
    let second = fs::read(tmp.path().join("cooking.fst")).unwrap();
    assert_eq!(first, second, "compile is not idempotent");
    assert!(!first.is_empty());
}

#[test]
fn parse_error_exits_2() {
    let tmp = TempDir::new("parse-err");
    fs::write(tmp.path().join("bad.grm"), "rule = (\"a\" |;").unwrap();
    let output = run(
        &["compile", "--grammar", "bad.grm", "--root", "rule", "--out", "x.fst"],
        tmp.path(),
    );
    assert_eq!(output.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn missing_catalog_exits_3_and_names_it() {
    let tmp = TempDir::new("missing-cat");
    write_fixture(tmp.path());
    let output = run(
        &["compile", "--grammar", "cooking.grm", "--root", "cook_dish", "--out", "x.fst"],
        tmp.path(),
    );
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("DISH_NAME"));
}

#[test]
fn keep_nonterminals_dump_has_nt_arcs() {
    let tmp = TempDir::new("keep-nt");
    write_fixture(tmp.path());
    assert_ok(&run(
        &[
            "compile",
            "--grammar",
            "cooking.grm",
            "--root",
            "cook_dish",
            "--keep-nonterminals",
            "--out",
            "kept.fst",
        ],
        tmp.path(),
    ));
    let dump = fs::read_to_string(tmp.path().join("kept.fst")).unwrap();
    assert!(dump.contains("@DISH_NAME"), "no non-terminal labels in dump");
}

#[test]
fn counts_of_single_path_fst_have_boundary_entries() {
    let tmp = TempDir::new("counts-single");
    fs::write(tmp.path().join("ab.grm"), "r = (\"a\" \"b\");\n").unwrap();
    assert_ok(&run(
        &["compile", "--grammar", "ab.grm", "--root", "r", "--out", "ab.fst"],
        tmp.path(),
    ));
    let counts_args =
        ["counts", "--fst", "ab.fst", "--order", "2", "--out", "ab.counts"];
    assert_ok(&run(&counts_args, tmp.path()));
    let counts = fs::read_to_string(tmp.path().join("ab.counts")).unwrap();
    let lines: Vec<&str> = counts.lines().collect();
    // <s>, a, b, </s>, <s> a, a b, b </s>
    assert_eq!(lines.len(), 7, "counts:\n{counts}");
    for entry in ["<s> a\t", "a b\t", "b </s>\t"] {
        assert!(counts.contains(entry), "missing {entry:?} in:\n{counts}");
    }
    // Byte-identical on a second run.
    assert_ok(&run(&counts_args, tmp.path()));
    assert_eq!(fs::read_to_string(tmp.path().join("ab.counts")).unwrap(), counts);
}

#[test]
fn sampled_training_is_deterministic() {
    let tmp = TempDir::new("train-sample");
    write_fixture(tmp.path());
    assert_ok(&run(
        &[
            "compile",
            "--grammar",
            "cooking.grm",
            "--root",
            "cook_dish",
            "--catalog",
            "DISH_NAME=dish.cat",
            "--out",
            "cooking.fst",
        ],
        tmp.path(),
    ));
    let train = |out: &str| {
        assert_ok(&run(
            &[
                "train", "--fst", "cooking.fst", "--sample", "1000", "--seed", "7", "--order",
                "2", "--out", out,
            ],
            tmp.path(),
        ));
    };
    train("a.arpa");
    train("b.arpa");
    let a = fs::read(tmp.path().join("a.arpa")).unwrap();
    let b = fs::read(tmp.path().join("b.arpa")).unwrap();
    assert_eq!(a, b, "sampled training is not deterministic");
}

#[test]
fn exact_and_sampled_models_agree_on_fixture() {
    let tmp = TempDir::new("exact-vs-sampled");
    write_fixture(tmp.path());
    assert_ok(&run(
        &[
            "compile",
            "--grammar",
            "cooking.grm",
            "--root",
            "cook_dish",
            "--catalog",
            "DISH_NAME=dish.cat",
            "--out",
            "cooking.fst",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &["train", "--fst", "cooking.fst", "--order", "3", "--out", "exact.arpa"],
        tmp.path(),
    ));
    assert_ok(&run(
        &[
            "train",
            "--fst",
            "cooking.fst",
            "--sample",
            "100000",
            "--seed",
            "11",
            "--order",
            "3",
            "--out",
            "sampled.arpa",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &["sample", "--fst", "cooking.fst", "-n", "2000", "--seed", "23", "--out", "test.txt"],
        tmp.path(),
    ));
    let ppl = |model: &str| -> f64 {
        let output = run(
            &["evaluate", "--model", model, "--corpus", "test.txt"],
            tmp.path(),
        );
        assert_ok(&output);
        let stdout = String::from_utf8(output.stdout).unwrap();
        stdout
            .lines()
            .find_map(|l| l.strip_prefix("perplexity\t"))
            .expect("perplexity line")
            .parse()
            .unwrap()
    };
    let exact = ppl("exact.arpa");
    let sampled = ppl("sampled.arpa");
    let gap = (sampled - exact).abs() / exact;
    assert!(gap < 0.02, "exact {exact} vs sampled {sampled}: gap {gap}");
}

#[test]
fn pipeline_matches_in_process_composition() {
    let tmp = TempDir::new("pipeline");
    write_fixture(tmp.path());
    assert_ok(&run(
        &[
            "compile",
            "--grammar",
            "cooking.grm",
            "--root",
            "cook_dish",
            "--catalog",
            "DISH_NAME=dish.cat",
            "--out",
            "cooking.fst",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &["counts", "--fst", "cooking.fst", "--order", "3", "--prune", "0", "--out", "c.txt"],
        tmp.path(),
    ));
    assert_ok(&run(
        &["train", "--counts", "c.txt", "--order", "3", "--out", "cli.arpa"],
        tmp.path(),
    ));
    assert_ok(&run(
        &["sample", "--fst", "cooking.fst", "-n", "500", "--seed", "3", "--out", "eval.txt"],
        tmp.path(),
    ));
    let output = run(&["evaluate", "--model", "cli.arpa", "--corpus", "eval.txt"], tmp.path());
    assert_ok(&output);
    let stdout = String::from_utf8(output.stdout).unwrap();
    let cli_ppl: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("perplexity\t"))
        .unwrap()
        .parse()
        .unwrap();

    // Same computation in one process.
    let ast = grammarlm::grammar::parse_grammar(GRAMMAR).unwrap();
    let mut catalogs = std::collections::HashMap::new();
    catalogs.insert(
        "DISH_NAME".to_string(),
        grammarlm::grammar::Catalog::read("DISH_NAME", CATALOG.as_bytes()).unwrap(),
    );
    let options = grammarlm::grammar::CompileOptions {
        mode: grammarlm::grammar::NonTerminalMode::Inline,
        ..Default::default()
    };
    let fst = grammarlm::grammar::compile(&ast, "cook_dish", &catalogs, &options).unwrap();
    let counts = grammarlm::counts::expected_counts(
        &fst,
        3,
        true,
        &grammarlm::counts::PruneConfig::off(),
    )
    .unwrap();
    let (scaled, _) = grammarlm::counts::scale_counts(&counts, 1e6).unwrap();
    let model = train_katz(&scaled, 3, &[0, 0, 0], UnkPolicy::Closed).unwrap();
    let corpus = EvalCorpus::read(
        std::io::BufReader::new(fs::File::open(tmp.path().join("eval.txt")).unwrap()),
    )
    .unwrap();
    let in_process = perplexity(&model, &corpus).unwrap();
    assert!(
        (cli_ppl - in_process).abs() < 1e-9 * in_process.max(1.0),
        "pipeline {cli_ppl} vs in-process {in_process}"
    );
}

// ---------------------------------------------------------------------------
// optimize / report
// ---------------------------------------------------------------------------

fn tiny_model(sentences: &[&str], unk: UnkPolicy) -> NGramModel {
    let parsed: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
    let counts = IntegerCounts::from_corpus(&parsed, 2, true);
    train_katz(&counts, 2, &[0, 0], unk).unwrap()
}

fn write_optimize_fixture(dir: &Path) {
    let baseline = tiny_model(
        &[
            "play music",
            "stop music",
            "play the song",
            "stop the song",
            "what time is it",
            "turn it up",
            "turn it off",
            "play it again",
        ],
        UnkPolicy::open(),
    );
    let app = tiny_model(&["cook pasta", "bake bread", "cook rice", "bake pie"], UnkPolicy::Closed);
    fs::write(dir.join("baseline.arpa"), baseline.to_arpa().unwrap()).unwrap();
    fs::write(dir.join("app.arpa"), app.to_arpa().unwrap()).unwrap();
    fs::write(dir.join("app.txt"), "cook pasta\nbake pie\ncook rice\n").unwrap();
    fs::write(dir.join("past.txt"), "play music\nstop the song\nturn it up\n").unwrap();

    // Scripted n-best lists over the past data.
    let truths: Vec<Vec<String>> = ["play music", "stop the song", "turn it off"]
        .iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
    let vocab: Vec<String> = baseline
        .vocab()
        .iter()
        .filter(|w| !w.starts_with('<'))
        .cloned()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let lists = noisy_channel_nbest(
        &mut rng,
        &truths,
        &vocab,
        &NoisyChannelConfig {
            substitution_only: true,
            preserve_final: true,
            ..Default::default()
        },
    );
    let mut nbest_buf = Vec::new();
    let mut refs_buf = Vec::new();
    write_nbest(&lists, &mut nbest_buf, &mut refs_buf).unwrap();
    fs::write(dir.join("past.nbest"), nbest_buf).unwrap();
    fs::write(dir.join("past.refs"), refs_buf).unwrap();
}

const RUNSPEC: &str = r#"
[baseline]
model = "baseline.arpa"

[[apps]]
name = "cooking"
model = "app.arpa"
loss = "perplexity"
corpus = "app.txt"

[constraint]
kind = "perplexity"
corpus = "past.txt"

[output]
solution = "solution.json"
report = "report.txt"
"#;

#[test]
fn optimize_writes_solution_and_report() {
    let tmp = TempDir::new("optimize");
    write_optimize_fixture(tmp.path());
    fs::write(tmp.path().join("run.toml"), RUNSPEC).unwrap();
    let output = run(&["optimize", "--runspec", "run.toml"], tmp.path());
    assert_ok(&output);
    let report = fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("cooking"), "report:\n{report}");
    assert!(report.contains("weights:"));
    // Regenerating from the stored solution is byte-identical.
    let regen = run(&["report", "--solution", "solution.json"], tmp.path());
    assert_ok(&regen);
    assert_eq!(String::from_utf8(regen.stdout).unwrap(), report);
}

#[test]
fn optimize_is_deterministic() {
    let tmp = TempDir::new("optimize-det");
    write_optimize_fixture(tmp.path());
    fs::write(tmp.path().join("run.toml"), RUNSPEC).unwrap();
    assert_ok(&run(&["optimize", "--runspec", "run.toml"], tmp.path()));
    let first = fs::read(tmp.path().join("solution.json")).unwrap();
    assert_ok(&run(&["optimize", "--runspec", "run.toml"], tmp.path()));
    let second = fs::read(tmp.path().join("solution.json")).unwrap();
    assert_eq!(first, second, "optimize is not deterministic");
}

#[test]
fn infeasible_solution_exits_5_unless_allowed() {
    let tmp = TempDir::new("infeasible");
    write_optimize_fixture(tmp.path());
    // A feather-weight penalty lets the solver run the weight up and violate
    // the past-data bound.
    let spec = r#"
[baseline]
model = "baseline.arpa"

[[apps]]
name = "cooking"
model = "app.arpa"
loss = "neg-squared"

[constraint]
kind = "perplexity"
corpus = "past.txt"
sigma = 1e-9

[output]
solution = "solution.json"
report = "report.txt"
"#;
    fs::write(tmp.path().join("run.toml"), spec).unwrap();
    let output = run(&["optimize", "--runspec", "run.toml"], tmp.path());
    assert_eq!(
        output.status.code(),
        Some(5),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let output = run(
        &["optimize", "--runspec", "run.toml", "--allow-infeasible"],
        tmp.path(),
    );
    assert_ok(&output);
}

#[test]
fn evaluate_mixture_spec_normalizes_weights() {
    let tmp = TempDir::new("mixture");
    write_optimize_fixture(tmp.path());
    fs::write(tmp.path().join("mix.tsv"), "baseline.arpa\t1.0\napp.arpa\t1.0\n").unwrap();
    let output = run(
        &["evaluate", "--mixture", "mix.tsv", "--corpus", "app.txt"],
        tmp.path(),
    );
    assert_ok(&output);
    let stdout = String::from_utf8(output.stdout).unwrap();
    let cli_ppl: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("perplexity\t"))
        .unwrap()
        .parse()
        .unwrap();
    // In-process equivalent at equal weights.
    let baseline = Arc::new(tiny_model(
        &[
            "play music",
            "stop music",
            "play the song",
            "stop the song",
            "what time is it",
            "turn it up",
            "turn it off",
            "play it again",
        ],
        UnkPolicy::open(),
    ));
    let app = Arc::new(tiny_model(
        &["cook pasta", "bake bread", "cook rice", "bake pie"],
        UnkPolicy::Closed,
    ));
    let mixture = MixtureModel::new(vec![baseline, app], vec![0.5, 0.5]).unwrap();
    let corpus = EvalCorpus::new(
        ["cook pasta", "bake pie", "cook rice"]
            .iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect(),
    )
    .unwrap();
    let expected = perplexity(&mixture, &corpus).unwrap();
    assert!((cli_ppl - expected).abs() < 1e-6, "cli {cli_ppl} vs {expected}");
}

#[test]
fn evaluate_reports_wer_metrics() {
    let tmp = TempDir::new("wer");
    write_optimize_fixture(tmp.path());
    let output = run(
        &[
            "evaluate",
            "--model",
            "baseline.arpa",
            "--nbest",
            "past.nbest",
            "--refs",
            "past.refs",
        ],
        tmp.path(),
    );
    assert_ok(&output);
    let stdout = String::from_utf8(output.stdout).unwrap();
    for metric in ["expected_wer\t", "one_best_wer\t", "oracle_wer\t"] {
        assert!(stdout.contains(metric), "missing {metric} in:\n{stdout}");
    }
    let get = |name: &str| -> f64 {
        stdout
            .lines()
            .find_map(|l| l.strip_prefix(name))
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!(get("expected_wer\t") >= get("oracle_wer\t") - 1e-12);
}

#[test]
fn numeric_failure_exits_4() {
    let tmp = TempDir::new("numeric");
    // Divergent FST: self-loop of weight 1.
    fs::write(tmp.path().join("div.fst"), "0 0 x 1\n0 1 out 0.5\n1 1\n").unwrap();
    let output = run(
        &["counts", "--fst", "div.fst", "--order", "2", "--out", "c.txt"],
        tmp.path(),
    );
    assert_eq!(
        output.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}
