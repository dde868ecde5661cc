use std::collections::{HashMap, HashSet};
use std::io::Cursor;
use std::sync::OnceLock;

use editvq::corpus::{
    canonicalize, check_program, decanonicalize, ingest_jsonl, ingest_reader, percentile,
    program_from_record, stats, texts, tokens_from_texts, Histogram, Program, Vocab, SPECIALS, UNK,
};
use minilang::generator::{generate_corpus, to_jsonl, CorpusRecord, GeneratorConfig};
use minilang::lexer::{is_builtin, lex, TokenClass};
use proptest::prelude::*;

fn g1() -> &'static [CorpusRecord] {
    static CORPUS: OnceLock<Vec<CorpusRecord>> = OnceLock::new();
    CORPUS.get_or_init(|| generate_corpus(&GeneratorConfig::default()).unwrap())
}

fn canon(src: &str) -> Vec<String> {
    texts(&canonicalize(&lex(src).unwrap()).0)
}

fn record(qid: &str, sid: &str, src: &str, runtime: f64, correct: bool) -> String {
    serde_json::to_string(&CorpusRecord {
        question_id: qid.into(),
        solution_id: sid.into(),
        source: src.into(),
        runtime,
        correct,
    })
    .unwrap()
}

#[test]
fn canonical_forms_of_small_programs() {
    assert_eq!(
        canon("let total = 0; for i in range(n) { total = total + i; } return total;").join(" "),
        "let VAR_0 = 0 ; for VAR_1 in range ( VAR_2 ) { VAR_0 = VAR_0 + VAR_1 ; } return VAR_0 ;"
    );
    let (toks, map) = canonicalize(&lex("def helper(a) { return len(a); } print(helper(xs), \"hi\");").unwrap());
    let t = texts(&toks);
    assert_eq!(t[1], "FUNC_0");
    assert!(t.contains(&"len".to_string()));
    assert!(t.contains(&"print".to_string()));
    assert!(!t.iter().any(|s| s == "helper" || s == "xs"));
    assert_eq!(map["FUNC_0"], "helper");
    assert_eq!(map["VAR_0"], "a");
    assert_eq!(map["VAR_1"], "xs");
    assert_eq!(map["STR_0"], "\"hi\"");
    // Numbers are kept verbatim.
    assert!(canon("let x = 42;").contains(&"42".to_string()));
}

#[test]
fn decanonicalize_invents_names_that_do_not_collide() {
    let (toks, mut map) = canonicalize(&lex("let v0 = 1; let y = v0 + 2;").unwrap());
    map.remove("VAR_1");
    let mut with_new = toks.clone();
    with_new.extend(lex("let VAR_7 = VAR_1;").unwrap());
    let out = texts(&decanonicalize(&with_new, &map));
    let joined = out.join(" ");
    assert!(joined.starts_with("let v0 = 1 ; let v1 = v0 + 2 ;"), "{joined}");
    assert!(joined.ends_with("let v2 = v1 ;"), "{joined}");
}

#[test]
fn vocab_encodes_with_specials_first() {
    let p = Program {
        question_id: "q".into(),
        solution_id: "s".into(),
        tokens: vec!["let".into(), "VAR_0".into(), "=".into(), "1".into(), ";".into()],
        runtime: 1.0,
        correct: true,
        canon_map: Default::default(),
    };
    let v = Vocab::build([&p]);
    assert_eq!(&v.tokens()[..5], SPECIALS.map(String::from).as_slice());
    assert_eq!(v.len(), 10);
    let ids = v.encode(&p.tokens);
    assert_eq!(v.decode(&ids), p.tokens);
    assert_eq!(v.id("while"), UNK);
    let json = serde_json::to_string(&v).unwrap();
    let back: Vocab = serde_json::from_str(&json).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.id("VAR_0"), v.id("VAR_0"));
    assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
    let mut dup: Vec<String> = SPECIALS.map(String::from).to_vec();
    dup.extend(["x".to_string(), "x".to_string()]);
    assert!(Vocab::from_tokens(dup).is_err());
}

#[test]
fn ingest_filters_and_reports() {
    let lines = [
        record("q1", "a", "let x = 1; return x;", 5.0, true),
        record("q1", "b", "let x = 2; return x;", 7.0, false),
        record("q1", "c", "let y = 1; return y;", 4.0, true),
        record("q1", "d", "return 1;", -1.0, true),
        record("q1", "e", "let $ = 1;", 1.0, true),
    ];
    let (programs, summary) = ingest_reader(Cursor::new(lines.join("\n"))).unwrap();
    assert_eq!(programs.len(), 2);
    assert_eq!(summary.records, 5);
    assert_eq!(summary.kept, 2);
    assert_eq!(summary.dropped_incorrect, 1);
    assert_eq!(summary.rejected_negative_runtime, 1);
    assert_eq!(summary.rejected_unlexable, 1);
    assert_eq!(programs[0].tokens, programs[1].tokens);

    let bad = format!("{}\n{{not json\n", lines[0]);
    let err = ingest_reader(Cursor::new(bad)).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn nearest_rank_percentiles() {
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
    assert_eq!(percentile(&xs, 0.5), 6.0);
    assert_eq!(percentile(&xs, 0.9), 10.0);
    assert_eq!(percentile(&xs, 0.0), 1.0);
    assert_eq!(percentile(&[3.0], 0.9), 3.0);
    assert_eq!(percentile(&[1.0, 2.0, 3.0], 0.5), 2.0);
}

#[test]
fn histogram_counts_everything() {
    let h = Histogram::new(&[0.0, 1.0, 2.0, 3.0, 4.0], 4);
    assert_eq!(h.counts, vec![1, 1, 1, 2]);
    assert_eq!(h.edges.len(), 5);
    assert_eq!(h.total(), 5);
    let flat = Histogram::new(&[2.0, 2.0], 3);
    assert_eq!(flat.total(), 2);
    assert!(!h.render(20).is_empty());
}

#[test]
fn stats_of_a_tiny_corpus() {
    let lines = [
        record("q1", "a", "return 1;", 10.0, true),
        record("q1", "b", "return 2;", 20.0, true),
        record("q2", "c", "return 3;", 30.0, true),
        record("q2", "d", "return 4;", 60.0, true),
    ];
    let (programs, _) = ingest_reader(Cursor::new(lines.join("\n"))).unwrap();
    let s = stats(&programs, 4).unwrap();
    assert_eq!(s.programs, 4);
    assert_eq!(s.questions, 2);
    assert_eq!(s.median_runtime, 30.0);
    assert_eq!(s.p90_runtime, 60.0);
    assert_eq!(s.p90_over_median, 2.0);
    assert_eq!(s.relative_runtime_histogram.total(), 4);
    assert_eq!(*s.relative_runtime_histogram.edges.last().unwrap(), 2.0);
    assert!(stats(&[], 4).is_err());
}

#[test]
fn g1_corpus_is_canonical_and_spread_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g1.jsonl");
    std::fs::write(&path, to_jsonl(g1())).unwrap();
    let (programs, summary) = ingest_jsonl(&path).unwrap();
    assert_eq!(summary.kept, g1().len());
    for p in &programs {
        check_program(p).unwrap();
    }
    let s = stats(&programs, 10).unwrap();
    assert!(s.p90_over_median >= 1.5, "p90/median {}", s.p90_over_median);
    let back: Vec<CorpusRecord> = to_jsonl(g1())
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(back, g1());
}

#[test]
fn missing_corpus_file_is_an_io_error() {
    let err = ingest_jsonl(std::path::Path::new("/nonexistent/corpus.jsonl")).unwrap_err();
    assert!(matches!(err, editvq::Error::Io(_)));
}

/// Renames every non-builtin identifier with a seeded bijection.
fn rename(src: &str, seed: u64) -> String {
    let toks = lex(src).unwrap();
    let mut names: Vec<&str> = Vec::new();
    for t in &toks {
        if t.klass == TokenClass::Identifier && !is_builtin(&t.text) && !names.contains(&t.text.as_str()) {
            names.push(&t.text);
        }
    }
    let fresh: HashMap<&str, String> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (*n, format!("id{}_{}", (i as u64 * 7919 + seed) % 10007, i)))
        .collect();
    toks.iter()
        .map(|t| fresh.get(t.text.as_str()).cloned().unwrap_or_else(|| t.text.clone()))
        .collect::<Vec<_>>()
        .join(" ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonicalization_is_idempotent(i in 0usize..3600) {
        let p = program_from_record(&g1()[i]).unwrap();
        let again = tokens_from_texts(&p.tokens).unwrap();
        let (twice, map) = canonicalize(&again);
        prop_assert_eq!(texts(&twice), p.tokens.clone());
        prop_assert!(map.iter().all(|(k, v)| k == v || k.starts_with("STR_")));
    }

    #[test]
    fn canonical_form_ignores_names(i in 0usize..3600, seed in any::<u64>()) {
        let src = &g1()[i].source;
        prop_assert_eq!(canon(src), canon(&rename(src, seed % 10007)));
    }

    #[test]
    fn decanonicalize_inverts_canonicalize(i in 0usize..3600) {
        let toks = lex(&g1()[i].source).unwrap();
        let (c, map) = canonicalize(&toks);
        prop_assert_eq!(decanonicalize(&c, &map), toks);
    }

    #[test]
    fn vocab_round_trips_corpus_programs(i in 0usize..3600) {
        let p = program_from_record(&g1()[i]).unwrap();
        let v = Vocab::build([&p]);
        prop_assert_eq!(v.decode(&v.encode(&p.tokens)), p.tokens);
    }

    #[test]
    fn invented_names_lex_and_stay_distinct(extra in proptest::collection::vec(0usize..6, 1..6), i in 0usize..3600) {
        let (mut c, map) = canonicalize(&lex(&g1()[i].source).unwrap());
        for e in &extra {
            c.push(minilang::lexer::Token::new(format!("VAR_{}", 50 + e), TokenClass::Identifier));
        }
        let out = decanonicalize(&c, &map);
        let relexed = lex(&texts(&out).join(" ")).unwrap();
        prop_assert_eq!(&relexed, &out);
        let originals: HashSet<&String> = map.values().collect();
        let invented: HashSet<String> = out[out.len() - extra.len()..].iter().map(|t| t.text.clone()).collect();
        let distinct: HashSet<usize> = extra.iter().copied().collect();
        prop_assert_eq!(invented.len(), distinct.len());
        prop_assert!(invented.iter().all(|n| !originals.contains(n)));
    }
}
