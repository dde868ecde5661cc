use minilang::generator::{generate_detailed, to_jsonl, Family, GeneratorConfig, MIN_FAMILY_RATIO};
use minilang::lexer::{join, lex};
use minilang::{generate_corpus, interpret, parse, pretty_print, DEFAULT_STEP_LIMIT};
use std::collections::BTreeMap;

fn small(families: Vec<Family>, questions: usize, subs: usize) -> GeneratorConfig {
    GeneratorConfig {
        families,
        questions_per_family: questions,
        submissions_per_question: subs,
        ..GeneratorConfig::default()
    }
}

#[test]
fn single_f1_question() {
    let subs = generate_detailed(&small(vec![Family::F1], 1, 4)).unwrap();
    assert_eq!(subs.len(), 4);
    let slow: Vec<f64> = subs.iter().filter(|s| !s.fast).map(|s| s.record.runtime).collect();
    let fast: Vec<f64> = subs.iter().filter(|s| s.fast).map(|s| s.record.runtime).collect();
    assert!(!slow.is_empty() && !fast.is_empty());
    for f in &fast {
        for s in &slow {
            assert!(f < s);
        }
    }
}

#[test]
fn slow_fraction_split() {
    let cfg = GeneratorConfig {
        slow_fraction: 0.5,
        ..small(vec![Family::F2], 2, 30)
    };
    let subs = generate_detailed(&cfg).unwrap();
    for q in subs.chunks(30) {
        let slow = q.iter().filter(|s| !s.fast).count();
        assert!((10..=20).contains(&slow));
    }
    assert_eq!(cfg.slow_count(), 15);
}

#[test]
fn identical_seeds_identical_files() {
    let cfg = small(vec![Family::F1, Family::F3], 3, 6);
    let a = to_jsonl(&generate_corpus(&cfg).unwrap());
    let b = to_jsonl(&generate_corpus(&cfg).unwrap());
    assert_eq!(a, b);
    let other = GeneratorConfig { seed: 8, ..cfg };
    assert_ne!(a, to_jsonl(&generate_corpus(&other).unwrap()));
}

#[test]
fn invalid_configs_are_rejected() {
    let base = GeneratorConfig::default();
    for bad in [
        GeneratorConfig { families: vec![], ..base.clone() },
        GeneratorConfig { slow_fraction: 1.0, ..base.clone() },
        GeneratorConfig { submissions_per_question: 1, ..base.clone() },
        GeneratorConfig { array_size_range: (5, 3), ..base.clone() },
        GeneratorConfig { filler_stmt_range: (2, 1), ..base.clone() },
    ] {
        assert!(generate_corpus(&bad).is_err());
    }
}

/// The default configuration is the G1 corpus.
#[test]
fn g1_corpus_invariants() {
    let subs = generate_detailed(&GeneratorConfig::default()).unwrap();
    assert_eq!(subs.len(), 6 * 20 * 30);
    let mut by_question: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for s in &subs {
        by_question.entry(s.record.question_id.as_str()).or_default().push(s);
    }
    assert_eq!(by_question.len(), 120);
    for (qid, group) in &by_question {
        let family = Family::from_question_id(qid).unwrap();
        let mut slowest_fast = 0.0f64;
        let mut fastest_slow = f64::INFINITY;
        for s in group {
            assert_eq!(s.family, family);
            let program = parse(&s.record.source).unwrap();
            // runtime is exactly the interpreter's step count
            let r = interpret(&program, DEFAULT_STEP_LIMIT);
            assert!(r.ok());
            assert_eq!(r.steps as f64, s.record.runtime);
            assert_eq!(r.output, group[0].output);
            // source is already in canonical formatting and lexes stably
            assert_eq!(pretty_print(&program), s.record.source);
            let toks = lex(&s.record.source).unwrap();
            assert_eq!(lex(&join(&toks)).unwrap(), toks);
            assert!(toks.len() >= 8 && toks.len() <= 200);
            if s.fast {
                slowest_fast = slowest_fast.max(s.record.runtime);
            } else {
                fastest_slow = fastest_slow.min(s.record.runtime);
            }
        }
        assert!(fastest_slow >= MIN_FAMILY_RATIO * slowest_fast, "{qid}");
    }
}

#[test]
fn family_ids_parse() {
    assert_eq!(Family::from_question_id("F4-q010"), Some(Family::F4));
    assert_eq!(Family::from_question_id("external-7"), None);
    assert_eq!("f6".parse::<Family>().unwrap(), Family::F6);
    assert_eq!(Family::F2.to_string(), "F2");
}
