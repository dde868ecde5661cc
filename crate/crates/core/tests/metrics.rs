use std::sync::OnceLock;

use editvq::corpus::{canonicalize, program_from_record, texts, Program};
use editvq::metrics::{
    bleu, build_reference_set, delta_bleu, score_correctness, score_diversity, score_efficiency_hard,
    score_efficiency_soft, NeighborhoodRule, ReferenceSet,
};
use minilang::generator::{generate_corpus, CorpusRecord, GeneratorConfig};
use minilang::lexer::lex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn g1() -> &'static (Vec<CorpusRecord>, Vec<Program>) {
    static DATA: OnceLock<(Vec<CorpusRecord>, Vec<Program>)> = OnceLock::new();
    DATA.get_or_init(|| {
        let records = generate_corpus(&GeneratorConfig::default()).unwrap();
        let programs = records.iter().map(|r| program_from_record(r).unwrap()).collect();
        (records, programs)
    })
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn prog(sid: &str, tokens: &str, runtime: f64) -> Program {
    Program {
        question_id: "q".into(),
        solution_id: sid.into(),
        tokens: toks(tokens),
        runtime,
        correct: true,
        canon_map: Default::default(),
    }
}

/// Every n-gram of `seq` as an owned list, duplicates kept.
fn grams(seq: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= seq.len() {
        out.push(seq[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Per-order (numerator, denominator) with clipping by the best reference
/// and optional per-reference weights.
fn oracle_counts(cand: &[String], refs: &[Vec<String>], weights: &[f64], max_n: usize) -> Vec<(f64, f64)> {
    (1..=max_n)
        .map(|n| {
            let cg = grams(cand, n);
            let mut seen: Vec<Vec<String>> = Vec::new();
            let mut num = 0.0;
            for g in &cg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                let c = count(&cg, g);
                let mut best = 0.0f64;
                for (r, w) in refs.iter().zip(weights) {
                    let rc = count(&grams(r, n), g);
                    if rc > 0 {
                        best = best.max(w * c.min(rc) as f64);
                    }
                }
                num += best;
            }
            (num, cg.len() as f64)
        })
        .collect()
}

fn oracle_score(cand: &[String], refs: &[Vec<String>], weights: &[f64], max_n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let counts = oracle_counts(cand, refs, weights, max_n);
    if counts[0].0 == 0.0 {
        return 0.0;
    }
    let mut logs = 0.0;
    for (n, &(num, den)) in counts.iter().enumerate() {
        let (num, den) = if n == 0 {
            (num, den)
        } else {
            (if num == 0.0 { 1.0 } else { num }, if den == 0.0 { 1.0 } else { den })
        };
        logs += (num / den).ln();
    }
    let c = cand.len() as i64;
    let mut lens: Vec<i64> = refs.iter().map(|r| r.len() as i64).collect();
    lens.sort_by_key(|&l| ((l - c).abs(), l));
    let r = lens[0];
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logs / max_n as f64).exp()
}

fn random_seq(rng: &mut ChaCha8Rng, len_lo: usize, len_hi: usize) -> Vec<String> {
    let alphabet = ["a", "b", "c", "d", "e"];
    let n = rng.gen_range(len_lo..=len_hi);
    (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect()
}

fn refs_of(r: &[Vec<String>]) -> Vec<&[String]> {
    r.iter().map(|v| v.as_slice()).collect()
}

#[test]
fn bleu_agrees_with_brute_force_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let cand = random_seq(&mut rng, 1, 14);
        let refs: Vec<Vec<String>> = (0..rng.gen_range(1..=4)).map(|_| random_seq(&mut rng, 1, 14)).collect();
        let ones = vec![1.0; refs.len()];
        let expected = oracle_score(&cand, &refs, &ones, 4);
        let got = bleu(&cand, &refs_of(&refs), 4);
        assert!((got - expected).abs() < 1e-9, "case {case}: {got} vs {expected}");
        let unit = delta_bleu(&cand, &refs_of(&refs), &ones, 4).unwrap();
        assert!((unit - got).abs() < 1e-9, "case {case}: delta {unit} vs {got}");
    }
}

#[test]
fn delta_bleu_agrees_with_brute_force_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..50 {
        let cand = random_seq(&mut rng, 1, 14);
        let refs: Vec<Vec<String>> = (0..rng.gen_range(1..=4)).map(|_| random_seq(&mut rng, 1, 14)).collect();
        let w: Vec<f64> = refs.iter().map(|_| rng.gen_range(0.05..=1.0)).collect();
        let expected = oracle_score(&cand, &refs, &w, 4);
        let got = delta_bleu(&cand, &refs_of(&refs), &w, 4).unwrap();
        assert!((got - expected).abs() < 1e-9, "case {case}: {got} vs {expected}");
    }
}

#[test]
fn equal_weights_scale_bleu() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 30 {
        let refs: Vec<Vec<String>> = (0..3).map(|_| random_seq(&mut rng, 6, 12)).collect();
        let mut cand = refs[rng.gen_range(0..3)].clone();
        let i = rng.gen_range(0..cand.len());
        cand[i] = "z".into();
        let ones = vec![1.0; 3];
        if oracle_counts(&cand, &refs, &ones, 4).iter().any(|&(n, _)| n == 0.0) {
            continue;
        }
        let w = rng.gen_range(0.1..1.0);
        let scaled = delta_bleu(&cand, &refs_of(&refs), &[w; 3], 4).unwrap();
        let plain = bleu(&cand, &refs_of(&refs), 4);
        assert!((scaled - w * plain).abs() < 1e-9);
        checked += 1;
    }
}

#[test]
fn bleu_edge_cases() {
    let r = toks("a b c d e");
    assert_eq!(bleu(&r, &[r.as_slice()], 4), 1.0);
    assert_eq!(bleu(&toks("x y z"), &[r.as_slice()], 4), 0.0);
    assert_eq!(bleu(&Vec::<String>::new(), &[r.as_slice()], 4), 0.0);
    assert_eq!(delta_bleu(&r, &[r.as_slice()], &[0.5], 4).unwrap(), 0.5);
    assert!(delta_bleu(&r, &[r.as_slice()], &[0.0], 4).is_err());
    assert!(delta_bleu(&r, &[r.as_slice()], &[1.5], 4).is_err());
    assert!(delta_bleu(&r, &[r.as_slice()], &[1.0, 1.0], 4).is_err());
    // Short candidate: brevity penalty exp(1 - 5/4).
    let c = toks("a b c d");
    assert!((bleu(&c, &[r.as_slice()], 4) - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-15);
}

fn fixture() -> Vec<Program> {
    vec![
        prog("x", "a b c d e f g h i j", 400.0),
        prog("fast", "a b c d e f g h i k", 100.0),
        prog("mid", "a b c d e f g h i l", 200.0),
        prog("slower", "a b c d e f g h i m", 800.0),
        prog("far", "z y x w v u t s r q", 50.0),
    ]
}

fn refset<'a>(corpus: &'a [Program], t: f64) -> ReferenceSet<'a> {
    build_reference_set(corpus, &corpus[0], t, NeighborhoodRule::Distance)
}

#[test]
fn reference_sets() {
    let corpus = fixture();
    let ids = |r: &ReferenceSet| r.members.iter().map(|p| p.solution_id.clone()).collect::<Vec<_>>();
    // ROUGE-8 between x and fast/mid is 2/3, distance 1/3.
    assert_eq!(ids(&refset(&corpus, 0.6)), vec!["fast", "mid"]);
    assert!(refset(&corpus, 0.3).members.is_empty());
    assert_eq!(ids(&refset(&corpus, 1.0 + 1e-9)), vec!["fast", "mid", "far"]);
    let fastest = build_reference_set(&corpus, &corpus[4], 2.0, NeighborhoodRule::Distance);
    assert!(fastest.members.is_empty());
    let literal = build_reference_set(&corpus, &corpus[0], 0.6, NeighborhoodRule::Similarity);
    assert_eq!(ids(&literal), vec!["far"]);
    assert_eq!(refset(&corpus, 0.6).weights(), vec![1.0, 0.5]);
}

#[test]
fn score_unit_cases() {
    let corpus = fixture();
    let r = refset(&corpus, 0.6);
    let fast = &corpus[1].tokens;
    let mid = &corpus[2].tokens;
    assert_eq!(score_efficiency_hard(fast, &r), 1.0);
    assert_eq!(score_correctness(fast, &r, 4), 1.0);
    assert_eq!(score_efficiency_soft(fast, &r, 4), 1.0);
    assert_eq!(score_efficiency_hard(mid, &r), 0.5);
    assert_eq!(score_correctness(mid, &r, 4), 1.0);
    assert_eq!(score_efficiency_hard(&corpus[0].tokens, &r), 0.0);
    assert_eq!(score_diversity(&[fast.clone(), mid.clone()], &r, 4), 1.0);
    assert!(score_diversity(&[fast.clone()], &r, 4) < 1.0);
    assert_eq!(score_diversity(&[], &r, 4), 0.0);
}

#[test]
fn g1_reference_sets_are_sound_and_copies_score_zero() {
    let (records, programs) = g1();
    for (i, x) in programs.iter().enumerate().step_by(37) {
        let r = build_reference_set(programs, x, 0.6, NeighborhoodRule::Distance);
        let base = minilang::run_source(&records[i].source).unwrap().steps;
        for m in &r.members {
            assert_eq!(m.question_id, x.question_id);
            assert_ne!(m.solution_id, x.solution_id);
            let j = programs.iter().position(|p| p.solution_id == m.solution_id).unwrap();
            assert!(minilang::run_source(&records[j].source).unwrap().steps < base);
        }
        if !r.members.is_empty() {
            assert_eq!(score_efficiency_hard(&x.tokens, &r), 0.0);
        }
    }
}

fn seq() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..16)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn scores_lie_in_the_unit_interval(
        x in seq(),
        members in proptest::collection::vec((seq(), 1u32..100), 1..5),
        samples in proptest::collection::vec(seq(), 1..5),
    ) {
        let mut corpus = vec![Program { tokens: x, runtime: 1000.0, ..prog("x", "", 0.0) }];
        for (i, (t, rt)) in members.into_iter().enumerate() {
            corpus.push(Program { tokens: t, runtime: rt as f64, ..prog(&format!("m{i}"), "", 0.0) });
        }
        let r = build_reference_set(&corpus, &corpus[0], 2.0, NeighborhoodRule::Distance);
        prop_assert_eq!(r.members.len(), corpus.len() - 1);
        for s in &samples {
            for v in [score_correctness(s, &r, 4), score_efficiency_hard(s, &r), score_efficiency_soft(s, &r, 4)] {
                prop_assert!((0.0..=1.0).contains(&v), "{}", v);
            }
            prop_assert!(score_efficiency_soft(s, &r, 4) <= score_correctness(s, &r, 4) + 1e-12);
        }
        let d = score_diversity(&samples, &r, 4);
        prop_assert!((0.0..=1.0).contains(&d));
        let mut more = samples.clone();
        more.push(corpus[1].tokens.clone());
        prop_assert!(score_diversity(&more, &r, 4) >= d);
    }

    #[test]
    fn scores_ignore_identifier_names(i in 0usize..3600, suffix in "[a-z]{1,4}") {
        let (records, programs) = g1();
        let x = &programs[i];
        let r = build_reference_set(programs, x, 0.6, NeighborhoodRule::Distance);
        prop_assume!(!r.members.is_empty());
        let renamed: String = lex(&records[i].source)
            .unwrap()
            .into_iter()
            .map(|t| {
                if t.klass == minilang::TokenClass::Identifier && !minilang::lexer::is_builtin(&t.text) {
                    format!("{}_{suffix}", t.text)
                } else {
                    t.text
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        let cand = texts(&canonicalize(&lex(&renamed).unwrap()).0);
        prop_assert_eq!(score_correctness(&cand, &r, 4), score_correctness(&x.tokens, &r, 4));
        prop_assert_eq!(score_efficiency_soft(&cand, &r, 4), score_efficiency_soft(&x.tokens, &r, 4));
    }
}
