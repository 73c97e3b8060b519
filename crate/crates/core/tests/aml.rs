use std::collections::{BTreeMap, BTreeSet};

use amss_core::aml::{
    interpret, parse, render, tokenize, Aml, AmlError, AmssDescription, Direction, Grammar, Level,
    LevelTable, PanSide, Production, Symbol, Task, TaskClass, Transform, DEFAULT_SOURCES,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Non-empty duplicate-free ordered sequences, built by brute force over index tuples.
fn ordered_target_lists(sources: &[&str]) -> Vec<Vec<String>> {
    let n = sources.len();
    let mut out = Vec::new();
    for len in 1..=n {
        let total = n.pow(len as u32);
        for code in 0..total {
            let mut idx = Vec::new();
            let mut c = code;
            for _ in 0..len {
                idx.push(c % n);
                c /= n;
            }
            let distinct: BTreeSet<_> = idx.iter().collect();
            if distinct.len() == len {
                out.push(idx.iter().map(|&i| sources[i].to_string()).collect());
            }
        }
    }
    out
}

/// The language written out by hand from the surface templates.
fn oracle_language() -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let opts = ["", "light ", "medium ", "heavy "];
    for targets in ordered_target_lists(&DEFAULT_SOURCES) {
        let s = targets.join(", ");
        out.insert(format!("separate {s}"));
        out.insert(format!("mute {s}"));
        for o in opts {
            out.insert(format!("increase the {o}volume of {s}"));
            out.insert(format!("decrease the {o}volume of {s}"));
            out.insert(format!("pan {s} to the {o}left"));
            out.insert(format!("pan {s} to the {o}right"));
            out.insert(format!("apply {o}lowpass to {s}"));
            out.insert(format!("apply {o}highpass to {s}"));
            out.insert(format!("remove {o}reverb from {s}"));
        }
    }
    out
}

#[test]
fn target_list_count_for_three_sources() {
    let lists = ordered_target_lists(&DEFAULT_SOURCES);
    assert_eq!(lists.len(), 15);
    let g = Grammar::full(&DEFAULT_SOURCES);
    assert_eq!(g.enumerate_from("srcs").unwrap().len(), 15);
}

#[test]
fn enumeration_matches_template_oracle() {
    let got = Aml::default().enumerate_queries().unwrap();
    let want = oracle_language();
    assert_eq!(got.len(), 450);
    assert_eq!(got.iter().cloned().collect::<BTreeSet<_>>(), want);
    let mut sorted = got.clone();
    sorted.sort();
    assert_eq!(got, sorted, "enumeration is lexicographic");
}

#[test]
fn option_nonterminals() {
    let g = Grammar::full(&DEFAULT_SOURCES);
    assert_eq!(
        g.enumerate_from("opt").unwrap(),
        vec!["heavy", "light", "medium"]
    );
    let f = Grammar::for_class(TaskClass::Filter, &DEFAULT_SOURCES);
    assert_eq!(f.enumerate_from("opt-filter").unwrap().len(), 8);
}

#[test]
fn per_task_counts() {
    for task in Task::ALL {
        let n = Grammar::for_task(task, &DEFAULT_SOURCES).enumerate().unwrap().len();
        let want = if task.is_leveled() { 4 * 15 } else { 15 };
        assert_eq!(n, want, "{task}");
    }
    let by_class: usize = [
        TaskClass::VolumeControl,
        TaskClass::VolumeControlMulti,
        TaskClass::Filter,
        TaskClass::Delay,
    ]
    .iter()
    .map(|&c| Grammar::for_class(c, &DEFAULT_SOURCES).enumerate().unwrap().len())
    .sum();
    assert_eq!(by_class, 450);
}

#[test]
fn level_defaults_to_medium() {
    let a = parse("apply medium lowpass to vocals, drums").unwrap();
    assert_eq!(a.task_class, TaskClass::Filter);
    assert_eq!(a.task, Task::Lowpass);
    assert_eq!(a.level, Level::Medium);
    assert_eq!(a.targets, vec!["vocals", "drums"]);
    assert_eq!(parse("apply lowpass to vocals, drums").unwrap(), a);
}

#[test]
fn syntax_error_position() {
    match parse("apply loudpass to drums") {
        Err(AmlError::SyntaxError { position, got, .. }) => {
            assert_eq!(position, 2);
            assert_eq!(got, "loudpass");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn error_kinds() {
    assert!(matches!(
        parse("mute dr$ums"),
        Err(AmlError::UnknownWord { .. })
    ));
    assert!(matches!(parse("mute piano"), Err(AmlError::UnknownSource(s)) if s == "piano"));
    assert!(matches!(parse("mute vocals drums"), Err(AmlError::SyntaxError { .. })));
    assert!(matches!(parse("mute vocals, and drums"), Err(_)));
    assert!(matches!(parse(""), Err(AmlError::SyntaxError { .. })));
    assert!(parse("mute vocals, vocals").is_err());
}

#[test]
fn case_and_spacing_insensitive() {
    let a = parse("Apply   HEAVY Highpass to Bass ,Drums").unwrap();
    assert_eq!(a.task, Task::Highpass);
    assert_eq!(a.level, Level::Heavy);
    assert_eq!(a.targets, vec!["bass", "drums"]);
    assert_eq!(
        tokenize("vocals,drums").unwrap(),
        vec!["vocals", ",", "drums"]
    );
}

#[test]
fn render_examples() {
    let d = AmssDescription::new(Task::Lowpass, Level::Medium, ["drums"]).unwrap();
    assert_eq!(render(&d), "apply medium lowpass to drums");
    let d = AmssDescription::new(Task::Mute, Level::Medium, ["vocals", "drums", "bass"]).unwrap();
    assert_eq!(render(&d), "mute vocals, drums, bass");
}

#[test]
fn round_trip_and_uniqueness_over_language() {
    let mut canonical: BTreeMap<String, AmssDescription> = BTreeMap::new();
    for q in Aml::default().enumerate_queries().unwrap() {
        let d = parse(&q).unwrap();
        let r = render(&d);
        assert_eq!(parse(&r).unwrap(), d, "{q}");
        if let Some(prev) = canonical.insert(r.clone(), d.clone()) {
            assert_eq!(prev, d, "two descriptions render to {r}");
        }
    }
    // 2 unleveled tasks + 7 leveled tasks x 3 levels, each over 15 target lists.
    assert_eq!(canonical.len(), (2 + 7 * 3) * 15);
}

#[test]
fn interpret_examples_and_totality() {
    let table = LevelTable::default();
    let p = interpret(&parse("separate vocals").unwrap(), &table).unwrap();
    assert_eq!(p.transform, Transform::MaskOthers);
    assert_eq!(p.targets, vec!["vocals"]);
    assert_eq!(p.direction, Direction::Apply);

    let p = interpret(&parse("remove reverb from drums").unwrap(), &table).unwrap();
    assert!(matches!(p.transform, Transform::Reverb { decay_s } if decay_s == 0.6));
    assert_eq!(p.direction, Direction::Remove);

    let p = interpret(&parse("increase the heavy volume of bass").unwrap(), &table).unwrap();
    assert_eq!(p.transform, Transform::Gain { factor: 2.0 });

    let p = interpret(&parse("pan vocals to the light left").unwrap(), &table).unwrap();
    assert_eq!(p.transform, Transform::Pan { side: PanSide::Left, amount: 0.25 });

    for q in Aml::default().enumerate_queries().unwrap() {
        let d = parse(&q).unwrap();
        let p = interpret(&d, &table).unwrap();
        assert_eq!(p.targets, d.targets);
        let remove = matches!(p.transform, Transform::Reverb { .. });
        assert_eq!(p.direction == Direction::Remove, remove, "{q}");
    }
}

#[test]
fn missing_level_entry() {
    let mut table = LevelTable::default();
    table.lowpass_hz.remove(&Level::Heavy);
    let d = parse("apply heavy lowpass to bass").unwrap();
    assert_eq!(
        interpret(&d, &table),
        Err(AmlError::MissingLevelEntry { task: Task::Lowpass, level: Level::Heavy })
    );
}

#[test]
fn level_table_json_round_trip() {
    let t = LevelTable::default();
    let text = serde_json::to_string(&t).unwrap();
    assert_eq!(LevelTable::from_json(&text).unwrap(), t);
    assert!(LevelTable::from_json("{").is_err());
}

#[test]
fn recursive_grammar_is_rejected() {
    let rules = BTreeMap::from([
        (
            "s".to_string(),
            vec![
                Production::new(vec![Symbol::t("a")]),
                Production::new(vec![Symbol::t("a"), Symbol::nt("s")]),
            ],
        ),
    ]);
    match Grammar::new("s", rules) {
        Err(AmlError::GrammarNotFinite(_)) => {}
        Ok(g) => assert!(matches!(g.enumerate(), Err(AmlError::GrammarNotFinite(_)))),
        Err(e) => panic!("{e:?}"),
    }
}

#[test]
fn undefined_symbol_is_rejected() {
    let rules = BTreeMap::from([(
        "s".to_string(),
        vec![Production::new(vec![Symbol::nt("missing")])],
    )]);
    assert!(Grammar::new("s", rules).is_err());
}

#[test]
fn custom_vocabulary() {
    let lang = Aml::with_sources(&["piano", "guitar"]);
    assert_eq!(lang.grammar().enumerate_from("srcs").unwrap().len(), 4);
    assert_eq!(lang.parse("mute guitar, piano").unwrap().targets, vec!["guitar", "piano"]);
    assert!(lang.parse("mute vocals").is_err());
}

#[test]
fn random_generation_is_uniform_over_alternatives() {
    // desc has four equally weighted class alternatives.
    let g = Grammar::full(&DEFAULT_SOURCES);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 10_000;
    let mut counts = BTreeMap::new();
    for _ in 0..n {
        let (_, d) = amss_core::aml::generate_random(&g, &mut rng).unwrap();
        *counts.entry(d.task_class).or_insert(0usize) += 1;
    }
    let p = 0.25;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert_eq!(counts.len(), 4);
    for (class, c) in counts {
        assert!(
            (c as f64 - n as f64 * p).abs() <= 3.0 * sigma,
            "{class:?}: {c}"
        );
    }
}

#[test]
fn filter_subgrammar_closure() {
    let lang = Aml::new(
        Grammar::for_class(TaskClass::Filter, &DEFAULT_SOURCES),
        &DEFAULT_SOURCES,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (q, d) = lang.generate_random(&mut rng).unwrap();
    assert!(q.starts_with("apply ") && q.contains(" to "), "{q}");
    assert_eq!(parse(&q).unwrap(), d);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn generated_queries_parse_to_their_description(seed in any::<u64>()) {
        let lang = Aml::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, d) = lang.generate_random(&mut rng).unwrap();
        prop_assert_eq!(lang.parse(&q).unwrap(), d.clone());
        prop_assert_eq!(lang.parse(&render(&d)).unwrap(), d);
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let lang = Aml::default();
        let a = lang.generate_random(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = lang.generate_random(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dereverb_subgrammar_always_removes(seed in any::<u64>()) {
        let g = Grammar::for_task(Task::Dereverb, &DEFAULT_SOURCES);
        let (_, d) = amss_core::aml::generate_random(&g, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let p = interpret(&d, &LevelTable::default()).unwrap();
        prop_assert_eq!(p.direction, Direction::Remove);
    }

    /// Random word strings over the terminal vocabulary parse exactly when
    /// they belong to the enumerated language.
    #[test]
    fn recognizer_agrees_with_enumeration(idx in prop::collection::vec(0usize..64, 1..9)) {
        let lang = Aml::default();
        let words: Vec<String> = lang.grammar().terminals().into_iter().collect();
        let toks: Vec<&str> = idx.iter().map(|&i| words[i % words.len()].as_str()).collect();
        let mut text = String::new();
        for t in &toks {
            if !text.is_empty() && *t != "," {
                text.push(' ');
            }
            text.push_str(t);
        }
        let member = oracle_language().contains(&text);
        prop_assert_eq!(lang.parse(&text).is_ok(), member, "{}", text);
    }
}
