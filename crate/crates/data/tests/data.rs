use std::collections::HashSet;

use data::{
    build_tokenizer, check_disjoint, drop_last_paren, gen_ood, gen_train, is_cascading, random_balanced,
    random_unbalanced, read_jsonl, replace_y_with_z, split, write_jsonl, DataError, Example, Generator,
    GeneratorConfig, OodSetting, TextBatches, HELDOUT_FIXTURE, TRAIN_FIXTURE, VOCAB_SIZE,
};
use programs::{is_shuffle_dyck, parse_pairs, StudentTokenizer, Task};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tokenizer() -> StudentTokenizer {
    build_tokenizer(TRAIN_FIXTURE, VOCAB_SIZE).unwrap()
}

fn three_families() -> Vec<(String, String)> {
    parse_pairs(&["()", "{}", "[]"]).unwrap()
}

/// Shuffle-Dyck check by independent per-family running balances.
fn balanced_by_scan(s: &str, pairs: &[(char, char)]) -> bool {
    pairs.iter().all(|&(l, r)| {
        let mut depth = 0i64;
        for c in s.chars() {
            depth += (c == l) as i64 - (c == r) as i64;
            if depth < 0 {
                return false;
            }
        }
        depth == 0
    })
}

fn tenths(s: &str) -> u64 {
    let (i, f) = s.split_once('.').unwrap();
    i.parse::<u64>().unwrap() * 10 + f.parse::<u64>().unwrap()
}

#[test]
fn dyck_stream_is_half_balanced() {
    let examples = gen_train(&GeneratorConfig::new(Task::ShuffleDyck, 42), 10_000).unwrap();
    let yes = examples.iter().filter(|e| e.answer == " Yes").count() as f64 / examples.len() as f64;
    assert!((yes - 0.5).abs() <= 0.02, "balanced fraction {yes}");
    let pairs = [('(', ')'), ('{', '}'), ('[', ']')];
    for e in &examples {
        assert!(!e.input.is_empty() && e.input.len() <= 30);
        assert_eq!(e.answer == " Yes", balanced_by_scan(&e.input, &pairs), "{}", e.input);
    }
}

#[test]
fn zero_examples_is_empty() {
    for t in Task::ALL {
        assert!(gen_train(&GeneratorConfig::new(t, 1), 0).unwrap().is_empty());
    }
}

#[test]
fn count_stream_has_no_duplicates() {
    let examples = gen_train(&GeneratorConfig::new(Task::Count, 7), 50_000).unwrap();
    let inputs: HashSet<&str> = examples.iter().map(|e| e.input.as_str()).collect();
    assert_eq!(inputs.len(), 50_000);
    for e in &examples {
        let words: Vec<&str> = e.input.split(' ').collect();
        assert!((1..=40).contains(&words.len()));
        assert!(words.iter().all(|w| *w == "x" || *w == "y"));
        assert_eq!(e.answer, format!(" {}", words.iter().filter(|w| **w == "x").count()));
    }
    // Counts are spread over the whole range, not concentrated near half.
    let counts: HashSet<&str> = examples.iter().map(|e| e.answer.as_str()).collect();
    assert_eq!(counts.len(), 41);
}

#[test]
fn sum_stream_exhausts_its_space() {
    let config = GeneratorConfig {
        max_operand: 3,
        ..GeneratorConfig::new(Task::IntegerSum, 5)
    };
    let all = gen_train(&config, 16).unwrap();
    let pairs: HashSet<&str> = all.iter().map(|e| e.input.as_str()).collect();
    assert_eq!(pairs.len(), 16);
    assert!(matches!(gen_train(&config, 17), Err(DataError::Exhausted(16))));
    for e in gen_train(&GeneratorConfig::new(Task::IntegerSum, 5), 2000).unwrap() {
        let (a, b) = e.input.split_once(" + ").unwrap();
        let (a, b): (u64, u64) = (a.parse().unwrap(), b.parse().unwrap());
        assert!(a <= 450 && b <= 450);
        assert_eq!(e.answer, format!(" {}", a + b));
    }
}

#[test]
fn labels_agree_with_interpreter() {
    let tok = tokenizer();
    for t in Task::ALL {
        let spec = t.spec().unwrap();
        for e in gen_train(&GeneratorConfig::new(t, 3), 500).unwrap() {
            assert_eq!(
                spec.interpret_answer(&tok, &e.input, &e.answer).unwrap(),
                e.answer,
                "{t} {e:?}"
            );
        }
    }
}

#[test]
fn streams_are_reproducible_and_split_is_disjoint() {
    for t in Task::ALL {
        let config = GeneratorConfig {
            test_size: 200,
            ..GeneratorConfig::new(t, 9)
        };
        assert_eq!(gen_train(&config, 300).unwrap(), gen_train(&config, 300).unwrap());
        assert_ne!(
            gen_train(&config, 50).unwrap(),
            gen_train(
                &GeneratorConfig {
                    seed: 10,
                    ..config.clone()
                },
                50
            )
            .unwrap()
        );
        let (test, mut g) = split(&config).unwrap();
        assert_eq!(test.len(), 200);
        let test_inputs: HashSet<String> = test.iter().map(|e| e.input.clone()).collect();
        for e in g.take(2000).unwrap() {
            assert!(!test_inputs.contains(&e.input));
        }
        let mut skipping = Generator::new(config.clone()).unwrap();
        skipping.skip(test_inputs.iter().map(String::as_str));
        assert_eq!(skipping.emitted(), 200);
    }
}

#[test]
fn supervised_span_covers_exactly_the_answer() {
    let tok = tokenizer();
    for t in Task::ALL {
        let spec = t.spec().unwrap();
        for e in gen_train(&GeneratorConfig::new(t, 4), 100).unwrap() {
            let full = format!("{}{}", e.prompt, e.answer);
            assert_eq!(&full[e.supervised.0..e.supervised.1], e.answer);
            let (ids, supervised) = spec.encode_student(&tok, &e.input, &e.answer).unwrap();
            let labels: Vec<usize> = supervised.iter().map(|&(_, l)| l).collect();
            assert_eq!(tok.decode(&labels), e.answer);
            assert_eq!(supervised.last().unwrap().0, ids.len() - 2);
        }
    }
}

#[test]
fn ood_transforms() {
    let dyck = Task::ShuffleDyck.spec().unwrap();
    assert_eq!(drop_last_paren("()"), "(");
    assert_eq!(dyck.label("(").unwrap(), " No");
    let count = Task::Count.spec().unwrap();
    assert_eq!(replace_y_with_z("x y x"), "x z x");
    assert_eq!(count.label("x y x").unwrap(), count.label("x z x").unwrap());
    assert!(is_cascading(299, 1));
    assert!(!is_cascading(211, 123));
    assert_eq!(Task::IntegerSum.spec().unwrap().label("299 + 1").unwrap(), " 300");
}

#[test]
fn ood_settings_generate_their_definitions() {
    let tok = tokenizer();
    for setting in OodSetting::ALL {
        let task = setting.task();
        assert_eq!(OodSetting::parse(task, setting.name()).unwrap(), setting);
        let examples = gen_ood(task, setting, 300, 17).unwrap();
        assert_eq!(examples, gen_ood(task, setting, 300, 17).unwrap());
        let expected = if setting == OodSetting::XOnly { 40 } else { 300 };
        assert_eq!(examples.len(), expected, "{setting}");
        let distinct: HashSet<&str> = examples.iter().map(|e| e.input.as_str()).collect();
        assert_eq!(distinct.len(), examples.len());
        let spec = task.spec().unwrap();
        for e in &examples {
            // Every input renders for the student.
            spec.encode_student(&tok, &e.input, &e.answer).unwrap();
            if setting.teacher_supported() {
                assert_eq!(
                    spec.interpret_answer(&tok, &e.input, &e.answer).unwrap(),
                    e.answer,
                    "{setting} {e:?}"
                );
            }
            match setting {
                OodSetting::XOnly => assert!(e.input.split(' ').all(|w| w == "x")),
                OodSetting::CountThreeXLength => {
                    let n = e.input.split(' ').count();
                    assert!((41..=120).contains(&n));
                    assert_eq!(
                        e.answer,
                        format!(" {}", e.input.split(' ').filter(|w| *w == "x").count())
                    );
                }
                OodSetting::ReplaceYWithZ => assert!(!e.input.contains('y')),
                OodSetting::CascadingOverflow => {
                    let (a, b) = e.input.split_once(" + ").unwrap();
                    assert!(is_cascading(a.parse().unwrap(), b.parse().unwrap()));
                }
                OodSetting::FourDigitSums => {
                    let (a, b) = e.input.split_once(" + ").unwrap();
                    assert!(a.len() == 4 && b.len() == 4);
                    assert_eq!(
                        e.answer,
                        format!(" {}", a.parse::<u64>().unwrap() + b.parse::<u64>().unwrap())
                    );
                }
                OodSetting::DecimalSums => {
                    let (a, b) = e.input.split_once(" + ").unwrap();
                    assert_eq!(tenths(e.answer.trim()), tenths(a) + tenths(b));
                }
                OodSetting::AlmostBalanced => {
                    assert_eq!(e.answer, " No");
                    assert_eq!(e.input.len() % 2, 1);
                }
                OodSetting::DyckThreeXLength => {
                    assert!((31..=90).contains(&e.input.len()));
                    let pairs = [('(', ')'), ('{', '}'), ('[', ']')];
                    assert_eq!(e.answer == " Yes", balanced_by_scan(&e.input, &pairs));
                }
                OodSetting::ExtraFamily => {
                    assert!(e.input.contains(['<', '>']));
                    let pairs = [('(', ')'), ('{', '}'), ('[', ']'), ('<', '>')];
                    assert_eq!(e.answer == " Yes", balanced_by_scan(&e.input, &pairs));
                }
            }
        }
        if matches!(setting, OodSetting::DyckThreeXLength | OodSetting::ExtraFamily) {
            let yes = examples.iter().filter(|e| e.answer == " Yes").count();
            assert_eq!(yes, 150, "{setting}");
        }
    }
    // The replaced test set keeps the original labels.
    let config = GeneratorConfig {
        test_size: 300,
        ..GeneratorConfig::new(Task::Count, 17)
    };
    let (test, _) = split(&config).unwrap();
    let replaced = gen_ood(Task::Count, OodSetting::ReplaceYWithZ, 300, 17).unwrap();
    for (a, b) in test.iter().zip(&replaced) {
        assert_eq!(replace_y_with_z(&a.input), b.input);
        assert_eq!(a.answer, b.answer);
    }
}

#[test]
fn ood_errors() {
    assert!(matches!(
        gen_ood(Task::Count, OodSetting::DecimalSums, 10, 0),
        Err(DataError::WrongTask { .. })
    ));
    assert!(matches!(
        OodSetting::parse(Task::Count, "decimals"),
        Err(DataError::UnknownSetting(_))
    ));
    assert_eq!(
        OodSetting::parse(Task::ShuffleDyck, "3x-length").unwrap(),
        OodSetting::DyckThreeXLength
    );
    assert!(matches!(
        gen_ood(Task::IntegerSum, OodSetting::CascadingOverflow, 1_000_000, 0),
        Err(DataError::Exhausted(_))
    ));
}

#[test]
fn text_windows() {
    let tok = tokenizer();
    let mut a = TextBatches::new(&tok, TRAIN_FIXTURE, 70, 12, 42).unwrap();
    let mut b = TextBatches::new(&tok, TRAIN_FIXTURE, 70, 12, 42).unwrap();
    let mut c = TextBatches::new(&tok, TRAIN_FIXTURE, 70, 12, 43).unwrap();
    for _ in 0..20 {
        let batch = a.next_batch();
        assert_eq!(batch.len(), 12);
        assert!(batch.iter().all(|w| w.len() == 70));
        // Windows are contiguous slices of the tokenized corpus.
        for w in &batch {
            assert!(a.tokens().windows(70).any(|s| s == w.as_slice()));
        }
        assert_eq!(batch, b.next_batch());
        assert_ne!(batch, c.next_batch());
    }
    let short = "only a few words here";
    assert!(matches!(
        TextBatches::new(&tok, short, 70, 12, 0),
        Err(DataError::CorpusTooShort { .. })
    ));
}

#[test]
fn corpus_disjointness() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let eval = dir.path().join("eval.txt");
    let copy = dir.path().join("copy.txt");
    std::fs::write(&train, TRAIN_FIXTURE).unwrap();
    std::fs::write(&eval, HELDOUT_FIXTURE).unwrap();
    std::fs::write(&copy, TRAIN_FIXTURE).unwrap();
    check_disjoint(&train, &eval).unwrap();
    assert!(matches!(check_disjoint(&train, &train), Err(DataError::Overlap(_))));
    assert!(matches!(check_disjoint(&train, &copy), Err(DataError::Overlap(_))));
    let tok = tokenizer();
    let held = TextBatches::from_path(&tok, &eval, 70, 12, 0).unwrap();
    assert!(held.tokens().len() >= 70);
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let mut examples = gen_train(&GeneratorConfig::new(Task::IntegerSum, 2), 50).unwrap();
    examples.extend(gen_ood(Task::ShuffleDyck, OodSetting::ExtraFamily, 20, 2).unwrap());
    write_jsonl(&path, &examples).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), examples);
    std::fs::write(&path, "{\"prompt\": 3}\n").unwrap();
    assert!(matches!(read_jsonl(&path), Err(DataError::Json { line: 1, .. })));
    let e: Example = serde_json::from_str(&serde_json::to_string(&examples[0]).unwrap()).unwrap();
    assert_eq!(e, examples[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn balanced_and_unbalanced_generators(seed in any::<u64>(), max_len in 2usize..=40) {
        let fams = three_families();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_balanced(&mut rng, &fams, max_len);
        prop_assert!(s.len() % 2 == 0 && s.len() <= max_len && !s.is_empty());
        prop_assert_eq!(is_shuffle_dyck(&s, &fams), Some(true));
        let u = random_unbalanced(&mut rng, &fams, max_len);
        prop_assert!(!u.is_empty() && u.len() <= max_len);
        prop_assert_eq!(is_shuffle_dyck(&u, &fams), Some(false));
    }
}
