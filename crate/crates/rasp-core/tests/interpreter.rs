use proptest::prelude::*;
use rasp_core::{interpret, json, selector_matrix, NodeKind, Program, ProgramBuilder, RaspError, Value};

fn paren_program() -> Program {
    let mut b = ProgramBuilder::new("parens", &["(", ")"], 12);
    let t = b.tokens().unwrap();
    let s = b.select("starts", t, t, |k, _| k == &Value::sym("(")).unwrap();
    let e = b.select("ends", t, t, |k, _| k == &Value::sym(")")).unwrap();
    let sc = b.count("start_counts", s).unwrap();
    let ec = b.count("end_counts", e).unwrap();
    let d = b
        .zip_map("diff", sc, ec, |x, y| {
            Value::Int(x.as_int().unwrap() - y.as_int().unwrap())
        })
        .unwrap();
    b.build(d).unwrap()
}

fn ints(v: &[Value]) -> Vec<i64> {
    v.iter().map(|x| x.as_int().unwrap()).collect()
}

fn chars(s: &str) -> Vec<String> {
    s.chars().map(|c| c.to_string()).collect()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(|s| s.as_str()).collect()
}

#[test]
fn start_counts_on_nested_parens() {
    let p = paren_program();
    let toks = chars("(())()");
    let tr = interpret(&p, &refs(&toks)).unwrap();
    assert_eq!(ints(tr.get("start_counts").unwrap()), vec![1, 2, 2, 2, 3, 3]);
    assert_eq!(ints(tr.get("end_counts").unwrap()), vec![0, 0, 1, 2, 2, 3]);
    assert_eq!(ints(tr.get("diff").unwrap()), vec![1, 2, 1, 0, 1, 0]);
}

#[test]
fn indices_on_three_tokens() {
    let mut b = ProgramBuilder::new("idx", &["a", "b"], 8);
    let i = b.indices().unwrap();
    let p = b.build(i).unwrap();
    let tr = interpret(&p, &["b", "a", "a"]).unwrap();
    assert_eq!(ints(tr.get("indices").unwrap()), vec![0, 1, 2]);
}

fn negs_program(causal: bool) -> (Program, usize) {
    let mut b = ProgramBuilder::new("negs", &["a", "b"], 8).causal(causal);
    let t = b.tokens().unwrap();
    let d = b
        .map("diffs", t, |v| Value::Int(if v == &Value::sym("b") { -1 } else { 0 }))
        .unwrap();
    let s = b.select("negs_selector", d, d, |k, _| k.as_int().unwrap() < 0).unwrap();
    let c = b.count("neg_counts", s).unwrap();
    (b.build(c).unwrap(), s)
}

#[test]
fn negative_selector_picks_the_negative_position() {
    let (p, s) = negs_program(false);
    let tr = interpret(&p, &["a", "b", "a"]).unwrap();
    assert_eq!(ints(tr.get("diffs").unwrap()), vec![0, -1, 0]);
    let m = selector_matrix(&p, &["a", "b", "a"], s).unwrap();
    for row in &m {
        assert_eq!(row, &vec![false, true, false]);
    }
    let (p, s) = negs_program(true);
    let m = selector_matrix(&p, &["a", "b", "a"], s).unwrap();
    assert_eq!(m[0], vec![false, false, false]);
    assert_eq!(m[1], vec![false, true, false]);
    assert_eq!(m[2], vec![false, true, false]);
}

#[test]
fn empty_selection_counts_zero() {
    let mut b = ProgramBuilder::new("none", &["a", "b"], 8);
    let t = b.tokens().unwrap();
    let s = b.select("never", t, t, |_, _| false).unwrap();
    let c = b.count("c", s).unwrap();
    let p = b.build(c).unwrap();
    let m = selector_matrix(&p, &["a", "b", "b"], s).unwrap();
    assert!(m.iter().flatten().all(|x| !x));
    assert_eq!(
        ints(interpret(&p, &["a", "b", "b"]).unwrap().get("c").unwrap()),
        vec![0, 0, 0]
    );
}

#[test]
fn always_true_count_matches_brute_force_prefix_count() {
    let mut b = ProgramBuilder::new("len", &["a", "b"], 10);
    let t = b.tokens().unwrap();
    let s = b.select("all", t, t, |_, _| true).unwrap();
    let c = b.count("c", s).unwrap();
    let p = b.build(c).unwrap();
    let toks = ["a", "b", "b", "a", "a", "b", "a"];
    let got = ints(interpret(&p, &toks).unwrap().get("c").unwrap());
    let m = selector_matrix(&p, &toks, s).unwrap();
    let brute: Vec<i64> = m.iter().map(|r| r.iter().filter(|&&x| x).count() as i64).collect();
    assert_eq!(got, brute);
    assert_eq!(got, (1..=7).collect::<Vec<i64>>());
}

#[test]
fn identity_map_and_or_aggregation() {
    let mut b = ProgramBuilder::new("agg", &["p", "q", "r"], 6);
    let t = b.tokens().unwrap();
    let x = b.map("x", t, |v| Value::Int(i64::from(v == &Value::sym("q")))).unwrap();
    let y = b.map("y", t, |_| Value::Int(0)).unwrap();
    let _same = b.map("same", x, |v| v.clone()).unwrap();
    let or = b
        .zip_map("or_nonzero", x, y, |a, b| {
            Value::Int(i64::from(a.as_int() != Some(0) || b.as_int() != Some(0)))
        })
        .unwrap();
    let p = b.build(or).unwrap();
    let tr = interpret(&p, &["p", "q", "r"]).unwrap();
    assert_eq!(tr.get("same").unwrap(), tr.get("x").unwrap());
    assert_eq!(ints(tr.get("x").unwrap()), vec![0, 1, 0]);
    assert_eq!(ints(tr.get("y").unwrap()), vec![0, 0, 0]);
    assert_eq!(ints(tr.get("or_nonzero").unwrap()), vec![0, 1, 0]);
}

#[test]
fn subtraction_zip_map_is_exact_on_whole_domain() {
    let p = paren_program();
    let id = p.find("diff").unwrap();
    let NodeKind::ZipMap { x, y, table } = &p.node(id).kind else {
        panic!()
    };
    let (xd, yd) = (&p.node(*x).domain, &p.node(*y).domain);
    for (i, a) in xd.iter().enumerate() {
        for (j, b) in yd.iter().enumerate() {
            let out = &p.node(id).domain[table[i * yd.len() + j]];
            assert_eq!(out.as_int().unwrap(), a.as_int().unwrap() - b.as_int().unwrap());
        }
    }
}

#[test]
fn errors_are_reported() {
    let p = paren_program();
    assert!(matches!(
        interpret(&p, &["(", "x"]),
        Err(RaspError::UnknownToken { position: 1, .. })
    ));
    let long: Vec<&str> = vec!["("; 13];
    assert!(matches!(
        interpret(&p, &long),
        Err(RaspError::TooLong { len: 13, max: 12 })
    ));

    let mut b = ProgramBuilder::new("bad", &["a"], 4);
    let t = b.tokens().unwrap();
    let r = b.map_into("m", t, |_| Value::Int(7), vec![Value::Int(0)]);
    assert!(matches!(r, Err(RaspError::Domain(_))));
    assert!(matches!(b.count("c", t), Err(RaspError::NotASelector(_))));
    b.map("dup", t, |v| v.clone()).unwrap();
    assert!(matches!(
        b.map("dup", t, |v| v.clone()),
        Err(RaspError::DuplicateName(_))
    ));
}

#[test]
fn json_round_trip_and_partial_predicate_rejected() {
    let p = paren_program();
    let s = json::to_json(&p);
    let q = json::from_json(&s).unwrap();
    assert_eq!(p, q);

    let mut doc: serde_json::Value = serde_json::from_str(&s).unwrap();
    let nodes = doc["nodes"].as_array_mut().unwrap();
    let sel = nodes.iter_mut().find(|n| n["kind"] == "select").unwrap();
    sel["table"].as_array_mut().unwrap().pop();
    let err = json::from_json(&doc.to_string()).unwrap_err();
    assert!(matches!(err, RaspError::Domain(_)), "{err}");
}

fn paren_string() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["(", ")"]), 0..=12)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn interpretation_is_deterministic(s in paren_string()) {
        let p = paren_program();
        prop_assert_eq!(interpret(&p, &refs(&s)).unwrap(), interpret(&p, &refs(&s)).unwrap());
    }

    #[test]
    fn prefixes_do_not_see_the_future(s in paren_string(), cut in 0usize..=12) {
        let p = paren_program();
        let cut = cut.min(s.len());
        let full = interpret(&p, &refs(&s)).unwrap();
        let pre = interpret(&p, &refs(&s[..cut])).unwrap();
        for (a, b) in full.columns.iter().zip(&pre.columns) {
            prop_assert_eq!(&a.values[..cut], &b.values[..]);
        }
    }

    #[test]
    fn values_stay_in_declared_domains(s in paren_string()) {
        let p = paren_program();
        let tr = interpret(&p, &refs(&s)).unwrap();
        for c in &tr.columns {
            for v in &c.values {
                prop_assert!(p.node(c.node).domain.contains(v));
            }
        }
    }
}

#[test]
fn domain_closure_exhaustive_small_lengths() {
    let p = paren_program();
    for len in 0..=8 {
        for bits in 0..(1u32 << len) {
            let s: Vec<&str> = (0..len).map(|i| if bits >> i & 1 == 1 { "(" } else { ")" }).collect();
            let tr = interpret(&p, &s).unwrap();
            for c in &tr.columns {
                assert!(c.values.iter().all(|v| p.node(c.node).domain.contains(v)));
            }
        }
    }
}
