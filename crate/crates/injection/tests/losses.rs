use std::sync::Arc;

use injection::{
    algorithm_loss, ce_loss, default_layer_map, kl_loss, numerical_rank, roll_intervention, subspace_projector,
    validate_layer_map, InjectionError, LinearBridge, LossWeights,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use runtime::{Matrix, Tape};

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

fn bridge(rng: &mut ChaCha8Rng, m: usize, d: usize) -> LinearBridge {
    LinearBridge::init(d, m, 1, rng).unwrap()
}

/// `W · h` row by row, with plain loops.
fn map_rows(w: &Matrix, h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(h.rows, w.rows);
    for r in 0..h.rows {
        for i in 0..w.rows {
            out[(r, i)] = (0..w.cols).map(|c| w[(i, c)] * h[(r, c)]).sum();
        }
    }
    out
}

fn scalar_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[test]
fn algorithm_loss_extremes_and_toy_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (m, d, n) = (3, 5, 4);
    let b = bridge(&mut rng, m, d);
    let student: Vec<Matrix> = (0..3).map(|_| randn(&mut rng, n, d)).collect();
    let pairs: Vec<(usize, usize)> = (0..n).map(|p| (p, p)).collect();
    let map = default_layer_map(2);
    let same: Vec<Matrix> = student.iter().map(|h| map_rows(&b.maps[0], h)).collect();
    assert!(algorithm_loss(&student, &same, &b, &map, &pairs).abs() < 1e-12);
    let opposite: Vec<Matrix> = same
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.scale(-1.0);
            t
        })
        .collect();
    assert!((algorithm_loss(&student, &opposite, &b, &map, &pairs) - 2.0).abs() < 1e-12);
    // Positive rescaling keeps the loss at 0.
    let scaled: Vec<Matrix> = same
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.scale(3.5);
            t
        })
        .collect();
    assert!(algorithm_loss(&student, &scaled, &b, &map, &pairs).abs() < 1e-12);

    // Two checkpoints, a shifted alignment and random targets.
    let student: Vec<Matrix> = (0..3).map(|_| randn(&mut rng, 3, d)).collect();
    let compiled: Vec<Matrix> = (0..2).map(|_| randn(&mut rng, 4, m)).collect();
    let pairs = [(0, 1), (2, 3)];
    let map = [0, 2];
    let mut expected = 0.0;
    for i in 0..2 {
        let mapped = map_rows(&b.maps[0], &student[map[i]]);
        for &(s, t) in &pairs {
            expected += 1.0 - scalar_cos(mapped.row(s), compiled[i].row(t));
        }
    }
    expected /= 4.0;
    assert!((algorithm_loss(&student, &compiled, &b, &map, &pairs) - expected).abs() < 1e-12);
}

#[test]
fn algorithm_loss_counts_zero_vectors_as_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = bridge(&mut rng, 2, 4);
    let student = vec![Matrix::zeros(1, 4)];
    let compiled = vec![randn(&mut rng, 1, 2)];
    assert_eq!(algorithm_loss(&student, &compiled, &b, &[0], &[(0, 0)]), 1.0);
}

#[test]
fn kl_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&mut rng, 5, 7);
    assert!(kl_loss(&a, &a).abs() < 1e-12);
    let reference = Matrix::from_rows(&[vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]]);
    let uniform = Matrix::zeros(1, 4);
    assert!((kl_loss(&uniform, &reference) - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn ce_closed_forms_and_recomputation() {
    let perfect = Matrix::from_rows(&[vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]]);
    assert_eq!(ce_loss(&perfect, &[(0, 1)]).unwrap(), 0.0);
    let v = 11;
    let uniform = Matrix::zeros(3, v);
    assert!((ce_loss(&uniform, &[(0, 2), (2, 5)]).unwrap() - (v as f64).ln()).abs() < 1e-12);
    assert!(matches!(ce_loss(&uniform, &[]), Err(InjectionError::EmptySupervision)));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = randn(&mut rng, 6, 9);
    let targets: Vec<(usize, usize)> = (0..6).step_by(2).map(|r| (r, rng.random_range(0..9))).collect();
    let mut expected = 0.0;
    for &(r, c) in &targets {
        let z: f64 = logits.row(r).iter().map(|x| x.exp()).sum();
        expected -= (logits[(r, c)].exp() / z).ln();
    }
    expected /= targets.len() as f64;
    assert!((ce_loss(&logits, &targets).unwrap() - expected).abs() < 1e-12);

    // The tape versions agree with the standalone ones.
    let reference = randn(&mut rng, 6, 9);
    let mut tape = Tape::new();
    let x = tape.param(&logits);
    let ce = tape.cross_entropy(x, &targets);
    let kl = tape.kl_div(x, &reference, &(0..6).collect::<Vec<_>>());
    assert!((tape.scalar(ce) - expected).abs() < 1e-12);
    assert!((tape.scalar(kl) - kl_loss(&logits, &reference)).abs() < 1e-12);
}

#[test]
fn projector_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (m, d) in [(1, 3), (4, 9), (17, 32)] {
        let b = bridge(&mut rng, m, d);
        let w = &b.maps[0];
        assert_eq!(numerical_rank(w), m);
        let p = subspace_projector(w).unwrap();
        assert!(p.matmul(&p).max_abs_diff(&p) < 1e-10);
        assert!(p.max_abs_diff(&p.transpose()) < 1e-10);
        let trace: f64 = (0..d).map(|i| p[(i, i)]).sum();
        assert!((trace - m as f64).abs() < 1e-10);
        // A vector in the row space: Wᵀ a.
        let a = randn(&mut rng, 1, m);
        let v = a.matmul(w);
        assert!(v.matmul_nt(&p).max_abs_diff(&v) < 1e-10);
    }
    let mut w = randn(&mut rng, 3, 6);
    let first = w.row(0).to_vec();
    w.row_mut(2).copy_from_slice(&first);
    match subspace_projector(&w) {
        Err(InjectionError::RankDeficient { rank, expected, .. }) => assert_eq!((rank, expected), (2, 3)),
        other => panic!("expected rank error, got {other:?}"),
    }
}

#[test]
fn bridge_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert!(matches!(
        LinearBridge::init(10, 10, 1, &mut rng),
        Err(InjectionError::Width { .. })
    ));
    let per_layer = LinearBridge::init(10, 4, 3, &mut rng).unwrap();
    assert!(!per_layer.shared());
    assert_ne!(per_layer.map(0), per_layer.map(2));
    let shared = LinearBridge::init(10, 4, 1, &mut rng).unwrap();
    assert_eq!(shared.map(0), shared.map(2));
}

#[test]
fn roll_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 4;
    let h = randn(&mut rng, 6, d);
    let p = subspace_projector(&bridge(&mut rng, 2, d).maps[0]).unwrap();
    assert_eq!(roll_intervention(&h, &p, 1), h);
    assert!(roll_intervention(&h, &Matrix::identity(d), 3).max_abs_diff(&h) < 1e-12);
    let rolled = roll_intervention(&h, &Matrix::zeros(d, d), 3);
    for b in 0..3 {
        let prev = (b + 2) % 3;
        for i in 0..2 {
            assert_eq!(rolled.row(b * 2 + i), h.row(prev * 2 + i));
        }
    }
    // In-subspace part stays, out-of-subspace part comes from b-1.
    let out = roll_intervention(&h, &p, 3);
    let (proj_out, proj_h) = (out.matmul_nt(&p), h.matmul_nt(&p));
    assert!(proj_out.max_abs_diff(&proj_h) < 1e-12);
    // The tape op computes the same values.
    let mut tape = Tape::new();
    let x = tape.param(&h);
    let y = tape.roll(x, Arc::new(p.clone()), 3);
    assert!(tape.value(y).max_abs_diff(&out) < 1e-12);
}

#[test]
fn rolled_component_carries_no_gradient_across_the_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (batch, len, d) = (3, 2, 5);
    let p = subspace_projector(&bridge(&mut rng, 2, d).maps[0]).unwrap();
    let grad_for = |h: &Matrix| {
        // Probe only block 1, which reads block 0's orthogonal part.
        let mut probe = Matrix::zeros(batch * len, d);
        for r in len..2 * len {
            for c in 0..d {
                probe[(r, c)] = (r * d + c) as f64 * 0.1 - 0.3;
            }
        }
        let mut tape = Tape::new();
        let x = tape.param(h);
        let y = tape.roll(x, Arc::new(p.clone()), batch);
        let l = tape.dot_const(y, probe);
        tape.backward(l).get_or_zeros(x, h.rows, h.cols)
    };
    let h = randn(&mut rng, batch * len, d);
    let g = grad_for(&h);
    for r in 0..len {
        assert!(g.row(r).iter().all(|&v| v == 0.0), "block 0 received gradient");
    }
    let mut perturbed = h.clone();
    for r in 0..len {
        for c in 0..d {
            perturbed[(r, c)] += rng.random_range(-1.0..1.0);
        }
    }
    assert_eq!(grad_for(&perturbed), g);
}

#[test]
fn layer_maps_and_weights() {
    assert_eq!(default_layer_map(2), vec![0, 1, 2]);
    validate_layer_map(&[0, 2, 4], 2, 6).unwrap();
    for bad in [vec![0, 1], vec![0, 2, 2], vec![0, 3, 7]] {
        assert!(matches!(
            validate_layer_map(&bad, 2, 6),
            Err(InjectionError::LayerMap(_))
        ));
    }
    let w = LossWeights {
        alpha: 0.5,
        beta: 2.0,
        gamma: 0.25,
    };
    assert_eq!(w.total(1.0, 1.0, 4.0), 3.5);
    assert!(LossWeights { beta: -1.0, ..w }.validate().is_err());
    assert!(LossWeights { gamma: f64::NAN, ..w }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>(), rows in 1usize..5, cols in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = randn(&mut rng, rows, cols);
        let b = randn(&mut rng, rows, cols);
        prop_assert!(kl_loss(&a, &b) >= 0.0);
    }

    #[test]
    fn algorithm_loss_is_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = bridge(&mut rng, 2, 5);
        let student = vec![randn(&mut rng, 3, 5), randn(&mut rng, 3, 5)];
        let compiled = vec![randn(&mut rng, 3, 2), randn(&mut rng, 3, 2)];
        let l = algorithm_loss(&student, &compiled, &b, &[0, 1], &[(0, 0), (1, 2), (2, 1)]);
        prop_assert!((0.0..=2.0).contains(&l));
    }

    #[test]
    fn roll_preserves_the_subspace_component(seed in any::<u64>(), batch in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 6;
        let p = subspace_projector(&bridge(&mut rng, 3, d).maps[0]).unwrap();
        let h = randn(&mut rng, batch * 2, d);
        let out = roll_intervention(&h, &p, batch);
        prop_assert!(out.matmul_nt(&p).max_abs_diff(&h.matmul_nt(&p)) < 1e-10);
    }
}
