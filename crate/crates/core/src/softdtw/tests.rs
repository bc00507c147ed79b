use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Exhaustive minimum over all monotone warping paths.
fn brute_force_dtw(costs: &Matrix) -> f64 {
    fn walk(c: &Matrix, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + c.get(i, j);
        if i + 1 == c.rows() && j + 1 == c.cols() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < c.rows() {
            walk(c, i + 1, j, acc, best);
        }
        if j + 1 < c.cols() {
            walk(c, i, j + 1, acc, best);
        }
        if i + 1 < c.rows() && j + 1 < c.cols() {
            walk(c, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(costs, 0, 0, 0.0, &mut best);
    best
}

fn abs_params(lambda: f64) -> SoftDtwParams {
    SoftDtwParams::new(lambda, LocalCost::AbsDiff).unwrap()
}

fn random_seq(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<f64> {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

#[test]
fn soft_min_examples() {
    assert_eq!(soft_min(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
    assert!((soft_min(&[0.0, 0.0], 1.0).unwrap() + 2f64.ln()).abs() < 1e-15);
    for lambda in [0.0, 0.5, 3.0] {
        assert_eq!(soft_min(&[4.25], lambda).unwrap(), 4.25);
    }
    assert!(matches!(soft_min(&[], 1.0), Err(Error::Argument(_))));
}

#[test]
fn soft_min_is_monotone_in_lambda() {
    let v = [0.3, 1.2, -0.4, 2.0];
    let mut prev = soft_min(&v, 0.0).unwrap();
    for lambda in [1e-3, 0.01, 0.1, 1.0, 10.0] {
        let s = soft_min(&v, lambda).unwrap();
        assert!(s <= prev);
        prev = s;
    }
    assert!((soft_min(&v, 1e-6).unwrap() + 0.4).abs() < 1e-5);
}

#[test]
fn soft_min_survives_huge_values() {
    let s = soft_min(&[1e300, 1e300], 1.0).unwrap();
    assert!(s.is_finite());
}

#[test]
fn soft_dtw_examples() {
    for lambda in [0.0, 0.1, 1.0, 10.0] {
        assert_eq!(soft_dtw(&[0.0], &[1.0], &abs_params(lambda)).unwrap().0, 1.0);
    }
    let (v, table) = soft_dtw(&[1.0, 2.0, 3.0], &[1.0, 3.0], &abs_params(0.0)).unwrap();
    assert_eq!(v, 1.0);
    assert_eq!((table.rows(), table.cols()), (4, 3));
    let costs = Matrix::from_fn(3, 2, |i, j| ([1.0, 2.0, 3.0][i] - [1.0f64, 3.0][j]).abs());
    assert_eq!(brute_force_dtw(&costs), 1.0);
    let a = [0.5, -1.0, 2.0, 2.0];
    assert_eq!(soft_dtw(&a, &a, &abs_params(0.0)).unwrap().0, 0.0);
}

#[test]
fn divergence_examples() {
    let a = [1.0, 2.0, 3.0];
    let b = [1.0, 3.0];
    assert_eq!(divergence(&a, &b, &abs_params(0.0)).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let x = random_seq(&mut rng, 1, 12);
        assert_eq!(divergence(&x, &x, &abs_params(1.0)).unwrap(), 0.0);
        let y = random_seq(&mut rng, 1, 12);
        let d1 = divergence(&x, &y, &abs_params(1.0)).unwrap();
        let d2 = divergence(&y, &x, &abs_params(1.0)).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }
}

#[test]
fn divergence_positive_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..1000 {
        let lambda = [0.1, 1.0, 10.0][k % 3];
        let cost = if k % 2 == 0 { LocalCost::AbsDiff } else { LocalCost::SquaredDiff };
        let params = SoftDtwParams::new(lambda, cost).unwrap();
        let a = random_seq(&mut rng, 2, 16);
        let b = random_seq(&mut rng, 2, 16);
        let d = divergence(&a, &b, &params).unwrap();
        assert!(d >= -1e-9, "SD = {d}");
        assert!(d > 0.0, "distinct sequences must have positive divergence");
    }
}

#[test]
fn soft_and_classic_dtw_agree_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let a = random_seq(&mut rng, 1, 6);
        let b = random_seq(&mut rng, 1, 6);
        let costs = Matrix::from_fn(a.len(), b.len(), |i, j| (a[i] - b[j]).abs());
        let bf = brute_force_dtw(&costs);
        assert_eq!(dtw_classic(&costs).unwrap().cost, soft_dtw(&a, &b, &abs_params(0.0)).unwrap().0);
        assert!((dtw_classic(&costs).unwrap().cost - bf).abs() < 1e-12);
        let soft = soft_dtw(&a, &b, &abs_params(1e-3)).unwrap().0;
        assert!((soft - bf).abs() <= 0.05);
        let lambda = 0.5;
        let soft = soft_dtw(&a, &b, &abs_params(lambda)).unwrap().0;
        assert!((soft - bf).abs() <= lambda * (a.len() + b.len()) as f64 * 3f64.ln());
    }
}

fn central_difference(a: &[f64], b: &[f64], params: &SoftDtwParams, eps: f64) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            let mut plus = a.to_vec();
            plus[i] += eps;
            let mut minus = a.to_vec();
            minus[i] -= eps;
            (divergence(&plus, b, params).unwrap() - divergence(&minus, b, params).unwrap()) / (2.0 * eps)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..100 {
        let cost = if k % 2 == 0 { LocalCost::AbsDiff } else { LocalCost::SquaredDiff };
        let params = SoftDtwParams::new(1.0, cost).unwrap();
        let a = random_seq(&mut rng, 1, 8);
        let b = random_seq(&mut rng, 1, 8);
        let g = divergence_grad(&a, &b, &params).unwrap();
        let fd = central_difference(&a, &b, &params, 1e-5);
        for (x, y) in g.iter().zip(&fd) {
            assert!((x - y).abs() / x.abs().max(1.0) <= 1e-4, "{x} vs {y}");
        }
    }
}

#[test]
fn gradient_vanishes_at_equality() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let a = random_seq(&mut rng, 1, 10);
        let g = divergence_grad(&a, &a, &abs_params(0.7)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0), "{g:?}");
    }
}

#[test]
fn gradient_symmetry_and_translation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let a = random_seq(&mut rng, 1, 9);
        let b = random_seq(&mut rng, 1, 9);
        let ab = divergence_grads(&a, &b, &abs_params(1.0)).unwrap();
        let ba = divergence_grads(&b, &a, &abs_params(1.0)).unwrap();
        for (x, y) in ab.grad_a.iter().zip(&ba.grad_b) {
            assert!((x - y).abs() < 1e-10);
        }
        // SD(a + c, b + c) does not depend on c
        let total: f64 = ab.grad_a.iter().sum::<f64>() + ab.grad_b.iter().sum::<f64>();
        assert!(total.abs() < 1e-9);
    }
}

#[test]
fn zero_lambda_gradient_is_an_error() {
    assert!(matches!(
        divergence_grad(&[1.0], &[2.0], &abs_params(0.0)),
        Err(Error::NotDifferentiable(_))
    ));
}

#[test]
fn negative_lambda_rejected() {
    assert!(SoftDtwParams::new(-1.0, LocalCost::AbsDiff).is_err());
}

#[test]
fn classic_dtw_examples() {
    let diag = Matrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 1.0 });
    let r = dtw_classic(&diag).unwrap();
    assert_eq!(r.cost, 0.0);
    assert_eq!(r.cells, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    assert_eq!(r.path.y_indices, vec![0.0, 1.0, 2.0, 3.0, 4.0]);

    let constant = Matrix::from_fn(4, 4, |_, _| 0.75);
    let r = dtw_classic(&constant).unwrap();
    assert_eq!(r.cost, 4.0 * 0.75);
    assert_eq!(r.cells, (0..4).map(|i| (i, i)).collect::<Vec<_>>());
}

#[test]
fn classic_path_is_monotone_and_connected() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let (p, q) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let m = Matrix::from_fn(p, q, |_, _| rng.gen_range(0.0..2.0));
        let r = dtw_classic(&m).unwrap();
        assert_eq!(r.cells[0], (0, 0));
        assert_eq!(*r.cells.last().unwrap(), (p - 1, q - 1));
        for w in r.cells.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(di <= 1 && dj <= 1 && di + dj >= 1);
        }
        let along: f64 = r.cells.iter().map(|&(i, j)| m.get(i, j)).sum();
        assert!((along - r.cost).abs() < 1e-9);
        assert!(r.path.is_monotone());
        assert_eq!(r.path.len(), p);
    }
}

proptest! {
    #[test]
    fn classic_matches_exhaustive_search(
        p in 1usize..=6,
        q in 1usize..=6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(p, q, |_, _| rng.gen_range(0.0..3.0));
        let r = dtw_classic(&m).unwrap();
        prop_assert!((r.cost - brute_force_dtw(&m)).abs() < 1e-12);
    }

    #[test]
    fn divergence_nonnegative(
        a in proptest::collection::vec(-5.0f64..5.0, 2..16),
        b in proptest::collection::vec(-5.0f64..5.0, 2..16),
        lambda in 0.05f64..10.0,
    ) {
        prop_assert!(divergence(&a, &b, &abs_params(lambda)).unwrap() >= -1e-9);
    }
}
