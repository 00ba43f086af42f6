//! Comparisons against independently computed values.

use monopara::evalsuite::{bleu, fit_ridge, pearson, BleuConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn oracle_rows() -> Vec<(String, Vec<String>, f64)> {
    let text = include_str!("data/bleu_oracle.tsv");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let refs = f[1].split("|||").map(|r| r.trim().to_string()).collect();
            (f[0].to_string(), refs, f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn bleu_matches_reference_values() {
    let rows = oracle_rows();
    assert_eq!(rows.len(), 50);
    let cfg = BleuConfig::default();
    for (cand, refs, want) in rows {
        let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
        let got = bleu(&cand, &refs, &cfg);
        assert!((got - want).abs() <= 0.1, "{cand:?}: {got} vs {want}");
    }
}

fn ridge_oracle(x: &[Vec<f64>], y: &[f64], l2: f64) -> Vec<f64> {
    let (n, p) = (x.len(), x[0].len());
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[i][j] } else { 1.0 });
    let mut lhs = a.transpose() * &a;
    for j in 0..p {
        lhs[(j, j)] += l2;
    }
    let rhs = a.transpose() * DVector::from_column_slice(y);
    lhs.lu().solve(&rhs).unwrap().iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_matches_normal_equations(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 8..30),
        noise in prop::collection::vec(-0.5f64..0.5, 30),
        l2 in 0.01f64..5.0,
    ) {
        let y: Vec<f64> = rows.iter().zip(&noise).map(|(r, e)| r[0] - 0.5 * r[2] + 2.0 + e).collect();
        let fit = fit_ridge(&rows, &y, l2).unwrap();
        let (w, b) = fit.raw_coefficients();
        let want = ridge_oracle(&rows, &y, l2);
        for j in 0..3 {
            prop_assert!((w[j] - want[j]).abs() < 1e-6, "w{j}: {} vs {}", w[j], want[j]);
        }
        prop_assert!((b - want[3]).abs() < 1e-6);
    }

    #[test]
    fn pearson_is_invariant_to_affine_maps(
        xs in prop::collection::vec(-10.0f64..10.0, 3..20),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v * v + i as f64).collect();
        prop_assume!(ys.iter().any(|&v| (v - ys[0]).abs() > 1e-6));
        prop_assume!(xs.iter().any(|&v| (v - xs[0]).abs() > 1e-6));
        let r = pearson(&xs, &ys).unwrap();
        let moved: Vec<f64> = xs.iter().map(|v| v * scale + shift).collect();
        prop_assert!((pearson(&moved, &ys).unwrap() - r).abs() < 1e-9);
        prop_assert!(r.abs() <= 1.0 + 1e-12);
    }
}
