// Spectra from the in-crate Jacobi solver against nalgebra's symmetric
// eigendecomposition.

use dnsgd_core::linalg::symmetric_eigenvalues;
use dnsgd_core::topology::{build_topology, metropolis_mixing, TopologyTag};
use dnsgd_core::AgentMatrix;
use nalgebra::DMatrix;

fn oracle(a: &AgentMatrix<f64>) -> Vec<f64> {
    let n = a.rows();
    let m = DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
    let mut e: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|x, y| y.partial_cmp(x).unwrap());
    e
}

#[test]
fn mixing_spectra_match_oracle() {
    for (tag, p) in [
        (TopologyTag::Ring, None),
        (TopologyTag::Path, None),
        (TopologyTag::Complete, None),
        (TopologyTag::ErdosRenyi, Some(0.3)),
    ] {
        for m in [2, 3, 7, 16, 33] {
            let g = build_topology(tag, m, p, m as u64).unwrap();
            let w = metropolis_mixing::<f64>(&g).unwrap();
            let expected = oracle(w.matrix());
            for (a, b) in w.eigenvalues().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "{tag} m={m}: {a} vs {b}");
            }
            let lambda2 = if m > 1 { expected[1] } else { 0.0 };
            assert!((w.lambda2() - lambda2).abs() < 1e-12);
        }
    }
}

#[test]
fn random_symmetric_matrices_match_oracle() {
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for n in 1..12 {
        let mut a = AgentMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = next() * 4.0;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let ours = symmetric_eigenvalues(&a).unwrap();
        for (x, y) in ours.iter().zip(oracle(&a)) {
            assert!((x - y).abs() < 1e-11, "n={n}: {x} vs {y}");
        }
    }
}

#[test]
fn ring_spectrum_closed_form() {
    // Lazy Metropolis on a ring (all degrees 2): W = (I + (I + A)/3)/2, so
    // eigenvalues are (1 + (1 + 2cos(2πk/m))/3)/2.
    let m = 10;
    let w = metropolis_mixing::<f64>(&build_topology(TopologyTag::Ring, m, None, 0).unwrap()).unwrap();
    let mut expected: Vec<f64> = (0..m)
        .map(|k| {
            let c = (2.0 * std::f64::consts::PI * k as f64 / m as f64).cos();
            (1.0 + (1.0 + 2.0 * c) / 3.0) / 2.0
        })
        .collect();
    expected.sort_by(|x, y| y.partial_cmp(x).unwrap());
    for (a, b) in w.eigenvalues().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-13);
    }
}
