//! Multi-round gossip: Chebyshev-accelerated and plain.

use crate::error::{Error, Result};
pub use crate::linalg::AgentMatrix;
use crate::scalar::Scalar;
use crate::topology::MixingMatrix;

/// `c1 = √14` in the accelerated-gossip contraction bound.
pub fn contraction_c1<T: Scalar>() -> T {
    T::of(14.0).sqrt()
}

/// `c2 = 1 − 1/√2` in the accelerated-gossip contraction bound.
pub fn contraction_c2<T: Scalar>() -> T {
    T::one() - T::one() / T::of(2.0).sqrt()
}

/// Chebyshev momentum `η_y = (1 − √(1 − λ2²)) / (1 + √(1 − λ2²))`.
pub fn chebyshev_momentum<T: Scalar>(lambda2: T) -> T {
    let root = (T::one() - lambda2 * lambda2).max(T::zero()).sqrt();
    (T::one() - root) / (T::one() + root)
}

fn check_inputs<T: Scalar>(y0: &AgentMatrix<T>, w: &MixingMatrix<T>) -> Result<()> {
    if y0.rows() != w.m() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows", w.m()),
            got: format!("{} rows", y0.rows()),
        });
    }
    y0.ensure_finite("gossip input")
}

/// Accelerated gossip.
///
/// Runs `Y(k+1) = (1 + η_y) W Y(k) − η_y Y(k−1)` with `Y(−1) = Y(0)` for
/// `k = 0, 1, ..., K`, i.e. `K + 1` multiplications by `W`, and returns the
/// last iterate. `K = 0` therefore still performs one mixing step. Column
/// means are preserved because `1ᵀ W = 1ᵀ`.
pub fn acc_gossip<T: Scalar>(
    y0: &AgentMatrix<T>,
    w: &MixingMatrix<T>,
    k: usize,
) -> Result<AgentMatrix<T>> {
    check_inputs(y0, w)?;
    let eta = chebyshev_momentum(w.lambda2());
    let one_plus = T::one() + eta;
    let mut prev = y0.clone();
    let mut cur = y0.clone();
    for _ in 0..=k {
        let next = w.apply(&cur)?.combine(one_plus, -eta, &prev);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `W^k · y0`.
pub fn plain_gossip<T: Scalar>(
    y0: &AgentMatrix<T>,
    w: &MixingMatrix<T>,
    k: usize,
) -> Result<AgentMatrix<T>> {
    check_inputs(y0, w)?;
    let mut cur = y0.clone();
    for _ in 0..k {
        cur = w.apply(&cur)?;
    }
    Ok(cur)
}

/// `ρ = √14 · (1 − (1 − 1/√2) √(1 − λ2))^K`.
pub fn contraction_rho<T: Scalar>(lambda2: T, k: usize) -> Result<T> {
    if !(lambda2 >= T::zero() && lambda2 < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "lambda2 = {lambda2} outside [0, 1)"
        )));
    }
    let base = T::one() - contraction_c2::<T>() * (T::one() - lambda2).sqrt();
    let exp = i32::try_from(k).map_err(|_| Error::InvalidArgument("K too large".into()))?;
    Ok(contraction_c1::<T>() * base.powi(exp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, metropolis_mixing, TopologyTag};

    fn ring(m: usize) -> MixingMatrix<f64> {
        metropolis_mixing(&build_topology(TopologyTag::Ring, m, None, 0).unwrap()).unwrap()
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let w = ring(6);
        let y0 = AgentMatrix::broadcast(6, &[1.5, -2.0]);
        for k in [0, 1, 7] {
            let y = acc_gossip(&y0, &w, k).unwrap();
            for i in 0..6 {
                for j in 0..2 {
                    assert!((y[(i, j)] - y0[(i, j)]).abs() < 1e-14);
                }
            }
            assert_eq!(plain_gossip(&y0, &w, k).unwrap().consensus_error(), 0.0);
        }
    }

    #[test]
    fn momentum_for_ring_four() {
        let w = ring(4);
        let expected = (1.0 - 5f64.sqrt() / 3.0) / (1.0 + 5f64.sqrt() / 3.0);
        assert!((chebyshev_momentum(w.lambda2()) - expected).abs() < 1e-14);
        assert_eq!(chebyshev_momentum(0.0f64), 0.0);
    }

    #[test]
    fn plain_gossip_zero_rounds_is_identity() {
        let w = ring(4);
        let y0 = AgentMatrix::from_fn(4, 2, |i, j| (i * 3 + j) as f64);
        assert_eq!(plain_gossip(&y0, &w, 0).unwrap(), y0);
    }

    #[test]
    fn plain_gossip_one_round_on_one_hot() {
        let w = ring(4);
        let y0 = AgentMatrix::from_fn(4, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let y = plain_gossip(&y0, &w, 1).unwrap();
        let expected = [2.0 / 3.0, 1.0 / 6.0, 0.0, 1.0 / 6.0];
        for (i, e) in expected.iter().enumerate() {
            assert!((y[(i, 0)] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rho_values() {
        let s14 = 14f64.sqrt();
        assert_eq!(contraction_rho(0.3f64, 0).unwrap(), s14);
        assert!((contraction_rho(0.0f64, 1).unwrap() - 7f64.sqrt()).abs() < 1e-14);
        let ratio = contraction_rho(0.5f64, 6).unwrap() / contraction_rho(0.5f64, 5).unwrap();
        assert!((ratio - (1.0 - (1.0 - 0.5f64.sqrt()) * 0.5f64.sqrt())).abs() < 1e-14);
        assert!(contraction_rho(1.0f64, 3).is_err());
        assert!(contraction_rho(-0.1f64, 3).is_err());
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let w = ring(4);
        assert!(acc_gossip(&AgentMatrix::<f64>::zeros(3, 2), &w, 1).is_err());
        let mut y = AgentMatrix::<f64>::zeros(4, 2);
        y[(2, 1)] = f64::INFINITY;
        assert!(matches!(acc_gossip(&y, &w, 1), Err(Error::NonFinite { .. })));
        assert!(plain_gossip(&y, &w, 1).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let g = build_topology(TopologyTag::Ring, 8, None, 0).unwrap();
        let w: MixingMatrix<f32> = metropolis_mixing(&g).unwrap();
        let y0 = AgentMatrix::from_fn(8, 3, |i, j| ((i * 7 + j * 3) % 5) as f32 - 2.0);
        let y = acc_gossip(&y0, &w, 10).unwrap();
        for (a, b) in y.column_mean().iter().zip(y0.column_mean()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(y.consensus_error() < y0.consensus_error());
    }
}
