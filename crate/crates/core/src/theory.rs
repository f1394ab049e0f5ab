//! Dimension-only constants that govern the asymptotic regret and
//! instability ratios between the distributed classifiers, the oracle OWNN
//! and bagged 1-NN.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::Result;

/// Regret inflation of optimally weighted M-DNN over the oracle OWNN:
/// `Q = (π/2)^{4/(d+4)}`.
pub fn q_majority(d: usize) -> f64 {
    let d = d as f64;
    FRAC_PI_2.powf(4.0 / (d + 4.0))
}

/// Extra regret factor of k-NN relative to OWNN:
/// `Q′ = 2^{−4/(d+4)} ((d+4)/(d+2))^{(2d+4)/(d+4)}`.
pub fn q_prime(d: usize) -> f64 {
    let d = d as f64;
    let e = (2.0 * d + 4.0) / (d + 4.0);
    (-4.0 / (d + 4.0) * std::f64::consts::LN_2 + e * ((d + 4.0) / (d + 2.0)).ln()).exp()
}

/// Regret ratio of bagged 1-NN over OWNN:
/// `Q″ = 2^{−8/(d+4)} Γ(2+2/d)^{2d/(d+4)} ((d+4)/(d+2))^{(2d+4)/(d+4)}`.
///
/// Evaluated in log space so large `d` does not overflow.
pub fn q_double_prime(d: usize) -> f64 {
    let d = d as f64;
    let log = -8.0 / (d + 4.0) * std::f64::consts::LN_2
        + 2.0 * d / (d + 4.0) * ln_gamma(2.0 + 2.0 / d)
        + (2.0 * d + 4.0) / (d + 4.0) * ((d + 4.0) / (d + 2.0)).ln();
    log.exp()
}

/// Order of the largest shard count for which M-DNN keeps the oracle rate,
/// `N^{2/(d+4)}`.
pub fn max_shards_majority(n: f64, d: usize) -> f64 {
    n.powf(2.0 / (d as f64 + 4.0))
}

/// Order of the largest shard count for which W-DNN keeps the oracle rate,
/// `N^{4/(d+4)}`.
pub fn max_shards_weighted(n: f64, d: usize) -> f64 {
    n.powf(4.0 / (d as f64 + 4.0))
}

/// Partition exponent bound `γ < 2/(d+4)` for M-DNN.
pub fn gamma_bound_majority(d: usize) -> f64 {
    2.0 / (d as f64 + 4.0)
}

/// Partition exponent bound `γ < 4/(d+4)` for W-DNN.
pub fn gamma_bound_weighted(d: usize) -> f64 {
    4.0 / (d as f64 + 4.0)
}

/// One row of the constants table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRow {
    pub d: usize,
    pub q: f64,
    pub q_prime: f64,
    pub q_double_prime: f64,
    /// Regret ratio M-DNN / BNN, `Q/Q″`.
    pub q_over_q_double_prime: f64,
    /// Regret ratio W-DNN / BNN, `1/Q″`.
    pub inv_q_double_prime: f64,
    /// Instability ratio M-DNN / BNN, `√(Q/Q″)`.
    pub cis_ratio_majority: f64,
    /// Instability ratio W-DNN / BNN, `√(1/Q″)`.
    pub cis_ratio_weighted: f64,
}

impl ConstantsRow {
    pub fn new(d: usize) -> Self {
        let q = q_majority(d);
        let qpp = q_double_prime(d);
        let ratio = q / qpp;
        let inv = 1.0 / qpp;
        Self {
            d,
            q,
            q_prime: q_prime(d),
            q_double_prime: qpp,
            q_over_q_double_prime: ratio,
            inv_q_double_prime: inv,
            cis_ratio_majority: ratio.sqrt(),
            cis_ratio_weighted: inv.sqrt(),
        }
    }
}

/// Rows for every `d` in `dims`.
pub fn figure1_table(dims: impl IntoIterator<Item = usize>) -> Vec<ConstantsRow> {
    dims.into_iter().filter(|&d| d >= 1).map(ConstantsRow::new).collect()
}

pub const CONSTANTS_HEADER: [&str; 8] = [
    "d",
    "q",
    "q_prime",
    "q_double_prime",
    "q_over_q_double_prime",
    "inv_q_double_prime",
    "cis_ratio_majority",
    "cis_ratio_weighted",
];

/// Writes the table as CSV with [`CONSTANTS_HEADER`].
pub fn write_constants_csv<W: Write>(rows: &[ConstantsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q_at_four() {
        assert_relative_eq!(q_majority(4), 1.253_314_137_315_5, max_relative = 1e-12);
        assert!(q_majority(1_000_000) - 1.0 < 1e-5);
    }

    #[test]
    fn q_prime_peaks_at_four() {
        assert!((q_prime(4) - 1.089).abs() <= 1e-3);
        let v: Vec<f64> = (1..=50).map(q_prime).collect();
        assert!(v.iter().all(|&x| x > 1.0));
        let argmax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
            + 1;
        assert_eq!(argmax, 4);
        assert!(v[..4].windows(2).all(|w| w[0] < w[1]));
        assert!(v[3..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn q_double_prime_reference_values() {
        // 40-digit reference values.
        assert_relative_eq!(q_double_prime(1), 1.246_898_224_782_37, max_relative = 1e-13);
        assert_relative_eq!(q_double_prime(2), 1.081_687_177_730_56, max_relative = 1e-13);
        assert_relative_eq!(q_double_prime(4), 1.023_326_707_946_49, max_relative = 1e-13);
        assert_relative_eq!(q_double_prime(8), 1.008_301_024_826_01, max_relative = 1e-13);
    }

    #[test]
    fn sharp_bounds_order() {
        for d in 1..=20 {
            for n in [10.0, 1e3, 27_000.0, 1e7] {
                assert!(max_shards_weighted(n, d) >= max_shards_majority(n, d));
            }
            assert_relative_eq!(gamma_bound_weighted(d), 2.0 * gamma_bound_majority(d));
        }
        assert_relative_eq!(gamma_bound_majority(4), 0.25);
        assert_relative_eq!(gamma_bound_weighted(4), 0.5);
    }

    #[test]
    fn csv_has_fixed_header() {
        let rows = figure1_table(1..=3);
        let mut buf = Vec::new();
        write_constants_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, CONSTANTS_HEADER.join(","));
        assert_eq!(text.lines().count(), 4);
    }
}
