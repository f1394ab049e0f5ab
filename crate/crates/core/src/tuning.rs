//! Cross-validated choice of the oracle parameter (`K` for k-NN, the cutoff
//! `m` for OWNN, the resampling ratio `q` for bagged 1-NN).

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neighbors::KdTree;
use crate::rng::SeededRng;
use crate::weights::{
    alpha, bnn_weights, ownn_weights, stable_sum, uniform_k_weights, WeightScheme, WeightVector,
};

pub const DEFAULT_FOLDS: usize = 5;
const DEFAULT_GRID_POINTS: usize = 20;
const GRID_SCALE: f64 = 10.0;

/// Which weight family a grid value parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneFamily {
    Knn,
    Ownn,
    Bnn,
}

impl TuneFamily {
    pub fn scheme(self, value: f64) -> WeightScheme {
        match self {
            TuneFamily::Knn => WeightScheme::UniformK { k: value as usize },
            TuneFamily::Ownn => WeightScheme::Ownn { m: value as usize },
            TuneFamily::Bnn => WeightScheme::BnnGeometric { q: value },
        }
    }

    fn check(self, value: f64, n: usize) -> Result<()> {
        let ok = match self {
            TuneFamily::Knn | TuneFamily::Ownn => {
                value.fract() == 0.0 && value >= 1.0 && value <= n as f64
            }
            TuneFamily::Bnn => value > 0.0 && value < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Tuning(format!(
                "grid value {value} is invalid for {self:?} with {n} training rows per fold"
            )))
        }
    }
}

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub family: TuneFamily,
    /// Candidate values, ascending.
    pub grid: Vec<f64>,
    /// Mean validation error across folds, one per grid value.
    pub cv_risk: Vec<f64>,
    /// Standard error of the fold errors.
    pub cv_stderr: Vec<f64>,
    pub selected: f64,
    pub folds: usize,
}

impl TuneResult {
    pub fn selected_scheme(&self) -> WeightScheme {
        self.family.scheme(self.selected)
    }
}

/// `⌈N^{0.7}⌉`, clamped to `[1, N]`.
pub fn default_oracle_k(n: usize) -> usize {
    ((n as f64).powf(0.7).ceil() as usize).clamp(1, n.max(1))
}

/// Log-spaced candidate neighbor counts from 1 up to
/// `10 · N^{4/(d+4)}` (the optimal-cutoff rate), capped at `max`.
pub fn default_count_grid(n_train: usize, d: usize, max: usize) -> Vec<f64> {
    let top = (GRID_SCALE * (n_train as f64).powf(4.0 / (d as f64 + 4.0)))
        .min(max as f64)
        .max(1.0);
    let mut v: Vec<f64> = (0..DEFAULT_GRID_POINTS)
        .map(|i| {
            let t = i as f64 / (DEFAULT_GRID_POINTS - 1) as f64;
            top.powf(t).round().max(1.0)
        })
        .collect();
    v.dedup();
    v
}

/// Default grid for a family. Bagging ratios are `q = 1/m` over the count
/// grid (bagged 1-NN with ratio `q` behaves like a `1/q`-neighbor rule).
pub fn default_grid(family: TuneFamily, n_train: usize, d: usize, folds: usize) -> Vec<f64> {
    let per_fold = n_train - n_train.div_ceil(folds.max(1));
    let counts = default_count_grid(n_train, d, per_fold.max(1));
    match family {
        TuneFamily::Knn | TuneFamily::Ownn => counts,
        TuneFamily::Bnn => {
            let mut q: Vec<f64> = counts
                .iter()
                .filter(|&&m| m >= 2.0)
                .map(|m| 1.0 / m)
                .collect();
            if q.is_empty() {
                q.push(0.5);
            }
            q.sort_by(f64::total_cmp);
            q
        }
    }
}

/// Fold id for each row: each class is shuffled and dealt round-robin, so
/// every fold gets `⌊c/F⌋` or `⌈c/F⌉` rows of a class with `c` rows.
pub fn stratified_folds(data: &Dataset, folds: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Tuning(format!("need at least 2 folds, got {folds}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y as usize].push(i);
    }
    for (c, rows) in by_class.iter().enumerate() {
        if rows.len() < folds {
            return Err(Error::Tuning(format!(
                "{folds} folds but class {c} has only {} rows",
                rows.len()
            )));
        }
    }
    let mut fold = vec![0; data.len()];
    let mut offset = 0;
    for rows in by_class.iter_mut() {
        rows.shuffle(rng);
        for (j, &i) in rows.iter().enumerate() {
            fold[i] = (offset + j) % folds;
        }
        offset += rows.len();
    }
    Ok(fold)
}

/// Grid search with stratified `folds`-fold cross-validation.
///
/// The selected value minimizes mean validation error; ties go to the
/// smallest value.
pub fn cv_tune(
    data: &Dataset,
    family: TuneFamily,
    grid: &[f64],
    folds: usize,
    rng: &mut SeededRng,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Tuning("empty grid".into()));
    }
    let assignment = stratified_folds(data, folds, rng)?;
    cv_tune_with_folds(data, family, grid, &assignment)
}

/// Cross-validation over an explicit fold assignment (`assignment[i]` is the
/// fold of row `i`, folds numbered from 0).
pub fn cv_tune_with_folds(
    data: &Dataset,
    family: TuneFamily,
    grid: &[f64],
    assignment: &[usize],
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Tuning("empty grid".into()));
    }
    if assignment.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: assignment.len(),
            right: data.len(),
        });
    }
    let folds = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; folds];
    for &f in assignment {
        sizes[f] += 1;
    }
    if folds < 2 || sizes.contains(&0) {
        return Err(Error::Tuning("fold assignment must use at least 2 nonempty folds".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let min_train = data.len() - sizes.iter().max().copied().unwrap_or(0);
    for &g in &grid {
        family.check(g, min_train)?;
    }

    // errors[f][g]
    let errors: Vec<Vec<usize>> = (0..folds)
        .into_par_iter()
        .map(|f| fold_errors(data, family, &grid, assignment, f))
        .collect::<Result<_>>()?;

    let mut cv_risk = Vec::with_capacity(grid.len());
    let mut cv_stderr = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let mut rates: Vec<f64> = (0..folds)
            .map(|f| errors[f][g] as f64 / sizes[f] as f64)
            .collect();
        // Sorting makes the mean independent of how folds are numbered.
        rates.sort_by(f64::total_cmp);
        let k = folds as f64;
        let mean = stable_sum(&rates) / k;
        let var = stable_sum(rates.iter().map(|r| (r - mean) * (r - mean))) / (k - 1.0);
        cv_risk.push(mean);
        cv_stderr.push((var / k).sqrt());
    }
    let best = cv_risk
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if *r < cv_risk[best] { i } else { best });
    Ok(TuneResult {
        family,
        selected: grid[best],
        grid,
        cv_risk,
        cv_stderr,
        folds,
    })
}

fn fold_errors(
    data: &Dataset,
    family: TuneFamily,
    grid: &[f64],
    assignment: &[usize],
    fold: usize,
) -> Result<Vec<usize>> {
    let (train_rows, valid_rows): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| assignment[i] != fold);
    let train = data.subset(&train_rows)?;
    let n = train.len();
    let weights = grid
        .iter()
        .map(|&g| match family {
            TuneFamily::Knn => uniform_k_weights(n, g as usize),
            TuneFamily::Ownn => ownn_weights(n, g as usize, data.dim()),
            TuneFamily::Bnn => bnn_weights(n, g),
        })
        .collect::<Result<Vec<_>>>()?;
    let depth = weights.iter().map(|w| w.support()).max().unwrap_or(1);
    let tree = KdTree::build(&train);
    let mut errors = vec![0usize; grid.len()];
    for &v in &valid_rows {
        let order = tree.order(data.row(v), depth)?;
        let y = data.label(v);
        for (g, w) in weights.iter().enumerate() {
            let s: f64 = order
                .indices
                .iter()
                .zip(w.as_slice())
                .filter(|(&i, _)| train.label(i) == 1)
                .map(|(_, wi)| wi)
                .sum();
            if u8::from(s >= 0.5) != y {
                errors[g] += 1;
            }
        }
    }
    Ok(errors)
}

/// `(Σwᵢ², Σαᵢwᵢ)`: the variance and bias coefficients of a weight vector in
/// the asymptotic regret `B₁Σwᵢ² + B₂(Σαᵢwᵢ/n^{2/d})²`.
pub fn tradeoff_terms(w: &WeightVector, d: usize) -> (f64, f64) {
    let w = &w.as_slice()[..w.support()];
    let var = stable_sum(w.iter().map(|x| x * x));
    let bias = stable_sum(w.iter().enumerate().map(|(i, x)| alpha(i + 1, d) * x));
    (var, bias)
}

/// Bagging ratio `q` that balances bias and variance the same way as an
/// OWNN cutoff `m` chosen on `n` points in dimension `d`.
///
/// The OWNN optimum pins the ratio `λ = B₂/(B₁ n^{4/d})` through its first
/// order condition in `m`; `q` then minimizes `Σwᵢ² + λ(Σαᵢwᵢ)²` over the
/// geometric family. Both sides use the exact finite-`n` weights.
pub fn matched_bnn_ratio(m: usize, n: usize, d: usize) -> Result<f64> {
    if n < 3 || m == 0 || m > n {
        return Err(Error::out_of_range("m", m, format!("1 <= m <= n with n = {n} >= 3")));
    }
    let h = (m / 10).max(1);
    let lo = m.saturating_sub(h).max(1);
    let hi = (m + h).min(n);
    let terms = |k: usize| ownn_weights(n, k, d).map(|w| tradeoff_terms(&w, d));
    let (v_lo, b_lo) = terms(lo)?;
    let (v_hi, b_hi) = terms(hi)?;
    let lambda = (v_lo - v_hi) / (b_hi * b_hi - b_lo * b_lo);
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Tuning(format!("no bias-variance balance at m = {m}")));
    }
    let objective = |log_q: f64| -> Result<f64> {
        let (v, b) = tradeoff_terms(&bnn_weights(n, log_q.exp())?, d);
        Ok(v + lambda * b * b)
    };
    // Golden-section search over log q in [log(1/n), log(1/2)].
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-(n as f64).ln(), 0.5f64.ln());
    let mut c = b - ratio * (b - a);
    let mut e = a + ratio * (b - a);
    let (mut fc, mut fe) = (objective(c)?, objective(e)?);
    for _ in 0..80 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - ratio * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + ratio * (b - a);
            fe = objective(e)?;
        }
    }
    Ok(((a + b) / 2.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> Dataset {
        // 1-D, two clusters of five.
        let x: Vec<f64> = vec![0.0, 0.1, 0.2, 0.3, 0.4, 5.0, 5.1, 5.2, 5.3, 5.4];
        let y = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        Dataset::new(x, y, 1).unwrap()
    }

    #[test]
    fn oracle_k_examples() {
        assert_eq!(default_oracle_k(27_000), 1265);
        assert_eq!(default_oracle_k(1), 1);
        assert_eq!(default_oracle_k(1024), 128);
        assert_eq!(default_oracle_k(2700), 253);
    }

    #[test]
    fn single_value_grid() {
        let r = cv_tune(&separable(), TuneFamily::Knn, &[3.0], 2, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(r.selected, 3.0);
        assert_eq!(r.grid, vec![3.0]);
    }

    #[test]
    fn separable_data_prefers_one_neighbor() {
        let data = separable();
        let r = cv_tune(&data, TuneFamily::Knn, &[1.0, 5.0], 2, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(r.selected, 1.0);
        assert_eq!(r.cv_risk[0], 0.0);
        assert!(r.cv_risk[0] <= r.cv_risk[1]);
    }

    #[test]
    fn ties_pick_smallest() {
        let data = separable();
        let r = cv_tune(&data, TuneFamily::Knn, &[3.0, 1.0, 2.0], 5, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(r.cv_risk, vec![0.0, 0.0, 0.0]);
        assert_eq!(r.selected, 1.0);
    }

    #[test]
    fn same_seed_same_result() {
        let data = separable();
        let a = cv_tune(&data, TuneFamily::Bnn, &[0.2, 0.5, 0.9], 2, &mut SeededRng::new(3, 0)).unwrap();
        let b = cv_tune(&data, TuneFamily::Bnn, &[0.2, 0.5, 0.9], 2, &mut SeededRng::new(3, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_inputs() {
        let data = separable();
        let mut rng = SeededRng::new(0, 0);
        assert!(cv_tune(&data, TuneFamily::Knn, &[], 2, &mut rng).is_err());
        assert!(cv_tune(&data, TuneFamily::Knn, &[1.0], 1, &mut rng).is_err());
        assert!(cv_tune(&data, TuneFamily::Knn, &[1.0], 6, &mut rng).is_err());
        assert!(cv_tune(&data, TuneFamily::Knn, &[1.5], 2, &mut rng).is_err());
        assert!(cv_tune(&data, TuneFamily::Knn, &[9.0], 2, &mut rng).is_err());
        assert!(cv_tune(&data, TuneFamily::Bnn, &[1.0], 2, &mut rng).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let data = separable();
        let f = stratified_folds(&data, 5, &mut SeededRng::new(1, 0)).unwrap();
        for fold in 0..5 {
            let rows: Vec<usize> = (0..10).filter(|&i| f[i] == fold).collect();
            assert_eq!(rows.len(), 2);
            assert_eq!(rows.iter().filter(|&&i| data.label(i) == 1).count(), 1);
        }
    }

    #[test]
    fn fold_relabeling_does_not_change_selection() {
        let data = separable();
        let f = stratified_folds(&data, 3, &mut SeededRng::new(2, 0)).unwrap();
        let relabeled: Vec<usize> = f.iter().map(|&x| (x + 1) % 3).collect();
        let grid = [1.0, 2.0, 4.0, 6.0];
        let a = cv_tune_with_folds(&data, TuneFamily::Ownn, &grid, &f).unwrap();
        let b = cv_tune_with_folds(&data, TuneFamily::Ownn, &grid, &relabeled).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.cv_risk, b.cv_risk);
        for (i, r) in a.cv_risk.iter().enumerate() {
            assert!(a.cv_risk[grid.iter().position(|&g| g == a.selected).unwrap()] <= *r, "{i}");
        }
    }

    #[test]
    fn default_grids_are_valid() {
        let g = default_grid(TuneFamily::Knn, 2700, 4, 5);
        assert_eq!(g[0], 1.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(*g.last().unwrap() <= 2160.0);
        let q = default_grid(TuneFamily::Bnn, 2700, 4, 5);
        assert!(q.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(q.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(default_grid(TuneFamily::Ownn, 3, 4, 2), vec![1.0]);
    }

    #[test]
    fn matched_ratio_reproduces_bagging_regret_constant() {
        use crate::theory::q_double_prime;
        let (n, d) = (200_000, 4);
        let m = 600;
        let q = matched_bnn_ratio(m, n, d).unwrap();
        // Recover the multiplier and compare optimal objective values.
        let terms = |k: usize| tradeoff_terms(&ownn_weights(n, k, d).unwrap(), d);
        let ((v0, b0), (v1, b1)) = (terms(540), terms(660));
        let lambda = (v0 - v1) / (b1 * b1 - b0 * b0);
        let own = (400..=800)
            .step_by(5)
            .map(|k| {
                let (v, b) = terms(k);
                v + lambda * b * b
            })
            .fold(f64::INFINITY, f64::min);
        let (v, b) = tradeoff_terms(&bnn_weights(n, q).unwrap(), d);
        let ratio = (v + lambda * b * b) / own;
        assert!((ratio - q_double_prime(d)).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn matched_ratio_shrinks_with_cutoff() {
        let a = matched_bnn_ratio(50, 2700, 4).unwrap();
        let b = matched_bnn_ratio(200, 2700, 4).unwrap();
        assert!(a > b && b > 0.0 && a < 0.5);
        assert!(matched_bnn_ratio(0, 2700, 4).is_err());
    }
}
