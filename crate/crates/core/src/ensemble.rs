//! Distributed nearest-neighbor ensembles.
//!
//! The training set is split into `s` disjoint shards of equal size `n`.
//! Every shard runs the same weighted nearest-neighbor rule on its own data
//! and only its local output leaves the shard:
//!
//! * [`Aggregation::Majority`] (M-DNN) thresholds each shard's regression
//!   estimate at 1/2 and takes a majority vote of the resulting labels;
//! * [`Aggregation::Weighted`] (W-DNN) averages the regression estimates and
//!   thresholds the mean.
//!
//! A model with a single shard is the ordinary ("oracle") WNN classifier.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::neighbors::KdTree;
use crate::rng::SeededRng;
use crate::weights::{stable_sum, WeightVector};

/// How shard outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Majority,
    Weighted,
}

/// Random split of `N` rows into `s` shards of `n = ⌊N/s⌋` rows each.
///
/// The `N mod s` leftover rows are left out of training. Row indices inside
/// each shard are kept in ascending order, so neighbor ties inside a shard
/// resolve exactly as they would on the full dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<Option<usize>>,
    shards: Vec<Vec<usize>>,
    dropped: Vec<usize>,
}

impl Partition {
    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    /// Rows per shard.
    pub fn shard_size(&self) -> usize {
        self.shards[0].len()
    }

    pub fn shard(&self, j: usize) -> &[usize] {
        &self.shards[j]
    }

    /// Shard of each row, `None` for held-out leftovers.
    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }
}

/// Shuffles `0..total` and deals it into `s` equal shards.
pub fn make_partition(total: usize, s: usize, rng: &mut SeededRng) -> Result<Partition> {
    if s == 0 || s > total {
        return Err(Error::out_of_range("s", s, format!("1 <= s <= N = {total}")));
    }
    let n = total / s;
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(rng);
    let mut assignment = vec![None; total];
    let shards: Vec<Vec<usize>> = perm[..n * s]
        .chunks_exact(n)
        .enumerate()
        .map(|(j, chunk)| {
            let mut rows = chunk.to_vec();
            rows.sort_unstable();
            for &i in &rows {
                assignment[i] = Some(j);
            }
            rows
        })
        .collect();
    let mut dropped = perm[n * s..].to_vec();
    dropped.sort_unstable();
    Ok(Partition {
        assignment,
        shards,
        dropped,
    })
}

/// One shard's training rows plus its search index.
#[derive(Debug, Clone)]
pub struct Shard {
    data: Dataset,
    tree: KdTree,
}

impl Shard {
    pub fn new(data: Dataset) -> Self {
        let tree = KdTree::build(&data);
        Self { data, tree }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn regress_unchecked(&self, w: &WeightVector, x: &[f64]) -> Result<f64> {
        let order = self.tree.order(x, w.support())?;
        let ws = w.as_slice();
        Ok(order
            .indices
            .iter()
            .zip(ws)
            .filter(|(&i, _)| self.data.label(i) == 1)
            .map(|(_, &wi)| wi)
            .sum())
    }
}

/// `Ŝ(x) = Σᵢ wᵢ Y₍ᵢ₎` over the shard's own neighbor ordering.
pub fn local_regress(shard: &Shard, w: &WeightVector, x: &[f64]) -> Result<f64> {
    if w.len() != shard.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: shard.len(),
        });
    }
    shard.regress_unchecked(w, x)
}

/// `1{Ŝ(x) ≥ 1/2}`.
pub fn local_classify(shard: &Shard, w: &WeightVector, x: &[f64]) -> Result<Label> {
    local_regress(shard, w, x).map(threshold)
}

#[inline]
pub fn threshold(estimate: f64) -> Label {
    Label::from(estimate >= 0.5)
}

/// Combines one query's shard outputs (regression estimates in `[0, 1]`).
///
/// The result does not depend on the order of `locals`: majority counts
/// votes, and the weighted mean sums the sorted estimates.
pub fn aggregate(mode: Aggregation, locals: &[f64]) -> Label {
    let s = locals.len();
    match mode {
        Aggregation::Majority => {
            let votes = locals.iter().filter(|&&v| threshold(v) == 1).count();
            Label::from(2 * votes >= s)
        }
        Aggregation::Weighted => {
            if s == 1 {
                return threshold(locals[0]);
            }
            let mut sorted = locals.to_vec();
            sorted.sort_unstable_by(f64::total_cmp);
            Label::from(stable_sum(&sorted) >= 0.5 * s as f64)
        }
    }
}

/// Wall-clock cost of a fit or of one batch prediction, per shard.
///
/// `critical_path` is what a deployment with one worker per shard would
/// observe: the slowest shard plus the aggregation step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timing {
    pub per_shard: Vec<Duration>,
    pub aggregate: Duration,
}

impl Timing {
    pub fn critical_path(&self) -> Duration {
        self.per_shard.iter().max().copied().unwrap_or_default() + self.aggregate
    }

    pub fn serial(&self) -> Duration {
        self.per_shard.iter().sum::<Duration>() + self.aggregate
    }
}

/// A fitted distributed (or, with one shard, oracle) WNN classifier.
#[derive(Debug, Clone)]
pub struct DnnModel {
    shards: Vec<Shard>,
    weights: WeightVector,
    mode: Aggregation,
    dim: usize,
}

impl DnnModel {
    /// Fits one shard per partition block; all shards share `weights`.
    pub fn fit(
        data: &Dataset,
        partition: &Partition,
        weights: WeightVector,
        mode: Aggregation,
    ) -> Result<Self> {
        Self::fit_timed(data, partition, weights, mode).map(|(m, _)| m)
    }

    pub fn fit_timed(
        data: &Dataset,
        partition: &Partition,
        weights: WeightVector,
        mode: Aggregation,
    ) -> Result<(Self, Timing)> {
        if partition.assignment().len() != data.len() {
            return Err(Error::LengthMismatch {
                left: partition.assignment().len(),
                right: data.len(),
            });
        }
        if weights.len() != partition.shard_size() {
            return Err(Error::LengthMismatch {
                left: weights.len(),
                right: partition.shard_size(),
            });
        }
        let built: Vec<(Shard, Duration)> = partition
            .shards
            .par_iter()
            .map(|rows| {
                let start = Instant::now();
                let shard = data.subset(rows).map(Shard::new)?;
                Ok((shard, start.elapsed()))
            })
            .collect::<Result<_>>()?;
        let (shards, per_shard) = built.into_iter().unzip();
        let model = Self {
            shards,
            weights,
            mode,
            dim: data.dim(),
        };
        Ok((
            model,
            Timing {
                per_shard,
                aggregate: Duration::ZERO,
            },
        ))
    }

    /// Draws a random partition into `s` shards and fits on it. Returns the
    /// number of rows left out.
    pub fn fit_random(
        data: &Dataset,
        s: usize,
        weights: WeightVector,
        mode: Aggregation,
        rng: &mut SeededRng,
    ) -> Result<(Self, usize)> {
        let partition = make_partition(data.len(), s, rng)?;
        let dropped = partition.dropped().len();
        Self::fit(data, &partition, weights, mode).map(|m| (m, dropped))
    }

    /// Builds a model from already-split shards.
    pub fn from_shards(shards: Vec<Dataset>, weights: WeightVector, mode: Aggregation) -> Result<Self> {
        let first = shards.first().ok_or(Error::EmptyDataset)?;
        let dim = first.dim();
        for shard in &shards {
            if shard.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: shard.dim(),
                });
            }
            if shard.len() != weights.len() {
                return Err(Error::LengthMismatch {
                    left: weights.len(),
                    right: shard.len(),
                });
            }
        }
        Ok(Self {
            shards: shards.into_iter().map(Shard::new).collect(),
            weights,
            mode,
            dim,
        })
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_size(&self) -> usize {
        self.weights.len()
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn mode(&self) -> Aggregation {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Each shard's regression estimate at `x`, in shard order.
    pub fn local_estimates(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.shards
            .iter()
            .map(|s| s.regress_unchecked(&self.weights, x))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let locals = self.local_estimates(x)?;
        Ok(aggregate(self.mode, &locals))
    }

    /// Predicts every query. Output is independent of thread count.
    pub fn predict_batch<Q: AsRef<[f64]> + Sync>(&self, queries: &[Q]) -> Result<Vec<Label>> {
        let rows: Vec<&[f64]> = queries.iter().map(AsRef::as_ref).collect();
        self.predict_rows(&rows).map(|(labels, _)| labels)
    }

    /// Predicts every row of `test` (labels ignored) and reports per-shard
    /// timing.
    pub fn predict_dataset(&self, test: &Dataset) -> Result<(Vec<Label>, Timing)> {
        let rows: Vec<&[f64]> = test.rows().collect();
        self.predict_rows(&rows)
    }

    /// Shard-major evaluation: each shard scores the whole batch, then the
    /// per-query outputs are aggregated.
    pub fn predict_rows(&self, rows: &[&[f64]]) -> Result<(Vec<Label>, Timing)> {
        for x in rows {
            self.check_dim(x)?;
        }
        let scored: Vec<(Vec<f64>, Duration)> = self
            .shards
            .par_iter()
            .map(|shard| {
                let start = Instant::now();
                let est = rows
                    .iter()
                    .map(|x| shard.regress_unchecked(&self.weights, x))
                    .collect::<Result<Vec<f64>>>()?;
                Ok((est, start.elapsed()))
            })
            .collect::<Result<_>>()?;
        let start = Instant::now();
        let labels: Vec<Label> = (0..rows.len())
            .into_par_iter()
            .map_init(
                || Vec::with_capacity(scored.len()),
                |buf, q| {
                    buf.clear();
                    buf.extend(scored.iter().map(|(est, _)| est[q]));
                    aggregate(self.mode, buf)
                },
            )
            .collect();
        let timing = Timing {
            per_shard: scored.iter().map(|(_, t)| *t).collect(),
            aggregate: start.elapsed(),
        };
        Ok((labels, timing))
    }

    /// Writes the model as versioned JSON. Floats round-trip exactly.
    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            mode: self.mode,
            dim: self.dim,
            weights: self.weights.clone(),
            shards: self.shards.iter().map(|s| s.data.clone()).collect(),
        };
        serde_json::to_writer(writer, &file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_reader(reader).map_err(|e| Error::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unknown format tag {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let model = Self::from_shards(file.shards, file.weights, file.mode)?;
        if model.dim != file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.dim,
                actual: model.dim,
            });
        }
        Ok(model)
    }
}

const MODEL_FORMAT: &str = "dnn-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    mode: Aggregation,
    dim: usize,
    weights: WeightVector,
    shards: Vec<Dataset>,
}

/// Single-shard model over all of `data`: the ordinary WNN classifier.
pub fn fit_oracle_wnn(data: &Dataset, w: WeightVector) -> Result<DnnModel> {
    if w.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: data.len(),
        });
    }
    Ok(DnnModel {
        shards: vec![Shard::new(data.clone())],
        weights: w,
        mode: Aggregation::Weighted,
        dim: data.dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::order_neighbors;
    use crate::weights::{bnn_weights, ownn_weights, uniform_k_weights};
    use rand::Rng;

    fn toy(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed, 0);
        let features = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        Dataset::new(features, labels, d).unwrap()
    }

    #[test]
    fn partition_examples() {
        let mut rng = SeededRng::new(1, 0);
        let p = make_partition(10, 1, &mut rng).unwrap();
        assert_eq!(p.num_shards(), 1);
        assert_eq!(p.shard(0), &(0..10).collect::<Vec<_>>()[..]);

        let p = make_partition(10, 5, &mut rng).unwrap();
        assert_eq!(p.num_shards(), 5);
        assert!((0..5).all(|j| p.shard(j).len() == 2));
        assert!(p.dropped().is_empty());

        let p = make_partition(10, 3, &mut rng).unwrap();
        assert!((0..3).all(|j| p.shard(j).len() == 3));
        assert_eq!(p.dropped().len(), 1);
        assert_eq!(p.assignment().iter().filter(|a| a.is_none()).count(), 1);
        let mut all: Vec<usize> = (0..3).flat_map(|j| p.shard(j).to_vec()).collect();
        all.extend_from_slice(p.dropped());
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        assert!(make_partition(3, 4, &mut rng).is_err());
        assert!(make_partition(3, 0, &mut rng).is_err());
    }

    #[test]
    fn partition_is_a_function_of_the_stream() {
        let a = make_partition(100, 7, &mut SeededRng::new(4, 2)).unwrap();
        let b = make_partition(100, 7, &mut SeededRng::new(4, 2)).unwrap();
        let c = make_partition(100, 7, &mut SeededRng::new(4, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn local_regress_examples() {
        let ones = Shard::new(Dataset::new(vec![0.0, 1.0, 2.0], vec![1, 1, 1], 1).unwrap());
        let zeros = Shard::new(Dataset::new(vec![0.0, 1.0, 2.0], vec![0, 0, 0], 1).unwrap());
        for w in [
            uniform_k_weights(3, 2).unwrap(),
            ownn_weights(3, 3, 1).unwrap(),
            bnn_weights(3, 0.4).unwrap(),
        ] {
            assert!((local_regress(&ones, &w, &[0.5]).unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(local_regress(&zeros, &w, &[0.5]).unwrap(), 0.0);
        }
        let two = Shard::new(Dataset::new(vec![0.0, 1.0], vec![1, 0], 1).unwrap());
        let w = uniform_k_weights(2, 1).unwrap();
        assert_eq!(local_regress(&two, &w, &[0.1]).unwrap(), 1.0);
        assert_eq!(local_classify(&two, &w, &[0.1]).unwrap(), 1);
        assert!(local_regress(&two, &w, &[0.1, 0.2]).is_err());
        assert!(local_regress(&two, &uniform_k_weights(3, 1).unwrap(), &[0.1]).is_err());
    }

    #[test]
    fn threshold_uses_greater_or_equal() {
        assert_eq!(threshold(0.5), 1);
        assert_eq!(threshold(0.49), 0);
        assert_eq!(threshold(0.51), 1);
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate(Aggregation::Majority, &[1.0, 1.0, 0.0]), 1);
        assert_eq!(aggregate(Aggregation::Majority, &[1.0, 0.0]), 1);
        assert_eq!(aggregate(Aggregation::Majority, &[0.0, 0.0, 1.0]), 0);
        assert_eq!(aggregate(Aggregation::Weighted, &[0.9, 0.0, 0.0]), 0);
        assert_eq!(aggregate(Aggregation::Majority, &[0.9, 0.0, 0.0]), 0);
        assert_eq!(aggregate(Aggregation::Weighted, &[0.9, 0.6, 0.0]), 1);
        assert_eq!(aggregate(Aggregation::Majority, &[0.9, 0.6, 0.0]), 1);
        assert_eq!(aggregate(Aggregation::Weighted, &[0.75, 0.25]), 1);
    }

    #[test]
    fn single_shard_modes_match_oracle() {
        let data = toy(80, 3, 2);
        let w = ownn_weights(80, 20, 3).unwrap();
        let oracle = fit_oracle_wnn(&data, w.clone()).unwrap();
        let mut rng = SeededRng::new(0, 0);
        let (maj, _) = DnnModel::fit_random(&data, 1, w.clone(), Aggregation::Majority, &mut rng).unwrap();
        let (wei, _) = DnnModel::fit_random(&data, 1, w.clone(), Aggregation::Weighted, &mut rng).unwrap();
        let queries = toy(200, 3, 3);
        let rows: Vec<&[f64]> = queries.rows().collect();
        let o = oracle.predict_rows(&rows).unwrap().0;
        assert_eq!(o, maj.predict_rows(&rows).unwrap().0);
        assert_eq!(o, wei.predict_rows(&rows).unwrap().0);
        // And the oracle is literally the thresholded weighted label sum.
        for (x, &p) in rows.iter().zip(&o) {
            let ord = order_neighbors(&data, x, 80).unwrap();
            let s: f64 = ord
                .indices
                .iter()
                .zip(w.as_slice())
                .map(|(&i, wi)| wi * data.label(i) as f64)
                .sum();
            assert_eq!(threshold(s), p);
        }
    }

    #[test]
    fn one_nn_shards_make_modes_agree() {
        let data = toy(120, 2, 5);
        let mut rng = SeededRng::new(8, 0);
        let p = make_partition(120, 6, &mut rng).unwrap();
        let w = uniform_k_weights(20, 1).unwrap();
        let a = DnnModel::fit(&data, &p, w.clone(), Aggregation::Majority).unwrap();
        let b = DnnModel::fit(&data, &p, w, Aggregation::Weighted).unwrap();
        let q = toy(300, 2, 6);
        let rows: Vec<&[f64]> = q.rows().collect();
        assert_eq!(a.predict_rows(&rows).unwrap().0, b.predict_rows(&rows).unwrap().0);
    }

    #[test]
    fn predict_batch_edge_cases() {
        let data = toy(30, 2, 7);
        let (model, dropped) = DnnModel::fit_random(
            &data,
            4,
            uniform_k_weights(7, 3).unwrap(),
            Aggregation::Majority,
            &mut SeededRng::new(1, 1),
        )
        .unwrap();
        assert_eq!(dropped, 2);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(model.predict_batch(&empty).unwrap().is_empty());
        let x = vec![0.2, -0.3];
        assert_eq!(model.predict_batch(&[x.clone()]).unwrap(), vec![model.predict(&x).unwrap()]);
        assert!(model.predict(&[0.0]).is_err());
        assert!(model.predict_batch(&[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn fit_rejects_mismatched_weights() {
        let data = toy(30, 2, 7);
        let p = make_partition(30, 3, &mut SeededRng::new(0, 0)).unwrap();
        assert!(DnnModel::fit(&data, &p, uniform_k_weights(9, 1).unwrap(), Aggregation::Majority).is_err());
        assert!(fit_oracle_wnn(&data, uniform_k_weights(29, 1).unwrap()).is_err());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let data = toy(90, 3, 11);
        let (model, _) = DnnModel::fit_random(
            &data,
            3,
            ownn_weights(30, 9, 3).unwrap(),
            Aggregation::Weighted,
            &mut SeededRng::new(2, 2),
        )
        .unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = DnnModel::load(&buf[..]).unwrap();
        let mut again = Vec::new();
        back.save(&mut again).unwrap();
        assert_eq!(buf, again);
        assert_eq!(back.weights(), model.weights());
        let q = toy(100, 3, 12);
        let rows: Vec<&[f64]> = q.rows().collect();
        assert_eq!(model.predict_rows(&rows).unwrap().0, back.predict_rows(&rows).unwrap().0);

        let text = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(DnnModel::load(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn timing_bookkeeping() {
        let t = Timing {
            per_shard: vec![Duration::from_millis(3), Duration::from_millis(5)],
            aggregate: Duration::from_millis(1),
        };
        assert_eq!(t.critical_path(), Duration::from_millis(6));
        assert_eq!(t.serial(), Duration::from_millis(9));
    }
}
