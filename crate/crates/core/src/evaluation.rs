//! Risk, regret and classification instability (CIS) estimates, with
//! replication management.
//!
//! Every replication draws its data from its own RNG substream, so results
//! do not depend on the order in which replications are scheduled.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::ensemble::{fit_oracle_wnn, Aggregation, DnnModel, Timing};
use crate::error::{Error, Result};
use crate::experiment::{split_test, Standardizer};
use crate::rng::SeededRng;
use crate::simgen::{bayes_classify, GaussianMixtureSpec};
use crate::weights::{stable_sum, WeightScheme};

/// Fraction of positions where `predictions` and `truth` differ.
pub fn empirical_risk(predictions: &[Label], truth: &[Label]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let wrong = predictions.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// `risk − bayes_risk`, unclamped.
pub fn empirical_regret(risk: f64, bayes_risk: f64) -> f64 {
    risk - bayes_risk
}

/// Mean and standard error of a set of replicate values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// `None` with a single replicate.
    pub stderr: Option<f64>,
    pub count: usize,
}

impl Summary {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = stable_sum(xs) / n;
        let stderr = (xs.len() > 1).then(|| {
            let ss = stable_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
            (ss / (n - 1.0) / n).sqrt()
        });
        Some(Self {
            mean,
            stderr,
            count: xs.len(),
        })
    }
}

/// Mean and standard error of `a − b` for samples paired by replication
/// (procedures evaluated on the same data).
pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<Summary> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Summary::from_samples(&diff).ok_or(Error::EmptyDataset)
}

/// A fitted classifier that can label a batch of rows.
pub trait Classifier: Send + Sync {
    fn predict(&self, test: &Dataset) -> Result<Vec<Label>>;

    /// Predictions plus timing. The default attributes everything to a
    /// single worker.
    fn predict_timed(&self, test: &Dataset) -> Result<(Vec<Label>, Timing)> {
        let start = Instant::now();
        let labels = self.predict(test)?;
        Ok((
            labels,
            Timing {
                per_shard: vec![start.elapsed()],
                ..Timing::default()
            },
        ))
    }
}

impl Classifier for DnnModel {
    fn predict(&self, test: &Dataset) -> Result<Vec<Label>> {
        self.predict_dataset(test).map(|(l, _)| l)
    }

    fn predict_timed(&self, test: &Dataset) -> Result<(Vec<Label>, Timing)> {
        self.predict_dataset(test)
    }
}

/// Output of [`Procedure::fit`].
pub struct Fitted {
    pub model: Box<dyn Classifier>,
    pub timing: Timing,
    /// Training rows left out by the partition.
    pub dropped: usize,
}

/// A learning procedure `Ψ`: maps a training set to a classifier.
pub trait Procedure: Send + Sync {
    fn fit(&self, train: &Dataset, rng: &mut SeededRng) -> Result<Fitted>;
}

/// Fits a WNN ensemble with `s` shards using `scheme` on every shard.
///
/// With `s = 1` this is the oracle classifier on the full training set.
/// Neighbor-count parameters larger than the shard are clamped to the shard
/// size, so the same procedure also applies to smaller training sets (such
/// as the halves used for instability on fixed data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnProcedure {
    pub mode: Aggregation,
    pub shards: usize,
    pub scheme: WeightScheme,
}

impl DnnProcedure {
    pub fn oracle(scheme: WeightScheme) -> Self {
        Self {
            mode: Aggregation::Weighted,
            shards: 1,
            scheme,
        }
    }

    fn local_scheme(&self, n: usize) -> WeightScheme {
        match self.scheme {
            WeightScheme::UniformK { k } => WeightScheme::UniformK { k: k.min(n) },
            WeightScheme::Ownn { m } => WeightScheme::Ownn { m: m.min(n) },
            ref other => other.clone(),
        }
    }
}

impl Procedure for DnnProcedure {
    fn fit(&self, train: &Dataset, rng: &mut SeededRng) -> Result<Fitted> {
        let start = Instant::now();
        if self.shards == 1 {
            let w = self.local_scheme(train.len()).weights(train.len(), train.dim())?;
            let model = fit_oracle_wnn(train, w)?;
            return Ok(Fitted {
                model: Box::new(model),
                timing: Timing {
                    per_shard: vec![start.elapsed()],
                    ..Timing::default()
                },
                dropped: 0,
            });
        }
        let partition = crate::ensemble::make_partition(train.len(), self.shards, rng)?;
        let n = partition.shard_size();
        let w = self.local_scheme(n).weights(n, train.dim())?;
        let split = start.elapsed();
        let (model, mut timing) = DnnModel::fit_timed(train, &partition, w, self.mode)?;
        // Drawing the partition and the weights is the coordinator's job.
        timing.aggregate = split;
        Ok(Fitted {
            model: Box::new(model),
            timing,
            dropped: partition.dropped().len(),
        })
    }
}

/// Where training sets for instability estimates come from.
pub trait PairSource: Sync {
    /// Two training sets that are i.i.d. copies of each other.
    fn draw_pair(&self, rng: &mut SeededRng) -> Result<(Dataset, Dataset)>;
}

/// Two fresh draws of `n` from a known distribution.
pub struct SimulatedPairs<'a> {
    pub spec: &'a GaussianMixtureSpec,
    pub n: usize,
}

impl PairSource for SimulatedPairs<'_> {
    fn draw_pair(&self, rng: &mut SeededRng) -> Result<(Dataset, Dataset)> {
        let a = self.spec.sample(self.n, &mut rng.substream(0))?;
        let b = self.spec.sample(self.n, &mut rng.substream(1))?;
        Ok((a, b))
    }
}

/// Two disjoint random halves of a fixed dataset.
pub struct DisjointHalves<'a> {
    pub data: &'a Dataset,
}

impl PairSource for DisjointHalves<'_> {
    fn draw_pair(&self, rng: &mut SeededRng) -> Result<(Dataset, Dataset)> {
        disjoint_halves(self.data, rng)
    }
}

pub fn disjoint_halves(data: &Dataset, rng: &mut SeededRng) -> Result<(Dataset, Dataset)> {
    let half = data.len() / 2;
    if half == 0 {
        return Err(Error::out_of_range(
            "N",
            data.len(),
            "at least 2 rows to form two training sets",
        ));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let (a, rest) = idx.split_at_mut(half);
    let b = &mut rest[..half];
    a.sort_unstable();
    b.sort_unstable();
    Ok((data.subset(a)?, data.subset(b)?))
}

/// Monte Carlo CIS: average disagreement on `test` between `Ψ(D₁)` and
/// `Ψ(D₂)` over `replications` independent pairs.
pub fn empirical_cis<P, S>(
    procedure: &P,
    source: &S,
    test: &Dataset,
    replications: usize,
    rng: &SeededRng,
) -> Result<Summary>
where
    P: Procedure + ?Sized,
    S: PairSource + ?Sized,
{
    if replications == 0 {
        return Err(Error::out_of_range("replications", 0, ">= 1"));
    }
    let rates: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let rep = rng.substream(r);
            let (d1, d2) = source.draw_pair(&mut rep.substream(0))?;
            let a = procedure.fit(&d1, &mut rep.substream(1))?;
            let b = procedure.fit(&d2, &mut rep.substream(2))?;
            empirical_risk(&a.model.predict(test)?, &b.model.predict(test)?)
        })
        .collect::<Result<_>>()?;
    Ok(Summary::from_samples(&rates).expect("at least one replication"))
}

/// Data for the replications of an experiment.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh training and test draws from a known distribution.
    Simulation {
        spec: GaussianMixtureSpec,
        n_train: usize,
        n_test: usize,
    },
    /// A fixed dataset, re-split into training and test rows per replication.
    Fixed { data: Dataset, standardize: bool },
}

/// One replication's data.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub train: Dataset,
    pub test: Dataset,
    /// Test error of the Bayes rule on `test`, when the distribution is known.
    pub bayes_risk: Option<f64>,
    /// Training pair for instability, when requested.
    pub cis_pair: Option<CisPair>,
}

/// The two training sets compared by the instability estimate.
#[derive(Debug, Clone)]
pub enum CisPair {
    /// The replication's own training set against this independent copy.
    WithTrain(Dataset),
    /// Two disjoint halves of the training rows.
    Halves(Dataset, Dataset),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Simulation { spec, .. } => spec.dim(),
            DataSource::Fixed { data, .. } => data.dim(),
        }
    }

    /// Training-set size used by every replication.
    pub fn train_size(&self) -> usize {
        match self {
            DataSource::Simulation { n_train, .. } => *n_train,
            DataSource::Fixed { data, .. } => data.len() - crate::experiment::test_size(data.len()),
        }
    }

    pub fn spec(&self) -> Option<&GaussianMixtureSpec> {
        match self {
            DataSource::Simulation { spec, .. } => Some(spec),
            DataSource::Fixed { .. } => None,
        }
    }

    /// Draws replication data from `rng` (typically a per-replication
    /// substream).
    ///
    /// For simulations the instability pair is `(train, fresh draw)`; for
    /// fixed data it is two disjoint halves of the training rows.
    pub fn draw(&self, rng: &SeededRng, with_cis: bool) -> Result<Replicate> {
        match self {
            DataSource::Simulation {
                spec,
                n_train,
                n_test,
            } => {
                let train = spec.sample(*n_train, &mut rng.substream(0))?;
                let test = spec.sample(*n_test, &mut rng.substream(1))?;
                let bayes: Vec<Label> = test
                    .rows()
                    .map(|x| bayes_classify(spec, x))
                    .collect::<Result<_>>()?;
                let bayes_risk = Some(empirical_risk(&bayes, test.labels())?);
                let cis_pair = if with_cis {
                    Some(CisPair::WithTrain(spec.sample(*n_train, &mut rng.substream(2))?))
                } else {
                    None
                };
                Ok(Replicate {
                    train,
                    test,
                    bayes_risk,
                    cis_pair,
                })
            }
            DataSource::Fixed { data, standardize } => {
                let (mut train, mut test) = split_test(data, &mut rng.substream(0))?;
                if *standardize {
                    let scaler = Standardizer::fit(&train);
                    scaler.apply(&mut train);
                    scaler.apply(&mut test);
                }
                let cis_pair = if with_cis {
                    let (a, b) = disjoint_halves(&train, &mut rng.substream(2))?;
                    Some(CisPair::Halves(a, b))
                } else {
                    None
                };
                Ok(Replicate {
                    train,
                    test,
                    bayes_risk: None,
                    cis_pair,
                })
            }
        }
    }
}

/// What one procedure produced in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub risk: f64,
    pub bayes_risk: Option<f64>,
    pub cis: Option<f64>,
    /// Slowest shard build, seconds.
    pub fit_seconds: f64,
    /// Slowest shard's batch prediction plus aggregation, seconds.
    pub predict_seconds: f64,
    /// Fit and predict work summed over shards, seconds.
    pub serial_seconds: f64,
    pub test_size: usize,
    pub dropped: usize,
}

fn observe(
    procedure: &dyn Procedure,
    rep: &Replicate,
    rng: &SeededRng,
) -> Result<Observation> {
    let fitted = procedure.fit(&rep.train, &mut rng.substream(0))?;
    let (pred, ptime) = fitted.model.predict_timed(&rep.test)?;
    let risk = empirical_risk(&pred, rep.test.labels())?;
    let refit = |data: &Dataset, tag: u64| -> Result<Vec<Label>> {
        procedure
            .fit(data, &mut rng.substream(tag))?
            .model
            .predict(&rep.test)
    };
    let cis = match &rep.cis_pair {
        Some(CisPair::WithTrain(other)) => Some(empirical_risk(&pred, &refit(other, 2)?)?),
        Some(CisPair::Halves(a, b)) => Some(empirical_risk(&refit(a, 1)?, &refit(b, 2)?)?),
        None => None,
    };
    Ok(Observation {
        risk,
        bayes_risk: rep.bayes_risk,
        cis,
        fit_seconds: fitted.timing.critical_path().as_secs_f64(),
        predict_seconds: ptime.critical_path().as_secs_f64(),
        serial_seconds: (fitted.timing.serial() + ptime.serial()).as_secs_f64(),
        test_size: rep.test.len(),
        dropped: fitted.dropped,
    })
}

/// Aggregated results for one procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedStats {
    pub replications: usize,
    pub risk: Summary,
    pub bayes_risk: Option<Summary>,
    pub regret: Option<Summary>,
    pub cis: Option<Summary>,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub per_query_seconds: f64,
    pub serial_seconds: f64,
    pub dropped: usize,
    /// Per-replication risks, in replication order.
    pub risk_samples: Vec<f64>,
    /// Per-replication instability estimates; empty when not requested.
    pub cis_samples: Vec<f64>,
}

impl ReplicatedStats {
    pub fn from_observations(obs: &[Observation]) -> Option<Self> {
        let first = obs.first()?;
        let col = |f: &dyn Fn(&Observation) -> f64| obs.iter().map(f).collect::<Vec<f64>>();
        let mean = |f: &dyn Fn(&Observation) -> f64| stable_sum(col(f)) / obs.len() as f64;
        let bayes: Option<Vec<f64>> = obs.iter().map(|o| o.bayes_risk).collect();
        let cis: Option<Vec<f64>> = obs.iter().map(|o| o.cis).collect();
        let regret = bayes.as_ref().map(|b| {
            obs.iter()
                .zip(b)
                .map(|(o, b)| empirical_regret(o.risk, *b))
                .collect::<Vec<f64>>()
        });
        Some(Self {
            replications: obs.len(),
            risk: Summary::from_samples(&col(&|o| o.risk))?,
            bayes_risk: bayes.as_deref().and_then(Summary::from_samples),
            regret: regret.as_deref().and_then(Summary::from_samples),
            cis: cis.as_deref().and_then(Summary::from_samples),
            fit_seconds: mean(&|o| o.fit_seconds),
            predict_seconds: mean(&|o| o.predict_seconds),
            per_query_seconds: mean(&|o| o.predict_seconds / o.test_size as f64),
            serial_seconds: mean(&|o| o.serial_seconds),
            dropped: first.dropped,
            risk_samples: col(&|o| o.risk),
            cis_samples: cis.unwrap_or_default(),
        })
    }
}

/// Runs `replications` independent (draw, fit, predict, score) rounds for
/// every procedure. All procedures see the same data in a given round.
///
/// Returns one result per procedure; a procedure that fails in any round
/// reports that error without affecting the others.
pub fn run_replicated(
    procedures: &[&dyn Procedure],
    source: &DataSource,
    replications: usize,
    with_cis: bool,
    rng: &SeededRng,
) -> Result<Vec<Result<ReplicatedStats>>> {
    if replications == 0 {
        return Err(Error::out_of_range("replications", 0, ">= 1"));
    }
    let rounds: Vec<Vec<Result<Observation>>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let rep_rng = rng.substream(r);
            let rep = source.draw(&rep_rng.substream(0), with_cis)?;
            Ok(procedures
                .iter()
                .enumerate()
                .map(|(p, proc_)| observe(*proc_, &rep, &rep_rng.derive(&[1, p as u64])))
                .collect())
        })
        .collect::<Result<_>>()?;

    Ok((0..procedures.len())
        .map(|p| {
            let obs: Vec<Observation> = rounds
                .iter()
                .map(|round| round[p].as_ref().copied().map_err(|e| e.to_string()))
                .collect::<Result<_, String>>()
                .map_err(Error::Replication)?;
            Ok(ReplicatedStats::from_observations(&obs).expect("replications >= 1"))
        })
        .collect())
}

/// Fully labelled result for one cell of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub gamma: f64,
    pub s: usize,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    /// Name of the local tuning parameter (`k`, `l` or `q`).
    pub param: String,
    pub param_value: f64,
    pub stats: ReplicatedStats,
}
