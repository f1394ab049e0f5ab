//! Gaussian-mixture simulation designs.
//!
//! Each class-conditional distribution is a finite mixture of multivariate
//! normals. Because the densities are known, the posterior
//! `η(x) = P(Y = 1 | X = x)` and hence the Bayes classifier are available in
//! closed form, which the evaluation module uses as the risk floor.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One weighted Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl MixtureComponent {
    pub fn isotropic(weight: f64, mean: Vec<f64>, variance: f64) -> Self {
        let d = mean.len();
        let covariance = (0..d)
            .map(|i| (0..d).map(|j| if i == j { variance } else { 0.0 }).collect())
            .collect();
        Self {
            weight,
            mean,
            covariance,
        }
    }
}

#[derive(Debug, Clone)]
struct Prepared {
    log_weight: f64,
    // Lower Cholesky factor, row-major d×d.
    chol: Vec<f64>,
    // −½(d ln 2π + ln det Σ)
    log_norm: f64,
}

/// Two-class generative model: prior `π₁` plus one Gaussian mixture per
/// class.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct GaussianMixtureSpec {
    pi1: f64,
    class1: Vec<MixtureComponent>,
    class0: Vec<MixtureComponent>,
    dim: usize,
    prep1: Vec<Prepared>,
    prep0: Vec<Prepared>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    pi1: f64,
    class1: Vec<MixtureComponent>,
    class0: Vec<MixtureComponent>,
}

impl TryFrom<RawSpec> for GaussianMixtureSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.pi1, raw.class1, raw.class0)
    }
}

impl From<GaussianMixtureSpec> for RawSpec {
    fn from(s: GaussianMixtureSpec) -> Self {
        RawSpec {
            pi1: s.pi1,
            class1: s.class1,
            class0: s.class0,
        }
    }
}

impl PartialEq for GaussianMixtureSpec {
    fn eq(&self, other: &Self) -> bool {
        self.pi1 == other.pi1 && self.class1 == other.class1 && self.class0 == other.class0
    }
}

impl GaussianMixtureSpec {
    pub fn new(pi1: f64, class1: Vec<MixtureComponent>, class0: Vec<MixtureComponent>) -> Result<Self> {
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::out_of_range("pi1", pi1, "0 < pi1 < 1"));
        }
        let dim = class1
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::Config("class 1 has no components".into()))?;
        if dim == 0 {
            return Err(Error::out_of_range("d", 0, "d >= 1"));
        }
        let prep1 = prepare(&class1, dim)?;
        let prep0 = prepare(&class0, dim)?;
        Ok(Self {
            pi1,
            class1,
            class0,
            dim,
            prep1,
            prep0,
        })
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class1(&self) -> &[MixtureComponent] {
        &self.class1
    }

    pub fn class0(&self) -> &[MixtureComponent] {
        &self.class0
    }

    /// Same mixtures with a different prior.
    pub fn with_prior(&self, pi1: f64) -> Result<Self> {
        Self::new(pi1, self.class1.clone(), self.class0.clone())
    }

    /// Relabels the classes: `(P₁, π₁) ↔ (P₀, 1 − π₁)`.
    pub fn swapped(&self) -> Self {
        Self {
            pi1: 1.0 - self.pi1,
            class1: self.class0.clone(),
            class0: self.class1.clone(),
            dim: self.dim,
            prep1: self.prep0.clone(),
            prep0: self.prep1.clone(),
        }
    }

    /// Draws `n` labelled observations.
    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let d = self.dim;
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; d];
        for _ in 0..n {
            let y: Label = Label::from(rng.random::<f64>() < self.pi1);
            let (comps, prep) = if y == 1 {
                (&self.class1, &self.prep1)
            } else {
                (&self.class0, &self.prep0)
            };
            let c = pick_component(comps, rng);
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            let l = &prep[c].chol;
            let mean = &comps[c].mean;
            for i in 0..d {
                let mut v = mean[i];
                for (j, zj) in z.iter().enumerate().take(i + 1) {
                    v += l[i * d + j] * zj;
                }
                features.push(v);
            }
            labels.push(y);
        }
        Ok(Dataset::from_parts_unchecked(features, labels, d))
    }

    /// `ln f₁(x)` or `ln f₀(x)`.
    pub fn log_density(&self, label: Label, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(if label == 1 {
            mixture_log_density(&self.class1, &self.prep1, x)
        } else {
            mixture_log_density(&self.class0, &self.prep0, x)
        })
    }

    /// `ln(π₁ f₁(x)) − ln(π₀ f₀(x))`.
    pub fn log_odds(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let l1 = self.pi1.ln() + mixture_log_density(&self.class1, &self.prep1, x);
        let l0 = (1.0 - self.pi1).ln() + mixture_log_density(&self.class0, &self.prep0, x);
        Ok(l1 - l0)
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
}

fn prepare(comps: &[MixtureComponent], dim: usize) -> Result<Vec<Prepared>> {
    if comps.is_empty() {
        return Err(Error::Config("mixture has no components".into()));
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 || comps.iter().any(|c| !(c.weight > 0.0)) {
        return Err(Error::Config(format!(
            "mixture weights must be positive and sum to 1 (got {total})"
        )));
    }
    comps
        .iter()
        .map(|c| {
            if c.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.mean.len(),
                });
            }
            if c.covariance.len() != dim || c.covariance.iter().any(|r| r.len() != dim) {
                return Err(Error::Config(format!("covariance must be {dim}x{dim}")));
            }
            let m = DMatrix::from_fn(dim, dim, |i, j| c.covariance[i][j]);
            if (0..dim).any(|i| (0..i).any(|j| m[(i, j)] != m[(j, i)])) {
                return Err(Error::Config("covariance is not symmetric".into()));
            }
            let chol = m
                .cholesky()
                .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
            let l = chol.l();
            let log_det: f64 = 2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>();
            let mut flat = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..=i {
                    flat[i * dim + j] = l[(i, j)];
                }
            }
            Ok(Prepared {
                log_weight: c.weight.ln(),
                chol: flat,
                log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
            })
        })
        .collect()
}

fn pick_component(comps: &[MixtureComponent], rng: &mut SeededRng) -> usize {
    if comps.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, c) in comps.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    comps.len() - 1
}

fn mixture_log_density(comps: &[MixtureComponent], prep: &[Prepared], x: &[f64]) -> f64 {
    let d = x.len();
    let mut z = vec![0.0; d];
    let terms: Vec<f64> = comps
        .iter()
        .zip(prep)
        .map(|(c, p)| {
            // Forward substitution: L z = x − μ.
            let mut quad = 0.0;
            for i in 0..d {
                let mut v = x[i] - c.mean[i];
                for j in 0..i {
                    v -= p.chol[i * d + j] * z[j];
                }
                z[i] = v / p.chol[i * d + i];
                quad += z[i] * z[i];
            }
            p.log_weight + p.log_norm - 0.5 * quad
        })
        .collect();
    log_sum_exp(&terms)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Simulation designs 1–3 in dimension `d`.
///
/// 1. `P₁ = N(0, I)`, `P₀ = N((2/√d)·1, I)`, `π₁ = 1/3`.
/// 2. Bimodal: `P₁ = ½N(0, I) + ½N(3·1, 2I)`, `P₀ = ½N(1.5·1, I) + ½N(4.5·1, 2I)`,
///    `π₁ = 1/3`.
/// 3. As 2 with covariances `Σ` and `2Σ`, `Σ` Toeplitz with first row
///    `0.6^{j−1}`, and `π₁ = 1/2`.
pub fn simulation_spec(id: u8, d: usize) -> Result<GaussianMixtureSpec> {
    if d == 0 {
        return Err(Error::out_of_range("d", 0, "d >= 1"));
    }
    let fill = |v: f64| vec![v; d];
    match id {
        1 => GaussianMixtureSpec::new(
            1.0 / 3.0,
            vec![MixtureComponent::isotropic(1.0, fill(0.0), 1.0)],
            vec![MixtureComponent::isotropic(1.0, fill(2.0 / (d as f64).sqrt()), 1.0)],
        ),
        2 => GaussianMixtureSpec::new(
            1.0 / 3.0,
            vec![
                MixtureComponent::isotropic(0.5, fill(0.0), 1.0),
                MixtureComponent::isotropic(0.5, fill(3.0), 2.0),
            ],
            vec![
                MixtureComponent::isotropic(0.5, fill(1.5), 1.0),
                MixtureComponent::isotropic(0.5, fill(4.5), 2.0),
            ],
        ),
        3 => {
            let sigma = toeplitz(d, 0.6);
            let twice: Vec<Vec<f64>> = sigma
                .iter()
                .map(|r| r.iter().map(|v| 2.0 * v).collect())
                .collect();
            let comp = |mean: f64, cov: &Vec<Vec<f64>>| MixtureComponent {
                weight: 0.5,
                mean: fill(mean),
                covariance: cov.clone(),
            };
            GaussianMixtureSpec::new(
                0.5,
                vec![comp(0.0, &sigma), comp(3.0, &twice)],
                vec![comp(1.5, &sigma), comp(4.5, &twice)],
            )
        }
        other => Err(Error::out_of_range("simulation id", other, "1, 2 or 3")),
    }
}

/// Symmetric Toeplitz matrix with entries `ρ^{|i−j|}`.
pub fn toeplitz(d: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| rho.powi(i.abs_diff(j) as i32)).collect())
        .collect()
}

/// Posterior probability `η(x) = π₁f₁ / (π₁f₁ + π₀f₀)`, evaluated from the
/// log-odds.
pub fn eta(spec: &GaussianMixtureSpec, x: &[f64]) -> Result<f64> {
    let t = spec.log_odds(x)?;
    Ok(1.0 / (1.0 + (-t).exp()))
}

/// Bayes rule `1{η(x) ≥ 1/2}`, i.e. `1{log-odds ≥ 0}`.
pub fn bayes_classify(spec: &GaussianMixtureSpec, x: &[f64]) -> Result<Label> {
    Ok(Label::from(spec.log_odds(x)? >= 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simulation_one_layout() {
        let s = simulation_spec(1, 4).unwrap();
        assert_eq!(s.class0()[0].mean, vec![1.0; 4]);
        assert_eq!(s.class1()[0].mean, vec![0.0; 4]);
        assert_relative_eq!(s.pi1(), 1.0 / 3.0);
    }

    #[test]
    fn simulation_two_and_three_layout() {
        let s = simulation_spec(2, 5).unwrap();
        assert_eq!(
            s.class1().iter().map(|c| c.weight).collect::<Vec<_>>(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            s.class0().iter().map(|c| c.weight).collect::<Vec<_>>(),
            vec![0.5, 0.5]
        );
        assert_eq!(s.class0()[1].mean, vec![4.5; 5]);
        assert_eq!(s.class1()[1].covariance[2][2], 2.0);

        let s = simulation_spec(3, 3).unwrap();
        assert_relative_eq!(s.pi1(), 0.5);
        let row = &s.class1()[0].covariance[0];
        assert_relative_eq!(row[0], 1.0);
        assert_relative_eq!(row[1], 0.6);
        assert_relative_eq!(row[2], 0.36, max_relative = 1e-15);
        assert_relative_eq!(s.class0()[1].covariance[0][1], 1.2);
        assert!(simulation_spec(4, 3).is_err());
        assert!(simulation_spec(1, 0).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let c = || vec![MixtureComponent::isotropic(1.0, vec![0.0], 1.0)];
        assert!(GaussianMixtureSpec::new(1.0, c(), c()).is_err());
        let bad = vec![MixtureComponent::isotropic(0.7, vec![0.0], 1.0)];
        assert!(GaussianMixtureSpec::new(0.5, bad, c()).is_err());
        let indefinite = vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0, 0.0],
            covariance: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        }];
        let ok2 = vec![MixtureComponent::isotropic(1.0, vec![0.0, 0.0], 1.0)];
        assert!(GaussianMixtureSpec::new(0.5, indefinite, ok2).is_err());
    }

    #[test]
    fn eta_midpoint_and_bulk() {
        for d in [1, 2, 4, 8] {
            let s = simulation_spec(1, d).unwrap().with_prior(0.5).unwrap();
            let mid = vec![1.0 / (d as f64).sqrt(); d];
            assert_relative_eq!(eta(&s, &mid).unwrap(), 0.5, epsilon = 1e-12);
            assert_eq!(bayes_classify(&s, &mid).unwrap(), 1);
        }
        let s = simulation_spec(1, 4).unwrap();
        assert!(eta(&s, &[-10.0; 4]).unwrap() > 0.999);
    }

    #[test]
    fn bayes_at_class_one_mean() {
        // Density ratio f1/f0 at the class-1 mean is e^{Δ²/2} = e² > 2.
        let s = simulation_spec(1, 4).unwrap();
        let lr = s.log_density(1, &[0.0; 4]).unwrap() - s.log_density(0, &[0.0; 4]).unwrap();
        assert_relative_eq!(lr, 2.0, epsilon = 1e-12);
        assert_eq!(bayes_classify(&s, &[0.0; 4]).unwrap(), 1);
    }

    #[test]
    fn gaussian_log_density_matches_closed_form() {
        // Independent evaluation of the Toeplitz normal density in d = 2.
        let s = simulation_spec(3, 2).unwrap();
        let x = [0.3, -0.7];
        let rho: f64 = 0.6;
        let det = 1.0 - rho * rho;
        let quad = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / det;
        let f_a = (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        let y = [x[0] - 3.0, x[1] - 3.0];
        let quad2 = (y[0] * y[0] - 2.0 * rho * y[0] * y[1] + y[1] * y[1]) / (2.0 * det);
        let f_b = (-0.5 * quad2).exp() / (2.0 * std::f64::consts::PI * 2.0 * det.sqrt());
        let expect = (0.5 * f_a + 0.5 * f_b).ln();
        assert_relative_eq!(s.log_density(1, &x).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn eta_swap_symmetry_and_range() {
        let mut rng = SeededRng::new(3, 0);
        for id in 1..=3 {
            let s = simulation_spec(id, 3).unwrap();
            let t = s.swapped();
            for _ in 0..2000 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-6.0..8.0)).collect();
                let e = eta(&s, &x).unwrap();
                assert!((0.0..=1.0).contains(&e));
                assert_relative_eq!(eta(&t, &x).unwrap(), 1.0 - e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn log_density_is_finite_far_away() {
        for id in 1..=3 {
            let s = simulation_spec(id, 8).unwrap();
            let x = vec![1e6 / 8f64.sqrt(); 8];
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            assert!(s.log_density(1, &x).unwrap().is_finite());
            assert!(s.log_density(0, &neg).unwrap().is_finite());
            let e = eta(&s, &x).unwrap();
            assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = simulation_spec(2, 3).unwrap();
        let a = s.sample(100, &mut SeededRng::new(5, 1)).unwrap();
        let b = s.sample(100, &mut SeededRng::new(5, 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s.sample(100, &mut SeededRng::new(5, 2)).unwrap());
        assert!(s.sample(0, &mut SeededRng::new(5, 2)).is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let s = simulation_spec(3, 4).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: GaussianMixtureSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        assert_eq!(eta(&s, &[1.0; 4]).unwrap(), eta(&back, &[1.0; 4]).unwrap());
    }
}
