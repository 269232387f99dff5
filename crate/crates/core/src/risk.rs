//! Population risk of the diagonal network and the three idealized training
//! algorithms that map one training point `(x₀, y₀)` to an interpolator.
//!
//! The risk of `w` under a data distribution with second moments
//! `Σ = E xxᵀ`, `μ = E yx`, `σ² = E y²` is
//! `R(w) = ½((w^{⊙2})ᵀ Σ w^{⊙2} − 2 μᵀ w^{⊙2} + σ²)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diagnet::DiagNetProblem;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::LabRng;
use crate::sharpness::sym_eigen;

/// Population the Monte-Carlo routines draw from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// `x ~ N(0, I_d)`, `y = ⟨1, x⟩ + noise · ε`.
    Gaussian { d: usize, noise: f64 },
    /// `x ~ |N(0, I_d)|`, `y = ⟨1, x⟩ + noise · ε`.
    FoldedGaussian { d: usize, noise: f64 },
}

impl Sampler {
    pub fn dim(&self) -> usize {
        match *self {
            Sampler::Gaussian { d, .. } | Sampler::FoldedGaussian { d, .. } => d,
        }
    }

    /// One draw `(x, y)` from the population.
    pub fn draw(&self, rng: &mut LabRng) -> (Vec<f64>, f64) {
        match *self {
            Sampler::Gaussian { d, noise } => {
                let x = rng.normal_vec(d);
                let y = x.iter().sum::<f64>() + noise * rng.normal();
                (x, y)
            }
            Sampler::FoldedGaussian { d, noise } => {
                let x: Vec<f64> = rng.normal_vec(d).into_iter().map(f64::abs).collect();
                let y = x.iter().sum::<f64>() + noise * rng.normal();
                (x, y)
            }
        }
    }

    /// One training point, drawn from the population conditioned on `x ≥ 0`.
    /// For a centred Gaussian that conditional law is the folded Gaussian.
    pub fn draw_training(&self, rng: &mut LabRng) -> Sample {
        let folded = match *self {
            Sampler::Gaussian { d, noise } | Sampler::FoldedGaussian { d, noise } => {
                Sampler::FoldedGaussian { d, noise }
            }
        };
        let (x0, y0) = folded.draw(rng);
        Sample { x0, y0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataModel {
    pub sigma: Matrix,
    pub mu: Vec<f64>,
    pub sigma2: f64,
    pub sampler: Option<Sampler>,
}

impl DataModel {
    pub fn new(sigma: Matrix, mu: Vec<f64>, sigma2: f64) -> Result<Self> {
        check_dim(mu.len(), sigma.rows())?;
        check_dim(mu.len(), sigma.cols())?;
        if sigma.max_asymmetry() > 1e-12 * sigma.frobenius().max(1.0) {
            return Err(Error::NotSymmetric(sigma.max_asymmetry()));
        }
        if sigma2 < 0.0 {
            return Err(Error::InvalidArgument("σ² must be nonnegative".into()));
        }
        Ok(Self {
            sigma,
            mu,
            sigma2,
            sampler: None,
        })
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = Some(sampler);
        self
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Folded Gaussian features `x ~ |N(0, I_d)|` with `y = ⟨1, x⟩`:
/// `Σ_ii = 1`, `Σ_ij = 2/π`, `μ_i = 1 + 2(d−1)/π`, `σ² = d + 2d(d−1)/π`.
pub fn folded_gaussian_model(d: usize) -> Result<DataModel> {
    if d < 1 {
        return Err(Error::InvalidArgument("d must be ≥ 1".into()));
    }
    let df = d as f64;
    let mut sigma = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            sigma[(i, j)] = if i == j { 1.0 } else { 2.0 / PI };
        }
    }
    let mu = vec![1.0 + 2.0 * (df - 1.0) / PI; d];
    let sigma2 = df + 2.0 * df * (df - 1.0) / PI;
    Ok(DataModel::new(sigma, mu, sigma2)?.with_sampler(Sampler::FoldedGaussian { d, noise: 0.0 }))
}

/// `x ~ N(0, I_d)`, `y = ⟨1, x⟩ + ε` with `ε ~ N(0, 1)`: `Σ = I`, `μ = 1`,
/// `σ² = d + 1`. Training points come from the `x ≥ 0` conditional.
pub fn gaussian_linear_model(d: usize) -> Result<DataModel> {
    if d < 1 {
        return Err(Error::InvalidArgument("d must be ≥ 1".into()));
    }
    Ok(DataModel::new(Matrix::identity(d), vec![1.0; d], d as f64 + 1.0)?
        .with_sampler(Sampler::Gaussian { d, noise: 1.0 }))
}

/// Exact risk of `w`.
pub fn risk(w: &[f64], m: &DataModel) -> Result<f64> {
    check_dim(m.dim(), w.len())?;
    let sq: Vec<f64> = w.iter().map(|v| v * v).collect();
    Ok(risk_of_squares(&sq, m))
}

/// Risk as a function of the squared weights `w^{⊙2}`.
pub fn risk_of_squares(sq: &[f64], m: &DataModel) -> f64 {
    0.5 * (dot(sq, &m.sigma.matvec(sq)) - 2.0 * dot(&m.mu, sq) + m.sigma2)
}

/// `½(‖w^{⊙2}‖₂ − 1)² + d/2`. Agrees with [`risk`] under
/// [`gaussian_linear_model`] only when `w^{⊙2}` is 1-sparse, where
/// `⟨1, w^{⊙2}⟩ = ‖w^{⊙2}‖₂`.
pub fn gaussian_linear_risk_sparse(w: &[f64]) -> f64 {
    let n = w.iter().map(|v| v.powi(4)).sum::<f64>().sqrt();
    0.5 * (n - 1.0).powi(2) + w.len() as f64 / 2.0
}

/// `√(y₀/‖x₀‖²) · x₀^{⊙½}`, the minimum-norm interpolator of squared weights.
/// This is the risk minimizer under [`gaussian_linear_model`] only when `x₀`
/// is proportional to `1`; [`alg_opt`] is exact in general.
pub fn min_norm_interpolator(s: &Sample) -> Result<Vec<f64>> {
    s.validate()?;
    let nx = dot(&s.x0, &s.x0);
    Ok(s.x0.iter().map(|x| (s.y0 / nx * x).sqrt()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x0: Vec<f64>,
    pub y0: f64,
}

impl Sample {
    pub fn new(x0: Vec<f64>, y0: f64) -> Self {
        Self { x0, y0 }
    }

    fn validate(&self) -> Result<()> {
        if self.x0.is_empty() || !self.x0.iter().all(|v| v.is_finite()) || !self.y0.is_finite() {
            return Err(Error::InvalidArgument("sample must be finite and non-empty".into()));
        }
        if let Some(i) = self.x0.iter().position(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "x0[{i}] = {} must be positive",
                self.x0[i]
            )));
        }
        if self.y0 <= 0.0 {
            return Err(Error::InvalidArgument(format!("y0 = {} must be positive", self.y0)));
        }
        Ok(())
    }

    fn problem(&self) -> Result<DiagNetProblem> {
        self.validate()?;
        DiagNetProblem::new(self.x0.clone(), self.y0)
    }
}

/// Minimal `‖w^{⊙2}‖₁`: `√(y₀/x_max) e_{k_max}`.
pub fn alg_l1(s: &Sample) -> Result<Vec<f64>> {
    Ok(s.problem()?.l1_minimizer_set()?.canonical_representative)
}

/// Minimal sharpness: `√(y₀/x_min) e_{k_min}`.
pub fn alg_sharp(s: &Sample) -> Result<Vec<f64>> {
    Ok(s.problem()?.sharpness_minimizer_set()?.canonical_representative)
}

/// Risk minimizer over the interpolation manifold of one sample.
///
/// With `x_Σ = Σ^{-1/2} x₀` and `μ_Σ = Σ^{-1/2} μ`, the optimal squared
/// weights are `Σ^{-1/2}(P⊥ μ_Σ + y₀ x_Σ/‖x_Σ‖²)`, where `P⊥` projects onto
/// the orthogonal complement of `x_Σ`.
#[derive(Clone, Debug)]
pub struct OptSolver {
    inv_sqrt: Matrix,
    mu_sigma: Vec<f64>,
}

const SINGULAR_EIGENVALUE: f64 = 1e-12;

impl OptSolver {
    pub fn new(m: &DataModel) -> Result<Self> {
        let eig = sym_eigen(&m.sigma)?;
        let smallest = eig.values.last().copied().unwrap_or(0.0);
        if smallest < SINGULAR_EIGENVALUE {
            return Err(Error::SingularModel(smallest));
        }
        let d = m.dim();
        let mut inv_sqrt = Matrix::zeros(d, d);
        for (k, lambda) in eig.values.iter().enumerate() {
            let v = eig.vectors.col(k);
            let c = 1.0 / lambda.sqrt();
            for i in 0..d {
                for j in 0..d {
                    inv_sqrt[(i, j)] += c * v[i] * v[j];
                }
            }
        }
        let mu_sigma = inv_sqrt.matvec(&m.mu);
        Ok(Self { inv_sqrt, mu_sigma })
    }

    /// Optimal squared weights, possibly with negative entries.
    pub fn squared_weights(&self, s: &Sample) -> Result<Vec<f64>> {
        check_dim(self.mu_sigma.len(), s.x0.len())?;
        let xs = self.inv_sqrt.matvec(&s.x0);
        let nx = dot(&xs, &xs);
        if nx == 0.0 {
            return Err(Error::InvalidArgument("x0 must be nonzero".into()));
        }
        let c = dot(&xs, &self.mu_sigma) / nx;
        let t: Vec<f64> = self
            .mu_sigma
            .iter()
            .zip(&xs)
            .map(|(m, x)| m - c * x + s.y0 / nx * x)
            .collect();
        Ok(self.inv_sqrt.matvec(&t))
    }

    pub fn solve(&self, s: &Sample) -> Result<Vec<f64>> {
        let sq = self.squared_weights(s)?;
        // rounding can leave exact zeros slightly negative
        let tol = 1e-12 * sq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bad: Vec<usize> = sq
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < -tol)
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(Error::NonRealizableWeights { indices: bad });
        }
        Ok(sq.into_iter().map(|v| v.max(0.0).sqrt()).collect())
    }
}

pub fn alg_opt(s: &Sample, m: &DataModel) -> Result<Vec<f64>> {
    OptSolver::new(m)?.solve(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    L1,
    Sharp,
    Opt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Opt, Algorithm::L1, Algorithm::Sharp];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::L1 => "l1",
            Algorithm::Sharp => "sharp",
            Algorithm::Opt => "opt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Samples that entered the average.
    pub n_used: usize,
    /// Samples where the optimal squared weights had negative entries.
    pub nonrealizable_count: usize,
    /// Samples with an empty manifold (`y₀ ≤ 0`).
    pub infeasible_count: usize,
}

/// Mean and standard error of a sequence, by Welford's recurrence.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Monte-Carlo estimate of `E R(alg(x₀, y₀))` over fresh training points.
/// Every algorithm sees the same training points for a given seed.
pub fn expected_risk_mc(alg: Algorithm, m: &DataModel, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if n_samples < 100 {
        return Err(Error::InvalidArgument("n_samples must be ≥ 100".into()));
    }
    let sampler = m.sampler.ok_or(Error::MissingSampler)?;
    check_dim(m.dim(), sampler.dim())?;
    let solver = match alg {
        Algorithm::Opt => Some(OptSolver::new(m)?),
        _ => None,
    };
    let mut rng = LabRng::new(seed);
    let mut stats = RunningStats::default();
    let mut nonrealizable = 0;
    let mut infeasible = 0;
    for _ in 0..n_samples {
        let s = sampler.draw_training(&mut rng);
        if s.y0 <= 0.0 || s.x0.iter().any(|v| *v <= 0.0) {
            infeasible += 1;
            continue;
        }
        let w = match alg {
            Algorithm::L1 => alg_l1(&s)?,
            Algorithm::Sharp => alg_sharp(&s)?,
            Algorithm::Opt => match solver.as_ref().expect("solver").solve(&s) {
                Ok(w) => w,
                Err(Error::NonRealizableWeights { .. }) => {
                    nonrealizable += 1;
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        stats.push(risk(&w, m)?);
    }
    Ok(McEstimate {
        estimate: stats.mean(),
        std_error: stats.std_error(),
        n_used: stats.count(),
        nonrealizable_count: nonrealizable,
        infeasible_count: infeasible,
    })
}

/// Mean and standard error of `½(⟨w^{⊙2}, x⟩ − y)²` over population draws.
pub fn risk_mc(w: &[f64], m: &DataModel, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    check_dim(m.dim(), w.len())?;
    let sampler = m.sampler.ok_or(Error::MissingSampler)?;
    let sq: Vec<f64> = w.iter().map(|v| v * v).collect();
    let mut rng = LabRng::new(seed);
    let mut stats = RunningStats::default();
    for _ in 0..n_samples {
        let (x, y) = sampler.draw(&mut rng);
        let r = dot(&sq, &x) - y;
        stats.push(0.5 * r * r);
    }
    Ok((stats.mean(), stats.std_error()))
}

/// Monte-Carlo moments of a sampler, with standard errors.
#[derive(Clone, Debug)]
pub struct MomentEstimate {
    pub sigma: Matrix,
    pub sigma_se: Matrix,
    pub mu: Vec<f64>,
    pub mu_se: Vec<f64>,
    pub sigma2: f64,
    pub sigma2_se: f64,
}

pub fn sample_moments(sampler: &Sampler, n_samples: usize, seed: u64) -> MomentEstimate {
    let d = sampler.dim();
    let mut rng = LabRng::new(seed);
    let mut xx = vec![RunningStats::default(); d * d];
    let mut yx = vec![RunningStats::default(); d];
    let mut yy = RunningStats::default();
    for _ in 0..n_samples {
        let (x, y) = sampler.draw(&mut rng);
        for i in 0..d {
            for j in 0..d {
                xx[i * d + j].push(x[i] * x[j]);
            }
            yx[i].push(y * x[i]);
        }
        yy.push(y * y);
    }
    MomentEstimate {
        sigma: Matrix::from_vec(d, d, xx.iter().map(RunningStats::mean).collect()),
        sigma_se: Matrix::from_vec(d, d, xx.iter().map(RunningStats::std_error).collect()),
        mu: yx.iter().map(RunningStats::mean).collect(),
        mu_se: yx.iter().map(RunningStats::std_error).collect(),
        sigma2: yy.mean(),
        sigma2_se: yy.std_error(),
    }
}

/// Floor applied to `x_min` in [`divergence_probe`].
pub const X_MIN_FLOOR: f64 = 1e-12;

/// Running Monte-Carlo estimates of `E[⟨1, x⟩ / x_min]` for folded Gaussian
/// `x` in dimension `d`, reported at each cumulative sample count in
/// `n_schedule` (one sequential stream, so estimates are nested).
pub fn divergence_probe(d: usize, n_schedule: &[usize], seed: u64) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::InvalidArgument("divergence probe needs d ≥ 2".into()));
    }
    let mut sorted = n_schedule.to_vec();
    sorted.sort_unstable();
    let mut rng = LabRng::new(seed);
    let sampler = Sampler::FoldedGaussian { d, noise: 0.0 };
    let mut stats = RunningStats::default();
    let mut out = Vec::with_capacity(sorted.len());
    for target in sorted {
        while stats.count() < target {
            let (x, _) = sampler.draw(&mut rng);
            let x_min = x.iter().copied().fold(f64::INFINITY, f64::min).max(X_MIN_FLOOR);
            stats.push(x.iter().sum::<f64>() / x_min);
        }
        out.push(stats.mean());
    }
    Ok(out)
}
