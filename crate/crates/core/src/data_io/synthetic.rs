use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::network::Dataset;
use crate::rng::LabRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `x ~ N(0, I_d)`, `y = ⟨1, x⟩ + noise·ε`.
    GaussianRegression,
    /// `x ~ |N(0, I_d)|`, `y = ⟨1, x⟩ + noise·ε`.
    FoldedGaussianRegression,
    /// `x ~ N(0, I_d)`, `y = x₁x₂ + noise·ε`; needs `d ≥ 2`.
    ProductRegression,
    /// One negative example at the origin, the rest `x = g/‖g‖`,
    /// `g ~ N(μ, I)` with `μ = mu_norm·e₁`, labelled positive.
    SphereClusterClassification,
    /// The origin (negative) and one uniformly random unit vector (positive).
    TwoPointToy,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::GaussianRegression => "gaussian_regression",
            SyntheticKind::FoldedGaussianRegression => "folded_gaussian_regression",
            SyntheticKind::ProductRegression => "product_regression",
            SyntheticKind::SphereClusterClassification => "sphere_cluster_classification",
            SyntheticKind::TwoPointToy => "two_point_toy",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(
            self,
            SyntheticKind::SphereClusterClassification | SyntheticKind::TwoPointToy
        )
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian_regression" => SyntheticKind::GaussianRegression,
            "folded_gaussian_regression" => SyntheticKind::FoldedGaussianRegression,
            "product_regression" => SyntheticKind::ProductRegression,
            "sphere_cluster_classification" => SyntheticKind::SphereClusterClassification,
            "two_point_toy" => SyntheticKind::TwoPointToy,
            other => return Err(Error::InvalidArgument(format!("unknown synthetic kind '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub d: usize,
    pub n: usize,
    /// Label noise standard deviation (regression kinds).
    pub noise: f64,
    /// Cluster mean norm (sphere cluster).
    pub mu_norm: f64,
    /// Held-out samples drawn from an independent stream; 0 for none.
    pub n_test: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, d: usize, n: usize, seed: u64) -> Self {
        Self {
            kind,
            d,
            n,
            noise: 0.0,
            mu_norm: 0.0,
            n_test: 0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::InvalidArgument("synthetic data needs n ≥ 1 and d ≥ 1".into()));
        }
        if self.kind == SyntheticKind::ProductRegression && self.d < 2 {
            return Err(Error::InvalidArgument("product regression needs d ≥ 2".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.mu_norm.is_finite()) {
            return Err(Error::InvalidArgument("noise must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Training set (and test split, if requested). Deterministic in the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let train = draw(spec, spec.n, &mut LabRng::stream(spec.seed, 0), true)?;
    if spec.n_test == 0 {
        return Ok(train);
    }
    let test = draw(spec, spec.n_test, &mut LabRng::stream(spec.seed, 1), false)?;
    Ok(train.with_test(test))
}

fn draw(spec: &SyntheticSpec, n: usize, rng: &mut LabRng, training: bool) -> Result<Dataset> {
    let d = spec.d;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::new();
    match spec.kind {
        SyntheticKind::GaussianRegression
        | SyntheticKind::FoldedGaussianRegression
        | SyntheticKind::ProductRegression => {
            for _ in 0..n {
                let mut xi = rng.normal_vec(d);
                if spec.kind == SyntheticKind::FoldedGaussianRegression {
                    xi.iter_mut().for_each(|v| *v = v.abs());
                }
                let clean = if spec.kind == SyntheticKind::ProductRegression {
                    xi[0] * xi[1]
                } else {
                    xi.iter().sum()
                };
                y.push(clean + spec.noise * rng.normal());
                x.extend(xi);
            }
            return Dataset::new(Matrix::from_vec(n, d, x), Matrix::from_vec(n, 1, y));
        }
        SyntheticKind::SphereClusterClassification => {
            let mut mu = vec![0.0; d];
            mu[0] = spec.mu_norm;
            for i in 0..n {
                if training && i == 0 {
                    x.extend(vec![0.0; d]);
                    y.extend([1.0, 0.0]);
                } else {
                    x.extend(crate::logit::sphere_cluster_point(&mu, rng));
                    y.extend([0.0, 1.0]);
                }
            }
        }
        SyntheticKind::TwoPointToy => {
            let x2 = rng.unit_sphere(d);
            debug_assert!((norm2(&x2) - 1.0).abs() < 1e-12);
            let rows = if training { 2 } else { n };
            for i in 0..rows {
                if training && i == 0 {
                    x.extend(vec![0.0; d]);
                    y.extend([1.0, 0.0]);
                } else {
                    x.extend(&x2);
                    y.extend([0.0, 1.0]);
                }
            }
            return Dataset::new(Matrix::from_vec(rows, d, x), Matrix::from_vec(rows, 2, y));
        }
    }
    Dataset::new(Matrix::from_vec(n, d, x), Matrix::from_vec(n, 2, y))
}
