//! Differentiable training objectives consumed by the optimizers.

use crate::diagnet::DiagNetProblem;
use crate::error::{check_dim, Error, Result};
use crate::network::{self, Dataset, LossKind, MlpSpec};
use crate::sharpness::{self, dense_spectral_norm, diagonal_norms, param_norms, ParamNorms, SpectralEstimate};

/// Full-batch objective `θ ↦ L(θ)` with exact first and second order access.
pub trait Model: Sync {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64]) -> Result<f64>;

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// Largest `|λ|` of the Hessian; `warm` is an optional start vector.
    fn sharpness(&self, theta: &[f64], warm: Option<&[f64]>, seed: u64) -> Result<SpectralEstimate> {
        let mut failure = None;
        let op = |v: &[f64]| match self.hvp(theta, v) {
            Ok(hv) => hv,
            Err(e) => {
                failure.get_or_insert(e);
                vec![f64::NAN; v.len()]
            }
        };
        let out = match warm {
            Some(w) if w.len() == self.dim() => sharpness::top_abs_eigenvalue_from(
                op,
                w.to_vec(),
                sharpness::DEFAULT_TOL,
                sharpness::DEFAULT_MAX_ITER,
                seed,
            ),
            _ => sharpness::top_abs_eigenvalue(
                op,
                self.dim(),
                sharpness::DEFAULT_TOL,
                sharpness::DEFAULT_MAX_ITER,
                seed,
            ),
        };
        match failure {
            Some(e) => Err(e),
            None => out,
        }
    }

    fn norms(&self, theta: &[f64]) -> Result<ParamNorms> {
        Ok(diagonal_norms(theta))
    }

    /// Held-out metric, when the model has a test split.
    fn test_metric(&self, _theta: &[f64]) -> Option<f64> {
        None
    }

    fn describe(&self) -> String;
}

/// `½ Σ λ_i θ_i²`
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub curvatures: Vec<f64>,
}

impl Quadratic {
    pub fn new(curvatures: Vec<f64>) -> Self {
        Self { curvatures }
    }
}

impl Model for Quadratic {
    fn dim(&self) -> usize {
        self.curvatures.len()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(0.5 * theta.iter().zip(&self.curvatures).map(|(t, l)| l * t * t).sum::<f64>())
    }

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let loss = self.loss(theta)?;
        Ok((loss, theta.iter().zip(&self.curvatures).map(|(t, l)| l * t).collect()))
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        check_dim(self.dim(), v.len())?;
        Ok(v.iter().zip(&self.curvatures).map(|(x, l)| l * x).collect())
    }

    fn sharpness(&self, _theta: &[f64], _warm: Option<&[f64]>, _seed: u64) -> Result<SpectralEstimate> {
        let (i, value) = self
            .curvatures
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, v)| (i, *v))
            .ok_or_else(|| Error::InvalidArgument("empty quadratic".into()))?;
        let mut vector = vec![0.0; self.dim()];
        vector[i] = 1.0;
        Ok(SpectralEstimate {
            value: value.abs(),
            signed: value,
            iterations_used: 0,
            residual: 0.0,
            vector,
        })
    }

    fn describe(&self) -> String {
        format!("quadratic{:?}", self.curvatures)
    }
}

/// Depth-2 diagonal network on one data point; sharpness is computed exactly
/// from the dense Hessian.
#[derive(Clone, Debug)]
pub struct DiagNetModel {
    pub problem: DiagNetProblem,
}

impl DiagNetModel {
    pub fn new(problem: DiagNetProblem) -> Result<Self> {
        if problem.depth != 2 {
            return Err(Error::UnsupportedDepth(problem.depth));
        }
        Ok(Self { problem })
    }
}

impl Model for DiagNetModel {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        self.problem.loss(theta)
    }

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.problem.loss(theta)?, self.problem.gradient(theta)?))
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.problem.hvp(theta, v)
    }

    fn sharpness(&self, theta: &[f64], _warm: Option<&[f64]>, _seed: u64) -> Result<SpectralEstimate> {
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalOverflow("sharpness"));
        }
        let h = self.problem.hessian(theta)?;
        let eig = sharpness::sym_eigen(&h)?;
        let (k, signed) = eig
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, v)| (k, *v))
            .expect("non-empty");
        debug_assert!((dense_spectral_norm(&h).unwrap() - signed.abs()).abs() <= 1e-12 * signed.abs().max(1.0));
        Ok(SpectralEstimate {
            value: signed.abs(),
            signed,
            iterations_used: 0,
            residual: 0.0,
            vector: eig.vectors.col(k),
        })
    }

    fn describe(&self) -> String {
        format!("diagnet(x={:?}, y={})", self.problem.x, self.problem.y)
    }
}

/// Feedforward network on a fixed dataset.
#[derive(Clone, Debug)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub data: Dataset,
}

impl MlpModel {
    pub fn new(spec: MlpSpec, data: Dataset) -> Result<Self> {
        check_dim(spec.input_dim(), data.inputs.cols())?;
        check_dim(spec.output_dim(), data.targets.cols())?;
        Ok(Self { spec, data })
    }
}

impl Model for MlpModel {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        network::loss_value(&self.spec, theta, &self.data)
    }

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        network::loss_value_and_grad(&self.spec, theta, &self.data)
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        network::hessian_vector_product(&self.spec, theta, v, &self.data)
    }

    fn norms(&self, theta: &[f64]) -> Result<ParamNorms> {
        param_norms(theta, &self.spec)
    }

    /// Test loss for MSE, test misclassification rate for CE.
    fn test_metric(&self, theta: &[f64]) -> Option<f64> {
        let test = self.data.test.as_ref()?;
        match self.spec.loss_kind {
            LossKind::Mse => network::loss_value(&self.spec, theta, test).ok(),
            LossKind::Ce => {
                let out = network::forward(&self.spec, theta, &test.inputs).ok()?;
                let wrong = (0..test.len())
                    .filter(|&i| argmax(out.row(i)) != argmax(test.targets.row(i)))
                    .count();
                Some(wrong as f64 / test.len() as f64)
            }
        }
    }

    fn describe(&self) -> String {
        format!("mlp({}, n={})", self.spec.describe(), self.data.len())
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}
