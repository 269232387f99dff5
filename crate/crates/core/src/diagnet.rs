//! Shared-weight diagonal linear network on a single data point.
//!
//! The predictor is `z ↦ ⟨w^{⊙L}, z⟩` and the training loss on `(x, y)` is
//! `½(⟨x, w^{⊙L}⟩ − y)²`. Its zero set is the interpolation manifold `M`,
//! whose normal direction at `w` is `x ⊙ w^{⊙(L−1)}`.
//!
//! For depth 2 everything is available in closed form: the Hessian, the
//! sharpness on `M` (`4‖x ⊙ w‖²`), the minimizers of `‖w^{⊙2}‖₁` and of the
//! sharpness over `M`, and the Riemannian first/second-order conditions.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, hadamard, norm2, Matrix};

/// Default loss tolerance for "on the manifold".
pub const TOL_MANIFOLD: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagNetProblem {
    pub x: Vec<f64>,
    pub y: f64,
    pub depth: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `‖w^{⊙2}‖₁ = ‖w‖₂²`
    L1OfSquares,
    /// `4‖x ⊙ w‖₂²`
    Sharpness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizerSet {
    /// 0-based coordinates allowed in the support.
    pub support_indices: Vec<usize>,
    /// Common value of `‖w‖₂²` on the set.
    pub radius_sq: f64,
    pub objective_value: f64,
    pub canonical_representative: Vec<f64>,
}

fn powi(v: f64, k: u32) -> f64 {
    v.powi(k as i32)
}

impl DiagNetProblem {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self> {
        Self::with_depth(x, y, 2)
    }

    pub fn with_depth(x: Vec<f64>, y: f64, depth: u32) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("x must have at least one entry".into()));
        }
        if depth < 2 {
            return Err(Error::InvalidArgument(format!("depth must be ≥ 2, got {depth}")));
        }
        if !x.iter().all(|v| v.is_finite()) || !y.is_finite() {
            return Err(Error::InvalidArgument("non-finite data".into()));
        }
        Ok(Self { x, y, depth })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        check_dim(self.dim(), w.len())
    }

    fn require_depth2(&self) -> Result<()> {
        if self.depth == 2 {
            Ok(())
        } else {
            Err(Error::UnsupportedDepth(self.depth))
        }
    }

    fn require_nonzero_x(&self) -> Result<()> {
        match self.x.iter().position(|v| *v == 0.0) {
            Some(index) => Err(Error::ZeroFeature { index }),
            None => Ok(()),
        }
    }

    fn require_positive(&self) -> Result<()> {
        self.require_depth2()?;
        self.require_nonzero_x()?;
        if let Some(i) = self.x.iter().position(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "x[{i}] = {} must be positive",
                self.x[i]
            )));
        }
        if self.y <= 0.0 {
            return Err(Error::InvalidArgument(format!("y = {} must be positive", self.y)));
        }
        Ok(())
    }

    /// `⟨x, w^{⊙L}⟩ − y`
    pub fn residual(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        Ok(predict_depth(w, &self.x, self.depth) - self.y)
    }

    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        let r = self.residual(w)?;
        Ok(0.5 * r * r)
    }

    /// `L · r · (x ⊙ w^{⊙(L−1)})`
    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let r = self.residual(w)?;
        let l = self.depth as f64;
        Ok(self
            .x
            .iter()
            .zip(w)
            .map(|(xi, wi)| l * r * xi * powi(*wi, self.depth - 1))
            .collect())
    }

    /// `∇²L(w) = diag(2 r x) + 4 (x ⊙ w)(x ⊙ w)ᵀ` (depth 2).
    pub fn hessian(&self, w: &[f64]) -> Result<Matrix> {
        self.require_depth2()?;
        let r = self.residual(w)?;
        let u = hadamard(&self.x, w);
        let mut h = Matrix::outer(&u, &u).scale(4.0);
        for (i, xi) in self.x.iter().enumerate() {
            h[(i, i)] += 2.0 * r * xi;
        }
        Ok(h)
    }

    /// Hessian-vector product without forming the matrix (depth 2).
    pub fn hvp(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.require_depth2()?;
        check_dim(self.dim(), v.len())?;
        let r = self.residual(w)?;
        let u = hadamard(&self.x, w);
        let uv = 4.0 * dot(&u, v);
        Ok((0..self.dim())
            .map(|i| 2.0 * r * self.x[i] * v[i] + uv * u[i])
            .collect())
    }

    pub fn on_manifold(&self, w: &[f64], tol: f64) -> Result<bool> {
        Ok(self.loss(w)? <= tol)
    }

    fn require_on_manifold(&self, w: &[f64]) -> Result<()> {
        let loss = self.loss(w)?;
        if loss <= TOL_MANIFOLD {
            Ok(())
        } else {
            Err(Error::NotOnManifold {
                loss,
                tol: TOL_MANIFOLD,
            })
        }
    }

    /// `4‖x ⊙ w‖₂²`, the sharpness at a point of the manifold.
    pub fn sharpness_closed_form(&self, w: &[f64]) -> Result<f64> {
        self.require_depth2()?;
        self.require_on_manifold(w)?;
        Ok(4.0 * hadamard(&self.x, w).iter().map(|v| v * v).sum::<f64>())
    }

    /// Normal direction `x ⊙ w^{⊙(L−1)}` of the manifold at `w`.
    pub fn normal(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        Ok(self
            .x
            .iter()
            .zip(w)
            .map(|(xi, wi)| xi * powi(*wi, self.depth - 1))
            .collect())
    }

    /// Orthogonal projection of `v` onto the tangent space at `w`.
    pub fn tangent_project(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.require_nonzero_x()?;
        self.require_on_manifold(w)?;
        check_dim(self.dim(), v.len())?;
        let n = self.normal(w)?;
        let nn = dot(&n, &n);
        if nn == 0.0 {
            return Err(Error::ZeroWeights);
        }
        let c = dot(&n, v) / nn;
        Ok(v.iter().zip(&n).map(|(vi, ni)| vi - c * ni).collect())
    }

    /// Euclidean gradient of `½‖w‖²` or `½‖x ⊙ w‖²`.
    fn objective_euclidean_grad(&self, w: &[f64], objective: Objective) -> Vec<f64> {
        match objective {
            Objective::L1OfSquares => w.to_vec(),
            Objective::Sharpness => self.x.iter().zip(w).map(|(xi, wi)| xi * xi * wi).collect(),
        }
    }

    pub fn objective_value(&self, w: &[f64], objective: Objective) -> Result<f64> {
        self.check(w)?;
        Ok(match objective {
            Objective::L1OfSquares => w.iter().map(|v| v * v).sum(),
            Objective::Sharpness => 4.0 * hadamard(&self.x, w).iter().map(|v| v * v).sum::<f64>(),
        })
    }

    /// Riemannian gradient of the objective restricted to the manifold.
    pub fn riemannian_grad(&self, w: &[f64], objective: Objective) -> Result<Vec<f64>> {
        self.require_depth2()?;
        let g = self.objective_euclidean_grad(w, objective);
        self.tangent_project(w, &g)
    }

    /// `⟨u, Hess f(w) u⟩` at a critical point `w` with common feature value
    /// `x₀` on its support.
    ///
    /// ℓ₁ case: `‖u‖² − ⟨u, (x/x₀) ⊙ u⟩`; sharpness case:
    /// `⟨u, x^{⊙2} ⊙ u⟩ − x₀⟨u, x ⊙ u⟩`.
    pub fn riemannian_hess_quadform(&self, w: &[f64], u: &[f64], objective: Objective) -> Result<f64> {
        self.require_depth2()?;
        check_dim(self.dim(), u.len())?;
        let g = self.riemannian_grad(w, objective)?;
        let scale = norm2(&self.objective_euclidean_grad(w, objective)).max(1.0);
        let gn = norm2(&g);
        if gn > 1e-8 * scale {
            return Err(Error::NotCritical(gn));
        }
        let n = self.normal(w)?;
        let normal_part = dot(&n, u).abs() / norm2(&n);
        if normal_part > 1e-9 * norm2(u).max(1.0) {
            return Err(Error::NotTangent(normal_part));
        }
        let x0 = self.support_value(w)?;
        let quad = match objective {
            Objective::L1OfSquares => u.iter().zip(&self.x).map(|(ui, xi)| ui * ui - xi / x0 * ui * ui).sum(),
            Objective::Sharpness => u
                .iter()
                .zip(&self.x)
                .map(|(ui, xi)| xi * xi * ui * ui - x0 * xi * ui * ui)
                .sum(),
        };
        Ok(quad)
    }

    /// Common value of `x` on `supp(w)` (the largest-|w| coordinate's value).
    fn support_value(&self, w: &[f64]) -> Result<f64> {
        let (k, _) = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .ok_or(Error::ZeroWeights)?;
        if w[k] == 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(self.x[k])
    }

    /// Minimizers of `‖w^{⊙2}‖₁` over the manifold: support in `argmax x`,
    /// `‖w‖² = y / x_max`.
    pub fn l1_minimizer_set(&self) -> Result<MinimizerSet> {
        self.require_positive()?;
        let x_max = self.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let support = indices_equal(&self.x, x_max);
        let radius_sq = self.y / x_max;
        Ok(MinimizerSet {
            canonical_representative: basis_scaled(self.dim(), support[0], radius_sq.sqrt()),
            support_indices: support,
            radius_sq,
            objective_value: radius_sq,
        })
    }

    /// Minimizers of the sharpness over the manifold: support in `argmin x`,
    /// `‖w‖² = y / x_min`, minimum sharpness `4 y x_min`.
    pub fn sharpness_minimizer_set(&self) -> Result<MinimizerSet> {
        self.require_positive()?;
        let x_min = self.x.iter().copied().fold(f64::INFINITY, f64::min);
        let support = indices_equal(&self.x, x_min);
        let radius_sq = self.y / x_min;
        Ok(MinimizerSet {
            canonical_representative: basis_scaled(self.dim(), support[0], radius_sq.sqrt()),
            support_indices: support,
            radius_sq,
            objective_value: 4.0 * self.y * x_min,
        })
    }

    /// A manifold point obtained by fixing every coordinate except `solve_for`
    /// and solving `⟨x, w^{⊙2}⟩ = y` for the remaining one (nonnegative root).
    /// `None` when the free coordinates already overshoot `y`.
    pub fn complete_on_manifold(&self, free: &[f64], solve_for: usize) -> Option<Vec<f64>> {
        if self.depth != 2 || free.len() + 1 != self.dim() {
            return None;
        }
        let mut w = Vec::with_capacity(self.dim());
        let mut it = free.iter();
        for i in 0..self.dim() {
            w.push(if i == solve_for { 0.0 } else { *it.next().unwrap() });
        }
        let partial = predict_depth(&w, &self.x, 2);
        let sq = (self.y - partial) / self.x[solve_for];
        if sq < 0.0 || !sq.is_finite() {
            return None;
        }
        w[solve_for] = sq.sqrt();
        Some(w)
    }
}

fn indices_equal(x: &[f64], target: f64) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v == target)
        .map(|(i, _)| i)
        .collect()
}

fn basis_scaled(d: usize, k: usize, value: f64) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[k] = value;
    e
}

fn predict_depth(w: &[f64], z: &[f64], depth: u32) -> f64 {
    w.iter().zip(z).map(|(wi, zi)| powi(*wi, depth) * zi).sum()
}

/// `⟨w^{⊙L}, z⟩`
pub fn predict(w: &[f64], z: &[f64], depth: u32) -> Result<f64> {
    check_dim(w.len(), z.len())?;
    Ok(predict_depth(w, z, depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::LabRng;
    use crate::sharpness::dense_spectral_norm;

    const S2: f64 = std::f64::consts::SQRT_2;

    fn p(x: &[f64], y: f64) -> DiagNetProblem {
        DiagNetProblem::new(x.to_vec(), y).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&[1.0, 0.0], &[1.0, 1.0], 2).unwrap(), 1.0);
        assert_eq!(predict(&[0.0, 0.0], &[3.0, -4.0], 2).unwrap(), 0.0);
        assert_eq!(predict(&[1.0, 1.0], &[2.0, 3.0], 2).unwrap(), 5.0);
        assert!(predict(&[1.0], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(p(&[1.0, 2.0], 2.0).loss(&[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(p(&[1.0, 1.0], 1.0).loss(&[1.0, 1.0]).unwrap(), 0.5);
        let deep = DiagNetProblem::with_depth(vec![1.0, 2.0], 2.0, 3).unwrap();
        assert_eq!(deep.loss(&[1.0, 1.0]).unwrap(), 0.5);
        assert!(p(&[1.0, 2.0], 2.0).loss(&[1.0]).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(p(&[1.0, 1.0], 1.0).gradient(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(p(&[1.0, 2.0], 2.0).gradient(&[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hessian_example() {
        let h = p(&[1.0, 2.0], 2.0).hessian(&[0.0, 1.0]).unwrap();
        assert_eq!(h, Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 16.0]]));
        let deep = DiagNetProblem::with_depth(vec![1.0], 1.0, 3).unwrap();
        assert!(matches!(deep.hessian(&[1.0]), Err(Error::UnsupportedDepth(3))));
    }

    #[test]
    fn sharpness_examples() {
        let pr = p(&[1.0, 2.0], 2.0);
        assert!((pr.sharpness_closed_form(&[0.0, 1.0]).unwrap() - 16.0).abs() < 1e-12);
        assert!((pr.sharpness_closed_form(&[S2, 0.0]).unwrap() - 8.0).abs() < 1e-12);
        let dense = dense_spectral_norm(&pr.hessian(&[0.0, 1.0]).unwrap()).unwrap();
        assert!((dense - 16.0).abs() < 1e-12);
        assert!(matches!(
            pr.sharpness_closed_form(&[1.0, 1.0]),
            Err(Error::NotOnManifold { .. })
        ));
        assert_eq!(p(&[1.0, 2.0], 0.0).sharpness_closed_form(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn l1_minimizer_examples() {
        let s = p(&[1.0, 2.0], 2.0).l1_minimizer_set().unwrap();
        assert_eq!(s.support_indices, vec![1]);
        assert_eq!(s.radius_sq, 1.0);
        assert_eq!(s.canonical_representative, vec![0.0, 1.0]);

        let s = p(&[3.0, 3.0], 3.0).l1_minimizer_set().unwrap();
        assert_eq!(s.support_indices, vec![0, 1]);
        assert_eq!(s.radius_sq, 1.0);
        assert_eq!(s.canonical_representative, vec![1.0, 0.0]);

        let s = p(&[5.0], 10.0).l1_minimizer_set().unwrap();
        assert!(close(&s.canonical_representative, &[S2], 1e-15));
        assert_eq!(s.objective_value, 2.0);
    }

    #[test]
    fn sharpness_minimizer_examples() {
        let s = p(&[1.0, 2.0], 2.0).sharpness_minimizer_set().unwrap();
        assert_eq!(s.support_indices, vec![0]);
        assert_eq!(s.radius_sq, 2.0);
        assert!(close(&s.canonical_representative, &[S2, 0.0], 1e-15));
        assert_eq!(s.objective_value, 8.0);

        let a = p(&[3.0, 3.0], 3.0);
        assert_eq!(
            a.sharpness_minimizer_set().unwrap().support_indices,
            a.l1_minimizer_set().unwrap().support_indices
        );

        let s = p(&[1.0, 4.0], 4.0).sharpness_minimizer_set().unwrap();
        assert_eq!(s.canonical_representative, vec![2.0, 0.0]);
        assert_eq!(s.objective_value, 16.0);
    }

    #[test]
    fn minimizer_preconditions() {
        assert!(p(&[1.0, -2.0], 2.0).l1_minimizer_set().is_err());
        assert!(p(&[1.0, 2.0], -2.0).sharpness_minimizer_set().is_err());
        assert!(matches!(
            p(&[1.0, 0.0], 2.0).l1_minimizer_set(),
            Err(Error::ZeroFeature { index: 1 })
        ));
    }

    #[test]
    fn tangent_projection_examples() {
        let pr = p(&[1.0, 2.0], 2.0);
        let w = [0.0, 1.0];
        assert!(close(&pr.tangent_project(&w, &[1.0, 1.0]).unwrap(), &[1.0, 0.0], 1e-15));
        let n = pr.normal(&w).unwrap();
        assert!(close(&pr.tangent_project(&w, &n).unwrap(), &[0.0, 0.0], 1e-15));
        assert!(close(&pr.tangent_project(&w, &[3.0, 0.0]).unwrap(), &[3.0, 0.0], 1e-15));
        let zero = p(&[1.0, 2.0], 0.0);
        assert!(matches!(
            zero.tangent_project(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::ZeroWeights)
        ));
    }

    #[test]
    fn riemannian_grad_examples() {
        let pr = p(&[1.0, 2.0], 2.0);
        let g = pr.riemannian_grad(&[0.0, 1.0], Objective::L1OfSquares).unwrap();
        assert!(norm2(&g) < 1e-15);
        let g = pr.riemannian_grad(&[S2, 0.0], Objective::Sharpness).unwrap();
        assert!(norm2(&g) < 1e-15);
        // full support: w1² + 2 w2² = 2 with w1² = 1, w2² = ½
        let w = [1.0, 0.5f64.sqrt()];
        assert!(pr.on_manifold(&w, 1e-15).unwrap());
        assert!(norm2(&pr.riemannian_grad(&w, Objective::L1OfSquares).unwrap()) > 0.1);
        assert!(norm2(&pr.riemannian_grad(&w, Objective::Sharpness).unwrap()) > 0.1);
    }

    #[test]
    fn riemannian_hessian_examples() {
        let pr = p(&[1.0, 2.0], 2.0);
        let q = pr
            .riemannian_hess_quadform(&[0.0, 1.0], &[1.0, 0.0], Objective::L1OfSquares)
            .unwrap();
        assert!((q - 0.5).abs() < 1e-15);
        let q = pr
            .riemannian_hess_quadform(&[S2, 0.0], &[0.0, 1.0], Objective::L1OfSquares)
            .unwrap();
        assert!((q + 1.0).abs() < 1e-15);
        let q = pr
            .riemannian_hess_quadform(&[S2, 0.0], &[0.0, 1.0], Objective::Sharpness)
            .unwrap();
        assert!((q - 2.0).abs() < 1e-15);
        assert!(matches!(
            pr.riemannian_hess_quadform(&[0.0, 1.0], &[0.0, 1.0], Objective::L1OfSquares),
            Err(Error::NotTangent(_))
        ));
        let w = [1.0, 0.5f64.sqrt()];
        assert!(matches!(
            pr.riemannian_hess_quadform(&w, &[1.0, 0.0], Objective::L1OfSquares),
            Err(Error::NotCritical(_))
        ));
    }

    #[test]
    fn hvp_matches_hessian() {
        let mut rng = LabRng::new(2);
        for _ in 0..20 {
            let x = rng.normal_vec(4);
            let pr = p(&x, rng.normal());
            let w = rng.normal_vec(4);
            let v = rng.normal_vec(4);
            let a = pr.hvp(&w, &v).unwrap();
            let b = pr.hessian(&w).unwrap().matvec(&v);
            assert!(close(&a, &b, 1e-12));
        }
    }

    #[test]
    fn complete_on_manifold_solves_last_coordinate() {
        let pr = p(&[1.0, 2.0, 3.0], 5.0);
        let w = pr.complete_on_manifold(&[1.0, 0.5], 2).unwrap();
        assert!(pr.loss(&w).unwrap() < 1e-28);
        assert!(pr.complete_on_manifold(&[3.0, 0.0], 2).is_none());
    }
}
