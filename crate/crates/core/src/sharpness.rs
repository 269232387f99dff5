//! Spectral and norm instrumentation.
//!
//! Sharpness is the operator norm of the loss Hessian, i.e. its largest
//! eigenvalue in absolute value. The default estimator is power iteration
//! over Hessian-vector products; [`dense_sym_eigen`] is a cyclic Jacobi
//! solver used as an oracle for small problems.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm1, norm2, Matrix};
use crate::network::MlpSpec;
use crate::rng::LabRng;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DENSE_LIMIT: usize = 4000;
const RESTARTS: usize = 3;

#[derive(Clone, Debug)]
pub struct SpectralEstimate {
    /// Largest `|λ|`.
    pub value: f64,
    /// Signed Rayleigh quotient at convergence.
    pub signed: f64,
    pub iterations_used: usize,
    /// `‖Hv − λv‖ / ‖v‖`
    pub residual: f64,
    pub vector: Vec<f64>,
}

/// Largest-magnitude eigenvalue of the symmetric operator `hvp` on `R^dim`,
/// by power iteration from a seeded random start.
///
/// Converged when the Rayleigh residual drops below `tol · |λ|` (or `tol`
/// when `λ` is tiny). A stalled run, e.g. on a `±λ` pair, is restarted from
/// a fresh seeded vector up to three times before giving up.
pub fn top_abs_eigenvalue<F>(hvp: F, dim: usize, tol: f64, max_iter: usize, seed: u64) -> Result<SpectralEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut rng = LabRng::stream(seed, 0x5eed);
    let start = rng.normal_vec(dim);
    top_abs_eigenvalue_from(hvp, start, tol, max_iter, seed)
}

/// As [`top_abs_eigenvalue`] but starting from `start` (warm start).
pub fn top_abs_eigenvalue_from<F>(
    mut hvp: F,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SpectralEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let dim = start.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("empty operator".into()));
    }
    let mut rng = LabRng::stream(seed, 0x5eed + 1);
    let mut best: Option<SpectralEstimate> = None;
    let mut total = 0usize;
    let mut v = start;
    let budget = max_iter.div_ceil(RESTARTS + 1).max(1);

    for attempt in 0..=RESTARTS {
        if attempt > 0 {
            v = rng.normal_vec(dim);
        }
        let mut n = norm2(&v);
        if n == 0.0 || !n.is_finite() {
            v = rng.normal_vec(dim);
            n = norm2(&v);
        }
        v.iter_mut().for_each(|x| *x /= n);
        let mut hv = hvp(&v);
        for _ in 0..budget {
            total += 1;
            let lambda = dot(&v, &hv);
            let residual = hv
                .iter()
                .zip(&v)
                .map(|(h, x)| (h - lambda * x).powi(2))
                .sum::<f64>()
                .sqrt();
            if !lambda.is_finite() || !residual.is_finite() {
                return Err(Error::NumericalOverflow("power iteration"));
            }
            let est = SpectralEstimate {
                value: lambda.abs(),
                signed: lambda,
                iterations_used: total,
                residual,
                vector: v.clone(),
            };
            let scale = lambda.abs().max(f64::MIN_POSITIVE);
            if residual <= tol * scale || residual <= tol * 1e-12 {
                return Ok(est);
            }
            let rel_res = residual / scale;
            if best
                .as_ref()
                .is_none_or(|b| rel_res < b.residual / b.value.max(f64::MIN_POSITIVE))
            {
                best = Some(est);
            }
            let hn = norm2(&hv);
            v = hv.iter().map(|x| x / hn).collect();
            hv = hvp(&v);
        }
    }
    let b = best.expect("at least one iteration");
    Err(Error::MaxIterExceeded {
        estimate: b.value,
        residual: b.residual,
        iterations: total,
    })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector of `values[k]`.
    pub vectors: Matrix,
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn dense_sym_eigen(a: &Matrix) -> Result<Vec<f64>> {
    Ok(sym_eigen(a)?.values)
}

pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let n = a.rows();
    if n > DENSE_LIMIT {
        return Err(Error::TooManyParameters {
            count: n,
            limit: DENSE_LIMIT,
        });
    }
    let scale = a.frobenius().max(1.0);
    let asym = a.max_asymmetry();
    if asym > 1e-10 * scale || !a.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NotSymmetric(asym));
    }
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Matrix::identity(n);
    let off_tol = 1e-12 * scale;

    for _sweep in 0..100 {
        let off = off_diagonal_norm(&m);
        if off < off_tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Largest `|λ|` of a symmetric matrix via the dense solver.
pub fn dense_spectral_norm(a: &Matrix) -> Result<f64> {
    let ev = dense_sym_eigen(a)?;
    Ok(ev.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParamNorms {
    pub l1: f64,
    pub l2: f64,
    pub nuclear: f64,
}

/// Singular values of `w`, through the eigenvalues of the smaller Gram matrix.
pub fn singular_values(w: &Matrix) -> Result<Vec<f64>> {
    let gram = if w.rows() < w.cols() {
        w.matmul(&w.transpose())
    } else {
        w.transpose().matmul(w)
    };
    Ok(dense_sym_eigen(&gram)?.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

pub fn nuclear_norm(w: &Matrix) -> Result<f64> {
    Ok(singular_values(w)?.iter().sum())
}

/// ℓ₁ and ℓ₂ over the whole flat vector; nuclear norm summed over the weight
/// matrices only (biases are excluded).
pub fn param_norms(theta: &[f64], spec: &MlpSpec) -> Result<ParamNorms> {
    let count = spec.param_count();
    if theta.len() != count {
        return Err(Error::LengthMismatch {
            expected: count,
            got: theta.len(),
        });
    }
    let mut nuclear = 0.0;
    for layer in spec.layers() {
        let w = Matrix::from_vec(layer.fan_out, layer.fan_in, theta[layer.weight_range()].to_vec());
        nuclear += nuclear_norm(&w)?;
    }
    Ok(ParamNorms {
        l1: norm1(theta),
        l2: norm2(theta),
        nuclear,
    })
}

/// Norms of a parameter vector read as a single diagonal weight matrix.
pub fn diagonal_norms(theta: &[f64]) -> ParamNorms {
    ParamNorms {
        l1: norm1(theta),
        l2: norm2(theta),
        nuclear: norm1(theta),
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}
