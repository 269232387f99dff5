//! Two-point logistic classification toy: a negative example at the origin
//! and a positive example `x̃₂` on the unit sphere, classified by an affine
//! rule `⟨w̃, x⟩ + b`. Every function here is static analysis; nothing is
//! trained.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::risk::RunningStats;
use crate::rng::LabRng;

/// `1/(1 + e^{−z})`, evaluated without overflow for either sign.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `g(z)(1 − g(z))`, written as `g(z)g(−z)` to avoid cancellation.
pub fn logistic_prime(z: f64) -> f64 {
    logistic(z) * logistic(-z)
}

/// `−ln g(z)`, stable for large `|z|`.
fn neg_log_logistic(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

const UNIT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointData {
    pub x2_tilde: Vec<f64>,
}

impl TwoPointData {
    pub fn new(x2_tilde: Vec<f64>) -> Result<Self> {
        let n = norm2(&x2_tilde);
        if x2_tilde.is_empty() || (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!("x2 must be a unit vector, norm is {n}")));
        }
        Ok(Self { x2_tilde })
    }

    /// Uniformly random unit direction.
    pub fn random(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("d must be ≥ 1".into()));
        }
        Ok(Self {
            x2_tilde: LabRng::new(seed).unit_sphere(d),
        })
    }

    pub fn dim(&self) -> usize {
        self.x2_tilde.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineClassifier {
    pub w_tilde: Vec<f64>,
    pub b: f64,
}

impl AffineClassifier {
    pub fn new(w_tilde: Vec<f64>, b: f64) -> Self {
        Self { w_tilde, b }
    }

    /// `w̃ = z·x̃₂` with bias `b`.
    pub fn along(data: &TwoPointData, z: f64, b: f64) -> Self {
        Self {
            w_tilde: data.x2_tilde.iter().map(|v| z * v).collect(),
            b,
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.w_tilde.len(), x.len())?;
        Ok(dot(&self.w_tilde, x) + self.b)
    }

    /// Both training points on the correct side of the boundary.
    pub fn separates(&self, data: &TwoPointData) -> Result<bool> {
        Ok(self.b < 0.0 && self.score(&data.x2_tilde)? > 0.0)
    }
}

fn positive_score(c: &AffineClassifier, data: &TwoPointData) -> Result<f64> {
    check_dim(data.dim(), c.w_tilde.len())?;
    Ok(dot(&c.w_tilde, &data.x2_tilde) + c.b)
}

/// Mean negative log-likelihood of the two samples and its gradient with
/// respect to `(w̃, b)`.
pub fn loss_and_grad(c: &AffineClassifier, data: &TwoPointData) -> Result<(f64, Vec<f64>)> {
    let s = positive_score(c, data)?;
    let loss = 0.5 * (neg_log_logistic(-c.b) + neg_log_logistic(s));
    let d = data.dim();
    let gp = -0.5 * logistic(-s);
    let mut grad: Vec<f64> = data.x2_tilde.iter().map(|x| gp * x).collect();
    grad.push(0.5 * logistic(c.b) + gp);
    debug_assert_eq!(grad.len(), d + 1);
    Ok((loss, grad))
}

/// Loss and Hessian `½(g′(b) x₁x₁ᵀ + g′(⟨w, x₂⟩) x₂x₂ᵀ)` with
/// `x₁ = e_{d+1}` and `x₂ = (x̃₂, 1)`.
pub fn loss_and_hessian(c: &AffineClassifier, data: &TwoPointData) -> Result<(f64, Matrix)> {
    let (loss, _) = loss_and_grad(c, data)?;
    let s = positive_score(c, data)?;
    let d = data.dim();
    let mut x2 = data.x2_tilde.clone();
    x2.push(1.0);
    let mut h = Matrix::outer(&x2, &x2).scale(0.5 * logistic_prime(s));
    h[(d, d)] += 0.5 * logistic_prime(c.b);
    Ok((loss, h))
}

/// Largest Hessian eigenvalue, from the roots of the 2×2 reduced problem.
pub fn sharpness_closed_form(c: &AffineClassifier, data: &TwoPointData) -> Result<f64> {
    let s = positive_score(c, data)?;
    Ok(sharpness_from_scores(c.b, s))
}

fn sharpness_from_scores(b: f64, s: f64) -> f64 {
    let gb = logistic_prime(b);
    let gs = logistic_prime(s);
    0.25 * (gb + 2.0 * gs + (gb * gb + 4.0 * gs * gs).sqrt())
}

/// Sharpness of `w̃ = z·x̃₂ + (unit vector ⊥ x̃₂)·√(1−z²)` with bias `b`; only
/// the score `z + b` of the positive example matters.
pub fn sharpness_zb(z: f64, b: f64) -> f64 {
    sharpness_from_scores(b, z + b)
}

/// `(x̃₂, −½)`: both points at margin ½ from the boundary.
pub fn max_margin_params(data: &TwoPointData) -> AffineClassifier {
    AffineClassifier::along(data, 1.0, -0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinSharpness {
    pub classifier: AffineClassifier,
    pub value: f64,
    pub z: f64,
    pub b: f64,
}

/// Minimum of [`sharpness_zb`] over `z ∈ (0, 1]`, `b ∈ (−z, 0]`: a grid scan
/// followed by alternating golden-section refinement of each coordinate.
pub fn min_sharpness_params(data: &TwoPointData, grid_resolution: usize) -> Result<MinSharpness> {
    if grid_resolution < 100 {
        return Err(Error::InvalidArgument("grid resolution must be ≥ 100".into()));
    }
    let r = grid_resolution as f64;
    let (mut z, mut b, mut best) = (1.0, 0.0, sharpness_zb(1.0, 0.0));
    for i in 1..=grid_resolution {
        let zi = i as f64 / r;
        // b_j = −z·j/r stays inside (−z, 0]
        for j in 0..grid_resolution {
            let bj = -zi * j as f64 / r;
            let v = sharpness_zb(zi, bj);
            if v < best {
                (z, b, best) = (zi, bj, v);
            }
        }
    }
    let h = 1.0 / r;
    for _ in 0..20 {
        let z_new = golden_section(
            |t| sharpness_zb(t, b),
            (z - h).max(-b).max(f64::MIN_POSITIVE),
            (z + h).min(1.0),
        );
        if sharpness_zb(z_new, b) < best {
            z = z_new;
            best = sharpness_zb(z, b);
        }
        let lo = (b - h * z).max(-z * (1.0 - 1e-12));
        let b_new = golden_section(|t| sharpness_zb(z, t), lo, (b + h * z).min(0.0));
        if sharpness_zb(z, b_new) < best {
            b = b_new;
            best = sharpness_zb(z, b);
        }
    }
    Ok(MinSharpness {
        classifier: unit_classifier(data, z, b),
        value: best,
        z,
        b,
    })
}

/// Unit-norm `w̃` with `⟨w̃, x̃₂⟩ = z`.
fn unit_classifier(data: &TwoPointData, z: f64, b: f64) -> AffineClassifier {
    if z >= 1.0 || data.dim() == 1 {
        return AffineClassifier::along(data, 1.0, b);
    }
    let x = &data.x2_tilde;
    // any unit vector orthogonal to x̃₂: Gram-Schmidt on the axis least aligned with it
    let k = (0..x.len())
        .min_by(|&i, &j| x[i].abs().total_cmp(&x[j].abs()))
        .unwrap_or(0);
    let mut u: Vec<f64> = x.iter().map(|v| -x[k] * v).collect();
    u[k] += 1.0;
    let nu = norm2(&u);
    let c = (1.0 - z * z).sqrt() / nu;
    AffineClassifier::new(x.iter().zip(&u).map(|(xi, ui)| z * xi + c * ui).collect(), b)
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    if hi <= lo {
        return lo;
    }
    let mut a = hi - INV_PHI * (hi - lo);
    let mut c = lo + INV_PHI * (hi - lo);
    let (mut fa, mut fc) = (f(a), f(c));
    for _ in 0..100 {
        if fa <= fc {
            hi = c;
            c = a;
            fc = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = c;
            fa = fc;
            c = lo + INV_PHI * (hi - lo);
            fc = f(c);
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    // endpoints matter: the minimum here usually sits on the boundary
    [lo, hi, 0.5 * (lo + hi)]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .expect("non-empty")
}

/// `x = g/‖g‖₂` with `g ~ N(μ, I)`.
pub fn sphere_cluster_point(mu: &[f64], rng: &mut LabRng) -> Vec<f64> {
    let g: Vec<f64> = mu.iter().map(|m| m + rng.normal()).collect();
    let n = norm2(&g);
    g.into_iter().map(|v| v / n).collect()
}

/// Probability that a positive test point is misclassified
/// (`⟨w̃, x⟩ + b ≤ 0`), with its standard error.
pub fn expected_gen_error_mc(c: &AffineClassifier, mu: &[f64], n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    check_dim(c.w_tilde.len(), mu.len())?;
    if n_samples < 100 {
        return Err(Error::InvalidArgument("n_samples must be ≥ 100".into()));
    }
    let mut rng = LabRng::new(seed);
    let mut stats = RunningStats::default();
    for _ in 0..n_samples {
        let x = sphere_cluster_point(mu, &mut rng);
        stats.push(if dot(&c.w_tilde, &x) + c.b <= 0.0 { 1.0 } else { 0.0 });
    }
    Ok((stats.mean(), stats.std_error()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    MaxMargin,
    MinSharpness,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::MaxMargin => "max_margin",
            ClassifierKind::MinSharpness => "min_sharpness",
        }
    }

    pub fn fit(self, data: &TwoPointData) -> Result<AffineClassifier> {
        match self {
            ClassifierKind::MaxMargin => Ok(max_margin_params(data)),
            ClassifierKind::MinSharpness => Ok(min_sharpness_params(data, 100)?.classifier),
        }
    }
}

/// Generalization error averaged over the training draw as well: each of
/// `n_directions` training sets takes `x̃₂` from the same cluster, fits the
/// classifier, and is scored on `n_samples` fresh test points.
pub fn expected_gen_error_over_training(
    kind: ClassifierKind,
    mu: &[f64],
    n_directions: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if mu.is_empty() || n_directions == 0 {
        return Err(Error::InvalidArgument("need d ≥ 1 and at least one direction".into()));
    }
    let mut rng = LabRng::stream(seed, 1);
    let mut stats = RunningStats::default();
    for k in 0..n_directions {
        let data = TwoPointData::new(sphere_cluster_point(mu, &mut rng))
            .or_else(|_| TwoPointData::random(mu.len(), seed ^ k as u64))?;
        let c = kind.fit(&data)?;
        let (e, _) = expected_gen_error_mc(&c, mu, n_samples, seed.wrapping_add(k as u64 + 1))?;
        stats.push(e);
    }
    Ok((stats.mean(), stats.std_error()))
}

/// Sharpness over a `(z, b)` grid, as CSV rows `z,b,sharpness`.
pub fn landscape_csv(z_range: (f64, f64), b_range: (f64, f64), resolution: usize) -> String {
    let mut out = String::from("z,b,sharpness\n");
    let n = resolution.max(2);
    for i in 0..n {
        let z = z_range.0 + (z_range.1 - z_range.0) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let b = b_range.0 + (b_range.1 - b_range.0) * j as f64 / (n - 1) as f64;
            out.push_str(&format!("{z:?},{b:?},{:?}\n", sharpness_zb(z, b)));
        }
    }
    out
}
