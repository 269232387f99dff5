//! Fully connected feedforward network with exact gradients and exact
//! Hessian-vector products.
//!
//! Parameter layout (layer-major): for each layer `l` in order, the weight
//! matrix `W_l` (shape `n_l × n_{l-1}`, row-major) followed by the bias
//! vector `b_l` (length `n_l`, absent when the spec has no biases). Hidden
//! layers apply the activation; the output layer is linear.
//!
//! Losses are averaged over samples. MSE is `½‖out − target‖²` summed over
//! output coordinates; CE is the softmax negative log-likelihood.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite, Matrix};
use crate::rng::LabRng;
use crate::sharpness::DENSE_LIMIT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// ∂relu(0) is taken as 0.
    fn first(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    fn second(self, z: f64) -> f64 {
        match self {
            Activation::Relu | Activation::Identity => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Ce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "ce" => Ok(Self::Ce),
            other => Err(Error::InvalidArgument(format!("unknown loss {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub loss_kind: LossKind,
    pub bias: bool,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
    pub bias: bool,
}

impl LayerLayout {
    pub fn weight_range(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        if self.bias {
            start..start + self.fan_out
        } else {
            start..start
        }
    }

    fn len(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias { self.fan_out } else { 0 }
    }
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, loss_kind: LossKind) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidArgument("layer dims must be positive".into()));
        }
        if loss_kind == LossKind::Ce && *layer_dims.last().unwrap() < 2 {
            return Err(Error::InvalidArgument("cross-entropy needs ≥ 2 outputs".into()));
        }
        Ok(Self {
            layer_dims,
            activation,
            loss_kind,
            bias: true,
        })
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                    bias: self.bias,
                };
                offset += l.len();
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerLayout::len).sum()
    }

    /// Short stable text form, e.g. `2-16-16-1:tanh:mse`.
    pub fn describe(&self) -> String {
        let dims: Vec<String> = self.layer_dims.iter().map(usize::to_string).collect();
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        };
        let loss = match self.loss_kind {
            LossKind::Mse => "mse",
            LossKind::Ce => "ce",
        };
        let bias = if self.bias { "" } else { ":nobias" };
        format!("{}:{act}:{loss}{bias}", dims.join("-"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub test: Option<Box<Dataset>>,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        check_dim(inputs.rows(), targets.rows())?;
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        Ok(Self {
            inputs,
            targets,
            test: None,
        })
    }

    pub fn with_test(mut self, test: Dataset) -> Self {
        self.test = Some(Box::new(test));
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    fn check(&self, spec: &MlpSpec) -> Result<()> {
        check_dim(spec.input_dim(), self.inputs.cols())?;
        check_dim(spec.output_dim(), self.targets.cols())?;
        if spec.loss_kind == LossKind::Ce {
            for i in 0..self.targets.rows() {
                let s: f64 = self.targets.row(i).iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "cross-entropy target row {i} sums to {s}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// LeCun-uniform initialization: weights of layer `l` uniform on
/// `(−1/√n_{l−1}, 1/√n_{l−1})`, biases zero.
pub fn init_lecun_uniform(spec: &MlpSpec, seed: u64) -> Vec<f64> {
    init_lecun_uniform_scaled(spec, seed, 1.0)
}

/// [`init_lecun_uniform`] with every weight multiplied by `scale`.
pub fn init_lecun_uniform_scaled(spec: &MlpSpec, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = LabRng::new(seed);
    let mut theta = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let bound = 1.0 / (layer.fan_in as f64).sqrt();
        for w in &mut theta[layer.weight_range()] {
            *w = scale * rng.symmetric_open(bound);
        }
    }
    theta
}

fn check_theta(spec: &MlpSpec, theta: &[f64]) -> Result<()> {
    check_dim(spec.param_count(), theta.len())
}

/// Network outputs, one row per input row.
pub fn forward(spec: &MlpSpec, theta: &[f64], inputs: &Matrix) -> Result<Matrix> {
    check_theta(spec, theta)?;
    check_dim(spec.input_dim(), inputs.cols())?;
    let layers = spec.layers();
    let mut out = Matrix::zeros(inputs.rows(), spec.output_dim());
    for i in 0..inputs.rows() {
        let mut a = inputs.row(i).to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let mut z = affine(layer, theta, &a);
            if l + 1 < layers.len() {
                z.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
            }
            a = z;
        }
        for (k, v) in a.into_iter().enumerate() {
            out[(i, k)] = v;
        }
    }
    Ok(out)
}

fn affine(layer: &LayerLayout, theta: &[f64], a: &[f64]) -> Vec<f64> {
    let w = &theta[layer.weight_range()];
    let b = &theta[layer.bias_range()];
    (0..layer.fan_out)
        .map(|r| {
            let row = &w[r * layer.fan_in..(r + 1) * layer.fan_in];
            let s: f64 = row.iter().zip(a).map(|(x, y)| x * y).sum();
            s + b.get(r).copied().unwrap_or(0.0)
        })
        .collect()
}

fn sample_loss(kind: LossKind, z: &[f64], t: &[f64]) -> f64 {
    match kind {
        LossKind::Mse => 0.5 * z.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        LossKind::Ce => {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            z.iter().zip(t).map(|(zk, tk)| tk * (lse - zk)).sum()
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean loss over the dataset.
pub fn loss_value(spec: &MlpSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    data.check(spec)?;
    let out = forward(spec, theta, &data.inputs)?;
    let n = data.len() as f64;
    let total: f64 = (0..data.len())
        .map(|i| sample_loss(spec.loss_kind, out.row(i), data.targets.row(i)))
        .sum();
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow("loss evaluation"));
    }
    Ok(loss)
}

pub fn loss_value_and_grad(spec: &MlpSpec, theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let (loss, grad, _) = backprop(spec, theta, data, None)?;
    Ok((loss, grad))
}

/// Exact `∇²L(θ) v` via forward-over-reverse differentiation.
pub fn hessian_vector_product(spec: &MlpSpec, theta: &[f64], v: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    check_dim(theta.len(), v.len())?;
    let (_, _, hv) = backprop(spec, theta, data, Some(v))?;
    Ok(hv.expect("hvp requested"))
}

/// Dense Hessian assembled column by column from HVPs, then symmetrized.
/// Returns the matrix and its asymmetry before symmetrization.
pub fn dense_hessian_raw(spec: &MlpSpec, theta: &[f64], data: &Dataset) -> Result<(Matrix, f64)> {
    let p = spec.param_count();
    if p > DENSE_LIMIT {
        return Err(Error::TooManyParameters {
            count: p,
            limit: DENSE_LIMIT,
        });
    }
    let mut h = Matrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let col = hessian_vector_product(spec, theta, &e, data)?;
        for (i, v) in col.into_iter().enumerate() {
            h[(i, j)] = v;
        }
        e[j] = 0.0;
    }
    let asym = h.max_asymmetry();
    h.symmetrize();
    Ok((h, asym))
}

pub fn dense_hessian(spec: &MlpSpec, theta: &[f64], data: &Dataset) -> Result<Matrix> {
    Ok(dense_hessian_raw(spec, theta, data)?.0)
}

/// Smallest `|pre-activation|` over all hidden units and samples; used to
/// keep finite-difference checks away from relu kinks.
pub fn min_abs_preactivation(spec: &MlpSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    check_theta(spec, theta)?;
    let layers = spec.layers();
    let mut best = f64::INFINITY;
    for i in 0..data.len() {
        let mut a = data.inputs.row(i).to_vec();
        for layer in &layers[..layers.len() - 1] {
            let z = affine(layer, theta, &a);
            best = z.iter().fold(best, |m, v| m.min(v.abs()));
            a = z.iter().map(|v| spec.activation.apply(*v)).collect();
        }
    }
    Ok(best)
}

#[allow(clippy::type_complexity)]
fn backprop(
    spec: &MlpSpec,
    theta: &[f64],
    data: &Dataset,
    v: Option<&[f64]>,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    check_theta(spec, theta)?;
    data.check(spec)?;
    let layers = spec.layers();
    let depth = layers.len();
    let n = data.len() as f64;
    let act = spec.activation;

    let mut grad = vec![0.0; theta.len()];
    let mut hv = v.map(|_| vec![0.0; theta.len()]);
    let mut total = 0.0;

    // pre-activations z[l] and activations a[l] (a[0] = input), plus their
    // directional derivatives along v.
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    let mut rzs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut racts: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);

    for i in 0..data.len() {
        zs.clear();
        acts.clear();
        rzs.clear();
        racts.clear();
        acts.push(data.inputs.row(i).to_vec());
        racts.push(vec![0.0; spec.input_dim()]);

        for (l, layer) in layers.iter().enumerate() {
            let z = affine(layer, theta, &acts[l]);
            let hidden = l + 1 < depth;
            if let Some(v) = v {
                // R{z} = V a + W R{a} + R{b}
                let mut rz = affine(layer, v, &acts[l]);
                let wr = affine_no_bias(layer, theta, &racts[l]);
                rz.iter_mut().zip(&wr).for_each(|(a, b)| *a += b);
                let ra = if hidden {
                    rz.iter().zip(&z).map(|(r, zz)| act.first(*zz) * r).collect()
                } else {
                    rz.clone()
                };
                rzs.push(rz);
                racts.push(ra);
            }
            let a: Vec<f64> = if hidden {
                z.iter().map(|zz| act.apply(*zz)).collect()
            } else {
                z.clone()
            };
            if !all_finite(&a) {
                return Err(Error::NumericalOverflow("forward pass"));
            }
            zs.push(z);
            acts.push(a);
        }

        let out = &zs[depth - 1];
        let target = data.targets.row(i);
        total += sample_loss(spec.loss_kind, out, target);

        let (mut delta, mut rdelta): (Vec<f64>, Option<Vec<f64>>) = match spec.loss_kind {
            LossKind::Mse => (
                out.iter().zip(target).map(|(o, t)| (o - t) / n).collect(),
                v.map(|_| rzs[depth - 1].iter().map(|r| r / n).collect()),
            ),
            LossKind::Ce => {
                let p = softmax(out);
                let d = p.iter().zip(target).map(|(pk, tk)| (pk - tk) / n).collect();
                let rd = v.map(|_| {
                    let rz = &rzs[depth - 1];
                    let prz: f64 = p.iter().zip(rz).map(|(a, b)| a * b).sum();
                    p.iter().zip(rz).map(|(pk, r)| pk * (r - prz) / n).collect()
                });
                (d, rd)
            }
        };

        for l in (0..depth).rev() {
            let layer = &layers[l];
            let a_prev = &acts[l];
            let wr = layer.weight_range();
            let br = layer.bias_range();
            for r in 0..layer.fan_out {
                let row = wr.start + r * layer.fan_in;
                for c in 0..layer.fan_in {
                    grad[row + c] += delta[r] * a_prev[c];
                }
                if layer.bias {
                    grad[br.start + r] += delta[r];
                }
            }
            if let (Some(hv), Some(rd)) = (hv.as_mut(), rdelta.as_ref()) {
                let ra_prev = &racts[l];
                for r in 0..layer.fan_out {
                    let row = wr.start + r * layer.fan_in;
                    for c in 0..layer.fan_in {
                        hv[row + c] += rd[r] * a_prev[c] + delta[r] * ra_prev[c];
                    }
                    if layer.bias {
                        hv[br.start + r] += rd[r];
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &theta[wr.clone()];
            let ga = transpose_mul(layer, w, &delta);
            let z_prev = &zs[l - 1];
            let new_rdelta = match (v, rdelta.as_ref()) {
                (Some(v), Some(rd)) => {
                    let vw = &v[wr.clone()];
                    let mut rga = transpose_mul(layer, vw, &delta);
                    let t = transpose_mul(layer, w, rd);
                    rga.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
                    let rz_prev = &rzs[l - 1];
                    Some(
                        (0..layer.fan_in)
                            .map(|k| act.second(z_prev[k]) * rz_prev[k] * ga[k] + act.first(z_prev[k]) * rga[k])
                            .collect(),
                    )
                }
                _ => None,
            };
            delta = ga.iter().zip(z_prev).map(|(g, z)| g * act.first(*z)).collect();
            rdelta = new_rdelta;
        }
    }

    let loss = total / n;
    if !loss.is_finite() || !all_finite(&grad) {
        return Err(Error::NumericalOverflow("backward pass"));
    }
    Ok((loss, grad, hv))
}

fn affine_no_bias(layer: &LayerLayout, theta: &[f64], a: &[f64]) -> Vec<f64> {
    let w = &theta[layer.weight_range()];
    (0..layer.fan_out)
        .map(|r| {
            w[r * layer.fan_in..(r + 1) * layer.fan_in]
                .iter()
                .zip(a)
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect()
}

/// `Wᵀ d` for the row-major weight block `w`.
fn transpose_mul(layer: &LayerLayout, w: &[f64], d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layer.fan_in];
    for r in 0..layer.fan_out {
        let row = &w[r * layer.fan_in..(r + 1) * layer.fan_in];
        for (o, x) in out.iter_mut().zip(row) {
            *o += x * d[r];
        }
    }
    out
}
