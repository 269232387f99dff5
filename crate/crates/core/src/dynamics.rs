//! Full-batch gradient descent and RK4 gradient flow.
//!
//! Both engines share the same stopping rules: stop as `Converged` once the
//! loss is at or below the goal, as `Diverged` once it is non-finite or at
//! least `divergence_factor` times the initial loss, and as `MaxSteps`
//! otherwise. Metrics are recorded every `record_every` steps and always at
//! the final iterate. Parameters are checkpointed the first time the loss
//! drops below each power of ten from `10⁻¹` down to the goal.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::model::Model;

pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 1e3;
pub const DEFAULT_RECORD_EVERY: usize = 10;
/// Relative final-loss agreement required between `h` and `h/2`.
pub const STEP_DOUBLING_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Learning rate for GD, integration step for GF.
    pub step: f64,
    pub loss_goal: f64,
    pub max_steps: usize,
    pub record_every: usize,
    pub divergence_factor: f64,
    /// Seed for the power-iteration start vectors.
    pub seed: u64,
    /// Keep per-step loss and gradient norm (needed by the descent diagnostic).
    pub retain_steps: bool,
    /// Keep the parameters at every recorded entry.
    pub retain_path: bool,
}

impl RunConfig {
    pub fn new(step: f64, loss_goal: f64, max_steps: usize) -> Self {
        Self {
            step,
            loss_goal,
            max_steps,
            record_every: DEFAULT_RECORD_EVERY,
            divergence_factor: DEFAULT_DIVERGENCE_FACTOR,
            seed: 0,
            retain_steps: true,
            retain_path: false,
        }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.loss_goal.is_nan() || self.loss_goal <= 0.0 {
            return Err(Error::InvalidArgument("loss goal must be positive".into()));
        }
        if self.max_steps < 1 || self.record_every < 1 {
            return Err(Error::InvalidArgument("max_steps and record_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Converged,
    Diverged,
    MaxSteps,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Converged => "Converged",
            Outcome::Diverged => "Diverged",
            Outcome::MaxSteps => "MaxSteps",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub step: usize,
    /// `step · η` for GD, integration time for GF.
    pub time: f64,
    pub loss: f64,
    pub sharpness: f64,
    pub l1: f64,
    pub l2: f64,
    pub nuclear: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub time: f64,
    pub loss: f64,
    pub theta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    GradientDescent,
    GradientFlow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub engine: Engine,
    pub entries: Vec<Entry>,
    /// Keyed by `k` for the threshold `10^{-k}`.
    pub checkpoints: BTreeMap<u32, Checkpoint>,
    pub outcome: Outcome,
    pub steps: usize,
    pub final_theta: Vec<f64>,
    pub final_loss: f64,
    /// First time (GF) or step·η (GD) with loss ≤ goal.
    pub t_eps: Option<f64>,
    /// `L(θ_k)` for every step, when retained.
    pub step_losses: Vec<f64>,
    /// `‖∇L(θ_k)‖²` for every step, when retained.
    pub grad_norms_sq: Vec<f64>,
    /// Step actually used at the end of a GF run (after any halving).
    pub final_step: f64,
    /// Parameters at each entry, when retained.
    pub path: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn initial_sharpness(&self) -> f64 {
        self.entries.first().map_or(f64::NAN, |e| e.sharpness)
    }

    pub fn final_sharpness(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.sharpness)
    }

    pub fn max_sharpness(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.sharpness)
            .filter(|s| s.is_finite())
            .fold(f64::NAN, f64::max)
    }

    pub fn final_entry(&self) -> Option<&Entry> {
        self.entries.last()
    }

    /// CSV with columns `step_or_time,loss,sharpness,l1,l2,nuclear`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step_or_time,loss,sharpness,l1,l2,nuclear\n");
        for e in &self.entries {
            let key = match self.engine {
                Engine::GradientDescent => e.step.to_string(),
                Engine::GradientFlow => fmt_f64(e.time),
            };
            out.push_str(&format!(
                "{key},{},{},{},{},{}\n",
                fmt_f64(e.loss),
                fmt_f64(e.sharpness),
                fmt_f64(e.l1),
                fmt_f64(e.l2),
                fmt_f64(e.nuclear)
            ));
        }
        out
    }
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

struct Recorder<'a, M: Model + ?Sized> {
    model: &'a M,
    cfg: &'a RunConfig,
    entries: Vec<Entry>,
    path: Vec<Vec<f64>>,
    checkpoints: BTreeMap<u32, Checkpoint>,
    warm: Option<Vec<f64>>,
    lowest_threshold: u32,
}

impl<'a, M: Model + ?Sized> Recorder<'a, M> {
    fn new(model: &'a M, cfg: &'a RunConfig) -> Self {
        // thresholds 10^-1 … down to the goal, inclusive
        let lowest_threshold = (-cfg.loss_goal.log10() + 1e-9).floor().max(1.0) as u32;
        Self {
            model,
            cfg,
            entries: Vec::new(),
            path: Vec::new(),
            checkpoints: BTreeMap::new(),
            warm: None,
            lowest_threshold,
        }
    }

    fn record(&mut self, step: usize, time: f64, loss: f64, theta: &[f64]) {
        if self.entries.last().is_some_and(|e| e.step == step) {
            return;
        }
        let finite = theta.iter().all(|v| v.is_finite()) && loss.is_finite();
        let sharpness = if finite {
            match self.model.sharpness(theta, self.warm.as_deref(), self.cfg.seed) {
                Ok(est) => {
                    self.warm = Some(est.vector);
                    est.value
                }
                Err(Error::MaxIterExceeded { estimate, .. }) => estimate,
                Err(_) => f64::NAN,
            }
        } else {
            f64::NAN
        };
        let norms = self.model.norms(theta).unwrap_or_default();
        self.entries.push(Entry {
            step,
            time,
            loss,
            sharpness,
            l1: norms.l1,
            l2: norms.l2,
            nuclear: norms.nuclear,
        });
        if self.cfg.retain_path {
            self.path.push(theta.to_vec());
        }
    }

    fn checkpoint(&mut self, step: usize, time: f64, loss: f64, theta: &[f64]) {
        if !loss.is_finite() {
            return;
        }
        for k in 1..=self.lowest_threshold {
            if loss < 10f64.powi(-(k as i32)) && !self.checkpoints.contains_key(&k) {
                self.checkpoints.insert(
                    k,
                    Checkpoint {
                        step,
                        time,
                        loss,
                        theta: theta.to_vec(),
                    },
                );
            }
        }
    }
}

fn diverged(loss: f64, loss0: f64, factor: f64) -> bool {
    !loss.is_finite() || loss >= factor * loss0
}

/// `θ_{k+1} = θ_k − η ∇L(θ_k)`.
pub fn gd_run<M: Model + ?Sized>(model: &M, theta0: &[f64], cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if !theta0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("initial parameters must be finite".into()));
    }
    let eta = cfg.step;
    let mut rec = Recorder::new(model, cfg);
    let mut theta = theta0.to_vec();
    let (mut loss, mut grad) = model.loss_and_grad(&theta)?;
    let loss0 = loss;
    let mut step_losses = Vec::new();
    let mut grad_norms_sq = Vec::new();
    let mut t_eps = None;
    let mut k = 0usize;
    rec.record(0, 0.0, loss, &theta);

    let outcome = loop {
        if cfg.retain_steps {
            step_losses.push(loss);
            grad_norms_sq.push(if loss.is_finite() { dot(&grad, &grad) } else { f64::NAN });
        }
        rec.checkpoint(k, k as f64 * eta, loss, &theta);
        if loss <= cfg.loss_goal {
            t_eps = Some(k as f64 * eta);
            break Outcome::Converged;
        }
        if diverged(loss, loss0, cfg.divergence_factor) {
            break Outcome::Diverged;
        }
        if k >= cfg.max_steps {
            break Outcome::MaxSteps;
        }
        axpy(-eta, &grad, &mut theta);
        k += 1;
        match model.loss_and_grad(&theta) {
            Ok((l, g)) => {
                loss = l;
                grad = g;
            }
            Err(Error::NumericalOverflow(_)) => {
                loss = f64::INFINITY;
            }
            Err(e) => return Err(e),
        }
        if k.is_multiple_of(cfg.record_every) {
            rec.record(k, k as f64 * eta, loss, &theta);
        }
    };
    rec.record(k, k as f64 * eta, loss, &theta);

    Ok(Trajectory {
        engine: Engine::GradientDescent,
        entries: rec.entries,
        checkpoints: rec.checkpoints,
        outcome,
        steps: k,
        final_theta: theta,
        final_loss: loss,
        t_eps,
        step_losses,
        grad_norms_sq,
        final_step: eta,
        path: rec.path,
    })
}

/// One classical RK4 step of `θ' = −∇L(θ)`.
pub fn rk4_step<M: Model + ?Sized>(model: &M, theta: &[f64], grad: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut probe = theta.to_vec();
    axpy(0.5 * h, &k1, &mut probe);
    let k2: Vec<f64> = model.loss_and_grad(&probe)?.1.iter().map(|g| -g).collect();
    probe.copy_from_slice(theta);
    axpy(0.5 * h, &k2, &mut probe);
    let k3: Vec<f64> = model.loss_and_grad(&probe)?.1.iter().map(|g| -g).collect();
    probe.copy_from_slice(theta);
    axpy(h, &k3, &mut probe);
    let k4: Vec<f64> = model.loss_and_grad(&probe)?.1.iter().map(|g| -g).collect();
    Ok(theta
        .iter()
        .enumerate()
        .map(|(i, t)| t + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Default integration step: `1 / (10 · S(θ0))`.
pub fn default_gf_step<M: Model + ?Sized>(model: &M, theta0: &[f64], seed: u64) -> Result<f64> {
    let s0 = model.sharpness(theta0, None, seed)?.value;
    if s0 > 0.0 && s0.is_finite() {
        Ok(1.0 / (10.0 * s0))
    } else {
        Err(Error::InvalidArgument(format!(
            "initial sharpness {s0} gives no step size"
        )))
    }
}

const MAX_HALVINGS: u32 = 30;

/// Gradient flow by classical RK4 with step `cfg.step`. A step that
/// increases the loss is retried with half the step; the smaller step is
/// kept for the rest of the run.
pub fn gf_run<M: Model + ?Sized>(model: &M, theta0: &[f64], cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if !theta0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("initial parameters must be finite".into()));
    }
    let mut h = cfg.step;
    let mut halvings = 0;
    let mut rec = Recorder::new(model, cfg);
    let mut theta = theta0.to_vec();
    let (mut loss, mut grad) = model.loss_and_grad(&theta)?;
    let loss0 = loss;
    let mut t = 0.0;
    let mut k = 0usize;
    let mut step_losses = Vec::new();
    let mut grad_norms_sq = Vec::new();
    let mut t_eps = None;
    rec.record(0, 0.0, loss, &theta);

    let outcome = loop {
        if cfg.retain_steps {
            step_losses.push(loss);
            grad_norms_sq.push(if loss.is_finite() { dot(&grad, &grad) } else { f64::NAN });
        }
        rec.checkpoint(k, t, loss, &theta);
        if loss <= cfg.loss_goal {
            t_eps = Some(t);
            break Outcome::Converged;
        }
        if diverged(loss, loss0, cfg.divergence_factor) {
            break Outcome::Diverged;
        }
        if k >= cfg.max_steps {
            break Outcome::MaxSteps;
        }
        let (next, next_loss, next_grad) = loop {
            let attempt = rk4_step(model, &theta, &grad, h).and_then(|th| {
                let (l, g) = model.loss_and_grad(&th)?;
                Ok((th, l, g))
            });
            match attempt {
                Ok((th, l, g)) if l <= loss || halvings >= MAX_HALVINGS => break (th, l, g),
                Ok(_) | Err(Error::NumericalOverflow(_)) if halvings < MAX_HALVINGS => {
                    h *= 0.5;
                    halvings += 1;
                }
                Ok((th, l, g)) => break (th, l, g),
                Err(Error::NumericalOverflow(_)) => break (theta.clone(), f64::INFINITY, grad.clone()),
                Err(e) => return Err(e),
            }
        };
        theta = next;
        loss = next_loss;
        grad = next_grad;
        t += h;
        k += 1;
        if k.is_multiple_of(cfg.record_every) {
            rec.record(k, t, loss, &theta);
        }
    };
    rec.record(k, t, loss, &theta);

    Ok(Trajectory {
        engine: Engine::GradientFlow,
        entries: rec.entries,
        checkpoints: rec.checkpoints,
        outcome,
        steps: k,
        final_theta: theta,
        final_loss: loss,
        t_eps,
        step_losses,
        grad_norms_sq,
        final_step: h,
        path: rec.path,
    })
}

/// Integrates exactly `n_steps` RK4 steps of size `h` with no stopping rule.
pub fn gf_integrate_fixed<M: Model + ?Sized>(model: &M, theta0: &[f64], h: f64, n_steps: usize) -> Result<Vec<f64>> {
    let mut theta = theta0.to_vec();
    for _ in 0..n_steps {
        let (_, g) = model.loss_and_grad(&theta)?;
        theta = rk4_step(model, &theta, &g, h)?;
    }
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDoubling {
    pub h: f64,
    pub t_end: f64,
    pub loss_h: f64,
    pub loss_half: f64,
    pub rel_diff: f64,
}

impl StepDoubling {
    pub fn certified(&self) -> bool {
        self.rel_diff < STEP_DOUBLING_TOL
    }
}

/// Compares the loss reached at `t_end = n·h` with steps `h` and `h/2`.
pub fn step_doubling<M: Model + ?Sized>(model: &M, theta0: &[f64], h: f64, n_steps: usize) -> Result<StepDoubling> {
    let a = gf_integrate_fixed(model, theta0, h, n_steps)?;
    let b = gf_integrate_fixed(model, theta0, 0.5 * h, 2 * n_steps)?;
    let loss_h = model.loss(&a)?;
    let loss_half = model.loss(&b)?;
    let rel_diff = (loss_h - loss_half).abs() / loss_half.abs().max(f64::MIN_POSITIVE);
    Ok(StepDoubling {
        h,
        t_end: h * n_steps as f64,
        loss_h,
        loss_half,
        rel_diff,
    })
}

/// Runs GF, halving the step until the step-doubling check passes at the
/// convergence time (at most `max_halvings` times).
pub fn gf_run_certified<M: Model + ?Sized>(
    model: &M,
    theta0: &[f64],
    cfg: &RunConfig,
    max_halvings: u32,
) -> Result<(Trajectory, StepDoubling)> {
    let mut cfg = cfg.clone();
    let mut attempt = 0;
    loop {
        let traj = gf_run(model, theta0, &cfg)?;
        let h = traj.final_step;
        let n = ((traj.t_eps.unwrap_or(h * traj.steps as f64) / h).round() as usize).max(1);
        let check = step_doubling(model, theta0, h, n)?;
        if check.certified() || attempt >= max_halvings {
            return Ok((traj, check));
        }
        cfg.step = h * 0.5;
        cfg.max_steps = cfg.max_steps.saturating_mul(2);
        attempt += 1;
    }
}

/// Maximum recorded sharpness up to the first time the loss reaches `eps`.
pub fn s_gf(record: &Trajectory, eps: f64) -> Result<f64> {
    let idx = record
        .entries
        .iter()
        .position(|e| e.loss <= eps)
        .ok_or(Error::GoalNotReached(eps))?;
    Ok(record.entries[..=idx]
        .iter()
        .map(|e| e.sharpness)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Number of steps violating `L_{k+1} ≤ L_k − η(1 − Lη/2)‖∇L_k‖²`, with
/// `L = smoothness`. A relative slack of `1e-12 · L_k` absorbs rounding on
/// quadratics where the bound is tight.
pub fn descent_diagnostic(record: &Trajectory, eta: f64, smoothness: f64) -> usize {
    let losses = &record.step_losses;
    let grads = &record.grad_norms_sq;
    let coeff = eta * (1.0 - smoothness * eta / 2.0);
    (0..losses.len().saturating_sub(1))
        .filter(|&k| {
            let bound = losses[k] - coeff * grads[k];
            losses[k + 1] > bound + 1e-12 * losses[k].abs()
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnet::DiagNetProblem;
    use crate::model::{DiagNetModel, Quadratic};

    fn bench() -> DiagNetModel {
        DiagNetModel::new(DiagNetProblem::new(vec![1.0, 2.0], 2.0).unwrap()).unwrap()
    }

    #[test]
    fn gd_quadratic_geometric_rate() {
        let q = Quadratic::new(vec![4.0]);
        let eta = 0.3;
        let traj = gd_run(&q, &[1.0], &RunConfig::new(eta, 1e-12, 10_000).record_every(1)).unwrap();
        assert_eq!(traj.outcome, Outcome::Converged);
        let ratio: f64 = 1.0 - eta * 4.0;
        for w in traj.step_losses.windows(2) {
            assert!((w[1] / w[0] - ratio * ratio).abs() < 1e-12);
        }
        assert_eq!(descent_diagnostic(&traj, eta, 4.0), 0);
    }

    #[test]
    fn gd_quadratic_diverges_above_two_over_lambda() {
        let q = Quadratic::new(vec![4.0]);
        let traj = gd_run(&q, &[1.0], &RunConfig::new(0.55, 1e-12, 10_000)).unwrap();
        assert_eq!(traj.outcome, Outcome::Diverged);
    }

    #[test]
    fn gd_max_steps() {
        let q = Quadratic::new(vec![1.0]);
        let traj = gd_run(&q, &[1.0], &RunConfig::new(1e-3, 1e-12, 5)).unwrap();
        assert_eq!(traj.outcome, Outcome::MaxSteps);
        assert_eq!(traj.steps, 5);
    }

    #[test]
    fn gf_matches_exponential_decay() {
        let lambda = 3.0;
        let q = Quadratic::new(vec![lambda]);
        let h = 0.01;
        let theta = gf_integrate_fixed(&q, &[1.0], h, 100).unwrap();
        let exact = (-lambda * 1.0f64).exp();
        // global error O(h⁴)
        assert!((theta[0] - exact).abs() < 1e-8, "{} vs {}", theta[0], exact);
    }

    #[test]
    fn gf_stationary_point_stays_put() {
        let m = bench();
        let traj = gf_run(&m, &[0.0, 1.0], &RunConfig::new(0.01, 1e-8, 100).record_every(1)).unwrap();
        assert_eq!(traj.outcome, Outcome::Converged);
        assert_eq!(traj.final_theta, vec![0.0, 1.0]);
        assert_eq!(traj.t_eps, Some(0.0));
    }

    #[test]
    fn checkpoints_cover_every_power_of_ten() {
        let q = Quadratic::new(vec![1.0]);
        let traj = gd_run(&q, &[1.0], &RunConfig::new(0.1, 1e-6, 100_000)).unwrap();
        let keys: Vec<u32> = traj.checkpoints.keys().copied().collect();
        assert_eq!(keys, vec![1, 2, 3, 4, 5, 6]);
        for (k, c) in &traj.checkpoints {
            assert!(c.loss < 10f64.powi(-(*k as i32)));
        }
    }

    #[test]
    fn s_gf_cases() {
        let m = bench();
        let theta0 = [0.01, 0.01];
        let h = default_gf_step(&m, &theta0, 0).unwrap();
        let traj = gf_run(&m, &theta0, &RunConfig::new(h, 1e-8, 1_000_000).record_every(1)).unwrap();
        assert_eq!(traj.outcome, Outcome::Converged);
        let s = s_gf(&traj, 1e-8).unwrap();
        assert!((s - 16.0).abs() / 16.0 < 0.02, "s_gf = {s}");
        // ε above the initial loss: the sharpness at t = 0
        assert_eq!(s_gf(&traj, 10.0).unwrap(), traj.entries[0].sharpness);
        assert!(matches!(s_gf(&traj, 1e-30), Err(Error::GoalNotReached(_))));
    }

    #[test]
    fn descent_diagnostic_single_step_is_zero() {
        let q = Quadratic::new(vec![1.0]);
        let traj = gd_run(&q, &[0.0], &RunConfig::new(0.1, 1e-8, 10)).unwrap();
        assert_eq!(traj.step_losses.len(), 1);
        assert_eq!(descent_diagnostic(&traj, 0.1, 1.0), 0);
    }

    #[test]
    fn gd_is_deterministic() {
        let m = bench();
        let cfg = RunConfig::new(0.2, 1e-8, 100_000);
        let a = gd_run(&m, &[0.01, 0.01], &cfg).unwrap();
        let b = gd_run(&m, &[0.01, 0.01], &cfg).unwrap();
        assert_eq!(a, b);
    }
}
