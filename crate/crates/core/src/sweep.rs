//! Learning-rate sweeps: schedule construction, the runs themselves, regime
//! classification and the critical learning rate estimate.
//!
//! The schedule has a fine grid `k/(2 s_gf)`, `k = 1..12`, around the
//! critical rate `2/s_gf`, and a coarse grid of nine rates on
//! `[6/s_gf, 2/s0]` that is extended upward until some run diverges.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, gd_run, Outcome, RunConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sharpness::l1_distance;

pub const FINE_POINTS: usize = 12;
pub const COARSE_POINTS: usize = 9;
pub const MAX_EXTENSION: usize = 32;
pub const DEFAULT_TAU_FLOW: f64 = 0.10;
pub const DEFAULT_TAU_EOS: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub s0: f64,
    pub s_gf: f64,
    /// Spacing of the lazy extension above the coarse grid.
    pub extension_step: f64,
    /// First extension rate is `extension_start + extension_step`.
    pub extension_start: f64,
}

impl Schedule {
    pub fn critical_rate(&self) -> f64 {
        2.0 / self.s_gf
    }

    /// Fine and coarse rates together, sorted and deduplicated.
    pub fn rates(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.fine.iter().chain(&self.coarse).copied().collect();
        sort_dedup(&mut all);
        all
    }

    pub fn extension(&self, k: usize) -> f64 {
        self.extension_start + k as f64 * self.extension_step
    }

    /// Coarse grid with its spacing halved.
    pub fn coarse_midpoints(&self) -> Vec<f64> {
        self.coarse.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()));
}

pub fn build_schedule(s0: f64, s_gf: f64) -> Result<Schedule> {
    if !(s0 > 0.0 && s0.is_finite() && s_gf > 0.0 && s_gf.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sharpness values must be positive, got s0 = {s0}, s_gf = {s_gf}"
        )));
    }
    let fine = (1..=FINE_POINTS).map(|k| k as f64 / (2.0 * s_gf)).collect();
    let lo = 6.0 / s_gf;
    let hi = 2.0 / s0;
    let (coarse, extension_step, extension_start) = if hi > lo {
        let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
        let grid = (0..COARSE_POINTS)
            .map(|i| {
                if i == COARSE_POINTS - 1 {
                    hi
                } else {
                    lo + i as f64 * step
                }
            })
            .collect();
        (grid, (hi - lo) / 8.0, hi)
    } else {
        (Vec::new(), 1.0 / (2.0 * s_gf), lo)
    };
    Ok(Schedule {
        fine,
        coarse,
        s0,
        s_gf,
        extension_step,
        extension_start,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    FlowAligned,
    EoS,
    Diverged,
    Unclassified,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::FlowAligned => "FlowAligned",
            Regime::EoS => "EoS",
            Regime::Diverged => "Diverged",
            Regime::Unclassified => "Unclassified",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Fine,
    Coarse,
    Refined,
    Extension,
}

impl Grid {
    fn name(self) -> &'static str {
        match self {
            Grid::Fine => "fine",
            Grid::Coarse => "coarse",
            Grid::Refined => "refined",
            Grid::Extension => "extension",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub eta: f64,
    pub grid: Grid,
    /// `None` when the run itself failed; see `error`.
    pub outcome: Option<Outcome>,
    pub steps: usize,
    pub steps_to_goal: Option<usize>,
    pub final_loss: f64,
    pub final_sharpness: f64,
    pub max_sharpness: f64,
    pub l1: f64,
    pub l2: f64,
    pub nuclear: f64,
    pub gf_distance: f64,
    pub test_metric: Option<f64>,
    pub regime: Regime,
    pub error: Option<String>,
}

impl SweepRecord {
    fn from_run(eta: f64, grid: Grid, run: Result<Trajectory>, gf_theta: &[f64]) -> Self {
        match run {
            Ok(t) => {
                let last = t.final_entry();
                let pick = |f: fn(&crate::dynamics::Entry) -> f64| last.map_or(f64::NAN, f);
                Self {
                    eta,
                    grid,
                    outcome: Some(t.outcome),
                    steps: t.steps,
                    steps_to_goal: (t.outcome == Outcome::Converged).then_some(t.steps),
                    final_loss: t.final_loss,
                    final_sharpness: t.final_sharpness(),
                    max_sharpness: t.max_sharpness(),
                    l1: pick(|e| e.l1),
                    l2: pick(|e| e.l2),
                    nuclear: pick(|e| e.nuclear),
                    gf_distance: if !gf_theta.is_empty() {
                        l1_distance(&t.final_theta, gf_theta).unwrap_or(f64::NAN)
                    } else {
                        f64::NAN
                    },
                    test_metric: None,
                    regime: Regime::Unclassified,
                    error: None,
                }
            }
            Err(e) => Self {
                eta,
                grid,
                outcome: None,
                steps: 0,
                steps_to_goal: None,
                final_loss: f64::NAN,
                final_sharpness: f64::NAN,
                max_sharpness: f64::NAN,
                l1: f64::NAN,
                l2: f64::NAN,
                nuclear: f64::NAN,
                gf_distance: f64::NAN,
                test_metric: None,
                regime: Regime::Unclassified,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn diverged(&self) -> bool {
        self.outcome == Some(Outcome::Diverged)
    }

    pub fn converged(&self) -> bool {
        self.outcome == Some(Outcome::Converged)
    }
}

pub fn classify_regime(rec: &SweepRecord, s_gf: f64, tau_flow: f64, tau_eos: f64) -> Regime {
    match rec.outcome {
        Some(Outcome::Diverged) => Regime::Diverged,
        Some(Outcome::Converged) => {
            let critical = 2.0 / s_gf;
            if (rec.final_sharpness - s_gf).abs() <= tau_flow * s_gf && rec.eta <= critical * (1.0 + tau_flow) {
                Regime::FlowAligned
            } else if rec.eta > critical && rec.max_sharpness >= (2.0 / rec.eta) * (1.0 - tau_eos) {
                Regime::EoS
            } else {
                Regime::Unclassified
            }
        }
        _ => Regime::Unclassified,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub loss_goal: f64,
    pub max_steps: usize,
    pub record_every: usize,
    pub seed: u64,
    pub tau_flow: f64,
    pub tau_eos: f64,
    pub max_extension: usize,
}

impl SweepOptions {
    pub fn new(loss_goal: f64, max_steps: usize) -> Self {
        Self {
            loss_goal,
            max_steps,
            record_every: crate::dynamics::DEFAULT_RECORD_EVERY,
            seed: 0,
            tau_flow: DEFAULT_TAU_FLOW,
            tau_eos: DEFAULT_TAU_EOS,
            max_extension: MAX_EXTENSION,
        }
    }

    fn run_config(&self, eta: f64) -> RunConfig {
        let mut cfg = RunConfig::new(eta, self.loss_goal, self.max_steps)
            .record_every(self.record_every)
            .seed(self.seed);
        cfg.retain_steps = false;
        cfg
    }
}

/// One GD run per rate from the shared `θ0`. Runs execute in parallel;
/// records come back sorted by `η`. A run that fails is reported in its
/// record and does not stop the sweep.
pub fn run_sweep<M: Model + ?Sized>(
    model: &M,
    theta0: &[f64],
    schedule: &Schedule,
    gf_reference: &Trajectory,
    opts: &SweepOptions,
) -> Vec<SweepRecord> {
    let run_batch = |rates: Vec<(f64, Grid)>| -> Vec<SweepRecord> {
        rates
            .into_par_iter()
            .map(|(eta, grid)| {
                let run = gd_run(model, theta0, &opts.run_config(eta));
                let test_metric = run.as_ref().ok().and_then(|t| model.test_metric(&t.final_theta));
                let mut rec = SweepRecord::from_run(eta, grid, run, &gf_reference.final_theta);
                rec.test_metric = test_metric;
                rec.regime = classify_regime(&rec, schedule.s_gf, opts.tau_flow, opts.tau_eos);
                rec
            })
            .collect()
    };

    let mut planned: Vec<(f64, Grid)> = schedule.fine.iter().map(|&e| (e, Grid::Fine)).collect();
    planned.extend(schedule.coarse.iter().map(|&e| (e, Grid::Coarse)));
    let mut records = run_batch(planned);

    let coarse_diverged = records.iter().any(|r| r.grid == Grid::Coarse && r.diverged());
    if coarse_diverged {
        records.extend(run_batch(
            schedule
                .coarse_midpoints()
                .into_iter()
                .map(|e| (e, Grid::Refined))
                .collect(),
        ));
    }

    if !records.iter().any(SweepRecord::diverged) {
        let chunk = rayon::current_num_threads().max(1);
        let mut k = 1;
        'extend: while k <= opts.max_extension {
            let upper = (k + chunk - 1).min(opts.max_extension);
            let batch = run_batch((k..=upper).map(|j| (schedule.extension(j), Grid::Extension)).collect());
            for rec in batch {
                let stop = rec.diverged();
                records.push(rec);
                if stop {
                    break 'extend;
                }
            }
            k = upper + 1;
        }
    }

    records.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    records.dedup_by(|a, b| a.eta == b.eta);
    records
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaCritical {
    pub estimate: f64,
    pub theory: f64,
    /// `estimate / theory`.
    pub ratio: f64,
}

/// Midpoint between the largest flow-aligned rate and the smallest EoS rate.
pub fn estimate_eta_c(records: &[SweepRecord], s_gf: f64) -> Result<EtaCritical> {
    let flow = records
        .iter()
        .filter(|r| r.regime == Regime::FlowAligned)
        .map(|r| r.eta)
        .fold(f64::NAN, f64::max);
    let eos = records
        .iter()
        .filter(|r| r.regime == Regime::EoS)
        .map(|r| r.eta)
        .fold(f64::NAN, f64::min);
    if flow.is_nan() || eos.is_nan() {
        return Err(Error::InsufficientData(format!(
            "need both flow-aligned and EoS records, have {} and {}",
            records.iter().filter(|r| r.regime == Regime::FlowAligned).count(),
            records.iter().filter(|r| r.regime == Regime::EoS).count()
        )));
    }
    let estimate = 0.5 * (flow + eos);
    let theory = 2.0 / s_gf;
    Ok(EtaCritical {
        estimate,
        theory,
        ratio: estimate / theory,
    })
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `NaN` for fewer than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn records_in(records: &[SweepRecord], regime: Regime) -> Vec<&SweepRecord> {
    records.iter().filter(|r| r.regime == regime).collect()
}

/// Pairs `(η₁, η₂, ratio)` of flow-aligned records, where
/// `ratio = (steps(η₁)/steps(η₂)) / (η₂/η₁)` should be close to 1.
pub fn flow_speed_ratios(records: &[SweepRecord]) -> Vec<(f64, f64, f64)> {
    let flow = records_in(records, Regime::FlowAligned);
    let mut out = Vec::new();
    for (i, a) in flow.iter().enumerate() {
        for b in &flow[i + 1..] {
            out.push((a.eta, b.eta, (a.steps as f64 / b.steps as f64) / (b.eta / a.eta)));
        }
    }
    out
}

pub const CSV_HEADER: &str = "eta,grid,outcome,steps,steps_to_goal,final_loss,final_sharpness,max_sharpness,l1,l2,nuclear,gf_distance,test_metric,regime,error";

pub fn records_csv(records: &[SweepRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.eta),
            r.grid.name(),
            r.outcome.map(|o| o.to_string()).unwrap_or_default(),
            r.steps,
            r.steps_to_goal.map(|s| s.to_string()).unwrap_or_default(),
            fmt_f64(r.final_loss),
            fmt_f64(r.final_sharpness),
            fmt_f64(r.max_sharpness),
            fmt_f64(r.l1),
            fmt_f64(r.l2),
            fmt_f64(r.nuclear),
            fmt_f64(r.gf_distance),
            opt(r.test_metric),
            r.regime,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        ));
    }
    out
}

/// Two stacked panels: final sharpness against `η` with the `2/η` curve, and
/// final ℓ₁ norm against `η`. Diverged runs are omitted.
pub fn sweep_svg(records: &[SweepRecord], s_gf: f64) -> String {
    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const PAD: f64 = 48.0;
    let pts: Vec<&SweepRecord> = records
        .iter()
        .filter(|r| r.converged() && r.final_sharpness.is_finite())
        .collect();
    let eta_max = records.iter().map(|r| r.eta).fold(2.0 / s_gf, f64::max);
    let s_max = pts.iter().map(|r| r.final_sharpness).fold(s_gf, f64::max) * 1.2;
    let l1_max = pts.iter().map(|r| r.l1).fold(0.0, f64::max).max(1e-12) * 1.1;
    let sx = |eta: f64| PAD + (W - 2.0 * PAD) * eta / eta_max;
    let panel = |top: f64, v: f64, vmax: f64| top + H - PAD - (H - 2.0 * PAD) * (v / vmax).min(1.0);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\">\n",
        2.0 * H
    );
    for (k, (label, vmax)) in [("sharpness", s_max), ("l1 norm", l1_max)].iter().enumerate() {
        let top = k as f64 * H;
        svg.push_str(&format!(
            "<rect x=\"{PAD}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            top + PAD,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        ));
        svg.push_str(&format!(
            "<text x=\"{PAD}\" y=\"{}\" font-size=\"12\">{label} (max {vmax:.4})</text>\n",
            top + PAD - 6.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">learning rate (max {eta_max:.4})</text>\n",
        W / 2.0 - 60.0,
        2.0 * H - 12.0
    ));
    let curve: Vec<String> = (1..=200)
        .map(|i| eta_max * i as f64 / 200.0)
        .filter(|e| 2.0 / e <= s_max)
        .map(|e| format!("{:.2},{:.2}", sx(e), panel(0.0, 2.0 / e, s_max)))
        .collect();
    if !curve.is_empty() {
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
            curve.join(" ")
        ));
    }
    for r in &pts {
        let color = match r.regime {
            Regime::FlowAligned => "steelblue",
            Regime::EoS => "firebrick",
            _ => "gray",
        };
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
            sx(r.eta),
            panel(0.0, r.final_sharpness, s_max)
        ));
        if r.l1.is_finite() {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(r.eta),
                panel(H, r.l1, l1_max)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
