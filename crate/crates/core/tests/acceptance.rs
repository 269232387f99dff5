//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::path::Path;
use std::time::{Duration, Instant};

use eos_lab::cli;
use eos_lab::data_io::{self, checkpoint, idx, SyntheticKind, SyntheticSpec};
use eos_lab::diagnet::{DiagNetProblem, Objective};
use eos_lab::dynamics::{self, Outcome, RunConfig, Trajectory};
use eos_lab::linalg::{dot, norm2, Matrix};
use eos_lab::logit::{self, TwoPointData};
use eos_lab::model::{DiagNetModel, MlpModel, Model, Quadratic};
use eos_lab::network::{self, Activation, Dataset, LossKind, MlpSpec};
use eos_lab::risk::{self, Algorithm, Sampler};
use eos_lab::rng::LabRng;
use eos_lab::sharpness;
use eos_lab::sweep::{self, Regime, SweepOptions, SweepRecord};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within_budget(name: &str, elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed <= budget, || {
        format!("{name} took {elapsed:.1?}, budget {budget:?}")
    })
}

// 1. diagonal network analytic suite

fn tangent_basis(p: &DiagNetProblem, w: &[f64]) -> Result<Vec<Vec<f64>>, String> {
    let d = p.dim();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let mut v = p.tangent_project(w, &e).map_err(e2s)?;
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= c * bi);
        }
        let n = norm2(&v);
        if n > 1e-8 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    Ok(basis)
}

/// Random point of a minimizer set: any direction on the support, scaled to
/// the set's radius.
fn point_in_set(d: usize, support: &[usize], radius_sq: f64, rng: &mut LabRng) -> Vec<f64> {
    let mut w = vec![0.0; d];
    for &i in support {
        w[i] = rng.normal();
    }
    let n = norm2(&w);
    w.iter().map(|v| v * radius_sq.sqrt() / n).collect()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = LabRng::new(1001);
    let mut problems = 0;
    let mut samples = 0usize;
    let mut worst_eig = 0.0f64;
    for &d in &[2usize, 3, 5] {
        for k in 0..20 {
            // every fourth problem draws from a coarse palette to force ties
            let x: Vec<f64> = if k % 4 == 0 {
                (0..d)
                    .map(|_| [0.5, 1.0, 2.0][(rng.unit() * 3.0) as usize % 3])
                    .collect()
            } else {
                (0..d).map(|_| 0.1 + 3.0 * rng.unit()).collect()
            };
            let y = 0.5 + 2.5 * rng.unit();
            let p = DiagNetProblem::new(x.clone(), y).map_err(e2s)?;
            let l1 = p.l1_minimizer_set().map_err(e2s)?;
            let sh = p.sharpness_minimizer_set().map_err(e2s)?;
            let x_max = x.iter().copied().fold(f64::MIN, f64::max);
            let x_min = x.iter().copied().fold(f64::MAX, f64::min);
            ensure(
                (l1.objective_value - y / x_max).abs() < 1e-12 * l1.objective_value,
                || format!("l1 minimum {} != y/x_max for x={x:?}", l1.objective_value),
            )?;
            ensure(
                (sh.objective_value - 4.0 * y * x_min).abs() < 1e-12 * sh.objective_value,
                || format!("sharpness minimum {} != 4 y x_min for x={x:?}", sh.objective_value),
            )?;

            // brute force over the manifold
            let mut drawn = 0;
            while drawn < 1000 {
                let solve_for = (rng.unit() * d as f64) as usize % d;
                let free: Vec<f64> = (0..d - 1)
                    .map(|_| rng.symmetric_open(1.0) * (y / x_min).sqrt())
                    .collect();
                let Some(w) = p.complete_on_manifold(&free, solve_for) else {
                    continue;
                };
                drawn += 1;
                let l1v = p.objective_value(&w, Objective::L1OfSquares).map_err(e2s)?;
                let shv = p.sharpness_closed_form(&w).map_err(e2s)?;
                ensure(l1v >= l1.objective_value * (1.0 - 1e-12), || {
                    format!("sample {w:?} beats the l1 minimum: {l1v} < {}", l1.objective_value)
                })?;
                ensure(shv >= sh.objective_value * (1.0 - 1e-12), || {
                    format!(
                        "sample {w:?} beats the sharpness minimum: {shv} < {}",
                        sh.objective_value
                    )
                })?;
                let on_l1 = w.iter().enumerate().all(|(i, v)| *v == 0.0 || x[i] == x_max);
                if !on_l1 && x_min != x_max {
                    ensure(l1v > l1.objective_value * (1.0 + 1e-14), || {
                        format!("sample {w:?} off the l1 set attains the minimum")
                    })?;
                }
                let eig = sharpness::dense_sym_eigen(&p.hessian(&w).map_err(e2s)?).map_err(e2s)?;
                let dense = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let rel = (dense - shv).abs() / dense;
                worst_eig = worst_eig.max(rel);
                ensure(rel < 1e-10, || {
                    format!("closed-form sharpness {shv} vs dense {dense} at {w:?}")
                })?;
            }
            samples += drawn;

            // whole sets attain the minima and satisfy both optimality conditions
            for (set, objective) in [(&l1, Objective::L1OfSquares), (&sh, Objective::Sharpness)] {
                for _ in 0..20 {
                    let w = point_in_set(d, &set.support_indices, set.radius_sq, &mut rng);
                    let v = p.objective_value(&w, objective).map_err(e2s)?;
                    ensure((v - set.objective_value).abs() < 1e-10 * set.objective_value, || {
                        format!("set point {w:?} has objective {v}, expected {}", set.objective_value)
                    })?;
                    let g = norm2(&p.riemannian_grad(&w, objective).map_err(e2s)?);
                    ensure(g < 1e-10, || format!("riemannian grad {g} at set point {w:?}"))?;
                    for u in tangent_basis(&p, &w)? {
                        let q = p.riemannian_hess_quadform(&w, &u, objective).map_err(e2s)?;
                        ensure(q >= -1e-10, || format!("negative curvature {q} at minimizer {w:?}"))?;
                    }
                }
                if x_min != x_max {
                    let other = if objective == Objective::L1OfSquares { &sh } else { &l1 };
                    let w = &other.canonical_representative;
                    let q_min = tangent_basis(&p, w)?
                        .iter()
                        .map(|u| p.riemannian_hess_quadform(w, u, objective))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(e2s)?
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    ensure(q_min < 0.0, || {
                        format!("no descent direction for {objective:?} at the opposite set, x={x:?}")
                    })?;
                }
            }
            problems += 1;
        }
    }
    within_budget("criterion 1", start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{problems} problems, {samples} manifold samples, worst eigen rel err {worst_eig:.1e}, {:.1?}",
        start.elapsed()
    ))
}

// 2. diagonal network phase transition

fn benchmark_diagnet() -> (DiagNetModel, Vec<f64>) {
    let p = DiagNetProblem::new(vec![1.0, 2.0], 2.0).unwrap();
    (DiagNetModel::new(p).unwrap(), vec![0.01, 0.01])
}

fn gf_reference<M: Model>(model: &M, theta0: &[f64], goal: f64) -> Result<Trajectory, String> {
    let h = dynamics::default_gf_step(model, theta0, 0).map_err(e2s)?;
    let cfg = RunConfig::new(h, goal, 10_000_000).record_every(10);
    dynamics::gf_run(model, theta0, &cfg).map_err(e2s)
}

struct SweepRun {
    s_gf: f64,
    records: Vec<SweepRecord>,
    extra: Vec<(f64, Trajectory)>,
}

fn diagnet_sweep() -> Result<SweepRun, String> {
    let (model, theta0) = benchmark_diagnet();
    let gf = gf_reference(&model, &theta0, 1e-8)?;
    let s_gf = dynamics::s_gf(&gf, 1e-8).map_err(e2s)?;
    let schedule = sweep::build_schedule(gf.initial_sharpness(), s_gf).map_err(e2s)?;
    let opts = SweepOptions::new(1e-8, 200_000);
    let records = sweep::run_sweep(&model, &theta0, &schedule, &gf, &opts);
    // rates past the stability limit of every minimizer, off the sweep grid
    let mut extra = Vec::new();
    for k in 0..16 {
        let eta = 0.2625 + 0.01 * (k as f64 + 0.5);
        let cfg = RunConfig::new(eta, 1e-8, 200_000);
        extra.push((eta, dynamics::gd_run(&model, &theta0, &cfg).map_err(e2s)?));
    }
    Ok(SweepRun { s_gf, records, extra })
}

fn criterion_2(run: &SweepRun, elapsed: Duration) -> Check {
    let s_gf = run.s_gf;
    let crit = 2.0 / s_gf;
    ensure((s_gf - 16.0).abs() <= 0.02 * 16.0, || format!("(a) s_gf = {s_gf}"))?;
    for r in &run.records {
        let converged = r.outcome == Some(Outcome::Converged);
        if r.eta <= 0.9 * crit {
            ensure(converged && (r.final_sharpness - s_gf).abs() <= 0.05 * s_gf, || {
                format!(
                    "(b) eta {} : {:?}, final sharpness {}",
                    r.eta, r.outcome, r.final_sharpness
                )
            })?;
        }
        if converged && r.eta > crit && r.eta < 0.25 {
            let ratio = r.final_sharpness * r.eta / 2.0;
            ensure((0.85..=1.05).contains(&ratio), || {
                format!(
                    "(c) eta {}: final sharpness {} is {ratio:.3}·2/eta",
                    r.eta, r.final_sharpness
                )
            })?;
        }
        if r.eta > 1.05 * 0.25 {
            ensure(!converged, || format!("(e) eta {} converged", r.eta))?;
        }
    }
    for (eta, t) in &run.extra {
        ensure(t.outcome != Outcome::Converged, || format!("(e) eta {eta} converged"))?;
    }
    let est = sweep::estimate_eta_c(&run.records, s_gf).map_err(|e| format!("(d) {e}"))?;
    ensure((est.estimate / crit - 1.0).abs() <= 0.20, || {
        format!("(d) eta_c estimate {} vs 2/s_gf {crit}", est.estimate)
    })?;
    within_budget("criterion 2", elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "s_gf {s_gf:.4}, eta_c {:.4} (ratio {:.3}), {} sweep records, {elapsed:.1?}",
        est.estimate,
        est.ratio,
        run.records.len()
    ))
}

// 3. MLP phase transition

fn benchmark_mlp() -> (MlpModel, Vec<f64>) {
    let spec = MlpSpec::new(vec![2, 16, 16, 1], Activation::Tanh, LossKind::Mse).unwrap();
    let data = data_io::generate(&SyntheticSpec::new(SyntheticKind::ProductRegression, 2, 64, 7)).unwrap();
    let theta0 = network::init_lecun_uniform(&spec, 1);
    (MlpModel::new(spec, data).unwrap(), theta0)
}

fn mlp_sweep() -> Result<SweepRun, String> {
    let (model, theta0) = benchmark_mlp();
    let gf = gf_reference(&model, &theta0, 1e-3)?;
    let s_gf = dynamics::s_gf(&gf, 1e-3).map_err(e2s)?;
    let schedule = sweep::build_schedule(gf.initial_sharpness(), s_gf).map_err(e2s)?;
    let opts = SweepOptions::new(1e-3, 50_000);
    let records = sweep::run_sweep(&model, &theta0, &schedule, &gf, &opts);
    Ok(SweepRun {
        s_gf,
        records,
        extra: Vec::new(),
    })
}

fn criterion_3(run: &SweepRun, elapsed: Duration) -> Check {
    let flow = sweep::records_in(&run.records, Regime::FlowAligned);
    let eos = sweep::records_in(&run.records, Regime::EoS);
    ensure(flow.len() >= 3 && eos.len() >= 3, || {
        format!("{} flow-aligned and {} EoS records", flow.len(), eos.len())
    })?;
    for r in &eos {
        let ratio = r.final_sharpness * r.eta / 2.0;
        ensure((ratio - 1.0).abs() <= 0.15, || {
            format!("EoS eta {}: final sharpness {:.3}·2/eta", r.eta, ratio)
        })?;
    }
    let etas: Vec<f64> = eos.iter().map(|r| r.eta).collect();
    let l1s: Vec<f64> = eos.iter().map(|r| r.l1).collect();
    let rho = sweep::spearman(&etas, &l1s);
    ensure(rho > 0.5, || format!("l1 vs eta Spearman {rho:.3} over EoS records"))?;
    let ratios = sweep::flow_speed_ratios(&run.records);
    let worst = ratios.iter().map(|r| (r.2 - 1.0).abs()).fold(0.0, f64::max);
    ensure(worst <= 0.30, || {
        format!("flow-aligned steps·eta ratio off by {worst:.3}")
    })?;
    within_budget("criterion 3", elapsed, Duration::from_secs(15 * 60))?;
    Ok(format!(
        "s_gf {:.3}, {} flow-aligned, {} EoS, Spearman {rho:.3}, worst 1/eta deviation {worst:.3}, {elapsed:.1?}",
        run.s_gf,
        flow.len(),
        eos.len()
    ))
}

// 4. logistic toy

fn criterion_4() -> Check {
    let start = Instant::now();
    let data = TwoPointData::random(5, 4).map_err(e2s)?;
    let best = logit::min_sharpness_params(&data, 100).map_err(e2s)?;
    ensure((best.z - 1.0).abs() <= 0.01 && best.b.abs() <= 0.01, || {
        format!("minimum at (z, b) = ({}, {})", best.z, best.b)
    })?;
    ensure((best.value - 0.2773).abs() <= 1e-3, || {
        format!("minimum sharpness {}", best.value)
    })?;
    let zero = vec![0.0; 5];
    let (e_sharp, se) = logit::expected_gen_error_mc(&best.classifier, &zero, 100_000, 41).map_err(e2s)?;
    ensure((e_sharp - 0.5).abs() <= 0.02, || {
        format!("min-sharpness error {e_sharp} ± {se}")
    })?;
    let data50 = TwoPointData::random(50, 4).map_err(e2s)?;
    let mm = logit::max_margin_params(&data50);
    let (e_mm, _) = logit::expected_gen_error_mc(&mm, &vec![0.0; 50], 100_000, 42).map_err(e2s)?;
    ensure(e_mm >= 0.95, || format!("max-margin error {e_mm} at d = 50"))?;
    within_budget("criterion 4", start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "(z, b) = ({:.4}, {:.4}), sharpness {:.6}, errors {e_sharp:.4} / {e_mm:.4}, {:.1?}",
        best.z,
        best.b,
        best.value,
        start.elapsed()
    ))
}

// 5. generalization analysis

fn criterion_5() -> Check {
    let start = Instant::now();
    let d = 5;
    let model = risk::folded_gaussian_model(d).map_err(e2s)?;
    let m = risk::sample_moments(&Sampler::FoldedGaussian { d, noise: 0.0 }, 1_000_000, 5);
    let mut worst_z = 0.0f64;
    for i in 0..d {
        worst_z = worst_z.max((m.mu[i] - model.mu[i]).abs() / m.mu_se[i]);
        for j in 0..d {
            worst_z = worst_z.max((m.sigma[(i, j)] - model.sigma[(i, j)]).abs() / m.sigma_se[(i, j)]);
        }
    }
    worst_z = worst_z.max((m.sigma2 - model.sigma2).abs() / m.sigma2_se);
    let moments_ok = worst_z <= 3.0;

    let est = |alg| risk::expected_risk_mc(alg, &model, 100_000, 55).map_err(e2s);
    let (opt, l1, sharp) = (est(Algorithm::Opt)?, est(Algorithm::L1)?, est(Algorithm::Sharp)?);
    let joint = |a: &risk::McEstimate, b: &risk::McEstimate| a.std_error.hypot(b.std_error);
    let order_ok = opt.estimate <= l1.estimate && l1.estimate < sharp.estimate;
    let gap_l1_sharp = (sharp.estimate - l1.estimate) / joint(&l1, &sharp);
    let gap_opt_l1 = (l1.estimate - opt.estimate) / joint(&opt, &l1);
    let gaps_ok = gap_l1_sharp > 3.0 && gap_opt_l1 > 3.0;

    let probe = risk::divergence_probe(3, &[1_000, 10_000, 100_000, 1_000_000], 77).map_err(e2s)?;
    let increasing = probe.windows(2).all(|w| w[1] > w[0]);

    let summary = format!(
        "moments worst z {worst_z:.2}; risk opt {:.4e}±{:.1e}, l1 {:.4}±{:.1e}, sharp {:.4e}±{:.1e} \
         (gaps {gap_opt_l1:.1} / {gap_l1_sharp:.1} joint SE); probe {probe:.3?}; {:.1?}",
        opt.estimate,
        opt.std_error,
        l1.estimate,
        l1.std_error,
        sharp.estimate,
        sharp.std_error,
        start.elapsed()
    );
    within_budget("criterion 5", start.elapsed(), Duration::from_secs(120))?;
    if moments_ok && order_ok && gaps_ok && increasing {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// 6. numerical consistency

fn random_mlp(activation: Activation, loss: LossKind, k: u64) -> (MlpSpec, Dataset, Vec<f64>) {
    let mut rng = LabRng::stream(600, k);
    let d_in = 1 + (rng.unit() * 3.0) as usize;
    let hidden = 2 + (rng.unit() * 5.0) as usize;
    let d_out = match loss {
        LossKind::Mse => 1 + (rng.unit() * 2.0) as usize,
        LossKind::Ce => 2 + (rng.unit() * 2.0) as usize,
    };
    let mut dims = vec![d_in, hidden];
    if k.is_multiple_of(2) {
        dims.push(2 + (rng.unit() * 4.0) as usize);
    }
    dims.push(d_out);
    let spec = MlpSpec::new(dims, activation, loss).unwrap();
    let n = 3 + (rng.unit() * 6.0) as usize;
    let inputs = Matrix::from_vec(n, d_in, rng.normal_vec(n * d_in));
    let targets = match loss {
        LossKind::Mse => Matrix::from_vec(n, d_out, rng.normal_vec(n * d_out)),
        LossKind::Ce => {
            let mut t = Matrix::zeros(n, d_out);
            for i in 0..n {
                t[(i, (rng.unit() * d_out as f64) as usize % d_out)] = 1.0;
            }
            t
        }
    };
    let theta = rng.normal_vec(spec.param_count()).iter().map(|v| 0.7 * v).collect();
    (spec, Dataset::new(inputs, targets).unwrap(), theta)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff) / norm2(b).max(1e-300)
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    let mut configs = 0;
    for activation in [Activation::Tanh, Activation::Relu, Activation::Identity] {
        for loss in [LossKind::Mse, LossKind::Ce] {
            let mut done = 0;
            let mut k = 0u64;
            while done < 20 {
                k += 1;
                let (spec, data, theta) = random_mlp(activation, loss, k);
                // keep ReLU finite differences away from kinks
                if activation == Activation::Relu
                    && network::min_abs_preactivation(&spec, &theta, &data).map_err(e2s)? < 1e-3
                {
                    continue;
                }
                let (_, g) = network::loss_value_and_grad(&spec, &theta, &data).map_err(e2s)?;
                let h = 1e-6;
                let mut fd = vec![0.0; theta.len()];
                for i in 0..theta.len() {
                    let (mut p, mut m) = (theta.clone(), theta.clone());
                    p[i] += h;
                    m[i] -= h;
                    let lp = network::loss_value(&spec, &p, &data).map_err(e2s)?;
                    let lm = network::loss_value(&spec, &m, &data).map_err(e2s)?;
                    fd[i] = (lp - lm) / (2.0 * h);
                }
                let eg = rel_err(&fd, &g);
                worst_g = worst_g.max(eg);
                ensure(eg < 1e-6, || {
                    format!("{activation:?}/{loss:?} #{k}: gradient rel err {eg:.2e}")
                })?;

                let mut rng = LabRng::stream(601, k);
                let v = rng.normal_vec(theta.len());
                let hv = network::hessian_vector_product(&spec, &theta, &v, &data).map_err(e2s)?;
                let hh = 1e-5;
                let tp: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + hh * vi).collect();
                let tm: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t - hh * vi).collect();
                let (_, gp) = network::loss_value_and_grad(&spec, &tp, &data).map_err(e2s)?;
                let (_, gm) = network::loss_value_and_grad(&spec, &tm, &data).map_err(e2s)?;
                let fd_hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * hh)).collect();
                let eh = rel_err(&fd_hv, &hv);
                worst_h = worst_h.max(eh);
                ensure(eh < 1e-4, || {
                    format!("{activation:?}/{loss:?} #{k}: HVP rel err {eh:.2e}")
                })?;

                check_power_vs_dense(
                    &MlpModel::new(spec.clone(), data.clone()).map_err(e2s)?,
                    &theta,
                    &format!("{activation:?}/{loss:?} #{k}"),
                )?;
                done += 1;
                configs += 1;
            }
        }
    }

    // benchmark models at their start and end points
    let (dn, dn0) = benchmark_diagnet();
    check_power_vs_dense(&dn, &dn0, "diagnet start")?;
    check_power_vs_dense(&dn, &[0.0, 1.0], "diagnet l1 minimizer")?;
    let (mlp, mlp0) = benchmark_mlp();
    check_power_vs_dense(&mlp, &mlp0, "mlp start")?;
    let cfg = RunConfig::new(0.02, 1e-3, 50_000);
    let trained = dynamics::gd_run(&mlp, &mlp0, &cfg).map_err(e2s)?;
    check_power_vs_dense(&mlp, &trained.final_theta, "mlp trained")?;
    check_power_vs_dense(
        &Quadratic::new(vec![3.0, -7.0, 0.5, 2.0]),
        &[1.0, 1.0, 1.0, 1.0],
        "quadratic",
    )?;

    // closed-form risk against Monte Carlo
    let mut worst_z = 0.0f64;
    for m in [
        risk::folded_gaussian_model(4).map_err(e2s)?,
        risk::gaussian_linear_model(4).map_err(e2s)?,
    ] {
        for (j, w) in [vec![1.0; 4], vec![0.0, 2.0, 0.5, 0.0], vec![0.3, -0.9, 1.2, 0.1]]
            .iter()
            .enumerate()
        {
            let exact = risk::risk(w, &m).map_err(e2s)?;
            let (mc, se) = risk::risk_mc(w, &m, 200_000, 60 + j as u64).map_err(e2s)?;
            let z = if se > 0.0 {
                (mc - exact).abs() / se
            } else {
                (mc - exact).abs() / 1e-12
            };
            worst_z = worst_z.max(z);
            ensure(z <= 3.0, || {
                format!("risk {exact} vs Monte Carlo {mc} ± {se} at w = {w:?}")
            })?;
        }
    }
    Ok(format!(
        "{configs} MLP configs: worst gradient {worst_g:.1e}, HVP {worst_h:.1e}; risk worst z {worst_z:.2}; {:.1?}",
        start.elapsed()
    ))
}

fn check_power_vs_dense<M: Model>(model: &M, theta: &[f64], what: &str) -> Result<(), String> {
    let n = model.dim();
    if n > 2000 {
        return Ok(());
    }
    let mut h = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = model.hvp(theta, &e).map_err(e2s)?;
        for i in 0..n {
            h[(i, j)] = col[i];
        }
    }
    h.symmetrize();
    let dense = sharpness::dense_spectral_norm(&h).map_err(e2s)?;
    let power = model.sharpness(theta, None, 9).map_err(e2s)?.value;
    let rel = (power - dense).abs() / dense.max(1e-300);
    ensure(rel < 1e-6, || {
        format!("{what}: power {power} vs dense {dense} (rel {rel:.1e})")
    })
}

// 7. dynamics contracts

fn criterion_7(runs: &[&SweepRun]) -> Check {
    let start = Instant::now();
    let mut notes = Vec::new();
    let (dn, dn0) = benchmark_diagnet();
    let (mlp, mlp0) = benchmark_mlp();
    let quad = Quadratic::new(vec![1.0, 4.0, 10.0]);
    let benchmarks: [(&str, &dyn Model, Vec<f64>, f64); 3] = [
        ("diagnet", &dn, dn0.clone(), 1e-8),
        ("mlp", &mlp, mlp0.clone(), 1e-3),
        ("quadratic", &quad, vec![1.0, 1.0, 1.0], 1e-8),
    ];
    for (name, model, theta0, goal) in benchmarks {
        let h = dynamics::default_gf_step(model, &theta0, 0).map_err(e2s)?;
        let cfg = RunConfig::new(h, goal, 10_000_000);
        let (traj, check) = dynamics::gf_run_certified(model, &theta0, &cfg, 4).map_err(e2s)?;
        ensure(check.rel_diff < 1e-6, || {
            format!("{name}: step doubling rel diff {:.2e}", check.rel_diff)
        })?;
        let rises = traj.step_losses.windows(2).filter(|w| w[1] > w[0]).count();
        ensure(rises == 0, || format!("{name}: GF loss increased {rises} times"))?;
        notes.push(format!("{name} {:.1e}", check.rel_diff));
    }

    let mut converged = 0;
    for run in runs {
        for r in run.records.iter().filter(|r| r.outcome == Some(Outcome::Converged)) {
            converged += 1;
            ensure(r.final_sharpness <= 2.0 / r.eta * 1.05, || {
                format!(
                    "converged at eta {} with sharpness {} > 1.05·2/eta",
                    r.eta, r.final_sharpness
                )
            })?;
        }
    }

    // ε(α): excess l1 norm over the l1 minimum of the level GF actually reached
    let mut eps = Vec::new();
    for alpha in [1e-1, 1e-2, 1e-3] {
        let p = DiagNetProblem::new(vec![1.0, 2.0], 2.0).map_err(e2s)?;
        let model = DiagNetModel::new(p).map_err(e2s)?;
        let theta0 = vec![alpha, alpha];
        let traj = gf_reference(&model, &theta0, 1e-12)?;
        let w2: Vec<f64> = traj.final_theta.iter().map(|w| w * w).collect();
        eps.push(w2.iter().sum::<f64>() - (w2[0] + 2.0 * w2[1]) / 2.0);
    }
    ensure(eps[0] > eps[1] && eps[1] > eps[2], || {
        format!("ε(α) not decreasing: {eps:?}")
    })?;
    Ok(format!(
        "step doubling [{}]; {converged} converged GD runs obey 1.05·2/eta; ε(α) = {eps:?}; {:.1?}",
        notes.join(", "),
        start.elapsed()
    ))
}

// 8. I/O contracts

fn criterion_8() -> Check {
    let start = Instant::now();
    // IDX fixtures
    let img = idx::IdxImages {
        count: 3,
        rows: 2,
        cols: 2,
        pixels: vec![0, 255, 128, 64, 1, 2, 3, 4, 9, 8, 7, 6],
    };
    let (ib, lb) = (idx::encode_images(&img), idx::encode_labels(&[7, 0, 9]));
    let data = idx::from_bytes(&ib, &lb, 3).map_err(e2s)?;
    ensure(
        data.dataset.len() == 3 && data.labels == [7, 0, 9] && !data.clamped,
        || "well-formed IDX rejected".into(),
    )?;
    ensure(
        data.dataset.targets[(0, 7)] == 1.0 && data.dataset.inputs[(0, 1)] == 1.0,
        || "IDX decode wrong".into(),
    )?;
    let mut bad = ib.clone();
    bad[3] = 0x01;
    ensure(idx::from_bytes(&bad, &lb, 3).is_err(), || {
        "mutated images magic accepted".into()
    })?;
    let mut bad = lb.clone();
    bad[2] = 0x09;
    ensure(idx::from_bytes(&ib, &bad, 3).is_err(), || {
        "mutated labels magic accepted".into()
    })?;
    ensure(idx::from_bytes(&ib[..ib.len() - 1], &lb, 3).is_err(), || {
        "truncated images accepted".into()
    })?;
    ensure(idx::from_bytes(&ib, &lb[..lb.len() - 1], 3).is_err(), || {
        "truncated labels accepted".into()
    })?;
    let clamped = idx::from_bytes(&ib, &lb, 10).map_err(e2s)?;
    ensure(clamped.clamped && clamped.dataset.len() == 3, || {
        "take_first_n not clamped".into()
    })?;

    // checkpoint round trip
    let theta: Vec<f64> = LabRng::new(8).normal_vec(337);
    let h = checkpoint::CheckpointHeader::new("2-16-16-1:tanh:mse", 8, 100, 0.5, theta.len());
    let (h2, t2) = checkpoint::decode(&checkpoint::encode(&h, &theta).map_err(e2s)?).map_err(e2s)?;
    ensure(
        h == h2 && theta.iter().zip(&t2).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "checkpoint round trip not bit exact".into(),
    )?;

    // byte-identical CLI re-runs
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let commands: [&[&str]; 8] = [
        &["gf"],
        &[
            "gf",
            "--model",
            "mlp",
            "--layers",
            "2,8,1",
            "--n",
            "16",
            "--loss-goal",
            "1e-2",
        ],
        &["gd", "--eta", "0.2"],
        &[
            "gd",
            "--model",
            "mlp",
            "--layers",
            "2,8,1",
            "--n",
            "16",
            "--eta",
            "0.05",
            "--loss-goal",
            "1e-2",
        ],
        &["sweep", "--svg"],
        &["diagnet", "--svg"],
        &["risk", "--samples", "5000"],
        &["logit", "--samples", "2000", "--directions", "3", "--landscape", "11"],
    ];
    for (i, args) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let dir = tmp.path().join(format!("{i}-{rep}"));
            let mut argv = vec!["eoslab".to_string()];
            argv.extend(args.iter().map(|s| s.to_string()));
            argv.extend(["--seed".into(), "11".into(), "--out".into(), dir.display().to_string()]);
            let code = cli::main_with_args(argv);
            ensure(code == 0, || format!("eoslab {} exited {code}", args.join(" ")))?;
            outputs.push(dir_contents(&dir)?);
        }
        ensure(outputs[0] == outputs[1], || {
            format!("eoslab {} is not reproducible", args.join(" "))
        })?;
    }
    Ok(format!(
        "IDX, checkpoint and {} CLI invocations reproducible; {:.1?}",
        commands.len(),
        start.elapsed()
    ))
}

fn dir_contents(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(e2s)? {
        let entry = entry.map_err(e2s)?;
        out.push((
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).map_err(e2s)?,
        ));
    }
    out.sort();
    Ok(out)
}

fn main() {
    let mut results: Vec<(u32, Check)> = Vec::new();
    let report = |n: u32, r: &Check| match r {
        Ok(m) => println!("PASS criterion {n}: {m}"),
        Err(m) => println!("FAIL criterion {n}: {m}"),
    };

    let r = criterion_1();
    report(1, &r);
    results.push((1, r));

    let t = Instant::now();
    let dn = diagnet_sweep();
    let dn_time = t.elapsed();
    let r = dn
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|run| criterion_2(run, dn_time));
    report(2, &r);
    results.push((2, r));

    let t = Instant::now();
    let mlp = mlp_sweep();
    let mlp_time = t.elapsed();
    let r = mlp
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|run| criterion_3(run, mlp_time));
    report(3, &r);
    results.push((3, r));

    for (n, f) in [(4, criterion_4 as fn() -> Check), (5, criterion_5), (6, criterion_6)] {
        let r = f();
        report(n, &r);
        results.push((n, r));
    }

    let r = match (&dn, &mlp) {
        (Ok(a), Ok(b)) => criterion_7(&[a, b]),
        _ => Err("sweeps unavailable".into()),
    };
    report(7, &r);
    results.push((7, r));

    let r = criterion_8();
    report(8, &r);
    results.push((8, r));

    let failed: Vec<u32> = results.iter().filter(|(_, r)| r.is_err()).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
