//! The `eoslab` command line.
//!
//! Every subcommand resolves its settings from built-in defaults, then an
//! optional flat `key = value` config file, then command-line flags, and
//! records the resolved settings in `manifest.json` inside the output
//! directory. Exit codes: 0 success, 1 runtime failure, 2 config error,
//! 3 diverged, 4 max steps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::data_io::{self, checkpoint, CheckpointHeader, SyntheticKind, SyntheticSpec};
use crate::diagnet::{DiagNetProblem, Objective};
use crate::dynamics::{self, fmt_f64, Outcome, RunConfig, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::logit::{self, ClassifierKind, TwoPointData};
use crate::model::{DiagNetModel, MlpModel, Model};
use crate::network::{self, Activation, LossKind, MlpSpec};
use crate::risk::{self, Algorithm};
use crate::rng::LabRng;
use crate::sweep::{self, SweepOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_MAX_STEPS: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "eoslab", version, about = "Edge-of-stability experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// RK4 gradient flow to the loss goal; reports s0 and s_gf.
    Gf(Flags),
    /// Full-batch gradient descent at a fixed learning rate.
    Gd(Flags),
    /// Learning-rate sweep with regime classification.
    Sweep(Flags),
    /// Minimizer sets and optimality checks of the diagonal network, plus
    /// GD and GF trajectories.
    Diagnet(Flags),
    /// Expected risk of the l1, sharpness and risk-optimal interpolators.
    Risk(Flags),
    /// Sharpness landscape and generalization errors of the logistic toy.
    Logit(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gf(_) => "gf",
            Command::Gd(_) => "gd",
            Command::Sweep(_) => "sweep",
            Command::Diagnet(_) => "diagnet",
            Command::Risk(_) => "risk",
            Command::Logit(_) => "logit",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Gf(f)
            | Command::Gd(f)
            | Command::Sweep(f)
            | Command::Diagnet(f)
            | Command::Risk(f)
            | Command::Logit(f) => f,
        }
    }
}

/// Flags shared by all subcommands. Values are kept as text and validated
/// once the settings are resolved.
#[derive(Debug, Default, clap::Args)]
pub struct Flags {
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub loss_goal: Option<String>,
    /// diagnet | mlp for gf/gd/sweep; folded | gaussian for risk.
    #[arg(long)]
    pub model: Option<String>,
    /// Diagonal-network features, comma separated.
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    /// Diagonal-network initialization scale: θ0 = alpha·1.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Learning rate.
    #[arg(long)]
    pub eta: Option<String>,
    /// Gradient-flow step; `auto` is 1/(10 S(θ0)).
    #[arg(long)]
    pub step: Option<String>,
    #[arg(long)]
    pub max_steps: Option<String>,
    #[arg(long)]
    pub record_every: Option<String>,
    /// MLP layer widths, comma separated, input first.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub activation: Option<String>,
    /// mse | ce
    #[arg(long)]
    pub loss: Option<String>,
    /// Synthetic kind or `idx`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub mu_norm: Option<String>,
    #[arg(long)]
    pub n_test: Option<String>,
    #[arg(long)]
    pub data_seed: Option<String>,
    #[arg(long)]
    pub init_seed: Option<String>,
    #[arg(long)]
    pub init_scale: Option<String>,
    #[arg(long)]
    pub idx_images: Option<String>,
    #[arg(long)]
    pub idx_labels: Option<String>,
    #[arg(long)]
    pub take_first_n: Option<String>,
    #[arg(long)]
    pub tau_flow: Option<String>,
    #[arg(long)]
    pub tau_eos: Option<String>,
    #[arg(long)]
    pub max_extension: Option<String>,
    /// Monte-Carlo sample count.
    #[arg(long)]
    pub samples: Option<String>,
    /// Training directions averaged in the logistic generalization error.
    #[arg(long)]
    pub directions: Option<String>,
    /// Grid resolution of the minimum-sharpness search.
    #[arg(long)]
    pub grid: Option<String>,
    /// Points per axis of the exported sharpness landscape.
    #[arg(long)]
    pub landscape: Option<String>,
}

impl Flags {
    fn given(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 31] = [
            ("seed", &self.seed),
            ("loss_goal", &self.loss_goal),
            ("model", &self.model),
            ("x", &self.x),
            ("y", &self.y),
            ("alpha", &self.alpha),
            ("eta", &self.eta),
            ("step", &self.step),
            ("max_steps", &self.max_steps),
            ("record_every", &self.record_every),
            ("layers", &self.layers),
            ("activation", &self.activation),
            ("loss", &self.loss),
            ("data", &self.data),
            ("n", &self.n),
            ("d", &self.d),
            ("noise", &self.noise),
            ("mu_norm", &self.mu_norm),
            ("n_test", &self.n_test),
            ("data_seed", &self.data_seed),
            ("init_seed", &self.init_seed),
            ("init_scale", &self.init_scale),
            ("idx_images", &self.idx_images),
            ("idx_labels", &self.idx_labels),
            ("take_first_n", &self.take_first_n),
            ("tau_flow", &self.tau_flow),
            ("tau_eos", &self.tau_eos),
            ("max_extension", &self.max_extension),
            ("samples", &self.samples),
            ("directions", &self.directions),
            ("grid", &self.grid),
        ];
        let mut out: Vec<(&'static str, &str)> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect();
        if let Some(v) = self.landscape.as_deref() {
            out.push(("landscape", v));
        }
        out
    }
}

/// Resolved `key → value` settings of one invocation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

const UNSET: &str = "";

fn defaults(command: &str) -> Vec<(&'static str, &'static str)> {
    let trainer = [
        ("model", "diagnet"),
        ("x", "1,2"),
        ("y", "2"),
        ("alpha", "0.01"),
        ("layers", "2,16,16,1"),
        ("activation", "tanh"),
        ("loss", "mse"),
        ("data", "product_regression"),
        ("n", "64"),
        ("noise", "0"),
        ("mu_norm", "0"),
        ("n_test", "0"),
        ("data_seed", "7"),
        ("init_seed", "1"),
        ("init_scale", "1"),
        ("idx_images", UNSET),
        ("idx_labels", UNSET),
        ("take_first_n", "1000"),
        ("record_every", "10"),
        ("loss_goal", "auto"),
    ];
    let mut out: Vec<(&'static str, &'static str)> = vec![("seed", "0")];
    match command {
        "gf" => {
            out.extend(trainer);
            out.extend([("step", "auto"), ("max_steps", "1000000")]);
        }
        "gd" => {
            out.extend(trainer);
            out.extend([("eta", UNSET), ("max_steps", "1000000")]);
        }
        "sweep" => {
            out.extend(trainer);
            out.extend([
                ("step", "auto"),
                ("max_steps", "50000"),
                ("tau_flow", "0.1"),
                ("tau_eos", "0.1"),
                ("max_extension", "32"),
            ]);
        }
        "diagnet" => out.extend([
            ("x", "1,2"),
            ("y", "2"),
            ("alpha", "0.01"),
            ("eta", "0.1"),
            ("step", "auto"),
            ("loss_goal", "1e-8"),
            ("max_steps", "1000000"),
            ("record_every", "10"),
        ]),
        "risk" => out.extend([("model", "folded"), ("d", "5"), ("samples", "100000")]),
        "logit" => out.extend([
            ("d", "3"),
            ("mu_norm", "0"),
            ("samples", "100000"),
            ("directions", "20"),
            ("grid", "100"),
            ("landscape", "41"),
        ]),
        _ => {}
    }
    out
}

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped;
/// dashes in keys are read as underscores.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(command: &str, file: Option<&Path>, flags: &[(&str, &str)]) -> Result<Self> {
        let mut values: BTreeMap<String, String> = defaults(command)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut set = |k: &str, v: &str, origin: &str| -> Result<()> {
            match values.get_mut(k) {
                Some(slot) => {
                    *slot = v.to_string();
                    Ok(())
                }
                None => Err(Error::Config(format!("'{k}' ({origin}) does not apply to {command}"))),
            }
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config_text(&text)? {
                set(&k, &v, "config file")?;
            }
        }
        for (k, v) in flags {
            set(k, v, "flag")?;
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        match self.values.get(key).map(String::as_str) {
            Some(UNSET) | None => Err(Error::Config(format!("missing required setting '{key}'"))),
            Some(v) => Ok(v),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse {key} = '{raw}'")))
    }

    /// Integer setting that also accepts forms like `1e5`.
    pub fn count(&self, key: &str) -> Result<usize> {
        let raw = self.raw(key)?;
        if let Ok(v) = raw.parse::<usize>() {
            return Ok(v);
        }
        match raw.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e15 => Ok(v as usize),
            _ => Err(Error::Config(format!("cannot parse {key} = '{raw}' as a count"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        self.raw(key)?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("cannot parse {key} entry '{s}'")))
            })
            .collect()
    }

    pub fn is_auto(&self, key: &str) -> bool {
        self.values.get(key).is_some_and(|v| v == "auto")
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn to_json(&self) -> Value {
        Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect(),
        )
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    let command = cli.command.name();
    let flags = cli.command.flags();
    let settings = match Settings::resolve(command, flags.config.as_deref(), &flags.given()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("eoslab {command}: {e}");
            return EXIT_CONFIG;
        }
    };
    let out = flags.out.clone().unwrap_or_else(|| PathBuf::from("eoslab-out"));
    let ctx = Context {
        settings,
        out,
        svg: flags.svg,
    };
    let result = match &cli.command {
        Command::Gf(_) => cmd_train(ctx, Mode::Flow),
        Command::Gd(_) => cmd_train(ctx, Mode::Descent),
        Command::Sweep(_) => cmd_sweep(ctx),
        Command::Diagnet(_) => cmd_diagnet(ctx),
        Command::Risk(_) => cmd_risk(ctx),
        Command::Logit(_) => cmd_logit(ctx),
    };
    match result {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("eoslab {command}: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("eoslab {command}: {e}");
            EXIT_FAILURE
        }
    }
}

struct Context {
    settings: Settings,
    out: PathBuf,
    svg: bool,
}

impl Context {
    /// Creates the output directory; called only after validation succeeds.
    fn open_out(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

/// Model plus initial parameters described by the trainer settings.
pub struct Problem {
    pub model: Box<dyn Model>,
    pub theta0: Vec<f64>,
    pub loss_goal: f64,
}

pub fn build_problem(s: &mut Settings) -> Result<Problem> {
    let kind = s.raw("model")?.to_string();
    let (model, theta0): (Box<dyn Model>, Vec<f64>) = match kind.as_str() {
        "diagnet" => {
            let x = s.list("x")?;
            let alpha: f64 = s.get("alpha")?;
            let p = DiagNetProblem::new(x, s.get("y")?).map_err(config)?;
            let d = p.dim();
            (Box::new(DiagNetModel::new(p).map_err(config)?), vec![alpha; d])
        }
        "mlp" => {
            let dims: Vec<usize> = s.list("layers")?.into_iter().map(|v| v as usize).collect();
            let activation: Activation = s.get("activation")?;
            let loss: LossKind = s.get("loss")?;
            let spec = MlpSpec::new(dims, activation, loss).map_err(config)?;
            let data = if s.raw("data")? == "idx" {
                let images = PathBuf::from(s.raw("idx_images")?);
                let labels = PathBuf::from(s.raw("idx_labels")?);
                let loaded = data_io::load_idx(&images, &labels, s.count("take_first_n")?)?;
                if loaded.clamped {
                    eprintln!(
                        "warning: take_first_n exceeds the file count; using {}",
                        loaded.dataset.len()
                    );
                }
                loaded.dataset
            } else {
                let mut syn = SyntheticSpec::new(
                    s.get::<SyntheticKind>("data").map_err(config)?,
                    spec.input_dim(),
                    s.count("n")?,
                    s.get("data_seed")?,
                );
                syn.noise = s.get("noise")?;
                syn.mu_norm = s.get("mu_norm")?;
                syn.n_test = s.count("n_test")?;
                data_io::generate(&syn).map_err(config)?
            };
            let theta0 = network::init_lecun_uniform_scaled(&spec, s.get("init_seed")?, s.get("init_scale")?);
            (Box::new(MlpModel::new(spec, data).map_err(config)?), theta0)
        }
        other => return Err(Error::Config(format!("unknown model '{other}' (diagnet | mlp)"))),
    };
    if s.is_auto("loss_goal") {
        s.set("loss_goal", if kind == "diagnet" { "1e-8" } else { "1e-3" }.to_string());
    }
    let loss_goal = s.get("loss_goal")?;
    Ok(Problem {
        model,
        theta0,
        loss_goal,
    })
}

fn config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Flow,
    Descent,
}

fn outcome_code(o: Outcome) -> i32 {
    match o {
        Outcome::Converged => EXIT_OK,
        Outcome::Diverged => EXIT_DIVERGED,
        Outcome::MaxSteps => EXIT_MAX_STEPS,
    }
}

fn flow_step(s: &Settings, model: &dyn Model, theta0: &[f64], seed: u64) -> Result<f64> {
    if s.is_auto("step") {
        dynamics::default_gf_step(model, theta0, seed)
    } else {
        s.get("step")
    }
}

fn write_checkpoints(dir: &Path, spec: &str, seed: u64, traj: &Trajectory) -> Result<()> {
    for (k, c) in &traj.checkpoints {
        let h = CheckpointHeader::new(spec, seed, c.step as u64, c.loss, c.theta.len());
        checkpoint::write_checkpoint(&dir.join(format!("checkpoint_1e-{k}.bin")), &h, &c.theta)?;
    }
    let h = CheckpointHeader::new(spec, seed, traj.steps as u64, traj.final_loss, traj.final_theta.len());
    checkpoint::write_checkpoint(&dir.join("checkpoint_final.bin"), &h, &traj.final_theta)
}

fn summary(traj: &Trajectory) -> Value {
    json!({
        "outcome": traj.outcome.to_string(),
        "steps": traj.steps,
        "final_loss": traj.final_loss,
        "final_sharpness": traj.final_sharpness(),
        "max_sharpness": traj.max_sharpness(),
        "t_eps": traj.t_eps,
        "final_step": traj.final_step,
        "checkpoints": traj.checkpoints.keys().map(|k| format!("1e-{k}")).collect::<Vec<_>>(),
    })
}

fn cmd_train(mut ctx: Context, mode: Mode) -> Result<i32> {
    let seed: u64 = ctx.settings.get("seed")?;
    let problem = build_problem(&mut ctx.settings)?;
    let max_steps = ctx.settings.count("max_steps")?;
    let record_every = ctx.settings.count("record_every")?;
    let eta: Option<f64> = match mode {
        Mode::Descent => Some(ctx.settings.get("eta")?),
        Mode::Flow => None,
    };
    let model = problem.model.as_ref();
    let step = match eta {
        Some(e) => e,
        None => flow_step(&ctx.settings, model, &problem.theta0, seed)?,
    };
    let cfg = RunConfig::new(step, problem.loss_goal, max_steps)
        .record_every(record_every)
        .seed(seed);
    let traj = match mode {
        Mode::Flow => dynamics::gf_run(model, &problem.theta0, &cfg)?,
        Mode::Descent => dynamics::gd_run(model, &problem.theta0, &cfg)?,
    };
    let dir = ctx.open_out()?;
    let spec = model.describe();
    data_io::write_text(dir, "trajectory.csv", &traj.to_csv())?;
    write_checkpoints(dir, &spec, seed, &traj)?;
    let mut result = summary(&traj);
    let s0 = traj.initial_sharpness();
    match mode {
        Mode::Flow => {
            let s_gf = dynamics::s_gf(&traj, problem.loss_goal).ok();
            println!("outcome = {}", traj.outcome);
            println!("s0 = {}", fmt_f64(s0));
            match s_gf {
                Some(v) => println!("s_gf = {}", fmt_f64(v)),
                None => println!("s_gf = undefined (goal not reached)"),
            }
            result["s0"] = json!(s0);
            result["s_gf"] = json!(s_gf);
        }
        Mode::Descent => {
            let e = step;
            println!("outcome = {}", traj.outcome);
            println!("steps = {}", traj.steps);
            println!("final_loss = {}", fmt_f64(traj.final_loss));
            println!("final_sharpness = {}", fmt_f64(traj.final_sharpness()));
            println!("2/eta = {}", fmt_f64(2.0 / e));
            if let Some(last) = traj.final_entry() {
                println!(
                    "l1 = {}, l2 = {}, nuclear = {}",
                    fmt_f64(last.l1),
                    fmt_f64(last.l2),
                    fmt_f64(last.nuclear)
                );
            }
            if let Some(t) = model.test_metric(&traj.final_theta) {
                println!("test_metric = {}", fmt_f64(t));
                result["test_metric"] = json!(t);
            }
        }
    }
    if ctx.svg {
        let reference = eta.map(|e| 2.0 / e);
        data_io::write_text(dir, "trajectory.svg", &trajectory_svg(&traj, reference))?;
    }
    write_manifest(dir, ctx_name(mode), &ctx.settings, &spec, result)?;
    Ok(outcome_code(traj.outcome))
}

fn ctx_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Flow => "gf",
        Mode::Descent => "gd",
    }
}

fn write_manifest(dir: &Path, command: &str, s: &Settings, spec: &str, results: Value) -> Result<()> {
    data_io::write_manifest(
        dir,
        &json!({
            "command": command,
            "config": s.to_json(),
            "spec": spec,
            "version": env!("CARGO_PKG_VERSION"),
            "results": results,
        }),
    )
}

fn cmd_sweep(mut ctx: Context) -> Result<i32> {
    let seed: u64 = ctx.settings.get("seed")?;
    let problem = build_problem(&mut ctx.settings)?;
    let mut opts = SweepOptions::new(problem.loss_goal, ctx.settings.count("max_steps")?);
    opts.record_every = ctx.settings.count("record_every")?;
    opts.seed = seed;
    opts.tau_flow = ctx.settings.get("tau_flow")?;
    opts.tau_eos = ctx.settings.get("tau_eos")?;
    opts.max_extension = ctx.settings.count("max_extension")?;
    let model = problem.model.as_ref();
    let step = flow_step(&ctx.settings, model, &problem.theta0, seed)?;
    let gf_cfg = RunConfig::new(step, problem.loss_goal, 10_000_000)
        .record_every(opts.record_every)
        .seed(seed);
    let gf = dynamics::gf_run(model, &problem.theta0, &gf_cfg)?;
    let s_gf = dynamics::s_gf(&gf, problem.loss_goal)?;
    let s0 = gf.initial_sharpness();
    let schedule = sweep::build_schedule(s0, s_gf)?;
    let records = sweep::run_sweep(model, &problem.theta0, &schedule, &gf, &opts);
    let eta_c = sweep::estimate_eta_c(&records, s_gf).ok();

    let dir = ctx.open_out()?;
    data_io::write_text(dir, "sweep.csv", &sweep::records_csv(&records))?;
    data_io::write_text(dir, "gf_trajectory.csv", &gf.to_csv())?;
    if ctx.svg {
        data_io::write_text(dir, "sweep.svg", &sweep::sweep_svg(&records, s_gf))?;
    }
    println!("s0 = {}", fmt_f64(s0));
    println!("s_gf = {}", fmt_f64(s_gf));
    println!("2/s_gf = {}", fmt_f64(2.0 / s_gf));
    for r in &records {
        println!(
            "eta = {:<22} {:<12} {:<9} final_sharpness = {}",
            fmt_f64(r.eta),
            r.regime.to_string(),
            r.outcome.map_or("error".to_string(), |o| o.to_string()),
            fmt_f64(r.final_sharpness)
        );
    }
    match &eta_c {
        Some(e) => println!(
            "eta_c estimate = {} (theory {}, ratio {})",
            fmt_f64(e.estimate),
            fmt_f64(e.theory),
            fmt_f64(e.ratio)
        ),
        None => println!("eta_c estimate = undefined (a regime is empty)"),
    }
    let spec = model.describe();
    let results = json!({
        "seed": seed,
        "spec": spec,
        "loss_goal": problem.loss_goal,
        "s0": s0,
        "s_gf": s_gf,
        "eta_c_estimate": eta_c.map(|e| e.estimate),
        "eta_c_theory": 2.0 / s_gf,
        "schedule": schedule,
        "records": records.len(),
    });
    write_manifest(dir, "sweep", &ctx.settings, &spec, results)?;
    Ok(EXIT_OK)
}

fn support_text(indices: &[usize]) -> String {
    let one_based: Vec<String> = indices.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", one_based.join(","))
}

/// Riemannian gradient norm and smallest Hessian quadratic form over random
/// unit tangent directions at `w`.
fn riemannian_check(p: &DiagNetProblem, w: &[f64], objective: Objective, seed: u64) -> Result<(f64, f64)> {
    let grad = p.riemannian_grad(w, objective)?;
    let mut rng = LabRng::new(seed);
    let mut min_q = f64::INFINITY;
    for _ in 0..32 {
        let u = p.tangent_project(w, &rng.normal_vec(p.dim()))?;
        let n = norm2(&u);
        if n < 1e-12 {
            continue;
        }
        let u: Vec<f64> = u.iter().map(|v| v / n).collect();
        min_q = min_q.min(p.riemannian_hess_quadform(w, &u, objective)?);
    }
    Ok((norm2(&grad), if min_q.is_finite() { min_q } else { 0.0 }))
}

fn cmd_diagnet(ctx: Context) -> Result<i32> {
    let s = &ctx.settings;
    let seed: u64 = s.get("seed")?;
    let p = DiagNetProblem::new(s.list("x")?, s.get("y")?).map_err(config)?;
    let alpha: f64 = s.get("alpha")?;
    let eta: f64 = s.get("eta")?;
    let loss_goal: f64 = s.get("loss_goal")?;
    let max_steps = s.count("max_steps")?;
    let record_every = s.count("record_every")?;
    let l1 = p.l1_minimizer_set().map_err(config)?;
    let sharp = p.sharpness_minimizer_set().map_err(config)?;

    let mut sets = Vec::new();
    for (name, set, objective) in [
        ("l1", &l1, Objective::L1OfSquares),
        ("sharpness", &sharp, Objective::Sharpness),
    ] {
        let (g, q) = riemannian_check(&p, &set.canonical_representative, objective, seed)?;
        println!(
            "{name} minimizers: support {}, |w|^2 = {}, objective = {}",
            support_text(&set.support_indices),
            fmt_f64(set.radius_sq),
            fmt_f64(set.objective_value)
        );
        println!(
            "  riemannian grad norm = {:e}, min tangent hessian form = {}",
            g,
            fmt_f64(q)
        );
        sets.push(json!({
            "name": name,
            "support": set.support_indices.iter().map(|i| i + 1).collect::<Vec<_>>(),
            "radius_sq": set.radius_sq,
            "objective_value": set.objective_value,
            "representative": set.canonical_representative,
            "riemannian_grad_norm": g,
            "min_tangent_hessian_form": q,
        }));
    }

    let model = DiagNetModel::new(p.clone())?;
    let theta0 = vec![alpha; p.dim()];
    let mut cfg = RunConfig::new(eta, loss_goal, max_steps)
        .record_every(record_every)
        .seed(seed);
    cfg.retain_path = true;
    let gd = dynamics::gd_run(&model, &theta0, &cfg)?;
    cfg.step = flow_step(s, &model, &theta0, seed)?;
    let gf = dynamics::gf_run(&model, &theta0, &cfg)?;
    println!(
        "gd (eta = {}): {} after {} steps at w = {:?}, sharpness {}",
        fmt_f64(eta),
        gd.outcome,
        gd.steps,
        gd.final_theta,
        fmt_f64(gd.final_sharpness())
    );
    println!(
        "gf: {} at t = {} with w = {:?}, sharpness {}",
        gf.outcome,
        fmt_f64(gf.entries.last().map_or(0.0, |e| e.time)),
        gf.final_theta,
        fmt_f64(gf.final_sharpness())
    );

    let dir = ctx.open_out()?;
    data_io::write_text(dir, "gd_trajectory.csv", &path_csv(&gd))?;
    data_io::write_text(dir, "gf_trajectory.csv", &path_csv(&gf))?;
    if ctx.svg {
        data_io::write_text(dir, "gd_trajectory.svg", &trajectory_svg(&gd, Some(2.0 / eta)))?;
    }
    let results = json!({
        "minimizer_sets": sets,
        "gd": summary(&gd),
        "gf": summary(&gf),
        "gd_final_theta": gd.final_theta,
        "gf_final_theta": gf.final_theta,
    });
    write_manifest(dir, "diagnet", s, &model.describe(), results)?;
    Ok(EXIT_OK)
}

/// Trajectory CSV with the parameters appended as `w1, w2, …`.
fn path_csv(t: &Trajectory) -> String {
    let base = t.to_csv();
    let mut lines = base.lines();
    let d = t.final_theta.len();
    let mut out = String::new();
    let header = lines.next().unwrap_or("");
    out.push_str(header);
    for i in 1..=d {
        let _ = write!(out, ",w{i}");
    }
    out.push('\n');
    for (line, theta) in lines.zip(&t.path) {
        out.push_str(line);
        for v in theta {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

fn cmd_risk(ctx: Context) -> Result<i32> {
    let s = &ctx.settings;
    let seed: u64 = s.get("seed")?;
    let d = s.count("d")?;
    let n = s.count("samples")?;
    let m = match s.raw("model")? {
        "folded" => risk::folded_gaussian_model(d),
        "gaussian" => risk::gaussian_linear_model(d),
        other => {
            return Err(Error::Config(format!(
                "unknown risk model '{other}' (folded | gaussian)"
            )))
        }
    }
    .map_err(config)?;
    if n < 100 {
        return Err(Error::Config("samples must be ≥ 100".into()));
    }
    let mut csv = String::from("algorithm,d,n_samples,estimate,std_error,nonrealizable_count\n");
    let mut rows = Vec::new();
    println!(
        "{:<8} {:>22} {:>22} {:>14}",
        "alg", "estimate", "std_error", "nonrealizable"
    );
    for alg in Algorithm::ALL {
        let e = risk::expected_risk_mc(alg, &m, n, seed)?;
        println!(
            "{:<8} {:>22} {:>22} {:>14}",
            alg.name(),
            fmt_f64(e.estimate),
            fmt_f64(e.std_error),
            e.nonrealizable_count
        );
        let _ = writeln!(
            csv,
            "{},{d},{n},{},{},{}",
            alg.name(),
            fmt_f64(e.estimate),
            fmt_f64(e.std_error),
            e.nonrealizable_count
        );
        rows.push(
            json!({"algorithm": alg.name(), "estimate": e.estimate, "std_error": e.std_error,
            "n_used": e.n_used, "nonrealizable_count": e.nonrealizable_count, "infeasible_count": e.infeasible_count}),
        );
    }
    let dir = ctx.open_out()?;
    data_io::write_text(dir, "risk.csv", &csv)?;
    write_manifest(
        dir,
        "risk",
        s,
        &format!("{}:d={d}", s.raw("model")?),
        json!({ "estimates": rows }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_logit(ctx: Context) -> Result<i32> {
    let s = &ctx.settings;
    let seed: u64 = s.get("seed")?;
    let d = s.count("d")?;
    let mu_norm: f64 = s.get("mu_norm")?;
    let n = s.count("samples")?;
    let directions = s.count("directions")?;
    let grid = s.count("grid")?;
    let landscape = s.count("landscape")?;
    if d == 0 || n < 100 || grid < 100 || directions == 0 {
        return Err(Error::Config(
            "need d ≥ 1, samples ≥ 100, grid ≥ 100, directions ≥ 1".into(),
        ));
    }
    let data = TwoPointData::random(d, seed)?;
    let best = logit::min_sharpness_params(&data, grid)?;
    println!(
        "minimum sharpness = {} at (z, b) = ({}, {})",
        fmt_f64(best.value),
        fmt_f64(best.z),
        fmt_f64(best.b)
    );
    let mut mu = vec![0.0; d];
    mu[0] = mu_norm;
    let mut csv = String::from("classifier,d,mu_norm,estimate,std_error\n");
    let mut rows = Vec::new();
    for kind in [ClassifierKind::MinSharpness, ClassifierKind::MaxMargin] {
        let (e, se) = logit::expected_gen_error_over_training(kind, &mu, directions, n, seed)?;
        println!(
            "{:<14} generalization error = {} ± {}",
            kind.name(),
            fmt_f64(e),
            fmt_f64(se)
        );
        let _ = writeln!(
            csv,
            "{},{d},{},{},{}",
            kind.name(),
            fmt_f64(mu_norm),
            fmt_f64(e),
            fmt_f64(se)
        );
        rows.push(json!({"classifier": kind.name(), "estimate": e, "std_error": se}));
    }
    let dir = ctx.open_out()?;
    data_io::write_text(dir, "logit.csv", &csv)?;
    data_io::write_text(
        dir,
        "landscape.csv",
        &logit::landscape_csv((0.0, 1.0), (-1.0, 0.0), landscape),
    )?;
    let results = json!({
        "min_sharpness": best.value,
        "z": best.z,
        "b": best.b,
        "generalization": rows,
    });
    write_manifest(dir, "logit", s, &format!("two-point:d={d}"), results)?;
    Ok(EXIT_OK)
}

/// Loss and sharpness against step (or time), optionally with a horizontal
/// reference line at `reference`.
pub fn trajectory_svg(t: &Trajectory, reference: Option<f64>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const PAD: f64 = 48.0;
    let xs: Vec<f64> = t.entries.iter().map(|e| e.time).collect();
    let x_max = xs.iter().copied().fold(1e-300, f64::max);
    let sx = |x: f64| PAD + (W - 2.0 * PAD) * x / x_max;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\">\n",
        2.0 * H
    );
    let panels: [(&str, Vec<f64>); 2] = [
        ("sharpness", t.entries.iter().map(|e| e.sharpness).collect()),
        (
            "log10 loss",
            t.entries.iter().map(|e| e.loss.max(1e-300).log10()).collect(),
        ),
    ];
    for (k, (label, ys)) in panels.iter().enumerate() {
        let top = k as f64 * H;
        let finite: Vec<f64> = ys.iter().copied().filter(|v| v.is_finite()).collect();
        let mut lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if k == 0 {
            if let Some(r) = reference {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        if hi.is_nan() || hi <= lo {
            hi = lo + 1.0;
        }
        let sy = |v: f64| top + H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
        let _ = writeln!(
            svg,
            "<rect x=\"{PAD}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
            top + PAD,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(
            svg,
            "<text x=\"{PAD}\" y=\"{}\" font-size=\"12\">{label} [{lo:.4}, {hi:.4}]</text>",
            top + PAD - 6.0
        );
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\"/>",
            pts.join(" ")
        );
        if let (0, Some(r)) = (k, reference) {
            let _ = writeln!(
                svg,
                "<line x1=\"{PAD}\" x2=\"{}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
                W - PAD,
                sy(r),
                sy(r)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
