//! Experiment harness behind the `fidest` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    analyze_flagged, build_restructured, build_swap_test, build_w, build_w_prime, marginal_distribution,
    Projector, Register,
};
use crate::error::{Error, Result};
use crate::estimate::{lower_median, EstimationResult, EstimatorOptions};
use crate::fidelity::{
    exact_fidelity_to_pure, exact_tr_rho_sigma2, fidelity_to_pure, hard_distribution, hard_instance,
    hellinger_closed_form, hellinger_distance, pure_pure_fidelity, sqrt_tr_rho_sigma2_estimate,
    swap_test_estimate, FidelityTask, Sign,
};
use crate::numerics::{kron, CMatrix, CVector, DensityMatrix};
use crate::qstate::{sample_instance, InstanceKind, PreparationOracle, RandomInstanceSpec};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    VerifyIdentities,
    Sweep,
    HardInstance,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    SwapBaseline,
    Optimal,
    TrRhoSigma2,
    PurePure,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::SwapBaseline => "swap-baseline",
            EstimatorKind::Optimal => "optimal",
            EstimatorKind::TrRhoSigma2 => "tr-rho-sigma2",
            EstimatorKind::PurePure => "pure-pure",
        }
    }

    fn run(self, task: &FidelityTask) -> Result<EstimationResult> {
        match self {
            EstimatorKind::SwapBaseline => swap_test_estimate(task),
            EstimatorKind::Optimal => fidelity_to_pure(task),
            EstimatorKind::TrRhoSigma2 => sqrt_tr_rho_sigma2_estimate(task),
            EstimatorKind::PurePure => pure_pure_fidelity(task),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub k: usize,
    /// `None` means full rank `2^k` (rank 1 for pure-pure).
    pub rank: Option<usize>,
    pub estimator: EstimatorKind,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub qubit_cap: Option<usize>,
    /// Centre `p` of the hard-instance pair.
    pub p: f64,
}

impl ExperimentConfig {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            k: 1,
            rank: None,
            estimator: EstimatorKind::Optimal,
            epsilons: vec![0.1],
            trials: 1,
            seed: 0,
            output: None,
            format: match command {
                CommandKind::Single => OutputFormat::Json,
                _ => OutputFormat::Csv,
            },
            qubit_cap: None,
            p: 0.5,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank.unwrap_or(match self.estimator {
            EstimatorKind::PurePure => 1,
            _ => 1 << self.k.min(20),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 || self.k > 10 {
            return bad(format!("--k must be in 1..=10, got {}", self.k));
        }
        let rank = self.rank();
        if rank == 0 || rank > 1 << self.k {
            return bad(format!("--rank must be in 1..={} for k = {}, got {rank}", 1 << self.k, self.k));
        }
        if self.epsilons.is_empty() {
            return bad("--epsilons needs at least one value".into());
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return bad(format!("every epsilon must lie in (0, 1), got {e}"));
        }
        if self.trials == 0 {
            return bad("--trials must be at least 1".into());
        }
        if self.command == CommandKind::HardInstance {
            if rank < 2 {
                return bad("hard-instance needs --rank ≥ 2".into());
            }
            if !(self.p > 0.0 && self.p < 1.0) {
                return bad(format!("--p must lie in (0, 1), got {}", self.p));
            }
        }
        if self.estimator == EstimatorKind::PurePure && self.rank.is_some_and(|r| r != 1) {
            return bad("pure-pure compares pure states; drop --rank or pass --rank 1".into());
        }
        Ok(())
    }
}

/// Optional settings read from `--config`; explicit flags win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigArgs {
    #[arg(skip)]
    pub command: Option<CommandKind>,
    /// System qubits
    #[arg(long)]
    pub k: Option<usize>,
    /// Rank of the mixed state(s); defaults to 2^k
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    /// Comma-separated target errors
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write results here instead of stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Largest circuit simulated (also FIDEST_QUBIT_CAP)
    #[arg(long)]
    pub qubit_cap: Option<usize>,
    /// Centre of the hard-instance pair
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CommandArgs {
    #[command(flatten)]
    pub settings: ConfigArgs,
    /// JSON file with any of the settings above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the encoding identities on a seeded corpus
    VerifyIdentities(CommandArgs),
    /// Run an estimator over epsilons and seeds
    Sweep(CommandArgs),
    /// Diagnostics for the lower-bound instance pair
    HardInstance(CommandArgs),
    /// One estimation, printed as JSON
    Single(CommandArgs),
}

#[derive(Debug, Parser)]
#[command(name = "fidest", version, about = "Fidelity estimation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let (kind, args) = match self.command {
            Command::VerifyIdentities(a) => (CommandKind::VerifyIdentities, a),
            Command::Sweep(a) => (CommandKind::Sweep, a),
            Command::HardInstance(a) => (CommandKind::HardInstance, a),
            Command::Single(a) => (CommandKind::Single, a),
        };
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<ConfigArgs>(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => ConfigArgs::default(),
        };
        if let Some(c) = file.command {
            if c != kind {
                return Err(Error::InvalidConfig(format!(
                    "config file is for {c:?} but the subcommand is {kind:?}"
                )));
            }
        }
        let s = args.settings;
        let mut cfg = ExperimentConfig::new(kind);
        macro_rules! merge {
            ($($field:ident),*) => {$(
                if let Some(v) = s.$field.or(file.$field) {
                    cfg.$field = v;
                }
            )*};
        }
        merge!(k, estimator, epsilons, trials, seed, format, p);
        cfg.rank = s.rank.or(file.rank);
        cfg.output = s.output.or(file.output);
        cfg.qubit_cap = s.qubit_cap.or(file.qubit_cap);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub instance_id: String,
    pub estimator: String,
    pub epsilon: f64,
    pub seed: u64,
    pub true_value: f64,
    pub estimate: f64,
    pub abs_error: f64,
    pub success: bool,
    #[serde(rename = "queries_U")]
    pub queries_u: u64,
    #[serde(rename = "queries_V")]
    pub queries_v: u64,
    pub grover_applications: u64,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str = "instance_id,estimator,epsilon,seed,true_value,estimate,abs_error,success,queries_U,queries_V,grover_applications,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub estimator: String,
    pub slope: f64,
    pub points: usize,
}

/// Least-squares slope of `log(median total queries)` against `log(ε)`, per
/// estimator.
pub fn fit_scaling(records: &[ExperimentRecord]) -> Result<Vec<ScalingFit>> {
    let mut estimators: Vec<&str> = records.iter().map(|r| r.estimator.as_str()).collect();
    estimators.sort_unstable();
    estimators.dedup();
    if estimators.is_empty() {
        return Err(Error::InsufficientData("no records".into()));
    }
    let mut fits = Vec::new();
    for est in estimators {
        let mut by_eps: Vec<(f64, Vec<f64>)> = Vec::new();
        for r in records.iter().filter(|r| r.estimator == est) {
            let q = (r.queries_u + r.queries_v) as f64;
            match by_eps.iter_mut().find(|(e, _)| *e == r.epsilon) {
                Some((_, qs)) => qs.push(q),
                None => by_eps.push((r.epsilon, vec![q])),
            }
        }
        if by_eps.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "{est}: {} distinct epsilon values, need at least 3",
                by_eps.len()
            )));
        }
        let points: Vec<(f64, f64)> = by_eps
            .iter()
            .map(|(e, qs)| (e.ln(), lower_median(qs).max(1.0).ln()))
            .collect();
        fits.push(ScalingFit {
            estimator: est.to_string(),
            slope: least_squares_slope(&points),
            points: points.len(),
        });
    }
    Ok(fits)
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Estimator inputs for one configuration, with the exact target value.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    pub rho_oracle: PreparationOracle,
    pub second_oracle: PreparationOracle,
    pub true_value: f64,
}

fn haar(k: usize, seed: u64) -> Result<(DensityMatrix, PreparationOracle, CVector)> {
    let (rho, oracle) = sample_instance(&RandomInstanceSpec::new(k, 1, seed, InstanceKind::HaarPure))?;
    let stride = 1 << oracle.ancilla_qubits();
    let psi = CVector::new(oracle.prepared_state().iter().step_by(stride).copied().collect());
    Ok((rho, oracle, psi))
}

fn ginibre(k: usize, rank: usize, seed: u64) -> Result<(DensityMatrix, PreparationOracle)> {
    sample_instance(&RandomInstanceSpec::new(k, rank, seed, InstanceKind::GinibreMixed))
}

/// `ρ` from `(k, rank, seed)`; the second state from a derived seed.
pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let (k, rank, seed) = (cfg.k, cfg.rank(), cfg.seed);
    let second_seed = derive_seed(seed, 1);
    let (rho, rho_oracle) = if rank == 1 {
        let (rho, o, _) = haar(k, seed)?;
        (rho, o)
    } else {
        ginibre(k, rank, seed)?
    };
    let (second_oracle, true_value) = match cfg.estimator {
        EstimatorKind::TrRhoSigma2 => {
            let (sigma, o) = if rank == 1 {
                let (s, o, _) = haar(k, second_seed)?;
                (s, o)
            } else {
                ginibre(k, rank, second_seed)?
            };
            (o, exact_tr_rho_sigma2(&rho, &sigma)?.sqrt())
        }
        _ => {
            let (_, o, psi) = haar(k, second_seed)?;
            (o, exact_fidelity_to_pure(&rho, &psi)?)
        }
    };
    Ok(Instance {
        id: format!("{}|{}", rho_oracle.label(), second_oracle.label()),
        rho_oracle,
        second_oracle,
        true_value,
    })
}

fn options(cfg: &ExperimentConfig) -> EstimatorOptions {
    EstimatorOptions {
        qubit_cap: cfg.qubit_cap,
        ..Default::default()
    }
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, 2 + trial as u64)
}

/// Per-estimator check of the circuit width before any simulation.
fn check_width(cfg: &ExperimentConfig, inst: &Instance) -> Result<()> {
    let b = inst.rho_oracle.ancilla_qubits().max(inst.second_oracle.ancilla_qubits());
    let needed = 1 + 2 * (cfg.k + b);
    let cap = cfg.qubit_cap.unwrap_or_else(crate::circuit::default_qubit_cap);
    if needed > cap {
        return Err(Error::QubitCapExceeded {
            what: "estimator circuit",
            requested: needed,
            cap,
        });
    }
    Ok(())
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let inst = build_instance(cfg)?;
    check_width(cfg, &inst)?;
    let mut jobs = Vec::new();
    for &eps in &cfg.epsilons {
        for t in 0..cfg.trials {
            let task = FidelityTask::new(
                inst.rho_oracle.clone(),
                inst.second_oracle.clone(),
                eps,
                trial_seed(cfg.seed, t),
            )?
            .with_options(options(cfg));
            jobs.push(task);
        }
    }
    let estimator = cfg.estimator;
    let mut records = jobs
        .into_par_iter()
        .map(|task| {
            let start = Instant::now();
            let r = estimator.run(&task)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let abs_error = (r.estimate - inst.true_value).abs();
            Ok(ExperimentRecord {
                instance_id: inst.id.clone(),
                estimator: estimator.name().to_string(),
                epsilon: task.epsilon,
                seed: task.seed,
                true_value: inst.true_value,
                estimate: r.estimate,
                abs_error,
                success: abs_error <= task.epsilon,
                queries_u: r.queries.u.total(),
                queries_v: r.queries.v.total(),
                grover_applications: r.grover_applications,
                wall_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon).then(a.seed.cmp(&b.seed)));
    Ok(records)
}

pub fn run_single(cfg: &ExperimentConfig) -> Result<EstimationResult> {
    let inst = build_instance(cfg)?;
    check_width(cfg, &inst)?;
    let task = FidelityTask::new(inst.rho_oracle, inst.second_oracle, cfg.epsilons[0], cfg.seed)?
        .with_options(options(cfg));
    cfg.estimator.run(&task)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub identity: String,
    pub trials: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

struct Tracker {
    checks: Vec<IdentityCheck>,
}

impl Tracker {
    fn record(&mut self, name: &str, tolerance: f64, residual: f64) {
        match self.checks.iter_mut().find(|c| c.identity == name) {
            Some(c) => {
                c.trials += 1;
                c.max_residual = c.max_residual.max(residual);
                c.pass = c.max_residual <= c.tolerance;
            }
            None => self.checks.push(IdentityCheck {
                identity: name.to_string(),
                trials: 1,
                max_residual: residual,
                tolerance,
                pass: residual <= tolerance,
            }),
        }
    }
}

pub fn run_identities(cfg: &ExperimentConfig) -> Result<Vec<IdentityCheck>> {
    let k = cfg.k;
    let d = 1usize << k;
    let mut t = Tracker { checks: Vec::new() };
    for trial in 0..cfg.trials {
        let base = 3 * trial as u64;
        let rank = cfg.rank.unwrap_or(1 + trial % d);
        let (rho, u) = ginibre(k, rank, derive_seed(cfg.seed, base))?;
        let (_, v, psi) = haar(k, derive_seed(cfg.seed, base + 1))?;
        let (sigma, s) = ginibre(k, 1 + (trial + 1) % d, derive_seed(cfg.seed, base + 2))?;

        for o in [&u, &v, &s] {
            let (unitarity, reconstruction) = o.soundness(o.reduced_state())?;
            t.record("oracle_unitarity", 1e-10, unitarity);
            t.record("oracle_reconstruction", 1e-9, reconstruction);
        }
        let ab = Projector::zeros(&[Register::A, Register::B]);
        let f2 = rho.expectation(&psi)?;

        let w = build_w(&u, &v)?;
        let amp = analyze_flagged(&w.execute()?, w.layout(), &ab)?.flagged_amplitude;
        t.record("w_pure_amplitude", 1e-10, (amp * amp - f2).abs());

        let wp = build_w_prime(&u, &v)?;
        let p0 = marginal_distribution(&wp.execute()?, wp.layout(), &[Register::C])?[0];
        t.record("w_prime_flag", 1e-10, (p0 - amp * amp).abs());

        let tr = exact_tr_rho_sigma2(&rho, &sigma)?;
        let w = build_w(&u, &s)?;
        let amp_w = analyze_flagged(&w.execute()?, w.layout(), &ab)?.flagged_amplitude;
        t.record("w_mixed_amplitude", 1e-10, (amp_w * amp_w - tr).abs());

        let r = build_restructured(&u, &s)?;
        let primed = Projector::zeros(&[Register::APrime, Register::BPrime]);
        let out = primed.postselect(&r.execute()?, r.layout())?;
        t.record("restructured_vs_w", 1e-10, (out.norm_sqr() - amp_w * amp_w).abs());
        let b = u.ancilla_qubits().max(s.ancilla_qubits());
        let u_pad = u.padded(b - u.ancilla_qubits());
        let expected = kron(sigma.matrix(), &CMatrix::identity(1 << b)).apply(&u_pad.prepared_state())?;
        t.record("restructured_sigma_action", 1e-10, out.max_abs_diff(&expected));

        let sw = build_swap_test(&u, &v)?;
        let p = marginal_distribution(&sw.execute()?, sw.layout(), &[Register::C])?[0];
        t.record("swap_test_law", 1e-10, (p - (1.0 + f2) / 2.0).abs());
    }
    for eps in [0.0, 0.05, 0.1, 0.2] {
        let p = 0.45;
        for r in 2..=d {
            let plus = hard_distribution(p, eps, r, Sign::Plus, k)?;
            let minus = hard_distribution(p, eps, r, Sign::Minus, k)?;
            let direct = hellinger_distance(&plus, &minus)?;
            t.record("hellinger_closed_form", 1e-12, (direct - hellinger_closed_form(p, eps)).abs());
        }
    }
    Ok(t.checks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardRecord {
    pub p: f64,
    pub eps: f64,
    pub rank: usize,
    pub k: usize,
    pub fidelity_plus: f64,
    pub fidelity_minus: f64,
    pub fidelity_residual: f64,
    pub hellinger_closed: f64,
    pub hellinger_direct: f64,
    pub hellinger_residual: f64,
    pub target_error: f64,
    pub estimate_plus: f64,
    pub estimate_minus: f64,
    #[serde(rename = "queries_U")]
    pub queries_u: u64,
    #[serde(rename = "queries_V")]
    pub queries_v: u64,
}

/// For each ε: the pair `ρ±`, both fidelities, the Hellinger distance two
/// ways, and optimal estimates at target error `ε/2`.
pub fn run_hard_instance(cfg: &ExperimentConfig) -> Result<Vec<HardRecord>> {
    let (p, r, k) = (cfg.p, cfg.rank(), cfg.k);
    let target = PreparationOracle::from_pure_state(&CVector::basis(1 << k, 0), 1, "zero")?;
    let mut out = Vec::new();
    for &eps in &cfg.epsilons {
        let plus = hard_instance(p, eps, r, Sign::Plus, k)?;
        let minus = hard_instance(p, eps, r, Sign::Minus, k)?;
        let fp = exact_fidelity_to_pure(&plus.rho, &plus.target)?;
        let fm = exact_fidelity_to_pure(&minus.rho, &minus.target)?;
        let fidelity_residual = (fp - plus.fidelity()).abs().max((fm - minus.fidelity()).abs());
        let closed = hellinger_closed_form(p, eps);
        let direct = hellinger_distance(&plus.distribution, &minus.distribution)?;
        let target_error = eps / 2.0;
        let mut estimates = [0.0; 2];
        let mut queries = (0, 0);
        for (slot, h) in [&plus, &minus].into_iter().enumerate() {
            let task = FidelityTask::new(h.oracle.clone(), target.clone(), target_error, cfg.seed)?
                .with_options(options(cfg));
            let res = fidelity_to_pure(&task)?;
            estimates[slot] = res.estimate;
            queries.0 += res.queries.u.total();
            queries.1 += res.queries.v.total();
        }
        out.push(HardRecord {
            p,
            eps,
            rank: r,
            k,
            fidelity_plus: fp,
            fidelity_minus: fm,
            fidelity_residual,
            hellinger_closed: closed,
            hellinger_direct: direct,
            hellinger_residual: (closed - direct).abs(),
            target_error,
            estimate_plus: estimates[0],
            estimate_minus: estimates[1],
            queries_u: queries.0,
            queries_v: queries.1,
        });
    }
    Ok(out)
}

/// Rendered output of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub body: String,
    /// Human-readable summary lines for stderr.
    pub messages: Vec<String>,
    pub success: bool,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.command {
        CommandKind::Sweep => {
            let records = run_sweep(cfg)?;
            let scaling = if cfg.epsilons.len() >= 3 { fit_scaling(&records).ok() } else { None };
            let mut messages = Vec::new();
            for &eps in &cfg.epsilons {
                let rows: Vec<_> = records.iter().filter(|r| r.epsilon == eps).collect();
                let ok = rows.iter().filter(|r| r.success).count();
                messages.push(format!(
                    "epsilon {eps}: success {ok}/{} ({:.3})",
                    rows.len(),
                    ok as f64 / rows.len() as f64
                ));
            }
            for fit in scaling.iter().flatten() {
                messages.push(format!("{} slope {:.4} over {} epsilons", fit.estimator, fit.slope, fit.points));
            }
            let body = match cfg.format {
                OutputFormat::Csv => to_csv(&records)?,
                OutputFormat::Json => {
                    #[derive(Serialize)]
                    struct Summary<'a> {
                        records: &'a [ExperimentRecord],
                        scaling: Vec<ScalingFit>,
                    }
                    to_json(&Summary {
                        records: &records,
                        scaling: scaling.unwrap_or_default(),
                    })?
                }
            };
            Ok(Outcome {
                body,
                messages,
                success: true,
            })
        }
        CommandKind::Single => {
            let result = run_single(cfg)?;
            Ok(Outcome {
                body: result.to_json() + "\n",
                messages: vec![],
                success: true,
            })
        }
        CommandKind::VerifyIdentities => {
            let checks = run_identities(cfg)?;
            let messages = checks
                .iter()
                .map(|c| {
                    format!(
                        "{} {:<28} max residual {:.3e} (tol {:.0e}, {} checks)",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.identity,
                        c.max_residual,
                        c.tolerance,
                        c.trials
                    )
                })
                .collect();
            let success = checks.iter().all(|c| c.pass);
            let body = match cfg.format {
                OutputFormat::Csv => to_csv(&checks)?,
                OutputFormat::Json => to_json(&checks)?,
            };
            Ok(Outcome {
                body,
                messages,
                success,
            })
        }
        CommandKind::HardInstance => {
            let rows = run_hard_instance(cfg)?;
            let success = rows
                .iter()
                .all(|r| r.hellinger_residual <= 1e-12 && r.fidelity_residual <= 1e-12);
            let messages = rows
                .iter()
                .map(|r| {
                    format!(
                        "eps {}: F+ {:.6} F- {:.6} d_H {:.6e} (residual {:.1e})",
                        r.eps, r.fidelity_plus, r.fidelity_minus, r.hellinger_closed, r.hellinger_residual
                    )
                })
                .collect();
            let body = match cfg.format {
                OutputFormat::Csv => to_csv(&rows)?,
                OutputFormat::Json => to_json(&rows)?,
            };
            Ok(Outcome {
                body,
                messages,
                success,
            })
        }
    }
}

/// Parses arguments, runs, and writes output. Exit code 1 for failed
/// checks, 2 for errors.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match cli.resolve().and_then(|cfg| run(&cfg).map(|o| (cfg, o))) {
        Ok((cfg, outcome)) => {
            for m in &outcome.messages {
                eprintln!("{m}");
            }
            let written = match &cfg.output {
                Some(path) => fs::write(path, &outcome.body).map_err(Error::from),
                None => std::io::stdout()
                    .write_all(outcome.body.as_bytes())
                    .map_err(Error::from),
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
