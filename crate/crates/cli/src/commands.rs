use std::path::Path;

use exceed::diagnostics::{bootstrap_bands, build_diagnostics, potential_csv, potential_pairs, qq_csv, qq_pairs, scatter_svg, DiagnosticConfig};
use exceed::estimators::{bayes_uniform_pareto, estimate_awnbe, estimate_eot, AwConfig, Estimate};
use exceed::gof::{bootstrap_pvalue, GofConfig};
use exceed::io::{fmt_f64, read_csv, to_csv};
use exceed::nbe::{estimate_nbe, train as train_net, Architecture, DeepSetsNet, PriorSpec};
use exceed::preprocess::{standardize, ThresholdConfig, ThresholdMode};
use exceed::{EmpiricalMeasure, GeneratorSpec, ModelSpec, RandomSource, Simulator};
use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::provenance::{sibling, write_text, Provenance};
use crate::{Common, Method, Mode, ModelKind};

// Sub-streams of the run seed. Estimation uses the root source as its
// common-random-numbers source, whose tape stream equals `SIMULATION`, so
// data written by `simulate` is reproduced exactly at the true parameters.
// The diagnostics draw their model sample from a stream of their own.
const SIMULATION: u64 = 0;
const TRAINING: u64 = 10;
const BOOTSTRAP: u64 = 20;
const REFERENCE: u64 = 30;
const BANDS: u64 = 31;
const DIAGNOSTIC_SAMPLE: u64 = 32;

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn read_data(path: &Path) -> Result<Array2<f64>, CliError> {
    read_csv(path).map_err(|e| match e {
        exceed::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

/// Model used when no configuration names one: a unit-scale Gumbel generator
/// for continuous data, and for counts a generator that puts one randomly
/// chosen margin at the maximum and the others one step below.
fn default_model(kind: ModelKind, theta: &[f64]) -> Result<ModelSpec, CliError> {
    if kind == ModelKind::Unif1d {
        return Ok(ModelSpec::Unif1d);
    }
    if theta.is_empty() || theta.len() % 2 != 0 {
        return Err(CliError::Config("theta must hold d scales followed by d shapes".into()));
    }
    let d = theta.len() / 2;
    Ok(if kind == ModelKind::Mgpd {
        ModelSpec::Mgpd { generator: GeneratorSpec::gumbel_shared(d, 1.0)?, estimate_dependence: false }
    } else {
        let rows: Vec<(Vec<i64>, f64)> =
            (0..d).map(|j| ((0..d).map(|k| i64::from(k == j)).collect(), 1.0 / d as f64)).collect();
        ModelSpec::Mdgpd { generator: GeneratorSpec::discrete_table(&rows)? }
    })
}

fn kind_of(spec: &ModelSpec) -> ModelKind {
    match spec {
        ModelSpec::Unif1d => ModelKind::Unif1d,
        ModelSpec::Mgpd { .. } => ModelKind::Mgpd,
        ModelSpec::Mdgpd { .. } => ModelKind::Mdgpd,
    }
}

fn check_theta(sim: &dyn Simulator, theta: &[f64]) -> Result<(), CliError> {
    if theta.len() != sim.param_dim() {
        return Err(exceed::Error::DimensionMismatch { expected: sim.param_dim(), got: theta.len() }.into());
    }
    Ok(())
}

fn observed_measure(sim: &dyn Simulator, data: &Array2<f64>) -> Result<EmpiricalMeasure, CliError> {
    if data.ncols() != sim.data_dim() {
        return Err(exceed::Error::DimensionMismatch { expected: sim.data_dim(), got: data.ncols() }.into());
    }
    Ok(sim.measure(data.view())?)
}

pub fn simulate(common: &Common, model: Option<ModelKind>, theta: &[f64], n: usize, out: &Path) -> Result<(), CliError> {
    let mut cfg = load(common)?;
    let seed = cfg.seed()?;
    let spec = match (model, &cfg.model) {
        (Some(kind), Some(spec)) if kind != kind_of(spec) => {
            return Err(CliError::Config(format!("--model {kind:?} conflicts with the configured model")));
        }
        (_, Some(spec)) => spec.clone(),
        (Some(kind), None) => default_model(kind, theta)?,
        (None, None) => return Err(CliError::Config("give --model or a [model] section".into())),
    };
    cfg.model = Some(spec.clone());
    let sim = spec.build()?;
    check_theta(sim.as_ref(), theta)?;
    let sample = sim.sample(theta, n, &RandomSource::new(seed).split(SIMULATION))?;
    write_text(out, &to_csv(sample.view(), sim.is_discrete()))?;
    Provenance::new("simulate", cfg.hash(), Some(seed)).write_for(out)
}

#[derive(Serialize)]
struct ThresholdReport {
    mode: &'static str,
    percentile: Option<f64>,
    thresholds: Vec<f64>,
    n_input: usize,
    n_exceedances: usize,
}

pub fn preprocess(
    input: &Path,
    percentile: Option<f64>,
    mode: Mode,
    fixed: Option<&[f64]>,
    out: &Path,
) -> Result<(), CliError> {
    let data = read_data(input)?;
    let mode = match mode {
        Mode::Continuous => ThresholdMode::Continuous,
        Mode::Discrete => ThresholdMode::DiscreteCounts,
    };
    let cfg = match (percentile, fixed) {
        (Some(p), _) => ThresholdConfig::new(p, mode)?,
        (None, Some(_)) => ThresholdConfig { percentile: 0.5, mode },
        (None, None) => return Err(CliError::Config("give --percentile or --fixed-threshold".into())),
    };
    let exc = standardize(data.view(), &cfg, fixed)?;
    if exc.n_exceedances == 0 {
        return Err(exceed::Error::Empty("exceedance set").into());
    }
    write_text(out, &to_csv(exc.sample.view(), mode == ThresholdMode::DiscreteCounts))?;
    let report = ThresholdReport {
        mode: match mode {
            ThresholdMode::Continuous => "continuous",
            ThresholdMode::DiscreteCounts => "discrete",
        },
        percentile: exc.percentile,
        thresholds: exc.thresholds.clone(),
        n_input: data.nrows(),
        n_exceedances: exc.n_exceedances,
    };
    let thresholds = sibling(out, "thresholds.json");
    write_text(&thresholds, &to_json(&report))?;
    let settings = serde_json::json!({ "percentile": percentile, "mode": report.mode, "fixed": fixed });
    let hash = hex::encode(Sha256::digest(settings.to_string().as_bytes()));
    let meta = Provenance::new("preprocess", hash, None).input(input)?;
    meta.write_for(out)?;
    meta.write_for(&thresholds)
}

pub fn train(common: &Common, k: Option<usize>, epochs: Option<usize>, n: Option<usize>, out_net: &Path) -> Result<(), CliError> {
    let mut cfg = load(common)?;
    if let Some(k) = k {
        cfg.train.training_sets = k;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = n {
        cfg.train.sample_size = n;
    }
    let seed = cfg.seed()?;
    let sim = cfg.model()?.build()?;
    let prior = cfg.prior()?;
    let arch = Architecture::new(sim.data_dim(), sim.param_dim())
        .with_hidden(cfg.train.hidden)
        .with_input_transform(cfg.train.input_transform);
    let (net, report) = train_net(arch, prior, sim.as_ref(), &cfg.train.fit(), &RandomSource::new(seed).split(TRAINING))?;
    write_text(out_net, &(net.to_json() + "\n"))?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in report.losses.iter().enumerate() {
        curve.push_str(&format!("{e},{}\n", fmt_f64(*l)));
    }
    let loss_path = sibling(out_net, "loss.csv");
    write_text(&loss_path, &curve)?;
    let meta = Provenance::new("train", cfg.hash(), Some(seed));
    meta.write_for(out_net)?;
    meta.write_for(&loss_path)
}

fn load_net(path: Option<&Path>, sim: &dyn Simulator) -> Result<DeepSetsNet, CliError> {
    let path = path.ok_or_else(|| CliError::Config("this method needs --net".into()))?;
    DeepSetsNet::load(path, sim.data_dim(), sim.param_dim()).map_err(|e| match e {
        exceed::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    })
}

fn pareto_prior(cfg: &RunConfig) -> Result<(f64, f64), CliError> {
    match cfg.prior()? {
        PriorSpec::Pareto { alpha, beta } => Ok((*alpha, *beta)),
        _ => Err(CliError::Config("bayes1d needs a Pareto prior".into())),
    }
}

fn bayes1d(data: &Array2<f64>, alpha: f64, beta: f64) -> Result<Vec<f64>, exceed::Error> {
    if data.ncols() != 1 {
        return Err(exceed::Error::DimensionMismatch { expected: 1, got: data.ncols() });
    }
    Ok(vec![bayes_uniform_pareto(&data.column(0).to_vec(), alpha, beta)?])
}

fn aw_config(cfg: &RunConfig, n: usize, seed: u64) -> Result<AwConfig, CliError> {
    let mut aw = AwConfig::for_sample_size(n, cfg.bounds()?, RandomSource::new(seed));
    if let Some(l) = cfg.aw.lambda {
        aw.lambda = l;
    }
    if let Some(m) = cfg.aw.m {
        aw.m = m;
    }
    aw.multistart = cfg.aw.multistart;
    aw.optimizer = cfg.aw.optimizer;
    aw.sinkhorn = cfg.sinkhorn;
    aw.validate()?;
    Ok(aw)
}

#[derive(Serialize)]
struct EstimateReport {
    method: Method,
    param_names: Vec<String>,
    theta: Vec<f64>,
    /// Sinkhorn divergence to the simulated sample at `theta`.
    discrepancy: Option<f64>,
    criterion: Option<f64>,
    nbe_theta: Option<Vec<f64>>,
    nbe_discrepancy: Option<f64>,
    lambda: Option<f64>,
    m: Option<usize>,
    evals: Option<usize>,
    converged: Option<bool>,
    net_hash: Option<String>,
    n: usize,
    seed: u64,
}

pub fn estimate(
    common: &Common,
    method: Method,
    data_path: &Path,
    net_path: Option<&Path>,
    lambda: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg = load(common)?;
    if lambda.is_some() {
        if method != Method::Awnbe {
            return Err(CliError::Config("--lambda applies to the awnbe method only".into()));
        }
        cfg.aw.lambda = lambda;
    }
    let seed = cfg.seed()?;
    let data = read_data(data_path)?;
    let n = data.nrows();
    let sim = cfg.model()?.build()?;
    let mut report = EstimateReport {
        method,
        param_names: sim.param_names(),
        theta: Vec::new(),
        discrepancy: None,
        criterion: None,
        nbe_theta: None,
        nbe_discrepancy: None,
        lambda: None,
        m: None,
        evals: None,
        converged: None,
        net_hash: None,
        n,
        seed,
    };
    let mut meta = Provenance::new("estimate", cfg.hash(), Some(seed)).input(data_path)?;
    let fill = |report: &mut EstimateReport, est: Estimate, aw: &AwConfig| {
        report.theta = est.theta;
        report.discrepancy = Some(est.discrepancy);
        report.criterion = Some(est.value);
        report.nbe_discrepancy = est.nbe_discrepancy;
        report.m = Some(aw.m);
        report.evals = Some(est.evals);
        report.converged = Some(est.converged);
    };
    match method {
        Method::Bayes1d => {
            let (alpha, beta) = pareto_prior(&cfg)?;
            report.theta = bayes1d(&data, alpha, beta)?;
        }
        Method::Nbe => {
            let net = load_net(net_path, sim.as_ref())?;
            observed_measure(sim.as_ref(), &data)?;
            report.theta = estimate_nbe(&net, data.view())?;
            report.net_hash = Some(net.hash());
            meta = meta.input(net_path.expect("checked by load_net"))?;
        }
        Method::Eot => {
            let observed = observed_measure(sim.as_ref(), &data)?;
            let aw = aw_config(&cfg, n, seed)?;
            let est = estimate_eot(&observed, &aw, sim.as_ref())?;
            fill(&mut report, est, &aw);
        }
        Method::Awnbe => {
            let net = load_net(net_path, sim.as_ref())?;
            let observed = observed_measure(sim.as_ref(), &data)?;
            let aw = aw_config(&cfg, n, seed)?;
            let start = aw.bounds.projected(&estimate_nbe(&net, data.view())?);
            let est = estimate_awnbe(&observed, &start, &aw, sim.as_ref())?;
            fill(&mut report, est, &aw);
            report.nbe_theta = Some(start);
            report.lambda = Some(aw.lambda);
            report.net_hash = Some(net.hash());
            meta = meta.input(net_path.expect("checked by load_net"))?;
        }
    }
    write_text(out, &to_json(&report))?;
    meta.write_for(out)
}

pub fn gof(
    common: &Common,
    data_path: &Path,
    theta: &[f64],
    method: Method,
    b: Option<usize>,
    net_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg = load(common)?;
    if let Some(b) = b {
        cfg.gof.replicates = b;
    }
    let seed = cfg.seed()?;
    let data = read_data(data_path)?;
    let n = data.nrows();
    let sim = cfg.model()?.build()?;
    check_theta(sim.as_ref(), theta)?;
    let observed = observed_measure(sim.as_ref(), &data)?;
    let gof_cfg = GofConfig { replicates: cfg.gof.replicates, m: cfg.gof.m.unwrap_or(n), sinkhorn: cfg.sinkhorn };
    let net = match method {
        Method::Nbe | Method::Awnbe => Some(load_net(net_path, sim.as_ref())?),
        _ => None,
    };
    let aw = match method {
        Method::Eot | Method::Awnbe => Some(aw_config(&cfg, n, seed)?),
        _ => None,
    };
    let pareto = match method {
        Method::Bayes1d => Some(pareto_prior(&cfg)?),
        _ => None,
    };
    let simulator = sim.as_ref();
    let refit = |x: &Array2<f64>| -> exceed::Result<Vec<f64>> {
        match method {
            Method::Bayes1d => {
                let (alpha, beta) = pareto.expect("prior checked");
                bayes1d(x, alpha, beta)
            }
            Method::Nbe => estimate_nbe(net.as_ref().expect("net loaded"), x.view()),
            Method::Eot => {
                let mu = simulator.measure(x.view())?;
                Ok(estimate_eot(&mu, aw.as_ref().expect("aw config"), simulator)?.theta)
            }
            Method::Awnbe => {
                let aw = aw.as_ref().expect("aw config");
                let mu = simulator.measure(x.view())?;
                let start = aw.bounds.projected(&estimate_nbe(net.as_ref().expect("net loaded"), x.view())?);
                Ok(estimate_awnbe(&mu, &start, aw, simulator)?.theta)
            }
        }
    };
    let report = bootstrap_pvalue(&observed, theta, refit, simulator, n, &gof_cfg, &RandomSource::new(seed).split(BOOTSTRAP))?;
    write_text(out, &(report.to_json() + "\n"))?;
    let mut csv = String::from("replicate,d_boot\n");
    for (b, d) in report.d_boot.iter().enumerate() {
        csv.push_str(&format!("{b},{}\n", fmt_f64(*d)));
    }
    let boot_path = sibling(out, "dboot.csv");
    write_text(&boot_path, &csv)?;
    let mut meta = Provenance::new("gof", cfg.hash(), Some(seed)).input(data_path)?;
    if let Some(p) = net_path.filter(|_| net.is_some()) {
        meta = meta.input(p)?;
    }
    meta.write_for(out)?;
    meta.write_for(&boot_path)
}

#[derive(Serialize)]
struct DiagnosticReport {
    e_stat: f64,
    f_stat: f64,
    n_ref: usize,
    epsilon: f64,
    m: usize,
    band_replicates: usize,
    band_level: Option<f64>,
    theta: Vec<f64>,
    seed: u64,
}

pub fn diagnose(common: &Common, data_path: &Path, theta: &[f64], prefix: &Path, svg: bool) -> Result<(), CliError> {
    let cfg = load(common)?;
    let seed = cfg.seed()?;
    let data = read_data(data_path)?;
    let sim = cfg.model()?.build()?;
    check_theta(sim.as_ref(), theta)?;
    let observed = observed_measure(sim.as_ref(), &data)?;
    let m = cfg.diagnostics.m.unwrap_or(data.nrows());
    let root = RandomSource::new(seed);
    let simulated_rows = sim.sample(theta, m, &root.split(DIAGNOSTIC_SAMPLE))?;
    let simulated = sim.measure(simulated_rows.view())?;
    let dcfg = DiagnosticConfig { n_ref: cfg.diagnostics.n_ref, epsilon: cfg.diagnostics.epsilon };
    let diag = build_diagnostics(&observed, &simulated, &dcfg, sim.is_discrete(), &root.split(REFERENCE))?;
    let bands = if cfg.diagnostics.band_replicates > 0 {
        Some(bootstrap_bands(
            &diag,
            &observed,
            theta,
            sim.as_ref(),
            m,
            cfg.diagnostics.band_replicates,
            cfg.diagnostics.band_level,
            dcfg.epsilon,
            &root.split(BANDS),
        )?)
    } else {
        None
    };
    let path = |suffix: &str| {
        let mut name = prefix.as_os_str().to_owned();
        name.push(suffix);
        std::path::PathBuf::from(name)
    };
    let meta = Provenance::new("diagnose", cfg.hash(), Some(seed)).input(data_path)?;
    let mut outputs = Vec::new();
    for k in 0..diag.dim() {
        let p = path(&format!("_qq_x{}.csv", k + 1));
        write_text(&p, &qq_csv(&diag, bands.as_ref(), k)?)?;
        outputs.push(p);
        if svg {
            let p = path(&format!("_qq_x{}.svg", k + 1));
            write_text(&p, &scatter_svg(&qq_pairs(&diag, k)?, &format!("Q-Q plot, coordinate {}", k + 1)))?;
            outputs.push(p);
        }
    }
    let p = path("_potential.csv");
    write_text(&p, &potential_csv(&diag, bands.as_ref()))?;
    outputs.push(p);
    if svg {
        let p = path("_potential.svg");
        write_text(&p, &scatter_svg(&potential_pairs(&diag), "Potential plot"))?;
        outputs.push(p);
    }
    let report = DiagnosticReport {
        e_stat: diag.e_stat,
        f_stat: diag.f_stat,
        n_ref: diag.len(),
        epsilon: dcfg.epsilon,
        m,
        band_replicates: bands.as_ref().map_or(0, |b| b.replicates),
        band_level: bands.as_ref().map(|b| b.level),
        theta: theta.to_vec(),
        seed,
    };
    let p = path("_stats.json");
    write_text(&p, &to_json(&report))?;
    outputs.push(p);
    for p in &outputs {
        meta.write_for(p)?;
    }
    Ok(())
}
