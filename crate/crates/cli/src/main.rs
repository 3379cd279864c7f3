use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use blockvar::blocks::{eval_block_functional, BlockFunctional};
use blockvar::edgeworth::{std_normal_cdf, CumulantSource, CumulantVector, EeCdf, StudentizedCdf, StudentizedEEParams};
use blockvar::estimators;
use blockvar::harness::{self, ExperimentConfig};
use blockvar::io::{read_series, write_series, write_series_csv};
use blockvar::procgen::{Innovation, LinearProcessSpec, MDependentSpec, ProcessSpec, WindowMap};
use blockvar::resample::{self, ResampleInput, ResamplePlan, Scheme, StatisticRegistry};
use blockvar::{Error, Result};

#[derive(Parser)]
#[command(name = "blockvar", version, about = "Block bootstraps, block-variable estimators and Edgeworth expansions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a series from the built-in process menu.
    Simulate(SimulateArgs),
    /// Run one estimator on a series and print a JSON record.
    Estimate(EstimateArgs),
    /// Bootstrap law of a statistic.
    Bootstrap(BootstrapArgs),
    /// Evaluate an Edgeworth expansion on a grid, as CSV.
    Edgeworth(EdgeworthArgs),
    /// Run a Monte Carlo experiment from a config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ProcessArgs {
    /// `linear` or `m-dependent`.
    #[arg(long, default_value = "linear")]
    process: String,
    /// Moving-average coefficients a_0,…,a_J.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1")]
    coeffs: Vec<f64>,
    /// Window length for m-dependent processes.
    #[arg(long, default_value_t = 1)]
    m0: usize,
    /// first | sum | product | constant:<c>
    #[arg(long, default_value = "first")]
    map: String,
    #[arg(long, default_value = "normal")]
    innovation: String,
    #[arg(long, default_value_t = 1.0)]
    innov_variance: f64,
}

impl ProcessArgs {
    fn spec(&self) -> Result<ProcessSpec> {
        let innov: Innovation = self.innovation.parse()?;
        let spec = match self.process.as_str() {
            "linear" => ProcessSpec::Linear(LinearProcessSpec::new(self.coeffs.clone(), innov, self.innov_variance)?),
            "m-dependent" => {
                let map: WindowMap = self.map.parse()?;
                ProcessSpec::MDependent(MDependentSpec::new(self.m0, map, innov, self.innov_variance)?)
            }
            other => return Err(Error::Parse(format!("unknown process `{other}`"))),
        };
        Ok(spec)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `.json` writes a record with spec and seed; anything else CSV. Stdout CSV when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Autocov,
    Spectral,
    MbbMoment,
    MbbVar,
    NbbVar,
    LagVar,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(value_enum)]
    estimator: Estimator,
    /// Series in CSV or JSON format.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ell: Option<usize>,
    /// Lag for `autocov`.
    #[arg(long)]
    lag: Option<usize>,
    /// Power for `mbb-moment`.
    #[arg(long, default_value_t = 1)]
    nu: u32,
    /// Frequency for `spectral`.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    lambda: f64,
    /// Lag weights w_0..w_ℓ for `spectral`; Bartlett when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    weights: Option<Vec<f64>>,
    /// Block functional for `lag-var`: scaled-sum | power:<nu> | periodogram:<omega>.
    #[arg(long, default_value = "scaled-sum")]
    functional: String,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "mbb")]
    scheme: String,
    /// Block length ℓ (for BOBB, the length of the block variables).
    #[arg(long)]
    ell: usize,
    /// Run length ℓ₁ for BOBB.
    #[arg(long)]
    ell1: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Registered statistic; `bobb-studentized` is the BOBB default.
    #[arg(long)]
    statistic: Option<String>,
    /// Block functional for BOBB.
    #[arg(long, default_value = "scaled-sum")]
    functional: String,
    /// Enumerate every MBB resample instead of sampling.
    #[arg(long)]
    exact: bool,
}

#[derive(Args)]
struct EdgeworthArgs {
    /// JSON file: {"kind": "cumulants", "chi": [χ2, …], "b_tilde": …, "s": …}
    /// or {"kind": "studentized", "order": 1|2, "params": {…}}.
    #[arg(long)]
    params: PathBuf,
    /// `<from>:<to>:<points>`.
    #[arg(long, default_value = "-4:4:81", allow_hyphen_values = true)]
    grid: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Ee,
    Soc,
    Mdev,
    Mbbmom,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    kind: ExperimentName,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Run configs above the operation budget.
    #[arg(long)]
    allow_large: bool,
}

fn parse_functional(s: &str) -> Result<BlockFunctional> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let num = |what: &str| -> Result<f64> {
        arg.trim().parse().map_err(|_| Error::Parse(format!("functional {kind} needs a numeric {what}")))
    };
    match kind {
        "scaled-sum" => Ok(BlockFunctional::ScaledSum),
        "power" => Ok(BlockFunctional::Power { nu: num("power")? as u32 }),
        "periodogram" => Ok(BlockFunctional::Periodogram { omega: num("frequency")? }),
        other => Err(Error::Parse(format!("unknown functional `{other}`"))),
    }
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Parse(format!("missing --{flag}")))
}

fn print_json(v: &Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let ts = a.process.spec()?.generate(a.n, a.seed)?;
    match a.out {
        Some(p) => write_series(&p, &ts),
        None => write_series_csv(&ts.values, BufWriter::new(io::stdout().lock())),
    }
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let ts = read_series(&a.input)?;
    let x = ts.as_slice();
    let (name, params, value, truncated) = match a.estimator {
        Estimator::Autocov => {
            let lag = need(a.lag, "lag")?;
            ("autocov", json!({ "lag": lag }), estimators::sample_autocov(x, lag)?, false)
        }
        Estimator::Spectral => {
            let ell = need(a.ell, "ell")?;
            let w = a.weights.unwrap_or_else(|| {
                (0..=ell).map(|k| if k == 0 { 1.0 } else { 2.0 * (1.0 - k as f64 / (ell + 1) as f64) }).collect()
            });
            let v = estimators::spectral_estimate(x, ell, &w, a.lambda)?;
            ("spectral", json!({ "ell": ell, "lambda": a.lambda, "weights": w }), v, false)
        }
        Estimator::MbbMoment => {
            let ell = need(a.ell, "ell")?;
            ("mbb-moment", json!({ "ell": ell, "nu": a.nu }), estimators::mbb_moment(x, ell, a.nu)?, false)
        }
        Estimator::MbbVar => {
            let ell = need(a.ell, "ell")?;
            let v = estimators::mbb_variance(x, ell)?;
            ("mbb-var", json!({ "ell": ell }), v.value, v.truncated)
        }
        Estimator::NbbVar => {
            let ell = need(a.ell, "ell")?;
            let v = estimators::nbb_variance(x, ell)?;
            ("nbb-var", json!({ "ell": ell }), v.value, v.truncated)
        }
        Estimator::LagVar => {
            let ell = need(a.ell, "ell")?;
            let f = parse_functional(&a.functional)?;
            let bv = eval_block_functional(x, ell, &f)?;
            let v = estimators::lag_window_variance(&bv)?;
            ("lag-var", json!({ "ell": ell, "functional": f }), v.value, v.truncated)
        }
    };
    print_json(&json!({ "estimator": name, "params": params, "value": value, "truncated": truncated }))
}

fn bootstrap(a: BootstrapArgs) -> Result<()> {
    let ts = read_series(&a.input)?;
    let x = ts.as_slice();
    let scheme: Scheme = a.scheme.parse()?;
    let registry = StatisticRegistry::default();
    let (dist, params) = if scheme == Scheme::Bobb {
        let ell1 = need(a.ell1, "ell1")?;
        let f = parse_functional(&a.functional)?;
        let bv = eval_block_functional(x, a.ell, &f)?;
        let plan = ResamplePlan {
            scheme,
            block_len: ell1,
            replicates: a.replicates,
            master_seed: a.seed,
            statistic: a.statistic.unwrap_or_else(|| "bobb-studentized".into()),
        };
        let d = resample::bootstrap_distribution(&plan, ResampleInput::BlockVars(&bv), &registry)?;
        (d, json!({ "plan": plan, "ell": a.ell, "functional": f }))
    } else {
        let statistic = a.statistic.unwrap_or_else(|| "mean".into());
        if a.exact {
            if scheme != Scheme::Mbb {
                return Err(Error::Parse("--exact enumerates MBB resamples only".into()));
            }
            let d = resample::exact_enumeration(x, a.ell, &statistic, &registry)?;
            (d, json!({ "scheme": scheme, "block_len": a.ell, "statistic": statistic, "exact": true }))
        } else {
            let plan = ResamplePlan {
                scheme,
                block_len: a.ell,
                replicates: a.replicates,
                master_seed: a.seed,
                statistic,
            };
            let d = resample::bootstrap_distribution(&plan, ResampleInput::Series(x), &registry)?;
            (d, json!({ "plan": plan }))
        }
    };
    let q: serde_json::Map<String, Value> = [0.025, 0.05, 0.5, 0.95, 0.975]
        .iter()
        .map(|&p| (p.to_string(), json!(dist.quantile(p))))
        .collect();
    let mut rec = json!({ "params": params, "quantiles": q, "mean": dist.mean() });
    if dist.is_exact {
        let atoms: Vec<Value> = dist.merged_atoms().into_iter().map(|(v, p)| json!({ "value": v, "prob": p })).collect();
        rec["atoms"] = json!(atoms);
    } else {
        rec["samples"] = json!(dist.samples);
    }
    print_json(&rec)
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Parse(format!("grid `{s}` is not <from>:<to>:<points>"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let from: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let to: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if k < 2 || !(to > from) {
        return Err(Error::Parse("grid needs at least 2 points and from < to".into()));
    }
    Ok((0..k).map(|i| from + (to - from) * i as f64 / (k - 1) as f64).collect())
}

fn edgeworth(a: EdgeworthArgs) -> Result<()> {
    let v: Value = serde_json::from_str(&fs::read_to_string(&a.params)?)?;
    let grid = parse_grid(&a.grid)?;
    let field = |k: &str| v.get(k).ok_or_else(|| Error::Parse(format!("params file lacks `{k}`")));
    let (ee, scale): (Box<dyn Fn(f64) -> f64>, f64) = match field("kind")?.as_str() {
        Some("cumulants") => {
            let chi: Vec<f64> = serde_json::from_value(field("chi")?.clone())?;
            let cum = CumulantVector::new(chi, CumulantSource::Analytic)?;
            let b_tilde = field("b_tilde")?.as_f64().ok_or_else(|| Error::Parse("b_tilde must be a number".into()))?;
            let s = v.get("s").and_then(Value::as_u64).map(|s| s as usize).unwrap_or(cum.order());
            let f = EeCdf::new(&cum, b_tilde, s)?;
            let sigma = f.sigma;
            (Box::new(move |x| f.cdf(x)), sigma)
        }
        Some("studentized") => {
            let params: StudentizedEEParams = serde_json::from_value(field("params")?.clone())?;
            let order = v.get("order").and_then(Value::as_u64).unwrap_or(2) as usize;
            let f = StudentizedCdf::new(&params, order)?;
            (Box::new(move |x| f.cdf(x)), 1.0)
        }
        _ => return Err(Error::Parse("`kind` must be `cumulants` or `studentized`".into())),
    };
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(out, "x,phi,ee")?;
    for x in grid {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", x, std_normal_cdf(x / scale), ee(x))?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let name = match a.kind {
        ExperimentName::Ee => "ee",
        ExperimentName::Soc => "soc",
        ExperimentName::Mdev => "mdev",
        ExperimentName::Mbbmom => "mbbmom",
    };
    let mut text = fs::read_to_string(&a.config)?;
    let has_kind = text.lines().any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("experiment"));
    if !has_kind {
        text = format!("experiment = {name}\n{text}");
    }
    let mut cfg = ExperimentConfig::parse(&text)?;
    if cfg.experiment.name() != name {
        return Err(Error::Parse(format!(
            "config is for experiment `{}` but `{name}` was requested",
            cfg.experiment.name()
        )));
    }
    if let Some(seed) = a.seed {
        cfg.master_seed = seed;
    }
    let out = harness::run_experiment(&cfg, a.allow_large)?;
    harness::persist(&a.out, &cfg, &out)?;
    print_json(&serde_json::to_value(&out.result.summary)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Estimate(a) => estimate(a),
        Cmd::Bootstrap(a) => bootstrap(a),
        Cmd::Edgeworth(a) => edgeworth(a),
        Cmd::Experiment(a) => experiment(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
