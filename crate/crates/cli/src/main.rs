mod manifest;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use perpetua::asymptotics::{
    predict_ld, predict_local, predict_pointwise, prefactor_varkappa, rate_i, require_lower_deviation, PrefactorEstimate,
    PrefactorMethod,
};
use perpetua::model::{bundled_law, bundled_law_names};
use perpetua::simulate::{run_replicates, PassageConfig, TiltKernel};
use perpetua::spectral::{Pressure, RateModel, Side};
use perpetua::verify::{enumerable_depth, run_verify, Theorem, Verdict, VerifySettings};
use perpetua::{DirectionPoint, MatrixQLaw};
use serde_json::{json, Value};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "perpetua", version, about = "First-passage asymptotics of multivariate perpetuities")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "PERPETUA_WORKERS")]
    workers: Option<usize>,

    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pressure function table and the constants alpha, rho, sigma_alpha.
    Spectral(SpectralArgs),
    /// First-passage samples as CSV plus a JSON manifest.
    Simulate(SimulateArgs),
    /// Large-deviation prediction for P(tau_u <= beta log u) and its variants.
    Predict(PredictArgs),
    /// Compare predictions with simulation or exact enumeration.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct LawArg {
    /// Law config (JSON file) or the name of a bundled law.
    #[arg(long)]
    law: String,
}

#[derive(Args)]
struct SpectralArgs {
    #[command(flatten)]
    law: LawArg,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])]
    s_grid: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    law: LawArg,
    #[arg(long)]
    u: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Sample under the exponential tilt at this s (finite-support laws).
    #[arg(long)]
    tilt: Option<f64>,
    /// Directional passage <y, V_n> > u; `e1`, `uniform` or comma-separated entries.
    #[arg(long)]
    y: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PredictVariant {
    Cumulative,
    Local,
    Pointwise,
    Directional,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    law: LawArg,
    #[arg(long, conflicts_with = "beta_over_rho")]
    beta: Option<f64>,
    #[arg(long)]
    beta_over_rho: Option<f64>,
    #[arg(long, conflicts_with_all = ["log_u", "n"])]
    u: Option<f64>,
    #[arg(long, conflicts_with = "n")]
    log_u: Option<f64>,
    /// Choose u with beta log u = n exactly.
    #[arg(long)]
    n: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    l: f64,
    #[arg(long, value_enum, default_value_t = PredictVariant::Cumulative)]
    variant: PredictVariant,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 1)]
    m: u32,
    #[arg(long)]
    y: Option<String>,
    /// Cached prefactor estimate (JSON); computed and optionally saved otherwise.
    #[arg(long)]
    prefactor: Option<PathBuf>,
    #[arg(long)]
    save_prefactor: Option<PathBuf>,
    /// Depth of the exact W_n trace used for the prefactor.
    #[arg(long)]
    prefactor_n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    law: LawArg,
    /// kesten, lln, clt, ld, local, matrixld or all.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    theorem: Vec<String>,
    /// Thresholds u for the LLN, CLT and LD checks.
    #[arg(long, value_delimiter = ',', conflicts_with = "log_u")]
    u_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    log_u: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Verification failure, as opposed to an error.
#[derive(Debug)]
struct Failed;

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("verification failed")
    }
}

impl std::error::Error for Failed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.is::<Failed>() {
                return ExitCode::from(1);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<perpetua::Error>()) {
        Some(pe) if pe.is_input_error() => 2,
        Some(_) => 3,
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().context("worker pool")?;
    match cli.command {
        Command::Spectral(a) => spectral(a, cli.seed, workers),
        Command::Simulate(a) => simulate(a, cli.seed.unwrap_or(1), workers),
        Command::Predict(a) => predict(a, cli.seed, workers),
        Command::Verify(a) => verify(a, cli.seed, workers),
    }
}

fn load_law(spec: &str) -> anyhow::Result<MatrixQLaw> {
    let path = Path::new(spec);
    if path.exists() {
        return MatrixQLaw::from_path(path).with_context(|| format!("reading law {}", path.display()));
    }
    if bundled_law_names().any(|n| n == spec) {
        return Ok(bundled_law(spec)?);
    }
    let names: Vec<_> = bundled_law_names().collect();
    Err(perpetua::Error::Missing(format!("law {spec:?} is neither a file nor a bundled law ({})", names.join(", "))).into())
}

fn parse_direction(spec: &str, d: usize) -> anyhow::Result<DirectionPoint> {
    if spec == "uniform" {
        return Ok(DirectionPoint::uniform(d));
    }
    if let Some(i) = spec.strip_prefix('e') {
        let i: usize = i.parse().with_context(|| format!("direction {spec:?}"))?;
        if i == 0 || i > d {
            return Err(perpetua::Error::Domain(format!("direction {spec} outside 1..={d}")).into());
        }
        return Ok(DirectionPoint::vertex(d, i - 1));
    }
    let v: Vec<f64> = spec.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().with_context(|| format!("direction {spec:?}"))?;
    if v.len() != d {
        return Err(perpetua::Error::Domain(format!("direction has {} entries, the law has d = {d}", v.len())).into());
    }
    Ok(DirectionPoint::from_vector(&v)?)
}

fn write_json(out: Option<&Path>, value: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn spectral(a: SpectralArgs, seed: Option<u64>, workers: usize) -> anyhow::Result<()> {
    let law = load_law(&a.law.law)?;
    let pressure = std::sync::Arc::new(Pressure::new(&law)?);
    let mut table = Vec::with_capacity(a.s_grid.len());
    for &s in &a.s_grid {
        let d = pressure.lambda_derivs(s, 2)?;
        table.push(json!({ "s": s, "kappa": d[0].exp(), "lambda": d[0], "lambda_prime": d[1], "lambda_second": d[2] }));
    }
    let constants = match RateModel::from_pressure(pressure) {
        Ok(m) => json!({ "alpha": m.alpha, "rho": m.rho, "sigma_alpha": m.sigma_alpha }),
        Err(e @ perpetua::Error::NoPositiveRoot { .. }) => {
            log::warn!("{e}");
            json!({ "alpha": null, "rho": null, "sigma_alpha": null, "note": e.to_string() })
        }
        Err(e) => return Err(e.into()),
    };
    let manifest = Manifest::new("spectral", &a.law.law, &law, json!({ "s_grid": a.s_grid }), seed, workers);
    write_json(a.out.as_deref(), &json!({ "manifest": manifest, "constants": constants, "table": table }))
}

fn simulate(a: SimulateArgs, seed: u64, workers: usize) -> anyhow::Result<()> {
    let law = load_law(&a.law.law)?;
    let mut cfg = PassageConfig::new(a.u, a.max_steps, seed);
    if let Some(y) = &a.y {
        cfg = cfg.with_direction(parse_direction(y, law.dim())?);
    }
    let kernel = match a.tilt {
        Some(s) => {
            let sol = Pressure::new(&law)?.solve(s)?;
            Some(TiltKernel::new(&law, &sol, Side::Transpose)?)
        }
        None => None,
    };
    let samples = run_replicates(&law, &cfg, kernel.as_ref(), a.samples)?;

    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["replicate".to_string(), "tau".into(), "censored".into(), "weight".into(), "overshoot".into()];
    header.extend((1..=law.dim()).map(|i| format!("direction_{i}")));
    w.write_record(&header)?;
    for p in &samples {
        let mut row = vec![p.replicate.to_string(), p.tau.to_string(), u8::from(p.censored).to_string(), p.weight().to_string(), p.overshoot.to_string()];
        row.extend(p.direction.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let censored = samples.iter().filter(|p| p.censored).count();
    if censored > 0 {
        eprintln!("warning: {censored} of {} paths censored at max_steps = {}", samples.len(), a.max_steps);
    }
    let params = json!({
        "u": a.u,
        "samples": a.samples,
        "max_steps": a.max_steps,
        "s": a.tilt,
        "y": cfg.direction,
        "out": a.out,
        "censored": censored,
    });
    let manifest = Manifest::new("simulate", &a.law.law, &law, params, Some(seed), workers);
    let path = a.manifest.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    write_json(Some(&path), &serde_json::to_value(&manifest)?)
}

fn predict(a: PredictArgs, seed: Option<u64>, workers: usize) -> anyhow::Result<()> {
    let law = load_law(&a.law.law)?;
    let model = RateModel::calibrate(&law)?;
    let beta = match (a.beta, a.beta_over_rho) {
        (Some(b), None) => b,
        (None, Some(f)) => f * model.rho,
        _ => return Err(perpetua::Error::Missing("one of --beta or --beta-over-rho".into()).into()),
    };
    require_lower_deviation(&model, beta)?;
    let log_u = match (a.u, a.log_u, a.n) {
        (Some(u), None, None) => u.ln(),
        (None, Some(l), None) => l,
        (None, None, Some(n)) => n / beta,
        _ => return Err(perpetua::Error::Missing("one of --u, --log-u or --n".into()).into()),
    };
    let u = log_u.exp();
    let s = model.s_of_beta(beta)?;
    let prefactor: PrefactorEstimate = match &a.prefactor {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing prefactor {}", p.display()))?,
        None => {
            let n = a.prefactor_n.unwrap_or_else(|| enumerable_depth(&law, 1 << 22, 22).max(4));
            prefactor_varkappa(&model, s, &PrefactorMethod::oracle(n))?
        }
    };
    if let Some(p) = &a.save_prefactor {
        std::fs::write(p, serde_json::to_string_pretty(&prefactor)?)?;
    }
    let y = match (&a.y, a.variant) {
        (Some(y), _) => Some(parse_direction(y, law.dim())?),
        (None, PredictVariant::Directional) => return Err(perpetua::Error::Missing("--y for the directional variant".into()).into()),
        (None, _) => None,
    };
    let pred = match a.variant {
        PredictVariant::Cumulative | PredictVariant::Directional => predict_ld(&model, &prefactor, u, beta, a.l, y.as_ref())?,
        PredictVariant::Local => predict_local(&model, &prefactor, u, beta, a.l, a.a, a.m, y.as_ref())?,
        PredictVariant::Pointwise => predict_pointwise(&model, &prefactor, u, beta, y.as_ref())?,
    };
    let rate_point = rate_i(&model, beta - a.l)?;
    let inputs = json!({
        "law": a.law.law,
        "law_hash": law.hash(),
        "beta": beta,
        "u": u,
        "log_u": log_u,
        "l": a.l,
        "variant": format!("{:?}", a.variant).to_lowercase(),
        "a": a.a,
        "m": a.m,
        "y": y,
        "rho": model.rho,
        "alpha": model.alpha,
    });
    let manifest = Manifest::new("predict", &a.law.law, &law, inputs.clone(), seed, workers);
    let out = json!({
        "inputs": inputs,
        "chi": pred.chi,
        "C": pred.c,
        "value": pred.value,
        "rate_point": rate_point,
        "prediction": pred,
        "prefactor": { "s": prefactor.s, "varkappa": prefactor.varkappa, "ci": prefactor.varkappa_ci, "plateau": prefactor.plateau },
        "manifest": manifest,
    });
    write_json(a.out.as_deref(), &out)
}

fn verify(a: VerifyArgs, seed: Option<u64>, workers: usize) -> anyhow::Result<()> {
    let law = load_law(&a.law.law)?;
    let mut theorems = vec![];
    for t in &a.theorem {
        if t == "all" {
            theorems.extend(Theorem::ALL);
        } else {
            theorems.push(t.parse::<Theorem>().map_err(|e| perpetua::Error::Missing(format!("theorem {t:?}: {e}")))?);
        }
    }
    let mut settings = VerifySettings::default();
    if let Some(seed) = seed {
        settings = settings.with_seed(seed);
    }
    if let Some(n) = a.samples {
        settings = settings.with_samples(n);
    }
    let log_u = a.log_u.clone().or_else(|| a.u_grid.as_ref().map(|g| g.iter().map(|u| u.ln()).collect()));
    if let Some(lu) = log_u {
        settings = settings.with_log_u(lu);
    }
    let reports = run_verify(&law, &theorems, &settings)?;
    for r in &reports {
        eprintln!("{:<9} {:?}", r.theorem.name(), r.verdict);
        for w in &r.warnings {
            eprintln!("  warning: {w}");
        }
    }
    let params = json!({ "theorems": theorems.iter().map(|t| t.name()).collect::<Vec<_>>(), "settings": settings });
    let manifest = Manifest::new("verify", &a.law.law, &law, params, seed, workers);
    write_json(a.out.as_deref(), &json!({ "manifest": manifest, "reports": reports }))?;
    if reports.iter().any(|r| r.verdict == Verdict::Fail) {
        return Err(Failed.into());
    }
    Ok(())
}
