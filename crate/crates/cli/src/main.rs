use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use pgsure::autodiff::NetworkConfig;
use pgsure::denoisers::DenoiserSpec;
use pgsure::harness::{
    degrade, find_scenario, load_image_dir, load_scenarios, run_experiment, write_trace_csv,
    Budget, ExperimentConfig, MethodKind, RunLog, Scenario,
};
use pgsure::image::{load_image, psnr, save_image};
use pgsure::solvers::{
    admm_pnp, train_dip, train_gsure, AdmmConfig, Fidelity, GroundTruth, Monitor, Selection,
    TrainConfig, DEFAULT_LR,
};

const DEFAULT_SCENARIOS: &str = "paper-deblur,paper-sr";

#[derive(Parser)]
#[command(
    name = "pgsure",
    version,
    about = "Single-image restoration with GSURE-trained networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur (and decimate) a clean image and add Gaussian noise.
    Degrade(DegradeArgs),
    /// Restore a degraded image.
    Restore(RestoreArgs),
    /// PSNR between a restored image and the ground truth.
    Eval(EvalArgs),
    /// Run images x scenarios x methods and write a report.
    Sweep(SweepArgs),
    /// List the available scenarios.
    Scenarios(ScenariosArgs),
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Scenario name, e.g. `deblur-1` or `sr-4`.
    #[arg(long)]
    scenario: String,
    /// Builtin set names or scenario files, comma separated.
    #[arg(long, default_value = DEFAULT_SCENARIOS)]
    scenarios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also write the (possibly cropped) ground truth here.
    #[arg(long)]
    save_truth: Option<PathBuf>,
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long)]
    input: PathBuf,
    /// Scenario name; defaults to the one recorded in the sidecar JSON.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = DEFAULT_SCENARIOS)]
    scenarios: String,
    #[arg(long)]
    method: String,
    /// Training iterations, or outer ADMM iterations for P&P methods.
    #[arg(long)]
    iterations: Option<usize>,
    /// `tv`, `identity`, or `external:<program> [args...]`.
    #[arg(long, default_value = "tv")]
    denoiser: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Trace CSV path; defaults to `<output>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Noise variance in display scale; overrides the sidecar.
    #[arg(long)]
    sigma_sq: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_LR)]
    lr: f64,
    /// DIP stopping iteration; DIP keeps the last iterate otherwise.
    #[arg(long)]
    stop_at: Option<usize>,
    /// Ground truth for PSNR columns in the trace.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    restored: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    images_dir: PathBuf,
    #[arg(long, default_value = "paper-deblur")]
    scenarios: String,
    #[arg(long, value_delimiter = ',', default_value = "ml,dip,gsure")]
    methods: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Parallel runs; 0 uses every core.
    #[arg(long, env = "PGSURE_JOBS", default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = "desk")]
    budget: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the budget's GSURE and DIP iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value = "tv")]
    denoiser: String,
}

#[derive(Args)]
struct ScenariosArgs {
    #[arg(long, default_value = DEFAULT_SCENARIOS)]
    scenarios: String,
    #[arg(long)]
    json: bool,
}

/// Written next to a degraded image so that `restore` can rebuild the
/// operator and noise level.
#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    scenario: Scenario,
    seed: u64,
    sigma: f64,
    sigma_sq: f64,
    crop: Option<String>,
    truth: Option<PathBuf>,
}

/// Bad flags or missing inputs; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(())
}

fn resolve_scenario(name: &str, source: &str) -> anyhow::Result<Scenario> {
    let all = load_scenarios(source)?;
    find_scenario(name, &all).ok_or_else(|| {
        let names: Vec<_> = all.iter().map(|s| s.name.as_str()).collect();
        usage(format!(
            "unknown scenario `{name}` (available: {})",
            names.join(", ")
        ))
    })
}

fn parse_denoiser(text: &str) -> anyhow::Result<DenoiserSpec> {
    match text {
        "tv" => Ok(DenoiserSpec::tv()),
        "identity" => Ok(DenoiserSpec::Identity),
        _ => {
            let Some(cmd) = text.strip_prefix("external:") else {
                return Err(usage(format!(
                    "unknown denoiser `{text}` (expected tv, identity or external:<program> [args...])"
                )));
            };
            let mut parts = cmd.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| usage("external denoiser needs a program"))?;
            Ok(DenoiserSpec::external(
                program,
                parts.map(String::from).collect(),
            ))
        }
    }
}

fn print_config(value: &serde_json::Value) {
    eprintln!(
        "{}",
        serde_json::to_string_pretty(value).expect("json values serialize")
    );
}

fn cmd_degrade(a: DegradeArgs) -> anyhow::Result<()> {
    require_file(&a.input, "input image")?;
    let scenario = resolve_scenario(&a.scenario, &a.scenarios)?;
    print_config(&json!({
        "command": "degrade",
        "input": a.input,
        "scenario": scenario,
        "seed": a.seed,
        "output": a.output,
        "save_truth": a.save_truth,
    }));
    let image = load_image(&a.input)?;
    let multiple = NetworkConfig::default().spatial_multiple();
    let d = degrade(&image, &scenario, a.seed, multiple)?;
    save_image(&d.observed, &a.output)?;
    if let Some(path) = &a.save_truth {
        save_image(&d.truth, path)?;
    }
    let sidecar = Sidecar {
        sigma: scenario.sigma(),
        sigma_sq: scenario.sigma_sq,
        scenario,
        seed: a.seed,
        crop: d.crop.map(|c| c.to_string()),
        truth: a.save_truth.clone(),
    };
    let path = sidecar_path(&a.output);
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {} and {}", a.output.display(), path.display());
    Ok(())
}

fn cmd_restore(a: RestoreArgs) -> anyhow::Result<()> {
    require_file(&a.input, "input image")?;
    let method: MethodKind = a
        .method
        .parse()
        .map_err(|e: pgsure::Error| usage(e.to_string()))?;
    let denoiser = parse_denoiser(&a.denoiser)?;
    let sidecar: Option<Sidecar> = {
        let path = sidecar_path(&a.input);
        if path.is_file() {
            let text = std::fs::read_to_string(&path)?;
            Some(
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?,
            )
        } else {
            None
        }
    };
    let scenario = match (&a.scenario, &sidecar) {
        (Some(name), _) => resolve_scenario(name, &a.scenarios)?,
        (None, Some(s)) => s.scenario.clone(),
        (None, None) => {
            return Err(usage(
                "no --scenario given and no sidecar JSON next to the input",
            ));
        }
    };
    let sigma_sq = a.sigma_sq.or(sidecar.as_ref().map(|s| s.sigma_sq));
    if method.needs_sigma() && sigma_sq.is_none() {
        return Err(usage(format!(
            "method {method} needs the noise level: pass --sigma-sq or keep the sidecar {} next to the input",
            sidecar_path(&a.input).display()
        )));
    }
    if let Some(s) = sigma_sq {
        if !(s > 0.0 && s.is_finite()) && method.needs_sigma() {
            return Err(usage(format!("--sigma-sq must be positive, got {s}")));
        }
    }
    let truth_path = a
        .truth
        .clone()
        .or(sidecar.as_ref().and_then(|s| s.truth.clone()));
    let trace_path = a
        .trace
        .clone()
        .unwrap_or_else(|| a.output.with_extension("trace.csv"));
    let result_path = a.output.with_extension("json");

    let y = load_image(&a.input)?;
    let hr = (y.height() * scenario.alpha, y.width() * scenario.alpha);
    let op = scenario.operator(hr)?;
    let monitor = match &truth_path {
        Some(p) if p.is_file() => Some(GroundTruth::new(load_image(p)?, op.clone())?),
        _ => None,
    };
    let monitor_ref = monitor.as_ref().map(|m| m as &dyn Monitor);
    let net = NetworkConfig::default();
    let sigma = sigma_sq.map(f64::sqrt);

    let mut cfg_snapshot = json!({
        "command": "restore",
        "input": a.input,
        "method": method.name(),
        "scenario": scenario,
        "sigma_sq": sigma_sq,
        "seed": a.seed,
        "output": a.output,
        "trace": trace_path,
        "truth": truth_path,
        "network": net,
    });

    let (image, result) = match method {
        MethodKind::Ml => {
            print_config(&cfg_snapshot);
            (op.ml_estimate(&y)?, None)
        }
        MethodKind::Gsure | MethodKind::Dip => {
            let mut cfg = if method == MethodKind::Dip {
                TrainConfig::dip()
            } else {
                TrainConfig::default()
            };
            cfg.lr = a.lr;
            cfg.seed = a.seed;
            if let Some(n) = a.iterations {
                cfg.iterations = n;
            }
            if let Some(k) = a.stop_at {
                if method != MethodKind::Dip {
                    return Err(usage("--stop-at applies to dip only"));
                }
                cfg.selection = Selection::FixedIteration { iteration: k };
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            cfg_snapshot["train"] = serde_json::to_value(&cfg)?;
            print_config(&cfg_snapshot);
            let r = if method == MethodKind::Gsure {
                let sigma = sigma.expect("checked above");
                train_gsure(&op, &y, sigma, &net, &cfg, monitor_ref)?
            } else {
                train_dip(&op, &y, &net, &cfg, monitor_ref)?
            };
            (r.image().clone(), Some(r))
        }
        MethodKind::PnpGsure | MethodKind::PnpLs | MethodKind::PnpDip => {
            let exp = ExperimentConfig {
                budget: Budget::Paper,
                denoiser,
                ..ExperimentConfig::default()
            };
            let mut cfg: AdmmConfig = exp.admm_config(method, &scenario, a.seed)?;
            if let Some(n) = a.iterations {
                cfg.n_iter = n;
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            cfg_snapshot["admm"] = serde_json::to_value(&cfg)?;
            print_config(&cfg_snapshot);
            let sigma = if cfg.fidelity == Fidelity::Gsure {
                sigma
            } else {
                None
            };
            let r = admm_pnp(&op, &y, sigma, &net, &cfg, monitor_ref)?;
            (r.image().clone(), Some(r))
        }
    };

    save_image(&image, &a.output)?;
    let traces = result
        .as_ref()
        .map(|r| r.traces.as_slice())
        .unwrap_or_default();
    write_trace_csv(traces, &trace_path)?;
    let summary = json!({
        "method": method.name(),
        "scenario": scenario.name,
        "psnr": monitor.as_ref().map(|m| psnr(&image, m.truth())).transpose()?,
        "result": result,
        "config": cfg_snapshot,
    });
    std::fs::write(&result_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    eprintln!(
        "wrote {}, {} and {}",
        a.output.display(),
        trace_path.display(),
        result_path.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    require_file(&a.restored, "restored image")?;
    require_file(&a.truth, "ground truth")?;
    let restored = load_image(&a.restored)?;
    let truth = load_image(&a.truth)?;
    let p = psnr(&restored, &truth)?;
    println!("{p:.2}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<()> {
    if !a.images_dir.is_dir() {
        return Err(usage(format!(
            "image directory `{}` does not exist",
            a.images_dir.display()
        )));
    }
    let methods = a
        .methods
        .iter()
        .map(|m| m.trim().parse::<MethodKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(e.to_string()))?;
    if methods.is_empty() {
        return Err(usage("no methods given"));
    }
    let budget: Budget = a
        .budget
        .parse()
        .map_err(|e: pgsure::Error| usage(e.to_string()))?;
    let scenarios = load_scenarios(&a.scenarios)?;
    let cfg = ExperimentConfig {
        base_seed: a.seed,
        budget,
        iterations: a.iterations,
        denoiser: parse_denoiser(&a.denoiser)?,
        jobs: a.jobs,
        ..ExperimentConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let images = load_image_dir(&a.images_dir)?;
    print_config(&json!({
        "command": "sweep",
        "images": images.iter().map(|(id, _)| id).collect::<Vec<_>>(),
        "scenarios": scenarios.iter().map(|s| &s.name).collect::<Vec<_>>(),
        "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "out_dir": a.out_dir,
        "experiment": cfg,
    }));
    std::fs::create_dir_all(&a.out_dir)?;
    let mut log = RunLog::create(a.out_dir.join("runs.csv"))?;
    let report = run_experiment(&images, &scenarios, &methods, &cfg, Some(&mut log))?;
    report.write_csv(a.out_dir.join("report.csv"))?;
    report.write_aggregates_csv(a.out_dir.join("aggregates.csv"))?;
    report.write_json(a.out_dir.join("report.json"))?;
    print!("{}", report.summary());
    let failed = report.failures();
    if failed > 0 {
        eprintln!(
            "{failed} of {} runs failed; see the error column of report.csv",
            report.rows.len()
        );
    }
    Ok(())
}

fn cmd_scenarios(a: ScenariosArgs) -> anyhow::Result<()> {
    let all = load_scenarios(&a.scenarios)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&all)?);
        return Ok(());
    }
    println!(
        "{:<10} {:<14} {:<22} {:>5} {:>8} {:>8}",
        "name", "task", "kernel", "alpha", "sigma^2", "xi"
    );
    for s in &all {
        let task = serde_json::to_value(s.task)?;
        println!(
            "{:<10} {:<14} {:<22} {:>5} {:>8} {:>8}",
            s.name,
            task.as_str().unwrap_or_default(),
            s.kernel.describe(),
            s.alpha,
            s.sigma_sq,
            s.xi
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Degrade(a) => cmd_degrade(a),
        Command::Restore(a) => cmd_restore(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Scenarios(a) => cmd_scenarios(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
