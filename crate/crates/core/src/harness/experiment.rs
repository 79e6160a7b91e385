use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::degrade::{degrade, Degraded};
use super::report::{Report, ReportRow, RunLog};
use super::scenarios::{Scenario, Task};
use crate::autodiff::NetworkConfig;
use crate::denoisers::DenoiserSpec;
use crate::error::{Error, Result};
use crate::image::{load_image, psnr, Image};
use crate::solvers::{
    admm_pnp, train_dip, train_gsure, AdmmConfig, Fidelity, GroundTruth, RestorationResult,
    TrainConfig, DEFAULT_LR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "ml")]
    Ml,
    #[serde(rename = "dip")]
    Dip,
    #[serde(rename = "gsure")]
    Gsure,
    #[serde(rename = "pnp-gsure")]
    PnpGsure,
    #[serde(rename = "pnp-ls")]
    PnpLs,
    #[serde(rename = "pnp-dip")]
    PnpDip,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Ml,
        MethodKind::Dip,
        MethodKind::Gsure,
        MethodKind::PnpGsure,
        MethodKind::PnpLs,
        MethodKind::PnpDip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Ml => "ml",
            MethodKind::Dip => "dip",
            MethodKind::Gsure => "gsure",
            MethodKind::PnpGsure => "pnp-gsure",
            MethodKind::PnpLs => "pnp-ls",
            MethodKind::PnpDip => "pnp-dip",
        }
    }

    pub fn needs_sigma(self) -> bool {
        matches!(self, MethodKind::Gsure | MethodKind::PnpGsure)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = MethodKind::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown method `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// Iteration budget of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Short runs for laptops and CI.
    Desk,
    /// Full-length runs: 4000 training iterations, full ADMM schedules.
    Paper,
}

impl Budget {
    pub fn train_iterations(self) -> usize {
        match self {
            Budget::Desk => 300,
            Budget::Paper => 4000,
        }
    }

    /// Cuts the outer iterations so the desk budget stays near
    /// `train_iterations` Adam steps in total.
    pub fn shrink_admm(self, mut cfg: AdmmConfig) -> AdmmConfig {
        if self == Budget::Desk {
            let cap = (self.train_iterations() / cfg.inner_iters).max(1);
            cfg.n_iter = cfg.n_iter.min(cap);
        }
        cfg
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Budget::Desk),
            "paper" => Ok(Budget::Paper),
            other => Err(Error::Config(format!(
                "unknown budget `{other}` (expected desk or paper)"
            ))),
        }
    }
}

/// How the DIP row picks its iteration. DIP has no label-free stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DipStop {
    /// Mean over the scenario's images of the best-PSNR iteration, then
    /// every image of the scenario is read at that iteration.
    ScenarioAverage,
    Fixed {
        iteration: usize,
    },
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    pub budget: Budget,
    /// Overrides the budget's GSURE and DIP iteration count.
    pub iterations: Option<usize>,
    pub lr: f64,
    pub network: NetworkConfig,
    pub denoiser: DenoiserSpec,
    pub dip_stop: DipStop,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base_seed: 0,
            budget: Budget::Desk,
            iterations: None,
            lr: DEFAULT_LR,
            network: NetworkConfig::default(),
            denoiser: DenoiserSpec::tv(),
            dip_stop: DipStop::ScenarioAverage,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn train_iterations(&self) -> usize {
        self.iterations
            .unwrap_or_else(|| self.budget.train_iterations())
    }

    pub fn train_config(&self, method: MethodKind, seed: u64) -> TrainConfig {
        let base = if method == MethodKind::Dip {
            TrainConfig::dip()
        } else {
            TrainConfig::default()
        };
        TrainConfig {
            iterations: self.train_iterations(),
            lr: self.lr,
            seed,
            ..base
        }
    }

    /// ADMM schedule of a P&P method on `scenario`.
    pub fn admm_config(
        &self,
        method: MethodKind,
        scenario: &Scenario,
        seed: u64,
    ) -> Result<AdmmConfig> {
        let sr = scenario.task == Task::SuperResolve;
        let mut cfg = match method {
            MethodKind::PnpGsure | MethodKind::PnpLs => {
                let mut c = if sr {
                    AdmmConfig::gsure_sr()
                } else {
                    AdmmConfig::gsure_deblur(scenario.pnp_gsure_beta.unwrap_or(1.0))
                };
                if method == MethodKind::PnpLs {
                    c.fidelity = Fidelity::Ls;
                }
                c
            }
            MethodKind::PnpDip => {
                let beta = scenario.pnp_dip_beta.unwrap_or(0.1);
                if sr {
                    AdmmConfig::dip_sr(beta)
                } else {
                    AdmmConfig {
                        beta,
                        rho: beta,
                        ..AdmmConfig::dip_deblur()
                    }
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "`{other}` is not a plug-and-play method"
                )));
            }
        };
        cfg.seed = seed;
        cfg.denoiser = self.denoiser.clone();
        Ok(self.budget.shrink_admm(cfg))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == Some(0) {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if let DipStop::Fixed { iteration } = self.dip_stop {
            if iteration >= self.train_iterations() {
                return Err(Error::Config(format!(
                    "DIP stopping iteration {iteration} is outside 0..{}",
                    self.train_iterations()
                )));
            }
        }
        self.network.validate()?;
        self.denoiser.validate()
    }
}

/// Seed derived from the base seed and the identity of one run.
pub fn run_seed(base_seed: u64, image: &str, scenario: &str, method: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    for part in [image, scenario, method] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// PNG files of `dir`, sorted by name; the id is the file stem.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no PNG images in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((id, load_image(&p)?))
        })
        .collect()
}

/// Runs one method on one degraded image.
pub fn run_method(
    method: MethodKind,
    d: &Degraded,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutcome> {
    let truth = GroundTruth::new(d.truth.clone(), d.operator.clone())?;
    let sigma = d.scenario.sigma();
    let start = Instant::now();
    let result = match method {
        MethodKind::Ml => {
            let ml = d.operator.ml_estimate(&d.observed)?;
            return Ok(RunOutcome {
                psnr: psnr(&ml, &d.truth)?,
                image: ml,
                result: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
        MethodKind::Gsure => train_gsure(
            &d.operator,
            &d.observed,
            sigma,
            &cfg.network,
            &cfg.train_config(method, seed),
            Some(&truth),
        )?,
        MethodKind::Dip => train_dip(
            &d.operator,
            &d.observed,
            &cfg.network,
            &cfg.train_config(method, seed),
            Some(&truth),
        )?,
        MethodKind::PnpGsure | MethodKind::PnpLs | MethodKind::PnpDip => {
            let admm = cfg.admm_config(method, &d.scenario, seed)?;
            let sigma = (admm.fidelity == Fidelity::Gsure).then_some(sigma);
            admm_pnp(
                &d.operator,
                &d.observed,
                sigma,
                &cfg.network,
                &admm,
                Some(&truth),
            )?
        }
    };
    Ok(RunOutcome {
        psnr: psnr(result.image(), &d.truth)?,
        image: result.image().clone(),
        result: Some(result),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub psnr: f64,
    pub image: Image,
    /// Absent for the closed-form ML estimate.
    pub result: Option<RestorationResult>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
struct Job {
    image: usize,
    scenario: usize,
    method: MethodKind,
}

/// Runs every image x scenario x method combination. Failed runs become
/// rows carrying the error. When `log` is given, each row is appended to
/// it as soon as its run finishes.
pub fn run_experiment(
    images: &[(String, Image)],
    scenarios: &[Scenario],
    methods: &[MethodKind],
    cfg: &ExperimentConfig,
    log: Option<&mut RunLog>,
) -> Result<Report> {
    cfg.validate()?;
    let multiple = cfg.network.spatial_multiple();
    let degraded: Vec<Vec<Result<Degraded>>> = images
        .iter()
        .map(|(id, img)| {
            scenarios
                .iter()
                .map(|s| {
                    degrade(
                        img,
                        s,
                        run_seed(cfg.base_seed, id, &s.name, "degrade"),
                        multiple,
                    )
                })
                .collect()
        })
        .collect();
    let jobs: Vec<Job> = (0..images.len())
        .flat_map(|image| {
            (0..scenarios.len()).flat_map(move |scenario| {
                methods.iter().map(move |&method| Job {
                    image,
                    scenario,
                    method,
                })
            })
        })
        .collect();

    let log = log.map(Mutex::new);
    let run = |job: &Job| -> Result<(ReportRow, Option<RunOutcome>)> {
        let id = &images[job.image].0;
        let scenario = &scenarios[job.scenario];
        let seed = run_seed(cfg.base_seed, id, &scenario.name, job.method.name());
        let mut row = ReportRow::new(id, &scenario.name, job.method.name(), seed);
        let outcome = match &degraded[job.image][job.scenario] {
            Ok(d) => {
                row.crop = d.crop.map(|c| c.to_string());
                run_method(job.method, d, cfg, seed).map_err(|e| e.to_string())
            }
            Err(e) => Err(e.to_string()),
        };
        let outcome = match outcome {
            Ok(o) => {
                row.fill(&o);
                Some(o)
            }
            Err(e) => {
                log::warn!("{id} / {} / {}: {e}", scenario.name, job.method);
                row.error = Some(e);
                None
            }
        };
        if let Some(log) = &log {
            log.lock().expect("run log lock").append(&row)?;
        }
        Ok((row, outcome))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let finished: Vec<(ReportRow, Option<RunOutcome>)> =
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?;

    let mut rows: Vec<ReportRow> = Vec::with_capacity(finished.len());
    let mut outcomes = Vec::with_capacity(finished.len());
    for (row, outcome) in finished {
        rows.push(row);
        outcomes.push(outcome);
    }
    if cfg.dip_stop != DipStop::Last {
        apply_dip_stop(&mut rows, &outcomes, cfg.dip_stop);
    }
    Ok(Report::new(rows, serde_json::to_value(cfg)?))
}

/// Re-reads DIP rows at the configured stopping iteration from their PSNR
/// traces.
fn apply_dip_stop(rows: &mut [ReportRow], outcomes: &[Option<RunOutcome>], stop: DipStop) {
    let psnr_at = |o: &RunOutcome, k: usize| -> Option<f64> {
        let traces = &o.result.as_ref()?.traces;
        traces
            .iter()
            .find(|t| t.iteration == k)
            .and_then(|t| t.psnr)
    };
    let dip: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].method == MethodKind::Dip.name() && outcomes[i].is_some())
        .collect();
    let mut scenarios: Vec<&str> = dip.iter().map(|&i| rows[i].scenario.as_str()).collect();
    scenarios.sort();
    scenarios.dedup();
    let scenarios: Vec<String> = scenarios.into_iter().map(String::from).collect();
    for scenario in scenarios {
        let members: Vec<usize> = dip
            .iter()
            .copied()
            .filter(|&i| rows[i].scenario == scenario)
            .collect();
        let k = match stop {
            DipStop::Fixed { iteration } => iteration,
            DipStop::Last => continue,
            DipStop::ScenarioAverage => {
                let best: Vec<usize> = members
                    .iter()
                    .filter_map(|&i| rows[i].oracle_iteration)
                    .collect();
                if best.is_empty() {
                    continue;
                }
                (best.iter().sum::<usize>() as f64 / best.len() as f64).round() as usize
            }
        };
        for i in members {
            let o = outcomes[i].as_ref().expect("filtered on success");
            if let Some(p) = psnr_at(o, k) {
                rows[i].psnr = Some(p);
                rows[i].selected_iteration = Some(k);
            }
        }
    }
}
