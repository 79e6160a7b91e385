use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{build_kernel, KernelSpec};
use crate::linop::SpectralOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Deblur,
    SuperResolve,
}

/// A named degradation: kernel, decimation, noise variance and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub task: Task,
    pub kernel: KernelSpec,
    /// Noise variance in display scale.
    pub sigma_sq: f64,
    pub xi: f64,
    #[serde(default = "one")]
    pub alpha: usize,
    /// Prior weight of P&P-GSURE, when the scenario prescribes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pnp_gsure_beta: Option<f64>,
    /// Prior weight of P&P-DIP, when the scenario prescribes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pnp_dip_beta: Option<f64>,
}

fn one() -> usize {
    1
}

impl Scenario {
    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.sigma_sq.is_finite() && self.xi.is_finite();
        if !finite || self.sigma_sq < 0.0 || self.xi < 0.0 {
            return Err(Error::Config(format!(
                "scenario `{}`: sigma_sq and xi must be finite and non-negative",
                self.name
            )));
        }
        match self.task {
            Task::Deblur if self.alpha != 1 => Err(Error::Config(format!(
                "scenario `{}`: deblurring requires alpha = 1",
                self.name
            ))),
            Task::SuperResolve if self.alpha < 2 => Err(Error::Config(format!(
                "scenario `{}`: super-resolution requires alpha >= 2",
                self.name
            ))),
            _ => self.kernel.validate(),
        }
    }

    /// Operator on a `(rows, cols)` high-resolution grid.
    pub fn operator(&self, hr_shape: (usize, usize)) -> Result<SpectralOperator> {
        self.validate()?;
        let k = build_kernel(&self.kernel)?;
        SpectralOperator::from_kernel(&k, hr_shape, self.alpha, self.xi)
    }

    /// Same degradation with a different noise variance.
    pub fn with_sigma_sq(&self, sigma_sq: f64) -> Self {
        Self {
            sigma_sq,
            ..self.clone()
        }
    }
}

fn deblur(i: usize, kernel: KernelSpec, sigma_sq: f64, xi: f64, beta: f64) -> Scenario {
    Scenario {
        name: format!("deblur-{i}"),
        task: Task::Deblur,
        kernel,
        sigma_sq,
        xi,
        alpha: 1,
        pnp_gsure_beta: Some(beta),
        pnp_dip_beta: Some(0.1),
    }
}

fn sr(i: usize, kernel: KernelSpec, alpha: usize, sigma_sq: f64, dip_beta: f64) -> Scenario {
    Scenario {
        name: format!("sr-{i}"),
        task: Task::SuperResolve,
        kernel,
        sigma_sq,
        xi: 1e-2,
        alpha,
        pnp_gsure_beta: Some(100.0),
        pnp_dip_beta: Some(dip_beta),
    }
}

pub const BUILTIN_NAMES: [&str; 2] = ["paper-deblur", "paper-sr"];

/// The deblurring and super-resolution benchmark tables.
pub fn builtin(name: &str) -> Result<Vec<Scenario>> {
    match name {
        "paper-deblur" => Ok(vec![
            deblur(1, KernelSpec::lorentzian(), 2.0, 5e-2, 0.75),
            deblur(2, KernelSpec::lorentzian(), 8.0, 1e-1, 0.75),
            deblur(3, KernelSpec::uniform(9), 0.3, 5e-3, 4.0),
            deblur(4, KernelSpec::separable_binomial(), 49.0, 1e-1, 1.0),
            deblur(5, KernelSpec::gaussian(1.6, 25), 4.0, 5e-2, 2.0),
            deblur(6, KernelSpec::gaussian(0.4, 5), 64.0, 0.0, 1.5),
        ]),
        "paper-sr" => Ok(vec![
            sr(1, KernelSpec::gaussian(1.6, 25), 3, 10.0, 0.1),
            sr(2, KernelSpec::gaussian(1.6, 25), 3, 49.0, 1.5),
            sr(3, KernelSpec::bicubic(2), 2, 10.0, 0.1),
            sr(4, KernelSpec::bicubic(3), 3, 10.0, 0.1),
            sr(5, KernelSpec::bicubic(2), 2, 49.0, 1.5),
            sr(6, KernelSpec::bicubic(3), 3, 49.0, 1.5),
        ]),
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

#[derive(Deserialize)]
struct ScenarioFile {
    scenario: Vec<Scenario>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonScenarios {
    List(Vec<Scenario>),
    Table(ScenarioFile),
}

/// Resolves a builtin set name, or reads a TOML (`[[scenario]]` tables) or
/// JSON (list or `{"scenario": [...]}`) file. A comma-separated list of
/// sources is concatenated.
pub fn load_scenarios(source: &str) -> Result<Vec<Scenario>> {
    let mut all = Vec::new();
    for part in source.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        all.extend(load_one(part)?);
    }
    if all.is_empty() {
        return Err(Error::Config(format!("no scenarios in `{source}`")));
    }
    for s in &all {
        s.validate()?;
    }
    Ok(all)
}

fn load_one(source: &str) -> Result<Vec<Scenario>> {
    if BUILTIN_NAMES.contains(&source) {
        return builtin(source);
    }
    let path = Path::new(source);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("toml") => {
            let text = std::fs::read_to_string(path)?;
            let file: ScenarioFile = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(file.scenario)
        }
        Some("json") => {
            let text = std::fs::read_to_string(path)?;
            let parsed: JsonScenarios = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(match parsed {
                JsonScenarios::List(v) => v,
                JsonScenarios::Table(f) => f.scenario,
            })
        }
        _ if path.exists() => Err(Error::Config(format!(
            "{}: scenario files must end in .toml or .json",
            path.display()
        ))),
        _ => Err(Error::UnknownBuiltin(source.to_string())),
    }
}

/// Looks up `name` in a builtin set or by scenario name across both sets.
pub fn find_scenario(name: &str, scenarios: &[Scenario]) -> Option<Scenario> {
    scenarios.iter().find(|s| s.name == name).cloned()
}

/// Every builtin scenario, for lookups by name.
pub fn all_builtin() -> Vec<Scenario> {
    BUILTIN_NAMES
        .iter()
        .flat_map(|n| builtin(n).expect("builtin names resolve"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;

    #[test]
    fn deblur_table_rows() {
        let s = builtin("paper-deblur").unwrap();
        assert_eq!(s.len(), 6);
        let expected: [(KernelKind, usize, f64, f64); 6] = [
            (KernelKind::Lorentzian, 15, 2.0, 5e-2),
            (KernelKind::Lorentzian, 15, 8.0, 1e-1),
            (KernelKind::Uniform, 9, 0.3, 5e-3),
            (KernelKind::SeparableBinomial, 5, 49.0, 1e-1),
            (KernelKind::Gaussian { std: 1.6 }, 25, 4.0, 5e-2),
            (KernelKind::Gaussian { std: 0.4 }, 5, 64.0, 0.0),
        ];
        for (row, (kind, support, sigma_sq, xi)) in s.iter().zip(expected) {
            assert_eq!(row.task, Task::Deblur);
            assert_eq!(row.alpha, 1);
            assert_eq!(row.kernel.kind, kind);
            assert_eq!(row.kernel.support, support);
            assert_eq!(row.sigma_sq, sigma_sq);
            assert_eq!(row.xi, xi);
        }
        let betas: Vec<f64> = s.iter().map(|r| r.pnp_gsure_beta.unwrap()).collect();
        assert_eq!(betas, vec![0.75, 0.75, 4.0, 1.0, 2.0, 1.5]);
    }

    #[test]
    fn sr_table_rows() {
        let s = builtin("paper-sr").unwrap();
        assert_eq!(s.len(), 6);
        let expected: [(KernelKind, usize, f64); 6] = [
            (KernelKind::Gaussian { std: 1.6 }, 3, 10.0),
            (KernelKind::Gaussian { std: 1.6 }, 3, 49.0),
            (KernelKind::Bicubic { scale: 2 }, 2, 10.0),
            (KernelKind::Bicubic { scale: 3 }, 3, 10.0),
            (KernelKind::Bicubic { scale: 2 }, 2, 49.0),
            (KernelKind::Bicubic { scale: 3 }, 3, 49.0),
        ];
        for (row, (kind, alpha, sigma_sq)) in s.iter().zip(expected) {
            assert_eq!(row.task, Task::SuperResolve);
            assert_eq!(row.kernel.kind, kind);
            assert_eq!(row.alpha, alpha);
            assert_eq!(row.sigma_sq, sigma_sq);
            assert_eq!(row.xi, 1e-2);
        }
        let dip: Vec<f64> = s.iter().map(|r| r.pnp_dip_beta.unwrap()).collect();
        assert_eq!(dip, vec![0.1, 1.5, 0.1, 0.1, 1.5, 1.5]);
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(
            load_scenarios("paper-denoise"),
            Err(Error::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn toml_and_json_files() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("s.toml");
        std::fs::write(
            &toml_path,
            r#"
[[scenario]]
name = "mine"
task = "super_resolve"
sigma_sq = 4.0
xi = 0.01
alpha = 2
kernel = { type = "gaussian", std = 1.0, support = 7 }
"#,
        )
        .unwrap();
        let s = load_scenarios(toml_path.to_str().unwrap()).unwrap();
        assert_eq!(s[0].alpha, 2);
        assert_eq!(s[0].kernel, KernelSpec::gaussian(1.0, 7));

        let json_path = dir.path().join("s.json");
        let json = serde_json::to_string(&builtin("paper-sr").unwrap()).unwrap();
        std::fs::write(&json_path, json).unwrap();
        let back = load_scenarios(json_path.to_str().unwrap()).unwrap();
        assert_eq!(back, builtin("paper-sr").unwrap());

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[[scenario]]\nname = 3\n").unwrap();
        assert!(matches!(
            load_scenarios(bad.to_str().unwrap()),
            Err(Error::Config(_))
        ));

        let combined = format!("paper-deblur,{}", toml_path.display());
        assert_eq!(load_scenarios(&combined).unwrap().len(), 7);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = builtin("paper-deblur").unwrap().remove(0);
        s.alpha = 2;
        assert!(s.validate().is_err());
        let mut s = builtin("paper-sr").unwrap().remove(0);
        s.alpha = 1;
        assert!(s.validate().is_err());
        let mut s = builtin("paper-sr").unwrap().remove(0);
        s.sigma_sq = f64::NAN;
        assert!(s.validate().is_err());
    }
}
