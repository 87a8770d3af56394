//! Run configuration (JSON).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kronsolve::kinv::PatternSpec;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 12345;

/// Marks errors in the configuration itself (exit code 1).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub preconditioner: PrecondConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "lowercase")]
pub enum ProblemConfig {
    Circuit {
        n0: usize,
        /// MatrixMarket files `A1` (n0×n0), `A2` (n0×n0²) and `b` (n0×1)
        /// replacing the built-in ladder model.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        blocks: Option<CircuitBlocks>,
    },
    Convdiff {
        n: usize,
        epsilon: f64,
    },
    Synthetic {
        n: usize,
        m: usize,
        r: usize,
        band: usize,
        #[serde(default)]
        spd: bool,
        /// Defaults to the top-level seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Files {
        /// Operator manifest as written by `generate`.
        manifest: PathBuf,
        /// Right-hand side in MatrixMarket format.
        rhs: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitBlocks {
    pub a1: PathBuf,
    pub a2: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Gmres,
    Bicgstab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
    /// Adds a bandwidth column to the history.
    pub record_bandwidth: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Gmres,
            tol: 1e-8,
            restart: 50,
            max_iter: 1000,
            record_bandwidth: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PrecondType {
    #[default]
    None,
    Nkp,
    Kinv,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NkpRoute {
    #[default]
    Svd,
    Als,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AlsConfig {
    /// Absolute tolerance; the library default applies when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecondConfig {
    #[serde(rename = "type")]
    pub kind: PrecondType,
    pub q: usize,
    /// NKP only.
    pub route: NkpRoute,
    pub als: AlsConfig,
    /// KINV only: restricts the factors to a pattern (sparse variant).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<PatternSpec>,
    /// KINV only: replace factors by their symmetric parts.
    pub symmetrize: bool,
}

impl Default for PrecondConfig {
    fn default() -> Self {
        Self {
            kind: PrecondType::None,
            q: 1,
            route: NkpRoute::Svd,
            als: AlsConfig::default(),
            sparsity: None,
            symmetrize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            prefix: String::new(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl RunConfig {
    /// Reads and validates a configuration; relative file paths are resolved
    /// against the configuration's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.problem {
            ProblemConfig::Files { manifest, rhs } => {
                fix(manifest);
                fix(rhs);
            }
            ProblemConfig::Circuit { blocks: Some(b), .. } => {
                fix(&mut b.a1);
                fix(&mut b.a2);
                fix(&mut b.b);
            }
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            bail!(invalid(format!("solver.tol must be positive, got {}", s.tol)));
        }
        if s.restart == 0 {
            bail!(invalid("solver.restart must be at least 1"));
        }
        let p = &self.preconditioner;
        if p.kind != PrecondType::None && p.q == 0 {
            bail!(invalid("preconditioner.q must be at least 1"));
        }
        if let Some(tol) = p.als.tol {
            if !(tol >= 0.0 && tol.is_finite()) {
                bail!(invalid(format!("preconditioner.als.tol must be non-negative, got {tol}")));
            }
        }
        if let Some(sp) = &p.sparsity {
            if !(sp.density_cap > 0.0) {
                bail!(invalid("preconditioner.sparsity.density_cap must be positive"));
            }
        }
        match &self.problem {
            ProblemConfig::Circuit { n0, blocks } => {
                if *n0 < 2 {
                    bail!(invalid(format!("circuit n0 must be at least 2, got {n0}")));
                }
                if let Some(b) = blocks {
                    for f in [&b.a1, &b.a2, &b.b] {
                        require_file(f)?;
                    }
                }
            }
            ProblemConfig::Convdiff { n, epsilon } => {
                if *n < 3 {
                    bail!(invalid(format!("convdiff n must be at least 3, got {n}")));
                }
                if !(*epsilon > 0.0 && epsilon.is_finite()) {
                    bail!(invalid(format!("convdiff epsilon must be positive, got {epsilon}")));
                }
            }
            ProblemConfig::Synthetic { n, m, r, .. } => {
                if *n == 0 || *m == 0 || *r == 0 {
                    bail!(invalid("synthetic n, m and r must be at least 1"));
                }
            }
            ProblemConfig::Files { manifest, rhs } => {
                require_file(manifest)?;
                require_file(rhs)?;
            }
        }
        if p.kind == PrecondType::Baseline && matches!(self.problem, ProblemConfig::Files { .. } | ProblemConfig::Synthetic { .. }) {
            bail!(invalid("the baseline preconditioner exists only for circuit and convdiff problems"));
        }
        Ok(())
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("referenced file {} does not exist", p.display()))).context("config validation")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "problem": {"type": "convdiff", "params": {"n": 50, "epsilon": 0.1}},
        "solver": {"method": "gmres", "tol": 1e-6, "restart": 50, "max_iter": 200},
        "preconditioner": {"type": "kinv", "q": 4, "als": {"tol": 0.5, "max_iter": 10},
                           "sparsity": {"variant": "gram", "power": 12}},
        "output": {"dir": "runs", "prefix": "cd_"}
    }"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(SAMPLE).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.preconditioner.q, 4);
        let sp = cfg.preconditioner.sparsity.unwrap();
        assert_eq!(sp.power, 12);
        assert_eq!(sp.density_cap, 0.2);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_is_idempotent() {
        let cfg: RunConfig = serde_json::from_str(SAMPLE).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let again: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg: RunConfig = serde_json::from_str(SAMPLE).unwrap();
        cfg.solver.tol = 0.0;
        assert!(cfg.validate().unwrap_err().downcast_ref::<ConfigError>().is_some());
        let mut cfg: RunConfig = serde_json::from_str(SAMPLE).unwrap();
        cfg.preconditioner.q = 0;
        assert!(cfg.validate().is_err());
        let bad = SAMPLE.replace("\"gmres\"", "\"cg\"");
        assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
    }

    #[test]
    fn missing_files_are_config_errors() {
        let cfg = RunConfig {
            seed: 1,
            problem: ProblemConfig::Files {
                manifest: "/nonexistent/op.json".into(),
                rhs: "/nonexistent/E.mtx".into(),
            },
            solver: SolverConfig::default(),
            preconditioner: PrecondConfig::default(),
            output: OutputConfig::default(),
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.chain().any(|e| e.downcast_ref::<ConfigError>().is_some()));
    }
}
