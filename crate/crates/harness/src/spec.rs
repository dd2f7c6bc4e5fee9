//! The JSON experiment description.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use dmtl_core::datagen::{GenConfig, TaskKind};
use dmtl_core::solvers::SolverKind;
use dmtl_core::SolverConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Size and shape of a synthetic instance; each seed in the spec draws a
/// fresh `W*` and fresh samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub r: usize,
    pub corr_decay: f64,
    pub task_kind: TaskKind,
    #[serde(default = "one")]
    pub noise_std: f64,
    #[serde(default = "one")]
    pub wstar_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl GeneratorSpec {
    /// The generator config for one seed, with `n_validation` extra samples per task.
    pub fn config(&self, seed: u64, n_validation: usize) -> GenConfig {
        GenConfig {
            n_validation,
            noise_std: self.noise_std,
            wstar_scale: self.wstar_scale,
            ..GenConfig::new(
                self.n,
                self.p,
                self.m,
                self.r,
                self.corr_decay,
                self.task_kind,
                seed,
            )
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generate(GeneratorSpec),
    /// A directory readable by `load_csv_tasks`; seeds only change the
    /// validation split.
    Dataset {
        path: PathBuf,
    },
}

fn default_validation_fraction() -> f64 {
    0.2
}

fn default_mc_samples() -> usize {
    2000
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub solvers: Vec<SolverKind>,
    /// Per-solver settings. Solvers without an entry use harness defaults:
    /// 500 rounds for first-order methods, `2r` directions for pursuits.
    #[serde(default)]
    pub configs: BTreeMap<SolverKind, SolverConfig>,
    pub seeds: Vec<u64>,
    /// Held-out share of each task used for tuning.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Output directory; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Excess-risk thresholds reported as rounds-to-ε in the aggregate.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Monte Carlo draws per task for classification risk.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Select λ, ρ and ridges on the validation split. When off, configs are used verbatim.
    #[serde(default = "yes")]
    pub tune: bool,
    /// Rounds per candidate when tuning ADMM's ρ; defaults to the run's round budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning_rounds: Option<usize>,
    /// Fill the `wall_ms` column. Off by default so traces are reproducible byte for byte.
    #[serde(default)]
    pub record_wall_clock: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| HarnessError::config(format!("invalid spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            return Err(HarnessError::config("solver list is empty"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seed list is empty"));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(HarnessError::config("seeds must be distinct"));
        }
        let kinds: BTreeSet<_> = self.solvers.iter().collect();
        if kinds.len() != self.solvers.len() {
            return Err(HarnessError::config("solvers must be listed once each"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(HarnessError::config(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(HarnessError::config("epsilons must be finite and > 0"));
        }
        if self.tuning_rounds == Some(0) {
            return Err(HarnessError::config("tuning_rounds must be positive"));
        }
        for (kind, cfg) in &self.configs {
            cfg.validate()
                .map_err(|e| HarnessError::config(format!("config for {kind}: {e}")))?;
        }
        if let DataSource::Generate(g) = &self.data {
            g.config(0, 0)
                .validate()
                .map_err(|e| HarnessError::config(format!("generator: {e}")))?;
            if g.task_kind == TaskKind::Classification && self.mc_samples == 0 {
                return Err(HarnessError::config("classification needs mc_samples > 0"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the output path removed, so the
    /// same experiment written to two places carries the same hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        let json = serde_json::to_string(&canonical).expect("spec serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "data": {"generate": {"n": 10, "p": 4, "m": 3, "r": 1, "corr_decay": 1.0, "task_kind": "regression"}},
        "solvers": ["local", "prox_gd"],
        "seeds": [1, 2]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let s = ExperimentSpec::from_json(MINIMAL).unwrap();
        assert_eq!(s.validation_fraction, 0.2);
        assert!(s.tune);
        assert!(!s.record_wall_clock);
        assert_eq!(s.solvers, vec![SolverKind::Local, SolverKind::ProxGd]);
        let back = ExperimentSpec::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn hash_ignores_the_output_path() {
        let a = ExperimentSpec::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.seeds.push(3);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let cases = [
            MINIMAL.replace(r#"["local", "prox_gd"]"#, "[]"),
            MINIMAL.replace("[1, 2]", "[1, 1]"),
            MINIMAL.replace(r#""r": 1"#, r#""r": 9"#),
            MINIMAL.replace("\"local\"", "\"nope\""),
            MINIMAL.replace("\"seeds\"", "\"extra\": 1, \"seeds\""),
        ];
        for text in cases {
            let err = ExperimentSpec::from_json(&text).unwrap_err();
            assert!(err.is_config(), "{err}");
        }
    }

    #[test]
    fn per_solver_configs_parse() {
        let text = MINIMAL.replace(
            "\"seeds\"",
            r#""configs": {"prox_gd": {"lambda": 0.1, "rounds": 20}}, "seeds""#,
        );
        let s = ExperimentSpec::from_json(&text).unwrap();
        let cfg = &s.configs[&SolverKind::ProxGd];
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.rounds, 20);
    }
}
