//! Experiment configuration loaded from a flat TOML document.
//!
//! Keys are dotted paths: `sim.seed`, `learner.gamma`, `learner.alpha.floor`,
//! `planner.k_vmax`, `eval.fixed_cycle_blocks`. Intersection keys may be
//! written bare (`L_C = 400`) or as `intersection.L_C`. `sim.t_s` and
//! `sim.lambda_per_hour` are aliases for `T_S` and `lambda_arrival`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::engine::{Engine, SimConfig};
use crate::error::{ConfigError, EngineError};
use crate::geometry::IntersectionConfig;
use crate::learner::LearnerConfig;
use crate::planner::{PenaltyWeights, SolverSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub k_vmax: f64,
    pub k_vmin: f64,
    pub k1_tcross: f64,
    pub k2_tcross: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub tol_v: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let w = PenaltyWeights::default();
        let s = SolverSettings::default();
        Self {
            k_vmax: w.k_vmax,
            k_vmin: w.k_vmin,
            k1_tcross: w.k1_tcross,
            k2_tcross: w.k2_tcross,
            max_iter: s.max_iter,
            rel_tol: s.rel_tol,
            tol_v: s.tol_v,
        }
    }
}

impl PlannerConfig {
    pub fn weights(&self) -> PenaltyWeights {
        PenaltyWeights {
            k_vmax: self.k_vmax,
            k_vmin: self.k_vmin,
            k1_tcross: self.k1_tcross,
            k2_tcross: self.k2_tcross,
        }
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            tol_v: self.tol_v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Blocks per phase of the fixed-cycle baseline.
    pub fixed_cycle_blocks: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { fixed_cycle_blocks: 2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub intersection: IntersectionConfig,
    pub sim: SimConfig,
    pub learner: LearnerConfig,
    pub planner: PlannerConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.intersection.validate()?;
        self.sim.validate(&self.intersection)?;
        self.learner.validate()?;
        self.planner.weights().validate().map_err(|e| ConfigError::InvalidField {
            field: "planner".into(),
            reason: e.to_string(),
        })?;
        let s = self.planner.settings();
        if s.max_iter == 0 || !(s.rel_tol > 0.0) || !(s.tol_v > 0.0) {
            return Err(ConfigError::InvalidField {
                field: "planner".into(),
                reason: "max_iter, rel_tol and tol_v must be positive".into(),
            });
        }
        if self.eval.fixed_cycle_blocks == 0 {
            return Err(ConfigError::InvalidField {
                field: "eval.fixed_cycle_blocks".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    /// Engine for one run with the planner settings applied.
    pub fn engine(&self, seed: u64, p_av: f64) -> Result<Engine, EngineError> {
        let sim = SimConfig {
            seed,
            p_av,
            ..self.sim.clone()
        };
        let mut engine = Engine::new(self.intersection.clone(), sim)?;
        let planner = engine.planner_mut();
        planner.weights = self.planner.weights();
        planner.settings = self.planner.settings();
        Ok(engine)
    }
}

const SECTIONS: [&str; 5] = ["intersection", "sim", "learner", "planner", "eval"];

fn alias(path: &[String]) -> Vec<String> {
    match path.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["sim", "t_s"] => vec!["intersection".into(), "T_S".into()],
        ["sim", "lambda_per_hour"] => vec!["intersection".into(), "lambda_arrival".into()],
        [first, ..] if !SECTIONS.contains(first) => {
            let mut p = vec!["intersection".to_string()];
            p.extend(path.iter().cloned());
            p
        }
        _ => path.to_vec(),
    }
}

fn flatten(prefix: &mut Vec<String>, table: &Table, out: &mut Vec<(Vec<String>, Value)>) {
    for (k, v) in table {
        prefix.push(k.clone());
        match v {
            Value::Table(t) => flatten(prefix, t, out),
            other => out.push((prefix.clone(), other.clone())),
        }
        prefix.pop();
    }
}

fn coerce(default: &Value, given: Value) -> Value {
    match (default, given) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::Array(d), Value::Array(g)) => {
            let template = d.first().cloned();
            Value::Array(
                g.into_iter()
                    .map(|x| match &template {
                        Some(t) => coerce(t, x),
                        None => x,
                    })
                    .collect(),
            )
        }
        (_, g) => g,
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let mut merged = Table::try_from(ExperimentConfig::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut leaves = Vec::new();
    flatten(&mut Vec::new(), &user, &mut leaves);
    let mut seen: Vec<(Vec<String>, String, Value)> = Vec::new();
    for (raw, value) in leaves {
        let path = alias(&raw);
        let dotted = raw.join(".");
        if let Some((_, other, prev)) = seen.iter().find(|(p, _, _)| *p == path) {
            if *prev != value {
                return Err(ConfigError::Conflict(other.clone(), dotted));
            }
            continue;
        }
        let mut slot = &mut merged;
        for seg in &path[..path.len() - 1] {
            slot = match slot.get_mut(seg) {
                Some(Value::Table(t)) => t,
                _ => return Err(ConfigError::UnknownKey(dotted)),
            };
        }
        let leaf = path.last().expect("non-empty path");
        let Some(current) = slot.get_mut(leaf) else {
            return Err(ConfigError::UnknownKey(dotted));
        };
        if current.is_table() {
            return Err(ConfigError::UnknownKey(dotted));
        }
        *current = coerce(current, value.clone());
        seen.push((path, dotted, value));
    }
    let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
