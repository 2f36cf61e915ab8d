//! Run configuration: validated up front, persisted next to the outputs and
//! hashed so every artifact can be traced back to it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qsynth_core::abstraction::{SuccessorMode, Variant};
use qsynth_core::milp::{MilpSolver, SolverOptions};
use qsynth_core::models::{builtin, BuckParams, Dtlhs};
use qsynth_core::predicate::Predicate;
use qsynth_core::quantization::QuantSchema;
use qsynth_core::simulator::Plant;
use qsynth_core::synthesis::RegionSpec;

use crate::model_file::{model_hash, ModelFile};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Built-in name or path to a `.json` model file.
    pub model: String,
    /// Switch count for `multibuck` / `multibuck-robust` given without `:n`.
    pub inputs: Option<usize>,
    pub bits: u32,
    pub goal_vref: f64,
    pub goal_eps: f64,
    /// State variable the goal band applies to; `v_O` when present, else the first state.
    pub goal_var: Option<String>,
    pub variant: Variant,
    pub successors: SuccessorMode,
    pub budget_nodes: u64,
    pub seed: u64,
    pub params: BuckParams,
    #[serde(skip)]
    pub jobs: usize,
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "buck".into(),
            inputs: None,
            bits: 6,
            goal_vref: 5.0,
            goal_eps: 0.5,
            goal_var: None,
            variant: Variant::Minimum,
            successors: SuccessorMode::Box,
            budget_nodes: SolverOptions::default().node_budget,
            seed: 0,
            params: BuckParams::default(),
            jobs: 1,
            out: PathBuf::from("out"),
        }
    }
}

fn is_file_model(model: &str) -> bool {
    model.ends_with(".json") || Path::new(model).is_file()
}

/// Everything derived from a [`RunConfig`] that the commands need.
pub struct Resolved {
    pub h: Dtlhs,
    pub model_name: String,
    pub model_hash: String,
    pub config_hash: String,
    pub schema: QuantSchema,
    pub regions: RegionSpec,
    pub goal_text: String,
    pub solver: MilpSolver,
    pub plant: Plant,
}

impl RunConfig {
    /// Model name with the input count folded in (`multibuck:3`).
    pub fn model_name(&self) -> Result<String, CliError> {
        let m = self.model.as_str();
        if is_file_model(m) {
            if self.inputs.is_some() {
                return Err(CliError::Usage("--inputs only applies to the multibuck models".into()));
            }
            return Ok(m.to_string());
        }
        match (m, self.inputs) {
            ("multibuck" | "multibuck-robust", Some(n)) => Ok(format!("{m}:{n}")),
            ("multibuck" | "multibuck-robust", None) => {
                Err(CliError::Usage(format!("model {m} needs --inputs n (or {m}:n)")))
            }
            (_, Some(_)) => Err(CliError::Usage("--inputs only applies to the multibuck models".into())),
            (_, None) => Ok(m.to_string()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(1..=12).contains(&self.bits) {
            return Err(CliError::Usage(format!("--bits must be in 1..=12, got {}", self.bits)));
        }
        if !(self.goal_eps > 0.0 && self.goal_eps.is_finite()) || !self.goal_vref.is_finite() {
            return Err(CliError::Usage("goal needs a finite reference and a positive tolerance".into()));
        }
        if self.budget_nodes == 0 {
            return Err(CliError::Usage("--budget-nodes must be positive".into()));
        }
        if self.inputs == Some(0) {
            return Err(CliError::Usage("--inputs must be positive".into()));
        }
        self.params.validate()?;
        Ok(())
    }

    pub fn load_model(&self) -> Result<Dtlhs, CliError> {
        let name = self.model_name()?;
        if is_file_model(&name) {
            let text = std::fs::read_to_string(&name).map_err(|e| CliError::io(&name, e))?;
            ModelFile::parse(&text)?.to_dtlhs()
        } else {
            builtin(&name, &self.params).map_err(|e| CliError::Usage(e.to_string()))
        }
    }

    /// Hash over the canonical JSON of the config (output directory and job
    /// count excluded) and the model content.
    pub fn hash(&self, model_hash: &str) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut d = Sha256::new();
        d.update(json.as_bytes());
        d.update(model_hash.as_bytes());
        hex::encode(d.finalize())[..16].to_string()
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        self.validate()?;
        let model_name = self.model_name()?;
        let h = self.load_model()?;
        let hash = model_hash(&h);
        let config_hash = self.hash(&hash);
        let schema = QuantSchema::uniform(h.safety_box(), self.bits)?;
        let var = match &self.goal_var {
            Some(v) => v.clone(),
            None if h.state_names().contains(&"v_O") => "v_O".into(),
            None => h.state[0].name.clone(),
        };
        if !h.state_names().contains(&var.as_str()) {
            return Err(CliError::Usage(format!("goal variable {var} is not a state of {}", h.name)));
        }
        let mut goal = Predicate::new();
        goal.within(&var, self.goal_vref - self.goal_eps, self.goal_vref + self.goal_eps);
        let goal_text = format!("|{var} - {}| <= {}", self.goal_vref, self.goal_eps);
        let solver = MilpSolver::new(SolverOptions { node_budget: self.budget_nodes, ..SolverOptions::default() });
        let plant = if is_file_model(&model_name) {
            Plant::Fixed(h.clone())
        } else {
            Plant::for_builtin(&model_name, &self.params)?
        };
        Ok(Resolved {
            h,
            model_name,
            model_hash: hash,
            config_hash,
            schema,
            regions: RegionSpec { goal, initial: None },
            goal_text,
            solver,
            plant,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_out_and_jobs() {
        let a = RunConfig::default();
        let b = RunConfig { out: "elsewhere".into(), jobs: 8, ..a.clone() };
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash("m"), b.hash("m"));
        assert_ne!(a.hash("m"), c.hash("m"));
        assert_ne!(a.hash("m"), a.hash("n"));
    }

    #[test]
    fn model_names() {
        let cfg = RunConfig { model: "multibuck".into(), inputs: Some(3), ..RunConfig::default() };
        assert_eq!(cfg.model_name().unwrap(), "multibuck:3");
        let cfg = RunConfig { model: "multibuck".into(), ..RunConfig::default() };
        assert!(matches!(cfg.model_name(), Err(CliError::Usage(_))));
        let cfg = RunConfig { model: "buck".into(), inputs: Some(2), ..RunConfig::default() };
        assert!(matches!(cfg.model_name(), Err(CliError::Usage(_))));
        let cfg = RunConfig { model: "boost".into(), ..RunConfig::default() };
        assert!(matches!(cfg.resolve(), Err(CliError::Usage(_))));
    }

    #[test]
    fn goal_variable_defaults() {
        let r = RunConfig { model: "toy".into(), goal_vref: 2.0, ..RunConfig::default() }.resolve().unwrap();
        assert_eq!(r.goal_text, "|x - 2| <= 0.5");
        let r = RunConfig::default().resolve().unwrap();
        assert_eq!(r.goal_text, "|v_O - 5| <= 0.5");
        assert_eq!(r.schema.total_cells(), 1 << 12);
    }
}
