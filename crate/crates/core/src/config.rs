//! Campaign configuration files (JSON) and the agents they describe.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::wire::Transcript;
use crate::agent::{AgentHandle, Role, ScriptedAgent, ScriptedBehavior, WireClient, WireConfig};
use crate::error::{ConfigError, GatewayError};
use crate::protocol::{Agents, ProtocolConfig};
use crate::store::config_hash;

/// One model endpoint. Scripted agents need no credentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum AgentSpec {
    Scripted {
        name: String,
        #[serde(default)]
        behavior: ScriptedBehavior,
    },
    Wire {
        name: String,
        wire: WireConfig,
    },
}

impl AgentSpec {
    pub fn name(&self) -> &str {
        match self {
            AgentSpec::Scripted { name, .. } | AgentSpec::Wire { name, .. } => name,
        }
    }

    fn credential_var(&self) -> Option<&str> {
        match self {
            AgentSpec::Wire { wire, .. } => wire.api_key_env.as_deref(),
            AgentSpec::Scripted { .. } => None,
        }
    }

    pub fn build(&self, role: Role, transcript: Option<&Arc<Transcript>>) -> Result<AgentHandle, ConfigError> {
        match self {
            AgentSpec::Scripted { name, behavior } => {
                Ok(AgentHandle::scripted(role, name.clone(), Arc::new(ScriptedAgent::new(behavior.clone()))))
            }
            AgentSpec::Wire { name, wire } => {
                let mut client = WireClient::from_env(wire.clone()).map_err(ConfigError::Credential)?;
                if let Some(t) = transcript {
                    client = client.with_transcript(t.clone());
                }
                Ok(AgentHandle::wire(role, name.clone(), Arc::new(client)))
            }
        }
    }

    fn make_scripted(&mut self) {
        if let AgentSpec::Wire { name, .. } = self {
            let name = std::mem::take(name);
            *self = AgentSpec::Scripted { behavior: ScriptedBehavior::new(name.clone()), name };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpecs {
    pub teacher: AgentSpec,
    pub orchestrator: AgentSpec,
    pub student: AgentSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub models: Vec<AgentSpec>,
    pub final_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// Directory name of the store, e.g. `gpt-4o`.
    pub generator_tag: String,
    pub generator_family: String,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    pub agents: AgentSpecs,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Append-only JSONL log of every wire request and response.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
}

/// Sets a dotted path in `root`. The value is read as JSON when it parses,
/// otherwise as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut()
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl CampaignConfig {
    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.protocol.validate().map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.generator_tag.is_empty() || cfg.generator_tag.contains(['/', '\\']) {
            return Err(ConfigError::Parse(format!("generator_tag '{}' is not a valid directory name", cfg.generator_tag)));
        }
        Ok(cfg)
    }

    /// Reads `path` and applies `key=value` overrides before validation.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    /// Replaces every wire agent with a default scripted agent of the same name.
    pub fn force_scripted(&mut self) {
        for spec in self.specs_mut() {
            spec.make_scripted();
        }
    }

    fn specs_mut(&mut self) -> impl Iterator<Item = &mut AgentSpec> {
        let a = &mut self.agents;
        [&mut a.teacher, &mut a.orchestrator, &mut a.student]
            .into_iter()
            .chain(self.evaluation.models.iter_mut())
    }

    fn specs(&self) -> impl Iterator<Item = &AgentSpec> {
        let a = &self.agents;
        [&a.teacher, &a.orchestrator, &a.student].into_iter().chain(self.evaluation.models.iter())
    }

    /// Fails on the first wire agent whose credential variable is unset, so
    /// no request is sent by a run that cannot finish.
    pub fn check_credentials(&self) -> Result<(), ConfigError> {
        for var in self.specs().filter_map(AgentSpec::credential_var) {
            if std::env::var(var).map_or(true, |v| v.is_empty()) {
                return Err(ConfigError::Credential(GatewayError::MissingCredential(var.to_string())));
            }
        }
        Ok(())
    }

    /// Opened only when some agent is wire-backed.
    fn transcript(&self) -> Result<Option<Arc<Transcript>>, ConfigError> {
        if !self.specs().any(|s| matches!(s, AgentSpec::Wire { .. })) {
            return Ok(None);
        }
        self.transcript
            .as_ref()
            .map(|p| {
                Transcript::open(p)
                    .map(Arc::new)
                    .map_err(|e| ConfigError::Io { path: p.clone(), message: e.to_string() })
            })
            .transpose()
    }

    pub fn build_agents(&self) -> Result<Agents, ConfigError> {
        let t = self.transcript()?;
        Ok(Agents {
            teacher: self.agents.teacher.build(Role::Teacher, t.as_ref())?,
            orchestrator: self.agents.orchestrator.build(Role::Orchestrator, t.as_ref())?,
            student: self.agents.student.build(Role::Student, t.as_ref())?,
        })
    }

    /// Evaluation models, bound to the student role.
    pub fn build_models(&self) -> Result<Vec<AgentHandle>, ConfigError> {
        let t = self.transcript()?;
        self.evaluation.models.iter().map(|m| m.build(Role::Student, t.as_ref())).collect()
    }

    /// Hash of everything that determines generated content. Concurrency and
    /// the transcript path are excluded.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.protocol.concurrency = 0;
        c.transcript = None;
        config_hash(&c)
    }
}
