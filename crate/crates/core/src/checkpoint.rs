//! Versioned JSON checkpoints.
//!
//! Floats are serialised with round-trip precision, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{self, Agent, AgentConfig};
use crate::envs::EnvSpec;
use crate::networks::{ActorNet, CriticNet, TargetPair};
use crate::replay::ReplayBuffer;
use crate::tensor::AdamState;
use crate::{Error, Result};

pub const FORMAT: &str = "paac-checkpoint";
pub const VERSION: u32 = 1;

/// Everything needed to rebuild a trained agent: configuration, live and
/// target networks, optimiser moments and the replay buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvSpec,
    pub config: AgentConfig,
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub targets: TargetPair,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
    pub buffer: ReplayBuffer,
}

impl AgentCheckpoint {
    pub fn from_agent(agent: &Agent, env: &EnvSpec) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            env: env.clone(),
            config: agent.cfg.clone(),
            actor: agent.actor.clone(),
            critic: agent.critic.clone(),
            targets: agent.targets.clone(),
            actor_adam: agent.actor_adam.clone(),
            critic_adam: agent.critic_adam.clone(),
            buffer: agent.buffer.clone(),
        }
    }

    /// Rebuilds the agent. Random streams restart from the config seed.
    pub fn into_agent(self) -> Result<Agent> {
        let mut agent = agents::build_agent(&self.config, &self.env)?;
        if !self.actor.params.same_shape(&agent.actor.params) || !self.critic.params.same_shape(&agent.critic.params) {
            return Err(Error::Format("network shapes do not match the stored config".into()));
        }
        agent.actor = self.actor;
        agent.critic = self.critic;
        agent.targets = self.targets;
        agent.actor_adam = self.actor_adam;
        agent.critic_adam = self.critic_adam;
        agent.buffer = self.buffer;
        Ok(agent)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if ck.format != FORMAT {
            return Err(Error::Format(format!("not a checkpoint: format `{}`", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.actor.params.validate()?;
        ck.critic.params.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
