//! Versioned JSON container for a full agent: parameters, Adam moments, step
//! counter and RNG state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Agent;

pub const FORMAT: &str = "langlab-agent";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<A> {
    format: String,
    version: u32,
    agent: A,
}

pub fn to_string(agent: &Agent) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format: FORMAT.to_string(),
        version: VERSION,
        agent,
    })?)
}

pub fn from_str(text: &str) -> Result<Agent> {
    let env: Envelope<Agent> = serde_json::from_str(text)?;
    if env.format != FORMAT || env.version != VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint {} v{}",
            env.format, env.version
        )));
    }
    env.agent.config().validate()?;
    if env.agent.params().len() != env.agent.layout().total {
        return Err(Error::InvalidArgument("checkpoint parameter count mismatch".into()));
    }
    Ok(env.agent)
}

pub fn save(agent: &Agent, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(agent)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Agent> {
    from_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
