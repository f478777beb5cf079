use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, TabularMdp, Transition, TransitionModel};
use crate::error::{Error, Result};

/// On-disk MDP layout: nested arrays, one JSON document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_mean: Vec<Vec<f64>>,
    pub r_max: f64,
    pub gamma: f64,
    pub d0: Vec<f64>,
}

impl From<&TabularMdp> for MdpDocument {
    fn from(mdp: &TabularMdp) -> Self {
        let na = mdp.n_actions();
        Self {
            n_states: mdp.n_states(),
            n_actions: na,
            transition: mdp.transition().to_nested(),
            reward_mean: mdp.reward_mean().chunks(na).map(<[f64]>::to_vec).collect(),
            r_max: mdp.r_max(),
            gamma: mdp.gamma(),
            d0: mdp.d0().to_vec(),
        }
    }
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let transition = TransitionModel::from_nested(&doc.transition)?;
        if transition.n_states() != doc.n_states || transition.n_actions() != doc.n_actions {
            return Err(Error::Dimension(format!(
                "declared {}x{} but transition is {}x{}",
                doc.n_states,
                doc.n_actions,
                transition.n_states(),
                transition.n_actions()
            )));
        }
        if doc.reward_mean.len() != doc.n_states
            || doc.reward_mean.iter().any(|r| r.len() != doc.n_actions)
        {
            return Err(Error::Dimension("reward_mean shape".into()));
        }
        let reward = doc.reward_mean.into_iter().flatten().collect();
        TabularMdp::new(transition, reward, doc.r_max, doc.gamma, doc.d0)
    }
}

impl TabularMdp {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<MdpDocument>(text)?.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A list of transition models: `{"models": [[[p(s'|s,a)]]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelGridDocument {
    pub models: Vec<Vec<Vec<Vec<f64>>>>,
}

pub fn load_model_grid(path: impl AsRef<Path>) -> Result<Vec<TransitionModel>> {
    let doc: ModelGridDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    doc.models.iter().map(|m| TransitionModel::from_nested(m)).collect()
}

pub fn model_grid_to_json(models: &[TransitionModel]) -> Result<String> {
    let doc = ModelGridDocument {
        models: models.iter().map(TransitionModel::to_nested).collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

impl Dataset {
    /// One JSON object per line: `{"s":..,"a":..,"s_next":..,"r":..,"episode":..}`.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for t in self.records() {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead, n_states: usize, n_actions: usize) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<Transition>(&line)?);
        }
        Self::new(n_states, n_actions, records)
    }
}
