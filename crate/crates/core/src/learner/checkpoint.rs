//! Model checkpoints: `u64` little-endian header length, a JSON header, then
//! the weight arrays as little-endian `f64`, in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, SacAgent, TrainConfig, TrainedModel};
use crate::channels::{ObservationSpace, SpaceDoc};
use crate::error::{Error, Result};

const FORMAT: &str = "obsearch-sac";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    actor_sizes: Vec<usize>,
    critic_sizes: Vec<usize>,
    log_alpha: f64,
    arrays: Vec<(String, usize)>,
    space: SpaceDoc,
    config: TrainConfig,
    reward_history: Vec<(usize, f64)>,
    dropout_rate: f64,
    seed: u64,
    steps: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

pub fn to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let ag = &model.agent;
    let nets: [(&str, &Mlp); 5] = [
        ("actor", &ag.actor),
        ("critic1", &ag.critics[0]),
        ("critic2", &ag.critics[1]),
        ("target1", &ag.targets[0]),
        ("target2", &ag.targets[1]),
    ];
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        actor_sizes: ag.actor.sizes().to_vec(),
        critic_sizes: ag.critics[0].sizes().to_vec(),
        log_alpha: ag.log_alpha,
        arrays: nets.iter().map(|(n, m)| (n.to_string(), m.params().len())).collect(),
        space: model.space.to_doc(),
        config: model.config.clone(),
        reward_history: model.reward_history.clone(),
        dropout_rate: model.dropout_rate,
        seed: model.seed,
        steps: model.steps,
        action_low: model.action_low.clone(),
        action_high: model.action_high.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len());
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(json);
    for (_, net) in nets {
        for v in net.params() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated header length"))?.try_into().unwrap();
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(bad(&format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut rest = &bytes[8 + hlen..];
    let mut nets = Vec::new();
    for (name, n) in &header.arrays {
        let raw = rest.get(..n * 8).ok_or_else(|| bad(&format!("truncated array {name}")))?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rest = &rest[n * 8..];
        let sizes = if name == "actor" { &header.actor_sizes } else { &header.critic_sizes };
        nets.push(Mlp::from_params(sizes, params).ok_or_else(|| bad(&format!("array {name} has wrong length")))?);
    }
    if nets.len() != 5 || !rest.is_empty() {
        return Err(bad("unexpected array layout"));
    }
    let mut it = nets.into_iter();
    let mut next = || it.next().unwrap();
    let actor = next();
    let critics = [next(), next()];
    let targets = [next(), next()];
    let agent = SacAgent::from_parts(actor, critics, targets, header.log_alpha, header.config.learning_rate);
    Ok(TrainedModel {
        agent,
        space: ObservationSpace::from_doc(header.space)?,
        config: header.config,
        reward_history: header.reward_history,
        dropout_rate: header.dropout_rate,
        seed: header.seed,
        steps: header.steps,
        action_low: header.action_low,
        action_high: header.action_high,
        buffer: None,
    })
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
