use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, Transition};
use crate::env::{Environment, StepInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub layer: usize,
    pub layer_name: String,
    pub action: f64,
    pub reward: f64,
    pub accuracy: f64,
    pub flops: u64,
    pub keep_k: Option<usize>,
    pub recon_error: Option<f64>,
    pub bits: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub rows: Vec<TraceRow>,
    pub episode_return: f64,
}

impl EpisodeTrace {
    /// Append rows as CSV (`header` controls whether a header line is written).
    pub fn write_csv<W: Write>(&self, w: W, header: bool) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(header).from_writer(w);
        if self.rows.is_empty() && header {
            wr.write_record(TRACE_COLUMNS).map_err(csv_err)?;
        }
        for r in &self.rows {
            wr.serialize(r).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Data(format!("trace CSV: {e}")))?;
        Ok(())
    }
}

pub const TRACE_COLUMNS: [&str; 10] = ["episode", "layer", "layer_name", "action", "reward", "accuracy", "flops", "keep_k", "recon_error", "bits"];

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("trace CSV: {e}"))
}

fn row(episode: usize, reward: f64, info: StepInfo) -> TraceRow {
    TraceRow {
        episode,
        layer: info.layer,
        layer_name: info.layer_name,
        action: info.action,
        reward,
        accuracy: info.accuracy,
        flops: info.flops,
        keep_k: info.keep_k,
        recon_error: info.recon_error,
        bits: info.bits,
    }
}

/// One pass over all layers. Per step: select an action, update the actor on
/// a minibatch from the replay buffer, execute the action, store the
/// transition, then update the critic on the same minibatch and move the
/// target networks. Updates start once the buffer holds a full minibatch.
pub fn run_episode(env: &mut dyn Environment, agent: &mut Agent, episode: usize, rng: &mut dyn RngCore) -> Result<EpisodeTrace> {
    agent.begin_episode();
    let mut trace = EpisodeTrace { episode, rows: Vec::new(), episode_return: 0.0 };
    let mut s = env.state()?;
    for _ in 0..env.num_steps() {
        let a = agent.act(&s, rng)?;
        let batch = (agent.buffer.len() >= agent.cfg.batch_size).then(|| agent.buffer.sample(agent.cfg.batch_size, rng));
        if let Some(b) = &batch {
            agent.actor_update(b)?;
        }
        let step = env.step(a)?;
        agent.buffer.push(Transition { s, a, r: step.reward, s_next: step.next_state, done: step.done });
        if let Some(b) = &batch {
            agent.critic_update(b)?;
            agent.target_update()?;
        }
        trace.episode_return += step.reward;
        trace.rows.push(row(episode, step.reward, step.info));
        s = step.next_state;
        if step.done {
            break;
        }
    }
    agent.end_episode();
    Ok(trace)
}
