use serde::{Deserialize, Serialize};

use crate::action::ActionId;
use crate::geometry::{Phase, VehicleKind};

/// One completed journey. `t_exit` is the time the vehicle left the merging zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u64,
    /// 1-based lane number.
    pub lane: usize,
    pub kind: VehicleKind,
    pub t_entry: f64,
    pub t_exit: f64,
    pub wait_time: f64,
    /// `∫u²` over the whole journey.
    pub energy: f64,
    #[serde(skip, default)]
    pub fallback: bool,
    #[serde(skip, default)]
    pub stops: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRecord {
    pub k: u64,
    pub t: f64,
    /// Control-zone counts at the block start.
    pub queues: Vec<u32>,
    /// Action decided at this boundary, applied `d_a` blocks later.
    pub action: ActionId,
    /// Action in effect during this block.
    pub applied: ActionId,
    /// Reward observed at the end of this block.
    pub reward: Option<f64>,
    /// Color of each lane after any amber.
    pub phases: Vec<Phase>,
    pub amber: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RedEntry {
    pub t: f64,
    pub id: u64,
    pub lane: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsLog {
    pub vehicles: Vec<VehicleRecord>,
    pub blocks: Vec<BlockRecord>,
    pub red_entries: Vec<RedEntry>,
    pub spawned: u64,
    pub dropped_capacity: u64,
    pub dropped_jam: u64,
    pub fallbacks: u64,
    pub plan_failures: u64,
    /// Vehicles still inside when the run stopped.
    pub in_system: u64,
}

impl MetricsLog {
    pub fn exited(&self) -> u64 {
        self.vehicles.len() as u64
    }

    /// Phase in effect during block `k` equals the action decided `d_a`
    /// blocks earlier, or `initial` for the first `d_a` blocks.
    pub fn delay_bookkeeping_holds(&self, d_a: usize, initial: ActionId) -> bool {
        self.blocks.iter().enumerate().all(|(k, b)| {
            let expected = if k < d_a { initial } else { self.blocks[k - d_a].action };
            let colors_match = b
                .phases
                .iter()
                .enumerate()
                .all(|(lane, &p)| (p == Phase::Green) == expected.is_green(lane));
            b.k == k as u64 && b.applied == expected && colors_match
        })
    }

    pub fn mean_queue_per_lane(&self) -> Option<f64> {
        if self.blocks.is_empty() {
            return None;
        }
        let total: f64 = self
            .blocks
            .iter()
            .map(|b| b.queues.iter().map(|&q| q as f64).sum::<f64>() / b.queues.len().max(1) as f64)
            .sum();
        Some(total / self.blocks.len() as f64)
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.blocks.iter().filter_map(|b| b.reward).sum::<f64>() + 0.0
    }

    pub fn mean_wait(&self) -> Option<f64> {
        if self.vehicles.is_empty() {
            return None;
        }
        Some(self.vehicles.iter().map(|v| v.wait_time.max(0.0)).sum::<f64>() / self.vehicles.len() as f64)
    }
}
