//! Delayed-action tabular Q-learning for the light controller.

pub mod mdp;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::ActionId;
use crate::engine::{compute_reward, Engine};
use crate::error::{ConfigError, EngineError, ReportError};
use crate::rng::{derive_seed, stream, Stream};

/// `max(floor, initial·decay^t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Schedule {
    pub const fn constant(value: f64) -> Self {
        Self {
            initial: value,
            decay: 1.0,
            floor: value,
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        let exp = i32::try_from(t).unwrap_or(i32::MAX);
        (self.initial * self.decay.powi(exp)).max(self.floor)
    }

    fn validate(&self, name: &str) -> Result<(), ConfigError> {
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !(unit(self.initial) && unit(self.decay) && unit(self.floor)) {
            return Err(ConfigError::InvalidField {
                field: name.into(),
                reason: format!("initial, decay and floor must lie in [0, 1], got {self:?}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub alpha: Schedule,
    pub epsilon: Schedule,
    pub bucket_width: u32,
    pub bucket_count: u32,
    pub episodes: u64,
    pub episode_length_blocks: u64,
    pub allow_all_red: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            alpha: Schedule {
                initial: 0.5,
                decay: 0.9995,
                floor: 0.05,
            },
            epsilon: Schedule {
                initial: 1.0,
                decay: 0.999,
                floor: 0.05,
            },
            bucket_width: 5,
            bucket_count: 6,
            episodes: 300,
            episode_length_blocks: 240,
            allow_all_red: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma.is_finite() && (0.0..=1.0).contains(&self.gamma)) {
            return Err(ConfigError::InvalidField {
                field: "gamma".into(),
                reason: format!("must lie in [0, 1], got {}", self.gamma),
            });
        }
        self.alpha.validate("alpha")?;
        self.epsilon.validate("epsilon")?;
        if self.bucket_width == 0 {
            return Err(ConfigError::InvalidField {
                field: "bucket_width".into(),
                reason: "must be positive".into(),
            });
        }
        if self.bucket_count == 0 || self.bucket_count > u8::MAX as u32 + 1 {
            return Err(ConfigError::InvalidField {
                field: "bucket_count".into(),
                reason: format!("must lie in 1..=256, got {}", self.bucket_count),
            });
        }
        Ok(())
    }

    pub fn actions(&self) -> &'static [ActionId] {
        ActionId::actions(self.allow_all_red)
    }
}

/// Bucketed queue counts plus the actions decided but not yet applied.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AugmentedState {
    pub buckets: Vec<u8>,
    /// Oldest first.
    pub pending: Vec<ActionId>,
}

impl fmt::Display for AugmentedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b: Vec<String> = self.buckets.iter().map(u8::to_string).collect();
        let p: Vec<&str> = self.pending.iter().map(|a| a.as_str()).collect();
        write!(f, "[{}] [{}]", b.join(" "), p.join(" "))
    }
}

pub fn reduce_state(x: &[u32], pending: &[ActionId], cfg: &LearnerConfig) -> AugmentedState {
    AugmentedState {
        buckets: x
            .iter()
            .map(|&q| (q / cfg.bucket_width).min(cfg.bucket_count - 1) as u8)
            .collect(),
        pending: pending.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub q: f64,
    pub visits: u64,
}

/// Sparse table; absent pairs read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<S: Ord> {
    entries: BTreeMap<(S, ActionId), QEntry>,
}

impl<S: Ord> Default for QTable<S> {
    fn default() -> Self {
        Self { entries: BTreeMap::new() }
    }
}

impl<S: Ord + Clone> QTable<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, s: &S, a: ActionId) -> QEntry {
        // keyed lookup without cloning `s` would need a borrowed tuple form
        self.entries.get(&(s.clone(), a)).copied().unwrap_or_default()
    }

    pub fn q(&self, s: &S, a: ActionId) -> f64 {
        self.entry(s, a).q
    }

    pub fn set(&mut self, s: S, a: ActionId, q: f64) {
        self.entries.entry((s, a)).or_default().q = q;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, ActionId, QEntry)> {
        self.entries.iter().map(|((s, a), e)| (s, *a, *e))
    }

    pub fn max_q(&self, s: &S, actions: &[ActionId]) -> f64 {
        actions.iter().map(|&a| self.q(s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax with ties going to the earliest action in `actions`.
    pub fn best_action(&self, s: &S, actions: &[ActionId]) -> ActionId {
        let mut best = actions[0];
        let mut best_q = self.q(s, best);
        for &a in &actions[1..] {
            let q = self.q(s, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    /// Applies `q → c·q + d` to every stored entry.
    pub fn affine(&self, c: f64, d: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), QEntry { q: c * e.q + d, visits: e.visits }))
                .collect(),
        }
    }
}

pub fn select_action<S: Ord + Clone, R: Rng>(q: &QTable<S>, s: &S, eps: f64, actions: &[ActionId], rng: &mut R) -> ActionId {
    if rng.random::<f64>() < eps {
        actions[rng.random_range(0..actions.len())]
    } else {
        q.best_action(s, actions)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn q_update<S: Ord + Clone>(
    q: &mut QTable<S>,
    s: &S,
    a: ActionId,
    r: f64,
    s_next: &S,
    alpha: f64,
    gamma: f64,
    actions: &[ActionId],
) {
    let target = r + gamma * q.max_q(s_next, actions);
    let e = q.entries.entry((s.clone(), a)).or_default();
    e.q += alpha * (target - e.q);
    e.visits += 1;
}

pub fn greedy_policy<'a, S: Ord + Clone>(q: &'a QTable<S>, actions: &'a [ActionId]) -> impl Fn(&S) -> ActionId + 'a {
    move |s| q.best_action(s, actions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub episode: u64,
    pub cumulative_reward: f64,
    /// Empty when nobody exited.
    pub avg_wait_s: Option<f64>,
    pub avg_queue_per_lane: Option<f64>,
}

/// Runs `cfg.episodes` episodes; `make_engine` receives each episode's seed.
pub fn train<F>(mut make_engine: F, cfg: &LearnerConfig, seed: u64) -> Result<(QTable<AugmentedState>, Vec<TrainingRow>), EngineError>
where
    F: FnMut(u64) -> Result<Engine, EngineError>,
{
    cfg.validate()?;
    let actions = cfg.actions();
    let mut explore = stream(seed, Stream::Exploration);
    let mut q = QTable::new();
    let mut curves = Vec::with_capacity(cfg.episodes as usize);
    let mut t = 0u64;
    for episode in 0..cfg.episodes {
        let mut engine = make_engine(derive_seed(seed, episode))?;
        let mut x = engine.observe_state();
        let mut s = reduce_state(&x, &engine.pending_actions(), cfg);
        for _ in 0..cfg.episode_length_blocks {
            if engine.is_done() {
                break;
            }
            let a = select_action(&q, &s, cfg.epsilon.at(t), actions, &mut explore);
            let out = engine.run_block(a)?;
            let r = compute_reward(&x, &out.x_after, &engine.config().w).expect("lane counts agree");
            x = out.x_after;
            let s_next = reduce_state(&x, &engine.pending_actions(), cfg);
            q_update(&mut q, &s, a, r, &s_next, cfg.alpha.at(t), cfg.gamma, actions);
            s = s_next;
            t += 1;
        }
        let log = engine.finish();
        curves.push(TrainingRow {
            episode,
            cumulative_reward: log.cumulative_reward(),
            avg_wait_s: log.mean_wait(),
            avg_queue_per_lane: log.mean_queue_per_lane(),
        });
    }
    Ok((q, curves))
}

/// Drives `engine` to its horizon choosing each block's action with `policy`.
pub fn run_policy<P>(engine: &mut Engine, cfg: &LearnerConfig, mut policy: P) -> Result<(), EngineError>
where
    P: FnMut(u64, &AugmentedState) -> ActionId,
{
    while !engine.is_done() {
        let s = reduce_state(&engine.observe_state(), &engine.pending_actions(), cfg);
        let a = policy(engine.current_block(), &s);
        engine.run_block(a)?;
    }
    Ok(())
}

/// Alternates the two pairs every `period` blocks, starting with the pair
/// opposite to the initial action.
pub fn fixed_cycle(period: u64, initial: ActionId) -> impl Fn(u64, &AugmentedState) -> ActionId {
    let other = if initial == ActionId::OpenPair13 {
        ActionId::OpenPair24
    } else {
        ActionId::OpenPair13
    };
    let period = period.max(1);
    move |k, _| if (k / period) % 2 == 0 { other } else { initial }
}

#[derive(Debug, Serialize, Deserialize)]
struct QRow {
    buckets: String,
    pending: String,
    action: ActionId,
    q: f64,
    visits: u64,
}

pub fn write_qtable<W: Write>(q: &QTable<AugmentedState>, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for (s, a, e) in q.iter() {
        w.serialize(QRow {
            buckets: s.buckets.iter().map(u8::to_string).collect::<Vec<_>>().join(" "),
            pending: s.pending.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(" "),
            action: a,
            q: e.q,
            visits: e.visits,
        })?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: "<qtable>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_qtable<R: Read>(input: R) -> Result<QTable<AugmentedState>, ReportError> {
    let mut table = QTable::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: QRow = row?;
        let buckets = row
            .buckets
            .split_whitespace()
            .map(|b| b.parse::<u8>().map_err(|e| ReportError::Malformed(format!("bucket `{b}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let pending = row
            .pending
            .split_whitespace()
            .map(|p| p.parse::<ActionId>().map_err(ReportError::Malformed))
            .collect::<Result<Vec<_>, _>>()?;
        table.entries.insert(
            (AugmentedState { buckets, pending }, row.action),
            QEntry {
                q: row.q,
                visits: row.visits,
            },
        );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;

    use ActionId::{OpenPair13 as A13, OpenPair24 as A24};

    fn st(b: [u8; 4]) -> AugmentedState {
        AugmentedState {
            buckets: b.to_vec(),
            pending: vec![A13, A13],
        }
    }

    #[test]
    fn reduce_state_examples() {
        let c = LearnerConfig::default();
        let s = reduce_state(&[0, 0, 0, 0], &[A13, A13], &c);
        assert_eq!(s, st([0, 0, 0, 0]));
        assert_eq!(reduce_state(&[7, 0, 0, 0], &[A13, A24], &c).buckets, vec![1, 0, 0, 0]);
        assert_eq!(reduce_state(&[1000, 0, 0, 0], &[A13, A24], &c).buckets, vec![5, 0, 0, 0]);
        assert_eq!(reduce_state(&[1, 2, 3, 4], &[A24, A13], &c).pending, vec![A24, A13]);
    }

    #[test]
    fn select_action_ties_and_argmax() {
        let mut rng = stream(1, Stream::Exploration);
        let mut q = QTable::new();
        let s = st([0; 4]);
        assert_eq!(select_action(&q, &s, 0.0, &ActionId::PAIRS, &mut rng), A13);
        q.set(s.clone(), A24, 1.0);
        assert_eq!(select_action(&q, &s, 0.0, &ActionId::PAIRS, &mut rng), A24);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = stream(3, Stream::Exploration);
        let mut q = QTable::new();
        let s = st([0; 4]);
        q.set(s.clone(), A24, 5.0);
        let n = 10_000;
        let hits = (0..n).filter(|_| select_action(&q, &s, 1.0, &ActionId::PAIRS, &mut rng) == A13).count();
        let f = hits as f64 / n as f64;
        assert!((0.48..=0.52).contains(&f), "{f}");
    }

    #[test]
    fn q_update_examples() {
        let s = st([0; 4]);
        let s2 = st([1, 0, 0, 0]);
        let mut q = QTable::new();
        q_update(&mut q, &s, A13, 8.0, &s2, 0.0, 0.9, &ActionId::PAIRS);
        assert_abs_diff_eq!(q.q(&s, A13), 0.0);
        assert_eq!(q.entry(&s, A13).visits, 1);
        q_update(&mut q, &s, A13, 8.0, &s2, 1.0, 0.9, &ActionId::PAIRS);
        assert_abs_diff_eq!(q.q(&s, A13), 8.0);
        assert_eq!(q.entry(&s, A13).visits, 2);
    }

    #[test]
    fn empty_table_policy_is_open13() {
        let q: QTable<AugmentedState> = QTable::new();
        let pi = greedy_policy(&q, &ActionId::PAIRS);
        assert_eq!(pi(&st([3, 1, 4, 1])), A13);
    }

    #[test]
    fn schedules_match_defaults() {
        let c = LearnerConfig::default();
        assert_abs_diff_eq!(c.alpha.at(0), 0.5);
        assert_abs_diff_eq!(c.epsilon.at(0), 1.0);
        assert_abs_diff_eq!(c.epsilon.at(100_000), 0.05);
        assert_abs_diff_eq!(c.alpha.at(1000), 0.5 * 0.9995f64.powi(1000), epsilon = 1e-15);
        assert!(LearnerConfig { gamma: 1.5, ..c.clone() }.validate().is_err());
        assert!(LearnerConfig { bucket_count: 0, ..c }.validate().is_err());
    }

    #[test]
    fn qtable_csv_round_trip() {
        let mut q = QTable::new();
        let s = st([5, 0, 2, 1]);
        q_update(&mut q, &s, A24, -3.25, &st([0; 4]), 0.3, 0.95, &ActionId::PAIRS);
        q.set(st([0; 4]), A13, 0.1 + 0.2);
        let mut buf = Vec::new();
        write_qtable(&q, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("buckets,pending,action,q,visits\n"), "{text}");
        assert_eq!(read_qtable(buf.as_slice()).unwrap(), q);
    }

    #[test]
    fn fixed_cycle_alternates() {
        let p = fixed_cycle(2, A13);
        let s = st([0; 4]);
        let seq: Vec<_> = (0..6).map(|k| p(k, &s)).collect();
        assert_eq!(seq, vec![A24, A24, A13, A13, A24, A24]);
    }
}
