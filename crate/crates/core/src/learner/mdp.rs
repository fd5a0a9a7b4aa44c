//! Small enumerable delayed MDPs: an environment that applies each action
//! `d_a` steps late, and value iteration on the reduced (augmented) chain.

use std::collections::VecDeque;

use rand::Rng;

use super::{q_update, select_action, QTable};
use crate::action::ActionId;

const ACTIONS: [ActionId; 2] = ActionId::PAIRS;

fn index(a: ActionId) -> usize {
    match a {
        ActionId::OpenPair13 => 0,
        _ => 1,
    }
}

/// Deterministic transitions `next[s][a]` with rewards `reward[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedMdp {
    pub next: Vec<[usize; 2]>,
    pub reward: Vec<[f64; 2]>,
    pub d_a: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelayedState {
    pub s: usize,
    /// Oldest first.
    pub pending: Vec<ActionId>,
}

impl DelayedMdp {
    /// Rewards uniform in `[-1, 1]`.
    pub fn random<R: Rng>(rng: &mut R, n_states: usize, d_a: usize, gamma: f64) -> Self {
        let next = (0..n_states)
            .map(|_| [rng.random_range(0..n_states), rng.random_range(0..n_states)])
            .collect();
        let reward = (0..n_states)
            .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
            .collect();
        Self { next, reward, d_a, gamma }
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    /// Every augmented state, in table order.
    pub fn reduced_states(&self) -> Vec<DelayedState> {
        let combos = 1usize << self.d_a;
        (0..self.n_states())
            .flat_map(|s| {
                (0..combos).map(move |bits| DelayedState {
                    s,
                    pending: (0..self.d_a).map(|i| ACTIONS[(bits >> (self.d_a - 1 - i)) & 1]).collect(),
                })
            })
            .collect()
    }

    /// Fixed point of the Bellman optimality operator on the reduced chain,
    /// over flat arrays indexed by `s·2^d_a + pending bits`.
    pub fn value_iteration(&self, tol: f64, max_sweeps: usize) -> QTable<DelayedState> {
        let d = self.d_a;
        let combos = 1usize << d;
        let n = self.n_states() * combos;
        let mask = combos - 1;
        let mut q = vec![[0.0f64; 2]; n];
        for _ in 0..max_sweeps {
            let mut next_q = vec![[0.0f64; 2]; n];
            let mut delta = 0.0f64;
            for (idx, row) in next_q.iter_mut().enumerate() {
                let s = idx / combos;
                let bits = idx % combos;
                for (a, slot) in row.iter_mut().enumerate() {
                    // applied action: oldest pending, or the fresh one when d = 0
                    let (applied, bits_next) = if d == 0 {
                        (a, 0)
                    } else {
                        ((bits >> (d - 1)) & 1, ((bits << 1) | a) & mask)
                    };
                    let s_next = self.next[s][applied];
                    let j = s_next * combos + bits_next;
                    let v = self.reward[s][applied] + self.gamma * q[j][0].max(q[j][1]);
                    delta = delta.max((v - q[idx][a]).abs());
                    *slot = v;
                }
            }
            q = next_q;
            if delta < tol {
                break;
            }
        }
        let mut table = QTable::new();
        for (idx, st) in self.reduced_states().into_iter().enumerate() {
            for (a, &action) in ACTIONS.iter().enumerate() {
                table.set(st.clone(), action, q[idx][a]);
            }
        }
        table
    }
}

/// The original process: the state evolves under the action decided `d_a`
/// steps earlier.
#[derive(Debug, Clone)]
pub struct DelayedEnv<'a> {
    mdp: &'a DelayedMdp,
    s: usize,
    pending: VecDeque<ActionId>,
}

impl<'a> DelayedEnv<'a> {
    pub fn new(mdp: &'a DelayedMdp, s: usize, pending: &[ActionId]) -> Self {
        assert_eq!(pending.len(), mdp.d_a);
        Self {
            mdp,
            s,
            pending: pending.iter().copied().collect(),
        }
    }

    pub fn state(&self) -> usize {
        self.s
    }

    pub fn observe(&self) -> DelayedState {
        DelayedState {
            s: self.s,
            pending: self.pending.iter().copied().collect(),
        }
    }

    /// Decides `a` and returns the reward of the transition just taken.
    pub fn step(&mut self, a: ActionId) -> f64 {
        self.pending.push_back(a);
        let applied = index(self.pending.pop_front().expect("non-empty after push"));
        let r = self.mdp.reward[self.s][applied];
        self.s = self.mdp.next[self.s][applied];
        r
    }
}

/// Reward sequence from stepping the reduced chain directly.
pub fn reduced_rewards(mdp: &DelayedMdp, start: &DelayedState, actions: &[ActionId]) -> Vec<f64> {
    let mut st = start.clone();
    actions
        .iter()
        .map(|&a| {
            let mut queue = st.pending.clone();
            queue.push(a);
            let applied = index(queue.remove(0));
            let r = mdp.reward[st.s][applied];
            st = DelayedState {
                s: mdp.next[st.s][applied],
                pending: queue,
            };
            r
        })
        .collect()
}

/// Q-learning against [`DelayedEnv`] with exploring starts every `restart_every` steps.
pub fn q_learn<R: Rng>(mdp: &DelayedMdp, steps: u64, eps: f64, alpha: f64, restart_every: u64, rng: &mut R) -> QTable<DelayedState> {
    let starts = mdp.reduced_states();
    let mut q = QTable::new();
    let mut env = DelayedEnv::new(mdp, 0, &vec![ACTIONS[0]; mdp.d_a]);
    for t in 0..steps {
        if t % restart_every.max(1) == 0 {
            let st = &starts[rng.random_range(0..starts.len())];
            env = DelayedEnv::new(mdp, st.s, &st.pending);
        }
        let s = env.observe();
        let a = select_action(&q, &s, eps, &ACTIONS, rng);
        let r = env.step(a);
        q_update(&mut q, &s, a, r, &env.observe(), alpha, mdp.gamma, &ACTIONS);
    }
    q
}

/// Largest absolute difference over every reduced state-action pair.
pub fn sup_distance(mdp: &DelayedMdp, a: &QTable<DelayedState>, b: &QTable<DelayedState>) -> f64 {
    mdp.reduced_states()
        .iter()
        .flat_map(|s| ACTIONS.iter().map(move |&x| (a.q(s, x) - b.q(s, x)).abs()))
        .fold(0.0, f64::max)
}
