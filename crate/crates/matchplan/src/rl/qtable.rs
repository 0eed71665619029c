//! Action space and the tabular Q function.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the k match rules, a scan reset, or termination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    UseRule(usize),
    Reset,
    Stop,
}

impl Action {
    pub fn index(self, k: usize) -> usize {
        match self {
            Action::UseRule(i) => {
                debug_assert!(i < k);
                i
            }
            Action::Reset => k,
            Action::Stop => k + 1,
        }
    }

    pub fn from_index(idx: usize, k: usize) -> Action {
        if idx < k {
            Action::UseRule(idx)
        } else if idx == k {
            Action::Reset
        } else {
            Action::Stop
        }
    }

    pub fn label(self) -> String {
        match self {
            Action::UseRule(i) => format!("rule_{i}"),
            Action::Reset => "reset".into(),
            Action::Stop => "stop".into(),
        }
    }
}

/// Dense p x (k + 2) action-value table with per-entry visit counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub version: u32,
    /// Number of state bins.
    pub p: usize,
    /// Number of match rules; the action space has k + 2 entries.
    pub k: usize,
    pub action_labels: Vec<String>,
    values: Vec<f64>,
    visits: Vec<u64>,
}

pub const QTABLE_VERSION: u32 = 1;

impl QTable {
    pub fn zeros(p: usize, k: usize) -> Self {
        let actions = k + 2;
        let action_labels = (0..actions)
            .map(|i| Action::from_index(i, k).label())
            .collect();
        QTable {
            version: QTABLE_VERSION,
            p,
            k,
            action_labels,
            values: vec![0.0; p * actions],
            visits: vec![0; p * actions],
        }
    }

    pub fn num_actions(&self) -> usize {
        self.k + 2
    }

    fn idx(&self, state: usize, action: Action) -> usize {
        debug_assert!(state < self.p);
        state * self.num_actions() + action.index(self.k)
    }

    pub fn value(&self, state: usize, action: Action) -> f64 {
        self.values[self.idx(state, action)]
    }

    pub fn visits(&self, state: usize, action: Action) -> u64 {
        self.visits[self.idx(state, action)]
    }

    /// Greedy action: highest Q-value, ties broken by lowest action index.
    pub fn greedy_action(&self, state: usize) -> Action {
        let base = state * self.num_actions();
        let row = &self.values[base..base + self.num_actions()];
        let mut best = 0usize;
        for (i, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = i;
            }
        }
        Action::from_index(best, self.k)
    }

    pub fn max_value(&self, state: usize) -> f64 {
        let base = state * self.num_actions();
        self.values[base..base + self.num_actions()]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)
            .map_err(|e| Error::Config(format!("serialize qtable: {e}")))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let table: QTable = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Config(format!("parse qtable {}: {e}", path.display())))?;
        if table.version != QTABLE_VERSION {
            return Err(Error::Config(format!(
                "unsupported qtable version {}",
                table.version
            )));
        }
        if table.values.len() != table.p * (table.k + 2)
            || table.visits.len() != table.values.len()
        {
            return Err(Error::Config("qtable shape mismatch".into()));
        }
        Ok(table)
    }
}

/// One-step Q-learning update:
/// Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)),
/// with the bootstrap term dropped on terminal transitions.
pub fn q_update(
    table: &mut QTable,
    state: usize,
    action: Action,
    reward: f64,
    next_state: usize,
    terminal: bool,
    alpha: f64,
    gamma: f64,
) {
    let bootstrap = if terminal {
        0.0
    } else {
        gamma * table.max_value(next_state)
    };
    let i = table.idx(state, action);
    let q = table.values[i];
    table.values[i] = q + alpha * (reward + bootstrap - q);
    table.visits[i] += 1;
}
