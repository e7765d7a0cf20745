//! Tabular softmax policies and (state, action) tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real table indexed by (state, action), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl Table {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "table of {} entries cannot be shaped ({n_states}, {n_actions})",
                values.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn same_shape(&self, other: &Table) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Table) {
        debug_assert!(self.same_shape(other));
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += scale * y;
        }
    }

    pub fn scaled(&self, scale: f64) -> Table {
        Table {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sup-norm distance relative to the larger of the two sup-norms.
    ///
    /// Returns the absolute distance when both tables are (numerically) zero.
    pub fn relative_error(&self, other: &Table) -> f64 {
        let diff = self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = self.sup_norm().max(other.sup_norm());
        if scale < 1e-12 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Softmax policy parameters: one logit per (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub logits: Table,
}

impl PolicyParams {
    /// All-zero logits, i.e. the uniform policy.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            logits: Table::zeros(n_states, n_actions),
        }
    }

    pub fn from_logits(logits: Table) -> Result<Self> {
        if !logits.is_finite() {
            return Err(Error::InvalidArgument("policy logits must be finite".into()));
        }
        Ok(Self { logits })
    }

    /// A softmax policy that puts logit `margin` on the chosen action of each
    /// state and zero elsewhere.
    pub fn from_deterministic(actions: &[usize], n_actions: usize, margin: f64) -> Self {
        let mut logits = Table::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            logits.set(s, a, margin);
        }
        Self { logits }
    }

    pub fn n_states(&self) -> usize {
        self.logits.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.logits.n_actions
    }

    /// Action probabilities for every state, row-major (state, action).
    pub fn probabilities(&self) -> Vec<f64> {
        let n_actions = self.n_actions();
        let mut probs = Vec::with_capacity(self.logits.values.len());
        for s in 0..self.n_states() {
            let row = self.logits.row(s);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            let mut z = 0.0;
            for &l in row {
                let e = (l - max).exp();
                z += e;
                probs.push(e);
            }
            for p in &mut probs[start..start + n_actions] {
                *p /= z;
            }
        }
        probs
    }
}

/// Probability table of a deterministic policy.
pub fn deterministic_probabilities(actions: &[usize], n_actions: usize) -> Vec<f64> {
    let mut probs = vec![0.0; actions.len() * n_actions];
    for (s, &a) in actions.iter().enumerate() {
        probs[s * n_actions + a] = 1.0;
    }
    probs
}
