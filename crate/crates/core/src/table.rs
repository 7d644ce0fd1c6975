use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major table indexed by (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionTable {
    num_states: usize,
    num_actions: usize,
    data: Vec<f64>,
}

impl StateActionTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::filled(num_states, num_actions, 0.0)
    }

    pub fn filled(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            data: vec![value; num_states * num_actions],
        }
    }

    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                data.push(f(s, a));
            }
        }
        Self {
            num_states,
            num_actions,
            data,
        }
    }

    pub fn from_vec(num_states: usize, num_actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_states * num_actions {
            return Err(Error::ShapeMismatch {
                expected: format!("{} entries", num_states * num_actions),
                actual: format!("{} entries", data.len()),
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_actions) {
            return Err(Error::ShapeMismatch {
                expected: format!("rows of length {num_actions}"),
                actual: "ragged rows".into(),
            });
        }
        Ok(Self {
            num_states: rows.len(),
            num_actions,
            data: rows.concat(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_states, self.num_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.num_actions;
        &mut self.data[s * n..(s + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.num_actions.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self * alpha + other * beta`, elementwise.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| alpha * x + beta * y)
                .collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(x, y)| x * y).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for StateActionTable {
    type Output = f64;

    fn index(&self, (s, a): (usize, usize)) -> &f64 {
        &self.data[s * self.num_actions + a]
    }
}

impl IndexMut<(usize, usize)> for StateActionTable {
    fn index_mut(&mut self, (s, a): (usize, usize)) -> &mut f64 {
        &mut self.data[s * self.num_actions + a]
    }
}
