//! Entropy-regularized replica-surrogate matching and the incentive
//! compatible black-box reduction built on it.
//!
//! The pipeline: [`instance`] wraps sample-only access to the `km × m`
//! edge-value matrix; [`offline`] solves the entropy-regularized matching
//! program through its smooth dual; [`gamma`] estimates the price scale from
//! an independent replica redraw; [`online`] assigns replicas one at a time
//! with multiplicative-weight dual prices and exact exponential-weights
//! sampling; [`reduce`] assembles surrogate selection and implicit payments
//! into a full mechanism.

pub mod gamma;
pub mod instance;
pub mod offline;
pub mod online;
pub mod reduce;

pub use gamma::{estimate_gamma, GammaEstimate};
pub use instance::MatchingInstance;
pub use offline::{solve_offline, DualSolution};
pub use online::{match_replica, online_regularized_match, step_duals, OnlineParams};
pub use reduce::{
    market_size_for_doubling_dim, surrogate_select, Algorithm, BicReduction, FinitePrior,
    ReductionParams, SelectOptions, SelectionOutcome,
};

use crate::error::Error;
use crate::Result;

/// Dense row-major matrix of edge values.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged matrix".into()));
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
