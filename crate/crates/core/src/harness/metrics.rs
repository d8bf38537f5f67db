//! Per-iteration metrics rows and their CSV form.
//!
//! Header for `I` constraints (`n = I + 1` cost indices):
//! `t, j_hat_0..j_hat_{n-1}, j_tilde_0.., cost_0.., msbe_0.., branch, y_star,
//! step_norm, status`. `cost_i` is the mean shifted cost of the new batch,
//! `msbe_i` the mean squared TD error of the raw critic on that batch before
//! its update. Floats are written in shortest round-trip form, so the file is
//! a pure function of the config and seed. Wall-clock time is kept out of it.

use std::io::Write;

use serde::Serialize;

use crate::actor::Branch;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    /// The subproblem solver hit its iteration cap; its best iterate was used.
    SolverError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub t: u64,
    pub j_hat: Vec<f64>,
    pub j_tilde: Vec<f64>,
    pub cost: Vec<f64>,
    pub msbe: Vec<f64>,
    /// `None` when the actor step was skipped.
    pub branch: Option<Branch>,
    pub y_star: Option<f64>,
    pub step_norm: f64,
    pub status: StepStatus,
    #[serde(skip)]
    pub wall_ms: f64,
}

pub fn metrics_header(n_costs: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["j_hat", "j_tilde", "cost", "msbe"] {
        h.extend((0..n_costs).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(["branch", "y_star", "step_norm", "status"].map(String::from));
    h
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        let mut r = vec![self.t.to_string()];
        for v in [&self.j_hat, &self.j_tilde, &self.cost, &self.msbe] {
            r.extend(v.iter().map(|x| x.to_string()));
        }
        r.push(
            match self.branch {
                None => "none",
                Some(Branch::Objective) => "objective",
                Some(Branch::Feasibility) => "feasibility",
            }
            .into(),
        );
        r.push(self.y_star.map(|y| y.to_string()).unwrap_or_default());
        r.push(self.step_norm.to_string());
        r.push(
            match self.status {
                StepStatus::Ok => "ok",
                StepStatus::SolverError => "solver_error",
            }
            .into(),
        );
        r
    }
}

/// CSV sink flushed every `FLUSH_EVERY` rows.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    pending: usize,
}

pub const FLUSH_EVERY: usize = 100;

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W, n_costs: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(metrics_header(n_costs))?;
        Ok(Self { inner, pending: 0 })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.record())?;
        self.pending += 1;
        if self.pending >= FLUSH_EVERY {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        self.pending = 0;
        Ok(())
    }
}
