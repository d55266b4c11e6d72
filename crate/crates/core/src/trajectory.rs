//! Time-stamped states and per-step diagnostics.

use serde::{Deserialize, Serialize};

use crate::field::Field;

/// Scalar diagnostics recorded after every step (step 0 is the initial state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    /// Free energy, or the convex functional for pure porous-medium runs.
    pub energy: Option<f64>,
    /// `1/2 sum nu_x P[x][y] |mu(y) - mu(x)|^2`, when a chemical potential exists.
    pub dissipation: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Stored fields at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub u: Field,
    pub v: Option<Field>,
    pub mu: Option<Field>,
}

/// What an observer sees after each step.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub diagnostics: &'a StepDiagnostics,
    pub u: &'a Field,
    pub v: Option<&'a Field>,
    pub mu: Option<&'a Field>,
}

/// A full run: diagnostics for every step, fields at the snapshot stride.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub tau: f64,
    pub snapshot_stride: usize,
    pub diagnostics: Vec<StepDiagnostics>,
    pub snapshots: Vec<Snapshot>,
    pub notices: Vec<String>,
}

impl Trajectory {
    pub fn new(tau: f64, snapshot_stride: usize) -> Self {
        Self {
            tau,
            snapshot_stride: snapshot_stride.max(1),
            ..Self::default()
        }
    }

    /// Records a step, keeping its fields when it falls on the stride or `last` is set.
    pub fn push(&mut self, rec: &StepRecord<'_>, last: bool) {
        let d = rec.diagnostics.clone();
        if last || d.step.is_multiple_of(self.snapshot_stride) {
            self.snapshots.push(Snapshot {
                step: d.step,
                t: d.t,
                u: rec.u.clone(),
                v: rec.v.cloned(),
                mu: rec.mu.cloned(),
            });
        }
        self.diagnostics.push(d);
    }

    pub fn steps(&self) -> usize {
        self.diagnostics.len().saturating_sub(1)
    }

    pub fn final_state(&self) -> Option<&Field> {
        self.snapshots.last().map(|s| &s.u)
    }

    pub fn initial_state(&self) -> Option<&Field> {
        self.snapshots.first().map(|s| &s.u)
    }

    pub fn final_time(&self) -> f64 {
        self.diagnostics.last().map_or(0.0, |d| d.t)
    }
}
