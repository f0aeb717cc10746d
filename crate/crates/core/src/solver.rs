//! Result types shared by the GA, the SQP solver, and the oracle.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    /// SQP reached the KKT tolerance.
    Converged,
    /// SQP hit its iteration cap.
    MaxIterations,
    /// SQP line search failed repeatedly.
    Stalled,
    /// GA ran its configured number of generations.
    MaxGenerations,
    /// Oracle enumerated the whole grid.
    Enumerated,
}

/// Violations up to this size still count as feasible; covers float noise at
/// constraint boundaries.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverResult {
    /// The chosen premium changes, one per customer in portfolio order.
    pub delta: Vec<f64>,
    /// Value of the maximised objective at `delta`.
    pub objective: f64,
    /// Constraint residuals; feasible iff both <= 0 (up to tolerance).
    pub h1: f64,
    pub h2: f64,
    pub feasible: bool,
    pub status: SolverStatus,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostics {
    Ga(GaDiagnostics),
    Sqp(SqpDiagnostics),
    Oracle(OracleDiagnostics),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaDiagnostics {
    pub generations: usize,
    /// Best-ever penalised objective after each generation; non-increasing.
    pub best_trace: Vec<f64>,
    /// Per-generation rows for the trace CSV.
    pub trace: Vec<GaTraceRow>,
    pub final_penalty_r: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaTraceRow {
    pub generation: usize,
    /// Incumbent penalised objective under that generation's penalty weight.
    pub best: f64,
    /// Population mean penalised objective.
    pub mean: f64,
    pub feasible_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SqpDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    /// `(phi_before, phi_after)` for every accepted step, both evaluated
    /// under the step's merit weight; strictly decreasing pairwise.
    pub merit_steps: Vec<(f64, f64)>,
    pub trace: Vec<SqpTraceRow>,
    /// Which multi-start produced this result.
    pub start_index: usize,
    /// QP subproblems whose linearised constraints had to be relaxed.
    pub relaxed_qps: usize,
    pub lambda: f64,
    pub beta: f64,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SqpTraceRow {
    pub iter: usize,
    pub phi: f64,
    pub kkt_residual: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub combinations: u128,
}

impl SolverResult {
    pub fn max_violation(&self) -> f64 {
        self.h1.max(self.h2).max(0.0)
    }
}
