//! Staggered-time dynamic optimal transport on the control graph.
//!
//! Masses `mu_j` live on time nodes `t_0..t_k`; fluxes `J_{i,j}^s(e)` live on
//! steps `[t_j, t_{j+1})`. The discrete problem is
//!
//! ```text
//! minimize   dt * sum_{j,i,s,e=(v->w)} J^2/2 * (1/mu_j(v) + 1/mu_{j+1}(w))
//! subject to mu_{j+1} - mu_j = dt * (A0(t_j) mu_j + sum_{i,s} D^T (A_i^s . J_{i,j}^s))
//!            mu_0, mu_k pinned,  J >= 0,  mu >= 0
//! ```
//!
//! where `J = mu(v) U` is the momentum of edge control `U`, `A_i^s . J`
//! scales each edge flux by its transition rate and `D^T` is the signed
//! incidence operator. The objective is summed per cell with the tail mass
//! at `t_j` and the head mass at `t_{j+1}`.

pub mod io;
mod layout;
pub mod prox;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ControlAffineSystem;
use crate::generator::{build_rates, RateSet};
use crate::geometry::Grid;
use crate::graph::{build_graph, validate_problem_hypotheses, HypothesisReport, Sign, TransportGraph};

pub use layout::Arc;

/// Uniform time nodes `t_j = t0 + j * dt`, `j = 0..=k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    pub k: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Dimension("time grid needs k >= 1".into()));
        }
        if !(t0.is_finite() && tf.is_finite()) || tf <= t0 {
            return Err(Error::Dimension(format!("time interval [{t0}, {tf}] is empty")));
        }
        Ok(Self { t0, tf, k })
    }

    /// Grid with step `dt`; `(tf - t0) / dt` must be an integer up to 1e-9.
    pub fn from_step(t0: f64, tf: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Dimension(format!("time step {dt} must be positive")));
        }
        let ratio = (tf - t0) / dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * k.max(1.0) {
            return Err(Error::Dimension(format!("horizon {} is not a multiple of dt = {dt}", tf - t0)));
        }
        Self::new(t0, tf, k as usize)
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    pub fn dt(&self) -> f64 {
        (self.tf - self.t0) / self.k as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.k {
            self.tf
        } else {
            self.t0 + j as f64 * self.dt()
        }
    }
}

/// Splitting solver settings. Tolerances apply to masses and fluxes of a
/// unit-mass problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Perspective-prox step per cell. Internally masses are scaled so the
    /// mean box mass is 1; the step is in those units.
    pub prox_step: f64,
    /// Douglas-Rachford relaxation in (0, 2).
    pub relaxation: f64,
    /// Inner conjugate-gradient solves stop at `cg_tol * tol` (max norm).
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Anderson mixing window; 0 disables acceleration.
    pub anderson_memory: usize,
    /// A mixed iterate is kept only if its fixed-point residual is at most
    /// this factor times the previous one.
    pub anderson_safeguard: f64,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// Solve even when the well-posedness checks fail.
    pub override_hypotheses: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iters: 50_000,
            prox_step: 20.0,
            relaxation: 1.6,
            cg_tol: 0.1,
            cg_max_iters: 2_000,
            anderson_memory: 5,
            anderson_safeguard: 1.0,
            check_every: 10,
            override_hypotheses: false,
        }
    }
}

/// Masses below this are treated as empty when dividing fluxes by masses.
pub const MASS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub grid: Grid,
    pub graph: TransportGraph,
    pub rates: RateSet,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub time: TimeGrid,
    pub options: SolverOptions,
    pub report: HypothesisReport,
    pub(crate) layout: layout::Layout,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Max-norm continuity residual of the returned masses and fluxes.
    pub continuity_residual: f64,
    /// Lowest cost seen at a check where the iterate was within tolerance.
    pub best_feasible_cost: Option<f64>,
    pub cg_iterations: usize,
    pub anderson_rejections: usize,
    /// Largest eigenvalue of the projection normal matrix (power iteration).
    pub normal_matrix_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// `density[j][v]`: mass of box `v` at `t_j`.
    pub density: Vec<Vec<f64>>,
    /// `flux[j][a]`: momentum on arc `a` over step `j`.
    pub flux: Vec<Vec<f64>>,
    pub arcs: Vec<Arc>,
    /// Optimal value of the discrete objective.
    pub cost: f64,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// Edge controls `U = J / mu_j(tail)` for step `j`, zero where the tail
    /// mass is below [`MASS_FLOOR`].
    pub fn edge_controls(&self, j: usize) -> Vec<f64> {
        self.arcs
            .iter()
            .zip(&self.flux[j])
            .map(|(a, &f)| {
                let m = self.density[j][a.tail];
                if m > MASS_FLOOR {
                    f / m
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Scale a nonnegative vector to unit mass. Returns the normalized vector
/// and the original mass.
pub fn normalize_measure(mu: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some(v) = mu.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Measure(format!("entry {v} is negative or not finite")));
    }
    let total: f64 = mu.iter().sum();
    if total <= 0.0 {
        return Err(Error::Measure("measure has zero mass".into()));
    }
    Ok((mu.iter().map(|x| x / total).collect(), total))
}

fn check_measure(mu: &[f64], m: usize, name: &str) -> Result<()> {
    if mu.len() != m {
        return Err(Error::Dimension(format!("{name} has {} entries, graph has {m} vertices", mu.len())));
    }
    if let Some(v) = mu.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Measure(format!("{name}[{v}] is negative or not finite")));
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Measure(format!("{name} has mass {total}, expected 1")));
    }
    Ok(())
}

/// Assemble the staggered problem. Endpoint measures must already be
/// normalized (see [`normalize_measure`]).
pub fn assemble(
    grid: &Grid,
    graph: &TransportGraph,
    rates: &RateSet,
    mu0: &[f64],
    mu1: &[f64],
    time: TimeGrid,
) -> Result<TransportProblem> {
    let m = grid.len();
    if graph.vertices != m || rates.edge_count != grid.edges().len() {
        return Err(Error::Dimension("graph and rates were not built on this grid".into()));
    }
    if rates.has_drift() && rates.drift.len() != time.steps() {
        return Err(Error::Dimension(format!(
            "drift rates cover {} steps, time grid has {}",
            rates.drift.len(),
            time.steps()
        )));
    }
    check_measure(mu0, m, "mu0")?;
    check_measure(mu1, m, "mu1")?;
    let mut report = validate_problem_hypotheses(graph, !rates.has_drift());
    report.flag_measures(mu0, mu1);
    let layout = layout::Layout::new(grid, graph, rates, time);
    Ok(TransportProblem {
        grid: grid.clone(),
        graph: graph.clone(),
        rates: rates.clone(),
        mu0: mu0.to_vec(),
        mu1: mu1.to_vec(),
        time,
        options: SolverOptions::default(),
        report,
        layout,
    })
}

/// Build rates and graph for `system` on `grid` and assemble.
pub fn assemble_for_system(
    system: &dyn ControlAffineSystem,
    grid: &Grid,
    mu0: &[f64],
    mu1: &[f64],
    time: TimeGrid,
    quadrature_order: usize,
) -> Result<TransportProblem> {
    let rates = build_rates(system, grid, &time, quadrature_order)?;
    let graph = build_graph(grid, &rates);
    assemble(grid, &graph, &rates, mu0, mu1, time)
}

impl TransportProblem {
    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.layout.arcs
    }

    /// Number of optimization variables: masses at every node plus fluxes
    /// on every arc and step.
    pub fn variable_count(&self) -> usize {
        (self.time.k + 1) * self.grid.len() + self.time.k * self.layout.arcs.len()
    }

    /// Max-norm residual of the discrete continuity equation, including the
    /// endpoint pins.
    pub fn continuity_residual(&self, density: &[Vec<f64>], flux: &[Vec<f64>]) -> f64 {
        self.layout.continuity_residual(density, flux, &self.mu0, &self.mu1)
    }

    /// Discrete objective of a (density, flux) pair.
    pub fn objective(&self, density: &[Vec<f64>], flux: &[Vec<f64>]) -> f64 {
        let dt = self.time.dt();
        let mut total = 0.0;
        for j in 0..self.time.k {
            for (a, arc) in self.layout.arcs.iter().enumerate() {
                let f = flux[j][a];
                total += prox::perspective(f, density[j][arc.tail]) + prox::perspective(f, density[j + 1][arc.head]);
            }
        }
        dt * total
    }

    /// Run the splitting solver. Refuses when the well-posedness checks
    /// failed and no override is set.
    pub fn solve(&self) -> Result<Solution> {
        if !self.report.passed && !self.options.override_hypotheses {
            return Err(Error::Hypotheses(self.report.summary()));
        }
        Ok(solver::solve(self))
    }

    /// Arcs grouped as `(channel, sign)` for reporting.
    pub fn arc_label(&self, a: usize) -> (usize, Sign) {
        let arc = &self.layout.arcs[a];
        (arc.channel, arc.sign)
    }
}

/// One row of a horizon sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub tf: f64,
    pub k: usize,
    pub cost: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Independent solves over a list of horizons with fixed step `dt`.
pub fn cost_sweep(
    system: &dyn ControlAffineSystem,
    grid: &Grid,
    mu0: &[f64],
    mu1: &[f64],
    horizons: &[f64],
    dt: f64,
    options: SolverOptions,
    quadrature_order: usize,
) -> Result<Vec<SweepRow>> {
    horizons
        .iter()
        .map(|&tf| {
            let time = TimeGrid::from_step(0.0, tf, dt)?;
            let problem =
                assemble_for_system(system, grid, mu0, mu1, time, quadrature_order)?.with_options(options);
            let sol = problem.solve()?;
            let d = &sol.diagnostics;
            Ok(SweepRow {
                tf,
                k: time.k,
                cost: sol.cost,
                iterations: d.iterations,
                residual: d.primal_residual.max(d.dual_residual).max(d.continuity_residual),
                converged: d.converged,
            })
        })
        .collect()
}
