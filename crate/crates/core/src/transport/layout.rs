//! Index bookkeeping and the linear operators of the staggered problem.
//!
//! Unknowns are the interior masses `mu_1..mu_{k-1}` and the fluxes `J_j`
//! on every arc. All masses here are scaled so that the mean box mass is 1.

use serde::Serialize;

use crate::generator::RateSet;
use crate::geometry::Grid;
use crate::graph::{Sign, TransportGraph};

use super::TimeGrid;

/// A directed edge carrying flux for one signed control channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Arc {
    pub channel: usize,
    pub sign: Sign,
    pub edge: usize,
    pub tail: usize,
    pub head: usize,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub m: usize,
    pub k: usize,
    pub dt: f64,
    pub arcs: Vec<Arc>,
    /// Drift edges `(tail, head)` and their rates per step.
    pub drift_edges: Vec<(usize, usize)>,
    pub drift_rates: Vec<Vec<f64>>,
    /// Total drift outflow rate of every vertex per step.
    pub drift_out: Vec<Vec<f64>>,
}


impl Layout {
    pub fn new(grid: &Grid, graph: &TransportGraph, rates: &RateSet, time: TimeGrid) -> Self {
        let m = grid.len();
        let mut arcs = Vec::new();
        for i in 0..graph.channels() {
            for sign in Sign::BOTH {
                let r = rates.control(i, sign.is_plus());
                for &e in graph.channel(i, sign) {
                    let (tail, head) = graph.edges[e];
                    arcs.push(Arc { channel: i, sign, edge: e, tail, head, rate: r[e] });
                }
            }
        }
        let drift_edges: Vec<(usize, usize)> = graph.drift_edges.iter().map(|&e| graph.edges[e]).collect();
        let drift_rates: Vec<Vec<f64>> = rates
            .drift
            .iter()
            .map(|d| graph.drift_edges.iter().map(|&e| d[e]).collect())
            .collect();
        let drift_out = drift_rates
            .iter()
            .map(|r| {
                let mut out = vec![0.0; m];
                for (&(v, _), &re) in drift_edges.iter().zip(r) {
                    out[v] += re;
                }
                out
            })
            .collect();
        Self { m, k: time.k, dt: time.dt(), arcs, drift_edges, drift_rates, drift_out }
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn has_drift(&self) -> bool {
        !self.drift_rates.is_empty()
    }

    /// `out += dt * A0(t_j) mu` (mass convention).
    pub fn add_drift(&self, j: usize, mu: &[f64], out: &mut [f64]) {
        self.axpy_drift(j, self.dt, mu, out);
    }

    /// `out += scale * A0(t_j) mu`.
    fn axpy_drift(&self, j: usize, scale: f64, mu: &[f64], out: &mut [f64]) {
        if !self.has_drift() {
            return;
        }
        let dt = scale;
        for (&(v, w), &r) in self.drift_edges.iter().zip(&self.drift_rates[j]) {
            let f = dt * r * mu[v];
            out[w] += f;
            out[v] -= f;
        }
    }

    /// `out -= dt * A0(t_j)^T lam`.
    fn sub_drift_transpose(&self, j: usize, lam: &[f64], out: &mut [f64]) {
        if !self.has_drift() {
            return;
        }
        let dt = self.dt;
        for (&(v, w), &r) in self.drift_edges.iter().zip(&self.drift_rates[j]) {
            out[v] -= dt * r * (lam[w] - lam[v]);
        }
    }

    /// Residual `mu_{j+1} - mu_j - dt A0 mu_j - dt D^T(rate . J_j)` for one step.
    pub fn step_residual(&self, j: usize, mu_j: &[f64], mu_next: &[f64], flux: &[f64], out: &mut [f64]) {
        for v in 0..self.m {
            out[v] = mu_next[v] - mu_j[v];
        }
        self.axpy_drift(j, -self.dt, mu_j, out);
        for (arc, &f) in self.arcs.iter().zip(flux) {
            let q = self.dt * arc.rate * f;
            out[arc.head] -= q;
            out[arc.tail] += q;
        }
    }

    /// Max-norm continuity residual of a full trajectory, including the
    /// endpoint pins, in the units of `density`.
    pub fn continuity_residual(&self, density: &[Vec<f64>], flux: &[Vec<f64>], mu0: &[f64], mu1: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in density[0].iter().zip(mu0).chain(density[self.k].iter().zip(mu1)) {
            worst = worst.max((a - b).abs());
        }
        let mut res = vec![0.0; self.m];
        for j in 0..self.k {
            self.step_residual(j, &density[j], &density[j + 1], &flux[j], &mut res);
            worst = res.iter().fold(worst, |w, r| w.max(r.abs()));
        }
        worst
    }

    /// Right-hand side `d` of `C x = d` for scaled endpoint masses.
    pub fn rhs(&self, mu0: &[f64], mu1: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut d = vec![0.0; self.k * m];
        d[..m].copy_from_slice(mu0);
        self.add_drift(0, mu0, &mut d[..m]);
        let last = (self.k - 1) * m;
        for v in 0..m {
            d[last + v] -= mu1[v];
        }
        d
    }

    /// `C x` with `x = (mu_1..mu_{k-1}, J_0..J_{k-1})`.
    pub fn apply_c(&self, mu: &[f64], flux: &[f64], out: &mut [f64]) {
        let (m, k, na) = (self.m, self.k, self.arc_count());
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..k {
            let row = &mut out[j * m..(j + 1) * m];
            if j + 1 < k {
                row.copy_from_slice(&mu[j * m..(j + 1) * m]);
            }
            if j >= 1 {
                let mj = &mu[(j - 1) * m..j * m];
                for v in 0..m {
                    row[v] -= mj[v];
                }
                self.axpy_drift(j, -self.dt, mj, row);
            }
            for (arc, &f) in self.arcs.iter().zip(&flux[j * na..(j + 1) * na]) {
                let q = self.dt * arc.rate * f;
                row[arc.head] -= q;
                row[arc.tail] += q;
            }
        }
    }

    /// `C^T lam` split into mass and flux parts.
    pub fn apply_ct(&self, lam: &[f64], mu_out: &mut [f64], flux_out: &mut [f64]) {
        let (m, k, na) = (self.m, self.k, self.arc_count());
        for j in 1..k {
            let out = &mut mu_out[(j - 1) * m..j * m];
            let prev = &lam[(j - 1) * m..j * m];
            let cur = &lam[j * m..(j + 1) * m];
            for v in 0..m {
                out[v] = prev[v] - cur[v];
            }
            self.sub_drift_transpose(j, cur, out);
        }
        for j in 0..k {
            let l = &lam[j * m..(j + 1) * m];
            for (arc, o) in self.arcs.iter().zip(&mut flux_out[j * na..(j + 1) * na]) {
                *o = -self.dt * arc.rate * (l[arc.head] - l[arc.tail]);
            }
        }
    }

    /// Diagonal of `C Q^{-1} C^T` for a diagonal `Q` given by its mass part
    /// `q_mu` (one entry per free mass) and flux part `q_flux`.
    pub fn normal_diagonal(&self, q_mu: &[f64], q_flux: &[f64]) -> Vec<f64> {
        let (m, k, na) = (self.m, self.k, self.arc_count());
        let mut diag = vec![0.0; k * m];
        let dt = self.dt;
        for j in 0..k {
            let row = &mut diag[j * m..(j + 1) * m];
            if j + 1 < k {
                for v in 0..m {
                    row[v] += 1.0 / q_mu[j * m + v];
                }
            }
            if j >= 1 {
                let q = &q_mu[(j - 1) * m..j * m];
                for v in 0..m {
                    let out = if self.has_drift() { self.drift_out[j][v] } else { 0.0 };
                    row[v] += (1.0 - dt * out).powi(2) / q[v];
                }
                if self.has_drift() {
                    for (&(u, w), &r) in self.drift_edges.iter().zip(&self.drift_rates[j]) {
                        row[w] += (dt * r).powi(2) / q[u];
                    }
                }
            }
            for (arc, q) in self.arcs.iter().zip(&q_flux[j * na..(j + 1) * na]) {
                let c = (dt * arc.rate).powi(2) / q;
                row[arc.head] += c;
                row[arc.tail] += c;
            }
        }
        diag
    }

    /// Entries of `C Q^{-1} C^T` coupling row `(j, v)` with `(j + 1, v)`,
    /// for `j = 0..k-1`.
    pub fn normal_time_coupling(&self, q_mu: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut off = vec![0.0; (self.k - 1) * m];
        for j in 0..self.k - 1 {
            for v in 0..m {
                let out = if self.has_drift() { self.drift_out[j + 1][v] } else { 0.0 };
                off[j * m + v] = -(1.0 - self.dt * out) / q_mu[j * m + v];
            }
        }
        off
    }
}
