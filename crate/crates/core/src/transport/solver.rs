//! Douglas-Rachford splitting for the staggered transport problem.
//!
//! Each cell `(j, a)` keeps consensus copies `(J, mu_j(tail))` and
//! `(J, mu_{j+1}(head))` of the shared unknowns. The nonsmooth block is the
//! separable perspective cost on the copies; the linear block is the
//! affine set `{z = L x, C x = d}`, projected onto with a diagonal `Q = I +
//! L^T L` and a preconditioned conjugate-gradient solve on `C Q^{-1} C^T`.
//! The fixed-point iteration is accelerated with safeguarded Anderson
//! mixing.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::layout::Layout;
use super::prox::{perspective, prox_perspective_nonneg};
use super::{Diagnostics, Solution, TransportProblem};

/// Weight of the plain variables in the projection metric.
const X_WEIGHT: f64 = 1e-6;

/// CG tolerance relative to the current fixed-point residual.
const INNER_FACTOR: f64 = 0.3;

/// The splitting map together with its scratch space. The state vector is
/// `[mu_1..mu_{k-1}, J, cells]` with four copies
/// `[J, mu_j(tail), J, mu_{j+1}(head)]` per cell.
struct Splitting<'a> {
    lay: &'a Layout,
    nmu: usize,
    nflux: usize,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    d: Vec<f64>,
    pre_cond: TimeLines,
    lam: Vec<f64>,
    /// Prox step of every half cell, `[tail, head]` per cell.
    steps: Vec<f64>,
    /// Diagonal of `Q = eps I + L^T W L` with `W = diag(1 / steps)`.
    q_mu: Vec<f64>,
    q_flux: Vec<f64>,
    relaxation: f64,
    // latest prox and projection outputs
    zh: Vec<f64>,
    reflect: Vec<f64>,
    xp: Vec<f64>,
    zp: Vec<f64>,
    // scratch
    r: Vec<f64>,
    t_mu: Vec<f64>,
    t_flux: Vec<f64>,
    rows: Vec<f64>,
    res: Vec<f64>,
    pre: Vec<f64>,
    dir: Vec<f64>,
    sp: Vec<f64>,
}

struct Evaluation {
    cost: f64,
    cg_iters: usize,
    cg_residual: f64,
}

impl<'a> Splitting<'a> {
    fn new(lay: &'a Layout, mu0: Vec<f64>, mu1: Vec<f64>, step: f64, relaxation: f64) -> Self {
        let rows = lay.k * lay.m;
        let nmu = (lay.k - 1) * lay.m;
        let nflux = lay.k * lay.arc_count();
        let ncell = 4 * nflux;
        let d = lay.rhs(&mu0, &mu1);
        let mut me = Self {
            lay,
            nmu,
            nflux,
            mu0,
            mu1,
            d,
            pre_cond: TimeLines::empty(),
            lam: vec![0.0; rows],
            steps: vec![step; 2 * nflux],
            q_mu: vec![0.0; nmu],
            q_flux: vec![0.0; nflux],
            relaxation,
            zh: vec![0.0; ncell],
            reflect: vec![0.0; ncell],
            xp: vec![0.0; nmu + nflux],
            zp: vec![0.0; ncell],
            r: vec![0.0; nmu + nflux],
            t_mu: vec![0.0; nmu],
            t_flux: vec![0.0; nflux],
            rows: vec![0.0; rows],
            res: vec![0.0; rows],
            pre: vec![0.0; rows],
            dir: vec![0.0; rows],
            sp: vec![0.0; rows],
        };
        me.build_metric();
        me
    }

    /// Recompute `Q` and the preconditioner from `self.steps`.
    fn build_metric(&mut self) {
        let lay = self.lay;
        let (m, k, na) = (lay.m, lay.k, lay.arc_count());
        self.q_mu.iter_mut().for_each(|q| *q = X_WEIGHT);
        self.q_flux.iter_mut().for_each(|q| *q = X_WEIGHT);
        for j in 0..k {
            for (a, arc) in lay.arcs.iter().enumerate() {
                let c = j * na + a;
                let (wt, wh) = (1.0 / self.steps[2 * c], 1.0 / self.steps[2 * c + 1]);
                self.q_flux[c] += wt + wh;
                if j >= 1 {
                    self.q_mu[(j - 1) * m + arc.tail] += wt;
                }
                if j + 1 < k {
                    self.q_mu[j * m + arc.head] += wh;
                }
            }
        }
        let diag = lay.normal_diagonal(&self.q_mu, &self.q_flux);
        self.pre_cond = TimeLines::new(m, k, &diag, &lay.normal_time_coupling(&self.q_mu));
    }

    fn nx(&self) -> usize {
        self.nmu + self.nflux
    }

    fn len(&self) -> usize {
        self.nx() + 4 * self.nflux
    }

    /// Starting point: masses interpolated linearly between the endpoints,
    /// zero flux, consistent copies.
    fn initial(&self) -> Vec<f64> {
        let (m, k) = (self.lay.m, self.lay.k);
        let mut w = vec![0.0; self.len()];
        for j in 1..k {
            let s = j as f64 / k as f64;
            for v in 0..m {
                w[(j - 1) * m + v] = (1.0 - s) * self.mu0[v] + s * self.mu1[v];
            }
        }
        let (x, z) = w.split_at_mut(self.nx());
        self.lift(x, z);
        w
    }

    /// `out = C Q^{-1} C^T p`.
    fn apply_normal(&mut self, p: &[f64], out: &mut [f64]) {
        let lay = self.lay;
        lay.apply_ct(p, &mut self.t_mu, &mut self.t_flux);
        for (x, q) in self.t_mu.iter_mut().zip(&self.q_mu) {
            *x /= q;
        }
        for (x, q) in self.t_flux.iter_mut().zip(&self.q_flux) {
            *x /= q;
        }
        lay.apply_c(&self.t_mu, &self.t_flux, out);
    }

    /// `z = L x`, with pinned copies set to the endpoint masses.
    fn lift(&self, x: &[f64], z: &mut [f64]) {
        let lay = self.lay;
        let (m, k, na) = (lay.m, lay.k, lay.arc_count());
        let (x_mu, x_flux) = x.split_at(self.nmu);
        for j in 0..k {
            let tail_mu = if j == 0 { &self.mu0[..] } else { &x_mu[(j - 1) * m..j * m] };
            let head_mu = if j + 1 == k { &self.mu1[..] } else { &x_mu[j * m..(j + 1) * m] };
            let cells = z[4 * j * na..4 * (j + 1) * na].chunks_exact_mut(4);
            for ((arc, c), &f) in lay.arcs.iter().zip(cells).zip(&x_flux[j * na..(j + 1) * na]) {
                c.copy_from_slice(&[f, tail_mu[arc.tail], f, head_mu[arc.head]]);
            }
        }
    }

    /// Project `(xh, zh)` onto `{z = L x, C x = d}` into `self.xp`,
    /// `self.zp`.
    fn project(&mut self, xh: &[f64], zh: &[f64], cg_tol: f64, cg_max: usize) -> (usize, f64) {
        let lay = self.lay;
        let (m, k, na) = (lay.m, lay.k, lay.arc_count());
        let nmu = self.nmu;
        // r = Q^{-1} (eps xh + L^T W zh)
        for (r, x) in self.r.iter_mut().zip(xh) {
            *r = X_WEIGHT * x;
        }
        {
            let (r_mu, r_flux) = self.r.split_at_mut(nmu);
            for j in 0..k {
                let cells = zh[4 * j * na..4 * (j + 1) * na].chunks_exact(4);
                let steps = self.steps[2 * j * na..2 * (j + 1) * na].chunks_exact(2);
                for (((arc, c), rf), st) in lay.arcs.iter().zip(cells).zip(&mut r_flux[j * na..(j + 1) * na]).zip(steps) {
                    let (wt, wh) = (1.0 / st[0], 1.0 / st[1]);
                    if j >= 1 {
                        r_mu[(j - 1) * m + arc.tail] += wt * c[1];
                    }
                    if j + 1 < k {
                        r_mu[j * m + arc.head] += wh * c[3];
                    }
                    *rf += wt * c[0] + wh * c[2];
                }
            }
            for (x, q) in r_mu.iter_mut().zip(&self.q_mu) {
                *x /= q;
            }
            for (x, q) in r_flux.iter_mut().zip(&self.q_flux) {
                *x /= q;
            }
        }
        // rhs = d - C r
        let mut rows = std::mem::take(&mut self.rows);
        {
            let (r_mu, r_flux) = self.r.split_at(nmu);
            lay.apply_c(r_mu, r_flux, &mut rows);
        }
        for (r, d) in rows.iter_mut().zip(&self.d) {
            *r = d - *r;
        }
        let (iters, resid) = self.cg(&rows, cg_tol, cg_max);
        self.rows = rows;
        // x = r + Q^{-1} C^T lam
        let mut xp = std::mem::take(&mut self.xp);
        {
            let (x_mu, x_flux) = xp.split_at_mut(nmu);
            lay.apply_ct(&self.lam, x_mu, x_flux);
            let (r_mu, r_flux) = self.r.split_at(nmu);
            for ((x, q), t) in x_mu.iter_mut().zip(&self.q_mu).zip(r_mu) {
                *x = t + *x / q;
            }
            for ((x, q), t) in x_flux.iter_mut().zip(&self.q_flux).zip(r_flux) {
                *x = t + *x / q;
            }
        }
        let mut zp = std::mem::take(&mut self.zp);
        self.lift(&xp, &mut zp);
        self.xp = xp;
        self.zp = zp;
        (iters, resid)
    }

    /// Preconditioned CG on the normal matrix, warm-started from
    /// `self.lam`. Stops when the max-norm residual drops below `tol`.
    fn cg(&mut self, rhs: &[f64], tol: f64, max_iters: usize) -> (usize, f64) {
        let n = rhs.len();
        let mut lam = std::mem::take(&mut self.lam);
        let mut res = std::mem::take(&mut self.res);
        let mut pre = std::mem::take(&mut self.pre);
        let mut dir = std::mem::take(&mut self.dir);
        let mut sp = std::mem::take(&mut self.sp);
        self.apply_normal(&lam, &mut sp);
        for i in 0..n {
            res[i] = rhs[i] - sp[i];
        }
        let mut norm = max_abs(&res);
        let mut iters = 0;
        if norm > tol {
            self.pre_cond.apply(&res, &mut pre);
            dir.copy_from_slice(&pre);
            let mut rz = dot(&res, &pre);
            while iters < max_iters {
                iters += 1;
                self.apply_normal(&dir, &mut sp);
                let denom = dot(&dir, &sp);
                if denom <= 0.0 {
                    break;
                }
                let alpha = rz / denom;
                for i in 0..n {
                    lam[i] += alpha * dir[i];
                    res[i] -= alpha * sp[i];
                }
                norm = max_abs(&res);
                if norm <= tol {
                    break;
                }
                self.pre_cond.apply(&res, &mut pre);
                let rz_new = dot(&res, &pre);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..n {
                    dir[i] = pre[i] + beta * dir[i];
                }
            }
        }
        self.lam = lam;
        self.res = res;
        self.pre = pre;
        self.dir = dir;
        self.sp = sp;
        (iters, norm)
    }

    /// Largest eigenvalue of the normal matrix by power iteration.
    fn normal_norm(&mut self, iters: usize) -> f64 {
        let n = self.d.len();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
        let mut w = vec![0.0; n];
        let mut est = 0.0;
        for _ in 0..iters {
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            self.apply_normal(&v, &mut w);
            est = dot(&v, &w);
            std::mem::swap(&mut v, &mut w);
        }
        est
    }

    /// Per-cell prox of the perspective cost into `self.zh`; returns the
    /// cost of the result.
    fn prox(&mut self, w: &[f64]) -> f64 {
        let lay = self.lay;
        let (k, na) = (lay.k, lay.arc_count());
        let (mu0, mu1) = (&self.mu0, &self.mu1);
        let costs: Vec<f64> = self
            .zh
            .par_chunks_mut(4 * na)
            .zip(w.par_chunks(4 * na))
            .zip(self.steps.par_chunks(2 * na))
            .enumerate()
            .map(|(j, ((oc, wc), sc))| {
                let mut cost = 0.0;
                let cells = lay.arcs.iter().zip(oc.chunks_exact_mut(4)).zip(wc.chunks_exact(4)).zip(sc.chunks_exact(2));
                for (((arc, o), c), s) in cells {
                    let (a, alpha) = if j == 0 {
                        pinned_prox(c[0], mu0[arc.tail], s[0])
                    } else {
                        prox_perspective_nonneg(c[0], c[1], s[0])
                    };
                    let (b, beta) = if j + 1 == k {
                        pinned_prox(c[2], mu1[arc.head], s[1])
                    } else {
                        prox_perspective_nonneg(c[2], c[3], s[1])
                    };
                    o.copy_from_slice(&[a, alpha, b, beta]);
                    cost += perspective(a, alpha) + perspective(b, beta);
                }
                cost
            })
            .collect();
        lay.dt * costs.iter().sum::<f64>()
    }

    /// One application of the relaxed splitting map, `out = T(w)`.
    fn eval(&mut self, w: &[f64], out: &mut [f64], cg_tol: f64, cg_max: usize) -> Evaluation {
        let nx = self.nx();
        let (wx, wz) = w.split_at(nx);
        let cost = self.prox(wz);
        let mut reflect = std::mem::take(&mut self.reflect);
        for ((r, h), v) in reflect.iter_mut().zip(&self.zh).zip(wz) {
            *r = 2.0 * h - v;
        }
        let (cg_iters, cg_residual) = self.project(wx, &reflect, cg_tol, cg_max);
        self.reflect = reflect;
        let rho = self.relaxation;
        let (ox, oz) = out.split_at_mut(nx);
        for ((o, v), p) in ox.iter_mut().zip(wx).zip(&self.xp) {
            *o = v + rho * (p - v);
        }
        for (((o, v), p), h) in oz.iter_mut().zip(wz).zip(&self.zp).zip(&self.zh) {
            *o = v + rho * (p - h);
        }
        Evaluation { cost, cg_iters, cg_residual }
    }

    /// Max-norm continuity residual of `self.xp` after clamping to
    /// `J >= 0`, `mu >= 0`.
    fn clamped_residual(&self) -> f64 {
        let lay = self.lay;
        let (m, k, na) = (lay.m, lay.k, lay.arc_count());
        let (x_mu, x_flux) = self.xp.split_at(self.nmu);
        let mut res = vec![0.0; m];
        let mut worst: f64 = 0.0;
        let mut cur = self.mu0.clone();
        let mut next = vec![0.0; m];
        let mut flux = vec![0.0; na];
        for j in 0..k {
            if j + 1 == k {
                next.copy_from_slice(&self.mu1);
            } else {
                for (n, x) in next.iter_mut().zip(&x_mu[j * m..(j + 1) * m]) {
                    *n = x.max(0.0);
                }
            }
            for (f, x) in flux.iter_mut().zip(&x_flux[j * na..(j + 1) * na]) {
                *f = x.max(0.0);
            }
            lay.step_residual(j, &cur, &next, &flux, &mut res);
            worst = worst.max(max_abs(&res));
            std::mem::swap(&mut cur, &mut next);
        }
        worst
    }
}

/// Type-II Anderson mixing over a sliding window of past iterates.
struct Anderson {
    memory: usize,
    dw: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
    gram: VecDeque<Vec<f64>>,
    prev_w: Vec<f64>,
    prev_g: Vec<f64>,
    has_prev: bool,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            dw: VecDeque::new(),
            dg: VecDeque::new(),
            gram: VecDeque::new(),
            prev_w: Vec::new(),
            prev_g: Vec::new(),
            has_prev: false,
        }
    }

    fn reset(&mut self) {
        self.dw.clear();
        self.dg.clear();
        self.gram.clear();
        self.has_prev = false;
    }

    fn push(&mut self, w: &[f64], g: &[f64]) {
        if self.memory == 0 {
            return;
        }
        if self.has_prev {
            let (mut dw, mut dg) = if self.dw.len() == self.memory {
                self.gram.pop_front();
                for row in self.gram.iter_mut() {
                    row.remove(0);
                }
                (self.dw.pop_front().unwrap(), self.dg.pop_front().unwrap())
            } else {
                (vec![0.0; w.len()], vec![0.0; w.len()])
            };
            for i in 0..w.len() {
                dw[i] = w[i] - self.prev_w[i];
                dg[i] = g[i] - self.prev_g[i];
            }
            let row: Vec<f64> = self.dg.iter().map(|c| dot(c, &dg)).chain(std::iter::once(dot(&dg, &dg))).collect();
            for (r, &v) in self.gram.iter_mut().zip(&row) {
                r.push(v);
            }
            self.gram.push_back(row);
            self.dw.push_back(dw);
            self.dg.push_back(dg);
        } else {
            self.prev_w = vec![0.0; w.len()];
            self.prev_g = vec![0.0; w.len()];
        }
        self.prev_w.copy_from_slice(w);
        self.prev_g.copy_from_slice(g);
        self.has_prev = true;
    }

    /// `out = w + g - sum_i gamma_i (dw_i + dg_i)` with `gamma` the
    /// regularized least-squares fit of `g` by the `dg_i`.
    fn extrapolate(&self, w: &[f64], g: &[f64], out: &mut [f64]) -> bool {
        let n = self.dg.len();
        if n == 0 {
            return false;
        }
        let trace: f64 = (0..n).map(|i| self.gram[i][i]).sum();
        if !(trace > 0.0) {
            return false;
        }
        let reg = 1e-10 * trace;
        let a = DMatrix::from_fn(n, n, |i, j| self.gram[i][j] + if i == j { reg } else { 0.0 });
        let b = DVector::from_iterator(n, self.dg.iter().map(|c| dot(c, g)));
        let Some(chol) = a.cholesky() else {
            return false;
        };
        let gamma = chol.solve(&b);
        if gamma.iter().any(|x| !x.is_finite()) {
            return false;
        }
        for i in 0..w.len() {
            out[i] = w[i] + g[i];
        }
        for (c, (dw, dg)) in gamma.iter().zip(self.dw.iter().zip(&self.dg)) {
            for i in 0..w.len() {
                out[i] -= c * (dw[i] + dg[i]);
            }
        }
        true
    }
}

/// Exact inverse of the per-vertex tridiagonal-in-time part of the normal
/// matrix (Thomas algorithm), used as CG preconditioner.
struct TimeLines {
    m: usize,
    k: usize,
    off: Vec<f64>,
    inv_denom: Vec<f64>,
    upper: Vec<f64>,
}

impl TimeLines {
    fn empty() -> Self {
        Self { m: 0, k: 0, off: Vec::new(), inv_denom: Vec::new(), upper: Vec::new() }
    }

    fn new(m: usize, k: usize, diag: &[f64], off: &[f64]) -> Self {
        let mut inv_denom = vec![0.0; k * m];
        let mut upper = vec![0.0; (k - 1) * m];
        for v in 0..m {
            let mut prev = 0.0;
            for j in 0..k {
                let sub = if j > 0 { off[(j - 1) * m + v] } else { 0.0 };
                let denom = diag[j * m + v] - sub * prev;
                let inv = if denom > 0.0 { 1.0 / denom } else { 1.0 };
                inv_denom[j * m + v] = inv;
                if j + 1 < k {
                    prev = off[j * m + v] * inv;
                    upper[j * m + v] = prev;
                }
            }
        }
        Self { m, k, off: off.to_vec(), inv_denom, upper }
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        let (m, k) = (self.m, self.k);
        for v in 0..m {
            out[v] = r[v] * self.inv_denom[v];
        }
        for j in 1..k {
            let (done, rest) = out.split_at_mut(j * m);
            let prev = &done[(j - 1) * m..];
            for v in 0..m {
                rest[v] = (r[j * m + v] - self.off[(j - 1) * m + v] * prev[v]) * self.inv_denom[j * m + v];
            }
        }
        for j in (0..k - 1).rev() {
            let (head, tail) = out.split_at_mut((j + 1) * m);
            let next = &tail[..m];
            let cur = &mut head[j * m..];
            for v in 0..m {
                cur[v] -= self.upper[j * m + v] * next[v];
            }
        }
    }
}

/// Prox in the flux alone when the mass copy is fixed at `mass`.
fn pinned_prox(flux: f64, mass: f64, step: f64) -> (f64, f64) {
    if flux <= 0.0 || mass <= 0.0 {
        (0.0, mass)
    } else {
        (flux * mass / (mass + step), mass)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Fixed-size chunks keep the summation order independent of threading.
    a.chunks(4096).zip(b.chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn solve(problem: &TransportProblem) -> Solution {
    let start = Instant::now();
    let lay = &problem.layout;
    let opts = problem.options;
    let (m, k, na) = (lay.m, lay.k, lay.arc_count());
    let scale = m as f64;
    let mu0: Vec<f64> = problem.mu0.iter().map(|x| x * scale).collect();
    let mu1: Vec<f64> = problem.mu1.iter().map(|x| x * scale).collect();
    let mut map = Splitting::new(lay, mu0, mu1, opts.prox_step, opts.relaxation);
    let normal_norm = map.normal_norm(30);

    // Residuals are compared in scaled units.
    let tol = opts.tol * scale;
    let cg_floor = opts.cg_tol * tol;
    let rho = opts.relaxation;
    let check_every = opts.check_every.max(1);
    let nx = map.nx();

    let mut w = map.initial();
    let mut tw = vec![0.0; w.len()];
    let mut g = vec![0.0; w.len()];
    let mut fallback = vec![0.0; w.len()];
    let mut prev_x = w[..nx].to_vec();
    let mut aa = Anderson::new(opts.anderson_memory);
    let mut extrapolated = false;
    let mut g_ref = f64::INFINITY;

    let mut diag = Diagnostics { normal_matrix_norm: normal_norm, ..Default::default() };
    let mut cost = f64::INFINITY;
    let mut best: Option<f64> = None;
    // Inner solves only need to be as accurate as the outer iterate.
    let mut inner_tol = f64::INFINITY;

    for it in 1..=opts.max_iters {
        diag.iterations = it;
        let ev = map.eval(&w, &mut tw, cg_floor.max(inner_tol), opts.cg_max_iters);
        diag.cg_iterations += ev.cg_iters;
        cost = ev.cost;
        for i in 0..w.len() {
            g[i] = tw[i] - w[i];
        }
        let g_norm = dot(&g, &g).sqrt();
        if extrapolated && !(g_norm <= opts.anderson_safeguard * g_ref) {
            // The mixed point made things worse: fall back to the plain step.
            w.copy_from_slice(&fallback);
            aa.reset();
            extrapolated = false;
            diag.anderson_rejections += 1;
            continue;
        }
        let primal = max_abs(&g) / rho;
        inner_tol = INNER_FACTOR * primal;
        let dual = max_diff(&map.xp, &prev_x);
        prev_x.copy_from_slice(&map.xp);
        if it % check_every == 0 || it == opts.max_iters || primal < tol {
            let clamped = map.clamped_residual();
            let cont = clamped.max(ev.cg_residual);
            diag.primal_residual = primal / scale;
            diag.dual_residual = dual / scale;
            diag.continuity_residual = clamped / scale;
            if cont < tol {
                best = Some(best.map_or(cost, |b: f64| b.min(cost)));
            }
            if it % (check_every * 50) == 0 {
                log::debug!(
                    "iter {it}: cost {:.6e} primal {:.2e} dual {:.2e} continuity {:.2e}",
                    cost / scale,
                    primal / scale,
                    dual / scale,
                    cont / scale
                );
            }
            if primal < tol && dual < tol && cont < tol {
                diag.converged = true;
                break;
            }
        }
        g_ref = g_norm;
        aa.push(&w, &g);
        fallback.copy_from_slice(&tw);
        extrapolated = aa.extrapolate(&w, &g, &mut tw);
        std::mem::swap(&mut w, &mut tw);
    }

    let (x_mu, x_flux) = map.xp.split_at(map.nmu);
    let mut density = Vec::with_capacity(k + 1);
    density.push(problem.mu0.clone());
    for j in 1..k {
        density.push(x_mu[(j - 1) * m..j * m].iter().map(|x| x.max(0.0) / scale).collect());
    }
    density.push(problem.mu1.clone());
    let flux = (0..k).map(|j| x_flux[j * na..(j + 1) * na].iter().map(|x| x.max(0.0) / scale).collect()).collect();
    diag.best_feasible_cost = best.map(|b| b / scale);
    diag.seconds = start.elapsed().as_secs_f64();
    Solution { density, flux, arcs: lay.arcs.clone(), cost: cost / scale, diagnostics: diag }
}
