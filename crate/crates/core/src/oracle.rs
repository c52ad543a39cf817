//! Reference computations that share no code with the transport solver:
//! closed-form Grushin geodesics, a dense barrier-Newton solver for tiny
//! graph transport instances, and Wasserstein distances of translations.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::RateSet;
use crate::graph::TransportGraph;

/// `sin(z) / z`.
fn sinc(z: f64) -> f64 {
    if z.abs() < 0.5 {
        series(z, 1)
    } else {
        z.sin() / z
    }
}

fn sinc_prime(z: f64) -> f64 {
    if z.abs() < 0.5 {
        series_prime(z, 1)
    } else {
        (z * z.cos() - z.sin()) / (z * z)
    }
}

/// `(z - sin z) / z^3`.
fn cubic_sine(z: f64) -> f64 {
    if z.abs() < 0.5 {
        series(z, 3)
    } else {
        (z - z.sin()) / (z * z * z)
    }
}

fn cubic_sine_prime(z: f64) -> f64 {
    if z.abs() < 0.5 {
        series_prime(z, 3)
    } else {
        (1.0 - z.cos()) / (z * z * z) - 3.0 * (z - z.sin()) / (z * z * z * z)
    }
}

/// `sum_n (-1)^n z^(2n) / (2n + offset)!`.
fn series(z: f64, offset: u32) -> f64 {
    let z2 = z * z;
    let mut term = 1.0 / factorial(offset);
    let mut sum = term;
    for n in 1..14u32 {
        term *= -z2 / f64::from((2 * n + offset - 1) * (2 * n + offset));
        sum += term;
    }
    sum
}

fn series_prime(z: f64, offset: u32) -> f64 {
    let z2 = z * z;
    let mut term = 1.0 / factorial(offset);
    let mut sum = 0.0;
    for n in 1..14u32 {
        term *= -z2 / f64::from((2 * n + offset - 1) * (2 * n + offset));
        sum += 2.0 * f64::from(n) * term / z;
    }
    if z == 0.0 {
        0.0
    } else {
        sum
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Grushin geodesic reaching `(0, alpha)` at `t = 1`:
/// `x1 = (a / b) sin(b (1 - t))`,
/// `x2 = a^2 / (4 b^2) (2 b (1 - t) - sin(2 b (1 - t))) + alpha`.
/// Evaluated through series near `b = 0`, where it becomes the straight
/// line `x1 = a (1 - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrushinGeodesic {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl GrushinGeodesic {
    pub fn point(&self, t: f64) -> [f64; 2] {
        let s = 1.0 - t;
        let (a, b) = (self.a, self.b);
        [a * s * sinc(b * s), 2.0 * a * a * b * s * s * s * cubic_sine(2.0 * b * s) + self.alpha]
    }

    /// Controls `(u1, u2)` along the path; `|u| = |a|` throughout.
    pub fn controls(&self, t: f64) -> [f64; 2] {
        let z = self.b * (1.0 - t);
        [-self.a * z.cos(), -self.a * z.sin()]
    }

    /// Control energy over `[0, 1]`, the squared sub-Riemannian distance
    /// when the path is minimizing.
    pub fn cost(&self) -> f64 {
        self.a * self.a
    }

    /// Minimizing on `[0, 1]` when `|b| <= pi`.
    pub fn is_minimizing(&self) -> bool {
        self.b.abs() <= std::f64::consts::PI
    }

    fn start_and_jacobian(a: f64, b: f64, alpha: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let g = GrushinGeodesic { a, b, alpha };
        let x = g.point(0.0);
        let h = cubic_sine(2.0 * b);
        let jac = [
            [sinc(b), a * sinc_prime(b)],
            [4.0 * a * b * h, 2.0 * a * a * (h + 2.0 * b * cubic_sine_prime(2.0 * b))],
        ];
        (x, jac)
    }
}

/// Find `(a, b)` whose geodesic starts at `start` and reaches `(0, alpha)`
/// at `t = 1`, by damped Newton from several starting guesses.
pub fn grushin_shoot(start: [f64; 2], alpha: f64) -> Result<GrushinGeodesic> {
    let [x1, x2] = start;
    let dy = x2 - alpha;
    if x1 == 0.0 && dy == 0.0 {
        return Ok(GrushinGeodesic { a: 0.0, b: 0.0, alpha });
    }
    let scale = 1.0 + x1.abs() + dy.abs();
    let pi = std::f64::consts::PI;
    // b carries the sign of x2 - alpha and a the sign of x1.
    let sign = if dy == 0.0 { 0.0 } else { dy.signum() };
    let mut best: Option<(f64, GrushinGeodesic)> = None;
    for &b0 in &[0.0, 0.5, 1.5, 2.5, 3.0, 3.1] {
        let (a0, b0) = if x1 == 0.0 { ((2.0 * pi * dy.abs()).sqrt(), 0.9 * pi * sign) } else { (x1 / sinc(b0 * sign), b0 * sign) };
        let (res, g) = newton_shoot(start, alpha, a0, b0);
        if res < 1e-12 * scale {
            return Ok(g);
        }
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, g));
        }
    }
    let (res, _) = best.expect("at least one start");
    Err(Error::Infeasible(format!("geodesic shooting to ({x1}, {x2}) stalled at residual {res:.3e}")))
}

fn newton_shoot(target: [f64; 2], alpha: f64, mut a: f64, mut b: f64) -> (f64, GrushinGeodesic) {
    let residual = |a: f64, b: f64| {
        let (x, _) = GrushinGeodesic::start_and_jacobian(a, b, alpha);
        [x[0] - target[0], x[1] - target[1]]
    };
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let mut r = residual(a, b);
    for _ in 0..200 {
        if norm(r) < 1e-15 {
            break;
        }
        let (_, j) = GrushinGeodesic::start_and_jacobian(a, b, alpha);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let da = -(j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let db = -(-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-8 {
            let (na, nb) = (a + step * da, b + step * db);
            // Stay on the branch of minimizing geodesics.
            if nb.abs() < 2.0 * std::f64::consts::PI {
                let nr = residual(na, nb);
                if norm(nr) < norm(r) {
                    a = na;
                    b = nb;
                    r = nr;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (norm(r), GrushinGeodesic { a, b, alpha })
}

/// Squared 2-Wasserstein distance of a rigid translation of a unit-mass
/// measure.
pub fn translation_wasserstein(displacement: &[f64]) -> f64 {
    displacement.iter().map(|d| d * d).sum()
}

/// A tiny graph transport instance in plain form.
#[derive(Debug, Clone)]
pub struct SmallInstance {
    pub m: usize,
    pub k: usize,
    pub dt: f64,
    /// `(tail, head, rate)` for every signed control arc.
    pub arcs: Vec<(usize, usize, f64)>,
    /// Drift transitions `(tail, head, rate)` per step; empty when driftless.
    pub drift: Vec<Vec<(usize, usize, f64)>>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl SmallInstance {
    pub fn from_rates(graph: &TransportGraph, rates: &RateSet, k: usize, dt: f64, mu0: &[f64], mu1: &[f64]) -> Self {
        let mut arcs = Vec::new();
        for i in 0..rates.channels() {
            for plus in [true, false] {
                let r = rates.control(i, plus);
                for (e, &(t, h)) in graph.edges.iter().enumerate() {
                    if r[e] > 0.0 {
                        arcs.push((t, h, r[e]));
                    }
                }
            }
        }
        let drift = rates
            .drift
            .iter()
            .map(|d| graph.edges.iter().zip(d).filter(|(_, &r)| r > 0.0).map(|(&(t, h), &r)| (t, h, r)).collect())
            .collect();
        Self { m: graph.vertices, k, dt, arcs, drift, mu0: mu0.to_vec(), mu1: mu1.to_vec() }
    }
}

/// Result of [`dense_small_ot`].
#[derive(Debug, Clone)]
pub struct DenseOptimum {
    pub cost: f64,
    /// `density[j][v]` for `j = 0..=k`.
    pub density: Vec<Vec<f64>>,
    /// `flux[j][a]` in the arc order of the instance.
    pub flux: Vec<Vec<f64>>,
    /// Upper bound on the optimality gap from the final barrier weight.
    pub gap: f64,
}

const MAX_DENSE_VERTICES: usize = 4;
const MAX_DENSE_STEPS: usize = 8;

/// Minimize the staggered transport cost of a tiny instance with a
/// log-barrier path-following Newton method on the dense KKT system.
pub fn dense_small_ot(inst: &SmallInstance) -> Result<DenseOptimum> {
    let (m, k) = (inst.m, inst.k);
    if m > MAX_DENSE_VERTICES || k > MAX_DENSE_STEPS || k == 0 {
        return Err(Error::Dimension(format!(
            "dense oracle takes at most {MAX_DENSE_VERTICES} vertices and 1..={MAX_DENSE_STEPS} steps"
        )));
    }
    let na = inst.arcs.len();
    // Variables: free masses mu_1..mu_{k-1}, then every flux not forced to
    // zero by an empty pinned endpoint.
    let mut mass_var = vec![vec![None; m]; k + 1];
    let mut n = 0;
    for row in mass_var.iter_mut().take(k).skip(1) {
        for slot in row.iter_mut() {
            *slot = Some(n);
            n += 1;
        }
    }
    let mut flux_var = vec![vec![None; na]; k];
    for (j, row) in flux_var.iter_mut().enumerate() {
        for (a, slot) in row.iter_mut().enumerate() {
            let (t, h, _) = inst.arcs[a];
            let dead = (j == 0 && inst.mu0[t] <= 0.0) || (j + 1 == k && inst.mu1[h] <= 0.0);
            if !dead {
                *slot = Some(n);
                n += 1;
            }
        }
    }
    let pinned = |j: usize, v: usize| -> f64 {
        if j == 0 {
            inst.mu0[v]
        } else {
            inst.mu1[v]
        }
    };

    // Continuity rows: mu_{j+1} - mu_j - dt A0 mu_j - dt sum rate J (e_h - e_t) = 0.
    let rows = k * m;
    let mut a_mat = DMatrix::<f64>::zeros(rows, n);
    let mut b = DVector::<f64>::zeros(rows);
    for j in 0..k {
        let r0 = j * m;
        for v in 0..m {
            match mass_var[j + 1][v] {
                Some(x) => a_mat[(r0 + v, x)] += 1.0,
                None => b[r0 + v] -= pinned(j + 1, v),
            }
            match mass_var[j][v] {
                Some(x) => a_mat[(r0 + v, x)] -= 1.0,
                None => b[r0 + v] += pinned(j, v),
            }
        }
        if let Some(drift) = inst.drift.get(j) {
            for &(t, h, r) in drift {
                let c = inst.dt * r;
                match mass_var[j][t] {
                    Some(x) => {
                        a_mat[(r0 + h, x)] -= c;
                        a_mat[(r0 + t, x)] += c;
                    }
                    None => {
                        b[r0 + h] += c * pinned(j, t);
                        b[r0 + t] -= c * pinned(j, t);
                    }
                }
            }
        }
        for (a, &(t, h, r)) in inst.arcs.iter().enumerate() {
            if let Some(x) = flux_var[j][a] {
                a_mat[(r0 + h, x)] -= inst.dt * r;
                a_mat[(r0 + t, x)] += inst.dt * r;
            }
        }
    }

    // Drop redundant rows: Gram-Schmidt (applied twice) turns the rows into
    // an orthonormal basis of the row space, carrying the right-hand side
    // along; dependent rows must agree with the rows they depend on.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..rows {
        let mut w = a_mat.row(i).transpose();
        let mut beta = b[i];
        let size = w.norm();
        for _ in 0..2 {
            for (q, &bq) in basis.iter().zip(&rhs) {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
                beta -= c * bq;
            }
        }
        let norm = w.norm();
        if norm > 1e-10 * size.max(1.0) {
            basis.push(w / norm);
            rhs.push(beta / norm);
        } else if beta.abs() > 1e-10 * (1.0 + b.amax()) {
            return Err(Error::Infeasible("continuity equations are inconsistent".into()));
        }
    }
    let rank = basis.len();
    let a_red = DMatrix::<f64>::from_fn(rank, n, |r, c| basis[r][c]);
    let b_red = DVector::<f64>::from_vec(rhs);

    // Strictly positive start: interpolated masses and unit fluxes.
    let mut x = DVector::<f64>::from_element(n, 1.0 / m as f64);
    for j in 1..k {
        let s = j as f64 / k as f64;
        for v in 0..m {
            if let Some(i) = mass_var[j][v] {
                x[i] = ((1.0 - s) * inst.mu0[v] + s * inst.mu1[v]).max(0.1 / m as f64);
            }
        }
    }
    let mut nu = DVector::<f64>::zeros(rank);

    let objective_parts = |x: &DVector<f64>| -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut f = 0.0;
        let mut g = DVector::<f64>::zeros(n);
        let mut h = DMatrix::<f64>::zeros(n, n);
        let c = 0.5 * inst.dt;
        for j in 0..k {
            for (a, &(t, hd, _)) in inst.arcs.iter().enumerate() {
                let Some(fj) = flux_var[j][a] else { continue };
                let jv = x[fj];
                for (jj, v) in [(j, t), (j + 1, hd)] {
                    match mass_var[jj][v] {
                        Some(mi) => {
                            let mu = x[mi];
                            f += c * jv * jv / mu;
                            g[fj] += 2.0 * c * jv / mu;
                            g[mi] -= c * jv * jv / (mu * mu);
                            h[(fj, fj)] += 2.0 * c / mu;
                            h[(fj, mi)] -= 2.0 * c * jv / (mu * mu);
                            h[(mi, fj)] -= 2.0 * c * jv / (mu * mu);
                            h[(mi, mi)] += 2.0 * c * jv * jv / (mu * mu * mu);
                        }
                        None => {
                            let mu = pinned(jj, v);
                            f += c * jv * jv / mu;
                            g[fj] += 2.0 * c * jv / mu;
                            h[(fj, fj)] += 2.0 * c / mu;
                        }
                    }
                }
            }
        }
        (f, g, h)
    };

    let mut tau = 1.0;
    loop {
        // Centering by infeasible-start Newton on f - tau sum log x.
        for _ in 0..200 {
            let (_, mut g, mut h) = objective_parts(&x);
            for i in 0..n {
                g[i] -= tau / x[i];
                h[(i, i)] += tau / (x[i] * x[i]);
            }
            let r_dual = &g + a_red.transpose() * &nu;
            let r_prim = &a_red * &x - &b_red;
            let norm0 = (r_dual.norm_squared() + r_prim.norm_squared()).sqrt();
            if norm0 < 1e-13 {
                break;
            }
            let dim = n + rank;
            let mut kkt = DMatrix::<f64>::zeros(dim, dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&h);
            kkt.view_mut((0, n), (n, rank)).copy_from(&a_red.transpose());
            kkt.view_mut((n, 0), (rank, n)).copy_from(&a_red);
            let mut rhs = DVector::<f64>::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&r_dual));
            rhs.rows_mut(n, rank).copy_from(&(-&r_prim));
            let Some(sol) = kkt.lu().solve(&rhs) else {
                return Err(Error::Infeasible("singular KKT system".into()));
            };
            let dx = sol.rows(0, n).into_owned();
            let dnu = sol.rows(n, rank).into_owned();
            let mut step = 1.0;
            while (0..n).any(|i| x[i] + step * dx[i] <= 0.0) {
                step *= 0.5;
            }
            let mut accepted = false;
            while step > 1e-14 {
                let xn = &x + step * &dx;
                let nun = &nu + step * &dnu;
                let (_, mut gn, _) = objective_parts(&xn);
                for i in 0..n {
                    gn[i] -= tau / xn[i];
                }
                let rd = &gn + a_red.transpose() * &nun;
                let rp = &a_red * &xn - &b_red;
                let norm1 = (rd.norm_squared() + rp.norm_squared()).sqrt();
                if norm1 <= (1.0 - 0.01 * step) * norm0 {
                    x = xn;
                    nu = nun;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if (&a_red * &x - &b_red).amax() > 1e-9 {
            return Err(Error::Infeasible("no strictly positive feasible point found".into()));
        }
        let (f, _, _) = objective_parts(&x);
        let gap = tau * n as f64;
        if gap <= 1e-11 * (1.0 + f) {
            break;
        }
        tau *= 0.2;
    }

    let (cost, _, _) = objective_parts(&x);
    let mut density = Vec::with_capacity(k + 1);
    for j in 0..=k {
        density.push((0..m).map(|v| mass_var[j][v].map_or_else(|| pinned(j, v), |i| x[i])).collect());
    }
    let flux = (0..k).map(|j| (0..na).map(|a| flux_var[j][a].map_or(0.0, |i| x[i])).collect()).collect();
    Ok(DenseOptimum { cost, density, flux, gap: tau * n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_match_closed_forms() {
        for &z in &[0.3, 0.49, 0.51, 0.8] {
            let h = 1e-6;
            assert!((series(z, 1) - z.sin() / z).abs() < 1e-14);
            assert!((series(z, 3) - (z - z.sin()) / (z * z * z)).abs() < 1e-11);
            let num = (cubic_sine(z + h) - cubic_sine(z - h)) / (2.0 * h);
            assert!((cubic_sine_prime(z) - num).abs() < 1e-8);
            let num = (sinc(z + h) - sinc(z - h)) / (2.0 * h);
            assert!((sinc_prime(z) - num).abs() < 1e-8);
        }
    }

    #[test]
    fn endpoint_is_target() {
        let g = GrushinGeodesic { a: 1.3, b: 2.1, alpha: -0.2 };
        assert_eq!(g.point(1.0), [0.0, -0.2]);
    }

    #[test]
    fn axis_start_gives_half_turn() {
        // b = pi lands x1(0) on the axis with x2(0) = alpha + a^2 / (2 pi).
        let a: f64 = 1.7;
        let start = [0.0, 0.1 + a * a / (2.0 * std::f64::consts::PI)];
        let g = grushin_shoot(start, 0.1).unwrap();
        assert!((g.b.abs() - std::f64::consts::PI).abs() < 1e-9);
        assert!((g.a.abs() - a).abs() < 1e-9);
    }

    #[test]
    fn two_vertex_single_step() {
        // J = 1 / (dt r) and cost dt J^2 / 2 (1 / 1 + 1 / 1).
        let inst = SmallInstance {
            m: 2,
            k: 1,
            dt: 1.0,
            arcs: vec![(0, 1, 1.0), (1, 0, 1.0)],
            drift: vec![],
            mu0: vec![1.0, 0.0],
            mu1: vec![0.0, 1.0],
        };
        let opt = dense_small_ot(&inst).unwrap();
        assert!((opt.cost - 1.0).abs() < 1e-9, "{}", opt.cost);
    }
}
