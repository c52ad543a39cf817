//! Transition rates of the discretized continuity equation.
//!
//! The rate of edge `v -> w` for a field `g` is the outward normal flux of
//! `g` through the shared face, counted only where it points from `v` into
//! `w`, divided by the box volume. Rates act on box masses: the drift
//! generator has nonnegative off-diagonal entries and zero column sums.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::ControlAffineSystem;
use crate::geometry::{face_quadrature, Face, Grid};
use crate::transport::TimeGrid;

/// Default Gauss-Legendre points per face axis.
pub const DEFAULT_QUADRATURE_ORDER: usize = 3;

/// Rates below this are treated as zero.
pub const RATE_FLOOR: f64 = 1e-14;

/// Edge-indexed rates; edge indices follow [`Grid::edges`].
#[derive(Debug, Clone, PartialEq)]
pub struct RateSet {
    /// Drift rates per time step, frozen on `[t_j, t_{j+1})`. Empty when the
    /// system is driftless.
    pub drift: Vec<Vec<f64>>,
    /// `control_plus[i][e]` is A_i^+(e).
    pub control_plus: Vec<Vec<f64>>,
    /// `control_minus[i][e]` is A_i^-(e).
    pub control_minus: Vec<Vec<f64>>,
    pub edge_count: usize,
}

impl RateSet {
    pub fn channels(&self) -> usize {
        self.control_plus.len()
    }

    pub fn has_drift(&self) -> bool {
        !self.drift.is_empty()
    }

    /// Drift rates for step `j`, or `None` when driftless.
    pub fn drift_at(&self, j: usize) -> Option<&[f64]> {
        self.drift.get(j).map(Vec::as_slice)
    }

    /// Control rates of channel `i` and sign `plus`.
    pub fn control(&self, channel: usize, plus: bool) -> &[f64] {
        if plus {
            &self.control_plus[channel]
        } else {
            &self.control_minus[channel]
        }
    }
}

/// Apply the mass-convention generator built from `rates` to `mu`:
/// `out[v] = sum_{w->v} r mu[w] - sum_{v->w} r mu[v]`.
pub fn apply_generator(grid: &Grid, rates: &[f64], mu: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (e, edge) in grid.edges().iter().enumerate() {
        let flow = rates[e] * mu[edge.tail];
        out[edge.head] += flow;
        out[edge.tail] -= flow;
    }
}

/// Full m x m generator in mass convention as `(row, col, value)` triplets:
/// entry `(w, v)` is the rate of `v -> w`, diagonals hold minus the outflow.
pub fn generator_triplets(grid: &Grid, rates: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut diag = vec![0.0; grid.len()];
    let mut out = Vec::new();
    for (e, edge) in grid.edges().iter().enumerate() {
        if rates[e] != 0.0 {
            out.push((edge.head, edge.tail, rates[e]));
            diag[edge.tail] -= rates[e];
        }
    }
    out.extend(diag.iter().enumerate().filter(|(_, &d)| d != 0.0).map(|(v, &d)| (v, v, d)));
    out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    out
}

/// Write triplets as text: a `# m nnz` header then `row col value` lines.
pub fn write_triplets<W: Write>(mut w: W, m: usize, triplets: &[(usize, usize, f64)]) -> std::io::Result<()> {
    writeln!(w, "# m nnz")?;
    writeln!(w, "{m} {}", triplets.len())?;
    for (r, c, v) in triplets {
        writeln!(w, "{r} {c} {v:e}")?;
    }
    Ok(())
}

/// Positive and negative parts of the normal flux through a face, with the
/// normal taken along +axis as the face was built. Panels on which the
/// normal component changes sign are bisected so that the kink of
/// `max(g.n, 0)` does not spoil the Gauss rule.
fn face_flux<F>(face: &Face, order: usize, time: f64, field: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let free = face.lower.len().saturating_sub(1);
    let depth = match free {
        0 => 0,
        1 => 24,
        2 => 9,
        _ => 4,
    };
    let mut g = vec![0.0; face.lower.len()];
    let mut eval = |x: &[f64]| -> Result<f64> {
        field(x, &mut g);
        let gn = g[face.axis];
        if gn.is_finite() {
            Ok(gn)
        } else {
            Err(Error::NonFinite { point: x.to_vec(), time })
        }
    };
    let mut acc = (0.0, 0.0);
    panel_flux(face, order, depth, &mut eval, &mut acc)?;
    Ok(acc)
}

fn panel_flux<E>(panel: &Face, order: usize, depth: usize, eval: &mut E, acc: &mut (f64, f64)) -> Result<()>
where
    E: FnMut(&[f64]) -> Result<f64>,
{
    let q = face_quadrature(panel, order);
    let mut values = Vec::with_capacity(q.nodes.len());
    let (mut any_pos, mut any_neg) = (false, false);
    for x in &q.nodes {
        let gn = eval(x)?;
        any_pos |= gn > 0.0;
        any_neg |= gn < 0.0;
        values.push(gn);
    }
    let axes: Vec<usize> = (0..panel.lower.len()).filter(|&a| a != panel.axis).collect();
    if depth > 0 && !(any_pos && any_neg) {
        for corner in 0..1usize << axes.len() {
            let mut x = panel.lower.clone();
            for (bit, &a) in axes.iter().enumerate() {
                if corner >> bit & 1 == 1 {
                    x[a] = panel.upper[a];
                }
            }
            let gn = eval(&x)?;
            any_pos |= gn > 0.0;
            any_neg |= gn < 0.0;
        }
    }
    if depth > 0 && any_pos && any_neg {
        for child in 0..1usize << axes.len() {
            let mut sub = panel.clone();
            for (bit, &a) in axes.iter().enumerate() {
                let mid = 0.5 * (panel.lower[a] + panel.upper[a]);
                if child >> bit & 1 == 1 {
                    sub.lower[a] = mid;
                } else {
                    sub.upper[a] = mid;
                }
            }
            panel_flux(&sub, order, depth - 1, eval, acc)?;
        }
        return Ok(());
    }
    for (gn, w) in values.iter().zip(&q.weights) {
        if *gn > 0.0 {
            acc.0 += w * gn;
        } else {
            acc.1 -= w * gn;
        }
    }
    Ok(())
}

/// Turn per-face fluxes into edge rates: edge `v -> w` collects the flux
/// pointing from `v` to `w` over every face they share.
fn edge_rates(grid: &Grid, fluxes: &[(f64, f64)], flip: bool) -> Vec<f64> {
    let inv_vol = 1.0 / grid.box_volume();
    grid.edges()
        .iter()
        .map(|edge| {
            let total: f64 = edge
                .faces
                .iter()
                .map(|&(f, sign)| {
                    let (pos, neg) = fluxes[f];
                    let along = (sign > 0.0) != flip;
                    if along {
                        pos
                    } else {
                        neg
                    }
                })
                .sum();
            let r = total * inv_vol;
            if r < RATE_FLOOR {
                0.0
            } else {
                r
            }
        })
        .collect()
}

fn all_face_fluxes<F>(grid: &Grid, order: usize, time: f64, field: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    grid.faces().par_iter().map(|f| face_flux(f, order, time, &field)).collect()
}

/// Drift rates at the left endpoint of every time step.
pub fn build_drift_rates(
    system: &dyn ControlAffineSystem,
    grid: &Grid,
    time: &TimeGrid,
    order: usize,
) -> Result<Vec<Vec<f64>>> {
    check_dims(system, grid)?;
    if system.is_driftless() {
        return Ok(Vec::new());
    }
    (0..time.steps())
        .map(|j| {
            let t = time.node(j);
            let fluxes = all_face_fluxes(grid, order, t, |x, out| system.drift(x, t, out))?;
            Ok(edge_rates(grid, &fluxes, false))
        })
        .collect()
}

/// Signed control rates `(plus, minus)` per channel.
pub fn build_control_rates(
    system: &dyn ControlAffineSystem,
    grid: &Grid,
    order: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_dims(system, grid)?;
    let mut plus = Vec::with_capacity(system.controls());
    let mut minus = Vec::with_capacity(system.controls());
    for i in 0..system.controls() {
        let fluxes = all_face_fluxes(grid, order, 0.0, |x, out| system.control(i, x, out))?;
        plus.push(edge_rates(grid, &fluxes, false));
        minus.push(edge_rates(grid, &fluxes, true));
    }
    Ok((plus, minus))
}

/// Drift and control rates together.
pub fn build_rates(system: &dyn ControlAffineSystem, grid: &Grid, time: &TimeGrid, order: usize) -> Result<RateSet> {
    let drift = build_drift_rates(system, grid, time, order)?;
    let (control_plus, control_minus) = build_control_rates(system, grid, order)?;
    Ok(RateSet { drift, control_plus, control_minus, edge_count: grid.edges().len() })
}

fn check_dims(system: &dyn ControlAffineSystem, grid: &Grid) -> Result<()> {
    if system.dim() != grid.dim() {
        return Err(Error::Dimension(format!("system has dimension {}, grid {}", system.dim(), grid.dim())));
    }
    Ok(())
}

/// Largest `dt * (total outflow rate)` over boxes and steps. Values above 1
/// let the explicit drift update produce negative mass.
pub fn cfl_bound(grid: &Grid, rates: &RateSet, dt: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut out = vec![0.0; grid.len()];
    for drift in &rates.drift {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (e, edge) in grid.edges().iter().enumerate() {
            out[edge.tail] += drift[e];
        }
        worst = out.iter().fold(worst, |a, &b| a.max(b));
    }
    dt * worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_scenario, ScenarioParams};
    use crate::geometry::build_grid;

    fn scenario(name: &str) -> crate::fields::Scenario {
        make_scenario(name, &ScenarioParams::default()).unwrap()
    }

    fn constant(drift: Option<Vec<f64>>, controls: Vec<Vec<f64>>) -> crate::fields::Scenario {
        make_scenario("constant", &ScenarioParams { drift, controls: Some(controls), ..Default::default() }).unwrap()
    }

    #[test]
    fn zero_drift_gives_no_rates() {
        let g = build_grid(&[4, 4], &[[0.0, 1.0], [0.0, 1.0]], &[false, false]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let r = build_rates(&scenario("grushin"), &g, &tg, 3).unwrap();
        assert!(!r.has_drift());
        assert_eq!(cfl_bound(&g, &r, 0.25), 0.0);
    }

    #[test]
    fn constant_field_rates() {
        for n in [5usize, 10, 50, 100] {
            let g = build_grid(&[n, n], &[[-1.0, 1.0], [-1.0, 1.0]], &[false, false]).unwrap();
            let h = 2.0 / n as f64;
            let tg = TimeGrid::new(0.0, 1.0, 2).unwrap();
            let s = constant(Some(vec![1.0, 0.0]), vec![vec![0.0, 1.0]]);
            let r = build_rates(&s, &g, &tg, 3).unwrap();
            for (e, edge) in g.edges().iter().enumerate() {
                let dx = g.box_center(edge.head)[0] - g.box_center(edge.tail)[0];
                let expected = if dx > 0.0 { 1.0 / h } else { 0.0 };
                // Rates are (face length)/(box area) = h/h^2 up to rounding.
                assert!((r.drift[0][e] - expected).abs() <= 1e-12 * expected.max(1.0), "n={n}");
            }
        }
    }

    #[test]
    fn cfl_example() {
        let g = build_grid(&[100, 100], &[[-1.0, 1.0], [-1.0, 1.0]], &[false, false]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let s = constant(Some(vec![1.0, 0.0]), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = build_rates(&s, &g, &tg, 3).unwrap();
        let c = cfl_bound(&g, &r, tg.dt());
        assert!((c - 1.25).abs() < 1e-10, "{c}");
    }

    #[test]
    fn grushin_vertical_rate() {
        let g = build_grid(&[100, 100], &[[-1.0, 1.0], [-1.0, 1.0]], &[false, false]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let r = build_rates(&scenario("grushin"), &g, &tg, 3).unwrap();
        // Box column with x1 in [0.2, 0.22] is index 60; column [-0.22, -0.2] is 39.
        for (col, plus, minus) in [(60usize, 10.5, 0.0), (39, 0.0, 10.5)] {
            let v = g.linear_index(&[col, 50]);
            let w = g.linear_index(&[col, 51]);
            let e = g.edge_index(v, w).unwrap();
            assert!((r.control_plus[1][e] - plus).abs() < 1e-10);
            assert!((r.control_minus[1][e] - minus).abs() < 1e-10);
        }
    }

    #[test]
    fn unicycle_theta_rates() {
        let g = build_grid(&[8, 4, 4], &[[0.0, 2.0 * std::f64::consts::PI], [0.0, 1.0], [0.0, 1.0]], &[true, false, false])
            .unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let r = build_rates(&scenario("unicycle"), &g, &tg, 3).unwrap();
        let h = g.spacing()[0];
        for (e, edge) in g.edges().iter().enumerate() {
            let (mt, mh) = (g.multi_index(edge.tail), g.multi_index(edge.head));
            if mt[1] != mh[1] || mt[2] != mh[2] {
                assert_eq!(r.control_plus[0][e], 0.0);
                continue;
            }
            let forward = (mt[0] + 1) % 8 == mh[0];
            let expected = if forward { 1.0 / h } else { 0.0 };
            assert!((r.control_plus[0][e] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn double_gyre_boundary_faces_have_no_drift_flux() {
        let s = scenario("double_gyre");
        let mut out = [0.0; 2];
        // Quadrature on the domain boundary itself.
        for i in 0..60 {
            for y in [0.0, 1.0] {
                let face = Face {
                    left: 0,
                    right: 0,
                    axis: 1,
                    lower: vec![i as f64 / 30.0, y],
                    upper: vec![(i + 1) as f64 / 30.0, y],
                    orientation: 1.0,
                    wrap: false,
                };
                let (p, n) = face_flux(&face, 3, 0.0, |x, o| s.drift(x, 0.0, o)).unwrap();
                assert!(p <= 1e-10 && n <= 1e-10);
            }
        }
        for j in 0..30 {
            for x in [0.0, 2.0] {
                let face = Face {
                    left: 0,
                    right: 0,
                    axis: 0,
                    lower: vec![x, j as f64 / 30.0],
                    upper: vec![x, (j + 1) as f64 / 30.0],
                    orientation: 1.0,
                    wrap: false,
                };
                let (p, n) = face_flux(&face, 3, 0.0, |x, o| s.drift(x, 0.0, o)).unwrap();
                assert!(p <= 1e-10 && n <= 1e-10);
            }
        }
        s.drift(&[0.0, 0.3], 0.0, &mut out);
        assert!(out[0].abs() < 1e-15);
    }

    #[test]
    fn double_gyre_cfl_baseline() {
        let g = build_grid(&[60, 30], &[[0.0, 2.0], [0.0, 1.0]], &[false, false]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let r = build_rates(&scenario("double_gyre"), &g, &tg, 3).unwrap();
        let c = cfl_bound(&g, &r, tg.dt());
        // Regression baseline from this builder (3-point quadrature).
        assert!((c - DG_CFL_60X30).abs() < 1e-9, "{c}");
        assert!(c < 1.0);
    }

    const DG_CFL_60X30: f64 = 0.875095227606645;

    #[test]
    fn reversibility_and_unidirectionality() {
        for name in ["grushin", "unicycle", "double_gyre", "single_integrator"] {
            let s = scenario(name);
            let dom = s.domain().clone();
            let dims: Vec<usize> = (0..dom.bounds.len()).map(|a| if a == 0 { 6 } else { 5 }).collect();
            let g = build_grid(&dims, &dom.bounds, &dom.periodic).unwrap();
            let tg = TimeGrid::new(0.0, 1.0, 3).unwrap();
            let r = build_rates(&s, &g, &tg, 3).unwrap();
            let rev = g.reverse_edges();
            for i in 0..r.channels() {
                for e in 0..g.edges().len() {
                    assert_eq!(r.control_plus[i][e], r.control_minus[i][rev[e]]);
                    assert!(r.control_plus[i][e] >= 0.0 && r.control_minus[i][e] >= 0.0);
                }
            }
            for d in &r.drift {
                assert!(d.iter().all(|&x| x >= 0.0));
            }
        }
        // Grushin on a grid with x1 = 0 on a grid line: unidirectional.
        let g = build_grid(&[10, 10], &[[-1.0, 1.0], [-1.0, 1.0]], &[false, false]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let r = build_rates(&scenario("grushin"), &g, &tg, 3).unwrap();
        for i in 0..2 {
            for e in 0..g.edges().len() {
                assert_eq!(r.control_plus[i][e] * r.control_minus[i][e], 0.0);
            }
        }
    }

    #[test]
    fn quadrature_order_convergence() {
        let tg = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let cases = [
            ("grushin", vec![20usize, 20], 1e-10),
            ("unicycle", vec![25, 6, 6], 1e-8),
            ("double_gyre", vec![60, 30], 1e-6),
        ];
        for (name, dims, tol) in cases {
            let s = scenario(name);
            let dom = s.domain().clone();
            let g = build_grid(&dims, &dom.bounds, &dom.periodic).unwrap();
            let a = build_rates(&s, &g, &tg, 3).unwrap();
            let b = build_rates(&s, &g, &tg, 6).unwrap();
            let pairs = a
                .control_plus
                .iter()
                .chain(&a.control_minus)
                .chain(&a.drift)
                .zip(b.control_plus.iter().chain(&b.control_minus).chain(&b.drift));
            let worst = pairs
                .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
                .fold(0.0, f64::max);
            assert!(worst < tol, "{name}: {worst}");
        }
    }

    #[test]
    fn generator_columns_sum_to_zero() {
        let g = build_grid(&[12, 6], &[[0.0, 2.0], [0.0, 1.0]], &[false, false]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let r = build_rates(&scenario("double_gyre"), &g, &tg, 3).unwrap();
        for j in 0..5 {
            let trip = generator_triplets(&g, &r.drift[j]);
            let mut col = vec![0.0; g.len()];
            for (_, c, v) in &trip {
                col[*c] += v;
            }
            assert!(col.iter().all(|s| s.abs() < 1e-12));
        }
        let mut buf = Vec::new();
        write_triplets(&mut buf, g.len(), &generator_triplets(&g, &r.drift[0])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# m nnz\n72 "));
    }
}
