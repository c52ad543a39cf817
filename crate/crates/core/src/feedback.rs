//! Vertex feedback laws reconstructed from optimal fluxes, and controlled
//! particle simulation under those laws.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ControlAffineSystem;
use crate::geometry::Grid;
use crate::graph::Sign;
use crate::transport::{Solution, TimeGrid};

/// Piecewise-constant controls `u[j][i][v]` on boxes and time steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackField {
    pub steps: usize,
    pub channels: usize,
    pub vertices: usize,
    pub values: Vec<Vec<Vec<f64>>>,
    /// `neighborhood_size[i][s][v]` = |N_i^s(v)|, `s = 0` for `+`.
    pub neighborhood_size: Vec<[Vec<usize>; 2]>,
}

impl FeedbackField {
    pub fn value(&self, j: usize, channel: usize, v: usize) -> f64 {
        self.values[j][channel][v]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().flatten().all(|&u| u == 0.0)
    }

    /// CSV rows `step,vertex,u1,..,un`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.channels).map(|i| format!("u{i}")).collect();
        writeln!(w, "step,vertex,{}", header.join(","))?;
        for (j, step) in self.values.iter().enumerate() {
            for v in 0..self.vertices {
                write!(w, "{j},{v}")?;
                for ch in step {
                    write!(w, ",{:e}", ch[v])?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// `mean(plus) - mean(minus)`, with empty sides contributing 0.
pub fn combine_edge_controls(plus: &[f64], minus: &[f64]) -> f64 {
    let mean = |x: &[f64]| if x.is_empty() { 0.0 } else { x.iter().sum::<f64>() / x.len() as f64 };
    mean(plus) - mean(minus)
}

/// Average the edge controls `U = J / mu` leaving every vertex, per channel,
/// and take the `+` average minus the `-` average.
pub fn extract_feedback(solution: &Solution, channels: usize, vertices: usize) -> FeedbackField {
    let steps = solution.flux.len();
    let mut count = vec![[vec![0usize; vertices], vec![0usize; vertices]]; channels];
    for arc in &solution.arcs {
        count[arc.channel][side(arc.sign)][arc.tail] += 1;
    }
    let values = (0..steps)
        .map(|j| {
            let u = solution.edge_controls(j);
            let mut sums = vec![[vec![0.0; vertices], vec![0.0; vertices]]; channels];
            for (arc, &ua) in solution.arcs.iter().zip(&u) {
                sums[arc.channel][side(arc.sign)][arc.tail] += ua;
            }
            (0..channels)
                .map(|i| {
                    (0..vertices)
                        .map(|v| {
                            let mean = |s: usize| {
                                let n = count[i][s][v];
                                if n == 0 {
                                    0.0
                                } else {
                                    sums[i][s][v] / n as f64
                                }
                            };
                            mean(0) - mean(1)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    FeedbackField { steps, channels, vertices, values, neighborhood_size: count }
}

fn side(sign: Sign) -> usize {
    if sign.is_plus() {
        0
    } else {
        1
    }
}

/// How particles are placed inside each seeded box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Seeding {
    /// `p^(1/d)` points per axis at cell-centered lattice positions;
    /// `p` must be a perfect `d`-th power.
    Lattice,
    /// `p` uniform points per box from a seeded generator.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParticleOptions {
    pub per_box: usize,
    /// Integrator substeps per time step.
    pub substeps: usize,
    pub seeding: Seeding,
    /// Keep positions at every time node.
    pub record: bool,
}

impl Default for ParticleOptions {
    fn default() -> Self {
        Self { per_box: 4, substeps: 10, seeding: Seeding::Lattice, record: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Particle {
    pub start_box: usize,
    pub weight: f64,
    pub position: Vec<f64>,
    /// Set when the particle hit a non-periodic boundary and was clamped.
    pub clamped: bool,
    /// Positions at `t_0..t_k` when recording.
    pub trajectory: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParticleReport {
    pub particles: usize,
    /// Fraction of particles ending in the dilated target support.
    pub transported_fraction: f64,
    /// Same, weighted by the seeded mass.
    pub transported_mass: f64,
    pub clamped: usize,
    #[serde(skip)]
    pub ensemble: Vec<Particle>,
}

impl ParticleReport {
    /// CSV rows `particle,t,x1..xd` at the recorded time nodes.
    pub fn write_trajectories<W: Write>(&self, mut w: W, time: &TimeGrid) -> std::io::Result<()> {
        let d = self.ensemble.first().map_or(0, |p| p.position.len());
        let header: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
        writeln!(w, "particle,t,{}", header.join(","))?;
        for (id, p) in self.ensemble.iter().enumerate() {
            for (j, x) in p.trajectory.iter().enumerate() {
                write!(w, "{id},{}", time.node(j))?;
                for c in x {
                    write!(w, ",{c:e}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Seed particles in every box with positive mass.
pub fn seed_particles(grid: &Grid, mu0: &[f64], opts: &ParticleOptions) -> Result<Vec<Particle>> {
    let d = grid.dim();
    let p = opts.per_box;
    if p == 0 {
        return Err(Error::Dimension("need at least one particle per box".into()));
    }
    let per_axis = match opts.seeding {
        Seeding::Lattice => {
            let r = (p as f64).powf(1.0 / d as f64).round() as usize;
            if r.pow(d as u32) != p {
                return Err(Error::Dimension(format!("{p} particles per box is not a lattice in {d} dimensions")));
            }
            r
        }
        Seeding::Random { .. } => 0,
    };
    let mut rng = match opts.seeding {
        Seeding::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Seeding::Lattice => None,
    };
    let h = grid.spacing();
    let mut out = Vec::new();
    for (v, &mass) in mu0.iter().enumerate() {
        if mass <= 0.0 {
            continue;
        }
        let lower = grid.box_lower(v);
        for q in 0..p {
            let position: Vec<f64> = match rng.as_mut() {
                Some(rng) => (0..d).map(|a| lower[a] + rng.random::<f64>() * h[a]).collect(),
                None => {
                    let mut idx = q;
                    (0..d)
                        .map(|a| {
                            let i = idx % per_axis;
                            idx /= per_axis;
                            lower[a] + (i as f64 + 0.5) / per_axis as f64 * h[a]
                        })
                        .collect()
                }
            };
            out.push(Particle {
                start_box: v,
                weight: mass / p as f64,
                position,
                clamped: false,
                trajectory: Vec::new(),
            });
        }
    }
    Ok(out)
}

/// Boxes with positive mass plus every box touching one of them.
pub fn dilated_support(grid: &Grid, mu: &[f64]) -> Vec<bool> {
    let d = grid.dim();
    let mut mark = vec![false; grid.len()];
    for (v, &x) in mu.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        let mut frontier = vec![v];
        for a in 0..d {
            let mut next = Vec::with_capacity(frontier.len() * 3);
            for &u in &frontier {
                next.push(u);
                next.extend(grid.neighbor(u, a, -1));
                next.extend(grid.neighbor(u, a, 1));
            }
            frontier = next;
        }
        for u in frontier {
            mark[u] = true;
        }
    }
    mark
}

/// Integrate `x' = g0(x, t) + sum_i u_i(box(x), t_j) g_i(x)` with classical
/// RK4 over each step `[t_j, t_{j+1})`, holding the feedback constant.
pub fn simulate_particles(
    system: &dyn ControlAffineSystem,
    grid: &Grid,
    feedback: &FeedbackField,
    time: &TimeGrid,
    mu0: &[f64],
    mu1: &[f64],
    opts: &ParticleOptions,
) -> Result<ParticleReport> {
    if feedback.vertices != grid.len() || feedback.steps != time.k {
        return Err(Error::Dimension("feedback does not match grid or time grid".into()));
    }
    if system.dim() != grid.dim() || system.controls() != feedback.channels {
        return Err(Error::Dimension("system does not match feedback".into()));
    }
    let seeded = seed_particles(grid, mu0, opts)?;
    let target = dilated_support(grid, mu1);
    let substeps = opts.substeps.max(1);
    let h = time.dt() / substeps as f64;
    let d = grid.dim();
    let n = system.controls();

    let velocity = |x: &[f64], t: f64, j: usize, out: &mut [f64], tmp: &mut [f64]| {
        system.drift(x, t, out);
        let v = grid.locate(x).expect("positions are kept inside the domain");
        for i in 0..n {
            let u = feedback.values[j][i][v];
            if u != 0.0 {
                system.control(i, x, tmp);
                for a in 0..d {
                    out[a] += u * tmp[a];
                }
            }
        }
    };

    let ensemble: Vec<Particle> = seeded
        .into_par_iter()
        .map(|mut p| {
            let mut tmp = vec![0.0; d];
            let mut k1 = vec![0.0; d];
            let mut k2 = vec![0.0; d];
            let mut k3 = vec![0.0; d];
            let mut k4 = vec![0.0; d];
            let mut y = vec![0.0; d];
            let mut x = p.position.clone();
            if opts.record {
                p.trajectory.push(x.clone());
            }
            let keep_inside = |z: &mut [f64], flag: &mut bool| {
                grid.wrap(z);
                for a in 0..d {
                    if !grid.periodic()[a] {
                        let [lo, hi] = grid.bounds()[a];
                        if z[a] < lo || z[a] > hi {
                            *flag = true;
                            z[a] = z[a].clamp(lo, hi);
                        }
                    }
                }
            };
            for j in 0..time.k {
                for s in 0..substeps {
                    let t = time.node(j) + s as f64 * h;
                    velocity(&x, t, j, &mut k1, &mut tmp);
                    for a in 0..d {
                        y[a] = x[a] + 0.5 * h * k1[a];
                    }
                    keep_inside(&mut y, &mut p.clamped);
                    velocity(&y, t + 0.5 * h, j, &mut k2, &mut tmp);
                    for a in 0..d {
                        y[a] = x[a] + 0.5 * h * k2[a];
                    }
                    keep_inside(&mut y, &mut p.clamped);
                    velocity(&y, t + 0.5 * h, j, &mut k3, &mut tmp);
                    for a in 0..d {
                        y[a] = x[a] + h * k3[a];
                    }
                    keep_inside(&mut y, &mut p.clamped);
                    velocity(&y, t + h, j, &mut k4, &mut tmp);
                    for a in 0..d {
                        x[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
                    }
                    keep_inside(&mut x, &mut p.clamped);
                }
                if opts.record {
                    p.trajectory.push(x.clone());
                }
            }
            p.position = x;
            p
        })
        .collect();

    let mut hits = 0usize;
    let mut mass = 0.0;
    let mut total = 0.0;
    for p in &ensemble {
        total += p.weight;
        if target[grid.locate(&p.position)?] {
            hits += 1;
            mass += p.weight;
        }
    }
    let count = ensemble.len();
    Ok(ParticleReport {
        particles: count,
        transported_fraction: if count == 0 { 0.0 } else { hits as f64 / count as f64 },
        transported_mass: if total > 0.0 { mass / total } else { 0.0 },
        clamped: ensemble.iter().filter(|p| p.clamped).count(),
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    #[test]
    fn combine_matches_hand_values() {
        assert_eq!(combine_edge_controls(&[2.0], &[]), 2.0);
        assert_eq!(combine_edge_controls(&[2.0, 4.0], &[1.0]), 2.0);
        assert_eq!(combine_edge_controls(&[], &[]), 0.0);
    }

    #[test]
    fn lattice_seeding() {
        let g = build_grid(&[2, 2], &[[0.0, 1.0], [0.0, 1.0]], &[false, false]).unwrap();
        let mu = vec![1.0, 0.0, 0.0, 0.0];
        let ps = seed_particles(&g, &mu, &ParticleOptions::default()).unwrap();
        assert_eq!(ps.len(), 4);
        assert_eq!(ps[0].position, vec![0.125, 0.125]);
        assert_eq!(ps[3].position, vec![0.375, 0.375]);
        assert!(ps.iter().all(|p| (p.weight - 0.25).abs() < 1e-15));
        let bad = ParticleOptions { per_box: 3, ..Default::default() };
        assert!(seed_particles(&g, &mu, &bad).is_err());
    }

    #[test]
    fn dilation_covers_neighbors() {
        let g = build_grid(&[5, 5], &[[0.0, 1.0], [0.0, 1.0]], &[false, false]).unwrap();
        let mut mu = vec![0.0; 25];
        mu[0] = 1.0;
        let s = dilated_support(&g, &mu);
        assert_eq!(s.iter().filter(|&&b| b).count(), 4);
        mu[0] = 0.0;
        mu[12] = 1.0;
        assert_eq!(dilated_support(&g, &mu).iter().filter(|&&b| b).count(), 9);
    }
}
