//! TOML run configuration.
//!
//! ```toml
//! output = "runs/grushin"
//! seed = 0
//! quadrature_order = 3
//!
//! [scenario]
//! name = "grushin"
//!
//! [grid]
//! dims = [100, 100]
//! # bounds and periodic default to the scenario domain
//!
//! [time]
//! tf = 1.0
//! k = 75          # or: dt = 0.025
//!
//! [mu0]
//! kind = "disk"
//! center = [0.0, 0.8]
//! radius = 0.15
//!
//! [mu1]
//! kind = "delta"
//! point = [0.0, 0.0]
//!
//! [solver]        # any SolverOptions field
//! tol = 1e-5
//!
//! [particles]
//! per_box = 4
//!
//! [sweep]
//! horizons = [1.0, 2.0, 5.0]
//! dt = 0.025
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{ParticleOptions, Seeding};
use crate::fields::{make_scenario, ControlAffineSystem, Domain, Scenario, ScenarioParams};
use crate::geometry::{build_grid, Grid};
use crate::transport::{normalize_measure, SolverOptions, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    pub scenario: ScenarioConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub mu0: MeasureSpec,
    pub mu1: MeasureSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub particles: ParticleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_order() -> usize {
    crate::generator::DEFAULT_QUADRATURE_ORDER
}

/// Unknown keys are rejected by the flattened parameter struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(flatten)]
    pub params: ScenarioParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    pub tf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

/// Endpoint measure. Every kind is normalized to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Uniform over listed box indices.
    Boxes { indices: Vec<usize> },
    /// Uniform over boxes whose centers lie in `[lower, upper]`.
    Region { lower: Vec<f64>, upper: Vec<f64> },
    /// Uniform over boxes whose centers lie strictly inside the ball.
    Disk { center: Vec<f64>, radius: f64 },
    /// All mass in the box containing `point`.
    Delta { point: Vec<f64> },
    /// Uniform over the boxes containing the listed points.
    Points { points: Vec<Vec<f64>> },
    /// One mass per box, whitespace or comma separated.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleConfig {
    pub per_box: usize,
    pub substeps: usize,
    /// Random seeding with the run seed instead of a lattice.
    pub random: bool,
    pub record: bool,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        let d = ParticleOptions::default();
        Self { per_box: d.per_box, substeps: d.substeps, random: false, record: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub horizons: Vec<f64>,
    pub dt: f64,
}

/// Parse and validate a config. TOML syntax errors carry line and column;
/// validation errors carry the field path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let path = e.span().map(|s| location(text, s.start)).unwrap_or_default();
        Error::config(path, e.message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn location(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    format!("line {line}, column {col}")
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let system = self.system()?;
        let d = system.dim();
        if self.grid.dims.len() != d {
            return Err(Error::config("grid.dims", format!("expected {d} entries, got {}", self.grid.dims.len())));
        }
        if let Some(b) = &self.grid.bounds {
            if b.len() != d {
                return Err(Error::config("grid.bounds", format!("expected {d} intervals")));
            }
        }
        if let Some(p) = &self.grid.periodic {
            if p.len() != d {
                return Err(Error::config("grid.periodic", format!("expected {d} flags")));
            }
        }
        self.grid()?;
        self.time_grid()?;
        if self.quadrature_order == 0 {
            return Err(Error::config("quadrature_order", "must be at least 1"));
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if !(s.relaxation > 0.0 && s.relaxation < 2.0) {
            return Err(Error::config("solver.relaxation", "must lie in (0, 2)"));
        }
        if !(s.prox_step > 0.0) {
            return Err(Error::config("solver.prox_step", "must be positive"));
        }
        if s.max_iters == 0 {
            return Err(Error::config("solver.max_iters", "must be at least 1"));
        }
        if self.particles.per_box == 0 || self.particles.substeps == 0 {
            return Err(Error::config("particles", "per_box and substeps must be at least 1"));
        }
        if let Some(sw) = &self.sweep {
            if sw.horizons.is_empty() || sw.horizons.iter().any(|&h| !(h > self.time.t0)) {
                return Err(Error::config("sweep.horizons", "need at least one horizon after t0"));
            }
            for &h in &sw.horizons {
                TimeGrid::from_step(self.time.t0, h, sw.dt).map_err(|e| Error::config("sweep.dt", e.to_string()))?;
            }
        }
        // Measure specs are checked against the grid only when files are
        // not involved, so that validation stays free of I/O.
        let grid = self.grid()?;
        for (name, spec) in [("mu0", &self.mu0), ("mu1", &self.mu1)] {
            if !matches!(spec, MeasureSpec::File { .. }) {
                spec.masses(&grid).map_err(|e| Error::config(name, e.to_string()))?;
            }
        }
        Ok(())
    }

    /// The scenario with its domain replaced by the grid bounds.
    pub fn system(&self) -> Result<Scenario> {
        let s = make_scenario(&self.scenario.name, &self.scenario.params)
            .map_err(|e| Error::config("scenario", e.to_string()))?;
        let dom = s.domain().clone();
        let bounds = self.grid.bounds.clone().unwrap_or(dom.bounds);
        let periodic = self.grid.periodic.clone().unwrap_or(dom.periodic);
        Ok(s.with_domain(Domain::new(bounds, periodic)))
    }

    pub fn grid(&self) -> Result<Grid> {
        let s = self.system()?;
        let dom = s.domain();
        build_grid(&self.grid.dims, &dom.bounds, &dom.periodic).map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let t = &self.time;
        let out = match (t.k, t.dt) {
            (Some(k), None) => TimeGrid::new(t.t0, t.tf, k),
            (None, Some(dt)) => TimeGrid::from_step(t.t0, t.tf, dt),
            (Some(k), Some(dt)) => {
                let g = TimeGrid::new(t.t0, t.tf, k)?;
                if (g.dt() - dt).abs() > 1e-12 * dt.abs() {
                    return Err(Error::config("time", format!("k = {k} and dt = {dt} disagree")));
                }
                Ok(g)
            }
            (None, None) => return Err(Error::config("time", "give k or dt")),
        };
        out.map_err(|e| Error::config("time", e.to_string()))
    }

    pub fn particle_options(&self) -> ParticleOptions {
        ParticleOptions {
            per_box: self.particles.per_box,
            substeps: self.particles.substeps,
            seeding: if self.particles.random { Seeding::Random { seed: self.seed } } else { Seeding::Lattice },
            record: self.particles.record,
        }
    }

    /// Normalized endpoint measures and their raw masses.
    pub fn measures(&self, grid: &Grid) -> Result<[(Vec<f64>, f64); 2]> {
        let a = self.mu0.masses(grid).map_err(|e| Error::config("mu0", e.to_string()))?;
        let b = self.mu1.masses(grid).map_err(|e| Error::config("mu1", e.to_string()))?;
        Ok([a, b])
    }
}

impl MeasureSpec {
    /// Normalized box masses and the raw total before normalization.
    pub fn masses(&self, grid: &Grid) -> Result<(Vec<f64>, f64)> {
        let m = grid.len();
        let d = grid.dim();
        let check_dim = |x: &[f64], what: &str| -> Result<()> {
            if x.len() == d {
                Ok(())
            } else {
                Err(Error::Dimension(format!("{what} has {} coordinates, grid has {d}", x.len())))
            }
        };
        let mut mu = vec![0.0; m];
        match self {
            MeasureSpec::Boxes { indices } => {
                for &i in indices {
                    if i >= m {
                        return Err(Error::Measure(format!("box {i} out of range (m = {m})")));
                    }
                    mu[i] = 1.0;
                }
            }
            MeasureSpec::Region { lower, upper } => {
                check_dim(lower, "lower")?;
                check_dim(upper, "upper")?;
                for (v, x) in mu.iter_mut().enumerate() {
                    let c = grid.box_center(v);
                    if (0..d).all(|a| c[a] >= lower[a] && c[a] <= upper[a]) {
                        *x = 1.0;
                    }
                }
            }
            MeasureSpec::Disk { center, radius } => {
                check_dim(center, "center")?;
                for (v, x) in mu.iter_mut().enumerate() {
                    let c = grid.box_center(v);
                    let r2: f64 = (0..d).map(|a| (c[a] - center[a]).powi(2)).sum();
                    if r2 < radius * radius {
                        *x = 1.0;
                    }
                }
            }
            MeasureSpec::Delta { point } => {
                check_dim(point, "point")?;
                mu[grid.locate(point)?] = 1.0;
            }
            MeasureSpec::Points { points } => {
                for p in points {
                    check_dim(p, "point")?;
                    mu[grid.locate(p)?] = 1.0;
                }
            }
            MeasureSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let values: std::result::Result<Vec<f64>, _> =
                    text.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).map(str::parse).collect();
                let values = values.map_err(|e| Error::Measure(format!("{}: {e}", path.display())))?;
                if values.len() != m {
                    return Err(Error::Measure(format!("{} has {} values, grid has {m} boxes", path.display(), values.len())));
                }
                mu = values;
            }
        }
        let (mu, total) = normalize_measure(&mu)?;
        if matches!(self, MeasureSpec::File { .. }) && (total - 1.0).abs() > 1e-6 {
            log::warn!("measure file mass {total} renormalized to 1");
        }
        Ok((mu, total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRUSHIN: &str = r#"
[scenario]
name = "grushin"

[grid]
dims = [100, 100]

[time]
tf = 1.0
k = 75

[mu0]
kind = "disk"
center = [0.0, 0.8]
radius = 0.15

[mu1]
kind = "delta"
point = [0.0, 0.0]
"#;

    #[test]
    fn grushin_config() {
        let c = parse_config(GRUSHIN).unwrap();
        let g = c.grid().unwrap();
        assert_eq!(g.len(), 10_000);
        assert_eq!(c.time_grid().unwrap().k, 75);
        let [(mu0, _), (mu1, _)] = c.measures(&g).unwrap();
        assert_eq!(mu1.iter().filter(|&&x| x > 0.0).count(), 1);
        assert!(mu0.iter().filter(|&&x| x > 0.0).count() > 100);
    }

    #[test]
    fn round_trip() {
        let c = parse_config(GRUSHIN).unwrap();
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn double_gyre_step() {
        let text = r#"
[scenario]
name = "double_gyre"
amplitude = 0.25
beta = 0.25
omega = 6.283185307179586
[grid]
dims = [60, 30]
[time]
tf = 10.0
dt = 0.025
[mu0]
kind = "region"
lower = [0.0, 0.0]
upper = [1.0, 1.0]
[mu1]
kind = "region"
lower = [1.0, 0.0]
upper = [2.0, 1.0]
"#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.time_grid().unwrap().k, 400);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = GRUSHIN.replace("k = 75", "k = 75\nspeed = 3");
        let e = parse_config(&bad).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
        let bad = GRUSHIN.replace("dims = [100, 100]", "dims = [100]");
        let e = parse_config(&bad).unwrap_err().to_string();
        assert!(e.contains("grid.dims"), "{e}");
        let bad = GRUSHIN.replace("radius = 0.15", "radius = 0.15\ncolor = 1");
        assert!(parse_config(&bad).is_err());
        let bad = GRUSHIN.replace("[mu1]", "[solver]\nrelaxation = 2.5\n[mu1]");
        let e = parse_config(&bad).unwrap_err().to_string();
        assert!(e.contains("solver.relaxation"), "{e}");
    }
}
