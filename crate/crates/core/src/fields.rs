//! Drift and control vector fields of control-affine systems
//! `x' = g0(x, t) + sum_i u_i g_i(x)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned state space, optionally periodic per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub bounds: Vec<[f64; 2]>,
    pub periodic: Vec<bool>,
}

impl Domain {
    pub fn new(bounds: Vec<[f64; 2]>, periodic: Vec<bool>) -> Self {
        Self { bounds, periodic }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![[0.0, 1.0]; dim], vec![false; dim])
    }
}

/// Pointwise evaluator of a control-affine system. Channels are numbered
/// from 0 here; user-facing output numbers them from 1.
pub trait ControlAffineSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn controls(&self) -> usize;
    fn domain(&self) -> &Domain;
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);
    fn control(&self, channel: usize, x: &[f64], out: &mut [f64]);
    /// True when the drift is identically zero.
    fn is_driftless(&self) -> bool;
    fn labels(&self) -> Vec<String> {
        (1..=self.controls()).map(|i| format!("u{i}")).collect()
    }
}

/// Parameters of the periodically forced double gyre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleGyreParams {
    pub amplitude: f64,
    pub beta: f64,
    pub omega: f64,
}

impl Default for DoubleGyreParams {
    fn default() -> Self {
        Self { amplitude: 0.25, beta: 0.25, omega: 2.0 * PI }
    }
}

impl DoubleGyreParams {
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Forcing `f(x, t) = beta sin(wt) x^2 + (1 - 2 beta sin(wt)) x` and its x-derivative.
    pub fn forcing(&self, x: f64, t: f64) -> (f64, f64) {
        let s = self.beta * (self.omega * t).sin();
        (s * x * x + (1.0 - 2.0 * s) * x, 2.0 * s * x + 1.0 - 2.0 * s)
    }
}

/// Built-in systems.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// `x' = u`, one unit control field per axis.
    SingleIntegrator { domain: Domain },
    /// `g1 = [1, 0]`, `g2 = [0, x1]`.
    Grushin { domain: Domain },
    /// Double gyre drift with unit control fields along both axes.
    DoubleGyre { params: DoubleGyreParams, domain: Domain },
    /// State `(theta, x, y)`: `g1 = [1, 0, 0]`, `g2 = [0, cos theta, sin theta]`.
    Unicycle { domain: Domain },
    /// Spatially constant drift and control fields.
    Constant { drift: Option<Vec<f64>>, controls: Vec<Vec<f64>>, domain: Domain },
}

/// Scenario name and numeric parameters as they appear in run configs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<Vec<f64>>>,
}

pub const SCENARIO_NAMES: [&str; 5] = ["single_integrator", "grushin", "double_gyre", "unicycle", "constant"];

/// Build one of the built-in systems by name.
pub fn make_scenario(name: &str, params: &ScenarioParams) -> Result<Scenario> {
    let reject = |field: &str, present: bool| -> Result<()> {
        if present {
            Err(Error::Scenario(format!("`{field}` does not apply to scenario `{name}`")))
        } else {
            Ok(())
        }
    };
    let no_gyre = |p: &ScenarioParams| -> Result<()> {
        reject("amplitude", p.amplitude.is_some())?;
        reject("beta", p.beta.is_some())?;
        reject("omega", p.omega.is_some())
    };
    let no_constant = |p: &ScenarioParams| -> Result<()> {
        reject("drift", p.drift.is_some())?;
        reject("controls", p.controls.is_some())
    };
    match name {
        "single_integrator" => {
            no_gyre(params)?;
            no_constant(params)?;
            let dim = params.dim.unwrap_or(2);
            if dim == 0 {
                return Err(Error::Scenario("single_integrator needs dim >= 1".into()));
            }
            Ok(Scenario::SingleIntegrator { domain: Domain::unit(dim) })
        }
        "grushin" => {
            no_gyre(params)?;
            no_constant(params)?;
            reject("dim", params.dim.is_some())?;
            Ok(Scenario::Grushin { domain: Domain::new(vec![[-1.0, 1.0]; 2], vec![false; 2]) })
        }
        "double_gyre" => {
            no_constant(params)?;
            reject("dim", params.dim.is_some())?;
            let d = DoubleGyreParams::default();
            let p = DoubleGyreParams {
                amplitude: params.amplitude.unwrap_or(d.amplitude),
                beta: params.beta.unwrap_or(d.beta),
                omega: params.omega.unwrap_or(d.omega),
            };
            if !(p.amplitude.is_finite() && p.beta.is_finite() && p.omega.is_finite()) || p.omega <= 0.0 {
                return Err(Error::Scenario("double_gyre needs finite parameters and omega > 0".into()));
            }
            Ok(Scenario::DoubleGyre { params: p, domain: Domain::new(vec![[0.0, 2.0], [0.0, 1.0]], vec![false; 2]) })
        }
        "unicycle" => {
            no_gyre(params)?;
            no_constant(params)?;
            reject("dim", params.dim.is_some())?;
            Ok(Scenario::Unicycle {
                domain: Domain::new(vec![[0.0, 2.0 * PI], [0.0, 1.0], [0.0, 1.0]], vec![true, false, false]),
            })
        }
        "constant" => {
            no_gyre(params)?;
            let controls = params
                .controls
                .clone()
                .ok_or_else(|| Error::Scenario("constant scenario needs `controls`".into()))?;
            let dim = controls.first().map(Vec::len).or(params.drift.as_ref().map(Vec::len)).unwrap_or(0);
            if dim == 0 {
                return Err(Error::Scenario("constant scenario needs at least one nonempty field".into()));
            }
            if let Some(d) = params.dim {
                if d != dim {
                    return Err(Error::Scenario(format!("dim = {d} but fields have length {dim}")));
                }
            }
            let fields = controls.iter().chain(params.drift.iter());
            for f in fields {
                if f.len() != dim || f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Scenario(format!("constant fields must be finite vectors of length {dim}")));
                }
            }
            Ok(Scenario::Constant { drift: params.drift.clone(), controls, domain: Domain::unit(dim) })
        }
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

impl Scenario {
    /// Replace the default state-space box, e.g. to match a grid.
    pub fn with_domain(mut self, new: Domain) -> Self {
        match &mut self {
            Scenario::SingleIntegrator { domain }
            | Scenario::Grushin { domain }
            | Scenario::DoubleGyre { domain, .. }
            | Scenario::Unicycle { domain }
            | Scenario::Constant { domain, .. } => *domain = new,
        }
        self
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SingleIntegrator { .. } => "single_integrator",
            Scenario::Grushin { .. } => "grushin",
            Scenario::DoubleGyre { .. } => "double_gyre",
            Scenario::Unicycle { .. } => "unicycle",
            Scenario::Constant { .. } => "constant",
        }
    }
}

impl ControlAffineSystem for Scenario {
    fn dim(&self) -> usize {
        self.domain().bounds.len()
    }

    fn controls(&self) -> usize {
        match self {
            Scenario::SingleIntegrator { domain } => domain.bounds.len(),
            Scenario::Grushin { .. } | Scenario::DoubleGyre { .. } | Scenario::Unicycle { .. } => 2,
            Scenario::Constant { controls, .. } => controls.len(),
        }
    }

    fn domain(&self) -> &Domain {
        match self {
            Scenario::SingleIntegrator { domain }
            | Scenario::Grushin { domain }
            | Scenario::DoubleGyre { domain, .. }
            | Scenario::Unicycle { domain }
            | Scenario::Constant { domain, .. } => domain,
        }
    }

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            Scenario::DoubleGyre { params, .. } => {
                let (f, dfdx) = params.forcing(x[0], t);
                let amp = PI * params.amplitude;
                out[0] = -amp * (PI * f).sin() * (PI * x[1]).cos();
                out[1] = amp * (PI * f).cos() * (PI * x[1]).sin() * dfdx;
            }
            Scenario::Constant { drift: Some(g), .. } => out.copy_from_slice(g),
            _ => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    fn control(&self, channel: usize, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            Scenario::SingleIntegrator { .. } => out[channel] = 1.0,
            Scenario::Grushin { .. } => {
                if channel == 0 {
                    out[0] = 1.0;
                } else {
                    out[1] = x[0];
                }
            }
            Scenario::DoubleGyre { .. } => out[channel] = 1.0,
            Scenario::Unicycle { .. } => {
                if channel == 0 {
                    out[0] = 1.0;
                } else {
                    out[1] = x[0].cos();
                    out[2] = x[0].sin();
                }
            }
            Scenario::Constant { controls, .. } => out.copy_from_slice(&controls[channel]),
        }
    }

    fn is_driftless(&self) -> bool {
        match self {
            Scenario::DoubleGyre { .. } => false,
            Scenario::Constant { drift, .. } => drift.as_ref().is_none_or(|g| g.iter().all(|&v| v == 0.0)),
            _ => true,
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            Scenario::Unicycle { .. } => vec!["steering".into(), "translation".into()],
            _ => (1..=self.controls()).map(|i| format!("u{i}")).collect(),
        }
    }
}

fn check_domain(system: &dyn ControlAffineSystem, x: &[f64]) -> Result<Vec<f64>> {
    let dom = system.domain();
    if x.len() != system.dim() {
        return Err(Error::Dimension(format!("point has {} coordinates, system {}", x.len(), system.dim())));
    }
    let mut y = x.to_vec();
    for a in 0..y.len() {
        let [lo, hi] = dom.bounds[a];
        let slack = 1e-12 * (hi - lo);
        if dom.periodic[a] {
            y[a] = (y[a] - lo).rem_euclid(hi - lo) + lo;
        } else if !(y[a] >= lo - slack && y[a] <= hi + slack) {
            return Err(Error::OutOfDomain { point: x.to_vec(), axis: a });
        }
    }
    Ok(y)
}

fn finite(v: Vec<f64>, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite { point: x.to_vec(), time: t })
    }
}

/// Drift velocity at `x`, time `t`, with domain checking.
pub fn evaluate_drift(system: &dyn ControlAffineSystem, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let y = check_domain(system, x)?;
    let mut out = vec![0.0; y.len()];
    system.drift(&y, t, &mut out);
    finite(out, x, t)
}

/// Control field `channel` (0-based) at `x`, with domain checking.
pub fn evaluate_control(system: &dyn ControlAffineSystem, channel: usize, x: &[f64]) -> Result<Vec<f64>> {
    if channel >= system.controls() {
        return Err(Error::Dimension(format!("channel {channel} of {}", system.controls())));
    }
    let y = check_domain(system, x)?;
    let mut out = vec![0.0; y.len()];
    system.control(channel, &y, &mut out);
    finite(out, x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scenario(name: &str) -> Scenario {
        make_scenario(name, &ScenarioParams::default()).unwrap()
    }

    #[test]
    fn double_gyre_period() {
        let p = ScenarioParams { amplitude: Some(0.25), beta: Some(0.25), omega: Some(2.0 * PI), ..Default::default() };
        match make_scenario("double_gyre", &p).unwrap() {
            Scenario::DoubleGyre { params, .. } => assert!((params.period() - 1.0).abs() < 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn double_gyre_drift_at_t0() {
        let s = scenario("double_gyre");
        // Gyre center: both components vanish.
        let g = evaluate_drift(&s, &[0.5, 0.5], 0.0).unwrap();
        assert!(g[0].abs() < 1e-15 && g[1].abs() < 1e-15);
        // At t = 0 the forcing is the identity, so
        // g0(0.25, 0.25) = (-pi A sin(pi/4) cos(pi/4), pi A cos(pi/4) sin(pi/4)) = (-pi/8, pi/8).
        let g = evaluate_drift(&s, &[0.25, 0.25], 0.0).unwrap();
        assert!((g[0] + PI / 8.0).abs() < 1e-15);
        assert!((g[1] - PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn grushin_fields() {
        let s = scenario("grushin");
        assert_eq!(evaluate_control(&s, 1, &[0.5, 0.3]).unwrap(), vec![0.0, 0.5]);
        assert_eq!(evaluate_control(&s, 0, &[-0.7, 0.9]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(evaluate_control(&s, 1, &[0.0, 0.9]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn unicycle_fields() {
        let s = scenario("unicycle");
        assert_eq!(evaluate_control(&s, 1, &[0.0, 0.5, 0.5]).unwrap(), vec![0.0, 1.0, 0.0]);
        let g = evaluate_control(&s, 1, &[PI / 2.0, 0.5, 0.5]).unwrap();
        assert!(g[0] == 0.0 && g[1].abs() < 1e-15 && (g[2] - 1.0).abs() < 1e-15);
        // Periodic wrap on theta.
        let g = evaluate_control(&s, 1, &[2.0 * PI, 0.5, 0.5]).unwrap();
        assert!((g[1] - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let th: f64 = rng.random_range(0.0..2.0 * PI);
            let g = evaluate_control(&s, 1, &[th, 0.2, 0.2]).unwrap();
            assert!(((g[1] * g[1] + g[2] * g[2]).sqrt() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let s = scenario("grushin");
        assert!(matches!(evaluate_control(&s, 0, &[1.5, 0.0]), Err(Error::OutOfDomain { axis: 0, .. })));
        assert!(evaluate_drift(&s, &[0.0, -1.2], 0.0).is_err());
        assert!(evaluate_control(&s, 2, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn unknown_and_misplaced_parameters() {
        assert!(matches!(make_scenario("lorenz", &ScenarioParams::default()), Err(Error::UnknownScenario(_))));
        let p = ScenarioParams { beta: Some(0.1), ..Default::default() };
        assert!(make_scenario("grushin", &p).is_err());
        assert!(make_scenario("constant", &ScenarioParams::default()).is_err());
    }

    #[test]
    fn forcing_fixes_domain_ends() {
        let p = DoubleGyreParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let t: f64 = rng.random_range(0.0..10.0);
            assert_eq!(p.forcing(0.0, t).0, 0.0);
            assert!((p.forcing(2.0, t).0 - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn double_gyre_boundary_tangency_and_periodicity() {
        let s = scenario("double_gyre");
        let tau = match &s {
            Scenario::DoubleGyre { params, .. } => params.period(),
            _ => unreachable!(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let t: f64 = rng.random_range(0.0..5.0);
            let u: f64 = rng.random_range(0.0..1.0);
            let g = evaluate_drift(&s, &[0.0, u], t).unwrap();
            assert!(g[0].abs() < 1e-12);
            let g = evaluate_drift(&s, &[2.0, u], t).unwrap();
            assert!(g[0].abs() < 1e-12);
            let g = evaluate_drift(&s, &[2.0 * u, 0.0], t).unwrap();
            assert!(g[1].abs() < 1e-12);
            let g = evaluate_drift(&s, &[2.0 * u, 1.0], t).unwrap();
            assert!(g[1].abs() < 1e-12);
            let x = [rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)];
            let a = evaluate_drift(&s, &x, t).unwrap();
            let b = evaluate_drift(&s, &x, t + tau).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn driftless_flags_match_sampled_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for name in ["grushin", "unicycle", "double_gyre", "single_integrator"] {
            let s = scenario(name);
            let dom = s.domain().clone();
            let mut all_zero = true;
            for _ in 0..500 {
                let x: Vec<f64> = dom.bounds.iter().map(|b| rng.random_range(b[0]..b[1])).collect();
                let t = rng.random_range(0.0..3.0);
                let g = evaluate_drift(&s, &x, t).unwrap();
                all_zero &= g.iter().all(|&v| v == 0.0);
            }
            assert_eq!(s.is_driftless(), all_zero, "{name}");
        }
        assert!(scenario("grushin").is_driftless());
        assert!(scenario("unicycle").is_driftless());
        assert!(!scenario("double_gyre").is_driftless());
    }
}
