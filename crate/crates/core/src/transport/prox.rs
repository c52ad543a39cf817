//! Proximal map of the perspective function `psi(J, rho) = J^2 / (2 rho)`.
//!
//! `psi` is closed convex on `rho >= 0` with `psi(0, 0) = 0` and
//! `psi(J, 0) = +inf` for `J != 0`. Its prox with step `s` at `(j, r)` is
//! either `(0, 0)` or the point with `rho > max(r, 0)` solving
//! `(rho - r)(rho + s)^2 = s j^2 / 2`, with `J = j rho / (rho + s)`.

/// Value of `psi` with the closure conventions.
pub fn perspective(flux: f64, mass: f64) -> f64 {
    if mass > 0.0 {
        0.5 * flux * flux / mass
    } else if flux == 0.0 && mass == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Optimality cubic `(rho - r)(rho + s)^2 - s j^2 / 2`.
pub fn cubic(rho: f64, flux: f64, mass: f64, step: f64) -> f64 {
    (rho - mass) * (rho + step) * (rho + step) - 0.5 * step * flux * flux
}

/// Cubic residual relative to the magnitude of its terms.
pub fn cubic_relative_residual(rho: f64, flux: f64, mass: f64, step: f64) -> f64 {
    let sq = (rho + step) * (rho + step);
    let scale = (rho.abs() + mass.abs()) * sq + 0.5 * step * flux * flux;
    if scale == 0.0 {
        0.0
    } else {
        cubic(rho, flux, mass, step).abs() / scale
    }
}

/// `prox_{step * psi}(flux, mass)`.
pub fn prox_perspective(flux: f64, mass: f64, step: f64) -> (f64, f64) {
    debug_assert!(step > 0.0);
    if flux == 0.0 {
        return (0.0, mass.max(0.0));
    }
    let c = 0.5 * step * flux * flux;
    // (0, 0) is optimal when the cubic has no root with rho > 0.
    if mass * step + 0.5 * flux * flux <= 0.0 {
        return (0.0, 0.0);
    }
    let rho = cubic_root(mass, step, c);
    (flux * rho / (rho + step), rho)
}

/// Prox of `psi` restricted to `J >= 0`.
pub fn prox_perspective_nonneg(flux: f64, mass: f64, step: f64) -> (f64, f64) {
    if flux <= 0.0 {
        (0.0, mass.max(0.0))
    } else {
        prox_perspective(flux, mass, step)
    }
}

/// Root of `(rho - mass)(rho + step)^2 = c` on `[max(mass, 0), inf)`.
/// The cubic is convex and increasing there, so Newton started to the
/// right of the root decreases monotonically onto it.
fn cubic_root(mass: f64, step: f64, c: f64) -> f64 {
    let lo = mass.max(0.0);
    let mut lower = lo;
    let mut rho = lo + c / ((lo + step) * (lo + step));
    if mass < 0.0 {
        rho = rho.max(c / (step * step));
    }
    let mut upper = rho;
    for _ in 0..200 {
        let s = rho + step;
        let f = (rho - mass) * s * s - c;
        if f == 0.0 {
            return rho;
        }
        if f < 0.0 {
            lower = lower.max(rho);
        } else {
            upper = upper.min(rho);
        }
        let df = s * (3.0 * rho + step - 2.0 * mass);
        let mut next = rho - f / df;
        if !(next > lower && next < upper) || !next.is_finite() {
            next = 0.5 * (lower + upper);
        }
        if (next - rho).abs() <= 4.0 * f64::EPSILON * rho.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        rho = next;
    }
    rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(j: f64, r: f64, fj: f64, fr: f64, step: f64) -> f64 {
        step * perspective(j, r) + 0.5 * ((j - fj).powi(2) + (r - fr).powi(2))
    }

    #[test]
    fn zero_region() {
        assert_eq!(prox_perspective(1.0, -10.0, 1.0), (0.0, 0.0));
        assert_eq!(prox_perspective(0.0, -1.0, 1.0), (0.0, 0.0));
        assert_eq!(prox_perspective(0.0, 2.0, 1.0), (0.0, 2.0));
        assert_eq!(prox_perspective_nonneg(-3.0, 2.0, 1.0), (0.0, 2.0));
    }

    #[test]
    fn known_root() {
        // rho = 1, step = 1: (1 - r) * 4 = j^2 / 2 with r = 0.5 gives j = 2.
        let (j, r) = prox_perspective(2.0, 0.5, 1.0);
        assert!((r - 1.0).abs() < 1e-15);
        assert!((j - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_and_homogeneity_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100_000 {
            let scale = 10f64.powf(rng.random_range(-4.0..3.0));
            let j = rng.random_range(-1.0..1.0) * scale;
            let r = rng.random_range(-1.0..1.0) * scale;
            let s = 10f64.powf(rng.random_range(-3.0..2.0));
            let (pj, pr) = prox_perspective(j, r, s);
            if pr > 0.0 {
                assert!(cubic_relative_residual(pr, j, r, s) < 1e-12);
            }
            let lam = 10f64.powf(rng.random_range(-3.0..3.0));
            let (qj, qr) = prox_perspective(lam * j, lam * r, lam * s);
            assert!((qj - lam * pj).abs() <= 1e-12 * (lam * (pj.abs() + pr.abs())).max(f64::MIN_POSITIVE));
            assert!((qr - lam * pr).abs() <= 1e-12 * (lam * (pj.abs() + pr.abs())).max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn prox_minimizes_its_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let j = rng.random_range(-2.0..2.0);
            let r = rng.random_range(-2.0..2.0);
            let s = rng.random_range(0.05..3.0);
            let (pj, pr) = prox_perspective(j, r, s);
            let best = objective(pj, pr, j, r, s);
            for _ in 0..50 {
                let dj = rng.random_range(-0.1..0.1);
                let dr = rng.random_range(-0.1..0.1);
                let v = objective(pj + dj, (pr + dr).max(0.0), j, r, s);
                assert!(v >= best - 1e-12, "j={j} r={r} s={s}");
            }
        }
    }

    #[test]
    fn nonneg_prox_keeps_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let j = rng.random_range(-2.0..2.0);
            let r = rng.random_range(-2.0..2.0);
            let (pj, pr) = prox_perspective_nonneg(j, r, 0.7);
            assert!(pj >= 0.0 && pr >= 0.0);
        }
    }
}
