//! Test-function banks.

use std::f64::consts::PI;

use bbmlab_core::{DomainMask, GridFunction};

use crate::error::{Context, HarnessError};

type Profile = (&'static str, fn(f64) -> f64);

fn hat(t: f64, c: f64, r: f64) -> f64 {
    (1.0 - (t - c).abs() / r).max(0.0)
}

fn bump(t: f64, c: f64, r: f64) -> f64 {
    let q = ((t - c) / r).powi(2);
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - q)).exp()
    }
}

/// Twenty profiles on `[0, 1]` vanishing at both ends.
const PROFILES: [Profile; 20] = [
    ("sin1", |t| (PI * t).sin()),
    ("sin2", |t| (2.0 * PI * t).sin()),
    ("sin3", |t| (3.0 * PI * t).sin()),
    ("sin4", |t| (4.0 * PI * t).sin()),
    ("sin5", |t| (5.0 * PI * t).sin()),
    ("beta11", |t| t * (1.0 - t)),
    ("beta21", |t| t * t * (1.0 - t)),
    ("beta13", |t| t * (1.0 - t).powi(3)),
    ("beta22", |t| (t * (1.0 - t)).powi(2)),
    ("hat-left", |t| hat(t, 0.25, 0.25)),
    ("hat-mid", |t| hat(t, 0.5, 0.5)),
    ("hat-right", |t| hat(t, 0.75, 0.25)),
    ("bump-mid", |t| bump(t, 0.5, 0.5)),
    ("bump-left", |t| bump(t, 0.3, 0.3)),
    ("cubic", |t| t * (1.0 - t) * (t - 0.5)),
    ("sin-cubed", |t| (PI * t).sin().powi(3)),
    ("poly-exp", |t| (t * (1.0 - t)).powi(2) * t.exp()),
    ("two-mode", |t| (PI * t).sin() + 0.5 * (2.0 * PI * t).sin()),
    ("abs-sin2", |t| (2.0 * PI * t).sin().abs()),
    ("peaked", |t| {
        4.0 * t * (1.0 - t) * (-50.0 * (t - 0.4).powi(2)).exp()
    }),
];

/// The twenty bank functions on the grid of `omega`, in bounding-box
/// coordinates, zero outside `omega`. In 2D the profiles are tensorized
/// as `phi_i(t_1) phi_{(i + 7) mod 20}(t_2)`.
pub fn poincare_bank(omega: &DomainMask) -> Result<Vec<(String, GridFunction)>, HarnessError> {
    let g = *omega.grid();
    let lo = g.lo().to_vec();
    let hi = g.hi();
    let dim = g.dim();
    let mut out = Vec::with_capacity(PROFILES.len());
    for (i, &(name, f)) in PROFILES.iter().enumerate() {
        let (name2, f2) = PROFILES[(i + 7) % PROFILES.len()];
        let (lo, hi) = (lo.clone(), hi.clone());
        let u = GridFunction::sample(g, move |x: &[f64]| {
            let t = |a: usize| ((x[a] - lo[a]) / (hi[a] - lo[a])).clamp(0.0, 1.0);
            if dim == 1 {
                f(t(0))
            } else {
                f(t(0)) * f2(t(1))
            }
        })
        .context("bank function")?
        .restricted_to(omega)
        .context("bank function")?;
        let label = if dim == 1 {
            name.to_string()
        } else {
            format!("{name}*{name2}")
        };
        out.push((label, u));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bbmlab_core::Grid;

    #[test]
    fn bank_vanishes_on_boundary_and_is_nonzero() {
        let g = Grid::from_cells(&[0.0], &[1.0], 64).unwrap();
        let om = DomainMask::interval(g, 0.0, 1.0).unwrap();
        let bank = poincare_bank(&om).unwrap();
        assert_eq!(bank.len(), 20);
        for (name, u) in &bank {
            let v = u.values();
            assert!(v[0].abs() < 1e-12 && v[64].abs() < 1e-12, "{name}");
            assert!(v.iter().any(|x| x.abs() > 1e-3), "{name}");
        }
    }
}
