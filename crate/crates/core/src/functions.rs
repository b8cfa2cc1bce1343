//! Closed-form test functions with analytic derivatives.

use crate::error::{invalid, Result};
use crate::grid::mollifier_profile;
use crate::grid::{Grid, GridFunction};
use crate::scalar::{lit, norm, Real};

/// A function on `R^N` (`N` in {1, 2}) given in closed form.
///
/// Radial shapes are centered at `center`; `SinPacket`, `Beta` and
/// `IndicatorMollified` act on the first coordinate and are extended
/// constantly in the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm<T> {
    /// `max(0, 1 - |x - c| / r)`.
    Hat {
        center: [T; 2],
        radius: T,
    },
    /// `exp(-|x|^2 / sigma^2)`.
    Gaussian {
        sigma: T,
    },
    /// `exp(1 - 1 / (1 - |x - c|^2 / r^2))` inside the ball, zero outside.
    Bump {
        center: [T; 2],
        radius: T,
    },
    /// `sin(freq x_1)` on `[lo, hi]`, zero elsewhere.
    SinPacket {
        freq: T,
        lo: T,
        hi: T,
    },
    /// `t^a (1 - t)^b` with `t = (x_1 - lo) / (hi - lo)` on `[lo, hi]`.
    Beta {
        a: T,
        b: T,
        lo: T,
        hi: T,
    },
    /// `chi_{[-w, w]} * eta_j` in the first coordinate.
    IndicatorMollified {
        half_width: T,
        j: T,
    },
    Constant(T),
}

fn shifted<T: Real>(x: &[T], c: &[T; 2]) -> [T; 2] {
    let mut d = [T::zero(); 2];
    for a in 0..x.len() {
        d[a] = x[a] - c[a];
    }
    d
}

/// Antiderivative of the 1D mollifier profile, `Phi(-1) = 0`, `Phi(1) = 1`.
fn profile_cdf<T: Real>(t: T) -> T {
    if t <= -T::one() {
        return T::zero();
    }
    if t >= T::one() {
        return T::one();
    }
    let t3 = t * t * t;
    let t5 = t3 * t * t;
    lit::<T>(15.0 / 16.0) * (t - lit::<T>(2.0 / 3.0) * t3 + lit::<T>(0.2) * t5) + lit(0.5)
}

fn profile_derivative<T: Real>(t: T) -> T {
    if t.abs() >= T::one() {
        return T::zero();
    }
    lit::<T>(-15.0 / 4.0) * t * (T::one() - t * t)
}

impl<T: Real> ClosedForm<T> {
    pub fn hat() -> Self {
        Self::Hat {
            center: [T::zero(); 2],
            radius: T::one(),
        }
    }

    pub fn value(&self, x: &[T]) -> T {
        match *self {
            Self::Hat { center, radius } => {
                let d = shifted(x, &center);
                (T::one() - norm(&d[..x.len()]) / radius).max(T::zero())
            }
            Self::Gaussian { sigma } => {
                let r = norm(x);
                (-(r * r) / (sigma * sigma)).exp()
            }
            Self::Bump { center, radius } => {
                let d = shifted(x, &center);
                let q = {
                    let r = norm(&d[..x.len()]) / radius;
                    r * r
                };
                if q >= T::one() {
                    T::zero()
                } else {
                    (T::one() - (T::one() - q).recip()).exp()
                }
            }
            Self::SinPacket { freq, lo, hi } => {
                if x[0] < lo || x[0] > hi {
                    T::zero()
                } else {
                    (freq * x[0]).sin()
                }
            }
            Self::Beta { a, b, lo, hi } => {
                if x[0] <= lo || x[0] >= hi {
                    T::zero()
                } else {
                    let t = (x[0] - lo) / (hi - lo);
                    t.powf(a) * (T::one() - t).powf(b)
                }
            }
            Self::IndicatorMollified { half_width, j } => {
                profile_cdf(j * (x[0] + half_width)) - profile_cdf(j * (x[0] - half_width))
            }
            Self::Constant(c) => c,
        }
    }

    /// Gradient where the function is differentiable in the classical sense
    /// on its support; `None` for shapes without a continuous gradient.
    pub fn gradient(&self, x: &[T]) -> Option<[T; 2]> {
        let dim = x.len();
        let mut g = [T::zero(); 2];
        match *self {
            Self::Hat { .. } | Self::SinPacket { .. } | Self::Beta { .. } => return None,
            Self::Gaussian { sigma } => {
                let v = self.value(x);
                let s2 = sigma * sigma;
                for a in 0..dim {
                    g[a] = -lit::<T>(2.0) * x[a] / s2 * v;
                }
            }
            Self::Bump { center, radius } => {
                let d = shifted(x, &center);
                let r2 = radius * radius;
                let q = d[..dim].iter().fold(T::zero(), |s, &c| s + c * c) / r2;
                if q < T::one() {
                    let v = self.value(x);
                    let one_m = T::one() - q;
                    // d/dx exp(1 - 1/(1-q)) = -v q' / (1-q)^2, q' = 2 d / r^2
                    for a in 0..dim {
                        g[a] = -v * lit::<T>(2.0) * d[a] / r2 / (one_m * one_m);
                    }
                }
            }
            Self::IndicatorMollified { half_width, j } => {
                let m = |t: T| mollifier_profile::<T>(1, t.abs());
                g[0] = j * (m(j * (x[0] + half_width)) - m(j * (x[0] - half_width)));
            }
            Self::Constant(_) => {}
        }
        Some(g)
    }

    /// Hessian as `[[d11, d12], [d21, d22]]` (only the leading block is used in 1D).
    pub fn hessian(&self, x: &[T]) -> Option<[[T; 2]; 2]> {
        let dim = x.len();
        let mut hs = [[T::zero(); 2]; 2];
        match *self {
            Self::Hat { .. } | Self::SinPacket { .. } | Self::Beta { .. } => return None,
            Self::Gaussian { sigma } => {
                let v = self.value(x);
                let s2 = sigma * sigma;
                let two = lit::<T>(2.0);
                for a in 0..dim {
                    for b in 0..dim {
                        let delta = if a == b { T::one() } else { T::zero() };
                        hs[a][b] = v * (two * two * x[a] * x[b] / (s2 * s2) - two * delta / s2);
                    }
                }
            }
            Self::Bump { center, radius } => {
                let d = shifted(x, &center);
                let r2 = radius * radius;
                let q = d[..dim].iter().fold(T::zero(), |s, &c| s + c * c) / r2;
                if q < T::one() {
                    // v = exp(phi), phi = 1 - 1/(1-q)
                    // dphi = -2 d / (r^2 (1-q)^2)
                    // d2phi_ab = -2 delta_ab / (r^2 (1-q)^2) - 8 d_a d_b / (r^4 (1-q)^3)
                    let v = self.value(x);
                    let om = T::one() - q;
                    let two = lit::<T>(2.0);
                    let dphi: Vec<T> = (0..dim).map(|a| -two * d[a] / (r2 * om * om)).collect();
                    for a in 0..dim {
                        for b in 0..dim {
                            let delta = if a == b { T::one() } else { T::zero() };
                            let d2 = -two * delta / (r2 * om * om)
                                - lit::<T>(8.0) * d[a] * d[b] / (r2 * r2 * om * om * om);
                            hs[a][b] = v * (d2 + dphi[a] * dphi[b]);
                        }
                    }
                }
            }
            Self::IndicatorMollified { half_width, j } => {
                hs[0][0] = j
                    * j
                    * (profile_derivative(j * (x[0] + half_width))
                        - profile_derivative(j * (x[0] - half_width)));
            }
            Self::Constant(_) => {}
        }
        Some(hs)
    }

    /// Frobenius norm of the Hessian (an upper bound for its operator norm).
    pub fn hessian_norm(&self, x: &[T]) -> Option<T> {
        let dim = x.len();
        self.hessian(x).map(|h| {
            let mut s = T::zero();
            for row in h.iter().take(dim) {
                for v in row.iter().take(dim) {
                    s += *v * *v;
                }
            }
            s.sqrt()
        })
    }

    /// Radius of a ball around the origin containing the support, if bounded.
    pub fn support_radius(&self) -> Option<T> {
        match *self {
            Self::Hat { center, radius } | Self::Bump { center, radius } => {
                Some(norm(&center) + radius)
            }
            Self::Gaussian { .. } | Self::Constant(_) => None,
            Self::SinPacket { lo, hi, .. } | Self::Beta { lo, hi, .. } => {
                Some(lo.abs().max(hi.abs()))
            }
            Self::IndicatorMollified { half_width, j } => Some(half_width + j.recip()),
        }
    }

    /// Whether analytic first and second derivatives are available.
    pub fn is_c2(&self) -> bool {
        self.hessian(&[T::zero()]).is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Hat { radius, .. } | Self::Bump { radius, .. } => radius > T::zero(),
            Self::Gaussian { sigma } => sigma > T::zero(),
            Self::SinPacket { lo, hi, .. } => hi > lo,
            Self::Beta { a, b, lo, hi } => hi > lo && a >= T::zero() && b >= T::zero(),
            Self::IndicatorMollified { half_width, j } => half_width > T::zero() && j > T::zero(),
            Self::Constant(c) => c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid closed-form parameters: {self:?}"))
        }
    }

    /// Samples on a grid, recording the support radius when it is bounded
    /// and the box contains the support.
    pub fn sample(&self, grid: Grid<T>) -> Result<GridFunction<T>> {
        self.validate()?;
        let f = *self;
        let u = GridFunction::sample(grid, move |x| f.value(x))?;
        match self.support_radius() {
            Some(r) if u.support_extent() <= r + grid.h() * lit(1e-9) => u.with_support_radius(r),
            _ => Ok(u),
        }
    }
}
