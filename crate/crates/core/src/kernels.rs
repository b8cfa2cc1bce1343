//! Kernel families `rho_k`, admissibility diagnostics and limit measures on
//! the unit sphere.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::expr::Expr;
use crate::quadrature::{adaptive, gauss, geometric_integral, integral_from_zero, AdaptiveOptions};
use crate::scalar::{from_usize, lit, norm, sphere_measure, to_f64, Real};

/// How the family is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    /// `k = 1, 2, ...`, concentrating as `k -> infinity`.
    Integer,
    /// `s` in `(0, 1)`, concentrating as `s -> 1`.
    Fractional,
}

/// `rho(r) = coef * r^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw<T> {
    pub coef: T,
    pub exponent: T,
}

impl<T: Real> PowerLaw<T> {
    pub fn eval(&self, r: T) -> T {
        self.coef * r.powf(self.exponent)
    }
}

type EvalFn<T> = Arc<dyn Fn(T, &[T]) -> T + Send + Sync>;
type RadialFn<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;
type PowerFn<T> = Arc<dyn Fn(T) -> PowerLaw<T> + Send + Sync>;

/// An indexed family of nonnegative kernels on `R^N`.
#[derive(Clone)]
pub struct KernelFamily<T> {
    dim: usize,
    kind: IndexKind,
    label: String,
    eval: EvalFn<T>,
    radial: Option<RadialFn<T>>,
    power_law: Option<PowerFn<T>>,
    exact_limit: Option<LimitMeasure<T>>,
}

impl<T> fmt::Debug for KernelFamily<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelFamily")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("label", &self.label)
            .field("radial", &self.radial.is_some())
            .field("power_law", &self.power_law.is_some())
            .finish()
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        invalid(format!("dimension must be 1 or 2, got {dim}"))
    }
}

impl<T: Real> KernelFamily<T> {
    /// `rho_s(z) = (1 - s) / |z|^{N - (1 - s) p}`.
    pub fn fractional(p: T, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if !(p >= T::one()) {
            return invalid("fractional kernels need p >= 1");
        }
        let n = from_usize::<T>(dim);
        let law = move |s: T| PowerLaw {
            coef: T::one() - s,
            exponent: (T::one() - s) * p - n,
        };
        let per_direction = p.recip();
        let exact = match dim {
            1 => LimitMeasure::atoms(per_direction, per_direction),
            _ => LimitMeasure::uniform_circle(T::TAU() * per_direction, DEFAULT_CIRCLE_NODES),
        };
        Ok(Self {
            dim,
            kind: IndexKind::Fractional,
            label: format!("fractional(p={p}, N={dim})"),
            eval: Arc::new(move |s, z| law(s).eval(norm(z))),
            radial: Some(Arc::new(move |s, r| law(s).eval(r))),
            power_law: Some(Arc::new(law)),
            exact_limit: Some(exact),
        })
    }

    /// The family that is identically zero.
    pub fn zero(dim: usize, kind: IndexKind) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            kind,
            label: "zero".into(),
            eval: Arc::new(|_, _| T::zero()),
            radial: Some(Arc::new(|_, _| T::zero())),
            power_law: None,
            exact_limit: Some(LimitMeasure::zero(dim)),
        })
    }

    /// A radial family given by its profile `(index, r) -> rho`.
    pub fn radial<F>(dim: usize, kind: IndexKind, label: &str, profile: F) -> Result<Self>
    where
        F: Fn(T, T) -> T + Send + Sync + 'static,
    {
        check_dim(dim)?;
        let profile: RadialFn<T> = Arc::new(profile);
        let pe = profile.clone();
        Ok(Self {
            dim,
            kind,
            label: label.into(),
            eval: Arc::new(move |k, z| pe(k, norm(z))),
            radial: Some(profile),
            power_law: None,
            exact_limit: None,
        })
    }

    /// A general (possibly anisotropic) family `(index, z) -> rho`.
    pub fn general<F>(dim: usize, kind: IndexKind, label: &str, eval: F) -> Result<Self>
    where
        F: Fn(T, &[T]) -> T + Send + Sync + 'static,
    {
        check_dim(dim)?;
        Ok(Self {
            dim,
            kind,
            label: label.into(),
            eval: Arc::new(eval),
            radial: None,
            power_law: None,
            exact_limit: None,
        })
    }

    /// A family read from an expression in `r, z1, z2, k` (and `s = k`).
    pub fn from_expr(dim: usize, kind: IndexKind, src: &str) -> Result<Self> {
        let e = Expr::compile(src, &["r", "z1", "z2", "k", "s"])?;
        let radial = !(e.uses("z1") || e.uses("z2"));
        let label = format!("expr({src})");
        if radial {
            Self::radial(dim, kind, &label, move |k, r| {
                e.eval(&[r, r, T::zero(), k, k])
            })
        } else {
            Self::general(dim, kind, &label, move |k, z| {
                let z2 = if z.len() > 1 { z[1] } else { T::zero() };
                e.eval(&[norm(z), z[0], z2, k, k])
            })
        }
    }

    /// A radial family tabulated on `radii` (increasing), one row of values per
    /// entry of `indices`, linearly interpolated in `r` and zero beyond the
    /// last radius. An index selects the row of the nearest listed index.
    pub fn table(
        dim: usize,
        kind: IndexKind,
        indices: Vec<T>,
        radii: Vec<T>,
        values: Vec<Vec<T>>,
    ) -> Result<Self> {
        if radii.is_empty() || values.is_empty() || values.len() != indices.len() {
            return invalid("kernel table needs radii and one value row per index");
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= T::zero() {
            return invalid("kernel table radii must be positive and increasing");
        }
        for row in &values {
            if row.len() != radii.len() {
                return invalid("kernel table row length differs from radii");
            }
            if row.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                return invalid("kernel table values must be finite and nonnegative");
            }
        }
        let profile = move |k: T, r: T| -> T {
            let row = indices
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (*a.1 - k)
                        .abs()
                        .partial_cmp(&(*b.1 - k).abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .map(|(i, _)| i)
                .unwrap_or(0);
            let vals = &values[row];
            if r <= radii[0] {
                return vals[0];
            }
            let last = radii.len() - 1;
            if r > radii[last] {
                return T::zero();
            }
            let j = radii.partition_point(|&x| x < r).min(last).max(1);
            let t = (r - radii[j - 1]) / (radii[j] - radii[j - 1]);
            vals[j - 1] + t * (vals[j] - vals[j - 1])
        };
        Self::radial(dim, kind, "table", profile)
    }

    /// The family `c * rho_k` for `c >= 0`.
    pub fn scaled(&self, c: T) -> Result<Self> {
        if !(c >= T::zero()) {
            return invalid("kernel scale must be nonnegative");
        }
        let eval = self.eval.clone();
        let radial = self.radial.clone();
        let power = self.power_law.clone();
        Ok(Self {
            dim: self.dim,
            kind: self.kind,
            label: format!("{c}*{}", self.label),
            eval: Arc::new(move |k, z| c * eval(k, z)),
            radial: radial.map(|f| Arc::new(move |k, r| c * f(k, r)) as RadialFn<T>),
            power_law: power.map(|f| {
                Arc::new(move |k| {
                    let l = f(k);
                    PowerLaw {
                        coef: c * l.coef,
                        exponent: l.exponent,
                    }
                }) as PowerFn<T>
            }),
            exact_limit: self.exact_limit.as_ref().map(|m| m.scaled(c)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_radial(&self) -> bool {
        self.radial.is_some()
    }

    pub fn eval(&self, index: T, z: &[T]) -> T {
        (self.eval)(index, z)
    }

    pub fn radial_profile(&self, index: T, r: T) -> Option<T> {
        self.radial.as_ref().map(|f| f(index, r))
    }

    /// Pure power-law form of member `index`, when the family has one.
    pub fn power_law(&self, index: T) -> Option<PowerLaw<T>> {
        self.power_law.as_ref().map(|f| f(index))
    }

    /// The limit measure known in closed form, if any.
    pub fn exact_limit(&self) -> Option<&LimitMeasure<T>> {
        self.exact_limit.as_ref()
    }

    pub fn validate_index(&self, index: T) -> Result<()> {
        match self.kind {
            IndexKind::Fractional if !(index > T::zero() && index < T::one()) => invalid(format!(
                "fractional index s must lie in (0, 1), got {index}"
            )),
            IndexKind::Integer if !(index >= T::one()) => {
                invalid(format!("integer index must be >= 1, got {index}"))
            }
            _ => Ok(()),
        }
    }

    /// `k` for integer families, `1 / (1 - s)` for fractional ones; grows to
    /// infinity along the family.
    pub fn effective_index(&self, index: T) -> T {
        match self.kind {
            IndexKind::Integer => index,
            IndexKind::Fractional => (T::one() - index).recip(),
        }
    }

    pub fn member(&self, index: T) -> Result<KernelMember<T>> {
        self.validate_index(index)?;
        Ok(KernelMember {
            family: self.clone(),
            index,
        })
    }

    /// Spot-checks `eval(k, z) == radial_profile(k, |z|)` at random `z`.
    pub fn check_radial_consistency(&self, index: T, samples: usize, seed: u64) -> Result<()> {
        let radial = match &self.radial {
            Some(f) => f,
            None => return Err(Error::WrongOperation("family is not radial".into())),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let mut z = [T::zero(); 2];
            for c in z.iter_mut().take(self.dim) {
                *c = lit(rng.gen_range(-4.0..4.0));
            }
            let z = &z[..self.dim];
            if norm(z) == T::zero() {
                continue;
            }
            let a = self.eval(index, z);
            let b = radial(index, norm(z));
            if (a - b).abs() > T::epsilon() * lit::<T>(16.0) * a.abs().max(b.abs()) {
                return Err(Error::InvariantViolated(format!(
                    "eval {a} differs from radial profile {b} at {z:?}"
                )));
            }
            if a < T::zero() {
                return Err(Error::InvariantViolated(format!(
                    "negative kernel value at {z:?}"
                )));
            }
        }
        Ok(())
    }
}

/// One member `rho_k` of a family.
#[derive(Debug, Clone)]
pub struct KernelMember<T> {
    pub family: KernelFamily<T>,
    pub index: T,
}

impl<T: Real> KernelMember<T> {
    pub fn eval(&self, z: &[T]) -> T {
        self.family.eval(self.index, z)
    }

    pub fn power_law(&self) -> Option<PowerLaw<T>> {
        self.family.power_law(self.index)
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }
}

/// Member `s` of the fractional family for exponent `p` in `R^N`.
pub fn fractional_kernel<T: Real>(s: T, p: T, dim: usize) -> Result<KernelMember<T>> {
    KernelFamily::fractional(p, dim)?.member(s)
}

/// Number of nodes used for rotation-invariant measures on the circle.
pub const DEFAULT_CIRCLE_NODES: usize = 64;

/// A finite nonnegative measure on `S^{N-1}` given by point masses.
///
/// In 1D the directions are `+1` and `-1`; on the circle the masses sit at
/// the listed angles (nodes of a quadrature or sector midpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct LimitMeasure<T> {
    dim: usize,
    angles: Vec<T>,
    masses: Vec<T>,
}

impl<T: Real> LimitMeasure<T> {
    /// 1D measure with mass `plus` at `+1` and `minus` at `-1`.
    pub fn atoms(plus: T, minus: T) -> Self {
        Self {
            dim: 1,
            angles: vec![T::zero(), T::PI()],
            masses: vec![plus, minus],
        }
    }

    /// Rotation-invariant measure of the given total mass on `nodes` equally spaced angles.
    pub fn uniform_circle(total: T, nodes: usize) -> Self {
        let n = from_usize::<T>(nodes);
        Self {
            dim: 2,
            angles: (0..nodes)
                .map(|i| T::TAU() * from_usize::<T>(i) / n)
                .collect(),
            masses: vec![total / n; nodes],
        }
    }

    pub fn zero(dim: usize) -> Self {
        match dim {
            1 => Self::atoms(T::zero(), T::zero()),
            _ => Self::uniform_circle(T::zero(), DEFAULT_CIRCLE_NODES),
        }
    }

    /// A measure on the circle with `masses[i]` at `angles[i]`.
    pub fn circle(angles: Vec<T>, masses: Vec<T>) -> Result<Self> {
        if angles.len() != masses.len() || angles.is_empty() {
            return invalid("circle measure needs one mass per angle");
        }
        let m = Self {
            dim: 2,
            angles,
            masses,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .masses
            .iter()
            .any(|m| !(*m >= T::zero()) || !m.is_finite())
        {
            return invalid("limit measure masses must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    /// Unit direction of node `i`.
    pub fn direction(&self, i: usize) -> [T; 2] {
        match self.dim {
            1 => [if i == 0 { T::one() } else { -T::one() }, T::zero()],
            _ => [self.angles[i].cos(), self.angles[i].sin()],
        }
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn is_zero(&self) -> bool {
        self.masses.iter().all(|&m| m == T::zero())
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            dim: self.dim,
            angles: self.angles.clone(),
            masses: self.masses.iter().map(|&m| m * c).collect(),
        }
    }
}

/// Quadrature controls shared by the kernel diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct KernelQuadrature {
    /// Radius beyond which radial integrals switch to the inverted variable `1/r`.
    pub r_max: f64,
    /// Dyadic refinement levels toward the origin.
    pub levels: u32,
    /// Angular sectors for non-radial families in 2D.
    pub sectors: usize,
    pub adaptive: AdaptiveOptions,
    /// Values beyond this magnitude are reported as divergent.
    pub overflow_guard: f64,
}

impl Default for KernelQuadrature {
    fn default() -> Self {
        Self {
            r_max: 32.0,
            levels: 60,
            sectors: 32,
            adaptive: AdaptiveOptions::default(),
            overflow_guard: 1e12,
        }
    }
}

/// `int_lo^hi f(r) dr` with `hi` possibly infinite and an integrable endpoint
/// singularity allowed at `r = 0`.
fn radial_integral<T: Real, F: Fn(T) -> T>(f: &F, lo: T, hi: T, q: &KernelQuadrature) -> Result<T> {
    let cap = if hi.is_finite() { hi } else { lit(q.r_max) };
    let cap = cap.max(lo);
    let inner = if lo == T::zero() {
        integral_from_zero(f, cap, q.levels, q.adaptive)?
    } else {
        geometric_integral(f, lo, cap, q.adaptive)?
    };
    let outer = if hi.is_finite() {
        T::zero()
    } else {
        let g = |u: T| {
            if u == T::zero() {
                T::zero()
            } else {
                f(u.recip()) / (u * u)
            }
        };
        integral_from_zero(&g, cap.recip(), q.levels, q.adaptive)?
    };
    Ok(inner + outer)
}

/// `int_{lo < |z| < hi} rho_k(z) g(|z|) dz`.
pub fn kernel_moment<T: Real, G: Fn(T) -> T + Sync>(
    family: &KernelFamily<T>,
    index: T,
    g: &G,
    lo: T,
    hi: T,
    q: &KernelQuadrature,
) -> Result<T> {
    let dim = family.dim();
    if let Some(profile) = &family.radial {
        let f = |r: T| profile(index, r) * g(r) * r.powi(dim as i32 - 1);
        return Ok(sphere_measure::<T>(dim) * radial_integral(&f, lo, hi, q)?);
    }
    let along = |sigma: [T; 2]| -> Result<T> {
        let f = |r: T| {
            family.eval(index, &[sigma[0] * r, sigma[1] * r][..dim]) * g(r) * r.powi(dim as i32 - 1)
        };
        radial_integral(&f, lo, hi, q)
    };
    if dim == 1 {
        return Ok(along([T::one(), T::zero()])? + along([-T::one(), T::zero()])?);
    }
    sector_integral(q.sectors, T::zero(), T::TAU(), &|theta| {
        along([theta.cos(), theta.sin()])
    })
}

/// `int_a^b f(theta) d theta` over `sectors` equal pieces with 16-point Gauss
/// rules; `f` may fail.
fn sector_integral<T: Real, F: Fn(T) -> Result<T> + Sync>(
    sectors: usize,
    a: T,
    b: T,
    f: &F,
) -> Result<T> {
    let n = from_usize::<T>(sectors);
    let parts: Vec<Result<T>> = (0..sectors)
        .into_par_iter()
        .map(|i| {
            let lo = a + (b - a) * from_usize::<T>(i) / n;
            let hi = a + (b - a) * from_usize::<T>(i + 1) / n;
            let err = RefCell::new(None);
            let v = gauss(
                &|t: T| match f(t) {
                    Ok(v) => v,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        T::zero()
                    }
                },
                lo,
                hi,
                16,
            );
            err.into_inner().map_or(Ok(v), Err)
        })
        .collect();
    let mut acc = T::zero();
    for p in parts {
        acc += p?;
    }
    Ok(acc)
}

/// One entry of the mass-condition table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassRow<T> {
    pub index: T,
    pub radius: T,
    pub value: T,
}

/// Result of [`mass_condition_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct MassConditionReport<T> {
    pub rows: Vec<MassRow<T>>,
    /// Maximum over all sampled `(R, k)`.
    pub value: T,
    /// Set when the values grow along the indices (log-log slope in the
    /// effective index of at least 1/2 between the last two indices).
    pub growth_flagged: bool,
}

/// `R^p int rho_k(z) / (R^p + |z|^p) dz` for every sampled `(R, k)`.
pub fn mass_condition_check<T: Real>(
    family: &KernelFamily<T>,
    p: T,
    indices: &[T],
    radii: &[T],
    q: &KernelQuadrature,
) -> Result<MassConditionReport<T>> {
    if indices.is_empty() || radii.is_empty() {
        return invalid("need at least one index and one radius");
    }
    if radii.iter().any(|r| !(*r > T::zero())) {
        return invalid("radii must be positive");
    }
    let mut rows = Vec::with_capacity(indices.len() * radii.len());
    for &k in indices {
        family.validate_index(k)?;
        for &r in radii {
            let rp = r.powf(p);
            let g = |t: T| rp / (rp + t.powf(p));
            let v = kernel_moment(family, k, &g, T::zero(), T::infinity(), q)?;
            if !v.is_finite() || to_f64(v) > q.overflow_guard {
                return Err(Error::Quadrature {
                    context: format!("mass condition at R = {r}, index = {k}"),
                    detail: format!("value {v} exceeds the overflow guard"),
                });
            }
            rows.push(MassRow {
                index: k,
                radius: r,
                value: v,
            });
        }
    }
    let value = rows.iter().fold(T::zero(), |m, r| m.max(r.value));
    let mut growth_flagged = false;
    if indices.len() >= 2 {
        let (k0, k1) = (indices[indices.len() - 2], indices[indices.len() - 1]);
        let (e0, e1) = (family.effective_index(k0), family.effective_index(k1));
        for &r in radii {
            let v0 = rows
                .iter()
                .find(|x| x.index == k0 && x.radius == r)
                .map(|x| x.value);
            let v1 = rows
                .iter()
                .find(|x| x.index == k1 && x.radius == r)
                .map(|x| x.value);
            if let (Some(v0), Some(v1)) = (v0, v1) {
                if v0 > T::zero() && v1 > T::zero() && e1 != e0 {
                    let slope = (v1 / v0).ln() / (e1 / e0).ln();
                    if slope >= lit(0.5) {
                        growth_flagged = true;
                    }
                }
            }
        }
    }
    Ok(MassConditionReport {
        rows,
        value,
        growth_flagged,
    })
}

/// Result of [`weak_star_check`]. Masses are per unit direction: ball and
/// annulus masses divided by `|S^{N-1}|`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakStarReport<T> {
    pub indices: Vec<T>,
    /// Mass of `rho_k` over `B_delta`, per direction.
    pub near_mass: Vec<T>,
    /// Mass over the annulus `delta < |z| < 1`, per direction.
    pub far_mass: Vec<T>,
    /// Extrapolated total near-origin mass: `|S^{N-1}|` times the last near mass.
    pub alpha_estimate: T,
    /// Far mass strictly decreasing and the last value below half the first.
    pub concentrating: bool,
}

/// Probes concentration at the origin through masses near and away from it.
pub fn weak_star_check<T: Real>(
    family: &KernelFamily<T>,
    indices: &[T],
    delta: T,
    q: &KernelQuadrature,
) -> Result<WeakStarReport<T>> {
    if !(delta > T::zero() && delta < T::one()) {
        return invalid("delta must lie in (0, 1)");
    }
    if indices.is_empty() {
        return invalid("need at least one index");
    }
    let dim = family.dim();
    let s = sphere_measure::<T>(dim);
    let one = |_: T| T::one();
    let mut near = Vec::new();
    let mut far = Vec::new();
    for &k in indices {
        family.validate_index(k)?;
        near.push(kernel_moment(family, k, &one, T::zero(), delta, q)? / s);
        far.push(kernel_moment(family, k, &one, delta, T::one(), q)? / s);
    }
    let decreasing = far.windows(2).all(|w| w[1] < w[0]);
    let concentrating = far.len() >= 2 && decreasing && far[far.len() - 1] < far[0] * lit(0.5);
    Ok(WeakStarReport {
        indices: indices.to_vec(),
        alpha_estimate: s * *near.last().unwrap_or(&T::zero()),
        near_mass: near,
        far_mass: far,
        concentrating,
    })
}

/// Geometric radii `delta_l = 2^{-l}`, `l = l0..=l1`, each paired with the
/// given indices (inner limit over indices, outer over `delta`).
pub fn geometric_schedule<T: Real>(l0: u32, l1: u32, indices: &[T]) -> Vec<(T, T)> {
    let mut out = Vec::new();
    for l in l0..=l1 {
        let d = lit::<T>(2.0).powi(-(l as i32));
        for &k in indices {
            out.push((d, k));
        }
    }
    out
}

/// Evaluates the double limit `lim_delta lim_k m(delta, k)` on a schedule of
/// `(delta, index)` pairs listed inner-first.
fn double_limit<T: Real, F>(schedule: &[(T, T)], tol: T, mut m: F) -> Result<(T, T)>
where
    F: FnMut(T, T) -> Result<T>,
{
    if schedule.is_empty() {
        return invalid("empty limit schedule");
    }
    let mut deltas: Vec<T> = Vec::new();
    for &(d, _) in schedule {
        if !(d > T::zero()) {
            return invalid("schedule radii must be positive");
        }
        if !deltas.contains(&d) {
            deltas.push(d);
        }
    }
    let mut outer = Vec::with_capacity(deltas.len());
    let mut residual = T::zero();
    for &d in &deltas {
        let vals: Vec<T> = schedule
            .iter()
            .filter(|(dd, _)| *dd == d)
            .map(|&(_, k)| m(d, k))
            .collect::<Result<_>>()?;
        let last = *vals.last().unwrap();
        if vals.len() >= 2 {
            let prev = vals[vals.len() - 2];
            let r = rel_diff(last, prev);
            if r > tol {
                return Err(Error::NonConverged {
                    residual: to_f64(r),
                    value: to_f64(last),
                });
            }
            residual = residual.max(r);
        }
        outer.push(last);
    }
    let last = *outer.last().unwrap();
    if outer.len() >= 2 {
        let r = rel_diff(last, outer[outer.len() - 2]);
        if r > tol {
            return Err(Error::NonConverged {
                residual: to_f64(r),
                value: to_f64(last),
            });
        }
        residual = residual.max(r);
    }
    Ok((last, residual))
}

fn rel_diff<T: Real>(a: T, b: T) -> T {
    let scale = a.abs().max(b.abs());
    if scale == T::zero() {
        T::zero()
    } else {
        (a - b).abs() / scale
    }
}

/// Limit measure of a radial family: per-direction mass
/// `lim_l lim_k int_0^{delta_l} rho_k(r) r^{N-1} dr`, as two atoms in 1D or a
/// uniform measure on the circle in 2D.
pub fn limit_measure_radial<T: Real>(
    family: &KernelFamily<T>,
    schedule: &[(T, T)],
    tol: T,
    q: &KernelQuadrature,
) -> Result<LimitMeasure<T>> {
    let profile = match &family.radial {
        Some(f) => f.clone(),
        None => {
            return Err(Error::WrongOperation(
                "family is not radial; use limit_measure_numeric".into(),
            ))
        }
    };
    let dim = family.dim();
    let (density, _) = double_limit(schedule, tol, |d, k| {
        family.validate_index(k)?;
        let f = |r: T| profile(k, r) * r.powi(dim as i32 - 1);
        radial_integral(&f, T::zero(), d, q)
    })?;
    Ok(match dim {
        1 => LimitMeasure::atoms(density, density),
        _ => LimitMeasure::uniform_circle(T::TAU() * density, DEFAULT_CIRCLE_NODES),
    })
}

/// Limit measure on the circle by nested quadrature over `angular_nodes`
/// equal sectors; masses sit at the sector midpoints.
pub fn limit_measure_numeric<T: Real>(
    family: &KernelFamily<T>,
    schedule: &[(T, T)],
    angular_nodes: usize,
    tol: T,
    q: &KernelQuadrature,
) -> Result<LimitMeasure<T>> {
    if family.dim() != 2 {
        return Err(Error::WrongOperation(
            "numeric limit measure is for N = 2; use limit_measure_radial in 1D".into(),
        ));
    }
    if angular_nodes < 8 {
        return invalid("need at least 8 angular sectors");
    }
    let n = from_usize::<T>(angular_nodes);
    let width = T::TAU() / n;
    let masses: Vec<T> = (0..angular_nodes)
        .into_par_iter()
        .map(|i| {
            let a = width * from_usize::<T>(i);
            let b = a + width;
            double_limit(schedule, tol, |d, k| {
                family.validate_index(k)?;
                let along = |theta: T| -> Result<T> {
                    let (c, s) = (theta.cos(), theta.sin());
                    let f = |r: T| family.eval(k, &[c * r, s * r]) * r;
                    radial_integral(&f, T::zero(), d, q)
                };
                sector_integral(1, a, b, &along)
            })
            .map(|(v, _)| v)
        })
        .collect::<Result<_>>()?;
    let angles = (0..angular_nodes)
        .map(|i| width * (from_usize::<T>(i) + lit(0.5)))
        .collect();
    LimitMeasure::circle(angles, masses)
}

/// Integrates a bounded function over `(a, b)` adaptively; exposed for the
/// harness oracles.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> Result<T> {
    adaptive(f, a, b, AdaptiveOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> KernelQuadrature {
        KernelQuadrature::default()
    }

    #[test]
    fn fractional_values() {
        let k = fractional_kernel(0.5, 2.0, 1).unwrap();
        assert_eq!(k.eval(&[1.0]), 0.5);
        assert_eq!(k.eval(&[2.0]), 0.5);
        let near_one = fractional_kernel(0.999_999, 2.0, 1).unwrap();
        assert!(near_one.eval(&[0.7]) < 2e-6);
        assert!(fractional_kernel(1.0, 2.0, 1).is_err());
        assert!(fractional_kernel(0.0, 2.0, 1).is_err());
    }

    #[test]
    fn fractional_is_radial_consistent() {
        let f = KernelFamily::<f64>::fractional(2.0, 2).unwrap();
        f.check_radial_consistency(0.7, 1000, 3).unwrap();
    }

    #[test]
    fn mass_condition_matches_closed_form() {
        // R^p int (1-s) r^{a-1} / (R^p + r^p) dr = (1-s) R^a pi / (p sin(pi a / p))
        let p = 2.0;
        let fam = KernelFamily::<f64>::fractional(p, 1).unwrap();
        let idx = [0.5, 0.9, 0.99];
        let radii = [0.1, 1.0, 10.0];
        let rep = mass_condition_check(&fam, p, &idx, &radii, &q()).unwrap();
        for row in &rep.rows {
            let a = (1.0 - row.index) * p;
            let exact = 2.0 * (1.0 - row.index) * row.radius.powf(a) * std::f64::consts::PI
                / (p * (std::f64::consts::PI * a / p).sin());
            assert!(
                (row.value - exact).abs() < 1e-8 * exact,
                "{row:?} vs {exact}"
            );
        }
        assert!(!rep.growth_flagged);
        assert!(rep.value.is_finite() && rep.value < 20.0);
    }

    #[test]
    fn mass_condition_flags_growing_mass() {
        let fam = KernelFamily::<f64>::radial(1, IndexKind::Integer, "k chi", |k, r| {
            if r < 1.0 {
                k
            } else {
                0.0
            }
        })
        .unwrap();
        let rep = mass_condition_check(&fam, 2.0, &[1.0, 10.0, 100.0], &[1.0], &q()).unwrap();
        // k * 2 * int_0^1 dr / (1 + r^2) = k pi / 2
        for row in &rep.rows {
            let exact = row.index * std::f64::consts::FRAC_PI_2;
            assert!((row.value - exact).abs() < 1e-9 * exact);
        }
        assert!(rep.growth_flagged);
        let zero = KernelFamily::<f64>::zero(1, IndexKind::Integer).unwrap();
        let z = mass_condition_check(&zero, 2.0, &[1.0], &[1.0], &q()).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn weak_star_fractional() {
        let fam = KernelFamily::<f64>::fractional(2.0, 1).unwrap();
        let rep = weak_star_check(&fam, &[0.5, 0.9, 0.99, 0.999], 0.01, &q()).unwrap();
        for (i, &s) in rep.indices.iter().enumerate() {
            let a = (1.0 - s) * 2.0;
            let near = 0.01f64.powf(a) / 2.0;
            let far = (1.0 - 0.01f64.powf(a)) / 2.0;
            assert!(
                (rep.near_mass[i] - near).abs() < 1e-10,
                "{} {}",
                rep.near_mass[i],
                near
            );
            assert!((rep.far_mass[i] - far).abs() < 1e-10);
        }
        assert!((rep.near_mass[3] - 0.4954).abs() < 1e-4);
        assert!(rep.concentrating);
    }

    #[test]
    fn weak_star_fixed_measure_not_concentrating() {
        let fam = KernelFamily::<f64>::radial(1, IndexKind::Integer, "ball", |_, r| {
            if r < 1.0 {
                0.5
            } else {
                0.0
            }
        })
        .unwrap();
        let rep = weak_star_check(&fam, &[1.0, 10.0, 100.0], 0.1, &q()).unwrap();
        assert!(!rep.concentrating);
        assert!((rep.far_mass[0] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn limit_measure_fractional_1d() {
        for (p, target) in [(2.0, 0.5), (1.0, 1.0)] {
            let fam = KernelFamily::<f64>::fractional(p, 1).unwrap();
            let mu = limit_measure_radial(&fam, &[(1e-2, 0.999)], 1e-3, &q()).unwrap();
            assert!((mu.masses()[0] - target).abs() < 1e-2);
            assert_eq!(mu.masses()[0], mu.masses()[1]);
        }
    }

    #[test]
    fn limit_measure_nonconvergence_is_reported() {
        let fam = KernelFamily::<f64>::fractional(2.0, 1).unwrap();
        let sched = [(1e-2, 0.9), (1e-2, 0.99)];
        assert!(matches!(
            limit_measure_radial(&fam, &sched, 1e-3, &q()),
            Err(Error::NonConverged { .. })
        ));
    }

    #[test]
    fn limit_measure_linear_in_kernel() {
        let fam = KernelFamily::<f64>::fractional(2.0, 1).unwrap();
        let a = limit_measure_radial(&fam, &[(1e-2, 0.999)], 1e-3, &q()).unwrap();
        let b =
            limit_measure_radial(&fam.scaled(3.0).unwrap(), &[(1e-2, 0.999)], 1e-3, &q()).unwrap();
        assert!((b.masses()[0] - 3.0 * a.masses()[0]).abs() < 1e-12);
    }

    #[test]
    fn numeric_measure_radial_and_cut() {
        let fam = KernelFamily::<f64>::fractional(2.0, 2).unwrap();
        let sched = [(1e-2, 0.999)];
        let num = limit_measure_numeric(&fam, &sched, 16, 1e-3, &q()).unwrap();
        let rad = limit_measure_radial(&fam, &sched, 1e-3, &q()).unwrap();
        let m = num.masses();
        let mean = num.total_mass() / 16.0;
        assert!(m.iter().all(|v| (v - mean).abs() < 1e-2 * mean));
        assert!((num.total_mass() - rad.total_mass()).abs() < 1e-3 * rad.total_mass());

        let base = fam.clone();
        let cut = KernelFamily::general(2, IndexKind::Fractional, "cut", move |s, z: &[f64]| {
            if z[0] > 0.0 {
                base.eval(s, z)
            } else {
                0.0
            }
        })
        .unwrap();
        let half = limit_measure_numeric(&cut, &sched, 16, 1e-3, &q()).unwrap();
        for (i, &a) in half.angles().iter().enumerate() {
            if a.cos() < 0.0 {
                assert_eq!(half.masses()[i], 0.0);
            } else {
                assert!(half.masses()[i] > 0.0);
            }
        }
        let zero = KernelFamily::<f64>::zero(2, IndexKind::Fractional).unwrap();
        assert!(limit_measure_numeric(&zero, &sched, 8, 1e-3, &q())
            .unwrap()
            .is_zero());
    }

    #[test]
    fn expression_and_table_families() {
        let e = KernelFamily::<f64>::from_expr(1, IndexKind::Integer, "k * (r < 1)").unwrap();
        assert!(e.is_radial());
        assert_eq!(e.eval(3.0, &[0.5]), 3.0);
        let cut = KernelFamily::<f64>::from_expr(2, IndexKind::Integer, "(z1 > 0) / r").unwrap();
        assert!(!cut.is_radial());
        let t = KernelFamily::<f64>::table(
            1,
            IndexKind::Integer,
            vec![1.0, 2.0],
            vec![0.5, 1.0],
            vec![vec![1.0, 3.0], vec![2.0, 4.0]],
        )
        .unwrap();
        assert_eq!(t.eval(1.0, &[0.75]), 2.0);
        assert_eq!(t.eval(2.0, &[0.25]), 2.0);
        assert_eq!(t.eval(2.0, &[1.5]), 0.0);
    }
}
