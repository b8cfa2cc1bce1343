//! Weight families `w_k(x, y)`, the limit weight `w`, its modulus of
//! continuity and the sampled sup/inf quantities built on them.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{mollifier_profile, mollifier_sup, Grid, GridFunction};
use crate::quadrature::gauss;
use crate::reduce::par_map_max;
use crate::scalar::{from_usize, lit, norm, unit_ball_volume, Real};

type PointFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type IndexedPointFn<T> = Arc<dyn Fn(T, &[T]) -> T + Send + Sync>;
type PairFn<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
type IndexedPairFn<T> = Arc<dyn Fn(T, &[T], &[T]) -> T + Send + Sync>;

/// Which member of a weight family to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightChoice<T> {
    /// The limit weight `w`.
    Limit,
    /// The member `w_k`.
    Index(T),
}

#[derive(Clone)]
enum Kind<T> {
    One,
    Product {
        f: PointFn<T>,
        f_k: IndexedPointFn<T>,
    },
    General {
        w: PairFn<T>,
        w_k: IndexedPairFn<T>,
    },
}

/// A modulus of continuity `omega(t) = lipschitz * t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulus<T> {
    pub lipschitz: T,
}

impl<T: Real> Modulus<T> {
    pub fn eval(&self, t: T) -> T {
        self.lipschitz * t
    }
}

/// Weights `w_k` converging to `w` uniformly, with an optional modulus for `w`.
#[derive(Clone)]
pub struct WeightFamily<T> {
    dim: usize,
    kind: Kind<T>,
    scale: T,
    modulus: Option<Modulus<T>>,
    sup_norm_limit: Option<T>,
    label: String,
}

impl<T> fmt::Debug for WeightFamily<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFamily")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("scale", &self.scale)
            .field("modulus", &self.modulus)
            .field("sup_norm_limit", &self.sup_norm_limit)
            .finish()
    }
}

/// Indices at which factor functions are screened for negative values.
const SCREEN_INDICES: [f64; 6] = [1.0, 2.0, 4.0, 10.0, 100.0, 1000.0];

fn screen_points<T: Real>(dim: usize) -> Vec<[T; 2]> {
    let n = if dim == 1 { 1024 } else { 64 };
    let mut out = Vec::new();
    let step = lit::<T>(16.0) / from_usize::<T>(n);
    let coord = |i: usize| lit::<T>(-8.0) + step * from_usize::<T>(i);
    for i in 0..=n {
        if dim == 1 {
            out.push([coord(i), T::zero()]);
        } else {
            for j in 0..=n {
                out.push([coord(i), coord(j)]);
            }
        }
    }
    out
}

impl<T: Real> WeightFamily<T> {
    /// `w_k = w = 1`.
    pub fn one(dim: usize) -> Self {
        Self {
            dim,
            kind: Kind::One,
            scale: T::one(),
            modulus: Some(Modulus {
                lipschitz: T::zero(),
            }),
            sup_norm_limit: Some(T::one()),
            label: "one".into(),
        }
    }

    /// `w_k(x, y) = f_k(x) f_k(y)`, `w(x, y) = f(x) f(y)`.
    ///
    /// `lipschitz` bounds the Lipschitz constant of `f`; with `sup_f = ||f||_inf`
    /// (estimated on `[-8, 8]^N` when not given) the modulus of `w` is
    /// `omega(t) = lipschitz * sup_f * t`. Negative samples of `f` or `f_k`
    /// on the screening net are rejected.
    pub fn product<F, G>(
        dim: usize,
        f: F,
        f_k: G,
        lipschitz: Option<T>,
        sup_f: Option<T>,
    ) -> Result<Self>
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
        G: Fn(T, &[T]) -> T + Send + Sync + 'static,
    {
        let pts = screen_points::<T>(dim);
        let mut sup = T::zero();
        for x in &pts {
            let v = f(&x[..dim]);
            if !(v >= T::zero()) || !v.is_finite() {
                return invalid(format!(
                    "weight factor f({:?}) = {v} is not nonnegative",
                    &x[..dim]
                ));
            }
            sup = sup.max(v);
            for &k in &SCREEN_INDICES {
                let vk = f_k(lit(k), &x[..dim]);
                if !(vk >= T::zero()) || !vk.is_finite() {
                    return invalid(format!(
                        "weight factor f_{k}({:?}) = {vk} is not nonnegative",
                        &x[..dim]
                    ));
                }
            }
        }
        let sup_f = sup_f.unwrap_or(sup);
        Ok(Self {
            dim,
            kind: Kind::Product {
                f: Arc::new(f),
                f_k: Arc::new(f_k),
            },
            scale: T::one(),
            modulus: lipschitz.map(|l| Modulus {
                lipschitz: l * sup_f,
            }),
            sup_norm_limit: Some(sup_f * sup_f),
            label: "product".into(),
        })
    }

    /// General weights given pointwise, with an optional Lipschitz modulus for `w`.
    pub fn general<W, V>(dim: usize, w: W, w_k: V, lipschitz: Option<T>) -> Self
    where
        W: Fn(&[T], &[T]) -> T + Send + Sync + 'static,
        V: Fn(T, &[T], &[T]) -> T + Send + Sync + 'static,
    {
        Self {
            dim,
            kind: Kind::General {
                w: Arc::new(w),
                w_k: Arc::new(w_k),
            },
            scale: T::one(),
            modulus: lipschitz.map(|l| Modulus { lipschitz: l }),
            sup_norm_limit: None,
            label: "general".into(),
        }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }

    /// The family `c w_k` with limit `c w`.
    pub fn scaled(&self, c: T) -> Result<Self> {
        if !(c >= T::zero()) {
            return invalid("weight scale must be nonnegative");
        }
        let mut out = self.clone();
        out.scale = self.scale * c;
        out.modulus = self.modulus.map(|m| Modulus {
            lipschitz: m.lipschitz * c,
        });
        out.sup_norm_limit = self.sup_norm_limit.map(|s| s * c);
        out.label = format!("{c}*{}", self.label);
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn modulus(&self) -> Option<Modulus<T>> {
        self.modulus
    }

    pub fn sup_norm_limit(&self) -> Option<T> {
        self.sup_norm_limit
    }

    pub fn is_one(&self) -> bool {
        matches!(self.kind, Kind::One) && self.scale == T::one()
    }

    pub fn eval(&self, choice: WeightChoice<T>, x: &[T], y: &[T]) -> T {
        let v = match (&self.kind, choice) {
            (Kind::One, _) => return self.scale,
            (Kind::Product { f, .. }, WeightChoice::Limit) => f(x) * f(y),
            (Kind::Product { f_k, .. }, WeightChoice::Index(k)) => f_k(k, x) * f_k(k, y),
            (Kind::General { w, .. }, WeightChoice::Limit) => w(x, y),
            (Kind::General { w_k, .. }, WeightChoice::Index(k)) => w_k(k, x, y),
        };
        self.scale * v
    }

    pub fn eval_limit(&self, x: &[T], y: &[T]) -> T {
        self.eval(WeightChoice::Limit, x, y)
    }

    pub fn eval_k(&self, k: T, x: &[T], y: &[T]) -> T {
        self.eval(WeightChoice::Index(k), x, y)
    }

    /// Precomputes what is needed to evaluate the weight on node pairs of `grid`.
    pub fn on_grid(&self, choice: WeightChoice<T>, grid: &Grid<T>) -> Result<NodeWeights<'_, T>> {
        if grid.dim() != self.dim {
            return invalid("weight and grid dimensions differ");
        }
        Ok(match &self.kind {
            Kind::One => NodeWeights::Constant(self.scale),
            Kind::Product { f, f_k } => {
                let dim = self.dim;
                let vals: Vec<T> = (0..grid.len())
                    .into_par_iter()
                    .map(|i| {
                        let x = grid.coord(i);
                        match choice {
                            WeightChoice::Limit => f(&x[..dim]),
                            WeightChoice::Index(k) => f_k(k, &x[..dim]),
                        }
                    })
                    .collect();
                if let Some(i) = vals
                    .iter()
                    .position(|v| !(*v >= T::zero()) || !v.is_finite())
                {
                    return invalid(format!("weight factor {} at node {i}", vals[i]));
                }
                NodeWeights::Product {
                    scale: self.scale,
                    factors: vals,
                }
            }
            Kind::General { .. } => NodeWeights::Pointwise {
                family: self,
                choice,
                grid: *grid,
            },
        })
    }

    /// Largest weight over pairs of grid nodes (every pair is visited for
    /// pointwise weights).
    pub fn sup_on_grid(&self, choice: WeightChoice<T>, grid: &Grid<T>) -> Result<T> {
        let nw = self.on_grid(choice, grid)?;
        Ok(match &nw {
            NodeWeights::Constant(c) => *c,
            NodeWeights::Product { scale, factors } => {
                let m = factors.iter().fold(T::zero(), |a, &b| a.max(b));
                *scale * m * m
            }
            NodeWeights::Pointwise { .. } => {
                let n = grid.len();
                par_map_max(n, |i| {
                    let mut m = T::zero();
                    for j in 0..n {
                        m = m.max(nw.pair(i, j));
                    }
                    m
                })
            }
        })
    }
}

/// Weight values on node pairs of a fixed grid.
pub enum NodeWeights<'a, T> {
    Constant(T),
    Product {
        scale: T,
        factors: Vec<T>,
    },
    Pointwise {
        family: &'a WeightFamily<T>,
        choice: WeightChoice<T>,
        grid: Grid<T>,
    },
}

impl<T: Real> NodeWeights<'_, T> {
    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> T {
        match self {
            Self::Constant(c) => *c,
            Self::Product { scale, factors } => *scale * factors[i] * factors[j],
            Self::Pointwise {
                family,
                choice,
                grid,
            } => {
                let d = grid.dim();
                family.eval(*choice, &grid.coord(i)[..d], &grid.coord(j)[..d])
            }
        }
    }
}

/// The diagonal trace `w^0(x) = w(x, x)` sampled on a grid.
pub type DiagonalWeight<T> = GridFunction<T>;

/// Samples `w(x, x)` (limit weight) at every node.
pub fn diagonal_trace<T: Real>(wf: &WeightFamily<T>, grid: Grid<T>) -> Result<DiagonalWeight<T>> {
    diagonal_of(wf, WeightChoice::Limit, grid)
}

/// Samples `w_k(x, x)` or `w(x, x)` at every node.
pub fn diagonal_of<T: Real>(
    wf: &WeightFamily<T>,
    choice: WeightChoice<T>,
    grid: Grid<T>,
) -> Result<DiagonalWeight<T>> {
    let dim = grid.dim();
    let g = GridFunction::sample(grid, |x| wf.eval(choice, &x[..dim], &x[..dim]))?;
    crate::grid::check_nonnegative(&g)?;
    Ok(g)
}

/// A finite set of point pairs `(x, y)` standing in for the sup/inf of a
/// continuous weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleNet<T> {
    dim: usize,
    spacing: T,
    pairs: Vec<([T; 2], [T; 2])>,
}

fn lattice<T: Real>(
    dim: usize,
    lo: T,
    hi: T,
    spacing: T,
    keep: impl Fn(&[T]) -> bool,
) -> Vec<[T; 2]> {
    let n = ((hi - lo) / spacing).round().to_usize().unwrap_or(0);
    let c = |i: usize| lo + (hi - lo) * from_usize::<T>(i) / from_usize::<T>(n.max(1));
    let mut out = Vec::new();
    for i in 0..=n {
        if dim == 1 {
            let p = [c(i), T::zero()];
            if keep(&p[..1]) {
                out.push(p);
            }
        } else {
            for j in 0..=n {
                let p = [c(i), c(j)];
                if keep(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

impl<T: Real> SampleNet<T> {
    /// All pairs of lattice points of `[lo, hi]^N` with the given spacing.
    pub fn box_pairs(dim: usize, lo: T, hi: T, spacing: T) -> Result<Self> {
        if !(spacing > T::zero()) || !(hi > lo) {
            return invalid("sample net needs positive spacing and a nonempty box");
        }
        let pts = lattice(dim, lo, hi, spacing, |_| true);
        let mut pairs = Vec::with_capacity(pts.len() * pts.len());
        for x in &pts {
            for y in &pts {
                pairs.push((*x, *y));
            }
        }
        Ok(Self {
            dim,
            spacing,
            pairs,
        })
    }

    /// Pairs `(x, x + z)` with `x` in the closed ball `B_R` and `z` in `B_{2R}`.
    pub fn ell_net(dim: usize, r: T, spacing: T) -> Result<Self> {
        if !(spacing > T::zero()) || !(r > T::zero()) {
            return invalid("ell_R net needs positive radius and spacing");
        }
        let slack = spacing * lit(1e-9);
        let xs = lattice(dim, -r, r, spacing, |p| norm(p) <= r + slack);
        let two = r + r;
        let zs = lattice(dim, -two, two, spacing, |p| norm(p) <= two + slack);
        let mut pairs = Vec::with_capacity(xs.len() * zs.len());
        for x in &xs {
            for z in &zs {
                pairs.push((*x, [x[0] + z[0], x[1] + z[1]]));
            }
        }
        Ok(Self {
            dim,
            spacing,
            pairs,
        })
    }

    /// A net made of explicit pairs.
    pub fn from_pairs(dim: usize, spacing: T, pairs: Vec<([T; 2], [T; 2])>) -> Self {
        Self {
            dim,
            spacing,
            pairs,
        }
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[([T; 2], [T; 2])] {
        &self.pairs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `max |w_k - w|` over the net.
pub fn sup_distance<T: Real>(wf: &WeightFamily<T>, index: T, net: &SampleNet<T>) -> T {
    let d = net.dim;
    let pairs = net.pairs();
    par_map_max(pairs.len(), |i| {
        let (x, y) = &pairs[i];
        (wf.eval_k(index, &x[..d], &y[..d]) - wf.eval_limit(&x[..d], &y[..d])).abs()
    })
    .max(T::zero())
}

/// `min w(x, x + z)` over a net built by [`SampleNet::ell_net`].
pub fn ell_r<T: Real>(wf: &WeightFamily<T>, net: &SampleNet<T>) -> Result<T> {
    if net.is_empty() {
        return invalid("empty sample net");
    }
    let d = net.dim;
    let pairs = net.pairs();
    Ok(-par_map_max(pairs.len(), |i| {
        let (x, y) = &pairs[i];
        -wf.eval_limit(&x[..d], &y[..d])
    }))
}

/// Sampled gap and closed-form bound for the mollified weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifiedGap<T> {
    pub j: u32,
    /// `max |w[eta_j] - w|` over the net.
    pub gap: T,
    /// `|B_1| ||eta||_inf omega(2 / j)`.
    pub bound: T,
}

/// Compares `w[eta_j](x, y) = int w(x + z, y + z) eta_j(z) dz` with `w` on a net.
pub fn mollified_weight_gap<T: Real>(
    wf: &WeightFamily<T>,
    j: u32,
    net: &SampleNet<T>,
) -> Result<MollifiedGap<T>> {
    let modulus = wf.modulus().ok_or_else(|| {
        Error::PreconditionFailed("mollified weight bound needs a modulus of continuity".into())
    })?;
    if j == 0 {
        return invalid("mollifier index must be >= 1");
    }
    let d = net.dim;
    let jt = from_usize::<T>(j as usize);
    let rad = jt.recip();
    let pairs = net.pairs();
    let jn = jt.powi(d as i32);
    let smoothed = |x: &[T; 2], y: &[T; 2]| -> T {
        if d == 1 {
            let f = |z: T| {
                wf.eval_limit(&[x[0] + z], &[y[0] + z])
                    * jn
                    * mollifier_profile::<T>(1, (z * jt).abs())
            };
            gauss(&f, -rad, rad, 32)
        } else {
            // polar coordinates, 32 angles (periodic trapezoid) times Gauss in r
            let m = 32usize;
            let mut acc = T::zero();
            for a in 0..m {
                let th = T::TAU() * from_usize::<T>(a) / from_usize::<T>(m);
                let (c, s) = (th.cos(), th.sin());
                let f = |r: T| {
                    let z = [c * r, s * r];
                    wf.eval_limit(&[x[0] + z[0], x[1] + z[1]], &[y[0] + z[0], y[1] + z[1]])
                        * jn
                        * mollifier_profile::<T>(2, r * jt)
                        * r
                };
                acc += gauss(&f, T::zero(), rad, 32);
            }
            acc * T::TAU() / from_usize::<T>(m)
        }
    };
    let gap = par_map_max(pairs.len(), |i| {
        let (x, y) = &pairs[i];
        (smoothed(x, y) - wf.eval_limit(&x[..d], &y[..d])).abs()
    })
    .max(T::zero());
    let bound = unit_ball_volume::<T>(d) * mollifier_sup::<T>(d) * modulus.eval(lit::<T>(2.0) / jt);
    Ok(MollifiedGap { j, gap, bound })
}

/// A quadruple at which the claimed modulus fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusWitness<T> {
    pub x: [T; 2],
    pub y: [T; 2],
    pub x2: [T; 2],
    pub y2: [T; 2],
    pub lhs: T,
    pub rhs: T,
}

/// Result of [`modulus_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModulusReport<T> {
    pub checked: usize,
    pub violations: Vec<ModulusWitness<T>>,
}

/// Tests `|w(x, y) - w(x', y')| <= omega(|x - x'| + |y - y'|)` on random
/// quadruples drawn from `[lo, hi]^N`, with perturbations on scales from
/// `10^-3` to `1` of the box size.
pub fn modulus_check<T: Real>(
    wf: &WeightFamily<T>,
    lo: T,
    hi: T,
    count: usize,
    seed: u64,
) -> Result<ModulusReport<T>> {
    let modulus = wf
        .modulus()
        .ok_or_else(|| Error::PreconditionFailed("no modulus of continuity supplied".into()))?;
    let d = wf.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo64, hi64) = (crate::scalar::to_f64(lo), crate::scalar::to_f64(hi));
    let size = hi64 - lo64;
    let mut violations = Vec::new();
    for _ in 0..count {
        let mut q = [[T::zero(); 2]; 4];
        for a in 0..d {
            q[0][a] = lit(rng.gen_range(lo64..hi64));
            q[1][a] = lit(rng.gen_range(lo64..hi64));
        }
        let scale = size * 10f64.powf(-rng.gen_range(0.0..3.0));
        for a in 0..d {
            q[2][a] = q[0][a] + lit::<T>(rng.gen_range(-1.0..1.0) * scale);
            q[3][a] = q[1][a] + lit::<T>(rng.gen_range(-1.0..1.0) * scale);
        }
        let lhs =
            (wf.eval_limit(&q[0][..d], &q[1][..d]) - wf.eval_limit(&q[2][..d], &q[3][..d])).abs();
        let dx: Vec<T> = (0..d).map(|a| q[0][a] - q[2][a]).collect();
        let dy: Vec<T> = (0..d).map(|a| q[1][a] - q[3][a]).collect();
        let rhs = modulus.eval(norm(&dx) + norm(&dy));
        let slack = T::epsilon() * lit::<T>(64.0) * (T::one() + lhs.abs());
        if lhs > rhs + slack {
            violations.push(ModulusWitness {
                x: q[0],
                y: q[1],
                x2: q[2],
                y2: q[3],
                lhs,
                rhs,
            });
        }
    }
    Ok(ModulusReport {
        checked: count,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f_cos(x: &[f64]) -> f64 {
        2.0 + x[0].cos()
    }

    fn product_cos() -> WeightFamily<f64> {
        WeightFamily::product(
            1,
            f_cos,
            |k: f64, x: &[f64]| (1.0 + 1.0 / k) * f_cos(x),
            Some(1.0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn product_weight_values() {
        let w = product_cos();
        assert_eq!(w.eval_limit(&[0.0], &[0.0]), 9.0);
        assert_eq!(w.modulus().unwrap().lipschitz, 3.0);
        let one = WeightFamily::<f64>::product(1, |_| 1.0, |_, _| 1.0, Some(0.0), None).unwrap();
        assert_eq!(one.eval_limit(&[0.3], &[-2.0]), 1.0);
        assert_eq!(one.modulus().unwrap().eval(5.0), 0.0);
        assert!(WeightFamily::<f64>::product(1, |x| x[0], |_, x| x[0], Some(1.0), None).is_err());
    }

    #[test]
    fn modulus_holds_for_product_and_fails_when_understated() {
        let w = product_cos();
        let rep = modulus_check(&w, -4.0, 4.0, 10_000, 7).unwrap();
        assert!(rep.violations.is_empty(), "{:?}", rep.violations.first());
        let broken =
            WeightFamily::product(1, f_cos, |_, x: &[f64]| f_cos(x), Some(0.1), None).unwrap();
        let rep = modulus_check(&broken, -4.0, 4.0, 10_000, 7).unwrap();
        assert!(!rep.violations.is_empty());
        let v = rep.violations[0];
        assert!(v.lhs > v.rhs);
    }

    #[test]
    fn diagonal_traces() {
        let g = Grid::new(&[-2.0], &[2.0], 0.125).unwrap();
        let one = diagonal_trace(&WeightFamily::one(1), g).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        let w = product_cos();
        let d = diagonal_trace(&w, g).unwrap();
        for i in 0..g.len() {
            let x = g.coord(i)[0];
            assert_eq!(d.values()[i], f_cos(&[x]) * f_cos(&[x]));
        }
        let dist = WeightFamily::general(
            1,
            |x: &[f64], y: &[f64]| (x[0] - y[0]).abs().min(1.0),
            |_, x: &[f64], y: &[f64]| (x[0] - y[0]).abs().min(1.0),
            Some(2.0),
        );
        assert!(diagonal_trace(&dist, g)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn sup_distances() {
        let net = SampleNet::box_pairs(1, -2.0, 2.0, 1.0 / 32.0).unwrap();
        let w = product_cos();
        for k in [1.0, 4.0, 10.0] {
            let exact = (2.0 / k + 1.0 / (k * k)) * 9.0;
            assert!((sup_distance(&w, k, &net) - exact).abs() < 1e-12 * exact);
        }
        let shifted = WeightFamily::general(
            1,
            |_: &[f64], _: &[f64]| 2.0,
            |k: f64, _: &[f64], _: &[f64]| 2.0 + 1.0 / k,
            None,
        );
        assert_eq!(sup_distance(&shifted, 8.0, &net), 0.125);
        assert_eq!(sup_distance(&WeightFamily::one(1), 3.0, &net), 0.0);
    }

    #[test]
    fn ell_r_dense_scan() {
        let w = product_cos();
        let net = SampleNet::ell_net(1, 1.0, 1.0 / 64.0).unwrap();
        let got = ell_r(&w, &net).unwrap();
        // independent scan over x in [-1, 1], y = x + z in [x - 2, x + 2]
        let mut best = f64::INFINITY;
        for i in 0..=2000 {
            let x = -1.0 + 2.0 * i as f64 / 2000.0;
            for j in 0..=4000 {
                let z = -2.0 + 4.0 * j as f64 / 4000.0;
                best = best.min(f_cos(&[x]) * f_cos(&[x + z]));
            }
        }
        assert!((got - best).abs() < 1e-6, "{got} vs {best}");
        assert!(got >= 1.0);
        assert_eq!(ell_r(&WeightFamily::one(1), &net).unwrap(), 1.0);
        let empty = SampleNet::<f64>::from_pairs(1, 0.1, vec![]);
        assert!(ell_r(&w, &empty).is_err());
    }

    #[test]
    fn mollified_gap_below_bound() {
        let w = product_cos();
        let net = SampleNet::box_pairs(1, -2.0, 2.0, 1.0 / 8.0).unwrap();
        for j in [4u32, 16, 64] {
            let g = mollified_weight_gap(&w, j, &net).unwrap();
            assert!(g.gap <= g.bound, "{g:?}");
            assert!(g.gap > 0.0);
        }
        let c = WeightFamily::one(1).scaled(3.0).unwrap();
        let g = mollified_weight_gap(&c, 4, &net).unwrap();
        assert!(g.gap < 1e-14);
        let dist = WeightFamily::general(
            1,
            |x: &[f64], y: &[f64]| (x[0] - y[0]).abs(),
            |_, x: &[f64], y: &[f64]| (x[0] - y[0]).abs(),
            Some(2.0),
        );
        assert!(mollified_weight_gap(&dist, 8, &net).unwrap().gap < 1e-13);
    }

    #[test]
    fn mollified_gap_2d() {
        let f = |x: &[f64]| 2.0 + x[0].cos() * x[1].cos();
        let w =
            WeightFamily::product(2, f, move |_, x: &[f64]| f(x), Some(2f64.sqrt()), None).unwrap();
        let net = SampleNet::box_pairs(2, -1.0, 1.0, 0.5).unwrap();
        let g = mollified_weight_gap(&w, 4, &net).unwrap();
        assert!(g.gap <= g.bound && g.gap > 0.0, "{g:?}");
    }

    proptest! {
        #[test]
        fn ell_r_nonincreasing(r in 0.25f64..2.0) {
            let w = product_cos();
            let a = ell_r(&w, &SampleNet::ell_net(1, r, 1.0 / 16.0).unwrap()).unwrap();
            let b = ell_r(&w, &SampleNet::ell_net(1, 2.0 * r, 1.0 / 16.0).unwrap()).unwrap();
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn sup_distance_triangle(k1 in 1.0f64..50.0, k2 in 1.0f64..50.0) {
            let w = product_cos();
            let net = SampleNet::box_pairs(1, -2.0, 2.0, 1.0 / 8.0).unwrap();
            let d12 = par_map_max(net.len(), |i| {
                let (x, y) = &net.pairs()[i];
                (w.eval_k(k1, &x[..1], &y[..1]) - w.eval_k(k2, &x[..1], &y[..1])).abs()
            });
            prop_assert!(d12 <= sup_distance(&w, k1, &net) + sup_distance(&w, k2, &net) + 1e-12);
        }
    }
}
