//! Weighted nonlocal energies, the local limit energy, Gagliardo-type
//! seminorms, general `J`-functionals, and the quantitative inequalities
//! relating them.
//!
//! All double integrals are node-pair sums over a [`Grid`]: the pair `(x, y)`
//! with lattice offset `z = y - x` carries the coefficient of its offset
//! cell. Pairs farther apart than the truncation radius are dropped and the
//! dropped mass is bounded separately.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::functions::ClosedForm;
use crate::grid::{box_mollify, directional_seminorm, same_grid, DomainMask, Grid, GridFunction};
use crate::kernels::{
    kernel_moment, IndexKind, KernelFamily, KernelMember, KernelQuadrature, LimitMeasure, PowerLaw,
};
use crate::quadrature::gauss;
use crate::reduce::{pairwise_sum, par_map_max, par_map_sum};
use crate::scalar::{from_usize, lit, norm, pow_abs, sphere_measure, to_f64, Real};
use crate::weights::{ell_r, sup_distance, NodeWeights, SampleNet, WeightChoice, WeightFamily};

/// How the coefficient of an offset cell is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureRule {
    /// `rho(z) / |z|^p` at the offset; the cell `|z| < h/2` is dropped.
    Midpoint,
    /// Exact cell integrals of `rho` for pure power-law kernels plus a
    /// one-cell Taylor correction on the diagonal; other kernels fall back to
    /// [`QuadratureRule::Midpoint`] and the dropped diagonal is reported.
    SingularCorrected,
}

/// Discretization controls for the double sums.
#[derive(Debug, Clone, Copy)]
pub struct EnergyOptions<T> {
    /// Pairs with `|x - y| > truncation` are dropped.
    pub truncation: T,
    /// Radius separating the near, mid and far bands (`|z| < delta`,
    /// `delta <= |z| <= 1/delta`, `|z| > 1/delta`).
    pub delta: T,
    pub rule: QuadratureRule,
    /// Totals beyond this magnitude are reported as non-integrable.
    pub overflow_guard: f64,
}

impl<T: Real> Default for EnergyOptions<T> {
    fn default() -> Self {
        Self {
            truncation: lit(8.0),
            delta: lit(0.125),
            rule: QuadratureRule::SingularCorrected,
            overflow_guard: 1e200,
        }
    }
}

/// An energy split by interaction distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown<T> {
    pub total: T,
    /// `|z| < delta`, including the diagonal cell.
    pub near_field: T,
    pub mid_field: T,
    pub far_field: T,
    /// Contribution of the diagonal cell (zero when omitted).
    pub diagonal: T,
    pub delta: T,
    pub truncation_radius: T,
    /// Set when the diagonal cell was dropped rather than corrected.
    pub diagonal_omitted: bool,
    /// Bound on the mass of pairs beyond the truncation radius, when available.
    pub far_tail_bound: Option<T>,
}

impl<T: Real> EnergyBreakdown<T> {
    fn scaled_parts(near: T, mid: T, far: T, diag: T, h2n: T) -> (T, T, T, T) {
        let total = (near + mid + far) * h2n + diag;
        (total, near * h2n + diag, mid * h2n, far * h2n)
    }
}

/// Per-offset coefficients of a kernel on a lattice with spacing `h`.
#[derive(Debug, Clone)]
pub struct KernelTable<T> {
    dim: usize,
    h: T,
    m: usize,
    width1: usize,
    coef: Vec<T>,
    valid: Vec<bool>,
    band: Vec<u8>,
    offsets: Vec<(isize, isize, usize)>,
    diagonal: Vec<(T, [T; 2])>,
    /// `(c / a, a)` of the power law behind `diagonal`.
    diagonal_law: Option<(T, T)>,
    diagonal_omitted: bool,
    truncation: T,
    delta: T,
}

/// `(c / a) (r_out^a - r_in^a)` integrated over the angles a cell subtends;
/// this is `int_cell c |z|^{a - 2} dz` in 2D.
fn power_cell_2d<T: Real>(law: &PowerLaw<T>, a: T, lo: [T; 2], hi: [T; 2]) -> T {
    let corners = [
        [lo[0], lo[1]],
        [hi[0], lo[1]],
        [lo[0], hi[1]],
        [hi[0], hi[1]],
    ];
    let cx = (lo[0] + hi[0]) * lit(0.5);
    let cy = (lo[1] + hi[1]) * lit(0.5);
    let th0 = cy.atan2(cx);
    let wrap = |t: T| {
        let mut d = t - th0;
        while d > T::PI() {
            d -= T::TAU();
        }
        while d <= -T::PI() {
            d += T::TAU();
        }
        d
    };
    let mut phis: Vec<T> = corners.iter().map(|c| wrap(c[1].atan2(c[0]))).collect();
    phis.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let ray = |phi: T| -> T {
        let th = th0 + phi;
        let d = [th.cos(), th.sin()];
        let mut t_in = T::zero();
        let mut t_out = T::infinity();
        for ax in 0..2 {
            if d[ax] != T::zero() {
                let t1 = lo[ax] / d[ax];
                let t2 = hi[ax] / d[ax];
                t_in = t_in.max(t1.min(t2));
                t_out = t_out.min(t1.max(t2));
            }
        }
        if t_out <= t_in {
            T::zero()
        } else {
            law.coef / a * (t_out.powf(a) - t_in.powf(a))
        }
    };
    let mut acc = T::zero();
    for w in phis.windows(2) {
        if w[1] > w[0] {
            acc += gauss(&ray, w[0], w[1], 16);
        }
    }
    acc
}

impl<T: Real> KernelTable<T> {
    fn skeleton(dim: usize, h: T, truncation: T, delta: T) -> Result<Self> {
        if !(truncation > T::zero()) || !(h > T::zero()) {
            return invalid("truncation radius and spacing must be positive");
        }
        if !(delta > T::zero() && delta < T::one()) {
            return invalid("band radius delta must lie in (0, 1)");
        }
        let m = (truncation / h + lit(1e-9)).floor().to_usize().unwrap_or(0);
        if m == 0 {
            return invalid("truncation radius is below the grid spacing");
        }
        let m1 = if dim == 2 { m } else { 0 };
        let width1 = 2 * m1 + 1;
        let size = (2 * m + 1) * width1;
        let slack = h * lit(1e-9);
        let inv_delta = delta.recip();
        let mut valid = vec![false; size];
        let mut band = vec![0u8; size];
        let mut offsets = Vec::new();
        for d0 in -(m as isize)..=(m as isize) {
            for d1 in -(m1 as isize)..=(m1 as isize) {
                if d0 == 0 && d1 == 0 {
                    continue;
                }
                let z = [
                    from_usize::<T>(d0.unsigned_abs()) * h,
                    from_usize::<T>(d1.unsigned_abs()) * h,
                ];
                let r = norm(&z[..dim]);
                if r > truncation + slack {
                    continue;
                }
                let o = (d0 + m as isize) as usize * width1 + (d1 + m1 as isize) as usize;
                valid[o] = true;
                band[o] = if r < delta {
                    0
                } else if r <= inv_delta {
                    1
                } else {
                    2
                };
                offsets.push((d0, d1, o));
            }
        }
        Ok(Self {
            dim,
            h,
            m,
            width1,
            coef: vec![T::zero(); size],
            valid,
            band,
            offsets,
            diagonal: Vec::new(),
            diagonal_law: None,
            diagonal_omitted: true,
            truncation,
            delta,
        })
    }

    /// Offset vector `z = (d0 h, d1 h)` of a dense index.
    #[inline]
    pub fn z_of(&self, d0: isize, d1: isize) -> [T; 2] {
        let h = self.h;
        let s = |d: isize| {
            let v = from_usize::<T>(d.unsigned_abs()) * h;
            if d < 0 {
                -v
            } else {
                v
            }
        };
        [s(d0), s(d1)]
    }

    /// Coefficients of `kernel` for exponent `p` under `opts.rule`.
    pub fn for_kernel(
        kernel: &KernelMember<T>,
        p: T,
        h: T,
        opts: &EnergyOptions<T>,
    ) -> Result<Self> {
        let dim = kernel.dim();
        let mut t = Self::skeleton(dim, h, opts.truncation, opts.delta)?;
        let law = match opts.rule {
            QuadratureRule::SingularCorrected => kernel.power_law(),
            QuadratureRule::Midpoint => None,
        };
        let n = from_usize::<T>(dim);
        if let Some(law) = law {
            let a = law.exponent + n;
            if !(a > T::zero()) {
                return Err(Error::Singularity {
                    cell: "diagonal cell |z| < h/2".into(),
                    value: to_f64(a),
                });
            }
            let hn = h.powi(dim as i32);
            let half = h * lit(0.5);
            let coefs: Vec<(usize, T)> = t
                .offsets
                .par_iter()
                .map(|&(d0, d1, o)| {
                    let z = t.z_of(d0, d1);
                    let r = norm(&z[..dim]);
                    let cell = if dim == 1 {
                        let rin = r - half;
                        let rout = r + half;
                        law.coef / a * (rout.powf(a) - rin.powf(a))
                    } else {
                        power_cell_2d(
                            &law,
                            a,
                            [z[0] - half, z[1] - half],
                            [z[0] + half, z[1] + half],
                        )
                    };
                    (o, cell / (hn * r.powf(p)))
                })
                .collect();
            for (o, c) in coefs {
                t.coef[o] = c;
            }
            t.diagonal = diagonal_nodes(&law, a, h, dim);
            t.diagonal_law = Some((law.coef / a, a));
            t.diagonal_omitted = false;
        } else {
            let coefs: Vec<(usize, T)> = t
                .offsets
                .par_iter()
                .map(|&(d0, d1, o)| {
                    let z = t.z_of(d0, d1);
                    let zz = &z[..dim];
                    (o, kernel.eval(zz) / norm(zz).powf(p))
                })
                .collect();
            for (o, c) in coefs {
                t.coef[o] = c;
            }
        }
        if let Some(&(d0, d1, o)) = t
            .offsets
            .iter()
            .find(|&&(_, _, o)| !(t.coef[o] >= T::zero()) || !t.coef[o].is_finite())
        {
            return Err(Error::Singularity {
                cell: format!("offset {:?}", &t.z_of(d0, d1)[..dim]),
                value: to_f64(t.coef[o]),
            });
        }
        Ok(t)
    }

    /// A table with unit coefficients for functionals whose pair weights are
    /// evaluated pointwise.
    pub fn unit(dim: usize, h: T, reach: T, delta: T) -> Result<Self> {
        let mut t = Self::skeleton(dim, h, reach, delta)?;
        for &(_, _, o) in &t.offsets {
            t.coef[o] = T::one();
        }
        Ok(t)
    }

    pub fn max_offset(&self) -> usize {
        self.m
    }

    pub fn offsets(&self) -> &[(isize, isize, usize)] {
        &self.offsets
    }

    pub fn coef(&self, o: usize) -> T {
        self.coef[o]
    }

    /// Dense index of an offset, or `None` beyond the truncation radius.
    #[inline]
    pub fn index_of(&self, d0: isize, d1: isize) -> Option<usize> {
        let m = self.m as isize;
        let m1 = if self.dim == 2 { m } else { 0 };
        if d0.abs() > m || d1.abs() > m1 {
            return None;
        }
        let o = (d0 + m) as usize * self.width1 + (d1 + m1) as usize;
        if self.valid[o] {
            Some(o)
        } else {
            None
        }
    }

    /// Angular nodes `(weight, sigma)` of the diagonal-cell correction.
    pub fn diagonal_nodes(&self) -> &[(T, [T; 2])] {
        &self.diagonal
    }

    pub fn diagonal_omitted(&self) -> bool {
        self.diagonal_omitted
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn truncation(&self) -> T {
        self.truncation
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `h^N sum_{|z_o| > r} coef_o`, the discrete `int_{|z| > r} rho / |z|^p`.
    pub fn tail_sum(&self, r: T) -> T {
        let hn = self.h.powi(self.dim as i32);
        let parts: Vec<T> = self
            .offsets
            .iter()
            .filter(|&&(d0, d1, _)| norm(&self.z_of(d0, d1)[..self.dim]) > r)
            .map(|&(_, _, o)| self.coef[o])
            .collect();
        pairwise_sum(&parts) * hn
    }
}

/// Angular quadrature of the diagonal cell `|z|_inf < h/2` for
/// `rho = c r^{a - N}`: `int rho(z) |sigma . g|^p dz` becomes
/// `sum_q weight_q |sigma_q . g|^p`.
fn diagonal_nodes<T: Real>(law: &PowerLaw<T>, a: T, h: T, dim: usize) -> Vec<(T, [T; 2])> {
    let half = h * lit(0.5);
    if dim == 1 {
        let w = law.coef * half.powf(a) / a;
        return vec![(w, [T::one(), T::zero()]), (w, [-T::one(), T::zero()])];
    }
    let rule = crate::quadrature::gauss_legendre_f64(16);
    let mut out = Vec::with_capacity(8 * rule.len());
    let eighth = T::FRAC_PI_4();
    for k in 0..8 {
        let lo = eighth * from_usize::<T>(k);
        let mid = lo + eighth * lit(0.5);
        for &(x, w) in &rule {
            let th = mid + eighth * lit(0.5) * lit(x);
            let (c, s) = (th.cos(), th.sin());
            let r = half / c.abs().max(s.abs());
            out.push((
                lit::<T>(w) * eighth * lit(0.5) * law.coef / a * r.powf(a),
                [c, s],
            ));
        }
    }
    out
}

/// One-sided differences `[(D_a^+ u, D_a^- u); N]` at node `i`; on the box
/// boundary the missing side repeats the available one.
#[inline]
fn one_sided<T: Real>(grid: &Grid<T>, vals: &[T], i: usize) -> [[T; 2]; 2] {
    let h = grid.h();
    let mut out = [[T::zero(); 2]; 2];
    for (a, slot) in out.iter_mut().enumerate().take(grid.dim()) {
        let mut e = [0isize; 2];
        e[a] = 1;
        let f = grid.shifted(i, e).map(|j| (vals[j] - vals[i]) / h);
        let b = grid
            .shifted(i, [-e[0], -e[1]])
            .map(|j| (vals[i] - vals[j]) / h);
        *slot = match (f, b) {
            (Some(f), Some(b)) => [f, b],
            (Some(f), None) => [f, f],
            (None, Some(b)) => [b, b],
            (None, None) => [T::zero(); 2],
        };
    }
    out
}

/// `sum_q weight_q |sum_a sigma_a D_a^{sign sigma_a} u(i)|^p`.
#[inline]
fn diagonal_value<T: Real>(table: &KernelTable<T>, d: &[[T; 2]; 2], dim: usize, p: T) -> T {
    if let (2, Some((scale, a))) = (dim, table.diagonal_law) {
        if p != lit(2.0) {
            return diagonal_value_kinked(scale, a, table.h * lit(0.5), d, p);
        }
    }
    let mut acc = T::zero();
    for (w, s) in &table.diagonal {
        let mut g = T::zero();
        for a in 0..dim {
            g += if s[a] >= T::zero() {
                s[a] * d[a][0]
            } else {
                s[a] * d[a][1]
            };
        }
        acc += *w * pow_abs(g, p);
    }
    acc
}

/// The 2D diagonal cell for `p != 2`: `|sigma . g|^p` has a kink where
/// `sigma . g` changes sign, so each octant is split there and both pieces
/// are graded towards the kink.
fn diagonal_value_kinked<T: Real>(scale: T, a: T, half: T, d: &[[T; 2]; 2], p: T) -> T {
    const GRADE: i32 = 4;
    let eighth = T::FRAC_PI_4();
    let mut acc = T::zero();
    for k in 0..8 {
        let lo = eighth * from_usize::<T>(k);
        let hi = lo + eighth;
        let mid = lo + eighth * lit(0.5);
        // one-sided differences are fixed inside a quadrant
        let gx = if mid.cos() >= T::zero() {
            d[0][0]
        } else {
            d[0][1]
        };
        let gy = if mid.sin() >= T::zero() {
            d[1][0]
        } else {
            d[1][1]
        };
        let f = |th: T| {
            let (c, s) = (th.cos(), th.sin());
            let r = half / c.abs().max(s.abs());
            scale * r.powf(a) * pow_abs(c * gx + s * gy, p)
        };
        // zeros of gx cos + gy sin sit at phi +- pi/2, possibly on an octant edge
        let phi = gy.atan2(gx);
        let slack = eighth * lit(1e-12);
        let kink = [phi - T::FRAC_PI_2(), phi + T::FRAC_PI_2()]
            .into_iter()
            .flat_map(|z| {
                let z = z - T::TAU() * (z / T::TAU()).floor();
                [z, z - T::TAU(), z + T::TAU()]
            })
            .find(|&z| z > lo - slack && z < hi + slack)
            .map(|z| z.max(lo).min(hi));
        let graded = |from: T, to: T| {
            let len = to - from;
            let m: T = lit(GRADE as f64);
            gauss(
                &|v: T| f(from + len * v.powi(GRADE)) * len.abs() * m * v.powi(GRADE - 1),
                T::zero(),
                T::one(),
                16,
            )
        };
        acc += match kink {
            Some(z) if gx != T::zero() || gy != T::zero() => {
                let mut v = T::zero();
                if z - lo > slack {
                    v += graded(z, lo);
                }
                if hi - z > slack {
                    v += graded(z, hi);
                }
                v
            }
            _ => gauss(&f, lo, hi, 16),
        };
    }
    acc
}

/// Per-outer-node accumulator reduced with a fixed pairwise tree.
trait Accum<T>: Send + Sized {
    fn zero() -> Self;
    fn merge(self, other: Self) -> Self;
}

impl<T: Real, const K: usize> Accum<T> for [T; K] {
    fn zero() -> Self {
        [T::zero(); K]
    }
    fn merge(mut self, other: Self) -> Self {
        for k in 0..K {
            self[k] += other[k];
        }
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct GapAcc<T> {
    sums: [T; 3],
    max: T,
}

impl<T: Real> Accum<T> for GapAcc<T> {
    fn zero() -> Self {
        Self {
            sums: [T::zero(); 3],
            max: T::zero(),
        }
    }
    fn merge(self, o: Self) -> Self {
        Self {
            sums: [
                self.sums[0] + o.sums[0],
                self.sums[1] + o.sums[1],
                self.sums[2] + o.sums[2],
            ],
            max: self.max.max(o.max),
        }
    }
}

fn tree_reduce<T: Real, A: Accum<T> + Clone>(parts: &[A]) -> A {
    if parts.is_empty() {
        return A::zero();
    }
    if parts.len() <= 32 {
        return parts.iter().cloned().fold(A::zero(), |a, b| a.merge(b));
    }
    let mid = parts.len() / 2;
    tree_reduce::<T, A>(&parts[..mid]).merge(tree_reduce::<T, A>(&parts[mid..]))
}

/// Visits every node pair `(x, y)` with `y - x` in the table and
/// `u(x) != u(y)`, optionally restricted to `mask x mask`.
fn scan_pairs<T, A, V>(
    u: &GridFunction<T>,
    table: &KernelTable<T>,
    p: T,
    mask: Option<&[bool]>,
    visit: V,
) -> Vec<A>
where
    T: Real,
    A: Accum<T>,
    V: Fn(&mut A, usize, usize, usize, T) + Sync,
{
    let grid = *u.grid();
    let vals = u.values();
    let shape = grid.shape();
    let bbox = u.nonzero_bbox();
    (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let mut acc = A::zero();
            let bb = match bbox {
                Some(b) => b,
                None => return acc,
            };
            if let Some(m) = mask {
                if !m[x] {
                    return acc;
                }
            }
            let mx = grid.multi(x);
            let ux = vals[x];
            if ux != T::zero() {
                for &(d0, d1, o) in &table.offsets {
                    let y0 = mx[0] as isize + d0;
                    let y1 = mx[1] as isize + d1;
                    if y0 < 0 || y1 < 0 || y0 >= shape[0] as isize || y1 >= shape[1] as isize {
                        continue;
                    }
                    let y = y0 as usize * shape[1] + y1 as usize;
                    if let Some(m) = mask {
                        if !m[y] {
                            continue;
                        }
                    }
                    let dp = pow_abs(ux - vals[y], p);
                    if dp != T::zero() {
                        visit(&mut acc, x, y, o, dp);
                    }
                }
            } else {
                let m = table.m as isize;
                let lo0 = bb[0][0].max((mx[0] as isize - m).max(0) as usize);
                let hi0 = bb[0][1].min((mx[0] as isize + m) as usize);
                let (lo1, hi1) = if grid.dim() == 2 {
                    (
                        bb[1][0].max((mx[1] as isize - m).max(0) as usize),
                        bb[1][1].min((mx[1] as isize + m) as usize),
                    )
                } else {
                    (0, 0)
                };
                if lo0 > hi0 || lo1 > hi1 {
                    return acc;
                }
                for y0 in lo0..=hi0 {
                    for y1 in lo1..=hi1 {
                        let y = y0 * shape[1] + y1;
                        let uy = vals[y];
                        if uy == T::zero() {
                            continue;
                        }
                        let d0 = y0 as isize - mx[0] as isize;
                        let d1 = y1 as isize - mx[1] as isize;
                        let o = match table.index_of(d0, d1) {
                            Some(o) => o,
                            None => continue,
                        };
                        if let Some(m) = mask {
                            if !m[y] {
                                continue;
                            }
                        }
                        let dp = pow_abs(ux - uy, p);
                        visit(&mut acc, x, y, o, dp);
                    }
                }
            }
            acc
        })
        .collect()
}

fn check_p<T: Real>(p: T) -> Result<()> {
    if !(p >= T::one()) || !p.is_finite() {
        return invalid(format!("exponent p must be >= 1, got {p}"));
    }
    Ok(())
}

/// Whether `u` vanishes on every boundary node of its box.
fn vanishes_on_boundary<T: Real>(u: &GridFunction<T>) -> bool {
    let g = u.grid();
    let cells = g.cells();
    u.values().iter().enumerate().all(|(i, &v)| {
        if v == T::zero() {
            return true;
        }
        let m = g.multi(i);
        (0..g.dim()).all(|a| m[a] > 0 && m[a] < cells[a])
    })
}

/// Preconditions shared by the energies: a declared support radius `R`
/// needs `truncation >= 2R`, and a function vanishing on the box boundary
/// must keep every pair within the truncation radius inside the box.
/// Functions that do not vanish on the boundary are integrated over the box.
fn check_coverage<T: Real>(u: &GridFunction<T>, truncation: T) -> Result<()> {
    if let Some(r) = u.support_radius() {
        if truncation < r + r {
            return Err(Error::DomainTooSmall(format!(
                "truncation radius {truncation} is below twice the support radius {r}"
            )));
        }
    }
    if !vanishes_on_boundary(u) {
        return Ok(());
    }
    let g = u.grid();
    let bb = match u.nonzero_bbox() {
        Some(b) => b,
        None => return Ok(()),
    };
    let m = (truncation / g.h() + lit(1e-9))
        .floor()
        .to_usize()
        .unwrap_or(0);
    for a in 0..g.dim() {
        if bb[a][0] < m || bb[a][1] + m > g.cells()[a] {
            return Err(Error::DomainTooSmall(format!(
                "grid box must extend {truncation} beyond the support of u along axis {a}"
            )));
        }
    }
    Ok(())
}

fn check_dims<T: Real>(
    u: &GridFunction<T>,
    kernel: &KernelMember<T>,
    wf: &WeightFamily<T>,
) -> Result<()> {
    let d = u.grid().dim();
    if kernel.dim() != d || wf.dim() != d {
        return invalid("grid, kernel and weight dimensions differ");
    }
    Ok(())
}

fn guard<T: Real>(u: &GridFunction<T>, parts: &[[T; 3]], total: T, limit: f64) -> Result<()> {
    if total.is_finite() && to_f64(total).abs() <= limit {
        return Ok(());
    }
    let g = u.grid();
    let bad = parts
        .iter()
        .position(|a| a.iter().any(|v| !v.is_finite() || to_f64(*v).abs() > limit))
        .unwrap_or(0);
    Err(Error::Singularity {
        cell: format!("node at {:?}", &g.coord(bad)[..g.dim()]),
        value: to_f64(total),
    })
}

/// `int_{|z| > r} rho(z) / |z|^p dz`: closed form for power laws, radial
/// quadrature otherwise.
pub fn kernel_tail<T: Real>(kernel: &KernelMember<T>, p: T, r: T) -> Option<T> {
    let dim = kernel.dim();
    if let Some(law) = kernel.power_law() {
        let a = law.exponent + from_usize::<T>(dim);
        if a >= p {
            return None;
        }
        return Some(law.coef * sphere_measure::<T>(dim) * r.powf(a - p) / (p - a));
    }
    let g = |t: T| t.powf(-p);
    kernel_moment(
        &kernel.family,
        kernel.index,
        &g,
        r,
        T::infinity(),
        &KernelQuadrature::default(),
    )
    .ok()
}

/// The weighted nonlocal energy
/// `F(u) = int int |u(x) - u(y)|^p / |x - y|^p rho_k(x - y) w(x, y) dx dy`.
pub fn nonlocal_energy<T: Real>(
    u: &GridFunction<T>,
    kernel: &KernelMember<T>,
    wf: &WeightFamily<T>,
    choice: WeightChoice<T>,
    p: T,
    opts: &EnergyOptions<T>,
) -> Result<EnergyBreakdown<T>> {
    check_p(p)?;
    check_dims(u, kernel, wf)?;
    check_coverage(u, opts.truncation)?;
    let grid = *u.grid();
    let table = KernelTable::for_kernel(kernel, p, grid.h(), opts)?;
    let nw = wf.on_grid(choice, &grid)?;
    let parts: Vec<[T; 3]> = scan_pairs(u, &table, p, None, |acc: &mut [T; 3], x, y, o, dp| {
        acc[table.band[o] as usize] += table.coef[o] * nw.pair(x, y) * dp;
    });
    let sums = tree_reduce::<T, [T; 3]>(&parts);
    let diag = diagonal_sum(u, &table, &nw, p);
    let h2n = grid.cell_volume() * grid.cell_volume();
    let (total, near, mid, far) =
        EnergyBreakdown::scaled_parts(sums[0], sums[1], sums[2], diag, h2n);
    guard(u, &parts, total, opts.overflow_guard)?;
    let far_tail_bound = kernel_tail(kernel, p, opts.truncation).and_then(|tail| {
        let norm_p = crate::grid::lp_norm_pow(u, p).ok()?;
        let wsup = weight_sup(&nw, &grid);
        Some(lit::<T>(2.0).powf(p) * norm_p * tail * wsup)
    });
    Ok(EnergyBreakdown {
        total,
        near_field: near,
        mid_field: mid,
        far_field: far,
        diagonal: diag,
        delta: opts.delta,
        truncation_radius: opts.truncation,
        diagonal_omitted: table.diagonal_omitted,
        far_tail_bound,
    })
}

/// Largest node-pair weight (strided sampling for pointwise weights).
fn weight_sup<T: Real>(nw: &NodeWeights<'_, T>, grid: &Grid<T>) -> T {
    match nw {
        NodeWeights::Constant(c) => *c,
        NodeWeights::Product { scale, factors } => {
            let m = factors.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
            *scale * m * m
        }
        NodeWeights::Pointwise { .. } => {
            let cap = if grid.dim() == 1 { 1024 } else { 4096 };
            let stride = grid.len().div_ceil(cap).max(1);
            let idx: Vec<usize> = (0..grid.len()).step_by(stride).collect();
            par_map_max(idx.len(), |i| {
                idx.iter()
                    .fold(T::zero(), |m, &j| m.max(nw.pair(idx[i], j)))
            })
        }
    }
}

/// `sum_x h^N w(x, x) D_0(x)` over the diagonal cells.
fn diagonal_sum<T: Real>(
    u: &GridFunction<T>,
    table: &KernelTable<T>,
    nw: &NodeWeights<'_, T>,
    p: T,
) -> T {
    if table.diagonal.is_empty() {
        return T::zero();
    }
    let grid = *u.grid();
    let vals = u.values();
    let dim = grid.dim();
    let hn = grid.cell_volume();
    par_map_sum(grid.len(), |i| {
        let d = one_sided(&grid, vals, i);
        if d.iter()
            .take(dim)
            .all(|x| x[0] == T::zero() && x[1] == T::zero())
        {
            return T::zero();
        }
        nw.pair(i, i) * diagonal_value(table, &d, dim, p)
    }) * hn
}

/// The local limit energy `D(u) = int_{S^{N-1}} ||sigma . Du||^p_{L^p(w^0)} d mu(sigma)`.
pub fn limit_energy<T: Real>(
    u: &GridFunction<T>,
    mu: &LimitMeasure<T>,
    w0: &GridFunction<T>,
    p: T,
) -> Result<T> {
    same_grid(u.grid(), w0.grid())?;
    if mu.dim() != u.grid().dim() {
        return invalid("limit measure and grid dimensions differ");
    }
    mu.validate()?;
    let dim = mu.dim();
    let mut parts = Vec::with_capacity(mu.masses().len());
    for (i, &m) in mu.masses().iter().enumerate() {
        if m == T::zero() {
            continue;
        }
        let s = mu.direction(i);
        parts.push(m * directional_seminorm(u, &s[..dim], p, w0)?);
    }
    Ok(pairwise_sum(&parts))
}

/// `[u]^p = int int |u(x) - u(y)|^p kappa(x - y) w(x, y) dx dy`, computed by
/// the nonlocal engine with the kernel `kappa(z) |z|^p` and the midpoint rule.
pub fn gagliardo_seminorm<T: Real, K>(
    u: &GridFunction<T>,
    kappa: K,
    wf: &WeightFamily<T>,
    p: T,
    opts: &EnergyOptions<T>,
) -> Result<T>
where
    K: Fn(&[T]) -> T + Send + Sync + 'static,
{
    let dim = u.grid().dim();
    let fam = KernelFamily::general(dim, IndexKind::Integer, "kappa |z|^p", move |_, z: &[T]| {
        kappa(z) * norm(z).powf(p)
    })?;
    let member = fam.member(T::one())?;
    let o = EnergyOptions {
        rule: QuadratureRule::Midpoint,
        ..*opts
    };
    Ok(nonlocal_energy(u, &member, wf, WeightChoice::Limit, p, &o)?.total)
}

type PairEval<T> = std::sync::Arc<dyn Fn(T, &[T], &[T], &[T]) -> T + Send + Sync>;
type LimitPairEval<T> = std::sync::Arc<dyn Fn(&[T], &[T], &[T]) -> T + Send + Sync>;
type Predicate<T> = std::sync::Arc<dyn Fn(&[T], &[T]) -> bool + Send + Sync>;

/// A general interaction `J_k(x, y)` on `A x A` with its limit `J`.
///
/// The evaluators receive `(k, x, y, z)` and `(x, y, z)` where `z` is the
/// lattice offset `y - x` as used by the pair tables.
#[derive(Clone)]
pub struct JSpec<T> {
    pub domain: DomainMask<T>,
    eval_k: PairEval<T>,
    eval_limit: LimitPairEval<T>,
    /// Pairs with `|x - y| > reach` are ignored.
    pub reach: T,
    pub monotone_partition: Option<(Predicate<T>, Predicate<T>)>,
    pub domination_constant: Option<T>,
}

impl<T: Real> JSpec<T> {
    pub fn new<F, G>(domain: DomainMask<T>, reach: T, eval_k: F, eval_limit: G) -> Self
    where
        F: Fn(T, &[T], &[T], &[T]) -> T + Send + Sync + 'static,
        G: Fn(&[T], &[T], &[T]) -> T + Send + Sync + 'static,
    {
        Self {
            domain,
            eval_k: std::sync::Arc::new(eval_k),
            eval_limit: std::sync::Arc::new(eval_limit),
            reach,
            monotone_partition: None,
            domination_constant: None,
        }
    }

    pub fn with_partition<P, M>(mut self, h_plus: P, h_minus: M) -> Self
    where
        P: Fn(&[T], &[T]) -> bool + Send + Sync + 'static,
        M: Fn(&[T], &[T]) -> bool + Send + Sync + 'static,
    {
        self.monotone_partition = Some((std::sync::Arc::new(h_plus), std::sync::Arc::new(h_minus)));
        self
    }

    pub fn with_domination(mut self, c: T) -> Self {
        self.domination_constant = Some(c);
        self
    }

    pub fn eval_k(&self, k: T, x: &[T], y: &[T], z: &[T]) -> T {
        (self.eval_k)(k, x, y, z)
    }

    pub fn eval_limit(&self, x: &[T], y: &[T], z: &[T]) -> T {
        (self.eval_limit)(x, y, z)
    }
}

/// `J_k(u) = int_A int_A |u(x) - u(y)|^p J_k(x, y) dx dy` (or the limit
/// functional for [`WeightChoice::Limit`]).
pub fn j_energy<T: Real>(
    u: &GridFunction<T>,
    spec: &JSpec<T>,
    choice: WeightChoice<T>,
    p: T,
    delta: T,
) -> Result<T> {
    check_p(p)?;
    let grid = *u.grid();
    same_grid(&grid, spec.domain.grid())?;
    let inside = spec.domain.inside();
    if let Some(i) = u
        .values()
        .iter()
        .enumerate()
        .position(|(i, v)| *v != T::zero() && !inside[i])
    {
        return invalid(format!("u is nonzero at node {i} outside the domain A"));
    }
    let table = KernelTable::unit(grid.dim(), grid.h(), spec.reach, delta)?;
    let dim = grid.dim();
    let parts: Vec<[T; 3]> = scan_pairs(
        u,
        &table,
        p,
        Some(inside),
        |acc: &mut [T; 3], x, y, o, dp| {
            let (d0, d1) = offset_of(&grid, x, y);
            let z = table.z_of(d0, d1);
            let xc = grid.coord(x);
            let yc = grid.coord(y);
            let j = match choice {
                WeightChoice::Index(k) => spec.eval_k(k, &xc[..dim], &yc[..dim], &z[..dim]),
                WeightChoice::Limit => spec.eval_limit(&xc[..dim], &yc[..dim], &z[..dim]),
            };
            acc[table.band[o] as usize] += j * dp;
        },
    );
    let sums = tree_reduce::<T, [T; 3]>(&parts);
    let h2n = grid.cell_volume() * grid.cell_volume();
    let (total, ..) = EnergyBreakdown::scaled_parts(sums[0], sums[1], sums[2], T::zero(), h2n);
    if !total.is_finite() {
        return Err(Error::Singularity {
            cell: "J pair sum".into(),
            value: to_f64(total),
        });
    }
    Ok(total)
}

#[inline]
fn offset_of<T: Real>(grid: &Grid<T>, x: usize, y: usize) -> (isize, isize) {
    let a = grid.multi(x);
    let b = grid.multi(y);
    (b[0] as isize - a[0] as isize, b[1] as isize - a[1] as isize)
}

/// Outcome of one sampled condition in [`j_condition_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct JConditionRow<T> {
    pub condition: &'static str,
    pub eps: Option<T>,
    pub delta: Option<T>,
    pub passed: bool,
    /// Human-readable failing sample, if any.
    pub witness: Option<String>,
}

/// Checks the lower bound `inf_k J_k >= 1 / (eps delta^N)` for `|x - y| < delta`,
/// `liminf J_k >= J` (as `J_{k_last} >= (1 - liminf_tol) J`), the domination
/// `J_k <= C J` and the monotone partition on sampled pairs and indices.
/// Passing rows never certify a condition; failing rows carry a witness.
pub fn j_condition_check<T: Real>(
    spec: &JSpec<T>,
    indices: &[T],
    eps_delta: &[(T, T)],
    pairs: &[([T; 2], [T; 2])],
    liminf_tol: T,
) -> Result<Vec<JConditionRow<T>>> {
    if indices.is_empty() || pairs.is_empty() {
        return invalid("need indices and sample pairs");
    }
    let dim = spec.domain.grid().dim();
    let z_of = |x: &[T; 2], y: &[T; 2]| [y[0] - x[0], y[1] - x[1]];
    let mut rows = Vec::new();
    for &(eps, delta) in eps_delta {
        let threshold = (eps * delta.powi(dim as i32)).recip();
        let mut witness = None;
        'outer: for (x, y) in pairs {
            let z = z_of(x, y);
            let r = norm(&z[..dim]);
            if r == T::zero() || r >= delta {
                continue;
            }
            for &k in indices {
                let v = spec.eval_k(k, &x[..dim], &y[..dim], &z[..dim]);
                if v < threshold {
                    witness = Some(format!(
                        "J_{k}({:?}, {:?}) = {v:e} < {threshold:e}",
                        &x[..dim],
                        &y[..dim]
                    ));
                    break 'outer;
                }
            }
        }
        rows.push(JConditionRow {
            condition: "lower_bound",
            eps: Some(eps),
            delta: Some(delta),
            passed: witness.is_none(),
            witness,
        });
    }
    let last = *indices.last().unwrap();
    let mut witness = None;
    for (x, y) in pairs {
        let z = z_of(x, y);
        let j = spec.eval_limit(&x[..dim], &y[..dim], &z[..dim]);
        let jk = spec.eval_k(last, &x[..dim], &y[..dim], &z[..dim]);
        if jk < (T::one() - liminf_tol) * j {
            witness = Some(format!(
                "J_{last} = {jk:e} < (1 - tol) J = {j:e} at {:?}, {:?}",
                &x[..dim],
                &y[..dim]
            ));
            break;
        }
    }
    rows.push(JConditionRow {
        condition: "liminf",
        eps: None,
        delta: None,
        passed: witness.is_none(),
        witness,
    });
    if let Some(c) = spec.domination_constant {
        let mut witness = None;
        'dom: for (x, y) in pairs {
            let z = z_of(x, y);
            let j = spec.eval_limit(&x[..dim], &y[..dim], &z[..dim]);
            for &k in indices {
                let jk = spec.eval_k(k, &x[..dim], &y[..dim], &z[..dim]);
                if jk > c * j {
                    witness = Some(format!("J_{k} = {jk:e} > C J = {:e}", c * j));
                    break 'dom;
                }
            }
        }
        rows.push(JConditionRow {
            condition: "domination",
            eps: None,
            delta: None,
            passed: witness.is_none(),
            witness,
        });
    }
    if let Some((hp, hm)) = &spec.monotone_partition {
        let mut witness = None;
        'mono: for (x, y) in pairs {
            let (xs, ys) = (&x[..dim], &y[..dim]);
            let (ip, im) = (hp(xs, ys), hm(xs, ys));
            if ip == im {
                witness = Some(format!(
                    "pair {xs:?}, {ys:?} lies in both or neither of H+ and H-"
                ));
                break;
            }
            let z = z_of(x, y);
            for w in indices.windows(2) {
                let a = spec.eval_k(w[0], xs, ys, &z[..dim]);
                let b = spec.eval_k(w[1], xs, ys, &z[..dim]);
                if (ip && a > b) || (im && a < b) {
                    witness = Some(format!(
                        "J_{} = {a:e}, J_{} = {b:e} at {xs:?}, {ys:?} breaks monotonicity",
                        w[0], w[1]
                    ));
                    break 'mono;
                }
            }
        }
        rows.push(JConditionRow {
            condition: "monotone",
            eps: None,
            delta: None,
            passed: witness.is_none(),
            witness,
        });
    }
    Ok(rows)
}

/// Both sides of the compactness estimate for one element of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollificationDefect<T> {
    /// `||eta_delta * v - v||^p_{L^p(E)}` with `v = u` on `A`, zero elsewhere.
    pub defect: T,
    /// `eps J_k(v)`.
    pub bound: T,
    /// `J_k(v)`.
    pub energy: T,
}

/// Mollifies `v = u chi_A` with the box kernel `chi_{B_delta} / |B_delta|` and
/// compares `||eta_delta * v - v||^p_{L^p(E)}` with `eps J_k(v)`; the
/// `delta`-neighbourhood of `E` must stay inside `A`.
#[allow(clippy::too_many_arguments)]
pub fn mollification_defect<T: Real>(
    u: &GridFunction<T>,
    delta: T,
    eps: T,
    e: &DomainMask<T>,
    spec: &JSpec<T>,
    index: T,
    p: T,
) -> Result<MollificationDefect<T>> {
    check_p(p)?;
    let grid = *u.grid();
    same_grid(&grid, e.grid())?;
    same_grid(&grid, spec.domain.grid())?;
    let shape = grid.shape();
    let m = (delta / grid.h()).floor().to_isize().unwrap_or(0);
    let m1 = if grid.dim() == 2 { m } else { 0 };
    let a_in = spec.domain.inside();
    let r2 = (delta / grid.h()) * (delta / grid.h());
    for i in e.indices() {
        let c = grid.multi(i);
        for d0 in -m..=m {
            for d1 in -m1..=m1 {
                if from_usize::<T>((d0 * d0 + d1 * d1) as usize) > r2 {
                    continue;
                }
                let (y0, y1) = (c[0] as isize + d0, c[1] as isize + d1);
                let inside = y0 >= 0
                    && y1 >= 0
                    && y0 < shape[0] as isize
                    && y1 < shape[1] as isize
                    && a_in[y0 as usize * shape[1] + y1 as usize];
                if !inside {
                    return Err(Error::DomainTooSmall(format!(
                        "the {delta}-neighbourhood of E leaves the domain A near {:?}",
                        &grid.coord(i)[..grid.dim()]
                    )));
                }
            }
        }
    }
    let v = u.restricted_to(&spec.domain)?;
    let mv = box_mollify(&v, delta)?;
    let (mvals, vvals) = (mv.values(), v.values());
    let inside = e.inside();
    let defect = par_map_sum(grid.len(), |i| {
        if inside[i] {
            grid.node_weight(i) * pow_abs(mvals[i] - vvals[i], p)
        } else {
            T::zero()
        }
    });
    let energy = j_energy(&v, spec, WeightChoice::Index(index), p, lit(0.125))?;
    Ok(MollificationDefect {
        defect,
        bound: eps * energy,
        energy,
    })
}

/// Defects along a sequence `(k, u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectReport<T> {
    pub rows: Vec<(T, MollificationDefect<T>)>,
    /// The energies increase strictly and grow at least tenfold over the
    /// sampled indices, so the sequence is not energy-bounded.
    pub energy_unbounded: bool,
}

/// [`mollification_defect`] for every element of a sequence.
pub fn mollification_defects<T: Real>(
    seq: &[(T, GridFunction<T>)],
    delta: T,
    eps: T,
    e: &DomainMask<T>,
    spec: &JSpec<T>,
    p: T,
) -> Result<DefectReport<T>> {
    let mut rows = Vec::with_capacity(seq.len());
    for (k, u) in seq {
        rows.push((*k, mollification_defect(u, delta, eps, e, spec, *k, p)?));
    }
    let increasing = rows.windows(2).all(|w| w[1].1.energy > w[0].1.energy);
    let energy_unbounded = rows.len() >= 2
        && increasing
        && rows.last().unwrap().1.energy >= lit::<T>(10.0) * rows[0].1.energy;
    Ok(DefectReport {
        rows,
        energy_unbounded,
    })
}

/// Both sides of the two first-order Taylor estimates for translations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtcReport<T> {
    /// `||u(. + z) - u||^p_{L^p(w^z)}`.
    pub lhs_i: T,
    /// `||z . Du||^p_{L^p(w^0)} + omega(|z|) |z|^p ||Du||^p_{L^p}`.
    pub rhs_i: T,
    /// `| ||u(. + z) - u||_{L^p(w^z)} - ||z . Du||_{L^p(w^0)} |`.
    pub lhs_ii: T,
    /// `sup(w^z)^{1/p} (|z|^2 / 2) ||D^2 u||_{L^p} + |z| omega(|z|)^{1/p} ||Du||_{L^p}`.
    pub rhs_ii: T,
}

/// Evaluates both sides of the translation estimates for a closed-form `u`
/// by node quadrature on `grid`, with `w^z(x) = w(x, x + z)`.
pub fn ftc_check<T: Real>(
    u: &ClosedForm<T>,
    grid: &Grid<T>,
    z: &[T],
    wf: &WeightFamily<T>,
    p: T,
) -> Result<FtcReport<T>> {
    check_p(p)?;
    let dim = grid.dim();
    if z.len() != dim || wf.dim() != dim {
        return invalid("dimension mismatch in ftc_check");
    }
    if !u.is_c2() {
        return invalid("ftc_check needs a closed form with analytic first and second derivatives");
    }
    let modulus = wf.modulus().ok_or_else(|| {
        Error::PreconditionFailed("ftc_check needs a modulus of continuity".into())
    })?;
    let rz = norm(z);
    let n = grid.len();
    let sums: [T; 5] = crate::reduce::par_map_sum_n(n, |i| {
        let c = grid.coord(i);
        let x = &c[..dim];
        let mut xz = [T::zero(); 2];
        for a in 0..dim {
            xz[a] = x[a] + z[a];
        }
        let xz = &xz[..dim];
        let wt = grid.node_weight(i);
        let g = u.gradient(x).unwrap_or([T::zero(); 2]);
        let zg = (0..dim).fold(T::zero(), |s, a| s + z[a] * g[a]);
        let du = u.value(xz) - u.value(x);
        let wz = wf.eval_limit(x, xz);
        let w0 = wf.eval_limit(x, x);
        let gn = norm(&g[..dim]);
        let hn = u.hessian_norm(x).unwrap_or(T::zero());
        [
            wt * wz * pow_abs(du, p),
            wt * w0 * pow_abs(zg, p),
            wt * pow_abs(gn, p),
            wt * pow_abs(hn, p),
            wz,
        ]
    });
    let sup_wz = par_map_max(n, |i| {
        let c = grid.coord(i);
        let mut xz = [T::zero(); 2];
        for a in 0..dim {
            xz[a] = c[a] + z[a];
        }
        wf.eval_limit(&c[..dim], &xz[..dim])
    })
    .max(T::zero());
    let (lhs_p, dir_p, grad_p, hess_p) = (sums[0], sums[1], sums[2], sums[3]);
    let om = modulus.eval(rz);
    let inv_p = p.recip();
    let rhs_i = dir_p + om * rz.powf(p) * grad_p;
    let lhs_ii = (lhs_p.powf(inv_p) - dir_p.powf(inv_p)).abs();
    let rhs_ii = sup_wz.powf(inv_p) * rz * rz * lit(0.5) * hess_p.powf(inv_p)
        + rz * om.powf(inv_p) * grad_p.powf(inv_p);
    Ok(FtcReport {
        lhs_i: lhs_p,
        rhs_i,
        lhs_ii,
        rhs_ii,
    })
}

/// Both sides of `|F^{w_k} - F^w| <= F^1 ||w_k - w||` on a shared pair set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightGap<T> {
    pub gap: T,
    pub bound: T,
    pub energy_k: T,
    pub energy_limit: T,
    pub energy_unweighted: T,
    /// `max |w_k - w|` over the pairs that carry energy.
    pub sup_distance: T,
}

/// Computes `F^{w_k}`, `F^w` and `F^1` in one pass over the same pairs.
pub fn weight_perturbation_gap<T: Real>(
    u: &GridFunction<T>,
    kernel: &KernelMember<T>,
    wf: &WeightFamily<T>,
    index: T,
    p: T,
    opts: &EnergyOptions<T>,
) -> Result<WeightGap<T>> {
    check_p(p)?;
    check_dims(u, kernel, wf)?;
    check_coverage(u, opts.truncation)?;
    let grid = *u.grid();
    let table = KernelTable::for_kernel(kernel, p, grid.h(), opts)?;
    let wk = wf.on_grid(WeightChoice::Index(index), &grid)?;
    let wl = wf.on_grid(WeightChoice::Limit, &grid)?;
    let parts: Vec<GapAcc<T>> =
        scan_pairs(u, &table, p, None, |acc: &mut GapAcc<T>, x, y, o, dp| {
            let t = table.coef[o] * dp;
            let (a, b) = (wk.pair(x, y), wl.pair(x, y));
            acc.sums[0] += t * a;
            acc.sums[1] += t * b;
            acc.sums[2] += t;
            if t > T::zero() {
                acc.max = acc.max.max((a - b).abs());
            }
        });
    let mut acc = tree_reduce::<T, GapAcc<T>>(&parts);
    let h2n = grid.cell_volume() * grid.cell_volume();
    for s in acc.sums.iter_mut() {
        *s *= h2n;
    }
    if !table.diagonal.is_empty() {
        let vals = u.values();
        let dim = grid.dim();
        let hn = grid.cell_volume();
        let diag: Vec<GapAcc<T>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let d = one_sided(&grid, vals, i);
                let v = diagonal_value(&table, &d, dim, p) * hn;
                let (a, b) = (wk.pair(i, i), wl.pair(i, i));
                GapAcc {
                    sums: [v * a, v * b, v],
                    max: if v > T::zero() {
                        (a - b).abs()
                    } else {
                        T::zero()
                    },
                }
            })
            .collect();
        acc = acc.merge(tree_reduce::<T, GapAcc<T>>(&diag));
    }
    Ok(WeightGap {
        gap: (acc.sums[0] - acc.sums[1]).abs(),
        bound: acc.sums[2] * acc.max,
        energy_k: acc.sums[0],
        energy_limit: acc.sums[1],
        energy_unweighted: acc.sums[2],
        sup_distance: acc.max,
    })
}

/// Both sides of the lower bound of `F^1` by the weighted energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllRCheck<T> {
    /// `F^1(u)`.
    pub lhs: T,
    /// `(2 / ell_R) F^{w_k}(u) + 2^p ||u||^p int_{|z| > 2R} rho / |z|^p`.
    pub rhs: T,
    pub ell_r: T,
    pub sup_distance: T,
    /// Discrete `int_{|z| > 2R} rho / |z|^p` over the truncated table.
    pub tail: T,
}

/// `F^1 <= (2 / ell_R) F^{w_k} + 2^p ||u||^p int_{B_{2R}^c} rho / |z|^p`,
/// valid when `supp u` lies in `B_R` and `||w_k - w|| <= ell_R / 2`.
#[allow(clippy::too_many_arguments)]
pub fn ell_r_bound_check<T: Real>(
    u: &GridFunction<T>,
    kernel: &KernelMember<T>,
    wf: &WeightFamily<T>,
    index: T,
    p: T,
    r: T,
    net_spacing: T,
    opts: &EnergyOptions<T>,
) -> Result<EllRCheck<T>> {
    check_p(p)?;
    let extent = u.support_extent();
    let slack = u.grid().h() * lit(1e-9);
    if extent > r + slack || u.support_radius().is_some_and(|s| s > r + slack) {
        return Err(Error::PreconditionFailed(format!(
            "support of u reaches {extent}, beyond R = {r}"
        )));
    }
    let dim = u.grid().dim();
    let net = SampleNet::ell_net(dim, r, net_spacing)?;
    let ell = ell_r(wf, &net)?;
    let dist = sup_distance(wf, index, &net);
    if !(ell > T::zero()) || dist > ell * lit(0.5) {
        return Err(Error::PreconditionFailed(format!(
            "need ||w_k - w|| <= ell_R / 2, got {dist:e} against ell_R = {ell:e}"
        )));
    }
    let grid = *u.grid();
    let table = KernelTable::for_kernel(kernel, p, grid.h(), opts)?;
    let one = WeightFamily::one(dim);
    let f1 = nonlocal_energy(u, kernel, &one, WeightChoice::Limit, p, opts)?.total;
    let fk = nonlocal_energy(u, kernel, wf, WeightChoice::Index(index), p, opts)?.total;
    let tail = table.tail_sum(r + r);
    let norm_p = crate::grid::lp_norm_pow(u, p)?;
    let rhs = lit::<T>(2.0) / ell * fk + lit::<T>(2.0).powf(p) * norm_p * tail;
    Ok(EllRCheck {
        lhs: f1,
        rhs,
        ell_r: ell,
        sup_distance: dist,
        tail,
    })
}
