//! Uniform Cartesian grids in one or two dimensions and the discrete function
//! spaces built on them.
//!
//! Node values are stored row-major. Single integrals use the trapezoid node
//! weights of the box (uniform `h^N` in the interior, halved per boundary
//! axis); every test function in this crate is compactly supported inside
//! its box, so the boundary weights only matter for data that touches the
//! box edge.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::reduce::{pairwise_sum, par_map_sum};
use crate::scalar::{from_usize, lit, norm, pow_abs, unit_ball_volume, Real};

/// A uniform grid on the box `[lo, lo + cells * h]` in `R^N`, `N` in {1, 2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<T> {
    dim: usize,
    lo: [T; 2],
    h: T,
    cells: [usize; 2],
}

impl<T: Real> Grid<T> {
    /// Grid on `[lo, hi]` with spacing `h`; `hi - lo` must be a multiple of `h`.
    pub fn new(lo: &[T], hi: &[T], h: T) -> Result<Self> {
        let dim = lo.len();
        if !(dim == 1 || dim == 2) || hi.len() != dim {
            return invalid(format!("grid dimension must be 1 or 2, got {dim}"));
        }
        if !(h > T::zero()) || !h.is_finite() {
            return invalid("grid spacing must be positive");
        }
        let mut cells = [0usize; 2];
        for a in 0..dim {
            let len = hi[a] - lo[a];
            if !(len > T::zero()) {
                return invalid("grid box must have positive extent");
            }
            let n = (len / h).round();
            let tol = lit::<T>(1e-9) * n.max(T::one());
            if (len / h - n).abs() > tol {
                return invalid(format!("box extent {len} is not a multiple of h = {h}"));
            }
            cells[a] = n.to_usize().unwrap_or(0);
            if cells[a] == 0 {
                return invalid("grid needs at least one cell per axis");
            }
        }
        let mut lo2 = [T::zero(); 2];
        lo2[..dim].copy_from_slice(lo);
        Ok(Self {
            dim,
            lo: lo2,
            h,
            cells,
        })
    }

    /// Grid on `[lo, hi]` split into `cells` equal cells per axis (square cells).
    pub fn from_cells(lo: &[T], hi: &[T], cells: usize) -> Result<Self> {
        if cells == 0 || lo.is_empty() {
            return invalid("need at least one cell");
        }
        let h = (hi[0] - lo[0]) / from_usize(cells);
        Self::new(lo, hi, h)
    }

    /// Centered box `[-L, L]^N` with `L` the smallest multiple of `h` that is `>= half_width`.
    pub fn centered(dim: usize, half_width: T, h: T) -> Result<Self> {
        if !(h > T::zero()) {
            return invalid("grid spacing must be positive");
        }
        let m = (half_width / h - lit(1e-9)).ceil().max(T::one());
        let l = m * h;
        let lo = vec![-l; dim];
        let hi = vec![l; dim];
        Self::new(&lo, &hi, h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The same lattice extended by `margin` nodes on both sides of every axis.
    pub fn expanded(&self, margin: usize) -> Self {
        let mut out = *self;
        let m = from_usize::<T>(margin) * self.h;
        for a in 0..self.dim {
            out.lo[a] = self.lo[a] - m;
            out.cells[a] = self.cells[a] + 2 * margin;
        }
        out
    }

    /// Integer node offset of `other`'s origin in this lattice, if both grids
    /// share the spacing and their origins differ by whole cells.
    pub fn lattice_offset(&self, other: &Self) -> Option<[isize; 2]> {
        if self.dim != other.dim || self.h != other.h {
            return None;
        }
        let mut off = [0isize; 2];
        for a in 0..self.dim {
            let d = (other.lo[a] - self.lo[a]) / self.h;
            let r = d.round();
            if (d - r).abs() > lit(1e-6) {
                return None;
            }
            off[a] = r.to_isize()?;
        }
        Some(off)
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn lo(&self) -> &[T] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> Vec<T> {
        (0..self.dim)
            .map(|a| self.lo[a] + from_usize::<T>(self.cells[a]) * self.h)
            .collect()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    /// Node counts per axis; the inactive axis of a 1D grid has one node.
    pub fn shape(&self) -> [usize; 2] {
        let mut s = [1usize; 2];
        for (a, slot) in s.iter_mut().enumerate().take(self.dim) {
            *slot = self.cells[a] + 1;
        }
        s
    }

    pub fn len(&self) -> usize {
        let s = self.shape();
        s[0] * s[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h^N`, the volume of one cell.
    pub fn cell_volume(&self) -> T {
        self.h.powi(self.dim as i32)
    }

    #[inline]
    pub fn multi(&self, idx: usize) -> [usize; 2] {
        let s = self.shape();
        [idx / s[1], idx % s[1]]
    }

    #[inline]
    pub fn flat(&self, m: [usize; 2]) -> usize {
        m[0] * self.shape()[1] + m[1]
    }

    /// Flat index of `idx` shifted by `off`, or `None` outside the box.
    #[inline]
    pub fn shifted(&self, idx: usize, off: [isize; 2]) -> Option<usize> {
        let s = self.shape();
        let m = self.multi(idx);
        let i0 = m[0] as isize + off[0];
        let i1 = m[1] as isize + off[1];
        if i0 < 0 || i1 < 0 || i0 >= s[0] as isize || i1 >= s[1] as isize {
            None
        } else {
            Some(i0 as usize * s[1] + i1 as usize)
        }
    }

    /// Coordinates of a node (unused component zero).
    #[inline]
    pub fn coord(&self, idx: usize) -> [T; 2] {
        let m = self.multi(idx);
        let mut c = [T::zero(); 2];
        for a in 0..self.dim {
            c[a] = self.lo[a] + from_usize::<T>(m[a]) * self.h;
        }
        c
    }

    /// Trapezoid weight of a node.
    pub fn node_weight(&self, idx: usize) -> T {
        let m = self.multi(idx);
        let mut w = self.cell_volume();
        for a in 0..self.dim {
            if m[a] == 0 || m[a] == self.cells[a] {
                w *= lit(0.5);
            }
        }
        w
    }

    /// Whether `x` lies in the closed box up to a relative slack of `1e-9 h`.
    pub fn contains(&self, x: &[T]) -> bool {
        let hi = self.hi();
        let slack = self.h * lit(1e-9);
        (0..self.dim).all(|a| x[a] >= self.lo[a] - slack && x[a] <= hi[a] + slack)
    }

    /// Node index closest to `x` (clamped to the box).
    pub fn nearest(&self, x: &[T]) -> usize {
        let s = self.shape();
        let mut m = [0usize; 2];
        for a in 0..self.dim {
            let t = ((x[a] - self.lo[a]) / self.h).round();
            let t = t.max(T::zero()).min(from_usize(s[a] - 1));
            m[a] = t.to_usize().unwrap_or(0);
        }
        self.flat(m)
    }
}

/// Samples of a real function on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    grid: Grid<T>,
    values: Vec<T>,
    support_radius: Option<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "expected {} node values, got {}",
                grid.len(),
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite value at node {i}"));
        }
        Ok(Self {
            grid,
            values,
            support_radius: None,
        })
    }

    pub fn zeros(grid: Grid<T>) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.len()],
            support_radius: None,
        }
    }

    pub fn constant(grid: Grid<T>, c: T) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
            support_radius: None,
        }
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(&[T]) -> T + Sync>(grid: Grid<T>, f: F) -> Result<Self> {
        let dim = grid.dim();
        let values: Vec<T> = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.coord(i)[..dim]))
            .collect();
        Self::new(grid, values)
    }

    /// Records membership in `L^p_R`: fails unless all nodes outside the
    /// closed ball of radius `r` carry zero.
    pub fn with_support_radius(mut self, r: T) -> Result<Self> {
        if !(r > T::zero()) {
            return invalid("support radius must be positive");
        }
        let dim = self.grid.dim();
        let slack = self.grid.h() * lit(1e-9);
        for (i, &v) in self.values.iter().enumerate() {
            if v != T::zero() && norm(&self.grid.coord(i)[..dim]) > r + slack {
                return invalid(format!(
                    "value {v} at node {i} lies outside the ball of radius {r}"
                ));
            }
        }
        self.support_radius = Some(r);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn support_radius(&self) -> Option<T> {
        self.support_radius
    }

    /// Largest `|x|` over nodes where the function is nonzero (zero if none).
    pub fn support_extent(&self) -> T {
        let dim = self.grid.dim();
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(i, _)| norm(&self.grid.coord(i)[..dim]))
            .fold(T::zero(), T::max)
    }

    /// Index bounding box `[[min0, max0], [min1, max1]]` of the nonzero nodes.
    pub fn nonzero_bbox(&self) -> Option<[[usize; 2]; 2]> {
        let mut bb: Option<[[usize; 2]; 2]> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            let m = self.grid.multi(i);
            bb = Some(match bb {
                None => [[m[0], m[0]], [m[1], m[1]]],
                Some(b) => [
                    [b[0][0].min(m[0]), b[0][1].max(m[0])],
                    [b[1][0].min(m[1]), b[1][1].max(m[1])],
                ],
            });
        }
        bb
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| v * c).collect(),
            support_radius: self.support_radius,
        }
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with<F: Fn(T, T) -> T>(&self, other: &Self, f: F) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Self::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Copies the values onto another grid of the same lattice; nodes absent
    /// from this grid become zero.
    pub fn transfer(&self, target: Grid<T>) -> Result<Self> {
        let off = target
            .lattice_offset(&self.grid)
            .ok_or_else(|| Error::InvalidInput("grids do not share a lattice".into()))?;
        let src = self.grid.shape();
        let values = (0..target.len())
            .map(|i| {
                let m = target.multi(i);
                let a = m[0] as isize - off[0];
                let b = m[1] as isize - off[1];
                if a < 0 || b < 0 || a >= src[0] as isize || b >= src[1] as isize {
                    T::zero()
                } else {
                    self.values[a as usize * src[1] + b as usize]
                }
            })
            .collect();
        Ok(Self {
            grid: target,
            values,
            support_radius: self.support_radius,
        })
    }

    /// Zeroes every node outside `mask`.
    pub fn restricted_to(&self, mask: &DomainMask<T>) -> Result<Self> {
        same_grid(&self.grid, mask.grid())?;
        let values = self
            .values
            .iter()
            .zip(mask.inside())
            .map(|(&v, &m)| if m { v } else { T::zero() })
            .collect();
        Self::new(self.grid, values)
    }

    /// CSV form: a `# dim,h,lo...,n...` header line then one value per row.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::with_capacity(self.values.len() * 24 + 64);
        out.push_str(&format!("# {},{}", g.dim(), g.h()));
        for &l in g.lo() {
            out.push_str(&format!(",{l}"));
        }
        for &n in g.cells() {
            out.push_str(&format!(",{n}"));
        }
        out.push('\n');
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty grid function CSV".into()))?;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("missing '#' header".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        let dim: usize = fields
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("bad dimension in header".into()))?;
        if !(dim == 1 || dim == 2) || fields.len() != 2 + 2 * dim {
            return Err(Error::Parse(format!("malformed header '{header}'")));
        }
        let num = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(lit)
                .map_err(|e| Error::Parse(format!("'{s}': {e}")))
        };
        let h = num(fields[1])?;
        let lo: Vec<T> = fields[2..2 + dim]
            .iter()
            .map(|s| num(s))
            .collect::<Result<_>>()?;
        let cells: Vec<usize> = fields[2 + dim..]
            .iter()
            .map(|s| s.parse().map_err(|e| Error::Parse(format!("'{s}': {e}"))))
            .collect::<Result<_>>()?;
        let hi: Vec<T> = lo
            .iter()
            .zip(&cells)
            .map(|(&l, &n)| l + from_usize::<T>(n) * h)
            .collect();
        let grid = Grid::new(&lo, &hi, h)?;
        let values = lines.map(|l| num(l.trim())).collect::<Result<Vec<T>>>()?;
        Self::new(grid, values)
    }
}

pub(crate) fn same_grid<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<()> {
    if a != b {
        return invalid("operands live on different grids");
    }
    Ok(())
}

/// A set of grid nodes representing a bounded open set.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask<T> {
    grid: Grid<T>,
    inside: Vec<bool>,
}

impl<T: Real> DomainMask<T> {
    pub fn new(grid: Grid<T>, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != grid.len() {
            return invalid("mask length does not match grid");
        }
        if !inside.iter().any(|&b| b) {
            return invalid("domain mask contains no node");
        }
        Ok(Self { grid, inside })
    }

    pub fn from_predicate<F: Fn(&[T]) -> bool>(grid: Grid<T>, f: F) -> Result<Self> {
        let dim = grid.dim();
        let inside = (0..grid.len()).map(|i| f(&grid.coord(i)[..dim])).collect();
        Self::new(grid, inside)
    }

    /// Nodes strictly inside the open interval `(a, b)` (1D) with a `1e-9 h` guard.
    pub fn interval(grid: Grid<T>, a: T, b: T) -> Result<Self> {
        let eps = grid.h() * lit(1e-9);
        Self::from_predicate(grid, |x| x[0] > a + eps && x[0] < b - eps)
    }

    /// Nodes strictly inside the open box `(lo, hi)`.
    pub fn open_box(grid: Grid<T>, lo: &[T], hi: &[T]) -> Result<Self> {
        let eps = grid.h() * lit(1e-9);
        let dim = grid.dim();
        Self::from_predicate(grid, |x| {
            (0..dim).all(|a| x[a] > lo[a] + eps && x[a] < hi[a] - eps)
        })
    }

    /// Nodes strictly inside the open ball `B_r(center)`.
    pub fn ball(grid: Grid<T>, center: &[T], r: T) -> Result<Self> {
        let eps = grid.h() * lit(1e-9);
        let dim = grid.dim();
        Self::from_predicate(grid, |x| {
            let d: Vec<T> = (0..dim).map(|a| x[a] - center[a]).collect();
            norm(&d) < r - eps
        })
    }

    pub fn all(grid: Grid<T>) -> Self {
        Self {
            grid,
            inside: vec![true; grid.len()],
        }
    }

    /// The same node set on another grid of the same lattice.
    pub fn transfer(&self, target: Grid<T>) -> Result<Self> {
        let as_fn = GridFunction::new(
            self.grid,
            self.inside
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        )?;
        let moved = as_fn.transfer(target)?;
        Self::new(
            target,
            moved.values().iter().map(|&v| v > T::zero()).collect(),
        )
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.inside.len()).filter(|&i| self.inside[i]).collect()
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Whether every node of `self` also belongs to `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self
                .inside
                .iter()
                .zip(&other.inside)
                .all(|(&a, &b)| !a || b)
    }

    /// Index bounding box of the inside nodes.
    pub fn bbox(&self) -> [[usize; 2]; 2] {
        let mut bb = [[usize::MAX, 0], [usize::MAX, 0]];
        for i in self.indices() {
            let m = self.grid.multi(i);
            for a in 0..2 {
                bb[a][0] = bb[a][0].min(m[a]);
                bb[a][1] = bb[a][1].max(m[a]);
            }
        }
        bb
    }
}

/// A vector field with one `N`-component vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    grid: Grid<T>,
    comps: Vec<[T; 2]>,
}

impl<T: Real> VectorField<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn at(&self, idx: usize) -> &[T] {
        &self.comps[idx][..self.grid.dim()]
    }

    pub fn components(&self) -> &[[T; 2]] {
        &self.comps
    }
}

fn check_p<T: Real>(p: T) -> Result<()> {
    if !(p >= T::one()) || !p.is_finite() {
        return invalid(format!("exponent p must be >= 1, got {p}"));
    }
    Ok(())
}

/// `(sum_i w_i |u_i|^p)^{1/p}` with trapezoid node weights `w_i`.
pub fn lp_norm<T: Real>(u: &GridFunction<T>, p: T) -> Result<T> {
    check_p(p)?;
    let g = *u.grid();
    let vals = u.values();
    let s = par_map_sum(vals.len(), |i| g.node_weight(i) * pow_abs(vals[i], p));
    Ok(s.powf(p.recip()))
}

/// `lp_norm(u, p)^p`, avoiding the root.
pub fn lp_norm_pow<T: Real>(u: &GridFunction<T>, p: T) -> Result<T> {
    check_p(p)?;
    let g = *u.grid();
    let vals = u.values();
    Ok(par_map_sum(vals.len(), |i| {
        g.node_weight(i) * pow_abs(vals[i], p)
    }))
}

/// `(sum_i w_i d_i |u_i|^p)^{1/p}` for a nonnegative diagonal weight `d`.
pub fn weighted_lp_norm<T: Real>(
    u: &GridFunction<T>,
    p: T,
    diag_weight: &GridFunction<T>,
) -> Result<T> {
    check_p(p)?;
    same_grid(u.grid(), diag_weight.grid())?;
    check_nonnegative(diag_weight)?;
    let g = *u.grid();
    let (vals, dw) = (u.values(), diag_weight.values());
    let s = par_map_sum(vals.len(), |i| {
        g.node_weight(i) * dw[i] * pow_abs(vals[i], p)
    });
    Ok(s.powf(p.recip()))
}

pub(crate) fn check_nonnegative<T: Real>(w: &GridFunction<T>) -> Result<()> {
    if let Some(i) = w.values().iter().position(|&v| v < T::zero()) {
        return invalid(format!("negative weight {} at node {i}", w.values()[i]));
    }
    Ok(())
}

/// Centered differences in the interior, one-sided differences on the box boundary.
pub fn discrete_gradient<T: Real>(u: &GridFunction<T>) -> VectorField<T> {
    let g = *u.grid();
    let v = u.values();
    let h = g.h();
    let shape = g.shape();
    let comps = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let m = g.multi(i);
            let mut c = [T::zero(); 2];
            for (a, slot) in c.iter_mut().enumerate().take(g.dim()) {
                let mut e = [0isize; 2];
                e[a] = 1;
                let fwd = g.shifted(i, e);
                let bwd = g.shifted(i, [-e[0], -e[1]]);
                *slot = match (bwd, fwd) {
                    (Some(b), Some(f)) => (v[f] - v[b]) / (h + h),
                    (None, Some(f)) => (v[f] - v[i]) / h,
                    (Some(b), None) => (v[i] - v[b]) / h,
                    (None, None) => {
                        debug_assert!(shape[a] == 1);
                        T::zero()
                    }
                };
                let _ = m;
            }
            c
        })
        .collect();
    VectorField { grid: g, comps }
}

/// Forward differences `(u(x + h e_a) - u(x)) / h`, zero at the last node
/// along an axis, so that every grid edge is counted once.
pub fn forward_gradient<T: Real>(u: &GridFunction<T>) -> VectorField<T> {
    let g = *u.grid();
    let v = u.values();
    let h = g.h();
    let comps = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let mut c = [T::zero(); 2];
            for (a, slot) in c.iter_mut().enumerate().take(g.dim()) {
                let mut e = [0isize; 2];
                e[a] = 1;
                *slot = g.shifted(i, e).map_or(T::zero(), |f| (v[f] - v[i]) / h);
            }
            c
        })
        .collect();
    VectorField { grid: g, comps }
}

fn check_unit<T: Real>(sigma: &[T], dim: usize) -> Result<()> {
    if sigma.len() != dim {
        return invalid(format!(
            "direction has {} components, grid is {dim}D",
            sigma.len()
        ));
    }
    let tol = T::epsilon() * lit(1e3);
    if (norm(sigma) - T::one()).abs() > tol {
        return invalid(format!("direction {sigma:?} is not a unit vector"));
    }
    Ok(())
}

/// `h^N sum_i d_i |sigma . D^+ u_i|^p`, the discrete `||sigma . Du||^p_{L^p(d)}`.
///
/// Uses forward differences (edge-based), so the associated quadratic form
/// for `p = 2` is the standard nearest-neighbour Dirichlet form. For `p = 1`
/// the same sum is the discrete weighted total variation of `sigma . u`.
pub fn directional_seminorm<T: Real>(
    u: &GridFunction<T>,
    sigma: &[T],
    p: T,
    diag_weight: &GridFunction<T>,
) -> Result<T> {
    check_p(p)?;
    let g = *u.grid();
    check_unit(sigma, g.dim())?;
    same_grid(&g, diag_weight.grid())?;
    check_nonnegative(diag_weight)?;
    let grad = forward_gradient(u);
    let dw = diag_weight.values();
    let dim = g.dim();
    let s = par_map_sum(g.len(), |i| {
        let gi = grad.at(i);
        let dot = (0..dim).fold(T::zero(), |acc, a| acc + sigma[a] * gi[a]);
        dw[i] * pow_abs(dot, p)
    });
    Ok(s * g.cell_volume())
}

/// Mollifier profile `eta(x) = c_N (1 - |x|^2)^2` on the unit ball.
pub fn mollifier_profile<T: Real>(dim: usize, r: T) -> T {
    if r >= T::one() {
        return T::zero();
    }
    let t = T::one() - r * r;
    mollifier_sup::<T>(dim) * t * t
}

/// `||eta||_inf = c_N` (15/16 in 1D, 3/pi in 2D).
pub fn mollifier_sup<T: Real>(dim: usize) -> T {
    match dim {
        1 => lit(15.0 / 16.0),
        _ => lit::<T>(3.0) / T::PI(),
    }
}

/// Discrete convolution with `radial(|z| / radius)`, normalised to unit
/// discrete mass. Values beyond the box are taken from the nearest boundary
/// node.
fn convolve_radial<T: Real, F: Fn(T) -> T>(
    u: &GridFunction<T>,
    radius: T,
    profile: F,
    strict: bool,
) -> Result<GridFunction<T>> {
    let g = *u.grid();
    let h = g.h();
    let dim = g.dim();
    let m = (radius / h).floor().to_usize().unwrap_or(0);
    for a in 0..dim {
        if m > g.cells()[a] {
            return Err(Error::DomainTooSmall(format!(
                "mollifier radius {radius} spans {m} nodes, grid axis {a} has {}",
                g.cells()[a]
            )));
        }
    }
    let mi = m as isize;
    let mut stencil: Vec<([isize; 2], T)> = Vec::new();
    let r1 = if dim == 2 { mi } else { 0 };
    for i0 in -mi..=mi {
        for i1 in -r1..=r1 {
            let z = [
                from_usize::<T>(i0.unsigned_abs()) * h,
                from_usize::<T>(i1.unsigned_abs()) * h,
            ];
            let r = norm(&z[..dim]) / radius;
            let inside = if strict { r < T::one() } else { r <= T::one() };
            if inside {
                let w = profile(r);
                if w > T::zero() {
                    stencil.push(([i0, i1], w));
                }
            }
        }
    }
    if stencil.is_empty() {
        stencil.push(([0, 0], T::one()));
    }
    let weights: Vec<T> = stencil.iter().map(|s| s.1).collect();
    let total = pairwise_sum(&weights);
    let shape = g.shape();
    let v = u.values();
    let out: Vec<T> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let base = g.multi(i);
            let mut acc = T::zero();
            for (off, w) in &stencil {
                let j0 = (base[0] as isize - off[0]).clamp(0, shape[0] as isize - 1) as usize;
                let j1 = (base[1] as isize - off[1]).clamp(0, shape[1] as isize - 1) as usize;
                acc += *w * v[j0 * shape[1] + j1];
            }
            acc / total
        })
        .collect();
    let mut res = GridFunction::new(g, out)?;
    res.support_radius = u.support_radius().map(|r| r + radius);
    Ok(res)
}

/// `u * eta_j` with the smooth mollifier `eta_j = j^N eta(j .)`.
pub fn mollify<T: Real>(u: &GridFunction<T>, j: u32) -> Result<GridFunction<T>> {
    if j == 0 {
        return invalid("mollifier index j must be >= 1");
    }
    let dim = u.grid().dim();
    let radius = T::one() / from_usize::<T>(j as usize);
    convolve_radial(u, radius, |r| mollifier_profile(dim, r), true)
}

/// `u * (chi_{B_delta} / |B_delta|)`, the box mollifier.
pub fn box_mollify<T: Real>(u: &GridFunction<T>, delta: T) -> Result<GridFunction<T>> {
    if !(delta > T::zero()) {
        return invalid("delta must be positive");
    }
    let dim = u.grid().dim();
    let vol = unit_ball_volume::<T>(dim);
    convolve_radial(u, delta, |_| vol.recip(), true)
}
