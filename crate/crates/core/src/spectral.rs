//! First eigenvalues of the nonlocal and local energies on a node mask,
//! Poincare constants and the stability sweeps built on them.
//!
//! Both energies are assembled into an [`EnergyForm`], a sum of terms
//! `c |sum_j a_j u_j|^p` over the nodes of `Omega` (values outside are
//! zero). For `p = 2` the form is a symmetric matrix and the smallest
//! eigenpair is exact up to the dense solver; otherwise the Rayleigh
//! quotient is minimized by gradient descent.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::energy::{EnergyOptions, KernelTable};
use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, same_grid, DomainMask, Grid, GridFunction};
use crate::kernels::{KernelFamily, KernelMember, LimitMeasure};
use crate::reduce::pairwise_sum;
use crate::scalar::{lit, pow_abs, to_f64, Real};
use crate::weights::{diagonal_of, WeightChoice, WeightFamily};

/// Quadratic-like energy `E(u) = sum_t c_t |a_t . u|^p` on the nodes of a mask.
#[derive(Debug, Clone)]
pub struct EnergyForm<T> {
    grid: Grid<T>,
    nodes: Vec<usize>,
    mass: Vec<T>,
    p: T,
    /// `c |u_i - u_j|^p`.
    pairs: Vec<(u32, u32, T)>,
    /// `c_i |u_i|^p`.
    kill: Vec<T>,
    /// `c |sum a_j u_j|^p`, entries in `entries[start..end]`.
    stencils: Vec<(usize, usize, T)>,
    entries: Vec<(u32, T)>,
}

/// Signed power `|t|^{p-1} sign(t)`, zero at zero.
#[inline]
fn dpow<T: Real>(t: T, p: T) -> T {
    if t == T::zero() {
        T::zero()
    } else {
        pow_abs(t, p - T::one()) * t.signum()
    }
}

impl<T: Real> EnergyForm<T> {
    fn empty(omega: &DomainMask<T>, p: T) -> Result<Self> {
        if !(p >= T::one()) {
            return invalid(format!("exponent p must be >= 1, got {p}"));
        }
        let grid = *omega.grid();
        let nodes = omega.indices();
        if nodes.is_empty() {
            return invalid("Omega has no nodes");
        }
        let mass = nodes.iter().map(|&i| grid.node_weight(i)).collect();
        let n = nodes.len();
        Ok(Self {
            grid,
            nodes,
            mass,
            p,
            pairs: Vec::new(),
            kill: vec![T::zero(); n],
            stencils: Vec::new(),
            entries: Vec::new(),
        })
    }

    /// The nonlocal energy of functions supported in `omega`, integrated
    /// over all pairs within the truncation radius.
    pub fn nonlocal(
        kernel: &KernelMember<T>,
        wf: &WeightFamily<T>,
        choice: WeightChoice<T>,
        p: T,
        omega: &DomainMask<T>,
        opts: &EnergyOptions<T>,
    ) -> Result<Self> {
        let mut form = Self::empty(omega, p)?;
        let base = *omega.grid();
        if kernel.dim() != base.dim() || wf.dim() != base.dim() {
            return invalid("grid, kernel and weight dimensions differ");
        }
        let table = KernelTable::for_kernel(kernel, p, base.h(), opts)?;
        let big = base.expanded(table.max_offset() + 2);
        let off = big
            .lattice_offset(&base)
            .expect("expanded grid shares the lattice");
        let nw = wf.on_grid(choice, &big)?;
        let shape = big.shape();
        let to_big = |i: usize| {
            let m = base.multi(i);
            (m[0] as isize + off[0]) as usize * shape[1] + (m[1] as isize + off[1]) as usize
        };
        let mut local = vec![u32::MAX; big.len()];
        for (l, &i) in form.nodes.iter().enumerate() {
            local[to_big(i)] = l as u32;
        }
        let h2n = big.cell_volume() * big.cell_volume();
        let rows: Vec<(Vec<(u32, u32, T)>, T)> = form
            .nodes
            .par_iter()
            .enumerate()
            .map(|(lx, &i)| {
                let x = to_big(i);
                let mx = big.multi(x);
                let mut pairs = Vec::new();
                let mut kill = Vec::new();
                for &(d0, d1, o) in table.offsets() {
                    let y =
                        (mx[0] as isize + d0) as usize * shape[1] + (mx[1] as isize + d1) as usize;
                    let back = table.index_of(-d0, -d1).expect("offset table is symmetric");
                    let c =
                        (table.coef(o) * nw.pair(x, y) + table.coef(back) * nw.pair(y, x)) * h2n;
                    let ly = local[y];
                    if ly == u32::MAX {
                        kill.push(c);
                    } else if ly > lx as u32 {
                        pairs.push((lx as u32, ly, c));
                    }
                }
                (pairs, pairwise_sum(&kill))
            })
            .collect();
        for (l, (pairs, kill)) in rows.into_iter().enumerate() {
            form.pairs.extend(pairs);
            form.kill[l] = kill;
        }
        let nodes = table.diagonal_nodes();
        if !nodes.is_empty() {
            let hn = big.cell_volume();
            let h = big.h();
            let dim = big.dim();
            for z in 0..big.len() {
                let near = (0..dim).any(|a| {
                    let mut e = [0isize; 2];
                    e[a] = 1;
                    [
                        z,
                        big.shifted(z, e).unwrap_or(z),
                        big.shifted(z, [-e[0], -e[1]]).unwrap_or(z),
                    ]
                    .iter()
                    .any(|&q| local[q] != u32::MAX)
                }) || local[z] != u32::MAX;
                if !near {
                    continue;
                }
                let wz = nw.pair(z, z);
                for (wt, s) in nodes {
                    let mut ent: Vec<(usize, T)> = Vec::with_capacity(3);
                    for a in 0..dim {
                        let mut e = [0isize; 2];
                        e[a] = if s[a] >= T::zero() { 1 } else { -1 };
                        let q = big.shifted(z, e);
                        let sa = s[a] / h;
                        // sigma_a D^+ u for sigma_a >= 0, sigma_a D^- u otherwise;
                        // both read as |sigma_a| (u(z + sign e_a) - u(z)) / h up to sign.
                        let (cq, cz) = if s[a] >= T::zero() {
                            (sa, -sa)
                        } else {
                            (-sa, sa)
                        };
                        if let Some(q) = q {
                            ent.push((q, cq));
                        }
                        ent.push((z, cz));
                    }
                    form.push_stencil(&local, &ent, hn * wz * *wt);
                }
            }
        }
        Ok(form)
    }

    /// The local energy `sum_i mu_i ||sigma_i . D^+ u||^p_{L^p(w^0)}` on the
    /// grid of `omega`.
    pub fn local(
        mu: &LimitMeasure<T>,
        w0: &GridFunction<T>,
        p: T,
        omega: &DomainMask<T>,
    ) -> Result<Self> {
        let mut form = Self::empty(omega, p)?;
        let grid = *omega.grid();
        same_grid(&grid, w0.grid())?;
        if mu.dim() != grid.dim() {
            return invalid("limit measure and grid dimensions differ");
        }
        mu.validate()?;
        let mut local = vec![u32::MAX; grid.len()];
        for (l, &i) in form.nodes.iter().enumerate() {
            local[i] = l as u32;
        }
        let h = grid.h();
        let hn = grid.cell_volume();
        let dim = grid.dim();
        let w = w0.values();
        for z in 0..grid.len() {
            for (k, &m) in mu.masses().iter().enumerate() {
                if m == T::zero() {
                    continue;
                }
                let s = mu.direction(k);
                let mut ent: Vec<(usize, T)> = Vec::with_capacity(4);
                for a in 0..dim {
                    let mut e = [0isize; 2];
                    e[a] = 1;
                    if let Some(f) = grid.shifted(z, e) {
                        ent.push((f, s[a] / h));
                        ent.push((z, -s[a] / h));
                    }
                }
                form.push_stencil(&local, &ent, m * hn * w[z]);
            }
        }
        Ok(form)
    }

    fn push_stencil(&mut self, local: &[u32], ent: &[(usize, T)], c: T) {
        if c == T::zero() {
            return;
        }
        let start = self.entries.len();
        for &(q, a) in ent {
            let l = local[q];
            if l == u32::MAX || a == T::zero() {
                continue;
            }
            match self.entries[start..].iter_mut().find(|e| e.0 == l) {
                Some(e) => e.1 += a,
                None => self.entries.push((l, a)),
            }
        }
        if self.entries.len() > start {
            self.stencils.push((start, self.entries.len(), c));
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// Grid indices of the unknowns.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// `sum_i m_i |u_i|^p` with trapezoid node weights.
    pub fn norm_pow(&self, u: &[T]) -> T {
        let parts: Vec<T> = u
            .iter()
            .zip(&self.mass)
            .map(|(&v, &m)| m * pow_abs(v, self.p))
            .collect();
        pairwise_sum(&parts)
    }

    /// The energy of the function equal to `u` on the nodes of `Omega`.
    pub fn energy(&self, u: &[T]) -> T {
        let p = self.p;
        let a: Vec<T> = self
            .pairs
            .par_iter()
            .map(|&(i, j, c)| c * pow_abs(u[i as usize] - u[j as usize], p))
            .collect();
        let b: Vec<T> = self
            .kill
            .iter()
            .zip(u)
            .map(|(&c, &v)| c * pow_abs(v, p))
            .collect();
        let s: Vec<T> = self
            .stencils
            .par_iter()
            .map(|&(lo, hi, c)| c * pow_abs(self.dot(lo, hi, u), p))
            .collect();
        pairwise_sum(&a) + pairwise_sum(&b) + pairwise_sum(&s)
    }

    #[inline]
    fn dot(&self, lo: usize, hi: usize, u: &[T]) -> T {
        self.entries[lo..hi]
            .iter()
            .fold(T::zero(), |acc, &(j, a)| acc + a * u[j as usize])
    }

    /// Gradient of [`EnergyForm::energy`] (a subgradient for `p = 1`).
    pub fn gradient(&self, u: &[T], out: &mut [T]) {
        let p = self.p;
        out.iter_mut().for_each(|g| *g = T::zero());
        for &(i, j, c) in &self.pairs {
            let d = c * p * dpow(u[i as usize] - u[j as usize], p);
            out[i as usize] += d;
            out[j as usize] -= d;
        }
        for (l, &c) in self.kill.iter().enumerate() {
            out[l] += c * p * dpow(u[l], p);
        }
        for &(lo, hi, c) in &self.stencils {
            let d = c * p * dpow(self.dot(lo, hi, u), p);
            for &(j, a) in &self.entries[lo..hi] {
                out[j as usize] += d * a;
            }
        }
    }

    /// Dense matrix `A` with `E(u) = u^T A u` for the same coefficients
    /// (meaningful as the energy only when `p = 2`).
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for &(i, j, c) in &self.pairs {
            let (i, j, c) = (i as usize, j as usize, to_f64(c));
            a[(i, i)] += c;
            a[(j, j)] += c;
            a[(i, j)] -= c;
            a[(j, i)] -= c;
        }
        for (l, &c) in self.kill.iter().enumerate() {
            a[(l, l)] += to_f64(c);
        }
        for &(lo, hi, c) in &self.stencils {
            let c = to_f64(c);
            let ent = &self.entries[lo..hi];
            for &(i, ai) in ent {
                for &(j, aj) in ent {
                    a[(i as usize, j as usize)] += c * to_f64(ai) * to_f64(aj);
                }
            }
        }
        a
    }

    /// Scatters unknowns back onto the grid (zero outside `Omega`).
    pub fn to_grid(&self, u: &[T]) -> Result<GridFunction<T>> {
        let mut v = vec![T::zero(); self.grid.len()];
        for (&i, &x) in self.nodes.iter().zip(u) {
            v[i] = x;
        }
        GridFunction::new(self.grid, v)
    }

    /// Unknowns of a grid function on the same grid.
    pub fn gather(&self, u: &GridFunction<T>) -> Result<Vec<T>> {
        same_grid(&self.grid, u.grid())?;
        Ok(self.nodes.iter().map(|&i| u.values()[i]).collect())
    }

    /// `E(u) / ||u||^p`, or `None` for `u = 0`.
    pub fn rayleigh(&self, u: &[T]) -> Option<T> {
        let n = self.norm_pow(u);
        if n > T::zero() {
            Some(self.energy(u) / n)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Dense symmetric eigensolver for `p = 2`, descent otherwise.
    Auto,
    Matrix,
    Descent,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions<T> {
    pub solver: SolverKind,
    /// Relative Rayleigh-quotient decrement below which descent stops.
    pub tol: T,
    pub max_iter: usize,
    pub energy: EnergyOptions<T>,
}

impl<T: Real> Default for EigenOptions<T> {
    fn default() -> Self {
        Self {
            solver: SolverKind::Auto,
            tol: lit(1e-13),
            max_iter: 20_000,
            energy: EnergyOptions::default(),
        }
    }
}

/// A first eigenpair.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult<T> {
    pub lambda: T,
    /// Normalized in `L^p`, nonnegative integral, zero outside `Omega`.
    pub eigenfunction: GridFunction<T>,
    /// Last relative decrement of the Rayleigh quotient (zero for the matrix path).
    pub residual: T,
    pub iterations: usize,
    pub converged: bool,
    /// `lambda` is the exact minimum of the discrete problem (matrix path)
    /// rather than an upper bound from descent.
    pub certified: bool,
    /// The energy vanishes identically.
    pub degenerate: bool,
}

fn normalize<T: Real>(form: &EnergyForm<T>, u: &mut [T]) {
    let n = form.norm_pow(u).powf(form.p.recip());
    if n > T::zero() {
        u.iter_mut().for_each(|v| *v /= n);
    }
}

fn finish<T: Real>(
    form: &EnergyForm<T>,
    mut u: Vec<T>,
    residual: T,
    iterations: usize,
    converged: bool,
    certified: bool,
) -> Result<EigenResult<T>> {
    normalize(form, &mut u);
    let integral: Vec<T> = u.iter().zip(&form.mass).map(|(&v, &m)| v * m).collect();
    if pairwise_sum(&integral) < T::zero() {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let lambda = form.energy(&u) / form.norm_pow(&u);
    Ok(EigenResult {
        lambda,
        eigenfunction: form.to_grid(&u)?,
        residual,
        iterations,
        converged,
        certified,
        degenerate: lambda == T::zero(),
    })
}

fn solve_matrix<T: Real>(form: &EnergyForm<T>) -> Result<EigenResult<T>> {
    if form.p != lit(2.0) {
        return invalid("the matrix solver needs p = 2");
    }
    let a = form.matrix();
    let s: Vec<f64> = form.mass.iter().map(|&m| 1.0 / to_f64(m).sqrt()).collect();
    let n = form.len();
    let b = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * s[i] * s[j]);
    let eig = SymmetricEigen::new(b);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
        .ok_or_else(|| Error::InvalidInput("empty form".into()))?;
    let u: Vec<T> = (0..n)
        .map(|i| lit(eig.eigenvectors[(i, k)] * s[i]))
        .collect();
    finish(form, u, T::zero(), 1, true, true)
}

/// Monotone gradient descent with Barzilai-Borwein steps and Armijo
/// backtracking on the Rayleigh quotient, renormalizing every step.
fn solve_descent<T: Real>(
    form: &EnergyForm<T>,
    init: Vec<T>,
    opts: &EigenOptions<T>,
) -> Result<EigenResult<T>> {
    let n = form.len();
    let p = form.p;
    let mut u = init;
    normalize(form, &mut u);
    let mut r = match form.rayleigh(&u) {
        Some(r) => r,
        None => return invalid("initial guess vanishes on Omega"),
    };
    if r == T::zero() {
        return finish(form, u, T::zero(), 0, true, false);
    }
    let mut g = vec![T::zero(); n];
    let mut ge = vec![T::zero(); n];
    let grad = |u: &[T], r: T, ge: &mut [T], g: &mut [T]| {
        form.gradient(u, ge);
        for i in 0..n {
            g[i] = ge[i] - r * p * form.mass[i] * dpow(u[i], p);
        }
    };
    grad(&u, r, &mut ge, &mut g);
    let gnorm = |g: &[T]| g.iter().fold(T::zero(), |a, &v| a + v * v);
    let umax = u.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let gmax = g.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let mut alpha = if gmax > T::zero() {
        lit::<T>(1e-2) * umax / gmax
    } else {
        T::one()
    };
    let mut residual = T::infinity();
    let mut quiet = 0;
    let mut trial = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    for it in 1..=opts.max_iter {
        let gg = gnorm(&g);
        if gg == T::zero() {
            return finish(form, u, T::zero(), it, true, false);
        }
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..80 {
            for i in 0..n {
                trial[i] = u[i] - step * g[i];
            }
            normalize(form, &mut trial);
            if let Some(rt) = form.rayleigh(&trial) {
                if rt
                    <= r - lit::<T>(1e-4) * step * gg
                        / form.norm_pow(&u).max(T::min_positive_value())
                    || rt < r
                {
                    accepted = Some(rt);
                    break;
                }
            }
            step *= lit(0.5);
        }
        let rt = match accepted {
            Some(rt) => rt,
            None => return finish(form, u, residual, it, residual <= opts.tol, false),
        };
        residual = (r - rt) / r;
        grad(&trial, rt, &mut ge, &mut g_new);
        let mut sy = T::zero();
        let mut ss = T::zero();
        for i in 0..n {
            let s = trial[i] - u[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        alpha = if sy > T::zero() {
            ss / sy
        } else {
            step * lit(2.0)
        };
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        r = rt;
        if residual <= opts.tol {
            quiet += 1;
            if quiet >= 5 {
                return finish(form, u, residual, it, true, false);
            }
        } else {
            quiet = 0;
        }
    }
    finish(form, u, residual, opts.max_iter, false, false)
}

fn positive_guess<T: Real>(form: &EnergyForm<T>) -> Vec<T> {
    vec![T::one(); form.len()]
}

/// Solves the minimization for an assembled form. With [`SolverKind::Auto`]
/// and `p != 2`, descent restarts from the `p = 2` eigenfunction of `form2`
/// when given.
pub fn solve_form<T: Real>(
    form: &EnergyForm<T>,
    form2: Option<&EnergyForm<T>>,
    opts: &EigenOptions<T>,
) -> Result<EigenResult<T>> {
    let is_two = form.p == lit(2.0);
    match opts.solver {
        SolverKind::Matrix => solve_matrix(form),
        SolverKind::Descent => solve_descent(form, positive_guess(form), opts),
        SolverKind::Auto if is_two => solve_matrix(form),
        SolverKind::Auto => {
            let init = match form2 {
                Some(f2) => {
                    let e = solve_matrix(f2)?;
                    f2.gather(&e.eigenfunction)?
                        .into_iter()
                        .map(|v| v.abs())
                        .collect()
                }
                None => positive_guess(form),
            };
            solve_descent(form, init, opts)
        }
    }
}

/// `inf { F(u) : u = 0 off Omega, ||u||_p = 1 }` for the weighted nonlocal energy.
pub fn first_eigen_nonlocal<T: Real>(
    kernel: &KernelMember<T>,
    wf: &WeightFamily<T>,
    choice: WeightChoice<T>,
    p: T,
    omega: &DomainMask<T>,
    opts: &EigenOptions<T>,
) -> Result<EigenResult<T>> {
    let form = EnergyForm::nonlocal(kernel, wf, choice, p, omega, &opts.energy)?;
    let form2 = if p != lit(2.0) && opts.solver == SolverKind::Auto {
        Some(EnergyForm::nonlocal(
            kernel,
            wf,
            choice,
            lit(2.0),
            omega,
            &opts.energy,
        )?)
    } else {
        None
    };
    solve_form(&form, form2.as_ref(), opts)
}

/// `inf { D(u) : u = 0 off Omega, ||u||_p = 1 }` for the local limit energy.
/// A zero measure gives `lambda = 0` flagged as degenerate.
pub fn first_eigen_local<T: Real>(
    mu: &LimitMeasure<T>,
    w0: &GridFunction<T>,
    p: T,
    omega: &DomainMask<T>,
    opts: &EigenOptions<T>,
) -> Result<EigenResult<T>> {
    let form = EnergyForm::local(mu, w0, p, omega)?;
    if mu.is_zero() {
        return finish(&form, positive_guess(&form), T::zero(), 0, true, false);
    }
    let form2 = if p != lit(2.0) && opts.solver == SolverKind::Auto {
        Some(EnergyForm::local(mu, w0, lit(2.0), omega)?)
    } else {
        None
    };
    solve_form(&form, form2.as_ref(), opts)
}

/// The Poincare constant and its check against a bank of test functions.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareEstimate<T> {
    /// `1 / lambda`.
    pub constant: T,
    pub via_lambda: T,
    pub lambda: T,
    /// `max ||u||_p^p / D(u)` over the (nonzero) bank functions.
    pub sample_max_ratio: T,
}

/// `A = 1 / lambda` for the local energy, checked on `bank` (each function
/// is zeroed outside `Omega`).
pub fn poincare_estimate<T: Real>(
    mu: &LimitMeasure<T>,
    w0: &GridFunction<T>,
    p: T,
    omega: &DomainMask<T>,
    bank: &[GridFunction<T>],
    opts: &EigenOptions<T>,
) -> Result<PoincareEstimate<T>> {
    let eig = first_eigen_local(mu, w0, p, omega, opts)?;
    if !(eig.lambda > T::zero()) {
        return Err(Error::NoPoincare(format!(
            "first eigenvalue is {} so no Poincare constant exists",
            eig.lambda
        )));
    }
    let form = EnergyForm::local(mu, w0, p, omega)?;
    let constant = eig.lambda.recip();
    let mut ratio = T::zero();
    for u in bank {
        if let Some(r) = form.rayleigh(&form.gather(u)?) {
            if r > T::zero() {
                ratio = ratio.max(r.recip());
            } else {
                return Err(Error::NoPoincare("a bank function has zero energy".into()));
            }
        }
    }
    let slack = lit::<T>(1e-8) + constant * lit(1e-9);
    if ratio > constant + slack {
        return Err(Error::InvariantViolated(format!(
            "bank ratio {ratio:e} exceeds the Poincare constant {constant:e}"
        )));
    }
    Ok(PoincareEstimate {
        constant,
        via_lambda: constant,
        lambda: eig.lambda,
        sample_max_ratio: ratio,
    })
}

/// One check `||u||_p^p <= (A + eps) F_k(u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareRow<T> {
    pub index: T,
    pub function: usize,
    pub lhs: T,
    pub rhs: T,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareStability<T> {
    pub rows: Vec<PoincareRow<T>>,
    /// Smallest sampled index from which every later check passes.
    pub k_eps: Option<T>,
}

/// Checks `||u||^p <= (A + eps) F^{w_k}_k(u)` for every index and bank function.
/// The weight index follows the kernel's effective index.
#[allow(clippy::too_many_arguments)]
pub fn poincare_stability_check<T: Real>(
    family: &KernelFamily<T>,
    wf: &WeightFamily<T>,
    p: T,
    omega: &DomainMask<T>,
    a: T,
    eps: T,
    indices: &[T],
    bank: &[GridFunction<T>],
    opts: &EnergyOptions<T>,
) -> Result<PoincareStability<T>> {
    let mut rows = Vec::new();
    for &k in indices {
        let member = family.member(k)?;
        let choice = WeightChoice::Index(family.effective_index(k));
        let form = EnergyForm::nonlocal(&member, wf, choice, p, omega, opts)?;
        for (f, u) in bank.iter().enumerate() {
            let v = form.gather(u)?;
            let lhs = form.norm_pow(&v);
            let rhs = (a + eps) * form.energy(&v);
            rows.push(PoincareRow {
                index: k,
                function: f,
                lhs,
                rhs,
                passed: lhs <= rhs,
            });
        }
    }
    let mut k_eps = None;
    for &k in indices.iter().rev() {
        if rows.iter().filter(|r| r.index >= k).all(|r| r.passed) {
            k_eps = Some(k);
        } else {
            break;
        }
    }
    Ok(PoincareStability { rows, k_eps })
}

/// One index of a spectral stability sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow<T> {
    pub index: T,
    pub lambda: T,
    pub gap_to_limit: T,
    /// `min(||u_k - u||_p, ||u_k + u||_p)`.
    pub ef_distance: T,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSweep<T> {
    pub limit: EigenResult<T>,
    pub rows: Vec<SweepRow<T>>,
}

/// Sign-aligned `L^p` distance between two eigenfunctions on one grid.
pub fn aligned_distance<T: Real>(a: &GridFunction<T>, b: &GridFunction<T>, p: T) -> Result<T> {
    let d1 = lp_norm(&a.sub(b)?, p)?;
    let d2 = lp_norm(&a.add(b)?, p)?;
    Ok(d1.min(d2))
}

/// Eigenvalues along `indices` against the local limit with measure `mu`
/// (the family's exact limit when `None`) and weight `w(x, x)`.
#[allow(clippy::too_many_arguments)]
pub fn spectral_stability_sweep<T: Real>(
    family: &KernelFamily<T>,
    wf: &WeightFamily<T>,
    p: T,
    omega: &DomainMask<T>,
    indices: &[T],
    mu: Option<&LimitMeasure<T>>,
    opts: &EigenOptions<T>,
) -> Result<SpectralSweep<T>> {
    let mu = match mu.or(family.exact_limit()) {
        Some(m) => m.clone(),
        None => {
            return Err(Error::PreconditionFailed(
                "no limit measure given and the family has no closed-form limit".into(),
            ))
        }
    };
    let w0 = diagonal_of(wf, WeightChoice::Limit, *omega.grid())?;
    let limit = first_eigen_local(&mu, &w0, p, omega, opts)?;
    let rows: Vec<Result<SweepRow<T>>> = indices
        .par_iter()
        .map(|&k| {
            let member = family.member(k)?;
            let choice = WeightChoice::Index(family.effective_index(k));
            let e = first_eigen_nonlocal(&member, wf, choice, p, omega, opts)?;
            Ok(SweepRow {
                index: k,
                lambda: e.lambda,
                gap_to_limit: (e.lambda - limit.lambda).abs(),
                ef_distance: aligned_distance(&e.eigenfunction, &limit.eigenfunction, p)?,
                converged: e.converged,
            })
        })
        .collect();
    Ok(SpectralSweep {
        limit,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}
