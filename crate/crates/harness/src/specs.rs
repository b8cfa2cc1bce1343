//! Turns config specs into core objects.

use bbmlab_core::energy::QuadratureRule;
use bbmlab_core::expr::Expr;
use bbmlab_core::kernels::IndexKind;
use bbmlab_core::spectral::SolverKind;
use bbmlab_core::ClosedForm;
use bbmlab_core::{
    DomainMask, EigenOptions, EnergyOptions, Grid, GridFunction, KernelFamily, WeightFamily,
};

use crate::config::{
    EigenSpec, EnergySpec, FunctionSpec, GridSpec, IndexKindSpec, KernelSpec, OmegaSpec, RuleSpec,
    SolverSpec, WeightSpec,
};
use crate::error::{Context, HarnessError};

fn compile(src: &str, vars: &[&str]) -> Result<Expr, HarnessError> {
    Expr::compile(src, vars).context(format!("expression '{src}'"))
}

fn index_kind(k: IndexKindSpec) -> IndexKind {
    match k {
        IndexKindSpec::Integer => IndexKind::Integer,
        IndexKindSpec::Fractional => IndexKind::Fractional,
    }
}

pub fn kernel_family(spec: &KernelSpec, p: f64, dim: usize) -> Result<KernelFamily, HarnessError> {
    match spec {
        KernelSpec::Fractional { p: kp, n } => {
            if let Some(n) = n {
                if *n != dim {
                    return Err(HarnessError::Config(format!(
                        "kernel dimension N = {n} differs from grid dimension {dim}"
                    )));
                }
            }
            KernelFamily::fractional(kp.unwrap_or(p), dim).context("fractional kernel")
        }
        KernelSpec::Table {
            indices,
            radii,
            values,
            index_kind: kind,
        } => {
            let idx = indices
                .clone()
                .unwrap_or_else(|| (1..=values.len()).map(|i| i as f64).collect());
            KernelFamily::table(dim, index_kind(*kind), idx, radii.clone(), values.clone())
                .context("kernel table")
        }
        KernelSpec::Expr {
            expr,
            index_kind: kind,
        } => KernelFamily::from_expr(dim, index_kind(*kind), expr)
            .context(format!("kernel '{expr}'")),
    }
}

fn point_vals(x: &[f64]) -> [f64; 3] {
    let x2 = if x.len() > 1 { x[1] } else { 0.0 };
    [x[0], x2, x[0]]
}

fn pair_vals(x: &[f64], y: &[f64]) -> [f64; 6] {
    let [x1, x2, _] = point_vals(x);
    let [y1, y2, _] = point_vals(y);
    [x1, x2, y1, y2, x1, y1]
}

pub fn weight_family(spec: &WeightSpec, dim: usize) -> Result<WeightFamily, HarnessError> {
    match spec {
        WeightSpec::One => Ok(WeightFamily::one(dim)),
        WeightSpec::Product {
            f,
            f_k,
            lipschitz,
            sup,
        } => {
            let fe = compile(f, &["x1", "x2", "x"])?;
            let fk = compile(f_k.as_deref().unwrap_or(f), &["x1", "x2", "x", "k"])?;
            WeightFamily::product(
                dim,
                move |x: &[f64]| fe.eval(&point_vals(x)),
                move |k: f64, x: &[f64]| {
                    let [a, b, c] = point_vals(x);
                    fk.eval(&[a, b, c, k])
                },
                *lipschitz,
                *sup,
            )
            .map(|w| w.with_label(&format!("product(f = {f})")))
            .context("product weight")
        }
        WeightSpec::Expr { w, w_k, lipschitz } => {
            const VARS: [&str; 7] = ["x1", "x2", "y1", "y2", "x", "y", "k"];
            let we = compile(w, &VARS[..6])?;
            let wk = compile(w_k.as_deref().unwrap_or(w), &VARS)?;
            Ok(WeightFamily::general(
                dim,
                move |x: &[f64], y: &[f64]| we.eval(&pair_vals(x, y)),
                move |k: f64, x: &[f64], y: &[f64]| {
                    let v = pair_vals(x, y);
                    wk.eval(&[v[0], v[1], v[2], v[3], v[4], v[5], k])
                },
                *lipschitz,
            )
            .with_label(&format!("expr(w = {w})")))
        }
    }
}

/// The closed form behind a function spec, when there is one.
pub fn closed_form(spec: &FunctionSpec) -> Result<Option<ClosedForm>, HarnessError> {
    let c2 = |c: &Option<Vec<f64>>| -> Result<[f64; 2], HarnessError> {
        match c.as_deref() {
            None => Ok([0.0, 0.0]),
            Some([a]) => Ok([*a, 0.0]),
            Some([a, b]) => Ok([*a, *b]),
            Some(v) => Err(HarnessError::Config(format!(
                "center {v:?} must have 1 or 2 entries"
            ))),
        }
    };
    let f = match spec {
        FunctionSpec::Hat { center, radius } => ClosedForm::Hat {
            center: c2(center)?,
            radius: *radius,
        },
        FunctionSpec::Gaussian { sigma } => ClosedForm::Gaussian { sigma: *sigma },
        FunctionSpec::Bump { center, radius } => ClosedForm::Bump {
            center: c2(center)?,
            radius: *radius,
        },
        FunctionSpec::SinPacket { freq, lo, hi } => ClosedForm::SinPacket {
            freq: *freq,
            lo: *lo,
            hi: *hi,
        },
        FunctionSpec::Beta { a, b, lo, hi } => ClosedForm::Beta {
            a: *a,
            b: *b,
            lo: *lo,
            hi: *hi,
        },
        FunctionSpec::IndicatorMollified { half_width, j } => ClosedForm::IndicatorMollified {
            half_width: *half_width,
            j: *j,
        },
        FunctionSpec::Constant { value } => ClosedForm::Constant(*value),
        FunctionSpec::Csv { .. } | FunctionSpec::Expr { .. } => return Ok(None),
    };
    f.validate().context("function spec")?;
    Ok(Some(f))
}

/// Radius of a ball around the origin holding the (numerical) support, used
/// to size automatic grids. Gaussians count as supported in `6 sigma`.
pub fn extent_hint(spec: &FunctionSpec) -> Result<f64, HarnessError> {
    Ok(match spec {
        FunctionSpec::Gaussian { sigma } => 6.0 * sigma,
        FunctionSpec::Expr { support_radius, .. } => support_radius.unwrap_or(1.0),
        FunctionSpec::Csv { .. } => 0.0,
        FunctionSpec::Constant { .. } => 1.0,
        _ => closed_form(spec)?
            .and_then(|c| c.support_radius())
            .unwrap_or(1.0),
    })
}

/// Samples `u` on `grid`; CSV specs bring their own grid.
pub fn function(spec: &FunctionSpec, grid: Grid) -> Result<GridFunction, HarnessError> {
    match spec {
        FunctionSpec::Csv { path } => {
            let p = std::path::Path::new(path);
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            GridFunction::from_csv(&text).context(format!("grid function {path}"))
        }
        FunctionSpec::Expr {
            expr,
            support_radius,
        } => {
            let e = compile(expr, &["x1", "x2", "x"])?;
            let u = GridFunction::sample(grid, move |x: &[f64]| e.eval(&point_vals(x)))
                .context(format!("sampling '{expr}'"))?;
            match support_radius {
                Some(r) => u.with_support_radius(*r).context("support radius"),
                None => Ok(u),
            }
        }
        _ => closed_form(spec)?
            .expect("closed-form spec")
            .sample(grid)
            .context("sampling function"),
    }
}

pub fn spacing(spec: &GridSpec, default: f64) -> f64 {
    spec.h
        .or(spec.h_log2.map(|l| 2f64.powi(l)))
        .unwrap_or(default)
}

/// The computational box: explicit `lo`/`hi`, a centered `half_width`, or
/// `auto_half_width` rounded up to the lattice.
pub fn grid(spec: &GridSpec, default_h: f64, auto_half_width: f64) -> Result<Grid, HarnessError> {
    let h = spacing(spec, default_h);
    match (&spec.lo, &spec.hi) {
        (Some(lo), Some(hi)) => {
            if lo.len() != spec.dim || hi.len() != spec.dim {
                return Err(HarnessError::Config(
                    "grid.lo and grid.hi must have dim entries".into(),
                ));
            }
            Grid::new(lo, hi, h).context("grid")
        }
        (None, None) => {
            Grid::centered(spec.dim, spec.half_width.unwrap_or(auto_half_width), h).context("grid")
        }
        _ => Err(HarnessError::Config(
            "give both grid.lo and grid.hi or neither".into(),
        )),
    }
}

/// Omega on a grid of `n` cells per axis across its bounding box.
pub fn omega(spec: &OmegaSpec, n: usize, dim: usize) -> Result<DomainMask, HarnessError> {
    let check = |v: &[f64], what: &str| {
        if v.len() == dim {
            Ok(())
        } else {
            Err(HarnessError::Config(format!(
                "omega.{what} must have {dim} entries"
            )))
        }
    };
    match spec {
        OmegaSpec::Interval { a, b } => {
            if dim != 1 {
                return Err(HarnessError::Config("interval omega needs dim = 1".into()));
            }
            let g = Grid::from_cells(&[*a], &[*b], n).context("omega grid")?;
            DomainMask::interval(g, *a, *b).context("omega")
        }
        OmegaSpec::Box { lo, hi } => {
            check(lo, "lo")?;
            check(hi, "hi")?;
            let g = Grid::from_cells(lo, hi, n).context("omega grid")?;
            DomainMask::open_box(g, lo, hi).context("omega")
        }
        OmegaSpec::Ball { center, radius } => {
            check(center, "center")?;
            let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
            let hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
            let g = Grid::from_cells(&lo, &hi, n).context("omega grid")?;
            DomainMask::ball(g, center, *radius).context("omega")
        }
    }
}

pub fn energy_options(spec: &EnergySpec) -> EnergyOptions {
    EnergyOptions {
        truncation: spec.truncation,
        delta: spec.delta,
        rule: match spec.rule {
            RuleSpec::SingularCorrected => QuadratureRule::SingularCorrected,
            RuleSpec::Midpoint => QuadratureRule::Midpoint,
        },
        ..EnergyOptions::default()
    }
}

pub fn eigen_options(spec: &EigenSpec, energy: &EnergySpec) -> EigenOptions {
    EigenOptions {
        solver: match spec.solver {
            SolverSpec::Auto => SolverKind::Auto,
            SolverSpec::Matrix => SolverKind::Matrix,
            SolverSpec::Descent => SolverKind::Descent,
        },
        tol: spec.tol,
        max_iter: spec.max_iter,
        energy: energy_options(energy),
    }
}

/// A short label for reports.
pub fn rule_name(rule: RuleSpec) -> &'static str {
    match rule {
        RuleSpec::SingularCorrected => "singular-corrected",
        RuleSpec::Midpoint => "midpoint",
    }
}
