//! The six experiment kinds.

use std::sync::Arc;

use bbmlab_core::energy::{
    ell_r_bound_check, ftc_check, gagliardo_seminorm, j_condition_check, limit_energy,
    mollification_defect, nonlocal_energy, weight_perturbation_gap, JSpec, QuadratureRule,
};
use bbmlab_core::expr::Expr;
use bbmlab_core::grid::mollify;
use bbmlab_core::kernels::{
    geometric_schedule, limit_measure_numeric, limit_measure_radial, weak_star_check, IndexKind,
    KernelQuadrature,
};
use bbmlab_core::scalar::norm;
use bbmlab_core::spectral::{
    first_eigen_local, first_eigen_nonlocal, poincare_estimate, poincare_stability_check,
    spectral_stability_sweep,
};
use bbmlab_core::weights::{
    diagonal_of, diagonal_trace, modulus_check, mollified_weight_gap, SampleNet, WeightChoice,
};
use bbmlab_core::ClosedForm;
use bbmlab_core::{
    DomainMask, Error as CoreError, GridFunction, KernelFamily, LimitMeasure, WeightFamily,
};
use rayon::prelude::*;

use crate::bank::poincare_bank;
use crate::config::{
    ExperimentConfig, ExperimentKind, FunctionSpec, NonlocalVariant, SequenceKind, WeightSpec,
};
use crate::error::{Context, HarnessError};
use crate::report::{Cell, Report, Source};
use crate::specs;

pub fn run(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    match cfg.kind {
        ExperimentKind::BbmSweep => run_bbm_sweep(cfg),
        ExperimentKind::EigenSweep => run_eigen_sweep(cfg),
        ExperimentKind::Poincare => run_poincare(cfg),
        ExperimentKind::NonlocalBbm => run_nonlocal_bbm(cfg),
        ExperimentKind::InequalitySuite => run_inequality_suite(cfg),
        ExperimentKind::Mu => run_mu(cfg),
    }
}

const DEFAULT_H: f64 = 1.0 / 256.0;

/// The family's closed-form limit measure, or a numerical one from the last
/// two scheduled indices.
pub fn limit_measure(
    family: &KernelFamily,
    schedule: &[f64],
) -> Result<(LimitMeasure, &'static str), HarnessError> {
    if let Some(m) = family.exact_limit() {
        return Ok((m.clone(), "closed-form"));
    }
    let tail = &schedule[schedule.len().saturating_sub(2)..];
    let sched = geometric_schedule(4, 8, tail);
    let q = KernelQuadrature::default();
    if family.is_radial() {
        let m = limit_measure_radial(family, &sched, 1e-3, &q).context("radial limit measure")?;
        Ok((m, "radial-quadrature"))
    } else {
        let m =
            limit_measure_numeric(family, &sched, 32, 1e-3, &q).context("numeric limit measure")?;
        Ok((m, "sector-quadrature"))
    }
}

fn is_fractional(family: &KernelFamily) -> bool {
    family.kind() == IndexKind::Fractional
}

/// `(s, effective index)` cells for a scheduled index.
fn index_cells(family: &KernelFamily, k: f64) -> (Cell, Cell) {
    if is_fractional(family) {
        (Cell::Num(k), Cell::Num(family.effective_index(k)))
    } else {
        (Cell::Empty, Cell::Num(k))
    }
}

fn strictly_decreasing(gaps: &[f64], scale: f64) -> bool {
    let negligible = gaps.iter().all(|g| *g <= 1e-12 * scale.max(1.0));
    negligible || gaps.windows(2).all(|w| w[1] < w[0])
}

fn rel(gap: f64, target: f64) -> f64 {
    if target != 0.0 {
        gap / target.abs()
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn common_source(
    op: &str,
    cfg: &ExperimentConfig,
    family: &KernelFamily,
    wf: &WeightFamily,
) -> Source {
    Source::new(op)
        .with("kernel", family.label())
        .with("weight", wf.label())
        .with("p", cfg.p)
        .with("truncation", cfg.energy.truncation)
        .with("delta", cfg.energy.delta)
        .with("rule", specs::rule_name(cfg.energy.rule))
}

pub fn run_bbm_sweep(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let dim = cfg.grid.dim;
    let p = cfg.p;
    let family = specs::kernel_family(&cfg.kernel, p, dim)?;
    let wf = specs::weight_family(&cfg.weight, dim)?;
    let opts = specs::energy_options(&cfg.energy);
    let auto = specs::extent_hint(&cfg.function)? + cfg.energy.truncation;
    let grid = specs::grid(&cfg.grid, DEFAULT_H, auto)?;
    let u = specs::function(&cfg.function, grid)?;
    let grid = *u.grid();
    let h = grid.h();
    let (mu, mu_source) = limit_measure(&family, &cfg.schedule)?;
    let w0 = diagonal_trace(&wf, grid).context("diagonal weight")?;
    let target = limit_energy(&u, &mu, &w0, p).context("limit energy")?;

    // perturbed and mollified sequences live on a box widened by 1/2
    let wide = grid.expanded((0.5 / h).ceil() as usize);
    let u_wide = u.transfer(wide).context("widening u")?;
    let phi = ClosedForm::Bump {
        center: [0.0; 2],
        radius: 0.5,
    }
    .sample(wide)
    .context("perturbation")?;
    let j_max = ((0.5 / h).floor() as u32).max(1);

    let jobs: Vec<(f64, SequenceKind)> = cfg
        .schedule
        .iter()
        .flat_map(|&k| cfg.bbm.sequences.iter().map(move |&s| (k, s)))
        .collect();
    let tol = &cfg.tolerances;
    let results: Vec<Result<(Vec<Cell>, Source, f64, f64, f64), HarnessError>> = jobs
        .par_iter()
        .map(|&(k, seq)| {
            let eff = family.effective_index(k);
            let member = family.member(k).context(format!("kernel member {k}"))?;
            let mut source = common_source("nonlocal_energy", cfg, &family, &wf)
                .with("index", k)
                .with("weight_index", eff)
                .with("h", h);
            let uk = match seq {
                SequenceKind::Identity => u.clone(),
                SequenceKind::Perturbed => {
                    source = source.with("sequence", "u + bump(0, 1/2) / k");
                    u_wide
                        .add(&phi.scaled(eff.recip()))
                        .context("perturbed sequence")?
                }
                SequenceKind::Mollified => {
                    let j = ((4.0 * eff).ceil() as u32).clamp(4, j_max.max(4));
                    source = source.with("sequence", format!("u * eta_{j}"));
                    mollify(&u_wide, j).context("mollified sequence")?
                }
            };
            let e = nonlocal_energy(&uk, &member, &wf, WeightChoice::Index(eff), p, &opts)
                .context(format!("energy at index {k}"))?;
            let gap = (e.total - target).abs();
            let tail = e.far_tail_bound.unwrap_or(0.0);
            let t = tol.rel_tol * target.abs() + tol.abs_slack + tail + tol.h_factor * h;
            let (s_cell, eff_cell) = index_cells(&family, k);
            let seq_name = match seq {
                SequenceKind::Identity => "identity",
                SequenceKind::Perturbed => "perturbed",
                SequenceKind::Mollified => "mollified",
            };
            let row = vec![
                seq_name.into(),
                s_cell,
                eff_cell,
                e.total.into(),
                target.into(),
                gap.into(),
                rel(gap, target).into(),
                t.into(),
                (e.total <= target + t).into(),
                (gap <= t).into(),
                e.near_field.into(),
                e.mid_field.into(),
                e.far_field.into(),
                e.diagonal.into(),
                e.far_tail_bound.into(),
                e.diagonal_omitted.into(),
            ];
            Ok((row, source, gap, t, e.total))
        })
        .collect();

    let mut rep = Report::new(
        "bbm-sweep",
        &[
            "sequence",
            "s",
            "index",
            "energy",
            "target",
            "gap",
            "rel_gap",
            "tol",
            "limsup_ok",
            "within_tol",
            "near",
            "mid",
            "far",
            "diagonal",
            "far_tail_bound",
            "diagonal_omitted",
        ],
    );
    let mut by_seq: Vec<(SequenceKind, Vec<(f64, f64, f64)>)> =
        cfg.bbm.sequences.iter().map(|&s| (s, Vec::new())).collect();
    for ((_, seq), r) in jobs.iter().zip(results) {
        let (row, source, gap, t, total) = r?;
        rep.push(row, source);
        if let Some(e) = by_seq.iter_mut().find(|(s, _)| s == seq) {
            e.1.push((gap, t, total));
        }
    }
    for (seq, vals) in &by_seq {
        let (gap, t, total) = *vals.last().expect("nonempty schedule");
        let gaps: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let decreasing = strictly_decreasing(&gaps, target);
        match seq {
            SequenceKind::Identity => {
                rep.check(
                    "limsup",
                    true,
                    total <= target + t,
                    format!("F = {total:e} vs D + tol = {:e}", target + t),
                );
                rep.check(
                    "final_gap",
                    true,
                    gap <= t,
                    format!("gap {gap:e} vs tol {t:e}"),
                );
                rep.check(
                    "gaps_decreasing",
                    tol.trend,
                    decreasing,
                    format!("gaps {gaps:?}"),
                );
            }
            other => {
                let name = if *other == SequenceKind::Perturbed {
                    "perturbed"
                } else {
                    "mollified"
                };
                rep.check(
                    &format!("{name}_final_gap"),
                    false,
                    gap <= t,
                    format!("gap {gap:e} vs tol {t:e}"),
                );
            }
        }
    }
    rep.note("target", target);
    rep.note("limit_measure", mu_source);
    rep.note("limit_masses", mu.masses());
    rep.note("h", h);
    rep.note("box_lo", grid.lo());
    rep.note("box_hi", grid.hi());
    Ok(rep)
}

pub fn run_eigen_sweep(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let dim = cfg.grid.dim;
    let p = cfg.p;
    let family = specs::kernel_family(&cfg.kernel, p, dim)?;
    let wf = specs::weight_family(&cfg.weight, dim)?;
    let om = specs::omega(&cfg.omega, cfg.eigen.n, dim)?;
    let opts = specs::eigen_options(&cfg.eigen, &cfg.energy);
    let (mu, mu_source) = limit_measure(&family, &cfg.schedule)?;
    let sweep = spectral_stability_sweep(&family, &wf, p, &om, &cfg.schedule, Some(&mu), &opts)
        .context("spectral sweep")?;
    let lim = sweep.limit.lambda;
    let mut rep = Report::new(
        "eigen-sweep",
        &[
            "index",
            "s",
            "lambda",
            "gap_to_limit",
            "ef_distance",
            "converged",
        ],
    );
    for r in &sweep.rows {
        let (s_cell, eff_cell) = index_cells(&family, r.index);
        let source = common_source("first_eigen_nonlocal", cfg, &family, &wf)
            .with("index", r.index)
            .with("weight_index", family.effective_index(r.index))
            .with("n", cfg.eigen.n)
            .with("solver", cfg.eigen.solver)
            .with("tol", cfg.eigen.tol);
        rep.push(
            vec![
                eff_cell,
                s_cell,
                r.lambda.into(),
                r.gap_to_limit.into(),
                r.ef_distance.into(),
                r.converged.into(),
            ],
            source,
        );
    }
    rep.sort_by_column("index");
    let last = sweep.rows.last().expect("nonempty schedule");
    let tol = &cfg.tolerances;
    let rg = rel(last.gap_to_limit, lim);
    rep.check(
        "final_gap",
        true,
        rg <= tol.rel_tol,
        format!("relative gap {rg:e} vs {}", tol.rel_tol),
    );
    let gaps: Vec<f64> = sweep.rows.iter().map(|r| r.gap_to_limit).collect();
    rep.check(
        "gaps_decreasing",
        tol.trend,
        strictly_decreasing(&gaps, lim),
        format!("gaps {gaps:?}"),
    );
    rep.check(
        "eigenfunction_distance",
        true,
        last.ef_distance <= tol.ef_tol,
        format!("{:e} vs {}", last.ef_distance, tol.ef_tol),
    );
    rep.check(
        "converged",
        true,
        sweep.rows.iter().all(|r| r.converged),
        "every solve converged",
    );
    rep.note("limit_lambda", lim);
    rep.note("limit_certified", sweep.limit.certified);
    rep.note("limit_measure", mu_source);
    rep.note("h", om.grid().h());
    Ok(rep)
}

pub fn run_poincare(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let dim = cfg.grid.dim;
    let p = cfg.p;
    let family = specs::kernel_family(&cfg.kernel, p, dim)?;
    let wf = specs::weight_family(&cfg.weight, dim)?;
    let om = specs::omega(&cfg.omega, cfg.eigen.n, dim)?;
    let eopts = specs::eigen_options(&cfg.eigen, &cfg.energy);
    let (mu, _) = limit_measure(&family, &cfg.schedule)?;
    let w0 = diagonal_of(&wf, WeightChoice::Limit, *om.grid()).context("diagonal weight")?;
    let bank = poincare_bank(&om)?;
    let names: Vec<String> = bank.iter().map(|b| b.0.clone()).collect();
    let funcs: Vec<GridFunction> = bank.into_iter().map(|b| b.1).collect();
    let est = poincare_estimate(&mu, &w0, p, &om, &funcs, &eopts).context("Poincare constant")?;
    let a = cfg.poincare.constant.unwrap_or(est.constant);
    let eps = cfg.poincare.eps_factor * a;
    let per_index: Vec<Result<_, HarnessError>> = cfg
        .schedule
        .par_iter()
        .map(|&k| {
            poincare_stability_check(&family, &wf, p, &om, a, eps, &[k], &funcs, &eopts.energy)
                .context(format!("Poincare check at index {k}"))
        })
        .collect();
    let mut rep = Report::new(
        "poincare",
        &[
            "index", "s", "function", "name", "lhs", "rhs", "ratio", "passed",
        ],
    );
    let mut rows = Vec::new();
    for r in per_index {
        rows.extend(r?.rows);
    }
    for r in &rows {
        let (s_cell, eff_cell) = index_cells(&family, r.index);
        let source = common_source("poincare_stability_check", cfg, &family, &wf)
            .with("index", r.index)
            .with("A", a)
            .with("eps", eps)
            .with("n", cfg.eigen.n);
        rep.push(
            vec![
                eff_cell,
                s_cell,
                r.function.into(),
                names[r.function].clone().into(),
                r.lhs.into(),
                r.rhs.into(),
                rel(r.lhs, r.rhs).into(),
                r.passed.into(),
            ],
            source,
        );
    }
    let mut k_eps = None;
    for &k in cfg.schedule.iter().rev() {
        if rows.iter().filter(|r| r.index >= k).all(|r| r.passed) {
            k_eps = Some(k);
        } else {
            break;
        }
    }
    let last = *cfg.schedule.last().expect("nonempty schedule");
    let fails = rows.iter().filter(|r| r.index == last && !r.passed).count();
    rep.check(
        "final_index_passes",
        true,
        fails == 0,
        format!("{fails} failures at index {last}"),
    );
    rep.check(
        "threshold_found",
        true,
        k_eps.is_some(),
        match k_eps {
            Some(k) => format!("all checks pass from index {k}"),
            None => "no sampled index from which all checks pass".into(),
        },
    );
    rep.check(
        "bank_below_constant",
        true,
        est.sample_max_ratio <= est.constant * (1.0 + 1e-9) + 1e-8,
        format!(
            "max ratio {:e}, discrete constant {:e}",
            est.sample_max_ratio, est.constant
        ),
    );
    rep.note("A", a);
    rep.note("eps", eps);
    rep.note("discrete_constant", est.constant);
    rep.note("limit_lambda", est.lambda);
    rep.note("bank_max_ratio", est.sample_max_ratio);
    rep.note("threshold_index", k_eps);
    Ok(rep)
}

fn nonlocal_factor(variant: NonlocalVariant, k: f64) -> f64 {
    match variant {
        NonlocalVariant::Ramp => k / (k + 1.0),
        NonlocalVariant::Dominated => {
            let sign = if (k.round() as i64).rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            };
            1.0 + sign / (2.0 * k)
        }
    }
}

pub fn run_nonlocal_bbm(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let dim = cfg.grid.dim;
    let p = cfg.p;
    let ns = &cfg.nonlocal;
    if cfg.schedule.iter().any(|&k| !(k > 0.0)) {
        return Err(HarnessError::Config(
            "nonlocal indices must be positive".into(),
        ));
    }
    let kappa = Arc::new(
        Expr::compile(&ns.kappa, &["r", "z1", "z2"]).context(format!("kappa '{}'", ns.kappa))?,
    );
    let kap = {
        let e = kappa.clone();
        move |z: &[f64]| {
            let z2 = if z.len() > 1 { z[1] } else { 0.0 };
            e.eval(&[norm(z), z[0], z2])
        }
    };
    let variant = ns.variant;
    let family = {
        let kap = kap.clone();
        KernelFamily::general(
            dim,
            IndexKind::Integer,
            &format!("factor(k) * ({}) |z|^p", ns.kappa),
            move |k, z| nonlocal_factor(variant, k) * kap(z) * norm(z).powf(p),
        )
        .context("nonlocal family")?
    };
    let wf = specs::weight_family(&cfg.weight, dim)?;
    let mut opts = specs::energy_options(&cfg.energy);
    opts.rule = QuadratureRule::Midpoint;
    let auto = specs::extent_hint(&cfg.function)? + cfg.energy.truncation;
    let grid = specs::grid(&cfg.grid, DEFAULT_H, auto)?;
    let u = specs::function(&cfg.function, grid)?;
    let h = u.grid().h();
    let target = gagliardo_seminorm(&u, kap, &wf, p, &opts).context("Gagliardo seminorm")?;
    let exact_factor = matches!(cfg.weight, WeightSpec::One);
    let results: Vec<Result<f64, HarnessError>> = cfg
        .schedule
        .par_iter()
        .map(|&k| {
            let m = family.member(k).context(format!("kernel member {k}"))?;
            Ok(
                nonlocal_energy(&u, &m, &wf, WeightChoice::Index(k), p, &opts)
                    .context(format!("energy at k = {k}"))?
                    .total,
            )
        })
        .collect();
    let mut rep = Report::new(
        "nonlocal-bbm",
        &[
            "index",
            "energy",
            "target",
            "gap",
            "rel_gap",
            "factor",
            "expected_rel_gap",
            "deviation",
        ],
    );
    let mut energies = Vec::new();
    let mut max_dev: f64 = 0.0;
    for (&k, r) in cfg.schedule.iter().zip(results) {
        let e = r?;
        energies.push(e);
        let gap = (e - target).abs();
        let rg = rel(gap, target);
        let f = nonlocal_factor(variant, k);
        let expected = (exact_factor && target != 0.0).then(|| (1.0 - f).abs());
        let dev = expected.map(|x| (rg - x).abs());
        if let Some(d) = dev {
            max_dev = max_dev.max(d);
        }
        let source = Source::new("nonlocal_energy")
            .with("kernel", family.label())
            .with("weight", wf.label())
            .with("index", k)
            .with("p", p)
            .with("h", h)
            .with("truncation", cfg.energy.truncation)
            .with("rule", "midpoint")
            .with("target_operation", "gagliardo_seminorm");
        rep.push(
            vec![
                k.into(),
                e.into(),
                target.into(),
                gap.into(),
                rg.into(),
                f.into(),
                expected.into(),
                dev.into(),
            ],
            source,
        );
    }
    rep.sort_by_column("index");
    let monotone = ns.monotone.unwrap_or(variant == NonlocalVariant::Ramp);
    let nondecreasing = energies.windows(2).all(|w| w[1] >= w[0]);
    rep.check(
        "monotone",
        monotone,
        nondecreasing,
        format!("energies {energies:?}"),
    );
    if exact_factor {
        rep.check(
            "factor_structure",
            true,
            max_dev <= cfg.tolerances.exact_rel,
            format!("max |rel_gap - |1 - factor|| = {max_dev:e}"),
        );
    }
    let last = *energies.last().expect("nonempty schedule");
    let gap = (last - target).abs();
    let t = cfg.tolerances.rel_tol * target.abs() + cfg.tolerances.abs_slack;
    rep.check(
        "final_gap",
        true,
        gap <= t,
        format!("gap {gap:e} vs tol {t:e}"),
    );
    rep.note("target", target);
    rep.note("h", h);
    Ok(rep)
}

fn default_suite_weights() -> Vec<WeightSpec> {
    vec![
        WeightSpec::One,
        WeightSpec::Product {
            f: "2 + cos(x)".into(),
            f_k: Some("(1 + 1/k) * (2 + cos(x))".into()),
            lipschitz: Some(1.0),
            sup: Some(3.0),
        },
    ]
}

struct SuiteRow {
    family: &'static str,
    weight: String,
    function: String,
    index: Cell,
    param: Cell,
    lhs: Cell,
    rhs: Cell,
    slack: Cell,
    passed: Cell,
    source: Source,
}

fn verdict(lhs: f64, rhs: f64, slack: f64) -> Cell {
    Cell::Bool(lhs <= rhs + slack)
}

pub fn run_inequality_suite(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let dim = cfg.grid.dim;
    let p = cfg.p;
    let su = &cfg.suite;
    let exact = cfg.tolerances.exact_rel;
    let family = specs::kernel_family(&cfg.kernel, p, dim)?;
    let indices: Vec<f64> = if cfg.schedule.is_empty() {
        if is_fractional(&family) {
            vec![0.5, 0.9]
        } else {
            vec![1.0, 10.0]
        }
    } else {
        cfg.schedule.clone()
    };
    let weight_specs = if su.weights.is_empty() {
        default_suite_weights()
    } else {
        su.weights.clone()
    };
    let weights: Vec<(String, WeightFamily)> = weight_specs
        .iter()
        .map(|w| specs::weight_family(w, dim).map(|f| (f.label().to_string(), f)))
        .collect::<Result<_, _>>()?;
    let mut bank: Vec<(&str, FunctionSpec)> = vec![
        (
            "hat",
            FunctionSpec::Hat {
                center: None,
                radius: 1.0,
            },
        ),
        ("gaussian", FunctionSpec::Gaussian { sigma: 0.5 }),
        (
            "bump",
            FunctionSpec::Bump {
                center: None,
                radius: 1.0,
            },
        ),
    ];
    if dim == 1 {
        bank.push((
            "indicator-mollified",
            FunctionSpec::IndicatorMollified {
                half_width: 0.5,
                j: 4.0,
            },
        ));
    }
    let mut extent: f64 = 0.0;
    for (_, f) in &bank {
        extent = extent.max(specs::extent_hint(f)?);
    }
    let h_default = if dim == 1 { 1.0 / 64.0 } else { 1.0 / 16.0 };
    let grid = specs::grid(&cfg.grid, h_default, extent + cfg.energy.truncation)?;
    let h = grid.h();
    let opts = specs::energy_options(&cfg.energy);
    let mut funcs = Vec::new();
    for (name, spec) in &bank {
        let cf = specs::closed_form(spec)?.expect("bank entries are closed forms");
        funcs.push((
            *name,
            cf,
            cf.sample(grid).context(format!("sampling {name}"))?,
        ));
    }
    let mut rows: Vec<SuiteRow> = Vec::new();

    // weight perturbation gap and ell_R lower bound
    let mut jobs = Vec::new();
    for (wi, _) in weights.iter().enumerate() {
        for (fi, _) in funcs.iter().enumerate() {
            for &s in &indices {
                for &k in &su.weight_indices {
                    jobs.push((wi, fi, s, k));
                }
            }
        }
    }
    let gap_rows: Vec<Result<Vec<SuiteRow>, HarnessError>> = jobs
        .par_iter()
        .map(|&(wi, fi, s, k)| {
            let (wname, wf) = &weights[wi];
            let (fname, cf, u) = &funcs[fi];
            let member = family.member(s).context(format!("kernel member {s}"))?;
            let base = common_source("weight_perturbation_gap", cfg, &family, wf)
                .with("function", *fname)
                .with("index", s)
                .with("weight_index", k)
                .with("h", h);
            let g = weight_perturbation_gap(u, &member, wf, k, p, &opts)
                .context(format!("weight gap for {fname}"))?;
            let slack = exact * g.bound;
            let mut out = vec![SuiteRow {
                family: "weight-gap",
                weight: wname.clone(),
                function: fname.to_string(),
                index: s.into(),
                param: k.into(),
                lhs: g.gap.into(),
                rhs: g.bound.into(),
                slack: slack.into(),
                passed: verdict(g.gap, g.bound, slack),
                source: base,
            }];
            if let Some(r) = cf.support_radius() {
                let spacing = if dim == 1 {
                    h / 2.0
                } else {
                    (r / 8.0).max(h / 2.0)
                };
                let src = common_source("ell_r_bound_check", cfg, &family, wf)
                    .with("function", *fname)
                    .with("index", s)
                    .with("weight_index", k)
                    .with("R", r)
                    .with("net_spacing", spacing)
                    .with("h", h);
                let row = |lhs: Cell, rhs: Cell, slack: Cell, passed: Cell| SuiteRow {
                    family: "ell-r",
                    weight: wname.clone(),
                    function: fname.to_string(),
                    index: s.into(),
                    param: k.into(),
                    lhs,
                    rhs,
                    slack,
                    passed,
                    source: src.clone(),
                };
                match ell_r_bound_check(u, &member, wf, k, p, r, spacing, &opts) {
                    Ok(c) => {
                        let slack = exact * c.rhs;
                        out.push(row(
                            c.lhs.into(),
                            c.rhs.into(),
                            slack.into(),
                            verdict(c.lhs, c.rhs, slack),
                        ));
                    }
                    Err(CoreError::PreconditionFailed(m)) => {
                        out.push(row(
                            Cell::Empty,
                            Cell::Empty,
                            Cell::Empty,
                            Cell::Text(format!("not applicable: {m}")),
                        ));
                    }
                    Err(e) => return Err(e).context(format!("ell_R check for {fname}")),
                }
            }
            Ok(out)
        })
        .collect();
    for r in gap_rows {
        rows.extend(r?);
    }

    // translation estimates on the C^2 bank
    for (wname, wf) in &weights {
        if wf.modulus().is_none() {
            continue;
        }
        for (fname, cf, _) in funcs.iter().filter(|f| f.1.is_c2()) {
            for &z in &su.shifts {
                let zv: Vec<f64> = if dim == 1 {
                    vec![z]
                } else {
                    vec![z / 2f64.sqrt(); 2]
                };
                let r = ftc_check(cf, &grid, &zv, wf, p)
                    .context(format!("translation estimate for {fname}"))?;
                let slack = su.ftc_slack_h * h;
                for (item, lhs, rhs) in
                    [("ftc-i", r.lhs_i, r.rhs_i), ("ftc-ii", r.lhs_ii, r.rhs_ii)]
                {
                    rows.push(SuiteRow {
                        family: item,
                        weight: wname.clone(),
                        function: fname.to_string(),
                        index: Cell::Empty,
                        param: z.into(),
                        lhs: lhs.into(),
                        rhs: rhs.into(),
                        slack: slack.into(),
                        passed: verdict(lhs, rhs, slack),
                        source: Source::new("ftc_check")
                            .with("function", *fname)
                            .with("weight", wname)
                            .with("z", &zv)
                            .with("p", p)
                            .with("h", h),
                    });
                }
            }
        }
    }

    // mollified weight and modulus of continuity
    for (wname, wf) in &weights {
        if wf.modulus().is_none() {
            continue;
        }
        let spacing = if dim == 1 { 0.25 } else { 1.0 };
        let net = SampleNet::box_pairs(dim, -2.0, 2.0, spacing).context("weight net")?;
        let sup = wf.sup_norm_limit().unwrap_or(1.0);
        for &j in &su.mollifier_indices {
            let g =
                mollified_weight_gap(wf, j, &net).context(format!("mollified weight j = {j}"))?;
            let slack = exact * sup;
            rows.push(SuiteRow {
                family: "mollified-weight",
                weight: wname.clone(),
                function: String::new(),
                index: Cell::Empty,
                param: (j as usize).into(),
                lhs: g.gap.into(),
                rhs: g.bound.into(),
                slack: slack.into(),
                passed: verdict(g.gap, g.bound, slack),
                source: Source::new("mollified_weight_gap")
                    .with("weight", wname)
                    .with("j", j)
                    .with("net", "box [-2, 2]")
                    .with("net_spacing", spacing),
            });
        }
        let m =
            modulus_check(wf, -4.0, 4.0, su.modulus_samples, cfg.seed).context("modulus check")?;
        let witness = m.violations.first().map(|w| {
            format!(
                "|w({:?}, {:?}) - w({:?}, {:?})| = {:e} > {:e}",
                &w.x[..dim],
                &w.y[..dim],
                &w.x2[..dim],
                &w.y2[..dim],
                w.lhs,
                w.rhs
            )
        });
        rows.push(SuiteRow {
            family: "modulus",
            weight: wname.clone(),
            function: witness.unwrap_or_default(),
            index: Cell::Empty,
            param: m.checked.into(),
            lhs: m.violations.len().into(),
            rhs: 0usize.into(),
            slack: 0.0.into(),
            passed: Cell::Bool(m.violations.is_empty()),
            source: Source::new("modulus_check")
                .with("weight", wname)
                .with("box", [-4.0, 4.0])
                .with("samples", su.modulus_samples)
                .with("seed", cfg.seed),
        });
    }

    // compactness estimate for translated hats, fractional kernels only
    if is_fractional(&family) && dim == 1 {
        rows.extend(compactness_rows(cfg, &family, &weights, &indices, h)?);
    }

    let mut rep = Report::new(
        "inequality-suite",
        &[
            "family", "weight", "function", "index", "param", "lhs", "rhs", "slack", "passed",
        ],
    );
    let families = [
        "weight-gap",
        "ell-r",
        "ftc-i",
        "ftc-ii",
        "mollified-weight",
        "modulus",
        "compactness",
        "lower-bound",
    ];
    for fam in families {
        let sel: Vec<&SuiteRow> = rows.iter().filter(|r| r.family == fam).collect();
        if sel.is_empty() {
            continue;
        }
        let fails = sel.iter().filter(|r| r.passed == Cell::Bool(false)).count();
        let first = sel
            .iter()
            .find(|r| r.passed == Cell::Bool(false))
            .map(|r| {
                format!(
                    "; first failure: weight {}, function '{}'",
                    r.weight, r.function
                )
            })
            .unwrap_or_default();
        rep.check(
            fam,
            true,
            fails == 0,
            format!("{fails} of {} rows fail{first}", sel.len()),
        );
    }
    let z0 = rows
        .iter()
        .filter(|r| r.family.starts_with("ftc") && r.param == Cell::Num(0.0))
        .all(|r| r.lhs == Cell::Num(0.0) && r.rhs == Cell::Num(0.0));
    rep.check(
        "zero_shift",
        true,
        z0,
        "translation rows at z = 0 read 0 <= 0",
    );
    for r in rows {
        rep.push(
            vec![
                r.family.into(),
                r.weight.into(),
                r.function.into(),
                r.index,
                r.param,
                r.lhs,
                r.rhs,
                r.slack,
                r.passed,
            ],
            r.source,
        );
    }
    rep.note("h", h);
    rep.note("box_lo", grid.lo());
    rep.note("box_hi", grid.hi());
    Ok(rep)
}

/// `||eta_delta * v - v||^p <= eps J_k(v)` along hats translated by `1/k`,
/// with `eps = max_s delta^{sp} / ((1 - s) w_min)` making the lower bound
/// `J_k >= 1 / (eps delta)` hold on `|z| < delta`.
fn compactness_rows(
    cfg: &ExperimentConfig,
    family: &KernelFamily,
    weights: &[(String, WeightFamily)],
    indices: &[f64],
    h: f64,
) -> Result<Vec<SuiteRow>, HarnessError> {
    let p = cfg.p;
    let exact = cfg.tolerances.exact_rel;
    let reach = cfg.energy.truncation.min(6.0);
    let grid = bbmlab_core::Grid::centered(1, 3.0 + reach, h).context("compactness grid")?;
    let a = DomainMask::open_box(grid, &[-3.0], &[3.0]).context("domain A")?;
    let e = DomainMask::open_box(grid, &[-2.0], &[2.0]).context("set E")?;
    let mut out = Vec::new();
    for (wname, wf) in weights {
        let xs: Vec<f64> = (0..=24).map(|i| -3.0 + 0.25 * i as f64).collect();
        let mut w_min = f64::INFINITY;
        for &s in indices {
            let k = family.effective_index(s);
            for &x in &xs {
                for &y in &xs {
                    w_min = w_min.min(wf.eval_k(k, &[x], &[y]));
                }
            }
        }
        if !(w_min > 0.0) {
            continue;
        }
        let fam = family.clone();
        let wk = wf.clone();
        let wl = wf.clone();
        let spec = JSpec::new(
            a.clone(),
            reach,
            move |s: f64, x: &[f64], y: &[f64], z: &[f64]| {
                let r = norm(z);
                fam.eval(s, z) / r.powf(p) * wk.eval_k(fam.effective_index(s), x, y)
            },
            move |x: &[f64], y: &[f64], _z: &[f64]| 0.0 * wl.eval_limit(x, y),
        );
        for &delta in &cfg.suite.defect_radii {
            let eps = indices
                .iter()
                .map(|&s| delta.powf(s * p) / ((1.0 - s) * w_min))
                .fold(0.0, f64::max);
            let pairs: Vec<([f64; 2], [f64; 2])> = [-1.0, 0.0, 1.5]
                .iter()
                .flat_map(|&x| [0.1, 0.5, 0.99].map(|t| ([x, 0.0], [x + t * delta, 0.0])))
                .collect();
            let cond = j_condition_check(&spec, indices, &[(eps, delta)], &pairs, 0.0)
                .context("lower bound on J")?;
            if let Some(c) = cond.iter().find(|c| c.condition == "lower_bound") {
                out.push(SuiteRow {
                    family: "lower-bound",
                    weight: wname.clone(),
                    function: c.witness.clone().unwrap_or_default(),
                    index: Cell::Empty,
                    param: delta.into(),
                    lhs: eps.into(),
                    rhs: Cell::Empty,
                    slack: Cell::Empty,
                    passed: Cell::Bool(c.passed),
                    source: Source::new("j_condition_check")
                        .with("eps", eps)
                        .with("delta", delta),
                });
            }
            for &s in indices {
                let k = family.effective_index(s);
                let u = ClosedForm::Hat {
                    center: [1.0 / k, 0.0],
                    radius: 1.0,
                }
                .sample(grid)
                .context("translated hat")?;
                let d = mollification_defect(&u, delta, eps, &e, &spec, s, p)
                    .context(format!("compactness at s = {s}, delta = {delta}"))?;
                let slack = exact * d.bound;
                out.push(SuiteRow {
                    family: "compactness",
                    weight: wname.clone(),
                    function: format!("hat(1/{k})"),
                    index: s.into(),
                    param: delta.into(),
                    lhs: d.defect.into(),
                    rhs: d.bound.into(),
                    slack: slack.into(),
                    passed: verdict(d.defect, d.bound, slack),
                    source: Source::new("mollification_defect")
                        .with("weight", wname)
                        .with("index", s)
                        .with("delta", delta)
                        .with("eps", eps)
                        .with("A", [-3.0, 3.0])
                        .with("E", [-2.0, 2.0])
                        .with("h", h),
                });
            }
        }
    }
    Ok(out)
}

pub fn run_mu(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let dim = cfg.grid.dim;
    let family = specs::kernel_family(&cfg.kernel, cfg.p, dim)?;
    let ms = &cfg.mu;
    let q = KernelQuadrature::default();
    let kernel_p = match &cfg.kernel {
        crate::config::KernelSpec::Fractional { p, .. } => Some(p.unwrap_or(cfg.p)),
        _ => None,
    };
    let mut rep = Report::new(
        "mu",
        &[
            "index",
            "delta",
            "direction",
            "angle",
            "mass",
            "analytic",
            "reference",
            "abs_gap",
        ],
    );
    if dim == 1 {
        if !(ms.delta > 0.0 && ms.delta < 1.0) {
            return Err(HarnessError::Config("mu.delta must lie in (0, 1)".into()));
        }
        let reference = match family.exact_limit() {
            Some(m) => Some(m.masses()[0]),
            None if family.is_radial() => {
                let tail = &cfg.schedule[cfg.schedule.len().saturating_sub(2)..];
                let m = limit_measure_radial(
                    &family,
                    &geometric_schedule(ms.l0, ms.l1, tail),
                    ms.schedule_tol,
                    &q,
                )
                .context("radial limit measure")?;
                Some(m.masses()[0])
            }
            None => None,
        };
        let mut last_gap = None;
        for &k in &cfg.schedule {
            let ws = weak_star_check(&family, &[k], ms.delta, &q)
                .context(format!("near mass at {k}"))?;
            let mass = ws.near_mass[0];
            let analytic = kernel_p.map(|kp| ms.delta.powf((1.0 - k) * kp) / kp);
            let gap = reference.map(|r| (mass - r).abs());
            last_gap = gap;
            rep.push(
                vec![
                    k.into(),
                    ms.delta.into(),
                    "+-".into(),
                    Cell::Empty,
                    mass.into(),
                    analytic.into(),
                    reference.into(),
                    gap.into(),
                ],
                Source::new("weak_star_check")
                    .with("kernel", family.label())
                    .with("index", k)
                    .with("delta", ms.delta),
            );
        }
        match last_gap {
            Some(g) => rep.check(
                "near_mass_matches_limit",
                true,
                g <= ms.mass_tol,
                format!("|mass - limit| = {g:e} vs {}", ms.mass_tol),
            ),
            None => rep.check(
                "near_mass_matches_limit",
                false,
                false,
                "no limit measure available",
            ),
        }
        rep.note("limit_mass_per_direction", reference);
    } else {
        let tail = &cfg.schedule[cfg.schedule.len().saturating_sub(2)..];
        let sched = geometric_schedule(ms.l0, ms.l1, tail);
        let m = limit_measure_numeric(&family, &sched, ms.sectors, ms.schedule_tol, &q)
            .context("sector limit measure")?;
        let masses = m.masses();
        let mean = masses.iter().sum::<f64>() / masses.len() as f64;
        let reference = family
            .exact_limit()
            .map(|l| l.total_mass() / masses.len() as f64);
        let k_last = *tail.last().expect("nonempty schedule");
        let d_last = 2f64.powi(-(ms.l1 as i32));
        for (i, &mass) in masses.iter().enumerate() {
            let r = reference.unwrap_or(mean);
            rep.push(
                vec![
                    k_last.into(),
                    d_last.into(),
                    i.into(),
                    m.angles()[i].into(),
                    mass.into(),
                    Cell::Empty,
                    reference.into(),
                    (mass - r).abs().into(),
                ],
                Source::new("limit_measure_numeric")
                    .with("kernel", family.label())
                    .with("indices", tail)
                    .with("l0", ms.l0)
                    .with("l1", ms.l1)
                    .with("sectors", ms.sectors)
                    .with("tol", ms.schedule_tol),
            );
        }
        let spread = masses.iter().fold(0.0f64, |s, &x| s.max((x - mean).abs()))
            / mean.abs().max(f64::MIN_POSITIVE);
        rep.check(
            "sector_masses_equal",
            family.is_radial(),
            spread <= ms.sector_tol,
            format!("max relative deviation {spread:e} vs {}", ms.sector_tol),
        );
        rep.note("total_mass", m.total_mass());
        rep.note("sector_mean", mean);
    }
    Ok(rep)
}

/// Single energy evaluation for the `energy` subcommand.
pub fn single_energy(cfg: &ExperimentConfig) -> Result<serde_json::Value, HarnessError> {
    let dim = cfg.grid.dim;
    let family = specs::kernel_family(&cfg.kernel, cfg.p, dim)?;
    let wf = specs::weight_family(&cfg.weight, dim)?;
    let k = *cfg
        .schedule
        .last()
        .ok_or_else(|| HarnessError::Config("give the kernel index with --index".into()))?;
    let auto = specs::extent_hint(&cfg.function)? + cfg.energy.truncation;
    let grid = specs::grid(&cfg.grid, DEFAULT_H, auto)?;
    let u = specs::function(&cfg.function, grid)?;
    let member = family.member(k).context("kernel member")?;
    let eff = family.effective_index(k);
    let opts = specs::energy_options(&cfg.energy);
    let e = nonlocal_energy(&u, &member, &wf, WeightChoice::Index(eff), cfg.p, &opts)
        .context("energy")?;
    Ok(serde_json::json!({
        "total": e.total,
        "near": e.near_field,
        "mid": e.mid_field,
        "far": e.far_field,
        "diagonal": e.diagonal,
        "far_tail_bound": e.far_tail_bound,
        "diagonal_omitted": e.diagonal_omitted,
        "params": {
            "kernel": family.label(),
            "index": k,
            "weight": wf.label(),
            "weight_index": eff,
            "p": cfg.p,
            "h": u.grid().h(),
            "box_lo": u.grid().lo(),
            "box_hi": u.grid().hi(),
            "truncation": e.truncation_radius,
            "delta": e.delta,
            "rule": specs::rule_name(cfg.energy.rule),
        }
    }))
}

/// `D(u)` for the `limit-energy` subcommand.
pub fn single_limit_energy(cfg: &ExperimentConfig) -> Result<serde_json::Value, HarnessError> {
    let dim = cfg.grid.dim;
    let family = specs::kernel_family(&cfg.kernel, cfg.p, dim)?;
    let wf = specs::weight_family(&cfg.weight, dim)?;
    let sched = if cfg.schedule.is_empty() {
        vec![0.99, 0.999]
    } else {
        cfg.schedule.clone()
    };
    let (mu, source) = limit_measure(&family, &sched)?;
    let grid = specs::grid(
        &cfg.grid,
        DEFAULT_H,
        specs::extent_hint(&cfg.function)? + 1.0,
    )?;
    let u = specs::function(&cfg.function, grid)?;
    let w0 = diagonal_trace(&wf, *u.grid()).context("diagonal weight")?;
    let v = limit_energy(&u, &mu, &w0, cfg.p).context("limit energy")?;
    Ok(serde_json::json!({
        "value": v,
        "limit_measure": source,
        "masses": mu.masses(),
        "params": {"kernel": family.label(), "weight": wf.label(), "p": cfg.p, "h": u.grid().h()}
    }))
}

/// One eigenpair for the `eigen` subcommand.
pub fn single_eigen(
    cfg: &ExperimentConfig,
) -> Result<(serde_json::Value, GridFunction), HarnessError> {
    let dim = cfg.grid.dim;
    let family = specs::kernel_family(&cfg.kernel, cfg.p, dim)?;
    let wf = specs::weight_family(&cfg.weight, dim)?;
    let om = specs::omega(&cfg.omega, cfg.eigen.n, dim)?;
    let opts = specs::eigen_options(&cfg.eigen, &cfg.energy);
    let (e, index) = if cfg.eigen.local {
        let sched = if cfg.schedule.is_empty() {
            vec![0.99, 0.999]
        } else {
            cfg.schedule.clone()
        };
        let (mu, _) = limit_measure(&family, &sched)?;
        let w0 = diagonal_of(&wf, WeightChoice::Limit, *om.grid()).context("diagonal weight")?;
        (
            first_eigen_local(&mu, &w0, cfg.p, &om, &opts).context("local eigenpair")?,
            None,
        )
    } else {
        let k = *cfg
            .schedule
            .last()
            .ok_or_else(|| HarnessError::Config("give the kernel index with --index".into()))?;
        let m = family.member(k).context("kernel member")?;
        let choice = WeightChoice::Index(family.effective_index(k));
        (
            first_eigen_nonlocal(&m, &wf, choice, cfg.p, &om, &opts).context("eigenpair")?,
            Some(k),
        )
    };
    let json = serde_json::json!({
        "lambda": e.lambda,
        "residual": e.residual,
        "iterations": e.iterations,
        "converged": e.converged,
        "certified": e.certified,
        "degenerate": e.degenerate,
        "params": {
            "kernel": family.label(),
            "index": index,
            "local": cfg.eigen.local,
            "weight": wf.label(),
            "p": cfg.p,
            "n": cfg.eigen.n,
            "solver": cfg.eigen.solver,
        }
    });
    Ok((json, e.eigenfunction))
}
