//! Scenario construction and runners shared by the subcommands.

use std::time::Instant;

use msgfem::fem::mesh::Mesh;
use msgfem::geometry::Rect;
use msgfem::gfem::{
    direct_solve, global_error, overkill_reference, run_gfem, verify_local_global_bound, BasisFamily, BasisSpec,
    BoundReport, CoverSpec, GfemOptions, GfemRun, Problem,
};
use msgfem::homog::{
    adapted_radius, analytic_ellipse_widths, cell_problem, checkerboard_cell, epsilon_sweep, flatten_levels,
    laminate_cell, voigt_reuss_bounds, CellProblemResult, SweepConfig, SweepGeometry, SweepTable,
};
use msgfem::localspace::{optimal_basis, snapshots_poly_neumann, PatchPair};
use msgfem::microstructure::{
    constant_field, inclusion_field, periodic_field, random_disks, CoefficientField, InclusionFill, SymMat2,
};
use rand::{Rng, SeedableRng};

use crate::config::{BoundaryKind, CellKind, FieldKind, ScenarioConfig, SweepShape};
use crate::error::{CliError, Result};

/// Relative energy errors of a reference table, printed for comparison only.
pub const REFERENCE_TABLE: [(usize, f64); 5] = [(1, 0.0245), (2, 0.0155), (3, 0.0089), (4, 0.0056), (5, 0.0035)];
/// Reference exponential rate per unit local dimension.
pub const REFERENCE_RATE: f64 = -0.48;

pub fn domain(cfg: &ScenarioConfig) -> Result<Rect> {
    let d = &cfg.domain;
    Ok(Rect::new(d.x0, d.x1, d.y0, d.y1)?)
}

pub fn matrix(cfg: &ScenarioConfig) -> SymMat2 {
    let [a11, a12, a22] = cfg.field.matrix;
    SymMat2::new(a11, a12, a22)
}

fn cells(len: f64, res: usize) -> usize {
    ((len * res as f64).round() as usize).max(1)
}

/// Coefficient field described by `[field]`; random layouts use `seed`.
pub fn build_field(cfg: &ScenarioConfig) -> Result<CoefficientField> {
    let f = &cfg.field;
    let d = domain(cfg)?;
    let (rx, ry) = (cells(d.width(), f.resolution), cells(d.height(), f.resolution));
    let seed = cfg.scenario.seed;
    Ok(match f.kind {
        FieldKind::Constant => constant_field(matrix(cfg), d, rx, ry)?,
        FieldKind::TwoPhase => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cells = (0..rx * ry)
                .map(|_| SymMat2::scalar(if rng.gen_bool(0.5) { 1.0 } else { f.contrast }))
                .collect();
            CoefficientField::from_cells(d, rx, ry, cells, None)?
        }
        FieldKind::Fibers => {
            let disks = random_disks(d, f.count, (f.radius[0], f.radius[1]), f.clearance, seed);
            if disks.len() < f.count {
                return Err(CliError::Config {
                    location: "field.count".into(),
                    message: format!("only {} of {} fibers fit with the given radius and clearance", disks.len(), f.count),
                });
            }
            let fill = match f.inclusion {
                Some(c) => InclusionFill::Material(SymMat2::scalar(c)),
                None => InclusionFill::Hole,
            };
            inclusion_field(d, rx, ry, &disks, matrix(cfg), fill)?
        }
        FieldKind::Laminate => periodic_field(&laminate_cell(f.phases[0], f.phases[1])?, f.periods, d)?,
        FieldKind::Checkerboard => periodic_field(&checkerboard_cell(f.contrast)?, f.periods, d)?,
    })
}

pub fn build_problem(cfg: &ScenarioConfig, field: CoefficientField) -> Result<Problem> {
    let [a, b] = cfg.data.gradient;
    let problem = match cfg.data.boundary {
        BoundaryKind::Neumann => {
            if cfg.data.source != 0.0 {
                return Err(CliError::Config {
                    location: "data.source".into(),
                    message: "a constant source is incompatible with gradient Neumann data".into(),
                });
            }
            Problem::neumann(field, move |_, n| a * n[0] + b * n[1])
        }
        BoundaryKind::Dirichlet => Problem::dirichlet(field, move |p| a * p[0] + b * p[1]),
    };
    let f = cfg.data.source;
    Ok(if f != 0.0 { problem.with_source(move |_| f) } else { problem })
}

pub fn fine_mesh(cfg: &ScenarioConfig, field: &CoefficientField) -> Result<Mesh> {
    Ok(Mesh::build(field.domain(), cfg.mesh.fine, cfg.mesh.fine, field)?)
}

/// Local basis of degree `k` (dimension `2k + 1` with the constant).
pub fn basis_spec(cfg: &ScenarioConfig, family: BasisFamily, k: usize) -> BasisSpec {
    let b = &cfg.basis;
    let n = if family == BasisFamily::Constant { 0 } else { 2 * k };
    let snapshots = if family == BasisFamily::Optimal { b.snapshots } else { n };
    BasisSpec { family, n, snapshots, rank_threshold: b.rank_threshold, particular: b.particular }
}

pub fn gfem_options(cfg: &ScenarioConfig, basis: BasisSpec) -> GfemOptions {
    let mut o = GfemOptions::new(
        CoverSpec { m: cfg.cover.m, star_cells: cfg.cover.star_cells },
        basis,
        cfg.scenario.workers,
    );
    o.galerkin_tol = cfg.solver.galerkin_tol;
    o
}

/// Reference solutions on the fine mesh.
#[derive(Debug, Clone)]
pub struct References {
    /// Overkill solution injected to the fine nodes.
    pub overkill: Vec<f64>,
    /// Direct solve on the fine mesh.
    pub fine: Vec<f64>,
    /// `(energy, L²)` distance between the two, relative to the overkill norm.
    pub floor: (f64, f64),
    /// Relative energy distance between overkill solutions at two refinements.
    pub guard: Option<f64>,
    pub seconds: f64,
}

pub fn references(cfg: &ScenarioConfig, problem: &Problem, fine: &Mesh) -> Result<References> {
    let t = Instant::now();
    let m = &cfg.mesh;
    let overkill = overkill_reference(problem, fine, m.reference_refine, m.reference_cap)?;
    let fine_u = direct_solve(problem, fine)?;
    let floor = global_error(fine, &overkill, &fine_u)?;
    let guard = if m.guard_refine > 0 {
        let g = overkill_reference(problem, fine, m.guard_refine, m.reference_cap)?;
        Some(global_error(fine, &g, &overkill)?.0)
    } else {
        None
    };
    Ok(References { overkill, fine: fine_u, floor, guard, seconds: t.elapsed().as_secs_f64() })
}

/// One GFEM run with its errors.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub family: BasisFamily,
    pub k: usize,
    /// Local dimension including the constant.
    pub n: usize,
    /// Global dimension after pruning.
    pub dim: usize,
    pub energy_rel_overkill: f64,
    pub l2_rel_overkill: f64,
    pub energy_rel_fine: f64,
    pub l2_rel_fine: f64,
    pub dropped: usize,
    /// `None` on success, otherwise the failure message.
    pub failure: Option<String>,
    pub seconds: f64,
}

/// Least-squares fit of `ln y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn log_fit(xs: &[f64], ys: &[f64]) -> Option<LogFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| y.is_finite() && **y > 0.0)
        .map(|(x, y)| (*x, y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LogFit { slope, intercept: my - slope * mx, r2 })
}

#[derive(Debug, Clone)]
pub struct StudyFit {
    pub family: BasisFamily,
    pub overkill: Option<LogFit>,
    pub fine: Option<LogFit>,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub seed: u64,
    /// Sorted by `k`, polynomial before optimal.
    pub rows: Vec<StudyRow>,
    pub fits: Vec<StudyFit>,
    pub floor: (f64, f64),
    pub guard: Option<f64>,
    pub holes: usize,
    pub reference_seconds: f64,
}

impl StudyReport {
    pub fn rows_of(&self, family: BasisFamily) -> Vec<&StudyRow> {
        self.rows.iter().filter(|r| r.family == family).collect()
    }

    pub fn fit_of(&self, family: BasisFamily) -> Option<&StudyFit> {
        self.fits.iter().find(|f| f.family == family)
    }

    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.failure.is_some())
    }
}

pub fn study_families(cfg: &ScenarioConfig) -> Vec<BasisFamily> {
    let mut v = vec![cfg.basis.family];
    if cfg.basis.compare_optimal && cfg.basis.family != BasisFamily::Optimal {
        v.push(BasisFamily::Optimal);
    }
    v
}

fn run_row(
    cfg: &ScenarioConfig,
    problem: &Problem,
    fine: &Mesh,
    refs: &References,
    family: BasisFamily,
    k: usize,
) -> StudyRow {
    let t = Instant::now();
    let spec = basis_spec(cfg, family, k);
    let n = spec.n + 1;
    let out = run_gfem(problem, fine, &gfem_options(cfg, spec)).and_then(|run| {
        let o = global_error(fine, &refs.overkill, &run.solution.field)?;
        let f = global_error(fine, &refs.fine, &run.solution.field)?;
        Ok((run.space.dim, run.solution.dropped, o, f))
    });
    let seconds = t.elapsed().as_secs_f64();
    match out {
        Ok((dim, dropped, o, f)) => StudyRow {
            family,
            k,
            n,
            dim,
            energy_rel_overkill: o.0,
            l2_rel_overkill: o.1,
            energy_rel_fine: f.0,
            l2_rel_fine: f.1,
            dropped,
            failure: None,
            seconds,
        },
        Err(e) => StudyRow {
            family,
            k,
            n,
            dim: 0,
            energy_rel_overkill: f64::NAN,
            l2_rel_overkill: f64::NAN,
            energy_rel_fine: f64::NAN,
            l2_rel_fine: f64::NAN,
            dropped: 0,
            failure: Some(e.to_string()),
            seconds,
        },
    }
}

/// Relative errors for `k = k_min..=k_max` and each studied family, with
/// log-linear fits against the local dimension `n = 2k + 1`.
pub fn convergence_study(cfg: &ScenarioConfig) -> Result<StudyReport> {
    let field = build_field(cfg)?;
    let holes = field.hole_count();
    let fine = fine_mesh(cfg, &field)?;
    let problem = build_problem(cfg, field)?;
    let refs = references(cfg, &problem, &fine)?;
    let families = study_families(cfg);
    let mut rows = Vec::new();
    for k in cfg.basis.k_min..=cfg.basis.k_max {
        for &family in &families {
            rows.push(run_row(cfg, &problem, &fine, &refs, family, k));
        }
    }
    let fits = families
        .iter()
        .map(|&family| {
            let rs: Vec<&StudyRow> = rows.iter().filter(|r| r.family == family).collect();
            let xs: Vec<f64> = rs.iter().map(|r| r.n as f64).collect();
            let eo: Vec<f64> = rs.iter().map(|r| r.energy_rel_overkill).collect();
            let ef: Vec<f64> = rs.iter().map(|r| r.energy_rel_fine).collect();
            StudyFit { family, overkill: log_fit(&xs, &eo), fine: log_fit(&xs, &ef) }
        })
        .collect();
    Ok(StudyReport {
        seed: cfg.scenario.seed,
        rows,
        fits,
        floor: refs.floor,
        guard: refs.guard,
        holes,
        reference_seconds: refs.seconds,
    })
}

/// Single GFEM solve at `k = k_max` with its errors and the full run.
pub struct SolveOutcome {
    pub row: StudyRow,
    pub run: Option<GfemRun>,
    pub mesh: Mesh,
    pub refs: References,
}

pub fn solve(cfg: &ScenarioConfig) -> Result<SolveOutcome> {
    let field = build_field(cfg)?;
    let fine = fine_mesh(cfg, &field)?;
    let problem = build_problem(cfg, field)?;
    let refs = references(cfg, &problem, &fine)?;
    let k = cfg.basis.k_max;
    let spec = basis_spec(cfg, cfg.basis.family, k);
    let t = Instant::now();
    let run = run_gfem(&problem, &fine, &gfem_options(cfg, spec))?;
    let o = global_error(&fine, &refs.overkill, &run.solution.field)?;
    let f = global_error(&fine, &refs.fine, &run.solution.field)?;
    let row = StudyRow {
        family: cfg.basis.family,
        k,
        n: spec.n + 1,
        dim: run.space.dim,
        energy_rel_overkill: o.0,
        l2_rel_overkill: o.1,
        energy_rel_fine: f.0,
        l2_rel_fine: f.1,
        dropped: run.solution.dropped,
        failure: None,
        seconds: t.elapsed().as_secs_f64(),
    };
    Ok(SolveOutcome { row, run: Some(run), mesh: fine, refs })
}

/// Local-to-global estimate for the fine-mesh solution and the configured
/// basis at `k = k_max`.
pub fn bound_check(cfg: &ScenarioConfig) -> Result<BoundReport> {
    let field = build_field(cfg)?;
    let fine = fine_mesh(cfg, &field)?;
    let problem = build_problem(cfg, field)?;
    let u0 = direct_solve(&problem, &fine)?;
    let spec = basis_spec(cfg, cfg.basis.family, cfg.basis.k_max);
    let run = run_gfem(&problem, &fine, &gfem_options(cfg, spec))?;
    Ok(verify_local_global_bound(&fine, &run.cover, &run.space, &u0)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NwidthRow {
    pub j: usize,
    pub lambda: f64,
    pub analytic: f64,
}

impl NwidthRow {
    pub fn rel_dev(&self) -> f64 {
        (self.lambda - self.analytic).abs() / self.analytic
    }
}

/// Restriction eigenvalues between concentric `A`-adapted ellipses (disks
/// for scalar `A`) against the closed form.
pub fn nwidth(cfg: &ScenarioConfig) -> Result<Vec<NwidthRow>> {
    let c = &cfg.nwidth;
    let a = matrix(cfg);
    let rect = Rect::centered([0.0, 0.0], c.r_star);
    let field = constant_field(a, rect, 1, 1)?;
    let rho = adapted_radius(a, [0.0, 0.0]);
    let mesh = Mesh::build(rect, c.mesh, c.mesh, &field)?.with_domain_mask(|p| rho(p) < c.r_star);
    let inner = mesh.element_mask_by(|p| rho(p) < c.r);
    let patch = PatchPair::masked(mesh, inner, [0.0, 0.0])?;
    let snaps = snapshots_poly_neumann(&patch, c.snapshots)?;
    let basis = optimal_basis(&patch, &snaps, c.count, false, cfg.basis.rank_threshold)?;
    let exact = flatten_levels(&analytic_ellipse_widths(c.r, c.r_star, c.count.div_ceil(2))?);
    Ok((0..c.count)
        .map(|j| NwidthRow { j: j + 1, lambda: basis.eigenvalues[j], analytic: exact[j] })
        .collect())
}

#[derive(Debug, Clone)]
pub struct HomogReport {
    pub cell: CellProblemResult,
    pub reuss: f64,
    pub voigt: f64,
    pub sweep: SweepTable,
}

pub fn homog_cell(cfg: &ScenarioConfig) -> Result<CoefficientField> {
    let h = &cfg.homog;
    Ok(match h.cell {
        CellKind::Laminate => laminate_cell(h.phases[0], h.phases[1])?,
        CellKind::Checkerboard => checkerboard_cell(h.contrast)?,
    })
}

pub fn homog(cfg: &ScenarioConfig) -> Result<HomogReport> {
    let h = &cfg.homog;
    let cell = homog_cell(cfg)?;
    let result = cell_problem(&cell, h.cell_mesh)?;
    let (reuss, voigt) = voigt_reuss_bounds(&cell)?;
    let geometry = match h.geometry {
        SweepShape::Ellipses => SweepGeometry::AdaptedEllipses { r: h.r, r_star: h.r_star },
        SweepShape::Squares => {
            let lo = 0.5 - h.r / 2.0;
            SweepGeometry::Squares { omega: Rect::new(lo, lo + h.r, lo, lo + h.r)?, omega_star: Rect::unit() }
        }
    };
    let sweep_cfg = SweepConfig {
        periods: h.periods.clone(),
        geometry,
        mesh: h.mesh,
        snapshots: h.snapshots,
        count: h.count,
        cell_mesh: h.cell_mesh,
        with_q: h.with_q,
    };
    let sweep = epsilon_sweep(&cell, &sweep_cfg, cfg.scenario.workers)?;
    Ok(HomogReport { cell: result, reuss, voigt, sweep })
}
