//! Invariant suites run by the `validate` subcommand.

use msgfem::fem::assembly::{assemble_stiffness, boundary_load, boundary_weights};
use msgfem::fem::element;
use msgfem::fem::mesh::Mesh;
use msgfem::fem::norm::caccioppoli_check;
use msgfem::fem::solve::{harmonic_extension, Trace};
use msgfem::geometry::Rect;
use msgfem::gfem::{pu_report, Cover, CoverSpec};
use msgfem::homog::{cell_problem, laminate_cell};
use msgfem::localspace::{restriction_pencil, snapshots_poly_neumann, PatchPair};
use msgfem::microstructure::{CoefficientField, SymMat2};
use msgfem::spectral::{solve_pencil, DEFAULT_RANK_THRESHOLD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::error::Result;

pub const INVARIANT_TOL: f64 = 1e-12;
pub const ELEMENT_TOL: f64 = 1e-14;
pub const PENCIL_TOL: f64 = 1e-9;
pub const CACCIOPPOLI_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    /// Measured quantity; compared as `value <= tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, suite: &'static str, name: impl Into<String>, value: f64, tolerance: f64) {
        let passed = value.is_finite() && value <= tolerance;
        self.checks.push(Check { suite, name: name.into(), value, tolerance, passed });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn suite_passed(&self, suite: &str) -> bool {
        self.checks.iter().filter(|c| c.suite == suite).all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn two_phase(rng: &mut ChaCha8Rng, cells: usize, contrast: f64) -> Result<CoefficientField> {
    let vals = (0..cells * cells)
        .map(|_| SymMat2::scalar(if rng.gen_bool(0.5) { 1.0 } else { contrast }))
        .collect();
    Ok(CoefficientField::from_cells(Rect::unit(), cells, cells, vals, None)?)
}

/// Partition-of-unity invariants of the configured cover on the unit square.
pub fn pu_suite(cfg: &ScenarioConfig, report: &mut ValidationReport) -> Result<()> {
    let field = msgfem::microstructure::constant_field(SymMat2::scalar(1.0), Rect::unit(), 1, 1)?;
    let fine = Mesh::build(Rect::unit(), cfg.mesh.fine, cfg.mesh.fine, &field)?;
    let cover = Cover::build(&fine, CoverSpec { m: cfg.cover.m, star_cells: cfg.cover.star_cells })?;
    let pu = pu_report(&cover, &fine);
    let (hx, hy) = cover.coarse;
    // |∇φ| ≤ √(hx⁻² + hy⁻²) over ω of diameter at most 2√(hx² + hy²)
    let c2 = if cover.m == 1 { 0.0 } else { 2.0 * (hx * hx + hy * hy).sqrt() * (hx.powi(-2) + hy.powi(-2)).sqrt() };
    report.push("pu", "sum_defect", pu.sum_defect, INVARIANT_TOL);
    report.push("pu", "negativity", (-pu.min_value).max(0.0), INVARIANT_TOL);
    report.push("pu", "c1_excess", (pu.c1 - 1.0).max(0.0), INVARIANT_TOL);
    report.push("pu", "c2_excess", (pu.c2 - c2).max(0.0), INVARIANT_TOL * c2.max(1.0));
    report.push("pu", "support_violation", if pu.support_ok { 0.0 } else { 1.0 }, 0.0);
    report.push("pu", "overlap", pu.kappa as f64, 4.0);
    Ok(())
}

/// Stiffness symmetry and constant nullspace on random two-phase fields with
/// holes, and element matrices against hand-integrated constants.
pub fn kernel_suite(seed: u64, report: &mut ValidationReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..4 {
        let base = two_phase(&mut rng, 8, 10.0)?;
        let holes = msgfem::microstructure::inclusion_field(
            Rect::unit(),
            32,
            32,
            &[msgfem::microstructure::Disk::new(0.3 + 0.1 * t as f64, 0.5, 0.15)],
            SymMat2::scalar(1.0),
            msgfem::microstructure::InclusionFill::Hole,
        )?;
        let field = base.map_cells(|p, a| holes.value_at(p).and(a))?;
        let mesh = Mesh::build(Rect::unit(), 32, 32, &field)?;
        let k = assemble_stiffness(&mesh);
        let scale = k.max_abs();
        report.push("kernel", format!("symmetry_{t}"), k.asymmetry() / scale, INVARIANT_TOL);
        let ones = vec![1.0; mesh.num_nodes()];
        let null = k.mul_vec(&ones).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        report.push("kernel", format!("nullspace_{t}"), null / scale, INVARIANT_TOL);
    }
    let iso = [
        [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
        [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
        [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
        [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
    ];
    let off = [[0.5, 0.0, -0.5, 0.0], [0.0, -0.5, 0.0, 0.5], [-0.5, 0.0, 0.5, 0.0], [0.0, 0.5, 0.0, -0.5]];
    let ms = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
    let dev = |a: &element::ElementMatrix, b: &dyn Fn(usize, usize) -> f64| {
        (0..16).map(|i| (a[i / 4][i % 4] - b(i / 4, i % 4)).abs()).fold(0.0, f64::max)
    };
    let k = element::stiffness(&SymMat2::scalar(1.0), 1.0, 1.0);
    report.push("kernel", "element_stiffness", dev(&k, &|i, j| iso[i][j]), ELEMENT_TOL);
    let k = element::stiffness(&SymMat2::new(0.0, 1.0, 0.0), 1.0, 1.0);
    report.push("kernel", "element_stiffness_offdiag", dev(&k, &|i, j| off[i][j]), ELEMENT_TOL);
    let m = element::mass(1.0, 1.0, 1.0);
    report.push("kernel", "element_mass", dev(&m, &|i, j| ms[i][j] / 36.0), ELEMENT_TOL);
    let m = element::mass(3.0, 0.5, 2.0);
    report.push("kernel", "element_mass_scaled", dev(&m, &|i, j| ms[i][j] / 12.0), ELEMENT_TOL);
    Ok(())
}

/// Caccioppoli inequality for A-harmonic functions with random harmonic
/// Neumann data on random two-phase fields.
pub fn caccioppoli_suite(seed: u64, samples: usize, report: &mut ValidationReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xcacc);
    let inner = Rect::new(0.25, 0.75, 0.25, 0.75)?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let field = two_phase(&mut rng, 8, 20.0)?;
        let mesh = Mesh::build(Rect::unit(), 32, 32, &field)?;
        let k = assemble_stiffness(&mesh);
        let c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let mut g = boundary_load(&mesh, |_| true, |p, n| {
            let (x, y) = (p[0] - 0.5, p[1] - 0.5);
            let gx = c[0] + 2.0 * c[1] * x + 3.0 * c[2] * (x * x - y * y);
            let gy = -2.0 * c[1] * y - 6.0 * c[2] * x * y;
            gx * n[0] + gy * n[1]
        });
        let w = boundary_weights(&mesh, |_| true);
        let shift = g.iter().sum::<f64>() / w.iter().sum::<f64>();
        g.iter_mut().zip(&w).for_each(|(gi, wi)| *gi -= shift * wi);
        let u = harmonic_extension(&mesh, &k, &Trace::Neumann(g))?;
        let r = caccioppoli_check(&mesh, &k, &u, &inner, 0.25)?;
        worst = worst.max(r.lhs / r.rhs);
    }
    report.push("caccioppoli", format!("max_ratio_over_{samples}"), worst, 1.0 + 1e-8);
    Ok(())
}

/// Restriction pencils of random patches: eigenvalues in `[0, 1]` and sorted.
pub fn pencil_suite(seed: u64, report: &mut ValidationReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e11);
    let mut below = 0.0f64;
    let mut above = 0.0f64;
    let mut unsorted = 0.0f64;
    let mut count = 0usize;
    for _ in 0..6 {
        let field = two_phase(&mut rng, 16, 10.0)?;
        let fine = Mesh::build(Rect::unit(), 48, 48, &field)?;
        let lo = rng.gen_range(0..3) as f64 / 12.0;
        let omega = Rect::new(0.25 + lo, 0.5 + lo, 0.25, 0.5)?;
        let star = Rect::new(lo, 0.75 + lo, 0.0, 0.75)?;
        let patch = PatchPair::from_global(&fine, omega, star)?;
        let snaps = snapshots_poly_neumann(&patch, 12)?;
        let fns: Vec<Vec<f64>> = snaps.into_iter().map(|s| s.values).collect();
        let pencil = restriction_pencil(&patch, &fns)?;
        let pairs = solve_pencil(&pencil, DEFAULT_RANK_THRESHOLD)?;
        for w in pairs.values.windows(2) {
            unsorted = unsorted.max(w[1] - w[0]);
        }
        for &v in &pairs.values {
            below = below.max(-v);
            above = above.max(v - 1.0);
        }
        count += 1;
    }
    report.push("pencil", format!("below_zero_{count}"), below.max(0.0), PENCIL_TOL);
    report.push("pencil", format!("above_one_{count}"), above.max(0.0), PENCIL_TOL);
    report.push("pencil", "order_violation", unsorted.max(0.0), 0.0);
    Ok(())
}

/// Laminate cell problem against the harmonic and arithmetic means.
pub fn homog_suite(report: &mut ValidationReport) -> Result<()> {
    let (a1, a2) = (1.0, 4.0);
    let r = cell_problem(&laminate_cell(a1, a2)?, 32)?;
    let harmonic = 2.0 / (1.0 / a1 + 1.0 / a2);
    let arithmetic = 0.5 * (a1 + a2);
    report.push("homog", "laminate_harmonic", (r.a0.a11 - harmonic).abs() / harmonic, 1e-3);
    report.push("homog", "laminate_arithmetic", (r.a0.a22 - arithmetic).abs() / arithmetic, 1e-3);
    report.push("homog", "flux_asymmetry", r.asymmetry(), 1e-10);
    Ok(())
}

pub fn run_all(cfg: &ScenarioConfig) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let seed = cfg.scenario.seed;
    pu_suite(cfg, &mut report)?;
    kernel_suite(seed, &mut report)?;
    caccioppoli_suite(seed, CACCIOPPOLI_SAMPLES, &mut report)?;
    pencil_suite(seed, &mut report)?;
    homog_suite(&mut report)?;
    Ok(report)
}
