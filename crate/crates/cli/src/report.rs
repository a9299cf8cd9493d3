//! CSV and summary writers. Floats carry 17 significant digits; CSV bodies
//! hold no timings so identical runs produce identical files.
//!
//! | file | header |
//! |---|---|
//! | study `report.csv` | `record,seed,family,k,n,dim,energy_rel_overkill,l2_rel_overkill,energy_rel_fine,l2_rel_fine,dropped,slope_overkill,r2_overkill,slope_fine,r2_fine,status` |
//! | solve `report.csv` | same as study |
//! | nwidth `report.csv` | `record,seed,j,lambda,sqrt_lambda,analytic,rel_dev` |
//! | homog `report.csv` | `record,seed,eps,i,value,reference,deviation` |
//! | validate `report.csv` | `record,seed,suite,check,value,tolerance,status` |
//! | `solution.csv` | `x,y,u` |
//! | `basis_<i>.csv` | `record,function,x,y,value` |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use msgfem::fem::mesh::Mesh;
use msgfem::gfem::{BasisFamily, GfemRun};

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::scenario::{HomogReport, NwidthRow, StudyReport, StudyRow, REFERENCE_RATE, REFERENCE_TABLE};
use crate::validate::ValidationReport;

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SOLUTION_FILE: &str = "solution.csv";

pub const STUDY_HEADER: [&str; 16] = [
    "record",
    "seed",
    "family",
    "k",
    "n",
    "dim",
    "energy_rel_overkill",
    "l2_rel_overkill",
    "energy_rel_fine",
    "l2_rel_fine",
    "dropped",
    "slope_overkill",
    "r2_overkill",
    "slope_fine",
    "r2_fine",
    "status",
];

/// `{:.16e}`, or `NaN` / `inf` / `-inf`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn family_name(f: BasisFamily) -> &'static str {
    match f {
        BasisFamily::Constant => "constant",
        BasisFamily::Polynomial => "polynomial",
        BasisFamily::Optimal => "optimal",
        BasisFamily::NeumannEigen => "neumann-eigen",
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn row_record(seed: u64, r: &StudyRow) -> Vec<String> {
    vec![
        "row".into(),
        seed.to_string(),
        family_name(r.family).into(),
        r.k.to_string(),
        r.n.to_string(),
        r.dim.to_string(),
        num(r.energy_rel_overkill),
        num(r.l2_rel_overkill),
        num(r.energy_rel_fine),
        num(r.l2_rel_fine),
        r.dropped.to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        match &r.failure {
            None => "ok".into(),
            Some(m) => format!("failed: {m}"),
        },
    ]
}

pub fn write_study(dir: &Path, report: &StudyReport) -> Result<PathBuf> {
    let path = dir.join(REPORT_FILE);
    let mut w = writer(&path)?;
    w.write_record(STUDY_HEADER)?;
    for r in &report.rows {
        w.write_record(row_record(report.seed, r))?;
    }
    for f in &report.fits {
        let (so, ro) = f.overkill.map_or((None, None), |l| (Some(l.slope), Some(l.r2)));
        let (sf, rf) = f.fine.map_or((None, None), |l| (Some(l.slope), Some(l.r2)));
        let mut rec = vec!["fit".to_string(), report.seed.to_string(), family_name(f.family).into()];
        rec.extend(std::iter::repeat(String::new()).take(8));
        rec.extend([opt(so), opt(ro), opt(sf), opt(rf)]);
        rec.push(if f.fine.is_some() { "ok".into() } else { "insufficient".into() });
        w.write_record(rec)?;
    }
    let mut floor = vec!["floor".to_string(), report.seed.to_string(), String::new()];
    floor.extend(std::iter::repeat(String::new()).take(3));
    floor.extend([num(report.floor.0), num(report.floor.1), String::new(), String::new()]);
    floor.extend(std::iter::repeat(String::new()).take(5));
    floor.push("ok".into());
    w.write_record(floor)?;
    w.flush()?;
    Ok(path)
}

pub fn study_summary(cfg: &ScenarioConfig, report: &StudyReport, seconds: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "convergence study");
    let _ = writeln!(s, "seed {}  workers {}", report.seed, cfg.scenario.workers);
    let _ = writeln!(
        s,
        "fine mesh {}x{}  cover {}x{} (star +{})  reference refine x{}  holes {}",
        cfg.mesh.fine, cfg.mesh.fine, cfg.cover.m, cfg.cover.m, cfg.cover.star_cells, cfg.mesh.reference_refine, report.holes
    );
    let _ = writeln!(
        s,
        "discretization floor (fine FEM vs overkill): energy {:.4e}  L2 {:.4e}",
        report.floor.0, report.floor.1
    );
    if let Some(g) = report.guard {
        let _ = writeln!(s, "reference self-convergence guard (energy): {g:.4e}");
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:>2} {:>3} {:>6} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "family", "k", "n", "dim", "E_overkill", "L2_overkill", "E_fine", "L2_fine", "seconds"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<12} {:>2} {:>3} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.2}{}",
            family_name(r.family),
            r.k,
            r.n,
            r.dim,
            r.energy_rel_overkill,
            r.l2_rel_overkill,
            r.energy_rel_fine,
            r.l2_rel_fine,
            r.seconds,
            r.failure.as_ref().map(|m| format!("  FAILED: {m}")).unwrap_or_default()
        );
    }
    let _ = writeln!(s);
    for f in &report.fits {
        let show = |l: Option<crate::scenario::LogFit>| {
            l.map(|l| format!("slope {:.4}  R2 {:.4}", l.slope, l.r2)).unwrap_or_else(|| "n/a".into())
        };
        let _ = writeln!(
            s,
            "fit {:<12} overkill: {}   fine: {}",
            family_name(f.family),
            show(f.overkill),
            show(f.fine)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "reference table (different, unpublished geometry; qualitative comparison only):");
    for (k, e) in REFERENCE_TABLE {
        let _ = writeln!(s, "  k={k}  n={}  {:.2}%", 2 * k + 1, 100.0 * e);
    }
    let _ = writeln!(s, "  reference rate exp({REFERENCE_RATE} n)");
    let _ = writeln!(s);
    let _ = writeln!(s, "reference solve {:.2} s, total {:.2} s", report.reference_seconds, seconds);
    s
}

pub fn write_nwidth(dir: &Path, seed: u64, rows: &[NwidthRow]) -> Result<PathBuf> {
    let path = dir.join(REPORT_FILE);
    let mut w = writer(&path)?;
    w.write_record(["record", "seed", "j", "lambda", "sqrt_lambda", "analytic", "rel_dev"])?;
    for r in rows {
        w.write_record([
            "eigen".to_string(),
            seed.to_string(),
            r.j.to_string(),
            num(r.lambda),
            num(r.lambda.max(0.0).sqrt()),
            num(r.analytic),
            num(r.rel_dev()),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn nwidth_summary(cfg: &ScenarioConfig, rows: &[NwidthRow], seconds: f64) -> String {
    let c = &cfg.nwidth;
    let mut s = String::new();
    let _ = writeln!(s, "n-width between concentric A-adapted ellipses");
    let _ = writeln!(s, "r {}  r* {}  mesh {}x{}  snapshots {}", c.r, c.r_star, c.mesh, c.mesh, c.snapshots);
    let _ = writeln!(s, "{:>3} {:>14} {:>14} {:>10}", "j", "lambda", "analytic", "rel_dev");
    for r in rows {
        let _ = writeln!(s, "{:>3} {:>14.6e} {:>14.6e} {:>10.3e}", r.j, r.lambda, r.analytic, r.rel_dev());
    }
    let _ = writeln!(s, "total {seconds:.2} s");
    s
}

pub fn write_homog(dir: &Path, seed: u64, report: &HomogReport) -> Result<PathBuf> {
    let path = dir.join(REPORT_FILE);
    let mut w = writer(&path)?;
    w.write_record(["record", "seed", "eps", "i", "value", "reference", "deviation"])?;
    let sd = seed.to_string();
    let a0 = report.cell.a0;
    for (i, v) in [a0.a11, a0.a12, a0.a22].into_iter().enumerate() {
        w.write_record(["a0".into(), sd.clone(), String::new(), i.to_string(), num(v), String::new(), String::new()])?;
    }
    for (name, v) in [("reuss", report.reuss), ("voigt", report.voigt)] {
        w.write_record([name.into(), sd.clone(), String::new(), String::new(), num(v), String::new(), String::new()])?;
    }
    let t = &report.sweep;
    for r in &t.reference {
        w.write_record([
            "lambda0".into(),
            sd.clone(),
            num(0.0),
            r.i.to_string(),
            num(r.lambda),
            String::new(),
            String::new(),
        ])?;
    }
    for r in &t.rows {
        let reference = t.reference.iter().find(|x| x.i == r.i).map(|x| x.lambda);
        w.write_record([
            "lambda".into(),
            sd.clone(),
            num(r.eps),
            r.i.to_string(),
            num(r.lambda),
            opt(reference),
            num(t.deviation(r)),
        ])?;
        if let Some(q) = r.q {
            let root = r.lambda.max(0.0).sqrt();
            w.write_record([
                "q".into(),
                sd.clone(),
                num(r.eps),
                r.i.to_string(),
                num(q),
                num(root),
                num((q - root).abs()),
            ])?;
        }
    }
    w.flush()?;
    Ok(path)
}

pub fn homog_summary(cfg: &ScenarioConfig, report: &HomogReport, seconds: f64) -> String {
    let h = &cfg.homog;
    let a0 = report.cell.a0;
    let mut s = String::new();
    let _ = writeln!(s, "homogenization ({:?} cell, cell mesh {})", h.cell, h.cell_mesh);
    let _ = writeln!(s, "A0 = [[{:.8}, {:.8}], [{:.8}, {:.8}]]", a0.a11, a0.a12, a0.a12, a0.a22);
    let _ = writeln!(s, "Reuss {:.8}  Voigt {:.8}", report.reuss, report.voigt);
    let _ = writeln!(s, "flux-average asymmetry {:.3e}  corrector residual {:.3e}", report.cell.asymmetry(), report.cell.residual);
    let _ = writeln!(s);
    let t = &report.sweep;
    let _ = writeln!(s, "{:>10} {:>3} {:>14} {:>14} {:>12}", "eps", "i", "lambda", "lambda0", "deviation");
    for r in &t.rows {
        let l0 = t.reference.iter().find(|x| x.i == r.i).map_or(f64::NAN, |x| x.lambda);
        let _ = writeln!(s, "{:>10.5} {:>3} {:>14.6e} {:>14.6e} {:>12.4e}", r.eps, r.i, r.lambda, l0, t.deviation(r));
    }
    let _ = writeln!(s, "total {seconds:.2} s");
    s
}

pub fn write_validation(dir: &Path, seed: u64, report: &ValidationReport) -> Result<PathBuf> {
    let path = dir.join(REPORT_FILE);
    let mut w = writer(&path)?;
    w.write_record(["record", "seed", "suite", "check", "value", "tolerance", "status"])?;
    for c in &report.checks {
        w.write_record([
            "check".to_string(),
            seed.to_string(),
            c.suite.into(),
            c.name.clone(),
            num(c.value),
            num(c.tolerance),
            if c.passed { "pass".into() } else { "fail".into() },
        ])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn validation_summary(report: &ValidationReport, seconds: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "validation suites");
    for c in &report.checks {
        let _ = writeln!(
            s,
            "{:<4} {:<12} {:<28} {:>12.4e} <= {:>10.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.value,
            c.tolerance
        );
    }
    let _ = writeln!(s, "{} checks, {} failed, {seconds:.2} s", report.checks.len(), report.failures().len());
    s
}

pub fn write_solve(dir: &Path, seed: u64, row: &StudyRow, floor: (f64, f64)) -> Result<PathBuf> {
    let path = dir.join(REPORT_FILE);
    let mut w = writer(&path)?;
    w.write_record(STUDY_HEADER)?;
    w.write_record(row_record(seed, row))?;
    let mut rec = vec!["floor".to_string(), seed.to_string()];
    rec.extend(std::iter::repeat(String::new()).take(4));
    rec.extend([num(floor.0), num(floor.1)]);
    rec.extend(std::iter::repeat(String::new()).take(7));
    rec.push("ok".into());
    w.write_record(rec)?;
    w.flush()?;
    Ok(path)
}

pub fn solve_summary(cfg: &ScenarioConfig, row: &StudyRow, floor: (f64, f64), seconds: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "GFEM solve ({} basis, k = {}, n = {})", family_name(row.family), row.k, row.n);
    let _ = writeln!(s, "seed {}  workers {}  cover {}x{}", cfg.scenario.seed, cfg.scenario.workers, cfg.cover.m, cfg.cover.m);
    let _ = writeln!(s, "global dimension {}  dropped {}", row.dim, row.dropped);
    let _ = writeln!(s, "relative energy error vs fine FEM {:.4e}  vs overkill {:.4e}", row.energy_rel_fine, row.energy_rel_overkill);
    let _ = writeln!(s, "relative L2 error vs fine FEM {:.4e}  vs overkill {:.4e}", row.l2_rel_fine, row.l2_rel_overkill);
    let _ = writeln!(s, "discretization floor: energy {:.4e}  L2 {:.4e}", floor.0, floor.1);
    let _ = writeln!(s, "GFEM {:.2} s, total {seconds:.2} s", row.seconds);
    s
}

/// Nodal values on active nodes.
pub fn write_solution(dir: &Path, mesh: &Mesh, u: &[f64]) -> Result<PathBuf> {
    let path = dir.join(SOLUTION_FILE);
    let mut w = writer(&path)?;
    w.write_record(["x", "y", "u"])?;
    let active = mesh.active_nodes();
    for (n, v) in u.iter().enumerate() {
        if active[n] {
            let p = mesh.node_coord(n);
            w.write_record([num(p[0]), num(p[1]), num(*v)])?;
        }
    }
    w.flush()?;
    Ok(path)
}

/// Local basis of patch `i`: eigenvalues, `d_n` estimate and nodal values on
/// the `ω*` mesh.
pub fn write_basis(dir: &Path, run: &GfemRun, i: usize) -> Result<Option<PathBuf>> {
    let Some(space) = run.space.spaces.get(i) else { return Ok(None) };
    let path = dir.join(format!("basis_{i}.csv"));
    let mut w = writer(&path)?;
    w.write_record(["record", "function", "x", "y", "value"])?;
    let b = &space.basis;
    for (j, l) in b.eigenvalues.iter().enumerate() {
        w.write_record(["eigenvalue".into(), j.to_string(), String::new(), String::new(), num(*l)])?;
    }
    if let Some(d) = b.d_n_estimate {
        w.write_record(["d_n".into(), b.n.to_string(), String::new(), String::new(), num(d)])?;
    }
    let mesh = &space.patch.mesh;
    let active = mesh.active_nodes();
    for (j, f) in b.functions.iter().enumerate() {
        for (n, v) in f.iter().enumerate() {
            if active[n] {
                let p = mesh.node_coord(n);
                w.write_record(["node".into(), j.to_string(), num(p[0]), num(p[1]), num(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(Some(path))
}

pub fn write_summary(dir: &Path, text: &str) -> Result<PathBuf> {
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, text)?;
    Ok(path)
}
