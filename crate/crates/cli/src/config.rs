//! Scenario configuration: flat TOML sections with defaults for every key.
//!
//! ```toml
//! [scenario]
//! kind = "convergence-study"
//! seed = 7
//! workers = 4
//!
//! [field]
//! kind = "fibers"
//! resolution = 128
//! count = 60
//! ```

use std::path::Path;

use msgfem::gfem::{BasisFamily, GALERKIN_TOL};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    ConvergenceStudy,
    Nwidth,
    HomogSweep,
    Validate,
    Solve,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ConvergenceStudy => "convergence-study",
            ScenarioKind::Nwidth => "nwidth",
            ScenarioKind::HomogSweep => "homog-sweep",
            ScenarioKind::Validate => "validate",
            ScenarioKind::Solve => "solve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: Option<ScenarioKind>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection { kind: None, seed: 7, workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    /// `matrix` everywhere.
    Constant,
    /// Cells drawn as `1` or `contrast` with equal probability.
    TwoPhase,
    /// Random non-overlapping disks in a `matrix` background.
    Fibers,
    /// Vertical laminate of `phases`, `periods` per unit length.
    Laminate,
    /// Checkerboard of `contrast` and `1/contrast`, `periods` per unit length.
    Checkerboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub kind: FieldKind,
    /// Cells per unit length.
    pub resolution: usize,
    /// `[a11, a12, a22]` of the background material.
    pub matrix: [f64; 3],
    pub contrast: f64,
    pub count: usize,
    /// `[min, max]` fiber radius.
    pub radius: [f64; 2],
    pub clearance: f64,
    /// Scalar fiber conductivity; holes when absent.
    pub inclusion: Option<f64>,
    pub phases: [f64; 2],
    pub periods: usize,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            kind: FieldKind::Fibers,
            resolution: 128,
            matrix: [1.0, 0.0, 1.0],
            contrast: 10.0,
            count: 60,
            radius: [0.03, 0.045],
            clearance: 0.01,
            inclusion: None,
            phases: [1.0, 4.0],
            periods: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Fine elements per direction.
    pub fine: usize,
    pub reference_refine: usize,
    /// Second refinement for the reference self-convergence guard (0 = off).
    pub guard_refine: usize,
    pub reference_cap: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { fine: 128, reference_refine: 2, guard_refine: 4, reference_cap: 4_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverSection {
    pub m: usize,
    pub star_cells: usize,
}

impl Default for CoverSection {
    fn default() -> Self {
        CoverSection { m: 16, star_cells: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub family: BasisFamily,
    /// Degree range; the local dimension is `2k + 1`.
    pub k_min: usize,
    pub k_max: usize,
    /// Snapshot count of the optimal family.
    pub snapshots: usize,
    pub rank_threshold: f64,
    /// Run the optimal family at equal dimension alongside the polynomial one.
    pub compare_optimal: bool,
    pub particular: bool,
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection {
            family: BasisFamily::Polynomial,
            k_min: 1,
            k_max: 5,
            snapshots: 24,
            rank_threshold: 1e-12,
            compare_optimal: true,
            particular: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub boundary: BoundaryKind,
    /// `[a, b]`: Neumann data `n·(a, b)` or Dirichlet data `a x + b y`.
    pub gradient: [f64; 2],
    /// Constant source term.
    pub source: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { boundary: BoundaryKind::Neumann, gradient: [2.0, -1.0], source: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub galerkin_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { galerkin_tol: GALERKIN_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NwidthSection {
    pub r: f64,
    pub r_star: f64,
    /// Elements per direction on the bounding square of `ω*`.
    pub mesh: usize,
    pub snapshots: usize,
    pub count: usize,
}

impl Default for NwidthSection {
    fn default() -> Self {
        NwidthSection { r: 0.5, r_star: 1.0, mesh: 256, snapshots: 24, count: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Laminate,
    Checkerboard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepShape {
    Ellipses,
    Squares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogSection {
    pub cell: CellKind,
    pub phases: [f64; 2],
    pub contrast: f64,
    pub cell_mesh: usize,
    pub periods: Vec<usize>,
    pub geometry: SweepShape,
    /// Inner and outer ellipse semi-axes (ellipses), or inner square side (squares).
    pub r: f64,
    pub r_star: f64,
    pub mesh: usize,
    pub snapshots: usize,
    pub count: usize,
    pub with_q: bool,
}

impl Default for HomogSection {
    fn default() -> Self {
        HomogSection {
            cell: CellKind::Laminate,
            phases: [1.0, 4.0],
            contrast: 2.0,
            cell_mesh: 128,
            periods: vec![4, 8, 16],
            geometry: SweepShape::Ellipses,
            r: 0.2,
            r_star: 0.45,
            mesh: 128,
            snapshots: 24,
            count: 4,
            with_q: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    /// Write `solution.csv`.
    pub solution: bool,
    /// Patches whose local bases are written to `basis_<i>.csv`.
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub domain: DomainSection,
    pub field: FieldSection,
    pub mesh: MeshSection,
    pub cover: CoverSection,
    pub basis: BasisSection,
    pub data: DataSection,
    pub solver: SolverSection,
    pub nwidth: NwidthSection,
    pub homog: HomogSection,
    pub output: OutputSection,
}

fn bad(location: &str, message: impl Into<String>) -> CliError {
    CliError::Config { location: location.into(), message: message.into() }
}

fn positive(location: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(location, format!("must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    /// Parses and validates; errors carry `line L, column C` or the key path.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let before = &text[..span.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    format!("line {line}, column {col}")
                }
                None => "input".into(),
            };
            bad(&location, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config { location, message } => {
                CliError::Config { location: format!("{}: {location}", path.display()), message }
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.workers == 0 || s.workers > 256 {
            return Err(bad("scenario.workers", "must be in 1..=256"));
        }
        let d = &self.domain;
        if !(d.x1 > d.x0 && d.y1 > d.y0) {
            return Err(bad("domain", "need x1 > x0 and y1 > y0"));
        }
        let f = &self.field;
        if f.resolution == 0 {
            return Err(bad("field.resolution", "must be at least 1"));
        }
        let [a11, a12, a22] = f.matrix;
        if !(a11 > 0.0 && a22 > 0.0 && a11 * a22 - a12 * a12 > 0.0) {
            return Err(bad("field.matrix", "must be symmetric positive definite"));
        }
        positive("field.contrast", f.contrast)?;
        if !(f.clearance >= 0.0 && f.clearance.is_finite()) {
            return Err(bad("field.clearance", "must be non-negative"));
        }
        if !(f.radius[0] > 0.0 && f.radius[1] >= f.radius[0]) {
            return Err(bad("field.radius", "need 0 < min <= max"));
        }
        if let Some(c) = f.inclusion {
            positive("field.inclusion", c)?;
        }
        positive("field.phases", f.phases[0].min(f.phases[1]))?;
        if f.periods == 0 {
            return Err(bad("field.periods", "must be at least 1"));
        }
        let m = &self.mesh;
        if m.fine == 0 {
            return Err(bad("mesh.fine", "must be at least 1"));
        }
        if m.reference_refine < 2 {
            return Err(bad("mesh.reference_refine", "must be at least 2"));
        }
        if m.guard_refine != 0 && m.guard_refine <= m.reference_refine {
            return Err(bad("mesh.guard_refine", "must be 0 or exceed reference_refine"));
        }
        let c = &self.cover;
        if c.m == 0 || m.fine % c.m != 0 {
            return Err(bad("cover.m", format!("must divide mesh.fine = {}", m.fine)));
        }
        let b = &self.basis;
        if b.k_min == 0 || b.k_max < b.k_min {
            return Err(bad("basis.k_min", "need 1 <= k_min <= k_max"));
        }
        if b.family == BasisFamily::Optimal || b.compare_optimal {
            if b.snapshots < 2 * b.k_max {
                return Err(bad("basis.snapshots", format!("must be at least 2 k_max = {}", 2 * b.k_max)));
            }
        }
        if !(b.rank_threshold > 0.0 && b.rank_threshold < 1.0) {
            return Err(bad("basis.rank_threshold", "must lie in (0, 1)"));
        }
        if !(self.solver.galerkin_tol > 0.0 && self.solver.galerkin_tol < 1.0) {
            return Err(bad("solver.galerkin_tol", "must lie in (0, 1)"));
        }
        let n = &self.nwidth;
        if !(n.r > 0.0 && n.r < n.r_star) {
            return Err(bad("nwidth.r", "need 0 < r < r_star"));
        }
        if n.mesh < 8 || n.count == 0 || n.snapshots < n.count {
            return Err(bad("nwidth", "need mesh >= 8 and snapshots >= count >= 1"));
        }
        let h = &self.homog;
        positive("homog.phases", h.phases[0].min(h.phases[1]))?;
        positive("homog.contrast", h.contrast)?;
        if h.periods.is_empty() || h.periods.contains(&0) {
            return Err(bad("homog.periods", "need at least one positive entry"));
        }
        if h.cell_mesh < 2 || h.mesh < 8 || h.count == 0 || h.snapshots < h.count {
            return Err(bad("homog", "need cell_mesh >= 2, mesh >= 8 and snapshots >= count >= 1"));
        }
        match h.geometry {
            SweepShape::Ellipses if !(h.r > 0.0 && h.r < h.r_star && h.r_star <= 0.5) => {
                Err(bad("homog.r", "ellipses need 0 < r < r_star <= 0.5"))
            }
            SweepShape::Squares if !(h.r > 0.0 && h.r < 1.0) => Err(bad("homog.r", "squares need 0 < r < 1")),
            _ => Ok(()),
        }
    }

    /// Rejects a config whose declared kind differs from the subcommand.
    pub fn expect_kind(&self, kind: ScenarioKind) -> Result<()> {
        match self.scenario.kind {
            Some(k) if k != kind => Err(bad(
                "scenario.kind",
                format!("config declares `{}` but `{}` was requested", k.name(), kind.name()),
            )),
            _ => Ok(()),
        }
    }
}
