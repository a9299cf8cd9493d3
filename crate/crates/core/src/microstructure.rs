//! Cellwise-constant coefficient fields `A(x)` on axis-aligned rectangles.
//!
//! A field is a grid of symmetric 2×2 matrices sampled at cell centres.
//! Cells may be flagged as holes (zero rigidity): they are excluded from
//! every assembled integral, so their boundary carries a natural
//! homogeneous Neumann condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grid_count, Point, Rect};

/// Symmetric 2×2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMat2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 { a11: 1.0, a12: 0.0, a22: 1.0 };

    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        SymMat2 { a11, a12, a22 }
    }

    pub fn scalar(a: f64) -> Self {
        SymMat2 { a11: a, a12: 0.0, a22: a }
    }

    pub fn diag(a11: f64, a22: f64) -> Self {
        SymMat2 { a11, a12: 0.0, a22 }
    }

    /// `R(θ) diag(d1, d2) R(θ)ᵀ`.
    pub fn rotated_diag(d1: f64, d2: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        SymMat2 {
            a11: c * c * d1 + s * s * d2,
            a12: c * s * (d1 - d2),
            a22: s * s * d1 + c * c * d2,
        }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let half_diff = 0.5 * (self.a11 - self.a22);
        let r = half_diff.hypot(self.a12);
        (half_tr - r, half_tr + r)
    }

    /// Eigen-decomposition `(λ_min, λ_max, θ)` where the eigenvector of
    /// `λ_max` is `(cos θ, sin θ)`.
    pub fn eigen(&self) -> (f64, f64, f64) {
        let (lo, hi) = self.eigenvalues();
        let theta = 0.5 * (2.0 * self.a12).atan2(self.a11 - self.a22);
        (lo, hi, theta)
    }

    pub fn is_spd(&self) -> bool {
        self.a11.is_finite()
            && self.a12.is_finite()
            && self.a22.is_finite()
            && self.a11 > 0.0
            && self.a22 > 0.0
            && self.det() > 0.0
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMat2 { a11: s * self.a11, a12: s * self.a12, a22: s * self.a22 }
    }

    pub fn apply(&self, v: Point) -> Point {
        [self.a11 * v[0] + self.a12 * v[1], self.a12 * v[0] + self.a22 * v[1]]
    }

    fn check_spd(&self) -> Result<()> {
        if self.is_spd() {
            Ok(())
        } else {
            Err(Error::NotSpd(format!("{self:?}")))
        }
    }
}

/// A disk inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point,
    pub radius: f64,
}

impl Disk {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Disk { center: [cx, cy], radius }
    }

    pub fn contains(&self, p: Point) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy < self.radius * self.radius
    }

    /// True when the closed disk meets the boundary curve of `rect`.
    pub fn meets_boundary(&self, rect: &Rect) -> bool {
        self.radius > 0.0 && rect.boundary_distance(self.center) <= self.radius
    }
}

/// What fills an inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InclusionFill {
    Material(SymMat2),
    Hole,
}

#[derive(Debug, Clone, PartialEq)]
struct InclusionLayout {
    disks: Vec<Disk>,
    matrix: SymMat2,
    fill: InclusionFill,
}

/// Cellwise-constant SPD coefficient field on a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    domain: Rect,
    res_x: usize,
    res_y: usize,
    ncx: usize,
    ncy: usize,
    cells: Vec<SymMat2>,
    holes: Option<Vec<bool>>,
    layout: Option<InclusionLayout>,
}

impl CoefficientField {
    fn grid(domain: Rect, res_x: usize, res_y: usize) -> Result<(usize, usize)> {
        if res_x == 0 || res_y == 0 {
            return Err(Error::invalid("resolution must be positive"));
        }
        let ncx = grid_count(domain.width(), 1.0 / res_x as f64)?;
        let ncy = grid_count(domain.height(), 1.0 / res_y as f64)?;
        if ncx == 0 || ncy == 0 {
            return Err(Error::invalid("domain holds no coefficient cells"));
        }
        Ok((ncx, ncy))
    }

    /// Builds a field from explicit cell data (row-major, `y` outer).
    pub fn from_cells(
        domain: Rect,
        res_x: usize,
        res_y: usize,
        cells: Vec<SymMat2>,
        holes: Option<Vec<bool>>,
    ) -> Result<Self> {
        let (ncx, ncy) = Self::grid(domain, res_x, res_y)?;
        if cells.len() != ncx * ncy {
            return Err(Error::invalid(format!(
                "expected {} cells, got {}",
                ncx * ncy,
                cells.len()
            )));
        }
        if let Some(h) = &holes {
            if h.len() != cells.len() {
                return Err(Error::invalid("hole mask length mismatch"));
            }
        }
        let holes = holes.filter(|h| h.iter().any(|&b| b));
        for (i, c) in cells.iter().enumerate() {
            if holes.as_ref().is_some_and(|h| h[i]) {
                continue;
            }
            c.check_spd()?;
        }
        let field = CoefficientField { domain, res_x, res_y, ncx, ncy, cells, holes, layout: None };
        if field.active_cells() == 0 {
            return Err(Error::invalid("every cell is a hole"));
        }
        Ok(field)
    }

    /// Builds a field by sampling `f` at cell centres.
    pub fn from_fn(
        domain: Rect,
        res_x: usize,
        res_y: usize,
        f: impl Fn(Point) -> SymMat2,
    ) -> Result<Self> {
        let (ncx, ncy) = Self::grid(domain, res_x, res_y)?;
        let hx = 1.0 / res_x as f64;
        let hy = 1.0 / res_y as f64;
        let mut cells = Vec::with_capacity(ncx * ncy);
        for j in 0..ncy {
            for i in 0..ncx {
                let p = [domain.x0 + (i as f64 + 0.5) * hx, domain.y0 + (j as f64 + 0.5) * hy];
                cells.push(f(p));
            }
        }
        Self::from_cells(domain, res_x, res_y, cells, None)
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    /// Cells per unit length in `x` and `y`.
    pub fn resolution(&self) -> (usize, usize) {
        (self.res_x, self.res_y)
    }

    pub fn cell_counts(&self) -> (usize, usize) {
        (self.ncx, self.ncy)
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (1.0 / self.res_x as f64, 1.0 / self.res_y as f64)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        let (hx, hy) = self.cell_size();
        [self.domain.x0 + (i as f64 + 0.5) * hx, self.domain.y0 + (j as f64 + 0.5) * hy]
    }

    /// Cell matrix, or `None` for a hole.
    pub fn cell(&self, i: usize, j: usize) -> Option<SymMat2> {
        let k = j * self.ncx + i;
        if self.is_hole_index(k) {
            None
        } else {
            Some(self.cells[k])
        }
    }

    pub fn is_hole(&self, i: usize, j: usize) -> bool {
        self.is_hole_index(j * self.ncx + i)
    }

    fn is_hole_index(&self, k: usize) -> bool {
        self.holes.as_ref().is_some_and(|h| h[k])
    }

    pub fn hole_count(&self) -> usize {
        self.holes.as_ref().map_or(0, |h| h.iter().filter(|&&b| b).count())
    }

    pub fn active_cells(&self) -> usize {
        self.ncx * self.ncy - self.hole_count()
    }

    /// Cell index containing `p` (points on shared edges go to the upper cell).
    pub fn locate(&self, p: Point) -> Option<(usize, usize)> {
        if !self.domain.contains(p) {
            return None;
        }
        let (hx, hy) = self.cell_size();
        let i = (((p[0] - self.domain.x0) / hx).floor() as usize).min(self.ncx - 1);
        let j = (((p[1] - self.domain.y0) / hy).floor() as usize).min(self.ncy - 1);
        Some((i, j))
    }

    /// Value at a point, `None` inside holes or outside the domain.
    pub fn value_at(&self, p: Point) -> Option<SymMat2> {
        self.locate(p).and_then(|(i, j)| self.cell(i, j))
    }

    /// Disks the field was generated from, if any.
    pub fn inclusions(&self) -> &[Disk] {
        self.layout.as_ref().map_or(&[], |l| l.disks.as_slice())
    }

    /// Field with every matrix multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("scale must be positive"));
        }
        let mut out = self.clone();
        for c in &mut out.cells {
            *c = c.scale(s);
        }
        if let Some(l) = &mut out.layout {
            l.matrix = l.matrix.scale(s);
            if let InclusionFill::Material(m) = &mut l.fill {
                *m = m.scale(s);
            }
        }
        Ok(out)
    }

    /// Restricts the field to a cell-aligned sub-rectangle.
    pub fn restrict(&self, rect: &Rect) -> Result<Self> {
        if !self.domain.contains_rect(rect) {
            return Err(Error::invalid("restriction rectangle leaves the field domain"));
        }
        let (hx, hy) = self.cell_size();
        let i0 = grid_count(rect.x0 - self.domain.x0, hx)?;
        let j0 = grid_count(rect.y0 - self.domain.y0, hy)?;
        let (ncx, ncy) = Self::grid(*rect, self.res_x, self.res_y)?;
        let mut cells = Vec::with_capacity(ncx * ncy);
        let mut holes = Vec::with_capacity(ncx * ncy);
        for j in 0..ncy {
            for i in 0..ncx {
                let k = (j0 + j) * self.ncx + i0 + i;
                cells.push(self.cells[k]);
                holes.push(self.is_hole_index(k));
            }
        }
        let mut out = Self::from_cells(*rect, self.res_x, self.res_y, cells, Some(holes))?;
        out.layout = self.layout.clone();
        Ok(out)
    }

    /// Field on the same domain with each cell replaced by `f(center, value)`.
    pub fn map_cells(&self, f: impl Fn(Point, Option<SymMat2>) -> Option<SymMat2>) -> Result<Self> {
        let mut cells = self.cells.clone();
        let mut holes = vec![false; cells.len()];
        for j in 0..self.ncy {
            for i in 0..self.ncx {
                let k = j * self.ncx + i;
                match f(self.cell_center(i, j), self.cell(i, j)) {
                    Some(m) => cells[k] = m,
                    None => holes[k] = true,
                }
            }
        }
        Self::from_cells(self.domain, self.res_x, self.res_y, cells, Some(holes))
    }
}

/// Uniform field equal to `a0`.
pub fn constant_field(a0: SymMat2, domain: Rect, res_x: usize, res_y: usize) -> Result<CoefficientField> {
    a0.check_spd()?;
    CoefficientField::from_fn(domain, res_x, res_y, |_| a0)
}

/// `A(x/ε)` with `ε = 1/periods` tiled over `domain`.
///
/// The unit cell must live on `[0,1]²` and the target resolution must be
/// `periods` times the unit-cell resolution so cell boundaries align.
pub fn periodic_field(
    unit_cell: &CoefficientField,
    periods: usize,
    domain: Rect,
) -> Result<CoefficientField> {
    if periods == 0 {
        return Err(Error::invalid("number of periods per unit length must be >= 1"));
    }
    let ud = unit_cell.domain();
    if ud != Rect::unit() {
        return Err(Error::invalid("unit cell must be defined on [0,1]^2"));
    }
    let (ux, uy) = unit_cell.cell_counts();
    let res_x = ux * periods;
    let res_y = uy * periods;
    let (ncx, ncy) = CoefficientField::grid(domain, res_x, res_y)?;
    // Offset of the domain origin in target cells, so tiling is anchored at x = 0.
    let ox = (domain.x0 * res_x as f64).round() as i64;
    let oy = (domain.y0 * res_y as f64).round() as i64;
    if ((domain.x0 * res_x as f64) - ox as f64).abs() > 1e-9
        || ((domain.y0 * res_y as f64) - oy as f64).abs() > 1e-9
    {
        return Err(Error::Misaligned("domain origin is not on the periodic cell grid".into()));
    }
    let mut cells = Vec::with_capacity(ncx * ncy);
    let mut holes = Vec::with_capacity(ncx * ncy);
    for j in 0..ncy {
        for i in 0..ncx {
            let ui = (ox + i as i64).rem_euclid(ux as i64) as usize;
            let uj = (oy + j as i64).rem_euclid(uy as i64) as usize;
            match unit_cell.cell(ui, uj) {
                Some(m) => {
                    cells.push(m);
                    holes.push(false);
                }
                None => {
                    cells.push(SymMat2::IDENTITY);
                    holes.push(true);
                }
            }
        }
    }
    CoefficientField::from_cells(domain, res_x, res_y, cells, Some(holes))
}

/// Matrix material with disk inclusions decided by the cell-centre test.
pub fn inclusion_field(
    domain: Rect,
    res_x: usize,
    res_y: usize,
    disks: &[Disk],
    matrix: SymMat2,
    fill: InclusionFill,
) -> Result<CoefficientField> {
    matrix.check_spd()?;
    if let InclusionFill::Material(m) = fill {
        m.check_spd()?;
    }
    for (k, d) in disks.iter().enumerate() {
        if !(d.radius >= 0.0) {
            return Err(Error::invalid(format!("disk {k} has negative radius")));
        }
        let bb = Rect {
            x0: d.center[0] - d.radius,
            x1: d.center[0] + d.radius,
            y0: d.center[1] - d.radius,
            y1: d.center[1] + d.radius,
        };
        if !domain.contains(d.center) || !domain.contains_rect(&bb) {
            return Err(Error::invalid(format!("disk {k} leaves the domain")));
        }
    }
    if fill == InclusionFill::Hole {
        for a in 0..disks.len() {
            for b in a + 1..disks.len() {
                let (da, db) = (&disks[a], &disks[b]);
                let dist = (da.center[0] - db.center[0]).hypot(da.center[1] - db.center[1]);
                if dist <= da.radius + db.radius {
                    return Err(Error::invalid(format!("hole disks {a} and {b} overlap")));
                }
            }
        }
    }
    let mut field = paint(domain, res_x, res_y, disks, matrix, fill, |_| true)?;
    field.layout = Some(InclusionLayout { disks: disks.to_vec(), matrix, fill });
    Ok(field)
}

fn paint(
    domain: Rect,
    res_x: usize,
    res_y: usize,
    disks: &[Disk],
    matrix: SymMat2,
    fill: InclusionFill,
    keep: impl Fn(&Disk) -> bool,
) -> Result<CoefficientField> {
    let (ncx, ncy) = CoefficientField::grid(domain, res_x, res_y)?;
    let hx = 1.0 / res_x as f64;
    let hy = 1.0 / res_y as f64;
    let mut cells = vec![matrix; ncx * ncy];
    let mut holes = vec![false; ncx * ncy];
    for d in disks.iter().filter(|d| keep(d) && d.radius > 0.0) {
        let i0 = (((d.center[0] - d.radius - domain.x0) / hx).floor().max(0.0)) as usize;
        let i1 = (((d.center[0] + d.radius - domain.x0) / hx).ceil() as usize).min(ncx);
        let j0 = (((d.center[1] - d.radius - domain.y0) / hy).floor().max(0.0)) as usize;
        let j1 = (((d.center[1] + d.radius - domain.y0) / hy).ceil() as usize).min(ncy);
        for j in j0..j1 {
            for i in i0..i1 {
                let c = [domain.x0 + (i as f64 + 0.5) * hx, domain.y0 + (j as f64 + 0.5) * hy];
                if d.contains(c) {
                    match fill {
                        InclusionFill::Material(m) => cells[j * ncx + i] = m,
                        InclusionFill::Hole => holes[j * ncx + i] = true,
                    }
                }
            }
        }
    }
    CoefficientField::from_cells(domain, res_x, res_y, cells, Some(holes))
}

/// Replaces every inclusion meeting the boundary of `patch` by matrix material.
///
/// Fields without an inclusion layout are returned unchanged.
pub fn clip_inclusions(field: &CoefficientField, patch: &Rect) -> Result<CoefficientField> {
    let Some(layout) = &field.layout else {
        return Ok(field.clone());
    };
    let removed: Vec<Disk> = layout
        .disks
        .iter()
        .copied()
        .filter(|d| d.meets_boundary(patch))
        .collect();
    if removed.is_empty() {
        return Ok(field.clone());
    }
    let mut out = field.clone();
    let (hx, hy) = field.cell_size();
    let d0 = field.domain;
    for d in removed.iter().filter(|d| d.radius > 0.0) {
        let i0 = (((d.center[0] - d.radius - d0.x0) / hx).floor().max(0.0)) as usize;
        let i1 = (((d.center[0] + d.radius - d0.x0) / hx).ceil().max(0.0) as usize).min(field.ncx);
        let j0 = (((d.center[1] - d.radius - d0.y0) / hy).floor().max(0.0)) as usize;
        let j1 = (((d.center[1] + d.radius - d0.y0) / hy).ceil().max(0.0) as usize).min(field.ncy);
        for j in j0..j1 {
            for i in i0..i1 {
                if d.contains(field.cell_center(i, j)) {
                    let k = j * field.ncx + i;
                    out.cells[k] = layout.matrix;
                    if let Some(h) = &mut out.holes {
                        h[k] = false;
                    }
                }
            }
        }
    }
    out.layout = Some(InclusionLayout {
        disks: layout.disks.iter().copied().filter(|d| !d.meets_boundary(patch)).collect(),
        matrix: layout.matrix,
        fill: layout.fill,
    });
    if out.hole_count() == 0 {
        out.holes = None;
    }
    Ok(out)
}

/// `(α, β)`: extreme cellwise eigenvalues over non-hole cells.
pub fn coercivity_bounds(field: &CoefficientField) -> Result<(f64, f64)> {
    let mut alpha = f64::INFINITY;
    let mut beta = 0.0f64;
    let mut any = false;
    for (k, c) in field.cells.iter().enumerate() {
        if field.is_hole_index(k) {
            continue;
        }
        any = true;
        let (lo, hi) = c.eigenvalues();
        alpha = alpha.min(lo);
        beta = beta.max(hi);
    }
    if !any {
        return Err(Error::invalid("field has no non-hole cells"));
    }
    Ok((alpha, beta))
}

/// Seeded random non-overlapping disks with a minimum clearance.
///
/// Disks keep `clearance` from each other and from the domain boundary.
/// Placement is by rejection sampling; fewer than `count` disks are
/// returned when the domain saturates.
pub fn random_disks(
    domain: Rect,
    count: usize,
    radius: (f64, f64),
    clearance: f64,
    seed: u64,
) -> Vec<Disk> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut disks: Vec<Disk> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while disks.len() < count && attempts < 10_000 * count.max(1) {
        attempts += 1;
        let r = if radius.1 > radius.0 { rng.gen_range(radius.0..radius.1) } else { radius.0 };
        let m = r + clearance;
        if domain.width() <= 2.0 * m || domain.height() <= 2.0 * m {
            break;
        }
        let cx = rng.gen_range(domain.x0 + m..domain.x1 - m);
        let cy = rng.gen_range(domain.y0 + m..domain.y1 - m);
        let ok = disks.iter().all(|d| {
            (d.center[0] - cx).hypot(d.center[1] - cy) > d.radius + r + clearance
        });
        if ok {
            disks.push(Disk::new(cx, cy, r));
        }
    }
    disks
}
