//! Local approximation spaces on patch pairs `ω ⊂ ω*`.
//!
//! A patch pair owns a mesh on `ω*` (clipped to the global domain) and an
//! element mask for `ω`. Snapshot families are discrete A-harmonic
//! functions on `ω*`; the optimal basis is their Rayleigh–Ritz reduction
//! for the restriction operator `ω* → ω`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::{
    assemble_mass, assemble_stiffness, assemble_stiffness_masked, boundary_load, boundary_weights,
    source_load,
};
use crate::fem::mesh::{Mesh, Side};
use crate::fem::solve::{balance_components, remove_mean, DirichletSolver, NeumannSolver};
use crate::fem::sparse::{Cholesky, CsrMatrix};
use crate::geometry::{Point, Rect, GRID_TOL};
use crate::microstructure::SymMat2;
use crate::spectral::{filter_rank, solve_pencil, ReducedPencil, DEFAULT_RANK_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchKind {
    Interior,
    Boundary,
}

/// Concentric pair `ω ⊂ ω*` with a mesh on `ω*`.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub omega: Rect,
    pub omega_star: Rect,
    pub kind: PatchKind,
    /// Mesh on `ω*`.
    pub mesh: Mesh,
    /// Elements of `mesh` lying in `ω`.
    pub inner: Vec<bool>,
    /// Sides of `ω*` lying on the global boundary (zero-flux for snapshots).
    pub physical: Vec<Side>,
    /// Expansion point for polynomial families.
    pub center: Point,
    /// Physical sides carry a zero trace instead of zero flux.
    pub zero_trace: bool,
    domain: Option<Rect>,
    k_star: CsrMatrix,
    k_inner: CsrMatrix,
}

fn sides_on(r: &Rect, domain: &Rect, tol: f64) -> Vec<Side> {
    let mut out = Vec::new();
    if (r.x0 - domain.x0).abs() <= tol {
        out.push(Side::Left);
    }
    if (r.x1 - domain.x1).abs() <= tol {
        out.push(Side::Right);
    }
    if (r.y0 - domain.y0).abs() <= tol {
        out.push(Side::Bottom);
    }
    if (r.y1 - domain.y1).abs() <= tol {
        out.push(Side::Top);
    }
    out
}

impl PatchPair {
    /// Patch pair cut from a global mesh; both rectangles are clipped to it.
    pub fn from_global(global: &Mesh, omega: Rect, omega_star: Rect) -> Result<Self> {
        let domain = global.rect();
        let omega = omega
            .intersect(&domain)
            .ok_or_else(|| Error::invalid("ω does not meet the domain"))?;
        let omega_star = omega_star
            .intersect(&domain)
            .ok_or_else(|| Error::invalid("ω* does not meet the domain"))?;
        Self::within(global, domain, omega, omega_star)
    }

    /// Pair on `parent` (any mesh covering `ω*`) inside the global `domain`.
    pub fn within(parent: &Mesh, domain: Rect, omega: Rect, omega_star: Rect) -> Result<Self> {
        if !omega_star.contains_rect(&omega) {
            return Err(Error::invalid("ω must lie inside ω*"));
        }
        let mesh = parent.submesh(&omega_star)?;
        let omega_star = mesh.rect();
        let inner = mesh.element_mask(&omega)?;
        let tol = GRID_TOL * domain.diam();
        let physical = sides_on(&omega_star, &domain, tol);
        let kind = if physical.is_empty() { PatchKind::Interior } else { PatchKind::Boundary };
        if kind == PatchKind::Boundary && (0..mesh.num_elements()).any(|e| mesh.is_outside(e)) {
            return Err(Error::invalid("boundary patches require a rectangular domain"));
        }
        Ok(Self::assemble(omega, omega_star, kind, mesh, inner, physical, omega.center(), Some(domain)))
    }

    /// Interior pair on an arbitrary (possibly masked) mesh with `ω` given by
    /// an element mask.
    pub fn masked(mesh: Mesh, inner: Vec<bool>, center: Point) -> Result<Self> {
        if inner.len() != mesh.num_elements() {
            return Err(Error::Misaligned("inner mask needs one flag per element".into()));
        }
        let mut bbox: Option<Rect> = None;
        for e in (0..mesh.num_elements()).filter(|&e| inner[e]) {
            let r = mesh.element_rect(e);
            bbox = Some(match bbox {
                None => r,
                Some(b) => Rect { x0: b.x0.min(r.x0), x1: b.x1.max(r.x1), y0: b.y0.min(r.y0), y1: b.y1.max(r.y1) },
            });
        }
        let omega = bbox.ok_or_else(|| Error::invalid("inner mask is empty"))?;
        let omega_star = mesh.rect();
        Ok(Self::assemble(omega, omega_star, PatchKind::Interior, mesh, inner, vec![], center, None))
    }

    /// Interior pair on a whole mesh: all of `∂ω*` is artificial.
    pub fn standalone(mesh: Mesh, omega: Rect) -> Result<Self> {
        let inner = mesh.element_mask(&omega)?;
        let mut p = Self::masked(mesh, inner, omega.center())?;
        p.omega = omega;
        Ok(p)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        omega: Rect,
        omega_star: Rect,
        kind: PatchKind,
        mesh: Mesh,
        inner: Vec<bool>,
        physical: Vec<Side>,
        center: Point,
        domain: Option<Rect>,
    ) -> Self {
        let k_star = assemble_stiffness(&mesh);
        let k_inner = assemble_stiffness_masked(&mesh, Some(&inner));
        PatchPair { omega, omega_star, kind, mesh, inner, physical, center, zero_trace: false, domain, k_star, k_inner }
    }

    /// Switches physical sides to homogeneous Dirichlet conditions.
    pub fn with_zero_trace(mut self) -> Self {
        self.zero_trace = true;
        self
    }

    /// Whether snapshots are clamped to zero on the physical boundary.
    pub fn clamps(&self) -> bool {
        self.zero_trace && !self.physical.is_empty()
    }

    /// Nested pair `ω ⊂ r ⊂ ω*` sharing this pair's mesh and domain.
    pub fn child(&self, omega_star: Rect) -> Result<Self> {
        let mut c = match self.domain {
            Some(d) => Self::within(&self.mesh, d, self.omega, omega_star)?,
            None => {
                let mesh = self.mesh.submesh(&omega_star)?;
                let inner = mesh.element_mask(&self.omega)?;
                Self::masked(mesh, inner, self.center)?
            }
        };
        c.zero_trace = self.zero_trace;
        Ok(c)
    }

    /// Stiffness over `ω*`.
    pub fn k_star(&self) -> &CsrMatrix {
        &self.k_star
    }

    /// Stiffness over `ω`.
    pub fn k_inner(&self) -> &CsrMatrix {
        &self.k_inner
    }

    pub fn is_artificial(&self, s: Side) -> bool {
        !self.physical.contains(&s)
    }

    /// Nodes on `∂ω* ∩ Ω` (including mask interfaces).
    pub fn artificial_nodes(&self) -> Vec<usize> {
        self.mesh.boundary_nodes(|s| self.is_artificial(s))
    }

    /// Whether `∂ω*` lies entirely on `∂Ω`.
    pub fn has_no_artificial_boundary(&self) -> bool {
        self.artificial_nodes().is_empty()
    }

    /// Nodes on `∂ω* ∩ ∂Ω`.
    pub fn physical_nodes(&self) -> Vec<usize> {
        self.mesh.boundary_nodes(|s| !self.is_artificial(s))
    }

    fn clamped_nodes(&self) -> Vec<usize> {
        let mut nodes = self.artificial_nodes();
        if self.clamps() {
            nodes.extend(self.physical_nodes());
            nodes.sort_unstable();
            nodes.dedup();
        }
        nodes
    }

    /// Length scale used to normalize polynomial families.
    pub fn scale(&self) -> f64 {
        0.5 * self.omega_star.width().max(self.omega_star.height())
    }

    /// Oversampling ratio `ρ` measured as the smallest gap over the inner half-width.
    pub fn oversampling(&self) -> f64 {
        let mut gaps = Vec::new();
        let (o, s) = (&self.omega, &self.omega_star);
        for (side, g) in [
            (Side::Left, o.x0 - s.x0),
            (Side::Right, s.x1 - o.x1),
            (Side::Bottom, o.y0 - s.y0),
            (Side::Top, s.y1 - o.y1),
        ] {
            if self.is_artificial(side) {
                gaps.push(g);
            }
        }
        let half = 0.5 * o.width().min(o.height());
        gaps.into_iter().fold(f64::INFINITY, f64::min) / half
    }

    /// Nodal values of a function on the `ω*` mesh.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        let active = self.mesh.active_nodes();
        (0..self.mesh.num_nodes())
            .map(|n| if active[n] { f(self.mesh.node_coord(n)) } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotFamily {
    PolyNeumann,
    NeumannEigen,
    HomogenizedTrace,
}

impl SnapshotFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SnapshotFamily::PolyNeumann => "poly-neumann",
            SnapshotFamily::NeumannEigen => "neumann-eigen",
            SnapshotFamily::HomogenizedTrace => "homogenized-trace",
        }
    }
}

/// A discrete A-harmonic function on `ω*`, mean-zero.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub family: SnapshotFamily,
    pub index: usize,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn label(&self) -> String {
        format!("{}-{}", self.family.name(), self.index)
    }
}

/// `(Re, Im)` of `z^k`.
fn zpow(z: (f64, f64), k: usize) -> (f64, f64) {
    let mut w = (1.0, 0.0);
    for _ in 0..k {
        w = (w.0 * z.0 - w.1 * z.1, w.0 * z.1 + w.1 * z.0);
    }
    w
}

/// Gradients of `Re z^k` and `Im z^k` in `z`-coordinates.
fn harmonic_gradients(z: (f64, f64), k: usize) -> ([f64; 2], [f64; 2]) {
    let (a, b) = zpow(z, k - 1);
    let k = k as f64;
    ([k * a, -k * b], [k * b, k * a])
}

/// The `index`-th harmonic polynomial `Re z^k, Im z^k, Re z^{k+1}, …` (k ≥ 1).
pub fn harmonic_polynomial(z: (f64, f64), index: usize) -> f64 {
    let k = index / 2 + 1;
    let w = zpow(z, k);
    if index % 2 == 0 { w.0 } else { w.1 }
}

/// Boundary load on `∂ω* ∩ Ω` shifted to exact discrete consistency.
fn consistent_flux(patch: &PatchPair, g: impl Fn(Point, Point) -> f64, selected: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut load = boundary_load(&patch.mesh, |s| patch.is_artificial(s), g);
    let w = boundary_weights(&patch.mesh, |s| patch.is_artificial(s));
    let raw: f64 = load.iter().map(|l| l.abs()).sum();
    let (labels, _) = patch.mesh.node_components();
    balance_components(&labels, selected, &mut load, &w);
    // a flux with vanishing mean-free part leaves only rounding noise
    if load.iter().map(|l| l.abs()).sum::<f64>() <= 1e-12 * raw {
        load.iter_mut().for_each(|l| *l = 0.0);
    }
    load
}

/// Neumann snapshots with fluxes of the harmonic polynomials `Re z^k`, `Im z^k`.
///
/// `z = (x − c)/L` with `c` the patch centre and `L` the patch half-width.
/// Physical sides carry zero flux.
pub fn snapshots_poly_neumann(patch: &PatchPair, m: usize) -> Result<Vec<Snapshot>> {
    if m == 0 {
        return Err(Error::invalid("snapshot count must be positive"));
    }
    let (c, l) = (patch.center, patch.scale());
    let flux = |index: usize| {
        let k = index / 2 + 1;
        let imag = index % 2 == 1;
        move |p: Point, n: Point| {
            let z = ((p[0] - c[0]) / l, (p[1] - c[1]) / l);
            let (gr, gi) = harmonic_gradients(z, k);
            let g = if imag { gi } else { gr };
            g[0] * n[0] + g[1] * n[1]
        }
    };
    if patch.clamps() {
        let fixed = patch.physical_nodes();
        let solver = DirichletSolver::new(&patch.mesh, &patch.k_star, &fixed)?;
        let zero = vec![0.0; solver.fixed_nodes().len()];
        return (0..m)
            .map(|index| {
                let load = consistent_flux(patch, flux(index), |c| solver.is_floating(c));
                let values = solver.solve(&load, &zero)?;
                Ok(Snapshot { family: SnapshotFamily::PolyNeumann, index, values })
            })
            .collect();
    }
    let solver = NeumannSolver::new(&patch.mesh, &patch.k_star)?;
    (0..m)
        .map(|index| {
            let values = solver.solve(&consistent_flux(patch, flux(index), |_| true))?;
            Ok(Snapshot { family: SnapshotFamily::PolyNeumann, index, values })
        })
        .collect()
}

/// Discrete Neumann eigenpairs of `(K, M)` on `ω*`, ascending.
#[derive(Debug, Clone)]
pub struct NeumannModes {
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Lowest `count` eigenpairs of the Neumann pencil (the constant included),
/// by shifted-inverse subspace iteration with Rayleigh–Ritz.
pub fn neumann_eigenpairs(patch: &PatchPair, count: usize) -> Result<NeumannModes> {
    let mesh = &patch.mesh;
    let active: Vec<usize> = {
        let a = mesh.active_nodes();
        (0..mesh.num_nodes()).filter(|&n| a[n]).collect()
    };
    let na = active.len();
    if count == 0 || count >= na {
        return Err(Error::invalid(format!("cannot compute {count} modes on {na} nodes")));
    }
    let k = patch.k_star.principal(&active);
    let m = assemble_mass(mesh).principal(&active);
    let shift = mesh.beta() / patch.omega_star.diam().powi(2);
    let shifted = add_scaled(&k, &m, shift);
    let chol = Cholesky::factor(&shifted)?;
    let p = (count + 8).min(na);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DMatrix::from_fn(na, p, |_, _| rng.gen_range(-1.0..1.0));
    let mut values = vec![f64::INFINITY; p];
    for _iter in 0..500 {
        // Y = (K + σM)⁻¹ M X
        let mut y = DMatrix::zeros(na, p);
        for c in 0..p {
            let col: Vec<f64> = x.column(c).iter().copied().collect();
            let mut mx = m.mul_vec(&col);
            chol.solve_in_place(&mut mx);
            y.column_mut(c).copy_from_slice(&mx);
        }
        let my = sparse_times(&m, &y);
        let sy = sparse_times(&shifted, &y);
        let s = y.transpose() * &my;
        let t = y.transpose() * &sy;
        let pairs = solve_pencil(&ReducedPencil::new(s, t)?, 1e-14)?;
        // μ = 1/(λ+σ) descending ⇒ λ ascending
        let lam: Vec<f64> = pairs.values.iter().map(|mu| 1.0 / mu - shift).collect();
        x = &y * &pairs.vectors;
        if x.ncols() < p {
            return Err(Error::Degenerate { requested: p, rank: x.ncols() });
        }
        let converged = (0..count).all(|i| (lam[i] - values[i]).abs() <= 1e-11 * (lam[i].abs() + shift));
        values = lam;
        if converged {
            break;
        }
    }
    let vectors = (0..count)
        .map(|c| {
            let mut v = vec![0.0; mesh.num_nodes()];
            for (r, &n) in active.iter().enumerate() {
                v[n] = x[(r, c)];
            }
            v
        })
        .collect();
    values.truncate(count);
    Ok(NeumannModes { eigenvalues: values.iter().map(|v| v.max(0.0)).collect(), vectors })
}

fn add_scaled(a: &CsrMatrix, b: &CsrMatrix, s: f64) -> CsrMatrix {
    let mut t = crate::fem::sparse::TripletBuilder::with_capacity(a.dim(), a.nnz() + b.nnz());
    for (i, j, v) in a.triplets() {
        t.push(i, j, v);
    }
    for (i, j, v) in b.triplets() {
        t.push(i, j, s * v);
    }
    t.build()
}

fn sparse_times(a: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let col: Vec<f64> = x.column(c).iter().copied().collect();
        out.column_mut(c).copy_from_slice(&a.mul_vec(&col));
    }
    out
}

/// A-harmonic extensions of the given nodal traces on `∂ω* ∩ Ω`.
///
/// Results are mean-zero unless the patch clamps its physical boundary to
/// zero, in which case the trace is zeroed there.
pub fn extend_traces(patch: &PatchPair, traces: &[Vec<f64>], family: SnapshotFamily) -> Result<Vec<Snapshot>> {
    let solver = DirichletSolver::new(&patch.mesh, &patch.k_star, &patch.clamped_nodes())?;
    let mut clamped = vec![false; patch.mesh.num_nodes()];
    if patch.clamps() {
        patch.physical_nodes().into_iter().for_each(|n| clamped[n] = true);
    }
    let zero = vec![0.0; patch.mesh.num_nodes()];
    traces
        .iter()
        .enumerate()
        .map(|(index, tr)| {
            let vals: Vec<f64> =
                solver.fixed_nodes().iter().map(|&n| if clamped[n] { 0.0 } else { tr[n] }).collect();
            let mut values = solver.solve(&zero, &vals)?;
            if !patch.clamps() {
                remove_mean(&patch.mesh, &mut values);
            }
            Ok(Snapshot { family, index, values })
        })
        .collect()
}

/// The first `n` non-constant Neumann eigenfunctions, replaced by the
/// A-harmonic extensions of their traces.
pub fn snapshots_neumann_eigen(patch: &PatchPair, n: usize) -> Result<Vec<Snapshot>> {
    if n == 0 {
        return Err(Error::invalid("mode count must be positive"));
    }
    let (_, components) = patch.mesh.node_components();
    let modes = neumann_eigenpairs(patch, n + components)?;
    let floor = 1e-8 * modes.eigenvalues[n + components - 1];
    let traces: Vec<Vec<f64>> = modes
        .eigenvalues
        .iter()
        .zip(modes.vectors)
        .filter(|(l, _)| **l > floor)
        .map(|(_, v)| v)
        .take(n)
        .collect();
    if traces.len() < n {
        return Err(Error::invalid("too few non-constant Neumann modes"));
    }
    extend_traces(patch, &traces, SnapshotFamily::NeumannEigen)
}

/// `A⁰`-harmonic polynomials with their traces imposed on `∂ω* ∩ Ω` and
/// extended A-harmonically.
pub fn homogenized_trace_space(patch: &PatchPair, a0: SymMat2, n: usize) -> Result<Vec<Snapshot>> {
    if !a0.is_spd() {
        return Err(Error::NotSpd(format!("{a0:?}")));
    }
    let traces: Vec<Vec<f64>> = (0..n)
        .map(|index| patch.interpolate(|p| a0_harmonic(a0, patch.center, patch.scale(), p, index)))
        .collect();
    extend_traces(patch, &traces, SnapshotFamily::HomogenizedTrace)
}

/// `index`-th `A⁰`-harmonic polynomial: a harmonic polynomial in the
/// coordinates `diag(a₁,a₂)^{-1/2} Rᵀ (x − c) / L`.
pub fn a0_harmonic(a0: SymMat2, center: Point, scale: f64, p: Point, index: usize) -> f64 {
    let (lo, hi, theta) = a0.eigen();
    let (s, c) = theta.sin_cos();
    let dx = (p[0] - center[0]) / scale;
    let dy = (p[1] - center[1]) / scale;
    // eigen() gives the angle of the eigenvector of `hi`.
    let xi = (c * dx + s * dy) / hi.sqrt();
    let eta = (-s * dx + c * dy) / lo.sqrt();
    let norm = lo.sqrt();
    harmonic_polynomial((xi * norm, eta * norm), index)
}

/// Local approximation space on one patch.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    /// Retained pencil eigenvalues, decreasing (empty for raw snapshot bases).
    pub eigenvalues: Vec<f64>,
    /// Mean-zero functions on the `ω*` mesh.
    pub functions: Vec<Vec<f64>>,
    pub n: usize,
    /// `√λ_{n+1}` when available.
    pub d_n_estimate: Option<f64>,
    pub includes_constant: bool,
    /// Particular solution absorbing boundary or source data.
    pub particular: Option<Vec<f64>>,
    pub retained_rank: usize,
}

impl LocalBasis {
    /// Basis spanned directly by snapshots (no spectral reduction).
    pub fn from_snapshots(snapshots: &[Snapshot], include_constant: bool) -> Self {
        LocalBasis {
            eigenvalues: vec![],
            functions: snapshots.iter().map(|s| s.values.clone()).collect(),
            n: snapshots.len(),
            d_n_estimate: None,
            includes_constant: include_constant,
            particular: None,
            retained_rank: snapshots.len(),
        }
    }

    /// Constants only.
    pub fn constant() -> Self {
        LocalBasis::from_snapshots(&[], true)
    }

    /// Number of shape functions on a connected patch, the constant included.
    pub fn dimension(&self) -> usize {
        self.functions.len() + usize::from(self.includes_constant)
    }

    /// Shape functions on the patch mesh: the constants (one indicator per
    /// connected component) then `functions`.
    pub fn shape_functions(&self, mesh: &Mesh) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dimension());
        if self.includes_constant {
            out.extend(component_indicators(mesh));
        }
        out.extend(self.functions.iter().cloned());
        out
    }

    pub fn with_particular(mut self, p: Vec<f64>) -> Self {
        self.particular = Some(p);
        self
    }
}

/// Indicator functions of the connected components of the active region.
pub fn component_indicators(mesh: &Mesh) -> Vec<Vec<f64>> {
    let (labels, count) = mesh.node_components();
    (0..count)
        .map(|c| labels.iter().map(|l| if *l == Some(c) { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Energy Gram `fᵢᵀ K fⱼ`.
pub fn gram(k: &CsrMatrix, fns: &[Vec<f64>]) -> DMatrix<f64> {
    let kf: Vec<Vec<f64>> = fns.iter().map(|f| k.mul_vec(f)).collect();
    let n = fns.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = fns[i].iter().zip(&kf[j]).map(|(a, b)| a * b).sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Restriction pencil `(S, T)` of a family: energies over `ω` and `ω*`.
pub fn restriction_pencil(patch: &PatchPair, fns: &[Vec<f64>]) -> Result<ReducedPencil> {
    ReducedPencil::new(gram(&patch.k_inner, fns), gram(&patch.k_star, fns))
}

fn combine(fns: &[Vec<f64>], coeffs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0; fns.first().map_or(0, |f| f.len())];
    for (f, c) in fns.iter().zip(coeffs) {
        if c != 0.0 {
            for (o, v) in out.iter_mut().zip(f) {
                *o += c * v;
            }
        }
    }
    out
}

/// Optimal `n`-dimensional space of the snapshot span for the restriction
/// `ω* → ω`: the top `n` Ritz functions of the restriction pencil.
pub fn optimal_basis(
    patch: &PatchPair,
    snapshots: &[Snapshot],
    n: usize,
    include_constant: bool,
    rank_threshold: f64,
) -> Result<LocalBasis> {
    let fns: Vec<Vec<f64>> = snapshots.iter().map(|s| s.values.clone()).collect();
    let pencil = restriction_pencil(patch, &fns)?;
    let pairs = solve_pencil(&pencil, rank_threshold)?;
    if pairs.retained_rank < n {
        return Err(Error::Degenerate { requested: n, rank: pairs.retained_rank });
    }
    let functions = (0..n)
        .map(|i| combine(&fns, pairs.vectors.column(i).iter().copied()))
        .collect();
    Ok(LocalBasis {
        d_n_estimate: pairs.values.get(n).map(|l| l.max(0.0).sqrt()),
        eigenvalues: pairs.values,
        functions,
        n,
        includes_constant: include_constant,
        particular: None,
        retained_rank: pairs.retained_rank,
    })
}

/// Data imposed on `∂Ω ∩ ω*` by a particular solution.
pub enum PhysicalData<'a> {
    /// Flux `n·A∇u = g(x, n)`.
    Flux(&'a dyn Fn(Point, Point) -> f64),
    /// Trace `u = g(x)`.
    Trace(&'a dyn Fn(Point) -> f64),
}

/// Mixed local problem on a boundary patch: `−div(A∇u) = f` in `ω*`, the
/// given data on `∂Ω ∩ ω*` and `u = 0` on `∂ω* ∩ Ω`.
pub fn particular_mixed(
    patch: &PatchPair,
    source: Option<&dyn Fn(Point) -> f64>,
    data: PhysicalData<'_>,
) -> Result<Vec<f64>> {
    if patch.kind != PatchKind::Boundary {
        return Err(Error::invalid("boundary particular solution needs a boundary patch"));
    }
    let nn = patch.mesh.num_nodes();
    let mut load = source.map_or_else(|| vec![0.0; nn], |f| source_load(&patch.mesh, f));
    let mut fixed = patch.artificial_nodes();
    let mut on_boundary = vec![false; nn];
    let trace = match data {
        PhysicalData::Flux(g) => {
            let gl = boundary_load(&patch.mesh, |s| !patch.is_artificial(s), g);
            load.iter_mut().zip(gl).for_each(|(l, g)| *l += g);
            None
        }
        PhysicalData::Trace(g) => {
            let phys = patch.physical_nodes();
            phys.iter().for_each(|&n| on_boundary[n] = true);
            fixed.extend(phys);
            fixed.sort_unstable();
            fixed.dedup();
            Some(g)
        }
    };
    if fixed.is_empty() {
        return NeumannSolver::new(&patch.mesh, &patch.k_star)?.solve(&load);
    }
    let solver = DirichletSolver::new(&patch.mesh, &patch.k_star, &fixed)?;
    let vals: Vec<f64> = solver
        .fixed_nodes()
        .iter()
        .map(|&n| match trace {
            Some(g) if on_boundary[n] => g(patch.mesh.node_coord(n)),
            _ => 0.0,
        })
        .collect();
    solver.solve(&load, &vals)
}

/// Particular solution of the mixed problem: flux `g` on `∂Ω ∩ ω*`,
/// zero on `∂ω* ∩ Ω`.
pub fn particular_boundary(patch: &PatchPair, g: impl Fn(Point, Point) -> f64) -> Result<Vec<f64>> {
    particular_mixed(patch, None, PhysicalData::Flux(&g))
}

/// Particular solution with trace `g_d` on `∂Ω ∩ ω*` and zero on
/// `∂ω* ∩ Ω`, A-harmonic inside.
pub fn particular_dirichlet(patch: &PatchPair, g_d: impl Fn(Point) -> f64) -> Result<Vec<f64>> {
    particular_mixed(patch, None, PhysicalData::Trace(&g_d))
}

/// Optimal basis on a boundary patch together with its particular solution.
pub fn optimal_basis_boundary(
    patch: &PatchPair,
    snapshots: &[Snapshot],
    n: usize,
    include_constant: bool,
    rank_threshold: f64,
    g: impl Fn(Point, Point) -> f64,
) -> Result<LocalBasis> {
    if patch.kind != PatchKind::Boundary {
        return Err(Error::invalid("patch is not a boundary patch"));
    }
    let up = particular_boundary(patch, g)?;
    Ok(optimal_basis(patch, snapshots, n, include_constant, rank_threshold)?.with_particular(up))
}

/// Local source solution with constant compensating flux.
#[derive(Debug, Clone)]
pub struct SourceParticular {
    pub values: Vec<f64>,
    /// Outward flux magnitude `∫f / |∂ω*|`.
    pub flux: f64,
}

/// Solves `−div(A∇u) = f` on `ω*` with constant outward flux `−c`,
/// `c = ∫f / |∂ω*|` (per connected component), normalized to zero mean.
pub fn particular_solution_source(patch: &PatchPair, f: impl Fn(Point) -> f64) -> Result<SourceParticular> {
    let mut load = source_load(&patch.mesh, f);
    let w = boundary_weights(&patch.mesh, |_| true);
    let total: f64 = load.iter().sum();
    let perimeter: f64 = w.iter().sum();
    if perimeter <= 0.0 {
        return Err(Error::invalid("patch has no flux boundary"));
    }
    let (labels, _) = patch.mesh.node_components();
    balance_components(&labels, |_| true, &mut load, &w);
    let values = NeumannSolver::new(&patch.mesh, &patch.k_star)?.solve(&load)?;
    Ok(SourceParticular { values, flux: total / perimeter })
}

/// Sum of `W_n` restrictions over nested rectangles `ω = ω_{N+1} ⊂ … ⊂ ω_1 = ω*`.
#[derive(Debug, Clone)]
pub struct IteratedSpace {
    /// Energy-orthonormal over `ω`, on the `ω*` mesh (zero outside each level).
    pub functions: Vec<Vec<f64>>,
    /// Outer rectangle of each level after rounding to mesh lines.
    pub levels: Vec<Rect>,
}

pub fn iterated_space(patch: &PatchPair, n: usize, levels: usize) -> Result<IteratedSpace> {
    if levels == 0 {
        return Err(Error::invalid("at least one level required"));
    }
    let (o, s) = (patch.omega, patch.omega_star);
    let (hx, hy) = patch.mesh.spacing();
    let m = patch.mesh.rect();
    let snap = |v: f64, origin: f64, h: f64, up: bool| {
        let t = (v - origin) / h;
        let r = if (t - t.round()).abs() < 1e-9 { t.round() } else if up { t.ceil() } else { t.floor() };
        origin + r * h
    };
    let mut all = Vec::new();
    let mut rects = Vec::new();
    for j in 1..=levels {
        let t = (levels + 1 - j) as f64 / levels as f64;
        let r = Rect {
            x0: snap(o.x0 + t * (s.x0 - o.x0), m.x0, hx, false),
            x1: snap(o.x1 + t * (s.x1 - o.x1), m.x0, hx, true),
            y0: snap(o.y0 + t * (s.y0 - o.y0), m.y0, hy, false),
            y1: snap(o.y1 + t * (s.y1 - o.y1), m.y0, hy, true),
        };
        let child = patch.child(r)?;
        let map = patch.mesh.node_map_from(&child.mesh)?;
        for sn in snapshots_neumann_eigen(&child, n)? {
            let mut v = vec![0.0; patch.mesh.num_nodes()];
            for (cn, &pn) in map.iter().enumerate() {
                v[pn] = sn.values[cn];
            }
            all.push(v);
        }
        rects.push(child.omega_star);
    }
    let proj = Projector::new(&patch.k_inner, &all, 1e-10)?;
    Ok(IteratedSpace { functions: proj.basis, levels: rects })
}

/// Energy-orthogonal projection onto a span.
#[derive(Debug, Clone)]
pub struct Projector<'a> {
    k: &'a CsrMatrix,
    /// Orthonormal in the `k` inner product.
    pub basis: Vec<Vec<f64>>,
    kbasis: Vec<Vec<f64>>,
}

impl<'a> Projector<'a> {
    pub fn new(k: &'a CsrMatrix, span: &[Vec<f64>], rank_threshold: f64) -> Result<Self> {
        if span.is_empty() {
            return Ok(Projector { k, basis: vec![], kbasis: vec![] });
        }
        let g = gram(k, span);
        let f = filter_rank(&g, rank_threshold)?;
        let basis: Vec<Vec<f64>> = (0..f.rank)
            .map(|c| combine(span, f.transform.column(c).iter().copied()))
            .collect();
        let kbasis = basis.iter().map(|b| k.mul_vec(b)).collect();
        Ok(Projector { k, basis, kbasis })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        let coeffs: Vec<f64> = self
            .kbasis
            .iter()
            .map(|kb| kb.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect();
        let mut out = vec![0.0; u.len()];
        for (b, c) in self.basis.iter().zip(coeffs) {
            for (o, v) in out.iter_mut().zip(b) {
                *o += c * v;
            }
        }
        out
    }

    /// `‖u − Pu‖` in the `k` energy.
    pub fn error(&self, u: &[f64]) -> f64 {
        let p = self.project(u);
        let r: Vec<f64> = u.iter().zip(&p).map(|(a, b)| a - b).collect();
        self.k.inner(&r, &r).max(0.0).sqrt()
    }
}

/// `inf_{χ ∈ span} ‖u − χ‖_E(ω)`.
pub fn best_approx_error(patch: &PatchPair, u: &[f64], span: &[Vec<f64>]) -> Result<f64> {
    Ok(Projector::new(&patch.k_inner, span, DEFAULT_RANK_THRESHOLD)?.error(u))
}

/// `sup_{u ∈ span(family)} inf_{χ ∈ approx} ‖u − χ‖_E(ω) / ‖u‖_E(ω*)`.
pub fn span_sup_error(patch: &PatchPair, family: &[Vec<f64>], approx: &[Vec<f64>]) -> Result<f64> {
    let proj = Projector::new(&patch.k_inner, approx, DEFAULT_RANK_THRESHOLD)?;
    let residuals: Vec<Vec<f64>> = family
        .iter()
        .map(|u| {
            let p = proj.project(u);
            u.iter().zip(&p).map(|(a, b)| a - b).collect()
        })
        .collect();
    let pencil = ReducedPencil::new(gram(&patch.k_inner, &residuals), gram(&patch.k_star, family))?;
    let pairs = solve_pencil(&pencil, DEFAULT_RANK_THRESHOLD)?;
    Ok(pairs.values.first().copied().unwrap_or(0.0).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::norm::{norm, NormKind};
    use crate::fem::solve::{integral_mean, relative_residual};
    use crate::microstructure::{constant_field, CoefficientField};

    fn global(field: &CoefficientField, n: usize) -> Mesh {
        Mesh::build(Rect::unit(), n, n, field).unwrap()
    }

    fn two_phase(seed: u64, res: usize, contrast: f64) -> CoefficientField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..res * res)
            .map(|_| SymMat2::scalar(if rng.gen_bool(0.5) { 1.0 } else { contrast }))
            .collect();
        CoefficientField::from_cells(Rect::unit(), res, res, cells, None).unwrap()
    }

    fn centered_pair(field: &CoefficientField, n: usize) -> PatchPair {
        PatchPair::standalone(global(field, n), Rect::new(1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0).unwrap()).unwrap()
    }

    fn values(s: &[Snapshot]) -> Vec<Vec<f64>> {
        s.iter().map(|s| s.values.clone()).collect()
    }

    #[test]
    fn patch_classification() {
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), 4, 4).unwrap();
        let g = global(&f, 16);
        let p = PatchPair::from_global(&g, Rect::new(0.25, 0.75, 0.25, 0.75).unwrap(), Rect::new(0.125, 0.875, 0.125, 0.875).unwrap()).unwrap();
        assert_eq!(p.kind, PatchKind::Interior);
        let p = PatchPair::from_global(&g, Rect::new(-0.25, 0.25, 0.25, 0.75).unwrap(), Rect::new(-0.5, 0.5, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(p.kind, PatchKind::Boundary);
        assert_eq!(p.omega, Rect::new(0.0, 0.25, 0.25, 0.75).unwrap());
        assert!(p.physical.contains(&Side::Left) && p.physical.contains(&Side::Top));
        assert!(PatchPair::from_global(&g, Rect::unit(), Rect::new(0.0, 0.5, 0.0, 0.5).unwrap()).is_err());
    }

    #[test]
    fn linear_snapshots_are_coordinates() {
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), 12, 12).unwrap();
        let p = centered_pair(&f, 48);
        let s = snapshots_poly_neumann(&p, 2).unwrap();
        for (k, sn) in s.iter().enumerate() {
            let mut exact = p.interpolate(|q| q[k]);
            remove_mean(&p.mesh, &mut exact);
            let err = sn.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "snapshot {k}: {err}");
            let e = norm(&p.mesh, &sn.values, NormKind::Energy, None).unwrap();
            assert!((e - 1.0).abs() < 1e-10);
            assert!(integral_mean(&p.mesh, &sn.values).abs() < 1e-13);
        }
    }

    #[test]
    fn scaled_coefficient_scales_snapshots() {
        let f = two_phase(5, 12, 10.0);
        let p = centered_pair(&f, 48);
        let p3 = centered_pair(&f.scaled(3.0).unwrap(), 48);
        let s = snapshots_poly_neumann(&p, 6).unwrap();
        let s3 = snapshots_poly_neumann(&p3, 6).unwrap();
        for (a, b) in s.iter().zip(&s3) {
            let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x / 3.0 - y).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn polynomial_basis_dimension() {
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), 12, 12).unwrap();
        let p = centered_pair(&f, 24);
        for k in 1..=4 {
            let s = snapshots_poly_neumann(&p, 2 * k).unwrap();
            let b = LocalBasis::from_snapshots(&s, true);
            assert_eq!(b.dimension(), 2 * k + 1);
            let shapes = b.shape_functions(&p.mesh);
            assert!(shapes[0].iter().all(|&v| v == 1.0));
            assert_eq!(shapes.iter().filter(|s| s.iter().all(|&v| v == 1.0)).count(), 1);
        }
    }

    #[test]
    fn neumann_laplacian_spectrum() {
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), 4, 4).unwrap();
        let p = PatchPair::standalone(global(&f, 64), Rect::new(0.25, 0.75, 0.25, 0.75).unwrap()).unwrap();
        let modes = neumann_eigenpairs(&p, 6).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!(modes.eigenvalues[0].abs() < 1e-8);
        for (i, want) in [pi2, pi2, 2.0 * pi2, 4.0 * pi2, 4.0 * pi2].iter().enumerate() {
            let got = modes.eigenvalues[i + 1];
            assert!((got - want).abs() / want < 0.01, "mode {}: {got} vs {want}", i + 1);
        }
        // Dirichlet principle: the harmonic extension of a trace has the
        // least energy among functions sharing it.
        let w = snapshots_neumann_eigen(&p, 4).unwrap();
        for (sn, v) in w.iter().zip(&modes.vectors[1..]) {
            let ev = norm(&p.mesh, v, NormKind::Energy, None).unwrap();
            let ew = norm(&p.mesh, &sn.values, NormKind::Energy, None).unwrap();
            assert!(ew <= ev * (1.0 + 1e-12), "{ew} > {ev}");
        }
    }

    #[test]
    fn coincident_domains_give_unit_eigenvalues() {
        let f = two_phase(9, 12, 20.0);
        let p = PatchPair::standalone(global(&f, 48), Rect::unit()).unwrap();
        let s = snapshots_poly_neumann(&p, 8).unwrap();
        let b = optimal_basis(&p, &s, 4, true, DEFAULT_RANK_THRESHOLD).unwrap();
        assert!(b.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-9));
        assert!((b.d_n_estimate.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eigenvalues_sorted_and_bounded() {
        for seed in 0..4 {
            let f = two_phase(seed, 12, 50.0);
            let p = centered_pair(&f, 48);
            let s = snapshots_poly_neumann(&p, 16).unwrap();
            let b = optimal_basis(&p, &s, 6, true, DEFAULT_RANK_THRESHOLD).unwrap();
            for w in b.eigenvalues.windows(2) {
                assert!(w[0] >= w[1]);
            }
            assert!(b.eigenvalues.iter().all(|&l| (-1e-9..=1.0 + 1e-9).contains(&l)));
            // T-orthonormal shape functions
            let t = gram(p.k_star(), &b.functions);
            assert!((t - DMatrix::identity(6, 6)).amax() < 1e-8);
        }
    }

    #[test]
    fn eigenvalues_scale_invariant() {
        let f = two_phase(2, 12, 30.0);
        let b1 = {
            let p = centered_pair(&f, 48);
            optimal_basis(&p, &snapshots_poly_neumann(&p, 12).unwrap(), 6, true, 1e-12).unwrap()
        };
        let b2 = {
            let p = centered_pair(&f.scaled(17.0).unwrap(), 48);
            optimal_basis(&p, &snapshots_poly_neumann(&p, 12).unwrap(), 6, true, 1e-12).unwrap()
        };
        for (a, b) in b1.eigenvalues.iter().zip(&b2.eigenvalues).take(8) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn n_width_certificate_and_optimality() {
        let f = two_phase(11, 12, 25.0);
        let p = centered_pair(&f, 48);
        let snaps = values(&snapshots_poly_neumann(&p, 14).unwrap());
        let n = 4;
        let b = optimal_basis(&p, &snapshotize(&snaps), n, false, DEFAULT_RANK_THRESHOLD).unwrap();
        let dn = b.d_n_estimate.unwrap();
        let sup = span_sup_error(&p, &snaps, &b.functions).unwrap();
        assert!((sup - dn).abs() < 1e-6, "{sup} vs {dn}");
        for s in &snaps {
            let e = best_approx_error(&p, s, &b.functions).unwrap();
            let t = p.k_star().inner(s, s).sqrt();
            assert!(e / t <= dn + 1e-6);
        }
        // the (n+1)-th Ritz function is approximated with ratio √λ_{n+1}
        let b5 = optimal_basis(&p, &snapshotize(&snaps), n + 1, false, DEFAULT_RANK_THRESHOLD).unwrap();
        let next = &b5.functions[n];
        let e = best_approx_error(&p, next, &b.functions).unwrap();
        assert!((e / p.k_star().inner(next, next).sqrt() - dn).abs() < 1e-6);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let comp: Vec<Vec<f64>> = (0..n)
                .map(|_| combine(&snaps, (0..snaps.len()).map(|_| rng.gen_range(-1.0..1.0))))
                .collect();
            let e = span_sup_error(&p, &snaps, &comp).unwrap();
            assert!(e >= sup - 1e-8, "competitor {e} beat optimal {sup}");
        }
    }

    fn snapshotize(v: &[Vec<f64>]) -> Vec<Snapshot> {
        v.iter()
            .enumerate()
            .map(|(index, values)| Snapshot { family: SnapshotFamily::PolyNeumann, index, values: values.clone() })
            .collect()
    }

    #[test]
    fn best_approximation_properties() {
        let f = two_phase(13, 12, 10.0);
        let p = centered_pair(&f, 48);
        let snaps = values(&snapshots_poly_neumann(&p, 10).unwrap());
        let inside = combine(&snaps[..3], [0.3, -1.2, 2.0].into_iter());
        let e = best_approx_error(&p, &inside, &snaps[..3]).unwrap();
        assert!(e <= 1e-9 * p.k_inner().inner(&inside, &inside).sqrt());
        let u = combine(&snaps, (0..10).map(|i| 1.0 / (i as f64 + 1.0)));
        let full = p.k_inner().inner(&u, &u).sqrt();
        assert_eq!(best_approx_error(&p, &u, &[]).unwrap(), full);
        let mut last = f64::INFINITY;
        for m in 0..=10 {
            let e = best_approx_error(&p, &u, &snaps[..m]).unwrap();
            assert!(e <= last + 1e-12);
            last = e;
        }
        assert!(last < 1e-8 * full);
    }

    #[test]
    fn boundary_patch_particular_solution() {
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), 8, 8).unwrap();
        let g = global(&f, 32);
        let p = PatchPair::from_global(&g, Rect::new(0.0, 0.25, 0.25, 0.5).unwrap(), Rect::new(0.0, 0.5, 0.0, 0.75).unwrap()).unwrap();
        assert_eq!(p.kind, PatchKind::Boundary);
        let zero = particular_boundary(&p, |_, _| 0.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let gq = |q: Point, n: Point| 2.0 * q[0] * n[0] - 2.0 * q[1] * n[1];
        let up = particular_boundary(&p, gq).unwrap();
        let load = boundary_load(&p.mesh, |s| !p.is_artificial(s), gq);
        let fixed = p.artificial_nodes();
        let free: Vec<usize> = (0..p.mesh.num_nodes()).filter(|n| !fixed.contains(n)).collect();
        assert!(relative_residual(p.k_star(), &up, &load, &free) <= 1e-10);
        // u_p plus the harmonic correction with trace x²−y² reproduces x²−y²
        let exact = p.interpolate(|q| q[0] * q[0] - q[1] * q[1]);
        let tr: Vec<f64> = fixed.iter().map(|&n| exact[n]).collect();
        let corr = DirichletSolver::new(&p.mesh, p.k_star(), &fixed).unwrap().solve(&vec![0.0; exact.len()], &tr).unwrap();
        let err = up.iter().zip(&corr).zip(&exact).map(|((a, b), c)| (a + b - c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");

        let s = snapshots_poly_neumann(&p, 8).unwrap();
        let b = optimal_basis_boundary(&p, &s, 4, true, DEFAULT_RANK_THRESHOLD, gq).unwrap();
        assert!(b.particular.is_some());
        assert!(b.eigenvalues.iter().all(|&l| (-1e-9..=1.0 + 1e-9).contains(&l)));
        // zero discrete flux on the physical boundary
        let art: Vec<bool> = {
            let mut a = vec![false; p.mesh.num_nodes()];
            fixed.iter().for_each(|&n| a[n] = true);
            a
        };
        let phys = p.mesh.boundary_nodes(|s| !p.is_artificial(s));
        for psi in &b.functions {
            let r = p.k_star().mul_vec(psi);
            let scale = p.k_star().norm_inf() * psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for &nd in phys.iter().filter(|&&nd| !art[nd]) {
                assert!(r[nd].abs() <= 1e-8 * scale);
            }
        }
        let interior = centered_pair(&f, 24);
        assert!(particular_boundary(&interior, gq).is_err());
    }

    #[test]
    fn zero_trace_boundary_patch() {
        let f = two_phase(17, 8, 5.0);
        let g = global(&f, 32);
        let p = PatchPair::from_global(&g, Rect::new(0.0, 0.25, 0.25, 0.5).unwrap(), Rect::new(0.0, 0.5, 0.0, 0.75).unwrap())
            .unwrap()
            .with_zero_trace();
        assert!(p.clamps());
        let phys = p.physical_nodes();
        let mut snaps = snapshots_poly_neumann(&p, 6).unwrap();
        snaps.extend(snapshots_neumann_eigen(&p, 3).unwrap());
        for s in &snaps {
            assert!(phys.iter().all(|&n| s.values[n] == 0.0), "{}", s.label());
            assert!(s.values.iter().any(|v| v.abs() > 1e-6));
        }
        let up = particular_dirichlet(&p, |q| 1.0 + q[0] * q[1]).unwrap();
        for &n in &phys {
            let q = p.mesh.node_coord(n);
            assert!((up[n] - (1.0 + q[0] * q[1])).abs() < 1e-14);
        }
        let art = p.artificial_nodes();
        assert!(art.iter().filter(|n| !phys.contains(n)).all(|&n| up[n] == 0.0));
    }

    #[test]
    fn source_particular_solution() {
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), 8, 8).unwrap();
        let p = centered_pair(&f, 24);
        let z = particular_solution_source(&p, |_| 0.0).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0) && z.flux == 0.0);
        let s = particular_solution_source(&p, |_| 1.0).unwrap();
        assert!((s.flux - 0.25).abs() < 1e-14);
        let mut load = source_load(&p.mesh, |_| 1.0);
        let w = boundary_weights(&p.mesh, |_| true);
        load.iter_mut().zip(&w).for_each(|(l, w)| *l -= 0.25 * w);
        let all: Vec<usize> = (0..p.mesh.num_nodes()).collect();
        assert!(relative_residual(p.k_star(), &s.values, &load, &all) <= 1e-10);
    }

    #[test]
    fn iterated_space_levels() {
        let f = two_phase(21, 12, 10.0);
        let p = centered_pair(&f, 48);
        let one = iterated_space(&p, 4, 1).unwrap();
        assert_eq!(one.levels, vec![p.omega_star]);
        let w = values(&snapshots_neumann_eigen(&p, 4).unwrap());
        let u = values(&snapshots_poly_neumann(&p, 12).unwrap());
        for s in &u {
            let a = best_approx_error(&p, s, &one.functions).unwrap();
            let b = best_approx_error(&p, s, &w).unwrap();
            assert!((a - b).abs() <= 1e-8 * p.k_inner().inner(s, s).sqrt());
        }
        let three = iterated_space(&p, 4, 3).unwrap();
        assert_eq!(three.levels.len(), 3);
        assert!(three.functions.len() <= 12);
        for s in &u {
            let a = best_approx_error(&p, s, &three.functions).unwrap();
            let b = best_approx_error(&p, s, &one.functions).unwrap();
            // span includes the first level
            assert!(a <= b + 1e-8 * p.k_inner().inner(s, s).sqrt());
        }
    }

    #[test]
    fn homogenized_traces() {
        // A⁰ = Aᵉ = I: traces of harmonic polynomials extend to themselves.
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), 12, 12).unwrap();
        let p = centered_pair(&f, 48);
        let v = homogenized_trace_space(&p, SymMat2::IDENTITY, 4).unwrap();
        let mut x = p.interpolate(|q| (q[0] - 0.5) / 0.5);
        remove_mean(&p.mesh, &mut x);
        let err = v[0].values.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);

        // Aᵉ = A⁰ anisotropic: extension reproduces the A⁰-harmonic polynomial
        // up to discretization.
        let a0 = SymMat2::rotated_diag(3.0, 1.0, 0.4);
        let fa = constant_field(a0, Rect::unit(), 12, 12).unwrap();
        let pa = centered_pair(&fa, 48);
        let v = homogenized_trace_space(&pa, a0, 4).unwrap();
        for (idx, sn) in v.iter().enumerate() {
            let mut exact = pa.interpolate(|q| a0_harmonic(a0, pa.center, pa.scale(), q, idx));
            remove_mean(&pa.mesh, &mut exact);
            let diff: Vec<f64> = sn.values.iter().zip(&exact).map(|(a, b)| a - b).collect();
            let rel = pa.k_star().inner(&diff, &diff).sqrt() / pa.k_star().inner(&exact, &exact).sqrt();
            assert!(rel < 2e-2, "index {idx}: {rel}");
        }
    }

    #[test]
    fn a0_harmonic_polynomials_are_a0_harmonic() {
        let a0 = SymMat2::rotated_diag(5.0, 0.5, -1.1);
        let h = 1e-3;
        for idx in 0..8 {
            let u = |x: f64, y: f64| a0_harmonic(a0, [0.1, -0.2], 1.3, [x, y], idx);
            let (x, y) = (0.37, 0.21);
            let uxx = (u(x + h, y) - 2.0 * u(x, y) + u(x - h, y)) / (h * h);
            let uyy = (u(x, y + h) - 2.0 * u(x, y) + u(x, y - h)) / (h * h);
            let uxy = (u(x + h, y + h) - u(x + h, y - h) - u(x - h, y + h) + u(x - h, y - h)) / (4.0 * h * h);
            let l = a0.a11 * uxx + 2.0 * a0.a12 * uxy + a0.a22 * uyy;
            assert!(l.abs() < 1e-4, "index {idx}: {l}");
        }
    }
}
