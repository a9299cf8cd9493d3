//! Partition-of-unity cover, global GFEM trial space, Galerkin solve and
//! error evaluation.
//!
//! Global shape functions are nodal products `φ_i ξ_i^{[j]}` on the global
//! fine mesh. The coarse grid carries bilinear hat functions; patch `i`
//! has `ω_i` equal to the support of its hat and `ω_i*` obtained by
//! extending `ω_i` by a fixed number of coarse cells, both clipped to `Ω`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_stiffness, boundary_load, source_load};
use crate::fem::element;
use crate::fem::mesh::{Mesh, Side};
use crate::fem::norm::{norm, norm_masked, NormKind};
use crate::fem::solve::{remove_mean, DirichletSolver, NeumannSolver};
use crate::fem::sparse::{Cholesky, CsrMatrix, TripletBuilder};
use crate::geometry::{Point, Rect, GRID_TOL};
use crate::localspace::{
    component_indicators, gram, optimal_basis, particular_mixed, particular_solution_source, snapshots_neumann_eigen,
    snapshots_poly_neumann, LocalBasis, PatchKind, PatchPair, PhysicalData, Projector,
};
use crate::microstructure::{clip_inclusions, CoefficientField};
use crate::spectral::filter_rank;

pub type FluxFn = Arc<dyn Fn(Point, Point) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryCondition {
    /// `n·A∇u = g(x, n)` on `∂Ω`.
    Neumann(FluxFn),
    /// `u = g(x)` on `∂Ω`.
    Dirichlet(ScalarFn),
}

/// `−div(A∇u) = f` on the field's domain with boundary data.
#[derive(Clone)]
pub struct Problem {
    pub field: CoefficientField,
    pub source: Option<ScalarFn>,
    pub bc: BoundaryCondition,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bc = match self.bc {
            BoundaryCondition::Neumann(_) => "neumann",
            BoundaryCondition::Dirichlet(_) => "dirichlet",
        };
        f.debug_struct("Problem")
            .field("domain", &self.field.domain())
            .field("source", &self.source.is_some())
            .field("bc", &bc)
            .finish()
    }
}

impl Problem {
    pub fn neumann(field: CoefficientField, g: impl Fn(Point, Point) -> f64 + Send + Sync + 'static) -> Self {
        Problem { field, source: None, bc: BoundaryCondition::Neumann(Arc::new(g)) }
    }

    pub fn dirichlet(field: CoefficientField, g: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Problem { field, source: None, bc: BoundaryCondition::Dirichlet(Arc::new(g)) }
    }

    pub fn with_source(mut self, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(Arc::new(f));
        self
    }

    pub fn domain(&self) -> Rect {
        self.field.domain()
    }

    pub fn is_neumann(&self) -> bool {
        matches!(self.bc, BoundaryCondition::Neumann(_))
    }

    /// Fine-mesh load `∫ f v + ∫_{∂Ω} g v` (the flux term only for Neumann data).
    pub fn load(&self, mesh: &Mesh) -> Vec<f64> {
        let mut b = match &self.source {
            Some(f) => source_load(mesh, |p| f(p)),
            None => vec![0.0; mesh.num_nodes()],
        };
        if let BoundaryCondition::Neumann(g) = &self.bc {
            let gl = boundary_load(mesh, |s| s != Side::Mask, |p, n| g(p, n));
            b.iter_mut().zip(gl).for_each(|(a, g)| *a += g);
        }
        b
    }
}

/// Direct FEM solve of `problem` on `mesh` (mean-zero for Neumann data).
pub fn direct_solve(problem: &Problem, mesh: &Mesh) -> Result<Vec<f64>> {
    let k = assemble_stiffness(mesh);
    let load = problem.load(mesh);
    match &problem.bc {
        BoundaryCondition::Neumann(_) => NeumannSolver::new(mesh, &k)?.solve(&load),
        BoundaryCondition::Dirichlet(g) => {
            let fixed = mesh.boundary_nodes(|s| s != Side::Mask);
            let solver = DirichletSolver::new(mesh, &k, &fixed)?;
            let vals: Vec<f64> = solver.fixed_nodes().iter().map(|&n| g(mesh.node_coord(n))).collect();
            solver.solve(&load, &vals)
        }
    }
}

/// Coarse-grid parameters of the cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverSpec {
    /// Coarse cells per direction.
    pub m: usize,
    /// Coarse cells added on each side of `ω_i` to form `ω_i*`.
    pub star_cells: usize,
}

impl Default for CoverSpec {
    fn default() -> Self {
        CoverSpec { m: 16, star_cells: 2 }
    }
}

/// Overlapping cover `{(ω_i, ω_i*)}` with its hat-function partition of unity.
#[derive(Debug, Clone)]
pub struct Cover {
    pub domain: Rect,
    pub m: usize,
    /// Coarse cell size.
    pub coarse: (f64, f64),
    /// Coarse node of each patch.
    pub nodes: Vec<(usize, usize)>,
    pub omegas: Vec<Rect>,
    pub stars: Vec<Rect>,
    pub kinds: Vec<PatchKind>,
}

impl Cover {
    /// Builds the cover for a fine mesh nesting the `m × m` coarse grid.
    ///
    /// `m = 1` gives a single patch `ω = ω* = Ω` with `φ ≡ 1`.
    pub fn build(fine: &Mesh, spec: CoverSpec) -> Result<Self> {
        let domain = fine.rect();
        let m = spec.m;
        let (nx, ny) = fine.dims();
        if m == 0 || nx % m != 0 || ny % m != 0 {
            return Err(Error::Misaligned(format!("fine mesh {nx}×{ny} does not nest a {m}×{m} coarse grid")));
        }
        let coarse = (domain.width() / m as f64, domain.height() / m as f64);
        if m == 1 {
            return Ok(Cover {
                domain,
                m,
                coarse,
                nodes: vec![(0, 0)],
                omegas: vec![domain],
                stars: vec![domain],
                kinds: vec![PatchKind::Boundary],
            });
        }
        let (hx, hy) = coarse;
        let s = spec.star_cells as f64;
        let tol = GRID_TOL * domain.diam();
        let mut nodes = Vec::new();
        let mut omegas = Vec::new();
        let mut stars = Vec::new();
        let mut kinds = Vec::new();
        for j in 0..=m {
            for i in 0..=m {
                let c = [domain.x0 + i as f64 * hx, domain.y0 + j as f64 * hy];
                let om = Rect { x0: c[0] - hx, x1: c[0] + hx, y0: c[1] - hy, y1: c[1] + hy };
                let st = Rect {
                    x0: c[0] - (1.0 + s) * hx,
                    x1: c[0] + (1.0 + s) * hx,
                    y0: c[1] - (1.0 + s) * hy,
                    y1: c[1] + (1.0 + s) * hy,
                };
                let om = om.intersect(&domain).expect("coarse node lies in the domain");
                let st = st.intersect(&domain).expect("coarse node lies in the domain");
                let touches = (st.x0 - domain.x0).abs() <= tol
                    || (st.x1 - domain.x1).abs() <= tol
                    || (st.y0 - domain.y0).abs() <= tol
                    || (st.y1 - domain.y1).abs() <= tol;
                nodes.push((i, j));
                omegas.push(om);
                stars.push(st);
                kinds.push(if touches { PatchKind::Boundary } else { PatchKind::Interior });
            }
        }
        Ok(Cover { domain, m, coarse, nodes, omegas, stars, kinds })
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// `φ_i(p)`.
    pub fn pu(&self, i: usize, p: Point) -> f64 {
        if self.m == 1 {
            return 1.0;
        }
        let (a, b) = self.nodes[i];
        let tx = (p[0] - (self.domain.x0 + a as f64 * self.coarse.0)) / self.coarse.0;
        let ty = (p[1] - (self.domain.y0 + b as f64 * self.coarse.1)) / self.coarse.1;
        (1.0 - tx.abs()).max(0.0) * (1.0 - ty.abs()).max(0.0)
    }

    /// Whether `ω_i` meets `∂Ω`.
    pub fn omega_touches_boundary(&self, i: usize) -> bool {
        let (o, d) = (&self.omegas[i], &self.domain);
        let tol = GRID_TOL * d.diam();
        (o.x0 - d.x0).abs() <= tol
            || (o.x1 - d.x1).abs() <= tol
            || (o.y0 - d.y0).abs() <= tol
            || (o.y1 - d.y1).abs() <= tol
    }

    /// Patch pair `i` on the fine mesh of `field`, with inclusions meeting
    /// `∂ω_i*` replaced by matrix material.
    pub fn patch(&self, i: usize, fine: &Mesh, field: &CoefficientField, zero_trace: bool) -> Result<PatchPair> {
        let star = self.stars[i];
        let (i0, i1, j0, j1) = fine.element_range(&star)?;
        let clipped = clip_inclusions(field, &star)?;
        let local = Mesh::build(star, i1 - i0, j1 - j0, &clipped)?;
        let p = PatchPair::within(&local, self.domain, self.omegas[i], star)?;
        Ok(if zero_trace { p.with_zero_trace() } else { p })
    }
}

/// Measured partition-of-unity properties on the fine nodes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PuReport {
    /// `max |Σ φ_i − 1|`.
    pub sum_defect: f64,
    pub min_value: f64,
    /// Measured `C₁ = max φ_i`.
    pub c1: f64,
    /// Measured `C₂ = max_i max|∇φ_i| diam(ω_i)`.
    pub c2: f64,
    /// Largest number of `ω_i` containing a fine element.
    pub kappa: usize,
    /// `φ_i` vanishes at every fine node outside `ω_i`.
    pub support_ok: bool,
}

pub fn pu_report(cover: &Cover, fine: &Mesh) -> PuReport {
    let nn = fine.num_nodes();
    let mut sum = vec![0.0; nn];
    let mut min_value = f64::INFINITY;
    let mut c1 = 0.0f64;
    let mut c2 = 0.0f64;
    let mut support_ok = true;
    let mut count = vec![0usize; fine.num_elements()];
    let (hx, hy) = fine.spacing();
    for i in 0..cover.len() {
        let om = cover.omegas[i];
        let vals: Vec<f64> = (0..nn).map(|n| cover.pu(i, fine.node_coord(n))).collect();
        for n in 0..nn {
            let v = vals[n];
            sum[n] += v;
            min_value = min_value.min(v);
            c1 = c1.max(v);
            let p = fine.node_coord(n);
            let inside = p[0] > om.x0 + GRID_TOL && p[0] < om.x1 - GRID_TOL && p[1] > om.y0 + GRID_TOL && p[1] < om.y1 - GRID_TOL;
            let on_domain_edge = fine.rect().boundary_distance(p) <= GRID_TOL;
            if !inside && v != 0.0 && !(on_domain_edge && om.contains(p)) {
                support_ok = false;
            }
        }
        let mut gmax = 0.0f64;
        for e in 0..fine.num_elements() {
            let [a, b, c, d] = fine.element_nodes(e);
            let (u0, u1, u2, u3) = (vals[a], vals[b], vals[c], vals[d]);
            if u0 == 0.0 && u1 == 0.0 && u2 == 0.0 && u3 == 0.0 {
                continue;
            }
            if om.contains(fine.element_center(e)) {
                count[e] += 1;
            }
            // corner gradients of the bilinear interpolant
            for (xi, eta) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
                let gx = ((u1 - u0) * (1.0 - eta) + (u2 - u3) * eta) / hx;
                let gy = ((u3 - u0) * (1.0 - xi) + (u2 - u1) * xi) / hy;
                gmax = gmax.max(gx.hypot(gy));
            }
        }
        c2 = c2.max(gmax * om.diam());
    }
    let sum_defect = sum.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    PuReport { sum_defect, min_value, c1, c2, kappa: count.into_iter().max().unwrap_or(0), support_ok }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    /// Constants only.
    Constant,
    /// `n` polynomial-flux snapshots used directly.
    Polynomial,
    /// Top `n` Ritz functions of `snapshots` polynomial-flux snapshots.
    Optimal,
    /// `n` extended Neumann eigenfunction traces.
    NeumannEigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    /// Local functions besides the constant.
    pub n: usize,
    /// Snapshot count for the optimal family.
    pub snapshots: usize,
    pub rank_threshold: f64,
    /// Local particular solutions for the source and boundary data.
    #[serde(default = "default_true")]
    pub particular: bool,
}

fn default_true() -> bool {
    true
}

impl BasisSpec {
    pub fn without_particular(mut self) -> Self {
        self.particular = false;
        self
    }

    pub fn polynomial(n: usize) -> Self {
        BasisSpec { family: BasisFamily::Polynomial, n, snapshots: n, rank_threshold: 1e-12, particular: true }
    }

    pub fn optimal(n: usize, snapshots: usize) -> Self {
        BasisSpec { family: BasisFamily::Optimal, n, snapshots, rank_threshold: 1e-12, particular: true }
    }

    pub fn constant() -> Self {
        BasisSpec { family: BasisFamily::Constant, n: 0, snapshots: 0, rank_threshold: 1e-12, particular: true }
    }
}

/// Relative eigenvalue threshold for pruning each patch's shape functions.
pub const PATCH_RANK_THRESHOLD: f64 = 1e-10;

/// Energy, relative to the diagonal-weighted norm, below which a shape
/// function counts as constant.
const ZERO_ENERGY_TOL: f64 = 1e-14;

/// One patch's contribution to the global trial space.
#[derive(Debug, Clone)]
pub struct PatchSpace {
    pub index: usize,
    pub patch: PatchPair,
    pub basis: LocalBasis,
    /// Global node indices of the patch mesh origin.
    pub offset: (usize, usize),
    /// `φ_i` at the patch mesh nodes.
    pub pu: Vec<f64>,
    /// Pruned global shape functions `φ_i ξ` at the patch mesh nodes.
    pub dofs: Vec<Vec<f64>>,
    /// `φ_i u_p` at the patch mesh nodes.
    pub particular: Option<Vec<f64>>,
    pub dropped: usize,
}

impl PatchSpace {
    pub fn global_node(&self, fine: &Mesh, local: usize) -> usize {
        let (i, j) = self.patch.mesh.node_ij(local);
        fine.node_index(i + self.offset.0, j + self.offset.1)
    }
}

fn build_basis(patch: &PatchPair, spec: &BasisSpec, include_constant: bool) -> Result<LocalBasis> {
    let family = if patch.has_no_artificial_boundary() { BasisFamily::Constant } else { spec.family };
    Ok(match family {
        BasisFamily::Constant => LocalBasis::from_snapshots(&[], include_constant),
        BasisFamily::Polynomial => {
            LocalBasis::from_snapshots(&snapshots_poly_neumann(patch, spec.n.max(1))?[..spec.n], include_constant)
        }
        BasisFamily::Optimal => {
            if spec.snapshots < spec.n {
                return Err(Error::invalid("optimal basis needs at least n snapshots"));
            }
            let snaps = snapshots_poly_neumann(patch, spec.snapshots)?;
            optimal_basis(patch, &snaps, spec.n, include_constant, spec.rank_threshold)?
        }
        BasisFamily::NeumannEigen => {
            LocalBasis::from_snapshots(&snapshots_neumann_eigen(patch, spec.n.max(1))?[..spec.n], include_constant)
        }
    })
}

fn local_particular(patch: &PatchPair, problem: &Problem) -> Result<Option<Vec<f64>>> {
    let source = problem.source.clone();
    let src_ref = source.as_ref().map(|f| f.as_ref() as &dyn Fn(Point) -> f64);
    match (patch.kind, &problem.bc) {
        (PatchKind::Boundary, BoundaryCondition::Neumann(g)) => {
            let g = g.clone();
            let gf = move |p: Point, n: Point| g(p, n);
            Ok(Some(particular_mixed(patch, src_ref, PhysicalData::Flux(&gf))?))
        }
        (PatchKind::Boundary, BoundaryCondition::Dirichlet(g)) => {
            let g = g.clone();
            let gf = move |p: Point| g(p);
            Ok(Some(particular_mixed(patch, src_ref, PhysicalData::Trace(&gf))?))
        }
        (PatchKind::Interior, _) => match &source {
            Some(f) => Ok(Some(particular_solution_source(patch, |p| f(p))?.values)),
            None => Ok(None),
        },
    }
}

/// Builds patch `i`: local basis, particular solution and pruned shape functions.
pub fn build_patch_space(
    i: usize,
    cover: &Cover,
    fine: &Mesh,
    problem: &Problem,
    spec: &BasisSpec,
) -> Result<PatchSpace> {
    let dirichlet = !problem.is_neumann();
    let patch = cover.patch(i, fine, &problem.field, dirichlet)?;
    let include_constant = !(dirichlet && cover.omega_touches_boundary(i));
    let mut basis = build_basis(&patch, spec, include_constant)?;
    if spec.particular {
        basis.particular = local_particular(&patch, problem)?;
    }
    let (i0, _, j0, _) = fine.element_range(&patch.omega_star)?;
    let pu: Vec<f64> = (0..patch.mesh.num_nodes())
        .map(|n| cover.pu(i, patch.mesh.node_coord(n)))
        .collect();
    let weighted = |f: &[f64]| -> Vec<f64> { f.iter().zip(&pu).map(|(a, b)| a * b).collect() };
    let raw: Vec<Vec<f64>> = basis.shape_functions(&patch.mesh).iter().map(|f| weighted(f)).collect();
    let (dofs, dropped) = prune(patch.k_star(), &raw)?;
    let particular = basis.particular.as_deref().map(weighted);
    Ok(PatchSpace { index: i, patch, basis, offset: (i0, j0), pu, dofs, particular, dropped })
}

/// Energy-orthonormal combinations of `fns` after dropping near-dependent
/// directions of the diagonally scaled Gram.
fn prune(k: &CsrMatrix, fns: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, usize)> {
    if fns.is_empty() {
        return Ok((vec![], 0));
    }
    let g = gram(k, fns);
    let kd = k.diagonal();
    let d: Vec<f64> = (0..fns.len()).map(|i| g[(i, i)]).collect();
    // zero-energy functions (constants on a patch with φ ≡ 1)
    let keep: Vec<usize> = (0..fns.len())
        .filter(|&i| {
            let scale: f64 = fns[i].iter().zip(&kd).map(|(f, k)| k * f * f).sum();
            d[i] > ZERO_ENERGY_TOL * scale
        })
        .collect();
    if keep.is_empty() {
        return Ok((vec![], fns.len()));
    }
    let gs = DMatrix::from_fn(keep.len(), keep.len(), |r, c| {
        g[(keep[r], keep[c])] / (d[keep[r]] * d[keep[c]]).sqrt()
    });
    let f = filter_rank(&gs, PATCH_RANK_THRESHOLD)?;
    let out = (0..f.rank)
        .map(|c| {
            let mut v = vec![0.0; fns[0].len()];
            for (r, &i) in keep.iter().enumerate() {
                let w = f.transform[(r, c)] / d[i].sqrt();
                v.iter_mut().zip(&fns[i]).for_each(|(a, b)| *a += w * b);
            }
            v
        })
        .collect();
    Ok((out, fns.len() - f.rank))
}

/// Builds every patch space on a pool of `workers` threads; results are in
/// patch order regardless of scheduling.
pub fn build_spaces(
    cover: &Cover,
    fine: &Mesh,
    problem: &Problem,
    spec: &BasisSpec,
    workers: usize,
) -> Result<Vec<PatchSpace>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    pool.install(|| {
        (0..cover.len())
            .into_par_iter()
            .map(|i| build_patch_space(i, cover, fine, problem, spec).map_err(|e| e.at_patch(i)))
            .collect()
    })
}

/// Global trial space `u_P + span{φ_i ξ_i^{[j]}}`.
#[derive(Debug, Clone)]
pub struct GlobalSpace {
    pub spaces: Vec<PatchSpace>,
    /// First global dof of each patch.
    pub offsets: Vec<usize>,
    pub dim: usize,
    /// `Σ φ_i u_p,i` on the fine mesh.
    pub particular: Vec<f64>,
}

impl GlobalSpace {
    pub fn new(fine: &Mesh, spaces: Vec<PatchSpace>) -> Self {
        let mut offsets = Vec::with_capacity(spaces.len());
        let mut dim = 0;
        for s in &spaces {
            offsets.push(dim);
            dim += s.dofs.len();
        }
        let mut particular = vec![0.0; fine.num_nodes()];
        for s in &spaces {
            if let Some(p) = &s.particular {
                for (l, v) in p.iter().enumerate() {
                    particular[s.global_node(fine, l)] += v;
                }
            }
        }
        GlobalSpace { spaces, offsets, dim, particular }
    }

    /// Fine-mesh field `u_P + Σ c_k ψ_k`.
    pub fn expand(&self, fine: &Mesh, coeffs: &[f64]) -> Vec<f64> {
        let mut u = self.particular.clone();
        self.add_span(fine, coeffs, &mut u);
        u
    }

    /// Adds `Σ c_k ψ_k` to `u`.
    pub fn add_span(&self, fine: &Mesh, coeffs: &[f64], u: &mut [f64]) {
        for (s, &off) in self.spaces.iter().zip(&self.offsets) {
            for (j, d) in s.dofs.iter().enumerate() {
                let c = coeffs[off + j];
                if c == 0.0 {
                    continue;
                }
                for (l, v) in d.iter().enumerate() {
                    if *v != 0.0 {
                        u[s.global_node(fine, l)] += c * v;
                    }
                }
            }
        }
    }

    /// `ψ_kᵀ r` for every dof.
    pub fn restrict(&self, fine: &Mesh, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (s, &off) in self.spaces.iter().zip(&self.offsets) {
            let map: Vec<usize> = (0..s.patch.mesh.num_nodes()).map(|l| s.global_node(fine, l)).collect();
            for (j, d) in s.dofs.iter().enumerate() {
                out[off + j] = d.iter().zip(&map).map(|(v, &g)| v * r[g]).sum();
            }
        }
        out
    }
}

/// Galerkin matrix and load on the global trial space.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub matrix: CsrMatrix,
    pub load: Vec<f64>,
}

/// Assembles `B(ψ_k, ψ_l)` elementwise on the fine mesh and the load
/// `F(ψ_k) − B(u_P, ψ_k)`.
pub fn assemble_global(fine: &Mesh, space: &GlobalSpace, problem: &Problem) -> Result<GlobalSystem> {
    let ne = fine.num_elements();
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); ne];
    for (si, s) in space.spaces.iter().enumerate() {
        if s.patch.mesh.spacing() != fine.spacing() {
            return Err(Error::Misaligned(format!("patch {} mesh spacing differs from the global mesh", s.index)));
        }
        let (i0, i1, j0, j1) = fine.element_range(&s.patch.omega)?;
        let (nx, _) = fine.dims();
        for j in j0..j1 {
            for i in i0..i1 {
                owners[j * nx + i].push(si);
            }
        }
    }
    let (hx, hy) = fine.spacing();
    let (nx, _) = fine.dims();
    let mut blocks: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
    for e in 0..ne {
        let Some(a) = fine.coefficient(e) else { continue };
        if owners[e].is_empty() {
            continue;
        }
        let ke = element::stiffness(&a, hx, hy);
        let ke = DMatrix::from_fn(4, 4, |r, c| ke[r][c]);
        let (ei, ej) = (e % nx, e / nx);
        let local: Vec<DMatrix<f64>> = owners[e]
            .iter()
            .map(|&si| {
                let s = &space.spaces[si];
                let pm = &s.patch.mesh;
                let (li, lj) = (ei - s.offset.0, ej - s.offset.1);
                let le = lj * pm.dims().0 + li;
                let nodes = pm.element_nodes(le);
                DMatrix::from_fn(4, s.dofs.len(), |r, c| s.dofs[c][nodes[r]])
            })
            .collect();
        let kv: Vec<DMatrix<f64>> = local.iter().map(|v| &ke * v).collect();
        for (a_idx, &sa) in owners[e].iter().enumerate() {
            for (b_idx, &sb) in owners[e].iter().enumerate() {
                if sa > sb {
                    continue;
                }
                let contrib = local[a_idx].transpose() * &kv[b_idx];
                blocks
                    .entry((sa, sb))
                    .and_modify(|m| *m += &contrib)
                    .or_insert(contrib);
            }
        }
    }
    let mut tb = TripletBuilder::with_capacity(space.dim, space.dim + 2 * blocks.values().map(|b| b.len()).sum::<usize>());
    for k in 0..space.dim {
        tb.push(k, k, 0.0);
    }
    for ((sa, sb), m) in &blocks {
        let (oa, ob) = (space.offsets[*sa], space.offsets[*sb]);
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                tb.push(oa + r, ob + c, v);
                if sa != sb {
                    tb.push(ob + c, oa + r, v);
                }
            }
        }
    }
    let matrix = tb.build();
    let k = assemble_stiffness(fine);
    let ku = k.mul_vec(&space.particular);
    let b = problem.load(fine);
    let r: Vec<f64> = b.iter().zip(&ku).map(|(b, k)| b - k).collect();
    let load = space.restrict(fine, &r);
    Ok(GlobalSystem { matrix, load })
}

/// Diagonal regularization of the stabilized global solve.
pub const REGULARIZATION: f64 = 1e-10;
/// Required relative Galerkin residual.
pub const GALERKIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveDiagnostics {
    pub dim: usize,
    pub iterations: usize,
    /// `‖b − A c‖ / ‖b‖`.
    pub residual: f64,
}

/// Solves the (possibly semidefinite) Galerkin system by a regularized
/// Cholesky factorization of the diagonally scaled matrix followed by
/// iterative refinement against the unregularized matrix.
pub fn solve_global(system: &GlobalSystem, tol: f64) -> Result<(Vec<f64>, SolveDiagnostics)> {
    let a = &system.matrix;
    let n = a.dim();
    let bnorm = system.load.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0 || bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveDiagnostics { dim: n, iterations: 0, residual: 0.0 }));
    }
    let d: Vec<f64> = a.diagonal().iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    let mut tb = TripletBuilder::with_capacity(n, a.nnz());
    for (i, j, v) in a.triplets() {
        tb.push(i, j, v * d[i] * d[j]);
    }
    let scaled = tb.build();
    let mut reg = scaled.clone();
    reg.shift_diagonal(&vec![REGULARIZATION; n]);
    let chol = Cholesky::factor(&reg)?;
    let bs: Vec<f64> = system.load.iter().zip(&d).map(|(b, d)| b * d).collect();
    let bsn = bs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    let mut r = bs.clone();
    let mut iterations = 0;
    for _ in 0..200 {
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= 1e-3 * tol * bsn {
            break;
        }
        let dx = chol.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        let ax = scaled.mul_vec(&x);
        r = bs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        iterations += 1;
    }
    let c: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x * d).collect();
    let ac = a.mul_vec(&c);
    let residual = system.load.iter().zip(&ac).map(|(b, a)| (b - a).powi(2)).sum::<f64>().sqrt() / bnorm;
    if residual > tol {
        return Err(Error::Singular(format!(
            "Galerkin residual {residual:.3e} after {iterations} refinement steps (rank deficiency beyond constants)"
        )));
    }
    Ok((c, SolveDiagnostics { dim: n, iterations, residual }))
}

/// Assembled GFEM solution.
#[derive(Debug, Clone)]
pub struct GlobalSolution {
    pub coefficients: Vec<f64>,
    /// Fine-mesh nodal field (mean-zero for Neumann data).
    pub field: Vec<f64>,
    pub energy: f64,
    pub diagnostics: SolveDiagnostics,
    /// Shape functions dropped by per-patch pruning.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfemOptions {
    pub cover: CoverSpec,
    pub basis: BasisSpec,
    pub workers: usize,
    /// Accepted relative Galerkin residual.
    pub galerkin_tol: f64,
}

impl GfemOptions {
    pub fn new(cover: CoverSpec, basis: BasisSpec, workers: usize) -> Self {
        GfemOptions { cover, basis, workers, galerkin_tol: GALERKIN_TOL }
    }
}

/// Full pipeline output.
#[derive(Debug, Clone)]
pub struct GfemRun {
    pub cover: Cover,
    pub space: GlobalSpace,
    pub solution: GlobalSolution,
}

/// Cover, local spaces, assembly and global solve on `fine`.
pub fn run_gfem(problem: &Problem, fine: &Mesh, opts: &GfemOptions) -> Result<GfemRun> {
    let cover = Cover::build(fine, opts.cover)?;
    let spaces = build_spaces(&cover, fine, problem, &opts.basis, opts.workers)?;
    let dropped = spaces.iter().map(|s| s.dropped).sum();
    let space = GlobalSpace::new(fine, spaces);
    let system = assemble_global(fine, &space, problem)?;
    let (coefficients, diagnostics) = solve_global(&system, opts.galerkin_tol)?;
    let mut field = space.expand(fine, &coefficients);
    if problem.is_neumann() {
        remove_mean(fine, &mut field);
    }
    let k = assemble_stiffness(fine);
    let energy = k.inner(&field, &field);
    Ok(GfemRun { cover, space, solution: GlobalSolution { coefficients, field, energy, diagnostics, dropped } })
}

/// Unknown cap for the overkill solve.
pub const DEFAULT_REFERENCE_CAP: usize = 4_000_000;

/// Direct FEM solve on the fine mesh refined `refine` times, injected back
/// to the fine nodes (mean-zero on the fine mesh for Neumann data).
pub fn overkill_reference(problem: &Problem, fine: &Mesh, refine: usize, cap: usize) -> Result<Vec<f64>> {
    if refine < 1 {
        return Err(Error::invalid("refine factor must be at least 1"));
    }
    let (nx, ny) = fine.dims();
    let unknowns = (nx * refine + 1) * (ny * refine + 1);
    if unknowns > cap {
        return Err(Error::invalid(format!("reference needs {unknowns} unknowns, cap is {cap}")));
    }
    let fine_mesh = Mesh::build(fine.rect(), nx * refine, ny * refine, &problem.field)?;
    let u = direct_solve(problem, &fine_mesh)?;
    let active = fine.active_nodes();
    let mut out: Vec<f64> = (0..fine.num_nodes())
        .map(|n| {
            let (i, j) = fine.node_ij(n);
            if active[n] { u[fine_mesh.node_index(i * refine, j * refine)] } else { 0.0 }
        })
        .collect();
    if problem.is_neumann() {
        remove_mean(fine, &mut out);
    }
    Ok(out)
}

/// `(‖u_ref − u‖_E / ‖u_ref‖_E, ‖u_ref − u‖_{L²} / ‖u_ref‖_{L²})`.
pub fn global_error(fine: &Mesh, u_ref: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    let e_ref = norm(fine, u_ref, NormKind::Energy, None)?;
    let l_ref = norm(fine, u_ref, NormKind::L2, None)?;
    if e_ref == 0.0 || l_ref == 0.0 {
        return Err(Error::invalid("reference solution has zero norm"));
    }
    let d: Vec<f64> = u_ref.iter().zip(u).map(|(a, b)| a - b).collect();
    Ok((
        norm(fine, &d, NormKind::Energy, None)? / e_ref,
        norm(fine, &d, NormKind::L2, None)? / l_ref,
    ))
}

/// Both sides of the local-to-global estimates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundReport {
    pub lhs_energy: f64,
    pub rhs_energy: f64,
    pub lhs_l2: f64,
    pub rhs_l2: f64,
    pub c1: f64,
    pub c2: f64,
    pub kappa: usize,
    pub holds: bool,
}

/// Per-patch best approximations `ζ_i` of `u0` and their errors.
#[derive(Debug, Clone)]
pub struct LocalApproximation {
    /// `ζ_i` on the patch mesh.
    pub zeta: Vec<f64>,
    /// `‖u0 − ζ_i‖_{L²_*(ω_i)}`.
    pub eps1: f64,
    /// `‖u0 − ζ_i‖_E(ω_i)`.
    pub eps2: f64,
}

/// `ζ_i = u_p + argmin_χ ‖u0 − u_p − χ‖_E(ω_i)`, with the constant chosen to
/// minimize the `L²_*(ω_i)` error when the space contains constants.
pub fn local_best_approximation(fine: &Mesh, s: &PatchSpace, u0: &[f64]) -> Result<LocalApproximation> {
    let pm = &s.patch.mesh;
    let nn = pm.num_nodes();
    let u: Vec<f64> = (0..nn).map(|l| u0[s.global_node(fine, l)]).collect();
    let up = s.basis.particular.clone().unwrap_or_else(|| vec![0.0; nn]);
    let shapes = s.basis.shape_functions(pm);
    let e: Vec<f64> = u.iter().zip(&up).map(|(a, b)| a - b).collect();
    let proj = Projector::new(s.patch.k_inner(), &shapes, 1e-12)?;
    let mut zeta: Vec<f64> = up.iter().zip(proj.project(&e)).map(|(a, b)| a + b).collect();
    if s.basis.includes_constant {
        let w = crate::fem::assembly::beta_star_weight(pm);
        let wm: Vec<f64> = w.iter().zip(&s.patch.inner).map(|(w, &m)| if m { *w } else { 0.0 }).collect();
        let mass = crate::fem::assembly::assemble_weighted_mass(pm, &wm)?;
        let diff: Vec<f64> = u.iter().zip(&zeta).map(|(a, b)| a - b).collect();
        for ind in component_indicators(pm) {
            let d = mass.inner(&ind, &ind);
            if d > 0.0 {
                let c = mass.inner(&ind, &diff) / d;
                zeta.iter_mut().zip(&ind).for_each(|(z, &i)| *z += c * i);
            }
        }
    }
    let diff: Vec<f64> = u.iter().zip(&zeta).map(|(a, b)| a - b).collect();
    let eps1 = norm_masked(pm, &diff, NormKind::L2Star, Some(&s.patch.inner));
    let eps2 = norm_masked(pm, &diff, NormKind::Energy, Some(&s.patch.inner));
    Ok(LocalApproximation { zeta, eps1, eps2 })
}

/// PU blend `ζ = Σ φ_i ζ_i` of the local best approximations.
pub fn blend(fine: &Mesh, space: &GlobalSpace, locals: &[LocalApproximation]) -> Vec<f64> {
    let mut zeta = vec![0.0; fine.num_nodes()];
    for (s, la) in space.spaces.iter().zip(locals) {
        for (l, (z, phi)) in la.zeta.iter().zip(&s.pu).enumerate() {
            zeta[s.global_node(fine, l)] += phi * z;
        }
    }
    zeta
}

/// Evaluates
/// `‖u0 − ζ‖_{L²_*} ≤ C₁ (Σ ε₁²)^{1/2}` and
/// `‖u0 − ζ‖_E ≤ (C₂² Σ ε₁²/diam²(ω_i) + C₁² Σ ε₂²)^{1/2}`
/// with measured `C₁`, `C₂` and `ζ` the PU blend of local best approximations.
pub fn verify_local_global_bound(fine: &Mesh, cover: &Cover, space: &GlobalSpace, u0: &[f64]) -> Result<BoundReport> {
    let pu = pu_report(cover, fine);
    let locals: Vec<LocalApproximation> = space
        .spaces
        .iter()
        .map(|s| local_best_approximation(fine, s, u0).map_err(|e| e.at_patch(s.index)))
        .collect::<Result<_>>()?;
    let zeta = blend(fine, space, &locals);
    let diff: Vec<f64> = u0.iter().zip(&zeta).map(|(a, b)| a - b).collect();
    let lhs_energy = norm(fine, &diff, NormKind::Energy, None)?;
    let lhs_l2 = norm(fine, &diff, NormKind::L2Star, None)?;
    let mut s1 = 0.0;
    let mut s1d = 0.0;
    let mut s2 = 0.0;
    for (s, la) in space.spaces.iter().zip(&locals) {
        s1 += la.eps1 * la.eps1;
        s1d += (la.eps1 / cover.omegas[s.index].diam()).powi(2);
        s2 += la.eps2 * la.eps2;
    }
    let rhs_energy = (pu.c2 * pu.c2 * s1d + pu.c1 * pu.c1 * s2).sqrt();
    let rhs_l2 = pu.c1 * s1.sqrt();
    let slack = 1e-12 * (1.0 + rhs_energy);
    Ok(BoundReport {
        lhs_energy,
        rhs_energy,
        lhs_l2,
        rhs_l2,
        c1: pu.c1,
        c2: pu.c2,
        kappa: pu.kappa,
        holds: lhs_energy <= rhs_energy + slack && lhs_l2 <= rhs_l2 + slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{constant_field, SymMat2};
    use rand::{Rng, SeedableRng};

    fn unit(n: usize, res: usize, a: SymMat2) -> (CoefficientField, Mesh) {
        let f = constant_field(a, Rect::unit(), res, res).unwrap();
        let m = Mesh::build(Rect::unit(), n, n, &f).unwrap();
        (f, m)
    }

    fn two_phase(seed: u64, res: usize, contrast: f64) -> CoefficientField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..res * res)
            .map(|_| SymMat2::scalar(if rng.gen_bool(0.5) { 1.0 } else { contrast }))
            .collect();
        CoefficientField::from_cells(Rect::unit(), res, res, cells, None).unwrap()
    }

    fn quad_flux(p: Point, n: Point) -> f64 {
        2.0 * p[0] * n[0] - 2.0 * p[1] * n[1]
    }

    #[test]
    fn cover_and_pu_invariants() {
        let (_, fine) = unit(64, 8, SymMat2::IDENTITY);
        let c = Cover::build(&fine, CoverSpec { m: 16, star_cells: 2 }).unwrap();
        assert_eq!(c.len(), 17 * 17);
        let r = pu_report(&c, &fine);
        assert!(r.sum_defect <= 1e-12 && r.min_value >= 0.0 && r.c1 <= 1.0 + 1e-15);
        assert!(r.support_ok);
        assert_eq!(r.kappa, 4);
        assert!((r.c2 - 4.0).abs() < 1e-9, "{}", r.c2);
        for i in 0..c.len() {
            assert!(c.stars[i].contains_rect(&c.omegas[i]));
        }
        // interior and boundary classification
        let mid = c.nodes.iter().position(|&n| n == (8, 8)).unwrap();
        assert_eq!(c.kinds[mid], PatchKind::Interior);
        let near = c.nodes.iter().position(|&n| n == (3, 8)).unwrap();
        assert_eq!(c.kinds[near], PatchKind::Boundary);

        let one = Cover::build(&fine, CoverSpec { m: 1, star_cells: 2 }).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.pu(0, [0.3, 0.9]), 1.0);
        assert!(Cover::build(&fine, CoverSpec { m: 5, star_cells: 2 }).is_err());
    }

    #[test]
    fn pu_sums_to_one_at_random_nodes() {
        let (_, fine) = unit(128, 8, SymMat2::IDENTITY);
        let c = Cover::build(&fine, CoverSpec::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let n = rng.gen_range(0..fine.num_nodes());
            let p = fine.node_coord(n);
            let s: f64 = (0..c.len()).map(|i| c.pu(i, p)).sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn constants_only_match_coarse_fem() {
        let (f, fine) = unit(32, 4, SymMat2::IDENTITY);
        let problem = Problem::neumann(f.clone(), quad_flux);
        let basis = BasisSpec::constant().without_particular();
        let opts = GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, basis, 2);
        let run = run_gfem(&problem, &fine, &opts).unwrap();
        // independent coarse bilinear FEM
        let coarse = Mesh::build(Rect::unit(), 4, 4, &f).unwrap();
        let uc = direct_solve(&problem, &coarse).unwrap();
        for n in 0..coarse.num_nodes() {
            let g = fine.node_at(coarse.node_coord(n)).unwrap();
            assert!((run.solution.field[g] - uc[n]).abs() < 1e-10, "node {n}");
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let f = two_phase(1, 8, 10.0);
        let fine = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
        let problem = Problem::neumann(f, |_, _| 0.0);
        let opts = GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, BasisSpec::polynomial(4), 1);
        let run = run_gfem(&problem, &fine, &opts).unwrap();
        assert!(run.solution.field.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparsity_follows_patch_overlap() {
        let f = two_phase(2, 8, 10.0);
        let fine = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
        let problem = Problem::neumann(f, quad_flux);
        let cover = Cover::build(&fine, CoverSpec { m: 4, star_cells: 1 }).unwrap();
        let spaces = build_spaces(&cover, &fine, &problem, &BasisSpec::polynomial(2), 2).unwrap();
        let space = GlobalSpace::new(&fine, spaces);
        let sys = assemble_global(&fine, &space, &problem).unwrap();
        let owner: Vec<usize> = space.spaces.iter().flat_map(|s| std::iter::repeat(s.index).take(s.dofs.len())).collect();
        for (i, j, v) in sys.matrix.triplets() {
            if v != 0.0 {
                let (a, b) = (cover.omegas[owner[i]], cover.omegas[owner[j]]);
                let overlap = a.intersect(&b).is_some_and(|r| r.area() > 1e-12);
                assert!(overlap, "dofs {i},{j}");
            }
        }
        assert!(sys.matrix.asymmetry() <= 1e-12 * sys.matrix.max_abs());
    }

    #[test]
    fn manufactured_quadratic_error_decreases() {
        let (f, fine) = unit(64, 8, SymMat2::IDENTITY);
        let problem = Problem::neumann(f, quad_flux);
        let exact = {
            let mut u: Vec<f64> = (0..fine.num_nodes()).map(|n| { let p = fine.node_coord(n); p[0] * p[0] - p[1] * p[1] }).collect();
            remove_mean(&fine, &mut u);
            u
        };
        let cover = CoverSpec { m: 4, star_cells: 1 };
        let coarse = run_gfem(&problem, &fine, &GfemOptions::new(cover, BasisSpec::constant(), 1)).unwrap();
        let (e0, _) = global_error(&fine, &exact, &coarse.solution.field).unwrap();
        let mut last = e0;
        for n in [2, 4] {
            let run = run_gfem(&problem, &fine, &GfemOptions::new(cover, BasisSpec::polynomial(n), 1)).unwrap();
            let (e, _) = global_error(&fine, &exact, &run.solution.field).unwrap();
            assert!(e < last, "n={n}: {e} !< {last}");
            last = e;
        }
    }

    #[test]
    fn galerkin_optimality_and_cea() {
        let f = two_phase(4, 8, 20.0);
        let fine = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
        let problem = Problem::neumann(f, |_, n| 2.0 * n[0] - n[1]);
        let u_h = direct_solve(&problem, &fine).unwrap();
        let opts = GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, BasisSpec::optimal(3, 10), 3);
        let run = run_gfem(&problem, &fine, &opts).unwrap();
        let k = assemble_stiffness(&fine);
        let err: Vec<f64> = u_h.iter().zip(&run.solution.field).map(|(a, b)| a - b).collect();
        // B(u_h − u_G, v) = 0 for v in the trial space
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let eu = k.inner(&u_h, &u_h).sqrt();
        for _ in 0..20 {
            let c: Vec<f64> = (0..run.space.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut v = vec![0.0; fine.num_nodes()];
            run.space.add_span(&fine, &c, &mut v);
            let ev = k.inner(&v, &v).sqrt();
            assert!(k.inner(&err, &v).abs() <= 1e-8 * eu * ev);
        }
        // Céa: the Galerkin error is below the PU blend of local best approximations
        let locals: Vec<LocalApproximation> =
            run.space.spaces.iter().map(|s| local_best_approximation(&fine, s, &u_h).unwrap()).collect();
        let zeta = blend(&fine, &run.space, &locals);
        let dz: Vec<f64> = u_h.iter().zip(&zeta).map(|(a, b)| a - b).collect();
        assert!(k.inner(&err, &err).sqrt() <= k.inner(&dz, &dz).sqrt() * (1.0 + 1e-8));
    }

    #[test]
    fn constant_shift_only_changes_mean() {
        let f = two_phase(6, 8, 5.0);
        let fine = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
        let problem = Problem::neumann(f, quad_flux);
        let opts = GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, BasisSpec::polynomial(2), 1);
        let run = run_gfem(&problem, &fine, &opts).unwrap();
        // constant direction: each patch's first shape function is φ_i·1 up to pruning,
        // so shifting by the blended constant Σφ_i = 1 is in the span
        let mut shifted = run.space.expand(&fine, &run.solution.coefficients);
        shifted.iter_mut().for_each(|v| *v += 3.5);
        remove_mean(&fine, &mut shifted);
        let d = shifted.iter().zip(&run.solution.field).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-10);
    }

    #[test]
    fn overkill_reference_behaviour() {
        let (f, fine) = unit(16, 4, SymMat2::diag(2.0, 0.5));
        let linear = Problem::neumann(f.clone(), |_, n| 2.0 * 2.0 * n[0] - 0.5 * n[1]);
        let u = overkill_reference(&linear, &fine, 2, DEFAULT_REFERENCE_CAP).unwrap();
        let mut exact: Vec<f64> = (0..fine.num_nodes()).map(|n| { let p = fine.node_coord(n); 2.0 * p[0] - p[1] }).collect();
        remove_mean(&fine, &mut exact);
        assert!(u.iter().zip(&exact).all(|(a, b)| (a - b).abs() < 1e-10));
        let again = overkill_reference(&linear, &fine, 2, DEFAULT_REFERENCE_CAP).unwrap();
        assert_eq!(u, again);
        assert!(overkill_reference(&linear, &fine, 4, 100).is_err());
        let dir = Problem::dirichlet(f, |p| 1.0 + p[0] - 3.0 * p[1]);
        let u = overkill_reference(&dir, &fine, 2, DEFAULT_REFERENCE_CAP).unwrap();
        for n in 0..fine.num_nodes() {
            let p = fine.node_coord(n);
            assert!((u[n] - (1.0 + p[0] - 3.0 * p[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn global_error_edge_cases() {
        let (_, fine) = unit(8, 4, SymMat2::IDENTITY);
        let u: Vec<f64> = (0..fine.num_nodes()).map(|n| fine.node_coord(n)[0]).collect();
        assert_eq!(global_error(&fine, &u, &u).unwrap(), (0.0, 0.0));
        let (e, l) = global_error(&fine, &u, &vec![0.0; u.len()]).unwrap();
        assert!((e - 1.0).abs() < 1e-15 && (l - 1.0).abs() < 1e-15);
        assert!(global_error(&fine, &vec![0.0; u.len()], &u).is_err());
        // hand quadrature on a 2×2 toy: u_ref = x y, u = 0.5 x on [0,1]²;
        // diff = x y − x/2, ∇diff = (y − 1/2, x): ∫ = 1/12 + 1/3 = 5/12, ∫∇(xy)² = 2/3
        let (_, toy) = unit(2, 2, SymMat2::IDENTITY);
        let ur: Vec<f64> = (0..toy.num_nodes()).map(|n| { let p = toy.node_coord(n); p[0] * p[1] }).collect();
        let ug: Vec<f64> = (0..toy.num_nodes()).map(|n| 0.5 * toy.node_coord(n)[0]).collect();
        let (e, _) = global_error(&toy, &ur, &ug).unwrap();
        assert!((e - (5.0f64 / 12.0 / (2.0 / 3.0)).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn local_global_bound_cases() {
        let f = two_phase(8, 8, 10.0);
        let fine = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
        let problem = Problem::neumann(f, |_, n| 2.0 * n[0] - n[1]);
        let u0 = direct_solve(&problem, &fine).unwrap();
        // single patch with the exact solution in its space
        let one = GfemOptions::new(CoverSpec { m: 1, star_cells: 0 }, BasisSpec::constant(), 1);
        let run = run_gfem(&problem, &fine, &one).unwrap();
        let r = verify_local_global_bound(&fine, &run.cover, &run.space, &u0).unwrap();
        assert!(r.holds && r.lhs_energy < 1e-10, "{r:?}");
        for basis in [BasisSpec::constant(), BasisSpec::optimal(4, 12)] {
            let opts = GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, basis, 2);
            let run = run_gfem(&problem, &fine, &opts).unwrap();
            let r = verify_local_global_bound(&fine, &run.cover, &run.space, &u0).unwrap();
            assert!(r.holds, "{r:?}");
        }
    }

    #[test]
    fn dirichlet_pipeline() {
        let f = two_phase(10, 8, 10.0);
        let fine = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
        let problem = Problem::dirichlet(f, |p| p[0] + 0.5 * p[1]).with_source(|p| p[0]);
        let u_h = direct_solve(&problem, &fine).unwrap();
        let opts = GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, BasisSpec::polynomial(4), 2);
        let run = run_gfem(&problem, &fine, &opts).unwrap();
        for n in fine.boundary_nodes(|_| true) {
            assert!((run.solution.field[n] - u_h[n]).abs() < 1e-12);
        }
        let (e, _) = global_error(&fine, &u_h, &run.solution.field).unwrap();
        assert!(e < 0.2, "{e}");
    }

    #[test]
    fn source_term_pipeline() {
        // −Δu = f with u = cos(πx) cos(πy) and zero flux
        let (f, fine) = unit(64, 8, SymMat2::IDENTITY);
        let pi = std::f64::consts::PI;
        let problem = Problem::neumann(f, |_, _| 0.0).with_source(move |p| 2.0 * pi * pi * (pi * p[0]).cos() * (pi * p[1]).cos());
        let u_h = direct_solve(&problem, &fine).unwrap();
        let cover = CoverSpec { m: 4, star_cells: 1 };
        let run = run_gfem(&problem, &fine, &GfemOptions::new(cover, BasisSpec::polynomial(4), 2)).unwrap();
        let (e, _) = global_error(&fine, &u_h, &run.solution.field).unwrap();
        let run0 = run_gfem(&problem, &fine, &GfemOptions::new(cover, BasisSpec::constant(), 2)).unwrap();
        let (e0, _) = global_error(&fine, &u_h, &run0.solution.field).unwrap();
        assert!(e < e0 && e < 0.05, "{e} vs {e0}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let f = two_phase(12, 8, 10.0);
        let fine = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
        let problem = Problem::neumann(f, quad_flux);
        let mk = |w| GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, BasisSpec::optimal(4, 10), w);
        let a = run_gfem(&problem, &fine, &mk(1)).unwrap();
        let b = run_gfem(&problem, &fine, &mk(8)).unwrap();
        assert_eq!(a.solution.field, b.solution.field);
    }
}
