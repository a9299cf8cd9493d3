//! Periodic homogenization: cell problem, closed-form widths of concentric
//! ellipses, ε-sweeps of the local eigenvalues and the `Q` estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::element;
use crate::fem::mesh::Mesh;
use crate::fem::sparse::{Cholesky, TripletBuilder};
use crate::geometry::{Point, Rect};
use crate::localspace::{homogenized_trace_space, optimal_basis, snapshots_poly_neumann, PatchPair, Snapshot};
use crate::microstructure::{constant_field, periodic_field, CoefficientField, SymMat2};

/// Correctors and effective matrix of a unit cell.
#[derive(Debug, Clone)]
pub struct CellProblemResult {
    /// Cell mesh resolution per direction.
    pub n: usize,
    /// Mean-zero periodic correctors `w¹`, `w²` on the `n × n` distinct nodes.
    pub correctors: [Vec<f64>; 2],
    /// Symmetric energy form `∫ (e_k + ∇w^k)ᵀ A (e_l + ∇w^l)`.
    pub a0: SymMat2,
    /// Flux average `∫ e_kᵀ A (e_l + ∇w^l)`, not symmetrized.
    pub flux_average: [[f64; 2]; 2],
    /// Relative algebraic residual of the corrector solves.
    pub residual: f64,
}

impl CellProblemResult {
    /// `|A⁰₁₂ − A⁰₂₁|` of the flux-average form.
    pub fn asymmetry(&self) -> f64 {
        (self.flux_average[0][1] - self.flux_average[1][0]).abs()
    }

    /// Corrector value at grid node `(i, j)`, wrapping periodically.
    pub fn corrector(&self, k: usize, i: usize, j: usize) -> f64 {
        self.correctors[k][(j % self.n) * self.n + i % self.n]
    }
}

/// `∫_e ∇N_a` for the four bilinear shape functions.
fn gradient_integrals(hx: f64, hy: f64) -> [[f64; 2]; 4] {
    [[-hy / 2.0, -hx / 2.0], [hy / 2.0, -hx / 2.0], [hy / 2.0, hx / 2.0], [-hy / 2.0, hx / 2.0]]
}

/// Solves `div A(∇w^k + e_k) = 0` on the periodic unit cell with an `n × n`
/// mesh and assembles `A⁰`.
pub fn cell_problem(cell: &CoefficientField, n: usize) -> Result<CellProblemResult> {
    if cell.domain() != Rect::unit() {
        return Err(Error::invalid("unit cell must be defined on [0,1]^2"));
    }
    if cell.hole_count() > 0 {
        return Err(Error::invalid("unit cell must not contain holes"));
    }
    let mesh = Mesh::build(Rect::unit(), n, n, cell)?;
    let (hx, hy) = mesh.spacing();
    let pid = |i: usize, j: usize| (j % n) * n + i % n;
    let elem_nodes = |e: usize| {
        let (i, j) = (e % n, e / n);
        [pid(i, j), pid(i + 1, j), pid(i + 1, j + 1), pid(i, j + 1)]
    };
    let gi = gradient_integrals(hx, hy);
    let dofs = n * n;
    let mut tb = TripletBuilder::with_capacity(dofs, 16 * dofs);
    let mut loads = [vec![0.0; dofs], vec![0.0; dofs]];
    let coeffs: Vec<SymMat2> = (0..n * n)
        .map(|e| mesh.coefficient(e).ok_or_else(|| Error::invalid("hole in unit cell")))
        .collect::<Result<_>>()?;
    for (e, a) in coeffs.iter().enumerate() {
        let ke = element::stiffness(a, hx, hy);
        let nodes = elem_nodes(e);
        for r in 0..4 {
            for c in 0..4 {
                tb.push(nodes[r], nodes[c], ke[r][c]);
            }
            for (k, load) in loads.iter_mut().enumerate() {
                let ae = a.apply(if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
                load[nodes[r]] -= ae[0] * gi[r][0] + ae[1] * gi[r][1];
            }
        }
    }
    let k = tb.build();
    // pin node 0, then shift to zero mean
    let keep: Vec<usize> = (1..dofs).collect();
    let kr = k.principal(&keep);
    let chol = Cholesky::factor(&kr).map_err(|e| Error::Singular(format!("periodic cell system: {e}")))?;
    let mut residual = 0.0f64;
    let correctors = loads.clone().map(|load| {
        let rhs: Vec<f64> = keep.iter().map(|&i| load[i]).collect();
        let x = chol.solve(&rhs);
        let mut w = vec![0.0; dofs];
        keep.iter().zip(&x).for_each(|(&i, v)| w[i] = *v);
        let mean = w.iter().sum::<f64>() / dofs as f64;
        w.iter_mut().for_each(|v| *v -= mean);
        w
    });
    for (w, load) in correctors.iter().zip(&loads) {
        let kw = k.mul_vec(w);
        let num = kw.iter().zip(load).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = load.iter().map(|v| v * v).sum::<f64>().sqrt();
        if den > 0.0 {
            residual = residual.max(num / den);
        }
    }
    let mut sym = [[0.0; 2]; 2];
    let mut flux = [[0.0; 2]; 2];
    let area = hx * hy;
    for (e, a) in coeffs.iter().enumerate() {
        let nodes = elem_nodes(e);
        let ke = element::stiffness(a, hx, hy);
        let wl: [[f64; 4]; 2] = std::array::from_fn(|k| nodes.map(|nd| correctors[k][nd]));
        // ∫_e ∇w^l
        let gw: [[f64; 2]; 2] = std::array::from_fn(|l| {
            let mut g = [0.0; 2];
            for r in 0..4 {
                g[0] += wl[l][r] * gi[r][0];
                g[1] += wl[l][r] * gi[r][1];
            }
            g
        });
        for kk in 0..2 {
            let ek = if kk == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            let aek = a.apply(ek);
            for l in 0..2 {
                let el = if l == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
                let ael = a.apply(el);
                let base = area * (aek[0] * el[0] + aek[1] * el[1]);
                let cross_k = aek[0] * gw[l][0] + aek[1] * gw[l][1];
                let cross_l = ael[0] * gw[kk][0] + ael[1] * gw[kk][1];
                flux[kk][l] += base + cross_k;
                sym[kk][l] += base + cross_k + cross_l + element::quad_form(&ke, &wl[kk], &wl[l]);
            }
        }
    }
    let a0 = SymMat2::new(sym[0][0], 0.5 * (sym[0][1] + sym[1][0]), sym[1][1]);
    if !a0.is_spd() {
        return Err(Error::NotSpd(format!("effective matrix {a0:?}")));
    }
    Ok(CellProblemResult { n, correctors, a0, flux_average: flux, residual })
}

/// Reuss (harmonic mean of cellwise `λ_min`) and Voigt (arithmetic mean of
/// cellwise `λ_max`) bounds, area-weighted over the cells.
pub fn voigt_reuss_bounds(cell: &CoefficientField) -> Result<(f64, f64)> {
    let (nx, ny) = cell.cell_counts();
    let mut inv = 0.0;
    let mut mean = 0.0;
    let mut count = 0usize;
    for j in 0..ny {
        for i in 0..nx {
            let Some(a) = cell.cell(i, j) else { continue };
            let (lo, hi) = a.eigenvalues();
            inv += 1.0 / lo;
            mean += hi;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("cell has no material"));
    }
    Ok((count as f64 / inv, mean / count as f64))
}

/// Vertical laminate: `a1` on `x < 1/2`, `a2` on `x ≥ 1/2`.
pub fn laminate_cell(a1: f64, a2: f64) -> Result<CoefficientField> {
    CoefficientField::from_cells(Rect::unit(), 2, 1, vec![SymMat2::scalar(a1), SymMat2::scalar(a2)], None)
}

/// 2 × 2 checkerboard of `a` and `1/a`.
pub fn checkerboard_cell(a: f64) -> Result<CoefficientField> {
    let (p, q) = (SymMat2::scalar(a), SymMat2::scalar(1.0 / a));
    CoefficientField::from_cells(Rect::unit(), 2, 2, vec![p, q, q, p], None)
}

/// Distinct eigenvalues `λ_j = (r/r*)^{2j}`, `j = 1..=n`, each with
/// multiplicity 2.
pub fn analytic_ellipse_widths(r: f64, r_star: f64, n: usize) -> Result<Vec<(f64, usize)>> {
    if !(r > 0.0 && r < r_star) {
        return Err(Error::invalid(format!("need 0 < r < r*, got r = {r}, r* = {r_star}")));
    }
    let q = r / r_star;
    Ok((1..=n).map(|j| (q.powi(2 * j as i32), 2)).collect())
}

/// Eigenvalues repeated by multiplicity, descending.
pub fn flatten_levels(levels: &[(f64, usize)]) -> Vec<f64> {
    levels.iter().flat_map(|&(l, m)| std::iter::repeat(l).take(m)).collect()
}

/// `e^{−|ln(r/r*)|(n+1)}`.
pub fn ellipse_rate(r: f64, r_star: f64, n: usize) -> f64 {
    (-(r / r_star).ln().abs() * (n as f64 + 1.0)).exp()
}

/// Local geometry of an ε-sweep on `[0,1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepGeometry {
    /// `ω ⊂ ω*` axis-aligned squares.
    Squares { omega: Rect, omega_star: Rect },
    /// Concentric ellipses adapted to `A⁰` (disks in `A⁰`-stretched
    /// coordinates) centred at `(1/2, 1/2)`; `r_star` is the largest semi-axis
    /// of the outer ellipse.
    AdaptedEllipses { r: f64, r_star: f64 },
}

impl SweepGeometry {
    /// Patch pair for `field` on an `n × n` mesh of `[0,1]²`.
    pub fn patch(&self, field: &CoefficientField, n: usize, a0: SymMat2) -> Result<PatchPair> {
        match *self {
            SweepGeometry::Squares { omega, omega_star } => {
                let h = 1.0 / n as f64;
                let nx = (omega_star.width() / h).round() as usize;
                let ny = (omega_star.height() / h).round() as usize;
                PatchPair::standalone(Mesh::build(omega_star, nx, ny, field)?, omega)
            }
            SweepGeometry::AdaptedEllipses { r, r_star } => {
                if !(r > 0.0 && r < r_star && r_star <= 0.5) {
                    return Err(Error::invalid("ellipse radii must satisfy 0 < r < r* <= 1/2"));
                }
                let c = [0.5, 0.5];
                let rho = adapted_radius(a0, c);
                let mesh = Mesh::build(Rect::unit(), n, n, field)?.with_domain_mask(|p| rho(p) < r_star);
                let inner = mesh.element_mask_by(|p| rho(p) < r);
                PatchPair::masked(mesh, inner, c)
            }
        }
    }
}

/// `ρ(x) = ((x−c)ᵀ A⁰⁻¹ (x−c) λ_max(A⁰))^{1/2}`; level sets are `A⁰`-adapted
/// ellipses whose major semi-axis equals the level.
pub fn adapted_radius(a0: SymMat2, c: Point) -> impl Fn(Point) -> f64 {
    let det = a0.det();
    let (_, hi) = a0.eigenvalues();
    move |p: Point| {
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let q = (a0.a22 * dx * dx - 2.0 * a0.a12 * dx * dy + a0.a11 * dy * dy) / det;
        (q * hi).sqrt()
    }
}

/// Sweep parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Periods per unit length, one entry per `ε = 1/periods`.
    pub periods: Vec<usize>,
    pub geometry: SweepGeometry,
    /// Patch mesh resolution on `[0,1]`.
    pub mesh: usize,
    /// Polynomial-flux snapshots.
    pub snapshots: usize,
    /// Eigenvalues tabulated.
    pub count: usize,
    /// Cell mesh resolution for `A⁰`.
    pub cell_mesh: usize,
    /// Also evaluate `Q_ε^i` on the homogenized trace space.
    pub with_q: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub i: usize,
    pub lambda: f64,
    /// `Q_ε^i` when requested.
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub a0: SymMat2,
    /// `(0, i, λ_i⁰)` rows from the constant-`A⁰` run.
    pub reference: Vec<SweepRow>,
    /// Rows ordered by decreasing `ε`, then `i`.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn eps_values(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.rows.iter().map(|r| r.eps).collect();
        e.dedup();
        e
    }

    /// `|λ_iᵉ − λ_i⁰|`.
    pub fn deviation(&self, row: &SweepRow) -> f64 {
        (row.lambda - self.reference[row.i - 1].lambda).abs()
    }

    /// `max_{i ≤ imax} |λ_iᵉ − λ_i⁰|` per `ε`, in table order.
    pub fn max_deviations(&self, imax: usize) -> Vec<f64> {
        self.eps_values()
            .iter()
            .map(|&e| {
                self.rows
                    .iter()
                    .filter(|r| r.eps == e && r.i <= imax)
                    .map(|r| self.deviation(r))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Deviations of eigenvalue `i` per `ε`, in table order.
    pub fn deviations_of(&self, i: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.i == i).map(|r| self.deviation(r)).collect()
    }
}

/// Eigenvalues (and optionally `Q`) of the local pencil for one field.
fn sweep_entry(
    field: &CoefficientField,
    cfg: &SweepConfig,
    a0: SymMat2,
    eps: f64,
) -> Result<Vec<SweepRow>> {
    let patch = cfg.geometry.patch(field, cfg.mesh, a0)?;
    let snaps = snapshots_poly_neumann(&patch, cfg.snapshots)?;
    let basis = optimal_basis(&patch, &snaps, cfg.count, false, 1e-12)?;
    let span = if cfg.with_q { Some(homogenized_trace_space(&patch, a0, cfg.count)?) } else { None };
    (1..=cfg.count)
        .map(|i| {
            let q = span.as_ref().map(|s| q_estimator(&patch, s, i)).transpose()?;
            Ok(SweepRow { eps, i, lambda: basis.eigenvalues[i - 1], q })
        })
        .collect()
}

/// Eigenvalues `λ_iᵉ` of the periodic fields `A(x/ε)` against the reference
/// `λ_i⁰` of the constant field `A⁰` computed by the same pipeline.
pub fn epsilon_sweep(cell: &CoefficientField, cfg: &SweepConfig, workers: usize) -> Result<SweepTable> {
    let mut periods = cfg.periods.clone();
    if periods.is_empty() || cfg.count == 0 {
        return Err(Error::invalid("sweep needs at least one ε and one eigenvalue"));
    }
    periods.sort_unstable();
    periods.dedup();
    let a0 = cell_problem(cell, cfg.cell_mesh)?.a0;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let reference_field = constant_field(a0, Rect::unit(), 1, 1)?;
    let (reference, entries) = pool.install(|| {
        rayon::join(
            || sweep_entry(&reference_field, cfg, a0, 0.0),
            || {
                periods
                    .par_iter()
                    .map(|&p| {
                        let field = periodic_field(cell, p, Rect::unit())?;
                        sweep_entry(&field, cfg, a0, 1.0 / p as f64)
                    })
                    .collect::<Result<Vec<_>>>()
            },
        )
    });
    Ok(SweepTable { a0, reference: reference?, rows: entries?.into_iter().flatten().collect() })
}

/// `Q_ε^n`: `ω`-energy of the `n`-th function of `span` after normalizing
/// its `ω*`-energy to one.
pub fn q_estimator(patch: &PatchPair, span: &[Snapshot], n: usize) -> Result<f64> {
    if span.is_empty() {
        return Err(Error::invalid("empty trace space"));
    }
    let u = &span
        .get(n.wrapping_sub(1))
        .ok_or_else(|| Error::invalid(format!("index {n} outside 1..={}", span.len())))?
        .values;
    let outer = patch.k_star().inner(u, u);
    if !(outer > 0.0) {
        return Err(Error::invalid("trace function has zero energy on ω*"));
    }
    Ok((patch.k_inner().inner(u, u) / outer).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::constant_field;
    use proptest::prelude::*;

    #[test]
    fn constant_cell_has_zero_correctors() {
        let a = SymMat2::new(2.0, 0.3, 1.0);
        let r = cell_problem(&constant_field(a, Rect::unit(), 4, 4).unwrap(), 16).unwrap();
        assert!(r.correctors.iter().flatten().all(|v| v.abs() < 1e-12));
        assert!((r.a0.a11 - a.a11).abs() < 1e-12 && (r.a0.a12 - a.a12).abs() < 1e-12 && (r.a0.a22 - a.a22).abs() < 1e-12);
    }

    #[test]
    fn laminate_matches_classical_means() {
        let r = cell_problem(&laminate_cell(1.0, 4.0).unwrap(), 128).unwrap();
        // harmonic mean 2/(1 + 1/4), arithmetic mean 5/2
        assert!((r.a0.a11 - 1.6).abs() <= 1e-3 * 1.6, "{:?}", r.a0);
        assert!((r.a0.a22 - 2.5).abs() <= 1e-3 * 2.5);
        assert!(r.a0.a12.abs() < 1e-10);
        assert!(r.asymmetry() <= 1e-10);
        // corrector is periodic and mean-zero
        let mean: f64 = r.correctors[0].iter().sum::<f64>() / r.correctors[0].len() as f64;
        assert!(mean.abs() < 1e-14);
        // laminate corrector depends on x only
        for j in 0..128 {
            assert!((r.corrector(0, 37, j) - r.corrector(0, 37, 0)).abs() < 1e-10);
        }
    }

    #[test]
    fn checkerboard_near_geometric_mean() {
        let r = cell_problem(&checkerboard_cell(2.0).unwrap(), 128).unwrap();
        assert!((r.a0.a11 - 1.0).abs() < 0.01 && (r.a0.a22 - 1.0).abs() < 0.01, "{:?}", r.a0);
        // higher contrast converges slowly at the four-phase corner
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| (cell_problem(&checkerboard_cell(4.0).unwrap(), n).unwrap().a0.a11 - 1.0).abs())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn rejects_holes_and_bad_domains() {
        let holed = CoefficientField::from_cells(
            Rect::unit(),
            2,
            1,
            vec![SymMat2::IDENTITY; 2],
            Some(vec![true, false]),
        )
        .unwrap();
        assert!(cell_problem(&holed, 8).is_err());
        let off = constant_field(SymMat2::IDENTITY, Rect::new(0.0, 2.0, 0.0, 1.0).unwrap(), 2, 1).unwrap();
        assert!(cell_problem(&off, 8).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn effective_matrix_within_bounds(seed in 0u64..1000, contrast in 1.5f64..30.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cells: Vec<SymMat2> = (0..16)
                .map(|_| {
                    let lo = rng.gen_range(1.0..contrast);
                    let hi = lo * rng.gen_range(1.0..3.0);
                    SymMat2::rotated_diag(hi, lo, rng.gen_range(0.0..std::f64::consts::PI))
                })
                .collect();
            let cell = CoefficientField::from_cells(Rect::unit(), 4, 4, cells, None).unwrap();
            let r = cell_problem(&cell, 32).unwrap();
            let (reuss, voigt) = voigt_reuss_bounds(&cell).unwrap();
            let (lo, hi) = r.a0.eigenvalues();
            prop_assert!(reuss <= lo * (1.0 + 1e-12) && hi <= voigt * (1.0 + 1e-12), "{reuss} {lo} {hi} {voigt}");
            prop_assert!(r.asymmetry() <= 1e-10 * voigt);
            prop_assert!(r.residual < 1e-10);
        }
    }

    #[test]
    fn ellipse_widths_closed_form() {
        let l = analytic_ellipse_widths(0.5, 1.0, 3).unwrap();
        assert_eq!(l, vec![(0.25, 2), (0.0625, 2), (0.015625, 2)]);
        assert_eq!(flatten_levels(&l), vec![0.25, 0.25, 0.0625, 0.0625, 0.015625, 0.015625]);
        assert!(analytic_ellipse_widths(1.0, 1.0, 3).is_err());
        assert!(analytic_ellipse_widths(1.2, 1.0, 3).is_err());
        let near = analytic_ellipse_widths(0.999_999, 1.0, 4).unwrap();
        assert!(near.iter().all(|&(l, _)| l > 0.9999));
        // rate of the n-th distinct level
        for n in 0..3 {
            let w = l[n].0.sqrt();
            assert!((w - ellipse_rate(0.5, 1.0, n)).abs() < 1e-15);
        }
    }

    #[test]
    fn adapted_ellipse_matches_closed_form() {
        // A⁰-harmonic polynomials are eigenfunctions on adapted ellipses
        let a0 = SymMat2::rotated_diag(3.0, 1.0, 0.4);
        let field = constant_field(a0, Rect::unit(), 1, 1).unwrap();
        let geom = SweepGeometry::AdaptedEllipses { r: 0.2, r_star: 0.4 };
        let patch = geom.patch(&field, 256, a0).unwrap();
        let snaps = snapshots_poly_neumann(&patch, 16).unwrap();
        let basis = optimal_basis(&patch, &snaps, 6, false, 1e-12).unwrap();
        let exact = flatten_levels(&analytic_ellipse_widths(0.2, 0.4, 3).unwrap());
        for (l, e) in basis.eigenvalues.iter().zip(&exact) {
            assert!((l - e).abs() <= 0.05 * e, "{:?}", basis.eigenvalues);
        }
        let span = homogenized_trace_space(&patch, a0, 6).unwrap();
        for i in 1..=6 {
            let q = q_estimator(&patch, &span, i).unwrap();
            assert!((0.0..=1.0).contains(&q));
            assert!((q - exact[i - 1].sqrt()).abs() <= 0.05 * exact[i - 1].sqrt(), "Q_{i} = {q}");
        }
        assert!(q_estimator(&patch, &[], 1).is_err());
        assert!(q_estimator(&patch, &span, 7).is_err());
        assert!(q_estimator(&patch, &span, 0).is_err());
    }

    #[test]
    fn constant_cell_sweep_has_no_deviation() {
        let cell = constant_field(SymMat2::diag(2.0, 1.0), Rect::unit(), 2, 2).unwrap();
        let cfg = SweepConfig {
            periods: vec![2, 4],
            geometry: SweepGeometry::Squares {
                omega: Rect::new(1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0).unwrap(),
                omega_star: Rect::unit(),
            },
            mesh: 48,
            snapshots: 12,
            count: 4,
            cell_mesh: 8,
            with_q: false,
        };
        let t = epsilon_sweep(&cell, &cfg, 2).unwrap();
        assert!(t.max_deviations(4).iter().all(|&d| d < 1e-12));
        assert_eq!(t.eps_values(), vec![0.5, 0.25]);
    }
}
