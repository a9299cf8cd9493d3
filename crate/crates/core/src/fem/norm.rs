use super::assembly::beta_star_weight;
use super::element;
use super::mesh::Mesh;
use super::solve::interior_residual;
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `(∫ A∇u·∇u)^{1/2}`
    Energy,
    /// `(∫ u²)^{1/2}`
    L2,
    /// `(∫ β*(x) u²)^{1/2}` with `β*` the largest cellwise eigenvalue.
    L2Star,
}

fn element_gather(mesh: &Mesh, e: usize, u: &[f64]) -> [f64; 4] {
    mesh.element_nodes(e).map(|n| u[n])
}

/// Inner product of kind `kind` restricted to active elements in `region`.
pub fn inner(mesh: &Mesh, u: &[f64], v: &[f64], kind: NormKind, region: Option<&Rect>) -> Result<f64> {
    let mask = region.map(|r| mesh.element_mask(r)).transpose()?;
    Ok(inner_masked(mesh, u, v, kind, mask.as_deref()))
}

pub fn inner_masked(mesh: &Mesh, u: &[f64], v: &[f64], kind: NormKind, mask: Option<&[bool]>) -> f64 {
    let (hx, hy) = mesh.spacing();
    let mut s = 0.0;
    for e in 0..mesh.num_elements() {
        if mask.is_some_and(|m| !m[e]) {
            continue;
        }
        let Some(a) = mesh.coefficient(e) else { continue };
        let ue = element_gather(mesh, e, u);
        let ve = element_gather(mesh, e, v);
        let k = match kind {
            NormKind::Energy => element::stiffness(&a, hx, hy),
            NormKind::L2 => element::mass(1.0, hx, hy),
            NormKind::L2Star => element::mass(a.eigenvalues().1, hx, hy),
        };
        s += element::quad_form(&k, &ue, &ve);
    }
    s
}

/// Norm of `u` restricted to `region` (whole mesh when `None`).
pub fn norm(mesh: &Mesh, u: &[f64], kind: NormKind, region: Option<&Rect>) -> Result<f64> {
    Ok(inner(mesh, u, u, kind, region)?.max(0.0).sqrt())
}

pub fn norm_masked(mesh: &Mesh, u: &[f64], kind: NormKind, mask: Option<&[bool]>) -> f64 {
    inner_masked(mesh, u, u, kind, mask).max(0.0).sqrt()
}

/// Energy norm of `u_h − u` for an exact solution given by its gradient
/// (3×3 Gauss per element).
pub fn energy_error_against(mesh: &Mesh, u: &[f64], grad: impl Fn(Point) -> Point) -> f64 {
    const G3: [(f64, f64); 3] = [
        (0.112_701_665_379_258_31, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.887_298_334_620_741_7, 5.0 / 18.0),
    ];
    let (hx, hy) = mesh.spacing();
    let mut s = 0.0;
    for e in 0..mesh.num_elements() {
        let Some(a) = mesh.coefficient(e) else { continue };
        let ue = element_gather(mesh, e, u);
        let r = mesh.element_rect(e);
        for &(xi, wx) in &G3 {
            for &(eta, wy) in &G3 {
                let gx = ((ue[1] - ue[0]) * (1.0 - eta) + (ue[2] - ue[3]) * eta) / hx;
                let gy = ((ue[3] - ue[0]) * (1.0 - xi) + (ue[2] - ue[1]) * xi) / hy;
                let ge = grad([r.x0 + xi * hx, r.y0 + eta * hy]);
                let d = [gx - ge[0], gy - ge[1]];
                let ad = a.apply(d);
                s += wx * wy * hx * hy * (ad[0] * d[0] + ad[1] * d[1]);
            }
        }
    }
    s.sqrt()
}

/// Outcome of a Caccioppoli inequality evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CaccioppoliReport {
    /// `‖u‖_E(O)`
    pub lhs: f64,
    /// `(2√β/δ) ‖u‖_{L²(ω*)}`
    pub rhs: f64,
    pub ok: bool,
}

/// Tolerance on the interior residual accepted as "A-harmonic".
pub const HARMONIC_TOL: f64 = 1e-8;

/// Evaluates `‖u‖_E(O) ≤ (2√β/δ) ‖u‖_{L²(ω*)}` for an A-harmonic `u`.
pub fn caccioppoli_check(
    mesh: &Mesh,
    k: &CsrMatrix,
    u: &[f64],
    inner_region: &Rect,
    delta: f64,
) -> Result<CaccioppoliReport> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let res = interior_residual(mesh, k, u);
    if res > HARMONIC_TOL {
        return Err(Error::NotHarmonic(res));
    }
    let lhs = norm(mesh, u, NormKind::Energy, Some(inner_region))?;
    let beta = mesh.beta();
    let rhs = 2.0 * beta.sqrt() / delta * norm(mesh, u, NormKind::L2, None)?;
    Ok(CaccioppoliReport { lhs, rhs, ok: lhs <= rhs * (1.0 + 1e-8) })
}

/// `u ↦ (u, u)` via an assembled operator.
pub fn quadratic(k: &CsrMatrix, u: &[f64]) -> f64 {
    k.inner(u, u)
}

/// Cellwise `β*` weights re-exported for norm users.
pub fn l2star_weight(mesh: &Mesh) -> Vec<f64> {
    beta_star_weight(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble_stiffness, boundary_load};
    use crate::fem::solve::{harmonic_extension, Trace};
    use crate::microstructure::{constant_field, CoefficientField, SymMat2};
    use proptest::prelude::*;

    fn unit_mesh(n: usize) -> Mesh {
        let f = constant_field(SymMat2::IDENTITY, Rect::unit(), n, n).unwrap();
        Mesh::build(Rect::unit(), n, n, &f).unwrap()
    }

    #[test]
    fn trivial_norms() {
        let m = unit_mesh(8);
        let c = vec![4.0; m.num_nodes()];
        assert_eq!(norm(&m, &c, NormKind::Energy, None).unwrap(), 0.0);
        let x: Vec<f64> = (0..m.num_nodes()).map(|n| m.node_coord(n)[0]).collect();
        assert!((norm(&m, &x, NormKind::Energy, None).unwrap() - 1.0).abs() < 1e-14);
        let half = Rect::new(0.0, 0.5, 0.0, 1.0).unwrap();
        assert!((norm(&m, &x, NormKind::Energy, Some(&half)).unwrap() - 0.5f64.sqrt()).abs() < 1e-14);
        let outside = Rect::new(0.5, 1.5, 0.0, 1.0).unwrap();
        assert!(norm(&m, &x, NormKind::Energy, Some(&outside)).is_err());
        // L2 of x over the unit square is 1/√3; bilinear interpolation of x is exact.
        assert!((norm(&m, &x, NormKind::L2, None).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn energy_identity_matches_quadratic_form() {
        let f = CoefficientField::from_fn(Rect::unit(), 8, 8, |p| SymMat2::new(1.0 + p[0], 0.2 * p[1], 2.0)).unwrap();
        let m = Mesh::build(Rect::unit(), 16, 16, &f).unwrap();
        let k = assemble_stiffness(&m);
        let u: Vec<f64> = (0..m.num_nodes()).map(|n| (n as f64 * 0.37).cos()).collect();
        let e = norm(&m, &u, NormKind::Energy, None).unwrap().powi(2);
        assert!((e - quadratic(&k, &u)).abs() <= 1e-12 * e);
    }

    fn energy_error(n: usize) -> f64 {
        let m = unit_mesh(n);
        let k = assemble_stiffness(&m);
        let g = boundary_load(&m, |_| true, |p, nn| 2.0 * p[0] * nn[0] - 2.0 * p[1] * nn[1]);
        let u = harmonic_extension(&m, &k, &Trace::Neumann(g)).unwrap();
        energy_error_against(&m, &u, |p| [2.0 * p[0], -2.0 * p[1]])
    }

    #[test]
    fn h_refinement_halves_energy_error() {
        let errs: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| energy_error(n)).collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..=2.4).contains(&ratio), "ratio {ratio} from {errs:?}");
        }
    }

    #[test]
    fn caccioppoli_on_quadratic() {
        let m = unit_mesh(32);
        let k = assemble_stiffness(&m);
        let c = vec![1.0; m.num_nodes()];
        let o = Rect::new(0.25, 0.75, 0.25, 0.75).unwrap();
        let r = caccioppoli_check(&m, &k, &c, &o, 0.25).unwrap();
        assert!(r.ok && r.lhs == 0.0);
        let g = boundary_load(&m, |_| true, |p, nn| 2.0 * p[0] * nn[0] - 2.0 * p[1] * nn[1]);
        let u = harmonic_extension(&m, &k, &Trace::Neumann(g)).unwrap();
        let r = caccioppoli_check(&m, &k, &u, &o, 0.25).unwrap();
        assert!(r.ok, "{r:?}");
        // Non-harmonic input is rejected.
        let bump: Vec<f64> = (0..m.num_nodes()).map(|n| if n == m.node_index(16, 16) { 1.0 } else { 0.0 }).collect();
        assert!(matches!(caccioppoli_check(&m, &k, &bump, &o, 0.25), Err(Error::NotHarmonic(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn caccioppoli_random_two_phase(seed in 0u64..10_000, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, c3 in -1.0f64..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cells = (0..64).map(|_| SymMat2::scalar(if rng.gen_bool(0.5) { 1.0 } else { 20.0 })).collect();
            let f = CoefficientField::from_cells(Rect::unit(), 8, 8, cells, None).unwrap();
            let m = Mesh::build(Rect::unit(), 32, 32, &f).unwrap();
            let k = assemble_stiffness(&m);
            let g = boundary_load(&m, |_| true, |p, n| {
                let (x, y) = (p[0] - 0.5, p[1] - 0.5);
                let gr = [c1 + 2.0 * c2 * x + 3.0 * c3 * (x * x - y * y), -2.0 * c2 * y - 6.0 * c3 * x * y];
                gr[0] * n[0] + gr[1] * n[1]
            });
            let mut gb = g.clone();
            let s: f64 = gb.iter().sum();
            let w = crate::fem::assembly::boundary_weights(&m, |_| true);
            let p: f64 = w.iter().sum();
            for (gi, wi) in gb.iter_mut().zip(&w) { *gi -= s / p * wi; }
            let u = harmonic_extension(&m, &k, &Trace::Neumann(gb)).unwrap();
            let o = Rect::new(0.25, 0.75, 0.25, 0.75).unwrap();
            let r = caccioppoli_check(&m, &k, &u, &o, 0.25).unwrap();
            prop_assert!(r.ok, "{:?}", r);
        }
    }
}
