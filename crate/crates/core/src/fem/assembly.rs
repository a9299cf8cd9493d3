use super::element;
use super::mesh::{Mesh, Side};
use super::sparse::{CsrMatrix, TripletBuilder};
use crate::error::{Error, Result};
use crate::geometry::Point;

/// Stiffness matrix `∫ A∇N_i·∇N_j` over active elements.
pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    assemble_stiffness_masked(mesh, None)
}

/// Stiffness restricted to active elements with `mask[e]` set.
///
/// Every node keeps a (possibly zero) diagonal entry so the pattern is
/// independent of the mask.
pub fn assemble_stiffness_masked(mesh: &Mesh, mask: Option<&[bool]>) -> CsrMatrix {
    let (hx, hy) = mesh.spacing();
    let mut b = TripletBuilder::with_capacity(mesh.num_nodes(), 16 * mesh.num_elements() + mesh.num_nodes());
    for n in 0..mesh.num_nodes() {
        b.push(n, n, 0.0);
    }
    for e in 0..mesh.num_elements() {
        if mask.is_some_and(|m| !m[e]) {
            continue;
        }
        let Some(a) = mesh.coefficient(e) else { continue };
        let ke = element::stiffness(&a, hx, hy);
        let nodes = mesh.element_nodes(e);
        for (r, &gi) in nodes.iter().enumerate() {
            for (c, &gj) in nodes.iter().enumerate() {
                b.push(gi, gj, ke[r][c]);
            }
        }
    }
    b.build()
}

/// Mass matrix `∫ w N_i N_j` with a cellwise weight (one value per element).
pub fn assemble_weighted_mass(mesh: &Mesh, weight: &[f64]) -> Result<CsrMatrix> {
    if weight.len() != mesh.num_elements() {
        return Err(Error::Misaligned("weight must have one value per element".into()));
    }
    if let Some(w) = weight.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::invalid(format!("negative or NaN weight {w}")));
    }
    let (hx, hy) = mesh.spacing();
    let mut b = TripletBuilder::with_capacity(mesh.num_nodes(), 16 * mesh.num_elements() + mesh.num_nodes());
    for n in 0..mesh.num_nodes() {
        b.push(n, n, 0.0);
    }
    for e in 0..mesh.num_elements() {
        if !mesh.is_active(e) {
            continue;
        }
        let me = element::mass(weight[e], hx, hy);
        let nodes = mesh.element_nodes(e);
        for (r, &gi) in nodes.iter().enumerate() {
            for (c, &gj) in nodes.iter().enumerate() {
                b.push(gi, gj, me[r][c]);
            }
        }
    }
    Ok(b.build())
}

/// Plain `L²` mass matrix over active elements.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    assemble_weighted_mass(mesh, &vec![1.0; mesh.num_elements()]).expect("unit weight is valid")
}

/// Cellwise `β*(x)`: largest eigenvalue of the element coefficient (0 on inactive elements).
pub fn beta_star_weight(mesh: &Mesh) -> Vec<f64> {
    (0..mesh.num_elements())
        .map(|e| mesh.coefficient(e).map_or(0.0, |a| a.eigenvalues().1))
        .collect()
}

const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_9, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Boundary load `∫ g N_i ds` over flux edges accepted by `filter`.
///
/// `g` receives the point and the outward unit normal. Four-point
/// Gauss–Legendre per edge (exact for polynomial `g` up to degree 6).
pub fn boundary_load(
    mesh: &Mesh,
    filter: impl Fn(Side) -> bool,
    g: impl Fn(Point, Point) -> f64,
) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for edge in mesh.boundary_edges() {
        if !filter(edge.side) {
            continue;
        }
        let [a, b] = edge.nodes;
        let pa = mesh.node_coord(a);
        let pb = mesh.node_coord(b);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        for &(t, w) in &GAUSS4 {
            let p = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
            let gv = g(p, edge.normal) * w * len;
            load[a] += gv * (1.0 - t);
            load[b] += gv * t;
        }
    }
    load
}

/// `∫ N_i ds` over flux edges accepted by `filter`.
pub fn boundary_weights(mesh: &Mesh, filter: impl Fn(Side) -> bool) -> Vec<f64> {
    boundary_load(mesh, filter, |_, _| 1.0)
}

/// Source load `∫ f N_i dx` over active elements (3×3 Gauss per element).
pub fn source_load(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    const G3: [(f64, f64); 3] = [
        (0.112_701_665_379_258_31, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.887_298_334_620_741_7, 5.0 / 18.0),
    ];
    let (hx, hy) = mesh.spacing();
    let mut load = vec![0.0; mesh.num_nodes()];
    for e in 0..mesh.num_elements() {
        if !mesh.is_active(e) {
            continue;
        }
        let r = mesh.element_rect(e);
        let nodes = mesh.element_nodes(e);
        for &(xi, wx) in &G3 {
            for &(eta, wy) in &G3 {
                let p = [r.x0 + xi * hx, r.y0 + eta * hy];
                let fv = f(p) * wx * wy * hx * hy;
                let n = element::shape(xi, eta);
                for k in 0..4 {
                    load[nodes[k]] += fv * n[k];
                }
            }
        }
    }
    load
}

/// Nodal quadrature weights `∫ N_i dx` over active elements.
pub fn lumped_area(mesh: &Mesh) -> Vec<f64> {
    let (hx, hy) = mesh.spacing();
    let q = 0.25 * hx * hy;
    let mut w = vec![0.0; mesh.num_nodes()];
    for e in 0..mesh.num_elements() {
        if mesh.is_active(e) {
            for n in mesh.element_nodes(e) {
                w[n] += q;
            }
        }
    }
    w
}
