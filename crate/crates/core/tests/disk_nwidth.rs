use msgfem::fem::Mesh;
use msgfem::geometry::Rect;
use msgfem::localspace::{optimal_basis, snapshots_poly_neumann, PatchPair};
use msgfem::microstructure::{constant_field, SymMat2};

fn disk_eigenvalues(n: usize, m: usize) -> Vec<f64> {
    let rect = Rect::new(-1.0, 1.0, -1.0, 1.0).unwrap();
    let field = constant_field(SymMat2::IDENTITY, rect, n / 2, n / 2).unwrap();
    let mesh = Mesh::build(rect, n, n, &field).unwrap().with_domain_mask(|p| p[0].hypot(p[1]) < 1.0);
    let inner = mesh.element_mask_by(|p| p[0].hypot(p[1]) < 0.5);
    let patch = PatchPair::masked(mesh, inner, [0.0, 0.0]).unwrap();
    let snaps = snapshots_poly_neumann(&patch, m).unwrap();
    optimal_basis(&patch, &snaps, 6, true, 1e-12).unwrap().eigenvalues
}

#[test]
fn concentric_disks_match_power_law() {
    let lam = disk_eigenvalues(128, 24);
    let want = [0.25, 0.25, 0.0625, 0.0625, 0.015625, 0.015625];
    for (l, w) in lam.iter().zip(want) {
        assert!((l - w).abs() / w < 0.03, "{lam:?}");
    }
}
