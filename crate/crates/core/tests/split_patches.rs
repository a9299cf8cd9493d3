use msgfem::fem::Mesh;
use msgfem::geometry::Rect;
use msgfem::gfem::{direct_solve, global_error, run_gfem, BasisSpec, Cover, CoverSpec, GfemOptions, Problem};
use msgfem::microstructure::{CoefficientField, SymMat2};

/// Hole wall `3/8 < x < 7/16` above `y = 1/4`; the two sides only connect
/// through the bottom strip, so patches above it see two components. The
/// wall reaches the top side, so Neumann data there must vanish.
fn walled_field() -> CoefficientField {
    let cells = (0..256).map(|c| SymMat2::scalar(if (c / 16 + c % 16) % 3 == 0 { 5.0 } else { 1.0 })).collect();
    let holes = (0..256).map(|c| c % 16 == 6 && c / 16 >= 4).collect();
    CoefficientField::from_cells(Rect::unit(), 16, 16, cells, Some(holes)).unwrap()
}

fn errors(problem: &Problem, fine: &Mesh, spec: BasisSpec) -> f64 {
    let opts = GfemOptions::new(CoverSpec { m: 4, star_cells: 1 }, spec, 2);
    let run = run_gfem(problem, fine, &opts).unwrap();
    let u = direct_solve(problem, fine).unwrap();
    global_error(fine, &u, &run.solution.field).unwrap().0
}

#[test]
fn split_patches_are_detected() {
    let field = walled_field();
    let fine = Mesh::build(Rect::unit(), 32, 32, &field).unwrap();
    assert_eq!(fine.node_components().1, 1);
    let cover = Cover::build(&fine, CoverSpec { m: 4, star_cells: 1 }).unwrap();
    let split = (0..cover.len())
        .filter(|&i| cover.patch(i, &fine, &field, false).unwrap().mesh.node_components().1 > 1)
        .count();
    assert!(split >= 2, "{split}");
}

#[test]
fn gfem_converges_across_split_patches() {
    let field = walled_field();
    let fine = Mesh::build(Rect::unit(), 32, 32, &field).unwrap();
    let neumann = Problem::neumann(field.clone(), |_, n| 2.0 * n[0]);
    let dirichlet = Problem::dirichlet(field, |p| 2.0 * p[0] - p[1]).with_source(|_| 1.0);
    for problem in [neumann, dirichlet] {
        let poly: Vec<f64> = (1..=3).map(|k| errors(&problem, &fine, BasisSpec::polynomial(2 * k))).collect();
        assert!(poly.iter().all(|e| e.is_finite() && *e < 1.0), "{poly:?}");
        assert!(poly.windows(2).all(|w| w[1] < w[0]), "{poly:?}");
        for k in 1..=3 {
            let opt = errors(&problem, &fine, BasisSpec::optimal(2 * k, 16));
            assert!(opt <= poly[k - 1] + 1e-8, "k = {k}: {opt} > {}", poly[k - 1]);
        }
    }
}
