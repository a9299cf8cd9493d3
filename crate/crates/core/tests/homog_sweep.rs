use msgfem::homog::{
    analytic_ellipse_widths, epsilon_sweep, flatten_levels, laminate_cell, SweepConfig, SweepGeometry,
};

fn laminate_sweep() -> msgfem::homog::SweepTable {
    let cfg = SweepConfig {
        periods: vec![4, 8, 16],
        geometry: SweepGeometry::AdaptedEllipses { r: 0.2, r_star: 0.45 },
        mesh: 128,
        snapshots: 24,
        count: 4,
        cell_mesh: 128,
        with_q: true,
    };
    epsilon_sweep(&laminate_cell(1.0, 4.0).unwrap(), &cfg, 4).unwrap()
}

#[test]
fn laminate_sweep_approaches_homogenized_limit() {
    let t = laminate_sweep();
    assert_eq!(t.eps_values(), vec![0.25, 0.125, 0.0625]);
    for i in 1..=4 {
        let d = t.deviations_of(i);
        assert!(d.windows(2).all(|w| w[1] <= w[0]), "i = {i}: {d:?}");
    }
    // reference run against the closed form on A⁰-adapted ellipses
    let exact = flatten_levels(&analytic_ellipse_widths(0.2, 0.45, 2).unwrap());
    for (r, e) in t.reference.iter().zip(&exact) {
        assert!((r.lambda - e).abs() <= 0.05 * e, "{} vs {e}", r.lambda);
    }
    // Q tracks √λ more closely as ε shrinks
    for i in 1..=4 {
        let gaps: Vec<f64> = t
            .rows
            .iter()
            .filter(|r| r.i == i)
            .map(|r| (r.q.unwrap() - r.lambda.sqrt()).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "i = {i}: {gaps:?}");
        assert!(t.rows.iter().all(|r| (0.0..=1.0).contains(&r.q.unwrap())));
    }
}

#[test]
fn sweep_is_worker_independent() {
    let cfg = SweepConfig {
        periods: vec![2, 4],
        geometry: SweepGeometry::AdaptedEllipses { r: 0.2, r_star: 0.45 },
        mesh: 64,
        snapshots: 12,
        count: 3,
        cell_mesh: 32,
        with_q: false,
    };
    let cell = laminate_cell(1.0, 4.0).unwrap();
    let a = epsilon_sweep(&cell, &cfg, 1).unwrap();
    let b = epsilon_sweep(&cell, &cfg, 8).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.reference, b.reference);
}
