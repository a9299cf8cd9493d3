//! Bilinear element matrices on an axis-aligned `hx × hy` rectangle.

use crate::microstructure::SymMat2;

pub type ElementMatrix = [[f64; 4]; 4];

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Reference gradients `(∂N/∂ξ, ∂N/∂η)` on `[0,1]²`.
fn ref_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}

pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

/// `∫ A∇N_i·∇N_j` with 2×2 Gauss quadrature (exact for constant `A`).
pub fn stiffness(a: &SymMat2, hx: f64, hy: f64) -> ElementMatrix {
    let mut k = [[0.0; 4]; 4];
    let w = 0.25 * hx * hy;
    for &xi in &GAUSS2 {
        for &eta in &GAUSS2 {
            let g = ref_grad(xi, eta);
            let grads: [[f64; 2]; 4] = std::array::from_fn(|i| [g[i][0] / hx, g[i][1] / hy]);
            for i in 0..4 {
                let ag = a.apply(grads[i]);
                for j in 0..4 {
                    k[i][j] += w * (ag[0] * grads[j][0] + ag[1] * grads[j][1]);
                }
            }
        }
    }
    k
}

/// `∫ w N_i N_j` for a constant weight.
pub fn mass(weight: f64, hx: f64, hy: f64) -> ElementMatrix {
    let s = weight * hx * hy / 36.0;
    // Tensor product of the 1D mass [2 1; 1 2]/6.
    let pattern = [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ];
    pattern.map(|row| row.map(|v| v * s))
}

/// `uᵀ K v` for 4-vectors.
pub fn quad_form(k: &ElementMatrix, u: &[f64; 4], v: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            s += u[i] * k[i][j] * v[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand integration of bilinear shape functions on the unit square with
    /// A = I: diagonal 2/3, edge neighbours -1/6, opposite corner -1/3.
    #[test]
    fn unit_laplacian_matches_hand_integration() {
        let k = stiffness(&SymMat2::IDENTITY, 1.0, 1.0);
        let d = 2.0 / 3.0;
        let e = -1.0 / 6.0;
        let c = -1.0 / 3.0;
        let expect = [[d, e, c, e], [e, d, e, c], [c, e, d, e], [e, c, e, d]];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    /// Hand integration of products of bilinear shapes on the unit square:
    /// 1/9 diagonal, 1/18 edge, 1/36 corner.
    #[test]
    fn unit_mass_matches_hand_integration() {
        let m = mass(1.0, 1.0, 1.0);
        let expect = [
            [1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0],
            [1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0],
            [1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0],
            [1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((m[i][j] - expect[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn anisotropic_rows_sum_to_zero_and_energy_of_linear() {
        let a = SymMat2::new(3.0, 0.7, 1.5);
        let (hx, hy) = (0.3, 0.2);
        let k = stiffness(&a, hx, hy);
        for row in &k {
            assert!(row.iter().sum::<f64>().abs() < 1e-13);
        }
        // u = 2x - y has constant gradient g, energy = |e| gᵀAg
        let u = [0.0, 2.0 * hx, 2.0 * hx - hy, -hy];
        let g = [2.0, -1.0];
        let ag = a.apply(g);
        let exact = hx * hy * (ag[0] * g[0] + ag[1] * g[1]);
        assert!((quad_form(&k, &u, &u) - exact).abs() < 1e-13);
    }
}
