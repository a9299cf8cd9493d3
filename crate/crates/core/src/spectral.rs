//! Dense symmetric eigensolvers for small reduced pencils.
//!
//! Snapshot Gram matrices are at most a few hundred rows, so everything
//! here is dense. The standard problem is solved by cyclic Jacobi; the
//! generalized problem `S v = λ T v` is whitened through a rank-filtered
//! spectral decomposition of `T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative threshold below which Gram directions are dropped.
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-12;

/// Eigenvalues below `-NEGATIVE_TOL * λ_max` mark a Gram that is not PSD.
const NEGATIVE_TOL: f64 = 1e-9;

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Returns `(values, vectors)` unsorted; `vectors` columns are orthonormal.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "Jacobi needs a square matrix");
    let mut a = a.clone();
    // Work on the symmetric part.
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-16 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diagonal(), v)
}

/// Eigenpairs sorted by decreasing value; ties keep their original order.
pub fn sorted_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (vals, vecs) = jacobi_eigen(a);
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let sorted_vecs = DMatrix::from_fn(vecs.nrows(), order.len(), |r, c| vecs[(r, order[c])]);
    (sorted_vals, sorted_vecs)
}

/// Whitening of the numerically significant subspace of a PSD Gram.
#[derive(Debug, Clone)]
pub struct RankFilter {
    /// `M × r` with `Wᵀ T W = I`.
    pub transform: DMatrix<f64>,
    pub rank: usize,
    /// All eigenvalues of `T`, decreasing.
    pub spectrum: Vec<f64>,
}

/// Drops directions of `t` with eigenvalue below `rel_threshold · λ_max`.
pub fn filter_rank(t: &DMatrix<f64>, rel_threshold: f64) -> Result<RankFilter> {
    let m = t.nrows();
    if m == 0 {
        return Ok(RankFilter { transform: DMatrix::zeros(0, 0), rank: 0, spectrum: vec![] });
    }
    let (vals, vecs) = sorted_eigen(t);
    let lmax = vals[0].max(0.0);
    if let Some(&neg) = vals.iter().find(|&&v| v < -NEGATIVE_TOL * lmax.max(f64::MIN_POSITIVE)) {
        return Err(Error::invalid(format!(
            "Gram matrix has negative eigenvalue {neg:.3e} (max {lmax:.3e})"
        )));
    }
    let cut = rel_threshold * lmax;
    let rank = if lmax > 0.0 { vals.iter().take_while(|&&v| v > cut).count() } else { 0 };
    let transform = DMatrix::from_fn(m, rank, |r, c| vecs[(r, c)] / vals[c].sqrt());
    Ok(RankFilter { transform, rank, spectrum: vals })
}

/// Snapshot Grams of a restriction eigenproblem.
#[derive(Debug, Clone)]
pub struct ReducedPencil {
    /// Gram in the inner energy product (over `ω`).
    pub s: DMatrix<f64>,
    /// Gram in the outer energy product (over `ω*`).
    pub t: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl ReducedPencil {
    pub fn new(s: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        if s.shape() != t.shape() || s.nrows() != s.ncols() {
            return Err(Error::invalid("pencil matrices must be square and equal in size"));
        }
        let labels = (0..s.nrows()).map(|i| format!("s{i}")).collect();
        Ok(ReducedPencil { s, t, labels })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

/// Solution of `S v = λ T v` on the retained subspace.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Decreasing.
    pub values: Vec<f64>,
    /// `M × r` coefficient columns over the snapshots, `T`-orthonormal.
    pub vectors: DMatrix<f64>,
    pub retained_rank: usize,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `max_i ‖S v_i − λ_i T v_i‖`.
    pub fn max_residual(&self, pencil: &ReducedPencil) -> f64 {
        (0..self.len())
            .map(|i| {
                let v = self.vectors.column(i);
                (&pencil.s * v - self.values[i] * (&pencil.t * v)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Generalized symmetric eigenproblem `S v = λ T v`, `λ` decreasing.
pub fn solve_pencil(pencil: &ReducedPencil, rel_threshold: f64) -> Result<EigenPairs> {
    let filter = filter_rank(&pencil.t, rel_threshold)?;
    if filter.rank == 0 {
        return Err(Error::Degenerate { requested: 1, rank: 0 });
    }
    let w = &filter.transform;
    let c = w.transpose() * &pencil.s * w;
    let (values, y) = sorted_eigen(&c);
    let vectors = w * y;
    Ok(EigenPairs { values, vectors, retained_rank: filter.rank })
}
