//! Neumann, Dirichlet and mixed solves on a single mesh.
//!
//! Nodes not touched by any active element are dropped from every system
//! and reported as zero.

use super::assembly::lumped_area;
use super::mesh::{Mesh, Side};
use super::sparse::{Cholesky, CsrMatrix};
use crate::error::{Error, Result};

/// Relative tolerance for discrete Neumann consistency.
pub const CONSISTENCY_TOL: f64 = 1e-10;

/// Integral mean `∫u / |active|` of a nodal field.
pub fn integral_mean(mesh: &Mesh, u: &[f64]) -> f64 {
    let w = lumped_area(mesh);
    let area: f64 = w.iter().sum();
    w.iter().zip(u).map(|(w, u)| w * u).sum::<f64>() / area
}

/// Shifts `u` to zero integral mean on each connected component of the
/// active region and zeroes inactive nodes.
pub fn remove_mean(mesh: &Mesh, u: &mut [f64]) {
    let (labels, count) = mesh.node_components();
    let w = lumped_area(mesh);
    let mut sums = vec![(0.0, 0.0); count];
    for ((w, v), c) in w.iter().zip(u.iter()).zip(&labels) {
        if let Some(c) = c {
            sums[*c].0 += w * v;
            sums[*c].1 += w;
        }
    }
    for (v, c) in u.iter_mut().zip(&labels) {
        match c {
            Some(c) => *v -= sums[*c].0 / sums[*c].1,
            None => *v = 0.0,
        }
    }
}

/// Per-component sums `Σ load` and `Σ |load|` over labelled nodes.
fn component_sums(labels: &[Option<usize>], count: usize, load: &[f64]) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); count];
    for (l, c) in load.iter().zip(labels) {
        if let Some(c) = c {
            out[*c].0 += l;
            out[*c].1 += l.abs();
        }
    }
    out
}

/// Subtracts from `load`, on each selected component, the multiple of
/// `weights` that makes its sum vanish. Components without weight are left
/// unchanged.
pub fn balance_components(
    labels: &[Option<usize>],
    selected: impl Fn(usize) -> bool,
    load: &mut [f64],
    weights: &[f64],
) {
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let sums = component_sums(labels, count, load);
    let lens = component_sums(labels, count, weights);
    for ((l, w), c) in load.iter_mut().zip(weights).zip(labels) {
        if let Some(c) = *c {
            if selected(c) && lens[c].0 > 0.0 {
                *l -= sums[c].0 / lens[c].0 * w;
            }
        }
    }
}

/// One pinned node per listed component; the solution is shifted to zero
/// mean on each of them afterwards.
#[derive(Debug)]
struct Floating {
    labels: Vec<Option<usize>>,
    count: usize,
    /// Components carrying a pin.
    pinned: Vec<bool>,
    pins: Vec<usize>,
    weights: Vec<f64>,
    areas: Vec<f64>,
}

impl Floating {
    fn new(mesh: &Mesh, has_fixed: &[bool]) -> Self {
        let (labels, count) = mesh.node_components();
        let mut pins = Vec::new();
        let mut pinned = vec![false; count];
        for (n, c) in labels.iter().enumerate() {
            if let Some(c) = *c {
                if !has_fixed[c] && !pinned[c] {
                    pinned[c] = true;
                    pins.push(n);
                }
            }
        }
        let weights = lumped_area(mesh);
        let mut areas = vec![0.0; count];
        for (w, c) in weights.iter().zip(&labels) {
            if let Some(c) = c {
                areas[*c] += w;
            }
        }
        Floating { labels, count, pinned, pins, weights, areas }
    }

    /// Largest consistency defect over floating components and its tolerance.
    fn check(&self, load: &[f64]) -> Result<()> {
        let sums = component_sums(&self.labels, self.count, load);
        let scale: f64 = sums.iter().map(|s| s.1).sum();
        let defect = (0..self.count).filter(|&c| self.pinned[c]).map(|c| sums[c].0.abs()).fold(0.0, f64::max);
        if defect > CONSISTENCY_TOL * scale {
            return Err(Error::Inconsistent { defect, tolerance: CONSISTENCY_TOL * scale });
        }
        Ok(())
    }

    fn shift(&self, u: &mut [f64]) {
        let mut means = vec![0.0; self.count];
        for ((w, v), c) in self.weights.iter().zip(u.iter()).zip(&self.labels) {
            if let Some(c) = c {
                means[*c] += w * v;
            }
        }
        for (v, c) in u.iter_mut().zip(&self.labels) {
            if let Some(c) = *c {
                if self.pinned[c] {
                    *v -= means[c] / self.areas[c];
                }
            }
        }
    }
}

/// Factorized pure-Neumann operator on the quotient by constants.
///
/// The constant nullspace of each connected component is removed by fixing
/// one node and shifting the result to zero mean on that component, which
/// equals the Lagrange-multiplier solution for consistent data.
#[derive(Debug)]
pub struct NeumannSolver {
    free: Vec<usize>,
    chol: Cholesky,
    floating: Floating,
}

impl NeumannSolver {
    pub fn new(mesh: &Mesh, k: &CsrMatrix) -> Result<Self> {
        let active = mesh.active_nodes();
        let (_, count) = mesh.node_components();
        if count == 0 {
            return Err(Error::invalid("mesh has no active nodes"));
        }
        let floating = Floating::new(mesh, &vec![false; count]);
        let mut is_pin = vec![false; mesh.num_nodes()];
        floating.pins.iter().for_each(|&n| is_pin[n] = true);
        let free: Vec<usize> = (0..mesh.num_nodes()).filter(|&n| active[n] && !is_pin[n]).collect();
        if free.is_empty() {
            return Err(Error::invalid("Neumann problem has a single node"));
        }
        let chol = Cholesky::factor(&k.principal(&free))?;
        Ok(NeumannSolver { free, chol, floating })
    }

    /// Number of connected components of the active region.
    pub fn components(&self) -> usize {
        self.floating.count
    }

    /// Discrete consistency defect (largest `|Σ load|` over components) and
    /// its scale `Σ |load|`.
    pub fn defect(&self, load: &[f64]) -> (f64, f64) {
        let sums = component_sums(&self.floating.labels, self.floating.count, load);
        (sums.iter().map(|s| s.0.abs()).fold(0.0, f64::max), sums.iter().map(|s| s.1).sum())
    }

    /// Mean-zero solution of `K u = load`; rejects inconsistent data.
    pub fn solve(&self, load: &[f64]) -> Result<Vec<f64>> {
        self.floating.check(load)?;
        let mut rhs: Vec<f64> = self.free.iter().map(|&n| load[n]).collect();
        self.chol.solve_in_place(&mut rhs);
        let mut u = vec![0.0; load.len()];
        for (&n, v) in self.free.iter().zip(rhs) {
            u[n] = v;
        }
        self.floating.shift(&mut u);
        Ok(u)
    }
}

/// Factorized operator with values prescribed on a node set.
///
/// Components of the active region without a prescribed node are treated as
/// pure-Neumann subproblems (consistent load, zero mean).
#[derive(Debug)]
pub struct DirichletSolver {
    free: Vec<usize>,
    fixed: Vec<usize>,
    chol: Option<Cholesky>,
    k: CsrMatrix,
    floating: Floating,
}

impl DirichletSolver {
    pub fn new(mesh: &Mesh, k: &CsrMatrix, fixed: &[usize]) -> Result<Self> {
        if fixed.is_empty() {
            return Err(Error::invalid("Dirichlet boundary node set is empty"));
        }
        let active = mesh.active_nodes();
        let (labels, count) = mesh.node_components();
        let mut is_fixed = vec![false; mesh.num_nodes()];
        let mut has_fixed = vec![false; count];
        for &n in fixed {
            is_fixed[n] = true;
            if let Some(c) = labels[n] {
                has_fixed[c] = true;
            }
        }
        let floating = Floating::new(mesh, &has_fixed);
        let mut is_pin = vec![false; mesh.num_nodes()];
        floating.pins.iter().for_each(|&n| is_pin[n] = true);
        let free: Vec<usize> =
            (0..mesh.num_nodes()).filter(|&n| active[n] && !is_fixed[n] && !is_pin[n]).collect();
        let chol = if free.is_empty() {
            None
        } else {
            Some(Cholesky::factor(&k.principal(&free))?)
        };
        let mut fixed = fixed.to_vec();
        fixed.sort_unstable();
        fixed.dedup();
        Ok(DirichletSolver { free, fixed, chol, k: k.clone(), floating })
    }

    pub fn fixed_nodes(&self) -> &[usize] {
        &self.fixed
    }

    /// Component labels of the active region.
    pub fn labels(&self) -> &[Option<usize>] {
        &self.floating.labels
    }

    /// Whether component `c` has no prescribed node.
    pub fn is_floating(&self, c: usize) -> bool {
        self.floating.pinned[c]
    }

    /// Solves with `u = values[k]` on `fixed_nodes()[k]` and the given load
    /// on free rows (load entries on fixed rows are ignored).
    pub fn solve(&self, load: &[f64], values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.fixed.len() {
            return Err(Error::invalid("one boundary value per fixed node required"));
        }
        self.floating.check(load)?;
        let n = load.len();
        let mut u = vec![0.0; n];
        for (&node, &v) in self.fixed.iter().zip(values) {
            u[node] = v;
        }
        let Some(chol) = &self.chol else {
            return Ok(u);
        };
        let lift = self.k.mul_vec(&u);
        let mut rhs: Vec<f64> = self.free.iter().map(|&i| load[i] - lift[i]).collect();
        chol.solve_in_place(&mut rhs);
        for (&i, v) in self.free.iter().zip(rhs) {
            u[i] = v;
        }
        self.floating.shift(&mut u);
        Ok(u)
    }
}

/// Convenience: Neumann solve with a volume load plus boundary flux load.
pub fn solve_neumann(mesh: &Mesh, k: &CsrMatrix, load: &[f64], boundary: &[f64]) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = load.iter().zip(boundary).map(|(a, b)| a + b).collect();
    NeumannSolver::new(mesh, k)?.solve(&rhs)
}

/// Convenience: Dirichlet solve with `values` on `nodes`.
pub fn solve_dirichlet(
    mesh: &Mesh,
    k: &CsrMatrix,
    nodes: &[usize],
    values: &[f64],
    load: &[f64],
) -> Result<Vec<f64>> {
    let mut pairs: Vec<(usize, f64)> = nodes.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by_key(|p| p.0);
    pairs.dedup_by_key(|p| p.0);
    let sorted: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let vals: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    DirichletSolver::new(mesh, k, &sorted)?.solve(load, &vals)
}

/// Boundary data for an A-harmonic extension.
#[derive(Debug, Clone)]
pub enum Trace {
    /// Nodal values on the listed nodes.
    Dirichlet { nodes: Vec<usize>, values: Vec<f64> },
    /// Assembled boundary load `∫ g N_i ds`.
    Neumann(Vec<f64>),
}

/// Discrete A-harmonic function with the given boundary data.
///
/// Neumann extensions are normalized to zero mean.
pub fn harmonic_extension(mesh: &Mesh, k: &CsrMatrix, trace: &Trace) -> Result<Vec<f64>> {
    let zero = vec![0.0; mesh.num_nodes()];
    match trace {
        Trace::Dirichlet { nodes, values } => solve_dirichlet(mesh, k, nodes, values, &zero),
        Trace::Neumann(load) => NeumannSolver::new(mesh, k)?.solve(load),
    }
}

/// Relative residual of `K u = 0` on rows away from the flux boundary.
///
/// Rows on hole interfaces are included (their natural condition is part of
/// the discrete equation).
pub fn interior_residual(mesh: &Mesh, k: &CsrMatrix, u: &[f64]) -> f64 {
    let active = mesh.active_nodes();
    let mut boundary = vec![false; mesh.num_nodes()];
    for n in mesh.boundary_nodes(|_: Side| true) {
        boundary[n] = true;
    }
    let r = k.mul_vec(u);
    let mut num = 0.0;
    let mut den = 0.0;
    for n in 0..mesh.num_nodes() {
        if !active[n] {
            continue;
        }
        den += u[n] * u[n];
        if !boundary[n] {
            num += r[n] * r[n];
        }
    }
    if den == 0.0 {
        return 0.0;
    }
    num.sqrt() / (k.norm_inf() * den.sqrt())
}

/// `‖K u − rhs‖ / (‖K‖ ‖u‖ + ‖rhs‖)` restricted to the given rows.
pub fn relative_residual(k: &CsrMatrix, u: &[f64], rhs: &[f64], rows: &[usize]) -> f64 {
    let r = k.mul_vec(u);
    let num: f64 = rows.iter().map(|&i| (r[i] - rhs[i]).powi(2)).sum::<f64>().sqrt();
    let un: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bn: f64 = rows.iter().map(|&i| rhs[i] * rhs[i]).sum::<f64>().sqrt();
    let den = k.norm_inf() * un + bn;
    if den == 0.0 { 0.0 } else { num / den }
}
