use crate::error::{Error, Result};
use crate::geometry::{grid_count, grid_index, Point, Rect, GRID_TOL};
use crate::microstructure::{CoefficientField, SymMat2};

/// Which part of the mesh boundary an edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
    /// Interface with an element masked out of the computational domain.
    Mask,
}

/// A boundary edge of the active region that carries flux data.
///
/// Edges facing hole elements are not listed: holes carry the natural
/// zero-flux condition.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub normal: Point,
    pub side: Side,
}

/// Structured bilinear quadrilateral mesh on a rectangle.
///
/// Nodes are numbered `j * (nx + 1) + i`; elements `j * nx + i`, with local
/// node order (i,j), (i+1,j), (i+1,j+1), (i,j+1).
#[derive(Debug, Clone)]
pub struct Mesh {
    rect: Rect,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    coeff: Vec<Option<SymMat2>>,
    outside: Vec<bool>,
}

impl Mesh {
    /// Builds a mesh whose elements each sit inside exactly one cell of `field`.
    pub fn build(rect: Rect, nx: usize, ny: usize, field: &CoefficientField) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("mesh needs at least one element per direction"));
        }
        let fd = field.domain();
        if !fd.contains_rect(&rect) {
            return Err(Error::Misaligned("mesh rectangle leaves the coefficient domain".into()));
        }
        let hx = rect.width() / nx as f64;
        let hy = rect.height() / ny as f64;
        let (cx, cy) = field.cell_size();
        let rx = grid_count(cx, hx)
            .map_err(|_| Error::Misaligned(format!("element width {hx} does not divide cell width {cx}")))?;
        let ry = grid_count(cy, hy)
            .map_err(|_| Error::Misaligned(format!("element height {hy} does not divide cell height {cy}")))?;
        // Cell lines must fall on element lines.
        grid_index(rect.x0, fd.x0, hx)
            .and_then(|_| grid_index(rect.y0, fd.y0, hy))
            .map_err(|_| Error::Misaligned("mesh origin is not on the coefficient grid".into()))?;
        let _ = (rx, ry);
        let mut coeff = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let c = [rect.x0 + (i as f64 + 0.5) * hx, rect.y0 + (j as f64 + 0.5) * hy];
                let (ci, cj) = field
                    .locate(c)
                    .ok_or_else(|| Error::Misaligned("element centre outside field".into()))?;
                coeff.push(field.cell(ci, cj));
            }
        }
        Ok(Mesh { rect, nx, ny, hx, hy, coeff, outside: vec![false; nx * ny] })
    }

    /// Removes elements whose centre fails `inside` from the computational
    /// domain. Their interface becomes a flux-carrying boundary.
    pub fn with_domain_mask(mut self, inside: impl Fn(Point) -> bool) -> Self {
        for e in 0..self.num_elements() {
            if !inside(self.element_center(e)) {
                self.outside[e] = true;
                self.coeff[e] = None;
            }
        }
        self
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_ij(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    pub fn node_coord(&self, n: usize) -> Point {
        let (i, j) = self.node_ij(n);
        [self.rect.x0 + i as f64 * self.hx, self.rect.y0 + j as f64 * self.hy]
    }

    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e % self.nx, e / self.nx);
        let n0 = self.node_index(i, j);
        let n3 = self.node_index(i, j + 1);
        [n0, n0 + 1, n3 + 1, n3]
    }

    pub fn element_center(&self, e: usize) -> Point {
        let (i, j) = (e % self.nx, e / self.nx);
        [self.rect.x0 + (i as f64 + 0.5) * self.hx, self.rect.y0 + (j as f64 + 0.5) * self.hy]
    }

    pub fn element_rect(&self, e: usize) -> Rect {
        let (i, j) = (e % self.nx, e / self.nx);
        let x0 = self.rect.x0 + i as f64 * self.hx;
        let y0 = self.rect.y0 + j as f64 * self.hy;
        Rect { x0, x1: x0 + self.hx, y0, y1: y0 + self.hy }
    }

    /// Coefficient on an element, `None` when inactive.
    pub fn coefficient(&self, e: usize) -> Option<SymMat2> {
        self.coeff[e]
    }

    pub fn is_active(&self, e: usize) -> bool {
        self.coeff[e].is_some()
    }

    pub fn is_outside(&self, e: usize) -> bool {
        self.outside[e]
    }

    pub fn active_elements(&self) -> usize {
        self.coeff.iter().filter(|c| c.is_some()).count()
    }

    /// Nodes touched by at least one active element.
    pub fn active_nodes(&self) -> Vec<bool> {
        let mut out = vec![false; self.num_nodes()];
        for e in 0..self.num_elements() {
            if self.is_active(e) {
                for n in self.element_nodes(e) {
                    out[n] = true;
                }
            }
        }
        out
    }

    /// Connected components of the active region (elements sharing a node
    /// are connected): a label per node, `None` on inactive nodes, labels
    /// numbered by lowest node index, and the component count.
    pub fn node_components(&self) -> (Vec<Option<usize>>, usize) {
        let nn = self.num_nodes();
        let mut parent: Vec<usize> = (0..nn).collect();
        fn root(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let active = self.active_nodes();
        for e in (0..self.num_elements()).filter(|&e| self.is_active(e)) {
            let nodes = self.element_nodes(e);
            for &n in &nodes[1..] {
                let (a, b) = (root(&mut parent, nodes[0]), root(&mut parent, n));
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label_of_root = vec![usize::MAX; nn];
        let mut count = 0;
        let labels = (0..nn)
            .map(|n| {
                if !active[n] {
                    return None;
                }
                let r = root(&mut parent, n);
                if label_of_root[r] == usize::MAX {
                    label_of_root[r] = count;
                    count += 1;
                }
                Some(label_of_root[r])
            })
            .collect();
        (labels, count)
    }

    /// Largest cellwise eigenvalue over active elements.
    pub fn beta(&self) -> f64 {
        self.coeff
            .iter()
            .flatten()
            .map(|m| m.eigenvalues().1)
            .fold(0.0, f64::max)
    }

    /// Element index range `[i0, i1) × [j0, j1)` covering an aligned rectangle.
    pub fn element_range(&self, r: &Rect) -> Result<(usize, usize, usize, usize)> {
        if !self.rect.contains_rect(r) {
            return Err(Error::invalid("region lies outside the mesh"));
        }
        let i0 = grid_index(r.x0, self.rect.x0, self.hx)?;
        let i1 = grid_index(r.x1, self.rect.x0, self.hx)?;
        let j0 = grid_index(r.y0, self.rect.y0, self.hy)?;
        let j1 = grid_index(r.y1, self.rect.y0, self.hy)?;
        Ok((i0, i1, j0, j1))
    }

    /// Element mask of an aligned sub-rectangle.
    pub fn element_mask(&self, r: &Rect) -> Result<Vec<bool>> {
        let (i0, i1, j0, j1) = self.element_range(r)?;
        let mut m = vec![false; self.num_elements()];
        for j in j0..j1 {
            for i in i0..i1 {
                m[j * self.nx + i] = true;
            }
        }
        Ok(m)
    }

    /// Element mask from a predicate on element centres.
    pub fn element_mask_by(&self, f: impl Fn(Point) -> bool) -> Vec<bool> {
        (0..self.num_elements()).map(|e| f(self.element_center(e))).collect()
    }

    /// Node index for a coordinate lying on a grid node.
    pub fn node_at(&self, p: Point) -> Option<usize> {
        let fi = (p[0] - self.rect.x0) / self.hx;
        let fj = (p[1] - self.rect.y0) / self.hy;
        let (ri, rj) = (fi.round(), fj.round());
        let tol = 1e-6;
        if (fi - ri).abs() > tol || (fj - rj).abs() > tol || ri < 0.0 || rj < 0.0 {
            return None;
        }
        let (i, j) = (ri as usize, rj as usize);
        (i <= self.nx && j <= self.ny).then(|| self.node_index(i, j))
    }

    /// Flux-carrying boundary edges of the active region, in a fixed order.
    pub fn boundary_edges(&self) -> Vec<BoundaryEdge> {
        let mut out = Vec::new();
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            for i in 0..nx {
                let e = j * nx + i;
                if !self.is_active(e) {
                    continue;
                }
                let [n0, n1, n2, n3] = self.element_nodes(e);
                // bottom, right, top, left
                let faces = [
                    ([n0, n1], [0.0, -1.0], j.checked_sub(1).map(|jj| jj * nx + i), Side::Bottom),
                    ([n1, n2], [1.0, 0.0], (i + 1 < nx).then(|| e + 1), Side::Right),
                    ([n2, n3], [0.0, 1.0], (j + 1 < ny).then(|| e + nx), Side::Top),
                    ([n3, n0], [-1.0, 0.0], i.checked_sub(1).map(|ii| j * nx + ii), Side::Left),
                ];
                for (nodes, normal, nb, side) in faces {
                    match nb {
                        None => out.push(BoundaryEdge { nodes, normal, side }),
                        Some(k) if self.outside[k] => {
                            out.push(BoundaryEdge { nodes, normal, side: Side::Mask })
                        }
                        _ => {}
                    }
                }
            }
        }
        out
    }

    /// Nodes lying on any flux-carrying boundary edge accepted by `filter`.
    pub fn boundary_nodes(&self, filter: impl Fn(Side) -> bool) -> Vec<usize> {
        let mut flag = vec![false; self.num_nodes()];
        for edge in self.boundary_edges() {
            if filter(edge.side) {
                flag[edge.nodes[0]] = true;
                flag[edge.nodes[1]] = true;
            }
        }
        (0..self.num_nodes()).filter(|&n| flag[n]).collect()
    }

    /// Mesh on a sub-rectangle sharing this mesh's nodes and coefficients.
    pub fn submesh(&self, r: &Rect) -> Result<Mesh> {
        let (i0, i1, j0, j1) = self.element_range(r)?;
        if i1 <= i0 || j1 <= j0 {
            return Err(Error::invalid("empty submesh"));
        }
        let mut coeff = Vec::with_capacity((i1 - i0) * (j1 - j0));
        let mut outside = Vec::with_capacity(coeff.capacity());
        for j in j0..j1 {
            for i in i0..i1 {
                coeff.push(self.coeff[j * self.nx + i]);
                outside.push(self.outside[j * self.nx + i]);
            }
        }
        let rect = Rect {
            x0: self.rect.x0 + i0 as f64 * self.hx,
            x1: self.rect.x0 + i1 as f64 * self.hx,
            y0: self.rect.y0 + j0 as f64 * self.hy,
            y1: self.rect.y0 + j1 as f64 * self.hy,
        };
        Ok(Mesh { rect, nx: i1 - i0, ny: j1 - j0, hx: self.hx, hy: self.hy, coeff, outside })
    }

    /// Maps every node of `sub` to the node of `self` at the same location.
    pub fn node_map_from(&self, sub: &Mesh) -> Result<Vec<usize>> {
        let (sx, sy) = sub.spacing();
        if (sx - self.hx).abs() > GRID_TOL * self.hx || (sy - self.hy).abs() > GRID_TOL * self.hy {
            return Err(Error::Misaligned("meshes have different spacing".into()));
        }
        (0..sub.num_nodes())
            .map(|n| {
                self.node_at(sub.node_coord(n))
                    .ok_or_else(|| Error::Misaligned("submesh node not on parent mesh".into()))
            })
            .collect()
    }
}
