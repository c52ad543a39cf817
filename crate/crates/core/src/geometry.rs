//! Uniform box partitions of axis-aligned rectangular domains.
//!
//! Boxes are numbered with axis 0 varying fastest. Faces are the
//! (d-1)-dimensional interfaces between adjacent boxes, including the
//! wraparound interfaces of periodic axes. Boundary faces on non-periodic
//! axes are not enumerated: no mass crosses the domain boundary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: Vec<usize>,
    bounds: Vec<[f64; 2]>,
    periodic: Vec<bool>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    volume: f64,
    faces: Vec<Face>,
    edges: Vec<Edge>,
}

/// Interface between box `left` and box `right`, orthogonal to `axis`.
/// The normal points along +axis, out of `left` and into `right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub left: usize,
    pub right: usize,
    pub axis: usize,
    /// Corner of the face with the smallest coordinates. On `axis` this is
    /// the plane coordinate.
    pub lower: Vec<f64>,
    /// Opposite corner; equal to `lower` on `axis`.
    pub upper: Vec<f64>,
    /// Sign of the normal relative to +axis: +1 as built, -1 once reversed.
    pub orientation: f64,
    /// True for the interface that closes a periodic axis.
    pub wrap: bool,
}

impl Face {
    /// Unit normal pointing out of `left` into `right`.
    pub fn normal(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.lower.len()];
        n[self.axis] = self.orientation;
        n
    }

    /// The same interface seen from the other side.
    pub fn reversed(&self) -> Face {
        Face {
            left: self.right,
            right: self.left,
            orientation: -self.orientation,
            ..self.clone()
        }
    }

    /// (d-1)-dimensional measure; 1 for the point faces of a 1-D grid.
    pub fn measure(&self) -> f64 {
        (0..self.lower.len())
            .filter(|&a| a != self.axis)
            .map(|a| self.upper[a] - self.lower[a])
            .product()
    }
}

/// Directed pair of adjacent boxes together with the faces they share.
/// `faces` holds `(face index, sign)` where sign is +1 when the face normal
/// points from `tail` to `head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub faces: Vec<(usize, f64)>,
}

/// Tensor-product Gauss-Legendre nodes on a face.
#[derive(Debug, Clone)]
pub struct FaceQuadrature {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Build a uniform partition of `bounds` into `dims` boxes per axis.
pub fn build_grid(dims: &[usize], bounds: &[[f64; 2]], periodic: &[bool]) -> Result<Grid> {
    let d = dims.len();
    if d == 0 {
        return Err(Error::Grid("grid needs at least one axis".into()));
    }
    if bounds.len() != d || periodic.len() != d {
        return Err(Error::Grid(format!(
            "dims has {d} axes, bounds {}, periodic {}",
            bounds.len(),
            periodic.len()
        )));
    }
    if let Some(a) = dims.iter().position(|&n| n == 0) {
        return Err(Error::Grid(format!("axis {a} has zero boxes")));
    }
    for (a, b) in bounds.iter().enumerate() {
        if !(b[0].is_finite() && b[1].is_finite()) || b[0] >= b[1] {
            return Err(Error::Grid(format!("axis {a} has degenerate bounds [{}, {}]", b[0], b[1])));
        }
    }
    let m: usize = dims.iter().product();
    if m < 2 {
        return Err(Error::Grid("grid needs at least two boxes".into()));
    }
    let spacing: Vec<f64> = dims.iter().zip(bounds).map(|(&n, b)| (b[1] - b[0]) / n as f64).collect();
    let mut strides = vec![1; d];
    for a in 1..d {
        strides[a] = strides[a - 1] * dims[a - 1];
    }
    let volume = spacing.iter().product();
    let mut grid = Grid {
        dims: dims.to_vec(),
        bounds: bounds.to_vec(),
        periodic: periodic.to_vec(),
        spacing,
        strides,
        volume,
        faces: Vec::new(),
        edges: Vec::new(),
    };
    grid.faces = grid.enumerate_faces();
    grid.edges = grid.enumerate_edges();
    Ok(grid)
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Box count m.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of every box.
    pub fn box_volume(&self) -> f64 {
        self.volume
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Directed edges, sorted by (tail, head). Both orientations of every
    /// adjacency are present.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        self.dims
            .iter()
            .zip(&self.strides)
            .map(|(&n, &s)| (index / s) % n)
            .collect()
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn box_lower(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.bounds[a][0] + i as f64 * self.spacing[a])
            .collect()
    }

    pub fn box_center(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.bounds[a][0] + (i as f64 + 0.5) * self.spacing[a])
            .collect()
    }

    /// Wrap periodic coordinates into `[lo, hi)`. Non-periodic coordinates
    /// are left untouched.
    pub fn wrap(&self, x: &mut [f64]) {
        for a in 0..self.dim() {
            if self.periodic[a] {
                let [lo, hi] = self.bounds[a];
                let len = hi - lo;
                let mut y = (x[a] - lo).rem_euclid(len) + lo;
                if y >= hi {
                    y = lo;
                }
                x[a] = y;
            }
        }
    }

    /// Whether `x` lies in the closed domain after periodic wrapping.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|a| self.periodic[a] || (x[a] >= self.bounds[a][0] && x[a] <= self.bounds[a][1]))
    }

    /// Index of the box containing `x`. Points on the upper boundary of a
    /// non-periodic axis belong to the last box.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("point has {} coordinates, grid {}", x.len(), self.dim())));
        }
        let mut multi = vec![0; self.dim()];
        for a in 0..self.dim() {
            let [lo, hi] = self.bounds[a];
            let mut c = x[a];
            if self.periodic[a] {
                c = (c - lo).rem_euclid(hi - lo) + lo;
            } else if !(c >= lo && c <= hi) {
                return Err(Error::OutOfDomain { point: x.to_vec(), axis: a });
            }
            let i = ((c - lo) / self.spacing[a]).floor();
            multi[a] = (i.max(0.0) as usize).min(self.dims[a] - 1);
        }
        Ok(self.linear_index(&multi))
    }

    /// Neighbor of `index` shifted by `offset` along `axis`, honoring
    /// periodicity. `None` past a non-periodic boundary.
    pub fn neighbor(&self, index: usize, axis: usize, offset: isize) -> Option<usize> {
        let mut multi = self.multi_index(index);
        let n = self.dims[axis] as isize;
        let j = multi[axis] as isize + offset;
        let j = if self.periodic[axis] {
            j.rem_euclid(n)
        } else if j < 0 || j >= n {
            return None;
        } else {
            j
        };
        multi[axis] = j as usize;
        Some(self.linear_index(&multi))
    }

    fn enumerate_faces(&self) -> Vec<Face> {
        let d = self.dim();
        let m = self.len();
        let mut faces = Vec::new();
        for axis in 0..d {
            let n = self.dims[axis];
            let wraps = self.periodic[axis] && n >= 2;
            for v in 0..m {
                let multi = self.multi_index(v);
                let i = multi[axis];
                let last = i + 1 == n;
                if last && !wraps {
                    continue;
                }
                let w = self.neighbor(v, axis, 1).expect("neighbor exists");
                let mut lower = self.box_lower(v);
                let mut upper: Vec<f64> = lower.iter().zip(&self.spacing).map(|(l, h)| l + h).collect();
                let plane = if last {
                    self.bounds[axis][1]
                } else {
                    self.bounds[axis][0] + (i + 1) as f64 * self.spacing[axis]
                };
                lower[axis] = plane;
                upper[axis] = plane;
                faces.push(Face { left: v, right: w, axis, lower, upper, orientation: 1.0, wrap: last });
            }
        }
        faces
    }

    fn enumerate_edges(&self) -> Vec<Edge> {
        let mut map: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
        for (f, face) in self.faces.iter().enumerate() {
            map.entry((face.left, face.right)).or_default().push((f, 1.0));
            map.entry((face.right, face.left)).or_default().push((f, -1.0));
        }
        map.into_iter().map(|((tail, head), faces)| Edge { tail, head, faces }).collect()
    }

    /// Index of edge `tail -> head`, if the boxes are adjacent.
    pub fn edge_index(&self, tail: usize, head: usize) -> Option<usize> {
        self.edges
            .binary_search_by(|e| (e.tail, e.head).cmp(&(tail, head)))
            .ok()
    }

    /// Index of the reverse of every edge.
    pub fn reverse_edges(&self) -> Vec<usize> {
        self.edges
            .iter()
            .map(|e| self.edge_index(e.head, e.tail).expect("edge set is symmetric"))
            .collect()
    }
}

/// Tensor-product Gauss-Legendre rule with `order` points per face axis.
/// Weights sum to the face measure; every node lies on the face plane.
pub fn face_quadrature(face: &Face, order: usize) -> FaceQuadrature {
    assert!(order >= 1, "quadrature order must be at least 1");
    let d = face.lower.len();
    let (gx, gw) = gauss_legendre(order);
    let axes: Vec<usize> = (0..d).filter(|&a| a != face.axis).collect();
    let count = order.pow(axes.len() as u32);
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut counter = vec![0usize; axes.len()];
    for _ in 0..count {
        let mut x = face.lower.clone();
        let mut w = 1.0;
        for (slot, &a) in axes.iter().enumerate() {
            let half = 0.5 * (face.upper[a] - face.lower[a]);
            let mid = 0.5 * (face.upper[a] + face.lower[a]);
            x[a] = mid + half * gx[counter[slot]];
            w *= half * gw[counter[slot]];
        }
        nodes.push(x);
        weights.push(w);
        for c in counter.iter_mut() {
            *c += 1;
            if *c < order {
                break;
            }
            *c = 0;
        }
    }
    FaceQuadrature { nodes, weights }
}
