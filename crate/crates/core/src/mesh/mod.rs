//! Structured simplicial meshes of the unit square and unit cube.
//!
//! Every grid square is split along the `(i, j) -> (i+1, j+1)` diagonal and every grid cube into
//! the six Kuhn tetrahedra that share the main diagonal, so refinement is nested. Cell vertex
//! tuples are stored in ascending global order, which makes the local edge `(a, b)` with `a < b`
//! carry the global edge orientation (tangent from the smaller to the larger vertex index).

mod patch;

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use patch::{EntityLocation, Patch, PatchBoundary, PatchKind};
pub(crate) use patch::layer_cells;

/// Local vertex pairs of the edges of a triangle, in the order used for `cell_edges`.
pub const TRIANGLE_EDGES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];
/// Local vertex pairs of the edges of a tetrahedron.
pub const TET_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
/// Local vertex triples of the faces of a tetrahedron.
pub const TET_FACES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];

const PERMS_2D: [[usize; 2]; 2] = [[0, 1], [1, 0]];
const PERMS_3D: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

pub fn local_edges(dim: usize) -> &'static [[usize; 2]] {
    if dim == 2 {
        &TRIANGLE_EDGES
    } else {
        &TET_EDGES
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    n: usize,
    grid: Vec<[usize; 3]>,
    vertices: Vec<[f64; 3]>,
    cells: Vec<[usize; 4]>,
    edges: Vec<[usize; 2]>,
    faces: Vec<[usize; 3]>,
    cell_edges: Vec<[usize; 6]>,
    cell_faces: Vec<[usize; 4]>,
    edge_index: HashMap<[usize; 2], usize>,
    face_index: HashMap<[usize; 3], usize>,
    vertex_cells: Vec<Vec<usize>>,
    facet_cells: Vec<Vec<usize>>,
    parent: Option<Arc<Mesh>>,
    cell_parent: Option<Vec<usize>>,
}

impl Mesh {
    /// Uniform mesh of `[0,1]^dim` with `n` subdivisions per side.
    pub fn structured(dim: usize, n: usize) -> Result<Mesh> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidDimension(dim));
        }
        if n == 0 {
            return Err(Error::ZeroSubdivisions);
        }
        let side = n + 1;
        let nverts = side.pow(dim as u32);
        let mut grid = Vec::with_capacity(nverts);
        let mut vertices = Vec::with_capacity(nverts);
        for v in 0..nverts {
            let g = [v % side, (v / side) % side, if dim == 3 { v / (side * side) } else { 0 }];
            grid.push(g);
            vertices.push([g[0] as f64 / n as f64, g[1] as f64 / n as f64, g[2] as f64 / n as f64]);
        }
        let vid = |g: [usize; 3]| g[0] + side * (g[1] + side * g[2]);

        let mut cells = Vec::new();
        let ncubes = n.pow(dim as u32);
        for q in 0..ncubes {
            let corner = [q % n, (q / n) % n, if dim == 3 { q / (n * n) } else { 0 }];
            let perms: Vec<&[usize]> = if dim == 2 {
                PERMS_2D.iter().map(|p| &p[..]).collect()
            } else {
                PERMS_3D.iter().map(|p| &p[..]).collect()
            };
            for perm in perms {
                let mut cell = [usize::MAX; 4];
                let mut g = corner;
                cell[0] = vid(g);
                for (k, &axis) in perm.iter().enumerate() {
                    g[axis] += 1;
                    cell[k + 1] = vid(g);
                }
                cells.push(cell);
            }
        }
        Ok(Self::from_cells(dim, n, grid, vertices, cells))
    }

    fn from_cells(
        dim: usize,
        n: usize,
        grid: Vec<[usize; 3]>,
        vertices: Vec<[f64; 3]>,
        cells: Vec<[usize; 4]>,
    ) -> Mesh {
        let mut edges = Vec::new();
        let mut edge_index = HashMap::new();
        let mut faces = Vec::new();
        let mut face_index = HashMap::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        let mut cell_faces = Vec::with_capacity(if dim == 3 { cells.len() } else { 0 });
        let mut vertex_cells = vec![Vec::new(); vertices.len()];
        for (c, cell) in cells.iter().enumerate() {
            debug_assert!(cell[..=dim].windows(2).all(|w| w[0] < w[1]));
            for &v in &cell[..=dim] {
                vertex_cells[v].push(c);
            }
            let mut ce = [usize::MAX; 6];
            for (k, &[a, b]) in local_edges(dim).iter().enumerate() {
                let key = [cell[a], cell[b]];
                ce[k] = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
            }
            cell_edges.push(ce);
            if dim == 3 {
                let mut cf = [usize::MAX; 4];
                for (k, &[a, b, d]) in TET_FACES.iter().enumerate() {
                    let key = [cell[a], cell[b], cell[d]];
                    cf[k] = *face_index.entry(key).or_insert_with(|| {
                        faces.push(key);
                        faces.len() - 1
                    });
                }
                cell_faces.push(cf);
            }
        }
        let nfacets = if dim == 2 { edges.len() } else { faces.len() };
        let mut facet_cells = vec![Vec::new(); nfacets];
        for c in 0..cells.len() {
            if dim == 2 {
                for &e in &cell_edges[c][..3] {
                    facet_cells[e].push(c);
                }
            } else {
                for &f in &cell_faces[c] {
                    facet_cells[f].push(c);
                }
            }
        }
        Mesh {
            dim,
            n,
            grid,
            vertices,
            cells,
            edges,
            faces,
            cell_edges,
            cell_faces,
            edge_index,
            face_index,
            vertex_cells,
            facet_cells,
            parent: None,
            cell_parent: None,
        }
    }

    /// Doubles the resolution; the result remembers its parent and the fine-to-coarse cell map.
    pub fn uniform_refine(&self) -> Mesh {
        let mut fine = Mesh::structured(self.dim, 2 * self.n).expect("valid refinement");
        let cell_parent = (0..fine.num_cells())
            .map(|c| self.locate(&fine.barycenter(c)))
            .collect();
        fine.cell_parent = Some(cell_parent);
        fine.parent = Some(Arc::new(self.clone()));
        fine
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Subdivisions per side.
    pub fn subdivisions(&self) -> usize {
        self.n
    }

    /// Mesh size (longest cell diameter), `sqrt(dim) / n`.
    pub fn mesh_size(&self) -> f64 {
        (self.dim as f64).sqrt() / self.n as f64
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facet_cells.len()
    }

    pub fn vertex(&self, v: usize) -> [f64; 3] {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..=self.dim]
    }

    pub fn cell_edges(&self, c: usize) -> &[usize] {
        &self.cell_edges[c][..if self.dim == 2 { 3 } else { 6 }]
    }

    /// Faces of a tetrahedron (3D only).
    pub fn cell_faces(&self, c: usize) -> &[usize] {
        &self.cell_faces[c]
    }

    /// Codimension-one entities of a cell: edges in 2D, faces in 3D.
    pub fn cell_facets(&self, c: usize) -> &[usize] {
        if self.dim == 2 {
            &self.cell_edges[c][..3]
        } else {
            &self.cell_faces[c]
        }
    }

    pub fn facet_cells(&self, f: usize) -> &[usize] {
        &self.facet_cells[f]
    }

    /// Vertices of a facet (edge in 2D, face in 3D).
    pub fn facet_vertices(&self, f: usize) -> &[usize] {
        if self.dim == 2 {
            &self.edges[f]
        } else {
            &self.faces[f]
        }
    }

    pub fn edge(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }

    pub fn face(&self, f: usize) -> [usize; 3] {
        self.faces[f]
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { [a, b] } else { [b, a] };
        self.edge_index.get(&key).copied()
    }

    pub fn face_id(&self, mut v: [usize; 3]) -> Option<usize> {
        v.sort_unstable();
        self.face_index.get(&v).copied()
    }

    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }

    pub fn parent(&self) -> Option<&Mesh> {
        self.parent.as_deref()
    }

    pub fn cell_parent(&self) -> Option<&[usize]> {
        self.cell_parent.as_deref()
    }

    /// Endpoint with the larger global index; the edge tangent points towards it.
    pub fn edge_head(&self, e: usize) -> usize {
        self.edges[e][1]
    }

    /// Endpoint with the smaller global index.
    pub fn edge_tail(&self, e: usize) -> usize {
        self.edges[e][0]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        norm(sub(self.vertices[b], self.vertices[a]))
    }

    /// Unit tangent `(x_head - x_tail) / |E|`.
    pub fn edge_tangent(&self, e: usize) -> [f64; 3] {
        let [a, b] = self.edges[e];
        let d = sub(self.vertices[b], self.vertices[a]);
        let l = norm(d);
        [d[0] / l, d[1] / l, d[2] / l]
    }

    pub fn cell_points(&self, c: usize) -> [[f64; 3]; 4] {
        let mut p = [[0.0; 3]; 4];
        for (k, &v) in self.cell(c).iter().enumerate() {
            p[k] = self.vertices[v];
        }
        p
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        let p = self.cell_points(c);
        let a = sub(p[1], p[0]);
        let b = sub(p[2], p[0]);
        if self.dim == 2 {
            0.5 * (a[0] * b[1] - a[1] * b[0]).abs()
        } else {
            let d = sub(p[3], p[0]);
            dot3(cross(a, b), d).abs() / 6.0
        }
    }

    pub fn barycenter(&self, c: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for &v in self.cell(c) {
            for i in 0..3 {
                x[i] += self.vertices[v][i];
            }
        }
        let k = (self.dim + 1) as f64;
        [x[0] / k, x[1] / k, x[2] / k]
    }

    /// Index of the cell containing `x`. Points on shared facets resolve to one of the
    /// neighbouring cells deterministically.
    pub fn locate(&self, x: &[f64; 3]) -> usize {
        let n = self.n;
        let mut corner = [0usize; 3];
        let mut local = [0.0f64; 3];
        for i in 0..self.dim {
            let s = x[i] * n as f64;
            let c = (s.floor().max(0.0) as usize).min(n - 1);
            corner[i] = c;
            local[i] = s - c as f64;
        }
        let q = corner[0] + n * (corner[1] + n * corner[2]);
        let p = if self.dim == 2 {
            if local[0] >= local[1] {
                0
            } else {
                1
            }
        } else {
            let mut axes = [0usize, 1, 2];
            axes.sort_by(|&a, &b| local[b].partial_cmp(&local[a]).unwrap().then(a.cmp(&b)));
            PERMS_3D.iter().position(|p| *p == axes).unwrap()
        };
        q * if self.dim == 2 { 2 } else { 6 } + p
    }

    fn grid_on_boundary(&self, verts: &[usize]) -> bool {
        (0..self.dim).any(|axis| {
            let g0 = self.grid[verts[0]][axis];
            (g0 == 0 || g0 == self.n) && verts.iter().all(|&v| self.grid[v][axis] == g0)
        })
    }

    /// Whether vertex `v` lies on the domain boundary.
    pub fn vertex_on_boundary(&self, v: usize) -> bool {
        self.grid_on_boundary(&[v])
    }

    /// Whether edge `e` lies in the domain boundary.
    pub fn edge_on_boundary(&self, e: usize) -> bool {
        self.grid_on_boundary(&self.edges[e])
    }

    pub fn face_on_boundary(&self, f: usize) -> bool {
        self.grid_on_boundary(&self.faces[f])
    }

    pub fn facet_on_boundary(&self, f: usize) -> bool {
        self.facet_cells[f].len() == 1
    }

    /// Whether the closed cell touches the domain boundary.
    pub fn cell_touches_boundary(&self, c: usize) -> bool {
        self.cell(c).iter().any(|&v| self.vertex_on_boundary(v))
    }

    /// Euler characteristic `V - E + F (- T)`; equals 1 for a triangulated square or cube.
    pub fn euler_characteristic(&self) -> i64 {
        let (v, e, c) = (self.num_vertices() as i64, self.num_edges() as i64, self.num_cells() as i64);
        if self.dim == 2 {
            v - e + c
        } else {
            v - e + self.num_faces() as i64 - c
        }
    }

    /// Writes one line per entity family, in index order.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
        writeln!(out, "dim {} n {}", self.dim, self.n)?;
        writeln!(
            out,
            "vertices {}",
            join(&mut self.vertices.iter().map(|x| format!("{:?},{:?},{:?}", x[0], x[1], x[2])))
        )?;
        writeln!(out, "edges {}", join(&mut self.edges.iter().map(|e| format!("{},{}", e[0], e[1]))))?;
        if self.dim == 3 {
            writeln!(
                out,
                "faces {}",
                join(&mut self.faces.iter().map(|f| format!("{},{},{}", f[0], f[1], f[2])))
            )?;
        }
        writeln!(
            out,
            "cells {}",
            join(&mut (0..self.num_cells()).map(|c| {
                self.cell(c).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            }))
        )?;
        Ok(())
    }

    pub(crate) fn check_vertex(&self, v: usize) -> Result<()> {
        check_index("vertex", v, self.num_vertices())
    }

    pub(crate) fn check_edge(&self, e: usize) -> Result<()> {
        check_index("edge", e, self.num_edges())
    }

    pub(crate) fn check_cell(&self, c: usize) -> Result<()> {
        check_index("cell", c, self.num_cells())
    }
}

fn check_index(kind: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { kind, index, len })
    }
}

/// A coarse mesh together with a nested fine mesh and the cell correspondence between them.
#[derive(Debug, Clone)]
pub struct NestedPair {
    pub coarse: Arc<Mesh>,
    pub fine: Arc<Mesh>,
    fine_to_coarse: Vec<usize>,
    children: Vec<Vec<usize>>,
}

impl NestedPair {
    pub fn new(coarse: Arc<Mesh>, fine: Arc<Mesh>) -> Result<Self> {
        if coarse.dim() != fine.dim() {
            return Err(Error::NotNested(format!(
                "dimensions differ ({} vs {})",
                coarse.dim(),
                fine.dim()
            )));
        }
        if !fine.subdivisions().is_multiple_of(coarse.subdivisions()) {
            return Err(Error::NotNested(format!(
                "{} subdivisions do not refine {}",
                fine.subdivisions(),
                coarse.subdivisions()
            )));
        }
        let fine_to_coarse: Vec<usize> = (0..fine.num_cells())
            .map(|c| coarse.locate(&fine.barycenter(c)))
            .collect();
        let mut children = vec![Vec::new(); coarse.num_cells()];
        for (f, &c) in fine_to_coarse.iter().enumerate() {
            children[c].push(f);
        }
        Ok(Self {
            coarse,
            fine,
            fine_to_coarse,
            children,
        })
    }

    /// Builds the coarse mesh with `2^coarse_level` and the fine mesh with `2^fine_level`
    /// subdivisions per side.
    pub fn from_levels(dim: usize, coarse_level: u32, fine_level: u32) -> Result<Self> {
        if fine_level < coarse_level {
            return Err(Error::NotNested(format!(
                "fine level {fine_level} below coarse level {coarse_level}"
            )));
        }
        let coarse = Arc::new(Mesh::structured(dim, 1 << coarse_level)?);
        let fine = Arc::new(Mesh::structured(dim, 1 << fine_level)?);
        Self::new(coarse, fine)
    }

    pub fn dim(&self) -> usize {
        self.coarse.dim()
    }

    pub fn parent_of(&self, fine_cell: usize) -> usize {
        self.fine_to_coarse[fine_cell]
    }

    pub fn fine_to_coarse(&self) -> &[usize] {
        &self.fine_to_coarse
    }

    pub fn children(&self, coarse_cell: usize) -> &[usize] {
        &self.children[coarse_cell]
    }

    /// Fine cells inside the given coarse cells, in ascending order.
    pub fn fine_cells_of(&self, coarse_cells: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = coarse_cells
            .iter()
            .flat_map(|&c| self.children[c].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Sorted fine edges of the given fine cells.
    pub fn fine_edges_of(&self, fine_cells: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = fine_cells
            .iter()
            .flat_map(|&c| self.fine.cell_edges(c).iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}
