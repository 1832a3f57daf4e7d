use crate::error::Result;

use super::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    /// All cells containing a vertex.
    Nodal,
    /// Union of the nodal patches of both endpoints of an edge.
    ExtendedEdge,
    /// `m` rings of vertex-adjacent cells around a cell.
    Layer(usize),
    /// Arbitrary cell set, e.g. the fine cells below a coarse patch.
    Cells,
}

/// Where a patch entity sits relative to the patch boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityLocation {
    Interior,
    /// On the patch boundary, and every patch-boundary facet containing it lies on the domain
    /// boundary.
    DomainBoundary,
    /// On a patch-boundary facet that lies inside the domain.
    InteriorBoundary,
}

/// Location flags for the entities of one family, indexed in parallel with `entities`.
#[derive(Debug, Clone, Default)]
pub struct PatchBoundary {
    pub entities: Vec<usize>,
    pub locations: Vec<EntityLocation>,
}

impl PatchBoundary {
    pub fn location(&self, entity: usize) -> Option<EntityLocation> {
        self.entities
            .binary_search(&entity)
            .ok()
            .map(|k| self.locations[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, EntityLocation)> + '_ {
        self.entities.iter().copied().zip(self.locations.iter().copied())
    }

    /// Entities that are not on the patch boundary.
    pub fn interior(&self) -> Vec<usize> {
        self.filter(|l| l == EntityLocation::Interior)
    }

    pub fn filter(&self, keep: impl Fn(EntityLocation) -> bool) -> Vec<usize> {
        self.iter().filter(|&(_, l)| keep(l)).map(|(e, _)| e).collect()
    }
}

/// A sorted cell subset of a mesh with entity classification.
#[derive(Debug, Clone)]
pub struct Patch {
    pub cells: Vec<usize>,
    pub kind: PatchKind,
    pub anchor: usize,
    pub vertices: PatchBoundary,
    pub edges: PatchBoundary,
    /// Faces in 3D; empty in 2D (the facets there are edges).
    pub faces: PatchBoundary,
}

impl Patch {
    /// Classifies the entities of `cells` (sorted or not) on `mesh`.
    pub fn from_cells(mesh: &Mesh, mut cells: Vec<usize>, kind: PatchKind, anchor: usize) -> Patch {
        cells.sort_unstable();
        cells.dedup();
        let dim = mesh.dim();

        // Facets of the cell set with multiplicity one form the patch boundary.
        let mut facets: Vec<usize> = cells.iter().flat_map(|&c| mesh.cell_facets(c).iter().copied()).collect();
        facets.sort_unstable();
        let mut boundary_facets = Vec::new();
        let mut all_facets = Vec::new();
        let mut k = 0;
        while k < facets.len() {
            let mut j = k;
            while j < facets.len() && facets[j] == facets[k] {
                j += 1;
            }
            all_facets.push(facets[k]);
            if j - k == 1 {
                boundary_facets.push(facets[k]);
            }
            k = j;
        }

        let mut vertices: Vec<usize> = cells.iter().flat_map(|&c| mesh.cell(c).iter().copied()).collect();
        vertices.sort_unstable();
        vertices.dedup();
        let mut edges: Vec<usize> = cells.iter().flat_map(|&c| mesh.cell_edges(c).iter().copied()).collect();
        edges.sort_unstable();
        edges.dedup();

        let mut vloc = vec![EntityLocation::Interior; vertices.len()];
        let mut eloc = vec![EntityLocation::Interior; edges.len()];
        let mut floc = vec![EntityLocation::Interior; if dim == 3 { all_facets.len() } else { 0 }];

        let mark = |locs: &mut [EntityLocation], k: usize, on_domain: bool| {
            let new = if on_domain {
                EntityLocation::DomainBoundary
            } else {
                EntityLocation::InteriorBoundary
            };
            // InteriorBoundary dominates: such entities carry a zero trace for every variant.
            if locs[k] != EntityLocation::InteriorBoundary {
                locs[k] = new;
            }
        };
        for &f in &boundary_facets {
            let on_domain = mesh.facet_on_boundary(f);
            let fv = mesh.facet_vertices(f);
            for &v in fv {
                let k = vertices.binary_search(&v).unwrap();
                mark(&mut vloc, k, on_domain);
            }
            for a in 0..fv.len() {
                for b in a + 1..fv.len() {
                    let e = mesh.edge_id(fv[a], fv[b]).unwrap();
                    let k = edges.binary_search(&e).unwrap();
                    mark(&mut eloc, k, on_domain);
                }
            }
            if dim == 3 {
                let k = all_facets.binary_search(&f).unwrap();
                mark(&mut floc, k, on_domain);
            }
        }

        Patch {
            cells,
            kind,
            anchor,
            vertices: PatchBoundary {
                entities: vertices,
                locations: vloc,
            },
            edges: PatchBoundary {
                entities: edges,
                locations: eloc,
            },
            faces: if dim == 3 {
                PatchBoundary {
                    entities: all_facets,
                    locations: floc,
                }
            } else {
                PatchBoundary::default()
            },
        }
    }

    /// Cells containing vertex `y`.
    pub fn nodal(mesh: &Mesh, y: usize) -> Result<Patch> {
        mesh.check_vertex(y)?;
        Ok(Self::from_cells(mesh, mesh.vertex_cells(y).to_vec(), PatchKind::Nodal, y))
    }

    /// Union of the nodal patches of both endpoints of edge `e`.
    pub fn extended_edge(mesh: &Mesh, e: usize) -> Result<Patch> {
        mesh.check_edge(e)?;
        let [a, b] = mesh.edge(e);
        let mut cells = mesh.vertex_cells(a).to_vec();
        cells.extend_from_slice(mesh.vertex_cells(b));
        Ok(Self::from_cells(mesh, cells, PatchKind::ExtendedEdge, e))
    }

    /// Cell `t` grown by `m` rings of vertex-adjacent cells.
    pub fn layer(mesh: &Mesh, t: usize, m: usize) -> Result<Patch> {
        Ok(Self::from_cells(mesh, layer_cells(mesh, t, m)?, PatchKind::Layer(m), t))
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn contains_cell(&self, c: usize) -> bool {
        self.cells.binary_search(&c).is_ok()
    }

    /// Whether the closed patch touches the domain boundary.
    pub fn touches_domain_boundary(&self, mesh: &Mesh) -> bool {
        self.vertices.entities.iter().any(|&v| mesh.vertex_on_boundary(v))
    }
}

/// Cells of the `m`-layer neighbourhood of `t`, sorted.
pub(crate) fn layer_cells(mesh: &Mesh, t: usize, m: usize) -> Result<Vec<usize>> {
    mesh.check_cell(t)?;
    let mut inside = vec![false; mesh.num_cells()];
    let mut seen_vertex = vec![false; mesh.num_vertices()];
    inside[t] = true;
    let mut cells = vec![t];
    let mut front = vec![t];
    for _ in 0..m {
        let mut next = Vec::new();
        for &c in &front {
            for &v in mesh.cell(c) {
                if seen_vertex[v] {
                    continue;
                }
                seen_vertex[v] = true;
                for &k in mesh.vertex_cells(v) {
                    if !inside[k] {
                        inside[k] = true;
                        next.push(k);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        cells.extend_from_slice(&next);
        front = next;
    }
    cells.sort_unstable();
    Ok(cells)
}
