//! Triangle meshes with globally oriented facets.
//!
//! Local facet `i` of a cell is the edge opposite local vertex `i`, i.e.
//! `(v1, v2)`, `(v2, v0)`, `(v0, v1)`. A facet's global orientation runs from
//! its lower to its higher global vertex index.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use thiserror::Error;

pub mod gmsh;

pub use gmsh::{import_gmsh, read_gmsh};

/// Local vertex pairs of the three local facets.
pub const LOCAL_FACETS: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

/// Reference-triangle vertices.
pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate bounding box ({x0}, {y0})-({x1}, {y1})")]
    DegenerateBox { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("mesh needs at least one cell in each direction (got {nx} x {ny})")]
    EmptyGrid { nx: usize, ny: usize },
    #[error("cell {cell} has zero area")]
    DegenerateCell { cell: usize },
    #[error("cell {cell} references missing vertex {vertex}")]
    MissingVertex { cell: usize, vertex: usize },
    #[error("facet ({a}, {b}) is shared by more than two cells")]
    NonManifold { a: usize, b: usize },
    #[error("boundary tag on ({a}, {b}) does not match a boundary facet")]
    UntaggableFacet { a: usize, b: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// One cell on each side of a facet; `second` is `None` on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacetCells {
    pub first: (usize, usize),
    pub second: Option<(usize, usize)>,
}

impl FacetCells {
    pub fn is_boundary(&self) -> bool {
        self.second.is_none()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> {
        std::iter::once(self.first).chain(self.second)
    }
}

/// Facet of a cell: global facet id and whether the local edge direction
/// agrees with the global orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellFacet {
    pub facet: usize,
    pub aligned: bool,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    cells: Vec<[usize; 3]>,
    facets: Vec<[usize; 2]>,
    cell_facets: Vec<[CellFacet; 3]>,
    facet_cells: Vec<FacetCells>,
    boundary_tags: BTreeMap<usize, String>,
}

impl Mesh {
    /// Build topology from vertices and cells. Clockwise cells are reoriented.
    pub fn new(vertices: Vec<[f64; 2]>, mut cells: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        for (c, cell) in cells.iter_mut().enumerate() {
            for &v in cell.iter() {
                if v >= vertices.len() {
                    return Err(MeshError::MissingVertex { cell: c, vertex: v });
                }
            }
            let area = signed_area(vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]);
            if area == 0.0 || !area.is_finite() {
                return Err(MeshError::DegenerateCell { cell: c });
            }
            if area < 0.0 {
                cell.swap(1, 2);
            }
        }

        let mut lookup: HashMap<[usize; 2], usize> = HashMap::with_capacity(cells.len() * 2);
        let mut facets: Vec<[usize; 2]> = Vec::new();
        let mut facet_cells: Vec<FacetCells> = Vec::new();
        let mut cell_facets = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut cf = [CellFacet {
                facet: 0,
                aligned: true,
            }; 3];
            for (lf, pair) in LOCAL_FACETS.iter().enumerate() {
                let (a, b) = (cell[pair[0]], cell[pair[1]]);
                let key = [a.min(b), a.max(b)];
                let f = match lookup.get(&key) {
                    Some(&f) => {
                        let fc = &mut facet_cells[f];
                        if fc.second.is_some() {
                            return Err(MeshError::NonManifold {
                                a: key[0],
                                b: key[1],
                            });
                        }
                        fc.second = Some((c, lf));
                        f
                    }
                    None => {
                        let f = facets.len();
                        facets.push(key);
                        facet_cells.push(FacetCells {
                            first: (c, lf),
                            second: None,
                        });
                        lookup.insert(key, f);
                        f
                    }
                };
                cf[lf] = CellFacet {
                    facet: f,
                    aligned: a < b,
                };
            }
            cell_facets.push(cf);
        }

        Ok(Self {
            vertices,
            cells,
            facets,
            cell_facets,
            facet_cells,
            boundary_tags: BTreeMap::new(),
        })
    }

    /// Attach a named tag to the boundary facet with vertices `a`, `b`.
    pub fn tag_boundary_facet(&mut self, a: usize, b: usize, tag: &str) -> Result<(), MeshError> {
        let key = [a.min(b), a.max(b)];
        let f = self
            .find_facet(key)
            .filter(|&f| self.facet_cells[f].is_boundary())
            .ok_or(MeshError::UntaggableFacet { a, b })?;
        self.boundary_tags.insert(f, tag.to_string());
        Ok(())
    }

    fn find_facet(&self, key: [usize; 2]) -> Option<usize> {
        // facets touching vertex key[0] are few; a linear scan is only used while tagging
        self.facets.iter().position(|&f| f == key)
    }

    /// Tag boundary facets by a predicate on their midpoint; already tagged facets are skipped.
    pub fn tag_boundary_where(&mut self, tag: &str, pred: impl Fn([f64; 2]) -> bool) {
        for f in 0..self.facets.len() {
            if self.facet_cells[f].is_boundary() && !self.boundary_tags.contains_key(&f) {
                let m = self.facet_midpoint(f);
                if pred(m) {
                    self.boundary_tags.insert(f, tag.to_string());
                }
            }
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn facets(&self) -> &[[usize; 2]] {
        &self.facets
    }

    pub fn cell_facets(&self, cell: usize) -> &[CellFacet; 3] {
        &self.cell_facets[cell]
    }

    pub fn facet_cells(&self, facet: usize) -> &FacetCells {
        &self.facet_cells[facet]
    }

    pub fn is_boundary_facet(&self, facet: usize) -> bool {
        self.facet_cells[facet].is_boundary()
    }

    pub fn boundary_facets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.facets.len()).filter(|&f| self.is_boundary_facet(f))
    }

    pub fn interior_facets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.facets.len()).filter(|&f| !self.is_boundary_facet(f))
    }

    pub fn boundary_tags(&self) -> &BTreeMap<usize, String> {
        &self.boundary_tags
    }

    pub fn facet_tag(&self, facet: usize) -> Option<&str> {
        self.boundary_tags.get(&facet).map(String::as_str)
    }

    /// Distinct tag names in sorted order.
    pub fn tag_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.boundary_tags.values().cloned().collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn facets_with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.boundary_tags
            .iter()
            .filter(move |(_, t)| t.as_str() == tag)
            .map(|(&f, _)| f)
    }

    pub fn cell_vertices(&self, cell: usize) -> [[f64; 2]; 3] {
        let c = self.cells[cell];
        [
            self.vertices[c[0]],
            self.vertices[c[1]],
            self.vertices[c[2]],
        ]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_vertices(cell);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_area(c)).sum()
    }

    pub fn facet_midpoint(&self, facet: usize) -> [f64; 2] {
        let [a, b] = self.facets[facet];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    /// Point on a facet at parameter `s` of its global orientation.
    pub fn facet_point(&self, facet: usize, s: f64) -> [f64; 2] {
        let [a, b] = self.facets[facet];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [(1.0 - s) * pa[0] + s * pb[0], (1.0 - s) * pa[1] + s * pb[1]]
    }

    pub fn facet_length(&self, facet: usize) -> f64 {
        let [a, b] = self.facets[facet];
        dist(self.vertices[a], self.vertices[b])
    }

    /// Cell reference coordinates of the point at parameter `s` on local facet `lf`,
    /// with `s` running along the facet's global orientation.
    pub fn facet_to_cell_ref(&self, cell: usize, lf: usize, s: f64) -> [f64; 2] {
        reference_facet_point(lf, self.cell_facets[cell][lf].aligned, s)
    }

    pub fn cell_geometry(&self, cell: usize) -> CellGeometry {
        CellGeometry::new(self.cell_vertices(cell))
    }

    /// V - E + C. Equals `1 - holes` for a connected planar mesh.
    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_facets() as i64 + self.num_cells() as i64
    }

    /// Number of closed boundary loops.
    pub fn boundary_loops(&self) -> usize {
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for f in self.boundary_facets() {
            let [a, b] = self.facets[f];
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        let mut seen = std::collections::HashSet::new();
        let mut loops = 0;
        let mut keys: Vec<usize> = adj.keys().copied().collect();
        keys.sort_unstable();
        for start in keys {
            if !seen.insert(start) {
                continue;
            }
            loops += 1;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &adj[&v] {
                    if seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
        }
        loops
    }

    /// Debug dump: one row per vertex and per cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), MeshError> {
        writeln!(out, "kind,id,x,y,v0,v1,v2")?;
        for (i, v) in self.vertices.iter().enumerate() {
            writeln!(out, "vertex,{i},{},{},,,", v[0], v[1])?;
        }
        for (i, c) in self.cells.iter().enumerate() {
            writeln!(out, "cell,{i},,,{},{},{}", c[0], c[1], c[2])?;
        }
        Ok(())
    }
}

/// Structured triangulation of a rectangle, each grid quad split along its
/// lower-left to upper-right diagonal. Boundary facets are tagged
/// `left`, `right`, `bottom`, `top`.
pub fn generate_rect_mesh(nx: usize, ny: usize, bbox: [f64; 4]) -> Result<Mesh, MeshError> {
    let [x0, y0, x1, y1] = bbox;
    if !(x1 > x0 && y1 > y0) || !bbox.iter().all(|v| v.is_finite()) {
        return Err(MeshError::DegenerateBox { x0, y0, x1, y1 });
    }
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyGrid { nx, ny });
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = if j == ny {
            y1
        } else {
            y0 + (y1 - y0) * j as f64 / ny as f64
        };
        for i in 0..=nx {
            let x = if i == nx {
                x1
            } else {
                x0 + (x1 - x0) * i as f64 / nx as f64
            };
            vertices.push([x, y]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    let mut mesh = Mesh::new(vertices, cells)?;
    for f in 0..mesh.num_facets() {
        if !mesh.is_boundary_facet(f) {
            continue;
        }
        let [a, b] = mesh.facets[f];
        let (ia, ja) = (a % (nx + 1), a / (nx + 1));
        let (ib, jb) = (b % (nx + 1), b / (nx + 1));
        let tag = if ia == 0 && ib == 0 {
            "left"
        } else if ia == nx && ib == nx {
            "right"
        } else if ja == 0 && jb == 0 {
            "bottom"
        } else {
            debug_assert!(ja == ny && jb == ny);
            "top"
        };
        mesh.boundary_tags.insert(f, tag.to_string());
    }
    Ok(mesh)
}

/// Affine geometry of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub vertices: [[f64; 2]; 3],
    /// Columns are `x1 - x0` and `x2 - x0`.
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    pub inv_jacobian_t: [[f64; 2]; 2],
    pub h: f64,
    pub facet_normals: [[f64; 2]; 3],
    pub facet_lengths: [f64; 3],
}

impl CellGeometry {
    pub fn new(v: [[f64; 2]; 3]) -> Self {
        let jacobian = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1]],
        ];
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        // (J^{-1})^T
        let inv_jacobian_t = [
            [jacobian[1][1] / det, -jacobian[1][0] / det],
            [-jacobian[0][1] / det, jacobian[0][0] / det],
        ];
        let mut facet_normals = [[0.0; 2]; 3];
        let mut facet_lengths = [0.0; 3];
        for (lf, pair) in LOCAL_FACETS.iter().enumerate() {
            let (a, b) = (v[pair[0]], v[pair[1]]);
            let len = dist(a, b);
            // counter-clockwise cell: outward normal is the edge rotated clockwise
            facet_normals[lf] = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
            facet_lengths[lf] = len;
        }
        let h = facet_lengths.iter().copied().fold(0.0, f64::max);
        Self {
            vertices: v,
            jacobian,
            det,
            inv_jacobian_t,
            h,
            facet_normals,
            facet_lengths,
        }
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det
    }

    /// Physical point of reference coordinates `xi`.
    #[inline]
    pub fn map(&self, xi: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [
            self.vertices[0][0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            self.vertices[0][1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    /// Reference coordinates of physical point `x`.
    pub fn inverse_map(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.vertices[0][0], x[1] - self.vertices[0][1]];
        let t = &self.inv_jacobian_t;
        // J^{-1} = (inv_jacobian_t)^T
        [
            t[0][0] * d[0] + t[1][0] * d[1],
            t[0][1] * d[0] + t[1][1] * d[1],
        ]
    }

    /// Physical gradient from a reference gradient.
    #[inline]
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let t = &self.inv_jacobian_t;
        [
            t[0][0] * g[0] + t[0][1] * g[1],
            t[1][0] * g[0] + t[1][1] * g[1],
        ]
    }
}

/// Reference-cell point at parameter `s` on local facet `lf`; `aligned`
/// runs from the facet's first local vertex to its second.
pub fn reference_facet_point(lf: usize, aligned: bool, s: f64) -> [f64; 2] {
    let [la, lb] = LOCAL_FACETS[lf];
    let (start, end) = if aligned {
        (REF_VERTICES[la], REF_VERTICES[lb])
    } else {
        (REF_VERTICES[lb], REF_VERTICES[la])
    };
    [
        (1.0 - s) * start[0] + s * end[0],
        (1.0 - s) * start[1] + s * end[1],
    ]
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}
