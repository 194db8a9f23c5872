//! The four discrete spaces, their global numbering, and Dirichlet constraints.
//!
//! Cell velocity is vector P_k, cell pressure P_{k-1}, facet velocity vector
//! P_k and facet pressure P_k (or P_{k-1} for the comparison variant). Facet
//! polynomials are parameterised along the facet's global orientation.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mesh::{CellGeometry, Mesh};
use crate::polybasis::{quadrature_rule, LagrangeBasis, QuadRule, RefElement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("polynomial degree k = {0} is outside 1..=4")]
    Degree(usize),
    #[error("facet pressure degree {fp} must be k or k - 1 (k = {k})")]
    FacetPressureDegree { k: usize, fp: usize },
    #[error("boundary tag `{0}` does not exist in the mesh")]
    UnknownTag(String),
}

/// Degrees, bases and global dof layout.
#[derive(Debug, Clone)]
pub struct Spaces {
    k: usize,
    facet_pressure_degree: usize,
    n_cells: usize,
    n_facets: usize,
    velocity: LagrangeBasis,
    pressure: LagrangeBasis,
    facet_velocity: LagrangeBasis,
    facet_pressure: LagrangeBasis,
}

impl Spaces {
    pub fn new(mesh: &Mesh, k: usize, facet_pressure_degree: usize) -> Result<Self, SpaceError> {
        if !(1..=4).contains(&k) {
            return Err(SpaceError::Degree(k));
        }
        if facet_pressure_degree != k && facet_pressure_degree + 1 != k {
            return Err(SpaceError::FacetPressureDegree {
                k,
                fp: facet_pressure_degree,
            });
        }
        let basis = |e, d| LagrangeBasis::new(e, d).expect("degree checked above");
        Ok(Self {
            k,
            facet_pressure_degree,
            n_cells: mesh.num_cells(),
            n_facets: mesh.num_facets(),
            velocity: basis(RefElement::Triangle, k),
            pressure: basis(RefElement::Triangle, k - 1),
            facet_velocity: basis(RefElement::Interval, k),
            facet_pressure: basis(RefElement::Interval, facet_pressure_degree),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn facet_pressure_degree(&self) -> usize {
        self.facet_pressure_degree
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_facets(&self) -> usize {
        self.n_facets
    }

    pub fn velocity_basis(&self) -> &LagrangeBasis {
        &self.velocity
    }

    pub fn pressure_basis(&self) -> &LagrangeBasis {
        &self.pressure
    }

    pub fn facet_velocity_basis(&self) -> &LagrangeBasis {
        &self.facet_velocity
    }

    pub fn facet_pressure_basis(&self) -> &LagrangeBasis {
        &self.facet_pressure
    }

    /// Scalar P_k dimension on a cell.
    pub fn nk(&self) -> usize {
        self.velocity.dim()
    }

    /// Cell pressure dimension.
    pub fn np(&self) -> usize {
        self.pressure.dim()
    }

    /// Scalar facet velocity dimension (k + 1).
    pub fn nkf(&self) -> usize {
        self.facet_velocity.dim()
    }

    /// Facet pressure dimension.
    pub fn npf(&self) -> usize {
        self.facet_pressure.dim()
    }

    /// Unknowns per cell: `[u_x, u_y, p]`.
    pub fn cell_block(&self) -> usize {
        2 * self.nk() + self.np()
    }

    /// Unknowns per facet: `[ubar_x, ubar_y, pbar]`.
    pub fn facet_block(&self) -> usize {
        2 * self.nkf() + self.npf()
    }

    pub fn n_cell_dofs(&self) -> usize {
        self.n_cells * self.cell_block()
    }

    pub fn n_facet_dofs(&self) -> usize {
        self.n_facets * self.facet_block()
    }

    /// First global facet-system dof of `facet`.
    pub fn facet_offset(&self, facet: usize) -> usize {
        facet * self.facet_block()
    }

    /// Global facet-system index of component `comp` (0, 1) of velocity dof `i`.
    pub fn facet_velocity_dof(&self, facet: usize, comp: usize, i: usize) -> usize {
        self.facet_offset(facet) + comp * self.nkf() + i
    }

    pub fn facet_pressure_dof(&self, facet: usize, i: usize) -> usize {
        self.facet_offset(facet) + 2 * self.nkf() + i
    }

    /// Default rule exactness used by assembly: 3k + 1.
    pub fn assembly_exactness(&self) -> usize {
        3 * self.k + 1
    }

    pub fn zero_state(&self) -> FieldState {
        FieldState {
            u: vec![0.0; self.n_cells * 2 * self.nk()],
            p: vec![0.0; self.n_cells * self.np()],
            ubar: vec![0.0; self.n_facets * 2 * self.nkf()],
            pbar: vec![0.0; self.n_facets * self.npf()],
            time: 0.0,
        }
    }
}

/// Build spaces for degree `k` with the given facet pressure degree.
pub fn build_spaces(
    mesh: &Mesh,
    k: usize,
    facet_pressure_degree: usize,
) -> Result<Spaces, SpaceError> {
    Spaces::new(mesh, k, facet_pressure_degree)
}

/// Coefficients of `(u_h, p_h, ubar_h, pbar_h)` at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    /// Per cell `[u_x (nk), u_y (nk)]`.
    pub u: Vec<f64>,
    /// Per cell `np` coefficients.
    pub p: Vec<f64>,
    /// Per facet `[ubar_x (nkf), ubar_y (nkf)]`.
    pub ubar: Vec<f64>,
    /// Per facet `npf` coefficients.
    pub pbar: Vec<f64>,
    pub time: f64,
}

impl FieldState {
    pub fn cell_u<'a>(&'a self, spaces: &Spaces, cell: usize) -> &'a [f64] {
        let n = 2 * spaces.nk();
        &self.u[cell * n..(cell + 1) * n]
    }

    pub fn cell_p<'a>(&'a self, spaces: &Spaces, cell: usize) -> &'a [f64] {
        let n = spaces.np();
        &self.p[cell * n..(cell + 1) * n]
    }

    pub fn facet_ubar<'a>(&'a self, spaces: &Spaces, facet: usize) -> &'a [f64] {
        let n = 2 * spaces.nkf();
        &self.ubar[facet * n..(facet + 1) * n]
    }

    pub fn facet_pbar<'a>(&'a self, spaces: &Spaces, facet: usize) -> &'a [f64] {
        let n = spaces.npf();
        &self.pbar[facet * n..(facet + 1) * n]
    }

    /// Facet unknowns in global facet-system order.
    pub fn facet_vector(&self, spaces: &Spaces) -> Vec<f64> {
        let mut x = vec![0.0; spaces.n_facet_dofs()];
        for f in 0..spaces.n_facets() {
            let off = spaces.facet_offset(f);
            let nu = 2 * spaces.nkf();
            x[off..off + nu].copy_from_slice(self.facet_ubar(spaces, f));
            x[off + nu..off + spaces.facet_block()].copy_from_slice(self.facet_pbar(spaces, f));
        }
        x
    }

    pub fn set_facet_vector(&mut self, spaces: &Spaces, x: &[f64]) {
        let nu = 2 * spaces.nkf();
        let npf = spaces.npf();
        for f in 0..spaces.n_facets() {
            let off = spaces.facet_offset(f);
            self.ubar[f * nu..(f + 1) * nu].copy_from_slice(&x[off..off + nu]);
            self.pbar[f * npf..(f + 1) * npf].copy_from_slice(&x[off + nu..off + nu + npf]);
        }
    }

    /// Cell unknowns of one cell in local order `[u_x, u_y, p]`.
    pub fn cell_vector(&self, spaces: &Spaces, cell: usize) -> Vec<f64> {
        let mut v = self.cell_u(spaces, cell).to_vec();
        v.extend_from_slice(self.cell_p(spaces, cell));
        v
    }

    pub fn set_cell_vector(&mut self, spaces: &Spaces, cell: usize, v: &[f64]) {
        let nu = 2 * spaces.nk();
        let np = spaces.np();
        self.u[cell * nu..(cell + 1) * nu].copy_from_slice(&v[..nu]);
        self.p[cell * np..(cell + 1) * np].copy_from_slice(&v[nu..nu + np]);
    }

    /// Velocity and its physical gradient (`grad[i][j] = d u_i / d x_j`) at reference point `xi`.
    pub fn eval_velocity(
        &self,
        spaces: &Spaces,
        geom: &CellGeometry,
        cell: usize,
        xi: [f64; 2],
    ) -> ([f64; 2], [[f64; 2]; 2]) {
        let b = spaces.velocity_basis();
        let vals = b.values(xi);
        let grads = b.gradients(xi);
        let c = self.cell_u(spaces, cell);
        let nk = spaces.nk();
        let mut u = [0.0; 2];
        let mut g = [[0.0; 2]; 2];
        for i in 0..nk {
            let gp = geom.push_gradient(grads[i]);
            for comp in 0..2 {
                let a = c[comp * nk + i];
                u[comp] += a * vals[i];
                g[comp][0] += a * gp[0];
                g[comp][1] += a * gp[1];
            }
        }
        (u, g)
    }

    pub fn eval_pressure(&self, spaces: &Spaces, cell: usize, xi: [f64; 2]) -> f64 {
        let vals = spaces.pressure_basis().values(xi);
        vals.iter()
            .zip(self.cell_p(spaces, cell))
            .map(|(v, c)| v * c)
            .sum()
    }

    pub fn eval_facet_velocity(&self, spaces: &Spaces, facet: usize, s: f64) -> [f64; 2] {
        let vals = spaces.facet_velocity_basis().values([s, 0.0]);
        let c = self.facet_ubar(spaces, facet);
        let n = spaces.nkf();
        let mut u = [0.0; 2];
        for (i, v) in vals.iter().enumerate() {
            u[0] += c[i] * v;
            u[1] += c[n + i] * v;
        }
        u
    }

    pub fn eval_facet_pressure(&self, spaces: &Spaces, facet: usize, s: f64) -> f64 {
        let vals = spaces.facet_pressure_basis().values([s, 0.0]);
        vals.iter()
            .zip(self.facet_pbar(spaces, facet))
            .map(|(v, c)| v * c)
            .sum()
    }

    /// Add `c` to the cell and facet pressures (nodal bases reproduce constants).
    pub fn shift_pressure(&mut self, c: f64) {
        self.p.iter_mut().for_each(|p| *p += c);
        self.pbar.iter_mut().for_each(|p| *p += c);
    }

    pub fn all_finite(&self) -> bool {
        self.u
            .iter()
            .chain(&self.p)
            .chain(&self.ubar)
            .chain(&self.pbar)
            .all(|v| v.is_finite())
    }
}

/// Cell-reference coordinates of the facet quadrature points of local facet
/// `lf`, ordered along the facet's global orientation.
pub fn facet_trace_points(
    mesh: &Mesh,
    cell: usize,
    lf: usize,
    facet_quad: &QuadRule,
) -> Vec<[f64; 2]> {
    facet_quad
        .points
        .iter()
        .map(|p| mesh.facet_to_cell_ref(cell, lf, p[0]))
        .collect()
}

/// Constrained facet velocity dofs and an optional pinned facet-pressure dof.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    dirichlet_facet: Vec<bool>,
    /// Prescribed values indexed by global facet-system dof.
    values: Vec<f64>,
    pinned: Option<usize>,
}

impl Constraints {
    /// Constrain every facet carrying one of `dirichlet_tags`. With
    /// `pin_pressure` the first facet-pressure dof of facet 0 is fixed to zero.
    pub fn new(
        mesh: &Mesh,
        spaces: &Spaces,
        dirichlet_tags: &[&str],
        pin_pressure: bool,
    ) -> Result<Self, SpaceError> {
        let names = mesh.tag_names();
        for t in dirichlet_tags {
            if !names.iter().any(|n| n == t) {
                return Err(SpaceError::UnknownTag(t.to_string()));
            }
        }
        let mut dirichlet_facet = vec![false; mesh.num_facets()];
        for (&f, tag) in mesh.boundary_tags() {
            if dirichlet_tags.contains(&tag.as_str()) {
                dirichlet_facet[f] = true;
            }
        }
        Ok(Self {
            dirichlet_facet,
            values: vec![0.0; spaces.n_facet_dofs()],
            pinned: pin_pressure.then(|| spaces.facet_pressure_dof(0, 0)),
        })
    }

    pub fn is_dirichlet_facet(&self, facet: usize) -> bool {
        self.dirichlet_facet[facet]
    }

    pub fn has_dirichlet(&self) -> bool {
        self.dirichlet_facet.iter().any(|&d| d)
    }

    pub fn pinned(&self) -> Option<usize> {
        self.pinned
    }

    pub fn set_pinned(&mut self, dof: Option<usize>) {
        self.pinned = dof;
    }

    /// True for prescribed velocity dofs and the pinned pressure dof.
    pub fn is_constrained(&self, spaces: &Spaces, dof: usize) -> bool {
        if self.pinned == Some(dof) {
            return true;
        }
        let block = spaces.facet_block();
        let f = dof / block;
        self.dirichlet_facet[f] && dof % block < 2 * spaces.nkf()
    }

    pub fn value(&self, dof: usize) -> f64 {
        self.values[dof]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Constrained dofs in ascending order.
    pub fn constrained_dofs(&self, spaces: &Spaces) -> Vec<usize> {
        (0..spaces.n_facet_dofs())
            .filter(|&d| self.is_constrained(spaces, d))
            .collect()
    }
}

/// Set every Dirichlet facet's velocity dofs to the facet L2 projection of
/// `boundary_data(tag, x, t)`.
pub fn apply_dirichlet(
    mesh: &Mesh,
    spaces: &Spaces,
    constraints: &mut Constraints,
    boundary_data: &dyn Fn(&str, [f64; 2], f64) -> [f64; 2],
    t: f64,
) {
    let rule = quadrature_rule(
        RefElement::Interval,
        spaces.assembly_exactness().max(2 * spaces.k() + 2),
    )
    .expect("exactness within limits");
    for f in 0..mesh.num_facets() {
        if !constraints.dirichlet_facet[f] {
            continue;
        }
        let tag = mesh.facet_tag(f).unwrap_or("");
        let coeffs = project_facet_vector(mesh, spaces, &rule, f, &|x| boundary_data(tag, x, t));
        let n = spaces.nkf();
        for comp in 0..2 {
            for i in 0..n {
                constraints.values[spaces.facet_velocity_dof(f, comp, i)] = coeffs[comp * n + i];
            }
        }
    }
}

/// L2 projection of a vector function onto vector P_k of one facet;
/// returns `[x-coefficients, y-coefficients]`.
pub fn project_facet_vector(
    mesh: &Mesh,
    spaces: &Spaces,
    rule: &QuadRule,
    facet: usize,
    g: &dyn Fn([f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    let basis = spaces.facet_velocity_basis();
    let n = basis.dim();
    let tab = basis.tabulate(&rule.points);
    let mut mass = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, 2);
    for (q, (p, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        let gv = g(mesh.facet_point(facet, p[0]));
        let phi = tab.values_at(q);
        for i in 0..n {
            for j in 0..n {
                mass[(i, j)] += w * phi[i] * phi[j];
            }
            rhs[(i, 0)] += w * phi[i] * gv[0];
            rhs[(i, 1)] += w * phi[i] * gv[1];
        }
    }
    let sol = mass
        .cholesky()
        .expect("facet mass matrix is SPD")
        .solve(&rhs);
    let mut out = Vec::with_capacity(2 * n);
    out.extend(sol.column(0).iter());
    out.extend(sol.column(1).iter());
    out
}

/// L2 projection of a scalar function onto a cell basis.
pub fn project_cell_scalar(
    geom: &CellGeometry,
    basis: &LagrangeBasis,
    rule: &QuadRule,
    g: &dyn Fn([f64; 2]) -> f64,
) -> Vec<f64> {
    let n = basis.dim();
    let tab = basis.tabulate(&rule.points);
    let mut mass = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (q, (p, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        let gv = g(geom.map(*p));
        let phi = tab.values_at(q);
        for i in 0..n {
            for j in 0..n {
                mass[(i, j)] += w * phi[i] * phi[j];
            }
            rhs[i] += w * phi[i] * gv;
        }
    }
    mass.cholesky()
        .expect("cell mass matrix is SPD")
        .solve(&rhs)
        .iter()
        .copied()
        .collect()
}

/// Cell-wise and facet-wise L2 projection of a velocity field (pressures zero).
pub fn project_velocity(
    mesh: &Mesh,
    spaces: &Spaces,
    u0: &dyn Fn([f64; 2]) -> [f64; 2],
) -> FieldState {
    let exact = spaces.assembly_exactness().max(2 * spaces.k() + 2);
    let cell_rule = quadrature_rule(RefElement::Triangle, exact).expect("exactness within limits");
    let facet_rule = quadrature_rule(RefElement::Interval, exact).expect("exactness within limits");
    let mut state = spaces.zero_state();
    let nk = spaces.nk();
    for c in 0..mesh.num_cells() {
        let geom = mesh.cell_geometry(c);
        let ux = project_cell_scalar(&geom, spaces.velocity_basis(), &cell_rule, &|x| u0(x)[0]);
        let uy = project_cell_scalar(&geom, spaces.velocity_basis(), &cell_rule, &|x| u0(x)[1]);
        let block = &mut state.u[c * 2 * nk..(c + 1) * 2 * nk];
        block[..nk].copy_from_slice(&ux);
        block[nk..].copy_from_slice(&uy);
    }
    let nf = 2 * spaces.nkf();
    for f in 0..mesh.num_facets() {
        let coeffs = project_facet_vector(mesh, spaces, &facet_rule, f, u0);
        state.ubar[f * nf..(f + 1) * nf].copy_from_slice(&coeffs);
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_rect_mesh;

    fn unit(nx: usize, ny: usize) -> Mesh {
        generate_rect_mesh(nx, ny, [0.0, 0.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn dof_counts_two_cells() {
        let m = unit(1, 1);
        let s = build_spaces(&m, 2, 2).unwrap();
        assert_eq!(s.n_cell_dofs(), 30);
        assert_eq!(s.n_facet_dofs(), 45);
        let s = build_spaces(&m, 2, 1).unwrap();
        assert_eq!(s.n_facet_dofs(), 40);
        assert_eq!(build_spaces(&m, 0, 0).unwrap_err(), SpaceError::Degree(0));
        assert!(build_spaces(&m, 3, 1).is_err());
    }

    #[test]
    fn block_sizes() {
        let m = unit(2, 2);
        for k in 1..=4 {
            let s = build_spaces(&m, k, k).unwrap();
            assert_eq!(s.cell_block(), (k + 1) * (k + 2) + k * (k + 1) / 2);
            assert_eq!(s.facet_block(), 2 * (k + 1) + k + 1);
        }
    }

    #[test]
    fn trace_points_match_across_facet() {
        let m = generate_rect_mesh(3, 3, [0.0, 0.0, 2.0, 1.0]).unwrap();
        let rule = quadrature_rule(RefElement::Interval, 7).unwrap();
        for f in m.interior_facets() {
            let fc = m.facet_cells(f);
            let (c0, l0) = fc.first;
            let (c1, l1) = fc.second.unwrap();
            let g0 = m.cell_geometry(c0);
            let g1 = m.cell_geometry(c1);
            let p0 = facet_trace_points(&m, c0, l0, &rule);
            let p1 = facet_trace_points(&m, c1, l1, &rule);
            for (a, b) in p0.iter().zip(&p1) {
                let (xa, xb) = (g0.map(*a), g1.map(*b));
                assert!(crate::mesh::dist(xa, xb) < 1e-13);
            }
        }
        // midpoint rule lands on the edge midpoint
        let mid = quadrature_rule(RefElement::Interval, 1).unwrap();
        assert_eq!(mid.len(), 1);
        let f = 0;
        let (c, lf) = m.facet_cells(f).first;
        let x = m
            .cell_geometry(c)
            .map(facet_trace_points(&m, c, lf, &mid)[0]);
        assert!(crate::mesh::dist(x, m.facet_midpoint(f)) < 1e-15);
    }

    #[test]
    fn dirichlet_projection() {
        let m = unit(2, 2);
        let s = build_spaces(&m, 2, 2).unwrap();
        let tags = ["left", "right", "bottom", "top"];
        let mut c = Constraints::new(&m, &s, &tags, true).unwrap();
        apply_dirichlet(&m, &s, &mut c, &|_, _, _| [0.0, 0.0], 0.0);
        assert!(c.values().iter().all(|&v| v == 0.0));

        apply_dirichlet(&m, &s, &mut c, &|_, _, _| [1.0, 0.0], 0.0);
        for f in m.boundary_facets() {
            for i in 0..s.nkf() {
                assert!((c.value(s.facet_velocity_dof(f, 0, i)) - 1.0).abs() < 1e-14);
                assert!(c.value(s.facet_velocity_dof(f, 1, i)).abs() < 1e-14);
            }
        }

        // polynomial data of degree <= k is reproduced
        let g = |x: [f64; 2]| [x[0] * x[0] - x[1], 3.0 * x[0] * x[1] + 1.0];
        apply_dirichlet(&m, &s, &mut c, &|_, x, _| g(x), 0.0);
        let basis = s.facet_velocity_basis();
        for f in m.boundary_facets() {
            for t in [0.0, 0.3, 0.77, 1.0] {
                let phi = basis.values([t, 0.0]);
                let x = m.facet_point(f, t);
                for comp in 0..2 {
                    let v: f64 = (0..s.nkf())
                        .map(|i| phi[i] * c.value(s.facet_velocity_dof(f, comp, i)))
                        .sum();
                    assert!((v - g(x)[comp]).abs() < 1e-13);
                }
            }
        }
        assert!(c.is_constrained(&s, s.facet_pressure_dof(0, 0)));
        assert!(Constraints::new(&m, &s, &["inflow"], false).is_err());
    }

    #[test]
    fn divergence_and_normal_trace_degrees() {
        // div of vector P_k lies in P_{k-1}; normal trace lies in P_k(F)
        let m = unit(1, 1);
        let s = build_spaces(&m, 3, 3).unwrap();
        let geom = m.cell_geometry(0);
        let rule = quadrature_rule(RefElement::Triangle, 10).unwrap();
        let u = |x: [f64; 2]| {
            [
                x[0].powi(3) + x[0] * x[1] * x[1],
                x[1].powi(2) * x[0] - 2.0 * x[1].powi(3),
            ]
        };
        let div =
            |x: [f64; 2]| 3.0 * x[0].powi(2) + x[1] * x[1] + 2.0 * x[1] * x[0] - 6.0 * x[1] * x[1];
        let coeffs = project_cell_scalar(&geom, s.pressure_basis(), &rule, &div);
        for xi in [[0.1, 0.2], [0.5, 0.4], [0.0, 0.9]] {
            let v: f64 = s
                .pressure_basis()
                .values(xi)
                .iter()
                .zip(&coeffs)
                .map(|(a, b)| a * b)
                .sum();
            assert!((v - div(geom.map(xi))).abs() < 1e-13);
        }
        let frule = quadrature_rule(RefElement::Interval, 10).unwrap();
        for f in 0..m.num_facets() {
            let (c, lf) = m.facet_cells(f).first;
            let n = m.cell_geometry(c).facet_normals[lf];
            let un = |x: [f64; 2]| {
                let v = u(x);
                [v[0] * n[0] + v[1] * n[1], 0.0]
            };
            let coeffs = project_facet_vector(&m, &s, &frule, f, &un);
            for t in [0.1, 0.45, 0.9] {
                let phi = s.facet_velocity_basis().values([t, 0.0]);
                let v: f64 = (0..s.nkf()).map(|i| phi[i] * coeffs[i]).sum();
                assert!((v - un(m.facet_point(f, t))[0]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn numbering_is_deterministic() {
        let m = unit(3, 2);
        let a = build_spaces(&m, 2, 2).unwrap();
        let b = build_spaces(&m, 2, 2).unwrap();
        for f in 0..m.num_facets() {
            assert_eq!(a.facet_offset(f), b.facet_offset(f));
            assert_eq!(a.facet_offset(f), f * 9);
        }
    }

    #[test]
    fn facet_vector_roundtrip() {
        let m = unit(2, 1);
        let s = build_spaces(&m, 2, 1).unwrap();
        let mut st = s.zero_state();
        let x: Vec<f64> = (0..s.n_facet_dofs()).map(|i| i as f64).collect();
        st.set_facet_vector(&s, &x);
        assert_eq!(st.facet_vector(&s), x);
    }
}
