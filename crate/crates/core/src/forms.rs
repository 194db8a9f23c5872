//! Local HDG operator: per-cell dense blocks of the linearised momentum and
//! mass equations, for steady (Picard) and θ-scheme transient solves.
//!
//! Local unknown order is `[u_x, u_y, p]` on the cell followed by
//! `[ubar_x, ubar_y, pbar]` for local facets 0, 1, 2.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mesh::{reference_facet_point, Mesh};
use crate::polybasis::{quadrature_rule, BasisTables, QuadRule, RefElement};
use crate::spaces::{FieldState, Spaces};

pub type Tensor2 = [[f64; 2]; 2];

/// Vector-valued data `g(x, t)`.
pub type VectorField = Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;

/// Position-dependent 2×2 reaction matrix `M(x)`, entering as `+∫ (M u)·v`.
pub type ReactionField = Arc<dyn Fn([f64; 2]) -> Tensor2 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error("non-finite entry in the local system of cell {cell}")]
    NonFinite { cell: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("boundary facet {facet} has no boundary condition (tag {tag:?})")]
    MissingBoundary { facet: usize, tag: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub nu: f64,
    pub alpha: f64,
    pub theta: f64,
    pub dt: f64,
    pub advection: bool,
    /// Quadrature exactness for assembly; `None` means `3k + 1`.
    pub quad_exactness: Option<usize>,
}

impl ProblemConfig {
    /// Steady configuration with the default penalty `6k²` and θ = 1.
    pub fn new(nu: f64, k: usize) -> Self {
        Self {
            nu,
            alpha: default_alpha(k),
            theta: 1.0,
            dt: 0.0,
            advection: true,
            quad_exactness: None,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn stokes(mut self) -> Self {
        self.advection = false;
        self
    }

    pub fn validate(&self, transient: bool) -> Result<(), FormError> {
        let bad = |m: String| Err(FormError::InvalidConfig(m));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("viscosity must be positive, got {}", self.nu));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("penalty must be non-negative, got {}", self.alpha));
        }
        if transient {
            if !(0.5..=1.0).contains(&self.theta) {
                return bad(format!("theta must lie in [0.5, 1], got {}", self.theta));
            }
            if !(self.dt > 0.0 && self.dt.is_finite()) {
                return bad(format!("time step must be positive, got {}", self.dt));
            }
        }
        Ok(())
    }
}

pub fn default_alpha(k: usize) -> f64 {
    6.0 * (k * k) as f64
}

#[derive(Clone)]
pub enum BoundaryCondition {
    Dirichlet(VectorField),
    /// Traction data `h`, including the backflow term of the open boundary.
    Neumann(VectorField),
}

impl BoundaryCondition {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryCondition::Dirichlet(_))
    }
}

impl std::fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundaryCondition::Dirichlet(_) => "Dirichlet",
            BoundaryCondition::Neumann(_) => "Neumann",
        })
    }
}

/// Forcing, boundary conditions by tag, and an optional reaction term.
#[derive(Clone)]
pub struct ProblemData {
    pub forcing: VectorField,
    pub boundary: BTreeMap<String, BoundaryCondition>,
    pub reaction: Option<ReactionField>,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData")
            .field("boundary", &self.boundary)
            .field("reaction", &self.reaction.is_some())
            .finish()
    }
}

pub fn zero_field() -> VectorField {
    Arc::new(|_, _| [0.0, 0.0])
}

impl ProblemData {
    pub fn new(forcing: VectorField) -> Self {
        Self {
            forcing,
            boundary: BTreeMap::new(),
            reaction: None,
        }
    }

    pub fn with_boundary(mut self, tag: &str, bc: BoundaryCondition) -> Self {
        self.boundary.insert(tag.to_string(), bc);
        self
    }

    pub fn with_reaction(mut self, r: ReactionField) -> Self {
        self.reaction = Some(r);
        self
    }

    pub fn dirichlet_tags(&self) -> Vec<&str> {
        self.boundary
            .iter()
            .filter(|(_, bc)| bc.is_dirichlet())
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn has_neumann(&self) -> bool {
        self.boundary.values().any(|bc| !bc.is_dirichlet())
    }

    pub fn condition(&self, mesh: &Mesh, facet: usize) -> Option<&BoundaryCondition> {
        mesh.facet_tag(facet).and_then(|t| self.boundary.get(t))
    }

    /// Dirichlet value of the facet tagged `tag` (zero for non-Dirichlet tags).
    pub fn dirichlet_value(&self, tag: &str, x: [f64; 2], t: f64) -> [f64; 2] {
        match self.boundary.get(tag) {
            Some(BoundaryCondition::Dirichlet(g)) => g(x, t),
            _ => [0.0, 0.0],
        }
    }

    /// Every boundary facet must carry a tag with a condition.
    pub fn validate(&self, mesh: &Mesh) -> Result<(), FormError> {
        for f in mesh.boundary_facets() {
            if self.condition(mesh, f).is_none() {
                return Err(FormError::MissingBoundary {
                    facet: f,
                    tag: mesh.facet_tag(f).map(str::to_string),
                });
            }
        }
        Ok(())
    }
}

/// 1 on inflow (`un < 0`), 0 on outflow.
#[inline]
pub fn upwind_indicator(un: f64) -> f64 {
    if un < 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn outer(a: [f64; 2], b: [f64; 2]) -> Tensor2 {
    [[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]]
}

/// Upwinded advective flux `u ⊗ w + λ (ubar − u) ⊗ w` with `λ` from `w·n`.
pub fn flux_advective(u: [f64; 2], ubar: [f64; 2], u_adv: [f64; 2], n: [f64; 2]) -> Tensor2 {
    let lam = upwind_indicator(u_adv[0] * n[0] + u_adv[1] * n[1]);
    let d = [lam * (ubar[0] - u[0]), lam * (ubar[1] - u[1])];
    let a = outer(u, u_adv);
    let b = outer(d, u_adv);
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

/// Diffusive flux `pbar I − ν ∇u − (ν α / h) (ubar − u) ⊗ n`.
#[allow(clippy::too_many_arguments)]
pub fn flux_diffusive(
    pbar: f64,
    grad_u: Tensor2,
    u: [f64; 2],
    ubar: [f64; 2],
    n: [f64; 2],
    nu: f64,
    alpha: f64,
    h: f64,
) -> Tensor2 {
    let s = nu * alpha / h;
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { pbar } else { 0.0 };
            out[i][j] = id - nu * grad_u[i][j] - s * (ubar[i] - u[i]) * n[j];
        }
    }
    out
}

/// Basis tables on the reference cell and its facets for one rule exactness.
#[derive(Debug, Clone)]
pub struct ReferenceTables {
    pub exactness: usize,
    pub cell_rule: QuadRule,
    pub facet_rule: QuadRule,
    pub velocity: BasisTables,
    pub pressure: BasisTables,
    pub facet_velocity: BasisTables,
    pub facet_pressure: BasisTables,
    /// Cell bases at facet points, indexed `[local facet][aligned as usize]`.
    trace_velocity: Vec<BasisTables>,
    trace_pressure: Vec<BasisTables>,
}

impl ReferenceTables {
    pub fn new(spaces: &Spaces, exactness: usize) -> Self {
        let cell_rule =
            quadrature_rule(RefElement::Triangle, exactness).expect("exactness within limits");
        let facet_rule =
            quadrature_rule(RefElement::Interval, exactness).expect("exactness within limits");
        let mut trace_velocity = Vec::with_capacity(6);
        let mut trace_pressure = Vec::with_capacity(6);
        for lf in 0..3 {
            for aligned in [false, true] {
                let pts: Vec<[f64; 2]> = facet_rule
                    .points
                    .iter()
                    .map(|p| reference_facet_point(lf, aligned, p[0]))
                    .collect();
                trace_velocity.push(spaces.velocity_basis().tabulate(&pts));
                trace_pressure.push(spaces.pressure_basis().tabulate(&pts));
            }
        }
        Self {
            exactness,
            velocity: spaces.velocity_basis().tabulate(&cell_rule.points),
            pressure: spaces.pressure_basis().tabulate(&cell_rule.points),
            facet_velocity: spaces.facet_velocity_basis().tabulate(&facet_rule.points),
            facet_pressure: spaces.facet_pressure_basis().tabulate(&facet_rule.points),
            cell_rule,
            facet_rule,
            trace_velocity,
            trace_pressure,
        }
    }

    /// Tables for the default exactness of `config`.
    pub fn for_config(spaces: &Spaces, config: &ProblemConfig) -> Self {
        Self::new(
            spaces,
            config
                .quad_exactness
                .unwrap_or_else(|| spaces.assembly_exactness()),
        )
    }

    pub fn trace_velocity(&self, lf: usize, aligned: bool) -> &BasisTables {
        &self.trace_velocity[2 * lf + aligned as usize]
    }

    pub fn trace_pressure(&self, lf: usize, aligned: bool) -> &BasisTables {
        &self.trace_pressure[2 * lf + aligned as usize]
    }
}

/// How the local system is formed.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Steady problem with data at time `t`.
    Steady { t: f64 },
    /// One θ-step from `state_n` at time `t_n`.
    Transient { state_n: &'a FieldState, t_n: f64 },
}

/// Dense local blocks, split into cell (K) and facet (F) unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSystem {
    pub cell: usize,
    pub facets: [usize; 3],
    pub a_kk: DMatrix<f64>,
    pub a_kf: DMatrix<f64>,
    pub a_fk: DMatrix<f64>,
    pub a_ff: DMatrix<f64>,
    pub b_k: DVector<f64>,
    pub b_f: DVector<f64>,
}

impl LocalSystem {
    /// Global facet-system index of each local facet unknown.
    pub fn facet_dofs(&self, spaces: &Spaces) -> Vec<usize> {
        let fb = spaces.facet_block();
        self.facets
            .iter()
            .flat_map(|&f| (0..fb).map(move |j| spaces.facet_offset(f) + j))
            .collect()
    }

    /// The full local matrix `[[A_KK, A_KF], [A_FK, A_FF]]`.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let nk = self.a_kk.nrows();
        let nf = self.a_ff.nrows();
        let mut a = DMatrix::zeros(nk + nf, nk + nf);
        a.view_mut((0, 0), (nk, nk)).copy_from(&self.a_kk);
        a.view_mut((0, nk), (nk, nf)).copy_from(&self.a_kf);
        a.view_mut((nk, 0), (nf, nk)).copy_from(&self.a_fk);
        a.view_mut((nk, nk), (nf, nf)).copy_from(&self.a_ff);
        a
    }

    pub fn full_rhs(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.b_k.len() + self.b_f.len());
        b.rows_mut(0, self.b_k.len()).copy_from(&self.b_k);
        b.rows_mut(self.b_k.len(), self.b_f.len())
            .copy_from(&self.b_f);
        b
    }
}

/// Local facet unknowns of `cell` gathered from `state`.
pub fn local_facet_vector(
    mesh: &Mesh,
    spaces: &Spaces,
    state: &FieldState,
    cell: usize,
) -> DVector<f64> {
    let fb = spaces.facet_block();
    let mut v = DVector::zeros(3 * fb);
    for (lf, cf) in mesh.cell_facets(cell).iter().enumerate() {
        let ub = state.facet_ubar(spaces, cf.facet);
        let pb = state.facet_pbar(spaces, cf.facet);
        for (j, x) in ub.iter().chain(pb).enumerate() {
            v[lf * fb + j] = *x;
        }
    }
    v
}

/// Local unknowns `[cell; facets]` of `cell` gathered from `state`.
pub fn local_vector(mesh: &Mesh, spaces: &Spaces, state: &FieldState, cell: usize) -> DVector<f64> {
    let c = state.cell_vector(spaces, cell);
    let f = local_facet_vector(mesh, spaces, state, cell);
    DVector::from_iterator(c.len() + f.len(), c.into_iter().chain(f.iter().copied()))
}

/// Linearised operator `L` and load `F` of one cell at data time `t`, with the
/// advective velocity frozen at `adv`. Also returns the scalar cell mass matrix.
#[allow(clippy::too_many_arguments)]
fn local_operator(
    mesh: &Mesh,
    spaces: &Spaces,
    tables: &ReferenceTables,
    cell: usize,
    adv: &FieldState,
    config: &ProblemConfig,
    data: &ProblemData,
    t: f64,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let nk = spaces.nk();
    let np = spaces.np();
    let nkf = spaces.nkf();
    let npf = spaces.npf();
    let ncell = spaces.cell_block();
    let fb = spaces.facet_block();
    let n = ncell + 3 * fb;
    let pu = 2 * nk;

    let geom = mesh.cell_geometry(cell);
    let nu = config.nu;
    let w_coef = adv.cell_u(spaces, cell);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut mass = DMatrix::<f64>::zeros(nk, nk);

    let mut g = vec![[0.0; 2]; nk];
    let mut gp = vec![[0.0; 2]; np];
    let mut gn = vec![0.0; nk];

    for (q, (pt, wt)) in tables
        .cell_rule
        .points
        .iter()
        .zip(&tables.cell_rule.weights)
        .enumerate()
    {
        let wq = wt * geom.det;
        let x = geom.map(*pt);
        let phi = tables.velocity.values_at(q);
        let psi = tables.pressure.values_at(q);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = geom.push_gradient(tables.velocity.grad(q, i));
        }
        for (c, gc) in gp.iter_mut().enumerate() {
            *gc = geom.push_gradient(tables.pressure.grad(q, c));
        }
        let mut w = [0.0; 2];
        if config.advection {
            for i in 0..nk {
                w[0] += w_coef[i] * phi[i];
                w[1] += w_coef[nk + i] * phi[i];
            }
        }
        let f = (data.forcing)(x, t);
        let react = data.reaction.as_ref().map(|r| r(x));
        for ia in 0..nk {
            let wga = w[0] * g[ia][0] + w[1] * g[ia][1];
            rhs[ia] += wq * f[0] * phi[ia];
            rhs[nk + ia] += wq * f[1] * phi[ia];
            for ib in 0..nk {
                let v = wq * (nu * (g[ia][0] * g[ib][0] + g[ia][1] * g[ib][1]) - phi[ib] * wga);
                a[(ia, ib)] += v;
                a[(nk + ia, nk + ib)] += v;
                let m = wq * phi[ia] * phi[ib];
                mass[(ia, ib)] += m;
                if let Some(r) = react {
                    for ci in 0..2 {
                        for cj in 0..2 {
                            a[(ci * nk + ia, cj * nk + ib)] += r[ci][cj] * m;
                        }
                    }
                }
            }
            for c in 0..np {
                a[(ia, pu + c)] -= wq * psi[c] * g[ia][0];
                a[(nk + ia, pu + c)] -= wq * psi[c] * g[ia][1];
            }
        }
        for c in 0..np {
            for ib in 0..nk {
                a[(pu + c, ib)] += wq * phi[ib] * gp[c][0];
                a[(pu + c, nk + ib)] += wq * phi[ib] * gp[c][1];
            }
        }
    }

    let pen = nu * config.alpha / geom.h;
    for (lf, cf) in mesh.cell_facets(cell).iter().enumerate() {
        let facet = cf.facet;
        let nrm = geom.facet_normals[lf];
        let len = geom.facet_lengths[lf];
        let tv = tables.trace_velocity(lf, cf.aligned);
        let tp = tables.trace_pressure(lf, cf.aligned);
        let boundary = mesh.is_boundary_facet(facet);
        let neumann = match data.condition(mesh, facet) {
            Some(BoundaryCondition::Neumann(h)) if boundary => Some(h),
            _ => None,
        };
        let off = ncell + lf * fb;
        let poff = off + 2 * nkf;
        for (q, (pt, wt)) in tables
            .facet_rule
            .points
            .iter()
            .zip(&tables.facet_rule.weights)
            .enumerate()
        {
            let wq = wt * len;
            let phi = tv.values_at(q);
            let psi = tp.values_at(q);
            let chi = tables.facet_velocity.values_at(q);
            let pi = tables.facet_pressure.values_at(q);
            for (i, gi) in gn.iter_mut().enumerate() {
                let gr = geom.push_gradient(tv.grad(q, i));
                *gi = gr[0] * nrm[0] + gr[1] * nrm[1];
            }
            let mut wn = 0.0;
            if config.advection {
                let mut w = [0.0; 2];
                for i in 0..nk {
                    w[0] += w_coef[i] * phi[i];
                    w[1] += w_coef[nk + i] * phi[i];
                }
                wn = w[0] * nrm[0] + w[1] * nrm[1];
            }
            let lam = upwind_indicator(wn);
            let out_w = (1.0 - lam) * wn;
            let in_w = lam * wn;

            for comp in 0..2 {
                let ni = nrm[comp];
                let cu = comp * nk;
                let fu = off + comp * nkf;
                for ia in 0..nk {
                    let r = cu + ia;
                    for ib in 0..nk {
                        a[(r, cu + ib)] += wq
                            * ((out_w + pen) * phi[ib] * phi[ia]
                                - nu * gn[ib] * phi[ia]
                                - nu * phi[ib] * gn[ia]);
                    }
                    for m in 0..nkf {
                        a[(r, fu + m)] +=
                            wq * ((in_w - pen) * chi[m] * phi[ia] + nu * chi[m] * gn[ia]);
                    }
                    for m in 0..npf {
                        a[(r, poff + m)] += wq * pi[m] * ni * phi[ia];
                    }
                }
                for c in 0..np {
                    for ib in 0..nk {
                        a[(pu + c, cu + ib)] -= wq * phi[ib] * ni * psi[c];
                    }
                }
                for l in 0..nkf {
                    let r = fu + l;
                    for ib in 0..nk {
                        a[(r, cu + ib)] +=
                            wq * ((out_w + pen) * phi[ib] * chi[l] - nu * gn[ib] * chi[l]);
                    }
                    for m in 0..nkf {
                        a[(r, fu + m)] += wq * (in_w - pen) * chi[m] * chi[l];
                    }
                    for m in 0..npf {
                        a[(r, poff + m)] += wq * pi[m] * ni * chi[l];
                    }
                }
                for l in 0..npf {
                    let r = poff + l;
                    for ib in 0..nk {
                        a[(r, cu + ib)] += wq * phi[ib] * ni * pi[l];
                    }
                    if boundary {
                        for m in 0..nkf {
                            a[(r, fu + m)] -= wq * chi[m] * ni * pi[l];
                        }
                    }
                }
            }

            if let Some(h) = neumann {
                let s = pt[0];
                let hv = h(mesh.facet_point(facet, s), t);
                let back = if config.advection {
                    let ub = adv.eval_facet_velocity(spaces, facet, s);
                    let ubn = ub[0] * nrm[0] + ub[1] * nrm[1];
                    (1.0 - upwind_indicator(ubn)) * ubn
                } else {
                    0.0
                };
                for comp in 0..2 {
                    let fu = off + comp * nkf;
                    for l in 0..nkf {
                        rhs[fu + l] += wq * hv[comp] * chi[l];
                        for m in 0..nkf {
                            a[(fu + l, fu + m)] -= wq * back * chi[m] * chi[l];
                        }
                    }
                }
            }
        }
    }
    (a, rhs, mass)
}

/// True for rows belonging to momentum equations (cell or facet).
fn is_momentum_row(spaces: &Spaces, row: usize) -> bool {
    let ncell = spaces.cell_block();
    if row < ncell {
        row < 2 * spaces.nk()
    } else {
        (row - ncell) % spaces.facet_block() < 2 * spaces.nkf()
    }
}

/// Assemble the local system of `cell`.
///
/// Steady mode freezes the advective velocity at `adv` (the previous Picard
/// iterate). Transient mode builds the θ-scheme step from `state_n`, which
/// also supplies the frozen advective velocity; `adv` is ignored there.
#[allow(clippy::too_many_arguments)]
pub fn local_system(
    mesh: &Mesh,
    spaces: &Spaces,
    tables: &ReferenceTables,
    cell: usize,
    adv: &FieldState,
    config: &ProblemConfig,
    data: &ProblemData,
    mode: Mode<'_>,
) -> Result<LocalSystem, FormError> {
    let (a, rhs) = match mode {
        Mode::Steady { t } => {
            let (a, rhs, _) = local_operator(mesh, spaces, tables, cell, adv, config, data, t);
            (a, rhs)
        }
        Mode::Transient { state_n, t_n } => {
            let theta = config.theta;
            let t = t_n + theta * config.dt;
            let (mut a, mut rhs, mass) =
                local_operator(mesh, spaces, tables, cell, state_n, config, data, t);
            let xn = local_vector(mesh, spaces, state_n, cell);
            let lx = &a * &xn;
            for r in 0..a.nrows() {
                if is_momentum_row(spaces, r) {
                    a.row_mut(r).scale_mut(theta);
                    rhs[r] -= (1.0 - theta) * lx[r];
                } else {
                    rhs[r] = 0.0;
                }
            }
            let nk = spaces.nk();
            let inv_dt = 1.0 / config.dt;
            for comp in 0..2 {
                let o = comp * nk;
                for i in 0..nk {
                    for j in 0..nk {
                        let m = mass[(i, j)] * inv_dt;
                        a[(o + i, o + j)] += m;
                        rhs[o + i] += m * xn[o + j];
                    }
                }
            }
            (a, rhs)
        }
    };
    if a.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(FormError::NonFinite { cell });
    }
    let nkc = spaces.cell_block();
    let nf = a.nrows() - nkc;
    let facets = {
        let cf = mesh.cell_facets(cell);
        [cf[0].facet, cf[1].facet, cf[2].facet]
    };
    Ok(LocalSystem {
        cell,
        facets,
        a_kk: a.view((0, 0), (nkc, nkc)).into_owned(),
        a_kf: a.view((0, nkc), (nkc, nf)).into_owned(),
        a_fk: a.view((nkc, 0), (nf, nkc)).into_owned(),
        a_ff: a.view((nkc, nkc), (nf, nf)).into_owned(),
        b_k: rhs.rows(0, nkc).into_owned(),
        b_f: rhs.rows(nkc, nf).into_owned(),
    })
}
