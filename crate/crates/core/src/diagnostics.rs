//! Error norms, conservation audits, energy and drag/lift.
//!
//! The momentum residual re-evaluates the numerical fluxes pointwise from the
//! field coefficients; it does not reuse the assembled matrices.

use serde::Serialize;
use thiserror::Error;

use crate::forms::{
    flux_advective, flux_diffusive, upwind_indicator, BoundaryCondition, ProblemConfig,
    ProblemData, Tensor2,
};
use crate::mesh::Mesh;
use crate::polybasis::{quadrature_rule, QuadRule, RefElement, MAX_EXACTNESS};
use crate::spaces::{FieldState, Spaces};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("no boundary facets carry the tag `{0}`")]
    MissingTag(String),
}

/// Errors and audit quantities of one solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ErrorReport {
    pub case: String,
    pub k: usize,
    pub cells: usize,
    pub l2_u: f64,
    pub l2_p: f64,
    pub h1_u: f64,
    pub div_norm: f64,
    pub jump_norm: f64,
    pub momentum_residual_max: f64,
    pub kinetic_energy: f64,
}

fn rules(exactness: usize) -> (QuadRule, QuadRule) {
    let e = exactness.min(MAX_EXACTNESS);
    (
        quadrature_rule(RefElement::Triangle, e).expect("exactness capped"),
        quadrature_rule(RefElement::Interval, e).expect("exactness capped"),
    )
}

fn error_exactness(spaces: &Spaces) -> usize {
    2 * spaces.k() + 6
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn tmul(t: Tensor2, n: [f64; 2]) -> [f64; 2] {
    [
        t[0][0] * n[0] + t[0][1] * n[1],
        t[1][0] * n[0] + t[1][1] * n[1],
    ]
}

/// `(∫ p_h, ∫ p, |Ω|)` over the mesh.
fn pressure_integrals(
    mesh: &Mesh,
    spaces: &Spaces,
    state: &FieldState,
    exact_p: &dyn Fn([f64; 2]) -> f64,
    rule: &QuadRule,
) -> (f64, f64, f64) {
    let (mut ph, mut pe, mut area) = (0.0, 0.0, 0.0);
    for c in 0..mesh.num_cells() {
        let g = mesh.cell_geometry(c);
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let wq = w * g.det;
            ph += wq * state.eval_pressure(spaces, c, *pt);
            pe += wq * exact_p(g.map(*pt));
        }
        area += g.area();
    }
    (ph, pe, area)
}

/// L2 velocity and pressure errors and the broken H1 velocity seminorm
/// error. Both pressures are compared with their means removed.
pub fn error_norms(
    mesh: &Mesh,
    spaces: &Spaces,
    state: &FieldState,
    exact_u: &dyn Fn([f64; 2]) -> [f64; 2],
    exact_grad_u: &dyn Fn([f64; 2]) -> Tensor2,
    exact_p: &dyn Fn([f64; 2]) -> f64,
) -> (f64, f64, f64) {
    let (rule, _) = rules(error_exactness(spaces));
    let (ph, pe, area) = pressure_integrals(mesh, spaces, state, exact_p, &rule);
    let (mh, me) = (ph / area, pe / area);
    let (mut eu, mut ep, mut eg) = (0.0, 0.0, 0.0);
    for c in 0..mesh.num_cells() {
        let g = mesh.cell_geometry(c);
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let wq = w * g.det;
            let x = g.map(*pt);
            let (uh, guh) = state.eval_velocity(spaces, &g, c, *pt);
            let d = sub(uh, exact_u(x));
            eu += wq * dot(d, d);
            let dp = (state.eval_pressure(spaces, c, *pt) - mh) - (exact_p(x) - me);
            ep += wq * dp * dp;
            let ge = exact_grad_u(x);
            for i in 0..2 {
                for j in 0..2 {
                    eg += wq * (guh[i][j] - ge[i][j]).powi(2);
                }
            }
        }
    }
    (eu.sqrt(), ep.sqrt(), eg.sqrt())
}

/// `(‖∇·u_h‖, (Σ_F ∫_F ⟦u_h⟧²)^{1/2})` with the jump over interior facets.
pub fn divergence_and_jump(mesh: &Mesh, spaces: &Spaces, state: &FieldState) -> (f64, f64) {
    let (rule, frule) = rules(2 * spaces.k() + 2);
    let mut div = 0.0;
    for c in 0..mesh.num_cells() {
        let g = mesh.cell_geometry(c);
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let (_, gu) = state.eval_velocity(spaces, &g, c, *pt);
            div += w * g.det * (gu[0][0] + gu[1][1]).powi(2);
        }
    }
    let mut jump = 0.0;
    for f in mesh.interior_facets() {
        let fc = mesh.facet_cells(f);
        let (c0, l0) = fc.first;
        let (c1, l1) = fc.second.expect("interior facet");
        let (g0, g1) = (mesh.cell_geometry(c0), mesh.cell_geometry(c1));
        let (n0, n1) = (g0.facet_normals[l0], g1.facet_normals[l1]);
        let len = mesh.facet_length(f);
        for (pt, w) in frule.points.iter().zip(&frule.weights) {
            let (u0, _) =
                state.eval_velocity(spaces, &g0, c0, mesh.facet_to_cell_ref(c0, l0, pt[0]));
            let (u1, _) =
                state.eval_velocity(spaces, &g1, c1, mesh.facet_to_cell_ref(c1, l1, pt[0]));
            jump += w * len * (dot(u0, n0) + dot(u1, n1)).powi(2);
        }
    }
    (div.sqrt(), jump.sqrt())
}

/// Root-mean-square velocity `(Σ_K ∫_K |u_h|² / |Ω|)^{1/2}`.
pub fn velocity_scale(mesh: &Mesh, spaces: &Spaces, state: &FieldState) -> f64 {
    (kinetic_energy(mesh, spaces, state) / mesh.total_area()).sqrt()
}

/// `Σ_K ∫_K |u_h|²`.
pub fn kinetic_energy(mesh: &Mesh, spaces: &Spaces, state: &FieldState) -> f64 {
    let (rule, _) = rules(2 * spaces.k());
    let mut e = 0.0;
    for c in 0..mesh.num_cells() {
        let g = mesh.cell_geometry(c);
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let (u, _) = state.eval_velocity(spaces, &g, c, *pt);
            e += w * g.det * dot(u, u);
        }
    }
    e
}

/// θ-average `(1 − θ) a + θ b` of two states.
pub fn blend(a: &FieldState, b: &FieldState, theta: f64) -> FieldState {
    let mix = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| (1.0 - theta) * p + theta * q)
            .collect()
    };
    FieldState {
        u: mix(&a.u, &b.u),
        p: mix(&a.p, &b.p),
        ubar: mix(&a.ubar, &b.ubar),
        pbar: mix(&a.pbar, &b.pbar),
        time: (1.0 - theta) * a.time + theta * b.time,
    }
}

/// Which levels enter the balance.
#[derive(Debug, Clone, Copy)]
pub enum Balance<'a> {
    /// Steady: fluxes of `state` with the advective velocity frozen at `adv`, data at `t`.
    Steady { adv: &'a FieldState, t: f64 },
    /// One θ-step from `state_n` to the given state.
    Transient { state_n: &'a FieldState },
}

/// Per-cell momentum balance `∫_K ∂u + ∮_{∂K} σ̂ n + ∫_K R u − ∫_K f`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumResidual {
    pub per_cell: Vec<[f64; 2]>,
    pub max: f64,
}

/// Numerical flux `σ̂ n` on local facet `lf` of `cell` at facet parameter `s`.
#[allow(clippy::too_many_arguments)]
pub fn normal_flux(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    state: &FieldState,
    adv: &FieldState,
    cell: usize,
    lf: usize,
    s: f64,
) -> [f64; 2] {
    let g = mesh.cell_geometry(cell);
    let f = mesh.cell_facets(cell)[lf].facet;
    let n = g.facet_normals[lf];
    let xi = mesh.facet_to_cell_ref(cell, lf, s);
    let (u, gu) = state.eval_velocity(spaces, &g, cell, xi);
    let ubar = state.eval_facet_velocity(spaces, f, s);
    let pbar = state.eval_facet_pressure(spaces, f, s);
    let mut sigma = flux_diffusive(pbar, gu, u, ubar, n, config.nu, config.alpha, g.h);
    if config.advection {
        let (w, _) = adv.eval_velocity(spaces, &g, cell, xi);
        let a = flux_advective(u, ubar, w, n);
        for i in 0..2 {
            for j in 0..2 {
                sigma[i][j] += a[i][j];
            }
        }
    }
    tmul(sigma, n)
}

fn assembly_rules(spaces: &Spaces, config: &ProblemConfig) -> (QuadRule, QuadRule) {
    rules(
        config
            .quad_exactness
            .unwrap_or_else(|| spaces.assembly_exactness()),
    )
}

/// Momentum balance of every cell, using the same quadrature degree as assembly.
pub fn momentum_residual(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    data: &ProblemData,
    state: &FieldState,
    balance: Balance<'_>,
) -> MomentumResidual {
    let (rule, frule) = assembly_rules(spaces, config);
    let (flux_state, adv, t, prev) = match balance {
        Balance::Steady { adv, t } => (state.clone(), adv, t, None),
        Balance::Transient { state_n } => {
            let t = state_n.time + config.theta * config.dt;
            (
                blend(state_n, state, config.theta),
                state_n,
                t,
                Some(state_n),
            )
        }
    };
    let mut per_cell = Vec::with_capacity(mesh.num_cells());
    let mut max: f64 = 0.0;
    for c in 0..mesh.num_cells() {
        let g = mesh.cell_geometry(c);
        let mut r = [0.0; 2];
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let wq = w * g.det;
            let x = g.map(*pt);
            let f = (data.forcing)(x, t);
            r[0] -= wq * f[0];
            r[1] -= wq * f[1];
            if let Some(rm) = &data.reaction {
                let m = rm(x);
                let (u, _) = flux_state.eval_velocity(spaces, &g, c, *pt);
                let mu = tmul(m, u);
                r[0] += wq * mu[0];
                r[1] += wq * mu[1];
            }
            if let Some(sn) = prev {
                let (u1, _) = state.eval_velocity(spaces, &g, c, *pt);
                let (u0, _) = sn.eval_velocity(spaces, &g, c, *pt);
                r[0] += wq * (u1[0] - u0[0]) / config.dt;
                r[1] += wq * (u1[1] - u0[1]) / config.dt;
            }
        }
        for lf in 0..3 {
            let len = g.facet_lengths[lf];
            for (pt, w) in frule.points.iter().zip(&frule.weights) {
                let sn = normal_flux(mesh, spaces, config, &flux_state, adv, c, lf, pt[0]);
                r[0] += w * len * sn[0];
                r[1] += w * len * sn[1];
            }
        }
        max = max.max((r[0] * r[0] + r[1] * r[1]).sqrt());
        per_cell.push(r);
    }
    MomentumResidual { per_cell, max }
}

/// Global momentum identity for meshes without Dirichlet boundaries: returns
/// `Σ_K r_K` and the boundary-flux prediction `∫_Γ (1 − λ)(ū_w·n) ū + ∫_Γ h`
/// for `Σ_K ∮ σ̂ n`, together with the summed flux itself.
pub fn global_flux_identity(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    data: &ProblemData,
    state: &FieldState,
    balance: Balance<'_>,
) -> ([f64; 2], [f64; 2]) {
    let (_, frule) = assembly_rules(spaces, config);
    let (flux_state, adv, t) = match balance {
        Balance::Steady { adv, t } => (state.clone(), adv, t),
        Balance::Transient { state_n } => (
            blend(state_n, state, config.theta),
            state_n,
            state_n.time + config.theta * config.dt,
        ),
    };
    let mut summed = [0.0; 2];
    let mut predicted = [0.0; 2];
    for c in 0..mesh.num_cells() {
        let g = mesh.cell_geometry(c);
        for lf in 0..3 {
            let len = g.facet_lengths[lf];
            let f = mesh.cell_facets(c)[lf].facet;
            let bc = if mesh.is_boundary_facet(f) {
                data.condition(mesh, f)
            } else {
                None
            };
            for (pt, w) in frule.points.iter().zip(&frule.weights) {
                let sn = normal_flux(mesh, spaces, config, &flux_state, adv, c, lf, pt[0]);
                summed[0] += w * len * sn[0];
                summed[1] += w * len * sn[1];
                if let Some(BoundaryCondition::Neumann(h)) = bc {
                    let n = g.facet_normals[lf];
                    let hv = h(mesh.facet_point(f, pt[0]), t);
                    let ub = flux_state.eval_facet_velocity(spaces, f, pt[0]);
                    let back = if config.advection {
                        let uw = adv.eval_facet_velocity(spaces, f, pt[0]);
                        let un = dot(uw, n);
                        (1.0 - upwind_indicator(un)) * un
                    } else {
                        0.0
                    };
                    for i in 0..2 {
                        predicted[i] += w * len * (hv[i] + back * ub[i]);
                    }
                }
            }
        }
    }
    (summed, predicted)
}

/// Non-negative dissipation of the energy identity, evaluated for the state
/// `x` with advective velocity `adv`:
/// `½∮|w·n||u−ū|² + ν∫|∇u|² + ∮(να/h)|ū−u|² + 2∮ν(∇u n)·(ū−u) + ½∫_{Γ_N}|ū_w·n||ū|²`.
pub fn energy_dissipation(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    data: &ProblemData,
    x: &FieldState,
    adv: &FieldState,
) -> f64 {
    // the upwind switch is not polynomial along a facet, so match the assembly points
    let (rule, frule) = assembly_rules(spaces, config);
    let nu = config.nu;
    let mut d = 0.0;
    for c in 0..mesh.num_cells() {
        let g = mesh.cell_geometry(c);
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let (_, gu) = x.eval_velocity(spaces, &g, c, *pt);
            let s: f64 = gu.iter().flatten().map(|v| v * v).sum();
            d += w * g.det * nu * s;
        }
        let pen = nu * config.alpha / g.h;
        for lf in 0..3 {
            let f = mesh.cell_facets(c)[lf].facet;
            let n = g.facet_normals[lf];
            let len = g.facet_lengths[lf];
            let neumann = mesh.is_boundary_facet(f)
                && matches!(data.condition(mesh, f), Some(BoundaryCondition::Neumann(_)));
            for (pt, w) in frule.points.iter().zip(&frule.weights) {
                let xi = mesh.facet_to_cell_ref(c, lf, pt[0]);
                let (u, gu) = x.eval_velocity(spaces, &g, c, xi);
                let ub = x.eval_facet_velocity(spaces, f, pt[0]);
                let jump = sub(ub, u);
                let gun = tmul(gu, n);
                let mut v = pen * dot(jump, jump) + 2.0 * nu * dot(gun, jump);
                if config.advection {
                    let (wv, _) = adv.eval_velocity(spaces, &g, c, xi);
                    v += 0.5 * dot(wv, n).abs() * dot(jump, jump);
                    if neumann {
                        let uw = adv.eval_facet_velocity(spaces, f, pt[0]);
                        v += 0.5 * dot(uw, n).abs() * dot(ub, ub);
                    }
                }
                d += w * len * v;
            }
        }
    }
    d
}

/// Defect of the discrete energy identity of one θ-step with homogeneous data:
/// `(E₁ − E₀)/(2Δt) + (θ − ½)‖u₁ − u₀‖²/Δt + D(u^{n+θ}; uⁿ)`.
pub fn energy_identity_defect(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    data: &ProblemData,
    state_n: &FieldState,
    state_np1: &FieldState,
) -> f64 {
    let e0 = kinetic_energy(mesh, spaces, state_n);
    let e1 = kinetic_energy(mesh, spaces, state_np1);
    let mut diff = state_np1.clone();
    for (a, b) in diff.u.iter_mut().zip(&state_n.u) {
        *a -= b;
    }
    let de = kinetic_energy(mesh, spaces, &diff);
    let mid = blend(state_n, state_np1, config.theta);
    let dis = energy_dissipation(mesh, spaces, config, data, &mid, state_n);
    (e1 - e0) / (2.0 * config.dt) + (config.theta - 0.5) * de / config.dt + dis
}

/// Drag and lift coefficients `−(1/r) ∫ (σ_d n)·e_i` over facets tagged
/// `tag`, with `n` pointing from the obstacle into the fluid.
pub fn drag_lift(
    mesh: &Mesh,
    spaces: &Spaces,
    state: &FieldState,
    nu: f64,
    tag: &str,
    r: f64,
) -> Result<(f64, f64), DiagnosticsError> {
    let (_, frule) = rules(2 * spaces.k() + 2);
    let mut force = [0.0; 2];
    let mut found = false;
    for f in mesh.facets_with_tag(tag) {
        found = true;
        let (c, lf) = mesh.facet_cells(f).first;
        let g = mesh.cell_geometry(c);
        let nc = g.facet_normals[lf];
        let n = [-nc[0], -nc[1]];
        let len = g.facet_lengths[lf];
        for (pt, w) in frule.points.iter().zip(&frule.weights) {
            let xi = mesh.facet_to_cell_ref(c, lf, pt[0]);
            let (_, gu) = state.eval_velocity(spaces, &g, c, xi);
            let p = state.eval_pressure(spaces, c, xi);
            let sd = [
                [p - nu * gu[0][0], -nu * gu[0][1]],
                [-nu * gu[1][0], p - nu * gu[1][1]],
            ];
            let t = tmul(sd, n);
            force[0] += w * len * t[0];
            force[1] += w * len * t[1];
        }
    }
    if !found {
        return Err(DiagnosticsError::MissingTag(tag.to_string()));
    }
    Ok((-force[0] / r, -force[1] / r))
}
