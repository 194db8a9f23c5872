//! The assembled local systems against a direct quadrature evaluation of the
//! weak form built from the numerical flux functions.

mod common;

use std::sync::Arc;

use common::*;
use hdgflow::forms::{
    flux_advective, flux_diffusive, local_system, local_vector, upwind_indicator,
    BoundaryCondition, Mode, ProblemConfig, ProblemData, ReferenceTables,
};
use hdgflow::mesh::Mesh;
use hdgflow::polybasis::{quadrature_rule, RefElement};
use hdgflow::spaces::{project_velocity, FieldState, Spaces};

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn matvec(t: [[f64; 2]; 2], n: [f64; 2]) -> [f64; 2] {
    [dot(t[0], n), dot(t[1], n)]
}

fn pressure_gradient(
    spaces: &Spaces,
    geom: &hdgflow::mesh::CellGeometry,
    s: &FieldState,
    c: usize,
    xi: [f64; 2],
) -> [f64; 2] {
    let grads = spaces.pressure_basis().gradients(xi);
    let mut g = [0.0; 2];
    for (gr, a) in grads.iter().zip(s.cell_p(spaces, c)) {
        let pg = geom.push_gradient(*gr);
        g[0] += a * pg[0];
        g[1] += a * pg[1];
    }
    g
}

/// Outward unit normal of the cell edge `facet`, independent of the mesh tables.
fn outward_normal(mesh: &Mesh, cell: usize, facet: usize) -> [f64; 2] {
    let [a, b] = mesh.facets()[facet];
    let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
    let t = [pb[0] - pa[0], pb[1] - pa[1]];
    let len = t[0].hypot(t[1]);
    let mut n = [t[1] / len, -t[0] / len];
    let v = mesh.cell_vertices(cell);
    let c = [
        (v[0][0] + v[1][0] + v[2][0]) / 3.0,
        (v[0][1] + v[1][1] + v[2][1]) / 3.0,
    ];
    if dot(n, [pa[0] - c[0], pa[1] - c[1]]) < 0.0 {
        n = [-n[0], -n[1]];
    }
    n
}

struct WeakForm {
    /// Linear part `B(x; v)`.
    bilinear: f64,
    /// Load `F(v)`.
    load: f64,
    /// `∫ u·v` over the domain.
    mass: f64,
}

/// Direct evaluation of the discrete weak form with test function `v`.
fn weak_form(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    data: &ProblemData,
    adv: &FieldState,
    x: &FieldState,
    v: &FieldState,
    t: f64,
) -> WeakForm {
    let k = spaces.k();
    let crule = quadrature_rule(RefElement::Triangle, 3 * k + 3).unwrap();
    let frule = quadrature_rule(RefElement::Interval, 3 * k + 3).unwrap();
    let nu = config.nu;
    let mut out = WeakForm {
        bilinear: 0.0,
        load: 0.0,
        mass: 0.0,
    };
    for c in 0..mesh.num_cells() {
        let geom = mesh.cell_geometry(c);
        for (xi, w) in crule.points.iter().zip(&crule.weights) {
            let wq = w * geom.det;
            let pt = geom.map(*xi);
            let (u, gu) = x.eval_velocity(spaces, &geom, c, *xi);
            let p = x.eval_pressure(spaces, c, *xi);
            let (vv, gv) = v.eval_velocity(spaces, &geom, c, *xi);
            let gq = pressure_gradient(spaces, &geom, v, c, *xi);
            let wv = if config.advection {
                adv.eval_velocity(spaces, &geom, c, *xi).0
            } else {
                [0.0; 2]
            };
            let mut b = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    b += nu * gu[i][j] * gv[i][j] - u[i] * wv[j] * gv[i][j];
                }
            }
            b -= p * (gv[0][0] + gv[1][1]);
            b += dot(u, gq);
            if let Some(r) = &data.reaction {
                b += dot(matvec(r(pt), u), vv);
            }
            out.bilinear += wq * b;
            out.load += wq * dot((data.forcing)(pt, t), vv);
            out.mass += wq * dot(u, vv);
        }
        let h = (0..3)
            .map(|lf| mesh.facet_length(mesh.cell_facets(c)[lf].facet))
            .fold(0.0, f64::max);
        for cf in mesh.cell_facets(c) {
            let f = cf.facet;
            let n = outward_normal(mesh, c, f);
            let len = mesh.facet_length(f);
            let boundary = mesh.is_boundary_facet(f);
            for (sp, w) in frule.points.iter().zip(&frule.weights) {
                let s = sp[0];
                let wl = w * len;
                let pt = mesh.facet_point(f, s);
                let xi = geom.inverse_map(pt);
                let (u, gu) = x.eval_velocity(spaces, &geom, c, xi);
                let ub = x.eval_facet_velocity(spaces, f, s);
                let pb = x.eval_facet_pressure(spaces, f, s);
                let (vv, gv) = v.eval_velocity(spaces, &geom, c, xi);
                let q = v.eval_pressure(spaces, c, xi);
                let vb = v.eval_facet_velocity(spaces, f, s);
                let qb = v.eval_facet_pressure(spaces, f, s);
                let wv = if config.advection {
                    adv.eval_velocity(spaces, &geom, c, xi).0
                } else {
                    [0.0; 2]
                };
                let fd = flux_diffusive(pb, gu, u, ub, n, nu, config.alpha, h);
                let fa = flux_advective(u, ub, wv, n);
                let sn = [dot(fd[0], n) + dot(fa[0], n), dot(fd[1], n) + dot(fa[1], n)];
                let jump = [u[0] - ub[0], u[1] - ub[1]];
                let mut b = dot(sn, vv) + dot(sn, vb) - nu * dot(jump, matvec(gv, n))
                    + dot(u, n) * (qb - q);
                if boundary {
                    b -= dot(ub, n) * qb;
                }
                if let Some(BoundaryCondition::Neumann(hf)) = data.condition(mesh, f) {
                    let uw = if config.advection {
                        adv.eval_facet_velocity(spaces, f, s)
                    } else {
                        [0.0; 2]
                    };
                    let un = dot(uw, n);
                    b -= (1.0 - upwind_indicator(un)) * un * dot(ub, vb);
                    out.load += wl * dot(hf(pt, t), vb);
                }
                out.bilinear += wl * b;
            }
        }
    }
    out
}

/// `Σ_K vᵀ (A_K x − b_K)` over the assembled local systems.
fn assembled(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    data: &ProblemData,
    adv: &FieldState,
    mode: Mode<'_>,
    x: &FieldState,
    v: &FieldState,
) -> f64 {
    let tables = ReferenceTables::for_config(spaces, config);
    (0..mesh.num_cells())
        .map(|c| {
            let ls = local_system(mesh, spaces, &tables, c, adv, config, data, mode).unwrap();
            let xl = local_vector(mesh, spaces, x, c);
            let vl = local_vector(mesh, spaces, v, c);
            vl.dot(&(ls.full_matrix() * xl - ls.full_rhs()))
        })
        .sum()
}

/// Assembly rules matched to the oracle's, since a discontinuous advective
/// field makes the upwind switch non-polynomial along a facet.
fn oracle_config(nu: f64, k: usize) -> ProblemConfig {
    ProblemConfig {
        quad_exactness: Some(3 * k + 3),
        ..ProblemConfig::new(nu, k)
    }
}

fn with_reaction(data: ProblemData) -> ProblemData {
    data.with_reaction(Arc::new(|x| {
        [[x[0], 2.0 * x[1]], [-2.0 * x[1], 1.0 + x[0] * x[1]]]
    }))
}

fn constant_flow(mesh: &Mesh, spaces: &Spaces) -> FieldState {
    project_velocity(mesh, spaces, &|_| [1.0, 0.3])
}

fn split(v: &FieldState) -> (FieldState, FieldState) {
    let mut mom = v.clone();
    mom.p.iter_mut().chain(&mut mom.pbar).for_each(|a| *a = 0.0);
    let mut mass = v.clone();
    mass.u
        .iter_mut()
        .chain(&mut mass.ubar)
        .for_each(|a| *a = 0.0);
    (mom, mass)
}

#[test]
fn steady_system_matches_direct_weak_form() {
    let mesh = perturbed_square(3, 3, 0.25, 7);
    let data = with_reaction(mixed_data());
    for k in 1..=3 {
        let spaces = Spaces::new(&mesh, k, k).unwrap();
        let config = oracle_config(0.07, k);
        for (adv, label) in [
            (constant_flow(&mesh, &spaces), "constant"),
            (random_state(&spaces, 99), "random"),
        ] {
            for seed in 0..3 {
                let x = random_state(&spaces, 10 + seed);
                let v = random_state(&spaces, 20 + seed);
                let t = 0.3;
                let got = assembled(
                    &mesh,
                    &spaces,
                    &config,
                    &data,
                    &adv,
                    Mode::Steady { t },
                    &x,
                    &v,
                );
                let wf = weak_form(&mesh, &spaces, &config, &data, &adv, &x, &v, t);
                let want = wf.bilinear - wf.load;
                let scale = wf.bilinear.abs().max(wf.load.abs()).max(1.0);
                assert!(
                    (got - want).abs() <= 1e-11 * scale,
                    "k={k} adv={label} seed={seed}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn stokes_system_matches_direct_weak_form() {
    let mesh = perturbed_square(2, 3, 0.2, 3);
    let data = enclosed_data();
    for k in 1..=4 {
        let spaces = Spaces::new(&mesh, k, k).unwrap();
        let config = ProblemConfig::new(1.3, k).stokes();
        let zero = spaces.zero_state();
        let x = random_state(&spaces, 1);
        let v = random_state(&spaces, 2);
        let got = assembled(
            &mesh,
            &spaces,
            &config,
            &data,
            &zero,
            Mode::Steady { t: 0.0 },
            &x,
            &v,
        );
        let wf = weak_form(&mesh, &spaces, &config, &data, &zero, &x, &v, 0.0);
        let want = wf.bilinear - wf.load;
        assert!(
            (got - want).abs() <= 1e-11 * wf.bilinear.abs().max(1.0),
            "k={k}: {got} vs {want}"
        );
    }
}

#[test]
fn transient_system_is_theta_scheme_of_steady_form() {
    let mesh = perturbed_square(3, 2, 0.25, 11);
    let data = with_reaction(mixed_data());
    for k in 1..=3 {
        let spaces = Spaces::new(&mesh, k, k).unwrap();
        for theta in [0.5, 0.7, 1.0] {
            let dt = 0.013;
            let config = oracle_config(0.05, k).with_dt(dt).with_theta(theta);
            let mut xn = random_state(&spaces, 5);
            xn.time = 0.4;
            let x = random_state(&spaces, 6);
            let v = random_state(&spaces, 7);
            let (vm, vq) = split(&v);
            let mode = Mode::Transient {
                state_n: &xn,
                t_n: xn.time,
            };
            let t = xn.time + theta * dt;

            let got = assembled(&mesh, &spaces, &config, &data, &xn, mode, &x, &vm);
            let wx = weak_form(&mesh, &spaces, &config, &data, &xn, &x, &vm, t);
            let wn = weak_form(&mesh, &spaces, &config, &data, &xn, &xn, &vm, t);
            let want = theta * wx.bilinear + wx.mass / dt
                - (wx.load + wn.mass / dt - (1.0 - theta) * wn.bilinear);
            let scale = wx.mass.abs().max(wn.mass.abs()) / dt + wx.bilinear.abs() + 1.0;
            assert!(
                (got - want).abs() <= 1e-11 * scale,
                "k={k} θ={theta}: momentum {got} vs {want}"
            );

            let got = assembled(&mesh, &spaces, &config, &data, &xn, mode, &x, &vq);
            let wq = weak_form(&mesh, &spaces, &config, &data, &xn, &x, &vq, t);
            assert!(
                (got - wq.bilinear).abs() <= 1e-11 * wq.bilinear.abs().max(1.0),
                "k={k} θ={theta}: mass {got} vs {}",
                wq.bilinear
            );
        }
    }
}

#[test]
fn constant_pressure_test_gives_outward_flux() {
    let mesh = perturbed_square(2, 2, 0.3, 4);
    let data = mixed_data();
    let k = 2;
    let spaces = Spaces::new(&mesh, k, k).unwrap();
    let config = ProblemConfig::new(0.1, k);
    let tables = ReferenceTables::for_config(&spaces, &config);
    let x = random_state(&spaces, 8);
    let adv = constant_flow(&mesh, &spaces);
    let frule = quadrature_rule(RefElement::Interval, 2 * k + 2).unwrap();
    let pu = 2 * spaces.nk();
    for c in 0..mesh.num_cells() {
        let ls = local_system(
            &mesh,
            &spaces,
            &tables,
            c,
            &adv,
            &config,
            &data,
            Mode::Steady { t: 0.0 },
        )
        .unwrap();
        let ax = ls.full_matrix() * local_vector(&mesh, &spaces, &x, c);
        let row_sum: f64 = (0..spaces.np()).map(|i| ax[pu + i]).sum();
        let geom = mesh.cell_geometry(c);
        let mut flux = 0.0;
        for cf in mesh.cell_facets(c) {
            let n = outward_normal(&mesh, c, cf.facet);
            for (sp, w) in frule.points.iter().zip(&frule.weights) {
                let xi = geom.inverse_map(mesh.facet_point(cf.facet, sp[0]));
                flux += w
                    * mesh.facet_length(cf.facet)
                    * dot(x.eval_velocity(&spaces, &geom, c, xi).0, n);
            }
        }
        assert!(
            (row_sum + flux).abs() < 1e-12,
            "cell {c}: {row_sum} vs {}",
            -flux
        );
    }
}

#[test]
fn facet_mass_rows_vanish_for_global_polynomial() {
    let mesh = perturbed_square(3, 3, 0.25, 12);
    let data = mixed_data();
    for k in 1..=3 {
        let spaces = Spaces::new(&mesh, k, k).unwrap();
        let config = ProblemConfig::new(0.1, k);
        let tables = ReferenceTables::for_config(&spaces, &config);
        let kk = k as i32;
        let state = project_velocity(&mesh, &spaces, &|x| {
            [
                x[0].powi(kk) + 2.0 * x[1] - 0.5,
                x[0] * x[1].powi(kk - 1) - x[1].powi(kk),
            ]
        });
        let adv = constant_flow(&mesh, &spaces);
        let mut rows = vec![0.0; spaces.n_facet_dofs()];
        for c in 0..mesh.num_cells() {
            let ls = local_system(
                &mesh,
                &spaces,
                &tables,
                c,
                &adv,
                &config,
                &data,
                Mode::Steady { t: 0.0 },
            )
            .unwrap();
            let ax = ls.full_matrix() * local_vector(&mesh, &spaces, &state, c);
            let nk = spaces.cell_block();
            for (j, d) in ls.facet_dofs(&spaces).into_iter().enumerate() {
                rows[d] += ax[nk + j];
            }
        }
        let fb = spaces.facet_block();
        let worst = (0..spaces.n_facet_dofs())
            .filter(|d| d % fb >= 2 * spaces.nkf())
            .map(|d| rows[d].abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "k={k}: facet mass residual {worst}");
    }
}
