#![allow(dead_code)]

use std::sync::Arc;

use hdgflow::forms::{BoundaryCondition, Mode, ProblemData};
use hdgflow::mesh::{generate_rect_mesh, Mesh};
use hdgflow::solver::Solver;
use hdgflow::spaces::{FieldState, Spaces};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Unit square with interior vertices moved randomly, boundary tagged by side.
pub fn perturbed_square(nx: usize, ny: usize, amp: f64, seed: u64) -> Mesh {
    let base = generate_rect_mesh(nx, ny, [0.0, 0.0, 1.0, 1.0]).unwrap();
    let mut r = rng(seed);
    let hx = 1.0 / nx as f64;
    let hy = 1.0 / ny as f64;
    let verts = base
        .vertices()
        .iter()
        .map(|&[x, y]| {
            let inner = x > 1e-12 && x < 1.0 - 1e-12 && y > 1e-12 && y < 1.0 - 1e-12;
            if inner {
                [
                    x + amp * hx * r.random_range(-1.0..1.0),
                    y + amp * hy * r.random_range(-1.0..1.0),
                ]
            } else {
                [x, y]
            }
        })
        .collect();
    let mut m = Mesh::new(verts, base.cells().to_vec()).unwrap();
    m.tag_boundary_where("left", |p| p[0] < 1e-12);
    m.tag_boundary_where("right", |p| p[0] > 1.0 - 1e-12);
    m.tag_boundary_where("bottom", |p| p[1] < 1e-12);
    m.tag_boundary_where("top", |p| p[1] > 1.0 - 1e-12);
    m
}

pub fn random_state(spaces: &Spaces, seed: u64) -> FieldState {
    let mut r = rng(seed);
    let mut s = spaces.zero_state();
    for v in
        s.u.iter_mut()
            .chain(&mut s.p)
            .chain(&mut s.ubar)
            .chain(&mut s.pbar)
    {
        *v = r.random_range(-1.0..1.0);
    }
    s
}

/// Dirichlet on left, bottom and top, traction on the right.
pub fn mixed_data() -> ProblemData {
    let g: hdgflow::forms::VectorField =
        Arc::new(|x, t| [1.0 + x[1] * (1.0 - x[1]) + t, 0.2 * x[0]]);
    ProblemData::new(Arc::new(|x, t| [x[0] - x[0] * x[1] + t, x[0] * x[1]]))
        .with_boundary("left", BoundaryCondition::Dirichlet(g.clone()))
        .with_boundary("bottom", BoundaryCondition::Dirichlet(g.clone()))
        .with_boundary("top", BoundaryCondition::Dirichlet(g))
        .with_boundary(
            "right",
            BoundaryCondition::Neumann(Arc::new(|x, t| [x[0] + x[1], x[1] * x[1] - t])),
        )
}

/// Dirichlet everywhere, so the pressure is fixed only up to a constant.
pub fn enclosed_data() -> ProblemData {
    let g: hdgflow::forms::VectorField = Arc::new(|x, _| [x[1] * (1.0 - x[1]), x[0] * x[0]]);
    let mut d = ProblemData::new(Arc::new(|x, _| [1.0 - x[1] * x[1], x[0] - x[1]]));
    for t in ["left", "right", "bottom", "top"] {
        d = d.with_boundary(t, BoundaryCondition::Dirichlet(g.clone()));
    }
    d
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Assemble every unknown, impose the solver's constraints as identity rows
/// and solve densely.
pub fn monolithic(solver: &Solver<'_>, adv: &FieldState, mode: Mode<'_>, time: f64) -> FieldState {
    let spaces = solver.spaces();
    let nc = spaces.n_cell_dofs();
    let n = nc + spaces.n_facet_dofs();
    let cb = spaces.cell_block();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for ls in solver.local_systems(adv, mode).unwrap() {
        let idx: Vec<usize> = (0..cb)
            .map(|i| ls.cell * cb + i)
            .chain(ls.facet_dofs(spaces).into_iter().map(|d| nc + d))
            .collect();
        let m = ls.full_matrix();
        let r = ls.full_rhs();
        for (i, &gi) in idx.iter().enumerate() {
            b[gi] += r[i];
            for (j, &gj) in idx.iter().enumerate() {
                a[(gi, gj)] += m[(i, j)];
            }
        }
    }
    let cons = solver.constraints();
    for d in cons.constrained_dofs(spaces) {
        let row = nc + d;
        a.row_mut(row).fill(0.0);
        a[(row, row)] = 1.0;
        b[row] = cons.value(d);
    }
    let x = a.lu().solve(&b).expect("monolithic system is nonsingular");
    let mut state = spaces.zero_state();
    for c in 0..solver.mesh().num_cells() {
        state.set_cell_vector(spaces, c, x.rows(c * cb, cb).as_slice());
    }
    state.set_facet_vector(spaces, x.rows(nc, spaces.n_facet_dofs()).as_slice());
    state.time = time;
    if cons.pinned().is_some() {
        let m = solver.pressure_mean(&state);
        state.shift_pressure(-m);
    }
    state
}

/// All coefficients of a state in one vector.
pub fn flat(s: &FieldState) -> Vec<f64> {
    s.u.iter()
        .chain(&s.p)
        .chain(&s.ubar)
        .chain(&s.pbar)
        .copied()
        .collect()
}
