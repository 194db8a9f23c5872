//! Static condensation, the global facet system, Picard iteration and the
//! θ-scheme time stepper.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

use crate::forms::{
    local_system, FormError, LocalSystem, Mode, ProblemConfig, ProblemData, ReferenceTables,
};
use crate::mesh::Mesh;
use crate::spaces::{
    apply_dirichlet, project_velocity, Constraints, FieldState, SpaceError, Spaces,
};

/// Smallest accepted ratio of pivot magnitudes in a cell block.
pub const PIVOT_RATIO_TOL: f64 = 1e-13;

/// Largest accepted relative residual of the global solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Relative residual at which refinement stops.
pub const REFINE_TOL: f64 = 1e-13;

/// Refinement sweeps allowed with a reused factorisation.
const REUSE_SWEEPS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("cell {cell}: local block is singular or ill-conditioned (pivot ratio {ratio:.3e}); is the penalty large enough?")]
    SingularCell { cell: usize, ratio: f64 },
    #[error("pressure is only defined up to a constant: all boundaries are Dirichlet and no pressure dof is pinned")]
    Gauge,
    #[error("global facet system is singular (relative residual {residual:.3e})")]
    SingularSystem { residual: f64 },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error(
        "Picard iteration did not converge in {iterations} iterations (last increments {tail:?})"
    )]
    NoConvergence {
        iterations: usize,
        tail: Vec<f64>,
        history: Vec<f64>,
    },
}

/// Schur complement of one cell and the data to recover its cell unknowns.
#[derive(Debug, Clone)]
pub struct CondensedBlock {
    pub cell: usize,
    pub facet_dofs: Vec<usize>,
    /// `A_FF − A_FK A_KK⁻¹ A_KF`
    pub s: DMatrix<f64>,
    /// `b_F − A_FK A_KK⁻¹ b_K`
    pub g: DVector<f64>,
    /// `A_KK⁻¹ A_KF`
    x: DMatrix<f64>,
    /// `A_KK⁻¹ b_K`
    y: DVector<f64>,
}

impl CondensedBlock {
    /// Cell unknowns from the local facet unknowns.
    pub fn recover(&self, xf: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * xf
    }
}

/// Eliminate the cell unknowns of `local`.
pub fn condense(local: &LocalSystem, spaces: &Spaces) -> Result<CondensedBlock, SolverError> {
    let lu = local.a_kk.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let max = diag.amax();
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio > PIVOT_RATIO_TOL) {
        return Err(SolverError::SingularCell {
            cell: local.cell,
            ratio,
        });
    }
    let x = lu.solve(&local.a_kf).expect("invertibility checked");
    let y = lu.solve(&local.b_k).expect("invertibility checked");
    let s = &local.a_ff - &local.a_fk * &x;
    let g = &local.b_f - &local.a_fk * &y;
    Ok(CondensedBlock {
        cell: local.cell,
        facet_dofs: local.facet_dofs(spaces),
        s,
        g,
        x,
        y,
    })
}

/// Recover the full state from condensed blocks and the facet solution.
pub fn back_substitute(
    spaces: &Spaces,
    blocks: &[CondensedBlock],
    facet_solution: &[f64],
    time: f64,
) -> FieldState {
    let mut state = spaces.zero_state();
    state.set_facet_vector(spaces, facet_solution);
    for b in blocks {
        let xf = DVector::from_iterator(
            b.facet_dofs.len(),
            b.facet_dofs.iter().map(|&d| facet_solution[d]),
        );
        let xk = b.recover(&xf);
        state.set_cell_vector(spaces, b.cell, xk.as_slice());
    }
    state.time = time;
    state
}

const FIXED: u32 = u32::MAX;

mod multifrontal;

/// LU factors of the condensed system.
enum Factor {
    /// Multifrontal LU in a symmetric fill-reducing order.
    Frontal(Arc<multifrontal::Symbolic>, multifrontal::Factor),
    /// General sparse LU, used when a front meets a zero pivot.
    General(Lu<usize, f64>),
}

impl Factor {
    fn solve_in_place(&self, rhs: &mut [f64]) {
        match self {
            Factor::Frontal(sym, f) => f.solve_in_place(sym, rhs),
            Factor::General(lu) => {
                let mut d = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                lu.solve_in_place(d.as_mut());
                for (i, v) in rhs.iter_mut().enumerate() {
                    *v = d[(i, 0)];
                }
            }
        }
    }
}

/// Sparsity pattern of the condensed system over unconstrained facet dofs,
/// with a cached symbolic factorisation.
pub struct FacetSystem {
    n_dofs: usize,
    /// Free-dof index of each facet dof, `FIXED` when constrained.
    map: Vec<u32>,
    n_free: usize,
    symbolic: SymbolicSparseColMat<usize>,
    /// Per cell, value slot of each local `(i, j)` pair (row-major), or `FIXED`.
    scatter: Vec<Vec<u32>>,
    frontal: Option<Arc<multifrontal::Symbolic>>,
    /// Last numeric factorisation, reused as a preconditioner for refinement.
    numeric_lu: Option<Factor>,
    /// Free-dof solution of the previous solve, the starting guess for reuse.
    last_x: Vec<f64>,
    /// Try the previous factorisation before refactoring.
    pub reuse_factorization: bool,
    needs_gauge: bool,
}

impl FacetSystem {
    pub fn new(mesh: &Mesh, spaces: &Spaces, constraints: &Constraints) -> Self {
        let n_dofs = spaces.n_facet_dofs();
        let mut map = vec![FIXED; n_dofs];
        let mut n_free = 0usize;
        for (d, m) in map.iter_mut().enumerate() {
            if !constraints.is_constrained(spaces, d) {
                *m = n_free as u32;
                n_free += 1;
            }
        }
        let fb = spaces.facet_block();
        let local_dofs = |cell: usize| -> Vec<usize> {
            mesh.cell_facets(cell)
                .iter()
                .flat_map(|cf| (0..fb).map(move |j| spaces.facet_offset(cf.facet) + j))
                .collect()
        };
        // column-wise row sets
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n_free];
        for cell in 0..mesh.num_cells() {
            let dofs = local_dofs(cell);
            for &dj in &dofs {
                let cj = map[dj];
                if cj == FIXED {
                    continue;
                }
                for &di in &dofs {
                    let ri = map[di];
                    if ri != FIXED {
                        cols[cj as usize].push(ri as usize);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n_free + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in cols.iter_mut() {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let scatter = (0..mesh.num_cells())
            .map(|cell| {
                let dofs = local_dofs(cell);
                let mut s = Vec::with_capacity(dofs.len() * dofs.len());
                for &di in &dofs {
                    for &dj in &dofs {
                        let (ri, cj) = (map[di], map[dj]);
                        if ri == FIXED || cj == FIXED {
                            s.push(FIXED);
                            continue;
                        }
                        let (lo, hi) = (col_ptr[cj as usize], col_ptr[cj as usize + 1]);
                        let pos = row_idx[lo..hi]
                            .binary_search(&(ri as usize))
                            .expect("pattern contains every local pair");
                        s.push((lo + pos) as u32);
                    }
                }
                s
            })
            .collect();
        let symbolic = SymbolicSparseColMat::new_checked(n_free, n_free, col_ptr, None, row_idx);
        let needs_gauge = mesh
            .boundary_facets()
            .all(|f| constraints.is_dirichlet_facet(f));
        Self {
            n_dofs,
            map,
            n_free,
            symbolic,
            scatter,
            frontal: None,
            numeric_lu: None,
            last_x: Vec::new(),
            reuse_factorization: true,
            needs_gauge,
        }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn nnz(&self) -> usize {
        self.symbolic.row_idx().len()
    }

    /// Assemble the condensed blocks (constraints eliminated) into values and rhs.
    fn assemble(
        &self,
        blocks: &[CondensedBlock],
        constraints: &Constraints,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut vals = vec![0.0; self.nnz()];
        let mut rhs = vec![0.0; self.n_free];
        for b in blocks {
            let nf = b.facet_dofs.len();
            let scatter = &self.scatter[b.cell];
            for (i, &di) in b.facet_dofs.iter().enumerate() {
                let ri = self.map[di];
                if ri == FIXED {
                    continue;
                }
                let ri = ri as usize;
                rhs[ri] += b.g[i];
                for (j, &dj) in b.facet_dofs.iter().enumerate() {
                    let slot = scatter[i * nf + j];
                    if slot == FIXED {
                        rhs[ri] -= b.s[(i, j)] * constraints.value(dj);
                    } else {
                        vals[slot as usize] += b.s[(i, j)];
                    }
                }
            }
        }
        (vals, rhs)
    }

    fn matvec(&self, vals: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_free];
        let cp = self.symbolic.col_ptr();
        let ri = self.symbolic.row_idx();
        for c in 0..self.n_free {
            let xc = x[c];
            for p in cp[c]..cp[c + 1] {
                y[ri[p]] += vals[p] * xc;
            }
        }
        y
    }

    /// Solve the condensed system; returns the full facet vector with
    /// constrained dofs set to their prescribed values.
    pub fn solve(
        &mut self,
        blocks: &[CondensedBlock],
        constraints: &Constraints,
    ) -> Result<Vec<f64>, SolverError> {
        if self.needs_gauge && constraints.pinned().is_none() {
            return Err(SolverError::Gauge);
        }
        let (vals, rhs) = self.assemble(blocks, constraints);
        let mut x = vec![0.0; self.n_free];
        if self.n_free > 0 {
            let bnorm = norm(&rhs).max(f64::MIN_POSITIVE);
            let reused = match (&self.numeric_lu, self.reuse_factorization) {
                (Some(lu), true) => {
                    x.copy_from_slice(&self.last_x);
                    self.refine(lu, &vals, &rhs, &mut x, bnorm, REUSE_SWEEPS) <= REFINE_TOL
                }
                _ => false,
            };
            if !reused {
                if self.frontal.is_none() {
                    self.frontal = Some(Arc::new(
                        multifrontal::Symbolic::new(&self.symbolic)
                            .map_err(SolverError::Factorization)?,
                    ));
                }
                let sym = self.frontal.clone().expect("set above");
                self.numeric_lu = None;
                let mut lu =
                    multifrontal::Factor::new(&sym, &vals).map(|f| Factor::Frontal(sym, f));
                let mut res = f64::NAN;
                if let Ok(f) = &lu {
                    x.fill(0.0);
                    // one solve plus at most two refinement sweeps
                    res = self.refine(f, &vals, &rhs, &mut x, bnorm, 3);
                }
                if !(res <= RESIDUAL_TOL) || x.iter().any(|v| !v.is_finite()) {
                    let mat = SparseColMatRef::new(self.symbolic.as_ref(), &vals);
                    let general = SymbolicLu::try_new(self.symbolic.as_ref())
                        .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
                    let general = Lu::try_new_with_symbolic(general, mat)
                        .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
                    let f = Factor::General(general);
                    x.fill(0.0);
                    res = self.refine(&f, &vals, &rhs, &mut x, bnorm, 3);
                    lu = Ok(f);
                }
                if !(res <= RESIDUAL_TOL) || x.iter().any(|v| !v.is_finite()) {
                    return Err(SolverError::SingularSystem { residual: res });
                }
                let lu = lu.expect("a factorization succeeded");
                self.numeric_lu = Some(lu);
            }
            self.last_x.clone_from(&x);
        }
        let mut full = vec![0.0; self.n_dofs];
        for (d, v) in full.iter_mut().enumerate() {
            let m = self.map[d];
            *v = if m == FIXED {
                constraints.value(d)
            } else {
                x[m as usize]
            };
        }
        Ok(full)
    }

    /// Iterative refinement `x ← x + LU⁻¹(g − S x)`; stops at `REFINE_TOL`, after
    /// `sweeps` sweeps, or when the residual stops contracting. Returns the
    /// relative residual.
    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        lu: &Factor,
        vals: &[f64],
        rhs: &[f64],
        x: &mut [f64],
        bnorm: f64,
        sweeps: usize,
    ) -> f64 {
        let ax = self.matvec(vals, x);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut res = norm(&r) / bnorm;
        for _ in 0..sweeps {
            if res <= REFINE_TOL {
                break;
            }
            let mut d = r.clone();
            lu.solve_in_place(&mut d);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
            let ax = self.matvec(vals, x);
            r = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let next = norm(&r) / bnorm;
            let stalled = !(next <= 0.5 * res);
            res = next;
            if !res.is_finite() || stalled {
                break;
            }
        }
        res
    }

    /// Relative residual `‖S x − g‖ / ‖g‖` of the condensed system at a full facet vector.
    pub fn residual(
        &self,
        blocks: &[CondensedBlock],
        constraints: &Constraints,
        full: &[f64],
    ) -> f64 {
        let (vals, rhs) = self.assemble(blocks, constraints);
        let x: Vec<f64> = (0..self.n_dofs)
            .filter(|&d| self.map[d] != FIXED)
            .map(|d| full[d])
            .collect();
        let ax = self.matvec(&vals, &x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        norm(&r) / norm(&rhs).max(f64::MIN_POSITIVE)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Assemble the condensed blocks, apply constraints and solve.
pub fn assemble_and_solve(
    system: &mut FacetSystem,
    blocks: &[CondensedBlock],
    constraints: &Constraints,
) -> Result<Vec<f64>, SolverError> {
    system.solve(blocks, constraints)
}

/// Initial state for transient runs.
#[derive(Clone)]
pub enum InitialCondition {
    Zero,
    /// L2 projection of a velocity field; pressures zero.
    Velocity(Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>),
    /// Steady Stokes solution with the data at the initial time.
    Stokes,
    /// Steady Stokes solution with the given forcing in place of the case forcing.
    StokesForced(crate::forms::VectorField),
}

impl std::fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitialCondition::Zero => "Zero",
            InitialCondition::Velocity(_) => "Velocity",
            InitialCondition::Stokes => "Stokes",
            InitialCondition::StokesForced(_) => "StokesForced",
        })
    }
}

/// Stopping rule for the steady fixed-point iteration.
#[derive(Clone)]
pub enum StopRule {
    /// Relative change of the facet solution.
    Increment(f64),
    /// `|e_{i+1} − e_i| / (e_{i+1} + e_i) ≤ tol` on a supplied error functional.
    ErrorStagnation {
        tol: f64,
        error: Arc<dyn Fn(&FieldState) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for StopRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopRule::Increment(t) => write!(f, "Increment({t})"),
            StopRule::ErrorStagnation { tol, .. } => write!(f, "ErrorStagnation({tol})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardOptions {
    pub stop: StopRule,
    pub max_iterations: usize,
    /// Relaxation factor ω in `x ← ω x_new + (1 − ω) x_old`.
    pub relaxation: f64,
    /// Start from a Stokes solve instead of zero.
    pub stokes_start: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            stop: StopRule::Increment(1e-10),
            max_iterations: 100,
            relaxation: 1.0,
            stokes_start: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub state: FieldState,
    /// Frozen advective state used for the final linear solve.
    pub adv: FieldState,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// A discretised problem with cached tables, constraints and sparsity.
pub struct Solver<'m> {
    mesh: &'m Mesh,
    spaces: &'m Spaces,
    config: ProblemConfig,
    data: ProblemData,
    tables: ReferenceTables,
    constraints: Constraints,
    system: FacetSystem,
    /// `∫_K ψ_c` for each pressure basis function on the reference cell.
    pressure_moments: Vec<f64>,
    last_residual: f64,
}

impl<'m> Solver<'m> {
    /// Build a solver; pins a facet pressure when every boundary is Dirichlet.
    pub fn new(
        mesh: &'m Mesh,
        spaces: &'m Spaces,
        config: ProblemConfig,
        data: ProblemData,
    ) -> Result<Self, SolverError> {
        data.validate(mesh)?;
        let pin = mesh
            .boundary_facets()
            .all(|f| data.condition(mesh, f).is_some_and(|c| c.is_dirichlet()));
        let constraints = Constraints::new(mesh, spaces, &data.dirichlet_tags(), pin)?;
        Self::with_constraints(mesh, spaces, config, data, constraints)
    }

    /// Build a solver with explicit constraints (used to exercise the gauge checks).
    pub fn with_constraints(
        mesh: &'m Mesh,
        spaces: &'m Spaces,
        config: ProblemConfig,
        data: ProblemData,
        constraints: Constraints,
    ) -> Result<Self, SolverError> {
        config.validate(false)?;
        let tables = ReferenceTables::for_config(spaces, &config);
        let system = FacetSystem::new(mesh, spaces, &constraints);
        let pressure_moments = (0..spaces.np())
            .map(|c| {
                tables
                    .cell_rule
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(q, w)| w * tables.pressure.value(q, c))
                    .sum()
            })
            .collect();
        Ok(Self {
            mesh,
            spaces,
            config,
            data,
            tables,
            constraints,
            system,
            pressure_moments,
            last_residual: 0.0,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn spaces(&self) -> &Spaces {
        self.spaces
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut ProblemConfig {
        &mut self.config
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn tables(&self) -> &ReferenceTables {
        &self.tables
    }

    pub fn facet_system(&self) -> &FacetSystem {
        &self.system
    }

    /// Relative residual of the condensed system at the last solve.
    pub fn last_residual(&self) -> f64 {
        self.last_residual
    }

    /// Set Dirichlet values from the data at time `t`.
    pub fn set_boundary_time(&mut self, t: f64) {
        let data = &self.data;
        apply_dirichlet(
            self.mesh,
            self.spaces,
            &mut self.constraints,
            &|tag, x, t| data.dirichlet_value(tag, x, t),
            t,
        );
    }

    /// Local systems of every cell, in cell order.
    pub fn local_systems(
        &self,
        adv: &FieldState,
        mode: Mode<'_>,
    ) -> Result<Vec<LocalSystem>, SolverError> {
        (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|c| {
                local_system(
                    self.mesh,
                    self.spaces,
                    &self.tables,
                    c,
                    adv,
                    &self.config,
                    &self.data,
                    mode,
                )
                .map_err(SolverError::from)
            })
            .collect()
    }

    /// Condensed blocks of every cell, in cell order.
    pub fn condensed_blocks(
        &self,
        adv: &FieldState,
        mode: Mode<'_>,
    ) -> Result<Vec<CondensedBlock>, SolverError> {
        (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|c| {
                let ls = local_system(
                    self.mesh,
                    self.spaces,
                    &self.tables,
                    c,
                    adv,
                    &self.config,
                    &self.data,
                    mode,
                )?;
                condense(&ls, self.spaces)
            })
            .collect()
    }

    /// One linear solve with boundary values already set. The pressure is
    /// shifted to zero mean when it was pinned.
    pub fn solve_linear(
        &mut self,
        adv: &FieldState,
        mode: Mode<'_>,
        time: f64,
    ) -> Result<FieldState, SolverError> {
        let blocks = self.condensed_blocks(adv, mode)?;
        let x = self.system.solve(&blocks, &self.constraints)?;
        self.last_residual = self.system.residual(&blocks, &self.constraints, &x);
        let mut state = back_substitute(self.spaces, &blocks, &x, time);
        if self.constraints.pinned().is_some() {
            let m = self.pressure_mean(&state);
            state.shift_pressure(-m);
        }
        if !state.all_finite() {
            return Err(SolverError::SingularSystem { residual: f64::NAN });
        }
        Ok(state)
    }

    /// Mean of the cell pressure over the domain.
    pub fn pressure_mean(&self, state: &FieldState) -> f64 {
        let mut integral = 0.0;
        let mut area = 0.0;
        for c in 0..self.mesh.num_cells() {
            let det = self.mesh.cell_geometry(c).det;
            let p = state.cell_p(self.spaces, c);
            integral += det
                * p.iter()
                    .zip(&self.pressure_moments)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            area += 0.5 * det;
        }
        integral / area
    }

    /// Steady Stokes solve (advection off) with data at time `t`.
    pub fn solve_stokes(&mut self, t: f64) -> Result<FieldState, SolverError> {
        let saved = self.config.advection;
        self.config.advection = false;
        self.set_boundary_time(t);
        let zero = self.spaces.zero_state();
        let r = self.solve_linear(&zero, Mode::Steady { t }, t);
        self.config.advection = saved;
        r
    }

    /// Steady fixed-point iteration `σ_a ≈ u_new ⊗ u_old` with data at time `t`.
    pub fn picard(&mut self, options: &PicardOptions, t: f64) -> Result<PicardResult, SolverError> {
        self.set_boundary_time(t);
        let mut adv = if options.stokes_start && self.config.advection {
            self.solve_stokes(t)?
        } else {
            let mut z = self.spaces.zero_state();
            z.time = t;
            z
        };
        let mut history = Vec::new();
        let mut prev_err: Option<f64> = None;
        for it in 1..=options.max_iterations {
            let mut state = self.solve_linear(&adv, Mode::Steady { t }, t)?;
            if options.relaxation != 1.0 && it > 1 {
                relax(&mut state, &adv, options.relaxation);
            }
            if !self.config.advection {
                history.push(0.0);
                return Ok(PicardResult {
                    state,
                    adv,
                    iterations: it,
                    history,
                });
            }
            let xn = state.facet_vector(self.spaces);
            let xo = adv.facet_vector(self.spaces);
            let diff: Vec<f64> = xn.iter().zip(&xo).map(|(a, b)| a - b).collect();
            let inc = norm(&diff) / norm(&xn).max(f64::MIN_POSITIVE);
            let done = match &options.stop {
                StopRule::Increment(tol) => {
                    history.push(inc);
                    inc <= *tol
                }
                StopRule::ErrorStagnation { tol, error } => {
                    let e = error(&state);
                    let crit = prev_err.map(|p| (e - p).abs() / (e + p).max(f64::MIN_POSITIVE));
                    prev_err = Some(e);
                    history.push(crit.unwrap_or(f64::INFINITY));
                    crit.is_some_and(|c| c <= *tol) || inc == 0.0
                }
            };
            if done {
                return Ok(PicardResult {
                    state,
                    adv,
                    iterations: it,
                    history,
                });
            }
            adv = state;
        }
        let tail = history.iter().rev().take(5).rev().copied().collect();
        Err(SolverError::NoConvergence {
            iterations: options.max_iterations,
            tail,
            history,
        })
    }

    /// One θ-step from `state_n`: data at `t_n + θΔt`, Dirichlet values at `t_n + Δt`.
    pub fn theta_step(&mut self, state_n: &FieldState) -> Result<FieldState, SolverError> {
        self.config.validate(true)?;
        let t_n = state_n.time;
        let t_np1 = t_n + self.config.dt;
        self.set_boundary_time(t_np1);
        self.solve_linear(state_n, Mode::Transient { state_n, t_n }, t_np1)
    }

    /// Initial state at time `t0`.
    pub fn initial_condition(
        &mut self,
        ic: &InitialCondition,
        t0: f64,
    ) -> Result<FieldState, SolverError> {
        let mut state = match ic {
            InitialCondition::Zero => self.spaces.zero_state(),
            InitialCondition::Velocity(u0) => project_velocity(self.mesh, self.spaces, &|x| u0(x)),
            InitialCondition::Stokes => self.solve_stokes(t0)?,
            InitialCondition::StokesForced(f) => {
                let saved = std::mem::replace(&mut self.data.forcing, f.clone());
                let r = self.solve_stokes(t0);
                self.data.forcing = saved;
                r?
            }
        };
        state.time = t0;
        Ok(state)
    }
}

fn relax(state: &mut FieldState, old: &FieldState, w: f64) {
    let mix = |a: &mut Vec<f64>, b: &Vec<f64>| {
        for (x, y) in a.iter_mut().zip(b) {
            *x = w * *x + (1.0 - w) * y;
        }
    };
    mix(&mut state.u, &old.u);
    mix(&mut state.p, &old.p);
    mix(&mut state.ubar, &old.ubar);
    mix(&mut state.pbar, &old.pbar);
}

/// Steady solve of `data` on `mesh` with the given options.
pub fn picard_solve(
    mesh: &Mesh,
    spaces: &Spaces,
    config: &ProblemConfig,
    data: &ProblemData,
    options: &PicardOptions,
) -> Result<PicardResult, SolverError> {
    let mut solver = Solver::new(mesh, spaces, config.clone(), data.clone())?;
    solver.picard(options, 0.0)
}
