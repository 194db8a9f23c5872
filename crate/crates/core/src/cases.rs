//! Benchmark definitions, convergence studies, transient runs, the invariant
//! audit and CSV output.

use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    divergence_and_jump, drag_lift, energy_dissipation, energy_identity_defect, error_norms,
    kinetic_energy, momentum_residual, velocity_scale, Balance, DiagnosticsError, ErrorReport,
};
use crate::forms::{
    zero_field, BoundaryCondition, ProblemConfig, ProblemData, Tensor2, VectorField,
};
use crate::mesh::{generate_rect_mesh, import_gmsh, read_gmsh, Mesh, MeshError};
use crate::solver::{InitialCondition, PicardOptions, PicardResult, Solver, SolverError, StopRule};
use crate::spaces::{build_spaces, FieldState, SpaceError, Spaces};

/// Channel mesh with tags `inflow`, `outflow`, `wall`, `obstacle`.
pub const CYLINDER_MESH: &str = include_str!("../data/cylinder2d.msh");

const RECT_TAGS: [&str; 4] = ["left", "right", "bottom", "top"];

#[derive(Debug, Error)]
pub enum CaseError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("configuration: {0}")]
    Config(String),
}

impl CaseError {
    /// True for errors caused by the input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        match self {
            CaseError::Config(_) | CaseError::Mesh(_) | CaseError::Space(_) | CaseError::Io(_) => {
                true
            }
            CaseError::Solver(SolverError::Form(crate::forms::FormError::InvalidConfig(_)))
            | CaseError::Solver(SolverError::Form(crate::forms::FormError::MissingBoundary {
                ..
            }))
            | CaseError::Solver(SolverError::Space(_))
            | CaseError::Diagnostics(_) => true,
            _ => false,
        }
    }
}

pub type ScalarField = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;
pub type GradientField = Arc<dyn Fn([f64; 2], f64) -> Tensor2 + Send + Sync>;

/// Exact velocity, velocity gradient `(∂_j u_i)` and mean-zero pressure.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: VectorField,
    pub grad_u: GradientField,
    pub p: ScalarField,
}

#[derive(Debug, Clone)]
pub enum Domain {
    /// `[x0, y0, x1, y1]`, tagged `left`, `right`, `bottom`, `top`.
    Rect([f64; 4]),
    /// ASCII MSH 2.2 text.
    Gmsh(Arc<str>),
}

#[derive(Debug, Clone)]
pub struct TransientSettings {
    pub dt: f64,
    pub t_end: f64,
    pub theta: f64,
    pub initial: InitialCondition,
}

#[derive(Debug, Clone)]
pub struct DragSettings {
    pub tag: String,
    pub radius: f64,
}

#[derive(Clone)]
pub struct CaseDefinition {
    pub name: String,
    pub domain: Domain,
    pub data: ProblemData,
    pub exact: Option<ExactSolution>,
    pub nu: f64,
    pub transient: Option<TransientSettings>,
    pub drag: Option<DragSettings>,
    /// Cell counts of the default refinement sequence.
    pub levels: Vec<usize>,
    /// Cell count of a single run.
    pub cells: usize,
}

impl std::fmt::Debug for CaseDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaseDefinition")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("nu", &self.nu)
            .field("transient", &self.transient)
            .field("levels", &self.levels)
            .finish()
    }
}

/// `(nx, ny)` with `2 nx ny = cells` and `nx/ny` closest to `width/height`;
/// ties go to the larger `ny`.
pub fn rect_dims_for_cells(
    cells: usize,
    width: f64,
    height: f64,
) -> Result<(usize, usize), CaseError> {
    if cells == 0 || cells % 2 != 0 {
        return Err(CaseError::Config(format!(
            "a structured triangle mesh needs an even, positive cell count (got {cells})"
        )));
    }
    let n = cells / 2;
    let target = (width / height).ln();
    let mut best: Option<(f64, usize, usize)> = None;
    for nx in 1..=n {
        if n % nx != 0 {
            continue;
        }
        let ny = n / nx;
        let d = ((nx as f64 / ny as f64).ln() - target).abs();
        if best.is_none_or(|(bd, _, _)| d < bd - 1e-12) {
            best = Some((d, nx, ny));
        }
    }
    let (_, nx, ny) = best.expect("n >= 1 has the factor pair (n, 1)");
    Ok((nx, ny))
}

fn all_dirichlet(g: VectorField) -> ProblemData {
    RECT_TAGS
        .iter()
        .fold(ProblemData::new(zero_field()), |d, t| {
            d.with_boundary(t, BoundaryCondition::Dirichlet(g.clone()))
        })
}

impl CaseDefinition {
    pub fn is_transient(&self) -> bool {
        self.transient.is_some()
    }

    /// Mesh with `cells` cells for rectangles; gmsh domains ignore `cells`.
    pub fn mesh(&self, cells: Option<usize>) -> Result<Mesh, CaseError> {
        match &self.domain {
            Domain::Rect(b) => {
                let (nx, ny) =
                    rect_dims_for_cells(cells.unwrap_or(self.cells), b[2] - b[0], b[3] - b[1])?;
                Ok(generate_rect_mesh(nx, ny, *b)?)
            }
            Domain::Gmsh(text) => Ok(import_gmsh(text)?),
        }
    }

    /// Replace the domain by a mesh file.
    pub fn with_mesh_file(mut self, path: &std::path::Path) -> Result<Self, CaseError> {
        let text = std::fs::read_to_string(path)?;
        read_gmsh(path)?;
        self.domain = Domain::Gmsh(text.into());
        Ok(self)
    }

    /// Same case with homogeneous Dirichlet data on every tag of `mesh`, no
    /// forcing and no reaction.
    pub fn homogeneous(&self, mesh: &Mesh) -> ProblemData {
        mesh.tag_names()
            .iter()
            .fold(ProblemData::new(zero_field()), |d, t| {
                d.with_boundary(t, BoundaryCondition::Dirichlet(zero_field()))
            })
    }
}

/// Kovasznay flow at Reynolds number `re` on `(−0.5, 1) × (−0.5, 1.5)`.
pub fn kovasznay(re: f64) -> CaseDefinition {
    let lam = kovasznay_lambda(re);
    let mean = 0.5 - ((2.0 * lam).exp() - (-lam).exp()) / (6.0 * lam);
    let u: VectorField = Arc::new(move |x, _| {
        let e = (lam * x[0]).exp();
        [
            1.0 - e * (2.0 * PI * x[1]).cos(),
            lam / (2.0 * PI) * e * (2.0 * PI * x[1]).sin(),
        ]
    });
    let grad_u: GradientField = Arc::new(move |x, _| {
        let e = (lam * x[0]).exp();
        let (s, c) = (2.0 * PI * x[1]).sin_cos();
        [
            [-lam * e * c, 2.0 * PI * e * s],
            [lam * lam / (2.0 * PI) * e * s, lam * e * c],
        ]
    });
    let p: ScalarField = Arc::new(move |x, _| 0.5 * (1.0 - (2.0 * lam * x[0]).exp()) - mean);
    CaseDefinition {
        name: "kovasznay".into(),
        domain: Domain::Rect([-0.5, -0.5, 1.0, 1.5]),
        data: all_dirichlet(u.clone()),
        exact: Some(ExactSolution { u, grad_u, p }),
        nu: 1.0 / re,
        transient: None,
        drag: None,
        levels: vec![64, 256, 1024, 4096],
        cells: 1024,
    }
}

/// `Re/2 − (Re²/4 + 4π²)^{1/2}`.
pub fn kovasznay_lambda(re: f64) -> f64 {
    re / 2.0 - (re * re / 4.0 + 4.0 * PI * PI).sqrt()
}

/// Uniform flow balanced by a position-dependent Coriolis force on the unit square.
pub fn coriolis(nu: f64) -> CaseDefinition {
    let u: VectorField = Arc::new(|_, _| [1.0, 0.0]);
    let grad_u: GradientField = Arc::new(|_, _| [[0.0; 2]; 2]);
    let p: ScalarField = Arc::new(|x, _| x[1] * x[1] - 1.0 / 3.0);
    let data = all_dirichlet(u.clone())
        .with_reaction(Arc::new(|x| [[0.0, 2.0 * x[1]], [-2.0 * x[1], 0.0]]));
    CaseDefinition {
        name: "coriolis".into(),
        domain: Domain::Rect([0.0, 0.0, 1.0, 1.0]),
        data,
        exact: Some(ExactSolution { u, grad_u, p }),
        nu,
        transient: None,
        drag: None,
        levels: vec![64, 256, 1024, 4096],
        cells: 1024,
    }
}

// Lederer forcing: (i, j, c) stands for c x^i y^j.
const ADVECTION_X: [(i32, i32, f64); 25] = [
    (3, 2, 4.0),
    (3, 3, -16.0),
    (3, 4, 28.0),
    (3, 5, -24.0),
    (3, 6, 8.0),
    (4, 2, -20.0),
    (4, 3, 80.0),
    (4, 4, -140.0),
    (4, 5, 120.0),
    (4, 6, -40.0),
    (5, 2, 36.0),
    (5, 3, -144.0),
    (5, 4, 252.0),
    (5, 5, -216.0),
    (5, 6, 72.0),
    (6, 2, -28.0),
    (6, 3, 112.0),
    (6, 4, -196.0),
    (6, 5, 168.0),
    (6, 6, -56.0),
    (7, 2, 8.0),
    (7, 3, -32.0),
    (7, 4, 56.0),
    (7, 5, -48.0),
    (7, 6, 16.0),
];
const ADVECTION_Y: [(i32, i32, f64); 25] = [
    (2, 3, 4.0),
    (2, 4, -20.0),
    (2, 5, 36.0),
    (2, 6, -28.0),
    (2, 7, 8.0),
    (3, 3, -16.0),
    (3, 4, 80.0),
    (3, 5, -144.0),
    (3, 6, 112.0),
    (3, 7, -32.0),
    (4, 3, 28.0),
    (4, 4, -140.0),
    (4, 5, 252.0),
    (4, 6, -196.0),
    (4, 7, 56.0),
    (5, 3, -24.0),
    (5, 4, 120.0),
    (5, 5, -216.0),
    (5, 6, 168.0),
    (5, 7, -48.0),
    (6, 3, 8.0),
    (6, 4, -40.0),
    (6, 5, 72.0),
    (6, 6, -56.0),
    (6, 7, 16.0),
];
const LAPLACIAN_X: [(i32, i32, f64); 14] = [
    (0, 1, 4.0),
    (0, 2, -12.0),
    (0, 3, 8.0),
    (1, 1, -24.0),
    (1, 2, 72.0),
    (1, 3, -48.0),
    (2, 0, -12.0),
    (2, 1, 48.0),
    (2, 2, -72.0),
    (2, 3, 48.0),
    (3, 0, 24.0),
    (3, 1, -48.0),
    (4, 0, -12.0),
    (4, 1, 24.0),
];
const LAPLACIAN_Y: [(i32, i32, f64); 14] = [
    (0, 2, 12.0),
    (0, 3, -24.0),
    (0, 4, 12.0),
    (1, 0, -4.0),
    (1, 1, 24.0),
    (1, 2, -48.0),
    (1, 3, 48.0),
    (1, 4, -24.0),
    (2, 0, 12.0),
    (2, 1, -72.0),
    (2, 2, 72.0),
    (3, 0, -8.0),
    (3, 1, 48.0),
    (3, 2, -48.0),
];

fn poly(terms: &[(i32, i32, f64)], x: [f64; 2]) -> f64 {
    terms
        .iter()
        .map(|&(i, j, c)| c * x[0].powi(i) * x[1].powi(j))
        .sum()
}

/// `q(s) = s²(s − 1)²` and its first two derivatives.
fn quartic(s: f64) -> [f64; 3] {
    [
        s * s * (s - 1.0).powi(2),
        2.0 * s * (s - 1.0) * (2.0 * s - 1.0),
        12.0 * s * s - 12.0 * s + 2.0,
    ]
}

/// Velocity `curl ζ` with `ζ = q(x) q(y)`.
pub fn lederer_velocity(x: [f64; 2]) -> [f64; 2] {
    let (a, b) = (quartic(x[0]), quartic(x[1]));
    [a[0] * b[1], -a[1] * b[0]]
}

/// Forcing `(u·∇)u + ∇p − νΔu` of the Lederer case.
pub fn lederer_forcing(x: [f64; 2], nu: f64) -> [f64; 2] {
    [
        poly(&ADVECTION_X, x) + 7.0 * x[0].powi(6) - nu * poly(&LAPLACIAN_X, x),
        poly(&ADVECTION_Y, x) + 7.0 * x[1].powi(6) - nu * poly(&LAPLACIAN_Y, x),
    ]
}

/// Steady Navier–Stokes with a stream-function velocity and a
/// high-degree pressure on the unit square.
pub fn lederer(nu: f64) -> CaseDefinition {
    let u: VectorField = Arc::new(|x, _| lederer_velocity(x));
    let grad_u: GradientField = Arc::new(|x, _| {
        let (a, b) = (quartic(x[0]), quartic(x[1]));
        [[a[1] * b[1], a[0] * b[2]], [-a[2] * b[0], -a[1] * b[1]]]
    });
    let p: ScalarField = Arc::new(|x, _| x[0].powi(7) + x[1].powi(7) - 0.25);
    let mut data = all_dirichlet(zero_field());
    data.forcing = Arc::new(move |x, _| lederer_forcing(x, nu));
    CaseDefinition {
        name: "lederer".into(),
        domain: Domain::Rect([0.0, 0.0, 1.0, 1.0]),
        data,
        exact: Some(ExactSolution { u, grad_u, p }),
        nu,
        transient: None,
        drag: None,
        levels: vec![128, 512, 2048, 8192],
        cells: 2048,
    }
}

fn ramp(t: f64) -> (f64, f64) {
    if t < 1.0 {
        (t.max(0.0), if t >= 0.0 { 1.0 } else { 0.0 })
    } else {
        (1.0, 0.0)
    }
}

/// Potential flow `u = min(t, 1) ∇χ`, `χ = x³y − y³x`, on `[−1, 1]²`.
pub fn potential_flow(nu: f64) -> CaseDefinition {
    let u: VectorField = Arc::new(|x, t| {
        let s = ramp(t).0;
        [
            s * (3.0 * x[0] * x[0] * x[1] - x[1].powi(3)),
            s * (x[0].powi(3) - 3.0 * x[0] * x[1] * x[1]),
        ]
    });
    let grad_u: GradientField = Arc::new(|x, t| {
        let s = ramp(t).0;
        let d = 3.0 * (x[0] * x[0] - x[1] * x[1]);
        [
            [6.0 * s * x[0] * x[1], s * d],
            [s * d, -6.0 * s * x[0] * x[1]],
        ]
    });
    let p: ScalarField = Arc::new(|x, t| {
        let (s, sd) = ramp(t);
        let g2 = (x[0] * x[0] + x[1] * x[1]).powi(3);
        let chi = x[0].powi(3) * x[1] - x[1].powi(3) * x[0];
        -0.5 * s * s * g2 + 12.0 * s * s / 35.0 - sd * chi
    });
    CaseDefinition {
        name: "potential-flow".into(),
        domain: Domain::Rect([-1.0, -1.0, 1.0, 1.0]),
        data: all_dirichlet(u.clone()),
        exact: Some(ExactSolution { u, grad_u, p }),
        nu,
        transient: Some(TransientSettings {
            dt: 0.01,
            t_end: 2.0,
            theta: 1.0,
            initial: InitialCondition::Zero,
        }),
        drag: None,
        levels: vec![128, 512, 2048],
        cells: 2048,
    }
}

/// Channel flow past a circular obstacle with a parabolic inflow.
pub fn cylinder2d() -> CaseDefinition {
    let inflow: VectorField = Arc::new(|x, _| [6.0 * x[1] * (0.41 - x[1]) / (0.41 * 0.41), 0.0]);
    let data = ProblemData::new(zero_field())
        .with_boundary("inflow", BoundaryCondition::Dirichlet(inflow))
        .with_boundary("wall", BoundaryCondition::Dirichlet(zero_field()))
        .with_boundary("obstacle", BoundaryCondition::Dirichlet(zero_field()))
        .with_boundary("outflow", BoundaryCondition::Neumann(zero_field()));
    CaseDefinition {
        name: "cylinder2d".into(),
        domain: Domain::Gmsh(CYLINDER_MESH.into()),
        data,
        exact: None,
        nu: 1e-3,
        transient: Some(TransientSettings {
            dt: 5e-5,
            t_end: 5.0,
            theta: 1.0,
            initial: InitialCondition::Stokes,
        }),
        drag: Some(DragSettings {
            tag: "obstacle".into(),
            radius: 0.05,
        }),
        levels: vec![],
        cells: 0,
    }
}

/// Swirling forcing centred in the bounding box of `mesh`, used to build a
/// divergence-free initial field by a Stokes solve.
pub fn swirl_forcing(mesh: &Mesh, nu: f64) -> VectorField {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in mesh.vertices() {
        for i in 0..2 {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let l = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let a = 200.0 * nu / l.powi(3);
    Arc::new(move |x, _| [-a * (x[1] - c[1]), a * (x[0] - c[0])])
}

/// Free decay on the unit square: homogeneous Dirichlet data, no forcing,
/// started from a forced Stokes field.
pub fn decay(nu: f64) -> CaseDefinition {
    let domain = [0.0, 0.0, 1.0, 1.0];
    let mesh = generate_rect_mesh(1, 1, domain).expect("unit square");
    CaseDefinition {
        name: "decay".into(),
        domain: Domain::Rect(domain),
        data: all_dirichlet(zero_field()),
        exact: None,
        nu,
        transient: Some(TransientSettings {
            dt: 0.01,
            t_end: 0.5,
            theta: 1.0,
            initial: InitialCondition::StokesForced(swirl_forcing(&mesh, nu)),
        }),
        drag: None,
        levels: vec![128, 512, 2048],
        cells: 512,
    }
}

pub const CASE_NAMES: [&str; 6] = [
    "kovasznay",
    "coriolis",
    "lederer",
    "potential-flow",
    "cylinder2d",
    "decay",
];

/// Case by name; `nu` overrides the default viscosity (`1/Re` for Kovasznay).
pub fn case_by_name(name: &str, nu: Option<f64>) -> Result<CaseDefinition, CaseError> {
    if let Some(v) = nu {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CaseError::Config(format!(
                "viscosity must be positive, got {v}"
            )));
        }
    }
    let c = match name {
        "kovasznay" => kovasznay(1.0 / nu.unwrap_or(1.0 / 40.0)),
        "coriolis" => coriolis(nu.unwrap_or(1e-3)),
        "lederer" => lederer(nu.unwrap_or(1e-3)),
        "potential-flow" => potential_flow(nu.unwrap_or(1.0 / 500.0)),
        "cylinder2d" | "cylinder" => {
            let mut c = cylinder2d();
            if let Some(v) = nu {
                c.nu = v;
            }
            c
        }
        "decay" => decay(nu.unwrap_or(1e-2)),
        other => {
            return Err(CaseError::Config(format!(
                "unknown case `{other}` (expected one of {})",
                CASE_NAMES.join(", ")
            )))
        }
    };
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Facet pressure degree `k`.
    #[default]
    Proposed,
    /// Facet pressure degree `k − 1`.
    Variant,
}

impl Formulation {
    pub fn facet_pressure_degree(self, k: usize) -> usize {
        match self {
            Formulation::Proposed => k,
            Formulation::Variant => k.saturating_sub(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    /// Stop on the facet-solution increment.
    #[default]
    Default,
    /// Stop when the pressure error stagnates.
    PaperReplication,
}

/// Discretisation options shared by steady and transient runs.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub k: usize,
    pub formulation: Formulation,
    pub mode: SolveMode,
    pub alpha: Option<f64>,
}

impl RunOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            formulation: Formulation::Proposed,
            mode: SolveMode::Default,
            alpha: None,
        }
    }

    pub fn with_formulation(mut self, f: Formulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn config(&self, nu: f64) -> ProblemConfig {
        let mut c = ProblemConfig::new(nu, self.k);
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        c
    }

    pub fn spaces(&self, mesh: &Mesh) -> Result<Spaces, CaseError> {
        Ok(build_spaces(
            mesh,
            self.k,
            self.formulation.facet_pressure_degree(self.k),
        )?)
    }
}

fn exact_at(
    exact: &ExactSolution,
    t: f64,
) -> (
    impl Fn([f64; 2]) -> [f64; 2] + '_,
    impl Fn([f64; 2]) -> Tensor2 + '_,
    impl Fn([f64; 2]) -> f64 + '_,
) {
    (
        move |x| (exact.u)(x, t),
        move |x| (exact.grad_u)(x, t),
        move |x| (exact.p)(x, t),
    )
}

/// `(l2_u, l2_p, h1_u)` against the exact solution at time `t`.
pub fn errors_at(
    mesh: &Mesh,
    spaces: &Spaces,
    state: &FieldState,
    exact: &ExactSolution,
    t: f64,
) -> (f64, f64, f64) {
    let (u, g, p) = exact_at(exact, t);
    error_norms(mesh, spaces, state, &u, &g, &p)
}

/// Steady Picard solve of `case` with data at time `t`.
pub fn steady_solve(
    case: &CaseDefinition,
    mesh: &Mesh,
    spaces: &Spaces,
    opts: &RunOptions,
    t: f64,
) -> Result<PicardResult, CaseError> {
    let mut solver = Solver::new(mesh, spaces, opts.config(case.nu), case.data.clone())?;
    let mut picard = PicardOptions::default();
    if opts.mode == SolveMode::PaperReplication {
        let exact = case.exact.clone().ok_or_else(|| {
            CaseError::Config(format!(
                "case `{}` has no exact pressure for the replication stopping rule",
                case.name
            ))
        })?;
        let (m, s) = (Arc::new(mesh.clone()), Arc::new(spaces.clone()));
        picard.stop = StopRule::ErrorStagnation {
            tol: 1e-4,
            error: Arc::new(move |st| errors_at(&m, &s, st, &exact, t).1),
        };
    }
    Ok(solver.picard(&picard, t)?)
}

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub report: ErrorReport,
    pub rate_u: Option<f64>,
    pub rate_p: Option<f64>,
    pub rate_h1: Option<f64>,
    pub walltime_s: f64,
    pub velocity_scale: f64,
    pub iterations: usize,
}

/// `2 ln(e_c/e_f) / ln(n_f/n_c)` for cell counts `n`.
pub fn rate(e_coarse: f64, e_fine: f64, cells_coarse: usize, cells_fine: usize) -> Option<f64> {
    let r = 2.0 * (e_coarse / e_fine).ln() / (cells_fine as f64 / cells_coarse as f64).ln();
    r.is_finite().then_some(r)
}

/// Solve `case` on the mesh with `cells` cells and report errors and audits.
pub fn run_level(
    case: &CaseDefinition,
    opts: &RunOptions,
    cells: Option<usize>,
) -> Result<RunRecord, CaseError> {
    let start = Instant::now();
    let mesh = case.mesh(cells)?;
    let spaces = opts.spaces(&mesh)?;
    let t = 0.0;
    let res = steady_solve(case, &mesh, &spaces, opts, t)?;
    let config = opts.config(case.nu);
    let (l2_u, l2_p, h1_u) = match &case.exact {
        Some(ex) => errors_at(&mesh, &spaces, &res.state, ex, t),
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    let (div_norm, jump_norm) = divergence_and_jump(&mesh, &spaces, &res.state);
    let mom = momentum_residual(
        &mesh,
        &spaces,
        &config,
        &case.data,
        &res.state,
        Balance::Steady { adv: &res.adv, t },
    );
    let report = ErrorReport {
        case: case.name.clone(),
        k: opts.k,
        cells: mesh.num_cells(),
        l2_u,
        l2_p,
        h1_u,
        div_norm,
        jump_norm,
        momentum_residual_max: mom.max,
        kinetic_energy: kinetic_energy(&mesh, &spaces, &res.state),
    };
    Ok(RunRecord {
        report,
        rate_u: None,
        rate_p: None,
        rate_h1: None,
        walltime_s: start.elapsed().as_secs_f64(),
        velocity_scale: velocity_scale(&mesh, &spaces, &res.state),
        iterations: res.iterations,
    })
}

/// Results of a refinement study; failed levels are kept with their error.
#[derive(Debug, Default)]
pub struct ConvergenceStudy {
    pub records: Vec<RunRecord>,
    pub failures: Vec<(usize, CaseError)>,
}

/// Solve on each cell count in turn; rates compare consecutive successful levels.
pub fn run_convergence(
    case: &CaseDefinition,
    opts: &RunOptions,
    levels: &[usize],
) -> ConvergenceStudy {
    let mut study = ConvergenceStudy::default();
    for &cells in levels {
        match run_level(case, opts, Some(cells)) {
            Ok(mut r) => {
                if let Some(prev) = study.records.last() {
                    let (c, f) = (&prev.report, &r.report);
                    r.rate_u = rate(c.l2_u, f.l2_u, c.cells, f.cells);
                    r.rate_p = rate(c.l2_p, f.l2_p, c.cells, f.cells);
                    r.rate_h1 = rate(c.h1_u, f.h1_u, c.cells, f.cells);
                }
                study.records.push(r);
            }
            Err(e) => study.failures.push((cells, e)),
        }
    }
    study
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Serialize)]
struct ResultRow<'a> {
    case: &'a str,
    k: usize,
    cells: usize,
    l2_u: Option<f64>,
    rate_u: Option<f64>,
    l2_p: Option<f64>,
    rate_p: Option<f64>,
    h1_u: Option<f64>,
    rate_h1: Option<f64>,
    div_norm: f64,
    jump_norm: f64,
    mom_res_max: f64,
    energy: f64,
    walltime_s: f64,
}

pub const RESULTS_HEADER: [&str; 14] = [
    "case",
    "k",
    "cells",
    "l2_u",
    "rate_u",
    "l2_p",
    "rate_p",
    "h1_u",
    "rate_h1",
    "div_norm",
    "jump_norm",
    "mom_res_max",
    "energy",
    "walltime_s",
];

pub const TIME_SERIES_HEADER: [&str; 9] = [
    "step",
    "t",
    "l2_u",
    "l2_p",
    "div_norm",
    "mom_res_max",
    "energy",
    "C_D",
    "C_L",
];

/// Results CSV, one row per record in order.
pub fn write_results_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<(), CaseError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        let e = &r.report;
        w.serialize(ResultRow {
            case: &e.case,
            k: e.k,
            cells: e.cells,
            l2_u: finite(e.l2_u),
            rate_u: r.rate_u,
            l2_p: finite(e.l2_p),
            rate_p: r.rate_p,
            h1_u: finite(e.h1_u),
            rate_h1: r.rate_h1,
            div_norm: e.div_norm,
            jump_norm: e.jump_norm,
            mom_res_max: e.momentum_residual_max,
            energy: e.kinetic_energy,
            walltime_s: r.walltime_s,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One time level of a transient run; step 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeRecord {
    pub step: usize,
    pub t: f64,
    pub l2_u: Option<f64>,
    pub l2_p: Option<f64>,
    pub div_norm: f64,
    pub mom_res_max: Option<f64>,
    pub energy: f64,
    #[serde(rename = "C_D")]
    pub c_d: Option<f64>,
    #[serde(rename = "C_L")]
    pub c_l: Option<f64>,
    #[serde(skip)]
    pub jump_norm: f64,
    #[serde(skip)]
    pub velocity_scale: f64,
    #[serde(skip)]
    pub dissipation: Option<f64>,
}

pub fn write_time_series_csv<W: Write>(out: W, records: &[TimeRecord]) -> Result<(), CaseError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(TIME_SERIES_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Time-stepping parameters; `steps` defaults to `round(t_end/dt)`.
#[derive(Debug, Clone)]
pub struct TransientOptions {
    pub dt: f64,
    pub theta: f64,
    pub t_end: f64,
    pub steps: Option<usize>,
    pub initial: InitialCondition,
}

impl TransientOptions {
    pub fn from_case(case: &CaseDefinition) -> Self {
        let s = case.transient.clone().unwrap_or(TransientSettings {
            dt: 0.01,
            t_end: 0.1,
            theta: 1.0,
            initial: InitialCondition::Zero,
        });
        Self {
            dt: s.dt,
            theta: s.theta,
            t_end: s.t_end,
            steps: None,
            initial: s.initial,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.steps
            .unwrap_or_else(|| (self.t_end / self.dt).round() as usize)
    }
}

/// θ-scheme run of `case` with data `data` on `mesh`. `observe` sees every
/// record with the previous and new states.
#[allow(clippy::too_many_arguments)]
pub fn run_transient_with(
    case: &CaseDefinition,
    data: &ProblemData,
    mesh: &Mesh,
    spaces: &Spaces,
    opts: &RunOptions,
    topts: &TransientOptions,
    mut observe: impl FnMut(&TimeRecord, &FieldState, &FieldState),
) -> Result<Vec<TimeRecord>, CaseError> {
    let config = opts
        .config(case.nu)
        .with_dt(topts.dt)
        .with_theta(topts.theta);
    config.validate(true).map_err(SolverError::from)?;
    let mut solver = Solver::new(mesh, spaces, config.clone(), data.clone())?;
    let mut state = solver.initial_condition(&topts.initial, 0.0)?;
    let record = |step: usize,
                  state: &FieldState,
                  prev: Option<&FieldState>|
     -> Result<TimeRecord, CaseError> {
        let t = state.time;
        let (l2_u, l2_p) = match &case.exact {
            Some(ex) => {
                let (eu, ep, _) = errors_at(mesh, spaces, state, ex, t);
                (Some(eu), Some(ep))
            }
            None => (None, None),
        };
        let (div_norm, jump_norm) = divergence_and_jump(mesh, spaces, state);
        let (mom, dis) = match prev {
            Some(prev) => {
                let m = momentum_residual(
                    mesh,
                    spaces,
                    &config,
                    data,
                    state,
                    Balance::Transient { state_n: prev },
                );
                let mid = crate::diagnostics::blend(prev, state, config.theta);
                (
                    Some(m.max),
                    Some(energy_dissipation(mesh, spaces, &config, data, &mid, prev)),
                )
            }
            None => (None, None),
        };
        let (c_d, c_l) = match &case.drag {
            Some(d) => {
                let (cd, cl) = drag_lift(mesh, spaces, state, config.nu, &d.tag, d.radius)?;
                (Some(cd), Some(cl))
            }
            None => (None, None),
        };
        Ok(TimeRecord {
            step,
            t,
            l2_u,
            l2_p,
            div_norm,
            mom_res_max: mom,
            energy: kinetic_energy(mesh, spaces, state),
            c_d,
            c_l,
            jump_norm,
            velocity_scale: velocity_scale(mesh, spaces, state),
            dissipation: dis,
        })
    };
    let mut out = Vec::new();
    let r0 = record(0, &state, None)?;
    observe(&r0, &state, &state);
    out.push(r0);
    for step in 1..=topts.num_steps() {
        let next = solver.theta_step(&state)?;
        if !next.all_finite() {
            return Err(CaseError::Solver(SolverError::SingularSystem {
                residual: f64::NAN,
            }));
        }
        let r = record(step, &next, Some(&state))?;
        observe(&r, &state, &next);
        out.push(r);
        state = next;
    }
    Ok(out)
}

/// θ-scheme run of `case` with its own data.
pub fn run_transient(
    case: &CaseDefinition,
    mesh: &Mesh,
    spaces: &Spaces,
    opts: &RunOptions,
    topts: &TransientOptions,
) -> Result<Vec<TimeRecord>, CaseError> {
    run_transient_with(case, &case.data, mesh, spaces, opts, topts, |_, _, _| {})
}

/// One line of the invariant audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub id: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl std::fmt::Display for AuditCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} {}: value {:.3e}, tolerance {:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.value,
            self.tolerance
        )
    }
}

/// Audit parameters.
#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub run: RunOptions,
    pub cells: Option<usize>,
    pub steps: usize,
    pub dt: Option<f64>,
}

/// Relative tolerance of the mass and momentum audits.
pub const AUDIT_TOL: f64 = 1e-9;

fn check(id: &'static str, name: &'static str, value: f64, tolerance: f64) -> AuditCheck {
    AuditCheck {
        id,
        name,
        value,
        tolerance,
        pass: value.is_finite() && value <= tolerance,
    }
}

/// Run the six conservation and stability checks on `case`: steady mass and
/// momentum, dissipation sign, per-step mass and momentum, and energy decay.
pub fn audit(case: &CaseDefinition, aopts: &AuditOptions) -> Result<Vec<AuditCheck>, CaseError> {
    let mesh = case.mesh(aopts.cells)?;
    let spaces = aopts.run.spaces(&mesh)?;
    let config = aopts.run.config(case.nu);
    let mut checks = Vec::new();

    // steady solve with data at the end time of transient cases
    let ts = case.transient.as_ref().map_or(0.0, |t| t.t_end);
    let res = steady_solve(case, &mesh, &spaces, &aopts.run, ts)?;
    let scale = velocity_scale(&mesh, &spaces, &res.state).max(f64::MIN_POSITIVE);
    let (d, j) = divergence_and_jump(&mesh, &spaces, &res.state);
    checks.push(check(
        "steady-mass",
        "steady mass conservation",
        d.max(j) / scale,
        AUDIT_TOL,
    ));
    let mom = momentum_residual(
        &mesh,
        &spaces,
        &config,
        &case.data,
        &res.state,
        Balance::Steady {
            adv: &res.adv,
            t: ts,
        },
    );
    checks.push(check(
        "steady-momentum",
        "steady momentum conservation",
        mom.max / scale.max(scale * scale),
        AUDIT_TOL,
    ));
    let mut min_dis = energy_dissipation(&mesh, &spaces, &config, &case.data, &res.state, &res.adv)
        / kinetic_energy(&mesh, &spaces, &res.state).max(f64::MIN_POSITIVE);

    // transient run with the case data
    let mut topts = TransientOptions::from_case(case);
    if let Some(dt) = aopts.dt {
        topts.dt = dt;
    }
    topts.steps = Some(aopts.steps);
    let recs = run_transient(case, &mesh, &spaces, &aopts.run, &topts)?;
    let (mut mass, mut momentum) = (0.0f64, 0.0f64);
    for r in &recs {
        let s = r.velocity_scale.max(f64::MIN_POSITIVE);
        mass = mass.max(r.div_norm.max(r.jump_norm) / s);
        if let Some(m) = r.mom_res_max {
            momentum = momentum.max(m / s.max(s * s));
        }
        if let Some(dis) = r.dissipation {
            min_dis = min_dis.min(dis / r.energy.max(f64::MIN_POSITIVE));
        }
    }

    // free decay on the same mesh
    let hom = case.homogeneous(&mesh);
    let mut decay_case = case.clone();
    decay_case.exact = None;
    decay_case.drag = None;
    let mut worst_rise = f64::NEG_INFINITY;
    for theta in [0.5, 1.0] {
        let dopts = TransientOptions {
            dt: topts.dt,
            theta,
            t_end: 0.0,
            steps: Some(aopts.steps),
            initial: InitialCondition::StokesForced(swirl_forcing(&mesh, case.nu)),
        };
        let mut e0 = None;
        let dconfig = config.clone().with_dt(dopts.dt).with_theta(theta);
        run_transient_with(
            &decay_case,
            &hom,
            &mesh,
            &spaces,
            &aopts.run,
            &dopts,
            |r, prev, next| {
                let e_ref = *e0.get_or_insert(r.energy);
                if r.step > 0 {
                    let rise = (r.energy - kinetic_energy(&mesh, &spaces, prev)) / e_ref;
                    worst_rise = worst_rise.max(rise);
                    let defect = energy_identity_defect(&mesh, &spaces, &dconfig, &hom, prev, next);
                    worst_rise = worst_rise.max(defect.abs() * dopts.dt / e_ref - 1e-12);
                }
                if let Some(dis) = r.dissipation {
                    min_dis = min_dis.min(dis / r.energy.max(f64::MIN_POSITIVE));
                }
            },
        )?;
    }

    checks.push(check(
        "dissipation",
        "non-negative dissipation",
        (-min_dis).max(0.0),
        1e-12,
    ));
    checks.push(check(
        "step-mass",
        "per-step mass conservation",
        mass,
        AUDIT_TOL,
    ));
    checks.push(check(
        "step-momentum",
        "per-step momentum conservation",
        momentum,
        AUDIT_TOL,
    ));
    checks.push(check(
        "energy-decay",
        "energy decay",
        worst_rise.max(0.0),
        1e-12,
    ));
    Ok(checks)
}

/// Run configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: String,
    pub k: Option<usize>,
    pub nu: Option<f64>,
    pub levels: Option<Levels>,
    pub mesh_file: Option<PathBuf>,
    pub cells: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub steps: Option<usize>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub formulation: Option<Formulation>,
    pub mode: Option<SolveMode>,
}

/// Either a number of levels from the case's default sequence or explicit cell counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Levels {
    Count(usize),
    Cells(Vec<usize>),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        serde_json::from_str(text)
            .map_err(|e| CaseError::Config(format!("invalid run configuration: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CaseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CaseError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn case_definition(&self) -> Result<CaseDefinition, CaseError> {
        let mut c = case_by_name(&self.case, self.nu)?;
        if let Some(p) = &self.mesh_file {
            c = c.with_mesh_file(p)?;
        }
        Ok(c)
    }

    pub fn run_options(&self) -> Result<RunOptions, CaseError> {
        let k = self.k.unwrap_or(2);
        if !(1..=4).contains(&k) {
            return Err(CaseError::Config(format!("k must lie in 1..=4, got {k}")));
        }
        Ok(RunOptions {
            k,
            formulation: self.formulation.unwrap_or_default(),
            mode: self.mode.unwrap_or_default(),
            alpha: self.alpha,
        })
    }

    pub fn level_cells(&self, case: &CaseDefinition) -> Result<Vec<usize>, CaseError> {
        match &self.levels {
            None => Ok(case.levels.clone()),
            Some(Levels::Cells(v)) => Ok(v.clone()),
            Some(Levels::Count(n)) => {
                if *n > case.levels.len() {
                    return Err(CaseError::Config(format!(
                        "case `{}` defines {} levels, {n} requested",
                        case.name,
                        case.levels.len()
                    )));
                }
                Ok(case.levels[..*n].to_vec())
            }
        }
    }

    pub fn transient_options(&self, case: &CaseDefinition) -> TransientOptions {
        let mut t = TransientOptions::from_case(case);
        if let Some(v) = self.dt {
            t.dt = v;
        }
        if let Some(v) = self.t_end {
            t.t_end = v;
        }
        if let Some(v) = self.theta {
            t.theta = v;
        }
        t.steps = self.steps;
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_dims() {
        assert_eq!(rect_dims_for_cells(64, 1.5, 2.0).unwrap(), (4, 8));
        assert_eq!(rect_dims_for_cells(4096, 1.5, 2.0).unwrap(), (32, 64));
        assert_eq!(rect_dims_for_cells(128, 1.0, 1.0).unwrap(), (8, 8));
        assert_eq!(rect_dims_for_cells(64, 1.0, 1.0).unwrap(), (4, 8));
        assert_eq!(rect_dims_for_cells(2048, 2.0, 2.0).unwrap(), (32, 32));
        assert!(rect_dims_for_cells(7, 1.0, 1.0).is_err());
        assert!(rect_dims_for_cells(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn kovasznay_values() {
        assert!((kovasznay_lambda(40.0) - -0.96374054419576).abs() < 1e-12);
        let c = kovasznay(40.0);
        let ex = c.exact.unwrap();
        let u = (ex.u)([0.0, 0.25], 0.0);
        assert!((u[0] - 1.0).abs() < 1e-15);
        assert!((u[1] - kovasznay_lambda(40.0) / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn rates() {
        assert!((rate(1.0, 0.125, 64, 256).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(rate(0.0, 0.0, 64, 256), None);
    }

    #[test]
    fn case_lookup() {
        for n in CASE_NAMES {
            assert_eq!(case_by_name(n, None).unwrap().name, n);
        }
        assert!(case_by_name("nope", None).unwrap_err().is_config());
        assert!(case_by_name("coriolis", Some(-1.0)).is_err());
    }

    #[test]
    fn run_config_parses() {
        let c = RunConfig::from_json(
            r#"{"case":"kovasznay","k":2,"levels":2,"formulation":"variant","mode":"paper-replication"}"#,
        )
        .unwrap();
        assert_eq!(c.levels, Some(Levels::Count(2)));
        assert_eq!(c.formulation, Some(Formulation::Variant));
        assert_eq!(c.mode, Some(SolveMode::PaperReplication));
        let case = c.case_definition().unwrap();
        assert_eq!(c.level_cells(&case).unwrap(), vec![64, 256]);
        let c = RunConfig::from_json(r#"{"case":"lederer","levels":[128,512]}"#).unwrap();
        assert_eq!(c.levels, Some(Levels::Cells(vec![128, 512])));
        assert!(RunConfig::from_json(r#"{"case":"x","bogus":1}"#).is_err());
    }

    #[test]
    fn empty_study() {
        let s = run_convergence(&coriolis(1.0), &RunOptions::new(1), &[]);
        assert!(s.records.is_empty() && s.failures.is_empty());
        let mut out = Vec::new();
        write_results_csv(&mut out, &s.records).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap().trim(),
            RESULTS_HEADER.join(",")
        );
    }

    #[test]
    fn failing_level_is_recorded() {
        let s = run_convergence(&coriolis(1.0), &RunOptions::new(1), &[7, 16]);
        assert_eq!(s.failures.len(), 1);
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.records[0].rate_u, None);
    }
}
