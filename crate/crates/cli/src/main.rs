use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdgflow::cases::{
    audit, case_by_name, run_convergence, run_level, run_transient, write_results_csv,
    write_time_series_csv, AuditOptions, CaseError, Formulation, Levels, RunConfig, SolveMode,
};
use hdgflow::mesh::read_gmsh;

#[derive(Parser)]
#[command(
    name = "hdgflow",
    version,
    about = "Divergence-free HDG incompressible flow solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one case (a steady solve or a transient run).
    Run(Opts),
    /// Run a refinement study and write the results CSV.
    Converge(Opts),
    /// Check mass, momentum and energy invariants on a case.
    Audit(Opts),
    /// Validate and summarise a mesh file.
    MeshInfo(Opts),
}

#[derive(Args, Default)]
struct Opts {
    /// Case name: kovasznay, coriolis, lederer, potential-flow, cylinder2d, decay.
    #[arg(long)]
    case: Option<String>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    /// Number of default levels, or a comma-separated list of cell counts.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// Penalty parameter (default 6k²).
    #[arg(long)]
    alpha: Option<f64>,
    /// proposed | variant
    #[arg(long)]
    formulation: Option<String>,
    /// default | paper-replication
    #[arg(long)]
    mode: Option<String>,
    /// Gmsh mesh file.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Number of time steps (overrides t-end).
    #[arg(long)]
    steps: Option<usize>,
    /// Cell count of a single run on a rectangle.
    #[arg(long)]
    cells: Option<usize>,
}

fn config_err(msg: impl Into<String>) -> CaseError {
    CaseError::Config(msg.into())
}

impl Opts {
    fn run_config(&self) -> Result<RunConfig, CaseError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.case {
            c.case = v.clone();
        }
        if c.case.is_empty() {
            return Err(config_err("no case given (use --case or a config file)"));
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if self.$f.is_some() { c.$f = self.$f; } )* };
        }
        take!(k, nu, dt, t_end, theta, alpha, steps, cells);
        if let Some(m) = &self.mesh {
            c.mesh_file = Some(m.clone());
        }
        if let Some(l) = &self.levels {
            c.levels = Some(parse_levels(l)?);
        }
        if let Some(f) = &self.formulation {
            c.formulation = Some(match f.as_str() {
                "proposed" => Formulation::Proposed,
                "variant" => Formulation::Variant,
                o => return Err(config_err(format!("unknown formulation `{o}`"))),
            });
        }
        if let Some(m) = &self.mode {
            c.mode = Some(match m.as_str() {
                "default" => SolveMode::Default,
                "paper-replication" => SolveMode::PaperReplication,
                o => return Err(config_err(format!("unknown mode `{o}`"))),
            });
        }
        Ok(c)
    }

    fn out_file(&self, name: &str) -> Result<BufWriter<File>, CaseError> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| config_err(format!("cannot create {}: {e}", self.out.display())))?;
        let p = self.out.join(name);
        let f = File::create(&p)
            .map_err(|e| config_err(format!("cannot write {}: {e}", p.display())))?;
        Ok(BufWriter::new(f))
    }
}

fn parse_levels(s: &str) -> Result<Levels, CaseError> {
    let bad = || config_err(format!("invalid --levels `{s}`"));
    if s.contains(',') {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()
            .map(Levels::Cells)
    } else {
        s.trim().parse().map(Levels::Count).map_err(|_| bad())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn cmd_run(o: &Opts) -> Result<bool, CaseError> {
    let rc = o.run_config()?;
    let case = rc.case_definition()?;
    let opts = rc.run_options()?;
    if case.is_transient() {
        let mesh = case.mesh(rc.cells)?;
        let spaces = opts.spaces(&mesh)?;
        let topts = rc.transient_options(&case);
        let recs = run_transient(&case, &mesh, &spaces, &opts, &topts)?;
        write_time_series_csv(
            o.out_file(&format!("{}_k{}_timeseries.csv", case.name, opts.k))?,
            &recs,
        )?;
        if let Some(last) = recs.last() {
            println!(
                "{}: {} steps to t = {:.4}, energy {:.6e}, div {:.2e}",
                case.name, last.step, last.t, last.energy, last.div_norm
            );
        }
    } else {
        let r = run_level(&case, &opts, rc.cells)?;
        write_results_csv(
            o.out_file(&format!("{}_k{}_results.csv", case.name, opts.k))?,
            std::slice::from_ref(&r),
        )?;
        let e = &r.report;
        println!(
            "{}: k={} cells={} l2_u={:.3e} l2_p={:.3e} div={:.2e} iterations={}",
            e.case, e.k, e.cells, e.l2_u, e.l2_p, e.div_norm, r.iterations
        );
    }
    Ok(true)
}

fn cmd_converge(o: &Opts) -> Result<bool, CaseError> {
    let rc = o.run_config()?;
    let case = rc.case_definition()?;
    if case.exact.is_none() {
        return Err(config_err(format!(
            "case `{}` has no exact solution",
            case.name
        )));
    }
    let opts = rc.run_options()?;
    let levels = rc.level_cells(&case)?;
    let study = run_convergence(&case, &opts, &levels);
    write_results_csv(
        o.out_file(&format!("{}_k{}_results.csv", case.name, opts.k))?,
        &study.records,
    )?;
    for r in &study.records {
        let e = &r.report;
        println!(
            "cells={:>6} l2_u={:.3e} ({}) l2_p={:.3e} ({}) div={:.2e}",
            e.cells,
            e.l2_u,
            fmt_opt(r.rate_u),
            e.l2_p,
            fmt_opt(r.rate_p),
            e.div_norm
        );
    }
    for (cells, e) in &study.failures {
        eprintln!("level with {cells} cells failed: {e}");
    }
    Ok(study.failures.is_empty())
}

fn cmd_audit(o: &Opts) -> Result<bool, CaseError> {
    let rc = o.run_config()?;
    let case = rc.case_definition()?;
    let opts = rc.run_options()?;
    let aopts = AuditOptions {
        run: opts,
        cells: rc.cells,
        steps: rc.steps.unwrap_or(20),
        dt: rc.dt,
    };
    let checks = audit(&case, &aopts)?;
    for c in &checks {
        println!("{c}");
    }
    let json = serde_json::to_string_pretty(&checks).map_err(|e| config_err(e.to_string()))?;
    std::io::Write::write_all(
        &mut o.out_file(&format!("{}_audit.json", case.name))?,
        json.as_bytes(),
    )?;
    Ok(checks.iter().all(|c| c.pass))
}

fn cmd_mesh_info(o: &Opts) -> Result<bool, CaseError> {
    let mesh = match (&o.mesh, &o.case) {
        (Some(p), _) => read_gmsh(Path::new(p))?,
        (None, Some(c)) => case_by_name(c, o.nu)?.mesh(o.cells)?,
        (None, None) => return Err(config_err("mesh-info needs --mesh or --case")),
    };
    println!("vertices {}", mesh.num_vertices());
    println!("cells {}", mesh.num_cells());
    println!(
        "facets {} ({} boundary)",
        mesh.num_facets(),
        mesh.boundary_facets().count()
    );
    println!("area {:.12}", mesh.total_area());
    println!("euler characteristic {}", mesh.euler_characteristic());
    println!("boundary loops {}", mesh.boundary_loops());
    for t in mesh.tag_names() {
        println!("tag {t}: {} facets", mesh.facets_with_tag(&t).count());
    }
    let untagged = mesh
        .boundary_facets()
        .filter(|&f| mesh.facet_tag(f).is_none())
        .count();
    if untagged > 0 {
        println!("untagged boundary facets {untagged}");
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(o) => cmd_run(o),
        Command::Converge(o) => cmd_converge(o),
        Command::Audit(o) => cmd_audit(o),
        Command::MeshInfo(o) => cmd_mesh_info(o),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
