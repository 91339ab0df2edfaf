//! Command-line entry point: cell generation, homogenization, gradient
//! verification, material optimization, the macroscopic solves and the local
//! two-scale runs, all with reproducible file outputs.

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use porohom::cell;
use porohom::error::Error;
use porohom::homog;
use porohom::macrobiot::{self, LocalProblem, MacroCoefficients, MacroConfig, MacroMesh};
use porohom::matopt::{
    solve_slp, DesignCriteria, MaterialProblem, ProblemKind, SlpOptions, SlpProblem,
};
use porohom::mesh::{self, CellMesh, ImplicitCellGeometry};
use porohom::sens;
use porohom::spline::{DesignSpace, DesignVector, SplineBox, SplineBoxRecord};
use porohom::tensor::Voigt6;

#[derive(Parser)]
#[command(
    name = "porohom",
    version,
    about = "Homogenized Biot poroelasticity and spline-box shape design"
)]
struct Cli {
    /// Worker threads for the parallel stages (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the cross-and-sphere reference cell mesh.
    GenCell(GenCellArgs),
    /// Solve the cell problems and write the coefficient record.
    Homogenize(HomogenizeArgs),
    /// Verify analytic design gradients against finite differences.
    CheckGradients(CheckGradientsArgs),
    /// Run one of the material design problems.
    OptimizeMaterial(OptimizeArgs),
    /// Solve the macroscopic state and adjoint problems.
    MacroSolve(MacroSolveArgs),
    /// Optimize the microstructure of one macroscopic element.
    TwoScaleLocal(TwoScaleArgs),
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct GenCellArgs {
    /// Channel radii, cell units.
    #[arg(long, num_args = 3, default_values_t = [0.15, 0.15, 0.15])]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    sphere: f64,
    #[arg(long, default_value_t = 16)]
    resolution: usize,
    #[arg(long, default_value = "cell.json")]
    out: PathBuf,
    /// Optional VTK export of the labeled mesh.
    #[arg(long)]
    vtk: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct MaterialDataArgs {
    #[arg(long, default_value_t = 1.0)]
    young: f64,
    #[arg(long, default_value_t = 0.3)]
    poisson: f64,
    /// Fluid compressibility.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    viscosity: f64,
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct HomogenizeArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    material: MaterialDataArgs,
    /// Optional spline box and design to morph the mesh before solving.
    #[arg(long)]
    spline_box: Option<PathBuf>,
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value = "coefficients.json")]
    out: PathBuf,
    /// Optional VTK export of corrector fields.
    #[arg(long)]
    vtk: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct CheckGradientsArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    material: MaterialDataArgs,
    #[command(flatten)]
    spline: SplineArgs,
    /// Number of random free coordinates to test.
    #[arg(long, default_value_t = 10)]
    coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 7297)]
    seed: u64,
    #[arg(long, default_value = "gradient_check.csv")]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct SplineArgs {
    #[arg(long, num_args = 3, default_values_t = [3usize, 3, 3])]
    degrees: Vec<usize>,
    #[arg(long, num_args = 3, default_values_t = [3usize, 3, 3])]
    segments: Vec<usize>,
    /// Injectivity margin.
    #[arg(long, default_value_t = 0.02)]
    delta: f64,
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct SlpArgs {
    #[arg(long, default_value_t = 0.02)]
    move_limit: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol_step: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_feas: f64,
    #[arg(long, default_value_t = 1e3)]
    penalty: f64,
}

impl SlpArgs {
    fn to_options(&self) -> SlpOptions {
        SlpOptions {
            move_limit: self.move_limit,
            max_iters: self.max_iters,
            tol_step: self.tol_step,
            tol_feas: self.tol_feas,
            penalty: self.penalty,
            ..Default::default()
        }
    }
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct OptimizeArgs {
    /// Problem kind: SP, SP-bis, SPX, PS, PS-bis, PSX, PSX', CS.
    #[arg(long)]
    problem: String,
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    material: MaterialDataArgs,
    #[command(flatten)]
    spline: SplineArgs,
    #[command(flatten)]
    slp: SlpArgs,
    #[arg(long)]
    kappa0: Option<f64>,
    #[arg(long)]
    kappa1: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    s1: Option<f64>,
    /// Stiffness weights gamma^k.
    #[arg(long, num_args = 3)]
    stiffness_weights: Option<Vec<f64>>,
    /// Permeability weights beta^k.
    #[arg(long, num_args = 3)]
    permeability_weights: Option<Vec<f64>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Write a VTK geometry snapshot at every accepted iterate.
    #[arg(long, default_value_t = false)]
    snapshots: bool,
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct MacroSolveArgs {
    /// Coefficient record of the (uniform) microstructure.
    #[arg(long)]
    coefficients: PathBuf,
    #[arg(long, num_args = 3, default_values_t = [15.0, 10.0, 2.0])]
    lengths: Vec<f64>,
    #[arg(long, num_args = 3, default_values_t = [15usize, 10, 2])]
    elements: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pressure_in: f64,
    #[arg(long, default_value_t = 0.5)]
    pressure_out: f64,
    #[arg(long, num_args = 3, allow_hyphen_values = true, default_values_t = [0.0, -1.0, 0.0])]
    traction: Vec<f64>,
    #[arg(long, default_value_t = 3.0)]
    traction_patch_x: f64,
    /// Multipliers for which the adjoint is solved.
    #[arg(long, num_args = 1.., allow_hyphen_values = true, default_values_t = [-1.0, 1.0])]
    lambdas: Vec<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize, Deserialize, Clone)]
struct TwoScaleArgs {
    #[command(flatten)]
    macro_args: MacroSolveArgs,
    /// Micro cell mesh to optimize.
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    material: MaterialDataArgs,
    #[command(flatten)]
    spline: SplineArgs,
    #[command(flatten)]
    slp: SlpArgs,
    /// Macroscopic element index; the element next to the inlet by default.
    #[arg(long)]
    element: Option<usize>,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    lambda: f64,
}

#[derive(Serialize)]
struct Summary<T: Serialize> {
    command: &'static str,
    config: T,
    wall_time_s: f64,
    outputs: Vec<String>,
    results: serde_json::Value,
}

fn ensure_parent(path: &Path) -> porohom::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn write_summary<T: Serialize>(dir: &Path, summary: &Summary<T>) -> porohom::Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), summary)?;
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Geometry(_)
        | Error::InvalidMesh(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::InfeasibleReference { .. } => 2,
        Error::InfeasibleStart(_) => 4,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    let start = Instant::now();
    let result = match cli.command {
        Command::GenCell(args) => run_gen_cell(args, start),
        Command::Homogenize(args) => run_homogenize(args, start),
        Command::CheckGradients(args) => run_check_gradients(args, start),
        Command::OptimizeMaterial(args) => run_optimize(args, start),
        Command::MacroSolve(args) => run_macro_solve(args, start),
        Command::TwoScaleLocal(args) => run_two_scale(args, start),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn load_spline(args: &SplineArgs) -> porohom::Result<SplineBox> {
    SplineBox::build(
        [args.degrees[0], args.degrees[1], args.degrees[2]],
        [args.segments[0], args.segments[1], args.segments[2]],
        args.delta,
    )
}

fn elasticity(m: &MaterialDataArgs) -> Voigt6 {
    Voigt6::isotropic(m.young, m.poisson)
}

fn run_gen_cell(args: GenCellArgs, start: Instant) -> porohom::Result<()> {
    let geom =
        ImplicitCellGeometry::new([args.radii[0], args.radii[1], args.radii[2]], args.sphere)?;
    let mesh = mesh::generate_cross_sphere_mesh(&geom, args.resolution)?;
    ensure_parent(&args.out)?;
    mesh.save_json(&args.out)?;
    let mut outputs = vec![args.out.display().to_string()];
    if let Some(vtk) = &args.vtk {
        mesh::export_vtk(&mesh, vtk, &[])?;
        outputs.push(vtk.display().to_string());
    }
    let results = serde_json::json!({
        "nodes": mesh.num_nodes(),
        "elements": mesh.num_elements(),
        "porosity": mesh.porosity(),
        "interface_facets": mesh.interface.len(),
    });
    println!(
        "cell mesh: {} elements, porosity {:.4}",
        mesh.num_elements(),
        mesh.porosity()
    );
    write_summary(
        args.out.parent().unwrap_or(Path::new(".")),
        &Summary {
            command: "gen-cell",
            config: args.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs,
            results,
        },
    )
}

fn run_homogenize(args: HomogenizeArgs, start: Instant) -> porohom::Result<()> {
    let mut mesh = CellMesh::load_json(&args.mesh)?;
    if let Some(box_path) = &args.spline_box {
        let rec: SplineBoxRecord =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(box_path)?))?;
        let b = SplineBox::from_record(&rec)?;
        let design: DesignVector = match &args.design {
            Some(p) => {
                serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(p)?))?
            }
            None => DesignVector::zeros(&b),
        };
        design.validate(&b)?;
        mesh = mesh.morphed(&b, &design)?;
    }
    let d = elasticity(&args.material);
    let sol = cell::solve_cell_problems(&mesh, &d)?;
    let h = homog::compute_coefficients(
        &mesh,
        &d,
        &sol,
        args.material.gamma,
        args.material.viscosity,
    );
    ensure_parent(&args.out)?;
    let file = std::fs::File::create(&args.out)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &h.to_record())?;
    let mut outputs = vec![args.out.display().to_string()];
    if let Some(vtk) = &args.vtk {
        // characteristic flow at the vertex nodes
        let mut flow = vec![Vector3::zeros(); mesh.num_nodes()];
        if let Some(st) = &sol.stokes {
            for (le, &e) in st.space.fluid_elems.iter().enumerate() {
                for (corner, &node) in mesh.hexes[e].iter().enumerate() {
                    let c = porohom::mesh::HEX_CORNERS[corner];
                    let slot =
                        (c[0] as usize * 2) + 3 * (c[1] as usize * 2) + 9 * (c[2] as usize * 2);
                    flow[node] = st.velocity[0][st.space.elem_nodes[le][slot]];
                }
            }
        }
        let fields: Vec<(&str, &[Vector3<f64>])> = vec![
            ("pressure_corrector", &sol.pressure_corrector),
            ("strain_corrector_11", &sol.strain_correctors[0]),
            ("flow_1", &flow),
        ];
        mesh::export_vtk(&mesh, vtk, &fields)?;
        outputs.push(vtk.display().to_string());
    }
    println!(
        "coefficients: porosity {:.4}, K11 {:.4e}, A1111 {:.4}",
        h.porosity,
        h.permeability[(0, 0)],
        h.stiffness.0[(0, 0)]
    );
    let results = serde_json::to_value(h.to_record()).unwrap_or_default();
    write_summary(
        args.out.parent().unwrap_or(Path::new(".")),
        &Summary {
            command: "homogenize",
            config: args.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs,
            results,
        },
    )
}

fn run_check_gradients(args: CheckGradientsArgs, start: Instant) -> porohom::Result<()> {
    use rand::prelude::*;
    let mesh = CellMesh::load_json(&args.mesh)?;
    let b = load_spline(&args.spline)?;
    let space = DesignSpace::new(&b, false);
    let d = elasticity(&args.material);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let n_alpha = 3 * b.num_masters();
    let coords: Vec<usize> = (0..args.coords).map(|_| rng.gen_range(0..n_alpha)).collect();
    let rows = sens::fd_verify(
        &b,
        &space,
        &mesh,
        &d,
        args.material.gamma,
        &coords,
        args.step,
    )?;
    use std::io::Write;
    ensure_parent(&args.out)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(
        w,
        "coord,step,err_stiffness,err_coupling,err_n,err_porosity,err_permeability"
    )?;
    let mut max_err = 0.0f64;
    for r in &rows {
        writeln!(
            w,
            "{},{:.3e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.coord,
            r.step,
            r.err_stiffness,
            r.err_coupling,
            r.err_n,
            r.err_porosity,
            r.err_permeability
        )?;
        max_err = max_err.max(r.max_err());
        println!(
            "coord {:5}: A {:.2e}  C {:.2e}  N {:.2e}  phi {:.2e}  K {:.2e}",
            r.coord, r.err_stiffness, r.err_coupling, r.err_n, r.err_porosity,
            r.err_permeability
        );
    }
    drop(w);
    println!("max relative error {max_err:.3e}");
    let results = serde_json::json!({ "max_relative_error": max_err, "coords": coords });
    write_summary(
        args.out.parent().unwrap_or(Path::new(".")),
        &Summary {
            command: "check-gradients",
            config: args.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: vec![args.out.display().to_string()],
            results,
        },
    )
}

fn run_optimize(args: OptimizeArgs, start: Instant) -> porohom::Result<()> {
    let kind = ProblemKind::from_paper_name(&args.problem)?;
    let mesh = CellMesh::load_json(&args.mesh)?;
    let spline = load_spline(&args.spline)?;
    let mut crit = DesignCriteria::axis_aligned();
    crit.kappa0 = args.kappa0;
    crit.kappa1 = args.kappa1;
    crit.s0 = args.s0;
    crit.s1 = args.s1;
    if let Some(w) = &args.stiffness_weights {
        crit.stiffness_weights = [w[0], w[1], w[2]];
    }
    if let Some(w) = &args.permeability_weights {
        crit.permeability_weights = [w[0], w[1], w[2]];
    }
    crit.pore_volume_ref = mesh.region_volume(mesh::Region::Fluid);
    crit.stress_mode = {
        let mut m = nalgebra::Matrix3::zeros();
        m[(0, 0)] = 1.0;
        m
    };
    let problem = MaterialProblem::new(
        kind,
        crit,
        spline,
        mesh,
        elasticity(&args.material),
        args.material.gamma,
    )?;
    let x0 = vec![0.0; problem.dim()];
    let record = solve_slp(&problem, x0, &args.slp.to_options())?;
    std::fs::create_dir_all(&args.out_dir)?;
    let csv = args.out_dir.join("convergence.csv");
    record.write_csv(&csv)?;
    let design = problem.space.from_vec(&record.final_x);
    let design_path = args.out_dir.join("final_design.json");
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(&design_path)?),
        &design,
    )?;
    let coeff_path = args.out_dir.join("final_coefficients.json");
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(&coeff_path)?),
        &record.final_state.coefficients.to_record(),
    )?;
    let box_path = args.out_dir.join("spline_box.json");
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(&box_path)?),
        &problem.spline.to_record(),
    )?;
    let mut outputs = vec![
        csv.display().to_string(),
        design_path.display().to_string(),
        coeff_path.display().to_string(),
        box_path.display().to_string(),
    ];
    if args.snapshots {
        for it in record.iterates.iter().filter(|r| r.accepted) {
            let d = problem.space.from_vec(&it.x);
            let m = problem.mesh.morphed(&problem.spline, &d)?;
            let path = args.out_dir.join(format!("iterate_{:04}.vtk", it.iter));
            mesh::export_vtk(&m, &path, &[])?;
            outputs.push(path.display().to_string());
        }
    }
    println!(
        "{}: {} -> {} ({:+.2}%), {}",
        kind.paper_name(),
        record.initial_values.report_objective,
        record.final_values.report_objective,
        100.0
            * (record.final_values.report_objective / record.initial_values.report_objective
                - 1.0),
        record.message
    );
    let results = serde_json::json!({
        "kind": kind.paper_name(),
        "initial_objective": record.initial_values.report_objective,
        "final_objective": record.final_values.report_objective,
        "converged": record.converged,
        "message": record.message,
        "iterations": record.iterates.len(),
        "max_constraint_violation": record.final_values.violation(),
    });
    write_summary(
        &args.out_dir,
        &Summary {
            command: "optimize-material",
            config: args.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs,
            results,
        },
    )
}

fn macro_setup(args: &MacroSolveArgs) -> porohom::Result<(MacroMesh, Vec<MacroCoefficients>)> {
    let rec: homog::CoefficientsRecord = serde_json::from_reader(std::io::BufReader::new(
        std::fs::File::open(&args.coefficients)?,
    ))?;
    let h = homog::HomCoefficients::from_record(&rec);
    let config = MacroConfig {
        lengths: [args.lengths[0], args.lengths[1], args.lengths[2]],
        elements: [args.elements[0], args.elements[1], args.elements[2]],
        pressure_in: args.pressure_in,
        pressure_out: args.pressure_out,
        traction: [args.traction[0], args.traction[1], args.traction[2]],
        traction_patch_x: args.traction_patch_x,
    };
    let mesh = MacroMesh::cuboid(config)?;
    let coeffs: Vec<MacroCoefficients> = (0..mesh.n_subdomains)
        .map(|_| MacroCoefficients::from(&h))
        .collect();
    Ok((mesh, coeffs))
}

fn run_macro_solve(args: MacroSolveArgs, start: Instant) -> porohom::Result<()> {
    let (mesh, coeffs) = macro_setup(&args)?;
    let state = macrobiot::solve_state(&mesh, &coeffs)?;
    let lift = mesh.outlet_lift_indicator();
    let flux = macrobiot::flux_functional(&mesh, &coeffs, &state, &lift);
    let comp = macrobiot::compliance(&mesh, &state);
    std::fs::create_dir_all(&args.out_dir)?;
    let mut outputs = Vec::new();
    let total_p = state.total_pressure();
    for &lambda in &args.lambdas {
        let adjoint = macrobiot::solve_adjoint(&mesh, &coeffs, lambda, &lift)?;
        let path = args.out_dir.join(format!("macro_lambda_{lambda:+.0}.vtk"));
        mesh::write_legacy_vtk(
            &path,
            "porohom macro state and adjoint",
            &mesh.nodes,
            &mesh.hexes,
            &[],
            &[
                ("displacement", &state.displacement),
                ("adjoint_displacement", &adjoint.displacement),
            ],
            &[
                ("total_pressure", &total_p),
                ("adjoint_pressure", &adjoint.pressure),
            ],
        )?;
        outputs.push(path.display().to_string());
    }
    println!("macro state: compliance {comp:.6e}, outlet flux {flux:.6e}");
    let results = serde_json::json!({
        "compliance": comp,
        "outlet_flux": flux,
        "lambdas": args.lambdas,
    });
    write_summary(
        &args.out_dir,
        &Summary {
            command: "macro-solve",
            config: args.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs,
            results,
        },
    )
}

fn run_two_scale(args: TwoScaleArgs, start: Instant) -> porohom::Result<()> {
    let (macro_mesh, coeffs) = macro_setup(&args.macro_args)?;
    let state = macrobiot::solve_state(&macro_mesh, &coeffs)?;
    let lift = macro_mesh.outlet_lift_indicator();
    let adjoint = macrobiot::solve_adjoint(&macro_mesh, &coeffs, args.lambda, &lift)?;
    let element = args
        .element
        .unwrap_or_else(|| macro_mesh.element_near_inlet());
    if element >= macro_mesh.num_elements() {
        return Err(Error::Config(format!("element {element} out of range")));
    }
    let tensors = macrobiot::element_tensors(&macro_mesh, &state, &adjoint, element);

    let micro_mesh = CellMesh::load_json(&args.mesh)?;
    let spline = load_spline(&args.spline)?;
    let problem = LocalProblem::new(
        tensors,
        args.lambda,
        spline,
        micro_mesh,
        elasticity(&args.material),
        args.material.gamma,
        args.material.viscosity,
        [false, false, true],
    )?;
    let x0 = vec![0.0; problem.dim()];
    let record = macrobiot::two_scale_local_optimize(&problem, x0, &args.slp.to_options())?;

    std::fs::create_dir_all(&args.macro_args.out_dir)?;
    // convergence log with the term decomposition per accepted iterate
    let terms_path = args.macro_args.out_dir.join("local_convergence.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&terms_path)?);
        writeln!(
            w,
            "iter,objective,stiffness_term,pressure_term,perm_constraint_term,perm_adjoint_term"
        )?;
        for it in record.iterates.iter().filter(|r| r.accepted) {
            let t = problem.terms_at(&it.x)?;
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                it.iter,
                t.total(),
                t.stiffness,
                t.pressure_coupling,
                t.permeability_constraint,
                t.permeability_adjoint
            )?;
        }
    }
    let design = problem.space.from_vec(&record.final_x);
    let design_path = args.macro_args.out_dir.join("local_design.json");
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(&design_path)?),
        &design,
    )?;
    println!(
        "element {element}, lambda {}: F_e {} -> {} ({}), rotation {:.4} rad",
        args.lambda,
        record.initial_values.objective,
        record.final_values.objective,
        record.message,
        design.theta[2]
    );
    let results = serde_json::json!({
        "element": element,
        "lambda": args.lambda,
        "initial_objective": record.initial_values.objective,
        "final_objective": record.final_values.objective,
        "rotation_z": design.theta[2],
        "converged": record.converged,
        "message": record.message,
    });
    write_summary(
        &args.macro_args.out_dir,
        &Summary {
            command: "two-scale-local",
            config: args.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: vec![
                terms_path.display().to_string(),
                design_path.display().to_string(),
            ],
            results,
        },
    )
}
