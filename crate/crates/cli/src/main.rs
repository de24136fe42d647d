//! `transolve`: simulate synthetic multi-view scenes, solve global camera
//! positions from pairwise geometries and feature tracks, and evaluate
//! against ground truth.
//!
//! Exit codes: 0 success, 2 invalid configuration or input, 3 empty
//! constraint system, 4 solver did not converge (positions still written).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use transolve_core::assembly::AssemblyError;
use transolve_core::config::{Profile, RunConfig, SolverKind};
use transolve_core::dataset::{
    decode_dataset, to_json_string, write_json_file, Dataset, TruthFile,
};
use transolve_core::pipeline::{
    evaluate_positions, run_pipeline, run_solve, PipelineError, PositionsFile,
};
use transolve_core::simulator::{
    corrupt, generate_scene, ConnectionRule, Layout, NoiseConfig, SceneConfig,
};

const EXIT_INVALID: u8 = 2;
const EXIT_EMPTY_SYSTEM: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "transolve", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus its ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Estimate camera positions from a dataset file.
    Solve(SolveArgs),
    /// Compare a positions file against a truth sidecar.
    Eval(EvalArgs),
    /// Simulate, solve and evaluate in one process; print a single report.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Orbit,
    Line,
    TwoCluster,
    Grid,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Layout {
        match l {
            LayoutArg::Orbit => Layout::Orbit,
            LayoutArg::Line => Layout::Line,
            LayoutArg::TwoCluster => Layout::TwoCluster,
            LayoutArg::Grid => Layout::Grid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    L1,
    L2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Sequential,
    Internet,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, value_enum)]
    layout: LayoutArg,
    #[arg(long, default_value_t = 20)]
    cameras: usize,
    #[arg(long, default_value_t = 500)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the layout's default field-of-view half angle, degrees.
    #[arg(long)]
    fov_half_angle: Option<f64>,
    /// Connect cameras within this many steps of the capture sequence.
    #[arg(long, conflicts_with = "max_distance")]
    k_nearest: Option<usize>,
    /// Connect cameras closer than this distance.
    #[arg(long)]
    max_distance: Option<f64>,
}

impl SceneArgs {
    fn to_config(&self) -> SceneConfig {
        let mut cfg = SceneConfig::new(self.layout.into(), self.cameras, self.points, self.seed);
        if let Some(f) = self.fov_half_angle {
            cfg.fov_half_angle_deg = f;
        }
        if let Some(k) = self.k_nearest {
            cfg.connection = ConnectionRule::KNearestInSequence(k);
        }
        if let Some(d) = self.max_distance {
            cfg.connection = ConnectionRule::MaxDistance(d);
        }
        cfg
    }
}

#[derive(Args)]
struct NoiseArgs {
    /// Per-observation bearing perturbation, degrees.
    #[arg(long, default_value_t = 0.0)]
    sigma_bearing: f64,
    /// Per-EG relative rotation perturbation, degrees.
    #[arg(long, default_value_t = 0.0)]
    sigma_rot: f64,
    /// Per-EG translation direction perturbation, degrees.
    #[arg(long, default_value_t = 0.0)]
    sigma_t: f64,
    /// Fraction of EGs replaced with random poses.
    #[arg(long, default_value_t = 0.0)]
    p_eg_outlier: f64,
    /// Fraction of observations replaced with random bearings.
    #[arg(long, default_value_t = 0.0)]
    p_obs_outlier: f64,
}

impl NoiseArgs {
    fn to_config(&self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            sigma_bearing_deg: self.sigma_bearing,
            sigma_rot_deg: self.sigma_rot,
            sigma_t_deg: self.sigma_t,
            p_eg_outlier: self.p_eg_outlier,
            p_obs_outlier: self.p_obs_outlier,
            seed: seed ^ 0x6e01,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "l1")]
    solver: SolverArg,
    #[arg(long, value_enum, default_value = "sequential")]
    profile: ProfileArg,
    /// Coverage target for track selection.
    #[arg(long)]
    k: Option<usize>,
    /// Spanning-tree weight combination factor.
    #[arg(long)]
    alpha: Option<f64>,
    /// Loop verification threshold, degrees.
    #[arg(long)]
    phi1: Option<f64>,
    /// Orientation filter threshold, degrees.
    #[arg(long)]
    phi2: Option<f64>,
    /// Penalty growth factor of the L1 solver.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
}

impl RunArgs {
    fn to_config(&self, seed: u64) -> RunConfig {
        let profile = match self.profile {
            ProfileArg::Sequential => Profile::Sequential,
            ProfileArg::Internet => Profile::Internet,
        };
        let mut cfg = RunConfig::for_profile(profile);
        cfg.solver = match self.solver {
            SolverArg::L1 => SolverKind::L1,
            SolverArg::L2 => SolverKind::L2,
        };
        cfg.seed = seed;
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.phi1 {
            cfg.phi1_deg = v;
        }
        if let Some(v) = self.phi2 {
            cfg.phi2_deg = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.beta0 {
            cfg.beta0 = v;
        }
        if let Some(v) = self.beta_max {
            cfg.beta_max = v;
        }
        cfg
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Leave global rotations out of the dataset so the solver estimates them.
    #[arg(long)]
    omit_rotations: bool,
    /// Output dataset path; the truth sidecar lands next to it as
    /// `<stem>.truth.json`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Input dataset.
    #[arg(short, long)]
    input: PathBuf,
    /// Positions output path.
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also export camera centers as ASCII PLY.
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Dump the assembled system in Matrix Market coordinate format.
    #[arg(long)]
    dump_system: Option<PathBuf>,
    /// Write the L1 solver's per-iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    positions: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    omit_rotations: bool,
    /// Also write the report to a file.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn truth_path(dataset: &PathBuf) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    dataset.with_file_name(format!("{stem}.truth.json"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let scene_cfg = args.scene.to_config();
    let noise = args.noise.to_config(args.scene.seed);
    let mut scene = match generate_scene(&scene_cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_INVALID);
        }
    };
    if let Err(e) = corrupt(&mut scene, &noise) {
        eprintln!("error: {e}");
        return Ok(EXIT_INVALID);
    }

    let dataset = Dataset::from_scene(&scene, !args.omit_rotations);
    let truth = TruthFile::from_scene(&scene);
    dataset
        .save(&args.output)
        .with_context(|| format!("writing {}", args.output.display()))?;
    let tp = truth_path(&args.output);
    truth
        .save(&tp)
        .with_context(|| format!("writing {}", tp.display()))?;

    // cluster block summary for the weak-association layout
    if matches!(scene_cfg.layout, Layout::TwoCluster) {
        let half = scene.cameras.len() - scene.cameras.len() / 2;
        let (mut within, mut cross) = (0usize, 0usize);
        for e in scene.graph.edges() {
            if (e.i < half) == (e.j < half) {
                within += 1;
            } else {
                cross += 1;
            }
        }
        println!("cluster blocks: {within} within-cluster edges, {cross} cross-cluster edges");
    }
    println!(
        "wrote {} cameras, {} egs, {} tracks -> {} (+ {})",
        scene.cameras.len(),
        scene.graph.edges().len(),
        scene.tracks.len(),
        args.output.display(),
        tp.display()
    );
    Ok(0)
}

fn cmd_solve(args: &SolveArgs) -> Result<u8> {
    let cfg = args.run.to_config(args.seed);
    let dataset = match Dataset::load(&args.input) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_INVALID);
        }
    };
    let loaded = match decode_dataset(&dataset) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_INVALID);
        }
    };

    let outcome = match run_solve(&loaded, &cfg) {
        Ok(o) => o,
        Err(PipelineError::Assembly(AssemblyError::EmptySystem)) => {
            eprintln!("error: no constraints survived filtering");
            return Ok(EXIT_EMPTY_SYSTEM);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_INVALID);
        }
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    write_json_file(&args.output, &outcome.positions_file(&cfg))
        .with_context(|| format!("writing {}", args.output.display()))?;

    if let Some(path) = &args.ply {
        let mut f = std::fs::File::create(path)?;
        outcome.write_ply(&mut f)?;
    }
    if let Some(path) = &args.dump_system {
        let mut f = std::fs::File::create(path)?;
        outcome.system.write_matrix_market(&mut f)?;
    }
    if let Some(path) = &args.trace {
        match &outcome.admm {
            Some(diag) => {
                let mut f = std::fs::File::create(path)?;
                diag.write_csv(&mut f)?;
            }
            None => eprintln!("warning: --trace ignored for the l2 solver"),
        }
    }

    if !outcome.diagnostics.converged {
        eprintln!("warning: solver did not converge; positions written anyway");
        return Ok(EXIT_NOT_CONVERGED);
    }
    println!(
        "solved {} cameras, residual_l1 {:.3e} -> {}",
        outcome.camera_ids.len(),
        outcome.diagnostics.residual_l1,
        args.output.display()
    );
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    let positions: PositionsFile = {
        let text = std::fs::read_to_string(&args.positions)
            .with_context(|| format!("reading {}", args.positions.display()))?;
        match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(EXIT_INVALID);
            }
        }
    };
    let truth = match TruthFile::load(&args.truth) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_INVALID);
        }
    };
    match evaluate_positions(&positions, &truth) {
        Ok(metrics) => {
            println!("{}", to_json_string(&metrics)?);
            Ok(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(EXIT_INVALID)
        }
    }
}

fn cmd_pipeline(args: &PipelineArgs) -> Result<u8> {
    let scene_cfg = args.scene.to_config();
    let noise = args.noise.to_config(args.scene.seed);
    let run_cfg = args.run.to_config(args.scene.seed);
    let run = match run_pipeline(&scene_cfg, &noise, &run_cfg, !args.omit_rotations) {
        Ok(r) => r,
        Err(PipelineError::Assembly(AssemblyError::EmptySystem)) => {
            eprintln!("error: no constraints survived filtering");
            return Ok(EXIT_EMPTY_SYSTEM);
        }
        Err(PipelineError::Simulator(e)) => {
            eprintln!("error: {e}");
            return Ok(EXIT_INVALID);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_INVALID);
        }
    };
    let text = to_json_string(&run.report)?;
    println!("{text}");
    if let Some(path) = &args.output {
        write_json_file(path, &run.report)?;
    }
    if !run.report.diagnostics.converged {
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn configure_threads() {
    if let Ok(v) = std::env::var("TRANSOLVE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
