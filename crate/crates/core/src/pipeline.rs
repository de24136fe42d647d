//! End-to-end orchestration: loop verification, rotations, orientation
//! filtering, track selection, assembly, solve and extraction, plus the
//! JSON records the command-line surface writes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble_system, extract_positions, AssemblyError, AssemblyParams};
use crate::config::{RunConfig, SolverKind};
use crate::dataset::{Dataset, LoadedDataset, TruthFile};
use crate::evaluate::{
    alignment_rotation_angle_deg, error_stats, similarity_align, EvaluateError,
};
use crate::graph::{
    estimate_global_rotations, filter_by_orientation, select_tracks, verify_rotation_loops,
    FeatureTrack, GraphError,
};
use crate::simulator::{corrupt, generate_scene, NoiseConfig, SceneConfig, SimulatorError};
use crate::solver::{admm_solve, smallest_singular_vector, AdmmDiagnostics, AdmmParams, SolverError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error("{0}")]
    Invalid(String),
}

/// Solve bookkeeping serialized into positions files and reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveDiagnostics {
    pub cameras_input: usize,
    pub cameras_used: usize,
    pub edges_input: usize,
    pub edges_after_loop_filter: usize,
    pub edges_after_orientation_filter: usize,
    pub tracks_input: usize,
    pub tracks_selected: usize,
    pub tracks_dropped: usize,
    pub triangles_dropped: usize,
    pub constraint_rows: usize,
    pub gauge_rows: usize,
    pub columns: usize,
    pub iterations: usize,
    pub converged: bool,
    pub residual_l1: f64,
    pub sign_flipped: bool,
    pub rotations_estimated: bool,
}

/// Outcome of a solve: centers keyed by original camera ids, diagnostics,
/// and the raw solver trace for inspection.
#[derive(Debug)]
pub struct SolveOutcome {
    pub camera_ids: Vec<u32>,
    pub centers: Vec<Vector3<f64>>,
    pub diagnostics: SolveDiagnostics,
    pub admm: Option<AdmmDiagnostics>,
    pub system: crate::assembly::SparseSystem,
    pub warnings: Vec<String>,
}

/// Positions file written by the solve command.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PositionsFile {
    pub cameras: Vec<PositionRecord>,
    pub diagnostics: SolveDiagnostics,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PositionRecord {
    pub id: u32,
    pub c: [f64; 3],
}

/// Metrics record emitted by the eval command.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    pub scale: f64,
    pub rotation_angle_deg: f64,
    pub n_cameras: usize,
}

/// Combined report emitted by the pipeline command.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineReport {
    pub config: RunConfig,
    pub scene: SceneSummary,
    pub diagnostics: SolveDiagnostics,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSummary {
    pub cameras: usize,
    pub points: usize,
    pub egs: usize,
    pub tracks: usize,
    pub eg_outliers: usize,
    pub obs_outliers: usize,
}

fn restrict_tracks(
    tracks: &[FeatureTrack],
    old_to_new: &[Option<usize>],
) -> Vec<FeatureTrack> {
    tracks
        .iter()
        .filter_map(|t| {
            let obs: Vec<_> = t
                .observations()
                .iter()
                .filter_map(|o| {
                    old_to_new[o.camera_id]
                        .map(|nc| crate::pairwise::Observation::new(nc, o.bearing))
                })
                .collect();
            if obs.len() >= 3 {
                FeatureTrack::new(obs).ok()
            } else {
                None
            }
        })
        .collect()
}

fn index_map(num_old: usize, kept_old_ids: &[usize]) -> Vec<Option<usize>> {
    let mut map = vec![None; num_old];
    for (new, &old) in kept_old_ids.iter().enumerate() {
        map[old] = Some(new);
    }
    map
}

/// Run the full solve on a decoded dataset. The stage order is: loop
/// verification, global rotations (trusted when present in the dataset),
/// orientation filtering, restriction to the largest connected component,
/// track selection, assembly, solve, extraction.
pub fn run_solve(loaded: &LoadedDataset, cfg: &RunConfig) -> Result<SolveOutcome, PipelineError> {
    let mut warnings = loaded.warnings.clone();
    let cameras_input = loaded.graph.num_cameras();
    let edges_input = loaded.graph.edges().len();
    let tracks_input = loaded.tracks.len();

    let after_loops = verify_rotation_loops(&loaded.graph, cfg.phi1_deg, cfg.seed);
    let edges_after_loop_filter = after_loops.edges().len();

    // restrict to the largest component before estimating rotations
    let (g1, keep1) = after_loops.largest_component();
    if g1.num_cameras() < cameras_input {
        warnings.push(format!(
            "graph disconnected after loop verification; keeping largest component \
             ({} of {} cameras)",
            g1.num_cameras(),
            cameras_input
        ));
    }
    let map1 = index_map(cameras_input, &keep1);

    let rotations_estimated = loaded.rotations.is_none();
    let rotations1 = match &loaded.rotations {
        Some(rots) => keep1.iter().map(|&old| rots[old]).collect(),
        None => estimate_global_rotations(&g1)?,
    };

    let g2_full = filter_by_orientation(&g1, &rotations1, cfg.phi2_deg);
    let edges_after_orientation_filter = g2_full.edges().len();

    let (g2, keep2) = g2_full.largest_component();
    if g2.num_cameras() < g1.num_cameras() {
        warnings.push(format!(
            "graph disconnected after orientation filtering; keeping largest component \
             ({} of {} cameras)",
            g2.num_cameras(),
            g1.num_cameras()
        ));
    }
    let map2 = index_map(g1.num_cameras(), &keep2);
    let rotations: Vec<_> = keep2.iter().map(|&old| rotations1[old]).collect();

    // original camera index -> final dense index
    let composed: Vec<Option<usize>> = (0..cameras_input)
        .map(|old| map1[old].and_then(|mid| map2[mid]))
        .collect();
    let tracks = restrict_tracks(&loaded.tracks, &composed);

    let selection = select_tracks(&tracks, g2.num_cameras(), cfg.k);
    let tracks_selected = selection.selected.len();

    let (system, asm_diag) = assemble_system(
        &g2,
        &rotations,
        &tracks,
        &selection,
        &AssemblyParams {
            alpha: cfg.alpha,
            seed: cfg.seed,
        },
    )?;

    let (x, admm) = match cfg.solver {
        SolverKind::L2 => {
            let x = smallest_singular_vector(&system, 1e-12, cfg.seed ^ 0x51f)?;
            (x, None)
        }
        SolverKind::L1 => {
            let params = AdmmParams {
                beta0: cfg.beta0,
                beta_max: cfg.beta_max,
                rho: cfg.rho,
                seed: cfg.seed,
                ..AdmmParams::default()
            };
            let (x, diag) = admm_solve(&system, &params);
            (x, Some(diag))
        }
    };

    let report = extract_positions(&x, &system, &g2, &rotations);

    let camera_ids: Vec<u32> = keep2
        .iter()
        .map(|&mid| loaded.camera_ids[keep1[mid]])
        .collect();

    let diagnostics = SolveDiagnostics {
        cameras_input,
        cameras_used: g2.num_cameras(),
        edges_input,
        edges_after_loop_filter,
        edges_after_orientation_filter,
        tracks_input,
        tracks_selected,
        tracks_dropped: asm_diag.dropped_tracks,
        triangles_dropped: asm_diag.dropped_triangles,
        constraint_rows: 3 * asm_diag.constraint_blocks,
        gauge_rows: system.num_gauge_rows(),
        columns: system.cols(),
        iterations: admm.as_ref().map_or(0, |d| d.iterations),
        converged: admm.as_ref().map_or(true, |d| d.converged),
        residual_l1: report.residual_l1,
        sign_flipped: report.sign_flipped,
        rotations_estimated,
    };

    Ok(SolveOutcome {
        camera_ids,
        centers: report.centers,
        diagnostics,
        admm,
        system,
        warnings,
    })
}

impl SolveOutcome {
    pub fn positions_file(&self, cfg: &RunConfig) -> PositionsFile {
        PositionsFile {
            cameras: self
                .camera_ids
                .iter()
                .zip(&self.centers)
                .map(|(&id, c)| PositionRecord {
                    id,
                    c: [c.x, c.y, c.z],
                })
                .collect(),
            diagnostics: self.diagnostics.clone(),
            config: *cfg,
        }
    }

    /// ASCII PLY with one vertex per camera center.
    pub fn write_ply<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.centers.len())?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        writeln!(w, "end_header")?;
        for c in &self.centers {
            writeln!(w, "{} {} {}", c.x, c.y, c.z)?;
        }
        Ok(())
    }
}

/// Compare a positions file against a truth sidecar by camera id.
pub fn evaluate_positions(
    positions: &PositionsFile,
    truth: &TruthFile,
) -> Result<MetricsRecord, PipelineError> {
    let truth_by_id: std::collections::BTreeMap<u32, Vector3<f64>> = truth
        .cameras
        .iter()
        .map(|c| (c.id, Vector3::new(c.c[0], c.c[1], c.c[2])))
        .collect();
    let mut est = Vec::with_capacity(positions.cameras.len());
    let mut gt = Vec::with_capacity(positions.cameras.len());
    for p in &positions.cameras {
        let t = truth_by_id.get(&p.id).ok_or_else(|| {
            PipelineError::Invalid(format!("camera id {} missing from truth", p.id))
        })?;
        est.push(Vector3::new(p.c[0], p.c[1], p.c[2]));
        gt.push(*t);
    }
    let alignment = similarity_align(&est, &gt)?;
    let stats = error_stats(&alignment);
    Ok(MetricsRecord {
        median: stats.median,
        mean: stats.mean,
        max: stats.max,
        scale: alignment.scale,
        rotation_angle_deg: alignment_rotation_angle_deg(&alignment),
        n_cameras: stats.count,
    })
}

/// Everything produced by one in-process pipeline run.
pub struct PipelineRun {
    pub report: PipelineReport,
    pub outcome: SolveOutcome,
    pub dataset: Dataset,
    pub truth: TruthFile,
}

/// Simulate, corrupt, solve and evaluate in one process with a single seed.
pub fn run_pipeline(
    scene_cfg: &SceneConfig,
    noise: &NoiseConfig,
    run_cfg: &RunConfig,
    include_rotations: bool,
) -> Result<PipelineRun, PipelineError> {
    let mut scene = generate_scene(scene_cfg)?;
    corrupt(&mut scene, noise)?;

    let dataset = Dataset::from_scene(&scene, include_rotations);
    let truth = TruthFile::from_scene(&scene);

    let loaded = crate::dataset::decode_dataset(&dataset)
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let outcome = run_solve(&loaded, run_cfg)?;

    let positions = outcome.positions_file(run_cfg);
    let metrics = evaluate_positions(&positions, &truth)?;

    let report = PipelineReport {
        config: *run_cfg,
        scene: SceneSummary {
            cameras: scene.cameras.len(),
            points: scene.points.len(),
            egs: scene.graph.edges().len(),
            tracks: scene.tracks.len(),
            eg_outliers: scene.manifest.eg_outliers.len(),
            obs_outliers: scene.manifest.obs_outliers.len(),
        },
        diagnostics: outcome.diagnostics.clone(),
        metrics,
    };

    Ok(PipelineRun {
        report,
        outcome,
        dataset,
        truth,
    })
}
