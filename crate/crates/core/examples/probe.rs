// temporary diagnostic for the outlier-robustness scenario
use nalgebra::Vector3;
use transolve_core::assembly::{assemble_system, AssemblyParams, RowBlockProvenance};
use transolve_core::evaluate::similarity_align;
use transolve_core::graph::select_tracks;
use transolve_core::simulator::{corrupt, generate_scene, Layout, NoiseConfig, SceneConfig};
use transolve_core::solver::{admm_solve, smallest_singular_vector, AdmmParams};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut scene_cfg = SceneConfig::new(Layout::Orbit, 20, 300, seed);
    scene_cfg.connection = transolve_core::simulator::ConnectionRule::KNearestInSequence(1);
    let mut scene = generate_scene(&scene_cfg).unwrap();
    let noise = NoiseConfig {
        sigma_t_deg: 1.0,
        sigma_bearing_deg: 0.2,
        p_eg_outlier: 0.15,
        seed: seed ^ 0x6e01,
        ..NoiseConfig::default()
    };
    corrupt(&mut scene, &noise).unwrap();

    let rotations = scene.true_rotations();
    let selection = select_tracks(&scene.tracks, 20, 30);
    let (system, diag) = assemble_system(
        &scene.graph,
        &rotations,
        &scene.tracks,
        &selection,
        &AssemblyParams { alpha: 0.1, seed },
    )
    .unwrap();
    println!("rows {} cols {} diag {:?}", system.rows(), system.cols(), diag);

    // how many constraint blocks involve an outlier edge
    let bad: std::collections::BTreeSet<(usize, usize)> =
        scene.manifest.eg_outliers.iter().cloned().collect();
    let mut bad_blocks = 0;
    let mut total_blocks = 0;
    for p in system.block_provenance() {
        if let RowBlockProvenance::Constraint { pair_a, pair_b, .. } = p {
            total_blocks += 1;
            if bad.contains(pair_a) || bad.contains(pair_b) {
                bad_blocks += 1;
            }
        }
    }
    println!("bad blocks {bad_blocks}/{total_blocks}");

    // true solution in solver gauge
    let mut centers = scene.true_centers();
    let mean: Vector3<f64> = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    for c in &mut centers {
        *c -= mean;
    }
    let norm: f64 = centers.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt();
    let x_true: Vec<f64> = centers.iter().flat_map(|c| [c.x / norm, c.y / norm, c.z / norm]).collect();

    let l2 = smallest_singular_vector(&system, 1e-12, 0x51f).unwrap();
    let (l1, d) = admm_solve(&system, &AdmmParams { seed, ..AdmmParams::default() });
    println!(
        "objective L1(x_true) {:.6}  L1(l2) {:.6}  L1(l1) {:.6}  converged {} iters {}",
        system.residual_l1(&x_true),
        system.residual_l1(&l2),
        system.residual_l1(&l1),
        d.converged,
        d.iterations
    );

    let centers_of = |x: &[f64]| -> Vec<Vector3<f64>> {
        (0..20).map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect()
    };
    let gt = scene.true_centers();
    for (name, x) in [("l2", &l2), ("l1", &l1)] {
        let a = similarity_align(&centers_of(x), &gt).unwrap();
        println!("{name}: median err {:.4}", a.median_error);
    }
}
