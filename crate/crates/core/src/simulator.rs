//! Synthetic ground-truth scenes: camera layouts, exact pairwise geometries
//! and feature tracks derived from visibility, plus calibrated noise and
//! outlier injection with a corruption manifest for evaluation.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{Rotation, UnitVector};
use crate::graph::{EgGraph, FeatureTrack};
use crate::pairwise::Observation;

/// Minimum co-observed points for a camera pair to receive an EG edge.
const MIN_EDGE_MATCHES: usize = 5;
/// Points closer than this to a camera center are not observed.
const MIN_DEPTH: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulatorError {
    #[error("infeasible scene config: {0}")]
    InfeasibleConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Cameras on a circle of radius 10 looking at the origin.
    Orbit,
    /// Equispaced collinear cameras with parallel optical axes.
    Line,
    /// Two camera groups 60 degrees apart sharing a subset of points.
    TwoCluster,
    /// Regular lattice of cameras with parallel optical axes.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConnectionRule {
    /// Connect cameras within `k` steps in the capture sequence
    /// (ring distance for orbit layouts).
    KNearestInSequence(usize),
    /// Connect cameras closer than the given distance.
    MaxDistance(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SceneConfig {
    pub layout: Layout,
    pub num_cameras: usize,
    pub num_points: usize,
    pub fov_half_angle_deg: f64,
    pub connection: ConnectionRule,
    pub seed: u64,
}

impl SceneConfig {
    /// Layout defaults for field of view and connectivity.
    pub fn new(layout: Layout, num_cameras: usize, num_points: usize, seed: u64) -> Self {
        let (fov, connection) = match layout {
            Layout::Orbit => (30.0, ConnectionRule::KNearestInSequence(5)),
            Layout::Line => (45.0, ConnectionRule::KNearestInSequence(4)),
            Layout::TwoCluster => (25.0, ConnectionRule::MaxDistance(5.0)),
            Layout::Grid => (45.0, ConnectionRule::MaxDistance(4.5)),
        };
        Self {
            layout,
            num_cameras,
            num_points,
            fov_half_angle_deg: fov,
            connection,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CameraPose {
    pub rotation: Rotation,
    pub center: Vector3<f64>,
}

/// Which entities a corruption pass replaced outright.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorruptionManifest {
    /// Camera pairs whose EG was replaced with a random pose.
    pub eg_outliers: Vec<(usize, usize)>,
    /// (track index, camera id) observations replaced with random bearings.
    pub obs_outliers: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cameras: Vec<CameraPose>,
    pub points: Vec<Vector3<f64>>,
    pub graph: EgGraph,
    pub tracks: Vec<FeatureTrack>,
    pub manifest: CorruptionManifest,
}

impl SyntheticScene {
    pub fn true_rotations(&self) -> Vec<Rotation> {
        self.cameras.iter().map(|c| c.rotation).collect()
    }

    pub fn true_centers(&self) -> Vec<Vector3<f64>> {
        self.cameras.iter().map(|c| c.center).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseConfig {
    /// Per-observation ray perturbation, degrees.
    pub sigma_bearing_deg: f64,
    /// Per-EG relative-rotation perturbation, degrees.
    pub sigma_rot_deg: f64,
    /// Per-EG translation-direction perturbation, degrees.
    pub sigma_t_deg: f64,
    /// Fraction of EGs replaced with random poses.
    pub p_eg_outlier: f64,
    /// Fraction of observations replaced with random bearings.
    pub p_obs_outlier: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_bearing_deg: 0.0,
            sigma_rot_deg: 0.0,
            sigma_t_deg: 0.0,
            p_eg_outlier: 0.0,
            p_obs_outlier: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        for (name, v) in [
            ("sigma_bearing_deg", self.sigma_bearing_deg),
            ("sigma_rot_deg", self.sigma_rot_deg),
            ("sigma_t_deg", self.sigma_t_deg),
        ] {
            if v < 0.0 {
                return Err(SimulatorError::InfeasibleConfig(format!(
                    "{name} must be nonnegative"
                )));
            }
        }
        for (name, v) in [
            ("p_eg_outlier", self.p_eg_outlier),
            ("p_obs_outlier", self.p_obs_outlier),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimulatorError::InfeasibleConfig(format!(
                    "{name} must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.sigma_bearing_deg == 0.0
            && self.sigma_rot_deg == 0.0
            && self.sigma_t_deg == 0.0
            && self.p_eg_outlier == 0.0
            && self.p_obs_outlier == 0.0
    }
}

/// World-to-camera rotation looking from `center` toward `target`, with the
/// image up direction taken from `up_hint`.
fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, up_hint: &Vector3<f64>) -> Rotation {
    let f = (target - center).normalize();
    let mut right = up_hint.cross(&f);
    if right.norm() < 1e-9 {
        right = Vector3::x().cross(&f);
    }
    let right = right.normalize();
    let up = f.cross(&right);
    let m = Matrix3::from_rows(&[right.transpose(), up.transpose(), f.transpose()]);
    Rotation::from_matrix(&m)
}

fn place_cameras(cfg: &SceneConfig) -> Vec<CameraPose> {
    let n = cfg.num_cameras;
    match cfg.layout {
        Layout::Orbit => (0..n)
            .map(|i| {
                let phi = 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
                let center = Vector3::new(10.0 * phi.cos(), 10.0 * phi.sin(), 0.0);
                CameraPose {
                    rotation: look_at(&center, &Vector3::zeros(), &Vector3::z()),
                    center,
                }
            })
            .collect(),
        Layout::Line => (0..n)
            .map(|i| {
                let x = (i as f64 - (n as f64 - 1.0) / 2.0) * 2.0;
                CameraPose {
                    rotation: Rotation::identity(),
                    center: Vector3::new(x, 0.0, 0.0),
                }
            })
            .collect(),
        Layout::TwoCluster => {
            let n_a = n - n / 2;
            let mut cams = Vec::with_capacity(n);
            let arc = 36.0f64.to_radians();
            for (count, base) in [(n_a, 0.0f64), (n / 2, 60.0f64.to_radians())] {
                for i in 0..count {
                    let t = if count > 1 {
                        i as f64 / (count as f64 - 1.0) - 0.5
                    } else {
                        0.0
                    };
                    let phi = base + t * arc;
                    let center = Vector3::new(10.0 * phi.cos(), 10.0 * phi.sin(), 0.0);
                    cams.push(CameraPose {
                        rotation: look_at(&center, &Vector3::zeros(), &Vector3::z()),
                        center,
                    });
                }
            }
            cams
        }
        Layout::Grid => {
            let side = (n as f64).sqrt().ceil() as usize;
            (0..n)
                .map(|i| {
                    let gx = (i % side) as f64 - (side as f64 - 1.0) / 2.0;
                    let gy = (i / side) as f64 - (side as f64 - 1.0) / 2.0;
                    CameraPose {
                        rotation: Rotation::identity(),
                        center: Vector3::new(gx * 2.0, gy * 2.0, 0.0),
                    }
                })
                .collect()
        }
    }
}

fn sample_points(cfg: &SceneConfig, cameras: &[CameraPose], rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let sphere = |rng: &mut ChaCha8Rng, radius: f64| loop {
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p * radius;
        }
    };
    let (min_x, max_x) = cameras
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.center.x), hi.max(c.center.x))
        });
    let (min_y, max_y) = cameras
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.center.y), hi.max(c.center.y))
        });
    (0..cfg.num_points)
        .map(|_| match cfg.layout {
            Layout::Orbit => sphere(rng, 4.0),
            Layout::TwoCluster => sphere(rng, 6.0),
            Layout::Line | Layout::Grid => Vector3::new(
                rng.random_range(min_x - 2.0..max_x + 2.0),
                rng.random_range(min_y - 6.0..max_y + 6.0),
                rng.random_range(6.0..16.0),
            ),
        })
        .collect()
}

fn pair_admitted(cfg: &SceneConfig, cameras: &[CameraPose], i: usize, j: usize) -> bool {
    match cfg.connection {
        ConnectionRule::KNearestInSequence(k) => {
            let d = j - i;
            let d = if cfg.layout == Layout::Orbit {
                d.min(cfg.num_cameras - d)
            } else {
                d
            };
            d <= k
        }
        ConnectionRule::MaxDistance(max) => (cameras[i].center - cameras[j].center).norm() <= max,
    }
}

/// Generate a scene: exact cameras, points, pairwise geometries derived from
/// Eq.-level conventions (`R_ij = R_j R_i^T`, `t_ij = R_j (c_i - c_j)` scaled
/// to unit norm), and tracks from shared visibility.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene, SimulatorError> {
    if cfg.num_cameras < 3 {
        return Err(SimulatorError::InfeasibleConfig(
            "need at least 3 cameras".into(),
        ));
    }
    if cfg.fov_half_angle_deg <= 0.0 || cfg.fov_half_angle_deg >= 90.0 {
        return Err(SimulatorError::InfeasibleConfig(
            "fov half angle must lie in (0, 90) degrees".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cameras = place_cameras(cfg);
    let points = sample_points(cfg, &cameras, &mut rng);

    let cos_fov = cfg.fov_half_angle_deg.to_radians().cos();
    let mut visibility: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
    let mut per_camera_count = vec![0usize; cfg.num_cameras];
    for (pi, p) in points.iter().enumerate() {
        for (ci, cam) in cameras.iter().enumerate() {
            let dir = p - cam.center;
            let dist = dir.norm();
            if dist < MIN_DEPTH {
                continue;
            }
            let forward = cam.rotation.matrix().row(2).transpose();
            if dir.dot(&forward) / dist >= cos_fov {
                visibility[pi].push(ci);
                per_camera_count[ci] += 1;
            }
        }
    }
    if let Some(cam) = per_camera_count.iter().position(|&c| c < 10) {
        return Err(SimulatorError::InfeasibleConfig(format!(
            "camera {cam} observes only {} points",
            per_camera_count[cam]
        )));
    }

    // match counts per admitted camera pair
    let mut match_counts = std::collections::BTreeMap::<(usize, usize), usize>::new();
    for vis in &visibility {
        for (a, &i) in vis.iter().enumerate() {
            for &j in &vis[a + 1..] {
                *match_counts.entry((i, j)).or_insert(0) += 1;
            }
        }
    }

    let mut graph = EgGraph::new(cfg.num_cameras);
    for (&(i, j), &m) in &match_counts {
        if m < MIN_EDGE_MATCHES || !pair_admitted(cfg, &cameras, i, j) {
            continue;
        }
        let r_ij = cameras[j].rotation * cameras[i].rotation.inverse();
        let t_ij = UnitVector::new(
            cameras[j]
                .rotation
                .rotate(&(cameras[i].center - cameras[j].center)),
        )
        .expect("distinct camera centers");
        graph
            .add_edge(i, j, r_ij, t_ij, m)
            .expect("edges are generated once per pair");
    }

    let mut tracks = Vec::new();
    for (pi, vis) in visibility.iter().enumerate() {
        if vis.len() < 3 {
            continue;
        }
        let observations: Vec<Observation> = vis
            .iter()
            .map(|&ci| {
                let cam = &cameras[ci];
                let bearing = UnitVector::new(cam.rotation.rotate(&(points[pi] - cam.center)))
                    .expect("observed points keep positive depth");
                Observation::new(ci, bearing)
            })
            .collect();
        tracks.push(FeatureTrack::new(observations).expect("visibility gives distinct cameras"));
    }

    Ok(SyntheticScene {
        cameras,
        points,
        graph,
        tracks,
        manifest: CorruptionManifest::default(),
    })
}

fn random_unit_vector(rng: &mut ChaCha8Rng) -> UnitVector {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() > 1e-4 && v.norm_squared() <= 1.0 {
            return UnitVector::new(v).expect("norm checked");
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    // uniform on SO(3): normalized 4-gaussian quaternion
    let normal = Normal::new(0.0, 1.0).expect("valid sigma");
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| normal.sample(rng));
        if let Ok(r) = Rotation::from_quaternion_wxyz(q[0], q[1], q[2], q[3]) {
            return r;
        }
    }
}

/// Rotate a direction by |N(0, sigma)| about a random perpendicular axis.
fn perturb_direction(rng: &mut ChaCha8Rng, v: &UnitVector, sigma_deg: f64) -> UnitVector {
    let normal = Normal::new(0.0, sigma_deg.to_radians()).expect("valid sigma");
    let angle = normal.sample(rng).abs();
    let axis = loop {
        let r = random_unit_vector(rng);
        let perp = r.as_vector() - v.as_vector() * r.dot(v);
        if perp.norm() > 1e-6 {
            break UnitVector::new(perp).expect("norm checked");
        }
    };
    Rotation::from_axis_angle(&axis, angle).rotate_unit(v)
}

fn perturb_rotation(rng: &mut ChaCha8Rng, r: &Rotation, sigma_deg: f64) -> Rotation {
    let normal = Normal::new(0.0, sigma_deg.to_radians()).expect("valid sigma");
    let angle = normal.sample(rng).abs();
    let axis = random_unit_vector(rng);
    Rotation::from_axis_angle(&axis, angle) * *r
}

/// Choose `count` distinct indices from `0..n`, canonical ascending order.
fn choose_indices(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..count.min(n) {
        let j = rng.random_range(i..n);
        all.swap(i, j);
    }
    let mut chosen = all[..count.min(n)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Apply noise and outliers in a fixed order: bearing perturbation, EG
/// rotation/translation perturbation, then outlier replacement. Fills the
/// scene's corruption manifest. A zero config leaves the scene untouched.
pub fn corrupt(scene: &mut SyntheticScene, noise: &NoiseConfig) -> Result<(), SimulatorError> {
    noise.validate()?;
    if noise.is_identity() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);

    if noise.sigma_bearing_deg > 0.0 {
        for track in &mut scene.tracks {
            let perturbed: Vec<Observation> = track
                .observations()
                .iter()
                .map(|o| {
                    Observation::new(
                        o.camera_id,
                        perturb_direction(&mut rng, &o.bearing, noise.sigma_bearing_deg),
                    )
                })
                .collect();
            *track = FeatureTrack::new(perturbed).expect("camera ids unchanged");
        }
    }

    if noise.sigma_rot_deg > 0.0 {
        for e in &mut scene.graph.edges {
            e.rotation = perturb_rotation(&mut rng, &e.rotation, noise.sigma_rot_deg);
        }
    }
    if noise.sigma_t_deg > 0.0 {
        for e in &mut scene.graph.edges {
            e.translation = perturb_direction(&mut rng, &e.translation, noise.sigma_t_deg);
        }
    }

    if noise.p_eg_outlier > 0.0 {
        let n_edges = scene.graph.edges().len();
        let count = (noise.p_eg_outlier * n_edges as f64).floor() as usize;
        for idx in choose_indices(&mut rng, n_edges, count) {
            let e = &mut scene.graph.edges[idx];
            e.rotation = random_rotation(&mut rng);
            e.translation = random_unit_vector(&mut rng);
            scene.manifest.eg_outliers.push((e.i, e.j));
        }
    }

    if noise.p_obs_outlier > 0.0 {
        let flat: Vec<(usize, usize)> = scene
            .tracks
            .iter()
            .enumerate()
            .flat_map(|(ti, t)| (0..t.len()).map(move |oi| (ti, oi)))
            .collect();
        let count = (noise.p_obs_outlier * flat.len() as f64).floor() as usize;
        for idx in choose_indices(&mut rng, flat.len(), count) {
            let (ti, oi) = flat[idx];
            let mut obs = scene.tracks[ti].observations().to_vec();
            obs[oi] = Observation::new(obs[oi].camera_id, random_unit_vector(&mut rng));
            scene.manifest.obs_outliers.push((ti, obs[oi].camera_id));
            scene.tracks[ti] = FeatureTrack::new(obs).expect("camera ids unchanged");
        }
    }

    Ok(())
}
