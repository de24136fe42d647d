//! Epipolar-geometry graph hygiene and track bookkeeping: rotation loop
//! verification, orientation-based edge filtering, a plumbing-grade global
//! rotation initializer, and per-track minimum-spanning-tree edge pairing.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{angle_between_deg, geodesic_angle, Rotation, UnitVector};
use crate::pairwise::Observation;

/// Above this many 3-cycles, loop verification samples instead of
/// enumerating exhaustively.
const MAX_EXHAUSTIVE_CYCLES: u64 = 10_000_000;
const SAMPLED_CYCLES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("camera id {0} out of range (graph has {1} cameras)")]
    CameraOutOfRange(usize, usize),
    #[error("duplicate edge between cameras {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("self edge on camera {0}")]
    SelfEdge(usize),
    #[error("EG graph is not connected")]
    DisconnectedGraph,
    #[error("track subgraph is not connected")]
    DisconnectedTrackSubgraph,
    #[error("spanning tree has fewer than two edges")]
    SingleEdgeTree,
    #[error("track needs at least two observations with distinct cameras")]
    InvalidTrack,
}

/// One pairwise relative pose, stored with `i < j`. `rotation` maps camera
/// i's orientation to camera j's (`R_j = R_ij R_i`) and `translation` is the
/// relative translation direction in camera j's frame.
#[derive(Debug, Clone)]
pub struct EgEdge {
    pub i: usize,
    pub j: usize,
    pub rotation: Rotation,
    pub translation: UnitVector,
    pub matches: usize,
}

/// Cameras plus pairwise relative poses.
#[derive(Debug, Clone)]
pub struct EgGraph {
    num_cameras: usize,
    // in-place pose perturbation is allowed within the crate (the simulator's
    // corruption pass); endpoints stay fixed so the pair index stays valid
    pub(crate) edges: Vec<EgEdge>,
    index: BTreeMap<(usize, usize), usize>,
}

impl EgGraph {
    pub fn new(num_cameras: usize) -> Self {
        Self {
            num_cameras,
            edges: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Insert an edge, normalizing its orientation so that `i < j`. An edge
    /// given as (j, i) is reversed: `R' = R^{-1}`, `t' = -(R^{-1} t)`.
    pub fn add_edge(
        &mut self,
        i: usize,
        j: usize,
        rotation: Rotation,
        translation: UnitVector,
        matches: usize,
    ) -> Result<(), GraphError> {
        if i == j {
            return Err(GraphError::SelfEdge(i));
        }
        for id in [i, j] {
            if id >= self.num_cameras {
                return Err(GraphError::CameraOutOfRange(id, self.num_cameras));
            }
        }
        let (i, j, rotation, translation) = if i < j {
            (i, j, rotation, translation)
        } else {
            let inv = rotation.inverse();
            let t = UnitVector::new(-inv.rotate(translation.as_vector()))
                .expect("rotation preserves unit norm");
            (j, i, inv, t)
        };
        if self.index.contains_key(&(i, j)) {
            return Err(GraphError::DuplicateEdge(i, j));
        }
        self.index.insert((i, j), self.edges.len());
        self.edges.push(EgEdge {
            i,
            j,
            rotation,
            translation,
            matches,
        });
        Ok(())
    }

    pub fn num_cameras(&self) -> usize {
        self.num_cameras
    }

    pub fn edges(&self) -> &[EgEdge] {
        &self.edges
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.index.get(&key).copied()
    }

    /// Relative rotation mapping camera `a`'s orientation to camera `b`'s,
    /// honoring the stored edge orientation.
    pub fn relative_rotation(&self, a: usize, b: usize) -> Option<Rotation> {
        let idx = self.edge_between(a, b)?;
        let e = &self.edges[idx];
        if e.i == a {
            Some(e.rotation)
        } else {
            Some(e.rotation.inverse())
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.num_cameras];
        for (idx, e) in self.edges.iter().enumerate() {
            adj[e.i].push((e.j, idx));
            adj[e.j].push((e.i, idx));
        }
        adj
    }

    /// Connected components as sorted camera-id lists, largest first
    /// (ties broken by smallest contained id).
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.num_cameras];
        let mut components = Vec::new();
        for start in 0..self.num_cameras {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        components
    }

    /// Restrict the graph to its largest connected component. Returns the
    /// reindexed graph and the map from new camera index to old.
    pub fn largest_component(&self) -> (EgGraph, Vec<usize>) {
        let comps = self.connected_components();
        let keep = match comps.first() {
            Some(c) => c.clone(),
            None => Vec::new(),
        };
        let mut old_to_new = vec![usize::MAX; self.num_cameras];
        for (new, &old) in keep.iter().enumerate() {
            old_to_new[old] = new;
        }
        let mut g = EgGraph::new(keep.len());
        for e in &self.edges {
            let (ni, nj) = (old_to_new[e.i], old_to_new[e.j]);
            if ni != usize::MAX && nj != usize::MAX {
                g.add_edge(ni, nj, e.rotation, e.translation, e.matches)
                    .expect("reindexed edges stay valid");
            }
        }
        (g, keep)
    }

    fn retain_edges(&self, keep: &[bool]) -> EgGraph {
        let mut g = EgGraph::new(self.num_cameras);
        for (idx, e) in self.edges.iter().enumerate() {
            if keep[idx] {
                g.add_edge(e.i, e.j, e.rotation, e.translation, e.matches)
                    .expect("retained edges stay valid");
            }
        }
        g
    }
}

/// A scene point's observations across cameras. Observations are stored
/// sorted by camera id, with ids distinct.
#[derive(Debug, Clone)]
pub struct FeatureTrack {
    observations: Vec<Observation>,
}

impl FeatureTrack {
    pub fn new(mut observations: Vec<Observation>) -> Result<Self, GraphError> {
        if observations.len() < 2 {
            return Err(GraphError::InvalidTrack);
        }
        observations.sort_by_key(|o| o.camera_id);
        if observations.windows(2).any(|w| w[0].camera_id == w[1].camera_id) {
            return Err(GraphError::InvalidTrack);
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observation_for(&self, camera_id: usize) -> Option<&Observation> {
        self.observations
            .binary_search_by_key(&camera_id, |o| o.camera_id)
            .ok()
            .map(|k| &self.observations[k])
    }

    pub fn cameras(&self) -> impl Iterator<Item = usize> + '_ {
        self.observations.iter().map(|o| o.camera_id)
    }
}

/// Outcome of greedy track selection: chosen track indices plus per-camera
/// coverage counts.
#[derive(Debug, Clone)]
pub struct TrackSelection {
    pub selected: Vec<usize>,
    pub coverage: Vec<usize>,
}

/// Verify relative rotations around all three-camera loops and drop every
/// edge whose every verification fails. A loop passes when the chained
/// rotation differs from the direct one by at most `phi1_deg`. Edges that
/// appear in no triangle are kept.
pub fn verify_rotation_loops(g: &EgGraph, phi1_deg: f64, seed: u64) -> EgGraph {
    let n_edges = g.edges().len();
    if n_edges == 0 {
        return g.clone();
    }

    // neighbor sets per camera, ascending
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); g.num_cameras()];
    for e in g.edges() {
        nbrs[e.i].push(e.j);
        nbrs[e.j].push(e.i);
    }
    for list in &mut nbrs {
        list.sort_unstable();
    }

    // each triangle (i < j < k) is enumerated exactly once through its (i, j)
    // edge with common neighbor k > j
    let common_above = |i: usize, j: usize| -> Vec<usize> {
        let (a, b) = (&nbrs[i], &nbrs[j]);
        let mut out = Vec::new();
        let (mut p, mut q) = (0, 0);
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    if a[p] > j {
                        out.push(a[p]);
                    }
                    p += 1;
                    q += 1;
                }
            }
        }
        out
    };

    let total_cycles: u64 = g
        .edges()
        .iter()
        .map(|e| common_above(e.i, e.j).len() as u64)
        .sum();

    let verify_triangle = |i: usize, j: usize, k: usize| -> (usize, usize, usize, bool) {
        let e_ij = g.edge_between(i, j).unwrap();
        let e_jk = g.edge_between(j, k).unwrap();
        let e_ik = g.edge_between(i, k).unwrap();
        // chain i -> j -> k and compare with the direct i -> k rotation
        let chained = g.relative_rotation(j, k).unwrap() * g.relative_rotation(i, j).unwrap();
        let closure = g.relative_rotation(i, k).unwrap().inverse() * chained;
        let pass = geodesic_angle(&closure, &Rotation::identity()) <= phi1_deg;
        (e_ij, e_jk, e_ik, pass)
    };

    let mut participates = vec![false; n_edges];
    let mut passed = vec![false; n_edges];

    if total_cycles <= MAX_EXHAUSTIVE_CYCLES {
        let merged = g
            .edges()
            .par_iter()
            .map(|e| {
                let mut local_part = Vec::new();
                let mut local_pass = Vec::new();
                for k in common_above(e.i, e.j) {
                    let (a, b, c, ok) = verify_triangle(e.i, e.j, k);
                    local_part.extend([a, b, c]);
                    if ok {
                        local_pass.extend([a, b, c]);
                    }
                }
                (local_part, local_pass)
            })
            .reduce(
                || (Vec::new(), Vec::new()),
                |(mut p1, mut s1), (p2, s2)| {
                    p1.extend(p2);
                    s1.extend(s2);
                    (p1, s1)
                },
            );
        for idx in merged.0 {
            participates[idx] = true;
        }
        for idx in merged.1 {
            passed[idx] = true;
        }
    } else {
        // reservoir-sample a fixed number of triangles from the enumeration
        // stream, then verify only the sample
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reservoir: Vec<(usize, usize, usize)> = Vec::with_capacity(SAMPLED_CYCLES);
        let mut seen: u64 = 0;
        for e in g.edges() {
            for k in common_above(e.i, e.j) {
                seen += 1;
                if reservoir.len() < SAMPLED_CYCLES {
                    reservoir.push((e.i, e.j, k));
                } else {
                    let slot = rng.random_range(0..seen);
                    if (slot as usize) < SAMPLED_CYCLES {
                        reservoir[slot as usize] = (e.i, e.j, k);
                    }
                }
            }
        }
        for (i, j, k) in reservoir {
            let (a, b, c, ok) = verify_triangle(i, j, k);
            for idx in [a, b, c] {
                participates[idx] = true;
                if ok {
                    passed[idx] = true;
                }
            }
        }
    }

    let keep: Vec<bool> = (0..n_edges)
        .map(|idx| !participates[idx] || passed[idx])
        .collect();
    g.retain_edges(&keep)
}

const ROTATION_SWEEP_LIMIT: usize = 100;
const ROTATION_TOL_DEG: f64 = 1e-6;

/// Plumbing-grade global rotation initializer: spanning-tree chaining from
/// camera 0 followed by Gauss-Seidel tangent-space averaging sweeps.
/// Gauge: `R_0 = I`. Datasets may carry externally computed rotations that
/// bypass this entirely.
pub fn estimate_global_rotations(g: &EgGraph) -> Result<Vec<Rotation>, GraphError> {
    let n = g.num_cameras();
    if n == 0 {
        return Ok(Vec::new());
    }
    let adj = g.adjacency();

    // BFS spanning tree from camera 0
    let mut rotations = vec![Rotation::identity(); n];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                rotations[v] = g.relative_rotation(u, v).unwrap() * rotations[u];
                queue.push_back(v);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(GraphError::DisconnectedGraph);
    }

    // iterative refinement: re-estimate each camera as the tangent-space
    // average of its neighbor-propagated predictions
    let tol_rad = ROTATION_TOL_DEG.to_radians();
    for _ in 0..ROTATION_SWEEP_LIMIT {
        let mut max_update = 0.0f64;
        for c in 1..n {
            if adj[c].is_empty() {
                continue;
            }
            let mut mean = nalgebra::Vector3::zeros();
            for &(nbr, _) in &adj[c] {
                let pred = g.relative_rotation(nbr, c).unwrap() * rotations[nbr];
                mean += (pred * rotations[c].inverse()).scaled_axis();
            }
            mean /= adj[c].len() as f64;
            let angle = mean.norm();
            max_update = max_update.max(angle);
            rotations[c] = Rotation::from_scaled_axis(&mean) * rotations[c];
        }
        if max_update < tol_rad {
            break;
        }
    }
    Ok(rotations)
}

/// Drop edges whose stored relative rotation disagrees with the global
/// orientations by more than `phi2_deg`.
pub fn filter_by_orientation(g: &EgGraph, rotations: &[Rotation], phi2_deg: f64) -> EgGraph {
    let keep: Vec<bool> = g
        .edges()
        .iter()
        .map(|e| {
            let rel = rotations[e.j] * rotations[e.i].inverse();
            geodesic_angle(&rel, &e.rotation) <= phi2_deg
        })
        .collect();
    g.retain_edges(&keep)
}

/// Greedy coverage selection: scan tracks in descending length order (ties
/// by ascending index) and keep any track containing a camera whose coverage
/// is still below `k`. Stops once every coverable camera reaches `k`.
pub fn select_tracks(tracks: &[FeatureTrack], num_cameras: usize, k: usize) -> TrackSelection {
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| tracks[b].len().cmp(&tracks[a].len()).then(a.cmp(&b)));

    let mut coverable = vec![false; num_cameras];
    for t in tracks {
        for cam in t.cameras() {
            coverable[cam] = true;
        }
    }
    let mut remaining = coverable.iter().filter(|&&c| c).count();

    let mut coverage = vec![0usize; num_cameras];
    let mut selected = Vec::new();
    for idx in order {
        if remaining == 0 {
            break;
        }
        let track = &tracks[idx];
        if track.cameras().any(|c| coverage[c] < k) {
            for cam in track.cameras() {
                coverage[cam] += 1;
                if coverage[cam] == k {
                    remaining -= 1;
                }
            }
            selected.push(idx);
        }
    }
    TrackSelection { selected, coverage }
}

/// Edge weight for track spanning trees: `1/M + alpha/theta` with `M` the
/// match count and `theta` the pair's triangulation angle for this track,
/// in degrees.
pub fn mst_edge_weight(matches: usize, theta_deg: f64, alpha: f64) -> f64 {
    let theta = theta_deg.max(1e-9);
    1.0 / (matches as f64).max(1.0) + alpha / theta
}

/// Triangulation angle (degrees) of a track's observation pair on one edge,
/// computed pair-locally by rotating camera j's bearing into camera i's frame.
pub fn track_edge_angle_deg(track: &FeatureTrack, edge: &EgEdge) -> Option<f64> {
    let obs_i = track.observation_for(edge.i)?;
    let obs_j = track.observation_for(edge.j)?;
    let b_j_in_i = edge.rotation.inverse().rotate_unit(&obs_j.bearing);
    Some(angle_between_deg(&obs_i.bearing, &b_j_in_i))
}

/// Minimum spanning tree of the track's induced EG subgraph under the
/// `1/M + alpha/theta` weight. Returns edge indices into `g`, sorted by
/// `(i, j)`; ties in weight break lexicographically by `(i, j)`.
pub fn track_mst(track: &FeatureTrack, g: &EgGraph, alpha: f64) -> Result<Vec<usize>, GraphError> {
    let cams: Vec<usize> = track.cameras().collect();
    let local: BTreeMap<usize, usize> = cams.iter().copied().zip(0..).collect();

    let mut candidates: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (a_pos, &a) in cams.iter().enumerate() {
        for &b in &cams[a_pos + 1..] {
            if let Some(idx) = g.edge_between(a, b) {
                let e = &g.edges()[idx];
                let theta = track_edge_angle_deg(track, e).expect("both cameras are on the track");
                let w = mst_edge_weight(e.matches, theta, alpha);
                candidates.push((w, e.i, e.j, idx));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut uf = UnionFind::new(cams.len());
    let mut tree = Vec::new();
    for (_, i, j, idx) in candidates {
        if uf.union(local[&i], local[&j]) {
            tree.push(idx);
        }
    }
    if tree.len() + 1 != cams.len() {
        return Err(GraphError::DisconnectedTrackSubgraph);
    }
    tree.sort_by_key(|&idx| (g.edges()[idx].i, g.edges()[idx].j));
    Ok(tree)
}

/// Draw unordered distinct tree-edge pairs uniformly with a seeded generator,
/// rejecting repeats, until every edge has been used at least twice. When all
/// distinct pairs are exhausted first, the multiset collected so far is
/// accepted. Usage counts per emission.
pub fn pair_edges_for_track(tree: &[usize], seed: u64) -> Result<Vec<(usize, usize)>, GraphError> {
    let n = tree.len();
    if n < 2 {
        return Err(GraphError::SingleEdgeTree);
    }
    let total_pairs = n * (n - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut usage = vec![0usize; n];
    let mut emitted = std::collections::BTreeSet::new();
    let mut pairs = Vec::new();
    while usage.iter().any(|&u| u < 2) {
        if emitted.len() == total_pairs {
            break;
        }
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let key = (a.min(b), a.max(b));
        if !emitted.insert(key) {
            continue;
        }
        usage[key.0] += 1;
        usage[key.1] += 1;
        pairs.push((tree[key.0], tree[key.1]));
    }
    Ok(pairs)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitVector;
    use nalgebra::Vector3;

    fn unit(x: f64, y: f64, z: f64) -> UnitVector {
        UnitVector::from_components(x, y, z).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
        let axis = unit(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64) + 1.5,
        );
        Rotation::from_axis_angle(&axis, rng.random_range(-3.0..3.0))
    }

    /// Ring of cameras with exact relative rotations, connected k-nearest.
    fn consistent_ring(n: usize, k: usize) -> (EgGraph, Vec<Rotation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rotations: Vec<Rotation> = (0..n).map(|_| random_rotation(&mut rng)).collect();
        let mut g = EgGraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                let d = (j - i).min(n - (j - i));
                if d <= k {
                    let rel = rotations[j] * rotations[i].inverse();
                    g.add_edge(i, j, rel, unit(1.0, 0.0, 0.0), 50).unwrap();
                }
            }
        }
        (g, rotations)
    }

    #[test]
    fn add_edge_normalizes_orientation() {
        let mut g = EgGraph::new(3);
        let r = Rotation::from_axis_angle(&UnitVector::z_axis(), 0.4);
        let t = unit(0.3, -0.2, 0.9);
        g.add_edge(2, 0, r, t, 10).unwrap();
        let e = &g.edges()[0];
        assert_eq!((e.i, e.j), (0, 2));
        // reversed edge must represent the same relative pose
        assert!(geodesic_angle(&e.rotation, &r.inverse()) < 1e-12);
        let expected_t = -(r.inverse().rotate(t.as_vector()));
        assert!((e.translation.as_vector() - expected_t).norm() < 1e-12);
    }

    #[test]
    fn duplicate_edges_rejected() {
        let mut g = EgGraph::new(3);
        let t = unit(1.0, 0.0, 0.0);
        g.add_edge(0, 1, Rotation::identity(), t, 1).unwrap();
        assert!(matches!(
            g.add_edge(1, 0, Rotation::identity(), t, 1),
            Err(GraphError::DuplicateEdge(0, 1))
        ));
    }

    #[test]
    fn loop_verification_keeps_consistent_loops() {
        let (g, _) = consistent_ring(8, 2);
        let filtered = verify_rotation_loops(&g, 5.0, 0);
        assert_eq!(filtered.edges().len(), g.edges().len());
    }

    #[test]
    fn loop_verification_keeps_triangle_free_graph() {
        let mut g = EgGraph::new(4);
        let t = unit(1.0, 0.0, 0.0);
        // a path has no triangles
        for i in 0..3 {
            g.add_edge(i, i + 1, Rotation::identity(), t, 1).unwrap();
        }
        let filtered = verify_rotation_loops(&g, 5.0, 0);
        assert_eq!(filtered.edges().len(), 3);
    }

    #[test]
    fn loop_verification_removes_corrupted_edge() {
        // k = 3 ring: every clean edge still sits in at least one clean
        // triangle after a single edge is corrupted, so exactly the bad edge
        // participates only in failing loops
        let (mut g, rotations) = consistent_ring(10, 3);
        let victim = g.edge_between(2, 3).unwrap();
        let bad = Rotation::from_axis_angle(&unit(0.1, 0.9, 0.3), 0.8)
            * (rotations[3] * rotations[2].inverse());
        g.edges[victim].rotation = bad;
        let filtered = verify_rotation_loops(&g, 5.0, 0);
        assert_eq!(filtered.edges().len(), g.edges().len() - 1);
        assert!(filtered.edge_between(2, 3).is_none());
    }

    #[test]
    fn rotation_estimation_exact_chain() {
        let (g, truth) = consistent_ring(12, 3);
        let est = estimate_global_rotations(&g).unwrap();
        // compare relative rotations, which are gauge-free
        for e in g.edges() {
            let rel_est = est[e.j] * est[e.i].inverse();
            let rel_true = truth[e.j] * truth[e.i].inverse();
            assert!(geodesic_angle(&rel_est, &rel_true) < 1e-8);
        }
    }

    #[test]
    fn rotation_estimation_two_cameras() {
        let mut g = EgGraph::new(2);
        let r01 = Rotation::from_axis_angle(&unit(0.2, 0.5, 1.0), 0.9);
        g.add_edge(0, 1, r01, unit(1.0, 0.0, 0.0), 1).unwrap();
        let est = estimate_global_rotations(&g).unwrap();
        assert!(geodesic_angle(&est[0], &Rotation::identity()) < 1e-12);
        assert!(geodesic_angle(&est[1], &r01) < 1e-12);
    }

    #[test]
    fn rotation_estimation_detects_disconnected() {
        let mut g = EgGraph::new(4);
        g.add_edge(0, 1, Rotation::identity(), unit(1.0, 0.0, 0.0), 1)
            .unwrap();
        g.add_edge(2, 3, Rotation::identity(), unit(1.0, 0.0, 0.0), 1)
            .unwrap();
        assert!(matches!(
            estimate_global_rotations(&g),
            Err(GraphError::DisconnectedGraph)
        ));
    }

    #[test]
    fn orientation_filter_keeps_exact_and_drops_corrupt() {
        let (mut g, rotations) = consistent_ring(8, 2);
        let clean = filter_by_orientation(&g, &rotations, 5.0);
        assert_eq!(clean.edges().len(), g.edges().len());

        let victim = g.edge_between(4, 5).unwrap();
        g.edges[victim].rotation = Rotation::from_axis_angle(&unit(0.0, 1.0, 0.2), 0.35)
            * g.edges[victim].rotation;
        let filtered = filter_by_orientation(&g, &rotations, 5.0);
        assert_eq!(filtered.edges().len(), g.edges().len() - 1);
        assert!(filtered.edge_between(4, 5).is_none());
    }

    #[test]
    fn orientation_filter_zero_threshold_drops_noisy_edges() {
        let (mut g, rotations) = consistent_ring(6, 1);
        for e in &mut g.edges {
            e.rotation = Rotation::from_axis_angle(&UnitVector::x_axis(), 1e-4) * e.rotation;
        }
        let filtered = filter_by_orientation(&g, &rotations, 0.0);
        assert_eq!(filtered.edges().len(), 0);
    }

    fn track_of(cams: &[usize]) -> FeatureTrack {
        let obs = cams
            .iter()
            .map(|&c| Observation::new(c, unit(0.0, 0.0, 1.0)))
            .collect();
        FeatureTrack::new(obs).unwrap()
    }

    #[test]
    fn select_tracks_single_cover() {
        let tracks = vec![track_of(&[0, 1, 2])];
        let sel = select_tracks(&tracks, 3, 1);
        assert_eq!(sel.selected, vec![0]);
        assert_eq!(sel.coverage, vec![1, 1, 1]);
    }

    #[test]
    fn select_tracks_matches_greedy_oracle() {
        // independent re-implementation of the documented greedy scan
        fn oracle(tracks: &[FeatureTrack], n: usize, k: usize) -> Vec<usize> {
            let mut order: Vec<usize> = (0..tracks.len()).collect();
            order.sort_by_key(|&i| (std::cmp::Reverse(tracks[i].len()), i));
            let mut cov = vec![0usize; n];
            let mut out = Vec::new();
            for i in order {
                let cams: Vec<usize> = tracks[i].cameras().collect();
                if cams.iter().all(|&c| cov[c] >= k) {
                    continue;
                }
                for &c in &cams {
                    cov[c] += 1;
                }
                out.push(i);
            }
            out
        }

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10;
        let tracks: Vec<FeatureTrack> = (0..200)
            .map(|_| {
                let len = rng.random_range(2..=6);
                let mut cams: Vec<usize> = (0..n).collect();
                for i in (1..cams.len()).rev() {
                    let j = rng.random_range(0..=i);
                    cams.swap(i, j);
                }
                track_of(&cams[..len])
            })
            .collect();

        let sel = select_tracks(&tracks, n, 2);
        assert_eq!(sel.selected, oracle(&tracks, n, 2));
        for c in 0..n {
            assert!(sel.coverage[c] >= 2, "camera {c} covered {}", sel.coverage[c]);
        }
    }

    #[test]
    fn select_tracks_order_independent_for_unique_lengths() {
        // with all track lengths distinct the tie-break never fires, so the
        // selected set of tracks does not depend on the input order
        let tracks: Vec<FeatureTrack> = (2..=9)
            .map(|len| track_of(&(0..len).collect::<Vec<_>>()))
            .collect();
        let sel = select_tracks(&tracks, 9, 2);

        let mut reversed: Vec<FeatureTrack> = tracks.clone();
        reversed.reverse();
        let sel_rev = select_tracks(&reversed, 9, 2);
        let remapped: std::collections::BTreeSet<usize> = sel_rev
            .selected
            .iter()
            .map(|&i| tracks.len() - 1 - i)
            .collect();
        let original: std::collections::BTreeSet<usize> = sel.selected.iter().copied().collect();
        assert_eq!(original, remapped);
        assert_eq!(sel.coverage, sel_rev.coverage);
    }

    #[test]
    fn mst_weight_formula() {
        let w = mst_edge_weight(100, 10.0, 0.1);
        assert!((w - 0.02).abs() < 1e-15);
    }

    fn graph_with_weights(n: usize, edges: &[(usize, usize, usize)]) -> (EgGraph, FeatureTrack) {
        // identical rotations; bearings arranged so every pair has the same
        // triangulation angle, making weights depend on matches only
        let mut g = EgGraph::new(n);
        for &(i, j, m) in edges {
            g.add_edge(i, j, Rotation::identity(), unit(1.0, 0.0, 0.0), m)
                .unwrap();
        }
        let track = track_of(&(0..n).collect::<Vec<_>>());
        (g, track)
    }

    #[test]
    fn track_mst_three_node_triangle() {
        // weights ~ 1/M: picks the two largest match counts
        let (g, track) = graph_with_weights(3, &[(0, 1, 100), (1, 2, 25), (0, 2, 50)]);
        let tree = track_mst(&track, &g, 0.0).unwrap();
        let pairs: Vec<(usize, usize)> = tree
            .iter()
            .map(|&i| (g.edges()[i].i, g.edges()[i].j))
            .collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn track_mst_matches_kruskal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 8;
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_range(0.0..1.0) < 0.55 {
                        edges.push((i, j, rng.random_range(1..500)));
                    }
                }
            }
            let (g, track) = graph_with_weights(n, &edges);
            match track_mst(&track, &g, 0.0) {
                Ok(tree) => {
                    assert_eq!(tree.len(), n - 1);
                    let total: f64 = tree
                        .iter()
                        .map(|&i| mst_edge_weight(g.edges()[i].matches, 90.0, 0.0))
                        .sum();
                    // oracle: plain Kruskal over (weight, edge) with the same angles
                    let mut sorted: Vec<(f64, usize)> = g
                        .edges()
                        .iter()
                        .enumerate()
                        .map(|(idx, e)| (mst_edge_weight(e.matches, 90.0, 0.0), idx))
                        .collect();
                    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                    let mut uf = UnionFind::new(n);
                    let mut oracle_total = 0.0;
                    let mut count = 0;
                    for (w, idx) in sorted {
                        let e = &g.edges()[idx];
                        if uf.union(e.i, e.j) {
                            oracle_total += w;
                            count += 1;
                        }
                    }
                    assert_eq!(count, n - 1);
                    assert!((total - oracle_total).abs() < 1e-12);
                }
                Err(GraphError::DisconnectedTrackSubgraph) => {
                    // oracle agrees: count components
                    let mut uf = UnionFind::new(n);
                    for e in g.edges() {
                        uf.union(e.i, e.j);
                    }
                    let roots: std::collections::BTreeSet<usize> =
                        (0..n).map(|i| uf.find(i)).collect();
                    assert!(roots.len() > 1);
                }
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
    }

    #[test]
    fn pair_edges_two_edge_tree() {
        let pairs = pair_edges_for_track(&[10, 20], 42).unwrap();
        assert_eq!(pairs, vec![(10, 20)]);
    }

    #[test]
    fn pair_edges_three_edge_tree_covers_everything() {
        let pairs = pair_edges_for_track(&[1, 2, 3], 42).unwrap();
        assert_eq!(pairs.len(), 3);
        let mut usage = std::collections::BTreeMap::new();
        for (a, b) in &pairs {
            *usage.entry(*a).or_insert(0) += 1;
            *usage.entry(*b).or_insert(0) += 1;
        }
        for id in [1, 2, 3] {
            assert!(usage[&id] >= 2);
        }
    }

    #[test]
    fn pair_edges_deterministic() {
        let tree: Vec<usize> = (0..7).collect();
        assert_eq!(
            pair_edges_for_track(&tree, 99).unwrap(),
            pair_edges_for_track(&tree, 99).unwrap()
        );
    }

    #[test]
    fn pair_edges_single_edge_is_error() {
        assert!(matches!(
            pair_edges_for_track(&[3], 0),
            Err(GraphError::SingleEdgeTree)
        ));
    }

    #[test]
    fn pair_edges_usage_reaches_two_on_larger_trees() {
        for seed in 0..20 {
            let tree: Vec<usize> = (0..9).collect();
            let pairs = pair_edges_for_track(&tree, seed).unwrap();
            let mut usage = vec![0usize; 9];
            for (a, b) in pairs {
                usage[a] += 1;
                usage[b] += 1;
            }
            assert!(usage.iter().all(|&u| u >= 2), "usage {usage:?}");
        }
    }

    #[test]
    fn components_and_largest_subgraph() {
        let mut g = EgGraph::new(6);
        let t = unit(1.0, 0.0, 0.0);
        g.add_edge(0, 1, Rotation::identity(), t, 1).unwrap();
        g.add_edge(1, 2, Rotation::identity(), t, 1).unwrap();
        g.add_edge(3, 4, Rotation::identity(), t, 1).unwrap();
        let comps = g.connected_components();
        assert_eq!(comps[0], vec![0, 1, 2]);
        let (sub, ids) = g.largest_component();
        assert_eq!(sub.num_cameras(), 3);
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(sub.edges().len(), 2);
    }

    #[test]
    fn filters_never_add_edges() {
        let (g, rotations) = consistent_ring(10, 3);
        let after_loops = verify_rotation_loops(&g, 5.0, 0);
        assert!(after_loops.edges().len() <= g.edges().len());
        let after_orient = filter_by_orientation(&after_loops, &rotations, 5.0);
        assert!(after_orient.edges().len() <= after_loops.edges().len());
        for e in after_orient.edges() {
            assert!(g.edge_between(e.i, e.j).is_some());
        }
    }

    #[test]
    fn track_observation_lookup() {
        let track = FeatureTrack::new(vec![
            Observation::new(5, unit(0.0, 0.0, 1.0)),
            Observation::new(2, unit(0.0, 1.0, 0.0)),
            Observation::new(9, unit(1.0, 0.0, 0.0)),
        ])
        .unwrap();
        assert_eq!(track.observation_for(2).unwrap().camera_id, 2);
        assert!(track.observation_for(3).is_none());
        let cams: Vec<usize> = track.cameras().collect();
        assert_eq!(cams, vec![2, 5, 9]);
        let _ = Vector3::<f64>::zeros();
    }
}
