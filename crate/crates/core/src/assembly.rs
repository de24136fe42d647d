//! Assembly of the sparse homogeneous system over stacked camera centers:
//! four-camera track constraints plus explicit gauge rows, and extraction of
//! camera centers from a solution vector.
//!
//! Scene points never enter the system; they were eliminated when two
//! triangle expressions for the same point were equated.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Rotation;
use crate::graph::{pair_edges_for_track, track_mst, EgGraph, FeatureTrack, TrackSelection};
use crate::pairwise::{baseline_direction, triangle_coefficients, TriangleCoefficients};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("both triangle coefficient sets come from camera pair ({0}, {1}); the equation is vacuous")]
    IdenticalPairs(usize, usize),
    #[error("no constraints survived filtering; the system is empty")]
    EmptySystem,
}

/// Origin of one 3-row block of the system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowBlockProvenance {
    Constraint {
        track: usize,
        pair_a: (usize, usize),
        pair_b: (usize, usize),
    },
    Gauge,
}

/// Homogeneous system `A x = 0` over `x = [c_0; c_1; ...; c_{N-1}]` in
/// coordinate (triplet) format. Entries are finalized row-major with
/// duplicate coordinates summed.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    block_provenance: Vec<RowBlockProvenance>,
}

impl SparseSystem {
    pub fn new(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            entries: Vec::new(),
            block_provenance: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn block_provenance(&self) -> &[RowBlockProvenance] {
        &self.block_provenance
    }

    pub fn num_gauge_rows(&self) -> usize {
        3 * self
            .block_provenance
            .iter()
            .filter(|p| **p == RowBlockProvenance::Gauge)
            .count()
    }

    /// Append a 3-row block given per-camera 3x3 coefficient blocks.
    pub fn push_block(&mut self, prov: RowBlockProvenance, blocks: &[(usize, Matrix3<f64>)]) {
        let base = self.rows;
        for (cam, m) in blocks {
            for r in 0..3 {
                for c in 0..3 {
                    let v = m[(r, c)];
                    if v != 0.0 {
                        self.entries.push((base + r, 3 * cam + c, v));
                    }
                }
            }
        }
        self.rows += 3;
        self.block_provenance.push(prov);
    }

    /// Sort entries row-major and sum duplicates.
    pub fn finalize(&mut self) {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        self.entries = out;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut x = vec![0.0; self.cols];
        for &(r, c, v) in &self.entries {
            x[c] += v * y[r];
        }
        x
    }

    pub fn residual_l1(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().map(|v| v.abs()).sum()
    }

    /// Dense copy, for small-system oracles and debugging.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Debug dump in Matrix Market coordinate text format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.rows, self.cols, self.entries.len())?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{} {} {:.16e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

/// Counters describing what assembly kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssemblyDiagnostics {
    /// (track, pair) triangles whose coefficients could not be computed.
    pub dropped_triangles: usize,
    /// Selected tracks that contributed no constraint rows.
    pub dropped_tracks: usize,
    /// Selected tracks that contributed at least one row block.
    pub tracks_used: usize,
    pub constraint_blocks: usize,
}

/// Per-camera coefficient blocks of one four-camera constraint:
/// `[(A_j - A_i)(c_i - c_j) + c_i + c_j] - [(A_l - A_k)(c_k - c_l) + c_k + c_l] = 0`,
/// with overlapping cameras accumulated.
pub fn build_constraint(
    tc_a: &TriangleCoefficients,
    tc_b: &TriangleCoefficients,
) -> Result<Vec<(usize, Matrix3<f64>)>, AssemblyError> {
    let pair_a = ordered(tc_a.cam_i, tc_a.cam_j);
    let pair_b = ordered(tc_b.cam_i, tc_b.cam_j);
    if pair_a == pair_b {
        return Err(AssemblyError::IdenticalPairs(pair_a.0, pair_a.1));
    }

    let id = Matrix3::identity();
    let d_a = tc_a.a_j - tc_a.a_i;
    let d_b = tc_b.a_j - tc_b.a_i;

    let mut acc: BTreeMap<usize, Matrix3<f64>> = BTreeMap::new();
    let mut add = |cam: usize, m: Matrix3<f64>| {
        *acc.entry(cam).or_insert_with(Matrix3::zeros) += m;
    };
    add(tc_a.cam_i, d_a + id);
    add(tc_a.cam_j, id - d_a);
    add(tc_b.cam_i, -(d_b + id));
    add(tc_b.cam_j, d_b - id);

    Ok(acc.into_iter().collect())
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Parameters for system assembly.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyParams {
    /// Combination weight in the spanning-tree edge weight `1/M + alpha/theta`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            seed: 0,
        }
    }
}

/// Derive a per-track RNG seed from the run seed (splitmix64 step).
pub fn track_seed(seed: u64, track: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add((track as u64).wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Build the full homogeneous system from the selected tracks: one 3-row
/// block per tree-edge pair per track, plus 3 gauge rows fixing the camera
/// centroid at the origin with weight `1/sqrt(N)`.
pub fn assemble_system(
    g: &EgGraph,
    rotations: &[Rotation],
    tracks: &[FeatureTrack],
    selection: &TrackSelection,
    params: &AssemblyParams,
) -> Result<(SparseSystem, AssemblyDiagnostics), AssemblyError> {
    struct TrackResult {
        order: usize,
        track: usize,
        blocks: Vec<(RowBlockProvenance, Vec<(usize, Matrix3<f64>)>)>,
        dropped_triangles: usize,
    }

    let per_track: Vec<TrackResult> = selection
        .selected
        .par_iter()
        .enumerate()
        .map(|(order, &ti)| {
            let track = &tracks[ti];
            let mut result = TrackResult {
                order,
                track: ti,
                blocks: Vec::new(),
                dropped_triangles: 0,
            };
            let Ok(tree) = track_mst(track, g, params.alpha) else {
                return result;
            };
            let Ok(pairs) = pair_edges_for_track(&tree, track_seed(params.seed, ti)) else {
                return result;
            };

            // triangle coefficients per tree edge, computed once
            let mut coeffs: BTreeMap<usize, Option<TriangleCoefficients>> = BTreeMap::new();
            for &eidx in &tree {
                let e = &g.edges()[eidx];
                let obs_i = track.observation_for(e.i).expect("tree edge is on track");
                let obs_j = track.observation_for(e.j).expect("tree edge is on track");
                let tc = triangle_coefficients(
                    &rotations[e.i],
                    &rotations[e.j],
                    &e.translation,
                    obs_i,
                    obs_j,
                );
                if tc.is_err() {
                    result.dropped_triangles += 1;
                }
                coeffs.insert(eidx, tc.ok());
            }

            for (ea, eb) in pairs {
                let (Some(Some(tc_a)), Some(Some(tc_b))) = (coeffs.get(&ea), coeffs.get(&eb))
                else {
                    continue;
                };
                if let Ok(blocks) = build_constraint(tc_a, tc_b) {
                    let prov = RowBlockProvenance::Constraint {
                        track: ti,
                        pair_a: ordered(tc_a.cam_i, tc_a.cam_j),
                        pair_b: ordered(tc_b.cam_i, tc_b.cam_j),
                    };
                    result.blocks.push((prov, blocks));
                }
            }
            result
        })
        .collect();

    // deterministic row assignment: order by selection position
    let mut sorted = per_track;
    sorted.sort_by_key(|r| r.order);

    let n = g.num_cameras();
    let mut system = SparseSystem::new(3 * n);
    let mut diag = AssemblyDiagnostics::default();
    for tr in &sorted {
        diag.dropped_triangles += tr.dropped_triangles;
        if tr.blocks.is_empty() {
            diag.dropped_tracks += 1;
            continue;
        }
        diag.tracks_used += 1;
        for (prov, blocks) in &tr.blocks {
            system.push_block(prov.clone(), blocks);
            diag.constraint_blocks += 1;
        }
        let _ = tr.track;
    }

    if diag.constraint_blocks == 0 {
        return Err(AssemblyError::EmptySystem);
    }

    // gauge: (1/sqrt(N)) * sum_i c_i = 0, one row per coordinate
    let w = 1.0 / (n as f64).sqrt();
    let gauge_blocks: Vec<(usize, Matrix3<f64>)> =
        (0..n).map(|cam| (cam, Matrix3::identity() * w)).collect();
    system.push_block(RowBlockProvenance::Gauge, &gauge_blocks);

    system.finalize();
    Ok((system, diag))
}

/// Camera centers recovered from a solution vector, with sign and gauge
/// fixed, plus solve bookkeeping filled in by the caller.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub centers: Vec<Vector3<f64>>,
    pub residual_l1: f64,
    pub iterations: usize,
    pub dropped_triangles: usize,
    pub dropped_tracks: usize,
    pub sign_flipped: bool,
}

/// Unstack camera centers from a unit solution vector, resolve the mirror
/// ambiguity by majority vote of `(c_j - c_i) . c_ij` over EG edges, and
/// re-center the result at the origin.
pub fn extract_positions(
    x: &[f64],
    system: &SparseSystem,
    g: &EgGraph,
    rotations: &[Rotation],
) -> SolveReport {
    let n = g.num_cameras();
    debug_assert_eq!(x.len(), 3 * n);
    let mut centers: Vec<Vector3<f64>> = (0..n)
        .map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
        .collect();

    let mut positive = 0usize;
    let mut negative = 0usize;
    for e in g.edges() {
        let c_ij = baseline_direction(&rotations[e.j], &e.translation);
        let d = (centers[e.j] - centers[e.i]).dot(c_ij.as_vector());
        if d > 0.0 {
            positive += 1;
        } else if d < 0.0 {
            negative += 1;
        }
    }
    let sign_flipped = negative > positive;
    if sign_flipped {
        for c in &mut centers {
            *c = -*c;
        }
    }

    let mean = centers.iter().sum::<Vector3<f64>>() / (n as f64).max(1.0);
    for c in &mut centers {
        *c -= mean;
    }

    let stacked: Vec<f64> = centers.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
    let residual_l1 = system.residual_l1(&stacked);

    SolveReport {
        centers,
        residual_l1,
        iterations: 0,
        dropped_triangles: 0,
        dropped_tracks: 0,
        sign_flipped,
    }
}
