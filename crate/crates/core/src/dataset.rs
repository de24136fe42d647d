//! Dataset file format: cameras, optional world-to-camera rotations,
//! pairwise geometries and bearing tracks as JSON, with floats written at 17
//! significant digits so files round-trip bit-exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Rotation, UnitVector};
use crate::graph::{EgGraph, FeatureTrack};
use crate::pairwise::Observation;
use crate::simulator::{CorruptionManifest, SyntheticScene};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Serialize any value as compact JSON with every float at 17 significant
/// digits (scientific form), the crate-wide on-disk convention.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits17);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json writes utf-8"))
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let text = to_json_string(value)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

struct SigDigits17;

impl serde_json::ser::Formatter for SigDigits17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetCamera {
    pub id: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetRotation {
    pub id: u32,
    /// Unit quaternion, w x y z.
    pub q: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetEg {
    pub i: u32,
    pub j: u32,
    /// Relative rotation `R_ij` as a unit quaternion, w x y z.
    pub q: [f64; 4],
    /// Relative translation direction in camera j's frame.
    pub t: [f64; 3],
    pub matches: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetObservation {
    pub cam: u32,
    pub bearing: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<DatasetCamera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotations: Option<Vec<DatasetRotation>>,
    pub egs: Vec<DatasetEg>,
    pub tracks: Vec<Vec<DatasetObservation>>,
}

/// Ground-truth sidecar written next to simulated datasets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthFile {
    pub cameras: Vec<TruthCamera>,
    pub points: Vec<[f64; 3]>,
    pub corruption: TruthCorruption,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthCamera {
    pub id: u32,
    pub q: [f64; 4],
    pub c: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct TruthCorruption {
    pub eg_outliers: Vec<[u32; 2]>,
    pub obs_outliers: Vec<[u32; 2]>,
}

impl Dataset {
    pub fn from_scene(scene: &SyntheticScene, include_rotations: bool) -> Self {
        let cameras = (0..scene.cameras.len() as u32)
            .map(|id| DatasetCamera { id })
            .collect();
        let rotations = include_rotations.then(|| {
            scene
                .cameras
                .iter()
                .enumerate()
                .map(|(id, cam)| DatasetRotation {
                    id: id as u32,
                    q: cam.rotation.quaternion_wxyz(),
                })
                .collect()
        });
        let egs = scene
            .graph
            .edges()
            .iter()
            .map(|e| {
                let t = e.translation.as_vector();
                DatasetEg {
                    i: e.i as u32,
                    j: e.j as u32,
                    q: e.rotation.quaternion_wxyz(),
                    t: [t.x, t.y, t.z],
                    matches: e.matches as u32,
                }
            })
            .collect();
        let tracks = scene
            .tracks
            .iter()
            .map(|t| {
                t.observations()
                    .iter()
                    .map(|o| {
                        let b = o.bearing.as_vector();
                        DatasetObservation {
                            cam: o.camera_id as u32,
                            bearing: [b.x, b.y, b.z],
                        }
                    })
                    .collect()
            })
            .collect();
        Dataset {
            cameras,
            rotations,
            egs,
            tracks,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        write_json_file(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl TruthFile {
    pub fn from_scene(scene: &SyntheticScene) -> Self {
        let cameras = scene
            .cameras
            .iter()
            .enumerate()
            .map(|(id, cam)| TruthCamera {
                id: id as u32,
                q: cam.rotation.quaternion_wxyz(),
                c: [cam.center.x, cam.center.y, cam.center.z],
            })
            .collect();
        let points = scene.points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let corruption = TruthCorruption {
            eg_outliers: scene
                .manifest
                .eg_outliers
                .iter()
                .map(|&(i, j)| [i as u32, j as u32])
                .collect(),
            obs_outliers: scene
                .manifest
                .obs_outliers
                .iter()
                .map(|&(t, c)| [t as u32, c as u32])
                .collect(),
        };
        TruthFile {
            cameras,
            points,
            corruption,
        }
    }

    pub fn manifest(&self) -> CorruptionManifest {
        CorruptionManifest {
            eg_outliers: self
                .corruption
                .eg_outliers
                .iter()
                .map(|&[i, j]| (i as usize, j as usize))
                .collect(),
            obs_outliers: self
                .corruption
                .obs_outliers
                .iter()
                .map(|&[t, c]| (t as usize, c as usize))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        write_json_file(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A dataset decoded into solver-ready form: dense camera indices, an EG
/// graph, optional trusted rotations, and bearing tracks.
#[derive(Debug)]
pub struct LoadedDataset {
    /// Dense index -> original camera id.
    pub camera_ids: Vec<u32>,
    pub graph: EgGraph,
    pub rotations: Option<Vec<Rotation>>,
    pub tracks: Vec<FeatureTrack>,
    /// Human-readable notes emitted during validation (e.g. renormalized
    /// vectors); the CLI forwards these to stderr.
    pub warnings: Vec<String>,
}

/// Renormalize a stored vector, warning when it deviates from unit norm by
/// more than 1e-6.
fn load_unit(
    raw: [f64; 3],
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<UnitVector, DatasetError> {
    let v = nalgebra::Vector3::new(raw[0], raw[1], raw[2]);
    let norm = v.norm();
    if norm < 1e-9 {
        return Err(DatasetError::Invalid(format!(
            "{what} has near-zero norm {norm:.3e}"
        )));
    }
    if (norm - 1.0).abs() > 1e-6 {
        warnings.push(format!(
            "{what} has norm {norm:.9}; renormalized on load"
        ));
    }
    Ok(UnitVector::new(v).expect("norm checked"))
}

pub fn decode_dataset(ds: &Dataset) -> Result<LoadedDataset, DatasetError> {
    let mut warnings = Vec::new();

    let mut id_to_index = BTreeMap::new();
    for (idx, cam) in ds.cameras.iter().enumerate() {
        if id_to_index.insert(cam.id, idx).is_some() {
            return Err(DatasetError::Invalid(format!(
                "duplicate camera id {}",
                cam.id
            )));
        }
    }
    let camera_ids: Vec<u32> = ds.cameras.iter().map(|c| c.id).collect();
    let lookup = |id: u32, what: &str| -> Result<usize, DatasetError> {
        id_to_index
            .get(&id)
            .copied()
            .ok_or_else(|| DatasetError::Invalid(format!("{what} references unknown camera {id}")))
    };

    let mut graph = EgGraph::new(ds.cameras.len());
    for (k, eg) in ds.egs.iter().enumerate() {
        let i = lookup(eg.i, "eg")?;
        let j = lookup(eg.j, "eg")?;
        let rotation = Rotation::from_quaternion_wxyz(eg.q[0], eg.q[1], eg.q[2], eg.q[3])
            .map_err(|e| DatasetError::Invalid(format!("eg {k} quaternion: {e}")))?;
        let translation = load_unit(eg.t, &format!("eg {k} translation"), &mut warnings)?;
        graph
            .add_edge(i, j, rotation, translation, eg.matches as usize)
            .map_err(|e| DatasetError::Invalid(format!("eg {k}: {e}")))?;
    }

    let rotations = match &ds.rotations {
        None => None,
        Some(rows) => {
            let mut out = vec![None; ds.cameras.len()];
            for r in rows {
                let idx = lookup(r.id, "rotation")?;
                let rot = Rotation::from_quaternion_wxyz(r.q[0], r.q[1], r.q[2], r.q[3])
                    .map_err(|e| {
                        DatasetError::Invalid(format!("rotation for camera {}: {e}", r.id))
                    })?;
                out[idx] = Some(rot);
            }
            let missing: Vec<u32> = out
                .iter()
                .zip(&camera_ids)
                .filter(|(r, _)| r.is_none())
                .map(|(_, id)| *id)
                .collect();
            if !missing.is_empty() {
                return Err(DatasetError::Invalid(format!(
                    "rotations present but missing for cameras {missing:?}"
                )));
            }
            Some(out.into_iter().map(|r| r.unwrap()).collect())
        }
    };

    let mut tracks = Vec::with_capacity(ds.tracks.len());
    for (ti, track) in ds.tracks.iter().enumerate() {
        let mut obs = Vec::with_capacity(track.len());
        for o in track {
            let cam = lookup(o.cam, &format!("track {ti}"))?;
            let bearing = load_unit(
                o.bearing,
                &format!("track {ti} bearing (camera {})", o.cam),
                &mut warnings,
            )?;
            obs.push(Observation::new(cam, bearing));
        }
        let track = FeatureTrack::new(obs)
            .map_err(|e| DatasetError::Invalid(format!("track {ti}: {e}")))?;
        tracks.push(track);
    }

    Ok(LoadedDataset {
        camera_ids,
        graph,
        rotations,
        tracks,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_scene, Layout, SceneConfig};

    fn sample_scene() -> SyntheticScene {
        generate_scene(&SceneConfig::new(Layout::Orbit, 8, 120, 3)).unwrap()
    }

    #[test]
    fn roundtrip_is_value_and_byte_identical() {
        let scene = sample_scene();
        let ds = Dataset::from_scene(&scene, true);
        let text = to_json_string(&ds).unwrap();
        let reloaded: Dataset = serde_json::from_str(&text).unwrap();
        assert_eq!(ds, reloaded);
        assert_eq!(text, to_json_string(&reloaded).unwrap());
    }

    #[test]
    fn float_formatting_has_17_significant_digits() {
        #[derive(Serialize)]
        struct V {
            x: f64,
        }
        let text = to_json_string(&V { x: 1.0 }).unwrap();
        assert_eq!(text, "{\"x\":1.0000000000000000e0}");
        let text = to_json_string(&V { x: -0.12345 }).unwrap();
        assert_eq!(text, "{\"x\":-1.2345000000000000e-1}");
        // parses back to the same bits
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["x"].as_f64().unwrap(), -0.12345);
    }

    #[test]
    fn decode_validates_and_maps_ids() {
        let scene = sample_scene();
        let mut ds = Dataset::from_scene(&scene, true);
        // remap camera ids to a sparse range; all references must follow
        let remap = |id: u32| id * 10 + 3;
        for c in &mut ds.cameras {
            c.id = remap(c.id);
        }
        for r in ds.rotations.as_mut().unwrap() {
            r.id = remap(r.id);
        }
        for e in &mut ds.egs {
            e.i = remap(e.i);
            e.j = remap(e.j);
        }
        for t in &mut ds.tracks {
            for o in t {
                o.cam = remap(o.cam);
            }
        }
        let loaded = decode_dataset(&ds).unwrap();
        assert_eq!(loaded.camera_ids[2], 23);
        assert_eq!(loaded.graph.num_cameras(), scene.cameras.len());
        assert_eq!(loaded.graph.edges().len(), scene.graph.edges().len());
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn decode_rejects_unknown_camera() {
        let scene = sample_scene();
        let mut ds = Dataset::from_scene(&scene, false);
        ds.egs[0].i = 999;
        assert!(matches!(
            decode_dataset(&ds),
            Err(DatasetError::Invalid(_))
        ));
    }

    #[test]
    fn decode_warns_on_denormalized_vectors() {
        let scene = sample_scene();
        let mut ds = Dataset::from_scene(&scene, false);
        for v in &mut ds.egs[0].t {
            *v *= 1.001;
        }
        let loaded = decode_dataset(&ds).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        // and the loaded vector is unit again
        let e = &loaded.graph.edges()[0];
        assert!((e.translation.as_vector().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_rejects_zero_norm_bearing() {
        let scene = sample_scene();
        let mut ds = Dataset::from_scene(&scene, false);
        ds.tracks[0][0].bearing = [0.0, 0.0, 0.0];
        assert!(matches!(
            decode_dataset(&ds),
            Err(DatasetError::Invalid(_))
        ));
    }

    #[test]
    fn truth_sidecar_roundtrip() {
        let mut scene = sample_scene();
        scene.manifest.eg_outliers.push((1, 4));
        scene.manifest.obs_outliers.push((7, 2));
        let truth = TruthFile::from_scene(&scene);
        let text = to_json_string(&truth).unwrap();
        let reloaded: TruthFile = serde_json::from_str(&text).unwrap();
        assert_eq!(truth, reloaded);
        assert_eq!(reloaded.manifest(), scene.manifest);
    }
}
