//! On-disk sequences: a JSON manifest, one tensor container per frame and a
//! ground-truth pose file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pggtrack_core::simulator::{NoiseConfig, SceneConfig};
use pggtrack_core::{FrameBundle, GridShape, HeatmapStack, HumanEmbedding, Pose, ScalarField, Skeleton, VectorField2};

use crate::atomic::{read_json, write_json};
use crate::container::{read_container, write_container, Tensor};
use crate::error::CliError;
use crate::records::{check_joint_names, pose_to_record, records_to_pose, FrameRecord, PosesDocument, SequencePoses};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
/// Suggested pipeline settings written next to simulated sequences.
pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSize {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRef {
    pub time_index: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub frame_count: usize,
    pub grid: GridSize,
    pub skeleton: Skeleton,
    pub frames: Vec<FrameRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SequenceManifest {
    pub fn shape(&self) -> Result<GridShape, CliError> {
        Ok(GridShape::new(self.grid.width, self.grid.height)?)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.shape()?;
        if self.frames.len() != self.frame_count {
            return Err(CliError::invalid("frame_count disagrees with the frame list"));
        }
        if self.frames.windows(2).any(|w| w[0].time_index >= w[1].time_index) {
            return Err(CliError::invalid("frames must be listed in increasing time order"));
        }
        for f in &self.frames {
            check_relative(&f.file)?;
        }
        if let Some(g) = &self.ground_truth {
            check_relative(g)?;
        }
        Ok(())
    }
}

fn check_relative(name: &str) -> Result<(), CliError> {
    let p = Path::new(name);
    if name.is_empty() || p.is_absolute() || p.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
        return Err(CliError::invalid(format!("manifest file reference {name:?} must be a plain relative path")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub manifest: SequenceManifest,
    pub frames: Vec<FrameBundle>,
}

fn dims(shape: GridShape) -> (u32, u32) {
    (shape.height() as u32, shape.width() as u32)
}

fn f32s(v: impl IntoIterator<Item = f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

fn vector_tensor(name: &str, f: &VectorField2) -> Tensor {
    let (h, w) = dims(f.shape());
    Tensor::f32(name, vec![h, w, 2], f32s(f.to_interleaved()))
}

/// Field tensors of one frame. Values are stored as 32-bit floats.
pub fn frame_tensors(frame: &FrameBundle) -> Vec<Tensor> {
    let shape = frame.shape();
    let (h, w) = dims(shape);
    let j = frame.heatmaps.joint_count() as u32;
    let mut out = vec![
        Tensor::f32("heatmaps", vec![j, h, w], f32s(frame.heatmaps.to_flat())),
        Tensor::f32("ke", vec![h, w], f32s(frame.ke.values().iter().copied())),
        Tensor::f32(
            "aux",
            vec![frame.aux_maps.len() as u32, h, w],
            f32s(frame.aux_maps.iter().flat_map(|m| m.values().iter().copied())),
        ),
        vector_tensor("svf", &frame.svf),
    ];
    if let (Some(f), Some(b)) = (&frame.tvf_forward, &frame.tvf_backward) {
        out.push(vector_tensor("tvf_forward", f));
        out.push(vector_tensor("tvf_backward", b));
    }
    let k = frame.he_vectors.len() as u32;
    let e = frame.he_vectors.first().map_or(0, HumanEmbedding::len) as u32;
    out.push(Tensor::f32(
        "he_vectors",
        vec![k, e],
        f32s(frame.he_vectors.iter().flat_map(|h| h.vector.iter().copied())),
    ));
    out.push(Tensor::f32(
        "he_anchors",
        vec![k, 2],
        f32s(frame.he_vectors.iter().flat_map(|h| h.anchor)),
    ));
    // -1 marks an unknown identity; ids stay exact below 2^24
    out.push(Tensor::f32(
        "he_ids",
        vec![k],
        frame.he_vectors.iter().map(|h| h.person_id.map_or(-1.0, |i| i as f32)).collect(),
    ));
    out
}

fn find<'a>(tensors: &'a [Tensor], name: &str, want: &[u32]) -> Result<Option<&'a [f32]>, CliError> {
    let Some(t) = tensors.iter().find(|t| t.name == name) else {
        return Ok(None);
    };
    if t.dims != want {
        return Err(CliError::invalid(format!("tensor {name:?} has dims {:?}, expected {want:?}", t.dims)));
    }
    t.as_f32()
        .map(Some)
        .ok_or_else(|| CliError::invalid(format!("tensor {name:?} must hold 32-bit floats")))
}

fn require<'a>(tensors: &'a [Tensor], name: &str, want: &[u32]) -> Result<&'a [f32], CliError> {
    find(tensors, name, want)?.ok_or_else(|| CliError::invalid(format!("missing tensor {name:?}")))
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Rebuilds a frame from its tensors.
pub fn frame_from_tensors(
    tensors: &[Tensor],
    shape: GridShape,
    joints: usize,
    time_index: usize,
    ground_truth: Option<Vec<Pose>>,
) -> Result<FrameBundle, CliError> {
    let (h, w) = dims(shape);
    let heat = require(tensors, "heatmaps", &[joints as u32, h, w])?;
    let heatmaps = HeatmapStack::from_flat(shape, joints, &widen(heat))?;
    let ke = ScalarField::new(shape, widen(require(tensors, "ke", &[h, w])?))?;
    let aux_t = tensors
        .iter()
        .find(|t| t.name == "aux")
        .ok_or_else(|| CliError::invalid("missing tensor \"aux\""))?;
    let maps = aux_t.dims.first().copied().unwrap_or(0);
    let aux = require(tensors, "aux", &[maps, h, w])?;
    let aux_maps = aux
        .chunks_exact(shape.len().max(1))
        .map(|c| ScalarField::new(shape, widen(c)))
        .collect::<Result<Vec<_>, _>>()?;
    let svf = VectorField2::from_interleaved(shape, &widen(require(tensors, "svf", &[h, w, 2])?))?;
    let tvf = |name: &str| -> Result<Option<VectorField2>, CliError> {
        find(tensors, name, &[h, w, 2])?
            .map(|v| VectorField2::from_interleaved(shape, &widen(v)).map_err(CliError::from))
            .transpose()
    };
    let (tvf_forward, tvf_backward) = (tvf("tvf_forward")?, tvf("tvf_backward")?);

    let ids = tensors.iter().find(|t| t.name == "he_ids");
    let k = ids.and_then(|t| t.dims.first().copied()).unwrap_or(0);
    let he_vectors = if k == 0 {
        Vec::new()
    } else {
        let e = tensors
            .iter()
            .find(|t| t.name == "he_vectors")
            .and_then(|t| t.dims.get(1).copied())
            .unwrap_or(0);
        let vecs = require(tensors, "he_vectors", &[k, e])?;
        let anchors = require(tensors, "he_anchors", &[k, 2])?;
        let ids = require(tensors, "he_ids", &[k])?;
        (0..k as usize)
            .map(|i| {
                let id = (ids[i] >= 0.0).then_some(ids[i] as u32);
                let anchor = [anchors[2 * i] as f64, anchors[2 * i + 1] as f64];
                let v = widen(&vecs[i * e as usize..(i + 1) * e as usize]);
                HumanEmbedding::new(id, anchor, v).map_err(CliError::from)
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let frame = FrameBundle {
        time_index,
        heatmaps,
        ke,
        aux_maps,
        svf,
        tvf_forward,
        tvf_backward,
        he_vectors,
        ground_truth,
    };
    frame.validate()?;
    Ok(frame)
}

pub fn frame_file_name(time_index: usize) -> String {
    format!("frame_{time_index:05}.pggt")
}

/// Writes frames, ground truth and finally the manifest. Frame files are
/// written in parallel on the current thread pool.
pub fn write_sequence(dir: &Path, manifest: &SequenceManifest, frames: &[FrameBundle]) -> Result<(), CliError> {
    manifest.validate()?;
    if frames.len() != manifest.frames.len() {
        return Err(CliError::invalid("manifest lists a different number of frames"));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    frames
        .par_iter()
        .zip(manifest.frames.par_iter())
        .try_for_each(|(f, r)| write_container(&dir.join(&r.file), &frame_tensors(f)))?;
    if let Some(gt_file) = &manifest.ground_truth {
        let doc = PosesDocument {
            joint_names: manifest.skeleton.joint_names().to_vec(),
            sequences: vec![SequencePoses {
                sequence_id: manifest.sequence_id.clone(),
                frames: frames
                    .iter()
                    .map(|f| FrameRecord {
                        time_index: f.time_index,
                        poses: f
                            .ground_truth
                            .iter()
                            .flatten()
                            .map(|p| pose_to_record(p, &manifest.skeleton))
                            .collect(),
                    })
                    .collect(),
            }],
        };
        write_json(&dir.join(gt_file), &doc)?;
    }
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

pub fn read_manifest(dir: &Path) -> Result<SequenceManifest, CliError> {
    let m: SequenceManifest = read_json(&dir.join(MANIFEST_FILE))?;
    m.validate()?;
    Ok(m)
}

/// Ground truth per listed frame, in manifest order.
pub fn read_ground_truth(dir: &Path, manifest: &SequenceManifest) -> Result<Option<Vec<Vec<Pose>>>, CliError> {
    let Some(file) = &manifest.ground_truth else {
        return Ok(None);
    };
    let doc: PosesDocument = read_json(&dir.join(file))?;
    check_joint_names(&doc.joint_names, &manifest.skeleton)?;
    let seq = doc
        .sequences
        .iter()
        .find(|s| s.sequence_id == manifest.sequence_id)
        .ok_or_else(|| CliError::invalid("ground truth does not cover this sequence"))?;
    manifest
        .frames
        .iter()
        .map(|r| {
            let fr = seq
                .frames
                .iter()
                .find(|f| f.time_index == r.time_index)
                .ok_or_else(|| CliError::invalid(format!("no ground truth for frame {}", r.time_index)))?;
            fr.poses
                .iter()
                .map(|p| records_to_pose(&p.keypoints, p.person_id, &manifest.skeleton))
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Loads every frame the manifest lists; frames parse in parallel.
pub fn read_sequence(dir: &Path) -> Result<Sequence, CliError> {
    let manifest = read_manifest(dir)?;
    let shape = manifest.shape()?;
    let joints = manifest.skeleton.joint_count();
    let gt = read_ground_truth(dir, &manifest)?;
    let frames = manifest
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let tensors = read_container(&dir.join(&r.file))?;
            let g = gt.as_ref().map(|g| g[i].clone());
            frame_from_tensors(&tensors, shape, joints, r.time_index, g)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sequence { manifest, frames })
}

/// `root` itself when it holds a manifest, else its subdirectories that do,
/// sorted by name.
pub fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| CliError::io(root, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(root, e))?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::invalid(format!("{} holds no sequence manifest", root.display())));
    }
    Ok(dirs)
}
