//! Per-frame decoding and whole-sequence tracking built from the
//! individual stages.

use alloc::vec::Vec;

use crate::decoder::{greedy_decode, DecodeConfig};
use crate::frame::{FrameBundle, HumanEmbedding};
use crate::grid::{Pose, ScalarField, Skeleton, VectorField2};
use crate::heatmap::{extract_peaks, pose_mask, PeakConfig, DEFAULT_TAU};
use crate::metrics::{Evaluator, MetricsReport, DEFAULT_PCKH_FACTOR};
use crate::pgg::{refine, EmbeddingSource, PggConfig};
use crate::spatial::decode_sie;
use crate::temporal::{decode_tie, CenterFields};
use crate::tracker::{poses_at, Detection, Tracker, TrackerConfig, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    pub peaks: PeakConfig,
    pub mask_tau: f64,
    /// Refine KE and SIE inside the pose mask before decoding.
    pub use_pgg: bool,
    pub pgg: PggConfig,
    pub decode: DecodeConfig,
    pub tracker: TrackerConfig,
    pub pckh_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            peaks: PeakConfig::default(),
            mask_tau: DEFAULT_TAU,
            use_pgg: true,
            pgg: PggConfig::default(),
            decode: DecodeConfig::default(),
            tracker: TrackerConfig::default(),
            pckh_factor: DEFAULT_PCKH_FACTOR,
        }
    }
}

/// KE and SIE after optional mask-restricted refinement; pixels outside the
/// mask keep their raw values.
pub fn grouping_fields(ke: &ScalarField, svf: &VectorField2, frame_heatmaps: &crate::HeatmapStack, cfg: &PipelineConfig) -> Result<(ScalarField, VectorField2)> {
    let sie = decode_sie(svf);
    if !cfg.use_pgg {
        return Ok((ke.clone(), sie));
    }
    let mask = pose_mask(frame_heatmaps, cfg.mask_tau)?;
    let refined = refine(&[EmbeddingSource::Scalar(ke), EmbeddingSource::Vector(&sie)], &mask, &cfg.pgg)?;
    let mut ke_out = ke.values().to_vec();
    let mut sie_out = sie.values().to_vec();
    for i in mask.indices() {
        let v = refined.at(i).expect("masked pixels are present");
        ke_out[i] = v[0];
        sie_out[i] = [v[1], v[2]];
    }
    Ok((ScalarField::new(ke.shape(), ke_out)?, VectorField2::new(ke.shape(), sie_out)?))
}

/// Peaks, grouping and appearance lookup for one frame.
pub fn decode_frame(frame: &FrameBundle, cfg: &PipelineConfig) -> Result<Vec<Detection>> {
    let peaks = extract_peaks(&frame.heatmaps, &cfg.peaks)?;
    let (ke, sie) = grouping_fields(&frame.ke, &frame.svf, &frame.heatmaps, cfg)?;
    let poses = greedy_decode(&peaks, &ke, &sie, &cfg.decode)?;
    Ok(poses
        .into_iter()
        .map(|pose| {
            let he = nearest_embedding(&pose, &frame.he_vectors).cloned();
            Detection { pose, he }
        })
        .collect())
}

/// Appearance vector whose anchor lies closest to the pose center.
pub fn nearest_embedding<'a>(pose: &Pose, candidates: &'a [HumanEmbedding]) -> Option<&'a HumanEmbedding> {
    let c = pose.center();
    candidates.iter().min_by(|a, b| {
        let sq = |p: [f64; 2]| (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
        let (da, db) = (sq(a.anchor), sq(b.anchor));
        da.total_cmp(&db)
    })
}

/// Decodes and associates frames one at a time, never looking ahead.
pub fn track_sequence(frames: &[FrameBundle], cfg: &PipelineConfig, skeleton: &Skeleton) -> Result<Vec<Trajectory>> {
    let mut tracker = Tracker::new();
    let mut prev_sie: Option<VectorField2> = None;
    for (i, frame) in frames.iter().enumerate() {
        if i > 0 && frame.time_index <= frames[i - 1].time_index {
            return Err(Error::invalid("frames must be in time order"));
        }
        frame.validate()?;
        let detections = decode_frame(frame, cfg)?;
        let sie = decode_sie(&frame.svf);
        let temporal = match (&frame.tvf_forward, &frame.tvf_backward, &prev_sie) {
            (Some(f), Some(b), Some(_)) if i > 0 && frames[i - 1].time_index + 1 == frame.time_index => {
                Some((decode_tie(f), decode_tie(b)))
            }
            _ => None,
        };
        let fields = match (&temporal, &prev_sie) {
            (Some((f, b)), Some(p)) => Some(CenterFields {
                sie_t: &sie,
                sie_prev: p,
                tie_forward: f,
                tie_backward: b,
            }),
            _ => None,
        };
        tracker.associate(frame.time_index, detections, fields.as_ref(), &cfg.tracker, skeleton.oks_kappa())?;
        prev_sie = Some(sie);
    }
    Ok(tracker.into_trajectories())
}

/// Scores tracked poses against the frames' ground truth.
pub fn evaluate_tracks(
    evaluator: &mut Evaluator,
    frames: &[FrameBundle],
    trajectories: &[Trajectory],
) -> Result<()> {
    for f in frames {
        let gt = f
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::invalid("frame has no ground truth"))?;
        evaluator.add_frame(&poses_at(trajectories, f.time_index), gt)?;
    }
    evaluator.next_sequence();
    Ok(())
}

/// Track and evaluate one sequence end to end.
pub fn run_sequence(frames: &[FrameBundle], cfg: &PipelineConfig, skeleton: &Skeleton) -> Result<MetricsReport> {
    let tracks = track_sequence(frames, cfg, skeleton)?;
    let mut ev = Evaluator::new(skeleton.clone(), cfg.pckh_factor)?;
    evaluate_tracks(&mut ev, frames, &tracks)?;
    Ok(ev.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_scene, scenario_preset, synth_sequence, NoiseConfig, SceneConfig};

    #[test]
    fn noiseless_basic_scene_is_perfect() {
        let (scene_cfg, _) = scenario_preset("basic", 3).unwrap();
        let scene = generate_scene(&SceneConfig { frames: 6, ..scene_cfg }).unwrap();
        let noise = NoiseConfig {
            he_dim: 16,
            ..NoiseConfig::noiseless()
        };
        let frames = synth_sequence(&scene, &noise).unwrap();
        let r = run_sequence(&frames, &PipelineConfig::default(), &scene.config.skeleton).unwrap();
        assert_eq!(r.total_ap(), Some(1.0));
        assert_eq!(r.total_mota(), Some(1.0));
    }

    #[test]
    fn single_frame_gives_one_track_per_person() {
        let scene = generate_scene(&SceneConfig {
            people: 3,
            frames: 1,
            ..SceneConfig::default()
        })
        .unwrap();
        let noise = NoiseConfig {
            he_dim: 8,
            ..NoiseConfig::noiseless()
        };
        let frames = synth_sequence(&scene, &noise).unwrap();
        let t = track_sequence(&frames, &PipelineConfig::default(), &scene.config.skeleton).unwrap();
        assert_eq!(t.len(), 3);
        assert!(track_sequence(&[], &PipelineConfig::default(), &scene.config.skeleton).unwrap().is_empty());
    }
}
