//! JSON documents for poses and tracks. Keypoints are keyed by joint name.

use serde::{Deserialize, Serialize};

use pggtrack_core::decoder::pose_score;
use pggtrack_core::tracker::Trajectory;
use pggtrack_core::{Keypoint, Pose, Skeleton};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRecord {
    pub joint: String,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<u32>,
    pub score: f64,
    pub keypoints: Vec<KeypointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub time_index: usize,
    pub poses: Vec<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequencePoses {
    pub sequence_id: String,
    pub frames: Vec<FrameRecord>,
}

/// Output of `decode`, and the ground-truth file of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosesDocument {
    pub joint_names: Vec<String>,
    pub sequences: Vec<SequencePoses>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPose {
    pub time_index: usize,
    pub score: f64,
    pub keypoints: Vec<KeypointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: u32,
    pub poses: Vec<TimedPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceTracks {
    pub sequence_id: String,
    pub tracks: Vec<TrackRecord>,
}

/// Output of `track`, input of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracksDocument {
    pub joint_names: Vec<String>,
    pub sequences: Vec<SequenceTracks>,
}

pub fn keypoints_to_records(pose: &Pose, skeleton: &Skeleton) -> Vec<KeypointRecord> {
    pose.present()
        .map(|k| KeypointRecord {
            joint: skeleton.joint_names()[k.joint].clone(),
            x: k.x,
            y: k.y,
            confidence: k.confidence,
        })
        .collect()
}

pub fn pose_to_record(pose: &Pose, skeleton: &Skeleton) -> PoseRecord {
    PoseRecord {
        person_id: pose.person_id,
        score: pose_score(pose),
        keypoints: keypoints_to_records(pose, skeleton),
    }
}

pub fn records_to_pose(keypoints: &[KeypointRecord], person_id: Option<u32>, skeleton: &Skeleton) -> Result<Pose, CliError> {
    let mut slots: Vec<Option<Keypoint>> = vec![None; skeleton.joint_count()];
    for r in keypoints {
        let j = skeleton
            .joint_index(&r.joint)
            .ok_or_else(|| CliError::invalid(format!("unknown joint {:?}", r.joint)))?;
        if slots[j].is_some() {
            return Err(CliError::invalid(format!("joint {:?} listed twice in one pose", r.joint)));
        }
        slots[j] = Some(Keypoint::new(j, r.x, r.y, r.confidence));
    }
    Ok(Pose::new(slots, person_id)?)
}

pub fn tracks_to_record(sequence_id: &str, trajectories: &[Trajectory], skeleton: &Skeleton) -> SequenceTracks {
    SequenceTracks {
        sequence_id: sequence_id.to_string(),
        tracks: trajectories
            .iter()
            .map(|t| TrackRecord {
                track_id: t.id,
                poses: t
                    .poses
                    .iter()
                    .map(|(time_index, pose)| TimedPose {
                        time_index: *time_index,
                        score: pose_score(pose),
                        keypoints: keypoints_to_records(pose, skeleton),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Tracked poses per frame, each carrying its track id as person id.
pub fn poses_by_frame(tracks: &SequenceTracks, skeleton: &Skeleton) -> Result<std::collections::BTreeMap<usize, Vec<Pose>>, CliError> {
    let mut out: std::collections::BTreeMap<usize, Vec<Pose>> = Default::default();
    for t in &tracks.tracks {
        for p in &t.poses {
            out.entry(p.time_index)
                .or_default()
                .push(records_to_pose(&p.keypoints, Some(t.track_id), skeleton)?);
        }
    }
    Ok(out)
}

pub fn check_joint_names(names: &[String], skeleton: &Skeleton) -> Result<(), CliError> {
    if names != skeleton.joint_names() {
        return Err(CliError::invalid("joint names differ from the sequence skeleton"));
    }
    Ok(())
}
