//! Synthetic multi-person scenes and the dense fields a trained keypoint
//! network would predict for them.
//!
//! Trajectories live in world coordinates and are projected through a
//! camera that can zoom about the grid center and pan. Keypoints are
//! rounded to whole pixels, so every field identity holds exactly at
//! keypoint pixels when noise is off.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::frame::{FrameBundle, HumanEmbedding};
use crate::grid::{GridShape, Keypoint, Pose, ScalarField, Skeleton, VectorField2};
use crate::heatmap::{render_confidence, HeatmapStack, DEFAULT_SIGMA};
use crate::math;
use crate::spatial::{ground_truth_order, OrderRelation};
use crate::temporal::DEFAULT_EMBEDDING_LEN;
use crate::tracker::TrackerConfig;
use crate::{Error, Result};

/// Joint offsets of the default skeleton as fractions of body height.
const TEMPLATE: [[f64; 2]; 15] = [
    [0.0, -0.50],
    [0.0, -0.32],
    [-0.12, -0.30],
    [0.12, -0.30],
    [-0.17, -0.12],
    [0.17, -0.12],
    [-0.19, 0.06],
    [0.19, 0.06],
    [-0.08, 0.04],
    [0.08, 0.04],
    [-0.09, 0.27],
    [0.09, 0.27],
    [-0.10, 0.50],
    [0.10, 0.50],
    [0.0, 0.04],
];

/// Joints that swing with articulation, with their phase offsets.
const LIMB_PHASE: [(usize, f64); 8] = [
    (4, 0.0),
    (5, core::f64::consts::PI),
    (6, 0.4),
    (7, core::f64::consts::PI + 0.4),
    (10, core::f64::consts::PI),
    (11, 0.0),
    (12, core::f64::consts::PI + 0.4),
    (13, 0.4),
];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CameraConfig {
    /// Multiplicative zoom per frame; reverses at the limits.
    pub zoom_rate: f64,
    pub zoom_limits: [f64; 2],
    /// Pan velocity in pixels per frame; each axis reverses at the limit.
    pub pan: [f64; 2],
    pub pan_limit: f64,
    /// Standard deviation of a per-frame random pan offset.
    pub shake: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            zoom_rate: 1.0,
            zoom_limits: [0.25, 4.0],
            pan: [0.0, 0.0],
            pan_limit: 1e9,
            shake: 0.0,
        }
    }
}

/// Frames `[start, start + frames)` during which a person is hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Occlusion {
    pub person: usize,
    pub start: usize,
    pub frames: usize,
}

/// A person exists for frames `[enter, exit)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lifetime {
    pub person: usize,
    pub enter: usize,
    pub exit: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SceneConfig {
    pub people: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub skeleton: Skeleton,
    pub body_height: f64,
    /// Horizontal distance between neighboring people at frame 0.
    pub spacing: f64,
    /// Bound on random per-axis velocity (pixels per frame).
    pub speed: f64,
    /// Explicit velocities, one per person; overrides `speed` when set.
    pub velocities: Vec<[f64; 2]>,
    /// Limb swing amplitude as a fraction of body height.
    pub articulation: f64,
    /// Limb swing rate in radians per frame.
    pub articulation_rate: f64,
    pub camera: CameraConfig,
    pub occlusions: Vec<Occlusion>,
    pub lifetimes: Vec<Lifetime>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            people: 2,
            frames: 30,
            width: 128,
            height: 96,
            skeleton: Skeleton::default_15(),
            body_height: 32.0,
            spacing: 40.0,
            speed: 0.5,
            velocities: Vec::new(),
            articulation: 0.03,
            articulation_rate: 0.3,
            camera: CameraConfig::default(),
            occlusions: Vec::new(),
            lifetimes: Vec::new(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(self.width, self.height)
    }

    fn margin(&self) -> f64 {
        0.5 * self.body_height * (1.0 + 2.0 * self.articulation) + 2.0
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if self.frames == 0 {
            return Err(Error::invalid("scene needs at least one frame"));
        }
        if self.skeleton.joint_count() != TEMPLATE.len() {
            return Err(Error::invalid("the simulator draws the 15-joint skeleton only"));
        }
        if !(self.body_height >= 8.0) {
            return Err(Error::invalid("body height must be at least 8 pixels"));
        }
        let usable = self.width as f64 - 2.0 * self.margin();
        if self.people > 0 && (usable < 0.0 || (self.people - 1) as f64 * self.spacing > usable) {
            return Err(Error::invalid("more people than the grid fits"));
        }
        if self.body_height + 4.0 > self.height as f64 {
            return Err(Error::invalid("body height exceeds the grid"));
        }
        if !self.velocities.is_empty() && self.velocities.len() != self.people {
            return Err(Error::invalid("one velocity per person"));
        }
        let c = &self.camera;
        if !(c.zoom_rate > 0.0 && c.zoom_limits[0] > 0.0 && c.zoom_limits[0] <= 1.0 && c.zoom_limits[1] >= 1.0) {
            return Err(Error::invalid("zoom rate and limits must be positive and bracket 1"));
        }
        if !(c.shake >= 0.0 && c.pan_limit >= 0.0 && self.speed >= 0.0 && self.articulation >= 0.0) {
            return Err(Error::invalid("motion magnitudes must be non-negative"));
        }
        if self.occlusions.iter().map(|o| o.person).chain(self.lifetimes.iter().map(|l| l.person)).any(|p| p >= self.people) {
            return Err(Error::invalid("occlusion or lifetime names an unknown person"));
        }
        Ok(())
    }
}

/// Per-frame camera: `image = center + zoom * (world - center) + pan`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraState {
    pub zoom: f64,
    pub pan: [f64; 2],
}

impl CameraState {
    fn project(&self, world: [f64; 2], center: [f64; 2]) -> [f64; 2] {
        [
            center[0] + self.zoom * (world[0] - center[0]) + self.pan[0],
            center[1] + self.zoom * (world[1] - center[1]) + self.pan[1],
        ]
    }
}

/// Generated ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    /// Visible people per frame, with person ids.
    pub frames: Vec<Vec<Pose>>,
    pub cameras: Vec<CameraState>,
    /// World-space person centers per frame.
    pub world_centers: Vec<Vec<[f64; 2]>>,
}

impl Scene {
    pub fn shape(&self) -> GridShape {
        self.config.shape().expect("validated at generation")
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn pose_of(&self, t: usize, id: u32) -> Option<&Pose> {
        self.frames[t].iter().find(|p| p.person_id == Some(id))
    }

    /// Apparent motion of a world point between frames `t - 1` and `t` due
    /// to the camera alone.
    fn camera_motion(&self, t: usize, world: [f64; 2]) -> f64 {
        let c = self.grid_center();
        let a = self.cameras[t - 1].project(world, c);
        let b = self.cameras[t].project(world, c);
        math::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]))
    }

    fn grid_center(&self) -> [f64; 2] {
        [
            (self.config.width as f64 - 1.0) / 2.0,
            (self.config.height as f64 - 1.0) / 2.0,
        ]
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("non-negative finite deviation")
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const LATENT_STREAM: u64 = u64::MAX;

fn reflect(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if *pos < lo {
        *pos = 2.0 * lo - *pos;
        *vel = -*vel;
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
    *pos = pos.clamp(lo, hi);
}

/// Deterministic trajectories and visible poses for every frame.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let shape = cfg.shape()?;
    let mut rng = frame_rng(cfg.seed, 0);
    let w = cfg.width as f64;
    let h = cfg.height as f64;
    let margin = cfg.margin();
    let k = cfg.people;
    let mut pos: Vec<[f64; 2]> = (0..k)
        .map(|i| [w / 2.0 + (i as f64 - (k as f64 - 1.0) / 2.0) * cfg.spacing, h / 2.0])
        .collect();
    let mut vel: Vec<[f64; 2]> = if cfg.velocities.is_empty() {
        let u = Uniform::new_inclusive(-cfg.speed, cfg.speed).expect("valid speed range");
        (0..k).map(|_| [u.sample(&mut rng), u.sample(&mut rng)]).collect()
    } else {
        cfg.velocities.clone()
    };
    let phase_dist = Uniform::new(0.0, core::f64::consts::TAU).expect("valid range");
    let phases: Vec<f64> = (0..k).map(|_| phase_dist.sample(&mut rng)).collect();
    let shake = normal(cfg.camera.shake);

    let mut cam = CameraState {
        zoom: 1.0,
        pan: [0.0, 0.0],
    };
    let mut zoom_rate = cfg.camera.zoom_rate;
    let mut pan_rate = cfg.camera.pan;
    let center = [(w - 1.0) / 2.0, (h - 1.0) / 2.0];
    let (ht, nk) = (cfg.skeleton.head_top(), cfg.skeleton.neck());

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut cameras = Vec::with_capacity(cfg.frames);
    let mut world_centers = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            for (p, v) in pos.iter_mut().zip(vel.iter_mut()) {
                p[0] += v[0];
                p[1] += v[1];
                reflect(&mut p[0], &mut v[0], margin, w - 1.0 - margin);
                reflect(&mut p[1], &mut v[1], margin, h - 1.0 - margin);
            }
            let z = cam.zoom * zoom_rate;
            if z < cfg.camera.zoom_limits[0] || z > cfg.camera.zoom_limits[1] {
                zoom_rate = 1.0 / zoom_rate;
            }
            cam.zoom *= zoom_rate;
            for a in 0..2 {
                let next = cam.pan[a] + pan_rate[a];
                if next.abs() > cfg.camera.pan_limit {
                    pan_rate[a] = -pan_rate[a];
                }
                cam.pan[a] += pan_rate[a];
            }
        }
        let jolt = [shake.sample(&mut rng), shake.sample(&mut rng)];
        let view = CameraState {
            zoom: cam.zoom,
            pan: [cam.pan[0] + jolt[0], cam.pan[1] + jolt[1]],
        };
        let mut poses = Vec::new();
        for i in 0..k {
            if !visible(cfg, i, t) {
                continue;
            }
            let mut kps = vec![None; TEMPLATE.len()];
            for (j, off) in TEMPLATE.iter().enumerate() {
                let mut o = *off;
                if let Some(&(_, ph)) = LIMB_PHASE.iter().find(|(lj, _)| *lj == j) {
                    let a = phases[i] + ph + cfg.articulation_rate * t as f64;
                    o[0] += cfg.articulation * math::sin(a);
                    o[1] += 0.5 * cfg.articulation * math::cos(a);
                }
                let world = [pos[i][0] + cfg.body_height * o[0], pos[i][1] + cfg.body_height * o[1]];
                let img = view.project(world, center);
                let (x, y) = (math::round(img[0]), math::round(img[1]));
                if shape.contains(x, y) {
                    kps[j] = Some(Keypoint::new(j, x, y, 1.0));
                }
            }
            if kps[ht].is_some() && kps[nk].is_some() {
                poses.push(Pose::from_slots_unchecked(kps, Some(i as u32)));
            }
        }
        frames.push(poses);
        cameras.push(view);
        world_centers.push(pos.clone());
    }
    Ok(Scene {
        config: cfg.clone(),
        frames,
        cameras,
        world_centers,
    })
}

fn visible(cfg: &SceneConfig, person: usize, t: usize) -> bool {
    let alive = cfg
        .lifetimes
        .iter()
        .filter(|l| l.person == person)
        .all(|l| t >= l.enter && t < l.exit);
    let hidden = cfg
        .occlusions
        .iter()
        .any(|o| o.person == person && t >= o.start && t < o.start + o.frames);
    alive && !hidden
}

/// Appearance-vector disturbance: during each window, people are paired
/// (0 with 1, 2 with 3, ...) and each vector is mixed toward its partner's.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeSpike {
    pub start: usize,
    pub frames: usize,
    pub mix: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NoiseConfig {
    /// Additive Gaussian noise on heatmaps before clipping to `[0, 1]`.
    pub heatmap: f64,
    /// Keypoint-embedding value step between consecutive person ids.
    pub ke_spacing: f64,
    pub ke_jitter: f64,
    /// Value step between consecutive ranks on the ordinal maps.
    pub aux_spacing: f64,
    /// Noise level of embeddings and vector fields away from people.
    pub background: f64,
    pub svf_jitter: f64,
    pub tvf_jitter: f64,
    /// Per-person offset on temporal fields, in units of the camera-induced
    /// apparent motion at that person.
    pub tvf_camera_noise: f64,
    pub he_dim: usize,
    /// Expected distance between two people's appearance vectors is about
    /// `sqrt(2) * he_scale`.
    pub he_scale: f64,
    pub he_jitter: f64,
    /// Appearance drift per frame, along a fixed random direction.
    pub he_drift: f64,
    pub he_spikes: Vec<HeSpike>,
    /// Probability that a painted embedding pixel carries another person's
    /// value.
    pub confusion: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            heatmap: 0.0,
            ke_spacing: 10.0,
            ke_jitter: 0.0,
            aux_spacing: 5.0,
            background: 0.0,
            svf_jitter: 0.0,
            tvf_jitter: 0.0,
            tvf_camera_noise: 0.0,
            he_dim: DEFAULT_EMBEDDING_LEN,
            he_scale: 25.0,
            he_jitter: 0.0,
            he_drift: 0.0,
            he_spikes: Vec::new(),
            confusion: 0.0,
        }
    }
}

impl NoiseConfig {
    /// Every noise source switched off.
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.heatmap,
            self.ke_spacing,
            self.ke_jitter,
            self.aux_spacing,
            self.background,
            self.svf_jitter,
            self.tvf_jitter,
            self.tvf_camera_noise,
            self.he_scale,
            self.he_jitter,
            self.he_drift,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise levels must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.confusion) {
            return Err(Error::invalid("confusion must be a probability"));
        }
        if self.he_dim == 0 {
            return Err(Error::invalid("human embedding needs at least one component"));
        }
        if self.he_spikes.iter().any(|s| !(0.0..=1.0).contains(&s.mix)) {
            return Err(Error::invalid("spike mix must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Nearest visible joint owner (index into the frame's poses) of each
/// pixel within the paint radius.
fn ownership(shape: GridShape, poses: &[Pose], radius: f64) -> Vec<Option<usize>> {
    let mut best = vec![f64::INFINITY; shape.len()];
    let mut owner = vec![None; shape.len()];
    let r = radius as isize;
    let r2 = radius * radius;
    for (k, pose) in poses.iter().enumerate() {
        for kp in pose.present() {
            let (cx, cy) = (kp.x as isize, kp.y as isize);
            for y in (cy - r).max(0)..=(cy + r).min(shape.height() as isize - 1) {
                for x in (cx - r).max(0)..=(cx + r).min(shape.width() as isize - 1) {
                    let d = (x as f64 - kp.x) * (x as f64 - kp.x) + (y as f64 - kp.y) * (y as f64 - kp.y);
                    let i = shape.index(x as usize, y as usize);
                    if d <= r2 && d < best[i] {
                        best[i] = d;
                        owner[i] = Some(k);
                    }
                }
            }
        }
    }
    owner
}

/// Appearance latents: `(identity, drift direction)` per person.
fn he_latents(scene: &Scene, noise: &NoiseConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = frame_rng(scene.config.seed, LATENT_STREAM);
    let n = normal(1.0);
    (0..scene.config.people)
        .map(|_| {
            let z: Vec<f64> = (0..noise.he_dim).map(|_| n.sample(&mut rng)).collect();
            let mut d: Vec<f64> = (0..noise.he_dim).map(|_| n.sample(&mut rng)).collect();
            let norm = math::sqrt(d.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
            for v in &mut d {
                *v /= norm;
            }
            (z, d)
        })
        .collect()
}

/// Field bundle for frame `t` of a scene.
pub fn synth_frame(scene: &Scene, t: usize, noise: &NoiseConfig) -> Result<FrameBundle> {
    let latents = he_latents(scene, noise);
    synth_frame_with(scene, t, noise, &latents)
}

/// Field bundles for every frame.
pub fn synth_sequence(scene: &Scene, noise: &NoiseConfig) -> Result<Vec<FrameBundle>> {
    let latents = he_latents(scene, noise);
    (0..scene.frame_count())
        .map(|t| synth_frame_with(scene, t, noise, &latents))
        .collect()
}

fn synth_frame_with(
    scene: &Scene,
    t: usize,
    noise: &NoiseConfig,
    latents: &[(Vec<f64>, Vec<f64>)],
) -> Result<FrameBundle> {
    noise.validate()?;
    if t >= scene.frame_count() {
        return Err(Error::invalid("frame index beyond the scene"));
    }
    let cfg = &scene.config;
    let shape = scene.shape();
    let joints = cfg.skeleton.joint_count();
    let mut rng = frame_rng(cfg.seed, t as u64 + 1);
    let cur = &scene.frames[t];
    let radius = 2.0 * DEFAULT_SIGMA;

    let clean = render_confidence(cur, DEFAULT_SIGMA, shape, joints)?;
    let heatmaps = if noise.heatmap > 0.0 {
        let n = normal(noise.heatmap);
        let flat: Vec<f64> = clean
            .to_flat()
            .into_iter()
            .map(|v| (v + n.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        HeatmapStack::from_flat(shape, joints, &flat)?
    } else {
        clean
    };

    let owner = ownership(shape, cur, radius);
    let bg = normal(noise.background);
    let ke_j = normal(noise.ke_jitter);
    let ke_value = |k: usize| scene.frames[t][k].person_id.unwrap_or(0) as f64 * noise.ke_spacing;
    let mut ke = Vec::with_capacity(shape.len());
    for o in &owner {
        let v = match o {
            Some(k) => {
                let mut who = *k;
                if cur.len() > 1 && noise.confusion > 0.0 && Uniform::new(0.0, 1.0).unwrap().sample(&mut rng) < noise.confusion {
                    let shift = 1 + (Uniform::new(0, cur.len() - 1).unwrap().sample(&mut rng));
                    who = (who + shift) % cur.len();
                }
                ke_value(who) + ke_j.sample(&mut rng)
            }
            None => bg.sample(&mut rng),
        };
        ke.push(v);
    }
    let ke = ScalarField::new(shape, ke)?;

    let mut aux_maps = Vec::with_capacity(6);
    for rel in OrderRelation::ALL {
        let ord = ground_truth_order(cur, rel, &cfg.skeleton)?;
        let rank: Vec<f64> = (0..cur.len())
            .map(|k| (0..cur.len()).filter(|&o| o != k && ord.get(o, k) > 0).count() as f64)
            .collect();
        let mut vals = Vec::with_capacity(shape.len());
        for o in &owner {
            vals.push(match o {
                Some(k) => rank[*k] * noise.aux_spacing + ke_j.sample(&mut rng),
                None => bg.sample(&mut rng),
            });
        }
        aux_maps.push(ScalarField::new(shape, vals)?);
    }

    let centers: Vec<[f64; 2]> = cur.iter().map(Pose::center).collect();
    let svf = offset_field(shape, &owner, &centers, noise.svf_jitter, noise.background, &mut rng)?;

    let (tvf_forward, tvf_backward) = if t > 0 {
        let prev = &scene.frames[t - 1];
        let prev_owner = ownership(shape, prev, radius);
        let cam = normal(1.0);
        // frame-t people point at their previous centers
        let fwd_targets: Vec<[f64; 2]> = cur
            .iter()
            .map(|p| {
                let id = p.person_id.expect("scene poses carry ids");
                match scene.pose_of(t - 1, id) {
                    Some(q) => {
                        let c = q.center();
                        let s = noise.tvf_camera_noise * scene.camera_motion(t, scene.world_centers[t - 1][id as usize]);
                        [c[0] + s * cam.sample(&mut rng), c[1] + s * cam.sample(&mut rng)]
                    }
                    None => p.center(),
                }
            })
            .collect();
        let bwd_targets: Vec<[f64; 2]> = prev
            .iter()
            .map(|q| {
                let id = q.person_id.expect("scene poses carry ids");
                match scene.pose_of(t, id) {
                    Some(p) => {
                        let c = p.center();
                        let s = noise.tvf_camera_noise * scene.camera_motion(t, scene.world_centers[t - 1][id as usize]);
                        [c[0] + s * cam.sample(&mut rng), c[1] + s * cam.sample(&mut rng)]
                    }
                    None => q.center(),
                }
            })
            .collect();
        let f = offset_field(shape, &owner, &fwd_targets, noise.tvf_jitter, noise.background, &mut rng)?;
        let b = offset_field(shape, &prev_owner, &bwd_targets, noise.tvf_jitter, noise.background, &mut rng)?;
        (Some(f), Some(b))
    } else {
        (None, None)
    };

    let scale = 1.0 / math::sqrt(noise.he_dim as f64);
    let jit = normal(noise.he_jitter * scale);
    let mut he_vectors = Vec::with_capacity(cur.len());
    for (k, p) in cur.iter().enumerate() {
        let id = p.person_id.expect("scene poses carry ids") as usize;
        let spike = noise.he_spikes.iter().find(|s| t >= s.start && t < s.start + s.frames);
        let partner = id ^ 1;
        let mix = match spike {
            Some(s) if partner < latents.len() => s.mix,
            _ => 0.0,
        };
        let (z, d) = &latents[id];
        let zp = &latents[partner.min(latents.len() - 1)].0;
        let v: Vec<f64> = (0..noise.he_dim)
            .map(|e| {
                let base = (1.0 - mix) * z[e] + mix * zp[e];
                noise.he_scale * scale * base + noise.he_drift * t as f64 * d[e] + jit.sample(&mut rng)
            })
            .collect();
        he_vectors.push(HumanEmbedding::new(Some(id as u32), centers[k], v)?);
    }

    let bundle = FrameBundle {
        time_index: t,
        heatmaps,
        ke,
        aux_maps,
        svf,
        tvf_forward,
        tvf_backward,
        he_vectors,
        ground_truth: Some(cur.clone()),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// `p - target[owner]` plus jitter where owned, background noise elsewhere.
fn offset_field(
    shape: GridShape,
    owner: &[Option<usize>],
    targets: &[[f64; 2]],
    jitter: f64,
    background: f64,
    rng: &mut ChaCha8Rng,
) -> Result<VectorField2> {
    let j = normal(jitter);
    let bg = normal(background);
    let mut vals = Vec::with_capacity(shape.len());
    for (i, o) in owner.iter().enumerate() {
        let (x, y) = shape.pixel(i);
        vals.push(match o {
            Some(k) => {
                let c = targets[*k];
                [x as f64 - c[0] + j.sample(rng), y as f64 - c[1] + j.sample(rng)]
            }
            None => [bg.sample(rng), bg.sample(rng)],
        });
    }
    VectorField2::new(shape, vals)
}

/// Association settings matched to a scene's noise levels.
///
/// The gate admits any same-person pair: half the expected appearance
/// distance between two different people, plus three standard deviations
/// of the temporal-embedding error (field jitter and camera-induced
/// error), plus a floor.
pub fn calibrated_tracker(scene: &SceneConfig, noise: &NoiseConfig) -> TrackerConfig {
    let base = TrackerConfig::default();
    let he_between = 2.0 * noise.he_scale * noise.he_scale;
    let cam = &scene.camera;
    let half_diag = 0.5 * math::sqrt((scene.width * scene.width + scene.height * scene.height) as f64);
    let pan = math::sqrt(cam.pan[0] * cam.pan[0] + cam.pan[1] * cam.pan[1]);
    let zoom = (cam.zoom_rate.max(1.0 / cam.zoom_rate) - 1.0) * cam.zoom_limits[1] * half_diag;
    let motion = pan + zoom + 2.0 * cam.shake;
    let cam_noise = noise.tvf_camera_noise * motion;
    let per_axis = noise.tvf_jitter * noise.tvf_jitter + noise.svf_jitter * noise.svf_jitter + cam_noise * cam_noise;
    let tie_within = 2.0 * 9.0 * per_axis;
    TrackerConfig {
        gate: 0.5 * base.lambda_he * he_between + base.lambda_tie * tie_within + GATE_FLOOR,
        ..base
    }
}

const GATE_FLOOR: f64 = 100.0;

pub const PRESET_NAMES: [&str; 6] = ["basic", "zoom", "fast_motion", "pose_change", "occlusion", "crossing"];

/// Named scene and noise settings.
///
/// `basic` is a noiseless scene with two to five people (chosen by the
/// seed). The others reproduce specific association failure modes.
pub fn scenario_preset(name: &str, seed: u64) -> Result<(SceneConfig, NoiseConfig)> {
    let base = SceneConfig {
        seed,
        ..SceneConfig::default()
    };
    let quiet = NoiseConfig {
        ke_jitter: 0.05,
        svf_jitter: 0.5,
        tvf_jitter: 0.5,
        he_jitter: 1.0,
        he_drift: 0.05,
        background: 0.05,
        ..NoiseConfig::default()
    };
    Ok(match name {
        "basic" => (
            SceneConfig {
                people: 2 + (seed % 4) as usize,
                width: 192,
                spacing: 36.0,
                ..base
            },
            NoiseConfig::noiseless(),
        ),
        "zoom" => (
            SceneConfig {
                people: 3,
                spacing: 36.0,
                speed: 0.3,
                camera: CameraConfig {
                    zoom_rate: 1.05,
                    zoom_limits: [0.85, 1.15],
                    pan: [3.0, 0.0],
                    pan_limit: 9.0,
                    shake: 0.0,
                },
                ..base
            },
            NoiseConfig {
                tvf_camera_noise: 8.0,
                he_scale: 40.0,
                ..quiet
            },
        ),
        "fast_motion" => (
            SceneConfig {
                people: 3,
                spacing: 36.0,
                speed: 4.0,
                ..base
            },
            quiet,
        ),
        "pose_change" => (
            SceneConfig {
                people: 2,
                spacing: 40.0,
                articulation: 0.12,
                articulation_rate: 0.6,
                ..base
            },
            NoiseConfig {
                he_spikes: vec![
                    HeSpike {
                        start: 8,
                        frames: 4,
                        mix: 0.6,
                    },
                    HeSpike {
                        start: 18,
                        frames: 4,
                        mix: 0.6,
                    },
                ],
                ..quiet
            },
        ),
        "occlusion" => (
            SceneConfig {
                people: 3,
                spacing: 36.0,
                occlusions: vec![Occlusion {
                    person: 1,
                    start: 12,
                    frames: 3,
                }],
                ..base
            },
            quiet,
        ),
        "crossing" => (
            SceneConfig {
                people: 2,
                spacing: 60.0,
                speed: 0.0,
                velocities: vec![[2.0, 0.3], [-2.0, -0.3]],
                ..base
            },
            quiet,
        ),
        other => {
            let mut msg = String::from("unknown scenario preset: ");
            msg.push_str(other);
            return Err(Error::InvalidInput(msg));
        }
    })
}
