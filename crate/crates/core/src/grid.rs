//! Dense 2-D fields, skeleton definition and pose records.
//!
//! Fields are row-major with the origin at the top-left pixel, x growing to
//! the right and y growing downwards. Pixel centers sit on integer
//! coordinates.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::heatmap::HeatmapStack;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridShape {
    width: usize,
    height: usize,
}

impl GridShape {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid dimensions must be at least 1x1"));
        }
        Ok(GridShape { width, height })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.nearest_pixel(x, y).is_some()
    }

    /// Row-major index of the pixel whose center is nearest to `(x, y)`, or
    /// `None` when that pixel lies outside the grid.
    pub fn nearest_pixel(&self, x: f64, y: f64) -> Option<usize> {
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        let (px, py) = (math::round(x), math::round(y));
        if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
            return None;
        }
        Some(self.index(px as usize, py as usize))
    }

    /// Like [`nearest_pixel`](Self::nearest_pixel) but clamps to the border.
    pub fn clamped_pixel(&self, x: f64, y: f64) -> usize {
        let cx = clamp_coord(x, self.width);
        let cy = clamp_coord(y, self.height);
        self.index(cx, cy)
    }
}

fn clamp_coord(v: f64, extent: usize) -> usize {
    let r = math::round(v);
    if !(r > 0.0) {
        0
    } else if r >= (extent - 1) as f64 {
        extent - 1
    } else {
        r as usize
    }
}

/// How continuous positions read from a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Sampling {
    #[default]
    Nearest,
    Bilinear,
}

/// Bilinear taps `(index, weight)` for a position, clamped to the grid.
fn bilinear_taps(shape: GridShape, x: f64, y: f64) -> [(usize, f64); 4] {
    let max_x = (shape.width - 1) as f64;
    let max_y = (shape.height - 1) as f64;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = math::floor(x);
    let y0 = math::floor(y);
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(shape.width - 1);
    let y1 = (y0 + 1).min(shape.height - 1);
    [
        (shape.index(x0, y0), (1.0 - fx) * (1.0 - fy)),
        (shape.index(x1, y0), fx * (1.0 - fy)),
        (shape.index(x0, y1), (1.0 - fx) * fy),
        (shape.index(x1, y1), fx * fy),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    shape: GridShape,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: (shape.height, shape.width),
                found: (values.len(), 1),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("scalar field contains non-finite values"));
        }
        Ok(ScalarField { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: GridShape, value: f64) -> Self {
        ScalarField {
            shape,
            values: vec![value; shape.len()],
        }
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[self.shape.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(value.is_finite());
        let i = self.shape.index(x, y);
        self.values[i] = value;
    }

    #[inline]
    pub fn at(&self, index: usize) -> f64 {
        self.values[index]
    }

    #[inline]
    pub(crate) fn set_at(&mut self, index: usize, value: f64) {
        self.values[index] = value;
    }

    pub fn sample(&self, x: f64, y: f64, sampling: Sampling) -> f64 {
        match sampling {
            Sampling::Nearest => self.values[self.shape.clamped_pixel(x, y)],
            Sampling::Bilinear => bilinear_taps(self.shape, x, y)
                .iter()
                .map(|&(i, w)| self.values[i] * w)
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2 {
    shape: GridShape,
    values: Vec<[f64; 2]>,
}

impl VectorField2 {
    pub fn new(shape: GridShape, values: Vec<[f64; 2]>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: (shape.height, shape.width),
                found: (values.len(), 1),
            });
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vector field contains non-finite values"));
        }
        Ok(VectorField2 { shape, values })
    }

    /// Builds a field from interleaved `[dx0, dy0, dx1, dy1, ...]` values.
    pub fn from_interleaved(shape: GridShape, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * shape.len() {
            return Err(Error::ShapeMismatch {
                expected: (shape.len(), 2),
                found: (flat.len(), 1),
            });
        }
        Self::new(shape, flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn zeros(shape: GridShape) -> Self {
        VectorField2 {
            shape,
            values: vec![[0.0, 0.0]; shape.len()],
        }
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.values[self.shape.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: [f64; 2]) {
        let i = self.shape.index(x, y);
        self.values[i] = value;
    }

    #[inline]
    pub fn at(&self, index: usize) -> [f64; 2] {
        self.values[index]
    }

    pub fn sample(&self, x: f64, y: f64, sampling: Sampling) -> [f64; 2] {
        match sampling {
            Sampling::Nearest => self.values[self.shape.clamped_pixel(x, y)],
            Sampling::Bilinear => {
                let mut out = [0.0; 2];
                for (i, w) in bilinear_taps(self.shape, x, y) {
                    out[0] += self.values[i][0] * w;
                    out[1] += self.values[i][1] * w;
                }
                out
            }
        }
    }
}

/// Field whose value at pixel `(x, y)` is `(x, y)`.
pub fn coordinate_grid(shape: GridShape) -> VectorField2 {
    let values = (0..shape.len())
        .map(|i| {
            let (x, y) = shape.pixel(i);
            [x as f64, y as f64]
        })
        .collect();
    VectorField2 { shape, values }
}

/// Per-pixel maximum over all heatmap channels.
pub fn max_over_channels(stack: &HeatmapStack) -> ScalarField {
    let shape = stack.shape();
    let mut values = stack.channels()[0].values().to_vec();
    for channel in &stack.channels()[1..] {
        for (acc, &v) in values.iter_mut().zip(channel.values()) {
            if v > *acc {
                *acc = v;
            }
        }
    }
    ScalarField { shape, values }
}

/// Named subset of joints used for per-group reporting (`Head`, `Shou`, ...).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointGroup {
    pub name: String,
    pub joints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Skeleton {
    joint_names: Vec<String>,
    head_top: usize,
    neck: usize,
    /// Per-joint keypoint-similarity falloff constants.
    oks_kappa: Vec<f64>,
    groups: Vec<JointGroup>,
}

pub const DEFAULT_JOINT_NAMES: [&str; 15] = [
    "head_top",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "pelvis",
];

impl Skeleton {
    /// Skeleton with one group per joint and a uniform similarity constant.
    pub fn new(joint_names: Vec<String>, head_top: usize, neck: usize) -> Result<Self> {
        let j = joint_names.len();
        if j == 0 {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        if head_top >= j || neck >= j || head_top == neck {
            return Err(Error::invalid("head_top and neck must be distinct valid joints"));
        }
        let groups = joint_names
            .iter()
            .enumerate()
            .map(|(i, n)| JointGroup {
                name: n.clone(),
                joints: vec![i],
            })
            .collect();
        Ok(Skeleton {
            joint_names,
            head_top,
            neck,
            oks_kappa: vec![0.079; j],
            groups,
        })
    }

    /// The 15-joint layout (head top, neck, limbs, pelvis) with standard
    /// keypoint-similarity constants and benchmark-style column groups.
    pub fn default_15() -> Self {
        let joint_names = DEFAULT_JOINT_NAMES.iter().map(|s| s.to_string()).collect();
        let oks_kappa = vec![
            0.026, 0.079, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087, 0.087,
            0.089, 0.089, 0.107,
        ];
        let group = |name: &str, joints: &[usize]| JointGroup {
            name: name.to_string(),
            joints: joints.to_vec(),
        };
        let groups = vec![
            group("Head", &[0, 1]),
            group("Shou", &[2, 3]),
            group("Elb", &[4, 5]),
            group("Wri", &[6, 7]),
            group("Hip", &[8, 9, 14]),
            group("Knee", &[10, 11]),
            group("Ankl", &[12, 13]),
        ];
        Skeleton {
            joint_names,
            head_top: 0,
            neck: 1,
            oks_kappa,
            groups,
        }
    }

    pub fn with_oks_kappa(mut self, kappa: Vec<f64>) -> Result<Self> {
        if kappa.len() != self.joint_count() || kappa.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::invalid("one positive similarity constant per joint"));
        }
        self.oks_kappa = kappa;
        Ok(self)
    }

    pub fn with_groups(mut self, groups: Vec<JointGroup>) -> Result<Self> {
        let j = self.joint_count();
        if groups.iter().flat_map(|g| &g.joints).any(|&i| i >= j) {
            return Err(Error::invalid("group references an unknown joint"));
        }
        self.groups = groups;
        Ok(self)
    }

    #[inline]
    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    #[inline]
    pub fn head_top(&self) -> usize {
        self.head_top
    }

    #[inline]
    pub fn neck(&self) -> usize {
        self.neck
    }

    pub fn oks_kappa(&self) -> &[f64] {
        &self.oks_kappa
    }

    pub fn groups(&self) -> &[JointGroup] {
        &self.groups
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::default_15()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub joint: usize,
}

impl Keypoint {
    pub fn new(joint: usize, x: f64, y: f64, confidence: f64) -> Self {
        Keypoint {
            x,
            y,
            confidence,
            joint,
        }
    }

    #[inline]
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_sq(&self, other: &Keypoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// A person instance: one optional keypoint slot per joint type.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    keypoints: Vec<Option<Keypoint>>,
    pub person_id: Option<u32>,
}

impl Pose {
    pub fn new(keypoints: Vec<Option<Keypoint>>, person_id: Option<u32>) -> Result<Self> {
        if keypoints.iter().all(Option::is_none) {
            return Err(Error::invalid("pose has no keypoints"));
        }
        for (j, kp) in keypoints.iter().enumerate() {
            if let Some(kp) = kp {
                if kp.joint != j {
                    return Err(Error::invalid("keypoint stored under the wrong joint slot"));
                }
                if !kp.x.is_finite() || !kp.y.is_finite() {
                    return Err(Error::invalid("keypoint position is not finite"));
                }
            }
        }
        Ok(Pose {
            keypoints,
            person_id,
        })
    }

    /// Pose with every joint present at the given positions and confidence 1.
    pub fn from_positions(positions: &[[f64; 2]], person_id: Option<u32>) -> Result<Self> {
        let keypoints = positions
            .iter()
            .enumerate()
            .map(|(j, p)| Some(Keypoint::new(j, p[0], p[1], 1.0)))
            .collect();
        Self::new(keypoints, person_id)
    }

    #[inline]
    pub fn joint_count(&self) -> usize {
        self.keypoints.len()
    }

    pub fn keypoints(&self) -> &[Option<Keypoint>] {
        &self.keypoints
    }

    #[inline]
    pub fn keypoint(&self, joint: usize) -> Option<&Keypoint> {
        self.keypoints.get(joint).and_then(Option::as_ref)
    }

    pub fn present(&self) -> impl Iterator<Item = &Keypoint> + '_ {
        self.keypoints.iter().flatten()
    }

    pub fn present_count(&self) -> usize {
        self.present().count()
    }

    /// Mean position of the present joints.
    pub fn center(&self) -> [f64; 2] {
        let n = self.present_count() as f64;
        let (sx, sy) = self
            .present()
            .fold((0.0, 0.0), |(sx, sy), k| (sx + k.x, sy + k.y));
        [sx / n, sy / n]
    }

    /// Tight keypoint box `[x0, y0, x1, y1]`.
    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for k in self.present() {
            b[0] = b[0].min(k.x);
            b[1] = b[1].min(k.y);
            b[2] = b[2].max(k.x);
            b[3] = b[3].max(k.y);
        }
        b
    }

    /// Squared head segment length, when both head joints are present.
    pub fn head_size_sq(&self, skeleton: &Skeleton) -> Option<f64> {
        let top = self.keypoint(skeleton.head_top())?;
        let neck = self.keypoint(skeleton.neck())?;
        Some(top.distance_sq(neck))
    }

    pub fn with_id(mut self, id: Option<u32>) -> Self {
        self.person_id = id;
        self
    }

    pub(crate) fn from_slots_unchecked(keypoints: Vec<Option<Keypoint>>, person_id: Option<u32>) -> Self {
        Pose {
            keypoints,
            person_id,
        }
    }
}
