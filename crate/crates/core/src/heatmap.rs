//! Gaussian confidence heatmaps: rendering, detection loss, peak extraction
//! and the instance-agnostic pose mask.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{evaluate, Evaluated, Tape, Var};
use crate::grid::{max_over_channels, GridShape, Keypoint, Pose, ScalarField};
use crate::math;
use crate::{Error, Result};

/// Default Gaussian width of rendered heatmaps, in pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;
/// Default pose-mask threshold.
pub const DEFAULT_TAU: f64 = 0.2;

/// One confidence field per joint type.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    shape: GridShape,
    channels: Vec<ScalarField>,
}

impl HeatmapStack {
    pub fn new(shape: GridShape, channels: Vec<ScalarField>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("heatmap stack needs at least one channel"));
        }
        if let Some(c) = channels.iter().find(|c| c.shape() != shape) {
            return Err(Error::ShapeMismatch {
                expected: (shape.height(), shape.width()),
                found: (c.shape().height(), c.shape().width()),
            });
        }
        Ok(HeatmapStack { shape, channels })
    }

    pub fn zeros(shape: GridShape, joints: usize) -> Result<Self> {
        Self::new(shape, vec![ScalarField::zeros(shape); joints])
    }

    /// Builds a stack from channel-major flat values.
    pub fn from_flat(shape: GridShape, joints: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != joints * shape.len() {
            return Err(Error::ShapeMismatch {
                expected: (joints, shape.len()),
                found: (flat.len(), 1),
            });
        }
        let channels = flat
            .chunks_exact(shape.len())
            .map(|c| ScalarField::new(shape, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, channels)
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn joint_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[ScalarField] {
        &self.channels
    }

    pub fn channel(&self, joint: usize) -> &ScalarField {
        &self.channels[joint]
    }

    /// Channel-major flat copy of all values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.channels
            .iter()
            .flat_map(|c| c.values().iter().copied())
            .collect()
    }
}

/// Ground-truth confidence maps: per joint, the maximum over people of
/// `exp(-|p - p_jk|^2 / sigma^2)`. Missing joints contribute nothing.
pub fn render_confidence(
    poses: &[Pose],
    sigma: f64,
    shape: GridShape,
    joint_count: usize,
) -> Result<HeatmapStack> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if joint_count == 0 {
        return Err(Error::invalid("joint count must be at least one"));
    }
    if poses.iter().any(|p| p.joint_count() != joint_count) {
        return Err(Error::invalid("pose joint count differs from the stack"));
    }
    let inv = 1.0 / (sigma * sigma);
    let mut channels = Vec::with_capacity(joint_count);
    for j in 0..joint_count {
        let mut field = ScalarField::zeros(shape);
        for kp in poses.iter().filter_map(|p| p.keypoint(j)) {
            for idx in 0..shape.len() {
                let (x, y) = shape.pixel(idx);
                let dx = x as f64 - kp.x;
                let dy = y as f64 - kp.y;
                let v = math::exp(-(dx * dx + dy * dy) * inv);
                if v > field.at(idx) {
                    field.set_at(idx, v);
                }
            }
        }
        channels.push(field);
    }
    HeatmapStack::new(shape, channels)
}

/// Records the squared-error detection loss `sum_j sum_p w(p) (C*_j(p) - C_j(p))^2`.
///
/// `pred` holds the predicted stack channel-major (`J * W * H` values).
/// `weights`, when given, scales every pixel of every channel.
pub fn detection_loss(
    tape: &mut Tape,
    pred: Var,
    gt: &HeatmapStack,
    weights: Option<&ScalarField>,
) -> Result<Var> {
    let len = gt.joint_count() * gt.shape().len();
    let (r, c) = tape.shape(pred)?;
    if r * c != len {
        return Err(Error::ShapeMismatch {
            expected: (len, 1),
            found: (r, c),
        });
    }
    let pred = tape.reshape(pred, len, 1)?;
    let target = tape.constant(gt.to_flat(), len, 1)?;
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    let weighted = match weights {
        Some(w) => {
            if w.shape() != gt.shape() {
                return Err(Error::invalid("weight field shape differs from the heatmaps"));
            }
            let wv: Vec<f64> = (0..gt.joint_count())
                .flat_map(|_| w.values().iter().copied())
                .collect();
            let wc = tape.constant(wv, len, 1)?;
            tape.mul(sq, wc)?
        }
        None => sq,
    };
    tape.sum(weighted)
}

/// Value and gradient (with respect to `pred`) of [`detection_loss`].
pub fn detection_loss_value(pred: &HeatmapStack, gt: &HeatmapStack) -> Result<Evaluated> {
    if pred.shape() != gt.shape() || pred.joint_count() != gt.joint_count() {
        return Err(Error::invalid("predicted and ground-truth heatmaps differ in shape"));
    }
    evaluate(&pred.to_flat(), |t, v| detection_loss(t, v, gt, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PeakConfig {
    /// Peaks within this distance of a stronger peak are suppressed.
    pub nms_radius: f64,
    pub threshold: f64,
    /// Shift peaks a quarter pixel toward the stronger neighbor.
    pub subpixel: bool,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            nms_radius: 3.0,
            threshold: 0.1,
            subpixel: false,
        }
    }
}

/// Strict 8-neighborhood maxima at or above the threshold, then radius
/// suppression. Each joint's list is sorted by confidence, strongest first
/// (ties by row-major position).
pub fn extract_peaks(stack: &HeatmapStack, cfg: &PeakConfig) -> Result<Vec<Vec<Keypoint>>> {
    if !(cfg.nms_radius >= 1.0) {
        return Err(Error::invalid("nms radius must be at least 1"));
    }
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::invalid("peak threshold must lie in (0, 1)"));
    }
    let shape = stack.shape();
    let (w, h) = (shape.width() as isize, shape.height() as isize);
    let r2 = cfg.nms_radius * cfg.nms_radius;
    let mut out = Vec::with_capacity(stack.joint_count());
    for (j, field) in stack.channels().iter().enumerate() {
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for idx in 0..shape.len() {
            let v = field.at(idx);
            if v < cfg.threshold {
                continue;
            }
            let (x, y) = shape.pixel(idx);
            let (x, y) = (x as isize, y as isize);
            let mut strict = true;
            'nb: for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    if field.get(nx as usize, ny as usize) >= v {
                        strict = false;
                        break 'nb;
                    }
                }
            }
            if strict {
                candidates.push((v, idx));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut kept: Vec<Keypoint> = Vec::new();
        for (v, idx) in candidates {
            let (x, y) = shape.pixel(idx);
            let (xf, yf) = (x as f64, y as f64);
            let suppressed = kept.iter().any(|k| {
                let (dx, dy) = (k.x - xf, k.y - yf);
                dx * dx + dy * dy <= r2
            });
            if !suppressed {
                kept.push(Keypoint::new(j, xf, yf, v));
            }
        }
        if cfg.subpixel {
            for k in &mut kept {
                let (x, y) = (k.x as usize, k.y as usize);
                let read = |xx: isize, yy: isize| -> f64 {
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        0.0
                    } else {
                        field.get(xx as usize, yy as usize)
                    }
                };
                let (xi, yi) = (x as isize, y as isize);
                let gx = read(xi + 1, yi) - read(xi - 1, yi);
                let gy = read(xi, yi + 1) - read(xi, yi - 1);
                k.x += 0.25 * sign(gx);
                k.y += 0.25 * sign(gy);
            }
        }
        out.push(kept);
    }
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Binary mask over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: GridShape,
    bits: Vec<bool>,
    occupancy: usize,
}

impl BinaryMask {
    pub fn new(shape: GridShape, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: (shape.len(), 1),
                found: (bits.len(), 1),
            });
        }
        let occupancy = bits.iter().filter(|b| **b).count();
        Ok(BinaryMask {
            shape,
            bits,
            occupancy,
        })
    }

    pub fn full(shape: GridShape) -> Self {
        BinaryMask {
            shape,
            bits: vec![true; shape.len()],
            occupancy: shape.len(),
        }
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    /// Number of set pixels.
    #[inline]
    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    /// Row-major indices of the set pixels.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }
}

/// Sets every pixel whose channel maximum strictly exceeds `tau`.
pub fn pose_mask(stack: &HeatmapStack, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("mask threshold must lie in (0, 1)"));
    }
    let peak = max_over_channels(stack);
    BinaryMask::new(stack.shape(), peak.values().iter().map(|&v| v > tau).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;

    fn shape(w: usize, h: usize) -> GridShape {
        GridShape::new(w, h).unwrap()
    }

    fn single(x: f64, y: f64) -> Pose {
        Pose::from_positions(&[[x, y]], None).unwrap()
    }

    #[test]
    fn render_examples() {
        let s = shape(16, 16);
        let st = render_confidence(&[single(5.0, 5.0)], 2.0, s, 1).unwrap();
        assert_eq!(st.channel(0).get(5, 5), 1.0);
        // distance 2 at sigma 2: exp(-4/4)
        assert!((st.channel(0).get(7, 5) - 0.367879).abs() < 1e-6);

        let two = render_confidence(&[single(5.0, 5.0), single(7.0, 5.0)], 2.0, s, 1).unwrap();
        assert_eq!(two.channel(0).get(5, 5), 1.0);
        assert_eq!(two.channel(0).get(7, 5), 1.0);
    }

    #[test]
    fn render_empty_is_zero() {
        let st = render_confidence(&[], 2.0, shape(4, 4), 3).unwrap();
        assert_eq!(st.joint_count(), 3);
        assert!(st.to_flat().iter().all(|&v| v == 0.0));
        assert!(render_confidence(&[], 0.0, shape(4, 4), 3).is_err());
    }

    #[test]
    fn rendered_values_are_bounded() {
        let poses = [
            Pose::from_positions(&[[1.0, 2.0], [6.0, 6.0]], None).unwrap(),
            Pose::from_positions(&[[3.0, 2.0], [0.0, 7.0]], None).unwrap(),
        ];
        let st = render_confidence(&poses, 2.0, shape(8, 8), 2).unwrap();
        for (j, c) in st.channels().iter().enumerate() {
            for idx in 0..64 {
                let v = c.at(idx);
                assert!((0.0..=1.0).contains(&v));
                let (x, y) = shape(8, 8).pixel(idx);
                let on_kp = poses
                    .iter()
                    .any(|p| p.keypoint(j).map_or(false, |k| k.x == x as f64 && k.y == y as f64));
                assert_eq!(v == 1.0, on_kp);
            }
        }
    }

    #[test]
    fn detection_loss_examples() {
        let s = shape(1, 1);
        let gt = HeatmapStack::new(s, vec![ScalarField::new(s, vec![1.0]).unwrap()]).unwrap();
        let same = detection_loss_value(&gt, &gt).unwrap();
        assert_eq!(same.value, 0.0);
        let pred = HeatmapStack::new(s, vec![ScalarField::new(s, vec![0.5]).unwrap()]).unwrap();
        let e = detection_loss_value(&pred, &gt).unwrap();
        assert!((e.value - 0.25).abs() < 1e-15);
        assert!((e.gradient[0] + 1.0).abs() < 1e-15);
        let r = finite_difference_check(&pred.to_flat(), 1e-4, |t, v| detection_loss(t, v, &gt, None)).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn detection_loss_shape_mismatch() {
        let gt = HeatmapStack::zeros(shape(2, 2), 1).unwrap();
        let pred = HeatmapStack::zeros(shape(2, 3), 1).unwrap();
        assert!(detection_loss_value(&pred, &gt).is_err());
    }

    #[test]
    fn weighted_detection_loss() {
        let s = shape(2, 1);
        let gt = HeatmapStack::new(s, vec![ScalarField::new(s, vec![1.0, 1.0]).unwrap()]).unwrap();
        let w = ScalarField::new(s, vec![2.0, 0.0]).unwrap();
        let mut t = Tape::new();
        let p = t.leaf(vec![0.0, 0.0], 2, 1).unwrap();
        let l = detection_loss(&mut t, p, &gt, Some(&w)).unwrap();
        assert_eq!(t.scalar(l).unwrap(), 2.0);
    }

    #[test]
    fn peaks_single_gaussian() {
        let s = shape(32, 32);
        let st = render_confidence(&[single(10.0, 20.0)], 2.0, s, 1).unwrap();
        let peaks = extract_peaks(&st, &PeakConfig::default()).unwrap();
        assert_eq!(peaks[0].len(), 1);
        assert_eq!((peaks[0][0].x, peaks[0][0].y, peaks[0][0].confidence), (10.0, 20.0, 1.0));
    }

    #[test]
    fn peaks_empty_channel() {
        let st = HeatmapStack::zeros(shape(8, 8), 2).unwrap();
        let peaks = extract_peaks(&st, &PeakConfig::default()).unwrap();
        assert!(peaks.iter().all(Vec::is_empty));
    }

    #[test]
    fn peaks_two_gaussians_brute_force() {
        let s = shape(40, 12);
        let st = render_confidence(&[single(8.0, 6.0), single(28.0, 6.0)], 2.0, s, 1).unwrap();
        // brute-force local maxima scan
        let c = st.channel(0);
        let mut brute = Vec::new();
        for y in 0..12usize {
            for x in 0..40usize {
                let v = c.get(x, y);
                let mut ok = v >= 0.1;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                        if (dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && nx < 40 && ny < 12 {
                            ok &= c.get(nx as usize, ny as usize) < v;
                        }
                    }
                }
                if ok {
                    brute.push((x as f64, y as f64));
                }
            }
        }
        assert_eq!(brute, vec![(8.0, 6.0), (28.0, 6.0)]);
        let cfg = PeakConfig {
            nms_radius: 3.0,
            ..PeakConfig::default()
        };
        let peaks = extract_peaks(&st, &cfg).unwrap();
        let got: Vec<_> = peaks[0].iter().map(|k| (k.x, k.y)).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn radius_suppression_keeps_stronger() {
        let s = shape(12, 3);
        let mut f = ScalarField::zeros(s);
        f.set(2, 1, 0.9);
        f.set(4, 1, 0.5);
        f.set(9, 1, 0.4);
        let st = HeatmapStack::new(s, vec![f]).unwrap();
        let peaks = extract_peaks(&st, &PeakConfig::default()).unwrap();
        let got: Vec<_> = peaks[0].iter().map(|k| k.x).collect();
        assert_eq!(got, vec![2.0, 9.0]);
    }

    #[test]
    fn subpixel_shifts_toward_stronger_neighbor() {
        let s = shape(5, 3);
        let mut f = ScalarField::zeros(s);
        f.set(2, 1, 0.9);
        f.set(3, 1, 0.6);
        f.set(1, 1, 0.2);
        let st = HeatmapStack::new(s, vec![f]).unwrap();
        let cfg = PeakConfig {
            subpixel: true,
            ..PeakConfig::default()
        };
        let p = &extract_peaks(&st, &cfg).unwrap()[0][0];
        assert_eq!((p.x, p.y), (2.25, 1.0));
    }

    #[test]
    fn mask_examples() {
        let s = shape(3, 1);
        let f = ScalarField::new(s, vec![0.25, 0.2, 0.0]).unwrap();
        let st = HeatmapStack::new(s, vec![f]).unwrap();
        let m = pose_mask(&st, 0.2).unwrap();
        assert_eq!(m.bits(), &[true, false, false]);
        assert_eq!(m.occupancy(), 1);
        let zero = HeatmapStack::zeros(s, 2).unwrap();
        assert_eq!(pose_mask(&zero, 0.2).unwrap().occupancy(), 0);
        assert!(pose_mask(&zero, 1.0).is_err());
    }
}
