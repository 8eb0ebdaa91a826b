//! Toy end-to-end training: a per-pixel linear predictor trained through the
//! grouping losses, with or without mean-shift refinement in the loop.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::frame::FrameBundle;
use crate::grid::{GridShape, ScalarField, Skeleton, VectorField2};
use crate::heatmap::{extract_peaks, pose_mask, DEFAULT_SIGMA};
use crate::metrics::{Evaluator, MetricsReport};
use crate::pgg::{gather_masked, label_columns, pgg_grouping_loss, EmbeddingSource, PggConfig};
use crate::pipeline::{grouping_fields, PipelineConfig};
use crate::decoder::greedy_decode;
use crate::simulator::{generate_scene, synth_frame, NoiseConfig, SceneConfig};
use crate::spatial::{pull_loss, push_loss, svf_loss};
use crate::{Error, Result};

/// Input channels per pixel: noisy KE, then noisy SVF x and y divided by
/// [`OFFSET_SCALE`]. Pixel coordinates are left out on purpose: people in
/// the fixture stand side by side, so a linear map over `x` alone would
/// separate them and the embeddings would have nothing to learn.
pub const FEATURES: usize = 3;
/// Keeps the offset features near unit magnitude so one learning rate suits
/// every weight.
pub const OFFSET_SCALE: f64 = 8.0;
/// Output channels per pixel: KE, SVF x, SVF y.
pub const OUTPUTS: usize = 3;

/// Loss weights for the KE and SIE terms, relative to a unit detection loss.
pub const KE_WEIGHT: f64 = 1e-3;
pub const SIE_WEIGHT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyPredictor {
    /// Row-major `OUTPUTS x FEATURES`.
    pub weights: Vec<f64>,
    pub bias: [f64; OUTPUTS],
}

impl ToyPredictor {
    /// Passes the noisy fields through unchanged.
    pub fn identity() -> Self {
        let mut weights = vec![0.0; OUTPUTS * FEATURES];
        for o in 0..OUTPUTS {
            weights[o * FEATURES + o] = if o == 0 { 1.0 } else { OFFSET_SCALE };
        }
        ToyPredictor { weights, bias: [0.0; OUTPUTS] }
    }

    /// Gaussian weights of standard deviation `scale`, zero bias.
    pub fn random(seed: u64, scale: f64) -> Result<Self> {
        let n = Normal::new(0.0, scale).map_err(|_| Error::invalid("init scale must be finite and non-negative"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..OUTPUTS * FEATURES).map(|_| n.sample(&mut rng)).collect();
        Ok(ToyPredictor { weights, bias: [0.0; OUTPUTS] })
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    fn from_params(p: &[f64]) -> Self {
        let (w, b) = p.split_at(OUTPUTS * FEATURES);
        ToyPredictor {
            weights: w.to_vec(),
            bias: [b[0], b[1], b[2]],
        }
    }

    /// Predicted KE map and SVF for one frame.
    pub fn predict(&self, frame: &FrameBundle) -> Result<(ScalarField, VectorField2)> {
        let shape = frame.shape();
        let x = features(frame);
        let mut ke = Vec::with_capacity(shape.len());
        let mut svf = Vec::with_capacity(shape.len());
        for row in x.chunks_exact(FEATURES) {
            let out = |o: usize| -> f64 {
                self.bias[o] + row.iter().zip(&self.weights[o * FEATURES..(o + 1) * FEATURES]).map(|(a, b)| a * b).sum::<f64>()
            };
            ke.push(out(0));
            svf.push([out(1), out(2)]);
        }
        Ok((ScalarField::new(shape, ke)?, VectorField2::new(shape, svf)?))
    }
}

/// Row-major `P x FEATURES` input matrix.
pub fn features(frame: &FrameBundle) -> Vec<f64> {
    let shape = frame.shape();
    let mut out = Vec::with_capacity(shape.len() * FEATURES);
    for i in 0..shape.len() {
        let s = frame.svf.at(i);
        out.extend_from_slice(&[frame.ke.at(i), s[0] / OFFSET_SCALE, s[1] / OFFSET_SCALE]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Number of simulator frames in the fixed training set.
    pub scenes: usize,
    pub with_pgg: bool,
    pub seed: u64,
    pub init_scale: f64,
    pub ke_weight: f64,
    pub sie_weight: f64,
    /// Weight of the grouping loss over the refinement trace.
    pub pgg_weight: f64,
    pub pgg: PggConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1500.0,
            steps: 200,
            scenes: 4,
            with_pgg: true,
            seed: 0,
            init_scale: 0.05,
            ke_weight: KE_WEIGHT,
            sie_weight: SIE_WEIGHT,
            pgg_weight: KE_WEIGHT,
            pgg: toy_pgg(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.scenes == 0 {
            return Err(Error::invalid("training needs at least one scene"));
        }
        for w in [self.init_scale, self.ke_weight, self.sie_weight, self.pgg_weight] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid("weights must be finite and non-negative"));
            }
        }
        self.pgg.validate()
    }
}

/// Refinement settings matched to the toy fixture's embedding scales.
pub fn toy_pgg() -> PggConfig {
    PggConfig {
        channel_scales: vec![0.3, 0.15, 0.15],
        delta: 1.0,
        ..PggConfig::default()
    }
}

/// Small noisy scene used for training and held-out evaluation.
pub fn toy_fixture(seed: u64) -> (SceneConfig, NoiseConfig) {
    let scene = SceneConfig {
        people: 4,
        frames: 1,
        width: 64,
        height: 32,
        body_height: 16.0,
        spacing: 14.0,
        seed,
        ..SceneConfig::default()
    };
    let noise = NoiseConfig {
        ke_spacing: 1.0,
        ke_jitter: 0.1,
        svf_jitter: 0.5,
        background: 0.2,
        confusion: 0.05,
        he_dim: 4,
        ..NoiseConfig::default()
    };
    (scene, noise)
}

/// One fixture frame per seed in `first..first + count`.
pub fn toy_dataset(first: u64, count: usize) -> Result<Vec<FrameBundle>> {
    (0..count as u64)
        .map(|i| {
            let (scene, noise) = toy_fixture(first + i);
            synth_frame(&generate_scene(&scene)?, 0, &noise)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub predictor: ToyPredictor,
    /// Full-batch loss before each update, then once more after the last.
    pub losses: Vec<f64>,
    /// Whether refinement was in the loop, and so also at inference.
    pub with_pgg: bool,
}

/// Precomputed per-frame inputs of the loss.
struct Example<'a> {
    frame: &'a FrameBundle,
    features: Vec<f64>,
    pgg: Option<(Vec<usize>, Vec<Option<u32>>)>,
}

impl<'a> Example<'a> {
    fn new(frame: &'a FrameBundle, with_pgg: bool) -> Result<Self> {
        let gt = frame
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::invalid("training frames need ground truth"))?;
        let pgg = if with_pgg {
            let mask = pose_mask(&frame.heatmaps, crate::heatmap::DEFAULT_TAU)?;
            let (_, index) = gather_masked(&[EmbeddingSource::Scalar(&frame.ke)], &mask)?;
            let labels = label_columns(&index, frame.shape(), gt, 2.0 * DEFAULT_SIGMA);
            Some((index.pixels().to_vec(), labels))
        } else {
            None
        };
        Ok(Example {
            frame,
            features: features(frame),
            pgg,
        })
    }

    fn loss(&self, tape: &mut Tape, weights: Var, bias: Var, cfg: &TrainConfig) -> Result<Var> {
        let shape = self.frame.shape();
        let gt = self.frame.ground_truth.as_deref().unwrap_or(&[]);
        let p = shape.len();
        let x = tape.constant(self.features.clone(), p, FEATURES)?;
        let wt = tape.transpose(weights)?;
        let lin = tape.matmul(x, wt)?;
        let out = tape.add(lin, bias)?;
        let ke = tape.gather(out, (0..p).map(|i| i * OUTPUTS).collect(), 1, p)?;
        let svf = tape.gather(out, (0..p).flat_map(|i| [i * OUTPUTS + 1, i * OUTPUTS + 2]).collect(), 1, 2 * p)?;

        let pull = pull_loss(tape, ke, shape, gt)?;
        let push = push_loss(tape, ke, shape, gt)?;
        let ke_term = tape.add(pull, push)?;
        let ke_term = tape.scale(ke_term, cfg.ke_weight)?;
        let sie_term = svf_loss(tape, svf, shape, gt)?;
        let sie_term = tape.scale(sie_term, cfg.sie_weight)?;
        let mut total = tape.add(ke_term, sie_term)?;

        if let Some((pixels, labels)) = &self.pgg {
            if !pixels.is_empty() {
                let x0 = masked_embeddings(tape, out, pixels, shape, &cfg.pgg)?;
                let g = pgg_grouping_loss(tape, x0, labels, cfg.pgg.delta, cfg.pgg.iterations, cfg.pgg.kernel)?;
                let g = tape.scale(g, cfg.pgg_weight)?;
                total = tape.add(total, g)?;
            }
        }
        Ok(total)
    }
}

/// Scaled `3 x N` matrix of KE and SIE at the masked pixels, as the
/// refinement step sees it.
fn masked_embeddings(tape: &mut Tape, out: Var, pixels: &[usize], shape: GridShape, pgg: &PggConfig) -> Result<Var> {
    let n = pixels.len();
    let scale = |r: usize| pgg.channel_scales.get(r).copied().unwrap_or(1.0);
    let ke = tape.gather(out, pixels.iter().map(|&i| i * OUTPUTS).collect(), 1, n)?;
    let mut rows = vec![tape.scale(ke, scale(0))?];
    for axis in 0..2 {
        let coord: Vec<f64> = pixels
            .iter()
            .map(|&i| {
                let (x, y) = shape.pixel(i);
                if axis == 0 {
                    x as f64
                } else {
                    y as f64
                }
            })
            .collect();
        let c = tape.constant(coord, 1, n)?;
        let s = tape.gather(out, pixels.iter().map(|&i| i * OUTPUTS + 1 + axis).collect(), 1, n)?;
        let sie = tape.sub(c, s)?;
        rows.push(tape.scale(sie, scale(1 + axis))?);
    }
    tape.concat_rows(&rows)
}

fn batch_loss(examples: &[Example<'_>], params: &[f64], cfg: &TrainConfig, grad: Option<&mut [f64]>) -> Result<f64> {
    let want_grad = grad.is_some();
    let mut total = 0.0;
    let mut acc = vec![0.0; params.len()];
    let mut tape = Tape::new();
    let scale = 1.0 / examples.len() as f64;
    for ex in examples {
        tape.clear();
        let w = tape.leaf(params[..OUTPUTS * FEATURES].to_vec(), OUTPUTS, FEATURES)?;
        let b = tape.leaf(params[OUTPUTS * FEATURES..].to_vec(), 1, OUTPUTS)?;
        let l = ex.loss(&mut tape, w, b, cfg)?;
        total += scale * tape.scalar(l)?;
        if want_grad {
            let g = tape.backward(l)?;
            for (a, v) in acc.iter_mut().zip(g.wrt(w)?.into_iter().chain(g.wrt(b)?)) {
                *a += scale * v;
            }
        }
    }
    if let Some(out) = grad {
        out.copy_from_slice(&acc);
    }
    Ok(total)
}

/// Training loss of `predictor` on `frames`, without gradients.
pub fn dataset_loss(predictor: &ToyPredictor, frames: &[FrameBundle], cfg: &TrainConfig) -> Result<f64> {
    let ex = frames.iter().map(|f| Example::new(f, cfg.with_pgg)).collect::<Result<Vec<_>>>()?;
    batch_loss(&ex, &predictor.params(), cfg, None)
}

/// Full-batch gradient descent from a seeded initialization on the fixture
/// frames generated from `cfg.seed`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let frames = toy_dataset(cfg.seed.wrapping_mul(1000), cfg.scenes)?;
    let init = ToyPredictor::random(cfg.seed, cfg.init_scale)?;
    train_on(&frames, init, cfg)
}

/// Gradient descent on caller-supplied frames.
pub fn train_on(frames: &[FrameBundle], init: ToyPredictor, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("training needs at least one frame"));
    }
    let examples = frames.iter().map(|f| Example::new(f, cfg.with_pgg)).collect::<Result<Vec<_>>>()?;
    let mut params = init.params();
    let mut grad = vec![0.0; params.len()];
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let last = step == cfg.steps;
        let loss = batch_loss(&examples, &params, cfg, if last { None } else { Some(&mut grad) })?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        if !last {
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
    }
    Ok(TrainOutcome {
        predictor: ToyPredictor::from_params(&params),
        losses,
        with_pgg: cfg.with_pgg,
    })
}

/// Decodes every frame with the predicted fields and scores the poses.
pub fn evaluate_predictor(
    predictor: &ToyPredictor,
    with_pgg: bool,
    frames: &[FrameBundle],
    cfg: &PipelineConfig,
    skeleton: &Skeleton,
) -> Result<MetricsReport> {
    let cfg = PipelineConfig {
        use_pgg: with_pgg,
        ..cfg.clone()
    };
    let mut ev = Evaluator::new(skeleton.clone(), cfg.pckh_factor)?;
    for f in frames {
        let gt = f
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::invalid("frame has no ground truth"))?;
        let (ke, svf) = predictor.predict(f)?;
        let peaks = extract_peaks(&f.heatmaps, &cfg.peaks)?;
        let (ke, sie) = grouping_fields(&ke, &svf, &f.heatmaps, &cfg)?;
        let poses = greedy_decode(&peaks, &ke, &sie, &cfg.decode)?;
        ev.add_frame(&poses, gt)?;
        ev.next_sequence();
    }
    Ok(ev.report())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub candidate: MetricsReport,
    pub baseline: MetricsReport,
}

impl AblationReport {
    /// Candidate AP minus baseline AP, per joint.
    pub fn ap_delta(&self) -> Vec<Option<f64>> {
        self.candidate
            .ap
            .iter()
            .zip(&self.baseline.ap)
            .map(|(a, b)| Some((*a)? - (*b)?))
            .collect()
    }

    /// Group columns then the total, in metrics-table order.
    pub fn group_delta(&self) -> Vec<Option<f64>> {
        let a = self.candidate.group_ap();
        let b = self.baseline.group_ap();
        let mut out: Vec<Option<f64>> = a.iter().zip(&b).map(|(x, y)| Some((*x)? - (*y)?)).collect();
        out.push(self.total_delta());
        out
    }

    pub fn total_delta(&self) -> Option<f64> {
        Some(self.candidate.total_ap()? - self.baseline.total_ap()?)
    }
}

/// Scores two trained predictors on the same held-out frames, each decoded
/// the way it was trained.
pub fn evaluate_ablation(
    candidate: &TrainOutcome,
    baseline: &TrainOutcome,
    held_out: &[FrameBundle],
    cfg: &PipelineConfig,
    skeleton: &Skeleton,
) -> Result<AblationReport> {
    Ok(AblationReport {
        candidate: evaluate_predictor(&candidate.predictor, candidate.with_pgg, held_out, cfg, skeleton)?,
        baseline: evaluate_predictor(&baseline.predictor, baseline.with_pgg, held_out, cfg, skeleton)?,
    })
}

/// Pipeline settings for decoding the toy fixture.
pub fn toy_pipeline() -> PipelineConfig {
    PipelineConfig {
        pgg: toy_pgg(),
        ..PipelineConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;

    fn quick(with_pgg: bool) -> TrainConfig {
        TrainConfig {
            steps: 3,
            scenes: 1,
            with_pgg,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_keep_the_initial_predictor() {
        let frames = toy_dataset(5, 1).unwrap();
        let init = ToyPredictor::random(9, 0.1).unwrap();
        let out = train_on(&frames, init.clone(), &TrainConfig { steps: 0, ..quick(true) }).unwrap();
        assert_eq!(out.predictor, init);
        assert_eq!(out.losses.len(), 1);
    }

    #[test]
    fn identity_reproduces_the_inputs() {
        let f = &toy_dataset(2, 1).unwrap()[0];
        let (ke, svf) = ToyPredictor::identity().predict(f).unwrap();
        assert_eq!(ke.values(), f.ke.values());
        for (a, b) in svf.values().iter().zip(f.svf.values()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_reaches_the_weights_through_refinement() {
        let frames = toy_dataset(11, 1).unwrap();
        let ex = Example::new(&frames[0], true).unwrap();
        let cfg = TrainConfig {
            ke_weight: 0.0,
            sie_weight: 0.0,
            pgg_weight: 1.0,
            ..quick(true)
        };
        let x = ToyPredictor::identity().params();
        let nw = OUTPUTS * FEATURES;
        let report = finite_difference_check(&x, 1e-5, |t, v| {
            let w = t.gather(v, (0..nw).collect(), OUTPUTS, FEATURES)?;
            let b = t.gather(v, (nw..nw + OUTPUTS).collect(), 1, OUTPUTS)?;
            ex.loss(t, w, b, &cfg)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let norm: f64 = report.analytic.iter().map(|g| g * g).sum();
        assert!(norm > 1e-12);
    }

    #[test]
    fn descent_lowers_the_loss_and_is_deterministic() {
        let a = train(&quick(true)).unwrap();
        let b = train(&quick(true)).unwrap();
        assert_eq!(a, b);
        assert!(a.losses[3] < a.losses[0]);
        assert!(a.predictor.is_finite());
    }

    #[test]
    fn huge_steps_diverge() {
        let err = train(&TrainConfig {
            learning_rate: 1e12,
            steps: 40,
            ..quick(false)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn rejects_bad_config() {
        assert!(train(&TrainConfig { learning_rate: 0.0, ..quick(false) }).is_err());
        assert!(train(&TrainConfig { scenes: 0, ..quick(false) }).is_err());
        assert!(train_on(&[], ToyPredictor::identity(), &quick(false)).is_err());
    }

    #[test]
    fn identical_predictors_have_zero_delta() {
        let held = toy_dataset(500, 2).unwrap();
        let sk = Skeleton::default();
        let t = TrainOutcome {
            predictor: ToyPredictor::identity(),
            losses: Vec::new(),
            with_pgg: false,
        };
        let r = evaluate_ablation(&t, &t, &held, &toy_pipeline(), &sk).unwrap();
        assert_eq!(r.total_delta(), Some(0.0));
        assert!(r.ap_delta().iter().all(|d| *d == Some(0.0)));
        assert_eq!(r.group_delta().len(), 8);
    }
}
