//! Run configuration file: every pipeline hyperparameter in one JSON
//! document. Missing sections and keys take their defaults; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pggtrack_core::decoder::DecodeConfig;
use pggtrack_core::heatmap::{PeakConfig, DEFAULT_SIGMA, DEFAULT_TAU};
use pggtrack_core::metrics::DEFAULT_PCKH_FACTOR;
use pggtrack_core::pgg::PggConfig;
use pggtrack_core::pipeline::PipelineConfig;
use pggtrack_core::tracker::TrackerConfig;

use crate::atomic::read_json;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    /// Gaussian width the heatmaps were rendered with. The simulator always
    /// renders at the default, so other values are rejected.
    pub sigma: f64,
    pub threshold: f64,
    pub nms_radius: f64,
    pub subpixel: bool,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        let p = PeakConfig::default();
        HeatmapSection {
            sigma: DEFAULT_SIGMA,
            threshold: p.threshold,
            nms_radius: p.nms_radius,
            subpixel: p.subpixel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub tau: f64,
    /// Refine embeddings inside the mask before decoding.
    pub refine: bool,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection {
            tau: DEFAULT_TAU,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pckh_factor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            pckh_factor: DEFAULT_PCKH_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub heatmap: HeatmapSection,
    pub mask: MaskSection,
    pub pgg: PggConfig,
    pub decode: DecodeConfig,
    pub tracker: TrackerConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = read_json(path)?;
        cfg.pipeline()?;
        Ok(cfg)
    }

    pub fn from_pipeline(p: &PipelineConfig) -> Self {
        RunConfig {
            heatmap: HeatmapSection {
                sigma: DEFAULT_SIGMA,
                threshold: p.peaks.threshold,
                nms_radius: p.peaks.nms_radius,
                subpixel: p.peaks.subpixel,
            },
            mask: MaskSection {
                tau: p.mask_tau,
                refine: p.use_pgg,
            },
            pgg: p.pgg.clone(),
            decode: p.decode.clone(),
            tracker: p.tracker.clone(),
            eval: EvalSection {
                pckh_factor: p.pckh_factor,
            },
        }
    }

    /// Validated pipeline settings.
    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        if self.heatmap.sigma != DEFAULT_SIGMA {
            return Err(CliError::invalid(format!("heatmap sigma must be {DEFAULT_SIGMA}")));
        }
        if !(self.mask.tau > 0.0 && self.mask.tau < 1.0) {
            return Err(CliError::invalid("mask tau must lie in (0, 1)"));
        }
        if !(self.eval.pckh_factor > 0.0) {
            return Err(CliError::invalid("pckh factor must be positive"));
        }
        if !(self.heatmap.nms_radius >= 1.0 && (0.0..1.0).contains(&self.heatmap.threshold)) {
            return Err(CliError::invalid("nms radius must be at least 1 and threshold in [0, 1)"));
        }
        self.pgg.validate()?;
        self.tracker.validate()?;
        Ok(PipelineConfig {
            peaks: PeakConfig {
                nms_radius: self.heatmap.nms_radius,
                threshold: self.heatmap.threshold,
                subpixel: self.heatmap.subpixel,
            },
            mask_tau: self.mask.tau,
            use_pgg: self.mask.refine,
            pgg: self.pgg.clone(),
            decode: self.decode.clone(),
            tracker: self.tracker.clone(),
            pckh_factor: self.eval.pckh_factor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_documents() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let p = cfg.pipeline().unwrap();
        assert_eq!(p, PipelineConfig::default());
        let cfg: RunConfig = serde_json::from_str(r#"{"pgg": {"delta": 2.5}, "tracker": {"metric": "he_only"}}"#).unwrap();
        assert_eq!(cfg.pgg.delta, 2.5);
        assert_eq!(cfg.pgg.iterations, 1);
        assert_eq!(cfg.decode, DecodeConfig::default());
    }

    #[test]
    fn stated_hyperparameters_are_the_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.heatmap.sigma, 2.0);
        assert_eq!(c.mask.tau, 0.2);
        assert_eq!(c.pgg.delta, 5.0);
        assert_eq!(c.pgg.iterations, 1);
        assert_eq!(c.tracker.lambda_he, 3.0);
        assert_eq!(c.tracker.lambda_tie, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"pgg": {"delta": 5, "bandwidth": 1}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": {}}"#).is_err());
    }

    #[test]
    fn round_trips_through_the_pipeline() {
        let mut p = PipelineConfig::default();
        p.use_pgg = false;
        p.decode.omega = 0.25;
        assert_eq!(RunConfig::from_pipeline(&p).pipeline().unwrap(), p);
        let bad = RunConfig {
            heatmap: HeatmapSection { sigma: 3.0, ..Default::default() },
            ..Default::default()
        };
        assert!(bad.pipeline().is_err());
    }
}
