//! TOML run configuration. Every key is optional; missing keys keep defaults.
//!
//! ```toml
//! [pipeline]
//! hypotheses_per_level = [96, 32, 8]   # coarsest first
//! level_scales = [4, 2, 1]
//! initial_sampling = "inverse-depth"   # or "linear"
//! temperatures = [0.03, 0.03, 0.03]    # full, /2, /4 layers
//! combine_weights = [0.3333, 0.3333, 0.3333]
//! loss_weights = [1.0, 1.0, 1.0]
//! huber_epsilon = 1.0
//! upscale = "nearest"                  # or "bilinear"
//! sentinel = 1e4
//! depth_floor_ratio = 0.1
//! num_sources = 4
//!
//! [pairwise]                           # applies to every level ...
//! l1_pos = -0.2
//! l1_neg = -0.2
//! l2_pos = -0.5
//! l2_neg = -0.5
//! l3 = -1.0
//! [[pairwise.levels]]                  # ... unless three per-level tables follow
//! l1_pos = -0.2                        # (unlisted keys fall back to the global table)
//!
//! [normalization]
//! sigma_p = 1.0
//! baseline = "mean"                    # or "sum"
//!
//! [fusion]
//! min_views = 3
//! reprojection_threshold = 0.25
//! max_rel_depth_diff = 0.01
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::bp::{JumpScores, PairwiseParams};
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::geometry::BaselineMode;
use crate::pipeline::{PipelineConfig, SamplingMode, UpscaleMode, LEVELS};

pub const DEFAULT_NUM_SOURCES: usize = 4;

pub const SYNTHETIC_PROFILE: &str = include_str!("../configs/synthetic.toml");

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub fusion: FusionParams,
    /// Source views per reference view.
    pub num_sources: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            fusion: FusionParams::default(),
            num_sources: DEFAULT_NUM_SOURCES,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    pipeline: PipelineSection,
    #[serde(default)]
    pairwise: PairwiseSection,
    #[serde(default)]
    normalization: NormalizationSection,
    fusion: Option<FusionParams>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineSection {
    hypotheses_per_level: Option<[usize; LEVELS]>,
    level_scales: Option<[usize; LEVELS]>,
    initial_sampling: Option<SamplingMode>,
    temperatures: Option<[f64; 3]>,
    combine_weights: Option<[f64; 3]>,
    loss_weights: Option<[f64; LEVELS]>,
    huber_epsilon: Option<f64>,
    upscale: Option<UpscaleMode>,
    sentinel: Option<f64>,
    depth_floor_ratio: Option<f64>,
    num_sources: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresSection {
    l1_pos: Option<f64>,
    l1_neg: Option<f64>,
    l2_pos: Option<f64>,
    l2_neg: Option<f64>,
    l3: Option<f64>,
}

impl ScoresSection {
    fn over(&self, base: JumpScores) -> JumpScores {
        JumpScores {
            l1_pos: self.l1_pos.unwrap_or(base.l1_pos),
            l1_neg: self.l1_neg.unwrap_or(base.l1_neg),
            l2_pos: self.l2_pos.unwrap_or(base.l2_pos),
            l2_neg: self.l2_neg.unwrap_or(base.l2_neg),
            l3: self.l3.unwrap_or(base.l3),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairwiseSection {
    #[serde(flatten)]
    global: ScoresSection,
    levels: Option<Vec<ScoresSection>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizationSection {
    sigma_p: Option<f64>,
    baseline: Option<BaselineMode>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();
        let p = &mut cfg.pipeline;
        let s = file.pipeline;
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = s.$field { p.$field = v; })* };
        }
        set!(
            hypotheses_per_level,
            level_scales,
            initial_sampling,
            temperatures,
            combine_weights,
            loss_weights,
            huber_epsilon,
            upscale,
            sentinel,
            depth_floor_ratio
        );
        if let Some(n) = s.num_sources {
            cfg.num_sources = n;
        }
        let global = file.pairwise.global.over(*PairwiseParams::default().scores());
        let per_level: Vec<JumpScores> = match &file.pairwise.levels {
            None => vec![global; LEVELS],
            Some(levels) if levels.len() == LEVELS => levels.iter().map(|l| l.over(global)).collect(),
            Some(levels) => {
                return Err(Error::Config(format!(
                    "pairwise.levels needs {LEVELS} tables, found {}",
                    levels.len()
                )))
            }
        };
        for (slot, scores) in p.pairwise.iter_mut().zip(per_level) {
            *slot = PairwiseParams::new(scores).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(v) = file.normalization.sigma_p {
            p.sigma_p = v;
        }
        if let Some(v) = file.normalization.baseline {
            p.baseline_mode = v;
        }
        if let Some(f) = file.fusion {
            cfg.fusion = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The profile shipped in `configs/synthetic.toml`, tuned for
    /// [`SceneSpec::two_plane_benchmark`](crate::synth::SceneSpec::two_plane_benchmark).
    pub fn synthetic_profile() -> Result<Self> {
        Self::from_toml(SYNTHETIC_PROFILE)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.fusion.validate()?;
        if self.num_sources == 0 {
            return Err(Error::param("num_sources must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_profile_parses() {
        let cfg = RunConfig::synthetic_profile().unwrap();
        assert_eq!(cfg.pipeline.hypotheses_per_level, [32, 16, 8]);
        assert_eq!(cfg.pipeline.pairwise[2].scores().l3, -3.0);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_and_per_level_scores() {
        let cfg = RunConfig::from_toml(
            r#"
            [pipeline]
            hypotheses_per_level = [32, 16, 8]
            upscale = "bilinear"
            initial_sampling = "linear"
            [pairwise]
            l3 = -3.0
            [[pairwise.levels]]
            l1_pos = -0.1
            [[pairwise.levels]]
            [[pairwise.levels]]
            l2_neg = -2.0
            [normalization]
            baseline = "sum"
            [fusion]
            min_views = 2
            "#,
        )
        .unwrap();
        let p = &cfg.pipeline;
        assert_eq!(p.hypotheses_per_level, [32, 16, 8]);
        assert_eq!(p.upscale, UpscaleMode::Bilinear);
        assert_eq!(p.initial_sampling, SamplingMode::Linear);
        assert_eq!(p.baseline_mode, BaselineMode::Sum);
        assert_eq!(p.pairwise[0].scores().l1_pos, -0.1);
        assert_eq!(p.pairwise[0].scores().l3, -3.0);
        assert_eq!(p.pairwise[1].scores().l1_pos, -0.2);
        assert_eq!(p.pairwise[2].scores().l2_neg, -2.0);
        assert_eq!(cfg.fusion.min_views, 2);
        assert_eq!(cfg.fusion.reprojection_threshold, 0.25);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("[pipeline]\ntemperature = 1.0").is_err());
        assert!(RunConfig::from_toml("[pairwise]\nl1_pos = 0.5").is_err());
        assert!(RunConfig::from_toml("[pairwise]\nl4 = -1.0").is_err());
        assert!(RunConfig::from_toml("[pipeline]\nhypotheses_per_level = [32, 15, 8]").is_err());
        assert!(RunConfig::from_toml("[[pairwise.levels]]\nl3 = -1.0").is_err());
    }
}
