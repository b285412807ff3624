//! Run configuration: built-in defaults, TOML file, and flag overrides,
//! with precedence flags > file > defaults.
//!
//! The shipped `config/default.toml` must stay byte-identical to the
//! serialized `RunConfig::default()`; a test enforces it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sodet_core::deform::SamplingConfig;
use sodet_core::reweight::FocalParams;
use sodet_core::scale_target::{ScaleTargetParams, TargetMode};
use sodet_core::synthgen::{BucketMix, PerturbSpec, QueryBatchSpec};

/// The shipped default configuration, embedded at compile time.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

/// Environment variable naming the fallback output directory.
pub const OUT_DIR_ENV: &str = "SODET_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleTargetSection {
    pub beta: f64,
    pub theta: f64,
    pub target_mode: TargetMode,
}

impl Default for ScaleTargetSection {
    fn default() -> Self {
        Self {
            beta: 0.73,
            theta: 6.0,
            target_mode: TargetMode::CTimesS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalSection {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub num_heads: usize,
    pub num_levels: usize,
    pub num_points: usize,
    pub channels: usize,
    pub eta_schedule: Vec<f64>,
    pub strict_min: bool,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            num_heads: 2,
            num_levels: 2,
            num_points: 4,
            channels: 8,
            eta_schedule: SamplingConfig::default_eta_schedule(),
            strict_min: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReweightSection {
    pub share_branch_convs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub image_width: f64,
    pub image_height: f64,
    pub num_objects: usize,
    pub num_categories: u64,
    pub num_images: usize,
    pub size_mix: Vec<BucketMix>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            image_width: 256.0,
            image_height: 256.0,
            num_objects: 8,
            num_categories: 3,
            num_images: 4,
            size_mix: vec![
                BucketMix {
                    weight: 0.7,
                    min_area: 64.0,
                    max_area: 1024.0,
                },
                BucketMix {
                    weight: 0.3,
                    min_area: 1024.0,
                    max_area: 9216.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    pub outside_fraction: f64,
    pub num_negatives: usize,
    pub level0_stride: usize,
}

impl Default for QuerySection {
    fn default() -> Self {
        let d = QueryBatchSpec::default();
        Self {
            outside_fraction: d.outside_fraction,
            num_negatives: d.num_negatives,
            level0_stride: d.level0_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub num_scenes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.02,
            num_scenes: 4,
        }
    }
}

/// Everything a run needs; one file, fully overridable by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub scale_target: ScaleTargetSection,
    pub focal: FocalSection,
    pub sampling: SamplingSection,
    pub reweight: ReweightSection,
    pub scene: SceneSection,
    pub perturb: PerturbSpec,
    pub query: QuerySection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: None,
            scale_target: ScaleTargetSection::default(),
            focal: FocalSection::default(),
            sampling: SamplingSection::default(),
            reweight: ReweightSection::default(),
            scene: SceneSection::default(),
            perturb: PerturbSpec::default(),
            query: QuerySection::default(),
            train: TrainSection::default(),
        }
    }
}

/// Flag-level overrides; `None` means "keep".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: Option<Vec<f64>>,
}

impl RunConfig {
    /// Defaults, optionally overlaid by a TOML file, then by flags.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", p.display()))?
            }
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(ref out) = overrides.out_dir {
            config.out_dir = Some(out.clone());
        }
        if let Some(beta) = overrides.beta {
            config.scale_target.beta = beta;
        }
        if let Some(theta) = overrides.theta {
            config.scale_target.theta = theta;
        }
        if let Some(alpha) = overrides.alpha {
            config.focal.alpha = alpha;
        }
        if let Some(gamma) = overrides.gamma {
            config.focal.gamma = gamma;
        }
        if let Some(ref eta) = overrides.eta {
            config.sampling.eta_schedule = eta.clone();
        }
        config.validate()?;
        Ok(config)
    }

    /// Field-level validation via the core constructors.
    pub fn validate(&self) -> Result<()> {
        ScaleTargetParams::new(self.scale_target.beta, self.scale_target.theta)
            .map_err(|e| anyhow::anyhow!("[scale_target] {e}"))?;
        FocalParams::new(self.focal.alpha, self.focal.gamma)
            .map_err(|e| anyhow::anyhow!("[focal] {e}"))?;
        SamplingConfig::new(
            self.sampling.num_heads,
            self.sampling.num_levels,
            self.sampling.num_points,
            self.sampling.eta_schedule.clone(),
        )
        .map_err(|e| anyhow::anyhow!("[sampling] {e}"))?;
        if self.sampling.channels == 0
            || !self.sampling.channels.is_multiple_of(self.sampling.num_heads)
        {
            bail!(
                "[sampling] channels ({}) must be a positive multiple of num_heads ({})",
                self.sampling.channels,
                self.sampling.num_heads
            );
        }
        if self.sampling.channels > 16 {
            bail!(
                "[sampling] channels ({}) exceeds the desk-scale cap of 16",
                self.sampling.channels
            );
        }
        self.scene_spec().validate().map_err(|e| anyhow::anyhow!("[scene] {e}"))?;
        self.perturb.validate().map_err(|e| anyhow::anyhow!("[perturb] {e}"))?;
        if !(0.0..=1.0).contains(&self.query.outside_fraction) {
            bail!(
                "[query] outside_fraction ({}) must lie in [0, 1]",
                self.query.outside_fraction
            );
        }
        if self.train.num_scenes == 0 || self.train.num_scenes > 64 {
            bail!(
                "[train] num_scenes ({}) must lie in 1..=64",
                self.train.num_scenes
            );
        }
        if self.train.learning_rate.is_nan() || self.train.learning_rate < 0.0 {
            bail!("[train] learning_rate must be >= 0");
        }
        Ok(())
    }

    pub fn scale_target_params(&self) -> ScaleTargetParams {
        ScaleTargetParams::new(self.scale_target.beta, self.scale_target.theta)
            .expect("validated")
    }

    pub fn focal_params(&self) -> FocalParams {
        FocalParams::new(self.focal.alpha, self.focal.gamma).expect("validated")
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig::new(
            self.sampling.num_heads,
            self.sampling.num_levels,
            self.sampling.num_points,
            self.sampling.eta_schedule.clone(),
        )
        .expect("validated")
    }

    pub fn scene_spec(&self) -> sodet_core::synthgen::SceneSpec {
        sodet_core::synthgen::SceneSpec {
            image_width: self.scene.image_width,
            image_height: self.scene.image_height,
            num_objects: self.scene.num_objects,
            num_categories: self.scene.num_categories,
            size_mix: self.scene.size_mix.clone(),
            seed: self.seed,
        }
    }

    pub fn query_batch_spec(&self) -> QueryBatchSpec {
        QueryBatchSpec {
            channels: self.sampling.channels,
            outside_fraction: self.query.outside_fraction,
            num_negatives: self.query.num_negatives,
            level0_stride: self.query.level0_stride,
        }
    }

    /// Output directory resolution: flag/file, then `SODET_OUT`, then
    /// `./runs`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        if let Some(ref dir) = self.out_dir {
            return dir.clone();
        }
        if let Ok(env_dir) = std::env::var(OUT_DIR_ENV) {
            if !env_dir.is_empty() {
                return PathBuf::from(env_dir);
            }
        }
        PathBuf::from("runs")
    }

    /// Run id: first 12 hex digits of the SHA-256 of the canonical
    /// serialized configuration (seeds included). The output directory is
    /// excluded; where a run is written is not part of its identity.
    pub fn run_id(&self) -> String {
        let mut hashable = self.clone();
        hashable.out_dir = None;
        let canonical = toml::to_string(&hashable).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut id = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            let _ = write!(id, "{byte:02x}");
        }
        id
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_paper_ablation_optima() {
        let c = RunConfig::default();
        assert_eq!(c.scale_target.beta, 0.73);
        assert_eq!(c.scale_target.theta, 6.0);
        assert_eq!(c.focal.alpha, 0.5);
        assert_eq!(c.focal.gamma, 1.5);
        assert_eq!(c.sampling.eta_schedule, vec![1.5, 1.3, 1.2, 1.1, 1.05, 1.0]);
    }

    #[test]
    fn shipped_default_config_is_byte_identical_to_code_defaults() {
        assert_eq!(RunConfig::default().to_toml(), DEFAULT_CONFIG_TOML);
    }

    #[test]
    fn shipped_default_config_parses_back_to_defaults() {
        let parsed: RunConfig = toml::from_str(DEFAULT_CONFIG_TOML).unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn run_id_is_stable_and_seed_sensitive() {
        let a = RunConfig::default();
        assert_eq!(a.run_id(), a.run_id());
        assert_eq!(a.run_id().len(), 12);
        let mut b = a.clone();
        b.seed = 43;
        assert_ne!(a.run_id(), b.run_id());
    }

    #[test]
    fn validation_reports_the_offending_section() {
        let mut c = RunConfig::default();
        c.scale_target.beta = 1.5;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("[scale_target]"), "{err}");

        let mut c = RunConfig::default();
        c.sampling.eta_schedule = vec![1.0, 2.0];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("[sampling]"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<RunConfig>("definitely_not_a_field = 3\n").unwrap_err();
        assert!(err.to_string().contains("definitely_not_a_field"));
    }
}
