use std::path::{Path, PathBuf};

use attrgen::model::{AdamConfig, ModelConfig};
use attrgen::synth::{SuiteShape, WorldSpec};
use attrgen::train::{Stage, StageSpec};
use attrgen::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Main,
    NegativeAblation,
    ZeroShot,
    Applicability,
    Multimodal,
    ArchSweep,
}

/// Where the synthetic world comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSource {
    Suite(SuiteShape),
    ExplicitSuite(SuiteShape),
    File(PathBuf),
}

impl WorldSource {
    pub fn spec(&self) -> Result<WorldSpec> {
        match self {
            WorldSource::Suite(s) => Ok(WorldSpec::suite(s)),
            WorldSource::ExplicitSuite(s) => Ok(WorldSpec::all_explicit(s)),
            WorldSource::File(p) => WorldSpec::from_json_file(p),
        }
    }
}

/// Model shape; vocabulary size and embedding width are filled in from the
/// data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, embedding_dim: usize, use_embedding_channel: bool) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            d_ff: self.d_ff,
            max_input_len: self.max_input_len,
            max_output_len: self.max_output_len,
            dropout_rate: self.dropout_rate,
            use_embedding_channel,
            embedding_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub world: WorldSource,
    pub n_products: usize,
    pub strong_fraction: f64,
    pub eval_fraction: f64,
    pub test_fraction: f64,
    pub model: ModelShape,
    pub stage1: StageSpec,
    pub stage2: StageSpec,
    /// Target precision P.
    pub precision: f64,
    /// Minimum support S.
    pub min_support: usize,
    /// Beam width K.
    pub beam_width: usize,
    pub vocab_min_count: usize,
    /// Share of PACs whose strong labels are withheld (zero-shot).
    pub holdout_fraction: f64,
    /// Products drawn per PAC for the applicability protocol.
    pub empty_products_per_pac: usize,
    /// Weight applied to `O` tags in the tagger loss.
    pub tagger_o_weight: f64,
    pub sweep_d_models: Vec<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn stage(stage: Stage, seed: u64, lr: f64, max_epochs: usize) -> StageSpec {
    StageSpec {
        max_epochs,
        batch_size: 16,
        optimizer: AdamConfig { learning_rate: lr, ..AdamConfig::default() },
        seed,
        ..StageSpec::new(stage)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: about 50 PACs and 20,000 products with a
    /// 64-wide, 2+2-layer model.
    pub fn desk(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            world: WorldSource::Suite(SuiteShape {
                seed,
                n_product_types: 5,
                n_countries: 2,
                values_per_attribute: 8,
                with_image_attribute: true,
                weak_noise_rate: 0.2,
            }),
            n_products: 20_000,
            strong_fraction: 0.3,
            eval_fraction: 0.02,
            test_fraction: 0.1,
            model: ModelShape {
                d_model: 64,
                n_heads: 4,
                n_enc_layers: 2,
                n_dec_layers: 2,
                d_ff: 128,
                max_input_len: 48,
                max_output_len: 8,
                dropout_rate: 0.0,
            },
            stage1: StageSpec {
                optimizer: AdamConfig { learning_rate: 2e-3, warmup_steps: 1_000, ..AdamConfig::default() },
                ..stage(Stage::MixedWeakStrong, seed, 2e-3, 20)
            },
            stage2: stage(Stage::StrongOnly, seed + 1, 1e-3, 20),
            precision: attrgen::eval::DEFAULT_PRECISION,
            min_support: attrgen::eval::DEFAULT_MIN_SUPPORT,
            beam_width: attrgen::decode::DEFAULT_BEAM_WIDTH,
            vocab_min_count: 1,
            holdout_fraction: 0.2,
            empty_products_per_pac: 50,
            tagger_o_weight: 0.2,
            sweep_d_models: vec![32, 64, 128],
            output_dir: None,
        }
    }

    /// A reduced setting that keeps every driver's qualitative behaviour and
    /// runs in a few minutes on one core.
    pub fn quick(kind: ExperimentKind, seed: u64) -> Self {
        let mut c = Self::desk(kind, seed);
        c.world = WorldSource::Suite(SuiteShape {
            seed,
            n_product_types: 3,
            n_countries: 2,
            values_per_attribute: 6,
            with_image_attribute: true,
            weak_noise_rate: 0.2,
        });
        c.n_products = 2_400;
        c.strong_fraction = 0.4;
        c.eval_fraction = 0.04;
        c.test_fraction = 0.2;
        c.model = ModelShape {
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 64,
            ..c.model
        };
        c.stage1.optimizer = AdamConfig { learning_rate: 3e-3, warmup_steps: 400, ..AdamConfig::default() };
        c.stage1.max_epochs = 20;
        c.stage2.max_epochs = 6;
        c.sweep_d_models = vec![16, 32];
        c
    }

    /// Replaces every seed in the config: run, world suite and stages.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        match &mut self.world {
            WorldSource::Suite(s) | WorldSource::ExplicitSuite(s) => s.seed = seed,
            WorldSource::File(_) => {}
        }
        self.stage1.seed = seed;
        self.stage2.seed = seed + 1;
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.precision > 0.0 && self.precision < 1.0) {
            return Err(Error::InvalidConfig(format!("precision {} not in (0, 1)", self.precision)));
        }
        if self.min_support == 0 || self.beam_width == 0 {
            return Err(Error::InvalidConfig("min_support and beam_width must be positive".into()));
        }
        if let WorldSource::File(p) = &self.world {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("world spec {} does not exist", p.display())));
            }
        }
        self.stage1.validate()?;
        self.stage2.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for c in [ExperimentConfig::desk(ExperimentKind::Main, 1), ExperimentConfig::quick(ExperimentKind::ZeroShot, 2)] {
            c.validate().unwrap();
            let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn reseeding_matches_a_fresh_preset() {
        let a = ExperimentConfig::quick(ExperimentKind::Main, 1).with_seed(9);
        assert_eq!(a, ExperimentConfig::quick(ExperimentKind::Main, 9));
    }

    #[test]
    fn bad_precision_is_rejected() {
        let c = ExperimentConfig { precision: 1.0, ..ExperimentConfig::quick(ExperimentKind::Main, 0) };
        assert!(c.validate().is_err());
    }

    #[test]
    fn desk_world_has_about_fifty_pacs() {
        let c = ExperimentConfig::desk(ExperimentKind::Main, 0);
        let spec = c.world.spec().unwrap();
        let n = spec.product_types.len() * spec.countries.len() * spec.attributes.len();
        assert_eq!(n, 50);
    }
}
