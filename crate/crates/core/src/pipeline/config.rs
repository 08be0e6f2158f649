//! Run manifests and the loaded run context.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Benchmark, HyperParams, Split};
use crate::generation::{AggregationTemplate, Backend, BackendConfig, BackendKind, DEFAULT_K};
use crate::mitigator::SweepGrid;
use crate::scoring::{Scorer, ScorerConfig};

use super::{load_benchmark_file, PipelineError, Stage};

pub const DEFAULT_ORACLE_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Samples fused per aggregated response.
    pub k: usize,
    /// System prompt for the normal baseline; empty sends none.
    pub normal_system_prompt: String,
    /// User template for the aggregation call; the shipped one if unset.
    pub aggregation_template: Option<PathBuf>,
    /// Splits to generate for and evaluate.
    pub splits: Vec<Split>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            normal_system_prompt: String::new(),
            aggregation_template: None,
            splits: Split::ALL.to_vec(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_oracle_step() -> f64 {
    DEFAULT_ORACLE_STEP
}

/// TOML run description. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub benchmark: PathBuf,
    /// Hyperparameter TOML; defaults apply when unset.
    #[serde(default)]
    pub hyperparams: Option<PathBuf>,
    /// Seeds the optimizer restarts and every generation draw.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scorer: ScorerConfig,
    pub backend: BackendConfig,
    /// Separate backend for aggregation calls; `backend` if unset.
    #[serde(default)]
    pub aggregator_backend: Option<BackendConfig>,
    #[serde(default)]
    pub generation: GenerationConfig,
    /// Grid for `sweep`; the default grid if unset.
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default = "default_oracle_step")]
    pub oracle_step: f64,
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text)
            .map_err(|e| PipelineError::validation(Stage::Load, format!("manifest: {e}")))
    }

    /// Reads a manifest and returns it with the directory its relative
    /// paths resolve against.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::read(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::parse(&text)?, base_dir))
    }
}

/// Command-line overrides applied on top of the manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
}

/// A validated manifest with everything it references loaded.
pub struct RunContext {
    pub manifest: RunManifest,
    pub base_dir: PathBuf,
    pub output_dir: PathBuf,
    pub hyperparams: HyperParams,
    pub benchmark: Benchmark,
    pub scorer_config: ScorerConfig,
    pub template: AggregationTemplate,
    /// SHA-256 of every input file, keyed by role.
    pub file_hashes: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::read(path, e))
}

/// Parses hyperparameters; the seed belongs in the manifest, so an
/// `rng_seed` key is rejected rather than silently overridden.
fn parse_hyperparams(text: &str, seed: u64) -> Result<HyperParams, PipelineError> {
    let invalid = |e: String| PipelineError::validation(Stage::Load, format!("hyperparams: {e}"));
    let table: toml::Table = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
    if table.contains_key("rng_seed") {
        return Err(invalid(
            "set `seed` in the manifest instead of `rng_seed`".into(),
        ));
    }
    let hp: HyperParams = table
        .try_into()
        .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
    let hp = HyperParams {
        rng_seed: seed,
        ..hp
    };
    hp.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(hp)
}

impl RunContext {
    pub fn load(manifest_path: &Path, overrides: &Overrides) -> Result<Self, PipelineError> {
        let (manifest, base_dir) = RunManifest::load(manifest_path)?;
        Self::from_manifest(manifest, base_dir, overrides)
    }

    pub fn from_manifest(
        mut manifest: RunManifest,
        base_dir: PathBuf,
        overrides: &Overrides,
    ) -> Result<Self, PipelineError> {
        if let Some(seed) = overrides.seed {
            manifest.seed = seed;
        }
        if let Some(kind) = overrides.backend {
            manifest.backend.kind = kind;
        }
        let output_dir = match &overrides.output_dir {
            Some(dir) => dir.clone(),
            None => base_dir.join(&manifest.output_dir),
        };
        let invalid = |e: &dyn std::fmt::Display| PipelineError::validation(Stage::Load, e);
        manifest.backend.validate().map_err(|e| invalid(&e))?;
        if let Some(agg) = &manifest.aggregator_backend {
            agg.validate().map_err(|e| invalid(&e))?;
        }
        if manifest.generation.k == 0 {
            return Err(invalid(&"generation.k must be at least 1"));
        }
        if manifest.generation.splits.is_empty() {
            return Err(invalid(&"generation.splits must not be empty"));
        }
        if let Some(grid) = &manifest.sweep {
            grid.validate().map_err(|e| invalid(&e))?;
        }

        let mut file_hashes = BTreeMap::new();
        let benchmark_path = base_dir.join(&manifest.benchmark);
        file_hashes.insert(
            "benchmark".into(),
            sha256_hex(&read_bytes(&benchmark_path)?),
        );
        let benchmark = load_benchmark_file(&benchmark_path)?.into_benchmark()?;

        let hyperparams = match &manifest.hyperparams {
            Some(p) => {
                let path = base_dir.join(p);
                let bytes = read_bytes(&path)?;
                file_hashes.insert("hyperparams".into(), sha256_hex(&bytes));
                parse_hyperparams(&String::from_utf8_lossy(&bytes), manifest.seed)?
            }
            None => HyperParams {
                rng_seed: manifest.seed,
                ..HyperParams::default()
            },
        };

        let mut scorer_config = manifest.scorer.clone();
        if let Some(range) = benchmark.score_range() {
            scorer_config.score_range = range;
        }
        scorer_config.validate().map_err(|e| invalid(&e))?;
        if let Some(p) = &scorer_config.lexicon_path {
            file_hashes.insert(
                "lexicon".into(),
                sha256_hex(&read_bytes(&base_dir.join(p))?),
            );
        }

        let template = match &manifest.generation.aggregation_template {
            Some(p) => AggregationTemplate::load(&base_dir.join(p)).map_err(|e| invalid(&e))?,
            None => AggregationTemplate::builtin(),
        };
        file_hashes.insert("aggregation_template".into(), template.hash().to_string());
        for (role, cfg) in [
            ("backend_fixture", Some(&manifest.backend)),
            ("aggregator_fixture", manifest.aggregator_backend.as_ref()),
        ] {
            if let Some(BackendConfig {
                kind: BackendKind::Mock,
                fixture: Some(f),
                ..
            }) = cfg
            {
                file_hashes.insert(role.into(), sha256_hex(&read_bytes(&base_dir.join(f))?));
            }
        }

        Ok(Self {
            manifest,
            base_dir,
            output_dir,
            hyperparams,
            benchmark,
            scorer_config,
            template,
            file_hashes,
        })
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn ensure_output_dir(&self) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| PipelineError::write(&self.output_dir, e))
    }

    pub fn backend(&self) -> Result<Box<dyn Backend>, PipelineError> {
        self.manifest
            .backend
            .build(&self.base_dir)
            .map_err(|e| PipelineError::validation(Stage::Load, e))
    }

    /// The aggregation backend, if configured separately.
    pub fn aggregator_backend(&self) -> Result<Option<Box<dyn Backend>>, PipelineError> {
        self.manifest
            .aggregator_backend
            .as_ref()
            .map(|cfg| cfg.build(&self.base_dir))
            .transpose()
            .map_err(|e| PipelineError::validation(Stage::Load, e))
    }

    pub fn scorer(&self) -> Result<Box<dyn Scorer>, PipelineError> {
        self.scorer_config
            .build(&self.base_dir)
            .map_err(|e| PipelineError::validation(Stage::Load, e))
    }

    /// Hash of the effective configuration: the manifest without its output
    /// directory, the resolved hyperparameters and every input file hash.
    pub fn config_hash(&self) -> String {
        let mut manifest = self.manifest.clone();
        manifest.output_dir = PathBuf::new();
        let value = serde_json::json!({
            "manifest": manifest,
            "hyperparams": self.hyperparams,
            "files": self.file_hashes,
        });
        sha256_hex(value.to_string().as_bytes())
    }
}
