//! Sectioned TOML pipeline config with `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use wwkit::augment::{CorruptionSpec, MixRecipe, RoomSampler};
use wwkit::decode::{DEFAULT_MIN_GAP, DEFAULT_TOLERANCE};
use wwkit::mining::{BalanceRatio, Thresholds};
use wwkit::spotter::{Encoding, ModelShape, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rng_seed: u64,
    pub rir: RirSection,
    pub augment: AugmentSection,
    pub lexicon: LexiconSection,
    pub mining: MiningSection,
    pub features: FeaturesSection,
    pub training: TrainingSection,
    pub decoding: DecodingSection,
    pub demo: DemoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RirSection {
    pub count: usize,
    pub dims_min: [f64; 3],
    pub dims_max: [f64; 3],
    pub reflection_min: f64,
    pub reflection_max: f64,
    pub max_order: u32,
    pub margin: f64,
}

impl Default for RirSection {
    fn default() -> Self {
        let s = RoomSampler::default();
        RirSection {
            count: 20,
            dims_min: s.dims_min,
            dims_max: s.dims_max,
            reflection_min: s.reflection_min,
            reflection_max: s.reflection_max,
            max_order: s.max_order,
            margin: s.margin,
        }
    }
}

impl RirSection {
    pub fn sampler(&self) -> RoomSampler {
        RoomSampler {
            dims_min: self.dims_min,
            dims_max: self.dims_max,
            reflection_min: self.reflection_min,
            reflection_max: self.reflection_max,
            max_order: self.max_order,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub clean_dir: Option<PathBuf>,
    pub rir_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub music_dir: Option<PathBuf>,
    /// A published row ("50K", "200K", "350K", "500K").
    pub recipe: Option<String>,
    /// Scales the published row down to this many utterances.
    pub scale_to: Option<usize>,
    /// Explicit recipe, used when `recipe` is unset.
    pub ctm: Option<usize>,
    pub augmented_each: Option<usize>,
    pub snr_mean_db: f64,
    pub snr_std_db: f64,
    pub noise_music_split: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let c = CorruptionSpec::default();
        AugmentSection {
            clean_dir: None,
            rir_dir: None,
            noise_dir: None,
            music_dir: None,
            recipe: None,
            scale_to: None,
            ctm: None,
            augmented_each: None,
            snr_mean_db: c.snr_mean_db,
            snr_std_db: c.snr_std_db,
            noise_music_split: c.noise_music_split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconSection {
    pub path: Option<PathBuf>,
    pub frequencies: Option<PathBuf>,
    pub wake_word: String,
    pub d_max: usize,
    pub top_n: usize,
}

impl Default for LexiconSection {
    fn default() -> Self {
        LexiconSection {
            path: None,
            frequencies: None,
            wake_word: "alexa".into(),
            d_max: 1,
            top_n: wwkit::lexicon::DEFAULT_TOP_N,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub hypotheses: Option<PathBuf>,
    /// Confusable-set TSV; without it only the wake word mines negatives.
    pub confusables: Option<PathBuf>,
    pub theta_p: f64,
    pub theta_n: f64,
    /// `P:N`, e.g. `"1:2"`. Unset keeps every mined example.
    pub ratio: Option<String>,
}

impl Default for MiningSection {
    fn default() -> Self {
        let t = Thresholds::default();
        MiningSection {
            hypotheses: None,
            confusables: None,
            theta_p: t.positive,
            theta_n: t.negative,
            ratio: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    /// A directory of WAV files or an utterance list.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub list: Option<PathBuf>,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub l2_coefficient: f64,
    pub frame_stride: usize,
    pub bottleneck: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// `text` or `f32le`.
    pub encoding: String,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            list: None,
            learning_rate: t.learning_rate,
            minibatch_size: t.minibatch_size,
            epochs: t.epochs,
            l2_coefficient: t.l2_coefficient,
            frame_stride: 1,
            bottleneck: t.shape.bottleneck,
            hidden: t.shape.hidden,
            blocks: t.shape.blocks,
            encoding: "text".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingSection {
    pub model: Option<PathBuf>,
    /// Utterance list to decode.
    pub list: Option<PathBuf>,
    /// Decode output directories consumed by `eval` and `det`.
    pub inputs: Vec<PathBuf>,
    /// Defaults to the window stored in the checkpoint.
    pub smooth_window_frames: Option<usize>,
    pub threshold: f64,
    pub min_gap_frames: usize,
    pub tolerance_frames: usize,
    pub det_thresholds: usize,
}

impl Default for DecodingSection {
    fn default() -> Self {
        DecodingSection {
            model: None,
            list: None,
            inputs: Vec::new(),
            smooth_window_frames: None,
            threshold: 0.5,
            min_gap_frames: DEFAULT_MIN_GAP,
            tolerance_frames: DEFAULT_TOLERANCE,
            det_thresholds: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub test_snr_db: f64,
    pub mct_clean_share: f64,
    pub frame_stride: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
}

impl Default for DemoSection {
    fn default() -> Self {
        let d = wwkit::demo::DemoConfig::default();
        DemoSection {
            train_utterances: d.train_utterances,
            test_utterances: d.test_utterances,
            test_snr_db: d.test_snr_db,
            mct_clean_share: d.mct_clean_share,
            frame_stride: d.frame_stride,
            epochs: d.train.epochs,
            learning_rate: d.train.learning_rate,
            minibatch_size: d.train.minibatch_size,
        }
    }
}

/// Parses `section.key=value`. Values are read as TOML, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(spec, "expected KEY=VALUE"))?;
    let key = key.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(key, "malformed key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Loads `path` (if any), applies overrides, and checks every section.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::config(p.display().to_string(), e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::config(p.display().to_string(), e.message()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let text = toml::to_string(&table).map_err(|e| CliError::config("<config>", e))?;
    let cfg: PipelineConfig = toml::from_str(&text).map_err(|e| CliError::config(error_path(&e, &text), e.message()))?;
    if let Some(base) = path.and_then(Path::parent) {
        let mut cfg = cfg;
        cfg.resolve_paths(base);
        cfg.validate()?;
        return Ok(cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Dotted key of the line a TOML error points at, best effort.
fn error_path(e: &toml::de::Error, text: &str) -> String {
    let Some(span) = e.span() else {
        return "<config>".into();
    };
    let mut section = String::new();
    let mut offset = 0;
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = t.trim_matches(|c| c == '[' || c == ']').to_string();
        }
        if span.start < offset + line.len() + 1 {
            let key = t.split('=').next().unwrap_or("").trim();
            return if t.starts_with('[') || key.is_empty() {
                section
            } else if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
        }
        offset += line.len() + 1;
    }
    "<config>".into()
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(path, format!("must be > 0, got {v}")))
    }
}

fn at_least_one(path: &str, v: usize) -> Result<(), CliError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(CliError::config(path, "must be >= 1"))
    }
}

impl PipelineConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.augment.clean_dir);
        fix(&mut self.augment.rir_dir);
        fix(&mut self.augment.noise_dir);
        fix(&mut self.augment.music_dir);
        fix(&mut self.lexicon.path);
        fix(&mut self.lexicon.frequencies);
        fix(&mut self.mining.hypotheses);
        fix(&mut self.mining.confusables);
        fix(&mut self.features.input);
        fix(&mut self.training.list);
        fix(&mut self.decoding.model);
        fix(&mut self.decoding.list);
        for p in &mut self.decoding.inputs {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Range checks plus existence of every path that is set.
    pub fn validate(&self) -> Result<(), CliError> {
        self.rir
            .sampler()
            .validate()
            .map_err(|e| CliError::config("rir", e))?;
        self.corruption().validate().map_err(|e| CliError::config("augment", e))?;
        if self.augment.recipe.is_some() || self.augment.ctm.is_some() {
            self.recipe()?;
        }
        at_least_one("lexicon.top_n", self.lexicon.top_n)?;
        if self.lexicon.wake_word.trim().is_empty() {
            return Err(CliError::config("lexicon.wake_word", "must not be empty"));
        }
        for (p, v) in [("mining.theta_p", self.mining.theta_p), ("mining.theta_n", self.mining.theta_n)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::config(p, format!("{v} outside [0, 1]")));
            }
        }
        self.ratio()?;
        self.train_config()?;
        at_least_one("training.frame_stride", self.training.frame_stride)?;
        self.encoding()?;
        let d = &self.decoding;
        if let Some(w) = d.smooth_window_frames {
            at_least_one("decoding.smooth_window_frames", w)?;
        }
        if !(d.threshold > 0.0 && d.threshold < 1.0) {
            return Err(CliError::config("decoding.threshold", format!("{} outside (0, 1)", d.threshold)));
        }
        if d.det_thresholds < 2 {
            return Err(CliError::config("decoding.det_thresholds", "must be >= 2"));
        }
        let m = &self.demo;
        at_least_one("demo.train_utterances", m.train_utterances)?;
        at_least_one("demo.test_utterances", m.test_utterances)?;
        at_least_one("demo.frame_stride", m.frame_stride)?;
        at_least_one("demo.minibatch_size", m.minibatch_size)?;
        positive("demo.learning_rate", m.learning_rate)?;
        if !(0.0..=1.0).contains(&m.mct_clean_share) {
            return Err(CliError::config("demo.mct_clean_share", "outside [0, 1]"));
        }
        for (name, p) in self.paths() {
            if !p.exists() {
                return Err(CliError::config(name, format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn paths(&self) -> Vec<(String, &Path)> {
        let opt = [
            ("augment.clean_dir", &self.augment.clean_dir),
            ("augment.rir_dir", &self.augment.rir_dir),
            ("augment.noise_dir", &self.augment.noise_dir),
            ("augment.music_dir", &self.augment.music_dir),
            ("lexicon.path", &self.lexicon.path),
            ("lexicon.frequencies", &self.lexicon.frequencies),
            ("mining.hypotheses", &self.mining.hypotheses),
            ("mining.confusables", &self.mining.confusables),
            ("features.input", &self.features.input),
            ("training.list", &self.training.list),
            ("decoding.model", &self.decoding.model),
            ("decoding.list", &self.decoding.list),
        ];
        let mut v: Vec<(String, &Path)> = opt
            .into_iter()
            .filter_map(|(n, p)| p.as_deref().map(|p| (n.to_string(), p)))
            .collect();
        for (i, p) in self.decoding.inputs.iter().enumerate() {
            v.push((format!("decoding.inputs[{i}]"), p));
        }
        v
    }

    pub fn corruption(&self) -> CorruptionSpec {
        CorruptionSpec {
            snr_mean_db: self.augment.snr_mean_db,
            snr_std_db: self.augment.snr_std_db,
            noise_music_split: self.augment.noise_music_split,
            rng_seed: self.rng_seed,
        }
    }

    pub fn recipe(&self) -> Result<MixRecipe, CliError> {
        let a = &self.augment;
        let recipe = if let Some(name) = &a.recipe {
            let digits = name.trim().trim_end_matches(['K', 'k']);
            let size = digits
                .parse::<usize>()
                .ok()
                .filter(|_| name.trim().len() > digits.len())
                .map(|k| k * 1000)
                .and_then(MixRecipe::published)
                .ok_or_else(|| CliError::config("augment.recipe", format!("unknown recipe {name:?}")))?;
            match a.scale_to {
                Some(n) if n == 0 || size.total_size % n != 0 => {
                    return Err(CliError::config("augment.scale_to", format!("{n} does not divide {}", size.total_size)))
                }
                Some(n) => size
                    .scaled_down(size.total_size / n)
                    .map_err(|e| CliError::config("augment.scale_to", e))?,
                None => size,
            }
        } else {
            match (a.ctm, a.augmented_each) {
                (Some(c), Some(e)) => MixRecipe::new(c + 3 * e, c, e),
                _ => return Err(CliError::config("augment.ctm", "set recipe, or both ctm and augmented_each")),
            }
        };
        recipe.validate().map_err(|e| CliError::config("augment.recipe", e))?;
        Ok(recipe)
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            positive: self.mining.theta_p,
            negative: self.mining.theta_n,
        }
    }

    pub fn ratio(&self) -> Result<Option<BalanceRatio>, CliError> {
        self.mining
            .ratio
            .as_deref()
            .map(|r| r.parse().map_err(|e| CliError::config("mining.ratio", e)))
            .transpose()
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.training;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            minibatch_size: t.minibatch_size,
            epochs: t.epochs,
            rng_seed: self.rng_seed,
            l2_coefficient: t.l2_coefficient,
            shape: ModelShape {
                bottleneck: t.bottleneck,
                hidden: t.hidden,
                blocks: t.blocks,
                ..ModelShape::default()
            },
        };
        cfg.validate().map_err(|e| CliError::config("training", e))?;
        Ok(cfg)
    }

    pub fn encoding(&self) -> Result<Encoding, CliError> {
        self.training
            .encoding
            .parse()
            .map_err(|e| CliError::config("training.encoding", e))
    }

    pub fn demo_config(&self) -> wwkit::demo::DemoConfig {
        let m = &self.demo;
        let base = wwkit::demo::DemoConfig::default();
        wwkit::demo::DemoConfig {
            seed: self.rng_seed,
            train_utterances: m.train_utterances,
            test_utterances: m.test_utterances,
            test_snr_db: m.test_snr_db,
            mct_clean_share: m.mct_clean_share,
            frame_stride: m.frame_stride,
            train: TrainConfig {
                learning_rate: m.learning_rate,
                minibatch_size: m.minibatch_size,
                epochs: m.epochs,
                rng_seed: self.rng_seed,
                ..base.train.clone()
            },
            ..base
        }
    }

    /// First 12 hex digits of the SHA-256 of the canonical config plus the
    /// subcommand name.
    pub fn hash(&self, subcommand: &str) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(format!("{subcommand}\n{canonical}").as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}
