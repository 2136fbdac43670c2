//! Key = value configuration files with full schema validation. Every key is
//! known; unknown keys are errors. Command-line flags override file values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use plpose_core::dualgraph::AblationFlags;
use plpose_core::geometry::ScaleMode;
use plpose_core::model::ModelConfig;
use plpose_core::train::TrainConfig;

/// Model plus training settings as found in a config file.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

const KNOWN_KEYS: &[&str] = &[
    "width",
    "depth",
    "heads",
    "variant",
    "scale_mode",
    "n_points",
    "n_lines",
    "learning_rate",
    "batch_size",
    "steps",
    "seed",
    "eval_every",
    "threads",
];

pub fn parse_config_text(text: &str, origin: &str) -> Result<Settings> {
    let mut settings = Settings::default();
    let mut seen = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            bail!(
                "{origin}:{}: unknown key {key:?} (known: {})",
                lineno + 1,
                KNOWN_KEYS.join(", ")
            );
        }
        if seen.insert(key.to_string(), lineno + 1).is_some() {
            bail!("{origin}:{}: duplicate key {key:?}", lineno + 1);
        }
        apply_key(&mut settings, key, value)
            .with_context(|| format!("{origin}:{}", lineno + 1))?;
    }
    Ok(settings)
}

pub fn load_config(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_text(&text, &path.display().to_string())
}

pub fn apply_key(settings: &mut Settings, key: &str, value: &str) -> Result<()> {
    let parse_usize =
        |v: &str| -> Result<usize> { v.parse().map_err(|_| anyhow!("bad integer {v:?}")) };
    match key {
        "width" => settings.model.width = parse_usize(value)?,
        "depth" => settings.model.depth = parse_usize(value)?,
        "heads" => settings.model.heads = parse_usize(value)?,
        "variant" => {
            settings.model.flags = AblationFlags::parse(value).ok_or_else(|| {
                anyhow!(
                    "bad variant {value:?} (expected baseline, lines, line-passing, visual, visual-weighted, full)"
                )
            })?
        }
        "scale_mode" => {
            settings.model.scale_mode = ScaleMode::parse(value)
                .ok_or_else(|| anyhow!("bad scale_mode {value:?} (unit or metric)"))?
        }
        "n_points" => settings.model.n_points = parse_usize(value)?,
        "n_lines" => settings.model.n_lines = parse_usize(value)?,
        "learning_rate" => {
            settings.train.learning_rate =
                value.parse().map_err(|_| anyhow!("bad float {value:?}"))?
        }
        "batch_size" => settings.train.batch_size = parse_usize(value)?,
        "steps" => settings.train.steps = parse_usize(value)?,
        "seed" => settings.train.seed = value.parse().map_err(|_| anyhow!("bad seed {value:?}"))?,
        "eval_every" => settings.train.eval_every = parse_usize(value)?,
        "threads" => settings.train.threads = parse_usize(value)?,
        other => bail!("unknown key {other:?}"),
    }
    Ok(())
}

/// Deterministic snapshot of the settings, one sorted `key = value` per line.
pub fn snapshot(settings: &Settings) -> String {
    let mut out = String::new();
    let pairs: Vec<(&str, String)> = vec![
        ("batch_size", settings.train.batch_size.to_string()),
        ("depth", settings.model.depth.to_string()),
        ("eval_every", settings.train.eval_every.to_string()),
        ("heads", settings.model.heads.to_string()),
        ("learning_rate", format!("{}", settings.train.learning_rate)),
        ("n_lines", settings.model.n_lines.to_string()),
        ("n_points", settings.model.n_points.to_string()),
        ("scale_mode", settings.model.scale_mode.as_str().to_string()),
        ("seed", settings.train.seed.to_string()),
        ("steps", settings.train.steps.to_string()),
        ("threads", settings.train.threads.to_string()),
        ("variant", settings.model.flags.variant_name().to_string()),
        ("width", settings.model.width.to_string()),
    ];
    for (k, v) in pairs {
        let _ = writeln!(out, "config {k} = {v}");
    }
    out
}

/// Common override flags shared by train/gradcheck-style commands.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Feature width D
    #[arg(long)]
    pub width: Option<usize>,
    /// Dual-graph layer count
    #[arg(long)]
    pub depth: Option<usize>,
    /// Attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// Architecture variant: baseline, lines, line-passing, visual, visual-weighted, full
    #[arg(long)]
    pub variant: Option<String>,
    /// Translation scale handling: unit or metric
    #[arg(long)]
    pub scale_mode: Option<String>,
    /// Resampled point count per pair
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Resampled line count per pair
    #[arg(long)]
    pub n_lines: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Worker threads (0 = auto)
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, settings: &mut Settings) -> Result<()> {
        macro_rules! set {
            ($field:ident, $key:literal) => {
                if let Some(v) = &self.$field {
                    apply_key(settings, $key, &v.to_string())?;
                }
            };
        }
        set!(width, "width");
        set!(depth, "depth");
        set!(heads, "heads");
        set!(variant, "variant");
        set!(scale_mode, "scale_mode");
        set!(n_points, "n_points");
        set!(n_lines, "n_lines");
        set!(learning_rate, "learning_rate");
        set!(batch_size, "batch_size");
        set!(steps, "steps");
        set!(seed, "seed");
        set!(eval_every, "eval_every");
        set!(threads, "threads");
        Ok(())
    }
}
