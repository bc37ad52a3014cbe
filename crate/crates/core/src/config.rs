//! Run configuration.
//!
//! The config file is flat UTF-8 text, one `key = value` per line; `#` starts
//! a comment. Relative paths resolve against the config file's directory.
//!
//! ```text
//! input = frames/
//! output = out/
//! template = skies/cloudy.png
//! crop_factor = 0.5
//! radius = 20
//! epsilon = 0.01
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::blending::{HarmonizationParams, DEFAULT_HAZE_LEVEL};
use crate::error::{Error, Result};
use crate::matting::{CoarseMatteWeights, GuidedFilterParams, MatteSource, DEFAULT_MATTE_LONG_SIDE};
use crate::motion::MotionParams;

pub const DEFAULT_MATTE_PATTERN: &str = "matte_%06d.png";
pub const DEFAULT_OUTPUT_PATTERN: &str = "frame_%06d.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Rain,
    Haze,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Directory of numbered input frames.
    pub input: PathBuf,
    pub output: PathBuf,
    pub output_pattern: String,
    pub template: PathBuf,
    pub crop_factor: f64,
    /// Mirror-pad the template into a seamless 2x2 tile before use.
    pub template_mirror: bool,
    pub matte_weights: CoarseMatteWeights,
    /// When set, coarse mattes are read from this directory instead of
    /// being estimated.
    pub matte_dir: Option<PathBuf>,
    pub matte_pattern: String,
    pub matte_long_side: usize,
    pub guided: GuidedFilterParams,
    pub motion: MotionParams,
    pub harmonization: HarmonizationParams,
    /// Rain layer: a single image or a directory of numbered images.
    pub rain: Option<PathBuf>,
    pub rain_opacity: f32,
    pub haze_opacity: Option<f32>,
    pub haze_level: f32,
    /// Screening order of the configured layers.
    pub layer_order: Vec<LayerKind>,
    /// 0 means use all available cores.
    pub threads: usize,
    pub report: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::from("out"),
            output_pattern: DEFAULT_OUTPUT_PATTERN.to_string(),
            template: PathBuf::new(),
            crop_factor: 0.5,
            template_mirror: false,
            matte_weights: CoarseMatteWeights::default(),
            matte_dir: None,
            matte_pattern: DEFAULT_MATTE_PATTERN.to_string(),
            matte_long_side: DEFAULT_MATTE_LONG_SIDE,
            guided: GuidedFilterParams::default(),
            motion: MotionParams::default(),
            harmonization: HarmonizationParams::default(),
            rain: None,
            rain_opacity: 0.6,
            haze_opacity: None,
            haze_level: DEFAULT_HAZE_LEVEL,
            layer_order: vec![LayerKind::Rain, LayerKind::Haze],
            threads: 0,
            report: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse_str(&text, Some(base))
    }

    /// Parses config text. Relative paths are joined onto `base` if given.
    pub fn parse_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "input" => self.input = path(value),
            "output" => self.output = path(value),
            "output_pattern" => self.output_pattern = value.to_string(),
            "template" => self.template = path(value),
            "crop_factor" => self.crop_factor = parse(key, value)?,
            "template_mirror" => self.template_mirror = parse_bool(key, value)?,
            "matte_dir" => self.matte_dir = Some(path(value)),
            "matte_pattern" => self.matte_pattern = value.to_string(),
            "matte_long_side" => self.matte_long_side = parse(key, value)?,
            "matte_w_blue" => self.matte_weights.blueness = parse(key, value)?,
            "matte_w_smooth" => self.matte_weights.smoothness = parse(key, value)?,
            "matte_w_height" => self.matte_weights.height = parse(key, value)?,
            "matte_bias" => self.matte_weights.bias = parse(key, value)?,
            "radius" => self.guided.radius = parse(key, value)?,
            "epsilon" => self.guided.epsilon = parse(key, value)?,
            "max_features" => self.motion.max_features = parse(key, value)?,
            "pyramid_levels" => self.motion.pyramid_levels = parse(key, value)?,
            "lk_window" => self.motion.lk_window = parse(key, value)?,
            "lk_iterations" => self.motion.lk_iterations = parse(key, value)?,
            "lk_epsilon" => self.motion.lk_epsilon = parse(key, value)?,
            "bandwidth" => self.motion.kde_bandwidth = parse(key, value)?,
            "eta" => self.motion.eta = parse(key, value)?,
            "ransac_iterations" => self.motion.ransac_iterations = parse(key, value)?,
            "ransac_tolerance" => self.motion.ransac_tolerance = parse(key, value)?,
            "min_matches" => self.motion.min_matches = parse(key, value)?,
            "seed" => self.motion.rng_seed = parse(key, value)?,
            "alpha" => self.harmonization.alpha = parse(key, value)?,
            "beta" => self.harmonization.beta = parse(key, value)?,
            "sky_threshold" => self.harmonization.sky_region_threshold = parse(key, value)?,
            "rain" => self.rain = Some(path(value)),
            "rain_opacity" => self.rain_opacity = parse(key, value)?,
            "haze_opacity" => self.haze_opacity = Some(parse(key, value)?),
            "haze_level" => self.haze_level = parse(key, value)?,
            "layers" => {
                self.layer_order = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| match s {
                        "rain" => Ok(LayerKind::Rain),
                        "haze" => Ok(LayerKind::Haze),
                        other => Err(Error::Config(format!("layers: unknown layer {other:?}"))),
                    })
                    .collect::<Result<_>>()?
            }
            "threads" => self.threads = parse(key, value)?,
            "report" => self.report = Some(path(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn matte_source(&self) -> MatteSource {
        match &self.matte_dir {
            Some(dir) => MatteSource::FileSequence {
                dir: dir.clone(),
                pattern: self.matte_pattern.clone(),
            },
            None => MatteSource::Heuristic(self.matte_weights),
        }
    }

    /// Numeric checks only; see [`PipelineConfig::validate`] for paths.
    pub fn validate_params(&self) -> Result<()> {
        self.guided.validate()?;
        self.motion.validate()?;
        self.harmonization.validate()?;
        if !(self.crop_factor > 0.0 && self.crop_factor <= 1.0) {
            return Err(Error::Config(format!(
                "crop_factor must lie in (0, 1], got {}",
                self.crop_factor
            )));
        }
        if self.matte_long_side == 0 {
            return Err(Error::Config("matte_long_side must be positive".into()));
        }
        for (name, v) in [
            ("rain_opacity", Some(self.rain_opacity)),
            ("haze_opacity", self.haze_opacity),
            ("haze_level", Some(self.haze_level)),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
                }
            }
        }
        crate::matting::expand_index_pattern(&self.output_pattern, 0)?;
        if self.matte_dir.is_some() {
            crate::matting::expand_index_pattern(&self.matte_pattern, 0)?;
        }
        Ok(())
    }

    /// Checks numeric ranges and that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        if !self.input.is_dir() {
            return Err(Error::Config(format!(
                "input directory {} does not exist",
                self.input.display()
            )));
        }
        if !self.template.is_file() {
            return Err(Error::Config(format!(
                "template {} does not exist",
                self.template.display()
            )));
        }
        if let Some(dir) = &self.matte_dir {
            if !dir.is_dir() {
                return Err(Error::Config(format!(
                    "matte directory {} does not exist",
                    dir.display()
                )));
            }
        }
        if let Some(rain) = &self.rain {
            if !rain.exists() {
                return Err(Error::Config(format!(
                    "rain layer {} does not exist",
                    rain.display()
                )));
            }
        }
        Ok(())
    }
}
