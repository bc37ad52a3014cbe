//! Per-frame orchestration and sequence I/O.
//!
//! For frame `t` the stages run in order: coarse matte at low resolution and
//! guided refinement; sky motion from frame `t-1` (features are detected on
//! the previous frame inside the previous matte and tracked forward); the
//! accumulated template transform and background render; harmonized
//! composite. Motion estimation for frame `t` must finish before `t+1`
//! starts; everything else is a pure function of the frame.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tracing::{debug, info, warn};

use crate::blending::{harmonize_and_compose, HarmonizationParams, WeatherLayer};
use crate::config::{LayerKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::imaging::{build_pyramid, to_gray, Frame, ImagePyramid};
use crate::matting::{downsample_for_matting, expand_index_pattern, refine_matte, GuidedFilterParams, Matte, MatteSource};
use crate::motion::{
    accumulate_motion, detect_sky_features, estimate_motion_ransac, filter_matches_kde, track_lk, MotionParams,
    SimilarityTransform,
};
use crate::skybox::{center_crop_transform, render_background, SkyBoxTemplate, ViewportSpec};

/// Per-stage tunables for [`Pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSettings {
    pub matte_long_side: usize,
    pub guided: GuidedFilterParams,
    pub motion: MotionParams,
    pub harmonization: HarmonizationParams,
}

impl Default for FrameSettings {
    fn default() -> Self {
        Self {
            matte_long_side: crate::matting::DEFAULT_MATTE_LONG_SIDE,
            guided: GuidedFilterParams::default(),
            motion: MotionParams::default(),
            harmonization: HarmonizationParams::default(),
        }
    }
}

impl FrameSettings {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            matte_long_side: cfg.matte_long_side,
            guided: cfg.guided,
            motion: cfg.motion.clone(),
            harmonization: cfg.harmonization,
        }
    }
}

/// Cross-frame state. `history[i]` is the sky motion from frame `i` to
/// frame `i + 1`, so after `n` frames the history holds `n - 1` entries.
#[derive(Debug, Clone, Default)]
pub struct PipelineState {
    dims: Option<(usize, usize)>,
    prev_pyramid: Option<ImagePyramid>,
    prev_matte: Option<Matte>,
    history: Vec<SimilarityTransform>,
    /// `history[t-1] * ... * history[0]`, folded in the same order as
    /// [`accumulate_motion`].
    chain: SimilarityTransform,
    crop: Option<SimilarityTransform>,
    last_motion: Option<SimilarityTransform>,
    frames_processed: usize,
}

impl PipelineState {
    pub fn history(&self) -> &[SimilarityTransform] {
        &self.history
    }

    pub fn frames_processed(&self) -> usize {
        self.frames_processed
    }

    pub fn crop_transform(&self) -> Option<SimilarityTransform> {
        self.crop
    }

    pub fn frame_dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    /// Template-to-frame transform for the most recent frame.
    pub fn background_transform(&self) -> Option<SimilarityTransform> {
        self.crop.map(|c| c * self.chain)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq)]
pub struct PhaseTimings {
    pub matting: f64,
    pub motion: f64,
    pub render: f64,
    pub blend: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FrameReport {
    pub index: usize,
    pub features: usize,
    pub matches: usize,
    pub filtered_matches: usize,
    pub inliers: usize,
    /// True when motion estimation failed and the previous motion (or the
    /// identity) was reused.
    pub fallback: bool,
    /// Sky motion from the previous frame (identity for the first frame).
    pub motion: [[f64; 3]; 3],
    /// Accumulated template-to-frame transform used for the background.
    pub background_transform: [[f64; 3]; 3],
    /// Seconds per phase.
    pub timings: PhaseTimings,
}

/// Outputs of one frame besides the composite, for callers that need the
/// intermediate images.
#[derive(Debug, Clone)]
pub struct FrameProducts {
    pub composite: Frame,
    pub matte: Matte,
    pub background: Frame,
    pub report: FrameReport,
}

pub struct Pipeline {
    settings: FrameSettings,
    matte_source: MatteSource,
    template: SkyBoxTemplate,
    layers: Vec<WeatherLayer>,
    state: PipelineState,
}

fn secs(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

impl Pipeline {
    pub fn new(
        settings: FrameSettings,
        matte_source: MatteSource,
        template: SkyBoxTemplate,
        layers: Vec<WeatherLayer>,
    ) -> Result<Self> {
        settings.guided.validate()?;
        settings.motion.validate()?;
        settings.harmonization.validate()?;
        if settings.matte_long_side == 0 {
            return Err(Error::invalid("matte_long_side must be positive"));
        }
        Ok(Self {
            settings,
            matte_source,
            template,
            layers,
            state: PipelineState::default(),
        })
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn settings(&self) -> &FrameSettings {
        &self.settings
    }

    pub fn process_frame(&mut self, frame: &Frame) -> Result<(Frame, FrameReport)> {
        let p = self.process_frame_detailed(frame)?;
        Ok((p.composite, p.report))
    }

    pub fn process_frame_detailed(&mut self, frame: &Frame) -> Result<FrameProducts> {
        let index = self.state.frames_processed;
        let started = Instant::now();
        let dims = frame.dims();
        match self.state.dims {
            None => {
                let view = ViewportSpec::new(dims.0, dims.1)?;
                self.template.check_resolution(&view);
                self.state.crop = Some(center_crop_transform(&self.template, &view));
                for layer in &mut self.layers {
                    layer.fit_to(dims.0, dims.1)?;
                }
                self.state.dims = Some(dims);
            }
            Some(expected) if expected != dims => {
                return Err(Error::FrameSizeChanged {
                    index,
                    expected_w: expected.0,
                    expected_h: expected.1,
                    actual_w: dims.0,
                    actual_h: dims.1,
                });
            }
            Some(_) => {}
        }
        let mut timings = PhaseTimings::default();

        // Matting.
        let t = Instant::now();
        let low = downsample_for_matting(frame, self.settings.matte_long_side)?;
        let coarse = self.matte_source.coarse_matte(index, &low)?;
        let matte = refine_matte(&coarse, frame, &self.settings.guided)?;
        timings.matting = secs(t);

        // Motion.
        let t = Instant::now();
        let params = MotionParams {
            rng_seed: self.settings.motion.rng_seed.wrapping_add(index as u64),
            ..self.settings.motion.clone()
        };
        let pyramid = build_pyramid(&to_gray(frame), params.pyramid_levels)?;
        let (mut features, mut matches, mut filtered, mut inliers) = (0, 0, 0, 0);
        let mut fallback = false;
        let mut motion = SimilarityTransform::identity();
        if let (Some(prev_pyr), Some(prev_matte)) = (&self.state.prev_pyramid, &self.state.prev_matte) {
            let points = detect_sky_features(prev_pyr.base(), prev_matte, &params);
            let tracked = track_lk(prev_pyr, &pyramid, &points, &params);
            let kept = filter_matches_kde(&tracked, &params);
            let estimate = estimate_motion_ransac(&kept, &params);
            features = points.len();
            matches = tracked.len();
            filtered = kept.len();
            inliers = estimate.inlier_count;
            if inliers == 0 {
                fallback = true;
                motion = self.state.last_motion.unwrap_or_default();
                debug!(index, matches, "motion estimate failed, reusing previous motion");
            } else {
                motion = estimate.transform;
            }
            self.state.history.push(motion);
            self.state.chain = motion * self.state.chain;
            self.state.last_motion = Some(motion);
        }
        timings.motion = secs(t);

        // Background.
        let t = Instant::now();
        let crop = self.state.crop.expect("crop transform set on first frame");
        let background_transform = crop * self.state.chain;
        let view = ViewportSpec::new(dims.0, dims.1)?;
        let background = render_background(&self.template, &background_transform, &view)?;
        timings.render = secs(t);

        // Composite.
        let t = Instant::now();
        let composite = harmonize_and_compose(
            frame,
            &background,
            &matte,
            &self.settings.harmonization,
            &self.layers,
            index,
        )?;
        timings.blend = secs(t);
        timings.total = secs(started);

        self.state.prev_pyramid = Some(pyramid);
        self.state.prev_matte = Some(matte.clone());
        self.state.frames_processed += 1;

        let report = FrameReport {
            index,
            features,
            matches,
            filtered_matches: filtered,
            inliers,
            fallback,
            motion: *motion.matrix(),
            background_transform: *background_transform.matrix(),
            timings,
        };
        Ok(FrameProducts {
            composite,
            matte,
            background,
            report,
        })
    }

    /// Replays the stored history; equals the transform used for the most
    /// recent frame.
    pub fn replay_background_transform(&self) -> Option<SimilarityTransform> {
        self.state
            .crop
            .map(|crop| accumulate_motion(&self.state.history, &crop))
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PhaseSummary {
    /// Mean seconds per frame.
    pub mean_seconds: f64,
    pub fps: f64,
}

impl PhaseSummary {
    fn from_total(total: f64, frames: usize) -> Self {
        let mean = if frames == 0 { 0.0 } else { total / frames as f64 };
        Self {
            mean_seconds: mean,
            fps: if mean > 0.0 { 1.0 / mean } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub frames: usize,
    pub fallbacks: usize,
    /// Processing throughput (frame decode and encode excluded).
    pub fps: f64,
    /// Throughput including image I/O.
    pub wall_fps: f64,
    pub matting: PhaseSummary,
    pub motion: PhaseSummary,
    pub render: PhaseSummary,
    pub blend: PhaseSummary,
    pub outputs: Vec<PathBuf>,
    pub per_frame: Vec<FrameReport>,
}

impl RunSummary {
    pub fn from_reports(reports: Vec<FrameReport>, wall_seconds: f64, outputs: Vec<PathBuf>) -> Self {
        let n = reports.len();
        let sum = |f: fn(&PhaseTimings) -> f64| reports.iter().map(|r| f(&r.timings)).sum::<f64>();
        let total = sum(|t| t.total);
        Self {
            frames: n,
            fallbacks: reports.iter().filter(|r| r.fallback).count(),
            fps: if total > 0.0 { n as f64 / total } else { 0.0 },
            wall_fps: if wall_seconds > 0.0 { n as f64 / wall_seconds } else { 0.0 },
            matting: PhaseSummary::from_total(sum(|t| t.matting), n),
            motion: PhaseSummary::from_total(sum(|t| t.motion), n),
            render: PhaseSummary::from_total(sum(|t| t.render), n),
            blend: PhaseSummary::from_total(sum(|t| t.blend), n),
            outputs,
            per_frame: reports,
        }
    }
}

const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Numeric suffix of a file stem, e.g. `clip_000012` -> 12.
fn numeric_suffix(stem: &str) -> Option<u64> {
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    stem[stem.len() - digits..].parse().ok()
}

/// Image files in `dir` with a numeric suffix, in index order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| Error::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !ext_ok || !path.is_file() {
            continue;
        }
        let Some(idx) = path.file_stem().and_then(|s| s.to_str()).and_then(numeric_suffix) else {
            continue;
        };
        frames.push((idx, path));
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Frame::from_rgb8(&img.into_rgb8()))
}

pub fn write_frame(frame: &Frame, path: &Path) -> Result<()> {
    frame.to_rgb8().save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn load_template(cfg: &PipelineConfig) -> Result<SkyBoxTemplate> {
    let image = read_frame(&cfg.template)?;
    if cfg.template_mirror {
        SkyBoxTemplate::mirror_tiled(&image, cfg.crop_factor)
    } else {
        SkyBoxTemplate::new(image, cfg.crop_factor)
    }
}

fn load_layers(cfg: &PipelineConfig) -> Result<Vec<WeatherLayer>> {
    let mut layers = Vec::new();
    for kind in &cfg.layer_order {
        match kind {
            LayerKind::Rain => {
                let Some(path) = &cfg.rain else { continue };
                let paths = if path.is_dir() {
                    list_frames(path)?
                } else {
                    vec![path.clone()]
                };
                if paths.is_empty() {
                    return Err(Error::Config(format!(
                        "rain layer directory {} has no numbered images",
                        path.display()
                    )));
                }
                let frames = paths.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
                layers.push(WeatherLayer::rain(frames, cfg.rain_opacity)?);
            }
            LayerKind::Haze => {
                if let Some(opacity) = cfg.haze_opacity {
                    // Resized to the frame size on the first frame.
                    layers.push(WeatherLayer::haze(1, 1, cfg.haze_level, opacity)?);
                }
            }
        }
    }
    Ok(layers)
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    let probe = dir.join(".skyblendr-write-test");
    fs::write(&probe, b"").map_err(io)?;
    fs::remove_file(&probe).map_err(io)?;
    Ok(())
}

fn run_inner(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let inputs = list_frames(&cfg.input)?;
    if inputs.is_empty() {
        return Err(Error::Config(format!(
            "no numbered frames found in {}",
            cfg.input.display()
        )));
    }
    prepare_output_dir(&cfg.output)?;
    let template = load_template(cfg)?;
    let layers = load_layers(cfg)?;
    let mut pipeline = Pipeline::new(FrameSettings::from_config(cfg), cfg.matte_source(), template, layers)?;

    info!(frames = inputs.len(), input = %cfg.input.display(), "processing sequence");
    let wall = Instant::now();
    let mut reports = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    for (index, path) in inputs.iter().enumerate() {
        let frame = read_frame(path).map_err(|e| Error::Frame {
            index,
            message: e.to_string(),
        })?;
        let (out, report) = pipeline.process_frame(&frame)?;
        if report.fallback {
            warn!(index, "motion fallback");
        }
        let (name, _) = expand_index_pattern(&cfg.output_pattern, index)?;
        let out_path = cfg.output.join(name);
        write_frame(&out, &out_path)?;
        outputs.push(out_path);
        reports.push(report);
    }
    let summary = RunSummary::from_reports(reports, wall.elapsed().as_secs_f64(), outputs);
    if let Some(path) = &cfg.report {
        let json = serde_json::to_string_pretty(&summary).expect("report serializes");
        fs::write(path, json).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(summary)
}

/// Processes the configured sequence in index order and writes one output
/// frame per input frame.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    if cfg.threads == 0 {
        return run_inner(cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("threads: {e}")))?;
    pool.install(|| run_inner(cfg))
}
