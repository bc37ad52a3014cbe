//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::*;
use rand::Rng;
use skyblendr::blending::{
    alpha_blend, harmonize_and_compose, recolor, relight, screen_blend, HarmonizationParams, RegionMeans,
    WeatherKind, WeatherLayer,
};
use skyblendr::config::PipelineConfig;
use skyblendr::imaging::{box_filter, build_pyramid, to_gray, warp_similarity, Frame, GrayImage};
use skyblendr::matting::{guided_filter, GuidedFilterParams, Matte, MatteSource};
use skyblendr::motion::{
    detect_sky_features, estimate_motion_ransac, filter_matches_kde, fit_similarity, track_lk, MotionParams,
    PointMatch, SimilarityTransform,
};
use skyblendr::pipeline::{read_frame, run, FrameSettings, Pipeline};
use skyblendr::skybox::{center_crop_transform, render_background, SkyBoxTemplate, ViewportSpec};

// Same allocator as the shipped binary, so throughput is measured as deployed.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 ------------------------------------------------------------------------

fn guided_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for (i, r) in [2usize, 4, 8].into_iter().enumerate() {
        for (j, eps) in [0.01, 0.1].into_iter().enumerate() {
            for k in 0..4u64 {
                let seed = 1000 * i as u64 + 100 * j as u64 + k;
                let guide = random_gray(48, 48, seed);
                let src = random_gray(48, 48, seed ^ 0xdead_beef);
                let out = guided_filter(&guide, &src, &GuidedFilterParams { radius: r, epsilon: eps })
                    .map_err(|e| e.to_string())?;
                worst = worst.max(max_abs_diff(&naive_guided(&guide, &src, r, eps), out.data()));
                pairs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        pairs >= 20 && worst < 1e-5 && secs < 10.0,
        format!("{pairs} pairs, max abs diff {worst:.2e} (< 1e-5), {secs:.2} s (< 10 s)"),
    )
}

// 2 ------------------------------------------------------------------------

fn constant_guide() -> Outcome {
    let src = random_gray(48, 48, 42);
    let mut worst_box = 0.0f64;
    let mut worst_box2 = 0.0f64;
    for value in [0.0, 0.5, 1.0] {
        let guide = GrayImage::filled(48, 48, value);
        for r in [1usize, 2, 4, 8, 20] {
            let out = guided_filter(&guide, &src, &GuidedFilterParams { radius: r, epsilon: 0.01 })
                .map_err(|e| e.to_string())?;
            let diff = |b: &GrayImage| -> f64 {
                out.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y).abs() as f64)
                    .fold(0.0, f64::max)
            };
            worst_box = worst_box.max(diff(&box_filter(&src, r)));
            worst_box2 = worst_box2.max(diff(&box_filter(&box_filter(&src, r), r)));
        }
    }
    ensure(
        worst_box < 1e-6,
        format!(
            "max |gf - box(src)| = {worst_box:.2e} (< 1e-6); for reference max |gf - box(box(src))| = {worst_box2:.2e}"
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn similarity_recovery() -> Outcome {
    let truth = SimilarityTransform::from_params(1.05, 2f64.to_radians(), 3.0, -1.0).unwrap();
    let mut r = rng(3);
    let exact: Vec<_> = (0..100)
        .map(|_| {
            let p = (r.gen_range(0.0..640.0), r.gen_range(0.0..360.0));
            PointMatch::new(p, truth.apply(p.0, p.1))
        })
        .collect();
    let param_err = |m: &SimilarityTransform| {
        let (tx, ty) = m.translation();
        [(m.scale() - 1.05).abs(), (m.rotation() - 2f64.to_radians()).abs(), (tx - 3.0).abs(), (ty + 1.0).abs()]
            .into_iter()
            .fold(0.0, f64::max)
    };
    let fit_err = param_err(&fit_similarity(&exact).map_err(|e| e.to_string())?);
    let ransac_err = param_err(&estimate_motion_ransac(&exact, &MotionParams::default()).transform);

    let truth = SimilarityTransform::from_params(0.97, -0.05, -4.0, 6.0).unwrap();
    let mut good = 0;
    for seed in 0..100u64 {
        let mut r = rng(10_000 + seed);
        let inliers: Vec<(f64, f64)> =
            (0..70).map(|_| (r.gen_range(0.0..640.0), r.gen_range(0.0..360.0))).collect();
        let mut matches: Vec<_> = inliers
            .iter()
            .map(|&p| {
                let (x, y) = truth.apply(p.0, p.1);
                PointMatch::new(p, (x + normal(&mut r, 0.5), y + normal(&mut r, 0.5)))
            })
            .collect();
        for _ in 0..30 {
            let p = (r.gen_range(0.0..640.0), r.gen_range(0.0..360.0));
            matches.push(PointMatch::new(p, (r.gen_range(0.0..640.0), r.gen_range(0.0..360.0))));
        }
        for i in (1..matches.len()).rev() {
            let j = r.gen_range(0..=i);
            matches.swap(i, j);
        }
        let est = estimate_motion_ransac(&matches, &MotionParams { rng_seed: seed, ..MotionParams::default() });
        let err = inliers
            .iter()
            .map(|&(x, y)| {
                let (a, b) = est.transform.apply(x, y);
                let (c, d) = truth.apply(x, y);
                (a - c).hypot(b - d)
            })
            .fold(0.0, f64::max);
        good += (err < 0.5) as usize;
    }
    ensure(
        fit_err < 1e-6 && ransac_err < 1e-6 && good >= 95,
        format!(
            "noiseless param error fit {fit_err:.1e} / ransac {ransac_err:.1e} (< 1e-6); \
             30% outliers + 0.5 px noise: {good}/100 trials with max inlier error < 0.5 px (>= 95)"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn lk_translation() -> Outcome {
    let base = gray_to_frame(&blob_gray(320, 240));
    let moved = warp_similarity(&base, &SimilarityTransform::from_translation(2.0, 0.0), 320, 240, false)
        .map_err(|e| e.to_string())?;
    let (g0, g1) = (to_gray(&base), to_gray(&moved));
    let params = MotionParams::default();
    let feats = detect_sky_features(&g0, &Matte::filled(320, 240, 1.0), &params);
    let p0 = build_pyramid(&g0, params.pyramid_levels).map_err(|e| e.to_string())?;
    let p1 = build_pyramid(&g1, params.pyramid_levels).map_err(|e| e.to_string())?;

    let shifted = track_lk(&p0, &p1, &feats, &params);
    let within = shifted
        .iter()
        .filter(|m| {
            let (dx, dy) = m.displacement();
            (dx - 2.0).hypot(dy) <= 0.2
        })
        .count();
    let frac = within as f64 / shifted.len().max(1) as f64;

    let still = track_lk(&p0, &p0, &feats, &params);
    let mut d: Vec<f64> = still.iter().map(|m| m.distance()).collect();
    d.sort_by(f64::total_cmp);
    let median = d.get(d.len() / 2).copied().unwrap_or(f64::INFINITY);
    ensure(
        !shifted.is_empty() && frac >= 0.8 && median < 0.05,
        format!(
            "2 px shift: {within}/{} tracks within 0.2 px ({:.1}%, >= 80%); zero motion median {median:.1e} px (< 0.05)",
            shifted.len(),
            100.0 * frac
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn kde_filter() -> Outcome {
    let mut r = rng(5);
    let mut matches: Vec<_> = (0..50)
        .map(|i| {
            let d = 2.0 + r.gen_range(-0.1..=0.1);
            let p = (20.0 + 11.0 * i as f64, 40.0 + 3.0 * i as f64);
            PointMatch::new(p, (p.0 + d * 0.6, p.1 + d * 0.8))
        })
        .collect();
    let outlier = PointMatch::new((300.0, 120.0), (340.0, 120.0));
    matches.insert(23, outlier);
    let params = MotionParams::default();
    let kept = filter_matches_kde(&matches, &params);
    let dropped: Vec<_> = matches.iter().filter(|m| !kept.contains(m)).collect();
    ensure(
        params.kde_bandwidth == 0.5 && params.eta == 0.1 && kept.len() == 50 && dropped == [&outlier],
        format!("bandwidth {}, eta {}: kept {}/51, dropped {:?}", params.kde_bandwidth, params.eta, kept.len(),
            dropped.iter().map(|m| m.distance()).collect::<Vec<_>>()),
    )
}

// 6 ------------------------------------------------------------------------

fn max_frame_diff(a: &Frame, b: &Frame) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn blend_identities() -> Outcome {
    let (w, h) = (64, 48);
    let mut r = rng(6);
    let i = Frame::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()]);
    let b = Frame::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()]);
    let e = |x: skyblendr::Result<Frame>| x.map_err(|e| e.to_string());

    let a0 = max_frame_diff(&e(alpha_blend(&i, &b, &Matte::filled(w, h, 0.0)))?, &i);
    let a1 = max_frame_diff(&e(alpha_blend(&i, &b, &Matte::filled(w, h, 1.0)))?, &b);
    let means = RegionMeans { foreground: [0.2, 0.4, 0.1], sky_background: [0.6, 0.3, 0.9], frame: [0.5; 3] };
    let rc = max_frame_diff(&recolor(&i, &means, 0.0), &i);
    // beta = 1 with the image's own mean is a fixed point.
    let mut mean = [0.0f64; 3];
    for p in i.data().chunks_exact(3) {
        for c in 0..3 {
            mean[c] += p[c] as f64;
        }
    }
    let mean = mean.map(|v| v / (w * h) as f64);
    let rl = max_frame_diff(&relight(&i, &mean, 1.0), &i);
    let zero = WeatherLayer::new(WeatherKind::Haze, vec![Frame::filled(w, h, [0.0; 3])], 1.0).unwrap();
    let one = WeatherLayer::new(WeatherKind::Haze, vec![Frame::filled(w, h, [1.0; 3])], 1.0).unwrap();
    let s0 = max_frame_diff(&e(screen_blend(&i, &zero, 0))?, &i);
    let s1 = max_frame_diff(&e(screen_blend(&i, &one, 0))?, &Frame::filled(w, h, [1.0; 3]));
    let worst = [a0, a1, rc, rl, s0, s1].into_iter().fold(0.0, f64::max);
    ensure(
        worst <= 1e-9,
        format!("A=0 {a0:.0e}, A=1 {a1:.0e}, alpha=0 {rc:.0e}, beta=1 {rl:.0e}, screen 0 {s0:.0e}, screen 1 {s1:.0e} (all <= 1e-9)"),
    )
}

// 7 ------------------------------------------------------------------------

const GW: usize = 640;
const GH: usize = 360;
const GOLDEN_FRAMES: usize = 20;

fn golden_scene() -> PanScene {
    PanScene { width: GW, height: GH, horizon: 200.0, speed: 2.0 }
}

/// Writes frames, per-frame analytic mattes (16-bit) and a tileable template.
fn write_golden(root: &Path, frames: usize) {
    let s = golden_scene();
    let seq: Vec<Frame> = (0..frames).map(|t| s.frame(t)).collect();
    write_sequence(&root.join("in"), &seq);
    fs::create_dir_all(root.join("mattes")).unwrap();
    let matte = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(GW as u32, GH as u32, |_, y| {
        image::Luma([(s.matte_value(y as f64) * 65535.0).round() as u16])
    });
    for t in 0..frames {
        matte.save(root.join(format!("mattes/matte_{t:06}.png"))).unwrap();
    }
    write_template(&root.join("sky.png"), &tileable_sky(2 * GW, 2 * GH));
}

fn golden_config(root: &Path, out: &str) -> PipelineConfig {
    PipelineConfig {
        input: root.join("in"),
        output: root.join(out),
        template: root.join("sky.png"),
        crop_factor: 0.5,
        matte_dir: Some(root.join("mattes")),
        report: Some(root.join(format!("{out}.json"))),
        ..PipelineConfig::default()
    }
}

fn golden_sequence() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    write_golden(root, GOLDEN_FRAMES);
    let cfg = golden_config(root, "out");
    let summary = run(&cfg).map_err(|e| e.to_string())?;

    let template = SkyBoxTemplate::new(read_frame(&cfg.template).map_err(|e| e.to_string())?, 0.5).unwrap();
    let view = ViewportSpec::new(GW, GH).unwrap();
    let crop = center_crop_transform(&template, &view);
    let s = golden_scene();
    let truth_matte = Matte::from_fn(GW, GH, |_, y| s.matte_value(y as f64));

    let last = summary.per_frame.last().ok_or("no frames")?;
    let acc = SimilarityTransform::from_matrix(last.background_transform).map_err(|e| e.to_string())?;
    let truth_acc = crop * SimilarityTransform::from_translation(2.0 * (GOLDEN_FRAMES - 1) as f64, 0.0);
    let (ax, ay) = acc.translation();
    let (tx, ty) = truth_acc.translation();
    let drift = (ax - tx).hypot(ay - ty);

    let mut min_psnr = f64::INFINITY;
    for (t, out_path) in summary.outputs.iter().enumerate() {
        let input = read_frame(&cfg.input.join(format!("frame_{t:06}.png"))).map_err(|e| e.to_string())?;
        let bg = render_background(
            &template,
            &(crop * SimilarityTransform::from_translation(2.0 * t as f64, 0.0)),
            &view,
        )
        .map_err(|e| e.to_string())?;
        let oracle = harmonize_and_compose(&input, &bg, &truth_matte, &HarmonizationParams::default(), &[], t)
            .map_err(|e| e.to_string())?;
        let got = read_frame(out_path).map_err(|e| e.to_string())?;
        min_psnr = min_psnr.min(psnr(&got, &oracle));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        drift < 1.0 && min_psnr > 30.0 && secs < 60.0,
        format!(
            "{GOLDEN_FRAMES} frames {GW}x{GH}: translation error at last frame {drift:.3} px (< 1), \
             min composite PSNR {min_psnr:.2} dB (> 30), {secs:.1} s (< 60)"
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn throughput() -> Outcome {
    const N: usize = 120;
    let s = golden_scene();
    let template = SkyBoxTemplate::new(tileable_sky(2 * GW, 2 * GH), 0.5).unwrap();
    let mut p = Pipeline::new(FrameSettings::default(), MatteSource::default(), template, vec![])
        .map_err(|e| e.to_string())?;
    let (mut core, mut total) = (0.0, 0.0);
    let mut fallbacks = 0;
    for t in 0..N {
        let frame = s.frame(t);
        let (_, r) = p.process_frame(&frame).map_err(|e| e.to_string())?;
        core += r.timings.motion + r.timings.render + r.timings.blend;
        total += r.timings.total;
        fallbacks += r.fallback as usize;
    }
    let (core_fps, full_fps) = (N as f64 / core, N as f64 / total);
    let threads = rayon::current_num_threads();
    ensure(
        core_fps >= 30.0 && full_fps >= 15.0,
        format!(
            "{N} frames {GW}x{GH} on {threads} thread(s): motion+render+blend {core_fps:.1} fps (>= 30), \
             full pipeline {full_fps:.1} fps (>= 15), {fallbacks} motion fallbacks"
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    write_golden(root, 8);
    let mk = |out: &str, threads: usize| PipelineConfig {
        matte_dir: None,
        haze_opacity: Some(0.15),
        threads,
        ..golden_config(root, out)
    };
    let a = run(&mk("a", 0)).map_err(|e| e.to_string())?;
    let b = run(&mk("b", 1)).map_err(|e| e.to_string())?;
    let mut identical = a.outputs.len() == b.outputs.len() && !a.outputs.is_empty();
    for (x, y) in a.outputs.iter().zip(&b.outputs) {
        identical &= fs::read(x).map_err(|e| e.to_string())? == fs::read(y).map_err(|e| e.to_string())?;
    }
    let same_motion = a
        .per_frame
        .iter()
        .zip(&b.per_frame)
        .all(|(p, q)| p.motion == q.motion && p.inliers == q.inliers && p.matches == q.matches);
    ensure(
        identical && same_motion,
        format!("{} frames, outputs bit-identical: {identical}, motion reports identical: {same_motion}", a.outputs.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("guided filter matches naive oracle", guided_oracle),
        ("constant guide reduces to box filter", constant_guide),
        ("similarity recovery", similarity_recovery),
        ("LK translation", lk_translation),
        ("KDE outlier filter", kde_filter),
        ("blend identities", blend_identities),
        ("end-to-end golden sequence", golden_sequence),
        ("throughput", throughput),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
