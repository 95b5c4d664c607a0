//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};

use hadsplat_core::augment::curate_triplets;
use hadsplat_core::fusion::{fuse_argmin, fuse_weighted, VersionStack};
use hadsplat_core::io;
use hadsplat_core::render::render;
use hadsplat_core::rng;
use hadsplat_core::scene::{make_synthetic_scene, SceneKind, SceneSpec, ViewRole};
use hadsplat_core::scorer::{
    extract_features, fit_ridge, predict_score, scorer_rows, FeatureParams, RefView,
    NUM_FEATURES,
};
use hadsplat_core::train::{
    evaluate, run_augmentation_round, train, PipelineMode, TrainConfig,
};

use crate::args;

pub struct Ctx {
    pub seed: u64,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub image_format: io::ImageFormat,
}

fn parse_size(s: &str) -> anyhow::Result<(usize, usize)> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| anyhow!("--size must look like 64x64"))?;
    Ok((w.parse()?, h.parse()?))
}

fn load_train_config(ctx: &Ctx) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &ctx.config {
        Some(path) => serde_json::from_str(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => TrainConfig::default(),
    };
    cfg.seed = ctx.seed;
    Ok(cfg)
}

pub fn scene(ctx: &Ctx, args: &args::SceneArgs) -> anyhow::Result<()> {
    let spec = match &args.spec {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => {
            let kind = match args.kind.as_str() {
                "blob_field" => SceneKind::BlobField,
                _ => SceneKind::TexturedRoom,
            };
            let (w, h) = parse_size(&args.size)?;
            SceneSpec {
                scene_kind: kind,
                num_gaussians: args.gaussians,
                num_input_views: args.inputs,
                num_target_views: args.targets,
                num_test_views: args.tests,
                image_size: (w, h),
                seed: ctx.seed,
            }
        }
    };
    let (set, views) = make_synthetic_scene(&spec)?;
    io::write_scene_dir(&ctx.out, &spec, &set, &views, ctx.image_format)?;
    println!(
        "scene: {} gaussians, {} views -> {}",
        set.primitives.len(),
        views.views.len(),
        ctx.out.display()
    );
    Ok(())
}

pub fn train_cmd(ctx: &Ctx, args: &args::TrainArgs) -> anyhow::Result<()> {
    let (_, gt_scene, views) = io::read_scene_dir(&args.scene)?;
    let mut cfg = load_train_config(ctx)?;
    if let Some(path) = &args.scorer {
        cfg.scorer = Some(io::read_scorer_model(path)?);
    }
    fs::create_dir_all(&ctx.out)?;
    if cfg.dump_rounds.is_none() {
        cfg.dump_rounds = Some(ctx.out.clone());
    }
    let report = train(&views, &gt_scene, &cfg)?;
    io::write_gaussian_set(&ctx.out.join("checkpoint.json"), &report.final_set)?;
    fs::write(
        ctx.out.join("train_config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    fs::write(
        ctx.out.join("aug_log.json"),
        serde_json::to_string_pretty(&report.aug_log)?,
    )?;
    let mut curve = String::from("iter,loss\n");
    for (i, l) in &report.loss_curve {
        curve.push_str(&format!("{i},{l:.8}\n"));
    }
    fs::write(ctx.out.join("loss_curve.csv"), curve)?;
    let scene_label = args
        .scene
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let rows: Vec<io::MetricRow> = evaluate(&report.final_set, &views, &[ViewRole::Test])
        .iter()
        .map(|r| io::MetricRow {
            psnr: r.psnr,
            ssim: r.ssim,
            score_mae: None,
            scene: scene_label.clone(),
            method: cfg.pipeline_mode.label().to_string(),
            seed: cfg.seed,
        })
        .collect();
    io::append_metric_rows(&ctx.out.join("metrics.csv"), &rows)?;
    println!(
        "train: {} iters, final test PSNR {:.3} dB, SSIM {:.4} -> {}",
        cfg.total_iters,
        report.final_test_psnr,
        report.final_test_ssim,
        ctx.out.display()
    );
    Ok(())
}

pub fn augment(ctx: &Ctx, args: &args::AugmentArgs) -> anyhow::Result<()> {
    let (_, gt_scene, views) = io::read_scene_dir(&args.scene)?;
    let set = io::read_gaussian_set(&args.checkpoint)?;
    let mut cfg = load_train_config(ctx)?;
    if let Some(path) = &args.scorer {
        cfg.scorer = Some(io::read_scorer_model(path)?);
    }
    if cfg.scorer.is_none()
        && matches!(cfg.pipeline_mode, PipelineMode::Had | PipelineMode::HadMs)
    {
        cfg.use_oracle_scores = true;
    }
    cfg.validate()?;
    let mut rng_aug = rng::seeded_rng(cfg.seed, &[rng::stream::AUGMENT]);
    let mut counter = 0u64;
    // Offline rounds sample from the full progressive range.
    let round = run_augmentation_round(
        &views,
        &gt_scene,
        &set,
        &cfg,
        cfg.total_iters,
        &mut rng_aug,
        &mut counter,
    )?;
    let dir = ctx.out.join("round_000");
    fs::create_dir_all(&dir)?;
    hadsplat_core::train::dump_round(&dir, &round)?;
    println!("augment: {} poses -> {}", round.entries.len(), dir.display());
    Ok(())
}

/// Stack directory reader shared by `score` and `fuse`.
fn read_stack(dir: &Path) -> anyhow::Result<(Vec<(PathBuf, hadsplat_core::ImageBuffer)>, Vec<usize>)> {
    let mut versions = Vec::new();
    let mut k = 0usize;
    loop {
        let img_path = dir.join(format!("version_{k:02}.ppm"));
        if !img_path.exists() {
            break;
        }
        versions.push((img_path.clone(), io::read_ppm(&img_path)?));
        k += 1;
    }
    if versions.is_empty() {
        bail!("no version_NN.ppm files under {}", dir.display());
    }
    let meta = dir.join("stack.json");
    let refs = if meta.exists() {
        io::read_stack_meta(&meta)?
    } else {
        (0..versions.len()).collect()
    };
    Ok((versions, refs))
}

pub fn score(ctx: &Ctx, args: &args::ScoreArgs) -> anyhow::Result<()> {
    let (_, _, views) = io::read_scene_dir(&args.scene)?;
    let set = io::read_gaussian_set(&args.checkpoint)?;
    let model = io::read_scorer_model(&args.scorer)?;
    let params = FeatureParams::for_views(&views);
    let input_refs = hadsplat_core::scorer::render_input_refs(&views, &set);
    let mut pose_dirs: Vec<PathBuf> = fs::read_dir(&args.round)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    pose_dirs.sort();
    let mut scored = 0usize;
    for pdir in &pose_dirs {
        let (camera, _) = io::read_camera_json(&pdir.join("camera.json"))?;
        let splat = io::read_ppm(&pdir.join("splat.ppm"))?;
        let depth = render(&set, &camera).depth;
        let (versions, _) = read_stack(pdir)?;
        // Three nearest input views as the reprojection references.
        let c = camera.center();
        let mut order: Vec<(usize, f64)> = input_refs
            .iter()
            .enumerate()
            .map(|(i, (v, _))| (i, (v.camera.center() - c).norm()))
            .collect();
        order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let refs: Vec<RefView> = order
            .iter()
            .take(3)
            .map(|&(i, _)| RefView { view: &input_refs[i].0, depth: &input_refs[i].1 })
            .collect();
        for (k, (img_path, img)) in versions.iter().enumerate() {
            let feats = extract_features(img, &camera, &depth, &refs, &splat, &params)?;
            let score = predict_score(&model, &feats);
            let out_path = img_path
                .parent()
                .unwrap()
                .join(format!("version_{k:02}_score.pfm"));
            io::write_score_map(&out_path, &score)?;
            scored += 1;
        }
        let _ = ctx;
    }
    println!("score: wrote {scored} score maps under {}", args.round.display());
    Ok(())
}

pub fn fuse(_ctx: &Ctx, args: &args::FuseArgs) -> anyhow::Result<()> {
    let (versions, refs) = read_stack(&args.stack)?;
    let mut stacked = Vec::new();
    for (k, (_, img)) in versions.iter().enumerate() {
        let score_path = args.stack.join(format!("version_{k:02}_score.pfm"));
        let score = io::read_score_map(&score_path)
            .with_context(|| format!("reading {}", score_path.display()))?;
        stacked.push((img.clone(), score));
    }
    let stack = VersionStack::new(stacked, refs)?;
    let (image, score) = match args.method.as_str() {
        "argmin" => fuse_argmin(&stack),
        _ => fuse_weighted(&stack, args.temperature)?,
    };
    io::write_ppm(&args.stack.join("fused.ppm"), &image)?;
    io::write_score_map(&args.stack.join("fused_score.pfm"), &score)?;
    println!("fuse: {} versions ({}) -> fused.ppm", stack.k(), args.method);
    Ok(())
}

pub fn eval(ctx: &Ctx, args: &args::EvalArgs) -> anyhow::Result<()> {
    let (_, _, views) = io::read_scene_dir(&args.scene)?;
    let set = io::read_gaussian_set(&args.checkpoint)?;
    let roles: Vec<ViewRole> = args
        .roles
        .split(',')
        .map(|r| match r.trim() {
            "input" => Ok(ViewRole::Input),
            "target" => Ok(ViewRole::Target),
            "test" => Ok(ViewRole::Test),
            "novel" => Ok(ViewRole::Novel),
            other => Err(anyhow!("unknown role '{other}'")),
        })
        .collect::<anyhow::Result<_>>()?;
    let scene_label = args
        .scene
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let rows: Vec<io::MetricRow> = evaluate(&set, &views, &roles)
        .iter()
        .map(|r| io::MetricRow {
            psnr: r.psnr,
            ssim: r.ssim,
            score_mae: None,
            scene: scene_label.clone(),
            method: args.method.clone(),
            seed: ctx.seed,
        })
        .collect();
    fs::create_dir_all(&ctx.out)?;
    let path = ctx.out.join("metrics.csv");
    io::append_metric_rows(&path, &rows)?;
    for r in &rows {
        println!("{}", r.to_csv_line());
    }
    println!("eval: {} rows -> {}", rows.len(), path.display());
    Ok(())
}

pub fn triplets(ctx: &Ctx, args: &args::TripletsArgs) -> anyhow::Result<()> {
    let (_, gt_scene, views) = io::read_scene_dir(&args.scene)?;
    let cfg = load_train_config(ctx)?;
    let trained = match &args.checkpoint {
        Some(path) => io::read_gaussian_set(path)?,
        None => {
            let pre = TrainConfig {
                pipeline_mode: PipelineMode::SplatOnly,
                dump_rounds: None,
                ..cfg.clone()
            };
            train(&views, &gt_scene, &pre)?.final_set
        }
    };
    let list = curate_triplets(&gt_scene, &views, &trained, &cfg.augmentor)?;
    fs::create_dir_all(&ctx.out)?;
    io::write_triplets_dir(&ctx.out, &list)?;
    let refs = hadsplat_core::scorer::render_input_refs(&views, &trained);
    io::write_ref_views(&ctx.out.join("inputs"), &refs)?;
    io::write_gaussian_set(&ctx.out.join("trained.json"), &trained)?;
    println!("triplets: {} curated -> {}", list.len(), ctx.out.display());
    Ok(())
}

pub fn fit_scorer(ctx: &Ctx, args: &args::FitScorerArgs) -> anyhow::Result<()> {
    let mask_chars: Vec<char> = args.feature_mask.chars().collect();
    if mask_chars.len() != NUM_FEATURES {
        bail!("--feature-mask must have exactly {NUM_FEATURES} characters");
    }
    let mut feature_mask = [false; NUM_FEATURES];
    for (i, c) in mask_chars.iter().enumerate() {
        feature_mask[i] = *c == '1';
    }
    let mut all_rows = Vec::new();
    let mut all_targets = Vec::new();
    for dir in args.triplets.split(',') {
        let dir = Path::new(dir.trim());
        let list = io::read_triplets_dir(dir)?;
        let inputs = io::read_ref_views(&dir.join("inputs"))?;
        let params = FeatureParams {
            depth_tolerance: {
                // Same 2%-of-diameter rule, from the stored input cameras.
                let centers: Vec<_> = inputs.iter().map(|(v, _)| v.camera.center()).collect();
                let mut diameter = 0.0f64;
                for i in 0..centers.len() {
                    for j in i + 1..centers.len() {
                        diameter = diameter.max((centers[i] - centers[j]).norm());
                    }
                }
                0.02 * diameter.max(1e-6)
            },
        };
        let (rows, targets) = scorer_rows(&list, &inputs, &params)?;
        all_rows.extend(rows);
        all_targets.extend(targets);
    }
    let model = fit_ridge(&all_rows, &all_targets, args.ridge, feature_mask)?;
    fs::create_dir_all(&ctx.out)?;
    let path = ctx.out.join("scorer.json");
    io::write_scorer_model(&path, &model)?;
    println!(
        "fit-scorer: {} pixels, weights {:?}, bias {:.5} -> {}",
        all_rows.len(),
        model.weights,
        model.bias,
        path.display()
    );
    Ok(())
}
