//! The five subcommands. Each is a pure function of its `RunConfig` that
//! writes only below `config.out`.

use std::fs;
use std::path::{Path, PathBuf};

use bevsync_core::camera::{rotate_rig, CameraRig};
use bevsync_core::correspondence::{pair_map, CorrespondenceMode, RigMaps, LATENT_FACTOR};
use bevsync_core::diffusion::{
    encode_image, generate, train, AdamConfig, Condition, Denoiser, DiffusionSchedule, GenerateOptions, Generation,
    LatentStack, PaletteGaussianDenoiser, TinyDenoiser, DEFAULT_BETA_END, DEFAULT_BETA_START, LATENT_CHANNELS,
    PROMPT_DIM,
};
use bevsync_core::homography::ground_plane_homography;
use bevsync_core::metrics::{bev_iou, fidelity_psnr, instance_color_report, multi_view_iou, overlap_psnr, MetricsReport};
use bevsync_core::projection::{class, PerspectiveSemantics};
use bevsync_core::scene::{make_default_rig, render_gt_views, synth_bev_scene, BevScene, GroundTruthViews, SceneSpec, PALETTE};
use bevsync_core::tensor::RgbImage;

use crate::error::{CliError, CliResult};
use crate::formats::{
    format_key_values, format_metric, format_rig, format_scene, format_tensors, label_preview, metrics_json,
    parse_tensors, read_png, read_rig, read_scene, read_text, sha256_hex, write_label_map, write_pgm, write_png,
    write_text, NamedTensor, format_homography,
};

/// Prompt vector used for every generation; the toy has a single prompt.
pub const DEFAULT_PROMPT: [f64; PROMPT_DIM] = [1.0, 0.0, 0.0, 0.0];
pub const DEFAULT_VARIANCE: f64 = 0.02;
pub const DEFAULT_TRAIN_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// `None` selects the built-in six-camera rig.
    pub rig: Option<PathBuf>,
    /// `None` synthesizes the default scene with `seed`.
    pub scene: Option<PathBuf>,
    pub out: PathBuf,
    /// Whole-rig yaw offset in degrees.
    pub yaw: f64,
    pub reassign: bool,
    pub synced_noise: bool,
    pub cutoff: f64,
    pub window: usize,
    pub steps: usize,
    pub json: bool,
    /// Directory of `view_<m>.png` images to evaluate instead of the
    /// ground-truth renders.
    pub images: Option<PathBuf>,
    /// Tiny-denoiser checkpoint; the palette prior is used without one.
    pub checkpoint: Option<PathBuf>,
    pub variance: f64,
    pub train_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rig: None,
            scene: None,
            out: PathBuf::from("out"),
            yaw: 0.0,
            reassign: true,
            synced_noise: true,
            cutoff: 0.6,
            window: 3,
            steps: 50,
            json: false,
            images: None,
            checkpoint: None,
            variance: DEFAULT_VARIANCE,
            train_steps: DEFAULT_TRAIN_STEPS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(CliError::Usage(format!("--cutoff {} must lie in [0, 1]", self.cutoff)));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(CliError::Usage(format!("--k-window {} must be odd", self.window)));
        }
        if self.steps == 0 {
            return Err(CliError::Usage("--steps must be at least 1".into()));
        }
        if !self.yaw.is_finite() {
            return Err(CliError::Usage("--yaw must be finite".into()));
        }
        if !(self.variance >= 0.0) || !self.variance.is_finite() {
            return Err(CliError::Usage(format!("--variance {} must be non-negative", self.variance)));
        }
        Ok(())
    }

    fn with_out(&self, sub: &str) -> Self {
        Self { out: self.out.join(sub), ..self.clone() }
    }

    fn options(&self) -> GenerateOptions {
        GenerateOptions { synced_noise: self.synced_noise, reassign: self.reassign, cutoff: self.cutoff }
    }

    fn schedule(&self) -> CliResult<DiffusionSchedule> {
        Ok(DiffusionSchedule::linear(self.steps, DEFAULT_BETA_START, DEFAULT_BETA_END)?)
    }
}

/// Files written and human-readable summary lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

impl CommandOutput {
    fn extend(&mut self, other: CommandOutput) {
        self.files.extend(other.files);
        self.lines.extend(other.lines);
    }
}

fn out_dir(config: &RunConfig) -> CliResult<&Path> {
    fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
    Ok(&config.out)
}

pub fn load_rig(config: &RunConfig) -> CliResult<CameraRig> {
    let rig = match &config.rig {
        Some(p) if p.as_os_str() != "default" => read_rig(p)?,
        _ => make_default_rig(),
    };
    Ok(if config.yaw == 0.0 { rig } else { rotate_rig(&rig, config.yaw) })
}

pub fn load_scene_spec(config: &RunConfig) -> CliResult<SceneSpec> {
    // A seed in the scene file wins over the run seed.
    match &config.scene {
        Some(p) => read_scene(p, config.seed),
        None => Ok(SceneSpec { seed: config.seed, ..SceneSpec::default() }),
    }
}

/// Everything derived from the scene and rig.
pub struct Prepared {
    pub rig: CameraRig,
    pub spec: SceneSpec,
    pub scene: BevScene,
    pub gt: GroundTruthViews,
}

pub fn prepare(config: &RunConfig) -> CliResult<Prepared> {
    config.validate()?;
    let rig = load_rig(config)?;
    let spec = load_scene_spec(config)?;
    let scene = synth_bev_scene(&spec)?;
    let gt = render_gt_views(&scene, &rig)?;
    Ok(Prepared { rig, spec, scene, gt })
}

pub fn latent_grid(rig: &CameraRig) -> CliResult<(usize, usize)> {
    let (h, w) = rig.image_size();
    let f = LATENT_FACTOR as usize;
    if h % f != 0 || w % f != 0 {
        return Err(CliError::Usage(format!("image size {h}x{w} is not a multiple of {f}")));
    }
    Ok((h / f, w / f))
}

pub fn cmd_project(config: &RunConfig) -> CliResult<CommandOutput> {
    let p = prepare(config)?;
    let dir = out_dir(config)?;
    let mut out = CommandOutput::default();
    for sem in &p.gt.semantics {
        let path = dir.join(format!("view_{}_sem.pgm", sem.view));
        write_label_map(&path, Some(sem.view), sem.height, sem.width, &sem.labels)?;
        let preview = dir.join(format!("view_{}_sem.png", sem.view));
        write_png(&preview, &label_preview(sem.height, sem.width, &sem.labels))?;
        out.files.extend([path, preview]);
    }
    let grid = p.scene.semantics.grid();
    let bev = dir.join("bev_sem.pgm");
    write_label_map(&bev, None, grid.rows, grid.cols, p.scene.semantics.labels())?;
    let bev_png = dir.join("bev_sem.png");
    write_png(&bev_png, &label_preview(grid.rows, grid.cols, p.scene.semantics.labels()))?;
    let rig_path = dir.join("rig.txt");
    write_text(&rig_path, &format_rig(&p.rig))?;
    let scene_path = dir.join("scene.toml");
    write_text(&scene_path, &format_scene(&p.spec))?;
    out.files.extend([bev, bev_png, rig_path, scene_path]);
    out.lines.push(format!("projected {} views at yaw {} deg", p.rig.len(), config.yaw));
    Ok(out)
}

pub fn cmd_correspond(config: &RunConfig) -> CliResult<CommandOutput> {
    config.validate()?;
    let rig = load_rig(config)?;
    let (h, w) = latent_grid(&rig)?;
    let dir = out_dir(config)?;
    let mut out = CommandOutput::default();
    let mut stats = String::new();
    for m in 1..=rig.len() {
        for n in (1..=rig.len()).filter(|&n| n != m) {
            let map = pair_map(&rig, m, n, h, w, CorrespondenceMode::GroundPlane)?;
            let mask: Vec<u8> = map.overlap_mask().iter().map(|&b| if b { 255 } else { 0 }).collect();
            let mask_path = dir.join(format!("overlap_{m}_{n}.pgm"));
            write_pgm(&mask_path, h, w, &mask)?;
            let hom = ground_plane_homography(rig.camera(m)?, rig.camera(n)?)?;
            let hom_path = dir.join(format!("homography_{m}_{n}.txt"));
            write_text(&hom_path, &format_homography(&hom))?;
            let adjacent = n == rig.right_of(m)? || n == rig.left_of(m)?;
            let line = format!(
                "pair={m}_{n} adjacent={adjacent} valid_cells={} overlap_fraction={:.6}",
                map.valid_count(),
                map.overlap_fraction()
            );
            stats.push_str(&line);
            stats.push('\n');
            if adjacent {
                out.lines.push(line);
            }
            out.files.extend([mask_path, hom_path]);
        }
    }
    let stats_path = dir.join("correspond.txt");
    write_text(&stats_path, &stats)?;
    out.files.push(stats_path);
    Ok(out)
}

pub fn condition_for(p: &Prepared) -> CliResult<Condition> {
    Ok(Condition::from_perspective(&p.gt.semantics, latent_grid(&p.rig)?, DEFAULT_PROMPT.to_vec())?)
}

pub fn write_checkpoint(path: &Path, model: &TinyDenoiser, grid: (usize, usize)) -> CliResult<()> {
    let params = model.parameters();
    let mut offset = 0;
    let tensors: Vec<NamedTensor> = TinyDenoiser::parameter_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let t = NamedTensor { name: name.to_string(), shape, values: params[offset..offset + n].to_vec() };
            offset += n;
            t
        })
        .collect();
    let header = vec![
        ("format".to_string(), "tiny-denoiser-v1".to_string()),
        ("window".to_string(), model.window.to_string()),
        ("grid".to_string(), format!("{} {}", grid.0, grid.1)),
    ];
    write_text(path, &format_tensors(&header, &tensors))
}

pub fn read_checkpoint(path: &Path, maps: RigMaps) -> CliResult<TinyDenoiser> {
    let (header, tensors) = parse_tensors(path, &read_text(path)?)?;
    let get = |key: &str| header.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
    if get("format").as_deref() != Some("tiny-denoiser-v1") {
        return Err(CliError::format(path, "not a tiny-denoiser checkpoint"));
    }
    let window: usize = get("window").and_then(|v| v.parse().ok()).ok_or_else(|| CliError::format(path, "missing window"))?;
    let grid = format!("{} {}", maps.shape().0, maps.shape().1);
    if get("grid").as_deref() != Some(grid.as_str()) {
        return Err(CliError::format(path, format!("checkpoint grid does not match {grid}")));
    }
    let shapes = TinyDenoiser::parameter_shapes();
    if tensors.len() != shapes.len() || tensors.iter().zip(&shapes).any(|(t, (n, s))| t.name != *n || t.shape != *s) {
        return Err(CliError::format(path, "checkpoint tensors do not match the model"));
    }
    let mut model = TinyDenoiser::new(0, Some(maps), window)?;
    let params: Vec<f64> = tensors.into_iter().flat_map(|t| t.values).collect();
    model.set_parameters(&params)?;
    Ok(model)
}

/// Runs the sampler for a prepared scene.
pub fn run_generation(config: &RunConfig, p: &Prepared) -> CliResult<(Generation, String)> {
    let (h, w) = latent_grid(&p.rig)?;
    let maps = RigMaps::build(&p.rig, h, w)?;
    let condition = condition_for(p)?;
    let schedule = config.schedule()?;
    let (denoiser, name): (Box<dyn Denoiser>, String) = match &config.checkpoint {
        Some(path) => (Box::new(read_checkpoint(path, maps.clone())?), "tiny".into()),
        None => (Box::new(PaletteGaussianDenoiser::new(LATENT_CHANNELS, config.variance)?), "palette-gaussian".into()),
    };
    let generation = generate(&condition, Some(&maps), denoiser.as_ref(), &schedule, &config.options(), config.seed)?;
    Ok((generation, name))
}

fn latent_hash(latents: &LatentStack) -> String {
    let bytes: Vec<u8> = latents.views.iter().flat_map(|v| v.data().iter().flat_map(|x| x.to_bits().to_le_bytes())).collect();
    sha256_hex(&bytes)
}

pub fn cmd_generate(config: &RunConfig) -> CliResult<CommandOutput> {
    let p = prepare(config)?;
    let (generation, denoiser) = run_generation(config, &p)?;
    let dir = out_dir(config)?;
    let mut out = CommandOutput::default();
    let schedule = config.schedule()?;
    let mut manifest = vec![
        ("seed".to_string(), config.seed.to_string()),
        ("scene_seed".to_string(), p.spec.seed.to_string()),
        ("yaw_deg".to_string(), config.yaw.to_string()),
        ("denoiser".to_string(), denoiser),
        ("variance".to_string(), config.variance.to_string()),
        ("k_window".to_string(), config.window.to_string()),
        ("steps".to_string(), schedule.steps().to_string()),
        ("cutoff".to_string(), config.cutoff.to_string()),
        ("synced_noise".to_string(), config.synced_noise.to_string()),
        ("reassign".to_string(), config.reassign.to_string()),
        ("reassign_calls".to_string(), generation.reassign_calls.to_string()),
        ("schedule_sha256".to_string(), sha256_hex(&schedule.to_le_bytes())),
        ("latent_sha256".to_string(), latent_hash(&generation.latents)),
        ("views".to_string(), generation.images.len().to_string()),
    ];
    for (m, img) in generation.images.iter().enumerate() {
        let name = format!("view_{}.png", m + 1);
        let path = dir.join(&name);
        write_png(&path, img)?;
        manifest.push((format!("view_{}", m + 1), name));
        out.files.push(path);
    }
    let manifest_path = dir.join("manifest.txt");
    write_text(&manifest_path, &format_key_values(&manifest))?;
    out.files.push(manifest_path);
    out.lines.push(format!(
        "generated {} views in {} steps with {} re-assignments",
        generation.images.len(),
        schedule.steps(),
        generation.reassign_calls
    ));
    Ok(out)
}

/// Labels each pixel by the nearest reference color: the class palette plus
/// the vehicle colors of the scene.
pub fn classify_colors(img: &RgbImage, view: usize, spec: &SceneSpec) -> PerspectiveSemantics {
    let mut refs: Vec<([f64; 3], u8)> = PALETTE.iter().enumerate().map(|(k, &c)| (c, k as u8)).collect();
    refs.extend(spec.vehicles.iter().map(|v| (v.color, class::VEHICLE)));
    let labels = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let dist = |c: &[f64; 3]| (0..3).map(|k| (px[k] - c[k]).powi(2)).sum::<f64>();
            refs.iter().fold((f64::INFINITY, class::VOID), |best, (c, l)| {
                let d = dist(c);
                if d < best.0 { (d, *l) } else { best }
            }).1
        })
        .collect();
    PerspectiveSemantics { view, height: img.height, width: img.width, labels }
}

pub fn evaluate_images(images: &[RgbImage], p: &Prepared) -> CliResult<MetricsReport> {
    let pred: Vec<PerspectiveSemantics> =
        images.iter().enumerate().map(|(m, img)| classify_colors(img, m + 1, &p.spec)).collect();
    Ok(MetricsReport {
        overlap: Some(overlap_psnr(images, &p.rig)?),
        fidelity: Some(fidelity_psnr(images, &p.gt.images)?),
        semantic: Some(multi_view_iou(&pred, &p.gt.semantics, class::COUNT)?),
        bev: Some(bev_iou(&pred, &p.rig, &p.scene.semantics)?),
        color: Some(instance_color_report(images, &p.gt.instances)?),
    })
}

pub fn cmd_evaluate(config: &RunConfig) -> CliResult<CommandOutput> {
    let p = prepare(config)?;
    let images = match &config.images {
        Some(dir) => (1..=p.rig.len()).map(|m| read_png(&dir.join(format!("view_{m}.png")))).collect::<CliResult<Vec<_>>>()?,
        None => p.gt.images.clone(),
    };
    let report = evaluate_images(&images, &p)?;
    let entries = report.entries();
    let dir = out_dir(config)?;
    let mut out = CommandOutput::default();
    let kv: Vec<(String, String)> = entries.iter().map(|(k, v)| (k.clone(), format_metric(*v))).collect();
    let text = format_key_values(&kv);
    let path = dir.join("report.txt");
    write_text(&path, &text)?;
    out.files.push(path);
    if config.json {
        let path = dir.join("report.json");
        let json = metrics_json(&entries);
        write_text(&path, &json)?;
        out.files.push(path);
        out.lines.push(json.trim_end().to_string());
    } else {
        out.lines.extend(text.lines().map(str::to_string));
    }
    Ok(out)
}

/// Trains the tiny denoiser on the encoded ground-truth views of the scene.
pub fn cmd_train(config: &RunConfig, p: &Prepared) -> CliResult<CommandOutput> {
    let grid = latent_grid(&p.rig)?;
    let maps = RigMaps::build(&p.rig, grid.0, grid.1)?;
    let views = p.gt.images.iter().map(|im| encode_image(im, LATENT_CHANNELS)).collect::<Result<Vec<_>, _>>()?;
    let batch = vec![LatentStack::new(views, 0)?];
    let conditions = vec![condition_for(p)?];
    let mut model = TinyDenoiser::new(config.seed, Some(maps.clone()), config.window)?;
    let report = train(&mut model, &batch, &conditions, &config.schedule()?, &maps, config.train_steps, &AdamConfig::default(), config.seed)?;
    let dir = out_dir(config)?;
    let ckpt = dir.join("checkpoint.txt");
    write_checkpoint(&ckpt, &model, grid)?;
    let mut log = vec![
        ("initial_loss".to_string(), format_metric(Some(report.initial_loss))),
        ("final_loss".to_string(), format_metric(Some(report.final_loss))),
    ];
    log.extend(report.step_losses.iter().enumerate().map(|(i, l)| (format!("step_{}", i + 1), format_metric(Some(*l)))));
    let log_path = dir.join("train_log.txt");
    write_text(&log_path, &format_key_values(&log))?;
    Ok(CommandOutput {
        files: vec![ckpt, log_path],
        lines: vec![format!(
            "trained tiny denoiser for {} steps: loss {:.3} -> {:.3}",
            config.train_steps, report.initial_loss, report.final_loss
        )],
    })
}

/// scene -> project -> correspond -> train -> generate -> evaluate.
pub fn cmd_demo(config: &RunConfig) -> CliResult<CommandOutput> {
    let mut out = CommandOutput::default();
    out.extend(cmd_project(&config.with_out("project"))?);
    out.extend(cmd_correspond(&config.with_out("correspond"))?);
    let p = prepare(config)?;
    let train_cfg = config.with_out("train");
    out.extend(cmd_train(&train_cfg, &p)?);
    let generate_cfg = RunConfig { checkpoint: None, ..config.with_out("generate") };
    out.extend(cmd_generate(&generate_cfg)?);
    let tiny_cfg = RunConfig { checkpoint: Some(train_cfg.out.join("checkpoint.txt")), ..config.with_out("generate_tiny") };
    out.extend(cmd_generate(&tiny_cfg)?);
    for (src, dst) in [("generate", "evaluate"), ("generate_tiny", "evaluate_tiny")] {
        let eval_cfg = RunConfig { images: Some(config.out.join(src)), ..config.with_out(dst) };
        let report = cmd_evaluate(&eval_cfg)?;
        out.lines.push(format!("{dst}:"));
        out.extend(report);
    }
    Ok(out)
}
