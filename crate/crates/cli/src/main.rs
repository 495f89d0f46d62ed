mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use glam::Vec3;
use serde_json::json;
use splatcull::camera::CameraPose;
use splatcull::metrics::{distance_sweep, SweepOptions, Variant};
use splatcull::nn::{grad_check_report, Normalization, SampleBatch};
use splatcull::ply::{load_ply, save_ply};
use splatcull::raster::save_png;
use splatcull::scene::{orbit_eval, OrbitConfig};
use splatcull::synth::{make_shell, make_slab_pair, ShellParams, SlabParams};
use splatcull::{
    render_composed, Asset, ComposeOptions, ComposedScene, InstanceTransform, RenderOptions,
    SamplerKind, VisibilityDataset, VisibilityModel,
};

use config::Config;

/// Neural occlusion culling for Gaussian splatting assets.
#[derive(Debug, Parser)]
#[command(name = "splatcull", version)]
struct Cli {
    /// Seed for every random choice. Overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). `--threads 1` gives bit-identical artifacts.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prune, recenter and attach sampling distances to a PLY asset.
    Prep(PrepArgs),
    /// Write a synthetic asset with known occlusion structure.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Render training views and record per-Gaussian visibility labels.
    Extract(ExtractArgs),
    /// Fit the visibility network to an extracted dataset.
    Train(TrainArgs),
    /// Compare analytic and numeric gradients of random networks.
    Gradcheck(GradcheckArgs),
    /// Render a composed scene to PNG and print frame statistics.
    Render(RenderArgs),
    /// Distance sweep over the method variants; writes CSV.
    Bench(BenchArgs),
    /// Recall, culling rate and image quality on a held-out orbit.
    OrbitStats(OrbitArgs),
}

#[derive(Debug, Args)]
struct PrepArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    prune: Option<f32>,
    /// Vertical fov of the training camera, degrees.
    #[arg(long)]
    fov: Option<f32>,
    #[arg(long)]
    p_near: Option<f32>,
    #[arg(long)]
    p_far: Option<f32>,
}

#[derive(Debug, Subcommand)]
enum SynthCmd {
    /// Gaussians on a spherical shell.
    Shell {
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f32,
        #[arg(long, default_value_t = 0.025)]
        thickness: f32,
        #[arg(long, default_value_t = 0.99)]
        alpha: f32,
        /// Relative log-uniform jitter of the Gaussian sizes.
        #[arg(long, default_value_t = 0.0)]
        size_jitter: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two parallel sheets, the front one occluding the back one head-on.
    Slab {
        #[arg(long, default_value_t = 2500)]
        n_front: usize,
        #[arg(long, default_value_t = 2500)]
        n_back: usize,
        #[arg(long, default_value_t = 0.2)]
        gap: f32,
        #[arg(long, default_value_t = 0.99)]
        alpha_front: f32,
        #[arg(long, default_value_t = 0.9)]
        alpha_back: f32,
        #[arg(long, default_value_t = 0.6)]
        back_ratio: f32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    asset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dirs: Option<usize>,
    #[arg(long)]
    dists: Option<usize>,
    #[arg(long)]
    aux: Option<usize>,
    /// Training image side, pixels.
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    no_offset: bool,
    #[arg(long, value_parser = parse_sampler)]
    sampler: Option<SamplerKind>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    asset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    threshold: Option<f32>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct SceneSource {
    /// JSON scene layout.
    #[arg(long, conflicts_with = "asset")]
    scene: Option<PathBuf>,
    /// Single prepared asset, rendered as one instance at the origin.
    #[arg(long)]
    asset: Option<PathBuf>,
    /// Visibility model for `--asset`.
    #[arg(long, requires = "asset")]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderFlags {
    #[arg(long)]
    no_mlp: bool,
    #[arg(long)]
    no_fov_correction: bool,
    #[arg(long)]
    strict_frustum: bool,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    radius_clip: Option<f32>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    source: SceneSource,
    /// Camera pose JSON; defaults to the scene's own camera.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: RenderFlags,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    source: SceneSource,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-variant summary table here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    d_min: Option<f32>,
    #[arg(long)]
    d_max: Option<f32>,
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    threshold: Option<f32>,
}

#[derive(Debug, Args)]
struct OrbitArgs {
    #[arg(long)]
    asset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long, conflicts_with = "frac")]
    distance: Option<f32>,
    #[arg(long)]
    frac: Option<f32>,
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    threshold: Option<f32>,
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    match s {
        "fibonacci" => Ok(SamplerKind::Fibonacci),
        "longlat" => Ok(SamplerKind::LongLat),
        _ => Err(format!("unknown sampler {s:?} (fibonacci, longlat)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": error_line(&e) }));
            ExitCode::FAILURE
        }
    }
}

/// The error chain on one line, dropping causes already quoted by their
/// parent's message.
fn error_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !parts.last().is_some_and(|p| p.ends_with(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ")
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed.or(cfg.seed) {
        cfg.seed = Some(s);
        cfg.train.seed = s;
    }
    if let Some(n) = cli.threads.or(cfg.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Command::Prep(a) => prep(&cfg, a),
        Command::Synth(c) => synth(&cfg, c),
        Command::Extract(a) => extract(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Gradcheck(a) => gradcheck(&cfg, a),
        Command::Render(a) => render(&cfg, a),
        Command::Bench(a) => bench(&cfg, a),
        Command::OrbitStats(a) => orbit_stats(&cfg, a),
    }
}

fn load_asset(path: &Path) -> Result<Asset> {
    load_ply(path).with_context(|| format!("loading asset {}", path.display()))
}

fn seed(cfg: &Config) -> u64 {
    cfg.seed.unwrap_or(0)
}

/// Diagonal fov of the square training camera, the angle the near and far
/// sampling distances are defined against.
fn training_diagonal_fov(cfg: &Config, fov_deg: f32) -> f32 {
    cfg.sampling.to_config(fov_deg, 0).diagonal_fov()
}

fn attach_distances(cfg: &Config, asset: &Asset) -> Result<Asset> {
    let p = &cfg.prep;
    Ok(asset.with_sampling_distances(training_diagonal_fov(cfg, p.fov_deg), p.p_near, p.p_far)?)
}

fn prep(cfg: &Config, a: PrepArgs) -> Result<()> {
    let mut cfg = cfg.clone();
    let p = &mut cfg.prep;
    p.prune = a.prune.unwrap_or(p.prune);
    p.fov_deg = a.fov.unwrap_or(p.fov_deg);
    p.p_near = a.p_near.unwrap_or(p.p_near);
    p.p_far = a.p_far.unwrap_or(p.p_far);
    let raw = load_asset(&a.input)?;
    let pruned = raw.prune(cfg.prep.prune);
    let asset = attach_distances(&cfg, &pruned.recenter()?)?;
    save_ply(&asset, &a.out)?;
    let d = asset.distances()?;
    println!(
        "{}",
        json!({
            "input": raw.len(),
            "kept": asset.len(),
            "bound_radius": asset.bound_radius,
            "d_near": d.near,
            "d_far": d.far,
            "hash": format!("{:016x}", asset.content_hash()),
        })
    );
    Ok(())
}

fn synth(cfg: &Config, c: SynthCmd) -> Result<()> {
    let (asset, out) = match c {
        SynthCmd::Shell {
            n,
            radius,
            thickness,
            alpha,
            size_jitter,
            out,
        } => {
            let p = ShellParams {
                n,
                radius,
                thickness,
                alpha,
                size_jitter,
                seed: seed(cfg),
            };
            (make_shell(&p), out)
        }
        SynthCmd::Slab {
            n_front,
            n_back,
            gap,
            alpha_front,
            alpha_back,
            back_ratio,
            out,
        } => {
            let p = SlabParams {
                n_front,
                n_back,
                gap,
                alpha_front,
                alpha_back,
                back_extent_ratio: back_ratio,
                seed: seed(cfg),
                ..Default::default()
            };
            (make_slab_pair(&p), out)
        }
    };
    // Synthetic assets are already centered; attaching distances makes them
    // ready for extract without a separate prep step.
    let asset = attach_distances(cfg, &asset.recenter()?)?;
    save_ply(&asset, &out)?;
    println!(
        "{}",
        json!({ "gaussians": asset.len(), "hash": format!("{:016x}", asset.content_hash()) })
    );
    Ok(())
}

fn extract(cfg: &Config, a: ExtractArgs) -> Result<()> {
    let mut s = cfg.sampling.clone();
    s.n_directions = a.dirs.unwrap_or(s.n_directions);
    s.n_distances = a.dists.unwrap_or(s.n_distances);
    s.n_aux_views = a.aux.unwrap_or(s.n_aux_views);
    s.image_size = a.size.unwrap_or(s.image_size);
    s.offset_enabled &= !a.no_offset;
    s.sampler = a.sampler.unwrap_or(s.sampler);
    let sampling = s.to_config(cfg.prep.fov_deg, seed(cfg));
    let asset = load_asset(&a.asset)?;
    let ds = VisibilityDataset::extract(&asset, &sampling)?;
    ds.save(&a.out)?;
    println!(
        "{}",
        json!({
            "views": ds.views.len(),
            "gaussians": asset.len(),
            "positive_fraction": ds.positive_fraction(),
        })
    );
    Ok(())
}

fn train(cfg: &Config, a: TrainArgs) -> Result<()> {
    let mut tc = cfg.train.clone();
    tc.iterations = a.iters.unwrap_or(tc.iterations);
    tc.batch_size = a.batch.unwrap_or(tc.batch_size);
    tc.threshold = a.threshold.unwrap_or(tc.threshold);
    let asset = load_asset(&a.asset)?;
    let ds = VisibilityDataset::load(&a.data)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    let model = splatcull::nn::train(&ds, &asset, &tc)?;
    model.save(&a.out)?;
    println!(
        "{}",
        json!({
            "iterations": tc.iterations,
            "final_loss": model.final_loss,
            "threshold": model.threshold,
            "bytes": model.serialized_len(),
        })
    );
    Ok(())
}

fn gradcheck(cfg: &Config, a: GradcheckArgs) -> Result<()> {
    let hidden = a.hidden.unwrap_or_else(|| cfg.train.hidden.clone());
    let norm = Normalization {
        mean_scale: 1.0,
        d_near: 1.0,
        d_far: 10.0,
        f_train: 100.0,
    };
    let base = seed(cfg);
    let (mut worst, mut checked, mut skipped) = (0f64, 0, 0);
    for s in base..base + a.seeds {
        let model = VisibilityModel::new_random(0, norm, 0.5, &hidden, s)?;
        let batch = SampleBatch::<f64>::random(a.batch, s);
        let r = grad_check_report(&model, &batch, cfg.train.pos_weight as f64);
        worst = worst.max(r.max_rel_err);
        checked += r.checked;
        skipped += r.skipped_kinks;
    }
    println!(
        "{}",
        json!({
            "seeds": a.seeds,
            "max_rel_err": worst,
            "checked": checked,
            "skipped_kinks": skipped,
            "tolerance": a.tolerance,
        })
    );
    if worst.is_nan() || worst >= a.tolerance {
        bail!(
            "gradient check failed: max relative error {worst:e} >= {:e}",
            a.tolerance
        );
    }
    Ok(())
}

fn load_scene(src: &SceneSource) -> Result<ComposedScene> {
    if let Some(p) = &src.scene {
        return ComposedScene::load(p).with_context(|| format!("loading scene {}", p.display()));
    }
    let Some(asset_path) = &src.asset else {
        bail!("one of --scene or --asset is required");
    };
    let asset = load_asset(asset_path)?;
    let model = src
        .model
        .as_deref()
        .map(VisibilityModel::load)
        .transpose()?;
    let mut scene = ComposedScene::new();
    let id = asset_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("asset");
    let i = scene.add_asset(id, asset, model)?;
    scene.add_instance(i, InstanceTransform::default())?;
    Ok(scene)
}

fn render_options(cfg: &Config, radius_clip: Option<f32>) -> RenderOptions {
    RenderOptions {
        sh_degree: cfg.render.sh_degree,
        tile_size: cfg.render.tile_size,
        radius_clip,
        ..Default::default()
    }
}

fn render(cfg: &Config, a: RenderArgs) -> Result<()> {
    let mut scene = load_scene(&a.source)?;
    if let Some(t) = a.flags.threshold.or(cfg.render.threshold) {
        scene.set_threshold(t)?;
    }
    let pose = match &a.camera {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading camera {}", p.display()))?;
            serde_json::from_str::<CameraPose>(&text)
                .with_context(|| format!("parsing camera {}", p.display()))?
        }
        None => scene
            .camera
            .clone()
            .context("no --camera given and the scene has no default camera")?,
    };
    let cam = pose.to_camera();
    cam.validate()?;
    let opts = ComposeOptions {
        use_mlp: cfg.render.use_mlp && !a.flags.no_mlp,
        fov_correction: cfg.render.fov_correction && !a.flags.no_fov_correction,
        strict_frustum: cfg.render.strict_frustum || a.flags.strict_frustum,
        render: render_options(cfg, a.flags.radius_clip.or(cfg.render.radius_clip)),
    };
    let (out, stats) = render_composed(&scene, &cam, &opts)?;
    save_png(&out, &a.out)?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn bench(cfg: &Config, a: BenchArgs) -> Result<()> {
    let mut scene = load_scene(&a.source)?;
    if let Some(t) = a.threshold.or(cfg.render.threshold) {
        scene.set_threshold(t)?;
    }
    let mut traj = cfg.bench.trajectory.clone();
    traj.n_steps = a.steps.unwrap_or(traj.n_steps);
    traj.d_min = a.d_min.unwrap_or(traj.d_min);
    traj.d_max = a.d_max.unwrap_or(traj.d_max);
    let variants = a.variants.unwrap_or_else(|| cfg.bench.variants.clone());
    let opts = SweepOptions {
        radius_clip: cfg.bench.radius_clip,
        render: render_options(cfg, None),
    };
    let result = distance_sweep(&scene, &traj, &variants, &opts)?;
    result.emit_csv(&a.out)?;
    if let Some(p) = &a.summary {
        result.emit_summary(p)?;
    }
    println!(
        "{}",
        json!({ "rows": result.rows.len(), "summary": result.summary() })
    );
    Ok(())
}

fn orbit_stats(cfg: &Config, a: OrbitArgs) -> Result<()> {
    let asset = load_asset(&a.asset)?;
    let mut model = VisibilityModel::load(&a.model)
        .with_context(|| format!("loading model {}", a.model.display()))?;
    if let Some(t) = a.threshold.or(cfg.render.threshold) {
        model.threshold = t;
    }
    let o = &cfg.orbit;
    let size = a.size.unwrap_or(o.image_size);
    let fov_y = o.fov_deg.to_radians();
    let distance = match a.distance.or(o.distance) {
        Some(d) => d,
        None => {
            let frac = a.frac.unwrap_or(o.frac);
            let n = model.norm;
            let corrected = n.d_near + frac * (n.d_far - n.d_near);
            let focal = size as f32 / (2.0 * (0.5 * fov_y).tan());
            corrected * focal / n.f_train
        }
    };
    let orbit = OrbitConfig {
        n_views: a.views.unwrap_or(o.n_views),
        distance,
        axis: Vec3::from(o.axis),
        elevation: o.elevation_deg.to_radians(),
        phase: o.phase,
        fov_y,
        image_size: size,
        render: render_options(cfg, cfg.render.radius_clip),
    };
    let stats = orbit_eval(&asset, &model, &orbit)?;
    let mut v = serde_json::to_value(stats)?;
    v["distance"] = json!(distance);
    println!("{v}");
    Ok(())
}
