//! `coordpose`: rendering, reconstruction, pose solving, evaluation and the
//! synthetic data generator behind one binary.
//!
//! Exit status is 0 on success, 1 for invalid input and 2 when a computation
//! fails. Errors are printed to stderr as one line of JSON.

use clap::{Args, Parser, Subcommand};
use coordpose_core::consensus::{build_consensus_model, is_watertight, AlphaShapeParams};
use coordpose_core::coordmap::CoordinateMap;
use coordpose_core::dataset::{
    derive_seed, evaluation_images, generate_synthetic_scene, groundtruth_to_json,
    read_groundtruth, read_intrinsics, read_pose, read_predictions, write_atomic, write_json,
    write_scene_bundle, ConsensusLibrary, InstanceLibrary, SynthConfig,
};
use coordpose_core::dcae::{dcae_forward, weights::read_weights, Tensor4};
use coordpose_core::geometry::color_code;
use coordpose_core::gradcheck::{run_gradcheck, GradcheckConfig};
use coordpose_core::mesh_io::{read_mesh, read_point_cloud, write_mesh};
use coordpose_core::metrics::report;
use coordpose_core::render::{render_coordinate_map, RenderConfig};
use coordpose_core::solvers::{solve_pose_from_map, RansacParams};
use coordpose_core::symmetry::{Category, SymmetryTable};
use coordpose_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Kept in sync with `coordmap::QMAX` by a unit test.
const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (coordinate maps quantized to 65535)"
);

#[derive(Debug, Parser)]
#[command(name = "coordpose", version = VERSION, about = "Category-level pose tooling on coordinate maps")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    /// Seed for every random choice of the invocation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a color-coded mesh into a coordinate map PNG pair.
    Render(RenderArgs),
    /// Build a consensus mesh from a point cloud.
    Reconstruct(ReconstructArgs),
    /// Recover rotation and normalized translation from a coordinate map.
    Solve(SolveArgs),
    /// Score predictions against ground truth and write a CSV report.
    Evaluate(EvaluateArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the auto-encoder on a NOCS map.
    Dcae(DcaeArgs),
    /// Generate synthetic scenes with supervision bundles.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// OBJ or PLY in NOCS units; uncolored meshes are color-coded by position.
    #[arg(long)]
    mesh: PathBuf,
    /// Metric pose JSON; the object scale is the diagonal of its size.
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Output side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// PLY (or OBJ) point cloud.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = AlphaShapeParams::default().alpha)]
    alpha: f64,
    /// Laplacian smoothing iterations.
    #[arg(long, default_value_t = AlphaShapeParams::default().smoothing_iterations)]
    iters: usize,
    #[arg(long, default_value_t = AlphaShapeParams::default().smoothing_lambda)]
    lambda: f64,
    /// `.obj` or `.ply`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long, default_value_t = RansacParams::default().iterations)]
    iterations: usize,
    /// Inlier reprojection threshold in pixels.
    #[arg(long, default_value_t = RansacParams::default().inlier_threshold)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add one row per category before the mean.
    #[arg(long)]
    per_category: bool,
    /// Symmetry table JSON overriding the defaults.
    #[arg(long)]
    symmetry: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Random points per loss term.
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DcaeArgs {
    /// NOCS coordinate PNG.
    #[arg(long)]
    nocs: PathBuf,
    /// NOCS mask PNG [default: `<nocs stem>_mask.png`].
    #[arg(long)]
    nocs_mask: Option<PathBuf>,
    /// Backbone feature, little-endian f32 of shape `[F, s/8, s/8]`.
    #[arg(long)]
    feature: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output mask PNG [default: `<out stem>_mask.png`].
    #[arg(long)]
    out_mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    /// Comma-separated category names [default: all].
    #[arg(long, value_delimiter = ',')]
    categories: Vec<Category>,
    /// Jittered instances generated per category.
    #[arg(long, default_value_t = 5)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    objects_per_scene: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Failure of a subcommand, mapped onto the exit status.
enum Failure {
    Core(Error),
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn report(&self) -> (Value, u8) {
        match self {
            Failure::Core(e) => {
                let mut v = json!({"error": e.kind(), "message": e.to_string()});
                if let Error::Schema { pointer, .. } = e {
                    v["pointer"] = json!(pointer);
                }
                (v, if e.is_validation() { 1 } else { 2 })
            }
            Failure::Usage(m) => (json!({"error": "UsageError", "message": m}), 1),
            Failure::Check(m) => (json!({"error": "GradcheckFailed", "message": m}), 2),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        context: path.display().to_string(),
        source,
    }
}

fn sibling_mask(p: &Path) -> PathBuf {
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    p.with_file_name(format!("{stem}_mask.png"))
}

fn print_json(v: &Value) {
    println!("{v}");
}

fn render(a: &RenderArgs) -> Result<Value> {
    let mut mesh = read_mesh(&a.mesh)?;
    if mesh.colors.is_none() {
        mesh = color_code(&mesh)?;
    }
    let pose = read_pose(&a.pose)?;
    let k = read_intrinsics(&a.intrinsics)?;
    let map = render_coordinate_map(
        &mesh,
        &k,
        &pose,
        pose.diagonal(),
        &RenderConfig::with_size(a.size, a.size),
    )?;
    write_atomic(&a.out, &map.coords_png()?)?;
    write_atomic(&a.mask, &map.mask_png()?)?;
    Ok(json!({"width": a.size, "height": a.size, "pixels": map.popcount()}))
}

fn reconstruct(a: &ReconstructArgs) -> Result<Value> {
    let params = AlphaShapeParams {
        alpha: a.alpha,
        smoothing_iterations: a.iters,
        smoothing_lambda: a.lambda,
    };
    params.validate()?;
    let cloud = read_point_cloud(&a.input)?;
    let mesh = build_consensus_model(&cloud, &params)?;
    write_mesh(&a.output, &mesh)?;
    Ok(json!({
        "points": cloud.len(),
        "vertices": mesh.vertices.len(),
        "faces": mesh.faces.len(),
        "watertight": is_watertight(&mesh),
    }))
}

fn solve(a: &SolveArgs, seed: u64) -> Result<Value> {
    let map = CoordinateMap::read_png(&a.map, &a.mask)?;
    let k = read_intrinsics(&a.intrinsics)?;
    let params = RansacParams {
        iterations: a.iterations,
        inlier_threshold: a.threshold,
        seed,
    };
    let sol = solve_pose_from_map(&map, &k, &params)?;
    let out = json!({
        "R": sol.rotation.to_row_major(),
        "t": [sol.translation.x, sol.translation.y, sol.translation.z],
        "residual_px": sol.residual_px,
    });
    write_json(&a.out, &out)?;
    Ok(json!({"inliers": sol.inlier_count(), "residual_px": sol.residual_px}))
}

fn evaluate(a: &EvaluateArgs) -> Result<Value> {
    let table = match &a.symmetry {
        Some(p) => {
            SymmetryTable::from_json(&std::fs::read_to_string(p).map_err(|e| io_err(p, e))?)?
        }
        None => SymmetryTable::default(),
    };
    let preds = read_predictions(&a.pred)?;
    let gt = read_groundtruth(&a.gt)?;
    for w in preds.warnings.iter().chain(&gt.warnings) {
        log::warn!("{w}");
    }
    let images = evaluation_images(&preds.records, &gt.records)?;
    let r = report(&images, &table)?;
    write_atomic(&a.out, r.to_csv(a.per_category).as_bytes())?;
    Ok(json!({"images": images.len(), "mean": r.mean}))
}

fn dcae(a: &DcaeArgs) -> Result<Value> {
    let (cfg, weights) = read_weights::<f64>(&a.weights, &a.manifest)?;
    let mask_path = a.nocs_mask.clone().unwrap_or_else(|| sibling_mask(&a.nocs));
    let nocs = CoordinateMap::read_png(&a.nocs, &mask_path)?;
    let bytes = std::fs::read(&a.feature).map_err(|e| io_err(&a.feature, e))?;
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::InvalidInput(format!(
            "{}: length is not a multiple of 4",
            a.feature.display()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let b = cfg.bottleneck_size();
    let feature = Tensor4::from_vec([1, cfg.backbone_channels, b, b], values)?;
    let out = dcae_forward(&nocs, &feature, &cfg, &weights, None)?;
    write_atomic(&a.out, &out.map.coords_png()?)?;
    let out_mask = a.out_mask.clone().unwrap_or_else(|| sibling_mask(&a.out));
    write_atomic(&out_mask, &out.map.mask_png()?)?;
    Ok(json!({"pixels": out.map.popcount(), "bottleneck": out.bottleneck.dims()}))
}

fn synth(a: &SynthArgs, seed: u64) -> Result<Value> {
    let categories = if a.categories.is_empty() {
        Category::ALL.to_vec()
    } else {
        a.categories.clone()
    };
    if a.instances == 0 {
        return Err(Error::InvalidInput("--instances must be positive".into()));
    }
    // Scene i draws from derive_seed(seed, i); the library uses the last counter.
    let mut lib_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let instances = InstanceLibrary::builtin(&categories, a.instances, &mut lib_rng)?;
    let consensus = ConsensusLibrary::builtin(&categories)?;
    let cfg = SynthConfig {
        objects_per_scene: a.objects_per_scene,
        ..SynthConfig::default()
    };
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let scenes = (0..a.scenes)
        .into_par_iter()
        .map(|i| {
            let key = format!("scene_{i:05}");
            let (scene, bundles) = generate_synthetic_scene(
                &key,
                derive_seed(seed, i as u64),
                &categories,
                &instances,
                &consensus,
                &cfg,
            )?;
            write_scene_bundle(&a.out, &scene, &bundles)?;
            Ok(scene)
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out.join("gt.json"), &groundtruth_to_json(&scenes))?;
    let mesh_dir = a.out.join("meshes");
    std::fs::create_dir_all(&mesh_dir).map_err(|e| io_err(&mesh_dir, e))?;
    for (c, list) in &instances.entries {
        for (i, (_, m)) in list.iter().enumerate() {
            write_mesh(&mesh_dir.join(format!("{c}_{i}.ply")), m)?;
        }
        write_mesh(
            &mesh_dir.join(format!("{c}_consensus.ply")),
            consensus.get(*c)?,
        )?;
    }
    Ok(json!({"scenes": scenes.len(), "out": a.out.display().to_string()}))
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    let summary = match &cli.command {
        Command::Render(a) => render(a)?,
        Command::Reconstruct(a) => reconstruct(a)?,
        Command::Solve(a) => solve(a, cli.seed)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Dcae(a) => dcae(a)?,
        Command::Synth(a) => synth(a, cli.seed)?,
        Command::Gradcheck(a) => {
            let r = run_gradcheck(&GradcheckConfig {
                points: a.points,
                seed: cli.seed,
                ..GradcheckConfig::default()
            })?;
            let v = serde_json::to_value(&r).expect("report serializes");
            if let Some(p) = &a.out {
                write_json(p, &v)?;
            }
            print_json(&v);
            if !r.passed {
                let failed: Vec<_> = r
                    .entries
                    .iter()
                    .filter(|e| !e.passed)
                    .map(|e| e.name.as_str())
                    .collect();
                return Err(Failure::Check(format!("failed: {}", failed.join(", "))));
            }
            return Ok(());
        }
    };
    print_json(&summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail
                .lines()
                .next()
                .unwrap_or(&msg)
                .trim_start_matches("error: ");
            eprintln!("{}", Failure::Usage(first.to_string()).report().0);
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .init();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        log::warn!("thread pool already initialized: {e}");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (v, code) = f.report();
            eprintln!("{v}");
            ExitCode::from(code)
        }
    }
}
