use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use collide_refine::agreement::AgreementConfig;
use collide_refine::fusion::{extract_grids, read_grids, write_grids, FrameObservation};
use collide_refine::geometry::ModelConfig;
use collide_refine::gradcheck::run_gradcheck;
use collide_refine::metrics::evaluate_scene;
use collide_refine::pipeline::{
    fuse_frames, hypothesis_with_grids, initial_poses, render_frames, spawn_events, Initializer,
};
use collide_refine::refine::{refine, IccStatus, IcpConfig, RefineConfig, RefineMode, TraceRow};
use collide_refine::scenegen::{
    generate_scene, read_frames, read_poses, read_scene, visibility, write_frames, write_poses, write_scene,
    GroundTruthScene, ModelLibrary, SceneSpec,
};

const THREADS_ENV: &str = "COLLIDE_REFINE_THREADS";

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "collide-refine", version, about = "Synthetic scenes, occupancy fusion and collision-aware pose refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    /// Ground truth plus Gaussian noise.
    Perturbed,
    /// ICP from the centroid of the observed points.
    Centroid,
}

#[derive(clap::Args)]
struct InitArgs {
    /// Initial pose source.
    #[arg(long, value_enum, default_value = "perturbed")]
    init: InitKind,
    /// Translation noise in meters.
    #[arg(long, default_value_t = 0.01)]
    sigma_t: f64,
    /// Rotation noise in degrees.
    #[arg(long, default_value_t = 5.0)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InitArgs {
    fn initializer(&self) -> Initializer {
        match self.init {
            InitKind::Perturbed => Initializer::Perturbed {
                sigma_t: self.sigma_t,
                sigma_r: self.sigma_r.to_radians(),
                seed: self.seed,
            },
            InitKind::Centroid => Initializer::Centroid,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a tabletop scene and render its depth and instance frames.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        objects: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        frames: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a scene's frames, export surrounding grids and report spawn events.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        /// Output map file.
        #[arg(long)]
        out: PathBuf,
        /// Output directory for grid_{id}.bin and grid_{id}.json.
        #[arg(long)]
        grids: PathBuf,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Refine initial poses and write the result and the loss trace.
    Refine {
        #[arg(long)]
        scene: PathBuf,
        /// none, icc, icp or icc+icp.
        #[arg(long, value_parser = parse_mode)]
        mode: RefineMode,
        #[arg(long)]
        out: PathBuf,
        /// CSV loss trace: iter,l_col_mean,l_surf_mean,total.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Grids written by `fuse`; the frames are fused again when absent.
        #[arg(long)]
        grids: Option<PathBuf>,
        /// Initial poses file; overrides --init.
        #[arg(long)]
        init_poses: Option<PathBuf>,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Score estimated poses against a ground-truth scene.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        fixtures: usize,
    },
}

fn parse_mode(s: &str) -> Result<RefineMode, String> {
    s.parse().map_err(|e: collide_refine::Error| e.to_string())
}

enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl From<collide_refine::Error> for Failure {
    fn from(e: collide_refine::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn library() -> Result<ModelLibrary, Failure> {
    Ok(ModelLibrary::standard(ModelConfig::default())?)
}

/// Directory holding the frames of a scene given as a directory or a file.
fn scene_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn load_scene(path: &Path) -> Result<(GroundTruthScene, Vec<FrameObservation>), Failure> {
    let scene = read_scene(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if scene.cameras.is_empty() {
        return Err(Failure::Data(format!("{}: scene has no frames", path.display())));
    }
    let frames = read_frames(&scene_dir(path), scene.cameras.len())
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok((scene, frames))
}

fn cmd_gen(seed: u64, objects: u64, frames: u64, out: &Path) -> CmdResult {
    let lib = library()?;
    let spec = SceneSpec::tabletop(seed, objects as usize, frames as usize)?;
    let scene = generate_scene(&spec, &lib)?;
    let rendered = render_frames(&scene, &lib)?;
    write_scene(out, &scene)?;
    write_frames(out, &rendered)?;
    Ok(())
}

fn cmd_fuse(scene_path: &Path, out: &Path, grids_dir: &Path, init: &InitArgs) -> CmdResult {
    let lib = library()?;
    let (scene, frames) = load_scene(scene_path)?;
    let map = fuse_frames(&scene.bounds, &frames)?;
    fs::write(out, map.to_bytes()).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    for o in &scene.objects {
        match extract_grids(&map, o.id, lib.get(&o.model)?) {
            Ok(g) => write_grids(grids_dir, &g)?,
            Err(collide_refine::Error::EmptyTarget(id)) => eprintln!("object {id} was never observed; no grid written"),
            Err(e) => return Err(e.into()),
        }
    }
    let events = spawn_events(
        &scene,
        &lib,
        &frames,
        init.initializer(),
        AgreementConfig::default(),
        &IcpConfig::default(),
    )?;
    for e in events {
        let line = serde_json::json!({"event": "spawn", "frame": e.frame, "id": e.id, "pose": e.pose});
        println!("{line}");
    }
    Ok(())
}

fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iter,l_col_mean,l_surf_mean,total\n");
    for r in trace {
        let _ = writeln!(s, "{},{:e},{:e},{:e}", r.iter, r.l_col_mean, r.l_surf_mean, r.total);
    }
    s
}

fn cmd_refine(
    scene_path: &Path,
    mode: RefineMode,
    out: &Path,
    trace: Option<&Path>,
    grids_dir: Option<&Path>,
    init_poses: Option<&Path>,
    init: &InitArgs,
) -> CmdResult {
    let lib = library()?;
    let (scene, frames) = load_scene(scene_path)?;
    let cfg = RefineConfig::default();
    let start = match init_poses {
        Some(p) => read_poses(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => initial_poses(init.initializer(), &scene, &lib, &frames, &cfg.icp)?,
    };
    let grids = match grids_dir {
        Some(dir) => scene
            .objects
            .iter()
            .map(|o| Ok((o.id, read_grids(dir, o.id).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?)))
            .collect::<Result<BTreeMap<_, _>, Failure>>()?,
        None => {
            let map = fuse_frames(&scene.bounds, &frames)?;
            scene
                .objects
                .iter()
                .map(|o| Ok((o.id, extract_grids(&map, o.id, lib.get(&o.model)?)?)))
                .collect::<Result<BTreeMap<_, _>, Failure>>()?
        }
    };
    let hypothesis = hypothesis_with_grids(&scene, &lib, grids, &frames, &start)?;
    let outcome = refine(&hypothesis, mode, &cfg)?;
    if let Some(t) = trace {
        fs::write(t, trace_csv(&outcome.trace)).map_err(|e| Failure::Data(format!("{}: {e}", t.display())))?;
    }
    if let Some(IccStatus::Diverged { iter }) = outcome.status {
        return Err(Failure::Data(format!("refinement diverged at iteration {iter}")));
    }
    let poses: Vec<_> = outcome.scene.objects.iter().map(|o| (o.id, o.pose)).collect();
    write_poses(out, &poses).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    Ok(())
}

fn cmd_eval(gt: &Path, est: &Path, out: Option<&Path>) -> CmdResult {
    let lib = library()?;
    let scene = read_scene(gt).map_err(|e| Failure::Data(format!("{}: {e}", gt.display())))?;
    let estimates = read_poses(est).map_err(|e| Failure::Data(format!("{}: {e}", est.display())))?;
    let dir = scene_dir(gt);
    let frames = if dir.join("frame_000.json").exists() {
        read_frames(&dir, scene.cameras.len())?
    } else {
        render_frames(&scene, &lib)?
    };
    let vis: BTreeMap<u32, f64> = visibility(&scene, &lib, &frames)?.into_iter().collect();
    let models = scene
        .objects
        .iter()
        .map(|o| Ok((o.id, lib.get(&o.model)?.clone())))
        .collect::<Result<BTreeMap<_, _>, Failure>>()?;
    let report = evaluate_scene(&scene.poses(), &estimates, &models, &vis)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Data(e.to_string()))? + "\n";
    match out {
        Some(p) => fs::write(p, json).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, fixtures: usize) -> CmdResult {
    let r = run_gradcheck(seed, fixtures, fixtures)?;
    println!("point fixtures {}  max rel error {:.3e}", r.point_fixtures, r.point_max_rel);
    println!("twist fixtures {}  max rel error {:.3e}", r.twist_fixtures, r.twist_max_rel);
    println!("frozen-denominator twist max rel error {:.3e}", r.frozen_max_rel);
    if r.passed() {
        Ok(())
    } else {
        Err(Failure::Check("gradient check failed".into()))
    }
}

fn configure_threads() -> CmdResult {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Gen { seed, objects, frames, out } => cmd_gen(seed, objects, frames, &out),
        Command::Fuse { scene, out, grids, init } => cmd_fuse(&scene, &out, &grids, &init),
        Command::Refine { scene, mode, out, trace, grids, init_poses, init } => cmd_refine(
            &scene,
            mode,
            &out,
            trace.as_deref(),
            grids.as_deref(),
            init_poses.as_deref(),
            &init,
        ),
        Command::Eval { gt, est, out } => cmd_eval(&gt, &est, out.as_deref()),
        Command::Gradcheck { seed, fixtures } => cmd_gradcheck(seed, fixtures),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
