use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use granulift::pipeline::{self, PropagatorKind, RunConfig};
use granulift::scene_io::{read_labeled_points, read_mask_file, Scene};
use granulift::synth::{render_scene, write_scene, SynthSpec};
use granulift::tracker::PromptLedger;
use granulift::{Error, Result};

const SEED_ENV: &str = "GRANULIFT_SEED";

#[derive(Parser)]
#[command(name = "granulift", version, about = "Consistent 2D mask tracking and 3D instance label fusion for RGB-D scenes")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Number of scenes processed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PropagatorArg {
    Oracle,
    Replay,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic scene spec into a scene directory.
    Synth { spec: PathBuf, out: PathBuf },
    /// Drop fine detections contained in coarse ones.
    Filter {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        tau_contain: Option<f64>,
    },
    /// Track keyframe detections through the video.
    Track {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        tau_iou: Option<f64>,
        #[arg(long)]
        tau_dorm: Option<u32>,
        #[arg(long, value_enum)]
        propagator: Option<PropagatorArg>,
        /// Replay root, relative to the scene directory.
        #[arg(long)]
        replay_dir: Option<String>,
    },
    /// Back-project masks into labelled 3D points.
    Lift {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        min_points: Option<usize>,
        #[arg(long)]
        frame_subsample: Option<usize>,
    },
    /// Voxel vote, confidence filter and label transfer onto a full cloud.
    Fuse {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        voxel: Option<f64>,
        #[arg(long)]
        tau_conf: Option<f64>,
        /// Target cloud; defaults to the scene's ground-truth points.
        #[arg(long)]
        full_cloud: Option<PathBuf>,
    },
    /// Score a labelled cloud against a ground-truth cloud.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Report path; defaults to `<pred>.eval.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run filter, track, lift, fuse and eval for both label stages.
    Pipeline {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
    },
    /// Check a scene directory's files against their schemas.
    Validate {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
    }
    Ok(cfg)
}

fn for_scenes<T, F>(jobs: usize, scenes: &[PathBuf], f: F) -> Result<Vec<(PathBuf, T)>>
where
    T: Send,
    F: Fn(&Path) -> Result<T> + Sync,
{
    let run = |p: &PathBuf| f(p).map(|v| (p.clone(), v));
    if jobs <= 1 || scenes.len() <= 1 {
        return scenes.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| scenes.par_iter().map(run).collect::<Vec<_>>()).into_iter().collect()
}

fn report<T: Serialize>(json_out: bool, command: &str, rows: Vec<(PathBuf, T)>, text: impl Fn(&T) -> String) {
    if json_out {
        let results: Vec<Value> = rows
            .iter()
            .map(|(p, v)| json!({ "scene": p.display().to_string(), "result": v }))
            .collect();
        println!("{}", json!({ "command": command, "results": results }));
    } else {
        for (p, v) in &rows {
            println!("{}: {}", p.display(), text(v));
        }
    }
}

fn validate_scene(dir: &Path) -> Result<Value> {
    let scene = Scene::open(dir)?;
    let mut masks = 0usize;
    for f in &scene.manifest.frames {
        if let Some(mp) = &f.mask_path {
            masks += read_mask_file(&scene.resolve(mp), scene.dims())?.len();
        }
        scene.depth(scene.manifest.position(f.frame_index).expect("frame in manifest"))?;
    }
    let tracked = if scene.resolve(pipeline::TRACKED_DIR).exists() {
        Some(pipeline::read_tracked(&scene)?.iter().map(|s| s.len()).sum::<usize>())
    } else {
        None
    };
    let log = scene.resolve(pipeline::TRACKLOG_FILE);
    let transitions = if log.exists() { Some(pipeline::check_tracklog(dir)?.len()) } else { None };
    let prompts = scene.resolve(pipeline::PROMPTS_FILE);
    let prompts = if prompts.exists() { Some(PromptLedger::read(&prompts)?.entries.len()) } else { None };
    Ok(json!({
        "frames": scene.manifest.frame_count(),
        "detections": masks,
        "tracked_masks": tracked,
        "transitions": transitions,
        "prompts": prompts,
    }))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let jobs = cli.jobs.max(1);
    match cli.cmd {
        Cmd::Synth { spec, out } => {
            let spec = SynthSpec::load(&spec)?;
            let scene = render_scene(&spec)?;
            write_scene(&scene, &out)?;
            let row = json!({ "frames": spec.frame_count(), "objects": spec.objects.len(), "gt_points": scene.gt_points.len() });
            report(cli.json, "synth", vec![(out, row)], |v| {
                format!("{} frames, {} objects, {} ground-truth points", v["frames"], v["objects"], v["gt_points"])
            });
        }
        Cmd::Filter { scenes, tau_contain } => {
            if let Some(t) = tau_contain {
                cfg.filter.tau_contain = t;
            }
            cfg.validate()?;
            let rows = for_scenes(jobs, &scenes, |d| {
                let scene = Scene::open(d)?;
                let sets = pipeline::filter_scene(&scene, &cfg.filter)?;
                Ok(json!({ "frames": sets.len(), "kept": sets.values().map(|s| s.len()).sum::<usize>() }))
            })?;
            report(cli.json, "filter", rows, |v| format!("{} frames filtered, {} masks kept", v["frames"], v["kept"]));
        }
        Cmd::Track { scenes, stride, tau_iou, tau_dorm, propagator, replay_dir } => {
            if let Some(s) = stride {
                cfg.tracker.stride = s;
            }
            if let Some(t) = tau_iou {
                cfg.tracker.tau_iou = t;
            }
            if let Some(t) = tau_dorm {
                cfg.tracker.tau_dorm = t;
            }
            if let Some(p) = propagator {
                cfg.propagator = match p {
                    PropagatorArg::Oracle => PropagatorKind::Oracle,
                    PropagatorArg::Replay => PropagatorKind::Replay,
                };
            }
            if let Some(r) = replay_dir {
                cfg.replay_dir = r;
            }
            cfg.validate()?;
            let rows = for_scenes(jobs, &scenes, |d| {
                let out = pipeline::track_scene(&Scene::open(d)?, &cfg)?;
                Ok(json!({
                    "tracks": out.state.tracks.len(),
                    "active": out.state.active().count(),
                    "transitions": out.log.len(),
                    "prompts": out.ledger.entries.len(),
                }))
            })?;
            report(cli.json, "track", rows, |v| {
                format!("{} tracks ({} active), {} transitions", v["tracks"], v["active"], v["transitions"])
            });
        }
        Cmd::Lift { scenes, stage, min_points, frame_subsample } => {
            if let Some(m) = min_points {
                cfg.lift.min_points = m;
            }
            if let Some(f) = frame_subsample {
                cfg.lift.frame_subsample = f;
            }
            cfg.validate()?;
            let rows = for_scenes(jobs, &scenes, |d| {
                let pts = pipeline::lift_scene(&Scene::open(d)?, stage, &cfg)?;
                Ok(json!({ "stage": stage, "points": pts.len(), "instances": pts.instance_ids().len() }))
            })?;
            report(cli.json, "lift", rows, |v| {
                format!("stage {}: {} points in {} instances", v["stage"], v["points"], v["instances"])
            });
        }
        Cmd::Fuse { scenes, stage, voxel, tau_conf, full_cloud } => {
            if let Some(v) = voxel {
                cfg.fusion.voxel_size = v;
            }
            if let Some(t) = tau_conf {
                cfg.fusion.tau_conf = t;
            }
            cfg.validate()?;
            let shared = full_cloud.as_deref().map(read_labeled_points).transpose()?;
            let rows = for_scenes(jobs, &scenes, |d| {
                let scene = Scene::open(d)?;
                let target = match &shared {
                    Some(c) => c.clone(),
                    None => pipeline::read_gt_cloud(&scene)?,
                };
                let fused = pipeline::fuse_scene_dir(&scene, stage, &target, &cfg.fusion)?;
                Ok(json!({ "stage": stage, "points": fused.len(), "instances": fused.instance_ids().len() }))
            })?;
            report(cli.json, "fuse", rows, |v| {
                format!("stage {}: {} labelled points in {} instances", v["stage"], v["points"], v["instances"])
            });
        }
        Cmd::Eval { pred, gt, thresholds, out } => {
            if let Some(t) = thresholds {
                cfg.eval.iou_thresholds = t;
            }
            cfg.validate()?;
            let gt_cloud = read_labeled_points(&gt).map_err(|e| match e {
                Error::MissingFile(p) => Error::MissingGt(p.display().to_string()),
                other => other,
            })?;
            let pred_cloud = read_labeled_points(&pred)?;
            let rep = pipeline::evaluate_clouds(&pred_cloud, &gt_cloud, &cfg.eval)?;
            let out = out.unwrap_or_else(|| {
                let mut s = pred.clone().into_os_string();
                s.push(".eval.json");
                PathBuf::from(s)
            });
            pipeline::write_json(&out, &rep)?;
            if cli.json {
                println!("{}", serde_json::to_string(&rep).expect("report serializes"));
            } else {
                println!("{:>9}  {:>7}", "IoU", "AP");
                for t in &rep.ap_per_threshold {
                    println!("{:>9.2}  {:>7.4}", t.threshold, t.ap);
                }
                println!("{:>9}  {:>7.4}", "mean", rep.ap_mean);
                println!("{:>9}  {:>7.4}", "AP50", rep.ap50);
                println!("{:>9}  {:>7.4}", "AP25", rep.ap25);
                println!("{} predicted instances", rep.instances);
            }
        }
        Cmd::Pipeline { scenes } => {
            cfg.validate()?;
            let rows = for_scenes(jobs, &scenes, |d| pipeline::run_pipeline(d, &cfg))?;
            report(cli.json, "pipeline", rows, |s| {
                format!(
                    "AP {:.4} -> {:.4}, AP50 {:.4} -> {:.4}, instances {} -> {}, mask fragmentation {:.3} -> {:.3}",
                    s.stage1.eval.ap_mean,
                    s.stage2.eval.ap_mean,
                    s.stage1.eval.ap50,
                    s.stage2.eval.ap50,
                    s.stage1.eval.instances,
                    s.stage2.eval.instances,
                    s.stage1.mask_fragmentation,
                    s.stage2.mask_fragmentation,
                )
            });
        }
        Cmd::Validate { scenes } => {
            let rows = for_scenes(jobs, &scenes, validate_scene)?;
            report(cli.json, "validate", rows, |v| format!("ok ({} frames)", v["frames"]));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
