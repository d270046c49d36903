//! Command-line front end. Flags override values from `--config`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bp::GradientRouting;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::{fuse, write_ply, FusionView};
use crate::geometry::{CameraModel, View, ViewSet};
use crate::gradcheck::{gradient_check_with, GradCheckReport};
use crate::io::{
    read_camera, read_image, read_pairs, read_pfm, write_atomic, write_camera, write_depth_preview, write_image_png16,
    write_pfm, SceneLayout,
};
use crate::pipeline::run_pipeline;
use crate::synth::{depth_error_metrics, fraction_within_relative, generate_scene, SceneSpec};
use crate::verify::{run_verify, VerifyOptions};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "BELIEFSWEEP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "beliefsweep",
    version,
    about = "Plane-sweep depth estimation with a belief-propagation CRF"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (or file, for `fuse`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores, or $BELIEFSWEEP_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for `synth` noise and the verification draws.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a depth map for each reference view of a scene directory.
    Depth(DepthArgs),
    /// Fuse per-view depth maps into a PLY point cloud.
    Fuse(FuseArgs),
    /// Render a synthetic scene directory with ground-truth depth.
    Synth(SynthArgs),
    /// Compare an estimated depth map against ground truth.
    Metrics(MetricsArgs),
    /// Run the property suite and print a JSON summary.
    Verify(VerifyArgs),
    /// Finite-difference check of the BP gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct DepthArgs {
    /// Scene directory (images/, cams/, optional pair.txt).
    pub scene: PathBuf,
    /// Reference views to process (default: all).
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<usize>,
    /// Source views per reference (pair.txt order, else nearest centers).
    #[arg(long)]
    pub num_sources: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Scene directory with cams/ and images/.
    pub scene: PathBuf,
    /// Directory holding the depth maps (default: <scene>/depth).
    #[arg(long)]
    pub depth_dir: Option<PathBuf>,
    /// Consistent other views required to keep a pixel.
    #[arg(long)]
    pub min_views: Option<usize>,
    /// Reprojection threshold in pixels.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Largest accepted relative depth difference after the round trip.
    #[arg(long)]
    pub max_rel_depth_diff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description in TOML (default: the built-in two-plane scene).
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Estimated depth (PFM).
    pub estimate: PathBuf,
    /// Ground-truth depth (PFM).
    pub truth: PathBuf,
    /// Absolute error thresholds for the percent-above table.
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0, 8.0, 20.0])]
    pub thresholds: Vec<f64>,
    /// Relative tolerance for the within-tolerance fraction.
    #[arg(long, default_value_t = 0.01)]
    pub rel: f64,
    /// Border pixels excluded from the within-tolerance fraction.
    #[arg(long, default_value_t = 8)]
    pub margin: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mutation {
    /// Swap the interpolation weights when routing pairwise gradients.
    SwapAlpha,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub mutate: Option<Mutation>,
    /// Skip the synthetic end-to-end, pipeline scale and fusion checks.
    #[arg(long)]
    pub quick: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Labels, height, width.
    #[arg(long, value_delimiter = ',', default_values_t = [4, 5, 5])]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub mutate: Option<Mutation>,
}

fn routing(m: Option<Mutation>) -> GradientRouting {
    match m {
        Some(Mutation::SwapAlpha) => GradientRouting::SwappedWeights,
        None => GradientRouting::Standard,
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::usage(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

/// Runs the parsed command; `Ok(false)` means a check failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::usage("thread count must be positive"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Depth(a) => cmd_depth(cli, cfg, a),
        Command::Fuse(a) => cmd_fuse(cli, cfg, a),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Metrics(a) => cmd_metrics(cli, a),
        Command::Verify(a) => cmd_verify(cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(cli, a),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit_json<T: Serialize>(cli: &Cli, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    println!("{text}");
    if let Some(dir) = &cli.out {
        ensure_dir(dir)?;
        write_atomic(&dir.join(format!("{name}.json")), text.as_bytes())?;
    }
    Ok(())
}

fn load_cameras(layout: &SceneLayout) -> Result<Vec<CameraModel>> {
    let count = layout.view_count();
    if count == 0 {
        return Err(Error::usage(format!(
            "no images under {}",
            layout.root.join("images").display()
        )));
    }
    (0..count).map(|k| read_camera(&layout.camera(k))).collect()
}

/// Sources per reference: `pair.txt` when present, otherwise the nearest camera centers.
pub fn select_sources(layout: &SceneLayout, cameras: &[CameraModel], count: usize) -> Result<Vec<Vec<usize>>> {
    if layout.pairs().exists() {
        let pairs = read_pairs(&layout.pairs())?;
        if pairs.len() != cameras.len() {
            return Err(Error::parse(
                layout.pairs(),
                1,
                format!("lists {} views, scene has {}", pairs.len(), cameras.len()),
            ));
        }
        return pairs
            .into_iter()
            .map(|mut p| {
                if p.iter().any(|&s| s >= cameras.len()) {
                    return Err(Error::parse(layout.pairs(), 1, "source index out of range"));
                }
                p.truncate(count);
                Ok(p)
            })
            .collect();
    }
    Ok((0..cameras.len())
        .map(|r| {
            let c = cameras[r].center();
            let mut others: Vec<usize> = (0..cameras.len()).filter(|&k| k != r).collect();
            others.sort_by(|&a, &b| {
                let da = (cameras[a].center() - c).norm();
                let db = (cameras[b].center() - c).norm();
                da.total_cmp(&db).then(a.cmp(&b))
            });
            others.truncate(count);
            others
        })
        .collect())
}

fn cmd_depth(cli: &Cli, cfg: RunConfig, a: &DepthArgs) -> Result<bool> {
    let layout = SceneLayout::new(&a.scene);
    let cameras = load_cameras(&layout)?;
    if cameras.len() < 2 {
        return Err(Error::usage("depth estimation needs at least two views"));
    }
    let num_sources = a.num_sources.unwrap_or(cfg.num_sources);
    if num_sources == 0 {
        return Err(Error::usage("--num-sources must be positive"));
    }
    let sources = select_sources(&layout, &cameras, num_sources)?;
    let refs: Vec<usize> = if a.views.is_empty() {
        (0..cameras.len()).collect()
    } else {
        a.views.clone()
    };
    let out = cli.out.clone().unwrap_or_else(|| a.scene.join("depth"));
    ensure_dir(&out)?;
    let images: Vec<_> = (0..cameras.len())
        .map(|k| read_image(&layout.image(k)))
        .collect::<Result<_>>()?;
    let view = |k: usize| View {
        camera: cameras[k].clone(),
        image: images[k].clone(),
    };
    for &r in &refs {
        if r >= cameras.len() {
            return Err(Error::usage(format!("view {r} does not exist")));
        }
        if sources[r].is_empty() {
            return Err(Error::usage(format!("view {r} has no source views")));
        }
        let views = ViewSet::new(view(r), sources[r].iter().map(|&s| view(s)).collect())?;
        let start = Instant::now();
        let depth = run_pipeline(&views, &cfg.pipeline)?;
        write_pfm(&out.join(format!("{r:08}.pfm")), &depth)?;
        write_depth_preview(&out.join(format!("{r:08}.png")), &depth)?;
        println!(
            "view {r}: sources {:?}, {} valid pixels, {:.3} s",
            sources[r],
            depth.valid_count(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(true)
}

fn cmd_fuse(cli: &Cli, cfg: RunConfig, a: &FuseArgs) -> Result<bool> {
    let layout = SceneLayout::new(&a.scene);
    let cameras = load_cameras(&layout)?;
    let depth_dir = a.depth_dir.clone().unwrap_or_else(|| a.scene.join("depth"));
    let mut params = cfg.fusion;
    if let Some(n) = a.min_views {
        params.min_views = n;
    }
    if let Some(t) = a.tau {
        params.reprojection_threshold = t;
    }
    if let Some(r) = a.max_rel_depth_diff {
        params.max_rel_depth_diff = r;
    }
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(k, camera)| {
            let path = depth_dir.join(format!("{k:08}.pfm"));
            if !path.exists() {
                return Err(Error::usage(format!("missing depth map {}", path.display())));
            }
            Ok(FusionView {
                camera,
                depth: read_pfm(&path)?,
                image: read_image(&layout.image(k))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cloud = fuse(&views, &params)?;
    let out = cli.out.clone().unwrap_or_else(|| a.scene.join("fused.ply"));
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_ply(&cloud, &out)?;
    if cloud.is_empty() {
        eprintln!("warning: no pixel passed the consistency check; wrote an empty cloud");
    }
    println!("{} points written to {}", cloud.len(), out.display());
    Ok(true)
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<bool> {
    let spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SceneSpec::two_plane_benchmark(),
    };
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::usage("synth needs --out <scene directory>"))?;
    let scene = generate_scene(&spec, cli.seed)?;
    let layout = SceneLayout::new(&out);
    layout.create_dirs()?;
    for k in 0..scene.cameras.len() {
        write_image_png16(&layout.image(k), &scene.images[k])?;
        write_camera(&layout.camera(k), &scene.cameras[k])?;
        write_pfm(&layout.ground_truth(k), &scene.depths[k])?;
    }
    let text = toml::to_string(&spec).map_err(|e| Error::data(e.to_string()))?;
    write_atomic(&out.join("scene.toml"), text.as_bytes())?;
    println!("{} views written to {}", scene.cameras.len(), out.display());
    Ok(true)
}

#[derive(Serialize)]
struct MetricsReport {
    thresholds: Vec<f64>,
    percent_error_above: Vec<f64>,
    rel_tolerance: f64,
    margin: usize,
    fraction_within: f64,
}

fn cmd_metrics(cli: &Cli, a: &MetricsArgs) -> Result<bool> {
    let estimate = read_pfm(&a.estimate)?;
    let truth = read_pfm(&a.truth)?;
    let report = MetricsReport {
        percent_error_above: depth_error_metrics(&estimate, &truth, &a.thresholds)?,
        thresholds: a.thresholds.clone(),
        rel_tolerance: a.rel,
        margin: a.margin,
        fraction_within: fraction_within_relative(&estimate, &truth, a.rel, a.margin)?,
    };
    emit_json(cli, "metrics", &report)?;
    Ok(true)
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs) -> Result<bool> {
    let opts = VerifyOptions {
        seed: cli.seed,
        routing: routing(a.mutate),
        end_to_end: !a.quick,
        ..Default::default()
    };
    let report = run_verify(&opts);
    emit_json(cli, "verify", &report)?;
    for name in report.failing() {
        eprintln!("failed: {name}");
    }
    Ok(report.passed)
}

#[derive(Serialize)]
struct GradcheckSummary {
    tolerance: f64,
    passed: bool,
    reports: Vec<GradCheckReport>,
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<bool> {
    let [p, m, n] = a.shape[..] else {
        return Err(Error::usage("--shape takes labels,height,width"));
    };
    let reports = (cli.seed..cli.seed + a.seeds)
        .map(|s| gradient_check_with(s, (p, m, n), routing(a.mutate)))
        .collect::<Result<Vec<_>>>()?;
    let passed = reports.iter().all(|r| r.passed(a.tolerance));
    emit_json(
        cli,
        "gradcheck",
        &GradcheckSummary {
            tolerance: a.tolerance,
            passed,
            reports,
        },
    )?;
    Ok(passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "beliefsweep",
            "gradcheck",
            "--seeds",
            "2",
            "--threads",
            "1",
            "--seed",
            "5",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(1));
        assert_eq!(cli.seed, 5);
        assert!(matches!(
            cli.command,
            Command::Gradcheck(GradcheckArgs { seeds: 2, .. })
        ));
    }

    #[test]
    fn nearest_sources_without_pair_file() {
        let dir = tempfile::tempdir().unwrap();
        let layout = SceneLayout::new(dir.path());
        let cams: Vec<CameraModel> = [0.0, 1.0, 3.0, -0.5]
            .iter()
            .map(|&x| {
                CameraModel::simple(10.0, 5.0, 5.0, 1.0, 2.0)
                    .unwrap()
                    .with_center(nalgebra::Vector3::new(x, 0.0, 0.0))
                    .unwrap()
            })
            .collect();
        let s = select_sources(&layout, &cams, 2).unwrap();
        assert_eq!(s[0], vec![3, 1]);
        assert_eq!(s[2], vec![1, 0]);
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["beliefsweep", "train"]), 2);
    }
}
