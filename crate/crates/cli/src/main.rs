use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prometheus::clustering::{read_labels, LinkParams, NcutParams};
use prometheus::geometry::read_rig;
use prometheus::imaging::{run_foreground, BackgroundParams};
use prometheus::pipeline::{
    blur_radius, cloud_centroid, cluster_cloud, evaluate, evaluation_entries, extract_trajectories, format_report,
    parse_override, read_tracks, ConfigValue, resolve_link_params, run_pipeline, synthesize, write_cluster_outputs,
    write_evaluation, write_tracks, LinkingConfig, PipelineConfig, SynthConfig,
};
use prometheus::reconstruction::{build_cloud_from_dir, read_cloud, write_cloud, MatchParams};
use prometheus::synth::read_ground_truth;

/// Multi-camera reconstruction and tracking of featureless targets.
#[derive(Parser)]
#[command(name = "prometheus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene: images, rig, ground truth and background plates.
    Synth(SynthArgs),
    /// Extract foreground masks from three image sequences.
    Foreground(ForegroundArgs),
    /// Match masks across views into a space-time point cloud.
    Reconstruct(ReconstructArgs),
    /// Label the cloud: proximity graph, connected components, normalized cuts.
    Cluster(ClusterArgs),
    /// Per-frame centroid trajectories of the clusters.
    Track(TrackArgs),
    /// Score trajectories against ground truth.
    Evaluate(EvaluateArgs),
    /// Run every stage from one configuration.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in scenario (fig1a, fig1b, fig1c, fig2, fig3, fig5, swarm, static) or a ground-truth CSV.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    targets: Option<u32>,
    #[arg(long, default_value_t = SynthConfig::default().gaussian_sigma_px)]
    sigma_px: f64,
}

#[derive(Args)]
struct ForegroundArgs {
    /// Directory holding cam1/ cam2/ cam3/ frame_%06d.pgm.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = BackgroundParams::default().window_frames)]
    window: usize,
    #[arg(long, default_value_t = BackgroundParams::default().threshold)]
    threshold: f64,
    #[arg(long, default_value_t = BackgroundParams::default().denoise_radius)]
    denoise_radius: u32,
    #[arg(long, default_value_t = BackgroundParams::default().min_component_px)]
    min_component_px: usize,
    /// Directory with cam1.pgm, cam2.pgm, cam3.pgm empty-scene plates.
    #[arg(long)]
    plate: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Epipolar band half-width, pixels.
    #[arg(long, default_value_t = MatchParams::default().epipolar_band_px)]
    band: f64,
    /// Trifocal transfer and reprojection tolerance, pixels.
    #[arg(long, default_value_t = MatchParams::default().match_tolerance_px)]
    tol: f64,
    #[arg(long, default_value_t = MatchParams::default().max_depth)]
    max_depth: f64,
}

#[derive(Args)]
struct BlurArgs {
    /// Rig used to derive default radii from the blur size.
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long, default_value_t = SynthConfig::default().gaussian_sigma_px)]
    sigma_px: f64,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Labels CSV.
    #[arg(long)]
    out: PathBuf,
    /// Split audit CSV; defaults to splits.csv next to the labels.
    #[arg(long)]
    splits: Option<PathBuf>,
    #[command(flatten)]
    blur: BlurArgs,
    #[arg(long)]
    r_static: Option<f64>,
    #[arg(long)]
    r_dynamic: Option<f64>,
    #[arg(long)]
    sigma_w: Option<f64>,
    #[arg(long, default_value_t = NcutParams::default().ncut_accept_threshold)]
    ncut_threshold: f64,
    #[arg(long, default_value_t = NcutParams::default().min_cluster_points)]
    min_cluster_points: usize,
    #[arg(long, default_value_t = NcutParams::default().max_recursion_depth)]
    max_depth: usize,
    #[arg(long, default_value_t = NcutParams::default().eig_tolerance)]
    eig_tolerance: f64,
    #[arg(long, default_value_t = NcutParams::default().sweep_candidates)]
    sweep_candidates: usize,
    #[arg(long, default_value_t = NcutParams::default().min_multi_frames)]
    min_multi_frames: usize,
    #[arg(long, default_value_t = NcutParams::default().min_coexistence)]
    min_coexistence: f64,
    #[arg(long, default_value_t = NcutParams::default().max_eigenvectors)]
    max_eigenvectors: usize,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Per-track scores CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to 3x the blur radius at the cloud centroid (needs --rig and --cloud).
    #[arg(long)]
    match_radius: Option<f64>,
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[command(flatten)]
    blur: BlurArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `section.key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    targets: Option<u32>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Any configuration key, e.g. `--set ncut.ncut_accept_threshold=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        scenario: Some(a.scenario.clone()),
        seed: a.seed,
        frames: a.frames,
        targets: a.targets,
        noise_sigma: a.noise_sigma,
        gaussian_sigma_px: a.sigma_px,
    };
    let s = synthesize(&cfg, &a.scenario, &a.out)?;
    println!("scenario={}", s.name);
    println!("targets={}", s.trajectories.len());
    println!("frames={}", s.scene.frame_count);
    Ok(())
}

fn foreground(a: ForegroundArgs) -> Result<()> {
    let params = BackgroundParams {
        window_frames: a.window,
        threshold: a.threshold,
        denoise_radius: a.denoise_radius,
        min_component_px: a.min_component_px,
    };
    let frames = run_foreground(&a.input, &a.out, &params, a.plate.as_deref())?;
    println!("frames={}", frames.len());
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let rig = read_rig(&a.rig)?;
    let params = MatchParams {
        epipolar_band_px: a.band,
        match_tolerance_px: a.tol,
        max_depth: a.max_depth,
    };
    let cloud = build_cloud_from_dir(&a.masks, &rig, &params)?;
    write_cloud(&a.out, &cloud)?;
    println!("points={}", cloud.len());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let cloud = read_cloud(&a.cloud)?;
    let linking = LinkingConfig {
        r_static: a.r_static,
        r_dynamic: a.r_dynamic,
        sigma_w: a.sigma_w,
    };
    let link = match &a.blur.rig {
        Some(rig) => resolve_link_params(&linking, &read_rig(rig)?, a.blur.sigma_px, &cloud),
        None => match (a.r_static, a.r_dynamic) {
            (Some(r_static), Some(r_dynamic)) => LinkParams {
                r_static,
                r_dynamic,
                sigma_w: a.sigma_w.unwrap_or(r_static / 2.0),
            },
            _ => bail!("give --rig or both --r-static and --r-dynamic"),
        },
    };
    let ncut = NcutParams {
        ncut_accept_threshold: a.ncut_threshold,
        min_cluster_points: a.min_cluster_points,
        max_recursion_depth: a.max_depth,
        eig_tolerance: a.eig_tolerance,
        sweep_candidates: a.sweep_candidates,
        min_multi_frames: a.min_multi_frames,
        min_coexistence: a.min_coexistence,
        max_eigenvectors: a.max_eigenvectors,
    };
    let result = cluster_cloud(&cloud, &link, &ncut)?;
    let splits = a
        .splits
        .unwrap_or_else(|| a.out.parent().unwrap_or(Path::new(".")).join("splits.csv"));
    write_cluster_outputs(&a.out, &splits, &cloud, &result)?;
    println!("ccl_components={}", result.components.len());
    println!("ncut_splits={}", result.splits.iter().filter(|s| s.accepted).count());
    println!("clusters={}", result.labeling.len());
    Ok(())
}

fn track(a: TrackArgs) -> Result<()> {
    let cloud = read_cloud(&a.cloud)?;
    let labels = read_labels(&a.labels)?;
    if labels.labels.len() != cloud.len() {
        bail!("{} labels for {} points", labels.labels.len(), cloud.len());
    }
    let tracks = extract_trajectories(&labels, &cloud);
    write_tracks(&a.out, &tracks)?;
    println!("tracks={}", tracks.len());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let tracks = read_tracks(&a.tracks)?;
    let gt = read_ground_truth(&a.ground_truth)?;
    let radius = match (a.match_radius, &a.blur.rig, &a.cloud) {
        (Some(r), _, _) => r,
        (None, Some(rig), Some(cloud)) => {
            let cloud = read_cloud(cloud)?;
            3.0 * blur_radius(&read_rig(rig)?, a.blur.sigma_px, &cloud_centroid(&cloud))
        }
        _ => bail!("give --match-radius, or --rig and --cloud"),
    };
    let report = evaluate(&tracks, &gt, radius)?;
    if let Some(out) = &a.out {
        write_evaluation(out, &report)?;
    }
    let mut entries = vec![("match_radius".to_string(), radius.to_string())];
    entries.extend(evaluation_entries(&report));
    print!("{}", format_report(&entries));
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let file = a
        .config
        .as_ref()
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let mut overrides = Vec::new();
    if let Some(s) = a.scenario {
        overrides.push(("synth.scenario".to_string(), toml_str(&s)));
    }
    if let Some(seed) = a.seed {
        let seed = i64::try_from(seed).context("--seed must be below 2^63")?;
        overrides.push(("synth.seed".to_string(), seed.into()));
    }
    if let Some(out) = a.out {
        overrides.push(("paths.out".to_string(), toml_str(&out.to_string_lossy())));
    }
    if let Some(f) = a.frames {
        overrides.push(("synth.frames".to_string(), i64::from(f).into()));
    }
    if let Some(t) = a.targets {
        overrides.push(("synth.targets".to_string(), i64::from(t).into()));
    }
    if let Some(n) = a.noise_sigma {
        overrides.push(("synth.noise_sigma".to_string(), n.into()));
    }
    for s in &a.overrides {
        overrides.push(parse_override(s)?);
    }
    let cfg = PipelineConfig::resolve(file.as_deref(), &overrides)?;
    let summary = run_pipeline(&cfg)?;
    print!("{}", format_report(&summary.entries));
    Ok(())
}

fn toml_str(s: &str) -> ConfigValue {
    ConfigValue::String(s.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Foreground(a) => foreground(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Cluster(a) => cluster(a),
        Command::Track(a) => track(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
