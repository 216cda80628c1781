//! End-to-end orchestration: synthesis, foreground extraction,
//! reconstruction, clustering, trajectory extraction and evaluation, with
//! every intermediate persisted under one output directory.
//!
//! Output layout:
//!
//! ```text
//! out/config.txt            resolved configuration
//! out/ground_truth.csv      frame,target_id,x,y,z          (synthetic runs)
//! out/rig.txt               camera rig                     (synthetic runs)
//! out/images/cam*/          frame_%06d.pgm                 (synthetic runs)
//! out/background/           cam*.pgm empty-scene plates    (synthetic runs)
//! out/masks/cam*/           frame_%06d.pbm
//! out/cloud.csv             frame,x,y,z,err,u1,v1,u2,v2,u3,v3
//! out/labels.csv            point_index,frame,x,y,z,cluster_id
//! out/splits.csv            parent_id,child_a,child_b,ncut,accepted
//! out/tracks.csv            track_id,frame,x,y,z,n_points
//! out/evaluation.csv        per-track scores               (with ground truth)
//! out/report.txt            key=value summary
//! ```

mod config;
mod evaluate;
mod tracks;

use std::error::Error;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::clustering::{
    build_graph, connected_components, recursive_split, write_labels, write_splits, ClusterLabeling, LinkParams,
    NcutParams, SplitRecord,
};
use crate::geometry::{read_rig, Rig, WorldPoint};
use crate::imaging::run_foreground;
use crate::reconstruction::{build_cloud_from_dir, write_cloud, SpaceTimeCloud};
use crate::synth::scenarios::{Scenario, ScenarioKind, ScenarioOptions};
use crate::synth::{blob_radius_px, generate_scene, occlusion_report, read_ground_truth, TargetOcclusion};

pub use config::{parse_override, EvaluationConfig, ImagingConfig, LinkingConfig, PathsConfig, PipelineConfig, SynthConfig};
/// Value type of configuration overrides.
pub use toml::Value as ConfigValue;
pub use evaluate::{evaluate, EvaluationReport, TargetScore, TrackScore};
pub use tracks::{extract_trajectories, read_tracks, write_tracks, TrackSample, Trajectory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn Error + Send + Sync>,
    },
}

impl PipelineError {
    pub fn stage(stage: &'static str, e: impl Into<Box<dyn Error + Send + Sync>>) -> Self {
        Self::Stage {
            stage,
            source: e.into(),
        }
    }
}

/// World size of one blur sigma at `at`, averaged over the cameras.
pub fn blur_radius(rig: &Rig, sigma_px: f64, at: &WorldPoint) -> f64 {
    rig.cameras
        .iter()
        .map(|c| sigma_px * c.pixel_footprint(c.depth(at)))
        .sum::<f64>()
        / 3.0
}

/// Mean point position; the origin for an empty cloud.
pub fn cloud_centroid(cloud: &SpaceTimeCloud) -> WorldPoint {
    if cloud.is_empty() {
        return WorldPoint::origin();
    }
    let s = cloud.points.iter().fold(Vector3::zeros(), |a, p| a + p.position.coords);
    WorldPoint::from(s / cloud.len() as f64)
}

/// Explicit radii win; missing ones scale with the blur radius at the
/// cloud centroid.
pub fn resolve_link_params(linking: &LinkingConfig, rig: &Rig, sigma_px: f64, cloud: &SpaceTimeCloud) -> LinkParams {
    let auto = LinkParams::from_blur_radius(blur_radius(rig, sigma_px, &cloud_centroid(cloud)));
    let r_static = linking.r_static.unwrap_or(auto.r_static);
    LinkParams {
        r_static,
        r_dynamic: linking.r_dynamic.unwrap_or(auto.r_dynamic),
        sigma_w: linking.sigma_w.unwrap_or(r_static / 2.0),
    }
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub components: ClusterLabeling,
    pub labeling: ClusterLabeling,
    pub splits: Vec<SplitRecord>,
}

pub fn cluster_cloud(cloud: &SpaceTimeCloud, link: &LinkParams, ncut: &NcutParams) -> Result<ClusterResult, PipelineError> {
    let graph = build_graph(cloud, link).map_err(|e| PipelineError::stage("cluster", e))?;
    let components = connected_components(&graph);
    let (labeling, splits) = recursive_split(&components, &graph, ncut).map_err(|e| PipelineError::stage("cluster", e))?;
    Ok(ClusterResult {
        graph_nodes: graph.node_count(),
        graph_edges: graph.edge_count(),
        components,
        labeling,
        splits,
    })
}

/// Writes labels and the split audit next to each other.
pub fn write_cluster_outputs(
    labels: &Path,
    splits: &Path,
    cloud: &SpaceTimeCloud,
    result: &ClusterResult,
) -> Result<(), PipelineError> {
    write_labels(labels, cloud, &result.labeling).map_err(|e| PipelineError::stage("cluster", e))?;
    write_splits(splits, &result.splits).map_err(|e| PipelineError::stage("cluster", e))
}

/// Writes per-track scores as `track_id,matched_target,purity,coverage,mean_error,identity_switches`.
pub fn write_evaluation(path: &Path, report: &EvaluationReport) -> Result<(), PipelineError> {
    let err = |e: csv::Error| PipelineError::stage("evaluate", e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["track_id", "matched_target", "purity", "coverage", "mean_error", "identity_switches"])
        .map_err(err)?;
    for t in &report.tracks {
        w.write_record([
            t.track_id.to_string(),
            t.matched_target.map_or(String::new(), |m| m.to_string()),
            t.purity.to_string(),
            t.coverage.to_string(),
            t.mean_error.to_string(),
            t.identity_switches.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| PipelineError::stage("evaluate", e))
}

/// Writes `target_id,occluded_view1,occluded_view2,occluded_view3,all_view_frames,correct`.
pub fn write_occlusion(path: &Path, outcomes: &[OcclusionOutcome]) -> Result<(), PipelineError> {
    let err = |e: csv::Error| PipelineError::stage("evaluate", e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["target_id", "occluded_view1", "occluded_view2", "occluded_view3", "all_view_frames", "correct"])
        .map_err(err)?;
    for o in outcomes {
        let [v1, v2, v3] = o.occlusion.occluded_frames;
        w.write_record([
            o.occlusion.target_id.to_string(),
            v1.to_string(),
            v2.to_string(),
            v3.to_string(),
            o.occlusion.all_view_frames.to_string(),
            o.correct.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| PipelineError::stage("evaluate", e))
}

/// `key=value` lines for the evaluation, shared by `run` and `evaluate`.
pub fn evaluation_entries(report: &EvaluationReport) -> Vec<(String, String)> {
    let purities: Vec<f64> = report.tracks.iter().map(|t| t.purity).collect();
    let min_purity = purities.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_purity = purities.iter().sum::<f64>() / purities.len().max(1) as f64;
    vec![
        ("targets".into(), report.targets.len().to_string()),
        ("identity_switches".into(), report.identity_switches.to_string()),
        ("fragmentation".into(), report.fragmentation.to_string()),
        ("correct_tracks".into(), report.correct_tracks.to_string()),
        ("min_purity".into(), if purities.is_empty() { "nan".into() } else { min_purity.to_string() }),
        ("mean_purity".into(), mean_purity.to_string()),
    ]
}

pub fn format_report(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Ground-truth targets split by whether they are ever occluded in all three
/// views, each with whether a correct track covers it.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionOutcome {
    pub occlusion: TargetOcclusion,
    pub correct: bool,
}

pub fn occlusion_outcomes(report: &EvaluationReport, occlusion: &[TargetOcclusion]) -> Vec<OcclusionOutcome> {
    occlusion
        .iter()
        .map(|o| OcclusionOutcome {
            occlusion: o.clone(),
            correct: report
                .tracks
                .iter()
                .any(|t| t.matched_target == Some(o.target_id) && EvaluationReport::is_correct(t)),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub entries: Vec<(String, String)>,
    pub cloud_points: usize,
    pub clusters: ClusterResult,
    pub tracks: Vec<Trajectory>,
    pub evaluation: Option<EvaluationReport>,
    pub occlusion: Vec<OcclusionOutcome>,
}

impl RunSummary {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn accepted_splits(&self) -> usize {
        self.clusters.splits.iter().filter(|s| s.accepted).count()
    }
}

fn scenario_from(cfg: &SynthConfig, name: &str) -> Result<Scenario, PipelineError> {
    let opts = ScenarioOptions {
        frames: cfg.frames,
        targets: cfg.targets,
        noise_sigma: cfg.noise_sigma,
        seed: cfg.seed,
    };
    let mut s = match name.parse::<ScenarioKind>() {
        Ok(kind) => Scenario::build(kind, &opts),
        Err(_) if Path::new(name).is_file() => Scenario::from_file(Path::new(name), &opts),
        Err(e) => Err(e),
    }
    .map_err(|e| PipelineError::stage("synth", e))?;
    s.scene.gaussian_sigma_px = cfg.gaussian_sigma_px;
    Ok(s)
}

/// Builds a scenario (built-in name or ground-truth CSV) and renders it to `out`.
pub fn synthesize(cfg: &SynthConfig, name: &str, out: &Path) -> Result<Scenario, PipelineError> {
    let s = scenario_from(cfg, name)?;
    generate_scene(&s.trajectories, &s.scene, cfg.seed, out).map_err(|e| PipelineError::stage("synth", e))?;
    Ok(s)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let out = cfg.paths.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| PipelineError::stage("setup", e))?;
    std::fs::write(out.join("config.txt"), cfg.to_flat_string()?).map_err(|e| PipelineError::stage("setup", e))?;
    let mut entries: Vec<(String, String)> = Vec::new();

    let (images, rig_path, gt_path, plate_dir) = match &cfg.synth.scenario {
        Some(name) => {
            let s = synthesize(&cfg.synth, name, &out)?;
            log::info!("synth: {} targets, {} frames", s.trajectories.len(), s.scene.frame_count);
            entries.push(("scenario".into(), s.name.clone()));
            entries.push(("seed".into(), cfg.synth.seed.to_string()));
            (out.join("images"), out.join("rig.txt"), Some(out.join("ground_truth.csv")), Some(out.join("background")))
        }
        None => {
            let need = |p: &Option<PathBuf>, key: &str| {
                p.clone().ok_or_else(|| PipelineError::Config(format!("{key} is required without synth.scenario")))
            };
            (
                need(&cfg.paths.images, "paths.images")?,
                need(&cfg.paths.rig, "paths.rig")?,
                cfg.paths.ground_truth.clone(),
                cfg.paths.background.clone(),
            )
        }
    };

    let masks = out.join("masks");
    let plate = if cfg.imaging.use_background_plate {
        Some(plate_dir.ok_or_else(|| PipelineError::Config("imaging.use_background_plate needs paths.background".into()))?)
    } else {
        None
    };
    let frames = run_foreground(&images, &masks, &cfg.imaging.params(), plate.as_deref())
        .map_err(|e| PipelineError::stage("foreground", e))?;
    entries.push(("frames".into(), frames.len().to_string()));
    log::info!("foreground: {} frames", frames.len());

    let rig = read_rig(&rig_path).map_err(|e| PipelineError::stage("reconstruct", e))?;
    let cloud = build_cloud_from_dir(&masks, &rig, &cfg.matching).map_err(|e| PipelineError::stage("reconstruct", e))?;
    write_cloud(&out.join("cloud.csv"), &cloud).map_err(|e| PipelineError::stage("reconstruct", e))?;
    entries.push(("points".into(), cloud.len().to_string()));
    log::info!("reconstruct: {} points", cloud.len());

    let blur = blur_radius(&rig, cfg.synth.gaussian_sigma_px, &cloud_centroid(&cloud));
    let link = resolve_link_params(&cfg.linking, &rig, cfg.synth.gaussian_sigma_px, &cloud);
    let clusters = cluster_cloud(&cloud, &link, &cfg.ncut)?;
    write_cluster_outputs(&out.join("labels.csv"), &out.join("splits.csv"), &cloud, &clusters)?;
    entries.extend([
        ("blur_radius".into(), blur.to_string()),
        ("r_static".into(), link.r_static.to_string()),
        ("r_dynamic".into(), link.r_dynamic.to_string()),
        ("graph_edges".into(), clusters.graph_edges.to_string()),
        ("ccl_components".into(), clusters.components.len().to_string()),
        ("ncut_attempts".into(), clusters.splits.len().to_string()),
        ("ncut_splits".into(), clusters.splits.iter().filter(|s| s.accepted).count().to_string()),
        ("clusters".into(), clusters.labeling.len().to_string()),
    ]);
    log::info!(
        "cluster: {} edges, {} components, {} clusters",
        clusters.graph_edges,
        clusters.components.len(),
        clusters.labeling.len()
    );

    let tracks = extract_trajectories(&clusters.labeling, &cloud);
    write_tracks(&out.join("tracks.csv"), &tracks)?;
    entries.push(("tracks".into(), tracks.len().to_string()));

    let mut evaluation = None;
    let mut occlusion = Vec::new();
    if let Some(gt_path) = gt_path.filter(|p| p.is_file()) {
        let gt = read_ground_truth(&gt_path).map_err(|e| PipelineError::stage("evaluate", e))?;
        let radius = cfg.evaluation.match_radius.unwrap_or(3.0 * blur);
        let report = evaluate(&tracks, &gt, radius)?;
        write_evaluation(&out.join("evaluation.csv"), &report)?;
        entries.push(("match_radius".into(), radius.to_string()));
        entries.extend(evaluation_entries(&report));
        let occlusion_px = cfg.evaluation.occlusion_px.unwrap_or_else(|| {
            2.0 * blob_radius_px(cfg.synth.gaussian_sigma_px, 230.0, cfg.imaging.threshold) + 1.0
        });
        occlusion = occlusion_outcomes(&report, &occlusion_report(&gt, &rig, occlusion_px));
        write_occlusion(&out.join("occlusion.csv"), &occlusion)?;
        let (never, ever): (Vec<&OcclusionOutcome>, Vec<&OcclusionOutcome>) =
            occlusion.iter().partition(|o| !o.occlusion.ever_fully_occluded());
        entries.extend([
            ("occlusion_px".into(), occlusion_px.to_string()),
            ("never_occluded_targets".into(), never.len().to_string()),
            ("never_occluded_correct".into(), never.iter().filter(|o| o.correct).count().to_string()),
            ("occluded_targets".into(), ever.len().to_string()),
            ("occluded_correct".into(), ever.iter().filter(|o| o.correct).count().to_string()),
        ]);
        evaluation = Some(report);
    }
    std::fs::write(out.join("report.txt"), format_report(&entries)).map_err(|e| PipelineError::stage("report", e))?;
    Ok(RunSummary {
        out,
        entries,
        cloud_points: cloud.len(),
        clusters,
        tracks,
        evaluation,
        occlusion,
    })
}
