use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{PipelineError, Trajectory};
use crate::synth::GroundTruthTrajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackScore {
    pub track_id: u32,
    /// Majority ground-truth target, if any sample was assigned.
    pub matched_target: Option<u32>,
    /// Fraction of the track's samples assigned to its majority target.
    pub purity: f64,
    /// Fraction of the matched target's frames covered by this track.
    pub coverage: f64,
    /// Mean distance to the matched target over the samples assigned to it.
    pub mean_error: f64,
    pub identity_switches: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetScore {
    pub target_id: u32,
    pub matched_tracks: u32,
    /// Fraction of the target's frames covered by any matched track.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub tracks: Vec<TrackScore>,
    pub targets: Vec<TargetScore>,
    pub identity_switches: u32,
    pub fragmentation: u32,
    /// Tracks with purity 1 and coverage at least 0.9.
    pub correct_tracks: u32,
}

impl EvaluationReport {
    pub fn is_correct(t: &TrackScore) -> bool {
        t.purity == 1.0 && t.coverage >= 0.9
    }
}

/// Nearest-target assignment per sample within `match_radius`, majority
/// matching per track.
pub fn evaluate(
    tracks: &[Trajectory],
    ground_truth: &[GroundTruthTrajectory],
    match_radius: f64,
) -> Result<EvaluationReport, PipelineError> {
    if ground_truth.iter().all(|t| t.is_empty()) {
        return Err(PipelineError::Config("ground truth is empty".into()));
    }
    let lifetime: HashMap<u32, usize> = ground_truth.iter().map(|t| (t.target_id, t.len())).collect();
    let r2 = match_radius * match_radius;
    let mut covered: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut matched_count: BTreeMap<u32, u32> = BTreeMap::new();
    let mut scores = Vec::with_capacity(tracks.len());
    for track in tracks {
        let assigned: Vec<Option<(u32, f64)>> = track
            .samples
            .iter()
            .map(|s| {
                ground_truth
                    .iter()
                    .filter_map(|g| g.at(s.frame).map(|p| (g.target_id, (p - s.centroid).norm_squared())))
                    .filter(|(_, d2)| *d2 <= r2)
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            })
            .collect();
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for (id, _) in assigned.iter().flatten() {
            *votes.entry(*id).or_default() += 1;
        }
        // most votes, ties to the smallest id
        let majority = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(id, _)| *id);
        let mut switches = 0;
        let mut last: Option<u32> = None;
        for (id, _) in assigned.iter().flatten() {
            if last.is_some_and(|l| l != *id) {
                switches += 1;
            }
            last = Some(*id);
        }
        let n = track.samples.len().max(1) as f64;
        let (purity, coverage, mean_error) = match majority {
            Some(m) => {
                let on: Vec<(u32, f64)> = track
                    .samples
                    .iter()
                    .zip(&assigned)
                    .filter_map(|(s, a)| a.filter(|(id, _)| *id == m).map(|(_, d2)| (s.frame, d2.sqrt())))
                    .collect();
                let set = covered.entry(m).or_default();
                set.extend(on.iter().map(|x| x.0));
                *matched_count.entry(m).or_default() += 1;
                let life = lifetime[&m].max(1) as f64;
                (
                    on.len() as f64 / n,
                    on.len() as f64 / life,
                    on.iter().map(|x| x.1).sum::<f64>() / on.len() as f64,
                )
            }
            None => (0.0, 0.0, f64::NAN),
        };
        scores.push(TrackScore {
            track_id: track.track_id,
            matched_target: majority,
            purity,
            coverage,
            mean_error,
            identity_switches: switches,
        });
    }
    let targets: Vec<TargetScore> = ground_truth
        .iter()
        .map(|g| TargetScore {
            target_id: g.target_id,
            matched_tracks: matched_count.get(&g.target_id).copied().unwrap_or(0),
            coverage: covered.get(&g.target_id).map_or(0.0, |s| s.len() as f64 / g.len().max(1) as f64),
        })
        .collect();
    Ok(EvaluationReport {
        identity_switches: scores.iter().map(|s| s.identity_switches).sum(),
        fragmentation: targets.iter().map(|t| t.matched_tracks.saturating_sub(1)).sum(),
        correct_tracks: scores.iter().filter(|s| EvaluationReport::is_correct(s)).count() as u32,
        tracks: scores,
        targets,
    })
}
