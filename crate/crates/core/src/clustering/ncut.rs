use std::collections::HashMap;

use rayon::prelude::*;

use super::eigen::{fiedler_vector, smallest_pairs, Eigenpair};
use super::{ClusterLabeling, ClusteringError, NcutParams, SpaceTimeGraph, Subgraph, UnionFind};

/// `cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V)` with `V = A ∪ B`; edges
/// leaving `V` are ignored.
pub fn ncut_value(graph: &SpaceTimeGraph, a: &[u32], b: &[u32]) -> Result<f64, ClusteringError> {
    let side: HashMap<u32, bool> = a.iter().map(|&i| (i, true)).chain(b.iter().map(|&i| (i, false))).collect();
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for (&i, &in_a) in &side {
        for (j, w) in graph.neighbors(i) {
            let Some(&j_in_a) = side.get(&j) else { continue };
            if in_a {
                assoc_a += w;
            } else {
                assoc_b += w;
            }
            if in_a && !j_in_a {
                cut += w;
            }
        }
    }
    finish_ncut(cut, assoc_a, assoc_b)
}

fn finish_ncut(cut: f64, assoc_a: f64, assoc_b: f64) -> Result<f64, ClusteringError> {
    if !(assoc_a > 0.0) || !(assoc_b > 0.0) {
        return Err(ClusteringError::DegeneratePartition);
    }
    Ok(cut / assoc_a + cut / assoc_b)
}

fn ncut_local(sub: &Subgraph, in_a: &[bool]) -> Result<f64, ClusteringError> {
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for k in 0..sub.len() {
        if in_a[k] {
            assoc_a += sub.degree(k);
            cut += sub.neighbors(k).filter(|(j, _)| !in_a[*j]).map(|(_, w)| w).sum::<f64>();
        } else {
            assoc_b += sub.degree(k);
        }
    }
    finish_ncut(cut, assoc_a, assoc_b)
}

/// Own-side share of a group's link weight to an adjacent frame below which
/// a split counts as cutting a trajectory in time.
const CONTINUITY: f64 = 0.25;

/// Dense frame index per local node and the number of distinct frames.
fn frame_slots(frames: &[u32]) -> (Vec<usize>, usize) {
    let mut map: HashMap<u32, usize> = HashMap::new();
    let slots = frames
        .iter()
        .map(|f| {
            let next = map.len();
            *map.entry(*f).or_insert(next)
        })
        .collect();
    (slots, map.len())
}

/// Temporal overlap required of the two sides of a split: at least
/// `min_shared` common frames and at least `min_fraction` of the frames of
/// the side spanning fewer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coexistence {
    pub min_shared: usize,
    pub min_fraction: f64,
}

impl Coexistence {
    pub fn admits(&self, shared: usize, frames_a: usize, frames_b: usize) -> bool {
        shared >= self.min_shared && shared as f64 >= self.min_fraction * frames_a.min(frames_b) as f64
    }

    /// Shared frames and the frame counts of both sides.
    fn count(frames: &[u32], side: &[bool]) -> (usize, usize, usize) {
        let (slots, count) = frame_slots(frames);
        let mut seen = vec![(false, false); count];
        for (s, &a) in slots.iter().zip(side) {
            if a {
                seen[*s].0 = true;
            } else {
                seen[*s].1 = true;
            }
        }
        (
            seen.iter().filter(|(a, b)| *a && *b).count(),
            seen.iter().filter(|(a, _)| *a).count(),
            seen.iter().filter(|(_, b)| *b).count(),
        )
    }
}

/// Best threshold cut of `y` over `candidates` evenly spaced thresholds
/// strictly inside its range; `A = {y <= t}`. Both sides must hold at
/// least `min_side` nodes and overlap in time as `coexist` requires, with
/// `frames` giving each node's frame. Returns the side flags and the Ncut.
pub fn sweep_cut(
    sub: &Subgraph,
    frames: &[u32],
    y: &[f64],
    candidates: usize,
    min_side: usize,
    coexist: Coexistence,
) -> Option<(Vec<bool>, f64)> {
    let (order, ranked) = ranked_cuts(sub, frames, y, candidates, min_side, coexist);
    let side = prefix_side(&order, ranked.first()?.1);
    let value = ncut_local(sub, &side).ok()?;
    Some((side, value))
}

fn prefix_side(order: &[usize], size: usize) -> Vec<bool> {
    let mut side = vec![false; order.len()];
    for &v in &order[..size] {
        side[v] = true;
    }
    side
}

/// Node order by `y` and the admissible thresholds of the sweep as
/// `(ncut, prefix length)`, lowest Ncut first.
fn ranked_cuts(
    sub: &Subgraph,
    frames: &[u32],
    y: &[f64],
    candidates: usize,
    min_side: usize,
    coexist: Coexistence,
) -> (Vec<usize>, Vec<(f64, usize)>) {
    let n = sub.len();
    let (slots, frame_count) = frame_slots(frames);
    let mut per_frame = vec![(0usize, 0usize); frame_count];
    for &s in &slots {
        per_frame[s].1 += 1;
    }
    let (mut shared, mut frames_a, mut frames_b) = (0usize, 0usize, frame_count);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let (lo, hi) = (y[order[0]], y[order[n - 1]]);
    if !(hi > lo) {
        return (order, Vec::new());
    }
    let total: f64 = (0..n).map(|k| sub.degree(k)).sum();
    let mut in_a = vec![false; n];
    let (mut cut, mut assoc_a, mut size_a) = (0.0, 0.0, 0usize);
    let mut next = 0;
    let mut ranked = Vec::new();
    for c in 1..=candidates {
        let t = lo + (hi - lo) * c as f64 / (candidates + 1) as f64;
        while next < n && y[order[next]] <= t {
            let v = order[next];
            for (j, w) in sub.neighbors(v) {
                if in_a[j] {
                    cut -= w;
                } else {
                    cut += w;
                }
            }
            in_a[v] = true;
            let f = &mut per_frame[slots[v]];
            if f.0 == 0 && f.1 > 1 {
                shared += 1;
            }
            if f.0 > 0 && f.1 == 1 {
                shared -= 1;
            }
            if f.0 == 0 {
                frames_a += 1;
            }
            if f.1 == 1 {
                frames_b -= 1;
            }
            f.0 += 1;
            f.1 -= 1;
            assoc_a += sub.degree(v);
            size_a += 1;
            next += 1;
        }
        if size_a < min_side || n - size_a < min_side || !coexist.admits(shared, frames_a, frames_b) {
            continue;
        }
        let assoc_b = total - assoc_a;
        if !(assoc_a > 0.0 && assoc_b > 0.0) {
            continue;
        }
        if ranked.last().is_some_and(|&(_, s)| s == size_a) {
            continue;
        }
        ranked.push((cut.max(0.0) / assoc_a + cut.max(0.0) / assoc_b, size_a));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    (order, ranked)
}

/// True when some same-frame group of at least `min_group` nodes keeps
/// less than `CONTINUITY` of its link weight to the previous or the next
/// frame on its own side.
fn severs_in_time(sub: &Subgraph, frames: &[u32], side: &[bool], min_group: usize) -> bool {
    let n = sub.len();
    let mut uf = UnionFind::new(n);
    for k in 0..n {
        for (j, _) in sub.neighbors(k) {
            if j > k && frames[j] == frames[k] && side[j] == side[k] {
                uf.union(k as u32, j as u32);
            }
        }
    }
    // size, then (own side, total) towards the previous and the next frame
    let mut groups = vec![(0usize, [(0.0f64, 0.0f64); 2]); n];
    for k in 0..n {
        let g = &mut groups[uf.find(k as u32) as usize];
        g.0 += 1;
        for (j, w) in sub.neighbors(k) {
            let dir = if frames[j] + 1 == frames[k] {
                0
            } else if frames[j] == frames[k] + 1 {
                1
            } else {
                continue;
            };
            g.1[dir].1 += w;
            if side[j] == side[k] {
                g.1[dir].0 += w;
            }
        }
    }
    groups
        .iter()
        .any(|(size, links)| *size >= min_group && links.iter().any(|&(own, total)| total > 0.0 && own < CONTINUITY * total))
}

/// Local connected components of the nodes where `side[k] == want`,
/// largest first, ties by smallest member.
fn side_components(sub: &Subgraph, side: &[bool], want: bool) -> Vec<Vec<usize>> {
    let n = sub.len();
    let mut uf = UnionFind::new(n);
    for k in (0..n).filter(|&k| side[k] == want) {
        for (j, _) in sub.neighbors(k) {
            if side[j] == want {
                uf.union(k as u32, j as u32);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for k in (0..n).filter(|&k| side[k] == want) {
        groups[uf.find(k as u32) as usize].push(k);
    }
    let mut out: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Moves stray fragments so both sides are connected: A keeps its largest
/// piece, then B keeps its largest piece and returns the rest to A.
fn make_sides_connected(sub: &Subgraph, side: &mut [bool]) {
    for want in [true, false] {
        for frag in side_components(sub, side, want).into_iter().skip(1) {
            for k in frag {
                side[k] = !want;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bipartition {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub ncut: f64,
    pub eigen: Eigenpair,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitOutcome {
    Split(Bipartition),
    /// Best Ncut found, if any candidate cut was admissible.
    NoSplit { best_ncut: Option<f64>, eigen: Option<Eigenpair> },
}

/// Fiedler vector, threshold sweep and connectivity repair for one
/// connected cluster (`nodes` ascending). A cut is admissible when both
/// sides are large enough, coexist in time and no same-frame group loses
/// its temporal links to the other side; thresholds are tried in order of
/// increasing Ncut. When the Fiedler vector yields
/// no admissible cut, the next `max_eigenvectors - 1` eigenvectors are
/// swept as well and the lowest admissible Ncut wins.
pub fn spectral_bipartition(
    graph: &SpaceTimeGraph,
    nodes: &[u32],
    params: &NcutParams,
) -> Result<SplitOutcome, ClusteringError> {
    params.validate()?;
    if nodes.len() < 2 * params.min_cluster_points {
        return Ok(SplitOutcome::NoSplit {
            best_ncut: None,
            eigen: None,
        });
    }
    let sub = Subgraph::induced(graph, nodes);
    let frames: Vec<u32> = nodes.iter().map(|&g| graph.frame(g)).collect();
    let coexist = Coexistence {
        min_shared: params.min_multi_frames.min(frame_slots(&frames).1),
        min_fraction: params.min_coexistence,
    };
    // admissible cut of one eigenvector after connectivity repair
    let cut_of = |y: &[f64]| -> Result<Option<(Vec<bool>, f64)>, ClusteringError> {
        let (order, ranked) = ranked_cuts(&sub, &frames, y, params.sweep_candidates, params.min_cluster_points, coexist);
        ranked
            .par_iter()
            .find_map_first(|&(_, size)| {
                let mut side = prefix_side(&order, size);
                make_sides_connected(&sub, &mut side);
                let size_a = side.iter().filter(|s| **s).count();
                let (shared, fa, fb) = Coexistence::count(&frames, &side);
                let admissible = size_a >= params.min_cluster_points
                    && nodes.len() - size_a >= params.min_cluster_points
                    && coexist.admits(shared, fa, fb)
                    && !severs_in_time(&sub, &frames, &side, params.min_cluster_points);
                admissible.then(|| ncut_local(&sub, &side).map(|ncut| (side, ncut)))
            })
            .transpose()
    };
    let fiedler = fiedler_vector(&sub, params.eig_tolerance)?;
    let mut best = cut_of(&fiedler.y)?.map(|(side, ncut)| (side, ncut, fiedler.clone()));
    if best.is_none() && params.max_eigenvectors > 1 {
        let pairs = smallest_pairs(&sub, params.max_eigenvectors, params.eig_tolerance)?;
        for pair in pairs.into_iter().skip(1) {
            if let Some((side, ncut)) = cut_of(&pair.y)? {
                if best.as_ref().is_none_or(|b| ncut < b.1) {
                    best = Some((side, ncut, pair));
                }
            }
        }
    }
    let Some((side, ncut, eigen)) = best else {
        return Ok(SplitOutcome::NoSplit {
            best_ncut: None,
            eigen: Some(fiedler),
        });
    };
    if ncut >= params.ncut_accept_threshold {
        return Ok(SplitOutcome::NoSplit {
            best_ncut: Some(ncut),
            eigen: Some(eigen),
        });
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (k, &g) in nodes.iter().enumerate() {
        if side[k] {
            a.push(g);
        } else {
            b.push(g);
        }
    }
    if b[0] < a[0] {
        std::mem::swap(&mut a, &mut b);
    }
    Ok(SplitOutcome::Split(Bipartition { a, b, ncut, eigen }))
}

/// True when at least `min_multi_frames` frames of the cluster contain two
/// or more same-frame groups of `min_cluster_points` points each.
pub fn is_split_candidate(graph: &SpaceTimeGraph, nodes: &[u32], params: &NcutParams) -> bool {
    let mut uf = UnionFind::new(nodes.len());
    for (k, &g) in nodes.iter().enumerate() {
        for (j, _) in graph.neighbors(g).filter(|(j, _)| *j > g && graph.frame(*j) == graph.frame(g)) {
            if let Ok(l) = nodes.binary_search(&j) {
                uf.union(k as u32, l as u32);
            }
        }
    }
    let mut group_size: HashMap<u32, usize> = HashMap::new();
    for k in 0..nodes.len() {
        *group_size.entry(uf.find(k as u32)).or_default() += 1;
    }
    let mut big_groups_per_frame: HashMap<u32, usize> = HashMap::new();
    for (root, size) in group_size {
        if size >= params.min_cluster_points {
            *big_groups_per_frame.entry(graph.frame(nodes[root as usize])).or_default() += 1;
        }
    }
    big_groups_per_frame.values().filter(|&&c| c >= 2).count() >= params.min_multi_frames
}

/// One split attempt in the audit log. Cluster ids are working ids: the
/// input labels first, then children numbered in order of acceptance.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub parent_id: u32,
    pub children: Option<(u32, u32)>,
    pub ncut: Option<f64>,
    pub accepted: bool,
    pub depth: usize,
    pub lambda: Option<f64>,
    pub residual: Option<f64>,
}

/// Splits split candidates level by level until no cluster splits or
/// `max_recursion_depth` is reached. Attempts within a level run in
/// parallel; results are applied in cluster-id order.
pub fn recursive_split(
    labeling: &ClusterLabeling,
    graph: &SpaceTimeGraph,
    params: &NcutParams,
) -> Result<(ClusterLabeling, Vec<SplitRecord>), ClusteringError> {
    params.validate()?;
    let mut clusters: Vec<Option<Vec<u32>>> = labeling.clusters.iter().cloned().map(Some).collect();
    let mut records = Vec::new();
    let mut level: Vec<u32> = (0..clusters.len() as u32).collect();
    for depth in 0..params.max_recursion_depth {
        let attempts: Vec<u32> = level
            .iter()
            .copied()
            .filter(|&id| {
                let nodes = clusters[id as usize].as_ref().expect("live cluster");
                nodes.len() >= 2 * params.min_cluster_points && is_split_candidate(graph, nodes, params)
            })
            .collect();
        if attempts.is_empty() {
            break;
        }
        let outcomes: Vec<Result<SplitOutcome, ClusteringError>> = attempts
            .par_iter()
            .map(|&id| spectral_bipartition(graph, clusters[id as usize].as_ref().expect("live cluster"), params))
            .collect();
        let mut next_level = Vec::new();
        for (&id, outcome) in attempts.iter().zip(outcomes) {
            let mut rec = SplitRecord {
                parent_id: id,
                children: None,
                ncut: None,
                accepted: false,
                depth,
                lambda: None,
                residual: None,
            };
            match outcome {
                Ok(SplitOutcome::Split(bp)) => {
                    let (ca, cb) = (clusters.len() as u32, clusters.len() as u32 + 1);
                    rec.children = Some((ca, cb));
                    rec.ncut = Some(bp.ncut);
                    rec.accepted = true;
                    rec.lambda = Some(bp.eigen.lambda);
                    rec.residual = Some(bp.eigen.residual);
                    clusters[id as usize] = None;
                    clusters.push(Some(bp.a));
                    clusters.push(Some(bp.b));
                    next_level.extend([ca, cb]);
                }
                Ok(SplitOutcome::NoSplit { best_ncut, eigen }) => {
                    rec.ncut = best_ncut;
                    rec.lambda = eigen.as_ref().map(|e| e.lambda);
                    rec.residual = eigen.as_ref().map(|e| e.residual);
                }
                Err(ClusteringError::NoConvergence { iterations, residual }) => {
                    log::warn!("cluster {id}: eigensolver stopped after {iterations} iterations (residual {residual:e}); not split");
                    rec.residual = Some(residual);
                }
                Err(e) => return Err(e),
            }
            records.push(rec);
        }
        level = next_level;
    }
    let mut keys = vec![0u32; labeling.labels.len()];
    for (id, c) in clusters.iter().enumerate() {
        for &i in c.iter().flatten() {
            keys[i as usize] = id as u32;
        }
    }
    Ok((ClusterLabeling::from_keys(&keys), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::connected_components;

    fn graph(n: usize, edges: &[(u32, u32, f64)]) -> SpaceTimeGraph {
        SpaceTimeGraph::from_edges(vec![0; n], edges)
    }

    #[test]
    fn two_pairs_joined_by_one_edge() {
        // A = {0,1}, B = {2,3}; cut 1, assoc(A) = 1 + 1 + 1 = 3 = assoc(B)
        let g = graph(4, &[(0, 1, 1.0), (2, 3, 1.0), (1, 2, 1.0)]);
        let v = ncut_value(&g, &[0, 1], &[2, 3]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn disconnected_sides_have_zero_ncut() {
        let g = graph(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        assert_eq!(ncut_value(&g, &[0, 1], &[2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn isolated_side_is_degenerate() {
        let g = graph(3, &[(0, 1, 1.0)]);
        assert!(matches!(ncut_value(&g, &[2], &[0, 1]), Err(ClusteringError::DegeneratePartition)));
    }

    fn exhaustive_min(g: &SpaceTimeGraph, min_side: usize) -> f64 {
        let n = g.node_count();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let a: Vec<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 1).collect();
            let b: Vec<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 0).collect();
            if a.len() < min_side || b.len() < min_side {
                continue;
            }
            if let Ok(v) = ncut_value(g, &a, &b) {
                best = best.min(v);
            }
        }
        best
    }

    #[test]
    fn weakly_joined_cliques_separate_exactly() {
        let mut edges = Vec::new();
        for base in [0u32, 7] {
            for i in 0..7 {
                for j in i + 1..7 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
        }
        edges.push((3, 10, 0.01));
        let g = graph(14, &edges);
        let nodes: Vec<u32> = (0..14).collect();
        let params = NcutParams {
            min_cluster_points: 2,
            ..Default::default()
        };
        let SplitOutcome::Split(bp) = spectral_bipartition(&g, &nodes, &params).unwrap() else { panic!("no split") };
        assert_eq!(bp.a, (0..7).collect::<Vec<_>>());
        assert!((bp.ncut - exhaustive_min(&g, 2)).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_is_not_split() {
        let mut edges = Vec::new();
        for i in 0..12 {
            for j in i + 1..12 {
                edges.push((i, j, 1.0));
            }
        }
        let g = graph(12, &edges);
        let params = NcutParams {
            ncut_accept_threshold: 0.5,
            min_cluster_points: 2,
            ..Default::default()
        };
        let nodes: Vec<u32> = (0..12).collect();
        assert!(exhaustive_min(&g, 2) > 0.9);
        assert!(matches!(spectral_bipartition(&g, &nodes, &params).unwrap(), SplitOutcome::NoSplit { .. }));
    }

    /// Three tubes of `len` frames with `per` nodes per frame; tube pairs
    /// (0,1) touch at frame 2 and (1,2) at frame `len - 3`.
    fn three_tubes(len: u32, per: u32) -> (SpaceTimeGraph, Vec<u32>) {
        let id = |tube: u32, f: u32, k: u32| (tube * len + f) * per + k;
        let mut frames = Vec::new();
        let mut truth = Vec::new();
        for tube in 0..3 {
            for f in 0..len {
                for _ in 0..per {
                    frames.push(f);
                    truth.push(tube);
                }
            }
        }
        // frame order is not required by the graph, only node frames
        let mut edges = Vec::new();
        for tube in 0..3 {
            for f in 0..len {
                for a in 0..per {
                    for b in a + 1..per {
                        edges.push((id(tube, f, a), id(tube, f, b), 1.0));
                    }
                    if f + 1 < len {
                        for b in 0..per {
                            edges.push((id(tube, f, a), id(tube, f + 1, b), 0.8));
                        }
                    }
                }
            }
        }
        for (t0, t1, f) in [(0, 1, 2), (1, 2, len - 3)] {
            for a in 0..per {
                edges.push((id(t0, f, a), id(t1, f, a), 0.05));
            }
        }
        (SpaceTimeGraph::from_edges(frames, &edges), truth)
    }

    #[test]
    fn three_touching_tubes_need_two_splits() {
        let (g, truth) = three_tubes(20, 6);
        let ccl = connected_components(&g);
        assert_eq!(ccl.len(), 1);
        let (out, log) = recursive_split(&ccl, &g, &NcutParams::default()).unwrap();
        assert!(out.is_partition());
        assert_eq!(out.len(), 3);
        assert_eq!(log.iter().filter(|r| r.accepted).count(), 2);
        for c in &out.clusters {
            let t = truth[c[0] as usize];
            assert!(c.iter().all(|&i| truth[i as usize] == t));
        }
    }

    #[test]
    fn single_tube_is_left_alone() {
        let (g, _) = three_tubes(20, 6);
        let one: Vec<u32> = (0..120).collect();
        let labeling = ClusterLabeling::from_keys(&vec![0u8; 120]);
        let sub_edges: Vec<(u32, u32, f64)> = g.edges().filter(|e| e.1 < 120).collect();
        let g1 = SpaceTimeGraph::from_edges(one.iter().map(|&i| g.frame(i)).collect(), &sub_edges);
        assert!(!is_split_candidate(&g1, &one, &NcutParams::default()));
        let (out, log) = recursive_split(&labeling, &g1, &NcutParams::default()).unwrap();
        assert_eq!(out, labeling);
        assert!(log.is_empty());
    }

    /// Two parallel tubes touching at frame 10; tube 0 is almost broken
    /// in time between frames 5 and 6.
    fn weak_tube(len: u32, per: u32) -> SpaceTimeGraph {
        let id = |tube: u32, f: u32, k: u32| (tube * len + f) * per + k;
        let frames: Vec<u32> = (0..2).flat_map(|_| (0..len).flat_map(move |f| (0..per).map(move |_| f))).collect();
        let mut edges = Vec::new();
        for tube in 0..2 {
            for f in 0..len {
                for a in 0..per {
                    for b in a + 1..per {
                        edges.push((id(tube, f, a), id(tube, f, b), 1.0));
                    }
                    if f + 1 < len {
                        let w = if tube == 0 && f == 5 { 0.001 } else { 0.8 };
                        for b in 0..per {
                            edges.push((id(tube, f, a), id(tube, f + 1, b), w));
                        }
                    }
                }
            }
        }
        for a in 0..per {
            edges.push((id(0, 10, a), id(1, 10, a), 0.3));
        }
        SpaceTimeGraph::from_edges(frames, &edges)
    }

    #[test]
    fn time_cut_of_one_tube_is_rejected() {
        let (len, per) = (20u32, 4u32);
        let g = weak_tube(len, per);
        let nodes: Vec<u32> = (0..2 * len * per).collect();
        let sub = Subgraph::induced(&g, &nodes);
        let frames: Vec<u32> = nodes.iter().map(|&i| g.frame(i)).collect();
        let early: Vec<bool> = (0..nodes.len() as u32).map(|i| i < 6 * per).collect();
        let tubes: Vec<bool> = (0..nodes.len() as u32).map(|i| i < len * per).collect();
        assert!(ncut_local(&sub, &early).unwrap() < ncut_local(&sub, &tubes).unwrap());
        assert!(severs_in_time(&sub, &frames, &early, 2));
        assert!(!severs_in_time(&sub, &frames, &tubes, 2));
        let params = NcutParams {
            min_cluster_points: 2,
            ..Default::default()
        };
        let SplitOutcome::Split(bp) = spectral_bipartition(&g, &nodes, &params).unwrap() else { panic!("no split") };
        assert_eq!(bp.a, (0..len * per).collect::<Vec<_>>());
    }

    #[test]
    fn coexistence_needs_shared_frames() {
        let c = Coexistence {
            min_shared: 2,
            min_fraction: 0.5,
        };
        assert!(c.admits(5, 10, 6));
        assert!(!c.admits(2, 10, 6));
        assert!(!c.admits(1, 1, 1));
        // two tubes, one per frame range
        let frames = [0, 0, 1, 1, 2, 2];
        let side = [true, true, true, false, false, false];
        assert_eq!(Coexistence::count(&frames, &side), (1, 2, 2));
    }

    #[test]
    fn repair_leaves_both_sides_connected() {
        // path 0-1-2-3-4-5 with a bad initial side assignment
        let g = graph(6, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0), (4, 5, 1.0)]);
        let sub = Subgraph::induced(&g, &[0, 1, 2, 3, 4, 5]);
        let mut side = vec![true, true, false, true, false, false];
        make_sides_connected(&sub, &mut side);
        assert_eq!(side, vec![true, true, false, false, false, false]);
    }
}
