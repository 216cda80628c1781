use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::Point3;
use proptest::prelude::*;
use prometheus::clustering::{
    components_from_edges, connected_components, fiedler_vector, ncut_value, recursive_split, spectral_bipartition,
    sweep_cut, ClusterLabeling, Coexistence, NcutParams, SpaceTimeGraph, SplitOutcome, Subgraph,
};
use prometheus::geometry::Projection;
use prometheus::pipeline::{evaluate, TrackSample, Trajectory};
use prometheus::synth::scenarios::default_rig;
use prometheus::synth::GroundTruthTrajectory;

fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn bfs_labels(n: usize, edges: &[(u32, u32)]) -> Vec<u32> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a as usize].push(b as usize);
        adj[b as usize].push(a as usize);
    }
    let mut label = vec![u32::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != u32::MAX {
            continue;
        }
        label[s] = next;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if label[v] == u32::MAX {
                    label[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    label
}

/// Weighted single-frame graph from raw pairs; loops and repeats dropped.
fn simple_graph(n: usize, raw: &[(u32, u32, f64)]) -> SpaceTimeGraph {
    let mut seen = HashSet::new();
    let edges: Vec<(u32, u32, f64)> = raw
        .iter()
        .map(|&(a, b, w)| (a % n as u32, b % n as u32, w))
        .filter(|&(a, b, _)| a != b)
        .map(|(a, b, w)| (a.min(b), a.max(b), w))
        .filter(|&(a, b, _)| seen.insert((a, b)))
        .collect();
    SpaceTimeGraph::from_edges(vec![0; n], &edges)
}

/// A spanning path plus extra edges, so the graph is connected.
fn connected_graph(n: usize, extra: &[(u32, u32, f64)], path_w: &[f64]) -> SpaceTimeGraph {
    let mut raw: Vec<(u32, u32, f64)> = (0..n as u32 - 1).map(|i| (i, i + 1, path_w[i as usize])).collect();
    raw.extend_from_slice(extra);
    simple_graph(n, &raw)
}

fn is_connected(g: &SpaceTimeGraph, nodes: &[u32]) -> bool {
    let set: HashSet<u32> = nodes.iter().copied().collect();
    let mut seen = HashSet::from([nodes[0]]);
    let mut queue = VecDeque::from([nodes[0]]);
    while let Some(u) = queue.pop_front() {
        for (v, _) in g.neighbors(u) {
            if set.contains(&v) && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen.len() == nodes.len()
}

fn exhaustive_min(g: &SpaceTimeGraph) -> f64 {
    let n = g.node_count();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let a: Vec<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 1).collect();
        let b: Vec<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 0).collect();
        if let Ok(v) = ncut_value(g, &a, &b) {
            best = best.min(v);
        }
    }
    best
}

fn edges_strategy(max_n: u32) -> impl Strategy<Value = Vec<(u32, u32, f64)>> {
    prop::collection::vec((0..max_n, 0..max_n, 0.05f64..1.0), 0..60)
}

proptest! {
    #[test]
    fn project_then_triangulate_round_trips(x in -0.5f64..0.5, y in -0.5f64..0.5, z in -0.5f64..0.5) {
        let rig = default_rig();
        let p = Point3::new(x, y, z);
        let px: [_; 3] = std::array::from_fn(|v| match rig.cameras[v].project(&p) {
            Projection::Image(q) => q,
            Projection::BehindCamera => unreachable!(),
        });
        let t = rig.triangulate(&px).unwrap();
        prop_assert!((t.point - p).norm() < 1e-9);
        let x3 = rig.trifocal().unwrap().transfer(&px[0], &px[1]).unwrap();
        prop_assert!((x3 - px[2]).norm() < 1e-6);
    }

    #[test]
    fn union_find_matches_bfs(n in 1usize..200, raw in prop::collection::vec((0u32..200, 0u32..200), 0..300)) {
        let edges: Vec<(u32, u32)> = raw.iter().map(|&(a, b)| (a % n as u32, b % n as u32)).collect();
        let uf = canonical(&components_from_edges(n, edges.iter().copied()));
        prop_assert_eq!(uf, canonical(&bfs_labels(n, &edges)));
    }

    #[test]
    fn ccl_labeling_is_a_partition_of_connected_clusters(n in 1usize..60, raw in edges_strategy(60)) {
        let g = simple_graph(n, &raw);
        let ccl = connected_components(&g);
        prop_assert!(ccl.is_partition());
        for c in &ccl.clusters {
            prop_assert!(is_connected(&g, c));
        }
    }

    #[test]
    fn ncut_is_symmetric_and_bounded(n in 2usize..12, raw in edges_strategy(12), mask in 1u32..2048) {
        let g = simple_graph(n, &raw);
        let a: Vec<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 1).collect();
        let b: Vec<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 0).collect();
        prop_assume!(!a.is_empty() && !b.is_empty());
        if let (Ok(ab), Ok(ba)) = (ncut_value(&g, &a, &b), ncut_value(&g, &b, &a)) {
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&ab));
        }
    }

    #[test]
    fn sweep_never_beats_the_exhaustive_minimum(
        n in 3usize..11,
        extra in edges_strategy(11),
        path_w in prop::collection::vec(0.05f64..1.0, 10),
    ) {
        let g = connected_graph(n, &extra, &path_w);
        let nodes: Vec<u32> = (0..n as u32).collect();
        let sub = Subgraph::induced(&g, &nodes);
        let pair = fiedler_vector(&sub, 1e-6).unwrap();
        prop_assert!(pair.lambda >= -1e-12);
        prop_assert!(pair.residual <= 1e-6);
        let coexist = Coexistence { min_shared: 1, min_fraction: 0.0 };
        if let Some((_, swept)) = sweep_cut(&sub, &vec![0; n], &pair.y, 256, 1, coexist) {
            prop_assert!(swept >= exhaustive_min(&g) - 1e-12);
        }
    }

    #[test]
    fn recursive_split_yields_connected_partitions(
        n in 10usize..40,
        extra in edges_strategy(40),
        path_w in prop::collection::vec(0.05f64..1.0, 39),
    ) {
        let g = connected_graph(n, &extra, &path_w);
        let params = NcutParams { min_cluster_points: 2, min_multi_frames: 0, ..Default::default() };
        let (out, log) = recursive_split(&connected_components(&g), &g, &params).unwrap();
        prop_assert!(out.is_partition());
        for c in &out.clusters {
            prop_assert!(is_connected(&g, c));
        }
        for r in log.iter().filter(|r| r.accepted) {
            prop_assert!(r.residual.unwrap() <= params.eig_tolerance);
            prop_assert!(r.lambda.unwrap() >= -1e-12);
        }
    }

    #[test]
    fn equal_tubes_are_never_shaved(frames in 2u32..30, links in 1usize..6, seed in any::<u64>()) {
        // two tubes of 5 nodes per frame over the same frames
        let per = 5u32;
        let size = frames * per;
        let mut frame_of = Vec::new();
        let mut edges = Vec::new();
        for tube in 0..2 {
            for i in 0..size {
                frame_of.push(i / per);
                for j in i + 1..size {
                    if j / per - i / per <= 1 {
                        edges.push((tube * size + i, tube * size + j, 1.0));
                    }
                }
            }
        }
        let mut s = seed;
        let mut seen = HashSet::new();
        for _ in 0..links {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let (a, b) = ((s >> 33) as u32 % size, size + (s >> 13) as u32 % size);
            if seen.insert((a, b)) {
                edges.push((a, b, 0.01));
            }
        }
        let g = SpaceTimeGraph::from_edges(frame_of, &edges);
        let nodes: Vec<u32> = (0..2 * size).collect();
        let params = NcutParams::default();
        if let SplitOutcome::Split(bp) = spectral_bipartition(&g, &nodes, &params).unwrap() {
            prop_assert!(bp.a.len() >= params.min_cluster_points && bp.b.len() >= params.min_cluster_points);
        }
    }

    #[test]
    fn evaluation_scores_are_fractions(
        offsets in prop::collection::vec((0u32..2, -0.02f64..0.02), 1..30),
    ) {
        let gt = vec![
            GroundTruthTrajectory::new(0, 0, (0..30).map(|f| Point3::new(f as f64 * 0.01, 0.0, 0.0)).collect()),
            GroundTruthTrajectory::new(1, 0, (0..30).map(|f| Point3::new(f as f64 * 0.01, 0.1, 0.0)).collect()),
        ];
        let samples = offsets
            .iter()
            .enumerate()
            .map(|(f, &(t, d))| TrackSample {
                frame: f as u32,
                centroid: Point3::new(f as f64 * 0.01 + d, 0.1 * t as f64, 0.0),
                point_count: 1,
            })
            .collect();
        let report = evaluate(&[Trajectory { track_id: 0, samples }], &gt, 0.03).unwrap();
        for t in &report.tracks {
            prop_assert!((0.0..=1.0).contains(&t.purity) && (0.0..=1.0).contains(&t.coverage));
        }
        for t in &report.targets {
            prop_assert!((0.0..=1.0).contains(&t.coverage));
        }
    }
}

#[test]
fn labeling_from_keys_is_a_partition() {
    let l = ClusterLabeling::from_keys(&[3u8, 1, 3, 2, 1]);
    assert!(l.is_partition());
    assert_eq!(l.len(), 3);
}
