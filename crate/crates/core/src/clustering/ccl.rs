use super::{ClusterLabeling, SpaceTimeGraph};

/// Disjoint sets with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut x = x;
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if self.rank[ra as usize] < self.rank[rb as usize] { (ra, rb) } else { (rb, ra) };
        self.parent[lo as usize] = hi;
        if self.rank[lo as usize] == self.rank[hi as usize] {
            self.rank[hi as usize] += 1;
        }
        true
    }

    /// Component labels numbered by smallest member.
    pub fn labels(&mut self) -> Vec<u32> {
        let n = self.parent.len();
        let mut root_label = vec![u32::MAX; n];
        let mut next = 0;
        (0..n as u32)
            .map(|i| {
                let r = self.find(i) as usize;
                if root_label[r] == u32::MAX {
                    root_label[r] = next;
                    next += 1;
                }
                root_label[r]
            })
            .collect()
    }
}

/// Component labels of an edge list over `n` nodes.
pub fn components_from_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Vec<u32> {
    let mut uf = UnionFind::new(n);
    for (a, b) in edges {
        uf.union(a, b);
    }
    uf.labels()
}

pub fn connected_components(graph: &SpaceTimeGraph) -> ClusterLabeling {
    let labels = components_from_edges(graph.node_count(), graph.edges().map(|(i, j, _)| (i, j)));
    let k = labels.iter().max().map_or(0, |m| *m as usize + 1);
    let mut clusters = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        clusters[l as usize].push(i as u32);
    }
    ClusterLabeling { labels, clusters }
}
