//! Smallest eigenpairs of `(D - W) y = lambda D y` for a connected
//! subgraph, skipping the trivial `lambda = 0`.
//!
//! Every solver works on the normalized matrix `N = D^-1/2 W D^-1/2`,
//! whose top eigenvector `D^1/2 1` (eigenvalue 1) is known. The wanted
//! pairs are the next largest eigenvalues `theta` of `N`, with
//! `lambda = 1 - theta` and `y = D^-1/2 z`. Small problems use a dense
//! symmetric eigensolver. Large ones run a thick-restart Lanczos iteration
//! with full reorthogonalization, deflated against `D^1/2 1`, on the
//! shifted inverse of `I - N` through a sparse Cholesky factor, and on `N`
//! itself if that fails to reach the tolerance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};

use super::{ClusteringError, Subgraph};

const DENSE_LIMIT: usize = 400;
const BASIS: usize = 96;
const KEEP: usize = 24;
const MAX_RESTARTS: usize = 2000;
const SHIFT_INVERT_RESTARTS: usize = 20;
/// Basis sizes at which the Ritz pairs are tested before a restart.
const CHECK_EVERY: usize = 8;
/// Relative to the normalized spectrum in `[0, 2]`.
const SHIFT: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    /// Generalized eigenvalue; the second smallest for the Fiedler pair.
    pub lambda: f64,
    /// Generalized eigenvector, sign fixed so the first nonzero entry is
    /// positive.
    pub y: Vec<f64>,
    /// `|(D - W) y - lambda D y| / |y|`.
    pub residual: f64,
    /// Operator applications (Lanczos) or 0 (dense).
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn generalized_residual(sub: &Subgraph, lambda: f64, y: &[f64]) -> f64 {
    let mut wy = vec![0.0; y.len()];
    sub.weight_mul(y, &mut wy);
    let r: f64 = (0..y.len())
        .map(|k| {
            let d = sub.degree(k);
            let v = d * y[k] - wy[k] - lambda * d * y[k];
            v * v
        })
        .sum();
    r.sqrt() / norm(y)
}

fn finish(sub: &Subgraph, theta: f64, z: &[f64], iterations: usize) -> Eigenpair {
    let mut y: Vec<f64> = z.iter().enumerate().map(|(k, v)| v / sub.degree(k).sqrt()).collect();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = y.iter().find(|v| v.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            y.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let lambda = (1.0 - theta).max(0.0);
    let residual = generalized_residual(sub, lambda, &y);
    Eigenpair {
        lambda,
        y,
        residual,
        iterations,
    }
}

/// The pair of the second-smallest eigenvalue. Requires every node to
/// have positive degree and at least two nodes.
pub fn fiedler_vector(sub: &Subgraph, tolerance: f64) -> Result<Eigenpair, ClusteringError> {
    Ok(smallest_pairs(sub, 1, tolerance)?.swap_remove(0))
}

/// The pairs of the 2nd to `count + 1`-th smallest eigenvalues, ascending;
/// fewer if the subgraph is smaller. Same requirements as
/// [`fiedler_vector`].
pub fn smallest_pairs(sub: &Subgraph, count: usize, tolerance: f64) -> Result<Vec<Eigenpair>, ClusteringError> {
    let n = sub.len();
    if n < 2 || (0..n).any(|k| !(sub.degree(k) > 0.0)) {
        return Err(ClusteringError::InvalidParams(
            "eigenproblem needs at least two nodes, all with positive degree".into(),
        ));
    }
    let count = count.clamp(1, n - 1);
    if n <= DENSE_LIMIT {
        return Ok(dense(sub, count));
    }
    match shift_invert(sub, count, tolerance) {
        Some(pairs) => Ok(pairs),
        None => lanczos(sub, count, tolerance),
    }
}

fn dense(sub: &Subgraph, count: usize) -> Vec<Eigenpair> {
    let n = sub.len();
    let inv: Vec<f64> = (0..n).map(|k| 1.0 / sub.degree(k).sqrt()).collect();
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        for (j, w) in sub.neighbors(k) {
            m[(k, j)] = w * inv[k] * inv[j];
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order[1..=count]
        .iter()
        .map(|&i| {
            let z: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            finish(sub, eig.eigenvalues[i], &z, 0)
        })
        .collect()
}

struct Outcome {
    /// Ritz values, descending, with their vectors.
    pairs: Vec<(f64, Vec<f64>)>,
    applications: usize,
    converged: bool,
}

/// Largest `count` eigenpairs of a symmetric operator restricted to the
/// complement of the unit vector `z0`. `done(theta, estimate)` accepts a
/// Ritz pair whose residual norm is bounded by `estimate`.
fn lanczos_top(
    n: usize,
    count: usize,
    z0: &[f64],
    mut apply: impl FnMut(&[f64], &mut [f64]),
    done: impl Fn(f64, f64) -> bool,
    max_restarts: usize,
) -> Outcome {
    let m = BASIS.min(n - 1);
    let keep = KEEP.max(count + 1).min(m / 2).max(1);
    let count = count.min(keep);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x4e43_5554);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    axpy(-dot(z0, &v), z0, &mut v);
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);

    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut applications = 0usize;
    let mut w = vec![0.0; n];
    let ritz = |basis: &[Vec<f64>], coef: &[f64]| -> Vec<f64> {
        let mut u = vec![0.0; n];
        for (b, c) in basis.iter().zip(coef) {
            axpy(*c, b, &mut u);
        }
        u
    };
    for _ in 0..max_restarts {
        let mut j = basis.len() - 1;
        loop {
            apply(&basis[j], &mut w);
            applications += 1;
            for _pass in 0..2 {
                axpy(-dot(z0, &w), z0, &mut w);
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &w);
                    h[(i, j)] += c;
                    axpy(-c, b, &mut w);
                }
            }
            for i in 0..j {
                h[(j, i)] = h[(i, j)];
            }
            let beta = norm(&w);
            let size = j + 1;
            let exhausted = beta < 1e-13;
            let full = size == m || exhausted;
            if (full || size % CHECK_EVERY == 0) && size >= count {
                let eig = SymmetricEigen::new(h.view((0, 0), (size, size)).clone_owned());
                let mut order: Vec<usize> = (0..size).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
                let converged = order[..count]
                    .iter()
                    .all(|&c| done(eig.eigenvalues[c], beta * eig.eigenvectors[(size - 1, c)].abs()));
                if converged || exhausted {
                    return Outcome {
                        pairs: order[..count]
                            .iter()
                            .map(|&c| (eig.eigenvalues[c], ritz(&basis, eig.eigenvectors.column(c).as_slice())))
                            .collect(),
                        applications,
                        converged,
                    };
                }
                if full {
                    let mut next: Vec<Vec<f64>> = order[..keep]
                        .iter()
                        .map(|&c| ritz(&basis, eig.eigenvectors.column(c).as_slice()))
                        .collect();
                    h.fill(0.0);
                    for (i, &c) in order[..keep].iter().enumerate() {
                        h[(i, i)] = eig.eigenvalues[c];
                    }
                    next.push(w.iter().map(|x| x / beta).collect());
                    basis = next;
                    break;
                }
            }
            basis.push(w.iter().map(|x| x / beta).collect());
            j += 1;
        }
    }
    Outcome {
        pairs: (0..count).map(|i| (h[(i, i)], basis[i].clone())).collect(),
        applications,
        converged: false,
    }
}

struct Normalized {
    sqrt_d: Vec<f64>,
    z0: Vec<f64>,
    /// `|r_N|` below this keeps the generalized residual below the tolerance.
    target: f64,
}

impl Normalized {
    fn new(sub: &Subgraph, tolerance: f64) -> Self {
        let n = sub.len();
        let sqrt_d: Vec<f64> = (0..n).map(|k| sub.degree(k).sqrt()).collect();
        let dmax = (0..n).map(|k| sub.degree(k)).fold(0.0, f64::max);
        let s = norm(&sqrt_d);
        let z0 = sqrt_d.iter().map(|v| v / s).collect();
        Self {
            sqrt_d,
            z0,
            target: tolerance / dmax.max(1.0) * 0.5,
        }
    }

    /// `out = D^-1/2 W D^-1/2 x`.
    fn apply(&self, sub: &Subgraph, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        for ((s, v), d) in scratch.iter_mut().zip(x).zip(&self.sqrt_d) {
            *s = v / d;
        }
        sub.weight_mul(scratch, out);
        out.iter_mut().zip(&self.sqrt_d).for_each(|(o, d)| *o /= d);
    }
}

fn lanczos(sub: &Subgraph, count: usize, tolerance: f64) -> Result<Vec<Eigenpair>, ClusteringError> {
    let n = sub.len();
    let norm_op = Normalized::new(sub, tolerance);
    let mut scratch = vec![0.0; n];
    let out = lanczos_top(
        n,
        count,
        &norm_op.z0,
        |x, y| norm_op.apply(sub, x, &mut scratch, y),
        |_, estimate| estimate <= norm_op.target,
        MAX_RESTARTS,
    );
    let pairs: Vec<Eigenpair> = out
        .pairs
        .iter()
        .map(|(theta, z)| finish(sub, *theta, z, out.applications))
        .collect();
    match pairs.iter().find(|p| !(p.residual <= tolerance)) {
        Some(bad) => Err(ClusteringError::NoConvergence {
            iterations: out.applications,
            residual: bad.residual,
        }),
        None => Ok(pairs),
    }
}

/// Lanczos on `(I - N + shift I)^-1 = D^1/2 ((1 + shift) D - W)^-1 D^1/2`,
/// which maps the small end of the spectrum to well separated large
/// eigenvalues. `None` if the factorization fails or a pair misses the
/// tolerance.
fn shift_invert(sub: &Subgraph, count: usize, tolerance: f64) -> Option<Vec<Eigenpair>> {
    use faer::linalg::solvers::Solve;
    use faer::sparse::{SparseColMat, Triplet};

    let n = sub.len();
    let norm_op = Normalized::new(sub, tolerance);
    let mut triplets = Vec::new();
    for k in 0..n {
        triplets.push(Triplet::new(k, k, (1.0 + SHIFT) * sub.degree(k)));
        for (j, w) in sub.neighbors(k) {
            if j > k {
                triplets.push(Triplet::new(j, k, -w));
            }
        }
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).ok()?;
    drop(triplets);
    let llt = a.sp_cholesky(faer::Side::Lower).ok()?;
    let sqrt_d = &norm_op.sqrt_d;
    let out = lanczos_top(
        n,
        count,
        &norm_op.z0,
        |x, y| {
            for ((o, v), d) in y.iter_mut().zip(x).zip(sqrt_d) {
                *o = v * d;
            }
            llt.solve_in_place(faer::MatMut::from_column_major_slice_mut(y, n, 1));
            y.iter_mut().zip(sqrt_d).for_each(|(o, d)| *o *= d);
        },
        // B z = beta z + r gives |(I - N) z - mu z| <= |r| |I - N + shift| / beta
        |beta, estimate| beta > 0.0 && estimate * (2.0 + SHIFT) / beta <= norm_op.target,
        SHIFT_INVERT_RESTARTS,
    );
    if !out.converged {
        return None;
    }
    let mut nz = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut pairs = Vec::with_capacity(out.pairs.len());
    for (_, mut z) in out.pairs {
        let s = norm(&z);
        z.iter_mut().for_each(|v| *v /= s);
        norm_op.apply(sub, &z, &mut scratch, &mut nz);
        let pair = finish(sub, dot(&z, &nz), &z, out.applications);
        if !(pair.residual <= tolerance) {
            return None;
        }
        pairs.push(pair);
    }
    Some(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::SpaceTimeGraph;

    fn path_graph(n: u32) -> SpaceTimeGraph {
        let edges: Vec<(u32, u32, f64)> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        SpaceTimeGraph::from_edges(vec![0; n as usize], &edges)
    }

    fn all_nodes(g: &SpaceTimeGraph) -> Vec<u32> {
        (0..g.node_count() as u32).collect()
    }

    #[test]
    fn path_graph_matches_closed_form() {
        // normalized Laplacian of a path: lambda_2 = 1 - cos(pi / (n - 1))
        for n in [5u32, 50, 900] {
            let g = path_graph(n);
            let sub = Subgraph::induced(&g, &all_nodes(&g));
            let p = fiedler_vector(&sub, 1e-8).unwrap();
            let want = 1.0 - (std::f64::consts::PI / (n - 1) as f64).cos();
            assert!((p.lambda - want).abs() < 1e-9, "n={n}: {} vs {want}", p.lambda);
            assert!(p.residual <= 1e-8);
            assert!(p.y[0] > 0.0);
            // monotone along the path
            assert!(p.y.windows(2).all(|w| w[0] > w[1]) || p.y.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn dense_and_lanczos_agree() {
        // two noisy blocks of 300 nodes joined weakly
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 600u32;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 2..n {
                let same = (i < 300) == (j < 300);
                let p = if same { 0.05 } else { 0.002 };
                if rng.random::<f64>() < p {
                    edges.push((i, j, rng.random_range(0.2..1.0)));
                }
            }
        }
        for i in 0..n - 1 {
            edges.push((i, i + 1, 0.5));
        }
        let g = SpaceTimeGraph::from_edges(vec![0; n as usize], &edges);
        let sub = Subgraph::induced(&g, &all_nodes(&g));
        let d = dense(&sub, 1).remove(0);
        assert!(d.residual <= 1e-9);
        for l in [lanczos(&sub, 1, 1e-9).unwrap().remove(0), shift_invert(&sub, 1, 1e-9).unwrap().remove(0)] {
            assert!((l.lambda - d.lambda).abs() < 1e-9);
            let cos = dot(&l.y, &d.y) / (norm(&l.y) * norm(&d.y));
            assert!(cos > 1.0 - 1e-8, "cos {cos}");
            assert!(l.residual <= 1e-9);
        }
    }

    #[test]
    fn both_iterations_converge_on_a_long_path() {
        // tiny relative eigengap forces thick restarts in the plain iteration
        let n = 1500u32;
        let g = path_graph(n);
        let sub = Subgraph::induced(&g, &all_nodes(&g));
        let want = 1.0 - (std::f64::consts::PI / (n - 1) as f64).cos();
        let plain = lanczos(&sub, 1, 1e-8).unwrap().remove(0);
        let inverted = shift_invert(&sub, 1, 1e-8).unwrap().remove(0);
        assert!(plain.iterations > BASIS);
        assert!(inverted.iterations < plain.iterations);
        for p in [plain, inverted] {
            assert!((p.lambda - want).abs() < 1e-10, "{} vs {want}", p.lambda);
            assert!(p.residual <= 1e-8);
        }
    }

    #[test]
    fn several_pairs_match_the_path_spectrum() {
        // path eigenvalues: 1 - cos(k pi / (n - 1))
        for n in [60u32, 1200] {
            let g = path_graph(n);
            let sub = Subgraph::induced(&g, &all_nodes(&g));
            let pairs = smallest_pairs(&sub, 4, 1e-8).unwrap();
            assert_eq!(pairs.len(), 4);
            for (k, p) in pairs.iter().enumerate() {
                let want = 1.0 - ((k + 1) as f64 * std::f64::consts::PI / (n - 1) as f64).cos();
                assert!((p.lambda - want).abs() < 1e-9, "n={n} k={k}: {} vs {want}", p.lambda);
                assert!(p.residual <= 1e-8);
            }
            // D-orthogonal, since the path is not regular at its ends
            let d: Vec<f64> = (0..sub.len()).map(|k| sub.degree(k)).collect();
            let dy: Vec<f64> = pairs[0].y.iter().zip(&d).map(|(y, d)| y * d).collect();
            assert!(dot(&dy, &pairs[2].y).abs() < 1e-6 * norm(&pairs[0].y) * norm(&pairs[2].y) * 2.0);
        }
    }

    #[test]
    fn rejects_isolated_nodes() {
        let g = SpaceTimeGraph::from_edges(vec![0; 3], &[(0, 1, 1.0)]);
        let sub = Subgraph::induced(&g, &[0, 1, 2]);
        assert!(fiedler_vector(&sub, 1e-6).is_err());
    }
}
