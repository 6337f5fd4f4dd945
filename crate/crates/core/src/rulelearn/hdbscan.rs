//! Density clustering of 2-D embeddings.
//!
//! Standard HDBSCAN: core distances, a minimum spanning tree over mutual reachability,
//! the single-linkage hierarchy condensed at `min_cluster_size`, and excess-of-mass
//! selection with the root cluster eligible. Points left as noise are then attached to the
//! nearest selected cluster centroid.

use super::embed::Point2;

/// Label of a point not belonging to any selected cluster.
pub const NOISE: i64 = -1;

/// `max(5, ceil(0.01 n))`.
pub fn default_min_cluster_size(n: usize) -> usize {
    5usize.max(n.div_ceil(100))
}

fn dist(a: &Point2, b: &Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Raw HDBSCAN labels (`NOISE` for noise), clusters numbered in order of first member.
pub fn hdbscan_labels(points: &[Point2], min_cluster_size: usize, min_samples: usize) -> Vec<i64> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let m = min_cluster_size.max(2);
    if n < m {
        return vec![NOISE; n];
    }

    // Core distance: distance to the min_samples-th neighbor, the point itself counted first.
    let k = min_samples.clamp(1, n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| dist(&points[i], &points[j])).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            d[k - 1]
        })
        .collect();
    let mreach = |i: usize, j: usize| dist(&points[i], &points[j]).max(core[i]).max(core[j]);

    // Prim's algorithm on the dense mutual-reachability graph.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = mreach(current, j);
            if d < best[j] {
                best[j] = d;
                parent[j] = current;
            }
            if best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((parent[next], next, next_d));
        current = next;
    }
    edges.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap_or(std::cmp::Ordering::Equal).then((a.0, a.1).cmp(&(b.0, b.1))));

    // Single-linkage hierarchy: node ids 0..n are leaves, n.. are merges.
    let mut uf_parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut children: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut size = vec![1usize; 2 * n - 1];
    for (idx, &(a, b, d)) in edges.iter().enumerate() {
        let ra = find(&mut uf_parent, a);
        let rb = find(&mut uf_parent, b);
        let node = n + idx;
        uf_parent[ra] = node;
        uf_parent[rb] = node;
        size[node] = size[ra] + size[rb];
        children.push((ra, rb, d));
    }
    let root = 2 * n - 2;

    let lambda = |d: f64| if d > 0.0 { 1.0 / d } else { 1e12 };

    // Condensed tree.
    #[derive(Clone)]
    struct Cluster {
        parent: Option<usize>,
        birth: f64,
        stability: f64,
        size: usize,
        children: Vec<usize>,
    }
    let mut clusters = vec![Cluster { parent: None, birth: 0.0, stability: 0.0, size: n, children: Vec::new() }];
    // For every point: (cluster it fell out of, lambda at which it left).
    let mut fell: Vec<(usize, f64)> = vec![(0, 0.0); n];

    fn leaves(node: usize, n: usize, children: &[(usize, usize, f64)], out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let (a, b, _) = children[x - n];
                stack.push(a);
                stack.push(b);
            }
        }
    }

    let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
    while let Some((node, cid)) = stack.pop() {
        if node < n {
            // A leaf reached while still inside a cluster: it persists to infinity density.
            fell[node] = (cid, clusters[cid].birth.max(lambda(0.0)));
            continue;
        }
        let (a, b, d) = children[node - n];
        let l = lambda(d);
        let big_a = size[a] >= m;
        let big_b = size[b] >= m;
        if big_a && big_b {
            for child in [a, b] {
                let new_id = clusters.len();
                clusters.push(Cluster { parent: Some(cid), birth: l, stability: 0.0, size: size[child], children: Vec::new() });
                clusters[cid].children.push(new_id);
                stack.push((child, new_id));
            }
        } else {
            for (child, big) in [(a, big_a), (b, big_b)] {
                if big {
                    stack.push((child, cid));
                } else {
                    let mut pts = Vec::new();
                    leaves(child, n, &children, &mut pts);
                    for p in pts {
                        fell[p] = (cid, l);
                    }
                }
            }
        }
    }

    for &(cid, l) in &fell {
        let birth = clusters[cid].birth;
        clusters[cid].stability += l - birth;
    }
    for cid in 1..clusters.len() {
        // Points of a child cluster leave its parent when the child is born.
        let p = clusters[cid].parent.expect("non-root");
        let delta = clusters[cid].birth - clusters[p].birth;
        clusters[p].stability += clusters[cid].size as f64 * delta;
    }

    // Excess of mass, children processed before parents (ids increase with depth).
    let mut selected = vec![false; clusters.len()];
    let mut subtree_stability: Vec<f64> = clusters.iter().map(|c| c.stability).collect();
    for cid in (0..clusters.len()).rev() {
        if clusters[cid].children.is_empty() {
            selected[cid] = true;
            continue;
        }
        let child_sum: f64 = clusters[cid].children.iter().map(|&c| subtree_stability[c]).sum();
        if clusters[cid].stability >= child_sum {
            selected[cid] = true;
            let mut st = clusters[cid].children.clone();
            while let Some(c) = st.pop() {
                selected[c] = false;
                st.extend(clusters[c].children.iter().copied());
            }
        } else {
            subtree_stability[cid] = child_sum;
        }
    }

    // Each point takes the selected ancestor of the cluster it fell out of.
    let mut raw = vec![NOISE; n];
    for (p, &(cid, _)) in fell.iter().enumerate() {
        let mut c = Some(cid);
        while let Some(x) = c {
            if selected[x] {
                raw[p] = x as i64;
                break;
            }
            c = clusters[x].parent;
        }
    }
    relabel(&raw)
}

fn relabel(raw: &[i64]) -> Vec<i64> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|&l| {
            if l == NOISE {
                NOISE
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

/// HDBSCAN with `min_cluster_size = max(5, ceil(1% n))`, noise reassigned to the nearest cluster
/// centroid; an all-noise result becomes a single cluster. Every point gets a label in `0..k`.
pub fn cluster_density(points: &[Point2]) -> Vec<usize> {
    let m = default_min_cluster_size(points.len());
    assign_noise(points, &hdbscan_labels(points, m, m))
}

pub fn assign_noise(points: &[Point2], labels: &[i64]) -> Vec<usize> {
    let k = labels.iter().copied().max().unwrap_or(NOISE);
    if k < 0 {
        return vec![0; points.len()];
    }
    let k = (k + 1) as usize;
    let mut sums = vec![[0.0f64; 3]; k];
    for (p, &l) in points.iter().zip(labels) {
        if l >= 0 {
            let s = &mut sums[l as usize];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += 1.0;
        }
    }
    let centroids: Vec<Point2> = sums.iter().map(|s| [s[0] / s[2], s[1] / s[2]]).collect();
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            if l >= 0 {
                l as usize
            } else {
                let mut best = 0;
                for c in 1..k {
                    if dist(p, &centroids[c]) < dist(p, &centroids[best]) {
                        best = c;
                    }
                }
                best
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    pub(crate) fn blobs_2d(n_each: usize, seed: u64) -> Vec<Point2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for c in [[0.0, 0.0], [25.0, 0.0]] {
            for _ in 0..n_each {
                out.push([c[0] + nrm.sample(&mut rng), c[1] + nrm.sample(&mut rng)]);
            }
        }
        out
    }

    fn n_clusters(labels: &[usize]) -> usize {
        labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    #[test]
    fn min_cluster_size_rule() {
        assert_eq!(default_min_cluster_size(3), 5);
        assert_eq!(default_min_cluster_size(500), 5);
        assert_eq!(default_min_cluster_size(501), 6);
        assert_eq!(default_min_cluster_size(1000), 10);
    }

    #[test]
    fn two_blobs_two_clusters() {
        let pts = blobs_2d(200, 11);
        let labels = cluster_density(&pts);
        assert_eq!(n_clusters(&labels), 2);
        assert!(labels[..200].iter().all(|&l| l == labels[0]));
        assert!(labels[200..].iter().all(|&l| l == labels[200]));
    }

    #[test]
    fn tiny_input_is_one_cluster() {
        let pts = vec![[0.0, 0.0], [1.0, 1.0], [5.0, 2.0]];
        assert_eq!(cluster_density(&pts), vec![0, 0, 0]);
    }

    #[test]
    fn uniform_square_is_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Uniform::new(0.0, 10.0).unwrap();
        let pts: Vec<Point2> = (0..300).map(|_| [u.sample(&mut rng), u.sample(&mut rng)]).collect();
        assert_eq!(n_clusters(&cluster_density(&pts)), 1);
    }

    #[test]
    fn noise_goes_to_nearest_centroid() {
        let pts = vec![[0.0, 0.0], [10.0, 0.0], [1.0, 0.0], [9.0, 0.0]];
        let labels = assign_noise(&pts, &[0, 1, NOISE, NOISE]);
        assert_eq!(labels, vec![0, 1, 0, 1]);
    }
}
