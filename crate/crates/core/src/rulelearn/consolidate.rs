//! Cross-group consolidation of fine-grained clusters by greedy silhouette merging.

use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsolidateParams {
    /// Clusters below this support are absorbed by their nearest neighbor before merging.
    pub min_support: usize,
    /// Score assigned to a one-cluster partition, for which the silhouette is undefined.
    pub single_cluster_score: f64,
}

impl Default for ConsolidateParams {
    fn default() -> Self {
        Self { min_support: 3, single_cluster_score: 0.25 }
    }
}

/// Per-column median/IQR scaling of `rows` (zero IQR replaced by one).
pub fn robust_scale(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let d = rows[0].len();
    let mut out = rows.to_vec();
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let med = stats::median(&col).unwrap_or(0.0);
        let iqr = stats::iqr(&col).unwrap_or(0.0);
        let scale = if iqr > 1e-12 * med.abs().max(1.0) { iqr } else { 1.0 };
        for r in out.iter_mut() {
            r[j] = (r[j] - med) / scale;
        }
    }
    out
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette of a labelling given per-point distance sums to every cluster.
fn silhouette(labels: &[usize], sums: &[Vec<f64>], sizes: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[i][own] / (sizes[own] - 1) as f64;
        let b = (0..sizes.len())
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[i][c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    total / n as f64
}

/// Merges clusters of `points` (already in the consolidation space).
///
/// `clusters` lists member indices into `points`; the result is a partition of the same
/// indices, members ascending, clusters ordered by their smallest member.
pub fn consolidate(points: &[Vec<f64>], clusters: Vec<Vec<usize>>, params: &ConsolidateParams) -> Vec<Vec<usize>> {
    let groups = vec![0; clusters.len()];
    consolidate_grouped(points, clusters, &groups, params)
}

/// As [`consolidate`], but clusters tagged with different `groups` entries are never merged,
/// so windows from different level groups stay apart.
pub fn consolidate_grouped(
    points: &[Vec<f64>],
    clusters: Vec<Vec<usize>>,
    groups: &[usize],
    params: &ConsolidateParams,
) -> Vec<Vec<usize>> {
    assert_eq!(clusters.len(), groups.len(), "one group tag per cluster");
    let (mut clusters, mut groups): (Vec<Vec<usize>>, Vec<usize>) =
        clusters.into_iter().zip(groups.iter().copied()).filter(|(c, _)| !c.is_empty()).unzip();
    if clusters.len() <= 1 {
        return finish(clusters);
    }

    absorb_small(points, &mut clusters, &mut groups, params.min_support);

    // Local index space over the covered points.
    let mut members: Vec<usize> = clusters.iter().flatten().copied().collect();
    members.sort_unstable();
    let pos = |g: usize| members.binary_search(&g).expect("member");
    let n = members.len();
    let mut labels = vec![0usize; n];
    for (c, cl) in clusters.iter().enumerate() {
        for &g in cl {
            labels[pos(g)] = c;
        }
    }
    let mut sizes: Vec<usize> = clusters.iter().map(|c| c.len()).collect();
    let mut sums = vec![vec![0.0; clusters.len()]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sums[i][labels[j]] += euclid(&points[members[i]], &points[members[j]]);
            }
        }
    }

    let mut alive = clusters.len();
    loop {
        if alive <= 1 {
            break;
        }
        let current = silhouette(&labels, &sums, &sizes);
        let live: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] > 0).collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &p) in live.iter().enumerate() {
            for &q in live[x + 1..].iter().filter(|&&q| groups[q] == groups[p]) {
                let score = if alive == 2 {
                    params.single_cluster_score
                } else {
                    merged_silhouette(&labels, &sums, &sizes, p, q)
                };
                if best.is_none_or(|(s, _, _)| score > s + 1e-12) {
                    best = Some((score, p, q));
                }
            }
        }
        let Some((score, p, q)) = best else { break };
        if score <= current + 1e-12 {
            break;
        }
        for l in labels.iter_mut() {
            if *l == q {
                *l = p;
            }
        }
        for row in sums.iter_mut() {
            row[p] += row[q];
            row[q] = 0.0;
        }
        sizes[p] += sizes[q];
        sizes[q] = 0;
        alive -= 1;
    }

    let mut out: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(members[i]);
    }
    finish(out)
}

/// Silhouette after tentatively merging `q` into `p`, evaluated in O(n k).
fn merged_silhouette(labels: &[usize], sums: &[Vec<f64>], sizes: &[usize], p: usize, q: usize) -> f64 {
    let merged = sizes[p] + sizes[q];
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = if labels[i] == q { p } else { labels[i] };
        let own_size = if own == p { merged } else { sizes[own] };
        if own_size <= 1 {
            continue;
        }
        let own_sum = if own == p { sums[i][p] + sums[i][q] } else { sums[i][own] };
        let a = own_sum / (own_size - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..sizes.len() {
            if c == q || c == own || sizes[c] == 0 {
                continue;
            }
            let mean = if c == p { (sums[i][p] + sums[i][q]) / merged as f64 } else { sums[i][c] / sizes[c] as f64 };
            b = b.min(mean);
        }
        if b.is_finite() {
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    total / n as f64
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let d = points[members[0]].len();
    let mut c = vec![0.0; d];
    for &m in members {
        for (acc, v) in c.iter_mut().zip(&points[m]) {
            *acc += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= members.len() as f64);
    c
}

fn absorb_small(points: &[Vec<f64>], clusters: &mut Vec<Vec<usize>>, groups: &mut Vec<usize>, min_support: usize) {
    // Small clusters alone in their group have nowhere to go and are kept.
    let mut stranded: Vec<usize> = Vec::new();
    loop {
        let Some(small) = (0..clusters.len())
            .filter(|&c| clusters[c].len() < min_support && !stranded.contains(&clusters[c][0]))
            .min_by_key(|&c| (clusters[c].len(), clusters[c][0]))
        else {
            return;
        };
        let cs = centroid(points, &clusters[small]);
        let target = (0..clusters.len())
            .filter(|&c| c != small && groups[c] == groups[small])
            .map(|c| (euclid(&cs, &centroid(points, &clusters[c])), c))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let Some((_, target)) = target else {
            stranded.push(clusters[small][0]);
            continue;
        };
        let moved = std::mem::take(&mut clusters[small]);
        clusters[target].extend(moved);
        clusters.remove(small);
        groups.remove(small);
    }
}

fn finish(clusters: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = clusters
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    out.sort_by_key(|c| c[0]);
    out
}
