//! Two-dimensional embedding of core-feature matrices ahead of density clustering.
//!
//! The default [`UmapEmbedder`] builds a fuzzy k-nearest-neighbor graph and lays it out with
//! the usual attractive/repulsive stochastic gradient scheme. Small groups fall back to a
//! principal-component projection, and groups of one or two rows return their standardized
//! leading coordinates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Pluggable embedding stage; implementations must be deterministic for a given seed.
pub trait Embedder: Send + Sync {
    fn embed(&self, rows: &[Vec<f64>], seed: u64) -> Result<Vec<Point2>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct UmapEmbedder {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub negative_sample_rate: usize,
}

impl Default for UmapEmbedder {
    fn default() -> Self {
        Self { n_neighbors: 15, min_dist: 0.1, spread: 1.0, n_epochs: 200, negative_sample_rate: 5 }
    }
}

impl Embedder for UmapEmbedder {
    fn embed(&self, rows: &[Vec<f64>], seed: u64) -> Result<Vec<Point2>> {
        validate(rows)?;
        let z = standardize(rows);
        let n = z.len();
        if n <= 2 {
            return Ok(z.iter().map(|r| [r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0)]).collect());
        }
        if n < self.n_neighbors + 2 {
            return Ok(pca_2d(&z));
        }
        Ok(self.layout(&z, seed))
    }
}

/// Principal-component projection only; useful when a non-stochastic embedding is wanted.
#[derive(Clone, Copy, Debug, Default)]
pub struct PcaEmbedder;

impl Embedder for PcaEmbedder {
    fn embed(&self, rows: &[Vec<f64>], _seed: u64) -> Result<Vec<Point2>> {
        validate(rows)?;
        Ok(pca_2d(&standardize(rows)))
    }
}

fn validate(rows: &[Vec<f64>]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::usage("embedding of an empty matrix"));
    }
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(Error::usage(format!("row {i} has {} columns, expected {d}", r.len())));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite value at row {i}, column {j}")));
        }
    }
    Ok(())
}

/// Column z-scores (population convention); constant columns become zero.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut out = rows.to_vec();
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let degenerate = sd <= 1e-12 * mean.abs().max(1.0);
        for r in out.iter_mut() {
            r[j] = if degenerate { 0.0 } else { (r[j] - mean) / sd };
        }
    }
    out
}

/// Projection onto the two leading principal axes. Axis signs are fixed so the largest loading
/// is positive.
pub fn pca_2d(z: &[Vec<f64>]) -> Vec<Point2> {
    let n = z.len();
    let d = z[0].len();
    if d == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in z {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += r[a] * r[b];
            }
        }
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for &k in order.iter().take(2) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() + 1e-12 { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    z.iter()
        .map(|r| {
            let p = |ax: &Vec<f64>| r.iter().zip(ax).map(|(a, b)| a * b).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Least-squares fit of `1 / (1 + a x^(2b))` to the target membership curve.
pub fn fit_ab(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() }).collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter().zip(&ys).map(|(&x, &y)| {
            let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
            (f - y) * (f - y)
        }).sum()
    };
    let (mut a, mut b) = (1.0, 1.0);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // Normal equations of the Gauss-Newton step.
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let u = x.powf(2.0 * b);
            let den = 1.0 + a * u;
            let f = 1.0 / den;
            let ga = -u / (den * den);
            let gb = -a * u * 2.0 * x.ln() / (den * den);
            let r = f - y;
            jtj[0][0] += ga * ga;
            jtj[0][1] += ga * gb;
            jtj[1][1] += gb * gb;
            jtr[0] += ga * r;
            jtr[1] += gb * r;
        }
        jtj[1][0] = jtj[0][1];
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (na, nb) = (a + da, b + db);
        let next = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
        if next < cost {
            let done = (cost - next) < 1e-16;
            a = na;
            b = nb;
            cost = next;
            lambda *= 0.3;
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

struct Graph {
    head: Vec<usize>,
    tail: Vec<usize>,
    weight: Vec<f64>,
}

impl UmapEmbedder {
    fn fuzzy_graph(&self, z: &[Vec<f64>]) -> Graph {
        let n = z.len();
        let k = self.n_neighbors.min(n); // includes self
        let target = (k as f64).log2();
        let mut directed: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut all_mean = 0.0;
        let mut knn: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut d: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, sq_dist(&z[i], &z[j]).sqrt())).collect();
            d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
            d.truncate(k - 1);
            all_mean += d.iter().map(|x| x.1).sum::<f64>() / d.len().max(1) as f64;
            knn.push(d);
        }
        all_mean /= n as f64;

        for nbrs in &knn {
            let rho = nbrs.iter().map(|x| x.1).find(|&d| d > 0.0).unwrap_or(0.0);
            let (mut lo, mut hi, mut mid) = (0.0, f64::INFINITY, 1.0);
            for _ in 0..64 {
                let psum: f64 = nbrs.iter().map(|&(_, d)| {
                    let e = d - rho;
                    if e > 0.0 { (-e / mid).exp() } else { 1.0 }
                }).sum();
                if (psum - target).abs() < 1e-5 {
                    break;
                }
                if psum > target {
                    hi = mid;
                    mid = (lo + hi) / 2.0;
                } else {
                    lo = mid;
                    mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
                }
            }
            let local_mean = nbrs.iter().map(|x| x.1).sum::<f64>() / nbrs.len().max(1) as f64;
            let floor = 1e-3 * if rho > 0.0 { local_mean } else { all_mean };
            let sigma = mid.max(floor);
            directed.push(nbrs.iter().map(|&(j, d)| {
                let e = d - rho;
                let w = if e <= 0.0 || sigma == 0.0 { 1.0 } else { (-e / sigma).exp() };
                (j, w)
            }).collect());
        }

        // Fuzzy union: w_ij + w_ji - w_ij w_ji, emitted in both directions in (i, j) order.
        let mut directed_map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, row) in directed.iter().enumerate() {
            for &(j, w) in row {
                directed_map.insert((i, j), w);
            }
        }
        let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (&(i, j), &w) in &directed_map {
            let back = directed_map.get(&(j, i)).copied().unwrap_or(0.0);
            let p = w + back - w * back;
            sym.insert((i, j), p);
            sym.insert((j, i), p);
        }
        let mut g = Graph { head: Vec::new(), tail: Vec::new(), weight: Vec::new() };
        for ((i, j), w) in sym {
            if w > 0.0 {
                g.head.push(i);
                g.tail.push(j);
                g.weight.push(w);
            }
        }
        g
    }

    fn layout(&self, z: &[Vec<f64>], seed: u64) -> Vec<Point2> {
        let n = z.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = self.fuzzy_graph(z);
        let (a, b) = fit_ab(self.spread, self.min_dist);

        let mut emb = pca_2d(z);
        let max_abs = emb.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if max_abs > 0.0 { 10.0 / max_abs } else { 1.0 };
        let jitter = Normal::new(0.0, 1e-4).expect("valid normal");
        for p in emb.iter_mut() {
            p[0] = p[0] * scale + jitter.sample(&mut rng);
            p[1] = p[1] * scale + jitter.sample(&mut rng);
        }

        let n_epochs = self.n_epochs.max(1);
        let w_max = graph.weight.iter().copied().fold(0.0, f64::max);
        let edges: Vec<usize> = (0..graph.weight.len()).filter(|&e| graph.weight[e] >= w_max / n_epochs as f64).collect();
        let eps: Vec<f64> = edges.iter().map(|&e| w_max / graph.weight[e]).collect();
        let neg_rate = self.negative_sample_rate.max(1) as f64;
        let eps_neg: Vec<f64> = eps.iter().map(|e| e / neg_rate).collect();
        let mut next_sample = eps.clone();
        let mut next_neg = eps_neg.clone();
        let clip = |v: f64| v.clamp(-4.0, 4.0);

        for epoch in 0..n_epochs {
            let alpha = 1.0 - epoch as f64 / n_epochs as f64;
            let ef = epoch as f64;
            for (idx, &e) in edges.iter().enumerate() {
                if next_sample[idx] > ef {
                    continue;
                }
                let (j, k) = (graph.head[e], graph.tail[e]);
                let d2 = sq_dist(&emb[j], &emb[k]);
                let coeff = if d2 > 0.0 { -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0) } else { 0.0 };
                #[allow(clippy::needless_range_loop)]
                for c in 0..2 {
                    let g = clip(coeff * (emb[j][c] - emb[k][c]));
                    emb[j][c] += g * alpha;
                    emb[k][c] -= g * alpha;
                }
                next_sample[idx] += eps[idx];

                let n_neg = ((ef - next_neg[idx]) / eps_neg[idx]).floor().max(0.0) as usize;
                for _ in 0..n_neg {
                    let other = rng.random_range(0..n);
                    let d2 = sq_dist(&emb[j], &emb[other]);
                    let coeff = if d2 > 0.0 {
                        2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                    } else if j == other {
                        continue;
                    } else {
                        0.0
                    };
                    #[allow(clippy::needless_range_loop)]
                    for c in 0..2 {
                        let g = if coeff > 0.0 { clip(coeff * (emb[j][c] - emb[other][c])) } else { 4.0 };
                        emb[j][c] += g * alpha;
                    }
                }
                next_neg[idx] += n_neg as f64 * eps_neg[idx];
            }
        }
        emb
    }
}
