use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Maximum number of Lloyd sweeps.
pub const MAX_SWEEPS: usize = 50;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Within-cluster sum of squares.
pub fn kmeans_objective(features: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let centroids = centroids_of(features, labels, k, None);
    features.iter().zip(labels).map(|(f, &l)| sq(f, &centroids[l])).sum()
}

fn centroids_of(features: &[Vec<f64>], labels: &[usize], k: usize, previous: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let dim = features.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (f, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(f) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| {
            if n == 0 {
                previous.map_or(s, |p| p[c].clone())
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

/// Lloyd's algorithm with farthest-point seeding.
///
/// The first centroid is a seeded random point; each further centroid is the
/// point farthest from those already chosen. Ties go to the lowest index.
pub fn kmeans_blocks(features: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(invalid(format!("cannot form {k} blocks from {n} points")));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim || f.iter().any(|v| !v.is_finite())) {
        return Err(invalid("k-means features must be finite and of equal length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![features[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = features.iter().map(|f| sq(f, &centroids[0])).collect();
    while centroids.len() < k {
        let mut far = (0, f64::NEG_INFINITY);
        for (i, d) in dist.iter().enumerate() {
            if *d > far.1 {
                far = (i, *d);
            }
        }
        let c = features[far.0].clone();
        for (d, f) in dist.iter_mut().zip(features) {
            *d = d.min(sq(f, &c));
        }
        centroids.push(c);
    }
    let mut labels: Vec<usize> = features.iter().map(|f| nearest(f, &centroids)).collect();
    for _ in 0..MAX_SWEEPS {
        centroids = centroids_of(features, &labels, k, Some(&centroids));
        let next: Vec<usize> = features.iter().map(|f| nearest(f, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}
