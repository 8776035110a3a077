//! k-means with k-means++ seeding, used to initialize mixtures.

use rand::Rng;

/// Result of a k-means run on row-major data.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
}

impl KMeans {
    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: each new center is drawn with probability proportional
/// to the squared distance to the closest existing center.
pub fn plus_plus<R: Rng + ?Sized>(rows: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = rows.len() / dim;
    assert!(k >= 1 && n >= k, "k-means++ needs at least k rows");
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centers[start..start + dim]));
        }
    }
    centers
}

/// Lloyd iterations from k-means++ centers. Empty clusters are re-seeded at
/// the point farthest from its center.
pub fn kmeans<R: Rng + ?Sized>(rows: &[f64], dim: usize, k: usize, max_iter: usize, rng: &mut R) -> KMeans {
    let n = rows.len() / dim;
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let mut centers = plus_plus(rows, dim, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let x = row(i);
            let best = (0..k)
                .map(|j| (j, sq_dist(x, &centers[j * dim..(j + 1) * dim])))
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc })
                .0;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &label) in labels.iter().enumerate() {
            counts[label] += 1;
            for (s, v) in sums[label * dim..(label + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .map(|i| (i, sq_dist(row(i), &centers[labels[i] * dim..(labels[i] + 1) * dim])))
                    .fold((0, -1.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc })
                    .0;
                centers[j * dim..(j + 1) * dim].copy_from_slice(row(far));
                labels[far] = j;
                changed = true;
            } else {
                for c in 0..dim {
                    centers[j * dim + c] = sums[j * dim + c] / counts[j] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    KMeans {
        dim,
        centers,
        labels,
    }
}
