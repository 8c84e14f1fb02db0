//! Acoustic unit discovery: k-means codebook fitting and nearest-centroid
//! assignment of frame-level targets.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Representation the codebook was fit on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Frontend,
    /// Output of encoder block `ℓ` (1-based) of the teacher model.
    Layer(usize),
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSource::Frontend => f.write_str("frontend"),
            FeatureSource::Layer(l) => write!(f, "layer:{l}"),
        }
    }
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "frontend" {
            return Ok(FeatureSource::Frontend);
        }
        s.strip_prefix("layer:")
            .and_then(|l| l.parse().ok())
            .filter(|&l| l >= 1)
            .map(FeatureSource::Layer)
            .ok_or_else(|| Error::Config(format!("bad feature source `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterCodebook {
    /// `C × d_feat`.
    pub centroids: Mat,
    pub feature_source: FeatureSource,
    pub fit_seed: u64,
}

impl ClusterCodebook {
    pub fn clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub codebook: ClusterCodebook,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(centroids: &Mat, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(centroids.row(c), x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. `features` is `n × d`.
pub fn fit_kmeans(features: &Mat, clusters: usize, max_iters: usize, seed: u64) -> Result<KMeansFit> {
    let n = features.rows();
    if clusters == 0 || n < clusters {
        return Err(Error::TooFewPoints { points: n, clusters: clusters.max(1) });
    }
    let d = features.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Mat::zeros(clusters, d);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(features.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), features.row(first))).collect();
    for c in 1..clusters {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut dart = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in dist.iter().enumerate() {
                if *w > 0.0 && dart < *w {
                    chosen = i;
                    break;
                }
                dart -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(features.row(pick));
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min(sq_dist(features.row(i), features.row(pick)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        let mut own = vec![0.0; n];
        for i in 0..n {
            let (c, dd) = nearest(&centroids, features.row(i));
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            own[i] = dd;
            inertia += dd;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(clusters, d);
        let mut counts = vec![0usize; clusters];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..clusters {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                // Re-seed with the point farthest from its own centroid.
                let mut far = None;
                for i in 0..n {
                    if !taken[i] && far.is_none_or(|(_, best)| own[i] > best) {
                        far = Some((i, own[i]));
                    }
                }
                let (i, _) = far.expect("n >= clusters");
                taken[i] = true;
                own[i] = 0.0;
                centroids.row_mut(c).copy_from_slice(features.row(i));
            }
        }
    }
    Ok(KMeansFit {
        codebook: ClusterCodebook { centroids, feature_source: FeatureSource::Frontend, fit_seed: seed },
        inertia_history: history,
        iterations,
    })
}

pub fn inertia(centroids: &Mat, features: &Mat) -> f64 {
    (0..features.rows()).map(|i| nearest(centroids, features.row(i)).1).sum()
}

/// `z_t = argmin_c ‖x_t − μ_c‖²`, lowest index on ties.
pub fn assign(cb: &ClusterCodebook, x: &Mat) -> Result<Vec<usize>> {
    if x.cols() != cb.dim() {
        return Err(Error::Shape(format!("features have width {}, codebook expects {}", x.cols(), cb.dim())));
    }
    Ok((0..x.rows()).map(|t| nearest(&cb.centroids, x.row(t)).0).collect())
}
