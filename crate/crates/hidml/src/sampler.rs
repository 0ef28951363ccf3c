//! Active-triplet mining: one epoch of constraints that the current metric
//! violates or nearly violates.
//!
//! For every anchor, its `p` nearest same-class targets are paired with each
//! impostor from the anchor's pool of nearest other-class points whenever
//! `d(anchor, impostor) < d(anchor, target) + margin` under the sampling
//! coordinates. Distances are squared, matching the quadratic form of the
//! metric. The epoch is truncated to `max_triplets` by seeded uniform
//! subsampling, and the returned list is sorted by `(anchor, target,
//! impostor)` so mining is deterministic regardless of traversal order.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::recover::LowRankFactor;

/// One triplet constraint: the anchor and target share a class, the impostor
/// does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub target: usize,
    pub impostor: usize,
}

impl Triplet {
    pub fn new(anchor: usize, target: usize, impostor: usize) -> Self {
        Self {
            anchor,
            target,
            impostor,
        }
    }
}

/// Mining knobs for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    /// Nearest same-class targets per anchor.
    pub targets_per_anchor: usize,
    /// Nearest other-class impostors considered per anchor.
    pub impostor_pool: usize,
    /// Epoch cap; `None` means `100 * n`.
    pub max_triplets: Option<usize>,
    /// Violation margin, fixed to match the loss.
    pub margin: f64,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            targets_per_anchor: 3,
            impostor_pool: 10,
            max_triplets: None,
            margin: 1.0,
            seed: 0,
        }
    }
}

impl SamplerParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.targets_per_anchor == 0 {
            return Err(Error::Config("targets_per_anchor must be >= 1".into()));
        }
        if self.impostor_pool == 0 {
            return Err(Error::Config("impostor_pool must be >= 1".into()));
        }
        if self.max_triplets == Some(0) {
            return Err(Error::Config("max_triplets must be >= 1".into()));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config("margin must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Coordinates the current metric induces for mining: `Z = L^T X`, or the raw
/// features when no factor exists yet (stage one, or a rank-zero factor).
pub fn stage_coordinates(factor: Option<&LowRankFactor>, x: &FeatureMatrix) -> Array2<f64> {
    match factor {
        Some(f) if f.rank() > 0 => x.rows().dot(f.l()),
        _ => x.rows().clone(),
    }
}

/// Mine one epoch of violated triplets under the supplied coordinates
/// (`n` rows, one per example). Classes with a single member contribute no
/// anchors; they can still serve as impostors.
pub fn mine_epoch(
    coords: &Array2<f64>,
    y: &LabelVector,
    params: &SamplerParams,
) -> Result<Vec<Triplet>> {
    params.validate()?;
    let n = coords.nrows();
    if n != y.n() {
        return Err(Error::DimensionMismatch {
            context: "mine_epoch: coordinates vs labels",
            expected: y.n(),
            got: n,
        });
    }
    let class_sizes: Vec<usize> = y.class_indices().iter().map(|m| m.len()).collect();
    let sq_norms: Vec<f64> = (0..n).map(|i| coords.row(i).dot(&coords.row(i))).collect();

    let mut triplets: Vec<Triplet> = Vec::new();
    let mut same: Vec<(f64, usize)> = Vec::new();
    let mut other: Vec<(f64, usize)> = Vec::new();

    // Distances are computed block-wise through one matrix product per block:
    // ||z_i - z_c||^2 = ||z_i||^2 + ||z_c||^2 - 2 z_i . z_c.
    const BLOCK: usize = 256;
    let mut start = 0;
    while start < n {
        let stop = (start + BLOCK).min(n);
        let block = coords.slice(ndarray::s![start..stop, ..]);
        let prods = coords.dot(&block.t()); // (n, block)

        for anchor in start..stop {
            let class = y.ids()[anchor] as usize;
            if class_sizes[class] < 2 {
                continue;
            }
            let col = anchor - start;
            same.clear();
            other.clear();
            for c in 0..n {
                if c == anchor {
                    continue;
                }
                let dist = (sq_norms[anchor] + sq_norms[c] - 2.0 * prods[[c, col]]).max(0.0);
                if y.ids()[c] as usize == class {
                    same.push((dist, c));
                } else {
                    other.push((dist, c));
                }
            }
            same.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            other.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let targets = &same[..same.len().min(params.targets_per_anchor)];
            let pool = &other[..other.len().min(params.impostor_pool)];
            for &(d_target, target) in targets {
                for &(d_impostor, impostor) in pool {
                    if d_impostor < d_target + params.margin {
                        triplets.push(Triplet::new(anchor, target, impostor));
                    }
                }
            }
        }
        start = stop;
    }

    triplets.sort_unstable();

    let cap = params.max_triplets.unwrap_or(100 * n);
    if triplets.len() > cap {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
        order.shuffle(&mut rng);
        let mut keep: Vec<usize> = order[..cap].to_vec();
        keep.sort_unstable();
        triplets = keep.into_iter().map(|i| triplets[i]).collect();
    }
    Ok(triplets)
}

/// Violation depth of each mined triplet: `margin + d(a,t) - d(a,i)`, which
/// is strictly positive for every emitted triplet. Feeds the mining report.
pub fn violation_depths(coords: &Array2<f64>, triplets: &[Triplet], margin: f64) -> Vec<f64> {
    triplets
        .iter()
        .map(|t| {
            let dj = &coords.row(t.anchor) - &coords.row(t.target);
            let dk = &coords.row(t.anchor) - &coords.row(t.impostor);
            margin + dj.dot(&dj) - dk.dot(&dk)
        })
        .collect()
}
