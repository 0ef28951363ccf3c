//! Smoothed k-NN classification: per-class reference centers obtained by
//! clustering, a temperature soft-min over center distances, argmin class
//! prediction, and mean-accuracy evaluation. Also hosts the
//! Euclidean-distance baseline, which is the same pipeline run on raw
//! coordinates.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

/// Per-class reference centers in embedding space, plus the soft-min
/// temperature. A class holds between 1 and `k` centers; classes with fewer
/// than `k` training points keep one center per point.
#[derive(Debug, Clone)]
pub struct ReferenceCenters {
    /// `centers[class]` is a `(k_class, r)` matrix.
    centers: Vec<Array2<f64>>,
    tau: f64,
}

impl ReferenceCenters {
    pub fn n_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn class_centers(&self, class: usize) -> ArrayView2<'_, f64> {
        self.centers[class].view()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].ncols()
    }
}

fn sq_dist(a: &ArrayView1<'_, f64>, b: &ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// K-means on one class with greedy farthest-point initialization: the first
/// center is a seeded uniform pick, each later one is the point farthest
/// from all chosen so far (ties to the lowest index). Iterates to movement
/// tolerance 1e-8 with a 100-iteration cap; clusters that empty out are
/// dropped.
fn kmeans_class(points: &Array2<f64>, k: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let (n, r) = points.dim();
    debug_assert!(n >= 1 && k >= 1);
    if n <= k {
        return points.clone();
    }

    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points.row(i), &points.row(first)))
        .collect();
    while chosen.len() < k {
        let mut best = (0.0f64, usize::MAX);
        for (i, &dist) in min_dist.iter().enumerate() {
            if dist > best.0 {
                best = (dist, i);
            }
        }
        if best.1 == usize::MAX {
            break; // every remaining point coincides with a chosen center
        }
        chosen.push(best.1);
        for (i, slot) in min_dist.iter_mut().enumerate() {
            let d = sq_dist(&points.row(i), &points.row(best.1));
            if d < *slot {
                *slot = d;
            }
        }
    }

    let mut centers = Array2::<f64>::zeros((chosen.len(), r));
    for (c, &i) in chosen.iter().enumerate() {
        centers.row_mut(c).assign(&points.row(i));
    }

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        // assignment step, ties to the lowest center index
        for (i, slot) in assign.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..centers.nrows() {
                let d = sq_dist(&points.row(i), &centers.row(c));
                if d < best.0 {
                    best = (d, c);
                }
            }
            *slot = best.1;
        }
        // update step
        let kk = centers.nrows();
        let mut sums = Array2::<f64>::zeros((kk, r));
        let mut counts = vec![0usize; kk];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &points.row(i);
        }
        let keep: Vec<usize> = (0..kk).filter(|&c| counts[c] > 0).collect();
        let shrunk = keep.len() != kk;
        let mut next = Array2::<f64>::zeros((keep.len(), r));
        for (slot, &c) in keep.iter().enumerate() {
            let mut row = next.row_mut(slot);
            row.assign(&sums.row(c));
            row /= counts[c] as f64;
        }
        let moved = if shrunk {
            f64::INFINITY
        } else {
            (0..keep.len())
                .map(|c| sq_dist(&next.row(c), &centers.row(c)))
                .fold(0.0f64, f64::max)
        };
        centers = next;
        if moved <= 1e-8 {
            break;
        }
    }
    centers
}

/// Cluster each class of the embedded training set into at most `k`
/// reference centers. Deterministic per seed.
pub fn fit_centers(
    z: &Array2<f64>,
    y: &LabelVector,
    k: usize,
    tau: f64,
    seed: u64,
) -> Result<ReferenceCenters> {
    if k == 0 {
        return Err(Error::Config("centers per class must be >= 1".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    if z.nrows() != y.n() {
        return Err(Error::DimensionMismatch {
            context: "fit_centers: coordinates vs labels",
            expected: y.n(),
            got: z.nrows(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(y.n_classes());
    for members in y.class_indices() {
        let mut pts = Array2::<f64>::zeros((members.len(), z.ncols()));
        for (row, &i) in members.iter().enumerate() {
            pts.row_mut(row).assign(&z.row(i));
        }
        centers.push(kmeans_class(&pts, k, &mut rng));
    }
    Ok(ReferenceCenters { centers, tau })
}

/// Soft minimum of the squared distances from `query` to one class's
/// centers: `-tau log sum_i exp(-d_i / tau)`, computed with a max-shift so it
/// is stable for any temperature. Converges to the hard minimum as
/// `tau -> 0`.
pub fn class_distance(
    query: &ArrayView1<'_, f64>,
    centers: &ArrayView2<'_, f64>,
    tau: f64,
) -> f64 {
    debug_assert!(centers.nrows() >= 1);
    let mut dists = Vec::with_capacity(centers.nrows());
    let mut dmin = f64::INFINITY;
    for c in 0..centers.nrows() {
        let d = sq_dist(query, &centers.row(c));
        dmin = dmin.min(d);
        dists.push(d);
    }
    let sum: f64 = dists.iter().map(|d| (-(d - dmin) / tau).exp()).sum();
    dmin - tau * sum.ln()
}

/// Class with the smallest soft-min distance; ties break toward the lowest
/// class id.
pub fn predict(query: &ArrayView1<'_, f64>, centers: &ReferenceCenters) -> u32 {
    let mut best = (f64::INFINITY, 0u32);
    for class in 0..centers.n_classes() {
        let d = class_distance(query, &centers.class_centers(class), centers.tau());
        if d < best.0 {
            best = (d, class as u32);
        }
    }
    best.1
}

/// Predict every row of `z`.
pub fn predict_batch(z: &Array2<f64>, centers: &ReferenceCenters) -> Vec<u32> {
    (0..z.nrows()).map(|i| predict(&z.row(i), centers)).collect()
}

/// Evaluation summary: the unweighted mean of per-class recalls.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_accuracy: f64,
    /// Recall per class id; `NaN` for classes absent from the truth, which
    /// are excluded from the mean.
    pub per_class_recall: Vec<f64>,
}

/// Mean accuracy: the unweighted average over classes of per-class recall.
/// Classes absent from the truth are excluded.
pub fn mean_accuracy(predictions: &[u32], truth: &LabelVector) -> Result<f64> {
    Ok(evaluation_report(predictions, truth)?.mean_accuracy)
}

/// Full per-class breakdown behind [`mean_accuracy`].
pub fn evaluation_report(predictions: &[u32], truth: &LabelVector) -> Result<EvalReport> {
    if predictions.len() != truth.n() {
        return Err(Error::DimensionMismatch {
            context: "evaluation: predictions vs truth",
            expected: truth.n(),
            got: predictions.len(),
        });
    }
    let c = truth.n_classes();
    let mut totals = vec![0usize; c];
    let mut hits = vec![0usize; c];
    for (&pred, &t) in predictions.iter().zip(truth.ids()) {
        totals[t as usize] += 1;
        if pred == t {
            hits[t as usize] += 1;
        }
    }
    let mut per_class_recall = Vec::with_capacity(c);
    let mut sum = 0.0;
    let mut present = 0usize;
    for class in 0..c {
        if totals[class] == 0 {
            per_class_recall.push(f64::NAN);
        } else {
            let recall = hits[class] as f64 / totals[class] as f64;
            per_class_recall.push(recall);
            sum += recall;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::Config("no class has truth examples".into()));
    }
    Ok(EvalReport {
        mean_accuracy: sum / present as f64,
        per_class_recall,
    })
}

/// Smoothed k-NN with the identity metric: fit centers on the raw training
/// coordinates and predict the raw test coordinates.
pub fn euclid_baseline(
    xtrain: &FeatureMatrix,
    ytrain: &LabelVector,
    xtest: &FeatureMatrix,
    k: usize,
    tau: f64,
    seed: u64,
) -> Result<Vec<u32>> {
    if xtrain.d() != xtest.d() {
        return Err(Error::DimensionMismatch {
            context: "euclid_baseline: train vs test dimension",
            expected: xtrain.d(),
            got: xtest.d(),
        });
    }
    let centers = fit_centers(xtrain.rows(), ytrain, k, tau, seed)?;
    Ok(predict_batch(xtest.rows(), &centers))
}

/// Top-`count` training neighbors of each query row by squared distance,
/// ties toward the lower training index. Returns `(train_index, distance)`
/// lists, one per query.
pub fn nearest_neighbors(
    ztrain: &Array2<f64>,
    zquery: &Array2<f64>,
    count: usize,
) -> Vec<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(zquery.nrows());
    for qi in 0..zquery.nrows() {
        let q = zquery.row(qi);
        let mut dists: Vec<(usize, f64)> = (0..ztrain.nrows())
            .map(|i| (i, sq_dist(&q, &ztrain.row(i))))
            .collect();
        dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        dists.truncate(count);
        out.push(dists);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_clusters, SynthConfig};
    use ndarray::Array1;
    use proptest::prelude::*;

    fn coords(points: &[&[f64]]) -> Array2<f64> {
        let r = points[0].len();
        let mut m = Array2::zeros((points.len(), r));
        for (i, p) in points.iter().enumerate() {
            for (j, v) in p.iter().enumerate() {
                m[[i, j]] = *v;
            }
        }
        m
    }

    #[test]
    fn one_center_is_the_class_mean() {
        let z = coords(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 3.0], &[10.0, 10.0]]);
        let y = LabelVector::new(vec![0, 0, 0, 1], vec![0, 1]).unwrap();
        let rc = fit_centers(&z, &y, 1, 1.0, 0).unwrap();
        let c0 = rc.class_centers(0);
        assert!((c0[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((c0[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_class_keeps_one_center_per_point() {
        let z = coords(&[&[0.0], &[5.0], &[1.0], &[2.0], &[3.0], &[4.0], &[5.5]]);
        let y = LabelVector::new(vec![0, 0, 1, 1, 1, 1, 1], vec![0, 1]).unwrap();
        let rc = fit_centers(&z, &y, 5, 1.0, 3).unwrap();
        assert_eq!(rc.class_centers(0).nrows(), 2);
        let mut got: Vec<f64> = rc.class_centers(0).column(0).to_vec();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 5.0]);
        assert_eq!(rc.class_centers(1).nrows(), 5);
    }

    /// Exhaustive 2-partition enumeration: the optimal k-means objective on a
    /// handful of points, used as the clustering oracle.
    fn best_two_means(points: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let n = points.nrows();
        assert!(n <= 12);
        let mut best = (f64::INFINITY, 0usize);
        for mask in 1..(1u32 << n) - 1 {
            let mut sse = 0.0;
            for side in 0..2 {
                let idx: Vec<usize> = (0..n)
                    .filter(|&i| ((mask >> i) & 1) as usize == side)
                    .collect();
                if idx.is_empty() {
                    sse = f64::INFINITY;
                    break;
                }
                let mut mean = Array1::<f64>::zeros(points.ncols());
                for &i in &idx {
                    mean += &points.row(i);
                }
                mean /= idx.len() as f64;
                for &i in &idx {
                    let d = &points.row(i) - &mean;
                    sse += d.dot(&d);
                }
            }
            if sse < best.0 {
                best = (sse, mask as usize);
            }
        }
        let mask = best.1;
        let mut means = Vec::new();
        for side in 0..2 {
            let idx: Vec<usize> = (0..n)
                .filter(|&i| ((mask >> i) & 1) == side)
                .collect();
            let mut mean = Array1::<f64>::zeros(points.ncols());
            for &i in &idx {
                mean += &points.row(i);
            }
            mean /= idx.len() as f64;
            means.push(mean);
        }
        (means[0].clone(), means[1].clone())
    }

    #[test]
    fn two_blobs_recover_blob_means() {
        // two tight sub-blobs inside one class
        let z = coords(&[
            &[0.0, 0.0],
            &[0.1, 0.0],
            &[0.0, 0.1],
            &[5.0, 5.0],
            &[5.1, 5.0],
            &[5.0, 5.1],
        ]);
        let y = LabelVector::new(vec![0; 6], vec![0]).unwrap();
        let rc = fit_centers(&z, &y, 2, 1.0, 11).unwrap();
        let got = rc.class_centers(0);
        assert_eq!(got.nrows(), 2);
        let (oa, ob) = best_two_means(&z);
        // match centers to oracle means in either order
        let d = |a: &ArrayView1<f64>, b: &Array1<f64>| {
            let diff = a - b;
            diff.dot(&diff).sqrt()
        };
        let direct = d(&got.row(0), &oa) + d(&got.row(1), &ob);
        let crossed = d(&got.row(0), &ob) + d(&got.row(1), &oa);
        assert!(direct.min(crossed) < 1e-6, "centers differ from oracle means");
    }

    #[test]
    fn class_distance_closed_forms() {
        // single center: exact squared distance for every temperature
        let centers = coords(&[&[1.0, 0.0]]);
        let q = Array1::from_vec(vec![0.0, 0.0]);
        for tau in [1e-6, 0.3, 1.0, 50.0] {
            let d = class_distance(&q.view(), &centers.view(), tau);
            assert!((d - 1.0).abs() < 1e-12, "tau={tau}: {d}");
        }
        // d = (1, 9) at tiny temperature: the hard minimum
        let centers = coords(&[&[1.0, 0.0], &[3.0, 0.0]]);
        let d = class_distance(&q.view(), &centers.view(), 1e-6);
        assert!((d - 1.0).abs() < 1e-5);
        // d = (1, 1) at tau = 1: 1 - log 2
        let centers = coords(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let d = class_distance(&q.view(), &centers.view(), 1.0);
        assert!((d - (1.0 - 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn predict_basics_and_tie_break() {
        let z = coords(&[&[0.0, 0.0], &[10.0, 0.0]]);
        let y = LabelVector::new(vec![0, 1], vec![0, 1]).unwrap();
        let rc = fit_centers(&z, &y, 1, 1.0, 0).unwrap();
        // query exactly at the class-0 center
        let q = Array1::from_vec(vec![0.0, 0.0]);
        assert_eq!(predict(&q.view(), &rc), 0);
        // exact tie by symmetry: midpoint
        let q = Array1::from_vec(vec![5.0, 0.0]);
        assert_eq!(predict(&q.view(), &rc), 0, "ties break to the lower id");
    }

    #[test]
    fn predict_agrees_with_hard_nearest_center_at_tiny_tau() {
        let (x, y) = synth_clusters(&SynthConfig {
            d: 4,
            n: 60,
            n_classes: 3,
            informative: 3,
            separation: 2.0,
            noise: 1.0,
            seed: 5,
        })
        .unwrap();
        let rc = fit_centers(x.rows(), &y, 3, 1e-8, 1).unwrap();
        for i in 0..x.n() {
            let q = x.example(i);
            let soft = predict(&q, &rc);
            // hard 1-NN over all centers
            let mut best = (f64::INFINITY, 0u32);
            for class in 0..rc.n_classes() {
                let cs = rc.class_centers(class);
                for c in 0..cs.nrows() {
                    let d = sq_dist(&q, &cs.row(c));
                    if d < best.0 {
                        best = (d, class as u32);
                    }
                }
            }
            assert_eq!(soft, best.1);
        }
    }

    #[test]
    fn mean_accuracy_is_classwise() {
        let truth = LabelVector::new(vec![0, 0, 0, 0, 1], vec![0, 1]).unwrap();
        // class 0 fully right, class 1 fully wrong, sizes 4 vs 1
        let preds = vec![0, 0, 0, 0, 0];
        let acc = mean_accuracy(&preds, &truth).unwrap();
        assert_eq!(acc, 0.5);
        let all_right = vec![0, 0, 0, 0, 1];
        assert_eq!(mean_accuracy(&all_right, &truth).unwrap(), 1.0);
    }

    #[test]
    fn mean_accuracy_matches_confusion_matrix_oracle() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..50 {
            let c = rng.random_range(2..6usize);
            let n = rng.random_range(c..40usize);
            let mut ids: Vec<u32> = (0..c as u32).collect();
            for _ in c..n {
                ids.push(rng.random_range(0..c) as u32);
            }
            let truth = LabelVector::new(ids.clone(), (0..c as i64).collect()).unwrap();
            let preds: Vec<u32> = (0..n).map(|_| rng.random_range(0..c) as u32).collect();
            let got = mean_accuracy(&preds, &truth).unwrap();

            // confusion-matrix oracle
            let mut confusion = vec![vec![0usize; c]; c];
            for (&p, &t) in preds.iter().zip(truth.ids()) {
                confusion[t as usize][p as usize] += 1;
            }
            let mut want = 0.0;
            for (class, row) in confusion.iter().enumerate() {
                let total: usize = row.iter().sum();
                want += row[class] as f64 / total as f64;
            }
            want /= c as f64;
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn euclid_baseline_on_separated_clusters() {
        let (x, y) = synth_clusters(&SynthConfig {
            d: 6,
            n: 80,
            n_classes: 4,
            informative: 4,
            separation: 30.0,
            noise: 0.5,
            seed: 8,
        })
        .unwrap();
        let ((xtr, ytr), (xte, yte)) = crate::data::split(&x, &y, 0.25, 1).unwrap();
        let preds = euclid_baseline(&xtr, &ytr, &xte, 3, 1.0, 4).unwrap();
        assert_eq!(mean_accuracy(&preds, &yte).unwrap(), 1.0);

        // identical to embedding through the identity factor
        let eye = crate::recover::LowRankFactor::from_l(Array2::eye(6));
        let ztr = crate::recover::embed(&eye, &xtr).unwrap();
        let zte = crate::recover::embed(&eye, &xte).unwrap();
        let rc = fit_centers(&ztr, &ytr, 3, 1.0, 4).unwrap();
        let via_embed = predict_batch(&zte, &rc);
        assert_eq!(preds, via_embed);
    }

    #[test]
    fn neighbors_are_sorted_and_tie_broken() {
        let ztrain = coords(&[&[0.0], &[1.0], &[1.0], &[3.0]]);
        let zq = coords(&[&[1.0]]);
        let nb = nearest_neighbors(&ztrain, &zq, 3);
        assert_eq!(nb[0].len(), 3);
        assert_eq!(nb[0][0].0, 1); // distance 0, lower index first
        assert_eq!(nb[0][1].0, 2); // distance 0
        assert_eq!(nb[0][2].0, 0); // distance 1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn softmin_bounds_hold(
            dists in proptest::collection::vec(0.0f64..100.0, 1..6),
            tau in 0.01f64..10.0,
        ) {
            // build centers at the right distances from the origin on axes
            let k = dists.len();
            let mut centers = Array2::<f64>::zeros((k, k));
            for (i, d) in dists.iter().enumerate() {
                centers[[i, i]] = d.sqrt();
            }
            let q = Array1::<f64>::zeros(k);
            let soft = class_distance(&q.view(), &centers.view(), tau);
            let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(soft <= dmin + 1e-12);
            prop_assert!(soft >= dmin - tau * (k as f64).ln() - 1e-12);
        }

        #[test]
        fn predict_invariant_to_constant_distance_shift(
            seed in 0u64..200,
            shift in 0.0f64..1000.0,
        ) {
            // shifting all squared distances by a constant must not change
            // the argmin class; realized by comparing class distances
            // directly.
            let (x, y) = synth_clusters(&SynthConfig {
                d: 3,
                n: 24,
                n_classes: 3,
                informative: 2,
                separation: 1.5,
                noise: 1.0,
                seed,
            }).unwrap();
            let rc = fit_centers(x.rows(), &y, 2, 0.7, seed).unwrap();
            let q = x.example(0);
            let dists: Vec<f64> = (0..rc.n_classes())
                .map(|c| class_distance(&q, &rc.class_centers(c), rc.tau()))
                .collect();
            let argmin = |v: &[f64]| {
                v.iter().enumerate().fold((f64::INFINITY, 0usize), |acc, (i, &d)| {
                    if d < acc.0 { (d, i) } else { acc }
                }).1
            };
            let shifted: Vec<f64> = dists.iter().map(|d| d + shift).collect();
            prop_assert_eq!(argmin(&dists), argmin(&shifted));
        }

        #[test]
        fn mean_accuracy_invariant_to_permutation(seed in 0u64..200) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let c = 3usize;
            let mut ids: Vec<u32> = (0..c as u32).collect();
            for _ in 0..20 {
                ids.push(rng.random_range(0..c) as u32);
            }
            let preds: Vec<u32> = (0..ids.len()).map(|_| rng.random_range(0..c) as u32).collect();
            let truth = LabelVector::new(ids.clone(), (0..c as i64).collect()).unwrap();
            let base = mean_accuracy(&preds, &truth).unwrap();

            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.shuffle(&mut rng);
            let p2: Vec<u32> = order.iter().map(|&i| preds[i]).collect();
            let t2 = LabelVector::new(
                order.iter().map(|&i| ids[i]).collect(),
                (0..c as i64).collect(),
            ).unwrap();
            let perm = mean_accuracy(&p2, &t2).unwrap();
            prop_assert!((base - perm).abs() < 1e-12);
        }
    }
}
