//! Recovery of the full-space metric from dual weights, without ever
//! materializing it.
//!
//! Every active triplet contributes six entries to a sparse symmetric
//! combination matrix `C` (scaled by `beta / lambda`), cumulated over all
//! stages, so that the learned metric is exactly `M = X C X^T`. A randomized
//! range finder then extracts a rank-`r` factor: sketch `Y = X (C (X^T R))`
//! with a Gaussian `R`, orthonormalize to `Q`, eigendecompose the small
//! projected matrix `B = (Q^T X) C (X^T Q)`, and keep only the positive
//! eigenpairs. Discarding the non-positive spectrum is what projects the
//! metric onto the PSD cone; the result `L = Q U_r diag(sqrt(sigma))`
//! satisfies `M ≈ L L^T ⪰ 0` by construction. The whole procedure costs
//! `O(q n d)` plus the sparse products.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, orthonormalize_columns, sym_eig, EIG_MAX_ITER, EIG_TOL};
use crate::sampler::Triplet;

/// Relative floor below which eigenvalues count as numerically zero.
const EIGENVALUE_FLOOR: f64 = 1e-10;

/// Sparse symmetric accumulator for the dual combination matrix `C`.
///
/// Entries are stored in a sorted map so iteration order, and therefore
/// every product computed from it, is deterministic. Entries are never
/// removed once created. Single-writer: accumulation is not concurrent.
#[derive(Debug, Clone)]
pub struct DualAccumulator {
    n: usize,
    lambda: f64,
    entries: BTreeMap<(usize, usize), f64>,
}

impl DualAccumulator {
    pub fn new(n: usize, lambda: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("accumulator needs at least one example".into()));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(Self {
            n,
            lambda,
            entries: BTreeMap::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Count of structurally stored entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored value at `(row, col)`, zero if absent.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries.get(&(row, col)).copied().unwrap_or(0.0)
    }

    fn add(&mut self, row: usize, col: usize, delta: f64) {
        *self.entries.entry((row, col)).or_insert(0.0) += delta;
    }

    /// Fold one active triplet with dual weight `beta > 0` into `C`:
    /// `+beta/lambda` at `(anchor, target)`, `(target, anchor)`, and
    /// `(impostor, impostor)`; `-beta/lambda` at `(target, target)`,
    /// `(anchor, impostor)`, and `(impostor, anchor)`. Additive across
    /// stages.
    pub fn accumulate(&mut self, t: Triplet, beta: f64) -> Result<()> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {beta}")));
        }
        for idx in [t.anchor, t.target, t.impostor] {
            if idx >= self.n {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    n: self.n,
                });
            }
        }
        let w = beta / self.lambda;
        self.add(t.anchor, t.target, w);
        self.add(t.target, t.anchor, w);
        self.add(t.impostor, t.impostor, w);
        self.add(t.target, t.target, -w);
        self.add(t.anchor, t.impostor, -w);
        self.add(t.impostor, t.anchor, -w);
        Ok(())
    }

    /// `C * V` for dense `V` with one row per example.
    pub fn mul_dense(&self, v: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(v.nrows(), self.n);
        let q = v.ncols();
        let mut out = Array2::<f64>::zeros((self.n, q));
        let vs = v.as_slice().expect("contiguous");
        let os = out.as_slice_mut().expect("contiguous");
        for (&(row, col), &c) in &self.entries {
            let src = &vs[col * q..(col + 1) * q];
            let dst = &mut os[row * q..(row + 1) * q];
            for k in 0..q {
                dst[k] += c * src[k];
            }
        }
        out
    }

    /// Dense materialization of `C`; test and diagnostic use only.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.n, self.n));
        for (&(row, col), &c) in &self.entries {
            out[[row, col]] = c;
        }
        out
    }
}

/// Rank-`r` factor `L` (`d x r`) with its positive eigenvalues in
/// non-increasing order; represents the PSD metric `M = L L^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    d: usize,
    l: Array2<f64>,
    eigvals: Vec<f64>,
}

impl LowRankFactor {
    /// The rank-zero factor: a valid, degenerate metric.
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            l: Array2::zeros((d, 0)),
            eigvals: Vec::new(),
        }
    }

    /// Build from an explicit factor; eigenvalues are taken as the squared
    /// column norms. Intended for tests and identity embeddings.
    pub fn from_l(l: Array2<f64>) -> Self {
        let eigvals = (0..l.ncols())
            .map(|j| l.column(j).dot(&l.column(j)))
            .collect();
        Self {
            d: l.nrows(),
            l,
            eigvals,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn l(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }
}

/// Randomized low-rank PSD factorization of `M = X C X^T` (never formed).
///
/// Requires `r <= q <= min(d, 3 n)`; `q` should exceed `r` by a small
/// oversampling buffer (around 10) for the range-finder quality guarantee.
/// An empty `C` yields the rank-zero factor.
pub fn low_rank_psd_factor(
    x: &FeatureMatrix,
    c: &DualAccumulator,
    q: usize,
    r: usize,
    seed: u64,
) -> Result<LowRankFactor> {
    let (d, n) = (x.d(), x.n());
    if c.n() != n {
        return Err(Error::DimensionMismatch {
            context: "low_rank_psd_factor: accumulator vs data examples",
            expected: n,
            got: c.n(),
        });
    }
    if q < r {
        return Err(Error::Config(format!(
            "oversampled rank q={q} must be at least the target rank r={r}"
        )));
    }
    if q == 0 || q > d.min(3 * n) {
        return Err(Error::Config(format!(
            "q={q} must lie in [1, min(d={d}, 3n={})]",
            3 * n
        )));
    }
    if c.is_empty() || r == 0 {
        return Ok(LowRankFactor::empty(d));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let big_r = gaussian_matrix(d, q, 1.0, &mut rng);

    // Y = X (C (X^T R)), built right-to-left so nothing d x d ever exists.
    let xt_r = x.rows().dot(&big_r); // (n, q)
    let c_xt_r = c.mul_dense(&xt_r); // (n, q)
    let y = x.rows().t().dot(&c_xt_r); // (d, q)

    let qmat = orthonormalize_columns(&y);

    // B = (Q^T X) C (X^T Q), symmetrized before eigendecomposition.
    let xt_q = x.rows().dot(&qmat); // (n, q)
    let c_xt_q = c.mul_dense(&xt_q); // (n, q)
    let b = xt_q.t().dot(&c_xt_q); // (q, q)
    let b = (&b + &b.t()) * 0.5;

    let (vals, vecs) = sym_eig(&b, EIG_TOL, EIG_MAX_ITER)?;

    let max_abs = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let floor = EIGENVALUE_FLOOR * max_abs;
    // vals are ascending; walk from the top and keep positive ones.
    let mut selected: Vec<usize> = Vec::new();
    for i in (0..vals.len()).rev() {
        if selected.len() == r {
            break;
        }
        if vals[i] > floor {
            selected.push(i);
        } else {
            break;
        }
    }
    if selected.is_empty() {
        return Ok(LowRankFactor::empty(d));
    }

    let mut l = Array2::<f64>::zeros((d, selected.len()));
    let mut eigvals = Vec::with_capacity(selected.len());
    for (col, &i) in selected.iter().enumerate() {
        let dir = qmat.dot(&vecs.column(i));
        let scale = vals[i].sqrt();
        l.column_mut(col).assign(&(&dir * scale));
        eigvals.push(vals[i]);
    }
    Ok(LowRankFactor { d, l, eigvals })
}

/// Embed examples through the factor: row `i` of the result is `L^T x_i`, so
/// squared Euclidean distance in the embedding equals the metric distance
/// `(x_a - x_b)^T L L^T (x_a - x_b)` in the original space.
pub fn embed(factor: &LowRankFactor, x: &FeatureMatrix) -> Result<Array2<f64>> {
    if factor.d() != x.d() {
        return Err(Error::DimensionMismatch {
            context: "embed: factor vs data dimension",
            expected: factor.d(),
            got: x.d(),
        });
    }
    Ok(x.rows().dot(factor.l()))
}

/// Hyperparameters persisted next to the factor so a model file is
/// self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub m: u64,
    pub q: u64,
    pub lambda: f64,
    pub gamma: f64,
    /// Original on-disk label per class id.
    pub label_originals: Vec<i64>,
}

const MODEL_MAGIC: &[u8; 8] = b"HIDMLBIN";
const MODEL_VERSION: u32 = 1;

/// Serialize a trained model. Fixed little-endian layout: magic, version,
/// `d`, `r`, `m`, `q`, `lambda`, `gamma`, then `L` row-major as f64, the
/// eigenvalues, and the label map. Round-trips bit-exactly.
pub fn save_model<P: AsRef<Path>>(
    path: P,
    factor: &LowRankFactor,
    meta: &ModelMeta,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(factor.d() as u64).to_le_bytes())?;
    w.write_all(&(factor.rank() as u64).to_le_bytes())?;
    w.write_all(&meta.m.to_le_bytes())?;
    w.write_all(&meta.q.to_le_bytes())?;
    w.write_all(&meta.lambda.to_le_bytes())?;
    w.write_all(&meta.gamma.to_le_bytes())?;
    for row in factor.l().rows() {
        for v in row.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for v in &factor.eigvals {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(meta.label_originals.len() as u64).to_le_bytes())?;
    for l in &meta.label_originals {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Model("file truncated".into()))?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<_, 8>(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<_, 8>(r)?))
}

/// Deserialize a model written by [`save_model`].
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<(LowRankFactor, ModelMeta)> {
    let mut rd = BufReader::new(File::open(path.as_ref())?);
    let magic = read_exact::<_, 8>(&mut rd)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Model("bad magic; not a model file".into()));
    }
    let version = u32::from_le_bytes(read_exact::<_, 4>(&mut rd)?);
    if version != MODEL_VERSION {
        return Err(Error::Model(format!("unsupported version {version}")));
    }
    let d = read_u64(&mut rd)? as usize;
    let r = read_u64(&mut rd)? as usize;
    let m = read_u64(&mut rd)?;
    let q = read_u64(&mut rd)?;
    let lambda = read_f64(&mut rd)?;
    let gamma = read_f64(&mut rd)?;
    if d == 0 || d.checked_mul(r).is_none() || d * r > 1 << 33 {
        return Err(Error::Model(format!("implausible dimensions d={d}, r={r}")));
    }
    let mut l = Array2::<f64>::zeros((d, r));
    for row in 0..d {
        for col in 0..r {
            l[[row, col]] = read_f64(&mut rd)?;
        }
    }
    let mut eigvals = Vec::with_capacity(r);
    for _ in 0..r {
        eigvals.push(read_f64(&mut rd)?);
    }
    let n_classes = read_u64(&mut rd)? as usize;
    if n_classes > 1 << 24 {
        return Err(Error::Model(format!("implausible class count {n_classes}")));
    }
    let mut label_originals = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        label_originals.push(i64::from_le_bytes(read_exact::<_, 8>(&mut rd)?));
    }
    let mut rest = Vec::new();
    rd.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Model(format!("{} trailing bytes", rest.len())));
    }
    Ok((
        LowRankFactor { d, l, eigvals },
        ModelMeta {
            m,
            q,
            lambda,
            gamma,
            label_originals,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_clusters, SynthConfig};
    use rand::Rng;

    fn dense_metric_from_triplets(
        x: &FeatureMatrix,
        triplets: &[(Triplet, f64)],
        lambda: f64,
    ) -> Array2<f64> {
        // (1/lambda) sum_t beta_t A_t, built from dense outer products.
        let d = x.d();
        let mut m = Array2::<f64>::zeros((d, d));
        for &(t, beta) in triplets {
            let dik = (&x.example(t.anchor) - &x.example(t.impostor)).to_owned();
            let dij = (&x.example(t.anchor) - &x.example(t.target)).to_owned();
            let w = beta / lambda;
            for a in 0..d {
                for b in 0..d {
                    m[[a, b]] += w * (dik[a] * dik[b] - dij[a] * dij[b]);
                }
            }
        }
        m
    }

    fn frob(a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn entry_pattern_for_one_triplet() {
        let mut c = DualAccumulator::new(4, 1.0).unwrap();
        c.accumulate(Triplet::new(0, 1, 2), 1.0).unwrap();
        assert_eq!(c.entry(0, 1), 1.0);
        assert_eq!(c.entry(1, 0), 1.0);
        assert_eq!(c.entry(1, 1), -1.0);
        assert_eq!(c.entry(0, 2), -1.0);
        assert_eq!(c.entry(2, 0), -1.0);
        assert_eq!(c.entry(2, 2), 1.0);
        assert_eq!(c.entry(0, 0), 0.0);
        assert_eq!(c.nnz(), 6);
    }

    #[test]
    fn accumulation_is_additive() {
        let mut c = DualAccumulator::new(4, 1.0).unwrap();
        let t = Triplet::new(0, 1, 2);
        c.accumulate(t, 1.0).unwrap();
        c.accumulate(t, 1.0).unwrap();
        assert_eq!(c.entry(0, 1), 2.0);
        assert_eq!(c.entry(1, 1), -2.0);
        assert_eq!(c.entry(2, 2), 2.0);
        assert_eq!(c.nnz(), 6);
    }

    #[test]
    fn accumulate_validates_inputs() {
        let mut c = DualAccumulator::new(3, 1.0).unwrap();
        assert!(c.accumulate(Triplet::new(0, 1, 3), 0.5).is_err());
        assert!(c.accumulate(Triplet::new(0, 1, 2), 0.0).is_err());
    }

    #[test]
    fn xcxt_equals_weighted_constraint_sum() {
        for seed in 0..5u64 {
            let (x, y) = synth_clusters(&SynthConfig {
                d: 10,
                n: 6,
                n_classes: 2,
                informative: 4,
                separation: 1.0,
                noise: 1.0,
                seed,
            })
            .unwrap();
            let idx = y.class_indices();
            let lambda = 0.7;
            let mut c = DualAccumulator::new(6, lambda).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut used = Vec::new();
            for _ in 0..20 {
                let a = idx[0][rng.random_range(0..idx[0].len())];
                let t = idx[0][rng.random_range(0..idx[0].len())];
                if a == t {
                    continue;
                }
                let k = idx[1][rng.random_range(0..idx[1].len())];
                let beta: f64 = rng.random::<f64>() * 0.99 + 0.01;
                let trip = Triplet::new(a, t, k);
                c.accumulate(trip, beta).unwrap();
                used.push((trip, beta));
            }
            // symmetry holds after every accumulation sequence
            let dense_c = c.to_dense();
            assert!(frob(&(&dense_c - &dense_c.t())) < 1e-14);

            let xc = x.rows().t().dot(&dense_c); // (d, n)
            let xcxt = xc.dot(x.rows()); // (d, d)
            let want = dense_metric_from_triplets(&x, &used, lambda);
            assert!(
                frob(&(&xcxt - &want)) <= 1e-9,
                "seed {seed}: recovery identity violated"
            );
        }
    }

    #[test]
    fn empty_accumulator_yields_rank_zero() {
        let (x, _) = synth_clusters(&SynthConfig {
            d: 8,
            n: 5,
            n_classes: 2,
            informative: 2,
            separation: 1.0,
            noise: 0.5,
            seed: 1,
        })
        .unwrap();
        let c = DualAccumulator::new(5, 1.0).unwrap();
        let f = low_rank_psd_factor(&x, &c, 4, 2, 0).unwrap();
        assert_eq!(f.rank(), 0);
        let z = embed(&f, &x).unwrap();
        assert_eq!(z.dim(), (5, 0));
    }

    #[test]
    fn factor_rejects_bad_q() {
        let (x, _) = synth_clusters(&SynthConfig {
            d: 8,
            n: 5,
            n_classes: 2,
            informative: 2,
            separation: 1.0,
            noise: 0.5,
            seed: 1,
        })
        .unwrap();
        let mut c = DualAccumulator::new(5, 1.0).unwrap();
        c.accumulate(Triplet::new(0, 1, 2), 1.0).unwrap();
        assert!(low_rank_psd_factor(&x, &c, 2, 3, 0).is_err()); // q < r
        assert!(low_rank_psd_factor(&x, &c, 9, 3, 0).is_err()); // q > d
    }

    #[test]
    fn randomized_residual_close_to_optimal_truncation() {
        let mut failures = 0;
        let trials = 25;
        for seed in 0..trials {
            let (x, y) = synth_clusters(&SynthConfig {
                d: 40,
                n: 30,
                n_classes: 3,
                informative: 10,
                separation: 2.0,
                noise: 1.0,
                seed,
            })
            .unwrap();
            let idx = y.class_indices();
            let lambda = 1.0;
            let mut c = DualAccumulator::new(30, lambda).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(500));
            let mut used = Vec::new();
            let mut count = 0;
            while count < 100 {
                let cls = rng.random_range(0..idx.len());
                let other = (cls + 1 + rng.random_range(0..idx.len() - 1)) % idx.len();
                let a = idx[cls][rng.random_range(0..idx[cls].len())];
                let t = idx[cls][rng.random_range(0..idx[cls].len())];
                if a == t || cls == other {
                    continue;
                }
                let k = idx[other][rng.random_range(0..idx[other].len())];
                let beta: f64 = rng.random::<f64>() * 0.99 + 0.01;
                let trip = Triplet::new(a, t, k);
                c.accumulate(trip, beta).unwrap();
                used.push((trip, beta));
                count += 1;
            }

            let r = 5;
            let q = r + 10;
            let factor = low_rank_psd_factor(&x, &c, q, r, seed.wrapping_add(900)).unwrap();
            assert!(factor.eigvals().iter().all(|v| *v > 0.0));
            for w in factor.eigvals().windows(2) {
                assert!(w[0] >= w[1]);
            }
            // column norms must match the eigenvalues
            for (j, &ev) in factor.eigvals().iter().enumerate() {
                let nrm2 = factor.l().column(j).dot(&factor.l().column(j));
                assert!((nrm2 - ev).abs() <= 1e-6 * ev.max(1e-300));
            }

            let m_dense = dense_metric_from_triplets(&x, &used, lambda);
            let ll = factor.l().dot(&factor.l().t());
            let got = frob(&(&m_dense - &ll));

            // optimal rank-r PSD truncation via dense eigendecomposition
            let (vals, vecs) = sym_eig(&m_dense, EIG_TOL, EIG_MAX_ITER).unwrap();
            let mut best = Array2::<f64>::zeros((40, 40));
            let mut taken = 0;
            #[allow(clippy::explicit_counter_loop)]
            for i in (0..vals.len()).rev() {
                if vals[i] <= 0.0 || taken == r {
                    break;
                }
                let u = vecs.column(i);
                for a in 0..40 {
                    for b in 0..40 {
                        best[[a, b]] += vals[i] * u[a] * u[b];
                    }
                }
                taken += 1;
            }
            let opt = frob(&(&m_dense - &best));
            if got > 1.2 * opt {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures}/{trials} residual failures");
    }

    #[test]
    fn exact_low_rank_metric_is_reproduced() {
        // Duplicated anchor/target makes each constraint a PSD rank-1 matrix,
        // so two of them give an exactly rank-2 PSD metric.
        let mut rows = Array2::<f64>::zeros((6, 20));
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for v in rows.iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        // target duplicates anchor for both constraints
        let dup0 = rows.row(0).to_owned();
        rows.row_mut(1).assign(&dup0);
        let dup3 = rows.row(3).to_owned();
        rows.row_mut(4).assign(&dup3);
        let x = FeatureMatrix::from_rows(rows).unwrap();
        let lambda = 1.0;
        let mut c = DualAccumulator::new(6, lambda).unwrap();
        let used = vec![
            (Triplet::new(0, 1, 2), 1.0),
            (Triplet::new(3, 4, 5), 0.6),
        ];
        for &(t, b) in &used {
            c.accumulate(t, b).unwrap();
        }
        let factor = low_rank_psd_factor(&x, &c, 12, 5, 77).unwrap();
        assert_eq!(factor.rank(), 2, "effective rank should be 2");
        let m_dense = dense_metric_from_triplets(&x, &used, lambda);
        let ll = factor.l().dot(&factor.l().t());
        assert!(frob(&(&m_dense - &ll)) <= 1e-6);
    }

    #[test]
    fn embed_special_cases() {
        let (x, _) = synth_clusters(&SynthConfig {
            d: 4,
            n: 3,
            n_classes: 3,
            informative: 2,
            separation: 1.0,
            noise: 0.3,
            seed: 9,
        })
        .unwrap();
        // rank 0: all coordinates empty, all distances zero
        let z = embed(&LowRankFactor::empty(4), &x).unwrap();
        assert_eq!(z.dim(), (3, 0));
        // rank 1: z = u . x
        let mut l = Array2::<f64>::zeros((4, 1));
        for (i, v) in [0.5, -1.0, 2.0, 0.25].iter().enumerate() {
            l[[i, 0]] = *v;
        }
        let f = LowRankFactor::from_l(l.clone());
        let z = embed(&f, &x).unwrap();
        for i in 0..3 {
            let want = x.example(i).dot(&l.column(0));
            assert!((z[[i, 0]] - want).abs() < 1e-12);
        }
        // dimension mismatch
        let f_bad = LowRankFactor::empty(5);
        assert!(embed(&f_bad, &x).is_err());
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let l = crate::linalg::gaussian_matrix(9, 3, 1.0, &mut rng);
        let factor = LowRankFactor::from_l(l);
        let meta = ModelMeta {
            m: 100,
            q: 600,
            lambda: 1.25,
            gamma: 0.5,
            label_originals: vec![-3, 0, 42],
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.model");
        let p2 = dir.path().join("b.model");
        save_model(&p1, &factor, &meta).unwrap();
        let (f2, meta2) = load_model(&p1).unwrap();
        assert_eq!(factor, f2);
        assert_eq!(meta, meta2);
        save_model(&p2, &f2, &meta2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "serialized bytes must be identical");
    }

    #[test]
    fn model_loader_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.model");
        std::fs::write(&p, b"definitely not a model").unwrap();
        assert!(matches!(load_model(&p), Err(Error::Model(_))));
    }
}
