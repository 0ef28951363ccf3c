//! Double Gaussian random projection of triplet constraints.
//!
//! A triplet's constraint matrix `A_t` is never materialized. Two independent
//! `d x m` Gaussian maps `R1`, `R2` (entries `N(0, 1/m)`) are applied to the
//! data once, and every projected constraint quantity is then evaluated from
//! difference vectors of projected examples: with `u = R1^T (x_i - x_k)` and
//! `v = R2^T (x_i - x_k)` (similarly for the target pair), the projected
//! constraint `R1^T A_t R2` acts on a reduced metric purely through
//! `u^T M v` terms. This keeps the per-constraint cost at `O(m^2)` after a
//! one-time `O(m d n)` projection.
//!
//! Sampling uses a ChaCha20 generator and the standard-normal ziggurat, with
//! entries drawn in row-major order, so a sketch is regenerable bit for bit
//! from `(d, m, seed)`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::gaussian_matrix;
use crate::sampler::Triplet;
use crate::solver::ReducedMetric;

/// A pair of independent `d x m` Gaussian projection matrices.
#[derive(Debug, Clone)]
pub struct SketchPair {
    d: usize,
    m: usize,
    seed: u64,
    identity: bool,
    r1: Array2<f64>,
    r2: Array2<f64>,
}

impl SketchPair {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True for the test-mode identity sketch (`d == m`, `R1 = R2 = I`).
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn r1(&self) -> &Array2<f64> {
        &self.r1
    }

    pub fn r2(&self) -> &Array2<f64> {
        &self.r2
    }
}

/// Draw a sketch pair with `N(0, 1/m)` entries, `R1` filled before `R2`.
pub fn make_sketch(d: usize, m: usize, seed: u64) -> Result<SketchPair> {
    if m == 0 || d == 0 {
        return Err(Error::Config("sketch dimensions must be positive".into()));
    }
    if m > d {
        return Err(Error::Config(format!(
            "projection dimension m={m} exceeds data dimension d={d}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let std = (1.0 / m as f64).sqrt();
    let r1 = gaussian_matrix(d, m, std, &mut rng);
    let r2 = gaussian_matrix(d, m, std, &mut rng);
    Ok(SketchPair {
        d,
        m,
        seed,
        identity: false,
        r1,
        r2,
    })
}

/// Test-mode sketch with `R1 = R2 = I`, so projected quantities equal their
/// full-space counterparts. Lets solver and multi-stage tests isolate
/// optimization behavior from projection error.
pub fn make_identity_sketch(d: usize) -> Result<SketchPair> {
    if d == 0 {
        return Err(Error::Config("sketch dimensions must be positive".into()));
    }
    Ok(SketchPair {
        d,
        m: d,
        seed: 0,
        identity: true,
        r1: Array2::eye(d),
        r2: Array2::eye(d),
    })
}

/// Both projections of a dataset, one row per example: `P1 = R1^T X` and
/// `P2 = R2^T X` stored as `(n, m)`.
#[derive(Debug, Clone)]
pub struct ProjectedData {
    p1: Array2<f64>,
    p2: Array2<f64>,
}

impl ProjectedData {
    pub fn n(&self) -> usize {
        self.p1.nrows()
    }

    pub fn m(&self) -> usize {
        self.p1.ncols()
    }

    /// `R1^T x_i`.
    pub fn row1(&self, i: usize) -> ArrayView1<'_, f64> {
        self.p1.row(i)
    }

    /// `R2^T x_i`.
    pub fn row2(&self, i: usize) -> ArrayView1<'_, f64> {
        self.p2.row(i)
    }

    fn check(&self, t: Triplet) -> Result<()> {
        let n = self.n();
        for idx in [t.anchor, t.target, t.impostor] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        Ok(())
    }

    /// The four projected difference vectors of a triplet:
    /// `(R1^T d_ik, R2^T d_ik, R1^T d_ij, R2^T d_ij)`.
    pub fn triplet_diffs(
        &self,
        t: Triplet,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
        let u_k = &self.p1.row(t.anchor) - &self.p1.row(t.impostor);
        let v_k = &self.p2.row(t.anchor) - &self.p2.row(t.impostor);
        let u_j = &self.p1.row(t.anchor) - &self.p1.row(t.target);
        let v_j = &self.p2.row(t.anchor) - &self.p2.row(t.target);
        (u_k, v_k, u_j, v_j)
    }
}

/// Project every example through both maps: one matrix product per map.
pub fn project_data(x: &FeatureMatrix, s: &SketchPair) -> Result<ProjectedData> {
    if x.d() != s.d {
        return Err(Error::DimensionMismatch {
            context: "project_data: data vs sketch dimension",
            expected: s.d,
            got: x.d(),
        });
    }
    Ok(ProjectedData {
        p1: x.rows().dot(&s.r1),
        p2: x.rows().dot(&s.r2),
    })
}

/// `<R1^T A_t R2, M>` evaluated through projected difference vectors, without
/// forming the `m x m` projected constraint matrix.
pub fn reduced_constraint_value(
    mhat: &ReducedMetric,
    t: Triplet,
    p: &ProjectedData,
) -> Result<f64> {
    if mhat.m() != p.m() {
        return Err(Error::DimensionMismatch {
            context: "reduced_constraint_value: metric vs projection dimension",
            expected: p.m(),
            got: mhat.m(),
        });
    }
    p.check(t)?;
    let (u_k, v_k, u_j, v_j) = p.triplet_diffs(t);
    Ok(mhat.quad(&u_k.view(), &v_k.view()) - mhat.quad(&u_j.view(), &v_j.view()))
}
