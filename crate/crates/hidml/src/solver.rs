//! SGD solver for the per-stage reduced subproblem, plus dual extraction and
//! a small-scale dual-objective diagnostic.
//!
//! The stage objective is `(lambda/2) ||M - M_prev||_F^2 + sum_t l(<A_t, M>)`
//! over symmetric `m x m` matrices, with every constraint evaluated through
//! projected difference vectors. Each stochastic step takes the gradient of
//! the per-sample form `lambda_eff (M - M_prev) + l'(<A_t, M>) sym(A_t)` with
//! `lambda_eff = lambda / |batch|`, and the step size follows the
//! `1/(lambda_eff t)` schedule for strongly convex problems. The solver never
//! returns an iterate whose stage objective is worse than its warm start.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::loss::{smoothed_hinge, smoothed_hinge_conjugate, smoothed_hinge_grad, SmoothParams};
use crate::sampler::Triplet;
use crate::sketch::ProjectedData;

/// Largest batch the dense dual diagnostic will materialize a Gram matrix for.
pub const DUAL_BATCH_LIMIT: usize = 2000;

/// Symmetric `m x m` metric learned in sketch space.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMetric {
    values: Array2<f64>,
}

impl ReducedMetric {
    pub fn zeros(m: usize) -> Self {
        Self {
            values: Array2::zeros((m, m)),
        }
    }

    pub fn identity(m: usize) -> Self {
        Self {
            values: Array2::eye(m),
        }
    }

    /// Wrap a square matrix that is already symmetric (within `1e-12`
    /// relative) and finite.
    pub fn from_symmetric(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::DimensionMismatch {
                context: "reduced metric must be square",
                expected: r,
                got: c,
            });
        }
        let mut scale: f64 = 0.0;
        for v in values.iter() {
            if !v.is_finite() {
                return Err(Error::Config("reduced metric has non-finite entries".into()));
            }
            scale = scale.max(v.abs());
        }
        for i in 0..r {
            for j in (i + 1)..r {
                if (values[[i, j]] - values[[j, i]]).abs() > 1e-12 * (1.0 + scale) {
                    return Err(Error::Config(format!(
                        "reduced metric is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    /// Force exact symmetry by averaging with the transpose.
    pub(crate) fn from_symmetrized(values: Array2<f64>) -> Self {
        let sym = (&values + &values.t()) * 0.5;
        Self { values: sym }
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Quadratic form `u^T M v`.
    pub fn quad(&self, u: &ArrayView1<'_, f64>, v: &ArrayView1<'_, f64>) -> f64 {
        quad_slices(
            self.values.as_slice().expect("metric storage is contiguous"),
            self.m(),
            u.as_slice().expect("contiguous"),
            v.as_slice().expect("contiguous"),
        )
    }
}

/// SGD schedule knobs. The step rule itself is fixed to `1/(lambda_eff t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdParams {
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Return the uniform average of the iterates instead of the last one.
    pub averaging: bool,
}

impl Default for SgdParams {
    fn default() -> Self {
        Self {
            epochs: 5,
            shuffle_seed: 0,
            averaging: false,
        }
    }
}

impl SgdParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

fn quad_slices(mvals: &[f64], m: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for r in 0..m {
        let row = &mvals[r * m..(r + 1) * m];
        let mut dot = 0.0;
        for c in 0..m {
            dot += row[c] * v[c];
        }
        acc += u[r] * dot;
    }
    acc
}

/// Reusable projected-difference buffers for one triplet.
struct DiffBufs {
    u_k: Vec<f64>,
    v_k: Vec<f64>,
    u_j: Vec<f64>,
    v_j: Vec<f64>,
}

impl DiffBufs {
    fn new(m: usize) -> Self {
        Self {
            u_k: vec![0.0; m],
            v_k: vec![0.0; m],
            u_j: vec![0.0; m],
            v_j: vec![0.0; m],
        }
    }

    fn fill(&mut self, p: &ProjectedData, t: Triplet) {
        let a1 = p.row1(t.anchor);
        let a2 = p.row2(t.anchor);
        let t1 = p.row1(t.target);
        let t2 = p.row2(t.target);
        let k1 = p.row1(t.impostor);
        let k2 = p.row2(t.impostor);
        for c in 0..self.u_k.len() {
            self.u_k[c] = a1[c] - k1[c];
            self.v_k[c] = a2[c] - k2[c];
            self.u_j[c] = a1[c] - t1[c];
            self.v_j[c] = a2[c] - t2[c];
        }
    }

    fn value(&self, mvals: &[f64], m: usize) -> f64 {
        quad_slices(mvals, m, &self.u_k, &self.v_k) - quad_slices(mvals, m, &self.u_j, &self.v_j)
    }
}

fn check_batch(batch: &[Triplet], n: usize) -> Result<()> {
    for t in batch {
        for idx in [t.anchor, t.target, t.impostor] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(())
}

/// Minimize the stage objective by SGD, warm-started at `mprev`.
///
/// An empty batch short-circuits to the warm start (the regularizer-only
/// minimum). If the final iterate evaluates worse than the warm start, the
/// warm start is returned instead, so the stage objective never increases.
pub fn solve_stage(
    mprev: &ReducedMetric,
    batch: &[Triplet],
    p: &ProjectedData,
    lambda: f64,
    gp: SmoothParams,
    sp: &SgdParams,
) -> Result<ReducedMetric> {
    check_lambda(lambda)?;
    sp.validate()?;
    let m = p.m();
    if mprev.m() != m {
        return Err(Error::DimensionMismatch {
            context: "solve_stage: warm start vs projection dimension",
            expected: m,
            got: mprev.m(),
        });
    }
    if batch.is_empty() {
        return Ok(mprev.clone());
    }
    check_batch(batch, p.n())?;

    let lambda_eff = lambda / batch.len() as f64;
    let prev = mprev
        .values()
        .as_slice()
        .expect("metric storage is contiguous")
        .to_vec();
    let mut cur = prev.clone();
    let mut avg = if sp.averaging { Some(cur.clone()) } else { None };

    let mut bufs = DiffBufs::new(m);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(sp.shuffle_seed);
    let mut step = 0usize;

    for _ in 0..sp.epochs {
        order.shuffle(&mut rng);
        for &ti in &order {
            step += 1;
            bufs.fill(p, batch[ti]);
            let val = bufs.value(&cur, m);
            if !val.is_finite() {
                return Err(Error::Divergence { step });
            }
            let g = smoothed_hinge_grad(val, gp);
            let inv_t = 1.0 / step as f64;
            // eta * lambda_eff = 1/t, so the proximal pull is a plain
            // convex-combination step toward the warm start.
            if g != 0.0 {
                let h = 0.5 * g / (lambda_eff * step as f64);
                for r in 0..m {
                    let row = &mut cur[r * m..(r + 1) * m];
                    let prow = &prev[r * m..(r + 1) * m];
                    let uk_r = bufs.u_k[r];
                    let vk_r = bufs.v_k[r];
                    let uj_r = bufs.u_j[r];
                    let vj_r = bufs.v_j[r];
                    for c in 0..m {
                        let sym = uk_r * bufs.v_k[c] + vk_r * bufs.u_k[c]
                            - uj_r * bufs.v_j[c]
                            - vj_r * bufs.u_j[c];
                        row[c] += inv_t * (prow[c] - row[c]) - h * sym;
                    }
                }
            } else {
                for r in 0..m {
                    let row = &mut cur[r * m..(r + 1) * m];
                    let prow = &prev[r * m..(r + 1) * m];
                    for c in 0..m {
                        row[c] += inv_t * (prow[c] - row[c]);
                    }
                }
            }
            if let Some(av) = avg.as_mut() {
                let w = 1.0 / step as f64;
                for (a, c) in av.iter_mut().zip(cur.iter()) {
                    *a += w * (*c - *a);
                }
            }
        }
    }

    let result = avg.unwrap_or(cur);
    let candidate = ReducedMetric::from_symmetrized(
        Array2::from_shape_vec((m, m), result).expect("shape consistent"),
    );
    let f_cand = stage_objective(&candidate, mprev, batch, p, lambda, gp)?;
    let f_warm = stage_objective(mprev, mprev, batch, p, lambda, gp)?;
    if f_cand.is_finite() && f_cand <= f_warm {
        Ok(candidate)
    } else {
        Ok(mprev.clone())
    }
}

/// Exact evaluation of the stage objective
/// `(lambda/2) ||M - M_prev||_F^2 + sum_t l(<A_t, M>)`.
pub fn stage_objective(
    mhat: &ReducedMetric,
    mprev: &ReducedMetric,
    batch: &[Triplet],
    p: &ProjectedData,
    lambda: f64,
    gp: SmoothParams,
) -> Result<f64> {
    check_lambda(lambda)?;
    let m = p.m();
    if mhat.m() != m || mprev.m() != m {
        return Err(Error::DimensionMismatch {
            context: "stage_objective: metric vs projection dimension",
            expected: m,
            got: mhat.m().min(mprev.m()),
        });
    }
    check_batch(batch, p.n())?;

    let diff = mhat.values() - mprev.values();
    let mut obj = 0.5 * lambda * diff.iter().map(|v| v * v).sum::<f64>();
    let mvals = mhat.values().as_slice().expect("contiguous");
    let mut bufs = DiffBufs::new(m);
    for &t in batch {
        bufs.fill(p, t);
        obj += smoothed_hinge(bufs.value(mvals, m), gp);
    }
    Ok(obj)
}

/// Per-constraint dual weights at the stage's final metric:
/// `beta_t = -l'(<A_t, M>) in [0, 1]`; inactive constraints (beta = 0) are
/// dropped.
pub fn extract_duals(
    mhat: &ReducedMetric,
    batch: &[Triplet],
    p: &ProjectedData,
    gp: SmoothParams,
) -> Result<Vec<(Triplet, f64)>> {
    let m = p.m();
    if mhat.m() != m {
        return Err(Error::DimensionMismatch {
            context: "extract_duals: metric vs projection dimension",
            expected: m,
            got: mhat.m(),
        });
    }
    check_batch(batch, p.n())?;
    let mvals = mhat.values().as_slice().expect("contiguous");
    let mut bufs = DiffBufs::new(m);
    let mut out = Vec::new();
    for &t in batch {
        bufs.fill(p, t);
        let beta = -smoothed_hinge_grad(bufs.value(mvals, m), gp);
        if beta > 0.0 {
            out.push((t, beta));
        }
    }
    Ok(out)
}

/// Dense evaluation of the dual objective
/// `-sum_t l*(alpha_t) - (1 / 2 lambda) alpha^T G alpha` with
/// `G(a, b) = <A_a, A_b>` computed in sketch space. Diagnostic only; the
/// batch is capped so the Gram matrix stays materializable.
pub fn dual_objective_smallscale(
    alphas: &[f64],
    batch: &[Triplet],
    p: &ProjectedData,
    lambda: f64,
    gp: SmoothParams,
) -> Result<f64> {
    check_lambda(lambda)?;
    if batch.len() > DUAL_BATCH_LIMIT {
        return Err(Error::SizeLimit {
            what: "dual diagnostic batch",
            got: batch.len(),
            limit: DUAL_BATCH_LIMIT,
        });
    }
    if alphas.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            context: "dual_objective_smallscale: alphas vs batch",
            expected: batch.len(),
            got: alphas.len(),
        });
    }
    check_batch(batch, p.n())?;

    let nb = batch.len();
    let mut conj_sum = 0.0;
    for &a in alphas {
        conj_sum += smoothed_hinge_conjugate(a, gp)?;
    }

    // Precompute the four projected difference vectors per constraint; the
    // Gram entries then expand into four dot-product terms.
    let diffs: Vec<_> = batch.iter().map(|&t| p.triplet_diffs(t)).collect();
    let mut quad = 0.0;
    for a in 0..nb {
        let (uka, vka, uja, vja) = &diffs[a];
        for b in 0..nb {
            let (ukb, vkb, ujb, vjb) = &diffs[b];
            let gram = uka.dot(ukb) * vka.dot(vkb) - uka.dot(ujb) * vka.dot(vjb)
                - uja.dot(ukb) * vja.dot(vkb)
                + uja.dot(ujb) * vja.dot(vjb);
            quad += alphas[a] * gram * alphas[b];
        }
    }
    Ok(-conj_sum - quad / (2.0 * lambda))
}
