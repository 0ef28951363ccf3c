//! Multi-stage training loop tying the sampler, sketch, solver, and recovery
//! modules together, plus a desk-scale check that the staged solves track the
//! joint problem over all mined constraints.
//!
//! Each stage mines an epoch of violated triplets under the previous stage's
//! factor (raw Euclidean coordinates at stage one, where the reduced metric
//! is still zero), solves the proximal subproblem warm-started at the
//! previous reduced metric, folds the resulting dual weights into the shared
//! accumulator, and re-factors `X C X^T` into a fresh rank-`r` PSD factor.
//! Every random choice is derived from the single config seed, so a serial
//! run is reproducible bit for bit.

use std::time::Instant;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::classifier::{fit_centers, mean_accuracy, predict_batch};
use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::loss::{smoothed_hinge, smoothed_hinge_grad, SmoothParams};
use crate::recover::{embed, low_rank_psd_factor, DualAccumulator, LowRankFactor};
use crate::sampler::{mine_epoch, stage_coordinates, SamplerParams, Triplet};
use crate::sketch::{make_identity_sketch, make_sketch, project_data, ProjectedData, SketchPair};
use crate::solver::{extract_duals, solve_stage, stage_objective, ReducedMetric, SgdParams};

/// Joint-check instances are solved densely; these caps keep that feasible.
pub const EQUIVALENCE_MAX_DIM: usize = 60;
pub const EQUIVALENCE_MAX_CONSTRAINTS: usize = 3000;

/// All knobs of the multi-stage loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Random-projection dimension.
    pub m: usize,
    /// Oversampled rank of the randomized factorization. Clamped to
    /// `min(q, d, 3n)` at run time so the default works on small data.
    pub q: usize,
    /// Target rank of the learned factor.
    pub r: usize,
    /// Stage count.
    pub stages: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub sampler: SamplerParams,
    pub sgd: SgdParams,
    /// Centers per class and soft-min temperature for per-stage validation.
    pub classifier_k: usize,
    pub classifier_tau: f64,
    /// Test mode: `R1 = R2 = I` (requires `m == d`).
    pub identity_sketch: bool,
    /// Stop once a stage mines fewer than 0.1% of the epoch cap. Off by
    /// default so the history always spans every configured stage.
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            m: 100,
            q: 600,
            r: 50,
            stages: 10,
            lambda: 1.0,
            gamma: 1.0,
            sampler: SamplerParams::default(),
            sgd: SgdParams::default(),
            classifier_k: 3,
            classifier_tau: 1.0,
            identity_sketch: false,
            early_stop: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.q == 0 || self.stages == 0 {
            return Err(Error::Config(
                "m, q, and stages must all be positive".into(),
            ));
        }
        if self.r > self.q {
            return Err(Error::Config(format!(
                "target rank r={} must not exceed q={}",
                self.r, self.q
            )));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        SmoothParams::new(self.gamma)?;
        if self.classifier_k == 0 {
            return Err(Error::Config("classifier_k must be >= 1".into()));
        }
        if !(self.classifier_tau.is_finite() && self.classifier_tau > 0.0) {
            return Err(Error::Config(format!(
                "classifier_tau must be > 0, got {}",
                self.classifier_tau
            )));
        }
        self.sampler.validate()?;
        self.sgd.validate()?;
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    /// 1-based stage index.
    pub stage: usize,
    /// Triplets mined this stage.
    pub triplets: usize,
    /// Stage objective at the warm start (proximal term zero).
    pub obj_before: f64,
    /// Stage objective at the accepted iterate.
    pub obj_after: f64,
    /// Cumulative stored entries of the dual accumulator.
    pub nnz: usize,
    /// Wall time of the stage.
    pub seconds: f64,
    /// Mean accuracy on the validation set, when one was supplied.
    pub val_accuracy: Option<f64>,
    /// Set when the stage was skipped (nothing mined).
    pub note: Option<String>,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub factor: LowRankFactor,
    pub history: Vec<StageRecord>,
    /// Final reduced-space metric, kept for diagnostics.
    pub final_reduced: ReducedMetric,
    /// The constraints each stage mined, in stage order.
    pub stage_batches: Vec<Vec<Triplet>>,
    /// Whether every stage mined nothing (degenerate rank-zero model).
    pub degenerate: bool,
}

struct StageSeeds {
    mine: Vec<u64>,
    sgd: Vec<u64>,
    /// One test-matrix seed for the whole run: re-drawing it per stage would
    /// make the recovered subspace jitter between stages.
    factor: u64,
    classifier: u64,
    sketch: u64,
}

fn derive_stage_seeds(seed: u64, stages: usize) -> StageSeeds {
    // One master stream, drawn in a fixed documented order: the sketch seed,
    // the factorization seed, then (mine, sgd) per stage, then the
    // classifier seed.
    let mut master = ChaCha20Rng::seed_from_u64(seed);
    let sketch = crate::data::derive_seed(&mut master);
    let factor = crate::data::derive_seed(&mut master);
    let mut mine = Vec::with_capacity(stages);
    let mut sgd = Vec::with_capacity(stages);
    for _ in 0..stages {
        mine.push(crate::data::derive_seed(&mut master));
        sgd.push(crate::data::derive_seed(&mut master));
    }
    let classifier = crate::data::derive_seed(&mut master);
    StageSeeds {
        mine,
        sgd,
        factor,
        classifier,
        sketch,
    }
}

fn validation_accuracy(
    factor: &LowRankFactor,
    x: &FeatureMatrix,
    y: &LabelVector,
    val: (&FeatureMatrix, &LabelVector),
    k: usize,
    tau: f64,
    seed: u64,
) -> Result<f64> {
    let ztrain = embed(factor, x)?;
    let zval = embed(factor, val.0)?;
    let centers = fit_centers(&ztrain, y, k, tau, seed)?;
    let preds = predict_batch(&zval, &centers);
    mean_accuracy(&preds, val.1)
}

/// Run the multi-stage loop.
///
/// Stages that mine no triplets are skipped with a note in their history
/// record; if every stage comes up empty the result is a degenerate
/// rank-zero factor. Identical configs and seeds produce identical outputs.
pub fn train(
    x: &FeatureMatrix,
    y: &LabelVector,
    cfg: &TrainerConfig,
    validation: Option<(&FeatureMatrix, &LabelVector)>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let (d, n) = (x.d(), x.n());
    if y.n() != n {
        return Err(Error::DimensionMismatch {
            context: "train: examples vs labels",
            expected: n,
            got: y.n(),
        });
    }
    if cfg.identity_sketch && cfg.m != d {
        return Err(Error::Config(format!(
            "identity sketch requires m == d, got m={} and d={d}",
            cfg.m
        )));
    }
    if let Some((xv, yv)) = validation {
        if xv.d() != d {
            return Err(Error::DimensionMismatch {
                context: "train: validation dimension",
                expected: d,
                got: xv.d(),
            });
        }
        if yv.n_classes() != y.n_classes() {
            return Err(Error::DimensionMismatch {
                context: "train: validation class count",
                expected: y.n_classes(),
                got: yv.n_classes(),
            });
        }
    }

    let seeds = derive_stage_seeds(cfg.seed, cfg.stages);
    let sketch: SketchPair = if cfg.identity_sketch {
        make_identity_sketch(d)?
    } else {
        make_sketch(d, cfg.m, seeds.sketch)?
    };
    let projected = project_data(x, &sketch)?;
    let gp = SmoothParams::new(cfg.gamma)?;

    let q_eff = cfg.q.min(d).min(3 * n);
    let r_eff = cfg.r.min(q_eff);

    let mut accumulator = DualAccumulator::new(n, cfg.lambda)?;
    let mut mhat = ReducedMetric::zeros(sketch.m());
    let mut factor = LowRankFactor::empty(d);
    let mut history: Vec<StageRecord> = Vec::with_capacity(cfg.stages);
    let mut stage_batches: Vec<Vec<Triplet>> = Vec::with_capacity(cfg.stages);
    let epoch_cap = cfg.sampler.max_triplets.unwrap_or(100 * n);

    for stage in 1..=cfg.stages {
        let started = Instant::now();
        let coords = if factor.rank() > 0 {
            stage_coordinates(Some(&factor), x)
        } else {
            stage_coordinates(None, x)
        };
        let sampler_params = SamplerParams {
            seed: seeds.mine[stage - 1],
            ..cfg.sampler.clone()
        };
        let batch = mine_epoch(&coords, y, &sampler_params)?;
        let mined = batch.len();

        let (obj_before, obj_after, note) = if batch.is_empty() {
            (0.0, 0.0, Some("no violated triplets mined; stage skipped".to_string()))
        } else {
            let obj_before = stage_objective(&mhat, &mhat, &batch, &projected, cfg.lambda, gp)?;
            let sgd_params = SgdParams {
                shuffle_seed: seeds.sgd[stage - 1],
                ..cfg.sgd.clone()
            };
            let next = solve_stage(&mhat, &batch, &projected, cfg.lambda, gp, &sgd_params)?;
            let obj_after = stage_objective(&next, &mhat, &batch, &projected, cfg.lambda, gp)?;
            mhat = next;
            for (t, beta) in extract_duals(&mhat, &batch, &projected, gp)? {
                accumulator.accumulate(t, beta)?;
            }
            factor = low_rank_psd_factor(x, &accumulator, q_eff, r_eff, seeds.factor)?;
            (obj_before, obj_after, None)
        };

        let val_accuracy = match validation {
            Some(val) => Some(validation_accuracy(
                &factor,
                x,
                y,
                val,
                cfg.classifier_k,
                cfg.classifier_tau,
                seeds.classifier,
            )?),
            None => None,
        };

        history.push(StageRecord {
            stage,
            triplets: mined,
            obj_before,
            obj_after,
            nnz: accumulator.nnz(),
            seconds: started.elapsed().as_secs_f64(),
            val_accuracy,
            note,
        });
        stage_batches.push(batch);

        if cfg.early_stop && mined * 1000 < epoch_cap {
            break;
        }
    }

    let degenerate = accumulator.is_empty();
    Ok(TrainOutput {
        factor,
        history,
        final_reduced: mhat,
        stage_batches,
        degenerate,
    })
}

/// Result of [`multistage_equivalence_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// Joint objective over the union of all mined constraints, evaluated at
    /// the multi-stage solution.
    pub multistage_objective: f64,
    /// The same objective at the batch-solved joint minimizer.
    pub joint_objective: f64,
    /// `(multistage - joint) / max(|joint|, 1e-12)`.
    pub relative_gap: f64,
    /// Size of the constraint union.
    pub constraints: usize,
}

/// Desk-scale consistency check: run the multi-stage loop with an identity
/// sketch, then solve `min (lambda/2)||M||^2 + sum l(<A_t, M>)` over the
/// union of every stage's constraints by full-batch gradient descent, and
/// report both objectives. Sizes are capped because the joint problem is
/// solved densely.
pub fn multistage_equivalence_check(
    x: &FeatureMatrix,
    y: &LabelVector,
    cfg: &TrainerConfig,
) -> Result<EquivalenceReport> {
    if !cfg.identity_sketch {
        return Err(Error::Config(
            "equivalence check requires the identity sketch".into(),
        ));
    }
    if x.d() > EQUIVALENCE_MAX_DIM {
        return Err(Error::SizeLimit {
            what: "equivalence-check dimension",
            got: x.d(),
            limit: EQUIVALENCE_MAX_DIM,
        });
    }
    let output = train(x, y, cfg, None)?;
    let union: Vec<Triplet> = output.stage_batches.iter().flatten().copied().collect();
    if union.len() > EQUIVALENCE_MAX_CONSTRAINTS {
        return Err(Error::SizeLimit {
            what: "equivalence-check constraint union",
            got: union.len(),
            limit: EQUIVALENCE_MAX_CONSTRAINTS,
        });
    }

    let sketch = make_identity_sketch(x.d())?;
    let projected = project_data(x, &sketch)?;
    let gp = SmoothParams::new(cfg.gamma)?;
    let zero = ReducedMetric::zeros(x.d());

    let multistage_objective = stage_objective(
        &output.final_reduced,
        &zero,
        &union,
        &projected,
        cfg.lambda,
        gp,
    )?;
    let joint = joint_batch_minimize(&union, &projected, cfg.lambda, gp)?;
    let joint_objective = stage_objective(&joint, &zero, &union, &projected, cfg.lambda, gp)?;
    let relative_gap =
        (multistage_objective - joint_objective) / joint_objective.abs().max(1e-12);
    Ok(EquivalenceReport {
        multistage_objective,
        joint_objective,
        relative_gap,
        constraints: union.len(),
    })
}

/// Full-batch Armijo gradient descent on the joint objective, run until the
/// strong-convexity bound certifies the remaining suboptimality is
/// negligible.
fn joint_batch_minimize(
    union: &[Triplet],
    p: &ProjectedData,
    lambda: f64,
    gp: SmoothParams,
) -> Result<ReducedMetric> {
    let m = p.m();
    type Diffs = (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>);
    let diffs: Vec<Diffs> = union.iter().map(|&t| p.triplet_diffs(t)).collect();

    let objective = |mat: &ndarray::Array2<f64>| -> f64 {
        let mut obj = 0.5 * lambda * mat.iter().map(|v| v * v).sum::<f64>();
        for (uk, vk, uj, vj) in &diffs {
            let val = uk.dot(&mat.dot(vk)) - uj.dot(&mat.dot(vj));
            obj += smoothed_hinge(val, gp);
        }
        obj
    };

    let mut cur = ndarray::Array2::<f64>::zeros((m, m));
    let mut fcur = objective(&cur);
    let mut step = 1.0 / lambda;
    for _ in 0..20_000 {
        let mut grad = &cur * lambda;
        for (uk, vk, uj, vj) in &diffs {
            let val = uk.dot(&cur.dot(vk)) - uj.dot(&cur.dot(vj));
            let g = smoothed_hinge_grad(val, gp);
            if g != 0.0 {
                let half = 0.5 * g;
                for r in 0..m {
                    for c in 0..m {
                        grad[[r, c]] += half
                            * (uk[r] * vk[c] + vk[r] * uk[c] - uj[r] * vj[c] - vj[r] * uj[c]);
                    }
                }
            }
        }
        let gn: f64 = grad.iter().map(|v| v * v).sum();
        // strong convexity: f(cur) - f* <= ||grad||^2 / (2 lambda)
        if gn / (2.0 * lambda) <= 1e-7 * (1.0 + fcur.abs()) {
            break;
        }
        let mut s = step * 2.0;
        loop {
            let cand = &cur - &(&grad * s);
            let fc = objective(&cand);
            if fc <= fcur - 0.25 * s * gn {
                cur = cand;
                fcur = fc;
                step = s;
                break;
            }
            s *= 0.5;
            if s < 1e-18 {
                return Ok(ReducedMetric::from_symmetrized(cur));
            }
        }
    }
    Ok(ReducedMetric::from_symmetrized(cur))
}
