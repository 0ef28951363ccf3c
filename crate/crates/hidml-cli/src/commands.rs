//! Implementations of the six subcommands. Every command resolves its
//! configuration, writes a `run-manifest.json` into the output directory,
//! and then emits its artifacts (model files, CSV tables, JSON reports).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hidml::classifier::{
    euclid_baseline, evaluation_report, fit_centers, nearest_neighbors, predict_batch,
};
use hidml::data::{
    load_dense_csv, load_sparse, split, synth_clusters, write_dense_csv, FeatureMatrix,
    LabelVector, SynthConfig,
};
use hidml::recover::{embed, load_model, save_model, LowRankFactor, ModelMeta};
use hidml::sampler::{mine_epoch, stage_coordinates, violation_depths, SamplerParams};
use hidml::trainer::train;
use serde::Serialize;

use crate::config::{CliError, RunConfig};

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_dataset(path: &str, cfg: &RunConfig) -> Result<(FeatureMatrix, LabelVector), CliError> {
    let loaded = if cfg.sparse {
        load_sparse(path, cfg.sparse_dim)
    } else {
        load_dense_csv(path)
    };
    let (mut x, y) = loaded.map_err(|e| CliError::from(e).with_path(path))?;
    if cfg.normalize {
        x.l2_normalize();
    }
    Ok((x, y))
}

fn load_model_at(path: &str) -> Result<(LowRankFactor, ModelMeta), CliError> {
    load_model(path).map_err(|e| CliError::from(e).with_path(path))
}

fn require<'a>(path: &'a Option<String>, key: &str) -> Result<&'a str, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required path {key:?} (flag --{key})")))
}

/// Remap a freshly loaded label vector into a canonical class space given by
/// original labels (a model's label map, or the training file's).
fn reconcile_labels(y: &LabelVector, canonical: &[i64]) -> Result<LabelVector, CliError> {
    let ids = y
        .ids()
        .iter()
        .map(|&id| {
            let original = y.original(id as usize);
            canonical
                .iter()
                .position(|&o| o == original)
                .map(|p| p as u32)
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "label {original} does not exist in the model's label map"
                    ))
                })
        })
        .collect::<Result<Vec<u32>, CliError>>()?;
    Ok(LabelVector::with_class_space(ids, canonical.to_vec())?)
}

fn check_model_dim(factor: &LowRankFactor, x: &FeatureMatrix, what: &str) -> Result<(), CliError> {
    if factor.d() != x.d() {
        return Err(CliError::Data(format!(
            "model was trained at d={}, but the {what} dataset has d={}",
            factor.d(),
            x.d()
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("serialization failed: {e}")))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = ensure_out(cfg)?;
    cfg.write_manifest(&dir)?;
    let (x, y) = synth_clusters(&SynthConfig {
        d: cfg.d,
        n: cfg.n,
        n_classes: cfg.classes,
        informative: cfg.informative,
        separation: cfg.separation,
        noise: cfg.noise,
        seed: cfg.seed,
    })?;
    let ((xtr, ytr), (xte, yte)) = split(&x, &y, cfg.test_fraction, cfg.seed.wrapping_add(1))?;
    let train_path = dir.join("train.csv");
    let test_path = dir.join("test.csv");
    write_dense_csv(&train_path, &xtr, &ytr)?;
    write_dense_csv(&test_path, &xte, &yte)?;
    println!(
        "wrote {} ({} examples) and {} ({} examples), d={}, {} classes",
        train_path.display(),
        xtr.n(),
        test_path.display(),
        xte.n(),
        cfg.d,
        cfg.classes
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TrainSummary {
    d: usize,
    n: usize,
    classes: usize,
    stages_run: usize,
    triplets_per_stage: Vec<usize>,
    objective_before: Vec<f64>,
    objective_after: Vec<f64>,
    accumulator_nnz: usize,
    final_rank: usize,
    eigenvalues: Vec<f64>,
    degenerate: bool,
    val_accuracy: Vec<Option<f64>>,
}

pub fn run_train(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = ensure_out(cfg)?;
    cfg.write_manifest(&dir)?;
    let (xtr, ytr) = load_dataset(require(&cfg.train, "train")?, cfg)?;
    let val = match &cfg.val {
        Some(path) => {
            let (xv, yv_raw) = load_dataset(path, cfg)?;
            if xv.d() != xtr.d() {
                return Err(CliError::Data(format!(
                    "validation dimension {} does not match training dimension {}",
                    xv.d(),
                    xtr.d()
                )));
            }
            let yv = reconcile_labels(&yv_raw, ytr.originals())?;
            Some((xv, yv))
        }
        None => None,
    };

    let tcfg = cfg.trainer_config();
    let output = train(&xtr, &ytr, &tcfg, val.as_ref().map(|(x, y)| (x, y)))?;
    if output.degenerate {
        eprintln!("warning: no stage mined any violated triplets; the model is rank-zero");
    }

    let meta = ModelMeta {
        m: cfg.m as u64,
        q: cfg.q as u64,
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        label_originals: ytr.originals().to_vec(),
    };
    save_model(dir.join("model.bin"), &output.factor, &meta)?;

    // Fixed history schema; seconds are a measurement, not a deterministic
    // artifact, so they live here and not in the summary.
    let mut hist = String::from("stage,triplets,obj_before,obj_after,nnz,seconds,val_acc\n");
    for r in &output.history {
        let val_acc = r
            .val_accuracy
            .map(|a| a.to_string())
            .unwrap_or_default();
        hist.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.stage, r.triplets, r.obj_before, r.obj_after, r.nnz, r.seconds, val_acc
        ));
    }
    fs::write(dir.join("history.csv"), hist)?;

    let summary = TrainSummary {
        d: xtr.d(),
        n: xtr.n(),
        classes: ytr.n_classes(),
        stages_run: output.history.len(),
        triplets_per_stage: output.history.iter().map(|r| r.triplets).collect(),
        objective_before: output.history.iter().map(|r| r.obj_before).collect(),
        objective_after: output.history.iter().map(|r| r.obj_after).collect(),
        accumulator_nnz: output.history.last().map(|r| r.nnz).unwrap_or(0),
        final_rank: output.factor.rank(),
        eigenvalues: output.factor.eigvals().to_vec(),
        degenerate: output.degenerate,
        val_accuracy: output.history.iter().map(|r| r.val_accuracy).collect(),
    };
    write_json(&dir.join("train-summary.json"), &summary)?;

    println!(
        "trained {} stages on {} examples (d={}); final rank {}; artifacts in {}",
        output.history.len(),
        xtr.n(),
        xtr.d(),
        output.factor.rank(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Metrics {
    mean_accuracy: f64,
    per_class_recall: Vec<f64>,
    classes: usize,
    test_examples: usize,
    distance: String,
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = ensure_out(cfg)?;
    cfg.write_manifest(&dir)?;
    let (xtr, ytr_raw) = load_dataset(require(&cfg.train, "train")?, cfg)?;
    let (xte, yte_raw) = load_dataset(require(&cfg.test, "test")?, cfg)?;
    if xtr.d() != xte.d() {
        return Err(CliError::Data(format!(
            "train dimension {} does not match test dimension {}",
            xtr.d(),
            xte.d()
        )));
    }

    let (predictions, ytr, yte, distance) = if cfg.euclid {
        let preds = euclid_baseline(&xtr, &ytr_raw, &xte, cfg.k, cfg.tau, cfg.seed)?;
        let yte = reconcile_labels(&yte_raw, ytr_raw.originals())?;
        (preds, ytr_raw, yte, "euclidean".to_string())
    } else {
        let (factor, meta) = load_model_at(require(&cfg.model, "model")?)?;
        check_model_dim(&factor, &xtr, "train")?;
        check_model_dim(&factor, &xte, "test")?;
        let ytr = reconcile_labels(&ytr_raw, &meta.label_originals)?;
        let yte = reconcile_labels(&yte_raw, &meta.label_originals)?;
        let ztr = embed(&factor, &xtr)?;
        let zte = embed(&factor, &xte)?;
        let centers = fit_centers(&ztr, &ytr, cfg.k, cfg.tau, cfg.seed)?;
        (predict_batch(&zte, &centers), ytr, yte, "learned".to_string())
    };
    let _ = &ytr;

    let report = evaluation_report(&predictions, &yte)?;
    let metrics = Metrics {
        mean_accuracy: report.mean_accuracy,
        per_class_recall: report.per_class_recall.clone(),
        classes: yte.n_classes(),
        test_examples: xte.n(),
        distance,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;

    let mut csv = String::from("index,predicted,true\n");
    for (i, (&p, &t)) in predictions.iter().zip(yte.ids()).enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            i,
            yte.original(p as usize),
            yte.original(t as usize)
        ));
    }
    fs::write(dir.join("predictions.csv"), csv)?;

    println!(
        "mean accuracy {:.4} over {} classes; reports in {}",
        report.mean_accuracy,
        yte.n_classes(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

pub fn run_embed(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = ensure_out(cfg)?;
    cfg.write_manifest(&dir)?;
    let (factor, _meta) = load_model_at(require(&cfg.model, "model")?)?;
    let (x, _y) = load_dataset(require(&cfg.data, "data")?, cfg)?;
    check_model_dim(&factor, &x, "input")?;
    let z = embed(&factor, &x)?;
    let path = dir.join("coordinates.csv");
    let mut w = String::new();
    for i in 0..z.nrows() {
        w.push_str(&i.to_string());
        for v in z.row(i).iter() {
            w.push(',');
            w.push_str(&v.to_string());
        }
        w.push('\n');
    }
    fs::write(&path, w)?;
    println!(
        "embedded {} examples into {} dimensions: {}",
        z.nrows(),
        z.ncols(),
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// neighbors
// ---------------------------------------------------------------------------

pub fn neighbors(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = ensure_out(cfg)?;
    cfg.write_manifest(&dir)?;
    let (factor, _meta) = load_model_at(require(&cfg.model, "model")?)?;
    let (xtr, _ytr) = load_dataset(require(&cfg.train, "train")?, cfg)?;
    let (xq, _yq) = load_dataset(require(&cfg.queries, "queries")?, cfg)?;
    check_model_dim(&factor, &xtr, "train")?;
    check_model_dim(&factor, &xq, "query")?;
    let ztr = embed(&factor, &xtr)?;
    let zq = embed(&factor, &xq)?;
    let table = nearest_neighbors(&ztr, &zq, cfg.count);
    let path = dir.join("neighbors.csv");
    let mut w = String::from("query_index,rank,train_index,distance\n");
    for (qi, row) in table.iter().enumerate() {
        for (rank, (ti, dist)) in row.iter().enumerate() {
            w.push_str(&format!("{qi},{},{ti},{dist}\n", rank + 1));
        }
    }
    fs::write(&path, w)?;
    println!(
        "wrote top-{} neighbors for {} queries: {}",
        cfg.count,
        zq.nrows(),
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// mine-stats
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct HistogramBucket {
    lo: f64,
    hi: f64,
    count: usize,
}

#[derive(Serialize)]
struct MineStats {
    epoch_size: usize,
    examples: usize,
    coordinates: String,
    margin: f64,
    max_depth: f64,
    violation_depth_histogram: Vec<HistogramBucket>,
}

pub fn mine_stats(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = ensure_out(cfg)?;
    cfg.write_manifest(&dir)?;
    let (x, y) = load_dataset(require(&cfg.train, "train")?, cfg)?;
    let (coords, which) = match &cfg.model {
        Some(path) => {
            let (factor, _meta) = load_model_at(path)?;
            check_model_dim(&factor, &x, "train")?;
            (stage_coordinates(Some(&factor), &x), "model")
        }
        None => (stage_coordinates(None, &x), "euclid"),
    };
    let params = SamplerParams {
        targets_per_anchor: cfg.targets_per_anchor,
        impostor_pool: cfg.impostor_pool,
        max_triplets: cfg.max_triplets,
        margin: 1.0,
        seed: cfg.seed,
    };
    let mined = mine_epoch(&coords, &y, &params)?;
    let depths = violation_depths(&coords, &mined, params.margin);
    let max_depth = depths.iter().copied().fold(0.0f64, f64::max);
    let buckets = 8;
    let mut histogram = Vec::new();
    if !depths.is_empty() {
        let width = (max_depth / buckets as f64).max(f64::MIN_POSITIVE);
        let mut counts = vec![0usize; buckets];
        for &d in &depths {
            let idx = ((d / width) as usize).min(buckets - 1);
            counts[idx] += 1;
        }
        for (i, &count) in counts.iter().enumerate() {
            histogram.push(HistogramBucket {
                lo: width * i as f64,
                hi: width * (i + 1) as f64,
                count,
            });
        }
    }
    let stats = MineStats {
        epoch_size: mined.len(),
        examples: x.n(),
        coordinates: which.to_string(),
        margin: params.margin,
        max_depth,
        violation_depth_histogram: histogram,
    };
    let path = dir.join("mine-stats.json");
    write_json(&path, &stats)?;
    println!("mined {} triplets under {which} coordinates: {}", mined.len(), path.display());
    std::io::stdout().flush().ok();
    Ok(())
}
