//! Dataset loading, synthesis, validation, and stratified splitting.
//!
//! Features are kept in a dense matrix with one example per row; the
//! mathematical convention elsewhere in the crate treats examples as columns
//! of a `d x n` matrix, which is the transpose of this storage. Labels are
//! remapped to a dense `[0, C)` range at load time and the original label of
//! each class id is retained in a sidecar map.
//!
//! On-disk formats (both UTF-8, LF or CRLF line endings):
//! - dense CSV: `label,v1,...,vd`, one example per line, `.` decimal, no header;
//! - sparse: `label idx:val idx:val ...` with 1-based strictly ascending indices.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense feature store: `n` examples of dimension `d`, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Array2<f64>,
}

impl FeatureMatrix {
    /// Wrap an `(n, d)` array of examples-as-rows. All values must be finite
    /// and both dimensions at least one.
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        let (n, d) = rows.dim();
        if n == 0 || d == 0 {
            return Err(Error::Config(format!(
                "feature matrix must be non-empty, got n={n}, d={d}"
            )));
        }
        if let Some(bad) = rows.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "feature matrix contains non-finite value {bad}"
            )));
        }
        Ok(Self { rows })
    }

    /// Feature dimension `d`.
    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    /// Example count `n`.
    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    /// Example `i` as a contiguous view.
    pub fn example(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    /// The underlying `(n, d)` storage. The mathematical `d x n` matrix `X`
    /// is the transpose of this.
    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Scale every example to unit L2 norm; zero examples are left as-is.
    /// Off by default everywhere, enabled behind an explicit flag.
    pub fn l2_normalize(&mut self) {
        for mut row in self.rows.rows_mut() {
            let nrm = row.dot(&row).sqrt();
            if nrm > 0.0 {
                row.mapv_inplace(|v| v / nrm);
            }
        }
    }

    /// Gather a subset of examples by index, preserving the given order.
    fn gather(&self, idx: &[usize]) -> Self {
        let d = self.d();
        let mut out = Array2::<f64>::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&self.rows.row(i));
        }
        Self { rows: out }
    }
}

/// Dense class assignments in `[0, C)` plus the original label each class id
/// was remapped from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    ids: Vec<u32>,
    n_classes: usize,
    originals: Vec<i64>,
}

impl LabelVector {
    /// Build from dense ids and the per-class original labels. Every id must
    /// be below `originals.len()` and every class must appear at least once.
    pub fn new(ids: Vec<u32>, originals: Vec<i64>) -> Result<Self> {
        let n_classes = originals.len();
        if n_classes == 0 || ids.is_empty() {
            return Err(Error::Config("label vector must be non-empty".into()));
        }
        let mut seen = vec![false; n_classes];
        for &id in &ids {
            let id = id as usize;
            if id >= n_classes {
                return Err(Error::Config(format!(
                    "label id {id} out of range for {n_classes} classes"
                )));
            }
            seen[id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "class {missing} has no examples"
            )));
        }
        Ok(Self {
            ids,
            n_classes,
            originals,
        })
    }

    /// Build labels inside an externally fixed class space, for evaluating
    /// a file against a model's label map. Unlike [`LabelVector::new`], a
    /// class is allowed to have no examples here; evaluation excludes such
    /// classes from mean accuracy.
    pub fn with_class_space(ids: Vec<u32>, originals: Vec<i64>) -> Result<Self> {
        let n_classes = originals.len();
        if n_classes == 0 || ids.is_empty() {
            return Err(Error::Config("label vector must be non-empty".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= n_classes) {
            return Err(Error::Config(format!(
                "label id {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            ids,
            n_classes,
            originals,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Original on-disk label for a class id.
    pub fn original(&self, class: usize) -> i64 {
        self.originals[class]
    }

    pub fn originals(&self) -> &[i64] {
        &self.originals
    }

    /// Example indices of every class, indexed by class id.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes];
        for (i, &c) in self.ids.iter().enumerate() {
            out[c as usize].push(i);
        }
        out
    }

    fn gather(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            n_classes: self.n_classes,
            originals: self.originals.clone(),
        }
    }
}

/// Configuration for [`synth_clusters`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub n: usize,
    pub n_classes: usize,
    /// Leading dimensions that carry the class signal; the rest are pure noise.
    pub informative: usize,
    /// Minimum pairwise distance between class means.
    pub separation: f64,
    /// Isotropic noise scale applied to every dimension.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.n_classes == 0 {
            return Err(Error::Config("d, n, and classes must be positive".into()));
        }
        if self.n < self.n_classes {
            return Err(Error::Config(format!(
                "need at least one example per class: n={} < classes={}",
                self.n, self.n_classes
            )));
        }
        if self.informative == 0 || self.informative > self.d {
            return Err(Error::Config(format!(
                "informative dims must be in [1, d={}], got {}",
                self.d, self.informative
            )));
        }
        if self.separation < 0.0 || !self.separation.is_finite() {
            return Err(Error::Config("separation must be >= 0".into()));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        Ok(())
    }
}

fn strip_line(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}

fn remap_labels(raw: &[i64]) -> (Vec<u32>, Vec<i64>) {
    let mut originals: Vec<i64> = raw.to_vec();
    originals.sort_unstable();
    originals.dedup();
    let ids = raw
        .iter()
        .map(|l| originals.binary_search(l).expect("label present") as u32)
        .collect();
    (ids, originals)
}

/// Load a dense CSV dataset: `label,v1,...,vd` per line.
pub fn load_dense_csv<P: AsRef<Path>>(path: P) -> Result<(FeatureMatrix, LabelVector)> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;

    let mut raw_labels: Vec<i64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut d: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = strip_line(line);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_str = fields.next().expect("split yields at least one field");
        let label: i64 = label_str.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("label {label_str:?} is not an integer"),
        })?;
        let mut row = Vec::new();
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("field {f:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite value {v}"),
                });
            }
            row.push(v);
        }
        match d {
            None => {
                if row.is_empty() {
                    return Err(Error::Format {
                        line: lineno,
                        msg: "row has a label but no feature fields".into(),
                    });
                }
                d = Some(row.len());
            }
            Some(expect) if expect != row.len() => {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!("ragged row: expected {expect} fields, got {}", row.len()),
                });
            }
            _ => {}
        }
        raw_labels.push(label);
        values.extend_from_slice(&row);
    }

    let d = d.ok_or(Error::EmptyDataset)?;
    let n = raw_labels.len();
    let rows = Array2::from_shape_vec((n, d), values).expect("shape consistent by construction");
    let (ids, originals) = remap_labels(&raw_labels);
    Ok((FeatureMatrix::from_rows(rows)?, LabelVector::new(ids, originals)?))
}

/// Load a sparse dataset: `label idx:val ...` with 1-based strictly ascending
/// indices. The dimension is the largest index seen unless `d_override` is
/// given; unspecified entries are zero.
pub fn load_sparse<P: AsRef<Path>>(
    path: P,
    d_override: Option<usize>,
) -> Result<(FeatureMatrix, LabelVector)> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;

    let mut raw_labels: Vec<i64> = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_idx = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = strip_line(line);
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let label_str = tok.next().expect("non-empty line");
        let label: i64 = label_str.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("label {label_str:?} is not an integer"),
        })?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut prev = 0usize;
        for pair in tok {
            let (idx_str, val_str) = pair.split_once(':').ok_or_else(|| Error::Format {
                line: lineno,
                msg: format!("expected idx:val, got {pair:?}"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("index {idx_str:?} is not a positive integer"),
            })?;
            if idx < 1 {
                return Err(Error::Format {
                    line: lineno,
                    msg: "indices are 1-based; got index 0".into(),
                });
            }
            if idx <= prev {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!("indices must be strictly increasing: {idx} after {prev}"),
                });
            }
            if let Some(limit) = d_override {
                if idx > limit {
                    return Err(Error::Format {
                        line: lineno,
                        msg: format!("index {idx} exceeds the declared dimension {limit}"),
                    });
                }
            }
            let val: f64 = val_str.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("value {val_str:?} is not a number"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite value {val}"),
                });
            }
            prev = idx;
            row.push((idx, val));
        }
        max_idx = max_idx.max(prev);
        raw_labels.push(label);
        entries.push(row);
    }

    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = match d_override {
        Some(d) => d,
        None if max_idx == 0 => {
            return Err(Error::Config(
                "no feature indices seen; pass an explicit dimension".into(),
            ))
        }
        None => max_idx,
    };
    let n = raw_labels.len();
    let mut rows = Array2::<f64>::zeros((n, d));
    for (r, row) in entries.iter().enumerate() {
        for &(idx, val) in row {
            rows[[r, idx - 1]] = val;
        }
    }
    let (ids, originals) = remap_labels(&raw_labels);
    Ok((FeatureMatrix::from_rows(rows)?, LabelVector::new(ids, originals)?))
}

/// Write a dataset as dense CSV using the shortest decimal representation
/// that round-trips each value exactly.
pub fn write_dense_csv<P: AsRef<Path>>(
    path: P,
    x: &FeatureMatrix,
    y: &LabelVector,
) -> Result<()> {
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch {
            context: "write_dense_csv: examples vs labels",
            expected: x.n(),
            got: y.n(),
        });
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for i in 0..x.n() {
        write!(w, "{}", y.original(y.ids()[i] as usize))?;
        for v in x.example(i).iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Generate a labeled Gaussian-cluster dataset.
///
/// Class means live in the first `informative` dimensions and are scaled so
/// the minimum pairwise distance equals `separation`; every dimension then
/// receives isotropic `N(0, noise^2)` perturbation. Labels cycle through the
/// classes, and identical seeds reproduce the dataset bit for bit.
pub fn synth_clusters(cfg: &SynthConfig) -> Result<(FeatureMatrix, LabelVector)> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let c = cfg.n_classes;
    let mut means = Array2::<f64>::zeros((c, cfg.informative));
    if c > 1 && cfg.separation > 0.0 {
        for v in means.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z;
        }
        let mut dmin = f64::INFINITY;
        for a in 0..c {
            for b in (a + 1)..c {
                let diff = &means.row(a) - &means.row(b);
                dmin = dmin.min(diff.dot(&diff).sqrt());
            }
        }
        if dmin <= 0.0 {
            return Err(Error::Numerical(
                "degenerate class means drawn; change the seed".into(),
            ));
        }
        means *= cfg.separation / dmin;
    } else if c > 1 {
        // separation == 0: burn the same number of draws so the noise stream
        // is independent of the separation value only through the means.
        for _ in 0..means.len() {
            let _: f64 = StandardNormal.sample(&mut rng);
        }
    }

    let mut rows = Array2::<f64>::zeros((cfg.n, cfg.d));
    let mut ids = Vec::with_capacity(cfg.n);
    for e in 0..cfg.n {
        let class = e % c;
        ids.push(class as u32);
        for j in 0..cfg.d {
            let z: f64 = StandardNormal.sample(&mut rng);
            rows[[e, j]] = cfg.noise * z;
        }
        for j in 0..cfg.informative {
            rows[[e, j]] += means[[class, j]];
        }
    }
    let originals = (0..c as i64).collect();
    Ok((
        FeatureMatrix::from_rows(rows)?,
        LabelVector::new(ids, originals)?,
    ))
}

/// Stratified train/test split.
///
/// Per-class test counts are apportioned by largest remainder against the
/// global target `round(test_fraction * n)`, clamped so every class keeps at
/// least one example on each side. Which examples land in the test partition
/// is decided by a seeded per-class shuffle, so the split is deterministic.
pub fn split(
    x: &FeatureMatrix,
    y: &LabelVector,
    test_fraction: f64,
    seed: u64,
) -> Result<((FeatureMatrix, LabelVector), (FeatureMatrix, LabelVector))> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch {
            context: "split: examples vs labels",
            expected: x.n(),
            got: y.n(),
        });
    }
    let per_class = y.class_indices();
    for (class, members) in per_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Stratification { class });
        }
    }

    let n = x.n();
    let c = y.n_classes();
    let target = (test_fraction * n as f64).round() as usize;
    let target = target.clamp(c, n - c);

    // Largest-remainder apportionment with per-class [1, n_c - 1] clamps.
    let mut test_counts: Vec<usize> = Vec::with_capacity(c);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(c);
    for (class, members) in per_class.iter().enumerate() {
        let ideal = test_fraction * members.len() as f64;
        let base = (ideal.floor() as usize).clamp(1, members.len() - 1);
        remainders.push((class, ideal - ideal.floor()));
        test_counts.push(base);
    }
    let mut assigned: usize = test_counts.iter().sum();
    if assigned < target {
        remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        'grow: loop {
            let mut moved = false;
            for &(class, _) in &remainders {
                if assigned == target {
                    break 'grow;
                }
                if test_counts[class] < per_class[class].len() - 1 {
                    test_counts[class] += 1;
                    assigned += 1;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    } else if assigned > target {
        remainders.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        'shrink: loop {
            let mut moved = false;
            for &(class, _) in &remainders {
                if assigned == target {
                    break 'shrink;
                }
                if test_counts[class] > 1 {
                    test_counts[class] -= 1;
                    assigned -= 1;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut test_idx: Vec<usize> = Vec::new();
    let mut train_idx: Vec<usize> = Vec::new();
    for (class, members) in per_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let k = test_counts[class];
        test_idx.extend_from_slice(&shuffled[..k]);
        train_idx.extend_from_slice(&shuffled[k..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    Ok((
        (x.gather(&train_idx), y.gather(&train_idx)),
        (x.gather(&test_idx), y.gather(&test_idx)),
    ))
}

/// Deterministically derive a fresh sub-seed; used to give each pipeline
/// component its own independent stream from one master seed.
pub(crate) fn derive_seed(rng: &mut ChaCha20Rng) -> u64 {
    rng.random::<u64>()
}
