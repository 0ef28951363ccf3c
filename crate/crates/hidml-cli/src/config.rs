//! Run configuration: documented flat key=value files (or JSON manifests),
//! mirrored one-to-one by command-line flags, with flags taking precedence.
//! Every run writes the fully resolved configuration back out as
//! `run-manifest.json`, which can itself be passed to `--config` to reproduce
//! the run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

/// Errors are bucketed by exit code: usage problems (1), data problems (2),
/// numeric failures (3).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// Prefix the message with the file it concerns.
    pub fn with_path(self, path: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{path}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{path}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{path}: {m}")),
        }
    }
}

impl From<hidml::Error> for CliError {
    fn from(e: hidml::Error) -> Self {
        use hidml::Error::*;
        match e {
            Divergence { .. } | Numerical(_) => CliError::Numeric(e.to_string()),
            Config(_) | SizeLimit { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

/// Every key a config file may contain. Flags carry the same names with
/// dashes instead of underscores.
pub const KNOWN_KEYS: &[&str] = &[
    // informational (written to manifests, ignored on load)
    "command",
    // training
    "m",
    "q",
    "r",
    "stages",
    "lambda",
    "gamma",
    "epochs",
    "averaging",
    "targets_per_anchor",
    "impostor_pool",
    "max_triplets",
    "early_stop",
    // classifier
    "k",
    "tau",
    // shared
    "seed",
    "serial",
    "normalize",
    "sparse",
    "sparse_dim",
    // synthesis
    "d",
    "n",
    "classes",
    "informative",
    "separation",
    "noise",
    "test_fraction",
    // command extras
    "count",
    "euclid",
    // paths
    "train",
    "val",
    "test",
    "model",
    "data",
    "queries",
    "out",
];

/// Raw key -> value overlay, before typing and validation.
#[derive(Debug, Clone, Default)]
pub struct Overlay {
    values: BTreeMap<String, String>,
}

impl Overlay {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    fn check_key(key: &str) -> Result<(), CliError> {
        if KNOWN_KEYS.contains(&key) {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "unknown config key {key:?}; known keys: {}",
                KNOWN_KEYS.join(", ")
            )))
        }
    }

    /// Parse a config file: either a flat `key = value` file (with `#`
    /// comments) or a JSON object such as a previously written manifest.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut overlay = Overlay::default();
        if text.trim_start().starts_with('{') {
            let parsed: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid JSON config: {e}")))?;
            let obj = parsed
                .as_object()
                .ok_or_else(|| CliError::Usage("JSON config must be an object".into()))?;
            for (key, value) in obj {
                Self::check_key(key)?;
                let rendered = match value {
                    serde_json::Value::Null => continue,
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                overlay.values.insert(key.clone(), rendered);
            }
        } else {
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!(
                        "config line {} is not `key = value`: {line:?}",
                        lineno + 1
                    ))
                })?;
                let key = key.trim();
                Self::check_key(key)?;
                overlay.values.insert(key.to_string(), value.trim().to_string());
            }
        }
        Ok(overlay)
    }

    /// Apply `other` on top of `self` (flags over file).
    pub fn merged_with(mut self, other: Overlay) -> Overlay {
        self.values.extend(other.values);
        self
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config key {key:?}: {raw:?} is not {what}"))
            }),
        }
    }

    fn usize_in(&self, key: &str, out: &mut usize, lo: usize) -> Result<(), CliError> {
        if let Some(v) = self.parse::<usize>(key, "an unsigned integer")? {
            if v < lo {
                return Err(CliError::Usage(format!(
                    "config key {key:?} must be >= {lo}, got {v}"
                )));
            }
            *out = v;
        }
        Ok(())
    }

    fn f64_in(
        &self,
        key: &str,
        out: &mut f64,
        range: (f64, f64),
        inclusive_lo: bool,
    ) -> Result<(), CliError> {
        if let Some(v) = self.parse::<f64>(key, "a number")? {
            let lo_ok = if inclusive_lo { v >= range.0 } else { v > range.0 };
            if !(v.is_finite() && lo_ok && v <= range.1) {
                let bracket = if inclusive_lo { '[' } else { '(' };
                return Err(CliError::Usage(format!(
                    "config key {key:?} must lie in {bracket}{}, {}], got {v}",
                    range.0, range.1
                )));
            }
            *out = v;
        }
        Ok(())
    }

    fn bool_in(&self, key: &str, out: &mut bool) -> Result<(), CliError> {
        if let Some(v) = self.parse::<bool>(key, "true or false")? {
            *out = v;
        }
        Ok(())
    }

    fn path_in(&self, key: &str, out: &mut Option<String>) -> Result<(), CliError> {
        if let Some(v) = self.get(key) {
            *out = Some(v.to_string());
        }
        Ok(())
    }
}

/// Fully resolved configuration; defaults match the library's.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    // training
    pub m: usize,
    pub q: usize,
    pub r: usize,
    pub stages: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub averaging: bool,
    pub targets_per_anchor: usize,
    pub impostor_pool: usize,
    pub max_triplets: Option<usize>,
    pub early_stop: bool,
    // classifier
    pub k: usize,
    pub tau: f64,
    // shared
    pub seed: u64,
    pub serial: bool,
    pub normalize: bool,
    pub sparse: bool,
    pub sparse_dim: Option<usize>,
    // synthesis
    pub d: usize,
    pub n: usize,
    pub classes: usize,
    pub informative: usize,
    pub separation: f64,
    pub noise: f64,
    pub test_fraction: f64,
    // command extras
    pub count: usize,
    pub euclid: bool,
    // paths
    pub train: Option<String>,
    pub val: Option<String>,
    pub test: Option<String>,
    pub model: Option<String>,
    pub data: Option<String>,
    pub queries: Option<String>,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            m: 100,
            q: 600,
            r: 50,
            stages: 10,
            lambda: 1.0,
            gamma: 1.0,
            epochs: 5,
            averaging: false,
            targets_per_anchor: 3,
            impostor_pool: 10,
            max_triplets: None,
            early_stop: false,
            k: 3,
            tau: 1.0,
            seed: 0,
            serial: true,
            normalize: false,
            sparse: false,
            sparse_dim: None,
            d: 100,
            n: 500,
            classes: 5,
            informative: 20,
            separation: 1.0,
            noise: 0.5,
            test_fraction: 0.5,
            count: 10,
            euclid: false,
            train: None,
            val: None,
            test: None,
            model: None,
            data: None,
            queries: None,
            out: None,
        }
    }
}

impl RunConfig {
    /// Type, range-check, and fill defaults from an overlay. Errors name the
    /// offending key and its valid range.
    pub fn resolve(command: &str, overlay: &Overlay) -> Result<Self, CliError> {
        let mut cfg = RunConfig {
            command: command.to_string(),
            ..RunConfig::default()
        };
        overlay.usize_in("m", &mut cfg.m, 1)?;
        overlay.usize_in("q", &mut cfg.q, 1)?;
        overlay.usize_in("r", &mut cfg.r, 0)?;
        overlay.usize_in("stages", &mut cfg.stages, 1)?;
        overlay.f64_in("lambda", &mut cfg.lambda, (0.0, f64::INFINITY), false)?;
        overlay.f64_in("gamma", &mut cfg.gamma, (0.0, 1.0), false)?;
        overlay.usize_in("epochs", &mut cfg.epochs, 1)?;
        overlay.bool_in("averaging", &mut cfg.averaging)?;
        overlay.usize_in("targets_per_anchor", &mut cfg.targets_per_anchor, 1)?;
        overlay.usize_in("impostor_pool", &mut cfg.impostor_pool, 1)?;
        if let Some(v) = overlay.parse::<usize>("max_triplets", "an unsigned integer")? {
            if v == 0 {
                return Err(CliError::Usage(
                    "config key \"max_triplets\" must be >= 1".into(),
                ));
            }
            cfg.max_triplets = Some(v);
        }
        overlay.bool_in("early_stop", &mut cfg.early_stop)?;
        overlay.usize_in("k", &mut cfg.k, 1)?;
        overlay.f64_in("tau", &mut cfg.tau, (0.0, f64::INFINITY), false)?;
        if let Some(v) = overlay.parse::<u64>("seed", "an unsigned integer")? {
            cfg.seed = v;
        }
        overlay.bool_in("serial", &mut cfg.serial)?;
        overlay.bool_in("normalize", &mut cfg.normalize)?;
        overlay.bool_in("sparse", &mut cfg.sparse)?;
        if let Some(v) = overlay.parse::<usize>("sparse_dim", "an unsigned integer")? {
            if v == 0 {
                return Err(CliError::Usage(
                    "config key \"sparse_dim\" must be >= 1".into(),
                ));
            }
            cfg.sparse_dim = Some(v);
        }
        overlay.usize_in("d", &mut cfg.d, 1)?;
        overlay.usize_in("n", &mut cfg.n, 1)?;
        overlay.usize_in("classes", &mut cfg.classes, 1)?;
        overlay.usize_in("informative", &mut cfg.informative, 1)?;
        overlay.f64_in("separation", &mut cfg.separation, (0.0, f64::INFINITY), true)?;
        overlay.f64_in("noise", &mut cfg.noise, (0.0, f64::INFINITY), true)?;
        overlay.f64_in("test_fraction", &mut cfg.test_fraction, (0.0, 1.0), false)?;
        if cfg.test_fraction >= 1.0 {
            return Err(CliError::Usage(
                "config key \"test_fraction\" must lie in (0, 1)".into(),
            ));
        }
        overlay.usize_in("count", &mut cfg.count, 1)?;
        overlay.bool_in("euclid", &mut cfg.euclid)?;
        overlay.path_in("train", &mut cfg.train)?;
        overlay.path_in("val", &mut cfg.val)?;
        overlay.path_in("test", &mut cfg.test)?;
        overlay.path_in("model", &mut cfg.model)?;
        overlay.path_in("data", &mut cfg.data)?;
        overlay.path_in("queries", &mut cfg.queries)?;
        overlay.path_in("out", &mut cfg.out)?;

        // cross-field checks owned by downstream modules, surfaced early
        if cfg.r > cfg.q {
            return Err(CliError::Usage(format!(
                "config key \"r\" must not exceed \"q\": r={} > q={}",
                cfg.r, cfg.q
            )));
        }
        if cfg.informative > cfg.d {
            return Err(CliError::Usage(format!(
                "config key \"informative\" must not exceed \"d\": {} > {}",
                cfg.informative, cfg.d
            )));
        }
        Ok(cfg)
    }

    /// The output directory: the `out` key, the `HIDML_OUT` environment
    /// variable, or `./hidml-out`.
    pub fn out_dir(&self) -> std::path::PathBuf {
        match &self.out {
            Some(o) => o.into(),
            None => std::env::var_os("HIDML_OUT")
                .map(std::path::PathBuf::from)
                .unwrap_or_else(|| "hidml-out".into()),
        }
    }

    pub fn trainer_config(&self) -> hidml::trainer::TrainerConfig {
        hidml::trainer::TrainerConfig {
            m: self.m,
            q: self.q,
            r: self.r,
            stages: self.stages,
            lambda: self.lambda,
            gamma: self.gamma,
            sampler: hidml::sampler::SamplerParams {
                targets_per_anchor: self.targets_per_anchor,
                impostor_pool: self.impostor_pool,
                max_triplets: self.max_triplets,
                margin: 1.0,
                seed: 0,
            },
            sgd: hidml::solver::SgdParams {
                epochs: self.epochs,
                shuffle_seed: 0,
                averaging: self.averaging,
            },
            classifier_k: self.k,
            classifier_tau: self.tau,
            identity_sketch: false,
            early_stop: self.early_stop,
            seed: self.seed,
        }
    }

    /// Serialize the resolved config as the run manifest.
    pub fn write_manifest(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("run-manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("manifest serialization failed: {e}")))?;
        fs::write(&path, json + "\n")?;
        Ok(())
    }
}
