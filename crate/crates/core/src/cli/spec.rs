//! Experiment spec files.
//!
//! The format is line based: `section.key = value`, `#` starts a comment,
//! blank lines are ignored. Every key is listed in [`KEYS`]; anything else is
//! rejected. Keys under `algorithm.` set defaults shared by every algorithm in
//! `algorithm.list`; `algorithm.<name>.<key>` overrides one algorithm.
//!
//! ```text
//! run.seed = 1
//! dataset.source = synth
//! dataset.synth.n = 2000
//! dataset.synth.dim = 64
//! dataset.synth.seed = 1
//! dataset.synth.noise = 0.05
//! objective.kind = logistic
//! objective.lambda = 1e-3
//! partition.clients = 10
//! algorithm.list = flens, fednewton, fedns, fedgd
//! algorithm.sketch.k = 16
//! algorithm.fedgd.step_size = 1/L1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{PartitionKind, PartitionScheme};
use crate::fedsim::{
    Algorithm, AlgorithmConfig, Momentum, Reseed, StepRule, StepSize, UpdatePoint,
};
use crate::objective::{Objective, ObjectiveKind, RegConvention};
use crate::sketch::SketchKind;

/// Every accepted top-level key with its default (`None` = required or
/// conditionally required).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("run.seed", Some("0")),
    ("dataset.source", None),
    ("dataset.path", None),
    ("dataset.dim", None),
    ("dataset.synth.n", None),
    ("dataset.synth.dim", None),
    ("dataset.synth.seed", Some("0")),
    ("dataset.synth.noise", Some("0")),
    ("objective.kind", None),
    ("objective.lambda", None),
    ("objective.reg_convention", Some("half")),
    ("partition.clients", None),
    ("partition.scheme", Some("uniform")),
    ("partition.seed", Some("0")),
    ("algorithm.list", None),
    ("sweep.k", None),
    ("sweep.repeats", Some("10")),
    ("sweep.rounds", Some("20")),
    ("sweep.identity_at_full", Some("true")),
    ("bench.rounds", Some("5")),
    ("output.prefix", Some("out/experiment")),
];

/// Keys valid under `algorithm.` and `algorithm.<name>.`.
pub const ALGORITHM_KEYS: &[&str] = &[
    "step_size",
    "step_rule",
    "momentum",
    "update_point",
    "sketch.kind",
    "sketch.k",
    "sketch.reseed",
    "max_rounds",
    "gap_tolerance",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Libsvm {
        path: PathBuf,
        dim: Option<usize>,
    },
    Synth {
        n: usize,
        dim: usize,
        seed: u64,
        noise: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub k: Vec<usize>,
    pub repeats: usize,
    pub rounds: usize,
    /// Run the k = M point with the identity sketch.
    pub identity_at_full: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub dataset: DatasetSource,
    /// Feature dimension, resolved at load time.
    pub dim: usize,
    pub objective: Objective,
    pub clients: usize,
    pub partition: PartitionScheme,
    pub algorithms: Vec<AlgorithmConfig>,
    pub sweep: Option<SweepSpec>,
    pub bench_rounds: usize,
    pub output_prefix: PathBuf,
}

struct Entry {
    value: String,
    line: usize,
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_spec(BufReader::new(file), base)
}

/// Parse spec text; relative dataset paths resolve against `base_dir`.
pub fn parse_spec<R: BufRead>(reader: R, base_dir: &Path) -> Result<ExperimentSpec, CliError> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| CliError::Parse {
            line: lineno,
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(CliError::Parse {
                line: lineno,
                message: "empty key or value".into(),
            });
        }
        if !is_known_key(&key) {
            return Err(CliError::UnknownKey { line: lineno, key });
        }
        if entries
            .insert(
                key.clone(),
                Entry {
                    value,
                    line: lineno,
                },
            )
            .is_some()
        {
            return Err(CliError::Parse {
                line: lineno,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Resolver { entries, base_dir }.resolve()
}

fn is_known_key(key: &str) -> bool {
    if KEYS.iter().any(|(k, _)| *k == key) {
        return true;
    }
    let Some(rest) = key.strip_prefix("algorithm.") else {
        return false;
    };
    if ALGORITHM_KEYS.contains(&rest) {
        return true;
    }
    match rest.split_once('.') {
        Some((alg, sub)) => alg.parse::<Algorithm>().is_ok() && ALGORITHM_KEYS.contains(&sub),
        None => false,
    }
}

struct Resolver<'a> {
    entries: BTreeMap<String, Entry>,
    base_dir: &'a Path,
}

impl Resolver<'_> {
    fn raw(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn required(&self, key: &str) -> Result<&Entry, CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::MissingRequired(key.to_string()))
    }

    fn value_or_default(&self, key: &str) -> Option<(String, usize)> {
        if let Some(e) = self.raw(key) {
            return Some((e.value.clone(), e.line));
        }
        KEYS.iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, d)| d.map(|d| (d.to_string(), 0)))
    }

    fn parse<T: std::str::FromStr>(
        &self,
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<T, CliError> {
        value
            .parse()
            .map_err(|_| invalid(key, line, format!("cannot parse `{value}`")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let (value, line) = self
            .value_or_default(key)
            .ok_or_else(|| CliError::MissingRequired(key.to_string()))?;
        self.parse(key, &value, line)
    }

    fn resolve(self) -> Result<ExperimentSpec, CliError> {
        let seed: u64 = self.get("run.seed")?;
        let dataset = self.dataset()?;
        let dim = match &dataset {
            DatasetSource::Synth { dim, .. } => *dim,
            DatasetSource::Libsvm { path, dim } => libsvm_dim(path, *dim)?,
        };

        let kind_entry = self.required("objective.kind")?;
        let kind = match kind_entry.value.as_str() {
            "logistic" => ObjectiveKind::Logistic,
            "ridge" => ObjectiveKind::RidgeLs,
            other => {
                return Err(invalid(
                    "objective.kind",
                    kind_entry.line,
                    format!("unknown objective `{other}`"),
                ))
            }
        };
        let lambda: f64 = self.get("objective.lambda")?;
        let (conv, conv_line) = self.value_or_default("objective.reg_convention").unwrap();
        let reg_convention = parse_reg_convention(&conv).ok_or_else(|| {
            invalid(
                "objective.reg_convention",
                conv_line,
                format!("expected half or full, got `{conv}`"),
            )
        })?;
        let objective = Objective::new(kind, lambda, reg_convention).map_err(|e| {
            invalid(
                "objective.lambda",
                self.raw("objective.lambda").map_or(0, |e| e.line),
                e.to_string(),
            )
        })?;

        let clients: usize = self.get("partition.clients")?;
        if clients == 0 {
            return Err(invalid(
                "partition.clients",
                self.raw("partition.clients").unwrap().line,
                "must be positive".into(),
            ));
        }
        let (scheme, scheme_line) = self.value_or_default("partition.scheme").unwrap();
        let partition_kind = match scheme.as_str() {
            "uniform" => PartitionKind::UniformRandom,
            "label-shards" => PartitionKind::SortedByLabelShards,
            other => {
                return Err(invalid(
                    "partition.scheme",
                    scheme_line,
                    format!("unknown scheme `{other}`"),
                ))
            }
        };
        let partition = PartitionScheme {
            kind: partition_kind,
            seed: self.get("partition.seed")?,
        };

        let algorithms = self.algorithms(dim)?;
        let sweep = self.sweep(dim, &algorithms)?;
        let bench_rounds: usize = self.get("bench.rounds")?;
        if bench_rounds < 5 {
            return Err(invalid(
                "bench.rounds",
                self.raw("bench.rounds").map_or(0, |e| e.line),
                "must be at least 5".into(),
            ));
        }
        let output_prefix = PathBuf::from(self.value_or_default("output.prefix").unwrap().0);

        Ok(ExperimentSpec {
            seed,
            dataset,
            dim,
            objective,
            clients,
            partition,
            algorithms,
            sweep,
            bench_rounds,
            output_prefix,
        })
    }

    fn dataset(&self) -> Result<DatasetSource, CliError> {
        let source = self.required("dataset.source")?;
        let (synth_keys, libsvm_keys) = (
            [
                "dataset.synth.n",
                "dataset.synth.dim",
                "dataset.synth.seed",
                "dataset.synth.noise",
            ],
            ["dataset.path", "dataset.dim"],
        );
        let forbid = |keys: &[&str], source: &str| -> Result<(), CliError> {
            for k in keys {
                if let Some(e) = self.raw(k) {
                    return Err(invalid(
                        k,
                        e.line,
                        format!("not allowed with dataset.source = {source}"),
                    ));
                }
            }
            Ok(())
        };
        match source.value.as_str() {
            "synth" => {
                forbid(&libsvm_keys, "synth")?;
                let n: usize = self.get("dataset.synth.n")?;
                let dim: usize = self.get("dataset.synth.dim")?;
                let noise: f64 = self.get("dataset.synth.noise")?;
                if n == 0 || dim == 0 {
                    return Err(invalid(
                        "dataset.synth.n",
                        source.line,
                        "n and dim must be positive".into(),
                    ));
                }
                if !(0.0..0.5).contains(&noise) {
                    return Err(invalid(
                        "dataset.synth.noise",
                        self.raw("dataset.synth.noise").map_or(0, |e| e.line),
                        "must lie in [0, 0.5)".into(),
                    ));
                }
                Ok(DatasetSource::Synth {
                    n,
                    dim,
                    seed: self.get("dataset.synth.seed")?,
                    noise,
                })
            }
            "libsvm" => {
                forbid(&synth_keys, "libsvm")?;
                let entry = self.required("dataset.path")?;
                let path = self.base_dir.join(&entry.value);
                if !path.is_file() {
                    return Err(invalid(
                        "dataset.path",
                        entry.line,
                        format!("file {} does not exist", path.display()),
                    ));
                }
                let dim = match self.raw("dataset.dim") {
                    Some(e) => Some(self.parse::<usize>("dataset.dim", &e.value, e.line)?),
                    None => None,
                };
                Ok(DatasetSource::Libsvm { path, dim })
            }
            other => Err(invalid(
                "dataset.source",
                source.line,
                format!("expected synth or libsvm, got `{other}`"),
            )),
        }
    }

    fn algorithms(&self, dim: usize) -> Result<Vec<AlgorithmConfig>, CliError> {
        let list = self.required("algorithm.list")?;
        let mut algorithms: Vec<Algorithm> = Vec::new();
        for name in list.value.split(',').map(str::trim) {
            let alg: Algorithm = name
                .parse()
                .map_err(|e| invalid("algorithm.list", list.line, e))?;
            if algorithms.contains(&alg) {
                return Err(invalid(
                    "algorithm.list",
                    list.line,
                    format!("`{name}` listed twice"),
                ));
            }
            algorithms.push(alg);
        }
        // overrides for algorithms that are not run are almost certainly typos
        for (key, e) in &self.entries {
            if let Some(rest) = key.strip_prefix("algorithm.") {
                if let Some((alg, _)) = rest.split_once('.') {
                    if let Ok(alg) = alg.parse::<Algorithm>() {
                        if !algorithms.contains(&alg) {
                            return Err(invalid(
                                key,
                                e.line,
                                format!("{alg} is not in algorithm.list"),
                            ));
                        }
                    }
                }
            }
        }
        algorithms
            .into_iter()
            .map(|alg| self.algorithm(alg, dim))
            .collect()
    }

    fn algorithm(&self, alg: Algorithm, dim: usize) -> Result<AlgorithmConfig, CliError> {
        let mut cfg = AlgorithmConfig::new(alg, dim);
        for sub in ALGORITHM_KEYS {
            let specific = format!("algorithm.{}.{sub}", alg.name());
            let shared = format!("algorithm.{sub}");
            let (key, entry) = match (self.raw(&specific), self.raw(&shared)) {
                (Some(e), _) => (specific, e),
                (None, Some(e)) => (shared, e),
                (None, None) => continue,
            };
            apply_algorithm_key(&mut cfg, sub, &entry.value)
                .map_err(|msg| invalid(&key, entry.line, msg))?;
        }
        cfg.validate()
            .map_err(|e| CliError::Validation(format!("{alg}: {e}")))?;
        if alg == Algorithm::Flens {
            check_sketch_size(cfg.sketch.kind, cfg.sketch.k, dim)
                .map_err(|m| CliError::Validation(format!("flens: {m}")))?;
        }
        Ok(cfg)
    }

    fn sweep(
        &self,
        dim: usize,
        algorithms: &[AlgorithmConfig],
    ) -> Result<Option<SweepSpec>, CliError> {
        let Some(entry) = self.raw("sweep.k") else {
            for key in ["sweep.repeats", "sweep.rounds", "sweep.identity_at_full"] {
                if let Some(e) = self.raw(key) {
                    return Err(invalid(key, e.line, "sweep settings need sweep.k".into()));
                }
            }
            return Ok(None);
        };
        let k = entry
            .value
            .split(',')
            .map(|s| self.parse::<usize>("sweep.k", s.trim(), entry.line))
            .collect::<Result<Vec<_>, _>>()?;
        if k.len() < 2 {
            return Err(invalid(
                "sweep.k",
                entry.line,
                "need at least two sketch sizes".into(),
            ));
        }
        let identity_at_full: bool = self.get("sweep.identity_at_full")?;
        let flens = algorithms
            .iter()
            .find(|a| a.algorithm == Algorithm::Flens)
            .ok_or_else(|| CliError::Validation("a sweep needs flens in algorithm.list".into()))?;
        for &kv in &k {
            let kind = sweep_kind(flens.sketch.kind, kv, dim, identity_at_full);
            check_sketch_size(kind, kv, dim).map_err(|m| invalid("sweep.k", entry.line, m))?;
        }
        let repeats: usize = self.get("sweep.repeats")?;
        let rounds: usize = self.get("sweep.rounds")?;
        if repeats == 0 {
            return Err(invalid(
                "sweep.repeats",
                self.raw("sweep.repeats").map_or(0, |e| e.line),
                "must be positive".into(),
            ));
        }
        Ok(Some(SweepSpec {
            k,
            repeats,
            rounds,
            identity_at_full,
        }))
    }
}

fn invalid(key: &str, line: usize, message: String) -> CliError {
    if line == 0 {
        CliError::Validation(format!("{key}: {message}"))
    } else {
        CliError::Validation(format!("line {line}, {key}: {message}"))
    }
}

/// Sketch kind actually used for sweep point `k`.
pub fn sweep_kind(
    configured: SketchKind,
    k: usize,
    dim: usize,
    identity_at_full: bool,
) -> SketchKind {
    if identity_at_full && k == dim {
        SketchKind::Identity
    } else {
        configured
    }
}

/// FLeNS sketches act on the model dimension: SRHT allows k ≤ d_pad, Gaussian
/// and CountSketch k ≤ M, identity k = M.
pub fn check_sketch_size(kind: SketchKind, k: usize, dim: usize) -> Result<(), String> {
    let ok = match kind {
        SketchKind::Srht => k >= 1 && k <= dim.next_power_of_two(),
        SketchKind::Gaussian | SketchKind::SparseJl => k >= 1 && k <= dim,
        SketchKind::Identity => k == dim,
    };
    if ok {
        Ok(())
    } else {
        Err(format!(
            "sketch size k = {k} is not valid for {kind:?} on dimension {dim}"
        ))
    }
}

fn parse_reg_convention(s: &str) -> Option<RegConvention> {
    match s {
        "half" => Some(RegConvention::Half),
        "full" => Some(RegConvention::Full),
        _ => None,
    }
}

fn apply_algorithm_key(cfg: &mut AlgorithmConfig, key: &str, value: &str) -> Result<(), String> {
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("cannot parse `{v}` as a number"))
    };
    let int = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| format!("cannot parse `{v}` as a count"))
    };
    match key {
        "step_size" => {
            cfg.step_size = if value == "1/L1" {
                StepSize::InverseSmoothness
            } else {
                StepSize::Fixed(num(value)?)
            }
        }
        "step_rule" => {
            cfg.step_rule = match value {
                "fixed" => StepRule::Fixed,
                "armijo" => StepRule::Armijo,
                _ => return Err(format!("expected fixed or armijo, got `{value}`")),
            }
        }
        "momentum" => {
            cfg.momentum = match value {
                "auto" => Momentum::Auto,
                "off" => Momentum::Off,
                v => Momentum::Constant(num(v)?),
            }
        }
        "update_point" => {
            cfg.update_point = match value {
                "from-v" => UpdatePoint::FromV,
                "from-w" => UpdatePoint::FromW,
                _ => return Err(format!("expected from-v or from-w, got `{value}`")),
            }
        }
        "sketch.kind" => cfg.sketch.kind = parse_sketch_kind(value)?,
        "sketch.k" => cfg.sketch.k = int(value)?,
        "sketch.reseed" => {
            cfg.sketch.reseed = match value {
                "every-round" => Reseed::EveryRound,
                "once" => Reseed::Once,
                _ => return Err(format!("expected every-round or once, got `{value}`")),
            }
        }
        "max_rounds" => cfg.max_rounds = int(value)?,
        "gap_tolerance" => {
            cfg.gap_tolerance = if value == "off" {
                None
            } else {
                Some(num(value)?)
            }
        }
        _ => unreachable!("key list and match arms disagree"),
    }
    Ok(())
}

fn parse_sketch_kind(value: &str) -> Result<SketchKind, String> {
    Ok(match value {
        "srht" => SketchKind::Srht,
        "gaussian" => SketchKind::Gaussian,
        "sparse-jl" => SketchKind::SparseJl,
        "identity" => SketchKind::Identity,
        _ => return Err(format!("unknown sketch kind `{value}`")),
    })
}

fn sketch_kind_name(kind: SketchKind) -> &'static str {
    match kind {
        SketchKind::Srht => "srht",
        SketchKind::Gaussian => "gaussian",
        SketchKind::SparseJl => "sparse-jl",
        SketchKind::Identity => "identity",
    }
}

/// Feature dimension of a LIBSVM file: the override, else the largest index.
fn libsvm_dim(path: &Path, dim: Option<usize>) -> Result<usize, CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut max_index = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        for tok in line.split_whitespace().skip(1) {
            if let Some(idx) = tok
                .split_once(':')
                .and_then(|(i, _)| i.parse::<usize>().ok())
            {
                max_index = max_index.max(idx);
            }
        }
    }
    match dim {
        Some(d) if d < max_index => Err(CliError::Validation(format!(
            "dataset.dim = {d} is smaller than the largest feature index {max_index}"
        ))),
        Some(d) => Ok(d),
        None if max_index == 0 => Err(CliError::Validation(format!(
            "{} has no features",
            path.display()
        ))),
        None => Ok(max_index),
    }
}

/// Canonical spec text; `parse_spec(dump_spec(s))` reproduces `s`.
pub fn dump_spec(spec: &ExperimentSpec) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("run.seed", spec.seed.to_string());
    match &spec.dataset {
        DatasetSource::Synth {
            n,
            dim,
            seed,
            noise,
        } => {
            line("dataset.source", "synth".into());
            line("dataset.synth.n", n.to_string());
            line("dataset.synth.dim", dim.to_string());
            line("dataset.synth.seed", seed.to_string());
            line("dataset.synth.noise", noise.to_string());
        }
        DatasetSource::Libsvm { path, dim } => {
            line("dataset.source", "libsvm".into());
            line("dataset.path", path.display().to_string());
            if let Some(d) = dim {
                line("dataset.dim", d.to_string());
            }
        }
    }
    line(
        "objective.kind",
        match spec.objective.kind {
            ObjectiveKind::Logistic => "logistic",
            ObjectiveKind::RidgeLs => "ridge",
        }
        .into(),
    );
    line("objective.lambda", spec.objective.lambda.to_string());
    line(
        "objective.reg_convention",
        match spec.objective.reg_convention {
            RegConvention::Half => "half",
            RegConvention::Full => "full",
        }
        .into(),
    );
    line("partition.clients", spec.clients.to_string());
    line(
        "partition.scheme",
        match spec.partition.kind {
            PartitionKind::UniformRandom => "uniform",
            PartitionKind::SortedByLabelShards => "label-shards",
        }
        .into(),
    );
    line("partition.seed", spec.partition.seed.to_string());
    line(
        "algorithm.list",
        spec.algorithms
            .iter()
            .map(|a| a.algorithm.name())
            .collect::<Vec<_>>()
            .join(", "),
    );
    for cfg in &spec.algorithms {
        let p = format!("algorithm.{}", cfg.algorithm.name());
        line(
            &format!("{p}.step_size"),
            match cfg.step_size {
                StepSize::Fixed(mu) => mu.to_string(),
                StepSize::InverseSmoothness => "1/L1".into(),
            },
        );
        line(
            &format!("{p}.step_rule"),
            match cfg.step_rule {
                StepRule::Fixed => "fixed",
                StepRule::Armijo => "armijo",
            }
            .into(),
        );
        line(
            &format!("{p}.momentum"),
            match cfg.momentum {
                Momentum::Auto => "auto".into(),
                Momentum::Off => "off".into(),
                Momentum::Constant(b) => b.to_string(),
            },
        );
        line(
            &format!("{p}.update_point"),
            match cfg.update_point {
                UpdatePoint::FromV => "from-v",
                UpdatePoint::FromW => "from-w",
            }
            .into(),
        );
        line(
            &format!("{p}.sketch.kind"),
            sketch_kind_name(cfg.sketch.kind).into(),
        );
        line(&format!("{p}.sketch.k"), cfg.sketch.k.to_string());
        line(
            &format!("{p}.sketch.reseed"),
            match cfg.sketch.reseed {
                Reseed::EveryRound => "every-round",
                Reseed::Once => "once",
            }
            .into(),
        );
        line(&format!("{p}.max_rounds"), cfg.max_rounds.to_string());
        line(
            &format!("{p}.gap_tolerance"),
            cfg.gap_tolerance.map_or("off".into(), |t| t.to_string()),
        );
    }
    if let Some(s) = &spec.sweep {
        line(
            "sweep.k",
            s.k.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", "),
        );
        line("sweep.repeats", s.repeats.to_string());
        line("sweep.rounds", s.rounds.to_string());
        line("sweep.identity_at_full", s.identity_at_full.to_string());
    }
    line("bench.rounds", spec.bench_rounds.to_string());
    line("output.prefix", spec.output_prefix.display().to_string());
    out
}
