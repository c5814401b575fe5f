use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::output::{float, format_metrics_csv, write_atomic};
use super::spec::{sweep_kind, DatasetSource, ExperimentSpec};
use super::{CliError, Result};
use crate::data::{parse_libsvm, partition, synth_logistic, ClientDataset, Dataset};
use crate::fedsim::{Algorithm, AlgorithmConfig, Simulator};
use crate::objective::{
    ObjectiveError, ObjectiveKind, OracleSolution, RegConvention, SmoothnessConstants,
};

/// Gradient-norm tolerance of the reference solution behind every gap.
pub const ORACLE_TOL: f64 = 1e-10;
pub const ORACLE_MAX_ITER: usize = 200;

/// Command-line settings that take precedence over the spec file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output_prefix: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reg_convention: Option<RegConvention>,
}

pub fn apply_overrides(spec: &mut ExperimentSpec, overrides: &Overrides) {
    if let Some(p) = &overrides.output_prefix {
        spec.output_prefix = p.clone();
    }
    if let Some(s) = overrides.seed {
        spec.seed = s;
    }
    if let Some(c) = overrides.reg_convention {
        spec.objective.reg_convention = c;
    }
}

pub struct Workload {
    pub data: Dataset,
    pub clients: Vec<ClientDataset>,
}

pub fn load_dataset(spec: &ExperimentSpec) -> Result<Dataset> {
    let data = match &spec.dataset {
        DatasetSource::Synth {
            n,
            dim,
            seed,
            noise,
        } => synth_logistic(*n, *dim, *seed, *noise)?,
        DatasetSource::Libsvm { path, dim } => {
            let file = fs::File::open(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            parse_libsvm(BufReader::new(file), *dim)?
        }
    };
    if data.dim() != spec.dim {
        return Err(CliError::Validation(format!(
            "dataset has dimension {}, spec resolved {}",
            data.dim(),
            spec.dim
        )));
    }
    Ok(data)
}

pub fn prepare(spec: &ExperimentSpec) -> Result<Workload> {
    let data = load_dataset(spec)?;
    let clients = partition(&data, spec.clients, spec.partition)?;
    Ok(Workload { data, clients })
}

pub struct OracleResult {
    pub solution: OracleSolution,
    /// sha256 over the dataset contents, the objective and the tolerance.
    pub key: String,
    pub from_cache: bool,
}

fn oracle_key(spec: &ExperimentSpec, data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(data.content_bytes());
    h.update(match spec.objective.kind {
        ObjectiveKind::Logistic => b"logistic".as_slice(),
        ObjectiveKind::RidgeLs => b"ridge".as_slice(),
    });
    h.update(spec.objective.reg().to_le_bytes());
    h.update(ORACLE_TOL.to_le_bytes());
    h.update((ORACLE_MAX_ITER as u64).to_le_bytes());
    hex::encode(h.finalize())
}

/// Cache lives next to the outputs so separate experiment directories stay
/// independent.
fn cache_dir(spec: &ExperimentSpec) -> PathBuf {
    let parent = spec
        .output_prefix
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    parent.join(".flens-cache")
}

/// Reference solution for the spec's objective, reusing a cached solve when
/// the dataset and objective are unchanged.
pub fn solve_oracle(spec: &ExperimentSpec, data: &Dataset) -> Result<OracleResult> {
    let key = oracle_key(spec, data);
    let path = cache_dir(spec).join(format!("oracle-{key}.json"));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(solution) = serde_json::from_str::<OracleSolution>(&text) {
            if solution.w_star.len() == data.dim() {
                return Ok(OracleResult {
                    solution,
                    key,
                    from_cache: true,
                });
            }
        }
    }
    let solution = match spec
        .objective
        .newton_oracle(data, ORACLE_TOL, ORACLE_MAX_ITER)
    {
        Ok(s) => s,
        Err(ObjectiveError::DidNotConverge { best }) => {
            return Err(CliError::OracleNotConverged {
                tol: ORACLE_TOL,
                grad_norm: best.grad_norm,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let json = serde_json::to_string(&solution).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    Ok(OracleResult {
        solution,
        key,
        from_cache: false,
    })
}

fn prefixed(spec: &ExperimentSpec, suffix: &str) -> PathBuf {
    let mut name = spec
        .output_prefix
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    spec.output_prefix.with_file_name(name)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct OracleSummary<'a> {
    key: &'a str,
    loss_star: f64,
    grad_norm: f64,
    iterations: usize,
    tolerance: f64,
}

impl<'a> OracleSummary<'a> {
    fn new(r: &'a OracleResult) -> Self {
        let s = &r.solution;
        Self {
            key: &r.key,
            loss_star: s.loss_star,
            grad_norm: s.grad_norm,
            iterations: s.iterations,
            tolerance: s.tolerance,
        }
    }
}

#[derive(Serialize)]
struct RunSummary {
    algorithm: &'static str,
    csv: String,
    rounds: usize,
    final_gap: f64,
    null_steps: usize,
    uplink_total: u64,
    downlink_total: u64,
}

#[derive(Serialize)]
struct RunSidecar<'a> {
    spec: &'a ExperimentSpec,
    rows: usize,
    constants: SmoothnessConstants,
    oracle: OracleSummary<'a>,
    runs: Vec<RunSummary>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub csv: Vec<PathBuf>,
    pub sidecar: PathBuf,
    pub oracle_from_cache: bool,
}

/// Run every configured algorithm; one CSV per algorithm plus a JSON sidecar.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunReport> {
    let work = prepare(spec)?;
    let oracle = solve_oracle(spec, &work.data)?;
    let sim = Simulator::new(spec.objective, &work.clients, spec.seed)?;

    let mut csv = Vec::new();
    let mut runs = Vec::new();
    for cfg in &spec.algorithms {
        let name = cfg.algorithm.name();
        let traj = sim
            .trajectory(cfg, &oracle.solution)
            .map_err(|source| CliError::Algorithm {
                algorithm: name.to_string(),
                source,
            })?;
        let path = prefixed(spec, &format!("_{name}.csv"));
        write_atomic(&path, format_metrics_csv(&traj.metrics).as_bytes())?;
        let last = traj.metrics.last().expect("round 0 is always recorded");
        runs.push(RunSummary {
            algorithm: name,
            csv: path.file_name().unwrap().to_string_lossy().into_owned(),
            rounds: last.round,
            final_gap: last.gap,
            null_steps: traj.null_steps,
            uplink_total: traj.metrics.iter().map(|m| m.uplink_floats).sum(),
            downlink_total: traj.metrics.iter().map(|m| m.downlink_floats).sum(),
        });
        csv.push(path);
    }

    let sidecar = prefixed(spec, ".json");
    let doc = RunSidecar {
        spec,
        rows: work.data.rows(),
        constants: sim.constants(),
        oracle: OracleSummary::new(&oracle),
        runs,
    };
    write_atomic(&sidecar, to_json(&doc)?.as_bytes())?;
    Ok(RunReport {
        csv,
        sidecar,
        oracle_from_cache: oracle.from_cache,
    })
}

fn flens_config(spec: &ExperimentSpec) -> Result<&AlgorithmConfig> {
    spec.algorithms
        .iter()
        .find(|a| a.algorithm == Algorithm::Flens)
        .ok_or_else(|| CliError::Validation("flens is not in algorithm.list".into()))
}

/// FLeNS final gap against sketch size, `sweep.repeats` master seeds per size.
/// Rows: `k,seed,final_gap,uplink_total`.
pub fn cmd_sweep_sketch(spec: &ExperimentSpec) -> Result<PathBuf> {
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::MissingRequired("sweep.k".into()))?;
    let base = flens_config(spec)?;
    let work = prepare(spec)?;
    let oracle = solve_oracle(spec, &work.data)?;

    let points: Vec<(usize, u64)> = sweep
        .k
        .iter()
        .flat_map(|&k| (0..sweep.repeats as u64).map(move |r| (k, spec.seed + r)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(k, seed)| -> Result<String> {
            let mut cfg = *base;
            cfg.sketch.k = k;
            cfg.sketch.kind = sweep_kind(base.sketch.kind, k, spec.dim, sweep.identity_at_full);
            cfg.max_rounds = sweep.rounds;
            cfg.gap_tolerance = None;
            let sim = Simulator::new(spec.objective, &work.clients, seed)?;
            let traj =
                sim.trajectory(&cfg, &oracle.solution)
                    .map_err(|source| CliError::Algorithm {
                        algorithm: format!("flens k={k} seed={seed}"),
                        source,
                    })?;
            let final_gap = traj.metrics.last().unwrap().gap;
            let uplink: u64 = traj.metrics.iter().map(|m| m.uplink_floats).sum();
            Ok(format!("{k},{seed},{},{uplink}\n", float(final_gap)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = String::from("k,seed,final_gap,uplink_total\n");
    out.extend(rows);
    let path = prefixed(spec, "_sweep.csv");
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock seconds per round for every algorithm and sketch size.
/// Sketch sizes come from `sweep.k` when present, else each algorithm's own k.
/// Rows: `algorithm,k,median_round_seconds`.
pub fn cmd_bench_time(spec: &ExperimentSpec) -> Result<PathBuf> {
    let work = prepare(spec)?;
    let oracle = solve_oracle(spec, &work.data)?;
    let sim = Simulator::new(spec.objective, &work.clients, spec.seed)?;

    let mut out = String::from("algorithm,k,median_round_seconds\n");
    for base in &spec.algorithms {
        let ks = match &spec.sweep {
            Some(s) => s.k.clone(),
            None => vec![base.sketch.k],
        };
        for k in ks {
            let mut cfg = *base;
            cfg.sketch.k = k;
            if let Some(s) = spec
                .sweep
                .as_ref()
                .filter(|_| base.algorithm == Algorithm::Flens)
            {
                cfg.sketch.kind = sweep_kind(base.sketch.kind, k, spec.dim, s.identity_at_full);
            }
            cfg.max_rounds = spec.bench_rounds;
            cfg.gap_tolerance = None;
            let name = base.algorithm.name();
            let traj =
                sim.trajectory(&cfg, &oracle.solution)
                    .map_err(|source| CliError::Algorithm {
                        algorithm: format!("{name} k={k}"),
                        source,
                    })?;
            let mut times: Vec<f64> = traj.metrics[1..].iter().map(|m| m.wall_seconds).collect();
            out.push_str(&format!("{name},{k},{}\n", float(median(&mut times))));
        }
    }
    let path = prefixed(spec, "_bench.csv");
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

#[derive(Serialize, Deserialize)]
struct OracleDoc {
    key: String,
    loss_star: f64,
    grad_norm: f64,
    iterations: usize,
    tolerance: f64,
    w_star: Vec<f64>,
}

/// Solve (or fetch) the reference solution and write it as JSON.
pub fn cmd_oracle(spec: &ExperimentSpec) -> Result<(PathBuf, bool)> {
    let data = load_dataset(spec)?;
    let r = solve_oracle(spec, &data)?;
    let doc = OracleDoc {
        key: r.key.clone(),
        loss_star: r.solution.loss_star,
        grad_norm: r.solution.grad_norm,
        iterations: r.solution.iterations,
        tolerance: r.solution.tolerance,
        w_star: r.solution.w_star.clone(),
    };
    let path = prefixed(spec, "_oracle.json");
    write_atomic(&path, to_json(&doc)?.as_bytes())?;
    Ok((path, r.from_cache))
}

/// Write a synthetic logistic dataset in LIBSVM format.
pub fn gen_data(n: usize, dim: usize, seed: u64, noise: f64, out: &Path) -> Result<Dataset> {
    let data = synth_logistic(n, dim, seed, noise)?;
    write_atomic(out, data.to_libsvm().as_bytes())?;
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParseSummary {
    pub rows: usize,
    pub dim: usize,
    pub positives: usize,
    pub negatives: usize,
}

pub fn parse_check(path: &Path, dim: Option<usize>) -> Result<ParseSummary> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let data = parse_libsvm(BufReader::new(file), dim)?;
    let positives = data.labels().iter().filter(|&&y| y > 0.0).count();
    Ok(ParseSummary {
        rows: data.rows(),
        dim: data.dim(),
        positives,
        negatives: data.rows() - positives,
    })
}
