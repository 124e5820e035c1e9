//! On-disk artifacts.
//!
//! CSV files start with one `# {json}` header line followed by a column
//! header. Models and posteriors are pretty-printed JSON documents. Every
//! artifact carries the format version and the generation config hash.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simpost_core::feature_maps::{build_rff, FeatureMap, KernelConfig, NeuralFeatureMap};
use simpost_core::mixture_density::LengthscaleSelection;
use simpost_core::posterior::Provenance;
use simpost_core::simulators::Trajectory;
use simpost_core::{ConditionalDensity, GaussianMixture, MixtureHead, PosteriorEstimate, PriorSpec, StatsSchema, UniformBox};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(CliError::format(path, format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).expect("document serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v}")
}

/// Builds a CSV document: header line, column names, rows.
fn csv_document<H: Serialize>(header: &H, columns: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "# {}", serde_json::to_string(header).expect("header serializes")).unwrap();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(columns).unwrap();
        for r in rows {
            w.write_record(&r).unwrap();
        }
        w.flush().unwrap();
    }
    out
}

struct CsvTable<H> {
    header: H,
    rows: Vec<Vec<f64>>,
}

fn read_csv<H: DeserializeOwned>(path: &Path, width: impl Fn(&H) -> usize) -> Result<CsvTable<H>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| CliError::format(path, "missing header line"))?;
    let header: H = serde_json::from_str(json).map_err(|e| CliError::format(path, e))?;
    let expected = width(&header);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        if rec.len() != expected {
            return Err(CliError::format(path, format!("row {i} has {} fields, expected {expected}", rec.len())));
        }
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| CliError::format(path, format!("row {i}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub config_hash: String,
    pub benchmark: String,
    pub params: Vec<String>,
    /// Standardization fitted on this dataset's statistics.
    pub stats_schema: StatsSchema,
    /// Draws dropped because the rollout diverged or was too short.
    pub failed_draws: usize,
}

/// `θ` rows with their raw (unstandardized) statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub thetas: Vec<Vec<f64>>,
    pub stats: Vec<Vec<f64>>,
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut columns: Vec<String> = data.header.params.iter().map(|p| format!("theta_{p}")).collect();
    columns.extend((0..data.header.stats_schema.len()).map(|j| format!("stat_{j}")));
    let rows = data
        .thetas
        .iter()
        .zip(&data.stats)
        .map(|(t, x)| t.iter().chain(x).map(|v| fmt_f64(*v)).collect());
    write_bytes(path, &csv_document(&data.header, &columns, rows))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let table = read_csv::<DatasetHeader>(path, |h| h.params.len() + h.stats_schema.len())?;
    check_version(path, table.header.version)?;
    let d = table.header.params.len();
    let (thetas, stats) = table.rows.into_iter().map(|mut r| {
        let x = r.split_off(d);
        (r, x)
    }).unzip();
    Ok(Dataset {
        header: table.header,
        thetas,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// Frequencies are rebuilt deterministically from the kernel.
    Rff { kernel: KernelConfig, input_dim: usize },
    Nn { network: NeuralFeatureMap },
}

impl FeatureSpec {
    pub fn of(map: &FeatureMap) -> Self {
        match map {
            FeatureMap::Rff(m) => FeatureSpec::Rff {
                kernel: m.kernel().clone(),
                input_dim: m.input_dim(),
            },
            FeatureMap::Neural(n) => FeatureSpec::Nn { network: n.clone() },
        }
    }

    pub fn build(&self) -> Result<FeatureMap> {
        Ok(match self {
            FeatureSpec::Rff { kernel, input_dim } => FeatureMap::Rff(build_rff(kernel, *input_dim)?),
            FeatureSpec::Nn { network } => FeatureMap::Neural(network.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub final_train_loss: f64,
    pub best_validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub config_hash: String,
    pub benchmark: String,
    pub params: Vec<String>,
    pub stats_schema: StatsSchema,
    pub proposal: PriorSpec,
    pub features: FeatureSpec,
    pub head: MixtureHead,
    pub theta_shift: Vec<f64>,
    pub theta_scale: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale_selection: Option<LengthscaleSelection>,
    pub training: TrainingSummary,
}

impl ModelFile {
    pub fn density(&self) -> Result<ConditionalDensity> {
        Ok(ConditionalDensity::new(
            self.features.build()?,
            self.head.clone(),
            self.theta_shift.clone(),
            self.theta_scale.clone(),
        )?)
    }
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let m: ModelFile = read_json(path)?;
    check_version(path, m.version)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFile {
    pub version: u32,
    pub config_hash: String,
    pub params: Vec<String>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major covariance per component.
    pub covariances: Vec<Vec<f64>>,
    pub support: Option<UniformBox>,
    pub support_mass: Option<f64>,
    pub provenance: Provenance,
}

impl PosteriorFile {
    pub fn new(config_hash: String, params: Vec<String>, post: &PosteriorEstimate) -> Self {
        Self {
            version: FORMAT_VERSION,
            config_hash,
            params,
            weights: post.mixture.weights(),
            means: post.mixture.means(),
            covariances: post.mixture.covariances(),
            support: post.support.clone(),
            support_mass: post.support_mass,
            provenance: post.provenance.clone(),
        }
    }

    pub fn estimate(&self) -> Result<PosteriorEstimate> {
        Ok(PosteriorEstimate {
            mixture: GaussianMixture::new(&self.weights, &self.means, &self.covariances)?,
            support: self.support.clone(),
            provenance: self.provenance.clone(),
            support_mass: self.support_mass,
        })
    }
}

pub fn write_posterior(path: &Path, post: &PosteriorFile) -> Result<()> {
    write_json(path, post)
}

pub fn read_posterior(path: &Path) -> Result<PosteriorFile> {
    let p: PosteriorFile = read_json(path)?;
    check_version(path, p.version)?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesHeader {
    pub version: u32,
    pub config_hash: String,
    pub params: Vec<String>,
    pub count: usize,
    pub seed: u64,
}

pub fn write_samples(path: &Path, header: &SamplesHeader, samples: &[Vec<f64>]) -> Result<()> {
    let rows = samples.iter().map(|s| s.iter().map(|v| fmt_f64(*v)).collect());
    write_bytes(path, &csv_document(header, &header.params, rows))
}

pub fn read_samples(path: &Path) -> Result<(SamplesHeader, Vec<Vec<f64>>)> {
    let t = read_csv::<SamplesHeader>(path, |h| h.params.len())?;
    check_version(path, t.header.version)?;
    Ok((t.header, t.rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub version: u32,
    pub config_hash: String,
    pub params: Vec<String>,
    /// `"joint"` for 1-D and 2-D posteriors, `"marginal"` otherwise.
    pub layout: String,
}

/// Density dump: one row per grid point.
pub fn write_density_grid(path: &Path, header: &GridHeader, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let rows = rows.iter().map(|r| r.iter().map(|v| fmt_f64(*v)).collect());
    write_bytes(path, &csv_document(header, columns, rows))
}

pub fn read_density_grid(path: &Path) -> Result<(GridHeader, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let columns = text.lines().nth(1).map(|l| l.split(',').count()).unwrap_or(0);
    let t = read_csv::<GridHeader>(path, |_| columns)?;
    check_version(path, t.header.version)?;
    Ok((t.header, t.rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoriesHeader {
    pub version: u32,
    pub benchmark: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub rollouts: usize,
}

/// Long format: `rollout, t, states…, actions…`; the final state of each
/// rollout has empty action fields.
pub fn write_trajectories(path: &Path, header: &TrajectoriesHeader, trajs: &[Trajectory]) -> Result<()> {
    let mut columns = vec!["rollout".to_string(), "t".to_string()];
    columns.extend((0..header.state_dim).map(|i| format!("s_{i}")));
    columns.extend((0..header.action_dim).map(|j| format!("a_{j}")));
    let mut rows = Vec::new();
    for (r, traj) in trajs.iter().enumerate() {
        for (t, s) in traj.states.iter().enumerate() {
            let mut row = vec![r.to_string(), t.to_string()];
            row.extend(s.iter().map(|v| fmt_f64(*v)));
            match traj.actions.get(t) {
                Some(a) => row.extend(a.iter().map(|v| fmt_f64(*v))),
                None => row.extend((0..header.action_dim).map(|_| String::new())),
            }
            rows.push(row);
        }
    }
    write_bytes(path, &csv_document(header, &columns, rows.into_iter()))
}

pub fn read_trajectories(path: &Path) -> Result<(TrajectoriesHeader, Vec<Trajectory>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| CliError::format(path, "missing header line"))?;
    let header: TrajectoriesHeader = serde_json::from_str(json).map_err(|e| CliError::format(path, e))?;
    check_version(path, header.version)?;
    let (ds, da) = (header.state_dim, header.action_dim);
    let mut trajs: Vec<Trajectory> = Vec::new();
    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        if rec.len() != 2 + ds + da {
            return Err(CliError::format(path, format!("row {i} has {} fields", rec.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| CliError::format(path, format!("row {i}: {e}")));
        let r: usize = rec[0].parse().map_err(|e| CliError::format(path, format!("row {i}: {e}")))?;
        if r == trajs.len() {
            trajs.push(Trajectory::default());
        } else if r + 1 != trajs.len() {
            return Err(CliError::format(path, format!("row {i}: rollouts out of order")));
        }
        let traj = trajs.last_mut().expect("pushed above");
        traj.states.push((2..2 + ds).map(|j| num(&rec[j])).collect::<Result<_>>()?);
        if da > 0 && rec.iter().skip(2 + ds).all(|f| !f.is_empty()) {
            traj.actions.push((2 + ds..2 + ds + da).map(|j| num(&rec[j])).collect::<Result<_>>()?);
        }
    }
    // without actions every state but the last precedes a transition
    if da == 0 {
        for t in &mut trajs {
            t.actions = vec![Vec::new(); t.states.len().saturating_sub(1)];
        }
    }
    for t in &trajs {
        if t.actions.len() + 1 != t.states.len() {
            return Err(CliError::format(path, "each rollout needs one more state than actions"));
        }
    }
    Ok((header, trajs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub benchmark: String,
    /// A parameter name for marginal rows, `"joint"` for the full vector.
    pub parameter: String,
    pub method: String,
    /// Over the successful repeats; absent when every repeat failed.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub repeats: usize,
    pub failed: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub version: u32,
    pub config_hash: String,
    pub true_params: Vec<f64>,
    pub rows: Vec<MetricsRow>,
    /// ABC tolerance and acceptance rate per repeat.
    pub abc_epsilon: Vec<f64>,
    pub abc_acceptance: Vec<f64>,
}

pub fn write_metrics(csv_path: &Path, json_path: &Path, table: &MetricsTable) -> Result<()> {
    let columns: Vec<String> = ["benchmark", "parameter", "method", "mean", "std", "repeats", "failed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let header = serde_json::json!({
        "version": table.version,
        "config_hash": table.config_hash,
        "true_params": table.true_params,
    });
    let rows = table.rows.iter().map(|r| {
        vec![
            r.benchmark.clone(),
            r.parameter.clone(),
            r.method.clone(),
            r.mean.map(fmt_f64).unwrap_or_default(),
            r.std.map(fmt_f64).unwrap_or_default(),
            r.repeats.to_string(),
            r.failed.to_string(),
        ]
    });
    write_bytes(csv_path, &csv_document(&header, &columns, rows))?;
    write_json(json_path, table)
}

pub fn read_metrics(json_path: &Path) -> Result<MetricsTable> {
    let t: MetricsTable = read_json(json_path)?;
    check_version(json_path, t.version)?;
    Ok(t)
}

/// Per-epoch losses; validation loss is empty when no split was held out.
pub fn write_training_log(path: &Path, config_hash: &str, train: &[f64], validation: &[f64]) -> Result<()> {
    let header = serde_json::json!({ "version": FORMAT_VERSION, "config_hash": config_hash });
    let columns: Vec<String> = ["epoch", "train_loss", "validation_loss"].iter().map(|s| s.to_string()).collect();
    let rows = train.iter().enumerate().map(|(i, t)| {
        vec![
            (i + 1).to_string(),
            fmt_f64(*t),
            validation.get(i).map(|v| fmt_f64(*v)).unwrap_or_default(),
        ]
    });
    write_bytes(path, &csv_document(&header, &columns, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedHeader {
    pub version: u32,
    pub config_hash: String,
    pub params: Vec<String>,
    pub epsilon: Vec<f64>,
}

/// ABC accepted sets, one row per accepted draw tagged with its repeat.
pub fn write_abc_accepted(path: &Path, header: &AcceptedHeader, sets: &[(Vec<Vec<f64>>, Vec<f64>)]) -> Result<()> {
    let mut columns = vec!["repeat".to_string()];
    columns.extend(header.params.iter().map(|p| format!("theta_{p}")));
    columns.push("distance".into());
    let rows = sets.iter().enumerate().flat_map(|(r, (thetas, dists))| {
        thetas.iter().zip(dists).map(move |(t, d)| {
            let mut row = vec![r.to_string()];
            row.extend(t.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(*d));
            row
        })
    });
    write_bytes(path, &csv_document(header, &columns, rows))
}
