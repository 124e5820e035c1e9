//! The generate → train → infer → evaluate pipeline.
//!
//! Every stage is a pure function of the config (seed included) and its
//! input artifacts. Random streams are split off the run seed with
//! [`derive_seed`] so stages never share a generator:
//!
//! | stream | use |
//! |---|---|
//! | 1 | dataset draws (`2i` for θ, `2i + 1` for the rollout) |
//! | 2 | synthetic real rollouts |
//! | 3 | trainer (mixed with `trainer.seed`) |
//! | 4 | network feature initialisation |
//! | 5 | pair shuffling for the control |
//! | 6 | ABC simulations |
//! | 7 | posterior sampling |
//! | 1000 + r | evaluation repeat `r` |

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use simpost_core::abc::{abc_log_prob, epsilon_for_rate, rejection_abc, AbcConfig};
use simpost_core::feature_maps::build_rff;
use simpost_core::mixture_density::{select_lengthscale, train, LengthscaleSelection};
use simpost_core::posterior::recover_posterior;
use simpost_core::rng::{derive_seed, rng_from_seed};
use simpost_core::simulators::{rollout, GenerativeModel, Trajectory};
use simpost_core::stats::compute_stats;
use simpost_core::{
    Error as CoreError, FeatureMap, KernelConfig, NeuralFeatureMap, PosteriorEstimate, StatsSchema, TrainingReport,
    TrainingSet, UniformBox,
};

use crate::config::{ExperimentConfig, FeatureKind, Method};
use crate::error::{CliError, Result};
use crate::formats::{self, *};

const DATASET_STREAM: u64 = 1;
const REAL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const NN_INIT_STREAM: u64 = 4;
const SHUFFLE_STREAM: u64 = 5;
const ABC_STREAM: u64 = 6;
const SAMPLE_STREAM: u64 = 7;
const REPEAT_STREAM: u64 = 1000;

/// Fraction of failed draws above which generation aborts.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

/// Points per axis of the density dumps.
pub const GRID_1D: usize = 512;
pub const GRID_2D: usize = 128;

/// Standard artifact names under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.csv")
    }

    pub fn real_trajectories(&self) -> PathBuf {
        self.dir.join("real_trajectories.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.json")
    }

    pub fn training_log(&self) -> PathBuf {
        self.dir.join("training_log.csv")
    }

    pub fn posterior(&self) -> PathBuf {
        self.dir.join("posterior.json")
    }

    pub fn density_grid(&self) -> PathBuf {
        self.dir.join("density_grid.csv")
    }

    pub fn samples(&self) -> PathBuf {
        self.dir.join("samples.csv")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn metrics_json(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }

    pub fn abc_accepted(&self) -> PathBuf {
        self.dir.join("abc_accepted.csv")
    }
}

/// Rollout failures that count as a failed draw rather than a hard error.
fn is_failed_draw(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::DivergedTrajectory { .. } | CoreError::TooShortTrajectory { .. } | CoreError::ParameterOutOfBounds { .. }
    )
}

fn simulate_stats(
    model: &dyn GenerativeModel,
    cfg: &ExperimentConfig,
    theta: &[f64],
    seed: u64,
) -> std::result::Result<Vec<f64>, CoreError> {
    let full = model.schema().complete(&cfg.params, theta)?;
    let traj = rollout(model, &full, &cfg.controller, cfg.horizon, seed)?;
    let stats = compute_stats(&traj)?;
    if stats.iter().all(|v| v.is_finite()) {
        Ok(stats)
    } else {
        Err(CoreError::DivergedTrajectory { step: traj.actions.len() })
    }
}

/// Draws `dataset_size` pairs from the proposal and fits the statistics
/// standardizer. Failed draws are dropped; too many abort the run.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let model = cfg.model()?;
    let base = derive_seed(cfg.seed, DATASET_STREAM);
    let proposal = cfg.proposal();
    let draws = (0..cfg.dataset_size as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(base, 2 * i));
            let theta = proposal.sample(&mut rng)?;
            match simulate_stats(&*model, cfg, &theta, derive_seed(base, 2 * i + 1)) {
                Ok(s) => Ok((theta, Some(s))),
                Err(e) if is_failed_draw(&e) => Ok((theta, None)),
                Err(e) => Err(CliError::from(e)),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut thetas = Vec::with_capacity(draws.len());
    let mut stats = Vec::with_capacity(draws.len());
    let mut failed = Vec::new();
    for (theta, s) in draws {
        match s {
            Some(s) => {
                thetas.push(theta);
                stats.push(s);
            }
            None => failed.push(theta),
        }
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * cfg.dataset_size as f64 {
        let list: Vec<String> = failed.iter().map(|t| format!("{t:?}")).collect();
        return Err(CliError::Numeric(format!(
            "{} of {} simulations failed; offending parameters: {}",
            failed.len(),
            cfg.dataset_size,
            list.join(", ")
        )));
    }
    if !failed.is_empty() {
        warn!("dropped {} failed simulations", failed.len());
    }
    let stats_schema = StatsSchema::fit(model.state_dim(), model.action_dim(), &stats)?;
    info!("generated {} pairs for {}", thetas.len(), cfg.benchmark);
    Ok(Dataset {
        header: DatasetHeader {
            version: FORMAT_VERSION,
            config_hash: cfg.data_hash(),
            benchmark: cfg.benchmark.clone(),
            params: cfg.params.clone(),
            stats_schema,
            failed_draws: failed.len(),
        },
        thetas,
        stats,
    })
}

/// Rollouts at the hidden parameters `true_params`.
pub fn synthesize_real(cfg: &ExperimentConfig, true_params: &[f64]) -> Result<Vec<Trajectory>> {
    let model = cfg.model()?;
    let full = model.schema().complete(&cfg.params, true_params)?;
    let base = derive_seed(cfg.seed, REAL_STREAM);
    (0..cfg.real_rollouts as u64)
        .map(|j| Ok(rollout(&*model, &full, &cfg.controller, cfg.horizon, derive_seed(base, j))?))
        .collect()
}

/// The recorded trajectories file when configured, otherwise rollouts
/// at `true_params`.
pub fn observed_trajectories(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    if let Some(path) = &cfg.real_trajectories {
        let (header, trajs) = read_trajectories(path)?;
        let model = cfg.model()?;
        if header.benchmark != cfg.benchmark
            || header.state_dim != model.state_dim()
            || header.action_dim != model.action_dim()
        {
            return Err(CliError::format(path, "trajectories do not match the configured benchmark"));
        }
        return Ok(trajs);
    }
    match &cfg.true_params {
        Some(t) => synthesize_real(cfg, t),
        None => Err(CliError::Config("either true_params or real_trajectories is required".into())),
    }
}

fn check_hash(what: &str, found: &str, cfg: &ExperimentConfig) -> Result<()> {
    let expected = cfg.data_hash();
    if found != expected {
        return Err(CliError::Config(format!(
            "{what} was produced under config hash {found}, current config hash is {expected}"
        )));
    }
    Ok(())
}

/// A fitted model together with its training curves.
pub struct Fitted {
    pub model: ModelFile,
    pub report: TrainingReport,
}

/// Fits `q(θ | x)` on the dataset; `shuffle` breaks the pairing first.
pub fn fit_model(cfg: &ExperimentConfig, data: &Dataset, kind: FeatureKind, shuffle: bool) -> Result<Fitted> {
    let schema = &data.header.stats_schema;
    let stats = data
        .stats
        .iter()
        .map(|s| schema.standardize(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut set = TrainingSet::new(data.thetas.clone(), stats)?;
    if shuffle {
        set = set.shuffled_pairs(derive_seed(cfg.seed, SHUFFLE_STREAM));
    }
    let mut trainer = cfg.trainer.clone();
    trainer.seed = derive_seed(derive_seed(cfg.seed, TRAIN_STREAM), cfg.trainer.seed);

    let f = &cfg.features;
    let (map, selection): (FeatureMap, Option<LengthscaleSelection>) = match kind {
        FeatureKind::Rff => {
            let kernel = KernelConfig::new(f.family, f.lengthscales[0], f.num_features);
            let selection = if f.lengthscales.len() > 1 {
                let sel = select_lengthscale(&f.lengthscales, &set, &trainer, &kernel, f.folds)?;
                info!("lengthscale {} chosen from {:?}", sel.best, sel.candidates);
                Some(sel)
            } else {
                None
            };
            let best = selection.as_ref().map_or(f.lengthscales[0], |s| s.best);
            (FeatureMap::Rff(build_rff(&kernel.with_lengthscale(best), set.stats_dim())?), selection)
        }
        FeatureKind::Nn => (
            FeatureMap::Neural(NeuralFeatureMap::random(
                set.stats_dim(),
                f.hidden,
                f.hidden,
                derive_seed(cfg.seed, NN_INIT_STREAM),
            )),
            None,
        ),
    };
    let (density, report) = train(&trainer, &set, map)?;
    let model = ModelFile {
        version: FORMAT_VERSION,
        config_hash: data.header.config_hash.clone(),
        benchmark: data.header.benchmark.clone(),
        params: data.header.params.clone(),
        stats_schema: schema.clone(),
        proposal: cfg.proposal().clone(),
        features: FeatureSpec::of(&density.feature_map),
        head: density.head.clone(),
        theta_shift: density.theta_shift.clone(),
        theta_scale: density.theta_scale.clone(),
        lengthscale_selection: selection,
        training: TrainingSummary {
            epochs_run: report.train_loss.len(),
            best_epoch: report.best_epoch,
            stopped_early: report.stopped_early,
            final_train_loss: report.train_loss.last().copied().unwrap_or(f64::NAN),
            best_validation_loss: report.validation_loss.get(report.best_epoch).copied().unwrap_or(f64::NAN),
        },
    };
    Ok(Fitted { model, report })
}

/// Posterior at the observed statistics of `trajectories`.
pub fn infer_posterior(
    cfg: &ExperimentConfig,
    model: &ModelFile,
    model_ref: &str,
    trajectories: &[Trajectory],
) -> Result<PosteriorEstimate> {
    check_hash("model", &model.config_hash, cfg)?;
    let x_r = model.stats_schema.real_observation(trajectories)?;
    let mut post = recover_posterior(&model.density()?, &x_r, &cfg.prior, &model.proposal)?;
    post.provenance.model = model_ref.to_string();
    if post.is_degenerate() {
        warn!("posterior keeps almost no mass inside the prior support");
    }
    Ok(post)
}

/// The region covered by density dumps: the support, or ±4 sd.
fn grid_bounds(post: &PosteriorEstimate) -> UniformBox {
    if let Some(b) = &post.support {
        return b.clone();
    }
    let mean = post.mixture.mean();
    let sd: Vec<f64> = post.mixture.variance().iter().map(|v| v.sqrt()).collect();
    UniformBox {
        low: mean.iter().zip(&sd).map(|(m, s)| m - 4.0 * s).collect(),
        high: mean.iter().zip(&sd).map(|(m, s)| m + 4.0 * s).collect(),
    }
}

fn cell_centers(low: f64, high: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| low + (i as f64 + 0.5) / n as f64 * (high - low))
}

/// Density on a regular grid of cell centres: 512 points in 1-D, 128×128
/// in 2-D (first parameter outermost), per-parameter marginals beyond.
pub fn density_grid(post: &PosteriorEstimate, params: &[String], config_hash: &str) -> Result<(GridHeader, Vec<String>, Vec<Vec<f64>>)> {
    let b = grid_bounds(post);
    let d = post.dim();
    let mut columns: Vec<String>;
    let mut rows = Vec::new();
    let layout;
    match d {
        1 => {
            layout = format!("regular_{GRID_1D}");
            columns = vec![format!("theta_{}", params[0])];
            for t in cell_centers(b.low[0], b.high[0], GRID_1D) {
                let lp = post.log_density(&[t])?;
                rows.push(vec![t, lp, lp.exp()]);
            }
        }
        2 => {
            layout = format!("regular_{GRID_2D}x{GRID_2D}");
            columns = params.iter().map(|p| format!("theta_{p}")).collect();
            for t0 in cell_centers(b.low[0], b.high[0], GRID_2D) {
                for t1 in cell_centers(b.low[1], b.high[1], GRID_2D) {
                    let lp = post.log_density(&[t0, t1])?;
                    rows.push(vec![t0, t1, lp, lp.exp()]);
                }
            }
        }
        _ => {
            layout = format!("marginals_{GRID_1D}");
            columns = vec!["parameter_index".into(), "theta".into()];
            for j in 0..d {
                let m = post.mixture.marginal(&[j])?;
                for t in cell_centers(b.low[j], b.high[j], GRID_1D) {
                    let lp = m.log_density(&[t])?;
                    rows.push(vec![j as f64, t, lp, lp.exp()]);
                }
            }
        }
    }
    columns.push("log_density".into());
    columns.push("density".into());
    let header = GridHeader {
        version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        params: params.to_vec(),
        layout,
    };
    Ok((header, columns, rows))
}

/// Log densities at θ*: one per parameter marginal, then the joint.
fn posterior_scores(post: &PosteriorEstimate, theta: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(theta.len() + 1);
    for (j, t) in theta.iter().enumerate() {
        out.push(post.mixture.marginal(&[j])?.log_density(&[*t])?);
    }
    out.push(post.log_prob_target(theta)?);
    Ok(out)
}

fn abc_scores(accepted: &[Vec<f64>], theta: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(theta.len() + 1);
    for (j, t) in theta.iter().enumerate() {
        let column: Vec<Vec<f64>> = accepted.iter().map(|a| vec![a[j]]).collect();
        out.push(abc_log_prob(&column, &[*t])?);
    }
    out.push(abc_log_prob(accepted, theta)?);
    Ok(out)
}

struct AbcRun {
    epsilon: f64,
    acceptance: f64,
    accepted: Vec<Vec<f64>>,
    distances: Vec<f64>,
}

/// Rejection ABC with fresh simulations; ε is the configured distance
/// quantile over the (standardized) dataset.
fn run_abc(cfg: &ExperimentConfig, data: &Dataset, x_r: &[f64]) -> Result<AbcRun> {
    let schema = &data.header.stats_schema;
    let stats = data
        .stats
        .iter()
        .map(|s| schema.standardize(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let epsilon = epsilon_for_rate(&stats, x_r, None, cfg.abc.acceptance)?;
    let n = cfg.abc.max_simulations.unwrap_or(cfg.dataset_size);
    let model = cfg.model()?;
    let simulate = |theta: &[f64], seed: u64| match simulate_stats(&*model, cfg, theta, seed) {
        Ok(raw) => schema.standardize(&raw),
        Err(e) if is_failed_draw(&e) => Ok(vec![f64::INFINITY; schema.len()]),
        Err(e) => Err(e),
    };
    let result = rejection_abc(
        simulate,
        cfg.proposal(),
        x_r,
        &AbcConfig::new(epsilon, n),
        derive_seed(cfg.seed, ABC_STREAM),
    )?;
    Ok(AbcRun {
        epsilon,
        acceptance: result.acceptance_rate(),
        accepted: result.accepted,
        distances: result.distances,
    })
}

struct RepeatOutcome {
    scores: Vec<Option<Vec<f64>>>,
    abc: Option<AbcRun>,
}

fn run_repeat(cfg: &ExperimentConfig, r: usize, truth: &[f64]) -> RepeatOutcome {
    let mut rc = cfg.clone();
    rc.seed = derive_seed(cfg.seed, REPEAT_STREAM + r as u64);
    let failed = |e: CliError| {
        warn!("repeat {r}: {e}");
        RepeatOutcome {
            scores: vec![None; cfg.methods.len()],
            abc: None,
        }
    };
    let data = match generate_dataset(&rc) {
        Ok(d) => d,
        Err(e) => return failed(e),
    };
    let trajs = match observed_trajectories(&rc) {
        Ok(t) => t,
        Err(e) => return failed(e),
    };
    let x_r = match data.header.stats_schema.real_observation(&trajs) {
        Ok(x) => x,
        Err(e) => return failed(e.into()),
    };
    let mut abc = None;
    let scores = cfg
        .methods
        .iter()
        .map(|&m| {
            let outcome = match m {
                Method::MdnRff | Method::MdnNn | Method::ShuffledControl => {
                    let kind = if m == Method::MdnNn { FeatureKind::Nn } else { FeatureKind::Rff };
                    fit_model(&rc, &data, kind, m == Method::ShuffledControl).and_then(|f| {
                        let density = f.model.density()?;
                        let post = recover_posterior(&density, &x_r, &rc.prior, &f.model.proposal)?;
                        posterior_scores(&post, truth)
                    })
                }
                Method::RejectionAbc => run_abc(&rc, &data, &x_r).and_then(|run| {
                    let s = abc_scores(&run.accepted, truth);
                    abc = Some(run);
                    s
                }),
            };
            match outcome {
                Ok(s) if s.iter().all(|v| v.is_finite()) => Some(s),
                Ok(s) => {
                    warn!("repeat {r}, {}: non-finite score {s:?}", m.as_str());
                    None
                }
                Err(e) => {
                    warn!("repeat {r}, {}: {e}", m.as_str());
                    None
                }
            }
        })
        .collect();
    RepeatOutcome { scores, abc }
}

fn summarize(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Output of an evaluation run.
pub struct Evaluation {
    pub metrics: MetricsTable,
    /// Accepted ABC draws and distances per repeat.
    pub abc_sets: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

/// Scores every configured method by the log posterior density at the
/// true parameters over `repeats` independent datasets.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Evaluation> {
    let truth = cfg
        .true_params
        .clone()
        .ok_or_else(|| CliError::Config("evaluation needs true_params".into()))?;
    let outcomes: Vec<RepeatOutcome> = (0..cfg.repeats).into_par_iter().map(|r| run_repeat(cfg, r, &truth)).collect();

    let d = cfg.params.len();
    // score index → row label; 1-D runs report only the joint
    let labels: Vec<(usize, String)> = if d == 1 {
        vec![(d, cfg.params[0].clone())]
    } else {
        cfg.params.iter().cloned().enumerate().chain([(d, "joint".to_string())]).collect()
    };
    let mut rows = Vec::new();
    for (mi, m) in cfg.methods.iter().enumerate() {
        for (idx, label) in &labels {
            let values: Vec<f64> = outcomes.iter().filter_map(|o| o.scores[mi].as_ref().map(|s| s[*idx])).collect();
            let (mean, std) = summarize(&values);
            rows.push(MetricsRow {
                benchmark: cfg.benchmark.clone(),
                parameter: label.clone(),
                method: m.as_str().to_string(),
                mean,
                std,
                repeats: cfg.repeats,
                failed: cfg.repeats - values.len(),
                values,
            });
        }
    }
    let abc: Vec<&AbcRun> = outcomes.iter().filter_map(|o| o.abc.as_ref()).collect();
    Ok(Evaluation {
        metrics: MetricsTable {
            version: FORMAT_VERSION,
            config_hash: cfg.data_hash(),
            true_params: truth,
            rows,
            abc_epsilon: abc.iter().map(|a| a.epsilon).collect(),
            abc_acceptance: abc.iter().map(|a| a.acceptance).collect(),
        },
        abc_sets: abc.iter().map(|a| (a.accepted.clone(), a.distances.clone())).collect(),
    })
}

// Commands: the stages above plus file IO.

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Layout) -> Result<()> {
    let data = generate_dataset(cfg)?;
    write_dataset(&out.dataset(), &data)?;
    if let Some(t) = &cfg.true_params {
        let trajs = synthesize_real(cfg, t)?;
        let model = cfg.model()?;
        let header = TrajectoriesHeader {
            version: FORMAT_VERSION,
            benchmark: cfg.benchmark.clone(),
            state_dim: model.state_dim(),
            action_dim: model.action_dim(),
            rollouts: trajs.len(),
        };
        write_trajectories(&out.real_trajectories(), &header, &trajs)?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, dataset: &Path, kind: FeatureKind, out: &Layout) -> Result<()> {
    let data = read_dataset(dataset)?;
    check_hash("dataset", &data.header.config_hash, cfg)?;
    let fitted = fit_model(cfg, &data, kind, false)?;
    write_model(&out.model(), &fitted.model)?;
    write_training_log(
        &out.training_log(),
        &fitted.model.config_hash,
        &fitted.report.train_loss,
        &fitted.report.validation_loss,
    )
}

pub fn cmd_infer(cfg: &ExperimentConfig, model_path: &Path, out: &Layout) -> Result<()> {
    let model = read_model(model_path)?;
    let trajs = observed_trajectories(cfg)?;
    let post = infer_posterior(cfg, &model, &file_sha256(model_path)?, &trajs)?;
    let file = PosteriorFile::new(model.config_hash.clone(), model.params.clone(), &post);
    write_posterior(&out.posterior(), &file)?;
    let (header, columns, rows) = density_grid(&post, &model.params, &model.config_hash)?;
    write_density_grid(&out.density_grid(), &header, &columns, &rows)
}

pub fn cmd_sample(cfg: &ExperimentConfig, posterior: &Path, count: usize, out: &Layout) -> Result<()> {
    let file = read_posterior(posterior)?;
    check_hash("posterior", &file.config_hash, cfg)?;
    let post = file.estimate()?;
    let samples = post.sample(count, derive_seed(cfg.seed, SAMPLE_STREAM))?;
    let header = SamplesHeader {
        version: FORMAT_VERSION,
        config_hash: file.config_hash.clone(),
        params: file.params.clone(),
        count,
        seed: cfg.seed,
    };
    write_samples(&out.samples(), &header, &samples)
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Layout) -> Result<()> {
    let eval = evaluate(cfg)?;
    formats::write_metrics(&out.metrics_csv(), &out.metrics_json(), &eval.metrics)?;
    if cfg.methods.contains(&Method::RejectionAbc) {
        let header = AcceptedHeader {
            version: FORMAT_VERSION,
            config_hash: eval.metrics.config_hash.clone(),
            params: cfg.params.clone(),
            epsilon: eval.metrics.abc_epsilon.clone(),
        };
        write_abc_accepted(&out.abc_accepted(), &header, &eval.abc_sets)?;
    }
    Ok(())
}
