//! Experiment orchestration: resolve a config, run all strategies over paired
//! trials, and persist trace/theory/escape/landscape artifacts.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, RegimeFlags};
use super::csvio::{float17, CsvTable};
use super::fixtures::{build_ensemble, find_minimizer, minimizer_guess};
use super::HarnessError;
use crate::adversary::{local_risk, network_risk, AttackConfig, LossModel};
use crate::dynamics::{self, NetworkState, TrainingConfig};
use crate::metrics::{self, BasinTest, BasinVerdict};
use crate::seeding::{derive_seed, stream};
use crate::theory::{self, TheoryContext};
use crate::topology::{metropolis_matrix, strategy_matrices, CombinationMatrix, Strategy};

/// A config resolved into live objects: graph, models, minimizer, baseline.
pub struct ResolvedExperiment {
    pub cfg: ExperimentConfig,
    pub cm: CombinationMatrix,
    pub models: Vec<LossModel>,
    pub attack: AttackConfig,
    pub w_star: DVector<f64>,
    /// `J(w*)` under the same attack configuration.
    pub j_star: f64,
}

impl ResolvedExperiment {
    pub fn training_for(&self, strategy: Strategy, seed: u64) -> TrainingConfig {
        TrainingConfig {
            mu: self.cfg.training.mu,
            batch: self.cfg.training.batch,
            horizon: self.cfg.training.horizon,
            strategy,
            seed,
            init: self.cfg.training.init.clone(),
            snapshot_stride: self.cfg.training.snapshot_stride,
        }
    }

    pub fn theory_context(&self) -> Result<TheoryContext, HarnessError> {
        Ok(theory::build_context(&self.models, &self.w_star, &self.attack, 0, self.cfg.seed)?)
    }
}

/// Build graph, ensemble, and minimizer from a validated config.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedExperiment, HarnessError> {
    cfg.validate()?;
    let graph = cfg.graph.build()?;
    let cm = metropolis_matrix(&graph).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
    let models = build_ensemble(&cfg.loss)?;
    if models.len() != cm.k() {
        return Err(HarnessError::ConfigInvalid(format!(
            "graph has {} agents but the loss ensemble has {}",
            cm.k(),
            models.len()
        )));
    }
    let attack = cfg.attack();
    let guess = minimizer_guess(&models, &cfg.loss);
    let max_step = 0.25 * (1.0 + guess.norm());
    let w_star = find_minimizer(&models, &attack, guess, max_step)?;
    let j_star = network_risk(&models, &w_star, &attack)?;
    Ok(ResolvedExperiment { cfg: cfg.clone(), cm, models, attack, w_star, j_star })
}

/// Paths of the files a suite run produces.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteArtifacts {
    pub out_dir: PathBuf,
    pub trace_csv: PathBuf,
    pub meta_json: PathBuf,
    pub theory_csv: Option<PathBuf>,
    pub escape_csv: Option<PathBuf>,
    pub landscape_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetaReport<'a> {
    config: &'a ExperimentConfig,
    regime: RegimeFlags,
    agents: usize,
    model_dim: usize,
    rho_alpha: f64,
    w_star: Vec<f64>,
    j_star: f64,
    diverged: Vec<DivergedRun>,
    escape_inconclusive: usize,
}

#[derive(Serialize, Debug, Clone)]
struct DivergedRun {
    strategy: String,
    trial: usize,
    iteration: usize,
}

struct TrialTrace {
    /// (iteration, ‖W̃‖², consensus distance, per-agent excess risks)
    rows: Vec<(usize, f64, f64, Vec<f64>)>,
    snapshots: Vec<NetworkState>,
    diverged: Option<usize>,
}

/// Guard owning `<out>/.lock`; removed on drop so one process owns a
/// directory at a time.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock, HarnessError> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(HarnessError::Locked(dir.display().to_string()))
            }
            Err(e) => Err(HarnessError::Io(path.display().to_string(), e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn run_one_trial(
    exp: &ResolvedExperiment,
    strategy: Strategy,
    trial: u64,
    keep_snapshots: bool,
) -> Result<TrialTrace, HarnessError> {
    let seed = derive_seed(exp.cfg.seed, &[stream::TRIAL, trial]);
    let cfg = exp.training_for(strategy, seed);
    let traj = dynamics::run(&exp.models, &cfg, &exp.attack, &exp.cm, &exp.w_star)?;
    let mut rows = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        let per_agent: Vec<f64> = s
            .rows()
            .iter()
            .map(|w| Ok::<f64, HarnessError>(network_risk(&exp.models, w, &exp.attack)? - exp.j_star))
            .collect::<Result<_, _>>()?;
        rows.push((
            s.iteration(),
            s.error_vector().norm_squared(),
            metrics::consensus_distance(s),
            per_agent,
        ));
    }
    Ok(TrialTrace {
        rows,
        snapshots: if keep_snapshots { traj.snapshots } else { Vec::new() },
        diverged: traj.diverged,
    })
}

/// Aggregated trace rows for one strategy (averaged over completed trials).
fn aggregate_trace(
    strategy: Strategy,
    trials: &[TrialTrace],
    agents: usize,
) -> Vec<metrics::TraceRecord> {
    let n_rows = trials.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    let mut out = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let n = trials[0].rows[i].0;
        let mut msq = 0.0;
        let mut cdist = 0.0;
        let mut per_agent = vec![0.0; agents];
        for t in trials {
            let (_, sq, cd, pa) = &t.rows[i];
            msq += sq;
            cdist += cd;
            for (acc, v) in per_agent.iter_mut().zip(pa) {
                *acc += v;
            }
        }
        let count = trials.len() as f64;
        msq /= count;
        cdist /= count;
        for v in &mut per_agent {
            *v /= count;
        }
        let er = per_agent.iter().sum::<f64>() / agents as f64;
        out.push(metrics::TraceRecord {
            n,
            strategy,
            er_empirical: er,
            consensus_distance: cdist,
            mean_sq_error: msq,
            per_agent_excess: per_agent,
            escaped_fraction: None,
        });
    }
    out
}

fn write_trace_csv(
    path: &Path,
    records: &[metrics::TraceRecord],
    agents: usize,
) -> Result<(), HarnessError> {
    let mut header: Vec<String> = vec![
        "n".into(),
        "strategy".into(),
        "er_empirical".into(),
        "consensus_distance".into(),
        "mean_sq_error".into(),
    ];
    for a in 0..agents {
        header.push(format!("er_agent_{a}"));
    }
    let mut table = CsvTable::with_header(header);
    for r in records {
        let mut row = vec![
            r.n.to_string(),
            r.strategy.name().to_string(),
            float17(r.er_empirical),
            float17(r.consensus_distance),
            float17(r.mean_sq_error),
        ];
        for v in &r.per_agent_excess {
            row.push(float17(*v));
        }
        table.push_row(row);
    }
    table.write(path)
}

/// Emit theory.csv: closed-form predictions and the exact linear oracle.
pub fn write_theory_csv(
    exp: &ResolvedExperiment,
    ctx: &TheoryContext,
    n_max: usize,
    path: &Path,
) -> Result<(), HarnessError> {
    let mu = exp.cfg.training.mu;
    let batch = exp.cfg.training.batch;
    let mut exact = Vec::new();
    for strategy in Strategy::ALL {
        let sm = strategy_matrices(&exp.cm, strategy);
        exact.push(theory::er_exact_linear(ctx, &sm, mu, batch, n_max));
    }
    let mut table = CsvTable::new(&[
        "n",
        "e_n",
        "f_con",
        "f_dif",
        "er_cen",
        "er_con",
        "er_dif",
        "er_exact_cen",
        "er_exact_con",
        "er_exact_dif",
    ]);
    for n in 0..=n_max {
        let pred = theory::predict_er(ctx, &exp.cm, mu, batch, n)?;
        // exact[] is ordered by Strategy::ALL = [cen, dif, con]
        table.push_row(vec![
            n.to_string(),
            float17(pred.e_n),
            float17(pred.f_con_n),
            float17(pred.f_dif_n),
            float17(pred.er_cen),
            float17(pred.er_con),
            float17(pred.er_dif),
            float17(exact[0][n]),
            float17(exact[2][n]),
            float17(exact[1][n]),
        ]);
    }
    table.write(path)
}

/// Run everything a config asks for into `out_dir`.
///
/// Strategies share paired trial seeds, trials run in parallel with ordered
/// reduction, and a rerun with the same config and seed is byte-identical at
/// any thread count.
pub fn run_suite(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<SuiteArtifacts, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::ConfigInvalid(format!("thread pool: {e}")))?;
    pool.install(|| run_suite_inner(cfg, out_dir))
}

fn run_suite_inner(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SuiteArtifacts, HarnessError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::Io(out_dir.display().to_string(), e))?;
    let _lock = DirLock::acquire(out_dir)?;

    let exp = resolve(cfg)?;
    let agents = exp.models.len();
    let keep_snapshots = cfg.escape.is_some();

    let mut records: Vec<metrics::TraceRecord> = Vec::new();
    let mut diverged: Vec<DivergedRun> = Vec::new();
    let mut per_strategy_snapshots: Vec<(Strategy, Vec<Vec<NetworkState>>)> = Vec::new();

    for &strategy in &cfg.training.strategies {
        let trials: Result<Vec<TrialTrace>, HarnessError> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| run_one_trial(&exp, strategy, t, keep_snapshots))
            .collect();
        let trials = trials?;
        for (t, trace) in trials.iter().enumerate() {
            if let Some(iter) = trace.diverged {
                diverged.push(DivergedRun {
                    strategy: strategy.name().to_string(),
                    trial: t,
                    iteration: iter,
                });
            }
        }
        records.extend(aggregate_trace(strategy, &trials, agents));
        if keep_snapshots {
            per_strategy_snapshots
                .push((strategy, trials.into_iter().map(|t| t.snapshots).collect()));
        }
    }

    let trace_csv = out_dir.join("trace.csv");
    write_trace_csv(&trace_csv, &records, agents)?;

    let mut theory_csv = None;
    if let Some(opts) = &cfg.theory {
        let ctx = exp.theory_context()?;
        let path = out_dir.join("theory.csv");
        write_theory_csv(&exp, &ctx, opts.n_max, &path)?;
        theory_csv = Some(path);
    }

    let mut escape_csv = None;
    let mut escape_inconclusive = 0usize;
    if let Some(opts) = &cfg.escape {
        let test = BasinTest {
            gd_steps: opts.gd_steps,
            gd_mu: opts.gd_mu,
            tol: opts.tol,
            bound: opts.bound,
        };
        let mut table = CsvTable::new(&["n", "strategy", "escaped_fraction", "trials"]);
        for (strategy, trial_snapshots) in &per_strategy_snapshots {
            let n_rows = trial_snapshots.iter().map(|s| s.len()).min().unwrap_or(0);
            for i in (0..n_rows).step_by(opts.eval_stride.max(1)) {
                if trial_snapshots[0][i].iteration() == 0 {
                    continue;
                }
                let verdicts: Result<Vec<(usize, usize)>, HarnessError> = trial_snapshots
                    .par_iter()
                    .map(|snaps| {
                        let mut escaped = 0;
                        let mut inconclusive = 0;
                        for w in snaps[i].rows() {
                            match metrics::basin_verdict(
                                w,
                                &exp.w_star,
                                &exp.models,
                                &exp.attack,
                                &test,
                            )? {
                                BasinVerdict::Escaped => escaped += 1,
                                BasinVerdict::Inconclusive => inconclusive += 1,
                                BasinVerdict::Inside => {}
                            }
                        }
                        Ok((escaped, inconclusive))
                    })
                    .collect();
                let verdicts = verdicts?;
                let escaped: usize = verdicts.iter().map(|v| v.0).sum();
                escape_inconclusive += verdicts.iter().map(|v| v.1).sum::<usize>();
                let total = (trial_snapshots.len() * agents) as f64;
                table.push_row(vec![
                    trial_snapshots[0][i].iteration().to_string(),
                    strategy.name().to_string(),
                    float17(escaped as f64 / total),
                    trial_snapshots.len().to_string(),
                ]);
            }
        }
        let path = out_dir.join("escape.csv");
        table.write(&path)?;
        escape_csv = Some(path);
    }

    let mut landscape_csv = None;
    if let Some(opts) = &cfg.landscape {
        let grid = opts.grid();
        let risk = |w: &DVector<f64>| {
            network_risk(&exp.models, w, &exp.attack).expect("risk evaluation")
        };
        let seed = derive_seed(cfg.seed, &[stream::LANDSCAPE]);
        let profile =
            crate::adversary::landscape_profile(risk, &exp.w_star, opts.n_dirs, &grid, seed);
        let mut table = CsvTable::new(&["dir", "alpha", "j"]);
        for d in 0..opts.n_dirs {
            for (j, &alpha) in grid.iter().enumerate() {
                table.push_row(vec![d.to_string(), float17(alpha), float17(profile[(d, j)])]);
            }
        }
        let path = out_dir.join("landscape.csv");
        table.write(&path)?;
        landscape_csv = Some(path);
    }

    let meta = MetaReport {
        config: cfg,
        regime: cfg.regime(),
        agents,
        model_dim: exp.w_star.len(),
        rho_alpha: exp.cm.spectral_radius_alpha(),
        w_star: exp.w_star.iter().copied().collect(),
        j_star: exp.j_star,
        diverged: diverged.clone(),
        escape_inconclusive,
    };
    let meta_json = out_dir.join("meta.json");
    let meta_text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_json, meta_text + "\n")
        .map_err(|e| HarnessError::Io(meta_json.display().to_string(), e))?;

    if let Some(d) = diverged.first() {
        return Err(HarnessError::Diverged {
            strategy: d.strategy.clone(),
            trial: d.trial,
            iteration: d.iteration,
        });
    }

    Ok(SuiteArtifacts {
        out_dir: out_dir.to_path_buf(),
        trace_csv,
        meta_json,
        theory_csv,
        escape_csv,
        landscape_csv,
    })
}

/// Per-batch noise moments for the `noise-stats` report.
#[derive(Debug, Serialize)]
pub struct NoiseStatsReport {
    pub batches: Vec<usize>,
    pub second_moments: Vec<f64>,
    pub fourth_moments: Vec<f64>,
    pub covariance_frobenius: Vec<f64>,
    /// log-log slope of ‖R̂_B‖_F against B.
    pub covariance_slope: f64,
    /// Frobenius gap of R̂_B against R̂_1/B, per batch size.
    pub scaling_gap: Vec<f64>,
    pub mean_max_abs: Vec<f64>,
    pub samples: usize,
}

/// Estimate noise moments at the resolved minimizer across batch sizes.
pub fn noise_stats(
    exp: &ResolvedExperiment,
    batches: &[usize],
    samples: usize,
    seed: u64,
) -> Result<NoiseStatsReport, HarnessError> {
    let model = &exp.models[0];
    let mut second = Vec::new();
    let mut fourth = Vec::new();
    let mut frob = Vec::new();
    let mut gaps = Vec::new();
    let mut mean_abs = Vec::new();
    let mut base: Option<nalgebra::DMatrix<f64>> = None;
    for &b in batches {
        let stats =
            crate::noise::estimate_covariance(model, &exp.w_star, b, &exp.attack, samples, seed)?;
        second.push(stats.second_moment);
        fourth.push(stats.fourth_moment);
        frob.push(stats.covariance.norm());
        mean_abs.push(stats.mean.amax());
        match &base {
            None => {
                base = Some(stats.covariance.clone());
                gaps.push(0.0);
            }
            Some(r1) => {
                let scaled = r1 / b as f64;
                gaps.push((&stats.covariance - &scaled).norm() / scaled.norm());
            }
        }
    }
    let log_b: Vec<f64> = batches.iter().map(|&b| (b as f64).ln()).collect();
    let log_f: Vec<f64> = frob.iter().map(|f| f.ln()).collect();
    let covariance_slope = crate::linalg::fit_slope(&log_b, &log_f);
    Ok(NoiseStatsReport {
        batches: batches.to_vec(),
        second_moments: second,
        fourth_moments: fourth,
        covariance_frobenius: frob,
        covariance_slope,
        scaling_gap: gaps,
        mean_max_abs: mean_abs,
        samples,
    })
}

/// `J(w*)` per agent, useful when inspecting fixtures.
pub fn local_risks_at(exp: &ResolvedExperiment, w: &DVector<f64>) -> Result<Vec<f64>, HarnessError> {
    exp.models
        .iter()
        .map(|m| Ok(local_risk(m, w, &exp.attack)?))
        .collect()
}
