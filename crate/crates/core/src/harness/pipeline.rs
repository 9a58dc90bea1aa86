use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use super::bootstrap::{bootstrap_aggregate, bootstrap_resample};
use super::config::{BehaviorPolicy, ExperimentConfig, MethodSpec};
use crate::deferral::{
    augmented_mdp_baseline, deploy, learn_deferral, learn_deferral_one_step, learn_deferral_stationary, DeferralMethod,
    DeferralPolicy, Deployment, EffectivePolicy, LearnSettings,
};
use crate::envs::BuiltEnv;
use crate::mdp::{sample_dataset, Dataset, TimeIndexedPolicy};
use crate::posterior::DynamicsPosterior;
use crate::uncertainty::{decompose_at_deferral, delay_heatmap, DecomposeSettings};
use crate::{Error, Result, VERSION};

/// Row label for the target policy deployed without deferral.
pub const TARGET_LABEL: &str = "pi_tar";
/// Row label for the expert policy deployed throughout, without cost.
pub const EXPERT_LABEL: &str = "pi_0";

/// Comment lines written at the top of every emitted file.
pub fn file_header(config_hash: &str) -> Vec<String> {
    vec![format!("sltd version={VERSION}"), format!("config_hash={config_hash}")]
}

#[derive(Debug, Clone, Serialize)]
pub struct FileMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

impl FileMeta {
    pub fn new(config_hash: &str) -> Self {
        Self {
            tool: "sltd",
            version: VERSION,
            config_hash: config_hash.to_string(),
        }
    }
}

/// A JSON document with a `meta` block.
#[derive(Serialize)]
pub struct WithMeta<'a, T: Serialize> {
    pub meta: FileMeta,
    #[serde(flatten)]
    pub body: &'a T,
}

/// Wraps a stage's error with its name and the config hash.
pub fn stage<T>(name: &str, config_hash: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        Error::Config(_) | Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name.to_string(),
            config_hash: config_hash.to_string(),
            source: Box::new(other),
        },
    })
}

/// Number of training visits to each `(t, s)`, row-major `[t][s]`.
pub fn visit_counts(data: &Dataset) -> Vec<f64> {
    let mut w = vec![0.0; data.horizon * data.num_states];
    for tr in &data.trajectories {
        for t in 0..data.horizon {
            w[t * data.num_states + tr.states[t]] += 1.0;
        }
    }
    w
}

/// Deferral scores summed over one axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMarginals {
    /// `sum_s p(t, s) / S`
    pub by_time_uniform: Vec<f64>,
    /// `sum_s n(t, s) p(t, s) / N`: expected deferrals at `t` per training episode.
    pub by_time_visit: Vec<f64>,
    /// `sum_t p(t, s) / T`
    pub by_state_uniform: Vec<f64>,
    /// `sum_t n(t, s) p(t, s) / N`
    pub by_state_visit: Vec<f64>,
}

impl ScoreMarginals {
    pub fn new(deferral: &DeferralPolicy, visits: &[f64], n_episodes: usize) -> Self {
        let (horizon, n_s) = (deferral.horizon(), deferral.num_states());
        let n = n_episodes.max(1) as f64;
        let mut m = ScoreMarginals {
            by_time_uniform: vec![0.0; horizon],
            by_time_visit: vec![0.0; horizon],
            by_state_uniform: vec![0.0; n_s],
            by_state_visit: vec![0.0; n_s],
        };
        for t in 0..horizon {
            for s in 0..n_s {
                let p = deferral.score(t, s);
                let w = visits[t * n_s + s];
                m.by_time_uniform[t] += p / n_s as f64;
                m.by_time_visit[t] += w * p / n;
                m.by_state_uniform[s] += p / horizon as f64;
                m.by_state_visit[s] += w * p / n;
            }
        }
        m
    }

    /// Rows `axis,index,uniform,visit_weighted`.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: &[String]) -> Result<()> {
        for line in comment {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["axis", "index", "uniform", "visit_weighted"])?;
        for (axis, u, v) in [
            ("t", &self.by_time_uniform, &self.by_time_visit),
            ("s", &self.by_state_uniform, &self.by_state_visit),
        ] {
            for (i, (a, b)) in u.iter().zip(v).enumerate() {
                w.write_record([axis.to_string(), i.to_string(), a.to_string(), b.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// The most frequent first deferral `(t, s)` of a deployment; ties go to the
/// earliest time, then the lowest state.
pub fn primary_deferral_point(dep: &Deployment) -> Option<(usize, usize)> {
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for tr in &dep.dataset.trajectories {
        if let Some(t) = tr.first_deferral() {
            *counts.entry((t, tr.states[t])).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(k, _)| k)
}

pub fn behavior_policy<'a>(env: &'a BuiltEnv, which: BehaviorPolicy, uniform: &'a TimeIndexedPolicy) -> &'a TimeIndexedPolicy {
    match which {
        BehaviorPolicy::Expert => &env.pi_0,
        BehaviorPolicy::Target => &env.pi_tar,
        BehaviorPolicy::Uniform => uniform,
    }
}

/// Learns one method's deferral policy. `pooled` is required for the stationary variant.
pub fn learn_method(
    spec: &MethodSpec,
    env: &BuiltEnv,
    post: &DynamicsPosterior,
    pooled: Option<&DynamicsPosterior>,
    seed: u64,
) -> Result<DeferralPolicy> {
    let settings = LearnSettings {
        tau: spec.tau,
        cost: spec.resolved_cost(&env.mdp),
        n_samples: spec.n_samples,
        seed,
        defer_value: spec.defer_value,
    };
    match spec.method {
        DeferralMethod::Sltd => learn_deferral(post, &env.pi_tar, &env.pi_0, &settings),
        DeferralMethod::OneStep => learn_deferral_one_step(post, &env.pi_tar, &env.pi_0, &settings),
        DeferralMethod::Stationary => {
            let pooled = pooled.ok_or_else(|| crate::error::invalid("stationary learner needs a pooled posterior"))?;
            learn_deferral_stationary(pooled, &env.pi_tar, &env.pi_0, &settings)
        }
        DeferralMethod::Augmented => {
            augmented_mdp_baseline(post, &env.pi_tar, &env.pi_0, settings.cost, spec.augmented_mode)
        }
    }
}

/// One row of the results table; `None` fields are written as `n/a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub mean: Option<f64>,
    /// Twice the standard error over runs.
    pub two_se: Option<f64>,
    /// Twice the within-run evaluation standard error, averaged over runs.
    pub eval_two_se: Option<f64>,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub seed_index: usize,
    pub bootstrap_index: usize,
    pub mean_value: f64,
    pub std_err: f64,
}

/// Summary returned by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub runs: Vec<RunRecord>,
    pub files: Vec<PathBuf>,
}

impl ExperimentSummary {
    pub fn row(&self, method: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

/// `method,mean,two_se,eval_two_se,n_runs`
pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W, comment: &[String]) -> Result<()> {
    for line in comment {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "mean", "two_se", "eval_two_se", "n_runs"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            fmt_opt(r.mean),
            fmt_opt(r.two_se),
            fmt_opt(r.eval_two_se),
            r.n_runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    header: Vec<String>,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, body: &T, hash: &str) -> Result<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, &WithMeta { meta: FileMeta::new(hash), body })?;
        writeln!(f)?;
        Ok(())
    }
}

/// Score histogram and deferral-set size over a grid of thresholds.
fn write_tau_sweep(out: &mut Outputs, learned: &[(String, DeferralPolicy)], visits: &[f64], n: usize) -> Result<()> {
    let header = out.header.clone();
    let mut f = out.create("tau_sweep.csv")?;
    for line in &header {
        writeln!(f, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(&mut f);
    w.write_record(["method", "tau", "n_cells", "visit_weighted_deferrals"])?;
    for (label, d) in learned {
        for k in 1..20 {
            let tau = k as f64 / 20.0;
            let dd = d.with_threshold(tau);
            let mass: f64 = dd.rule().iter().zip(visits).filter(|(g, _)| **g).map(|(_, w)| w).sum::<f64>() / n as f64;
            w.write_record([label.clone(), tau.to_string(), dd.deferral_set().len().to_string(), mass.to_string()])?;
        }
    }
    w.flush()?;
    drop(w);

    let mut f = out.create("score_histogram.csv")?;
    for line in &header {
        writeln!(f, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(&mut f);
    w.write_record(["method", "bin_lo", "bin_hi", "count"])?;
    for (label, d) in learned {
        let mut counts = [0usize; 10];
        for &p in d.scores() {
            counts[((p * 10.0) as usize).min(9)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            w.write_record([label.clone(), (b as f64 / 10.0).to_string(), ((b + 1) as f64 / 10.0).to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the full pipeline, writing into the configured output directory
/// (or `SLTD_OUT_DIR` when set).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment_in(cfg, &cfg.resolved_output_dir())
}

/// Runs the full pipeline, writing into `dir`.
///
/// For every data seed and bootstrap replicate: generate data, fit the
/// posteriors, learn every configured method and deploy it on the true
/// environment with shared evaluation seeds. Policies, marginals, heatmaps
/// and decompositions are written for the first run. The results table
/// aggregates over all runs.
pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let hash = cfg.hash();
    fs::create_dir_all(dir).map_err(|e| Error::Stage {
        stage: "output".into(),
        config_hash: hash.clone(),
        source: Box::new(e.into()),
    })?;
    let mut out = Outputs {
        dir: dir.to_path_buf(),
        header: file_header(&hash),
        files: Vec::new(),
    };
    stage("output", &hash, || {
        let mut f = out.create("config.toml")?;
        for line in &out.header {
            writeln!(f, "# {line}")?;
        }
        f.write_all(cfg.to_toml_string()?.as_bytes())?;
        Ok(())
    })?;

    let env = stage("env", &hash, || cfg.build_env())?;
    let uniform = TimeIndexedPolicy::uniform(env.mdp.horizon(), env.mdp.num_states(), env.mdp.num_actions());
    let behavior = behavior_policy(&env, cfg.dataset.behavior, &uniform);
    let labels: Vec<String> = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let dup = cfg.methods[..i].iter().filter(|o| o.method == m.method).count();
            if dup == 0 {
                m.method.to_string()
            } else {
                format!("{}#{dup}", m.method)
            }
        })
        .collect();
    let needs_pooled = cfg.methods.iter().any(|m| m.method == DeferralMethod::Stationary);
    let (n_seeds, n_boot) = (cfg.bootstrap.n_seeds, cfg.bootstrap.n_bootstraps);
    let mut runs: Vec<RunRecord> = Vec::new();

    for seed_index in 0..n_seeds {
        let data_seed = cfg.dataset.seed + seed_index as u64;
        let full = stage("gen-data", &hash, || {
            sample_dataset(&env.mdp, behavior, cfg.dataset.n_episodes, data_seed, &format!("{:?}", cfg.dataset.behavior).to_lowercase())
        })?;
        let eval_seed = cfg.evaluation.seed + seed_index as u64;
        for bootstrap_index in 0..n_boot {
            let first = seed_index == 0 && bootstrap_index == 0;
            let run = (seed_index * n_boot + bootstrap_index) as u64;
            info!("run {} / {}", run + 1, n_seeds * n_boot);
            let data = if n_boot == 1 {
                full.clone()
            } else {
                stage("bootstrap", &hash, || bootstrap_resample(&full, crate::seed::derive(data_seed, bootstrap_index as u64)))?
            };
            let post = stage("fit", &hash, || DynamicsPosterior::fit(&data, &cfg.fit_options(cfg.posterior.pooled)))?;
            let pooled = if needs_pooled {
                Some(stage("fit", &hash, || DynamicsPosterior::fit(&data, &cfg.fit_options(true)))?)
            } else {
                None
            };
            let mut learned: Vec<(String, DeferralPolicy)> = Vec::new();
            for (spec, label) in cfg.methods.iter().zip(&labels) {
                let d = stage(&format!("learn:{label}"), &hash, || {
                    learn_method(spec, &env, &post, pooled.as_ref(), spec.seed + run)
                })?;
                learned.push((label.clone(), d));
            }

            let n_eval = cfg.evaluation.n_eval_episodes;
            let mut deployments: Vec<(String, Deployment)> = Vec::new();
            let horizon = env.mdp.horizon();
            let n_s = env.mdp.num_states();
            let baselines = [
                (TARGET_LABEL.to_string(), DeferralPolicy::never(horizon, n_s)),
                (EXPERT_LABEL.to_string(), DeferralPolicy::always(horizon, n_s, 0.0)),
            ];
            for (label, d) in baselines.iter().chain(learned.iter()) {
                let dep = stage(&format!("deploy:{label}"), &hash, || deploy(&env.mdp, &env.pi_tar, &env.pi_0, d, n_eval, eval_seed))?;
                runs.push(RunRecord {
                    method: label.clone(),
                    seed_index,
                    bootstrap_index,
                    mean_value: dep.mean_value,
                    std_err: dep.std_err,
                });
                deployments.push((label.clone(), dep));
            }

            if first {
                stage("export", &hash, || {
                    let mut f = out.create("train_data.csv")?;
                    data.write_csv(&mut f, &out.header)?;
                    out.json("posterior.json", &post, &hash)?;
                    let visits = visit_counts(&data);
                    for (label, d) in &learned {
                        let mut f = out.create(&format!("policy_{label}.csv"))?;
                        d.write_csv(&mut f, &out.header)?;
                        let mut f = out.create(&format!("marginals_{label}.csv"))?;
                        ScoreMarginals::new(d, &visits, data.len()).write_csv(&mut f, &out.header)?;
                    }
                    if cfg.evaluation.tau_sweep {
                        write_tau_sweep(&mut out, &learned, &visits, data.len())?;
                    }
                    Ok(())
                })?;
                for (spec, (label, d)) in cfg.methods.iter().zip(&learned) {
                    if !cfg.evaluation.uncertainty_methods.contains(&spec.method) {
                        continue;
                    }
                    stage(&format!("heatmap:{label}"), &hash, || {
                        let h = delay_heatmap(&env.mdp, &env.pi_tar, &env.pi_0, d, cfg.evaluation.n_uncertainty_rollouts, cfg.evaluation.seed)?;
                        let mut f = out.create(&format!("heatmap_{label}.csv"))?;
                        for line in &out.header {
                            writeln!(f, "# {line}")?;
                        }
                        h.write_csv(&mut f)
                    })?;
                    let dep = &deployments.iter().find(|(l, _)| l == label).expect("deployed").1;
                    let Some((t_d, s_d)) = primary_deferral_point(dep) else {
                        warn!("{label} never deferred during evaluation; no decomposition written");
                        continue;
                    };
                    stage(&format!("decompose:{label}"), &hash, || {
                        let model = if spec.method == DeferralMethod::Stationary {
                            pooled.as_ref().expect("pooled posterior fitted")
                        } else {
                            &post
                        };
                        let eff = EffectivePolicy::new(&env.pi_tar, &env.pi_0, d)?;
                        let settings = DecomposeSettings {
                            n_outer: cfg.evaluation.n_outer,
                            n_inner: cfg.evaluation.n_inner,
                            outcome: cfg.evaluation.outcome,
                            seed: cfg.evaluation.seed,
                        };
                        let report = decompose_at_deferral(model, &eff, s_d, t_d, &settings)?;
                        out.json(&format!("decomposition_{label}.json"), &report, &hash)
                    })?;
                }
            }
        }
    }

    let mut rows = Vec::new();
    let mut all_labels: Vec<String> = vec![TARGET_LABEL.into(), EXPERT_LABEL.into()];
    all_labels.extend(labels.iter().cloned());
    for m in DeferralMethod::ALL {
        if !labels.iter().any(|l| l == m.as_str()) {
            all_labels.push(m.as_str().to_string());
        }
    }
    for label in all_labels {
        let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.method == label).collect();
        if mine.is_empty() {
            rows.push(ResultRow {
                method: label,
                mean: None,
                two_se: None,
                eval_two_se: None,
                n_runs: 0,
            });
            continue;
        }
        let agg = bootstrap_aggregate(&mine.iter().map(|r| r.mean_value).collect::<Vec<_>>())?;
        let eval_se = mine.iter().map(|r| r.std_err).sum::<f64>() / mine.len() as f64;
        rows.push(ResultRow {
            method: label,
            mean: Some(agg.mean),
            two_se: Some(agg.two_se()),
            eval_two_se: Some(2.0 * eval_se),
            n_runs: agg.n_runs,
        });
    }

    stage("report", &hash, || {
        let mut f = out.create("results.csv")?;
        write_results_csv(&rows, &mut f, &out.header)?;
        let mut f = out.create("runs.csv")?;
        for line in &out.header {
            writeln!(f, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(&mut f);
        for r in &runs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;

    Ok(ExperimentSummary {
        config_hash: hash,
        output_dir: dir.to_path_buf(),
        rows,
        runs,
        files: out.files,
    })
}
