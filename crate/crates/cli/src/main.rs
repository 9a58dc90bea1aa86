use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use sltd::deferral::{deploy, DeferralMethod, DeferralPolicy, EffectivePolicy};
use sltd::envs::{BuiltEnv, EnvSpec};
use sltd::harness::{
    behavior_policy, file_header, learn_method, run_experiment, BehaviorPolicy, ExperimentConfig, FileMeta, MethodSpec,
    WithMeta,
};
use sltd::mdp::{sample_dataset, Dataset, Provenance, TimeIndexedPolicy};
use sltd::posterior::{DynamicsPosterior, NormalGammaPrior, RewardKind};
use sltd::uncertainty::{decompose_at_deferral, delay_heatmap, DecomposeSettings, OutcomeKind};
use sltd::Error;

#[derive(Parser)]
#[command(name = "sltd", version, about = "Sequential learning-to-defer experiments on tabular MDPs")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvName {
    SyntheticChain,
    Vitals,
}

#[derive(Args)]
struct EnvArgs {
    /// Experiment config whose environment section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in environment (overrides the config's environment kind).
    #[arg(long, value_enum)]
    env: Option<EnvName>,
}

impl EnvArgs {
    fn load(&self) -> sltd::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::synthetic_chain_default(),
        };
        match self.env {
            Some(EnvName::SyntheticChain) => cfg.env = EnvSpec::SyntheticChain,
            Some(EnvName::Vitals) => cfg.env = EnvSpec::Vitals,
            None => {}
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    Categorical,
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a training dataset from the environment.
    GenData {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, value_enum, default_value = "expert")]
        policy: BehaviorArg,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the dynamics posterior to a dataset.
    Fit {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        data: PathBuf,
        /// Share one set of counts across all time steps.
        #[arg(long)]
        pooled: bool,
        /// Reward likelihood (default: the config's, else categorical).
        #[arg(long, value_enum)]
        reward: Option<RewardArg>,
        #[arg(long)]
        prior_strength: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a deferral policy from a fitted posterior.
    Learn {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, value_parser = parse_method, default_value = "sltd")]
        method: DeferralMethod,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Per-step deferral cost (default: 0.05 times the reward scale).
        #[arg(long)]
        cost: Option<f64>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a deferral policy (or the bare target policy) on the true environment.
    Deploy {
        #[command(flatten)]
        env: EnvArgs,
        /// Deferral policy CSV; omit to deploy the target policy alone.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 77)]
        seed: u64,
        /// Write the deployed trajectories here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose the outcome variance after deferring at (t, s).
    Decompose {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 200)]
        outer: usize,
        #[arg(long, default_value_t = 200)]
        inner: usize,
        #[arg(long, value_enum, default_value = "terminal")]
        outcome: OutcomeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delayed-deferral variance heatmap on the true environment.
    Heatmap {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Raise dataset, evaluation and bootstrap sizes to the large-scale preset.
        #[arg(long)]
        paper_scale: bool,
        /// Also emit score histograms and deferral-set sizes over a grid of thresholds.
        #[arg(long)]
        tau_sweep: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the environment's MDP and both policies as JSON.
    Export {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BehaviorArg {
    Expert,
    Target,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Terminal,
    Cumulative,
}

fn parse_method(s: &str) -> Result<DeferralMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn create(path: &Path) -> sltd::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: serde::Serialize>(path: &Path, hash: &str, body: &T) -> sltd::Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, &WithMeta { meta: FileMeta::new(hash), body })?;
    writeln!(f)?;
    Ok(())
}

fn read_posterior(path: &Path) -> sltd::Result<DynamicsPosterior> {
    let mut value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("meta");
    }
    DynamicsPosterior::from_json(&value.to_string())
}

fn read_policy(path: &Path) -> sltd::Result<DeferralPolicy> {
    DeferralPolicy::read_csv(BufReader::new(File::open(path)?))
}

fn header_lines(hash: &str, what: &str) -> Vec<String> {
    let mut h = file_header(hash);
    h.push(what.to_string());
    h
}

fn run(cli: Cli) -> sltd::Result<()> {
    match cli.command {
        Command::GenData { env, policy, episodes, seed, out } => {
            let cfg = env.load()?;
            let built = cfg.build_env()?;
            let which = match policy {
                BehaviorArg::Expert => BehaviorPolicy::Expert,
                BehaviorArg::Target => BehaviorPolicy::Target,
                BehaviorArg::Uniform => BehaviorPolicy::Uniform,
            };
            let uniform = uniform_like(&built);
            let label = format!("{which:?}").to_lowercase();
            let data = sample_dataset(&built.mdp, behavior_policy(&built, which, &uniform), episodes, seed, &label)?;
            data.write_csv(create(&out)?, &header_lines(&cfg.hash(), &format!("policy={label} seed={seed}")))?;
            println!("wrote {} episodes to {}", data.len(), out.display());
        }
        Command::Fit { env, data, pooled, reward, prior_strength, out } => {
            let mut cfg = env.load()?;
            if let Some(r) = reward {
                cfg.posterior.reward = match r {
                    RewardArg::Categorical => RewardKind::Categorical { support: None },
                    RewardArg::Gaussian => RewardKind::Gaussian { prior: NormalGammaPrior::default() },
                };
            }
            if let Some(p) = prior_strength {
                cfg.posterior.prior_strength = p;
            }
            cfg.validate()?;
            let built = cfg.build_env()?;
            let m = &built.mdp;
            let dataset = Dataset::read_csv(BufReader::new(File::open(&data)?), m.num_states(), m.num_actions(), Provenance::default())?;
            let post = DynamicsPosterior::fit(&dataset, &cfg.fit_options(pooled))?;
            write_json(&out, &cfg.hash(), &post)?;
            println!("fitted posterior on {} episodes -> {}", dataset.len(), out.display());
        }
        Command::Learn { env, method, posterior, tau, cost, samples, seed, out } => {
            let cfg = env.load()?;
            let built = cfg.build_env()?;
            let post = read_posterior(&posterior)?;
            let spec = MethodSpec {
                tau,
                cost,
                n_samples: samples,
                seed,
                ..MethodSpec::new(method)
            };
            let pooled = post.is_pooled().then_some(&post);
            let d = learn_method(&spec, &built, &post, pooled, seed)?;
            d.write_csv(create(&out)?, &header_lines(&cfg.hash(), &format!("posterior={}", posterior.display())))?;
            println!("{method}: {} deferral cells -> {}", d.deferral_set().len(), out.display());
        }
        Command::Deploy { env, policy, episodes, seed, out } => {
            let cfg = env.load()?;
            let built = cfg.build_env()?;
            let d = match policy {
                Some(p) => read_policy(&p)?,
                None => DeferralPolicy::never(built.mdp.horizon(), built.mdp.num_states()),
            };
            let dep = deploy(&built.mdp, &built.pi_tar, &built.pi_0, &d, episodes, seed)?;
            println!("{}\t{:.4}\t± {:.4}", d.method(), dep.mean_value, 2.0 * dep.std_err);
            if let Some(path) = out {
                dep.dataset.write_csv(create(&path)?, &header_lines(&cfg.hash(), &format!("deploy seed={seed}")))?;
            }
        }
        Command::Decompose { env, posterior, policy, t, s, outer, inner, outcome, seed, out } => {
            let cfg = env.load()?;
            let built = cfg.build_env()?;
            let post = read_posterior(&posterior)?;
            let d = read_policy(&policy)?;
            let eff = EffectivePolicy::new(&built.pi_tar, &built.pi_0, &d)?;
            let settings = DecomposeSettings {
                n_outer: outer,
                n_inner: inner,
                outcome: match outcome {
                    OutcomeArg::Terminal => OutcomeKind::TerminalReward,
                    OutcomeArg::Cumulative => OutcomeKind::CumulativeReward,
                },
                seed,
            };
            let report = decompose_at_deferral(&post, &eff, s, t, &settings)?;
            write_json(&out, &cfg.hash(), &report)?;
            println!(
                "total {:.4}  aleatoric {:.4}  epistemic {:.4}",
                report.total_variance, report.aleatoric_variance, report.epistemic_variance
            );
        }
        Command::Heatmap { env, policy, rollouts, seed, out } => {
            let cfg = env.load()?;
            let built = cfg.build_env()?;
            let d = read_policy(&policy)?;
            let h = delay_heatmap(&built.mdp, &built.pi_tar, &built.pi_0, &d, rollouts, seed)?;
            let mut f = create(&out)?;
            for line in header_lines(&cfg.hash(), &format!("rollouts={rollouts} seed={seed}")) {
                writeln!(f, "# {line}")?;
            }
            h.write_csv(&mut f)?;
            println!("heatmap -> {}", out.display());
        }
        Command::Run { config, paper_scale, tau_sweep, out_dir } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            cfg.evaluation.tau_sweep |= tau_sweep;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir;
            }
            let summary = run_experiment(&cfg)?;
            println!("{:<12} {:>10} {:>10} {:>10}", "method", "mean", "2se(runs)", "2se(eval)");
            let show = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            for r in &summary.rows {
                println!("{:<12} {:>10} {:>10} {:>10}", r.method, show(r.mean), show(r.two_se), show(r.eval_two_se));
            }
            println!("outputs in {} (config {})", summary.output_dir.display(), &summary.config_hash[..12]);
        }
        Command::Export { env, out_dir } => {
            let cfg = env.load()?;
            let built = cfg.build_env()?;
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("mdp.json"), built.mdp.to_json()?)?;
            fs::write(out_dir.join("pi_tar.json"), built.pi_tar.to_json()?)?;
            fs::write(out_dir.join("pi_0.json"), built.pi_0.to_json()?)?;
            println!("exported to {}", out_dir.display());
        }
    }
    Ok(())
}

fn uniform_like(env: &BuiltEnv) -> TimeIndexedPolicy {
    TimeIndexedPolicy::uniform(env.mdp.horizon(), env.mdp.num_states(), env.mdp.num_actions())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
