use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use lgf::filter::{init_diffuse, init_from_state, DIFFUSE_KAPPA};
use lgf::harness::{self, ExperimentConfig, InitCov, DEFAULT_PF_GRID};
use lgf::io;
use lgf::laplace::compute_gamma;
use lgf::model::GaussianBelief;
use lgf::neural::{pva_decode, PvaParams, SpikeCounts};
use lgf::pf::pf_filter;
use lgf::rng::derive_seed;
use lgf::{lgf_filter, lgf_smooth, LgfConfig, PoissonPopulation, StateSpaceModel};

#[derive(Parser)]
#[command(name = "lgf", version, about = "Laplace-Gaussian filtering and decoding benchmarks")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `base_seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    W,
    Diffuse,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

impl OrderArg {
    fn config(self) -> LgfConfig {
        match self {
            OrderArg::One => LgfConfig::first_order(),
            OrderArg::Two => LgfConfig::second_order(),
        }
    }
}

#[derive(clap::Args)]
struct DataArgs {
    /// Directory written by `simulate`. Without it a data set is simulated
    /// from the configuration.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "init-cov", value_enum)]
    init_cov: Option<InitArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a population, a trajectory and spike counts.
    Simulate,
    /// Run the Laplace-Gaussian filter.
    Filter {
        #[arg(long, value_enum, default_value = "1")]
        order: OrderArg,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run the filter followed by the fixed-interval smoother.
    Smooth {
        #[arg(long, value_enum, default_value = "1")]
        order: OrderArg,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run the bootstrap particle filter.
    Pf {
        #[arg(long, default_value_t = 100)]
        particles: usize,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Decode with the population vector.
    Pva {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Accuracy of every configured method against the reference posterior.
    Table1,
    /// Decoding time of every configured method.
    Table2,
    /// Particle-filter error as a function of the particle count.
    PfScaling {
        /// Comma-separated particle counts.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
    },
    /// First-order filter from five perturbed initial means.
    Stability,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Filter { .. } => "filter",
            Command::Smooth { .. } => "smooth",
            Command::Pf { .. } => "pf",
            Command::Pva { .. } => "pva",
            Command::Table1 => "table1",
            Command::Table2 => "table2",
            Command::PfScaling { .. } => "pf-scaling",
            Command::Stability => "stability",
        }
    }
}

struct Dataset {
    model: StateSpaceModel<PoissonPopulation>,
    x0: lgf::nalgebra::DVector<f64>,
    observations: Vec<lgf::nalgebra::DVector<f64>>,
}

fn load_dataset(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<Dataset> {
    match dir {
        None => {
            let (model, x0, _, observations, _) = harness::simulate_replicate(cfg, 0)?;
            Ok(Dataset { model, x0, observations })
        }
        Some(dir) => {
            let pop = io::read_population(&dir.join("population.toml"))?;
            let observations = io::read_vectors_csv(&dir.join("spikes.csv"))?;
            let x0 = io::read_vectors_csv(&dir.join("initial_state.csv"))?
                .into_iter()
                .next()
                .context("initial_state.csv has no rows")?;
            if pop.state_dim() != cfg.d || x0.len() != cfg.d {
                bail!("data dimension does not match d = {} in the configuration", cfg.d);
            }
            let trans = cfg.transition()?;
            let gamma = compute_gamma(&pop, trans.w())?;
            let model = StateSpaceModel::new(trans, pop, gamma)?;
            Ok(Dataset { model, x0, observations })
        }
    }
}

fn initial_belief(cfg: &ExperimentConfig, arg: Option<InitArg>, data: &Dataset) -> Result<GaussianBelief> {
    let kind = match arg {
        Some(InitArg::W) => InitCov::W,
        Some(InitArg::Diffuse) => InitCov::Diffuse,
        None => cfg.init_cov,
    };
    Ok(match kind {
        InitCov::W => init_from_state(&data.x0, &data.model.transition)?,
        InitCov::Diffuse => init_diffuse(&data.x0, DIFFUSE_KAPPA)?,
    })
}

fn write_beliefs(path: &Path, beliefs: &[GaussianBelief]) -> Result<()> {
    let means: Vec<_> = beliefs.iter().map(|b| b.mean().clone()).collect();
    let covs: Vec<_> = beliefs.iter().map(|b| b.cov().clone()).collect();
    io::write_beliefs_csv(path, &means, &covs)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(out: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    let cfg_text = cfg.to_toml();
    let hash = Sha256::digest(cfg_text.as_bytes());
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    let mut m = toml::Table::new();
    m.insert("command".into(), command.into());
    m.insert("config_sha256".into(), hex.into());
    m.insert("base_seed".into(), toml::Value::String(cfg.base_seed.to_string()));
    m.insert("lgf_version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("config".into(), toml::Value::Table(toml::from_str(&cfg_text)?));
    write_text(&out.join("manifest.toml"), &toml::to_string(&m)?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    cfg.validate()?;
    let out = cli.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match &cli.command {
        Command::Simulate => {
            let (model, x0, truth, observations, _) = harness::simulate_replicate(&cfg, 0)?;
            io::write_population(&out.join("population.toml"), &model.observation)?;
            io::write_states_csv(&out.join("initial_state.csv"), &[x0])?;
            io::write_states_csv(&out.join("states.csv"), &truth.states)?;
            io::write_counts_csv(&out.join("spikes.csv"), &observations)?;
        }
        Command::Filter { order, data } => {
            let ds = load_dataset(&cfg, data.data.as_deref())?;
            let init = initial_belief(&cfg, data.init_cov, &ds)?;
            let fo = lgf_filter(&ds.model, &ds.observations, &init, &order.config())?;
            write_beliefs(&out.join("filtered.csv"), &fo.filtered)?;
            write_beliefs(&out.join("predictive.csv"), &fo.predictive)?;
        }
        Command::Smooth { order, data } => {
            let ds = load_dataset(&cfg, data.data.as_deref())?;
            let init = initial_belief(&cfg, data.init_cov, &ds)?;
            let fo = lgf_filter(&ds.model, &ds.observations, &init, &order.config())?;
            let so = lgf_smooth(&fo, &ds.model.transition)?;
            write_beliefs(&out.join("filtered.csv"), &fo.filtered)?;
            write_beliefs(&out.join("smoothed.csv"), &so.smoothed)?;
        }
        Command::Pf { particles, data } => {
            let ds = load_dataset(&cfg, data.data.as_deref())?;
            let init = initial_belief(&cfg, data.init_cov, &ds)?;
            let seed = derive_seed(cfg.base_seed, 1000 + *particles as u64);
            let po = pf_filter(&ds.model, &ds.observations, &init, *particles, seed)?;
            io::write_beliefs_csv(&out.join("pf.csv"), &po.means, &po.covs)?;
        }
        Command::Pva { data } => {
            let ds = load_dataset(&cfg, data.data.as_deref())?;
            let pva = PvaParams::from_population(&ds.model.observation)?;
            let counts = SpikeCounts::new(ds.observations.clone())?;
            let decoded = pva_decode(&counts, &pva, cfg.delta)?;
            io::write_states_csv(&out.join("pva.csv"), &decoded.states)?;
        }
        Command::Table1 => {
            let report = harness::run_table1(&cfg)?;
            let mut s = String::from("method,mise_vs_gold,se_vs_gold,mise_vs_truth,se_vs_truth,seconds,se_seconds\n");
            for r in &report.rows {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.method,
                    r.mise_vs_gold.mean,
                    r.mise_vs_gold.se,
                    r.mise_vs_truth.mean,
                    r.mise_vs_truth.se,
                    r.seconds.mean,
                    r.seconds.se
                )?;
            }
            writeln!(s, "posterior,,,{},{},,", report.posterior.mean, report.posterior.se)?;
            write_text(&out.join("table1.csv"), &s)?;
            if !report.reliable {
                eprintln!(
                    "warning: reference variance {:.3e} is not below 10% of the smallest method MISE",
                    report.gold_reference_variance
                );
            }
        }
        Command::Table2 => {
            let rows = harness::run_table2(&cfg)?;
            let mut s = String::from("method,seconds,se\n");
            for r in &rows {
                writeln!(s, "{},{},{}", r.method, r.seconds.mean, r.seconds.se)?;
            }
            write_text(&out.join("table2.csv"), &s)?;
        }
        Command::PfScaling { grid } => {
            let grid = grid.clone().unwrap_or_else(|| DEFAULT_PF_GRID.to_vec());
            if grid.contains(&0) {
                bail!("particle counts must be positive");
            }
            let sc = harness::run_pf_scaling(&cfg, &grid)?;
            let mut s = String::from("M,mise,se\n");
            for r in &sc.rows {
                writeln!(s, "{},{},{}", r.particles, r.mise, r.se)?;
            }
            write_text(&out.join("pf_scaling.csv"), &s)?;
            write_text(
                &out.join("pf_scaling_reference.csv"),
                &format!("method,mise\nLGF1,{}\nLGF2,{}\n", sc.lgf1_mise, sc.lgf2_mise),
            )?;
        }
        Command::Stability => {
            let (_, x0, _, _, _) = harness::simulate_replicate(&cfg, 0)?;
            let inits = harness::default_stability_inits(&x0);
            let run = harness::run_stability(&cfg, &inits)?;
            let d = cfg.d;
            let mut s = String::from("t,init");
            for j in 1..=d {
                write!(s, ",x{j}")?;
            }
            s.push('\n');
            for (k, traj) in run.trajectories.iter().enumerate() {
                for (t, m) in traj.iter().enumerate() {
                    write!(s, "{},{}", t + 1, k + 1)?;
                    for v in m.iter() {
                        write!(s, ",{v}")?;
                    }
                    s.push('\n');
                }
            }
            write_text(&out.join("stability.csv"), &s)?;
            let mut sp = String::from("t,spread\n");
            for (t, v) in run.spread.iter().enumerate() {
                writeln!(sp, "{},{v}", t + 1)?;
            }
            write_text(&out.join("spread.csv"), &sp)?;
            io::write_states_csv(&out.join("states.csv"), &run.truth.states)?;
        }
    }
    write_manifest(out, cli.command.name(), &cfg)
}

fn main() -> Result<()> {
    run(Cli::parse())
}
