//! Seeded simulation study of the neural-decoding model.
//!
//! A replicate draws a population, a true trajectory of the `d`-dimensional
//! AR(1) state and Poisson spike counts, computes a replicate-averaged
//! particle-filter reference posterior, and runs every configured method on
//! the same data. Seeds are derived deterministically from `base_seed`, so a
//! study is reproducible bit for bit from its configuration.
//!
//! Within replicate `r` (seed `s_r = derive_seed(base_seed, r)`) the streams are
//!
//! | stream | use |
//! |---|---|
//! | 0 | population |
//! | 1 | initial state `x₀` (stationary AR distribution) |
//! | 2 | trajectory and counts |
//! | 3 | reference posterior runs |
//! | 1000 + M | particle filter with `M` particles |

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{init_diffuse, init_from_state, lgf_filter, LgfConfig, DIFFUSE_KAPPA};
use crate::laplace::compute_gamma;
use crate::model::{simulate, GaussianBelief, LinearGaussianTransition, StateSpaceModel, Trajectory};
use crate::neural::{pva_decode, sample_population, PoissonPopulation, PvaParams, SpikeCounts};
use crate::pf::{gold_standard, pf_filter, GoldStandard};
use crate::rng::{derive_seed, rng_from_seed};

/// A decoding method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Lgf1,
    Lgf2,
    Pf(usize),
    Pva,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Lgf1 => write!(f, "LGF1"),
            Method::Lgf2 => write!(f, "LGF2"),
            Method::Pf(m) => write!(f, "PF({m})"),
            Method::Pva => write!(f, "PVA"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        match t.as_str() {
            "LGF1" | "LGF-1" => Ok(Method::Lgf1),
            "LGF2" | "LGF-2" => Ok(Method::Lgf2),
            "PVA" => Ok(Method::Pva),
            _ => {
                let inner = t
                    .strip_prefix("PF(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| t.strip_prefix("PF-"))
                    .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))?;
                let m: usize = inner.parse().map_err(|_| Error::Parse(format!("bad particle count in {s:?}")))?;
                if m == 0 {
                    return Err(Error::Parse("particle count must be positive".into()));
                }
                Ok(Method::Pf(m))
            }
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Covariance of the time-0 belief centred at the true initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitCov {
    /// The process noise covariance `W`.
    W,
    /// `κ I` with `κ = 10³`.
    Diffuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldStandardConfig {
    pub particles: usize,
    pub replicates: usize,
}

/// Study configuration. Field names match the TOML keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub delta: f64,
    #[serde(rename = "F_scale")]
    pub f_scale: f64,
    #[serde(rename = "W_scale")]
    pub w_scale: f64,
    pub replicates: usize,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub gold_standard: GoldStandardConfig,
    #[serde(default = "default_init_cov")]
    pub init_cov: InitCov,
}

fn default_init_cov() -> InitCov {
    InitCov::W
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 6,
            n: 100,
            steps: 30,
            delta: 0.03,
            f_scale: 0.94,
            w_scale: 0.019,
            replicates: 10,
            base_seed: 2009,
            methods: vec![Method::Lgf2, Method::Lgf1, Method::Pf(100)],
            gold_standard: GoldStandardConfig {
                particles: 100_000,
                replicates: 5,
            },
            init_cov: InitCov::W,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.steps == 0 {
            return Err(Error::Config("d and T must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !(self.delta > 0.0) || !(self.w_scale > 0.0) {
            return Err(Error::Config("delta and W_scale must be positive".into()));
        }
        if self.gold_standard.particles == 0 || self.gold_standard.replicates == 0 {
            return Err(Error::Config("gold standard needs particles and replicates".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn transition(&self) -> Result<LinearGaussianTransition> {
        LinearGaussianTransition::scaled_identity(self.d, self.f_scale, self.w_scale)
    }

    pub fn replicate_seed(&self, r: usize) -> u64 {
        derive_seed(self.base_seed, r as u64)
    }
}

/// Mean and standard error over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn from_samples(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Stat { mean, se }
    }
}

/// Mean squared distance per step and per coordinate,
/// `(1/(T d)) Σ_t ‖est_t − ref_t‖²`.
pub fn mise(estimates: &[DVector<f64>], reference: &[DVector<f64>]) -> Result<f64> {
    if estimates.len() != reference.len() || estimates.is_empty() {
        return Err(Error::Dimension(format!(
            "{} estimates against {} reference steps",
            estimates.len(),
            reference.len()
        )));
    }
    let d = reference[0].len();
    let mut total = 0.0;
    for (e, r) in estimates.iter().zip(reference) {
        if e.len() != d || r.len() != d {
            return Err(Error::Dimension("estimate and reference dimensions differ".into()));
        }
        total += (e - r).norm_squared();
    }
    Ok(total / (estimates.len() * d) as f64)
}

/// Runs `f` and returns its result with the elapsed wall-clock seconds.
pub fn time_it<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Least-squares slope of `log y` on `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Everything one replicate's methods are evaluated on.
#[derive(Debug, Clone)]
pub struct ReplicateData {
    pub index: usize,
    pub seed: u64,
    pub model: StateSpaceModel<PoissonPopulation>,
    pub x0: DVector<f64>,
    pub truth: Trajectory,
    pub observations: Vec<DVector<f64>>,
    pub init: GaussianBelief,
    pub gold: GoldStandard,
}

impl ReplicateData {
    pub fn population(&self) -> &PoissonPopulation {
        &self.model.observation
    }
}

/// Simulated data of replicate `r`, without the reference posterior.
pub fn simulate_replicate(
    cfg: &ExperimentConfig,
    r: usize,
) -> Result<(StateSpaceModel<PoissonPopulation>, DVector<f64>, Trajectory, Vec<DVector<f64>>, GaussianBelief)> {
    cfg.validate()?;
    let seed = cfg.replicate_seed(r);
    let trans = cfg.transition()?;
    let pop = sample_population(cfg.n, cfg.d, cfg.delta, derive_seed(seed, 0))?;
    let gamma = compute_gamma(&pop, trans.w())?;
    let model = StateSpaceModel::new(trans, pop, gamma)?;
    let stationary_sd = (cfg.w_scale / (1.0 - cfg.f_scale * cfg.f_scale)).sqrt();
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let x0 = DVector::from_fn(cfg.d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        if stationary_sd.is_finite() {
            stationary_sd * z
        } else {
            0.0
        }
    });
    let (truth, observations) = simulate(&model, cfg.steps, &x0, cfg.delta, derive_seed(seed, 2))?;
    let init = initial_belief(cfg, &x0, &model.transition)?;
    Ok((model, x0, truth, observations, init))
}

fn initial_belief(cfg: &ExperimentConfig, mean: &DVector<f64>, trans: &LinearGaussianTransition) -> Result<GaussianBelief> {
    match cfg.init_cov {
        InitCov::W => init_from_state(mean, trans),
        InitCov::Diffuse => init_diffuse(mean, DIFFUSE_KAPPA),
    }
}

/// Simulates replicate `r` and computes its reference posterior.
pub fn prepare_replicate(cfg: &ExperimentConfig, r: usize) -> Result<ReplicateData> {
    let (model, x0, truth, observations, init) = simulate_replicate(cfg, r)?;
    let seed = cfg.replicate_seed(r);
    let gold = gold_standard(
        &model,
        &observations,
        &init,
        cfg.gold_standard.particles,
        cfg.gold_standard.replicates,
        derive_seed(seed, 3),
    )?;
    Ok(ReplicateData {
        index: r,
        seed,
        model,
        x0,
        truth,
        observations,
        init,
        gold,
    })
}

/// All replicates of a study, in replicate order.
pub fn prepare_replicates(cfg: &ExperimentConfig) -> Result<Vec<ReplicateData>> {
    cfg.validate()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| prepare_replicate(cfg, r))
        .collect()
}

/// Filtered-mean trajectory of `method` on a replicate.
pub fn run_method(method: Method, data: &ReplicateData) -> Result<Vec<DVector<f64>>> {
    match method {
        Method::Lgf1 => Ok(lgf_filter(&data.model, &data.observations, &data.init, &LgfConfig::first_order())?
            .filtered_means()),
        Method::Lgf2 => Ok(lgf_filter(&data.model, &data.observations, &data.init, &LgfConfig::second_order())?
            .filtered_means()),
        Method::Pf(m) => Ok(pf_filter(
            &data.model,
            &data.observations,
            &data.init,
            m,
            derive_seed(data.seed, 1000 + m as u64),
        )?
        .means),
        Method::Pva => {
            let pva = PvaParams::from_population(data.population())?;
            let counts = SpikeCounts::new(data.observations.clone())?;
            Ok(pva_decode(&counts, &pva, data.population().delta())?.states)
        }
    }
}

/// One row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    /// Approximation error against the reference posterior mean.
    pub mise_vs_gold: Stat,
    /// Error against the true states.
    pub mise_vs_truth: Stat,
    pub seconds: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiseReport {
    pub rows: Vec<MethodRow>,
    /// Reference posterior mean against the true states.
    pub posterior: Stat,
    /// Mean over replicates of the reference's own variance on the MISE scale.
    pub gold_reference_variance: f64,
    /// False when the reference variance exceeds 10% of the smallest method MISE.
    pub reliable: bool,
}

impl MiseReport {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        let name = method.to_string();
        self.rows.iter().find(|r| r.method == name)
    }
}

/// Accuracy table on prepared replicates.
pub fn table1_from(cfg: &ExperimentConfig, data: &[ReplicateData]) -> Result<MiseReport> {
    let per_rep: Vec<Vec<(f64, f64, f64)>> = data
        .par_iter()
        .map(|rep| {
            cfg.methods
                .iter()
                .map(|&m| {
                    let (est, secs) = time_it(|| run_method(m, rep));
                    let est = est.map_err(|e| Error::Config(format!("{m} failed on replicate {}: {e}", rep.index)))?;
                    Ok((mise(&est, &rep.gold.means)?, mise(&est, &rep.truth.states)?, secs))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<MethodRow> = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let col = |f: fn(&(f64, f64, f64)) -> f64| per_rep.iter().map(|r| f(&r[k])).collect::<Vec<_>>();
            MethodRow {
                method: m.to_string(),
                mise_vs_gold: Stat::from_samples(&col(|v| v.0)),
                mise_vs_truth: Stat::from_samples(&col(|v| v.1)),
                seconds: Stat::from_samples(&col(|v| v.2)),
            }
        })
        .collect();
    let posterior: Vec<f64> = data
        .iter()
        .map(|rep| mise(&rep.gold.means, &rep.truth.states))
        .collect::<Result<_>>()?;
    let gold_reference_variance = data.iter().map(|r| r.gold.reference_variance).sum::<f64>() / data.len() as f64;
    let smallest = rows.iter().map(|r| r.mise_vs_gold.mean).fold(f64::INFINITY, f64::min);
    Ok(MiseReport {
        rows,
        posterior: Stat::from_samples(&posterior),
        gold_reference_variance,
        reliable: gold_reference_variance < 0.1 * smallest,
    })
}

/// Simulates, computes references and tabulates accuracy for every method.
pub fn run_table1(cfg: &ExperimentConfig) -> Result<MiseReport> {
    let data = prepare_replicates(cfg)?;
    table1_from(cfg, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: String,
    pub seconds: Stat,
}

/// Mean wall-clock decoding time per method. Runs are timed one after another
/// on the calling thread.
pub fn table2_from(cfg: &ExperimentConfig, data: &[ReplicateData]) -> Result<Vec<TimingRow>> {
    cfg.methods
        .iter()
        .map(|&m| {
            let times = data
                .iter()
                .map(|rep| {
                    let (res, secs) = time_it(|| run_method(m, rep));
                    res.map(|_| secs)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(TimingRow {
                method: m.to_string(),
                seconds: Stat::from_samples(&times),
            })
        })
        .collect()
}

/// Timing table. Only the simulated data are needed, so the reference
/// posterior uses a single small run.
pub fn run_table2(cfg: &ExperimentConfig) -> Result<Vec<TimingRow>> {
    let light = ExperimentConfig {
        gold_standard: GoldStandardConfig {
            particles: 1,
            replicates: 1,
        },
        ..cfg.clone()
    };
    let data = prepare_replicates(&light)?;
    table2_from(cfg, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub particles: usize,
    pub mise: f64,
    pub se: f64,
}

/// Particle-filter error against the reference for each particle count, with
/// the two filter orders as reference levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfScaling {
    pub rows: Vec<ScalingRow>,
    pub lgf1_mise: f64,
    pub lgf2_mise: f64,
}

impl PfScaling {
    /// Smallest particle count whose error is below the first-order filter's.
    pub fn crossing(&self) -> Option<usize> {
        self.rows.iter().find(|r| r.mise < self.lgf1_mise).map(|r| r.particles)
    }
}

pub const DEFAULT_PF_GRID: [usize; 5] = [100, 300, 1_000, 3_000, 10_000];

pub fn pf_scaling_from(data: &[ReplicateData], grid: &[usize]) -> Result<PfScaling> {
    let level = |m: Method| -> Result<f64> {
        let v = data
            .par_iter()
            .map(|rep| mise(&run_method(m, rep)?, &rep.gold.means))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Stat::from_samples(&v).mean)
    };
    let rows = grid
        .iter()
        .map(|&m| {
            let v = data
                .par_iter()
                .map(|rep| mise(&run_method(Method::Pf(m), rep)?, &rep.gold.means))
                .collect::<Result<Vec<f64>>>()?;
            let s = Stat::from_samples(&v);
            Ok(ScalingRow {
                particles: m,
                mise: s.mean,
                se: s.se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PfScaling {
        rows,
        lgf1_mise: level(Method::Lgf1)?,
        lgf2_mise: level(Method::Lgf2)?,
    })
}

pub fn run_pf_scaling(cfg: &ExperimentConfig, grid: &[usize]) -> Result<PfScaling> {
    let data = prepare_replicates(cfg)?;
    pf_scaling_from(&data, grid)
}

/// First-order filter runs from several initial means on one data set.
#[derive(Debug, Clone)]
pub struct StabilityRun {
    pub truth: Trajectory,
    pub trajectories: Vec<Vec<DVector<f64>>>,
    /// Largest pairwise distance between filtered means at each step.
    pub spread: Vec<f64>,
}

/// Five initial means: `x₀` shifted by ±1 in every coordinate with sign
/// patterns `+…+`, `−…−`, `+−+−…`, `−+−+…` and `+…+−…−`.
pub fn default_stability_inits(x0: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = x0.len();
    let patterns: [Box<dyn Fn(usize) -> f64>; 5] = [
        Box::new(|_| 1.0),
        Box::new(|_| -1.0),
        Box::new(|j| if j % 2 == 0 { 1.0 } else { -1.0 }),
        Box::new(|j| if j % 2 == 0 { -1.0 } else { 1.0 }),
        Box::new(move |j| if j < d.div_ceil(2) { 1.0 } else { -1.0 }),
    ];
    patterns
        .iter()
        .map(|p| x0 + DVector::from_fn(d, |j, _| p(j)))
        .collect()
}

/// Runs the first-order filter once per initial mean on replicate 0's data.
pub fn run_stability(cfg: &ExperimentConfig, inits: &[DVector<f64>]) -> Result<StabilityRun> {
    let (model, _x0, truth, observations, _) = simulate_replicate(cfg, 0)?;
    let trajectories = inits
        .iter()
        .map(|m| {
            let init = initial_belief(cfg, m, &model.transition)?;
            Ok(lgf_filter(&model, &observations, &init, &LgfConfig::first_order())?.filtered_means())
        })
        .collect::<Result<Vec<_>>>()?;
    let spread = (0..cfg.steps)
        .map(|t| {
            let mut max: f64 = 0.0;
            for a in 0..trajectories.len() {
                for b in (a + 1)..trajectories.len() {
                    max = max.max((&trajectories[a][t] - &trajectories[b][t]).norm());
                }
            }
            max
        })
        .collect();
    Ok(StabilityRun {
        truth,
        trajectories,
        spread,
    })
}
