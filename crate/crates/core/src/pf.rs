//! Bootstrap particle filter and the high-particle-count reference posterior.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GaussianBelief, ObservationModel, StateSpaceModel};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Weighted particle set. Particles are stored column-wise (`d × M`).
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    particles: DMatrix<f64>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Equally weighted ensemble. Fails when `particles` has no columns.
    pub fn new(particles: DMatrix<f64>) -> Result<Self> {
        let m = particles.ncols();
        if m == 0 {
            return Err(Error::Config("particle ensemble needs at least one particle".into()));
        }
        Ok(Self {
            particles,
            weights: vec![1.0 / m as f64; m],
        })
    }

    /// `m` draws from a Gaussian belief.
    pub fn from_belief(belief: &GaussianBelief, m: usize, rng: &mut SimRng) -> Result<Self> {
        let l = belief.cholesky().l();
        let d = belief.dim();
        let mut particles = DMatrix::zeros(d, m);
        for mut col in particles.column_iter_mut() {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            col.copy_from(&(belief.mean() + &l * z));
        }
        Self::new(particles)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Multiplies the weights by `exp(log_lik)` and renormalizes, working in
    /// log space with the maximum subtracted.
    pub fn reweight(&mut self, log_lik: &[f64]) -> Result<()> {
        if log_lik.len() != self.len() {
            return Err(Error::Dimension("one log-likelihood per particle required".into()));
        }
        let logw: Vec<f64> = self.weights.iter().zip(log_lik).map(|(w, l)| w.ln() + l).collect();
        let max = logw.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::WeightCollapse);
        }
        let mut total = 0.0;
        for (w, lw) in self.weights.iter_mut().zip(&logw) {
            *w = if lw.is_nan() { 0.0 } else { (lw - max).exp() };
            total += *w;
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.particles * DVector::from_column_slice(&self.weights)
    }

    /// Weighted covariance `Σ w_k (x_k − m)(x_k − m)ᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let d = self.dim();
        let mut cov = DMatrix::zeros(d, d);
        for (col, &w) in self.particles.column_iter().zip(&self.weights) {
            let e = col - &mean;
            cov.ger(w, &e, &e, 1.0);
        }
        cov
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Systematic resampling with the single uniform `u ∈ [0, 1)`: particle
    /// `k` is copied once for every point `(u + j)/M` falling in its slice of
    /// the cumulative weights.
    pub fn systematic_resample(&mut self, u: f64) {
        let m = self.len();
        let mut out = DMatrix::zeros(self.dim(), m);
        let mut cumulative = self.weights[0];
        let mut k = 0;
        for j in 0..m {
            let point = (u + j as f64) / m as f64;
            while point > cumulative && k + 1 < m {
                k += 1;
                cumulative += self.weights[k];
            }
            out.set_column(j, &self.particles.column(k));
        }
        self.particles = out;
        self.weights.iter_mut().for_each(|w| *w = 1.0 / m as f64);
    }
}

/// Particle-filter moments per step.
#[derive(Debug, Clone)]
pub struct ParticleFilterOutput {
    /// Weighted means before resampling.
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub ess: Vec<f64>,
    pub durations: Vec<Duration>,
}

/// Bootstrap particle filter with `m` particles.
///
/// Every step propagates each particle through the transition, weights it by
/// the observation density, records the weighted moments, and resamples
/// systematically.
pub fn pf_filter<O: ObservationModel>(
    model: &StateSpaceModel<O>,
    observations: &[DVector<f64>],
    init: &GaussianBelief,
    m: usize,
    seed: u64,
) -> Result<ParticleFilterOutput> {
    if m == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    if init.dim() != model.state_dim() {
        return Err(Error::Dimension("initial belief dimension disagrees with the model".into()));
    }
    let d = model.state_dim();
    let mut rng = rng_from_seed(seed);
    let mut ens = ParticleEnsemble::from_belief(init, m, &mut rng)?;
    let n = observations.len();
    let mut out = ParticleFilterOutput {
        means: Vec::with_capacity(n),
        covs: Vec::with_capacity(n),
        ess: Vec::with_capacity(n),
        durations: Vec::with_capacity(n),
    };
    let mut next = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut log_lik = vec![0.0; m];
    for (idx, y) in observations.iter().enumerate() {
        let start = Instant::now();
        for k in 0..m {
            let mut col = ens.particles.column_mut(k);
            model.transition.sample_next_into(col.as_slice(), &mut next, &mut z, &mut rng);
            col.copy_from_slice(&next);
            log_lik[k] = model.observation.log_kernel(y.as_slice(), &next);
        }
        ens.reweight(&log_lik).map_err(|e| e.at_step(idx + 1))?;
        out.means.push(ens.mean());
        out.covs.push(ens.covariance());
        out.ess.push(ens.ess());
        let u: f64 = rng.random();
        ens.systematic_resample(u);
        out.durations.push(start.elapsed());
    }
    Ok(out)
}

/// Replicate-averaged particle-filter posterior means.
#[derive(Debug, Clone)]
pub struct GoldStandard {
    pub means: Vec<DVector<f64>>,
    /// Between-replicate standard error of each mean entry.
    pub std_errors: Vec<DVector<f64>>,
    /// `mean_{t,j} se_{t,j}²`: the reference's own variance on the MISE scale.
    pub reference_variance: f64,
    pub replicates: usize,
}

/// Averages `replicates` independent [`pf_filter`] runs of `m` particles.
/// Run `r` uses seed `derive_seed(seed, r)`.
pub fn gold_standard<O: ObservationModel>(
    model: &StateSpaceModel<O>,
    observations: &[DVector<f64>],
    init: &GaussianBelief,
    m: usize,
    replicates: usize,
    seed: u64,
) -> Result<GoldStandard> {
    if replicates == 0 {
        return Err(Error::Config("gold standard needs at least one replicate".into()));
    }
    let runs: Vec<Vec<DVector<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| pf_filter(model, observations, init, m, derive_seed(seed, r as u64)).map(|o| o.means))
        .collect::<Result<_>>()?;
    let steps = observations.len();
    let d = model.state_dim();
    let rf = replicates as f64;
    let mut means = Vec::with_capacity(steps);
    let mut std_errors = Vec::with_capacity(steps);
    for t in 0..steps {
        let mean = runs.iter().fold(DVector::zeros(d), |acc, run| acc + &run[t]) / rf;
        let se = if replicates > 1 {
            let var = runs
                .iter()
                .fold(DVector::zeros(d), |acc: DVector<f64>, run| acc + (&run[t] - &mean).map(|e| e * e))
                / (rf - 1.0);
            var.map(|v| (v / rf).sqrt())
        } else {
            DVector::zeros(d)
        };
        means.push(mean);
        std_errors.push(se);
    }
    let reference_variance = std_errors.iter().map(|s| s.norm_squared()).sum::<f64>() / (steps * d) as f64;
    Ok(GoldStandard {
        means,
        std_errors,
        reference_variance,
        replicates,
    })
}
