//! Poisson population coding models for neural decoding.
//!
//! Neuron `i` fires with log-linear intensity `log λ_i(x) = α_i + β_i·x`, and
//! its count in a bin of width `Δ` is `Poisson(λ_i(x) Δ)`, independently across
//! neurons given the state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};
use crate::model::{LinearGaussianTransition, ObservationModel, Trajectory};
use crate::rng::{rng_from_seed, SimRng};

/// Default bin width in seconds.
pub const DEFAULT_DELTA: f64 = 0.03;

/// Log-linear Poisson observation model for `N` neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonPopulation {
    alpha: DVector<f64>,
    /// Row-major `N × d` copy of the tuning directions.
    beta: Vec<f64>,
    d: usize,
    delta: f64,
}

impl PoissonPopulation {
    pub fn new(alpha: DVector<f64>, beta: DMatrix<f64>, delta: f64) -> Result<Self> {
        if beta.nrows() != alpha.len() {
            return Err(Error::Dimension(format!(
                "{} intercepts but {} tuning rows",
                alpha.len(),
                beta.nrows()
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("bin width must be positive, got {delta}")));
        }
        if alpha.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("population parameters must be finite".into()));
        }
        let d = beta.ncols();
        let beta = (0..beta.nrows())
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| beta[(i, j)])
            .collect();
        Ok(Self { alpha, beta, d, delta })
    }

    /// Number of neurons.
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn beta_row(&self, i: usize) -> &[f64] {
        &self.beta[i * self.d..(i + 1) * self.d]
    }

    pub fn beta(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.d, &self.beta)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `α_i + β_i·x`.
    #[inline]
    pub fn log_rate(&self, i: usize, x: &[f64]) -> f64 {
        self.alpha[i] + self.beta_row(i).iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Expected counts `λ_i(x) Δ`.
    pub fn expected_counts(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.delta * self.log_rate(i, x).exp())
    }

    /// `Σ_i [y_i(α_i + β_i·x) − Δ e^{α_i + β_i·x}]`, without the `−log y_i!` terms.
    pub fn log_kernel_counts(&self, y: &[f64], x: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let eta = self.log_rate(i, x);
                y[i] * eta - self.delta * eta.exp()
            })
            .sum()
    }

    pub fn to_file(&self) -> PopulationFile {
        PopulationFile {
            delta: self.delta,
            alpha: self.alpha.iter().copied().collect(),
            beta: (0..self.len()).map(|i| self.beta_row(i).to_vec()).collect(),
        }
    }

    pub fn from_file(file: &PopulationFile) -> Result<Self> {
        let n = file.alpha.len();
        let d = file.beta.first().map_or(0, Vec::len);
        if file.beta.len() != n || file.beta.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("population file beta must be N rows of equal length".into()));
        }
        let beta = DMatrix::from_row_iterator(n, d, file.beta.iter().flatten().copied());
        Self::new(DVector::from_vec(file.alpha.clone()), beta, file.delta)
    }
}

/// On-disk population parameters (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationFile {
    pub delta: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
}

impl ObservationModel for PoissonPopulation {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn obs_dim(&self) -> usize {
        self.len()
    }

    fn log_density(&self, y: &[f64], x: &[f64]) -> f64 {
        let log_fact: f64 = y.iter().map(|&c| ln_gamma(c + 1.0)).sum();
        self.log_kernel_counts(y, x) + self.delta.ln() * y.iter().sum::<f64>() - log_fact
    }

    fn log_kernel(&self, y: &[f64], x: &[f64]) -> f64 {
        self.log_kernel_counts(y, x)
    }

    fn gradient(&self, y: &[f64], x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.d);
        for i in 0..self.len() {
            let r = y[i] - self.delta * self.log_rate(i, x).exp();
            for (gj, b) in g.iter_mut().zip(self.beta_row(i)) {
                *gj += r * b;
            }
        }
        g
    }

    fn hessian(&self, _y: &[f64], x: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.d;
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.len() {
            let w = self.delta * self.log_rate(i, x).exp();
            let b = self.beta_row(i);
            for r in 0..d {
                for c in 0..=r {
                    h[(r, c)] -= w * b[r] * b[c];
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                h[(c, r)] = h[(r, c)];
            }
        }
        Some(h)
    }

    fn sample(&self, x: &[f64], rng: &mut SimRng) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| {
            let mean = self.delta * self.log_rate(i, x).exp();
            if mean > 0.0 {
                Poisson::new(mean).map(|p| p.sample(rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
    }
}

/// Draws `α_i = 2.5 + N(0,1)` and `β_i` uniform on the unit sphere.
pub fn sample_population(n: usize, d: usize, delta: f64, seed: u64) -> Result<PoissonPopulation> {
    if d == 0 {
        return Err(Error::Dimension("state dimension must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut alpha = DVector::zeros(n);
    let mut beta = DMatrix::zeros(n, d);
    for i in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        alpha[i] = 2.5 + z;
        let dir = loop {
            let v = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let norm = v.norm();
            if norm > 1e-12 {
                break v / norm;
            }
        };
        beta.row_mut(i).copy_from(&dir.transpose());
    }
    PoissonPopulation::new(alpha, beta, delta)
}

/// Spike counts: one row per time step, one column per neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeCounts {
    rows: Vec<DVector<f64>>,
}

impl SpikeCounts {
    pub fn new(rows: Vec<DVector<f64>>) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        for r in &rows {
            if r.len() != n {
                return Err(Error::Dimension("spike count rows differ in length".into()));
            }
            if r.iter().any(|&c| !(c >= 0.0) || c.fract() != 0.0) {
                return Err(Error::Parse("spike counts must be non-negative integers".into()));
            }
        }
        Ok(Self { rows })
    }

    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn neurons(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }
}

/// Fitted parameters of one neuron with observed-information standard errors.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub alpha: f64,
    pub beta: DVector<f64>,
    /// Standard errors of `(α, β_1, …, β_d)`.
    pub std_errors: DVector<f64>,
    pub iters: usize,
}

/// Maximum-likelihood Poisson regression of each neuron's counts on the
/// states, with log link and offset `log Δ`.
///
/// Neurons are fitted independently by Newton's method; a fit converges when
/// the score norm drops below `1e-8`.
pub fn fit_poisson_glm(spikes: &SpikeCounts, states: &Trajectory, delta: f64) -> Result<Vec<GlmFit>> {
    let t = spikes.steps();
    if t != states.len() {
        return Err(Error::Dimension(format!("{t} count rows for {} states", states.len())));
    }
    let d = states.dim();
    if t <= d + 1 {
        return Err(Error::Dimension(format!("need more than {} steps to fit {d}-dimensional tuning", d + 1)));
    }
    let design = DMatrix::from_fn(t, d + 1, |r, c| if c == 0 { 1.0 } else { states.states[r][c - 1] });
    let gram = design.tr_mul(&design);
    let sv = gram.singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::RankDeficient);
    }
    (0..spikes.neurons())
        .map(|i| {
            let y = DVector::from_fn(t, |r, _| spikes.rows()[r][i]);
            fit_one_neuron(&design, &y, delta.ln()).map_err(|reason| Error::GlmDivergence { neuron: i, reason })
        })
        .collect()
}

fn fit_one_neuron(x: &DMatrix<f64>, y: &DVector<f64>, offset: f64) -> std::result::Result<GlmFit, String> {
    let (t, p) = x.shape();
    let ybar = y.mean();
    if ybar <= 0.0 {
        return Err("neuron never fires; intercept is unbounded".into());
    }
    let loglik = |theta: &DVector<f64>| -> f64 {
        let eta = x * theta;
        (0..t).map(|r| y[r] * (eta[r] + offset) - (eta[r] + offset).exp()).sum()
    };
    let mut theta = DVector::zeros(p);
    theta[0] = ybar.ln() - offset;
    let mut ll = loglik(&theta);
    for iter in 0..100 {
        let mu = (x * &theta).map(|e| (e + offset).exp());
        let score = x.tr_mul(&(y - &mu));
        let mut info = DMatrix::zeros(p, p);
        for r in 0..t {
            let row = x.row(r);
            info += row.transpose() * row * mu[r];
        }
        let info = symmetrize(&info);
        let chol = cholesky(&info, "GLM information").map_err(|_| "information matrix is singular".to_string())?;
        if score.norm() < 1e-8 {
            let se = chol.inverse().diagonal().map(f64::sqrt);
            return Ok(GlmFit {
                alpha: theta[0],
                beta: theta.rows(1, p - 1).into_owned(),
                std_errors: se,
                iters: iter,
            });
        }
        let step = chol.solve(&score);
        // Near the optimum a full step changes the likelihood by less than its
        // rounding error, so a decrease at that level still counts as ascent.
        let slack = 64.0 * f64::EPSILON * (1.0 + ll.abs());
        let mut s = 1.0;
        loop {
            let cand = &theta + &step * s;
            let lc = loglik(&cand);
            if lc.is_finite() && lc >= ll - slack {
                theta = cand;
                ll = lc;
                break;
            }
            s *= 0.5;
            if s < 1e-12 {
                // No further ascent possible: accept if the score is at round-off level.
                if score.norm() < 1e-6 * (1.0 + ll.abs()) {
                    let se = chol.inverse().diagonal().map(f64::sqrt);
                    return Ok(GlmFit {
                        alpha: theta[0],
                        beta: theta.rows(1, p - 1).into_owned(),
                        std_errors: se,
                        iters: iter,
                    });
                }
                return Err("line search failed to increase the likelihood".into());
            }
        }
        if theta.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return Err("coefficients diverged (possible separation)".into());
        }
    }
    Err("no convergence in 100 Newton iterations".into())
}

/// Maximum-likelihood innovation variance of the position–velocity model:
/// `σ̂² = Σ_t ‖v_t − v_{t−1}‖² / (3(T−1))` for 6-dimensional states `(z, v)`.
pub fn fit_sigma2(states: &Trajectory) -> Result<f64> {
    if states.dim() != 6 {
        return Err(Error::Dimension(format!(
            "position-velocity states must be 6-dimensional, got {}",
            states.dim()
        )));
    }
    if states.len() < 2 {
        return Err(Error::Dimension("need at least two states".into()));
    }
    let ss: f64 = states
        .states
        .windows(2)
        .map(|w| (3..6).map(|j| (w[1][j] - w[0][j]).powi(2)).sum::<f64>())
        .sum();
    Ok(ss / (3.0 * (states.len() - 1) as f64))
}

/// Constant-velocity kinematics `z_t = z_{t−1} + Δ v_{t−1}`, `v_t = v_{t−1} + ε_t`,
/// `ε_t ~ N(0, σ² I₃)`.
pub fn build_pv_transition(sigma2: f64, dt: f64) -> Result<LinearGaussianTransition> {
    if !(sigma2 > 0.0) {
        return Err(Error::Config(format!("sigma2 must be positive, got {sigma2}")));
    }
    let mut f = DMatrix::identity(6, 6);
    let mut w = DMatrix::zeros(6, 6);
    for j in 0..3 {
        f[(j, j + 3)] = dt;
        w[(j + 3, j + 3)] = sigma2;
    }
    LinearGaussianTransition::new(f, w)
}

/// Population-vector decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PvaParams {
    /// Preferred directions, one unit row per neuron.
    pub theta: DMatrix<f64>,
    /// Baseline rates (spikes/s).
    pub r: DVector<f64>,
    /// Modulation depths (spikes/s).
    pub lambda: DVector<f64>,
}

impl PvaParams {
    pub fn new(theta: DMatrix<f64>, r: DVector<f64>, lambda: DVector<f64>) -> Result<Self> {
        if theta.nrows() != r.len() || r.len() != lambda.len() {
            return Err(Error::Dimension("PVA parameter lengths disagree".into()));
        }
        if lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("PVA modulation depths must be positive".into()));
        }
        Ok(Self { theta, r, lambda })
    }

    /// First-order match to a log-linear population: `θ_i = β_i/‖β_i‖`,
    /// `r_i = e^{α_i}`, `Λ_i = e^{α_i}‖β_i‖`.
    pub fn from_population(pop: &PoissonPopulation) -> Result<Self> {
        let n = pop.len();
        let d = pop.state_dim();
        let mut theta = DMatrix::zeros(n, d);
        let mut r = DVector::zeros(n);
        let mut lambda = DVector::zeros(n);
        for i in 0..n {
            let b = pop.beta_row(i);
            let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Config(format!("neuron {i} has no tuning direction")));
            }
            for j in 0..d {
                theta[(i, j)] = b[j] / norm;
            }
            r[i] = pop.alpha()[i].exp();
            lambda[i] = r[i] * norm;
        }
        Self::new(theta, r, lambda)
    }
}

/// Population vector `Σ_i (y_i − r_i Δ)/(Λ_i Δ) · θ_i` for each time step.
pub fn pva_decode(spikes: &SpikeCounts, pva: &PvaParams, dt: f64) -> Result<Trajectory> {
    if spikes.neurons() != pva.theta.nrows() {
        return Err(Error::Dimension(format!(
            "{} neurons in counts but {} in PVA parameters",
            spikes.neurons(),
            pva.theta.nrows()
        )));
    }
    let weights = |y: &DVector<f64>| {
        DVector::from_fn(y.len(), |i, _| (y[i] - pva.r[i] * dt) / (pva.lambda[i] * dt))
    };
    let states = spikes.rows().iter().map(|y| pva.theta.tr_mul(&weights(y))).collect();
    Trajectory::new(states, dt)
}

/// Draws independent Poisson counts with the given expected values.
pub fn sample_counts(expected: &DVector<f64>, rng: &mut impl Rng) -> DVector<f64> {
    expected.map(|m| {
        if m > 0.0 {
            Poisson::new(m).map(|p| p.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    })
}
