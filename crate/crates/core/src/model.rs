//! State-space model building blocks.
//!
//! A model pairs a linear-Gaussian transition
//!
//! `x_t = F x_{t-1} + ε_t`,  `ε_t ~ N(0, W)`
//!
//! with an arbitrary [`ObservationModel`] supplying `log p(y_t | x_t)` and its
//! derivatives. Beliefs about the state are carried as [`GaussianBelief`]s whose
//! covariances are always symmetric and positive definite.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, cholesky, log_det_from_cholesky, psd_factor, symmetrize};
use crate::rng::{rng_from_seed, SimRng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian distribution over the state: a mean vector and an SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validates and wraps `(mean, cov)`.
    ///
    /// `cov` must be symmetric to within `1e-12` relative tolerance and pass a
    /// Cholesky factorization.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension(format!(
                "belief mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("belief mean has non-finite entries".into()));
        }
        if asymmetry(&cov) > 1e-12 {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        let cov = symmetrize(&cov);
        cholesky(&cov, "belief covariance")?;
        Ok(Self { mean, cov })
    }

    /// Symmetrizes `cov` before validating it.
    pub fn from_symmetrized(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        Self::new(mean, symmetrize(cov))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cholesky(&self) -> Cholesky<f64, Dyn> {
        // Checked at construction.
        Cholesky::new(self.cov.clone()).expect("belief covariance is SPD")
    }
}

/// Linear-Gaussian state transition `x_t = F x_{t-1} + ε_t`, `ε_t ~ N(0, W)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianTransition {
    f: DMatrix<f64>,
    w: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
}

impl LinearGaussianTransition {
    /// `W` must be symmetric positive semi-definite and match `F` in size.
    pub fn new(f: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let d = f.nrows();
        if d == 0 || f.ncols() != d || w.nrows() != d || w.ncols() != d {
            return Err(Error::Dimension(format!(
                "transition F is {}x{} and W is {}x{}",
                f.nrows(),
                f.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        if asymmetry(&w) > 1e-12 {
            return Err(Error::NotPositiveDefinite("process noise W is not symmetric".into()));
        }
        let w = symmetrize(&w);
        let noise_factor = psd_factor(&w).ok_or_else(|| {
            Error::NotPositiveDefinite("process noise W has a negative eigenvalue".into())
        })?;
        Ok(Self { f, w, noise_factor })
    }

    /// `F = a·I`, `W = q·I`.
    pub fn scaled_identity(d: usize, a: f64, q: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal_element(d, d, a),
            DMatrix::from_diagonal_element(d, d, q),
        )
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Draws `F x + ε`.
    pub fn sample_next(&self, x: &DVector<f64>, rng: &mut SimRng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.f * x + &self.noise_factor * z
    }

    /// Writes `F x + ε` for a state stored as a slice.
    pub(crate) fn sample_next_into(&self, x: &[f64], out: &mut [f64], z: &mut [f64], rng: &mut SimRng) {
        let d = self.dim();
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.f[(i, j)] * x[j] + self.noise_factor[(i, j)] * z[j];
            }
            *o = acc;
        }
    }
}

/// Analytic prediction step: `N(F m, F V Fᵀ + W)`.
///
/// Fails when the propagated covariance is not positive definite; the result
/// is not repaired.
pub fn predict(belief: &GaussianBelief, trans: &LinearGaussianTransition) -> Result<GaussianBelief> {
    if belief.dim() != trans.dim() {
        return Err(Error::Dimension(format!(
            "belief has dimension {} but transition has dimension {}",
            belief.dim(),
            trans.dim()
        )));
    }
    let f = trans.f();
    let mean = f * belief.mean();
    let cov = f * belief.cov() * f.transpose() + trans.w();
    GaussianBelief::from_symmetrized(mean, &cov)
        .map_err(|_| Error::NotPositiveDefinite("predicted covariance F V Fᵀ + W".into()))
}

/// Observation density `p(y | x)` with derivatives in `x`.
///
/// States and observations are passed as slices so that particle filters can
/// evaluate the density without allocating.
pub trait ObservationModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn obs_dim(&self) -> usize;

    /// `log p(y | x)` including normalizing constants.
    fn log_density(&self, y: &[f64], x: &[f64]) -> f64;

    /// `log p(y | x)` up to an additive constant independent of `x`.
    fn log_kernel(&self, y: &[f64], x: &[f64]) -> f64 {
        self.log_density(y, x)
    }

    /// `∇ₓ log p(y | x)`.
    fn gradient(&self, y: &[f64], x: &[f64]) -> DVector<f64>;

    /// `∇²ₓ log p(y | x)`, when available in closed form.
    fn hessian(&self, _y: &[f64], _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Draws an observation given the state.
    fn sample(&self, x: &[f64], rng: &mut SimRng) -> DVector<f64>;
}

/// An observation that carries no information about the state.
#[derive(Debug, Clone)]
pub struct Uninformative {
    pub state_dim: usize,
}

impl ObservationModel for Uninformative {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn obs_dim(&self) -> usize {
        0
    }

    fn log_density(&self, _y: &[f64], _x: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, _y: &[f64], _x: &[f64]) -> DVector<f64> {
        DVector::zeros(self.state_dim)
    }

    fn hessian(&self, _y: &[f64], _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.state_dim, self.state_dim))
    }

    fn sample(&self, _x: &[f64], _rng: &mut SimRng) -> DVector<f64> {
        DVector::zeros(0)
    }
}

/// Linear-Gaussian observation `y = H x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianObservation {
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    r_chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl LinearGaussianObservation {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || r.nrows() != n || r.ncols() != n {
            return Err(Error::Dimension(format!(
                "observation H is {}x{} and R is {}x{}",
                h.nrows(),
                h.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        let r = symmetrize(&r);
        let chol = cholesky(&r, "observation noise R")?;
        let log_norm = -0.5 * (n as f64 * LN_2PI + log_det_from_cholesky(&chol));
        let r_inv = symmetrize(&chol.inverse());
        Ok(Self {
            h,
            r,
            r_inv,
            r_chol_l: chol.l(),
            log_norm,
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn residual(&self, y: &[f64], x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(y) - &self.h * DVector::from_column_slice(x)
    }
}

impl ObservationModel for LinearGaussianObservation {
    fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    fn log_density(&self, y: &[f64], x: &[f64]) -> f64 {
        let e = self.residual(y, x);
        self.log_norm - 0.5 * e.dot(&(&self.r_inv * &e))
    }

    fn gradient(&self, y: &[f64], x: &[f64]) -> DVector<f64> {
        self.h.tr_mul(&(&self.r_inv * self.residual(y, x)))
    }

    fn hessian(&self, _y: &[f64], _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(-(self.h.tr_mul(&self.r_inv) * &self.h))
    }

    fn sample(&self, x: &[f64], rng: &mut SimRng) -> DVector<f64> {
        let z = DVector::from_fn(self.obs_dim(), |_, _| StandardNormal.sample(rng));
        &self.h * DVector::from_column_slice(x) + &self.r_chol_l * z
    }
}

/// Linear-Gaussian dynamics paired with an observation model.
///
/// `gamma` is the expansion parameter used by the Newton stopping rule.
#[derive(Debug, Clone)]
pub struct StateSpaceModel<O> {
    pub transition: LinearGaussianTransition,
    pub observation: O,
    pub gamma: f64,
}

impl<O: ObservationModel> StateSpaceModel<O> {
    pub fn new(transition: LinearGaussianTransition, observation: O, gamma: f64) -> Result<Self> {
        if observation.state_dim() != transition.dim() {
            return Err(Error::Dimension(format!(
                "observation model expects state dimension {} but transition has {}",
                observation.state_dim(),
                transition.dim()
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("expansion parameter must be positive, got {gamma}")));
        }
        Ok(Self {
            transition,
            observation,
            gamma,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.transition.dim()
    }
}

/// Simulated or recorded state path `x_1..x_T`, `dt` seconds per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, dt: f64) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(Error::Dimension("trajectory needs at least one step".into()));
        };
        let d = first.len();
        if states.iter().any(|s| s.len() != d || s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Dimension("trajectory states must share a dimension and be finite".into()));
        }
        Ok(Self { states, dt })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }
}

/// Simulates `steps` transitions from `x0` and one observation per state.
pub fn simulate<O: ObservationModel>(
    model: &StateSpaceModel<O>,
    steps: usize,
    x0: &DVector<f64>,
    dt: f64,
    seed: u64,
) -> Result<(Trajectory, Vec<DVector<f64>>)> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {} but model dimension is {}",
            x0.len(),
            model.state_dim()
        )));
    }
    if steps == 0 {
        return Err(Error::Dimension("simulation needs at least one step".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps);
    for _ in 0..steps {
        x = model.transition.sample_next(&x, &mut rng);
        observations.push(model.observation.sample(x.as_slice(), &mut rng));
        states.push(x.clone());
    }
    Ok((Trajectory::new(states, dt)?, observations))
}

/// The log posterior kernel `l(x) = log p(y | x) + log N(x; m, V)` of one
/// filtering step, with `N(m, V)` the predictive belief.
pub struct LogPosterior<'a, O: ?Sized> {
    obs: &'a O,
    y: &'a [f64],
    pred_mean: &'a DVector<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl<'a, O: ObservationModel + ?Sized> LogPosterior<'a, O> {
    pub fn new(obs: &'a O, y: &'a [f64], pred: &'a GaussianBelief) -> Result<Self> {
        if obs.state_dim() != pred.dim() {
            return Err(Error::Dimension(format!(
                "observation model expects state dimension {} but belief has {}",
                obs.state_dim(),
                pred.dim()
            )));
        }
        let chol = cholesky(pred.cov(), "predictive covariance")?;
        let d = pred.dim() as f64;
        let log_norm = -0.5 * (d * LN_2PI + log_det_from_cholesky(&chol));
        let precision = symmetrize(&chol.inverse());
        Ok(Self {
            obs,
            y,
            pred_mean: pred.mean(),
            precision,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.pred_mean.len()
    }

    pub fn observation(&self) -> &O {
        self.obs
    }

    /// `V⁻¹` of the predictive belief.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let e = x - self.pred_mean;
        self.obs.log_density(self.y, x.as_slice()) + self.log_norm - 0.5 * e.dot(&(&self.precision * &e))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.obs.gradient(self.y, x.as_slice()) - &self.precision * (x - self.pred_mean)
    }

    /// Analytic Hessian, when the observation model provides one.
    pub fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.obs
            .hessian(self.y, x.as_slice())
            .map(|h| symmetrize(&(h - &self.precision)))
    }
}

/// Convenience wrapper matching the operation table: `(l(x), ∇l(x), ∇²l(x))`.
pub fn log_posterior_l<O: ObservationModel + ?Sized>(
    x: &DVector<f64>,
    y: &[f64],
    pred: &GaussianBelief,
    obs: &O,
) -> Result<(f64, DVector<f64>, Option<DMatrix<f64>>)> {
    let l = LogPosterior::new(obs, y, pred)?;
    Ok((l.value(x), l.gradient(x), l.hessian(x)))
}
