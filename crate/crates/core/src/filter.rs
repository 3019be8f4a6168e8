//! The Laplace-Gaussian filter and its fixed-interval smoother.
//!
//! Each step predicts analytically through the linear-Gaussian transition,
//! forms `l(x) = log p(y_t | x) + log p̂(x | y_{1:t-1})`, and replaces the
//! filtered density by a Gaussian whose mean comes from a first- or
//! second-order Laplace approximation and whose covariance is `[-l''(x̂)]⁻¹`.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::laplace::{
    choose_offset_c, default_increments, fit_mode, laplace_second_mean, LaplaceOrder, LaplaceSettings,
    NewtonConfig, RichardsonConfig,
};
use crate::linalg::{cholesky, symmetrize};
use crate::model::{predict, GaussianBelief, LinearGaussianTransition, LogPosterior, ObservationModel, StateSpaceModel};

/// Filter tunables.
#[derive(Debug, Clone, PartialEq)]
pub struct LgfConfig {
    pub order: LaplaceOrder,
    pub newton: NewtonConfig,
    pub richardson: RichardsonConfig,
    pub use_analytic_obs_hessian: bool,
}

impl LgfConfig {
    pub fn new(order: LaplaceOrder) -> Self {
        Self {
            order,
            newton: NewtonConfig::new(order),
            richardson: RichardsonConfig::default(),
            use_analytic_obs_hessian: true,
        }
    }

    pub fn first_order() -> Self {
        Self::new(LaplaceOrder::First)
    }

    pub fn second_order() -> Self {
        Self::new(LaplaceOrder::Second)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order != self.newton.order {
            return Err(Error::Config(format!(
                "filter order {:?} disagrees with Newton order {:?}",
                self.order, self.newton.order
            )));
        }
        self.newton.validate()?;
        self.richardson.validate()
    }

    fn settings(&self, pred: &GaussianBelief) -> LaplaceSettings {
        LaplaceSettings {
            newton: self.newton,
            richardson: self.richardson,
            increments: default_increments(pred),
            use_analytic_hessian: self.use_analytic_obs_hessian,
        }
    }
}

/// Per-step filter diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Newton steps on `l`.
    pub newton_iters: usize,
    /// Newton steps on the `k` functions (second order only), summed over coordinates.
    pub second_order_iters: usize,
    pub duration: Duration,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub predictive: Vec<GaussianBelief>,
    pub filtered: Vec<GaussianBelief>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.filtered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered.is_empty()
    }

    pub fn filtered_means(&self) -> Vec<DVector<f64>> {
        self.filtered.iter().map(|b| b.mean().clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SmoothOutput {
    pub smoothed: Vec<GaussianBelief>,
}

/// One measurement update: turns the predictive belief into the filtered one.
///
/// Returns the filtered belief and the Newton iteration counts on `l` and on
/// the `k` functions.
pub fn lgf_step<O: ObservationModel + ?Sized>(
    pred: &GaussianBelief,
    y: &[f64],
    obs: &O,
    gamma: f64,
    cfg: &LgfConfig,
) -> Result<(GaussianBelief, usize, usize)> {
    cfg.validate()?;
    let l = LogPosterior::new(obs, y, pred)?;
    let settings = cfg.settings(pred);
    let fit = fit_mode(&l, pred.mean(), gamma, &settings)?;
    let first = fit.belief()?;
    match cfg.order {
        LaplaceOrder::First => Ok((first, fit.iters, 0)),
        LaplaceOrder::Second => {
            let mut mean = DVector::zeros(pred.dim());
            let mut k_iters = 0;
            for i in 0..pred.dim() {
                let c = choose_offset_c(pred, i);
                let (m, it) = laplace_second_mean(&l, i, c, &fit, gamma, &settings)?;
                mean[i] = m;
                k_iters += it;
            }
            Ok((GaussianBelief::new(mean, first.cov().clone())?, fit.iters, k_iters))
        }
    }
}

/// Runs the filter over `observations`, starting from the time-0 belief
/// `init`. Step `t` (1-based) predicts from the previous filtered belief and
/// then updates with `observations[t-1]`.
pub fn lgf_filter<O: ObservationModel>(
    model: &StateSpaceModel<O>,
    observations: &[DVector<f64>],
    init: &GaussianBelief,
    cfg: &LgfConfig,
) -> Result<FilterOutput> {
    cfg.validate()?;
    if observations.is_empty() {
        return Err(Error::Dimension("filter needs at least one observation".into()));
    }
    if init.dim() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial belief has dimension {} but model has {}",
            init.dim(),
            model.state_dim()
        )));
    }
    let n = observations.len();
    let mut out = FilterOutput {
        predictive: Vec::with_capacity(n),
        filtered: Vec::with_capacity(n),
        diagnostics: Vec::with_capacity(n),
    };
    let mut current = init.clone();
    for (idx, y) in observations.iter().enumerate() {
        let t = idx + 1;
        let start = Instant::now();
        let pred = predict(&current, &model.transition).map_err(|e| e.at_step(t))?;
        let (filtered, newton_iters, second_order_iters) =
            lgf_step(&pred, y.as_slice(), &model.observation, model.gamma, cfg).map_err(|e| e.at_step(t))?;
        out.diagnostics.push(StepDiagnostics {
            newton_iters,
            second_order_iters,
            duration: start.elapsed(),
        });
        out.predictive.push(pred);
        out.filtered.push(filtered.clone());
        current = filtered;
    }
    Ok(out)
}

/// Backward smoothing pass over a filter run.
///
/// With Gaussian filtered and predictive beliefs and a linear-Gaussian
/// transition the backward integral has the closed form
/// `G_t = V_{t|t} Fᵀ V_{t+1|t}⁻¹`,
/// `m_{t|T} = m_{t|t} + G_t (m_{t+1|T} − m_{t+1|t})`,
/// `V_{t|T} = V_{t|t} + G_t (V_{t+1|T} − V_{t+1|t}) G_tᵀ`.
pub fn lgf_smooth(fo: &FilterOutput, trans: &LinearGaussianTransition) -> Result<SmoothOutput> {
    let n = fo.filtered.len();
    if n == 0 || fo.predictive.len() != n {
        return Err(Error::Dimension("filter output must have matching non-empty sequences".into()));
    }
    let mut smoothed = vec![fo.filtered[n - 1].clone(); n];
    let f = trans.f();
    for t in (0..n - 1).rev() {
        let filt = &fo.filtered[t];
        let pred_next = &fo.predictive[t + 1];
        let chol = cholesky(pred_next.cov(), "predictive covariance").map_err(|e| e.at_step(t + 2))?;
        // G = V F' P⁻¹  <=>  Gᵀ = P⁻¹ F V.
        let gain = chol.solve(&(f * filt.cov())).transpose();
        let next = &smoothed[t + 1];
        let mean = filt.mean() + &gain * (next.mean() - pred_next.mean());
        let cov = filt.cov() + &gain * (next.cov() - pred_next.cov()) * gain.transpose();
        smoothed[t] = GaussianBelief::new(mean, symmetrize(&cov)).map_err(|e| e.at_step(t + 1))?;
    }
    Ok(SmoothOutput { smoothed })
}

/// Initial belief centred at a known state with covariance `W` of the
/// transition.
pub fn init_from_state(x0: &DVector<f64>, trans: &LinearGaussianTransition) -> Result<GaussianBelief> {
    GaussianBelief::new(x0.clone(), trans.w().clone())
}

/// Diffuse initial belief `N(mean, κ I)`.
pub fn init_diffuse(mean: &DVector<f64>, kappa: f64) -> Result<GaussianBelief> {
    let d = mean.len();
    GaussianBelief::new(mean.clone(), nalgebra::DMatrix::from_diagonal_element(d, d, kappa))
}

/// Default scale of [`init_diffuse`].
pub const DIFFUSE_KAPPA: f64 = 1e3;
