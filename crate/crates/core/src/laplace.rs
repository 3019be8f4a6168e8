//! Laplace approximations of posterior moments and the numerical machinery
//! they need.
//!
//! * [`richardson_d2`] and [`numeric_hessian`] compute second derivatives of a
//!   log density by extrapolated central differences. The multivariate routine
//!   reduces every Hessian entry to a one-dimensional second derivative along a
//!   coordinate axis or a scaled two-coordinate diagonal.
//! * [`newton_maximize`] locates the mode, stopping once the Newton increment
//!   falls below `c · γ^(-α)` where `γ` is the expansion parameter and `α` the
//!   approximation order.
//! * [`laplace_first`] returns the Gaussian centred at the mode with covariance
//!   `[-l''(x̂)]⁻¹`; [`laplace_second_mean`] evaluates the fully exponential
//!   ratio for `E[x_i + c]` in log space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det_from_cholesky, spectral_norm, symmetrize};
use crate::model::{GaussianBelief, LogPosterior, ObservationModel};
use crate::neural::PoissonPopulation;

/// Central-difference step schedule and convergence test for [`richardson_d2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RichardsonConfig {
    /// Initial increment `h₀`.
    pub h0: f64,
    /// Contraction factor between successive increments.
    pub c: f64,
    /// Relative tolerance between successive extrapolants.
    pub rel_tol: f64,
    /// Maximum number of rows in the extrapolation table.
    pub max_levels: usize,
}

impl Default for RichardsonConfig {
    fn default() -> Self {
        Self {
            h0: 0.1,
            c: 2.0,
            rel_tol: 1e-9,
            max_levels: 16,
        }
    }
}

impl RichardsonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return Err(Error::Config(format!("Richardson h0 must be positive, got {}", self.h0)));
        }
        if !(self.c > 1.0) {
            return Err(Error::Config(format!("Richardson contraction must exceed 1, got {}", self.c)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Config(format!("Richardson rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.max_levels < 2 {
            return Err(Error::Config("Richardson needs at least two levels".into()));
        }
        Ok(())
    }

    fn with_h0(self, h0: f64) -> Self {
        Self { h0, ..self }
    }
}

/// Second derivative of `f` at `x0` by Richardson-extrapolated central
/// differences.
///
/// Row `n` of the table starts from the quotient with step `h₀ c⁻ⁿ`; entry
/// `(n, k)` removes the `h^{2k}` error term. The routine returns `A[n][n]` as
/// soon as `|A[n][n-1] - A[n-1][n-1]|` drops below `rel_tol · |A[n][n-1]|` or
/// below the round-off level of the difference quotient.
pub fn richardson_d2(f: impl FnMut(f64) -> f64, x0: f64, cfg: &RichardsonConfig) -> Result<f64> {
    richardson_d2_detail(f, x0, cfg).map(|(a, _)| a)
}

/// `A[n][n]` together with the raw quotient `A[n][0]` of the final row.
pub(crate) fn richardson_d2_detail(
    mut f: impl FnMut(f64) -> f64,
    x0: f64,
    cfg: &RichardsonConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let f0 = f(x0);
    let mut prev: Vec<f64> = Vec::with_capacity(cfg.max_levels);
    let mut cur: Vec<f64> = Vec::with_capacity(cfg.max_levels);
    let mut last_diff = f64::INFINITY;
    for n in 0..cfg.max_levels {
        let h = cfg.h0 * cfg.c.powi(-(n as i32));
        let (fp, fm) = (f(x0 + h), f(x0 - h));
        cur.clear();
        cur.push((fp + fm - 2.0 * f0) / (h * h));
        let mut factor = 1.0;
        for k in 1..=n {
            factor *= cfg.c * cfg.c;
            let a = cur[k - 1] + (cur[k - 1] - prev[k - 1]) / (factor - 1.0);
            cur.push(a);
        }
        if n >= 1 {
            let diff = (cur[n - 1] - prev[n - 1]).abs();
            let noise = 16.0 * f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / (h * h);
            if !diff.is_finite() {
                break;
            }
            if diff <= cfg.rel_tol * cur[n - 1].abs() || diff <= noise {
                return Ok((cur[n], cur[0]));
            }
            last_diff = diff;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Err(Error::RichardsonNoConvergence {
        levels: cfg.max_levels,
        last_diff,
    })
}

/// Hessian of `f` at a local maximum `xhat` from one-dimensional slices.
///
/// Works with the magnitudes `a_i = -∂²f/∂x_i²`: the cross term `(i, j)`
/// comes from the second derivative `q''` of `s ↦ -f(x̂ + s(e_i/√a_i + e_j/√a_j))`,
/// as `(q''/2 - 1)·√(a_i a_j)`, and the sign is restored on output.
/// `h[i]` is the initial increment along axis `i`.
pub fn numeric_hessian(
    f: impl Fn(&DVector<f64>) -> f64,
    xhat: &DVector<f64>,
    h: &DVector<f64>,
    cfg: &RichardsonConfig,
) -> Result<DMatrix<f64>> {
    let d = xhat.len();
    if h.len() != d {
        return Err(Error::Dimension(format!("{} increments for a {d}-dimensional point", h.len())));
    }
    if h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Config("Hessian increments must be strictly positive".into()));
    }
    let mut info = DMatrix::zeros(d, d);
    let mut x = xhat.clone();
    for i in 0..d {
        let a = richardson_d2(
            |s| {
                let mut x = xhat.clone();
                x[i] += s;
                -f(&x)
            },
            0.0,
            &cfg.with_h0(h[i]),
        )?;
        if !(a > 0.0) {
            return Err(Error::NotAMaximum { axis: i, value: -a });
        }
        info[(i, i)] = a;
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let (si, sj) = (info[(i, i)].sqrt(), info[(j, j)].sqrt());
            let h0 = (h[i] * si * h[j] * sj).sqrt();
            let q = richardson_d2(
                |s| {
                    x.copy_from(xhat);
                    x[i] += s / si;
                    x[j] += s / sj;
                    -f(&x)
                },
                0.0,
                &cfg.with_h0(h0),
            )?;
            let cross = (q / 2.0 - 1.0) * si * sj;
            info[(i, j)] = cross;
            info[(j, i)] = cross;
        }
    }
    Ok(-symmetrize(&info))
}

/// Order of the Laplace approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaplaceOrder {
    First,
    Second,
}

impl LaplaceOrder {
    pub fn alpha(self) -> u32 {
        match self {
            LaplaceOrder::First => 1,
            LaplaceOrder::Second => 2,
        }
    }
}

/// Newton iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Stopping constant `c` in `‖Δx‖ < c · γ^(-α)`.
    pub c_stop: f64,
    pub order: LaplaceOrder,
    pub max_iter: usize,
    pub step_halving_limit: usize,
}

impl NewtonConfig {
    pub fn new(order: LaplaceOrder) -> Self {
        Self {
            c_stop: 1.0,
            order,
            max_iter: 100,
            step_halving_limit: 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_stop > 0.0 && self.c_stop.is_finite()) {
            return Err(Error::Config(format!("Newton c_stop must be positive, got {}", self.c_stop)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("Newton max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// `c · γ^(-α)`.
    pub fn threshold(&self, gamma: f64) -> f64 {
        self.c_stop * gamma.powi(-(self.order.alpha() as i32))
    }
}

/// Result of [`newton_maximize`].
#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub mode: DVector<f64>,
    pub value: f64,
    pub hessian: DMatrix<f64>,
    /// Number of full steps taken, excluding the final sub-threshold increment.
    pub iters: usize,
}

fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Result<DVector<f64>> {
    let neg = -hess;
    if let Some(chol) = nalgebra::Cholesky::new(neg.clone()) {
        return Ok(chol.solve(grad));
    }
    neg.lu().solve(grad).ok_or(Error::SingularHessian)
}

/// Maximizes `f` by Newton's method with step halving.
///
/// A step is halved (up to `step_halving_limit` times) until the objective
/// does not decrease. Iteration stops when the Newton increment has Euclidean
/// norm below `cfg.threshold(gamma)`; that last increment is applied if it
/// does not decrease `f`.
pub fn newton_maximize(
    f: impl Fn(&DVector<f64>) -> f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    hess: impl Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
    x_start: &DVector<f64>,
    gamma: f64,
    cfg: &NewtonConfig,
) -> Result<NewtonResult> {
    cfg.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("expansion parameter must be positive, got {gamma}")));
    }
    let threshold = cfg.threshold(gamma);
    let mut x = x_start.clone();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::Config("objective is not finite at the starting point".into()));
    }
    let mut hx = hess(&x)?;
    let mut step_norm = f64::INFINITY;
    for iters in 0..=cfg.max_iter {
        let step = newton_direction(&grad(&x), &hx)?;
        step_norm = step.norm();
        if !step_norm.is_finite() {
            return Err(Error::SingularHessian);
        }
        if step_norm < threshold {
            let candidate = &x + &step;
            let fc = f(&candidate);
            if fc >= fx {
                x = candidate;
                fx = fc;
                hx = hess(&x)?;
            }
            return Ok(NewtonResult {
                mode: x,
                value: fx,
                hessian: hx,
                iters,
            });
        }
        if iters == cfg.max_iter {
            break;
        }
        let mut t = 1.0;
        let mut halvings = 0;
        loop {
            let candidate = &x + &step * t;
            let fc = f(&candidate);
            if fc >= fx {
                x = candidate;
                fx = fc;
                break;
            }
            if halvings == cfg.step_halving_limit {
                return Err(Error::NewtonNoAscent { halvings });
            }
            t *= 0.5;
            halvings += 1;
        }
        hx = hess(&x)?;
    }
    Err(Error::NewtonMaxIter {
        iters: cfg.max_iter,
        step_norm,
    })
}

/// A log density (up to a constant) with gradient and optional closed-form
/// Hessian.
pub trait LogTarget {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn analytic_hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

impl<O: ObservationModel + ?Sized> LogTarget for LogPosterior<'_, O> {
    fn dim(&self) -> usize {
        LogPosterior::dim(self)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        LogPosterior::value(self, x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        LogPosterior::gradient(self, x)
    }

    fn analytic_hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.hessian(x)
    }
}

/// `k(x) = log(x_i + c) + l(x)`: the integrand exponent for `E[x_i + c]`.
pub struct OffsetTarget<'a, T: ?Sized> {
    pub base: &'a T,
    pub coord: usize,
    pub offset: f64,
}

impl<T: LogTarget + ?Sized> LogTarget for OffsetTarget<'_, T> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let g = x[self.coord] + self.offset;
        if g <= 0.0 {
            return f64::NEG_INFINITY;
        }
        g.ln() + self.base.value(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut grad = self.base.gradient(x);
        grad[self.coord] += 1.0 / (x[self.coord] + self.offset);
        grad
    }

    fn analytic_hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.base.analytic_hessian(x).map(|mut h| {
            let g = x[self.coord] + self.offset;
            h[(self.coord, self.coord)] -= 1.0 / (g * g);
            h
        })
    }
}

/// Tunables shared by the Laplace approximations.
#[derive(Debug, Clone)]
pub struct LaplaceSettings {
    pub newton: NewtonConfig,
    pub richardson: RichardsonConfig,
    /// Per-coordinate increments for numeric Hessians.
    pub increments: DVector<f64>,
    /// Use the target's closed-form Hessian when it has one.
    pub use_analytic_hessian: bool,
}

impl LaplaceSettings {
    /// Increments `0.1 · √V_ii` from a predictive belief.
    pub fn for_belief(pred: &GaussianBelief, order: LaplaceOrder) -> Self {
        Self {
            newton: NewtonConfig::new(order),
            richardson: RichardsonConfig::default(),
            increments: default_increments(pred),
            use_analytic_hessian: true,
        }
    }
}

/// `h_i = 0.1 · √V_ii` of the predictive covariance.
pub fn default_increments(pred: &GaussianBelief) -> DVector<f64> {
    pred.cov().diagonal().map(|v| 0.1 * v.sqrt())
}

/// Hessian of `target` at `x`: closed form when allowed and available,
/// otherwise [`numeric_hessian`].
pub fn target_hessian<T: LogTarget + ?Sized>(
    target: &T,
    x: &DVector<f64>,
    settings: &LaplaceSettings,
) -> Result<DMatrix<f64>> {
    if settings.use_analytic_hessian {
        if let Some(h) = target.analytic_hessian(x) {
            return Ok(symmetrize(&h));
        }
    }
    numeric_hessian(|z| target.value(z), x, &settings.increments, &settings.richardson)
}

/// Mode of a log target together with its curvature there.
#[derive(Debug, Clone)]
pub struct ModeFit {
    pub mode: DVector<f64>,
    pub value: f64,
    pub hessian: DMatrix<f64>,
    /// `log |-l''(x̂)|`.
    pub log_det_neg_hessian: f64,
    pub iters: usize,
}

/// Newton-maximizes `target` from `start`.
pub fn fit_mode<T: LogTarget + ?Sized>(
    target: &T,
    start: &DVector<f64>,
    gamma: f64,
    settings: &LaplaceSettings,
) -> Result<ModeFit> {
    if start.len() != target.dim() || settings.increments.len() != target.dim() {
        return Err(Error::Dimension(format!(
            "target dimension {} with start of length {} and {} increments",
            target.dim(),
            start.len(),
            settings.increments.len()
        )));
    }
    let res = newton_maximize(
        |x| target.value(x),
        |x| target.gradient(x),
        |x| target_hessian(target, x, settings),
        start,
        gamma,
        &settings.newton,
    )?;
    let neg = -&res.hessian;
    let chol = cholesky(&neg, "negative Hessian at the mode")?;
    Ok(ModeFit {
        log_det_neg_hessian: log_det_from_cholesky(&chol),
        mode: res.mode,
        value: res.value,
        hessian: res.hessian,
        iters: res.iters,
    })
}

impl ModeFit {
    /// `N(x̂, [-l''(x̂)]⁻¹)`.
    pub fn belief(&self) -> Result<GaussianBelief> {
        let cov = cholesky(&(-&self.hessian), "negative Hessian at the mode")?.inverse();
        GaussianBelief::from_symmetrized(self.mode.clone(), &cov)
    }
}

/// First-order Laplace approximation: mode and inverse negative Hessian.
pub fn laplace_first<T: LogTarget + ?Sized>(
    target: &T,
    start: &DVector<f64>,
    gamma: f64,
    settings: &LaplaceSettings,
) -> Result<GaussianBelief> {
    fit_mode(target, start, gamma, settings)?.belief()
}

/// Second-order (fully exponential) approximation of `E[x_coord]`.
///
/// Evaluates `Ê[x_i + c]` as the ratio
/// `|-k''(x̄)|^{-1/2} e^{k(x̄)} / (|-l''(x̂)|^{-1/2} e^{l(x̂)})` entirely in log
/// space, with `k = log(x_i + c) + l` maximized from the `l`-mode, and returns
/// `Ê[x_i + c] - c` together with the Newton iteration count on `k`.
pub fn laplace_second_mean<T: LogTarget + ?Sized>(
    target: &T,
    coord: usize,
    offset: f64,
    l_fit: &ModeFit,
    gamma: f64,
    settings: &LaplaceSettings,
) -> Result<(f64, usize)> {
    if coord >= target.dim() {
        return Err(Error::Dimension(format!("coordinate {coord} out of range")));
    }
    let g0 = l_fit.mode[coord] + offset;
    if g0 <= 0.0 {
        return Err(Error::NonPositiveOffset { coord, value: g0 });
    }
    let k = OffsetTarget {
        base: target,
        coord,
        offset,
    };
    let k_fit = fit_mode(&k, &l_fit.mode, gamma, settings)?;
    let g = k_fit.mode[coord] + offset;
    if g <= 0.0 {
        return Err(Error::NonPositiveOffset { coord, value: g });
    }
    let log_ratio = k_fit.value - l_fit.value + 0.5 * (l_fit.log_det_neg_hessian - k_fit.log_det_neg_hessian);
    Ok((log_ratio.exp() - offset, k_fit.iters))
}

/// `|m_i| + 10 √V_ii`: keeps `x_i + c` positive within ten predictive
/// standard deviations.
pub fn choose_offset_c(pred: &GaussianBelief, coord: usize) -> f64 {
    pred.mean()[coord].abs() + 10.0 * pred.cov()[(coord, coord)].sqrt()
}

/// Expansion parameter of the Poisson population model,
/// `γ = Δ Σ e^{α_i} ‖β_i‖² + ‖W⁻¹‖` with the spectral norm for `W⁻¹`.
pub fn compute_gamma(pop: &PoissonPopulation, w: &DMatrix<f64>) -> Result<f64> {
    if w.nrows() != w.ncols() || (pop.len() > 0 && w.nrows() != pop.state_dim()) {
        return Err(Error::Dimension(format!(
            "W is {}x{} for a {}-dimensional population",
            w.nrows(),
            w.ncols(),
            pop.state_dim()
        )));
    }
    let w_inv = w
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::NotPositiveDefinite("W is singular".into()))?;
    let rates: f64 = (0..pop.len())
        .map(|i| pop.alpha()[i].exp() * pop.beta_row(i).iter().map(|b| b * b).sum::<f64>())
        .sum();
    Ok(pop.delta() * rates + spectral_norm(&w_inv))
}

/// Partial ordinary Bell polynomial `C_{i,j}(A₁, A₂, …)`: the coefficient of
/// `xⁱ` in `(A₁x + A₂x² + …)ʲ`. `a[0]` holds `A₁`.
///
/// # Panics
///
/// If `a` has fewer than `i` entries while `C_{i,j}` needs them.
pub fn bell_coefficients(a: &[f64], i: usize, j: usize) -> f64 {
    if j > i {
        return 0.0;
    }
    if j == 0 {
        return if i == 0 { 1.0 } else { 0.0 };
    }
    // table[m] = C_{m, jj} for the current jj.
    let mut table = vec![0.0; i + 1];
    table[0] = 1.0;
    for jj in 1..=j {
        let mut next = vec![0.0; i + 1];
        for (ii, slot) in next.iter_mut().enumerate().skip(jj) {
            *slot = ((jj - 1)..ii).map(|m| a[ii - m - 1] * table[m]).sum();
        }
        table = next;
    }
    table[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Quadratic {
        a: DMatrix<f64>,
        center: DVector<f64>,
    }

    impl LogTarget for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            let e = x - &self.center;
            -0.5 * e.dot(&(&self.a * &e))
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            -(&self.a * (x - &self.center))
        }
        fn analytic_hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(-self.a.clone())
        }
    }

    fn spd3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.7, 0.5, -0.7, 2.0])
    }

    fn settings(d: usize, order: LaplaceOrder) -> LaplaceSettings {
        LaplaceSettings {
            newton: NewtonConfig::new(order),
            richardson: RichardsonConfig::default(),
            increments: DVector::from_element(d, 0.1),
            use_analytic_hessian: true,
        }
    }

    #[test]
    fn richardson_is_exact_on_quadratics() {
        for x0 in [-3.0, 0.0, 1.5, 10.0] {
            let v = richardson_d2(|x| x * x, x0, &RichardsonConfig::default()).unwrap();
            assert!((v - 2.0).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn richardson_on_exp_and_sin() {
        let cfg = RichardsonConfig::default();
        assert!((richardson_d2(f64::exp, 0.0, &cfg).unwrap() - 1.0).abs() < 1e-8);
        assert!(richardson_d2(f64::sin, 0.0, &cfg).unwrap().abs() < 1e-8);
    }

    #[test]
    fn richardson_reports_noisy_functions() {
        use std::cell::Cell;
        let state = Cell::new(0x2545_F491_4F6C_DD1Du64);
        let noisy = |x: f64| {
            let mut s = state.get();
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            state.set(s);
            x * x + 1e-3 * ((s >> 11) as f64 / (1u64 << 53) as f64)
        };
        let cfg = RichardsonConfig {
            max_levels: 8,
            ..RichardsonConfig::default()
        };
        assert!(matches!(
            richardson_d2(noisy, 0.0, &cfg),
            Err(Error::RichardsonNoConvergence { .. })
        ));
    }

    #[test]
    fn richardson_config_validation() {
        let bad = [
            RichardsonConfig { h0: 0.0, ..Default::default() },
            RichardsonConfig { c: 1.0, ..Default::default() },
            RichardsonConfig { rel_tol: 1.0, ..Default::default() },
            RichardsonConfig { max_levels: 1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(richardson_d2(f64::exp, 0.0, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn numeric_hessian_of_quadratic_form() {
        let a = spd3();
        let f = |x: &DVector<f64>| -0.5 * x.dot(&(&a * x));
        let h = numeric_hessian(f, &DVector::zeros(3), &DVector::from_element(3, 0.1), &RichardsonConfig::default())
            .unwrap();
        assert!((h + &a).amax() < 1e-6);
    }

    #[test]
    fn numeric_hessian_in_one_dimension_is_a_single_second_derivative() {
        let f = |x: &DVector<f64>| -(x[0] - 0.3).powi(2) * 1.5 - (x[0] - 0.3).powi(4);
        let cfg = RichardsonConfig::default();
        let h = numeric_hessian(f, &DVector::from_element(1, 0.3), &DVector::from_element(1, 0.05), &cfg).unwrap();
        let direct = richardson_d2(|s| f(&DVector::from_element(1, 0.3 + s)), 0.0, &cfg.with_h0(0.05)).unwrap();
        assert!((h[(0, 0)] - direct).abs() < 1e-12);
        assert!((h[(0, 0)] + 3.0).abs() < 1e-7);
    }

    #[test]
    fn numeric_hessian_rejects_minima() {
        let f = |x: &DVector<f64>| x.norm_squared();
        let err = numeric_hessian(f, &DVector::zeros(2), &DVector::from_element(2, 0.1), &RichardsonConfig::default());
        assert!(matches!(err, Err(Error::NotAMaximum { axis: 0, .. })));
    }

    #[test]
    fn newton_converges_in_one_step_on_quadratics() {
        let q = Quadratic {
            a: spd3(),
            center: DVector::from_vec(vec![1.0, -2.0, 0.5]),
        };
        let s = settings(3, LaplaceOrder::First);
        for start in [DVector::zeros(3), DVector::from_vec(vec![10.0, 3.0, -7.0])] {
            let fit = fit_mode(&q, &start, 100.0, &s).unwrap();
            assert_eq!(fit.iters, 1);
            assert!((&fit.mode - &q.center).amax() < 1e-12);
        }
    }

    #[test]
    fn newton_started_at_the_optimum_takes_no_full_step() {
        let q = Quadratic {
            a: spd3(),
            center: DVector::from_vec(vec![1.0, -2.0, 0.5]),
        };
        let fit = fit_mode(&q, &q.center.clone(), 100.0, &settings(3, LaplaceOrder::Second)).unwrap();
        assert_eq!(fit.iters, 0);
    }

    #[test]
    fn newton_reports_iteration_limit() {
        // Smooth concave function needing several iterations from far away.
        let f = |x: &DVector<f64>| -(x[0].exp() + (-x[0]).exp());
        let g = |x: &DVector<f64>| DVector::from_element(1, -(x[0].exp() - (-x[0]).exp()));
        let h = |x: &DVector<f64>| Ok(DMatrix::from_element(1, 1, -(x[0].exp() + (-x[0]).exp())));
        let cfg = NewtonConfig {
            max_iter: 2,
            ..NewtonConfig::new(LaplaceOrder::Second)
        };
        let err = newton_maximize(f, g, h, &DVector::from_element(1, 8.0), 1e6, &cfg);
        assert!(matches!(err, Err(Error::NewtonMaxIter { iters: 2, .. })));
    }

    #[test]
    fn newton_reports_singular_hessian() {
        let f = |x: &DVector<f64>| x[0];
        let g = |_: &DVector<f64>| DVector::from_element(1, 1.0);
        let h = |_: &DVector<f64>| Ok(DMatrix::zeros(1, 1));
        let err = newton_maximize(f, g, h, &DVector::zeros(1), 10.0, &NewtonConfig::new(LaplaceOrder::First));
        assert!(matches!(err, Err(Error::SingularHessian)));
    }

    #[test]
    fn laplace_is_exact_for_gaussian_targets() {
        let q = Quadratic {
            a: spd3(),
            center: DVector::from_vec(vec![0.3, 0.1, -0.4]),
        };
        let belief = laplace_first(&q, &DVector::zeros(3), 1e3, &settings(3, LaplaceOrder::First)).unwrap();
        assert!((belief.mean() - &q.center).amax() < 1e-12);
        assert!((belief.cov() - spd3().try_inverse().unwrap()).amax() < 1e-12);
    }

    #[test]
    fn second_order_mean_of_gaussian_is_the_mean() {
        let q = Quadratic {
            a: spd3() * 50.0,
            center: DVector::from_vec(vec![0.3, 0.1, -0.4]),
        };
        let s = settings(3, LaplaceOrder::Second);
        let fit = fit_mode(&q, &DVector::zeros(3), 150.0, &s).unwrap();
        for i in 0..3 {
            let (m, _) = laplace_second_mean(&q, i, 50.0, &fit, 150.0, &s).unwrap();
            assert!((m - q.center[i]).abs() < 1e-6, "coord {i}: {m}");
        }
    }

    #[test]
    fn second_order_rejects_non_positive_offset() {
        let q = Quadratic {
            a: DMatrix::identity(1, 1),
            center: DVector::from_element(1, -5.0),
        };
        let s = settings(1, LaplaceOrder::Second);
        let fit = fit_mode(&q, &DVector::zeros(1), 10.0, &s).unwrap();
        assert!(matches!(
            laplace_second_mean(&q, 0, 1.0, &fit, 10.0, &s),
            Err(Error::NonPositiveOffset { coord: 0, .. })
        ));
    }

    #[test]
    fn offset_formula() {
        let b = GaussianBelief::new(DVector::from_vec(vec![0.0, -3.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        assert_eq!(choose_offset_c(&b, 0), 10.0);
        assert_eq!(choose_offset_c(&b, 1), 23.0);
    }

    #[test]
    fn gamma_of_empty_population_is_norm_of_w_inverse() {
        let pop = PoissonPopulation::new(DVector::zeros(0), DMatrix::zeros(0, 3), 0.03).unwrap();
        let g = compute_gamma(&pop, &DMatrix::identity(3, 3)).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        assert!(compute_gamma(&pop, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn bell_boundary_values() {
        let a = [0.7, -1.1, 2.0, 0.4];
        assert_eq!(bell_coefficients(&a, 0, 0), 1.0);
        for i in 1..4 {
            assert_eq!(bell_coefficients(&a, i, 0), 0.0);
            assert_eq!(bell_coefficients(&a, 0, i), 0.0);
        }
        assert!((bell_coefficients(&a, 3, 2) - 2.0 * a[0] * a[1]).abs() < 1e-15);
        assert!((bell_coefficients(&a, 3, 3) - a[0].powi(3)).abs() < 1e-15);
        assert!((bell_coefficients(&a, 2, 1) - a[1]).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn richardson_extrapolation_does_not_increase_error(x0 in -2.0f64..2.0, which in 0usize..3) {
            let (f, d2): (fn(f64) -> f64, fn(f64) -> f64) = match which {
                0 => (f64::exp, f64::exp),
                1 => (f64::sin, |x: f64| -x.sin()),
                _ => (|x: f64| x.powi(4), |x: f64| 12.0 * x * x),
            };
            let cfg = RichardsonConfig::default();
            let (extrapolated, raw) = richardson_d2_detail(f, x0, &cfg).unwrap();
            // Compared with the plain quotient at the finest step of the table.
            prop_assert!((extrapolated - d2(x0)).abs() <= (raw - d2(x0)).abs() + 1e-12);
        }

        #[test]
        fn newton_iterates_never_decrease_the_objective(c in -3.0f64..3.0, start in -5.0f64..5.0) {
            use std::cell::RefCell;
            let seen = RefCell::new(Vec::new());
            let f = |x: &DVector<f64>| {
                let v = -(x[0] - c).powi(2) - (x[0] - c).powi(4);
                v
            };
            let g = |x: &DVector<f64>| {
                seen.borrow_mut().push(f(x));
                DVector::from_element(1, -2.0 * (x[0] - c) - 4.0 * (x[0] - c).powi(3))
            };
            let h = |x: &DVector<f64>| Ok(DMatrix::from_element(1, 1, -2.0 - 12.0 * (x[0] - c).powi(2)));
            let res = newton_maximize(f, g, h, &DVector::from_element(1, start), 1e4, &NewtonConfig::new(LaplaceOrder::Second)).unwrap();
            let seen = seen.into_inner();
            for w in seen.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            prop_assert!((res.mode[0] - c).abs() < 1e-6);
        }

        #[test]
        fn numeric_hessian_is_symmetric_negative_definite(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from_seed(seed);
            let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let a = &b * b.transpose() + DMatrix::identity(3, 3);
            let f = |x: &DVector<f64>| -0.5 * x.dot(&(&a * x)) - 0.1 * x.map(|v| v.powi(4)).sum();
            let h = numeric_hessian(f, &DVector::zeros(3), &DVector::from_element(3, 0.1), &RichardsonConfig::default()).unwrap();
            prop_assert_eq!(&h, &h.transpose());
            prop_assert!(nalgebra::Cholesky::new(-&h).is_some());
        }
    }
}
