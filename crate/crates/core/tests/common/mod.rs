//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::ops::AddAssign;

use lgf::model::{simulate, LinearGaussianObservation};
use lgf::nalgebra::{DMatrix, DVector};
use lgf::rng::rng_from_seed;
use lgf::{GaussianBelief, LinearGaussianTransition, StateSpaceModel};
use rand_distr::{Distribution, StandardNormal};

pub struct LinearCase {
    pub model: StateSpaceModel<LinearGaussianObservation>,
    pub init: GaussianBelief,
    pub ys: Vec<DVector<f64>>,
}

fn normal_matrix(r: usize, c: usize, rng: &mut lgf::rng::SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Random stable linear-Gaussian model with `d` states and `p` outputs,
/// simulated for `steps` steps.
pub fn linear_case(d: usize, p: usize, steps: usize, seed: u64) -> LinearCase {
    let mut rng = rng_from_seed(seed);
    let a = normal_matrix(d, d, &mut rng);
    let f = &a * (0.95 / a.clone().svd(false, false).singular_values.max());
    let b = normal_matrix(d, d, &mut rng);
    let w = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
    let h = normal_matrix(p, d, &mut rng);
    let c = normal_matrix(p, p, &mut rng);
    let r = &c * c.transpose() / p as f64 + DMatrix::identity(p, p) * 0.2;
    let trans = LinearGaussianTransition::new(f, w).unwrap();
    let obs = LinearGaussianObservation::new(h, r).unwrap();
    let model = StateSpaceModel::new(trans, obs, 1.0).unwrap();
    let m0 = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    let e = normal_matrix(d, d, &mut rng);
    let v0 = &e * e.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
    let x0 = m0.clone() + v0.clone().cholesky().unwrap().l() * DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    let (_, ys) = simulate(&model, steps, &x0, 1.0, seed ^ 0xabc).unwrap();
    let init = GaussianBelief::new(m0, v0).unwrap();
    LinearCase { model, init, ys }
}

/// Textbook Kalman filter: filtered means and covariances for t = 1..T.
pub fn kalman(case: &LinearCase) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let f = case.model.transition.f();
    let w = case.model.transition.w();
    let h = case.model.observation.h();
    let r = case.model.observation.r();
    let d = f.nrows();
    let mut m = case.init.mean().clone();
    let mut p = case.init.cov().clone();
    let (mut means, mut covs) = (Vec::new(), Vec::new());
    for y in &case.ys {
        let mp = f * &m;
        let pp = f * &p * f.transpose() + w;
        let s = h * &pp * h.transpose() + r;
        let k = &pp * h.transpose() * s.try_inverse().unwrap();
        m = &mp + &k * (y - h * &mp);
        let ikh = DMatrix::identity(d, d) - &k * h;
        p = &ikh * &pp * ikh.transpose() + &k * r * k.transpose();
        means.push(m.clone());
        covs.push(p.clone());
    }
    (means, covs)
}

/// Smoothed marginals for t = 1..T by solving the joint Gaussian over
/// `x_0..x_T` in one linear system.
pub fn batch_smoother(case: &LinearCase) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let f = case.model.transition.f();
    let w_inv = case.model.transition.w().clone().try_inverse().unwrap();
    let h = case.model.observation.h();
    let r_inv = case.model.observation.r().clone().try_inverse().unwrap();
    let d = f.nrows();
    let t_max = case.ys.len();
    let n = d * (t_max + 1);
    let mut j = DMatrix::<f64>::zeros(n, n);
    let mut hv = DVector::<f64>::zeros(n);
    let v0_inv = case.init.cov().clone().try_inverse().unwrap();
    j.view_mut((0, 0), (d, d)).add_assign(&v0_inv);
    hv.rows_mut(0, d).add_assign(&(&v0_inv * case.init.mean()));
    let ftw = f.transpose() * &w_inv;
    for t in 1..=t_max {
        let (a, b) = ((t - 1) * d, t * d);
        // -½ (x_t − F x_{t−1})ᵀ W⁻¹ (x_t − F x_{t−1})
        j.view_mut((a, a), (d, d)).add_assign(&(&ftw * f));
        j.view_mut((b, b), (d, d)).add_assign(&w_inv);
        j.view_mut((a, b), (d, d)).add_assign(&(-&ftw));
        j.view_mut((b, a), (d, d)).add_assign(&(-ftw.transpose()));
        // -½ (y_t − H x_t)ᵀ R⁻¹ (y_t − H x_t)
        j.view_mut((b, b), (d, d)).add_assign(&(h.transpose() * &r_inv * h));
        hv.rows_mut(b, d).add_assign(&(h.transpose() * &r_inv * &case.ys[t - 1]));
    }
    let cov = j.try_inverse().unwrap();
    let mean = &cov * hv;
    let means = (1..=t_max).map(|t| mean.rows(t * d, d).into_owned()).collect();
    let covs = (1..=t_max).map(|t| cov.view((t * d, t * d), (d, d)).into_owned()).collect();
    (means, covs)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    // Split first so that narrow peaks are never missed by the initial estimate.
    let pieces = 64;
    let step = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * step, a + (k + 1) as f64 * step);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            rec(f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), tol / pieces as f64, 30)
        })
        .sum()
}

/// Posterior mean of a one-dimensional log density `l` concentrated around
/// `center` with scale `sd`, by quadrature over ±12 sd.
pub fn quadrature_mean(l: impl Fn(f64) -> f64, center: f64, sd: f64) -> f64 {
    let l0 = l(center);
    let (a, b) = (center - 12.0 * sd, center + 12.0 * sd);
    let z = adaptive_simpson(&|x| (l(x) - l0).exp(), a, b, 1e-13 * sd);
    let m1 = adaptive_simpson(&|x| (x - center) * (l(x) - l0).exp(), a, b, 1e-13 * sd * sd);
    center + m1 / z
}

/// Coefficient of `xⁱ` in `(Σ_{k≥1} a[k-1] xᵏ)ʲ` by repeated polynomial
/// multiplication.
pub fn power_series_coefficient(a: &[f64], i: usize, j: usize) -> f64 {
    let mut base = vec![0.0; i + 1];
    for k in 1..=i.min(a.len()) {
        base[k] = a[k - 1];
    }
    let mut acc = vec![0.0; i + 1];
    acc[0] = 1.0;
    for _ in 0..j {
        let mut next = vec![0.0; i + 1];
        for (p, &u) in acc.iter().enumerate() {
            for (q, &v) in base.iter().enumerate() {
                if p + q <= i {
                    next[p + q] += u * v;
                }
            }
        }
        acc = next;
    }
    acc[i]
}

pub fn max_abs_diff_vec(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

pub fn max_abs_diff_mat(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// One-dimensional Poisson posterior: prior `N(m, 2/γ)` and neurons with
/// unit gain whose summed expected curvature at the prior mean is about `γ/2`.
pub struct PoissonCase1d {
    pub pop: lgf::PoissonPopulation,
    pub pred: GaussianBelief,
    pub y: Vec<f64>,
    pub gamma: f64,
}

pub fn poisson_case_1d(gamma: f64, seed: u64) -> PoissonCase1d {
    let delta = 0.03;
    let mut rng = rng_from_seed(seed);
    let v = 2.0 / gamma;
    let m = 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
    let mut alpha = Vec::new();
    let mut curvature = 0.0;
    while curvature < gamma / 2.0 {
        let a: f64 = 2.5 + Distribution::<f64>::sample(&StandardNormal, &mut rng);
        curvature += delta * (a + m).exp();
        alpha.push(a);
    }
    let n = alpha.len();
    let pop = lgf::PoissonPopulation::new(DVector::from_vec(alpha.clone()), DMatrix::from_element(n, 1, 1.0), delta).unwrap();
    let x: f64 = m + v.sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut rng);
    let y = alpha
        .iter()
        .map(|a| {
            let rate = delta * (a + x).exp();
            rand_distr::Poisson::new(rate).unwrap().sample(&mut rng)
        })
        .collect();
    let pred = GaussianBelief::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap();
    PoissonCase1d { pop, pred, y, gamma }
}

impl PoissonCase1d {
    /// `(Σ y_i, Σ e^{α_i})`: with unit gains the likelihood depends on the
    /// counts and intercepts only through these sums.
    fn sums(&self) -> (f64, f64) {
        (self.y.iter().sum(), self.pop.alpha().iter().map(|a| a.exp()).sum())
    }

    /// Log posterior relative to its value at `x_ref`, written out directly.
    pub fn log_post_rel(&self, x: f64, x_ref: f64) -> f64 {
        let (m, v) = (self.pred.mean()[0], self.pred.cov()[(0, 0)]);
        let (sy, sa) = self.sums();
        sy * (x - x_ref) - self.pop.delta() * sa * (x.exp() - x_ref.exp())
            - ((x - m).powi(2) - (x_ref - m).powi(2)) / (2.0 * v)
    }

    fn dlog_post(&self, x: f64) -> f64 {
        let (m, v) = (self.pred.mean()[0], self.pred.cov()[(0, 0)]);
        let (sy, sa) = self.sums();
        sy - self.pop.delta() * sa * x.exp() - (x - m) / v
    }

    /// Second derivative of the log posterior.
    pub fn d2log_post(&self, x: f64) -> f64 {
        let (_, sa) = self.sums();
        -self.pop.delta() * sa * x.exp() - 1.0 / self.pred.cov()[(0, 0)]
    }

    /// Posterior mode by bisection on the derivative.
    pub fn mode(&self) -> f64 {
        let (m, v) = (self.pred.mean()[0], self.pred.cov()[(0, 0)]);
        let (mut lo, mut hi) = (m - 20.0 * v.sqrt(), m + 20.0 * v.sqrt());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.dlog_post(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Exact posterior mean by quadrature.
    pub fn exact_mean(&self) -> f64 {
        let mode = self.mode();
        let sd = 1.0 / (-self.d2log_post(mode)).sqrt();
        quadrature_mean(|x| self.log_post_rel(x, mode), mode, sd)
    }
}
