mod common;

use common::{batch_smoother, kalman, linear_case, max_abs_diff_mat, max_abs_diff_vec};
use lgf::pf::pf_filter;
use lgf::{lgf_filter, lgf_smooth, LgfConfig};

#[test]
fn first_order_filter_is_the_kalman_filter() {
    for seed in 0..20 {
        let case = linear_case(3, 2, 50, seed);
        let fo = lgf_filter(&case.model, &case.ys, &case.init, &LgfConfig::first_order()).unwrap();
        let (km, kc) = kalman(&case);
        let covs: Vec<_> = fo.filtered.iter().map(|b| b.cov().clone()).collect();
        assert!(max_abs_diff_vec(&fo.filtered_means(), &km) < 1e-9, "seed {seed}");
        assert!(max_abs_diff_mat(&covs, &kc) < 1e-9, "seed {seed}");
    }
}

#[test]
fn smoother_matches_joint_gaussian_solution() {
    for seed in 0..20 {
        let case = linear_case(3, 2, 50, 100 + seed);
        let fo = lgf_filter(&case.model, &case.ys, &case.init, &LgfConfig::first_order()).unwrap();
        let so = lgf_smooth(&fo, &case.model.transition).unwrap();
        let (bm, bc) = batch_smoother(&case);
        let means: Vec<_> = so.smoothed.iter().map(|b| b.mean().clone()).collect();
        let covs: Vec<_> = so.smoothed.iter().map(|b| b.cov().clone()).collect();
        assert!(max_abs_diff_vec(&means, &bm) < 1e-8, "seed {seed}");
        assert!(max_abs_diff_mat(&covs, &bc) < 1e-8, "seed {seed}");
    }
}

#[test]
fn smoothing_agrees_with_filtering_at_the_last_step() {
    let case = linear_case(2, 1, 15, 7);
    let fo = lgf_filter(&case.model, &case.ys, &case.init, &LgfConfig::first_order()).unwrap();
    let so = lgf_smooth(&fo, &case.model.transition).unwrap();
    assert_eq!(so.smoothed.last(), fo.filtered.last());
}

#[test]
fn second_order_filter_stays_close_to_kalman() {
    let case = linear_case(2, 2, 20, 11);
    let fo = lgf_filter(&case.model, &case.ys, &case.init, &LgfConfig::second_order()).unwrap();
    let (km, _) = kalman(&case);
    // Only the small bias of the fully exponential mean separates the two.
    assert!(max_abs_diff_vec(&fo.filtered_means(), &km) < 5e-2);
}

#[test]
fn particle_filter_converges_to_kalman() {
    let case = linear_case(2, 2, 20, 3);
    let m = 20_000;
    let po = pf_filter(&case.model, &case.ys, &case.init, m, 9).unwrap();
    let (km, kc) = kalman(&case);
    let mut z2 = 0.0;
    let mut count = 0.0;
    for t in 0..km.len() {
        for j in 0..2 {
            // Weight degeneracy: the effective sample size sets the error scale.
            let se = (kc[t][(j, j)] / po.ess[t]).sqrt();
            z2 += ((po.means[t][j] - km[t][j]) / se).powi(2);
            count += 1.0;
        }
    }
    assert!(z2 / count < 4.0, "mean squared z-score {}", z2 / count);
    for t in 0..km.len() {
        let tol = 6.0 * (2.0 / po.ess[t]).sqrt() * kc[t].amax();
        assert!((&po.covs[t] - &kc[t]).amax() < tol, "t = {t}");
    }
}
