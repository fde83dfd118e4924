use landmark_dl::data::{Dataset, SubjectRecord};
use landmark_dl::estimators::{kaplan_meier_greenwood, onestep_surv, EifSample};
use landmark_dl::inference::{clip_to_simplex, influence_variance, se_ci};
use landmark_dl::nuisance::{fit_bundle, BundleOptions, LearnerLibrary};
use landmark_dl::numeric::{chi2_sf, norm_cdf, norm_quantile, stable_sum};
use landmark_dl::report::{simplex_xy, SIMPLEX_VERTICES};
use proptest::prelude::*;

fn arb_subjects() -> impl Strategy<Value = Vec<(u8, bool, u8)>> {
    // (time in whole units so ties are frequent, event flag, arm)
    prop::collection::vec((1u8..12, any::<bool>(), 0u8..2), 8..60)
}

fn dataset(rows: &[(u8, bool, u8)]) -> Option<Dataset> {
    if !(0..=1).all(|a| rows.iter().any(|r| r.2 == a)) {
        return None;
    }
    let recs = rows
        .iter()
        .enumerate()
        .map(|(i, &(t, e, a))| SubjectRecord::new(i.to_string(), t as f64, e, a))
        .collect();
    Some(Dataset::new(vec![], recs).unwrap())
}

proptest! {
    #[test]
    fn covariate_free_onestep_reproduces_km(rows in arb_subjects(), u in 0.5f64..12.0) {
        let Some(data) = dataset(&rows) else { return Ok(()) };
        let b = fit_bundle(&data, &data.all_rows(), &LearnerLibrary::covariate_free(None), &BundleOptions::new(u, None));
        let Ok(b) = b else { return Ok(()) };
        for a in 0..=1u8 {
            let (km, _) = kaplan_meier_greenwood(&data, &data.all_rows(), a, u).unwrap();
            if let Ok(e) = onestep_surv(&b, &data, a, u) {
                prop_assert!((e.point - km).abs() < 1e-10, "{} vs {km}", e.point);
                prop_assert!(e.influence_mean().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn km_is_a_nonincreasing_probability(rows in arb_subjects()) {
        let Some(data) = dataset(&rows) else { return Ok(()) };
        for a in 0..=1u8 {
            let mut last = 1.0;
            for k in 0..=13 {
                let (s, se) = kaplan_meier_greenwood(&data, &data.all_rows(), a, k as f64).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert!(se >= 0.0);
                prop_assert!(s <= last);
                last = s;
            }
        }
    }

    #[test]
    fn clipped_points_lie_in_the_simplex(p in prop::array::uniform3(-0.5f64..1.5)) {
        let (q, clipped) = clip_to_simplex(p);
        if p.iter().all(|&v| v >= 0.0) {
            prop_assert!(!clipped);
            prop_assert_eq!(q, p);
        } else {
            prop_assert!(clipped);
            prop_assert!(q.iter().all(|&v| v >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn barycentric_points_stay_inside_the_triangle(w in prop::array::uniform3(0.0f64..1.0)) {
        let s: f64 = w.iter().sum();
        prop_assume!(s > 1e-6);
        let p = w.map(|v| v / s);
        let [x, y] = simplex_xy(p);
        let v = SIMPLEX_VERTICES;
        let xs = v.map(|q| q[0]);
        let ys = v.map(|q| q[1]);
        prop_assert!(x >= xs.iter().cloned().fold(f64::MAX, f64::min) - 1e-9);
        prop_assert!(x <= xs.iter().cloned().fold(f64::MIN, f64::max) + 1e-9);
        prop_assert!(y >= ys.iter().cloned().fold(f64::MAX, f64::min) - 1e-9);
        prop_assert!(y <= ys.iter().cloned().fold(f64::MIN, f64::max) + 1e-9);
    }

    #[test]
    fn stable_sum_is_order_free(mut xs in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let a = stable_sum(&xs);
        xs.reverse();
        let b = stable_sum(&xs);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn normal_quantile_inverts_cdf(p in 1e-6f64..(1.0 - 1e-6)) {
        prop_assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-9);
    }

    #[test]
    fn chi2_tail_is_a_decreasing_probability(x in 0.0f64..50.0, dx in 0.0f64..5.0, df in 1u32..5) {
        let a = chi2_sf(x, df);
        let b = chi2_sf(x + dx, df);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn se_scales_with_influence(vals in prop::collection::vec(-3.0f64..3.0, 3..50), c in 0.1f64..10.0) {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let inf: Vec<f64> = vals.iter().map(|v| v - m).collect();
        let e = EifSample::new("x", 0.5, inf.clone()).unwrap();
        let scaled = EifSample::new("x", 0.5, inf.iter().map(|v| v * c).collect()).unwrap();
        prop_assert!((influence_variance(&scaled) - c * c * influence_variance(&e)).abs() < 1e-9 * (1.0 + influence_variance(&scaled)));
        let r = se_ci(&e, 0.95).unwrap();
        prop_assert!(r.ci_low <= r.estimate && r.estimate <= r.ci_high);
    }
}
