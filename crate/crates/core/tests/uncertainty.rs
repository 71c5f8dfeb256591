use flexagg::synth;
use flexagg::uncertainty::{
    fit_gmm, gmm_moments, k_epsilon, read_error_history, sample_gmm, DayType, EmOptions, ErrorHistory, ErrorScenarioTable, Gmm, PowerBin,
    RiskConfig,
};
use proptest::prelude::*;

#[test]
fn mixture_moments_match_sampling() {
    let g = synth::cloudy_mid_mixture();
    let (mu, var) = gmm_moments(&g);
    let sigma = var.sqrt();
    let x = sample_gmm(&g, 400_000, 5);
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    assert!((m - mu).abs() < 4.0 * sigma / n.sqrt(), "{m} vs {mu}");
    assert!((s / sigma - 1.0).abs() < 0.01, "{s} vs {sigma}");
}

#[test]
fn single_gaussian_selects_one_component() {
    let x = sample_gmm(&Gmm::gaussian(0.1, 0.04).unwrap(), 3000, 2);
    let sel = fit_gmm(&x, 4, &EmOptions::default()).unwrap();
    assert_eq!(sel.selected.n_components(), 1);
    assert_eq!(sel.scores.len(), 4);
}

#[test]
fn constant_samples_collapse_to_floor_variance() {
    let sel = fit_gmm(&[0.25; 100], 3, &EmOptions::default()).unwrap();
    assert_eq!(sel.selected.n_components(), 1);
    assert!((sel.selected.mean() - 0.25).abs() < 1e-15);
}

#[test]
fn fit_rejects_bad_input() {
    let opts = EmOptions::default();
    assert!(fit_gmm(&[], 3, &opts).is_err());
    assert!(fit_gmm(&[1.0, f64::NAN], 1, &opts).is_err());
    assert!(fit_gmm(&[0.0; 20], 3, &opts).is_err());
}

#[test]
fn fitting_is_deterministic() {
    let x = sample_gmm(&synth::cloudy_mid_mixture(), 2000, 8);
    let a = fit_gmm(&x, 4, &EmOptions::default()).unwrap();
    let b = fit_gmm(&x, 4, &EmOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn history_csv_round_trip_and_table() {
    let h = synth::error_history(300, 3);
    let back = read_error_history(h.write_csv().as_bytes()).unwrap();
    assert_eq!(back.rows.len(), h.rows.len());
    for (a, b) in back.rows.iter().zip(&h.rows) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() < 1e-12 && (a.2 - b.2).abs() < 1e-12);
    }
    let fit = h.fit_table(3, &EmOptions::default()).unwrap();
    assert!(!fit.table.is_empty());
    let text = serde_json::to_string(&fit.table).unwrap();
    assert_eq!(ErrorScenarioTable::from_json(&text).unwrap(), fit.table);
    assert!(fit.table.get(DayType::Cloudy, 0.5).is_some());
}

#[test]
fn sparse_bins_are_pooled() {
    let mut h = synth::error_history(200, 4);
    let sparse = PowerBin::of(0.95);
    let mut kept = 0;
    h.rows.retain(|r| {
        if r.0 == DayType::Sunny && PowerBin::of(r.1) == sparse {
            kept += 1;
            kept <= 5
        } else {
            true
        }
    });
    let fit = h.fit_table(3, &EmOptions::default()).unwrap();
    let bin = fit.bins.iter().find(|b| b.day == DayType::Sunny && b.bin == sparse).unwrap();
    assert!(bin.pooled);
    assert!(!fit.warnings.is_empty());
}

#[test]
fn empty_history_is_an_error() {
    assert!(read_error_history("day_type,power_pu,error_pu\n".as_bytes()).is_err());
    assert!(ErrorHistory::default().fit_table(3, &EmOptions::default()).is_err());
}

#[test]
fn risk_config_rejects_out_of_range() {
    assert!(RiskConfig::new(0.0, 0.05, 0.05).is_err());
    assert!(RiskConfig::new(0.5, 1.0, 0.05).is_err());
    let r = RiskConfig::new(0.5, 0.05, 0.1).unwrap();
    assert!((r.k_v() - 19f64.sqrt()).abs() < 1e-12);
    assert!((r.k_i() - 3.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn k_epsilon_is_decreasing(a in 0.001f64..0.999, b in 0.001f64..0.999) {
        prop_assume!(a < b);
        prop_assert!(k_epsilon(a).unwrap() > k_epsilon(b).unwrap());
    }

    #[test]
    fn cantelli_bound_holds_for_mixtures(w in 0.05f64..0.95, m1 in -1.0f64..1.0, m2 in -1.0f64..1.0, v1 in 0.001f64..0.5, v2 in 0.001f64..0.5, eps in 0.01f64..0.5) {
        // P(X > mu + K sigma) <= eps for any distribution with these moments
        let g = Gmm::new(vec![w, 1.0 - w], vec![m1, m2], vec![v1, v2]).unwrap();
        let (mu, var) = gmm_moments(&g);
        let tail = 1.0 - g.cdf(mu + k_epsilon(eps).unwrap() * var.sqrt());
        prop_assert!(tail <= eps + 1e-12, "tail {tail} > {eps}");
    }

    #[test]
    fn quantile_inverts_cdf(q in 0.001f64..0.999) {
        let g = synth::cloudy_mid_mixture();
        prop_assert!((g.cdf(g.quantile(q)) - q).abs() < 1e-8);
    }
}
